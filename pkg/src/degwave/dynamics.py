"""Time integration of the full flow and its coupled companion systems.

All systems are advanced monolithically (the base solution is never
interpolated into the companion equations).  When ``t_eval`` is omitted the
trajectory is recorded at every accepted step, which is what the step-wise
monotonicity audits consume; with ``t_eval`` the stepper emits dense output
at the requested times only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels as _k
from .errors import IntegrationError, StiffnessError
from .model import ModalState, ProblemConfig, SpectralBasis, build_basis

__all__ = [
    "StepStats",
    "Trajectory",
    "CoupledState",
    "rhs_full",
    "step",
    "integrate",
    "integrate_decomposition",
    "integrate_linearized",
    "integrate_vw",
    "reconstruction_defect",
    "tilde_i_v",
]


@dataclass
class StepStats:
    """Per-accepted-step record plus global integrator counters."""

    t: np.ndarray
    h: np.ndarray
    err: np.ndarray          # weighted error-norm estimate of each accepted step
    n_accepted: int
    n_rejected: int
    n_rhs: int


@dataclass
class Trajectory:
    times: np.ndarray                 # (n,) strictly increasing, times[0] = 0
    a: np.ndarray                     # (n, K)
    b: np.ndarray                     # (n, K)
    damping_integral: np.ndarray      # (n,) running int of I_{u,p} |u_t|^2
    stats: StepStats
    config: ProblemConfig
    basis: SpectralBasis

    def __post_init__(self):
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("output times must start at 0 and increase strictly")
        z = self.damping_integral
        slack = 1e-9 * (1.0 + float(np.max(np.abs(z))))
        if np.any(np.diff(z) < -slack):
            raise ValueError("damping integral decreased beyond roundoff")

    def __len__(self) -> int:
        return self.times.shape[0]

    def state(self, i: int) -> ModalState:
        return ModalState(self.a[i].copy(), self.b[i].copy())

    def phase_norms(self) -> np.ndarray:
        lam = self.basis.eigenvalues
        return np.sqrt(self.a ** 2 @ lam + np.sum(self.b ** 2, axis=1))


@dataclass
class CoupledState:
    """One time-slice of a coupled run (u plus its v/w, U, or V/W parts)."""

    u_part: ModalState
    aux_parts: tuple
    kind: str

    def reconstruction_gap(self, basis: SpectralBasis) -> float:
        """Phase-norm of u - sum(aux parts); zero for an exact split."""
        da = self.u_part.a - sum(s.a for s in self.aux_parts)
        db = self.u_part.b - sum(s.b for s in self.aux_parts)
        return float(np.sqrt(da ** 2 @ basis.eigenvalues + db @ db))


def _kernel_args(config: ProblemConfig, basis: SpectralBasis):
    return (basis.eigenvalues, basis.synthesis, basis.analysis,
            config.f1, config.c3, config.c5, config.p)


def rhs_full(state: ModalState, config: ProblemConfig, basis: SpectralBasis,
             damping_off: bool = False) -> ModalState:
    """Time derivative of (a, b) under the full flow."""
    K = basis.size
    y = np.concatenate([state.a, state.b, [0.0]])
    lam, S, P, f1, c3, c5, p = _kernel_args(config, basis)
    dy = _k._rhs(_k.KIND_FULL, y, K, lam, S, P, f1, c3, c5, p, 0.0, damping_off)
    return ModalState(dy[:K], dy[K:2 * K])


def step(state: ModalState, dt: float, config: ProblemConfig,
         basis: Optional[SpectralBasis] = None,
         damping_off: bool = False):
    """One accepted adaptive step starting with trial size dt.

    Returns (new_state, error_estimate) where the estimate is the absolute
    RMS of the embedded 4th/5th-order difference of the accepted step.  The
    accepted step satisfies the weighted local-error bound
    tol_abs + tol_rel*|y|; dt shrinking below 1e-14 raises StiffnessError.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if basis is None:
        basis = build_basis(config)
    K = basis.size
    y = np.concatenate([state.a, state.b, [0.0]])
    lam, S, P, f1, c3, c5, p = _kernel_args(config, basis)
    k1 = _k._rhs(_k.KIND_FULL, y, K, lam, S, P, f1, c3, c5, p, 0.0, damping_off)
    h = float(dt)
    while True:
        if h < 1e-14:
            raise StiffnessError(f"step size underflow (dt={h:.3e}); system too stiff")
        ynew, errv, _ = _k._attempt_step(_k.KIND_FULL, y, h, K, lam, S, P,
                                         f1, c3, c5, p, 0.0, damping_off, k1)
        err = _k._error_norm(errv, y, ynew,
                             _CONTROL_MARGIN * config.tol_abs,
                             _CONTROL_MARGIN * config.tol_rel)
        if np.isfinite(err) and err <= 1.0:
            abs_est = float(np.sqrt(np.mean(errv[:-1] ** 2)))
            return ModalState(ynew[:K], ynew[K:2 * K]), abs_est
        shrink = 0.1 if not np.isfinite(err) else max(0.2, 0.9 * err ** -0.2)
        h *= min(shrink, 0.9)


_STATUS_MSG = {
    _k.STATUS_UNDERFLOW: "step size underflow (stiffness failure)",
    _k.STATUS_NONFINITE: "non-finite state encountered",
    _k.STATUS_MAXSTEPS: "step budget exceeded",
}

# The controller aims at this fraction of the user tolerance, so per-step
# errors sit well inside the contract and T~100 energy audits accumulate
# below 10x the tolerance budget.
_CONTROL_MARGIN = 0.03


def _drive(kind: int, y0: np.ndarray, T: float, config: ProblemConfig,
           basis: SpectralBasis, lam_shift: float,
           t_eval, damping_off: bool, h_max: float, max_steps: int):
    K = basis.size
    record_steps = t_eval is None
    if record_steps:
        te = np.empty(0)
    else:
        te = np.asarray(t_eval, dtype=np.float64)
        if te.ndim != 1 or np.any(np.diff(te) <= 0):
            raise ValueError("t_eval must be strictly increasing")
        if te.size and (te[0] < 0 or te[-1] > T + 1e-12):
            raise ValueError("t_eval must lie within [0, T]")
    lam, S, P, f1, c3, c5, p = _kernel_args(config, basis)
    out = _k.dopri5(kind, K, y0, float(T), te, lam, S, P, f1, c3, c5, p,
                    float(lam_shift), damping_off,
                    _CONTROL_MARGIN * config.tol_abs,
                    _CONTROL_MARGIN * config.tol_rel,
                    h_max, max_steps, record_steps)
    status, t_reached, nacc, nrej, nfev, Y_eval, st, sh, serr, Y_steps = out
    if status != _k.STATUS_OK:
        raise (StiffnessError if status == _k.STATUS_UNDERFLOW else IntegrationError)(
            f"{_STATUS_MSG[status]} at t={t_reached:.6g}")
    if np.any(~np.isfinite(Y_eval)) or (record_steps and np.any(~np.isfinite(Y_steps))):
        raise IntegrationError("non-finite values in output")
    stats = StepStats(t=st.copy(), h=sh.copy(), err=serr.copy(),
                      n_accepted=int(nacc), n_rejected=int(nrej), n_rhs=int(nfev))
    if record_steps:
        times = np.concatenate([[0.0], st])
        Y = np.vstack([y0, Y_steps])
    else:
        if te.size == 0 or te[0] > 0.0:
            times = np.concatenate([[0.0], te])
            Y = np.vstack([y0, Y_eval])
        else:
            times, Y = te, Y_eval
    return times, Y, stats


def _part(times, Y, stats, config, basis, lo: int) -> Trajectory:
    K = basis.size
    return Trajectory(times=times, a=Y[:, lo:lo + K], b=Y[:, lo + K:lo + 2 * K],
                      damping_integral=Y[:, -1], stats=stats,
                      config=config, basis=basis)


def integrate(initial: ModalState, T: float, config: ProblemConfig,
              basis: Optional[SpectralBasis] = None,
              t_eval: Optional[Sequence[float]] = None,
              damping_off: bool = False,
              h_max: float = np.inf,
              max_steps: int = 50_000_000,
              method: str = "dopri5",
              midpoint_dt: Optional[float] = None) -> Trajectory:
    """Advance the full system on [0, T]."""
    if T <= 0:
        raise ValueError("T must be positive")
    if basis is None:
        basis = build_basis(config)
    y0 = np.concatenate([initial.a, initial.b, [0.0]])
    if method == "midpoint":
        if midpoint_dt is None:
            raise ValueError("method='midpoint' needs midpoint_dt")
        times, Y, stats = _integrate_midpoint(y0, T, midpoint_dt, config, basis,
                                              damping_off, t_eval)
    elif method == "dopri5":
        times, Y, stats = _drive(_k.KIND_FULL, y0, T, config, basis, 0.0,
                                 t_eval, damping_off, h_max, max_steps)
    else:
        raise ValueError(f"unknown method {method!r}")
    return _part(times, Y, stats, config, basis, 0)


def integrate_decomposition(initial: ModalState, T: float, config: ProblemConfig,
                            lam: Optional[float] = None,
                            basis: Optional[SpectralBasis] = None,
                            t_eval: Optional[Sequence[float]] = None,
                            h_max: float = np.inf,
                            max_steps: int = 50_000_000):
    """Advance u together with its v/w split; returns (u, v, w) trajectories.

    v carries the initial data, w starts from rest; the shift defaults to
    f'(0), the choice under which w stays bounded in the higher norm.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if basis is None:
        basis = build_basis(config)
    if lam is None:
        lam = config.fprime0
    if lam <= -basis.lambda1:
        raise ValueError("decomposition shift must exceed -lambda_1")
    K = basis.size
    z = np.zeros(K)
    y0 = np.concatenate([initial.a, initial.b, initial.a, initial.b, z, z, [0.0]])
    times, Y, stats = _drive(_k.KIND_VW_DECOMP, y0, T, config, basis, lam,
                             t_eval, False, h_max, max_steps)
    return (_part(times, Y, stats, config, basis, 0),
            _part(times, Y, stats, config, basis, 2 * K),
            _part(times, Y, stats, config, basis, 4 * K))


def integrate_linearized(u0: ModalState, direction: ModalState, T: float,
                         config: ProblemConfig,
                         basis: Optional[SpectralBasis] = None,
                         t_eval: Optional[Sequence[float]] = None,
                         damping_off: bool = False,
                         h_max: float = np.inf,
                         max_steps: int = 50_000_000):
    """Advance u and the variational solution U with U(0) = direction."""
    if T <= 0:
        raise ValueError("T must be positive")
    if basis is None:
        basis = build_basis(config)
    K = basis.size
    y0 = np.concatenate([u0.a, u0.b, direction.a, direction.b, [0.0]])
    times, Y, stats = _drive(_k.KIND_LINEARIZED, y0, T, config, basis, 0.0,
                             t_eval, damping_off, h_max, max_steps)
    return (_part(times, Y, stats, config, basis, 0),
            _part(times, Y, stats, config, basis, 2 * K))


def integrate_vw(u0: ModalState, direction: ModalState, T: float,
                 config: ProblemConfig,
                 basis: Optional[SpectralBasis] = None,
                 t_eval: Optional[Sequence[float]] = None,
                 h_max: float = np.inf,
                 max_steps: int = 50_000_000):
    """Split the variational flow into V (data, pure damping) + W (coupling)."""
    if T <= 0:
        raise ValueError("T must be positive")
    if basis is None:
        basis = build_basis(config)
    K = basis.size
    z = np.zeros(K)
    y0 = np.concatenate([u0.a, u0.b, direction.a, direction.b, z, z, [0.0]])
    times, Y, stats = _drive(_k.KIND_VW_SPLIT, y0, T, config, basis, 0.0,
                             t_eval, False, h_max, max_steps)
    return (_part(times, Y, stats, config, basis, 2 * K),
            _part(times, Y, stats, config, basis, 4 * K))


def reconstruction_defect(whole: Trajectory, *parts: Trajectory) -> float:
    """sup_t phase-gap between a trajectory and the sum of its parts,
    relative to the whole trajectory's sup phase norm (0/0 -> 0)."""
    lam = whole.basis.eigenvalues
    da = whole.a - sum(p.a for p in parts)
    db = whole.b - sum(p.b for p in parts)
    gap = np.sqrt(da ** 2 @ lam + np.sum(db ** 2, axis=1))
    scale = float(np.max(whole.phase_norms()))
    worst = float(np.max(gap))
    return worst / scale if scale > 0 else worst


def tilde_i_v(traj: Trajectory, lam_shift: float) -> np.ndarray:
    """|grad v|^2 + |v_t|^2 + lam*|v|^2 along a v-trajectory."""
    lam = traj.basis.eigenvalues
    return (traj.a ** 2 @ lam + np.sum(traj.b ** 2, axis=1)
            + lam_shift * np.sum(traj.a ** 2, axis=1))


def _integrate_midpoint(y0: np.ndarray, T: float, dt: float,
                        config: ProblemConfig, basis: SpectralBasis,
                        damping_off: bool, t_eval):
    """Semi-implicit midpoint fallback for stiff high-mode full runs.

    The linear wave part is solved exactly per mode at the midpoint; the
    nonlocal scalars and f(u) are converged by fixed-point iteration.
    """
    K = basis.size
    lam = basis.eigenvalues
    n_steps = max(1, int(math.ceil(T / dt)))
    dt = T / n_steps
    a = y0[:K].copy()
    b = y0[K:2 * K].copy()
    z = float(y0[2 * K])
    ts = np.zeros(n_steps + 1)
    Y = np.zeros((n_steps + 1, 2 * K + 1))
    Y[0] = np.concatenate([a, b, [z]])
    nfev = 0
    errs = np.zeros(n_steps)
    for n in range(n_steps):
        ma, mb = a.copy(), b.copy()
        res = np.inf
        for _ in range(100):
            g2 = float(lam @ ma ** 2)
            v2 = float(mb @ mb)
            D = 0.0 if damping_off else g2 ** (0.5 * config.p) + v2 ** (0.5 * config.p)
            vals = basis.synthesis @ ma
            fu = basis.analysis @ (config.f1 * vals + config.c3 * vals ** 3
                                   + config.c5 * vals ** 5)
            nfev += 1
            rhs_b = b - 0.5 * dt * fu
            det = (1.0 + 0.5 * dt * D) + 0.25 * dt ** 2 * lam
            na = (a * (1.0 + 0.5 * dt * D) + 0.5 * dt * rhs_b) / det
            nb = (rhs_b - 0.5 * dt * lam * a) / det
            res = float(np.max(np.abs(na - ma)) + np.max(np.abs(nb - mb)))
            ma, mb = na, nb
            if res <= 1e-13 * (1.0 + float(np.max(np.abs(ma))) + float(np.max(np.abs(mb)))):
                break
        else:
            raise IntegrationError(f"midpoint iteration stalled at t={ts[n]:.6g}")
        g2 = float(lam @ ma ** 2)
        v2 = float(mb @ mb)
        D = 0.0 if damping_off else g2 ** (0.5 * config.p) + v2 ** (0.5 * config.p)
        z += dt * D * v2
        a = 2.0 * ma - a
        b = 2.0 * mb - b
        ts[n + 1] = ts[n] + dt
        Y[n + 1] = np.concatenate([a, b, [z]])
        errs[n] = res
    stats = StepStats(t=ts[1:], h=np.full(n_steps, dt), err=errs,
                      n_accepted=n_steps, n_rejected=0, n_rhs=nfev)
    if t_eval is not None:
        te = np.asarray(t_eval, dtype=np.float64)
        if te.size == 0 or te[0] > 0.0:
            te = np.concatenate([[0.0], te])
        Yi = np.empty((te.size, Y.shape[1]))
        for j in range(Y.shape[1]):
            Yi[:, j] = np.interp(te, ts, Y[:, j])
        return te, Yi, stats
    return ts, Y, stats
