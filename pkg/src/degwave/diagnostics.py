"""Functionals, identity audits, decay fits and modulus measurements.

Everything here is pure analysis over immutable trajectories.  Constants the
theory leaves non-constructive (decay amplitudes, Hölder moduli, Lipschitz
ceilings) are fitted from data and reported with their residuals; nothing is
hard-coded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .dynamics import Trajectory
from .errors import FitError, InsufficientWindowError
from .model import (ModalState, ProblemConfig, SpectralBasis, i_u,
                    potential_integral)

__all__ = [
    "energy",
    "energy_eps",
    "energy_collocation",
    "lambda_u",
    "EnergyReport",
    "energy_report",
    "energy_equality_residual",
    "EnergyLowerAudit",
    "e_eps_lower_audit",
    "DecayFit",
    "TwoSidedDecayReport",
    "fit_two_sided_decay",
    "HolderFit",
    "holder_time_exponent",
    "LipschitzReport",
    "lipschitz_gap",
    "GronwallReport",
    "gronwall_bound_check",
    "write_run_csv",
]

BETA_REG = 2.0 / 7.0               # regularity gain of the smooth component
THETA_HOLDER = BETA_REG / (1.0 + BETA_REG)   # guaranteed temporal exponent 2/9


def energy(state: ModalState, config: ProblemConfig, basis: SpectralBasis) -> float:
    """E = (|grad u|^2 + |u_t|^2)/2 + int F(u)."""
    return 0.5 * i_u(state, basis) + potential_integral(state, config, basis)


def energy_eps(state: ModalState, eps: float, config: ProblemConfig,
               basis: SpectralBasis) -> float:
    """E plus the eps*(u, u_t) cross term used by the dissipativity probe."""
    return energy(state, config, basis) + eps * float(state.a @ state.b)


def energy_collocation(state: ModalState, config: ProblemConfig,
                       basis: SpectralBasis) -> float:
    """E evaluated by direct Gauss-Legendre quadrature on the grid functions.

    Independent audit route: its nodes, weights and synthesis have nothing to
    do with the sine-collocation rule, yet the quadrature is still exact to
    roundoff for these band-limited integrands.
    """
    n = 4 * basis.n_modes + 8
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    modes = basis.mode_numbers
    if basis.dim == 1:
        k = modes[:, 0]
        sin = math.sqrt(2.0) * np.sin(np.pi * np.outer(x, k))
        cos = math.sqrt(2.0) * np.pi * k * np.cos(np.pi * np.outer(x, k))
        u = sin @ state.a
        ux = cos @ state.a
        ut = sin @ state.b
        grad2 = ux ** 2
        wts = w
    else:
        j, k = modes[:, 0], modes[:, 1]
        xa = np.repeat(x, n)
        yb = np.tile(x, n)
        sj = np.sin(np.pi * np.outer(xa, j))
        sk = np.sin(np.pi * np.outer(yb, k))
        cj = np.pi * j * np.cos(np.pi * np.outer(xa, j))
        ck = np.pi * k * np.cos(np.pi * np.outer(yb, k))
        u = (2.0 * sj * sk) @ state.a
        ux = (2.0 * cj * sk) @ state.a
        uy = (2.0 * sj * ck) @ state.a
        ut = (2.0 * sj * sk) @ state.b
        grad2 = ux ** 2 + uy ** 2
        wts = np.outer(w, w).ravel()
    F = (config.f1 / 2.0) * u ** 2 + (config.c3 / 4.0) * u ** 4 \
        + (config.c5 / 6.0) * u ** 6
    return float(wts @ (0.5 * (grad2 + ut ** 2) + F))


def lambda_u(u_state: ModalState, U_state: ModalState, eps: float,
             config: ProblemConfig, basis: SpectralBasis) -> float:
    """Quadratic energy of the linearized flow with the damping cross term:
    (|U_t|^2 + |grad U|^2 + f'(0)|U|^2)/2 + eps * I_u^(p/2) * (U_t, U)."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    lam = basis.eigenvalues
    quad = float(U_state.b @ U_state.b + U_state.a ** 2 @ lam
                 + config.fprime0 * (U_state.a @ U_state.a))
    cross = float(U_state.b @ U_state.a)
    return 0.5 * quad + eps * i_u(u_state, basis) ** (config.p / 2.0) * cross


def default_lambda_u_eps(p: float) -> float:
    """Midpoint of the (p/4, 1) interval in which the cross-term weight keeps
    the linearized energy monotone along small-data flows."""
    return 0.5 * (p / 4.0 + 1.0)


@dataclass
class EnergyReport:
    t: np.ndarray
    E: np.ndarray
    E_eps: np.ndarray
    I_u: np.ndarray
    I_up: np.ndarray
    residual: np.ndarray    # energy-equality defect at each output time


def _functionals(traj: Trajectory):
    lam = traj.basis.eigenvalues
    cfg = traj.config
    g2 = traj.a ** 2 @ lam
    v2 = np.sum(traj.b ** 2, axis=1)
    Iu = g2 + v2
    Iup = g2 ** (cfg.p / 2.0) + v2 ** (cfg.p / 2.0)
    vals = traj.a @ traj.basis.synthesis.T
    F = (cfg.f1 / 2.0) * vals ** 2 + (cfg.c3 / 4.0) * vals ** 4 \
        + (cfg.c5 / 6.0) * vals ** 6
    E = 0.5 * Iu + F @ traj.basis.weights
    return E, Iu, Iup


def energy_report(traj: Trajectory, eps: float = 0.0) -> EnergyReport:
    E, Iu, Iup = _functionals(traj)
    cross = np.sum(traj.a * traj.b, axis=1)
    residual = E + traj.damping_integral - E[0]
    return EnergyReport(t=traj.times.copy(), E=E, E_eps=E + eps * cross,
                        I_u=Iu, I_up=Iup, residual=residual)


def energy_equality_residual(traj: Trajectory):
    """Max |E(t) + int_0^t I_{u,p}|u_t|^2 - E(0)| over output times.

    Returns (value, t_worst)."""
    E, _, _ = _functionals(traj)
    r = np.abs(E + traj.damping_integral - E[0])
    i = int(np.argmax(r))
    return float(r[i]), float(traj.times[i])


@dataclass
class EnergyLowerAudit:
    coefficient: float       # (1 - mu0/lambda_1)/4
    C: float                 # fitted offset
    eps_threshold: float     # largest probed eps for which the bound held
    holds: bool


def e_eps_lower_audit(trajs: Sequence[Trajectory], config: ProblemConfig,
                      eps_grid: Sequence[float] = (0.05, 0.1, 0.2, 0.4, 0.8),
                      slack: float = 0.1) -> EnergyLowerAudit:
    """Audit the coercivity of E_eps: coef*I_u - C <= E_eps on bounded data.

    The offset C is fitted on the first half of the ensemble and the
    inequality is then checked on the rest (an audit on data, not a
    derivation).  mu0 is 0 whenever the potential is superquadratic; for a
    pure linear f it must dominate -f'(0).
    """
    cfg = config
    lam1 = cfg.lambda1
    if cfg.c3 > 0 or cfg.c5 > 0:
        mu0 = 0.0
    else:
        mu0 = max(0.0, -cfg.f1) * (1.0 + 1e-6)
    coef = 0.25 * (1.0 - mu0 / lam1)
    half = max(1, len(trajs) // 2)

    def gap_arrays(traj_list, eps):
        out = []
        for tr in traj_list:
            rep = energy_report(tr, eps=eps)
            out.append(coef * rep.I_u - rep.E_eps)
        return np.concatenate(out)

    best_eps = 0.0
    best_C = float("nan")
    holds = False
    for eps in sorted(eps_grid):
        C = float(np.max(gap_arrays(trajs[:half], eps)))
        C = max(C, 0.0)
        worst = float(np.max(gap_arrays(trajs[half:], eps))) if len(trajs) > half \
            else C
        if worst <= C + slack * max(1.0, abs(C)):
            best_eps, best_C, holds = eps, C, True
    return EnergyLowerAudit(coefficient=coef, C=best_C,
                            eps_threshold=best_eps, holds=holds)


@dataclass
class DecayFit:
    """value(t) = amplitude * (t + offset_k * i0^(-p/2))^(-exponent)."""

    exponent: float
    amplitude: float
    offset_k: float
    residual: float          # RMS log-deviation on the fit window
    window: tuple
    p: float                 # family parameter scaling the time shift

    def __post_init__(self):
        if not (self.exponent > 0):
            raise FitError("fitted exponent is nonpositive; data does not decay")

    def shift(self, i0: float) -> float:
        return self.offset_k * i0 ** (-self.p / 2.0)

    def value(self, t, i0: float) -> np.ndarray:
        return self.amplitude * (np.asarray(t) + self.shift(i0)) ** (-self.exponent)


@dataclass
class TwoSidedDecayReport:
    lower: DecayFit
    upper: DecayFit
    constrained: DecayFit    # central fit with exponent pinned to 1/p
    free: DecayFit           # exponent fitted as well
    p: float
    i0: float
    n_tail: int

    def sandwich_holds(self, t: np.ndarray, values: np.ndarray) -> bool:
        lo = self.lower.value(t, self.i0)
        hi = self.upper.value(t, self.i0)
        return bool(np.all(lo <= values * (1 + 1e-12) )
                    and np.all(values <= hi * (1 + 1e-12)))


def fit_two_sided_decay(times: np.ndarray, values: np.ndarray, p: float,
                        i0: float, t_lo: float, t_hi: float,
                        min_tail: int = 50) -> TwoSidedDecayReport:
    """Fit |(u,u_t)| ~ C (t + k I0^(-p/2))^(-1/p) envelopes on a tail window.

    Least squares runs in log coordinates.  The lower/upper fits share the
    central offset and scale their amplitudes so the sandwich holds pointwise
    on the window; the free fit releases the exponent for model validation.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = (times >= t_lo) & (times <= t_hi) & (values > 0)
    if int(mask.sum()) < min_tail:
        raise InsufficientWindowError(
            f"only {int(mask.sum())} tail samples in [{t_lo:g}, {t_hi:g}]; "
            f"need {min_tail}")
    t = times[mask]
    y = np.log(values[mask])
    scale = i0 ** (-p / 2.0)
    window = (float(t[0]), float(t[-1]))

    def model(params, expo=None):
        lnC, lnk = params[0], params[1]
        e = params[2] if expo is None else expo
        return lnC - e * np.log(t + math.exp(lnk) * scale)

    x0 = np.array([float(np.mean(y + np.log(t + scale) / p)), 0.0])
    sol_c = least_squares(lambda q: model(q, expo=1.0 / p) - y, x0, method="lm")
    lnC, lnk = sol_c.x
    res_c = model(sol_c.x, expo=1.0 / p) - y

    sol_f = least_squares(lambda q: model(q) - y,
                          np.array([lnC, lnk, 1.0 / p]), method="lm")
    res_f = model(sol_f.x) - y

    def mk(lnC_, lnk_, e_, res_) -> DecayFit:
        return DecayFit(exponent=float(e_), amplitude=float(math.exp(lnC_)),
                        offset_k=float(math.exp(lnk_)),
                        residual=float(np.sqrt(np.mean(res_ ** 2))),
                        window=window, p=p)

    constrained = mk(lnC, lnk, 1.0 / p, res_c)
    # pointwise envelopes: shift the central curve down/up in log space
    lower = mk(lnC + float(np.min(-res_c)), lnk, 1.0 / p, res_c - np.min(-res_c))
    upper = mk(lnC + float(np.max(-res_c)), lnk, 1.0 / p, res_c - np.max(-res_c))
    free = mk(sol_f.x[0], sol_f.x[1], sol_f.x[2], res_f)
    return TwoSidedDecayReport(lower=lower, upper=upper, constrained=constrained,
                               free=free, p=p, i0=i0, n_tail=int(mask.sum()))


@dataclass
class HolderFit:
    slope: float
    intercept: float        # log of the modulus L
    ci_low: float
    ci_high: float
    n_pairs: int
    degenerate: bool

    @property
    def modulus(self) -> float:
        return math.exp(self.intercept)


def holder_time_exponent(traj: Trajectory, n_pairs: int = 2000,
                         seed: int = 0, n_boot: int = 200,
                         max_gap: Optional[float] = None) -> HolderFit:
    """Regress log state-distance against log time-gap over sampled pairs.

    Gaps are drawn log-uniformly between the sampling resolution and
    ``max_gap`` so every decade contributes; an equilibrium trajectory has no
    usable pairs and is flagged degenerate instead of producing a slope.
    """
    rng = np.random.default_rng(seed)
    n = len(traj)
    if n < 3:
        raise ValueError("trajectory too short for pair sampling")
    lam = traj.basis.eigenvalues
    times = traj.times
    gap_min = float(np.min(np.diff(times)))
    gap_max = float(max_gap) if max_gap is not None else \
        (times[-1] - times[0]) / 4.0
    gap_max = max(gap_max, 2.0 * gap_min)
    want = np.exp(rng.uniform(np.log(gap_min), np.log(gap_max), size=n_pairs))
    ii = rng.integers(0, n - 1, size=n_pairs)
    jj = np.searchsorted(times, times[ii] + want)
    keep = (jj < n) & (jj != ii)
    ii, jj = ii[keep], jj[keep]
    gaps = times[jj] - times[ii]
    da = traj.a[ii] - traj.a[jj]
    db = traj.b[ii] - traj.b[jj]
    dist = np.sqrt(da ** 2 @ lam + np.sum(db ** 2, axis=1))
    scale = float(np.max(traj.phase_norms()))
    good = dist > 1e-13 * max(1.0, scale)
    if good.sum() < max(10, 0.05 * len(dist)):
        return HolderFit(slope=float("nan"), intercept=float("nan"),
                         ci_low=float("nan"), ci_high=float("nan"),
                         n_pairs=int(good.sum()), degenerate=True)
    x = np.log(gaps[good])
    y = np.log(dist[good])
    slope, intercept = np.polyfit(x, y, 1)
    boots = np.empty(n_boot)
    for k in range(n_boot):
        idx = rng.integers(0, x.size, size=x.size)
        boots[k] = np.polyfit(x[idx], y[idx], 1)[0]
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return HolderFit(slope=float(slope), intercept=float(intercept),
                     ci_low=float(lo), ci_high=float(hi),
                     n_pairs=int(x.size), degenerate=False)


@dataclass
class LipschitzReport:
    max_ratio: float
    times: np.ndarray
    ratio_by_time: np.ndarray   # max over pairs at each common output time
    n_pairs: int


def lipschitz_gap(pairs: Sequence, metric: str = "phase") -> LipschitzReport:
    """Empirical Lipschitz constant sup |S(t)w1 - S(t)w2| / |w1 - w2|.

    ``pairs`` holds (traj1, traj2) tuples sampled on one common time grid.
    ``metric='energy'`` weighs |U|^2 with f'(0), the quadratic form the
    undamped linear flow conserves exactly.
    """
    if not pairs:
        raise ValueError("need at least one trajectory pair")
    t_ref = pairs[0][0].times
    ratios = np.zeros((len(pairs), t_ref.size))
    for k, (t1, t2) in enumerate(pairs):
        if t1.times.shape != t_ref.shape or not np.allclose(t1.times, t_ref):
            raise ValueError("all pairs must share one output time grid")
        lam = t1.basis.eigenvalues
        f1 = t1.config.fprime0
        da = t1.a - t2.a
        db = t1.b - t2.b
        d2 = da ** 2 @ lam + np.sum(db ** 2, axis=1)
        if metric == "energy":
            d2 = d2 + f1 * np.sum(da ** 2, axis=1)
        elif metric != "phase":
            raise ValueError("metric must be 'phase' or 'energy'")
        d = np.sqrt(np.maximum(d2, 0.0))
        if d[0] <= 0:
            raise ValueError("pairs must start from distinct states")
        ratios[k] = d / d[0]
    by_time = ratios.max(axis=0)
    return LipschitzReport(max_ratio=float(by_time.max()), times=t_ref.copy(),
                           ratio_by_time=by_time, n_pairs=len(pairs))


@dataclass
class GronwallReport:
    hypotheses_ok: bool
    window_l1_ok: bool
    oscillation_ok: bool
    inequality_ok: bool
    M: float
    sup_F: float
    bounded: bool            # sup F <= M
    failing_windows: list


def gronwall_bound_check(t: np.ndarray, F: np.ndarray, phi: np.ndarray,
                         psi: np.ndarray, C1: float, C2: float,
                         slack: Optional[float] = None) -> GronwallReport:
    """Audit the hypotheses and conclusion of the F' + phi*F <= psi*phi bound.

    Unit-window L1 masses of phi and psi must sum below C1, phi may oscillate
    by at most the factor C2 within any unit window, and the differential
    inequality must hold discretely (central differences, with slack covering
    the discretization error).  The implied ceiling is
    M = F(0) + C1*C2^2*exp(2*C1).
    """
    t = np.asarray(t, float)
    F = np.asarray(F, float)
    phi = np.asarray(phi, float)
    psi = np.asarray(psi, float)
    if np.any(phi < 0) or np.any(psi < 0) or np.any(F < 0):
        raise ValueError("F, phi, psi must be nonnegative")
    dt = float(t[1] - t[0])
    if not np.allclose(np.diff(t), dt, rtol=1e-8):
        raise ValueError("samples must sit on a uniform grid")
    if t[-1] - t[0] < 1.0 - 1e-9:
        raise ValueError("need at least one unit window")
    nw = int(round(1.0 / dt))
    if abs(nw * dt - 1.0) > 1e-8:
        raise ValueError("grid spacing must divide the unit window")

    failing = []
    win_ok = True
    osc_ok = True
    for i0 in range(0, t.size - nw):
        sl = slice(i0, i0 + nw + 1)
        m_phi = float(np.trapezoid(phi[sl], dx=dt))
        m_psi = float(np.trapezoid(psi[sl], dx=dt))
        if m_phi + m_psi > C1 * (1 + 1e-9):
            win_ok = False
            failing.append(("l1", float(t[i0])))
        lo, hi = float(np.min(phi[sl])), float(np.max(phi[sl]))
        if hi > C2 * lo * (1 + 1e-9) + 1e-300:
            osc_ok = False
            failing.append(("oscillation", float(t[i0])))

    dF = np.gradient(F, dt, edge_order=2)
    if slack is None:
        curv = np.max(np.abs(np.diff(F, 2))) / dt ** 2 if F.size > 2 else 0.0
        slack = 1e-9 * max(1.0, float(np.max(psi * phi))) + 2.0 * dt ** 2 * curv
    viol = dF + phi * F - psi * phi
    ineq_ok = bool(np.all(viol <= slack))
    if not ineq_ok:
        for i in np.nonzero(viol > slack)[0][:10]:
            failing.append(("inequality", float(t[i])))

    M = float(F[0] + C1 * C2 ** 2 * math.exp(2.0 * C1))
    supF = float(np.max(F))
    ok = win_ok and osc_ok and ineq_ok
    return GronwallReport(hypotheses_ok=ok, window_l1_ok=win_ok,
                          oscillation_ok=osc_ok, inequality_ok=ineq_ok,
                          M=M, sup_F=supF, bounded=supF <= M,
                          failing_windows=failing)


def write_run_csv(path, traj: Trajectory, w_traj: Optional[Trajectory] = None):
    """Per-run CSV: t, E, I_u, I_up, residual, phase_norm, sobolev_w.

    Fixed column order, 17 significant digits; sobolev_w is the squared
    H^(1+2/7) x H^(2/7) norm of the smooth component when provided, else nan.
    """
    E, Iu, Iup = _functionals(traj)
    residual = E + traj.damping_integral - E[0]
    pn = np.sqrt(Iu)
    if w_traj is not None:
        lam = traj.basis.eigenvalues
        sob = (w_traj.a ** 2 @ lam ** (1.0 + BETA_REG)
               + w_traj.b ** 2 @ lam ** BETA_REG)
    else:
        sob = np.full_like(pn, np.nan)
    with open(path, "w") as fh:
        fh.write("t,E,I_u,I_up,residual,phase_norm,sobolev_w\n")
        for i in range(len(traj)):
            row = (traj.times[i], E[i], Iu[i], Iup[i], residual[i], pn[i], sob[i])
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
