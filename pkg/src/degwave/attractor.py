"""Ensemble machinery: absorbing-radius probes, attractor sampling, clouds.

Clouds carry full provenance (config hash, burn-in, stride, seed) so any
point can be regenerated exactly.  The on-disk format is fixed byte-exactly:

    bytes 0..7    magic b"DWCLOUD1"
    bytes 8..11   format version, uint32 little-endian (currently 1)
    bytes 12..15  dim, uint32
    bytes 16..19  n_modes per axis, uint32
    bytes 20..27  point count, uint64
    bytes 28..59  config hash, 32 raw bytes (sha256)
    bytes 60..67  burn_in, float64
    bytes 68..75  stride, float64
    bytes 76..83  seed, uint64
    bytes 84..87  n_traj, uint32
    bytes 88..95  reserved, zero
    then count records of 2K float64 (a coefficients, then b), little-endian.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import integrate, integrate_decomposition
from .errors import BudgetExceededError
from .model import ModalState, ProblemConfig, SpectralBasis, build_basis
from .diagnostics import BETA_REG

__all__ = [
    "EnsembleSpec",
    "PointCloud",
    "random_low_mode_state",
    "eigen_direction_state",
    "ensemble_states",
    "probe_absorbing_radius",
    "AbsorbingRadiusReport",
    "probe_small_data_radius",
    "SmallDataRadiusReport",
    "SamplingSuggestion",
    "suggest_sampling",
    "sample_attractor",
    "annulus_split",
    "w_regularity_report",
    "WRegularityReport",
    "invariance_defect",
]

_MAGIC = b"DWCLOUD1"


def random_low_mode_state(basis: SpectralBasis, rng: np.random.Generator,
                          target_norm: float, n_low: int = 8) -> ModalState:
    """Gaussian data on the lowest modes, rescaled to the given phase norm."""
    K = basis.size
    m = min(K, n_low)
    a = np.zeros(K)
    b = np.zeros(K)
    a[:m] = rng.standard_normal(m)
    b[:m] = rng.standard_normal(m)
    cur = math.sqrt(float(a ** 2 @ basis.eigenvalues + b @ b))
    if cur == 0.0 or target_norm == 0.0:
        return ModalState(np.zeros(K), np.zeros(K))
    s = target_norm / cur
    return ModalState(s * a, s * b)


def eigen_direction_state(basis: SpectralBasis, mode: int, target_norm: float,
                          velocity: bool = False) -> ModalState:
    """Data along one eigen-direction (position- or velocity-aligned)."""
    K = basis.size
    a = np.zeros(K)
    b = np.zeros(K)
    if velocity:
        b[mode] = target_norm
    else:
        a[mode] = target_norm / math.sqrt(basis.eigenvalues[mode])
    return ModalState(a, b)


@dataclass
class EnsembleSpec:
    """Initial-condition ensemble: random low-mode data with phase norms
    spread up to ``max_norm``, optionally padded with eigen-direction data."""

    n_traj: int = 32
    max_norm: float = 5.0
    t_budget: float = 200.0
    n_low: int = 8
    include_eigen_directions: bool = True
    seed: int = 0


def ensemble_states(spec: EnsembleSpec, basis: SpectralBasis) -> list:
    """Random low-mode data spread up to max_norm, padded with structured
    eigen-direction data (both signs and two amplitudes per mode), which is
    what reaches basin corners that generic multi-mode data misses."""
    rng = np.random.default_rng(spec.seed)
    states = []
    n_eig = min(2, basis.size) if spec.include_eigen_directions else 0
    n_struct = 4 * n_eig
    n_rand = max(1, spec.n_traj - n_struct)
    norms = np.linspace(spec.max_norm / n_rand, spec.max_norm, n_rand)
    for r in norms:
        states.append(random_low_mode_state(basis, rng, float(r), spec.n_low))
    for k in range(n_eig):
        states.append(eigen_direction_state(basis, k, spec.max_norm))
        states.append(eigen_direction_state(basis, k, -0.6 * spec.max_norm))
        states.append(eigen_direction_state(basis, k, spec.max_norm, velocity=True))
        states.append(eigen_direction_state(basis, k, 0.45 * spec.max_norm))
    return states[:spec.n_traj]


def _run_many(states, T, config, basis, t_eval, jobs: int = 1):
    if jobs <= 1:
        return [integrate(s, T, config, basis=basis, t_eval=t_eval) for s in states]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        futs = [ex.submit(integrate, s, T, config, basis=basis, t_eval=t_eval)
                for s in states]
        return [f.result() for f in futs]


@dataclass
class AbsorbingRadiusReport:
    radius: float
    margin: float
    entry_times: np.ndarray
    initial_norms: np.ndarray
    entry_monotone: bool
    t_budget: float
    n_traj: int


def probe_absorbing_radius(config: ProblemConfig, spec: EnsembleSpec,
                           basis: Optional[SpectralBasis] = None,
                           margin: float = 0.05, n_out: int = 400,
                           jobs: int = 1) -> AbsorbingRadiusReport:
    """Smallest radius the whole ensemble enters and never leaves.

    The radius is read off the second half of each run (the sup of the phase
    norm after t_budget/2); entry times are measured against radius*(1+margin).
    Trajectories that fail to enter within the budget raise BudgetExceededError
    rather than suggesting non-dissipativity.
    """
    if basis is None:
        basis = build_basis(config)
    states = ensemble_states(spec, basis)
    te = np.linspace(0.0, spec.t_budget, n_out + 1)
    trajs = _run_many(states, spec.t_budget, config, basis, te, jobs)
    init = np.array([traj.phase_norms()[0] for traj in trajs])
    # running sup from the right: m[i] = sup_{s >= t_i} |traj(s)|
    tails = []
    for traj in trajs:
        pn = traj.phase_norms()
        tails.append(np.maximum.accumulate(pn[::-1])[::-1])
    half = n_out // 2
    radius = float(max(np.max(tl[half:]) for tl in tails))
    thresh = radius * (1.0 + margin) + 1e-300
    entry = np.empty(len(trajs))
    for i, tl in enumerate(tails):
        idx = np.nonzero(tl <= thresh)[0]
        if idx.size == 0:
            raise BudgetExceededError(
                f"trajectory {i} did not enter B(0, {thresh:.4g}) within "
                f"t_budget={spec.t_budget}")
        entry[i] = te[idx[0]]
    # monotone check: mean entry time over the large-K half vs the small-K half
    order = np.argsort(init)
    k = len(order) // 2
    lo = float(np.mean(entry[order[:k]])) if k else 0.0
    hi = float(np.mean(entry[order[k:]]))
    return AbsorbingRadiusReport(radius=radius, margin=margin, entry_times=entry,
                                 initial_norms=init,
                                 entry_monotone=bool(hi >= lo - 1e-12),
                                 t_budget=spec.t_budget, n_traj=len(trajs))


@dataclass
class SmallDataRadiusReport:
    radius: float
    candidates: np.ndarray
    passed: np.ndarray
    equivalence_margin: float
    excursion_factor: float


def probe_small_data_radius(config: ProblemConfig,
                            basis: Optional[SpectralBasis] = None,
                            candidates: Sequence[float] = (0.25, 0.5, 1.0, 2.0, 4.0),
                            t_probe: float = 50.0, n_runs: int = 8,
                            equivalence_margin: float = 0.25,
                            excursion_factor: float = 4.0,
                            seed: Optional[int] = None) -> SmallDataRadiusReport:
    """Largest ball radius on which the energy stays equivalent to I_u.

    A candidate passes when, over a short ensemble launched at that phase
    norm, the non-quadratic part of the potential stays below a fixed
    fraction of I_u and no trajectory leaves 4x its initial I_u.  This is the
    numerical stand-in for the non-constructive smallness threshold of the
    local decay estimates.
    """
    if basis is None:
        basis = build_basis(config)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    lam = basis.eigenvalues
    cands = np.asarray(sorted(candidates), dtype=float)
    passed = np.zeros(cands.size, dtype=bool)
    te = np.linspace(0.0, t_probe, 201)
    for ci, r in enumerate(cands):
        ok = True
        for _ in range(n_runs):
            st = random_low_mode_state(basis, rng, float(r))
            traj = integrate(st, t_probe, config, basis=basis, t_eval=te)
            g2 = traj.a ** 2 @ lam
            v2 = np.sum(traj.b ** 2, axis=1)
            Iu = g2 + v2
            vals = traj.a @ basis.synthesis.T
            # F minus its quadratic part at the origin
            Fstar = ((config.c3 / 4.0) * vals ** 4
                     + (config.c5 / 6.0) * vals ** 6) @ basis.weights
            denom = np.maximum(Iu, 1e-300)
            if np.max(np.abs(Fstar) / denom) > equivalence_margin:
                ok = False
                break
            if np.max(Iu) > excursion_factor * max(Iu[0], 1e-300):
                ok = False
                break
        passed[ci] = ok
    if not passed.any():
        radius = float(cands[0]) / 2.0
    else:
        radius = float(cands[np.nonzero(passed)[0][-1]])
    return SmallDataRadiusReport(radius=radius, candidates=cands, passed=passed,
                                 equivalence_margin=equivalence_margin,
                                 excursion_factor=excursion_factor)


@dataclass
class SamplingSuggestion:
    burn_in: float
    stride: float
    entry_time: float
    autocorr_lag: float


def suggest_sampling(config: ProblemConfig, spec: EnsembleSpec,
                     basis: Optional[SpectralBasis] = None,
                     jobs: int = 1) -> SamplingSuggestion:
    """Default burn-in and stride: four probed entry times of burn-in, and a
    stride at which the detrended energy of a representative trajectory has
    autocorrelation below 0.2 (attraction is guaranteed, mixing is not)."""
    if basis is None:
        basis = build_basis(config)
    rep = probe_absorbing_radius(config, spec, basis, jobs=jobs)
    entry = float(np.max(rep.entry_times))
    burn_in = 4.0 * entry if entry > 0 else spec.t_budget / 20.0
    window = max(10.0, spec.t_budget / 4.0)
    n_out = 512
    dt = window / n_out
    state = ensemble_states(spec, basis)[-1]
    tr = integrate(state, burn_in + window, config, basis=basis,
                   t_eval=burn_in + dt * np.arange(1, n_out + 1))
    from .diagnostics import energy_report      # deferred: circular import
    E = energy_report(tr).E[1:]
    t = np.arange(E.size) * dt
    x = E - np.polyval(np.polyfit(t, E, 1), t)
    sd = float(np.std(x))
    lag = dt
    if sd > 1e-12 * (1.0 + float(np.max(np.abs(E)))):
        x = x / sd
        for k in range(1, n_out // 4):
            r = float(np.mean(x[:-k] * x[k:]))
            lag = k * dt
            if r < 0.2:
                break
    return SamplingSuggestion(burn_in=burn_in, stride=lag, entry_time=entry,
                              autocorr_lag=lag)


@dataclass
class PointCloud:
    """Finite phase-space sample with the H1 x L2 modal metric attached."""

    a: np.ndarray                    # (n, K)
    b: np.ndarray                    # (n, K)
    eigenvalues: np.ndarray          # (K,)
    dim: int
    n_modes: int
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.a.shape[0]

    def state(self, i: int) -> ModalState:
        return ModalState(self.a[i].copy(), self.b[i].copy())

    def phase_norms(self) -> np.ndarray:
        return np.sqrt(self.a ** 2 @ self.eigenvalues + np.sum(self.b ** 2, axis=1))

    def embedded(self) -> np.ndarray:
        """Coordinates (sqrt(lam_k) a_k, b_k): Euclidean = phase metric."""
        return np.hstack([self.a * np.sqrt(self.eigenvalues), self.b])

    def diameter(self) -> float:
        X = self.embedded()
        d = 0.0
        for i in range(0, X.shape[0], 512):
            blk = X[i:i + 512]
            d2 = (np.sum(blk ** 2, 1)[:, None] + np.sum(X ** 2, 1)[None, :]
                  - 2.0 * blk @ X.T)
            d = max(d, float(np.sqrt(max(d2.max(), 0.0))))
        return d

    def subset(self, idx) -> "PointCloud":
        return PointCloud(a=self.a[idx], b=self.b[idx],
                          eigenvalues=self.eigenvalues, dim=self.dim,
                          n_modes=self.n_modes, provenance=dict(self.provenance))

    def save(self, path) -> None:
        n, K = self.a.shape
        head = bytearray()
        head += _MAGIC
        head += struct.pack("<I", 1)
        head += struct.pack("<I", self.dim)
        head += struct.pack("<I", self.n_modes)
        head += struct.pack("<Q", n)
        ch = bytes.fromhex(self.provenance.get("config_hash", "00" * 32))
        head += ch[:32].ljust(32, b"\0")
        head += struct.pack("<d", float(self.provenance.get("burn_in", 0.0)))
        head += struct.pack("<d", float(self.provenance.get("stride", 0.0)))
        head += struct.pack("<Q", int(self.provenance.get("seed", 0)))
        head += struct.pack("<I", int(self.provenance.get("n_traj", 0)))
        head += b"\0" * 8
        rec = np.hstack([self.a, self.b]).astype("<f8")
        with open(path, "wb") as fh:
            fh.write(bytes(head))
            fh.write(rec.tobytes())

    @staticmethod
    def load(path, eigenvalues: Optional[np.ndarray] = None) -> "PointCloud":
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:8] != _MAGIC:
            raise ValueError("not a cloud file (bad magic)")
        ver, dim, n_modes = struct.unpack("<III", raw[8:20])
        if ver != 1:
            raise ValueError(f"unsupported cloud format version {ver}")
        (n,) = struct.unpack("<Q", raw[20:28])
        config_hash = raw[28:60].hex()
        burn_in, stride = struct.unpack("<dd", raw[60:76])
        (seed,) = struct.unpack("<Q", raw[76:84])
        (n_traj,) = struct.unpack("<I", raw[84:88])
        body = np.frombuffer(raw[96:], dtype="<f8")
        K = n_modes ** dim
        body = body.reshape(n, 2 * K)
        if eigenvalues is None:
            cfg = ProblemConfig(p=1.5, dim=dim, n_modes=n_modes)
            eigenvalues = build_basis(cfg).eigenvalues
        return PointCloud(a=body[:, :K].copy(), b=body[:, K:].copy(),
                          eigenvalues=np.asarray(eigenvalues), dim=dim,
                          n_modes=n_modes,
                          provenance={"config_hash": config_hash,
                                      "burn_in": burn_in, "stride": stride,
                                      "seed": seed, "n_traj": n_traj})

    def to_csv(self, path) -> None:
        K = self.a.shape[1]
        cols = [f"a_{k+1}" for k in range(K)] + [f"b_{k+1}" for k in range(K)]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(len(self)):
                row = np.concatenate([self.a[i], self.b[i]])
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def sample_attractor(config: ProblemConfig, n_traj: int, burn_in: float,
                     n_samples: int, stride: float,
                     basis: Optional[SpectralBasis] = None,
                     max_norm: float = 5.0, n_low: int = 8,
                     dedup_tol: float = 1e-12, jobs: int = 1) -> PointCloud:
    """Empirical omega-limit sample: burn in, then take strided snapshots.

    Deterministic for a fixed config seed; duplicates within ``dedup_tol``
    (in the phase metric embedding) collapse to their first occurrence.
    """
    if basis is None:
        basis = build_basis(config)
    spec = EnsembleSpec(n_traj=n_traj, max_norm=max_norm, n_low=n_low,
                        seed=config.seed)
    states = ensemble_states(spec, basis)[:n_traj]
    T = burn_in + n_samples * stride
    te = burn_in + stride * np.arange(1, n_samples + 1)
    trajs = _run_many(states, T, config, basis, te, jobs)
    A = np.vstack([t.a[1:] for t in trajs])   # row 0 is the t=0 anchor
    B = np.vstack([t.b[1:] for t in trajs])
    # dedup in the metric embedding, first occurrence wins (trajectory, time order)
    X = np.hstack([A * np.sqrt(basis.eigenvalues), B])
    keys = np.round(X / dedup_tol).astype(np.int64)
    _, keep = np.unique(keys, axis=0, return_index=True)
    keep = np.sort(keep)
    prov = {"config_hash": config.content_hash(), "burn_in": float(burn_in),
            "stride": float(stride), "seed": int(config.seed),
            "n_traj": int(n_traj)}
    return PointCloud(a=A[keep], b=B[keep], eigenvalues=basis.eigenvalues,
                      dim=config.dim, n_modes=config.n_modes, provenance=prov)


def annulus_split(cloud: PointCloud, eps: float):
    """Partition a cloud into (inside B(0,eps), outside) by phase norm."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    pn = cloud.phase_norms()
    inner = pn <= eps
    return cloud.subset(inner), cloud.subset(~inner)


@dataclass
class WRegularityReport:
    sup_norm_sq: float
    per_run: np.ndarray
    t_of_sup: float
    beta: float
    horizon: float
    lam_shift: float
    growth_flagged: bool     # late-half sup above the early-half sup by >20%


def w_regularity_report(config: ProblemConfig, spec: EnsembleSpec, T: float,
                        basis: Optional[SpectralBasis] = None,
                        beta: float = BETA_REG, n_out: int = 200,
                        lam: Optional[float] = None) -> WRegularityReport:
    """sup over runs and t of the squared H^(1+beta) x H^beta norm of (w, w_t)
    from decomposition runs with the f'(0) shift.

    A sup that keeps growing into the late half of the horizon is flagged:
    at truncation level that would contradict the global-in-time bound.
    """
    if basis is None:
        basis = build_basis(config)
    if lam is None:
        lam = config.fprime0
    states = ensemble_states(spec, basis)
    te = np.linspace(0.0, T, n_out + 1)
    lam_k = basis.eigenvalues
    per_run = np.empty(len(states))
    t_worst, worst = 0.0, -1.0
    early, late = 0.0, 0.0
    half = n_out // 2
    for i, st in enumerate(states):
        _, _, w = integrate_decomposition(st, T, config, lam=lam, basis=basis,
                                          t_eval=te)
        norm_sq = w.a ** 2 @ lam_k ** (1.0 + beta) + w.b ** 2 @ lam_k ** beta
        per_run[i] = float(np.max(norm_sq))
        early = max(early, float(np.max(norm_sq[:half])))
        late = max(late, float(np.max(norm_sq[half:])))
        j = int(np.argmax(norm_sq))
        if per_run[i] > worst:
            worst, t_worst = per_run[i], float(te[j])
    return WRegularityReport(sup_norm_sq=float(np.max(per_run)), per_run=per_run,
                             t_of_sup=t_worst, beta=beta, horizon=T,
                             lam_shift=float(lam),
                             growth_flagged=bool(late > 1.2 * early))


def invariance_defect(cloud: PointCloud, config: ProblemConfig, dt: float,
                      basis: Optional[SpectralBasis] = None) -> float:
    """Hausdorff distance between S(dt)(cloud) and cloud, over the diameter.

    The pushed cloud tracks the original when the sample is close to an
    invariant set and the sampling is dense along trajectories.
    """
    if basis is None:
        basis = build_basis(config)
    n = len(cloud)
    pushed = np.empty((n, 2 * basis.size))
    for i in range(n):
        traj = integrate(cloud.state(i), dt, config, basis=basis,
                         t_eval=np.array([dt]))
        pushed[i] = np.concatenate([traj.a[-1] * np.sqrt(basis.eigenvalues),
                                    traj.b[-1]])
    X = cloud.embedded()
    d2 = (np.sum(pushed ** 2, 1)[:, None] + np.sum(X ** 2, 1)[None, :]
          - 2.0 * pushed @ X.T)
    d2 = np.maximum(d2, 0.0)
    h1 = float(np.sqrt(d2.min(axis=1).max()))   # pushed -> cloud
    h2 = float(np.sqrt(d2.min(axis=0).max()))   # cloud -> pushed
    dia = cloud.diameter()
    h = max(h1, h2)
    return h / dia if dia > 0 else h
