"""Covering numbers, box-counting slopes, and the two-regime dimension bound.

Exact minimal ball coverings are NP-hard, so occupied-cell counts are the
primary statistic and greedy nets the cross-check.  Points always live in the
(sqrt(lam_k) a_k, b_k) embedding where the Euclidean metric equals the
H1 x L2 phase metric, so cell counting is metric-correct.

The degenerate-region construction covers the annulus at scale eps_m, crosses
it with ceil(t_m/eps_m) time slots, pushes the slot centers through the flow,
and inflates the pushed balls by the measured Hölder modulus; t_m comes
from the conservative (upper) decay envelope so "everything launched inside
is below eps_m by t_m" errs on the safe side.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .attractor import PointCloud, eigen_direction_state
from .diagnostics import DecayFit, HolderFit, TwoSidedDecayReport, BETA_REG
from .dynamics import integrate, integrate_vw
from .errors import InsufficientWindowError
from .model import ProblemConfig, SpectralBasis, build_basis

__all__ = [
    "covering_number",
    "greedy_net_indices",
    "CoveringReport",
    "box_dimension",
    "decay_time_schedule",
    "d0_estimate",
    "DegenerateCoverReport",
    "degenerate_cover",
    "two_regime_summary",
    "VWSplitReport",
    "vw_splitting_report",
]


def _as_points(points) -> np.ndarray:
    if isinstance(points, PointCloud):
        return points.embedded()
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def greedy_net_indices(points, eps: float) -> np.ndarray:
    """Indices of a greedy eps-net (centers are data points, lowest index
    first); its size upper-bounds N(K, eps)."""
    X = _as_points(points)
    n = X.shape[0]
    dmin = np.full(n, np.inf)
    out = []
    cur = 0
    while True:
        out.append(cur)
        d = np.sqrt(np.sum((X - X[cur]) ** 2, axis=1))
        np.minimum(dmin, d, out=dmin)
        cand = np.nonzero(dmin > eps)[0]
        if cand.size == 0:
            break
        cur = int(cand[0])
    return np.asarray(out, dtype=np.int64)


def covering_number(points, eps: float, method: str = "grid") -> int:
    """Count half-open cells of side eps occupied by the points (grid) or
    the size of a greedy eps-net (greedy, an upper bound on N(K, eps))."""
    X = _as_points(points)
    if X.shape[0] == 0:
        raise ValueError("empty point set")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if method == "grid":
        # anchor the grid at the data corner so sign-straddling coordinates
        # of magnitude << eps cannot split cells
        cells = np.floor((X - X.min(axis=0)) / eps).astype(np.int64)
        return int(np.unique(cells, axis=0).shape[0])
    if method == "greedy":
        return int(greedy_net_indices(X, eps).size)
    raise ValueError("method must be 'grid' or 'greedy'")


@dataclass
class CoveringReport:
    method: str
    alpha: float
    eps_list: np.ndarray
    counts: np.ndarray
    slope: float                 # nan when verdict is inconclusive
    verdict: str                 # "ok" | "inconclusive"
    window: tuple                # inclusive index range of the fitted scales
    n_points: int
    t_list: Optional[np.ndarray] = None
    d0: Optional[float] = None

    def __post_init__(self):
        e = np.asarray(self.eps_list, dtype=float)
        if e.size >= 2:
            ratios = e[1:] / e[:-1]
            if np.any(ratios >= 1.0) or np.any(ratios < self.alpha - 1e-12):
                raise ValueError("scales must decrease with eps_{m+1} >= alpha*eps_m")

    def to_json_dict(self) -> dict:
        d = {
            "method": self.method,
            "alpha": self.alpha,
            "eps_list": [float(x) for x in self.eps_list],
            "counts": [int(c) for c in self.counts],
            "slope": None if math.isnan(self.slope) else float(self.slope),
            "verdict": self.verdict,
            "window": list(self.window),
            "n_points": self.n_points,
            "t_list": None if self.t_list is None else [float(x) for x in self.t_list],
            "d0": self.d0,
        }
        return d

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def save_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("m,eps,count,t_m\n")
            for m, (e, c) in enumerate(zip(self.eps_list, self.counts)):
                tm = self.t_list[m] if self.t_list is not None else float("nan")
                fh.write(f"{m},{e:.17g},{int(c)},{tm:.17g}\n")


def box_dimension(points, eps0: float, alpha: float, m_max: int,
                  method: str = "grid", min_count: int = 2,
                  max_fraction: float = 0.2, min_scales: int = 4) -> CoveringReport:
    """Slope of ln N against -ln eps over an auto-selected scaling window.

    Scales where the count saturates (close to the sample size) or collapses
    (below ``min_count``) are excluded; if fewer than ``min_scales`` usable
    scales remain the verdict is "inconclusive" and no slope is invented.
    For 1/integer alpha the grids nest, so grid counts are monotone.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    X = _as_points(points)
    n = X.shape[0]
    eps = eps0 * alpha ** np.arange(m_max)
    counts = np.array([covering_number(X, e, method) for e in eps])

    if np.all(counts == 1):
        # one occupied cell at every scale: the set is a point for this metric
        return CoveringReport(method=method, alpha=alpha, eps_list=eps,
                              counts=counts, slope=0.0, verdict="ok",
                              window=(0, m_max - 1), n_points=n)

    usable = (counts >= min_count) & (counts <= max_fraction * n)
    # longest contiguous usable run
    best = (0, -1)
    i = 0
    while i < m_max:
        if usable[i]:
            j = i
            while j + 1 < m_max and usable[j + 1]:
                j += 1
            if j - i > best[1] - best[0]:
                best = (i, j)
            i = j + 1
        else:
            i += 1
    lo, hi = best
    if hi - lo + 1 < min_scales:
        return CoveringReport(method=method, alpha=alpha, eps_list=eps,
                              counts=counts, slope=float("nan"),
                              verdict="inconclusive", window=(lo, hi),
                              n_points=n)
    # quantization noise concentrates at coarse scales; keep the finest 70%
    keep = max(min_scales, math.ceil(0.7 * (hi - lo + 1)))
    lo = hi - keep + 1
    x = -np.log(eps[lo:hi + 1])
    y = np.log(counts[lo:hi + 1].astype(float))
    slope = float(np.polyfit(x, y, 1)[0])
    return CoveringReport(method=method, alpha=alpha, eps_list=eps,
                          counts=counts, slope=slope, verdict="ok",
                          window=(lo, hi), n_points=n)


def decay_time_schedule(upper: DecayFit, eps0: float, m_values: np.ndarray):
    """eps_m = 2^-m eps0 and the conservative times t_m at which everything
    launched inside B(0, eps0) has fallen below eps_m, from the upper decay
    envelope with worst-case initial size I0 = eps0^2."""
    eps_m = eps0 * 2.0 ** (-np.asarray(m_values, dtype=float))
    shift = upper.shift(eps0 ** 2)
    t_m = np.maximum((upper.amplitude / eps_m) ** (1.0 / upper.exponent) - shift, 0.0)
    return eps_m, t_m


def d0_estimate(upper: DecayFit, eps0: float, m_max: int = 24, tail: int = 3):
    """Last-``tail``-scales average of ln t_m / (-ln eps_m) plus the sequence."""
    m = np.arange(1, m_max + 1)
    eps_m, t_m = decay_time_schedule(upper, eps0, m)
    valid = t_m > 1.0
    ratio = np.full(m.size, np.nan)
    ratio[valid] = np.log(t_m[valid]) / (-np.log(eps_m[valid]))
    good = np.nonzero(valid)[0]
    if good.size < tail:
        raise InsufficientWindowError("decay schedule produced too few usable scales")
    d0 = float(np.mean(ratio[good[-tail:]]))
    return d0, eps_m, t_m, ratio


@dataclass
class DegenerateCoverReport:
    report: CoveringReport            # schedule scales, inner counts, t_m, d0
    eps0: float
    eps1: float
    theta: float
    holder_modulus: float
    inflate_radii: np.ndarray         # 2L(2 sqrt2 eps_m)^theta per scale
    annulus_counts: np.ndarray
    slot_counts: np.ndarray
    verified: list                    # per scale: "ok" | "uncovered" | "skipped"
    uncovered: dict                   # scale index -> (witness indices, worst gap)
    inner_dim_bound: float            # slope / theta
    n_inner: int
    n_annulus: int


def degenerate_cover(cloud: PointCloud, config: ProblemConfig,
                     decay: TwoSidedDecayReport, holder: HolderFit,
                     eps0: float, eps1: Optional[float] = None,
                     m_max: int = 5, schedule_m_max: int = 24,
                     push_budget: int = 400_000,
                     basis: Optional[SpectralBasis] = None,
                     jobs: int = 1) -> DegenerateCoverReport:
    """Cover the degenerate region B(0, eps0) by flowing annulus covers.

    For each scale the annulus net is crossed with time slots, pushed through
    the flow, and the pushed balls (inflated by the measured Hölder modulus)
    are checked against the inner points; scales whose push volume exceeds
    ``push_budget`` report their counts but skip the verification.  Coverage
    failures are diagnostics, not errors: every constant here is empirical.
    """
    if basis is None:
        basis = build_basis(config)
    if eps1 is None:
        eps1 = eps0 / 2.0
    if not (0.0 < eps1 < eps0):
        raise ValueError("need 0 < eps1 < eps0")
    pn = cloud.phase_norms()
    inner_idx = np.nonzero(pn <= eps0)[0]
    ann_idx = np.nonzero((pn > eps1) & (pn <= eps0))[0]
    inner = cloud.subset(inner_idx)
    ann = cloud.subset(ann_idx)   # may be empty: then only the ball at 0 counts
    Xin = inner.embedded()
    pn_in = inner.phase_norms()

    theta = min(holder.slope, 1.0)
    if not (theta > 0):
        raise ValueError("measured Hölder exponent must be positive")
    L = holder.modulus

    m = np.arange(1, m_max + 1)
    eps_m, t_m = decay_time_schedule(decay.upper, eps0, m)
    d0, _, _, _ = d0_estimate(decay.upper, eps0, m_max=schedule_m_max)

    ann_counts = np.empty(m_max, dtype=np.int64)
    slot_counts = np.empty(m_max, dtype=np.int64)
    totals = np.empty(m_max, dtype=np.int64)
    radii = 2.0 * L * (2.0 * math.sqrt(2.0) * eps_m) ** theta
    verified = []
    uncovered = {}

    for j in range(m_max):
        net = greedy_net_indices(ann, eps_m[j]) if len(ann) else np.empty(0, np.int64)
        ann_counts[j] = net.size
        n_slots = max(1, int(math.ceil(t_m[j] / eps_m[j]))) if t_m[j] > 0 else 1
        slot_counts[j] = n_slots
        totals[j] = ann_counts[j] * n_slots + 1

        check = pn_in > eps_m[j]        # the rest sits inside the +1 ball at 0
        if not np.any(check):
            verified.append("ok")
            continue
        if net.size == 0:
            verified.append("uncovered")
            wit = np.nonzero(check)[0]
            uncovered[int(j)] = (inner_idx[wit][:10].tolist(), float("inf"))
            continue
        if net.size * n_slots > push_budget:
            verified.append("skipped")
            continue

        slot_len = (t_m[j] / n_slots) if t_m[j] > 0 else 0.0
        s_times = (np.arange(n_slots) + 0.5) * slot_len if t_m[j] > 0 \
            else np.array([0.0])
        gaps = np.full(int(np.sum(check)), np.inf)
        target = Xin[check]

        def push_one(ci):
            st = ann.state(int(ci))
            if t_m[j] <= 0:
                E = np.hstack([st.a * np.sqrt(basis.eigenvalues), st.b])[None, :]
            else:
                tr = integrate(st, float(t_m[j]), config, basis=basis,
                               t_eval=np.asarray(s_times))
                E = np.hstack([tr.a * np.sqrt(basis.eigenvalues), tr.b])
            d2 = (np.sum(target ** 2, 1)[:, None] + np.sum(E ** 2, 1)[None, :]
                  - 2.0 * target @ E.T)
            return np.sqrt(np.maximum(d2.min(axis=1), 0.0))

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as ex:
                for g in ex.map(push_one, net):
                    np.minimum(gaps, g, out=gaps)
        else:
            for ci in net:
                np.minimum(gaps, push_one(ci), out=gaps)

        bad = np.nonzero(gaps > radii[j])[0]
        if bad.size == 0:
            verified.append("ok")
        else:
            verified.append("uncovered")
            wit = np.nonzero(check)[0][bad]
            uncovered[int(j)] = (inner_idx[wit][:10].tolist(),
                                 float(np.max(gaps[bad])))

    # slope of the combined inner counts across the schedule
    if m_max >= 2 and totals[-1] > totals[0]:
        slope = float(np.polyfit(-np.log(eps_m), np.log(totals.astype(float)), 1)[0])
        verdict = "ok"
    elif np.all(totals == totals[0]):
        slope, verdict = 0.0, "ok"      # e.g. the single-point cloud
    else:
        slope, verdict = float("nan"), "inconclusive"

    rep = CoveringReport(method="degenerate", alpha=0.5, eps_list=eps_m,
                         counts=totals, slope=slope, verdict=verdict,
                         window=(0, m_max - 1), n_points=len(inner),
                         t_list=t_m, d0=d0)
    return DegenerateCoverReport(report=rep, eps0=eps0, eps1=eps1, theta=theta,
                                 holder_modulus=L, inflate_radii=radii,
                                 annulus_counts=ann_counts,
                                 slot_counts=slot_counts, verified=verified,
                                 uncovered=uncovered,
                                 inner_dim_bound=slope / theta if verdict == "ok"
                                 else float("nan"),
                                 n_inner=len(inner), n_annulus=len(ann))


def two_regime_summary(outer: CoveringReport, annulus: CoveringReport,
                       degenerate: DegenerateCoverReport) -> dict:
    """Assemble the final chain: the whole set's dimension is bounded by the
    outer slope plus theta^-1 (annulus slope + d0 + 1)."""
    theta = degenerate.theta
    d0 = degenerate.report.d0
    outer_slope = outer.slope if outer.verdict == "ok" else 0.0
    ann_slope = annulus.slope if annulus.verdict == "ok" else 0.0
    combined = outer_slope + (ann_slope + d0 + 1.0) / theta
    return {
        "outer_slope": outer_slope,
        "annulus_slope": ann_slope,
        "d0": d0,
        "theta": theta,
        "inner_dim_bound": degenerate.inner_dim_bound,
        "combined_bound": combined,
    }


@dataclass
class VWSplitReport:
    T_grid: np.ndarray
    q_by_T: np.ndarray          # max over samples x directions of I_V(T)/I_V(0)
    q_max: float                # at the final grid time
    q_per_probe: np.ndarray     # (n_samples, n_directions) at the final time
    w_proxy_sup: float          # sup over probes/times of the H^(1+b)xH^b norm^2 of W
    T0_empirical: float         # first grid time with q < 1 (nan if none)
    eps0: float
    sample_indices: np.ndarray
    n_directions: int


def vw_splitting_report(cloud: PointCloud, config: ProblemConfig, eps0: float,
                        T_grid: Sequence[float], n_samples: int = 32,
                        n_directions: int = 8,
                        basis: Optional[SpectralBasis] = None,
                        beta: float = BETA_REG,
                        jobs: int = 1) -> VWSplitReport:
    """Contraction factor of the V-flow and compactness proxy of the W-flow.

    Probes are unit-phase-norm eigen directions (position/velocity
    alternating); samples are the first cloud points with I_u >= eps0^2 in
    deterministic cloud order.
    """
    if basis is None:
        basis = build_basis(config)
    T_grid = np.asarray(sorted(T_grid), dtype=float)
    if T_grid.size == 0 or T_grid[0] <= 0.0:
        raise ValueError("T_grid must hold positive times")
    pn = cloud.phase_norms()
    qual = np.nonzero(pn >= eps0)[0]
    if qual.size < n_samples:
        raise ValueError(
            f"only {qual.size} cloud points with phase norm >= {eps0:.4g}; "
            f"need {n_samples}")
    samples = qual[:n_samples]
    dirs = [eigen_direction_state(basis, d // 2, 1.0, velocity=bool(d % 2))
            for d in range(n_directions)]
    lam = basis.eigenvalues
    q_all = np.empty((n_samples, n_directions, T_grid.size))
    w_sup = 0.0

    def run_probe(args):
        si, di = args
        V, W = integrate_vw(cloud.state(int(samples[si])), dirs[di],
                            float(T_grid[-1]), config, basis=basis,
                            t_eval=T_grid)
        # times[0] is the prepended t=0 anchor; grid values follow
        iv = V.a ** 2 @ lam + np.sum(V.b ** 2, axis=1)
        wn = W.a ** 2 @ lam ** (1.0 + beta) + W.b ** 2 @ lam ** beta
        return si, di, iv[1:] / iv[0], float(np.max(wn))

    tasks = [(si, di) for si in range(n_samples) for di in range(n_directions)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(run_probe, tasks))
    else:
        results = [run_probe(t) for t in tasks]
    for si, di, q, wmax in results:
        q_all[si, di] = q
        w_sup = max(w_sup, wmax)

    q_by_T = q_all.max(axis=(0, 1))
    below = np.nonzero(q_by_T < 1.0)[0]
    T0 = float(T_grid[below[0]]) if below.size else float("nan")
    return VWSplitReport(T_grid=T_grid, q_by_T=q_by_T, q_max=float(q_by_T[-1]),
                         q_per_probe=q_all[:, :, -1], w_proxy_sup=w_sup,
                         T0_empirical=T0, eps0=eps0,
                         sample_indices=samples, n_directions=n_directions)
