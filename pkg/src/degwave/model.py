"""Spectral setup for the damped wave system.

The state lives in the span of the first Dirichlet-Laplacian eigenfunctions
on (0,1) or (0,1)^2.  The basis is orthonormal in L2, so every norm and
functional used by the solvers and audits is a finite weighted sum of modal
coefficients, and the polynomial nonlinearity is projected exactly (to
roundoff) through a sine-collocation rule with bandwidth margin.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError

__all__ = [
    "ProblemConfig",
    "SpectralBasis",
    "ModalState",
    "build_basis",
    "norm_hs",
    "phase_norm",
    "i_u",
    "i_up",
    "damping_coefficient",
    "eval_f_modal",
    "eval_fprime_grid",
    "potential_integral",
    "zero_state",
]


@dataclass(frozen=True)
class ProblemConfig:
    """Parameters of one problem instance.

    ``p`` is the damping exponent, ``f1/c3/c5`` the coefficients of the odd
    polynomial nonlinearity f(s) = f1*s + c3*s^3 + c5*s^5 (so f1 = f'(0)),
    ``n_modes`` the modal truncation per axis and ``n_colloc`` the number of
    collocation points per axis.  Validation happens at construction; an
    instance that exists is valid.
    """

    p: float
    dim: int = 1
    n_modes: int = 16
    n_colloc: int = 0  # 0 -> 4 * n_modes
    f1: float = 0.0
    c3: float = 1.0
    c5: float = 0.0
    strict_growth: bool = False
    tol_abs: float = 1e-9
    tol_rel: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if self.n_colloc == 0:
            object.__setattr__(self, "n_colloc", 4 * int(self.n_modes))
        self.validate()

    @property
    def lambda1(self) -> float:
        """First Dirichlet eigenvalue of the chosen domain: dim * pi^2."""
        return self.dim * math.pi ** 2

    @property
    def fprime0(self) -> float:
        return self.f1

    def validate(self) -> None:
        if not (isinstance(self.dim, int) and self.dim in (1, 2)):
            raise ConfigError("dim must be 1 or 2")
        if not (1.0 < self.p < 2.0):
            raise ConfigError("p must lie in the open interval (1, 2)")
        if not (isinstance(self.n_modes, int) and self.n_modes >= 1):
            raise ConfigError("n_modes must be a positive integer")
        if not (isinstance(self.n_colloc, int) and self.n_colloc >= 4 * self.n_modes):
            raise ConfigError(
                "n_colloc >= 4*n_modes violated: the collocation rule needs "
                "bandwidth margin for alias-free projection of quintic products"
            )
        lam1 = self.lambda1
        if not self.f1 > -(1.0 - self.p / 4.0) * lam1:
            raise ConfigError(
                f"f'(0) > -(1-p/4)*lambda_1 violated: f1={self.f1} <= "
                f"{-(1.0 - self.p / 4.0) * lam1:.6g}"
            )
        dissipative = (
            self.c5 > 0.0
            or (self.c5 == 0.0 and self.c3 > 0.0)
            or (self.c5 == 0.0 and self.c3 == 0.0 and self.f1 > -lam1)
        )
        if not dissipative:
            raise ConfigError(
                "dissipativity violated: need c5 > 0, or c5 = 0 and c3 > 0, "
                "or c3 = c5 = 0 and f1 > -lambda_1"
            )
        if self.strict_growth and self.c5 != 0.0:
            raise ConfigError(
                "strict_growth requires c5 = 0: the quintic term breaks the "
                "linear growth bound on f''"
            )
        if not (self.tol_abs > 0.0 and self.tol_rel > 0.0):
            raise ConfigError("tol_abs and tol_rel must be positive")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2 ** 64):
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def content_hash(self) -> str:
        """SHA-256 of the canonical field listing; used for provenance."""
        parts = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float):
                parts.append(f"{f.name}={v!r}")
            else:
                parts.append(f"{f.name}={v}")
        return hashlib.sha256(";".join(parts).encode()).hexdigest()


@dataclass(frozen=True)
class SpectralBasis:
    """Truncated Dirichlet eigenbasis plus its collocation rule.

    ``synthesis`` maps modal coefficients to grid values, ``analysis`` maps
    grid values back to the first K coefficients (exact for band-limited
    functions given the 4N-point rule).  ``grad_synthesis[d]`` evaluates the
    d-th partial derivative on the grid; it is only needed by audits.
    """

    dim: int
    n_modes: int
    n_colloc: int
    eigenvalues: np.ndarray        # (K,), ascending
    mode_numbers: np.ndarray       # (K, dim) integer wavenumbers
    nodes: np.ndarray              # (G, dim) collocation nodes
    weights: np.ndarray            # (G,) quadrature weights
    synthesis: np.ndarray          # (G, K)
    analysis: np.ndarray           # (K, G)
    grad_synthesis: np.ndarray     # (dim, G, K)

    @property
    def size(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])


def build_basis(config: ProblemConfig) -> SpectralBasis:
    """Assemble the eigenbasis and collocation matrices for ``config``."""
    N, M, dim = config.n_modes, config.n_colloc, config.dim
    x = np.arange(1, M + 1) / (M + 1)          # interior nodes
    k = np.arange(1, N + 1)
    s1 = math.sqrt(2.0) * np.sin(np.pi * np.outer(x, k))        # (M, N)
    c1 = math.sqrt(2.0) * np.pi * k * np.cos(np.pi * np.outer(x, k))

    if dim == 1:
        lam = (np.pi * k) ** 2
        order = np.argsort(lam, kind="stable")
        modes = k[order].reshape(-1, 1)
        S = s1[:, order]
        G = np.stack([c1[:, order]])
        nodes = x.reshape(-1, 1)
        w = np.full(M, 1.0 / (M + 1))
    else:
        jj, kk = np.meshgrid(k, k, indexing="ij")
        jj, kk = jj.ravel(), kk.ravel()
        lam_all = (jj ** 2 + kk ** 2) * math.pi ** 2
        order = np.lexsort((kk, jj, lam_all))   # nondecreasing, deterministic ties
        jj, kk, lam = jj[order], kk[order], lam_all[order]
        modes = np.stack([jj, kk], axis=1)
        # grid flattened with x fastest-varying second: index g = a*M + b
        xa = np.repeat(x, M)
        yb = np.tile(x, M)
        nodes = np.stack([xa, yb], axis=1)
        sin_j = math.sqrt(2.0) * np.sin(np.pi * np.outer(xa, jj))
        sin_k = math.sqrt(2.0) * np.sin(np.pi * np.outer(yb, kk))
        S = sin_j * sin_k
        dx = (math.sqrt(2.0) * np.pi * jj * np.cos(np.pi * np.outer(xa, jj))) * sin_k
        dy = sin_j * (math.sqrt(2.0) * np.pi * kk * np.cos(np.pi * np.outer(yb, kk)))
        G = np.stack([dx, dy])
        w = np.full(M * M, 1.0 / (M + 1) ** 2)

    lam = np.ascontiguousarray(lam, dtype=np.float64)
    S = np.ascontiguousarray(S, dtype=np.float64)
    P = np.ascontiguousarray((S * w[:, None]).T)
    return SpectralBasis(
        dim=dim,
        n_modes=N,
        n_colloc=M,
        eigenvalues=lam,
        mode_numbers=modes,
        nodes=nodes,
        weights=w,
        synthesis=S,
        analysis=P,
        grad_synthesis=np.ascontiguousarray(G, dtype=np.float64),
    )


@dataclass
class ModalState:
    """Coefficients of (u, u_t) in the orthonormal eigenbasis."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.a.shape != self.b.shape or self.a.ndim != 1:
            raise ValueError("a and b must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise ValueError("modal coefficients must be finite")

    def copy(self) -> "ModalState":
        return ModalState(self.a.copy(), self.b.copy())


def zero_state(basis: SpectralBasis) -> ModalState:
    return ModalState(np.zeros(basis.size), np.zeros(basis.size))


def _coeffs(field, attr: str) -> np.ndarray:
    return getattr(field, attr) if isinstance(field, ModalState) else np.asarray(field)


def norm_hs(field, s: float, basis: SpectralBasis) -> float:
    """Modal Sobolev norm (sum lam_k^s a_k^2)^(1/2).

    ``field`` may be a ModalState (its u part is used) or a raw coefficient
    sequence, so velocity components can be measured directly.
    """
    if s < -1.0:
        raise ValueError("Sobolev index s must be >= -1")
    a = _coeffs(field, "a")
    return float(np.sqrt(np.sum(basis.eigenvalues ** s * a ** 2)))


def i_u(state: ModalState, basis: SpectralBasis) -> float:
    """Squared phase norm |grad u|^2 + |u_t|^2."""
    return float(np.sum(basis.eigenvalues * state.a ** 2) + np.sum(state.b ** 2))


def phase_norm(state: ModalState, basis: SpectralBasis) -> float:
    return math.sqrt(i_u(state, basis))


def i_up(state: ModalState, p: float, basis: SpectralBasis) -> float:
    """|grad u|^p + |u_t|^p, the nonlocal damping coefficient."""
    g2 = float(np.sum(basis.eigenvalues * state.a ** 2))
    v2 = float(np.sum(state.b ** 2))
    return g2 ** (p / 2.0) + v2 ** (p / 2.0)


def damping_coefficient(state: ModalState, p: float, basis: SpectralBasis) -> float:
    if not (1.0 < p < 2.0):
        raise ValueError("p must lie in (1, 2)")
    return i_up(state, p, basis)


def eval_f_modal(state: ModalState, config: ProblemConfig, basis: SpectralBasis) -> np.ndarray:
    """First K eigenbasis coefficients of f(u), exact for the polynomial f."""
    if basis.size != state.a.shape[0]:
        raise ValueError("state/basis size mismatch")
    if basis.n_modes != config.n_modes or basis.dim != config.dim:
        raise ValueError("config/basis mismatch")
    vals = basis.synthesis @ state.a
    fv = config.f1 * vals + config.c3 * vals ** 3 + config.c5 * vals ** 5
    return basis.analysis @ fv


def eval_fprime_grid(a: np.ndarray, config: ProblemConfig, basis: SpectralBasis) -> np.ndarray:
    """f'(u) on the collocation grid; used by the linearized systems."""
    vals = basis.synthesis @ a
    return config.f1 + 3.0 * config.c3 * vals ** 2 + 5.0 * config.c5 * vals ** 4


def potential_integral(state: ModalState, config: ProblemConfig, basis: SpectralBasis) -> float:
    """Integral of F(u) over the domain, F(s) = f1 s^2/2 + c3 s^4/4 + c5 s^6/6."""
    vals = basis.synthesis @ state.a
    F = (config.f1 / 2.0) * vals ** 2 + (config.c3 / 4.0) * vals ** 4 \
        + (config.c5 / 6.0) * vals ** 6
    return float(basis.weights @ F)
