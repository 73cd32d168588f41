"""Steady-state heat diffusion over a feature graph.

Each feature is in turn treated as the unique heat source of a graph whose
edge conductivities are pairwise cosine similarities; every node also leaks
heat to an environment node held at temperature zero. The system
temperature reached with source l (the sum of all steady-state node
temperatures, source included) measures how bursty feature l is: near-
duplicates heat each other up, distinctive features stay cold.

Two routes compute the same temperatures: a per-source solve used as the
test oracle, and a fast path that factorizes one n-by-n system and reads
every source's answer off the columns of its inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SingularSystem, ZeroNormFeature
from .tensor_io import FeatureSet

# roundoff slack when checking mathematically guaranteed bounds
_BOUND_SLACK = 1e-6


@dataclass(frozen=True)
class DiffusionConfig:
    """Knobs of the heat system.

    lam: per-node dissipation to the environment node; any positive value
        makes the system matrix strictly diagonally dominant and therefore
        invertible.
    clamp_negative: clamp similarities below 0 to 0. Vacuous for raw
        (non-negative) features; it matters for re-ranking, where vectors
        are centered before similarities are taken.
    solve_tolerance: relative residual bound above which a linear solve is
        declared singular.
    """

    lam: float = 1.0
    clamp_negative: bool = True
    solve_tolerance: float = 1e-8

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not self.solve_tolerance > 0:
            raise ValueError(
                f"solve_tolerance must be positive, got {self.solve_tolerance}"
            )


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric pairwise cosine similarities with zero diagonal."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"similarity matrix must be square, got {v.shape}")
        if np.any(np.abs(v - v.T) > 1e-12):
            raise ValueError("similarity matrix must be symmetric within 1e-12")
        if np.any(v.diagonal() != 0):
            raise ValueError("similarity matrix diagonal must be zero")
        if v.min(initial=0.0) < 0 or v.max(initial=0.0) > 1:
            raise ValueError("similarities must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def similarity_matrix(fs: FeatureSet) -> SimilarityMatrix:
    """Pairwise cosine similarities of a feature set, zero on the diagonal."""
    f = np.asarray(fs.features, dtype=np.float64)
    norms = np.linalg.norm(f, axis=1)
    if np.any(norms == 0):
        raise ZeroNormFeature(
            f"feature {int(np.argmax(norms == 0))} has zero norm"
        )
    fn = f / norms[:, None]
    p = fn @ fn.T
    p = (p + p.T) / 2.0  # kill matmul roundoff asymmetry
    np.clip(p, 0.0, 1.0, out=p)
    np.fill_diagonal(p, 0.0)
    return SimilarityMatrix(p)


def dissipation_diagonal(p: np.ndarray, lam: float) -> np.ndarray:
    """a_m = sum of row m of P (diagonal is zero) plus the dissipation lam."""
    return p.sum(axis=1) + lam


def system_matrix(p: np.ndarray, lam: float) -> np.ndarray:
    """M = I - Lambda^-1 P, the steady-state system over all n nodes."""
    a = dissipation_diagonal(p, lam)
    m = -(p / a[:, None])
    np.fill_diagonal(m, 1.0)
    return m


def _check_bounds(psi: np.ndarray, n: int) -> np.ndarray:
    # psi in [1, n] holds mathematically; anything beyond roundoff is a bug
    if psi.min(initial=1.0) < 1.0 - _BOUND_SLACK or psi.max(initial=1.0) > n * (
        1.0 + _BOUND_SLACK
    ):
        raise SingularSystem(
            f"temperatures escaped [1, n]: range "
            f"[{psi.min():.6g}, {psi.max():.6g}] with n={n}"
        )
    return np.clip(psi, 1.0, float(n))


def temperatures_naive(P: SimilarityMatrix, cfg: DiffusionConfig) -> np.ndarray:
    """System temperature per source by solving one system per source.

    For source l, the other nodes' steady-state temperatures satisfy
    mu = (I - Lambda_l^-1 P2)^-1 (Lambda_l^-1 P1) and the system
    temperature is psi_l = 1 + sum(mu). O(n^4) overall; kept as the oracle
    the fast path is tested against.
    """
    p = P.values
    n = P.n
    a = dissipation_diagonal(p, cfg.lam)
    psi = np.empty(n)
    idx = np.arange(n)
    for l in range(n):
        others = idx != l
        a_l = a[others]
        p2 = p[np.ix_(others, others)]
        p1 = p[others, l]
        lhs = np.eye(n - 1) - p2 / a_l[:, None]
        rhs = p1 / a_l
        try:
            mu = np.linalg.solve(lhs, rhs) if n > 1 else rhs
        except np.linalg.LinAlgError as e:
            raise SingularSystem(f"source {l}: {e}") from e
        residual = np.linalg.norm(lhs @ mu - rhs)
        if residual > cfg.solve_tolerance * max(1.0, np.linalg.norm(rhs)):
            raise SingularSystem(
                f"source {l}: residual {residual:.3g} exceeds tolerance"
            )
        psi[l] = 1.0 + mu.sum()
    return _check_bounds(psi, n)


def temperatures_fast(P: SimilarityMatrix, cfg: DiffusionConfig) -> np.ndarray:
    """System temperature per source from a single factorization.

    Factorizes M = I - Lambda^-1 P once and solves for all columns of its
    inverse; column l then yields
    psi_l = sum_{m != l} Minv[m, l] / Minv[l, l] + 1.
    Agrees with temperatures_naive to 1e-8 relative.
    """
    p = P.values
    n = P.n
    m = system_matrix(p, cfg.lam)
    try:
        lu, piv = scipy.linalg.lu_factor(m)
        minv = scipy.linalg.lu_solve((lu, piv), np.eye(n))
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise SingularSystem(str(e)) from e
    if not np.all(np.isfinite(minv)):
        raise SingularSystem("inverse of the system matrix is not finite")
    # cheap probe: one O(n^2) residual check instead of a full n^3 M @ Minv
    probe = np.ones(n)
    residual = np.linalg.norm(m @ (minv @ probe) - probe)
    if residual > cfg.solve_tolerance * np.sqrt(n):
        raise SingularSystem(f"probe residual {residual:.3g} exceeds tolerance")
    diag = minv.diagonal()
    if np.any(diag <= 0):
        raise SingularSystem("system inverse has a non-positive diagonal entry")
    psi = (minv.sum(axis=0) - diag) / diag + 1.0
    return _check_bounds(psi, n)


def heat_weights(psi: np.ndarray) -> np.ndarray:
    """Weights w_l = 1/psi_l equalizing system temperatures across sources."""
    psi = np.asarray(psi, dtype=np.float64)
    if psi.min(initial=1.0) < 1.0:
        raise ValueError(f"temperatures must be >= 1, got min {psi.min()}")
    return 1.0 / psi
