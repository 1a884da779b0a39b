"""Bony paraproduct decomposition on torus grids and the refined paraproduct bound.

With blocks ``Delta_k`` from :mod:`phi4lab.spectral`,

    f < g  = sum_l (sum_{k <= l-2} Delta_k f) Delta_l g
    f > g  = sum_k Delta_k f (sum_{l <= k-2} Delta_l g)
    f o g  = sum_{|k-l| <= 1} Delta_k f Delta_l g

and the three pieces add up to the grid product ``f g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .spectral import Field, besov_norm, lp_blocks, lp_norm


@dataclass(frozen=True, eq=False)
class BonyTriple:
    para_lo: Field
    para_hi: Field
    resonant: Field

    def total(self) -> Field:
        return Field(self.para_lo.grid,
                     self.para_lo.values + self.para_hi.values + self.resonant.values)


def _low_sums(blocks: np.ndarray) -> np.ndarray:
    """``S[l] = sum_{k <= l-2} blocks[k]`` on the stacked block axis."""
    csum = np.cumsum(blocks, axis=0)
    out = np.zeros_like(blocks)
    # index i stands for level i-1, so levels <= (i-1)-2 are indices <= i-2
    out[2:] = csum[:-2]
    return out


def paraproduct_terms(f: np.ndarray, g: np.ndarray, grid) -> np.ndarray:
    """Individual terms ``S_{l-1} f * Delta_l g`` stacked by level ``l``."""
    fb, gb = lp_blocks(f, grid), lp_blocks(g, grid)
    return _low_sums(fb) * gb


def bony_arrays(f: np.ndarray, g: np.ndarray, grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    fb, gb = lp_blocks(f, grid), lp_blocks(g, grid)
    lo = np.sum(_low_sums(fb) * gb, axis=0)
    hi = np.sum(fb * _low_sums(gb), axis=0)
    res = np.sum(fb * gb, axis=0)
    res = res + np.sum(fb[1:] * gb[:-1], axis=0) + np.sum(fb[:-1] * gb[1:], axis=0)
    return lo, hi, res


def bony_decompose(f: Field, g: Field) -> BonyTriple:
    if f.grid != g.grid:
        raise DomainError("f and g must share one grid")
    lo, hi, res = bony_arrays(f.values, g.values, f.grid)
    return BonyTriple(Field(f.grid, lo), Field(f.grid, hi), Field(f.grid, res))


def _inv(p: float) -> float:
    return 0.0 if math.isinf(p) else 1.0 / p


@dataclass(frozen=True)
class ParaBound:
    lhs: float
    rhs: float
    ratio: float
    f_norm: float
    g_besov: float
    g_lp: float


def para_rhs(f_norm: float, g_besov: float, g_lp: float, N: int, gamma: float) -> float:
    """``||f|| (2^{-N gamma} ||g||_B + N ||g||_{L^p2})``."""
    return f_norm * (2.0 ** (-N * gamma) * g_besov + N * g_lp)


def refined_para_bound(f: Field, g: Field, N: int, gamma: float, a1: float, a2: float,
                       p1: float = math.inf, q1: float = math.inf, p2: float = math.inf,
                       q2: float = math.inf, p: float = math.inf, q: float = math.inf
                       ) -> ParaBound:
    """Both sides of ``||f < g||_{B^{a2-gamma}_{pq}} <= C ||f||_{B^{a1}_{p1q1}}
    (2^{-N gamma} ||g||_{B^{a2}_{p2q2}} + N ||g||_{L^p2})``; ``ratio`` is the
    constant this pair requires."""
    if abs(_inv(p1) + _inv(p2) - _inv(p)) > 1e-12 or abs(_inv(q1) + _inv(q2) - _inv(q)) > 1e-12:
        raise DomainError("exponents must satisfy 1/p1 + 1/p2 = 1/p and 1/q1 + 1/q2 = 1/q")
    if a1 < 0:
        raise DomainError("a1 must be nonnegative")
    if N < 0 or gamma <= 0:
        raise DomainError("need N >= 0 and gamma > 0")
    lo = bony_decompose(f, g).para_lo
    lhs = besov_norm(lo, a2 - gamma, p, q)
    fn = besov_norm(f, a1, p1, q1)
    gb = besov_norm(g, a2, p2, q2)
    gl = float(lp_norm(g.values, g.grid, p2))
    rhs = para_rhs(fn, gb, gl, N, gamma)
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return ParaBound(lhs, rhs, ratio, fn, gb, gl)


def optimize_window_N(ell: float, epsilon: float, exponent_hi: float, exponent_lo: float) -> int:
    """Smallest ``N`` with ``2^{-N eps} ell^hi <= ell^lo``."""
    if ell < 1:
        raise DomainError("ell must be >= 1")
    if not (0 < epsilon <= 0.25):
        raise DomainError("epsilon must lie in (0, 1/4]")
    if exponent_hi < exponent_lo or ell == 1:
        return 0
    x = (exponent_hi - exponent_lo) * math.log2(ell) / epsilon
    return max(0, int(math.ceil(x - 1e-12)))


def lemma_exponents(epsilon: float) -> tuple[float, float]:
    """Exponents balanced by the choice of N in the monotonicity estimate."""
    return (5 + 6 * epsilon) / (3 * (3 - 2 * epsilon)), 1.0 / 3.0


def combined_bound(ell: float, N: int, epsilon: float, exponent_hi: float,
                   exponent_lo: float) -> float:
    return 2.0 ** (-N * epsilon) * ell**exponent_hi + N * ell**exponent_lo


def best_N_rhs(f_norm: float, g_besov: float, g_lp: float, gamma: float, n_max: int = 64
               ) -> tuple[int, float]:
    """Integer minimiser of :func:`para_rhs` over ``0..n_max``."""
    vals = [para_rhs(f_norm, g_besov, g_lp, N, gamma) for N in range(n_max + 1)]
    i = int(np.argmin(vals))
    return i, vals[i]
