"""Parabolic Hölder seminorms, local two-point norms, mollification and
commutator gaps on lattice trajectories.

Spacetime points are handled in index form: ``(frame index, flat spatial
index)``.  Suprema over pairs ``(z, z')`` are organised by the offset
``(lag, shift)`` between them; each offset has a single parabolic distance,
so one vectorised pass covers every pair sharing it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError
from .spectral import Field, FieldTrajectory, TorusGrid, besov_norm_array, gradient

DEFAULT_BUDGET = 1_000_000


@dataclass(frozen=True)
class ParabolicDomain:
    """``D_s = (s^2, T) x M``."""

    s: float
    T: float

    def __post_init__(self):
        if self.s < 0 or not self.s * self.s < self.T:
            raise DomainError(f"need 0 <= s and s^2 < T, got s={self.s}, T={self.T}")

    @property
    def t_min(self) -> float:
        return self.s * self.s


@dataclass(frozen=True)
class SeminormReport:
    alpha: float
    domain: ParabolicDomain
    value: float
    pair_budget: int
    exact: bool

    CSV_HEADER = ("alpha", "s", "T", "value", "pairs", "exact")

    def to_row(self) -> tuple:
        return (self.alpha, self.domain.s, self.domain.T, self.value, self.pair_budget,
                int(self.exact))


def torus_distance(x1, x2, length: float = 2 * math.pi) -> float:
    d = np.abs(np.atleast_1d(np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float))) % length
    d = np.minimum(d, length - d)
    return float(np.sqrt(np.sum(d * d)))


def parabolic_distance(z1, z2, length: float = 2 * math.pi) -> float:
    """``max(sqrt|t1-t2|, |x1-x2|_torus)`` for points ``z = (t, x)``."""
    (t1, x1), (t2, x2) = z1, z2
    return max(math.sqrt(abs(t1 - t2)), torus_distance(x1, x2, length))


def _frame_range(traj: FieldTrajectory, dom: ParabolicDomain) -> tuple[int, int]:
    tol = 1e-9 * max(1.0, abs(traj.t_end))
    # a single frame stands for a time-independent field
    beyond = dom.T > traj.t_end + tol and len(traj) > 1
    if dom.t_min < traj.t0 - tol or dom.t_min > traj.t_end + tol or beyond:
        raise DomainError(
            f"domain ({dom.t_min}, {dom.T}) not within trajectory span [{traj.t0}, {traj.t_end}]")
    lo = traj.first_index_at_or_after(dom.t_min)
    hi = int(math.floor((dom.T - traj.t0) / traj.dt + 1e-9))
    hi = min(hi, len(traj) - 1)
    if hi < lo:
        raise DomainError("domain contains no frame")
    return lo, hi


class _PairLattice:
    """All offsets ``(lag, shift)`` between points of frames ``lo..hi``."""

    def __init__(self, grid: TorusGrid, dt: float, lo: int, hi: int, symmetric: bool):
        self.grid = grid
        self.lo, self.hi = lo, hi
        K = hi - lo + 1
        n, d = grid.n, grid.dim
        shifts = np.stack(np.unravel_index(np.arange(grid.size), grid.shape))  # (d, size)
        signed = np.where(shifts > n // 2, shifts - n, shifts)
        self.shift_vectors = shifts
        self.displacement = signed * grid.spacing  # minimal signed displacement
        sdist = np.sqrt(np.sum(self.displacement**2, axis=0))
        lags = np.arange(-(K - 1), K)
        if symmetric:
            # (lag, s) and (-lag, -s) give the same pairs up to order
            neg = (-shifts) % n
            flat_neg = np.ravel_multi_index(tuple(neg), grid.shape)
            half = np.arange(grid.size) <= flat_neg
            keep_lag0 = half
            lags = np.arange(0, K)
        tdist = np.sqrt(np.abs(lags) * dt)
        dist = np.maximum(tdist[:, None], sdist[None, :])
        valid = dist > 0
        if symmetric:
            valid[0] &= keep_lag0
        li, si = np.nonzero(valid)
        self.lag = lags[li]
        self.shift = si
        self.dist = dist[li, si]
        self.count = (K - np.abs(self.lag)) * grid.size
        self.spatial_coords = shifts

    def select(self, rho: float | None, budget: int, seed: int):
        """Indices of offsets to evaluate and whether that covers every pair."""
        idx = np.arange(self.lag.size)
        if rho is not None:
            idx = idx[self.dist <= rho * (1 + 1e-12)]
        total = int(self.count[idx].sum())
        if total <= budget:
            return idx, total, True
        # near-diagonal offsets first, then a seeded random sample of the rest
        order = np.lexsort((self.shift[idx], np.abs(self.lag[idx]), self.dist[idx]))
        idx = idx[order]
        cum = np.cumsum(self.count[idx])
        n_near = int(np.searchsorted(cum, budget // 2, side="right"))
        chosen = list(idx[:n_near])
        used = int(cum[n_near - 1]) if n_near else 0
        rest = idx[n_near:]
        rng = np.random.default_rng(seed)
        for j in rng.permutation(rest.size):
            c = int(self.count[rest[j]])
            if used + c > budget:
                if used >= budget // 2 + budget // 4 or c > budget:
                    continue
            chosen.append(rest[j])
            used += c
            if used >= budget:
                break
        if not chosen:
            chosen = [idx[0]]
            used = int(self.count[idx[0]])
        return np.asarray(sorted(chosen)), used, False

    def points(self, k: int):
        """Base points ``z`` and partners ``z'`` for offset number ``k``."""
        lag = int(self.lag[k])
        K = self.hi - self.lo + 1
        if lag >= 0:
            f0 = np.arange(self.lo, self.lo + K - lag)
        else:
            f0 = np.arange(self.lo - lag, self.lo + K)
        base = np.arange(self.grid.size)
        s = self.shift_vectors[:, self.shift[k]]
        partner = np.ravel_multi_index(
            tuple((self.spatial_coords + s[:, None]) % self.grid.n), self.grid.shape)
        z = (f0[:, None], base[None, :])
        zp = (f0[:, None] + lag, partner[None, :])
        return z, zp


def _pair_sup(W, exponent, lattice: _PairLattice, rho, budget, seed):
    idx, used, exact = lattice.select(rho, budget, seed)
    best = 0.0
    for k in idx:
        z, zp = lattice.points(int(k))
        vals = np.abs(W(zp, z, int(k)))
        m = float(vals.max()) if np.size(vals) else 0.0
        best = max(best, m / lattice.dist[k] ** exponent)
    return float(best), used, exact


def _flat_frames(traj: FieldTrajectory) -> np.ndarray:
    if traj.frames.ndim != traj.grid.dim + 1:
        raise DomainError("seminorms act on scalar trajectories")
    return traj.frames.reshape(len(traj), -1)


def holder_seminorm(w: FieldTrajectory, alpha: float, dom: ParabolicDomain,
                    budget: int = DEFAULT_BUDGET, seed: int = 0) -> SeminormReport:
    """Sup of ``|h(z') - h(z)| / |z' - z|^alpha`` over the grid points of ``dom``.

    For ``alpha`` in (1, 2) the increment is corrected by the spectral
    gradient, ``h(z') - h(z) - grad h(z) . (x' - x)``.
    """
    if not (0 < alpha < 2) or alpha == 1:
        raise DomainError(f"alpha must lie in (0, 2) without 1, got {alpha}")
    lo, hi = _frame_range(w, dom)
    F = _flat_frames(w)
    corrected = alpha > 1
    lattice = _PairLattice(w.grid, w.dt, lo, hi, symmetric=not corrected)
    if corrected:
        G = gradient(w.frames, w.grid).reshape(len(w), w.grid.dim, -1)

        def W(zp, z, k):
            disp = lattice.displacement[:, lattice.shift[k]]
            lin = np.tensordot(disp, G[z[0][:, 0]][:, :, z[1][0]], axes=(0, 1))
            return F[zp] - F[z] - lin
    else:
        def W(zp, z, k):
            return F[zp] - F[z]

    value, used, exact = _pair_sup(W, alpha, lattice, None, budget, seed)
    return SeminormReport(alpha, dom, value, used, exact)


def increment_function(w: FieldTrajectory) -> Callable:
    """Two-point function ``W(z', z) = h(z') - h(z)`` in index form."""
    F = _flat_frames(w)
    return lambda zp, z: F[zp] - F[z]


def local_norm(W: Callable, gamma: float, rho: float, dom: ParabolicDomain,
               lattice_of: FieldTrajectory, budget: int = DEFAULT_BUDGET,
               seed: int = 0) -> float:
    """Sup of ``|W(z', z)| / |z' - z|^gamma`` over pairs in ``dom`` within
    parabolic distance ``rho``.

    ``W(zp, z)`` receives index pairs ``(frame, flat spatial index)`` as
    broadcastable integer arrays and returns the values for all of them.
    ``lattice_of`` supplies the grid and time step of the points.
    """
    if not (0 < gamma < 1):
        raise DomainError(f"gamma must lie in (0, 1), got {gamma}")
    grid = lattice_of.grid
    if not rho > grid.spacing:
        raise DomainError(f"rho={rho} must exceed the grid spacing {grid.spacing:.4g}")
    lo, hi = _frame_range(lattice_of, dom)
    lattice = _PairLattice(grid, lattice_of.dt, lo, hi, symmetric=False)

    def wrapped(zp, z, k):
        return np.broadcast_to(W(zp, z), np.broadcast_shapes(zp[0].shape, zp[1].shape))

    value, _, _ = _pair_sup(wrapped, gamma, lattice, rho, budget, seed)
    return value


def _bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def mollifier_kernels(grid: TorusGrid, dt: float, delta: float):
    """Unit-mass spatial kernel (spectral form) and temporal weights."""
    coords = np.stack(np.unravel_index(np.arange(grid.size), grid.shape))
    signed = np.where(coords > grid.n // 2, coords - grid.n, coords) * grid.spacing
    r = np.sqrt(np.sum(signed**2, axis=0)).reshape(grid.shape)
    k_space = _bump(r / delta)
    k_space /= k_space.sum()
    half = int(math.floor(delta * delta / dt))
    offsets = np.arange(-half, half + 1)
    k_time = _bump(offsets * dt / (delta * delta)) if half > 0 else np.ones(1)
    k_time /= k_time.sum()
    return grid.fft(k_space), offsets, k_time


def mollify(w: FieldTrajectory, delta: float) -> FieldTrajectory:
    """Parabolic mollification at spatial scale ``delta`` and temporal scale ``delta^2``.

    Near the ends of the time span the temporal weights are renormalised over
    the available frames, so constants are preserved exactly.  When ``delta``
    is below two grid spacings the input is returned with ``meta["noop"]``.
    """
    if not (0 < delta <= 1):
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    grid = w.grid
    if delta < 2 * grid.spacing:
        return FieldTrajectory(grid, w.dt, w.t0, w.frames, {**w.meta, "noop": True, "delta": delta})
    spec_kernel, offsets, weights = mollifier_kernels(grid, w.dt, delta)
    space = grid.ifft(grid.fft(w.frames) * spec_kernel)
    K = len(w)
    out = np.zeros_like(space)
    mass = np.zeros(K)
    for off, wt in zip(offsets, weights):
        lo, hi = max(0, -off), min(K, K - off)
        if hi <= lo:
            continue
        out[lo:hi] += wt * space[lo + off:hi + off]
        mass[lo:hi] += wt
    out /= mass.reshape((K,) + (1,) * (out.ndim - 1))
    return FieldTrajectory(grid, w.dt, w.t0, out, {**w.meta, "noop": False, "delta": delta})


def mollifier_error(w: FieldTrajectory, delta: float) -> float:
    return float(np.abs(mollify(w, delta).frames - w.frames).max())


def fit_loglog(x, y) -> tuple[float, float]:
    """Least-squares slope and intercept of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


@dataclass(frozen=True)
class CommutatorReport:
    delta: float
    sup_gap: float
    f_alpha: float
    g_beta: float
    f_sup: float
    bound_alpha_beta: float
    bound_beta: float


def commutator_gap(f: FieldTrajectory, g: FieldTrajectory, delta: float,
                   alpha: float = -0.2, beta: float = 0.6,
                   budget: int = DEFAULT_BUDGET) -> tuple[FieldTrajectory, CommutatorReport]:
    """``(fg)_delta - f_delta g`` and its comparison with the two bounds.

    ``[f]_alpha`` (``alpha < 0``) is measured as a grid Besov
    ``B^alpha_{inf,inf}`` norm, ``[g]_beta`` as the parabolic Hölder seminorm
    on the whole span.
    """
    if f.grid != g.grid or len(f) != len(g) or f.dt != g.dt:
        raise DomainError("f and g must share grid and time lattice")
    prod = FieldTrajectory(f.grid, f.dt, f.t0, f.frames * g.frames)
    gap = mollify(prod, delta).frames - mollify(f, delta).frames * g.frames
    gap_traj = FieldTrajectory(f.grid, f.dt, f.t0, gap, {"delta": delta})
    dom = ParabolicDomain(math.sqrt(max(f.t0, 0.0)), f.t_end if len(f) > 1 else f.t0 + 1.0)
    g_beta = holder_seminorm(g, beta, dom, budget).value
    f_alpha = float(np.max(besov_norm_array(f.frames, f.grid, alpha)))
    f_sup = float(np.abs(f.frames).max())
    rep = CommutatorReport(delta, float(np.abs(gap).max()), f_alpha, g_beta, f_sup,
                           delta ** (alpha + beta) * f_alpha * g_beta,
                           delta**beta * f_sup * g_beta)
    return gap_traj, rep


def static_trajectory(f: Field) -> FieldTrajectory:
    """Single-frame trajectory for purely spatial estimates."""
    return FieldTrajectory(f.grid, 1.0, 0.0, f.values[None])
