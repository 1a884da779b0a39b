"""Exponential-Euler integration of the transformed equation and its diagnostics.

The equation is

    (d/dt - Delta + 1) v = B.grad v - A v^3 + Z2 v^2 + Z1 v + Z0 (+ forcing)

and one step reads ``v <- e^{dt(Delta-1)} [v + dt (N(v) + extra) + w dW]`` with
``w = exp_tree`` multiplying the white-noise increment ``dW``.  Steps whose
explicit cubic update would be too large are split into ``2^k`` substeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coefficients import CoefficientFrame, CoefficientSet
from .errors import BlowUpError, ConfigurationError, DomainError
from .spectral import Field, FieldTrajectory, TorusGrid, besov_norm_array, gradient


@dataclass(frozen=True)
class ExponentTable:
    epsilon: float
    eps_dprime: float
    m_A: float
    m_B: float
    m_Z2: float
    m_Z1: float
    m_Z0: float

    def as_dict(self) -> dict[str, float]:
        return {"A": self.m_A, "B": self.m_B, "Z2": self.m_Z2, "Z1": self.m_Z1, "Z0": self.m_Z0}


def _check_epsilon(epsilon: float) -> None:
    if not (0 < epsilon <= 0.25):
        raise DomainError(f"epsilon must lie in (0, 1/4], got {epsilon}")


def exponent_table(epsilon: float) -> ExponentTable:
    _check_epsilon(epsilon)
    e = epsilon
    epp = (1 + e) * (0.5 + e) - 0.5
    return ExponentTable(
        epsilon=e,
        eps_dprime=epp,
        m_A=1.0 / (e * (0.5 - e)),
        m_B=1.0 / (1.0 - e * (0.5 - 2 * e) - 3 * e),
        m_Z2=1.0 / (0.5 - epp),
        m_Z1=1.0 / (1.5 - epp),
        m_Z0=1.0 / (2.5 - epp),
    )


def coefficient_exponents(epsilon: float) -> dict[str, float]:
    """Regularity index |tau| paired with each coefficient in the coming-down bound."""
    return {"A": 1 - epsilon, "B": -epsilon, "Z2": -0.5 - epsilon,
            "Z1": -0.5 - epsilon, "Z0": -0.5 - epsilon}


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    horizon: float
    scheme: str = "exponential_euler"
    m_tol: float = 1e-8
    seed: int = 0
    max_halvings: int = 20

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon > 0):
            raise ConfigurationError("dt and horizon must be positive")
        if self.scheme != "exponential_euler":
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if not self.m_tol > 0:
            raise ConfigurationError("m_tol must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def check_grid(self, grid: TorusGrid) -> None:
        if self.dt > 0.25 * grid.spacing**2:
            raise ConfigurationError(
                f"dt={self.dt} violates the guard dt <= 0.25 h^2 = {0.25 * grid.spacing**2:.3g}")


# forcing callables receive (t, v) and return a rate (same shape as v) or None
Forcing = Callable[[float, np.ndarray], "np.ndarray | None"]


class JPSolver:
    """Batched stepper; arrays carry an optional leading replica axis.

    ``mass`` is the constant in ``d/dt - Delta + mass``: 1 for the transformed
    equation, 0 for the comparison problem behind the maximum principle.
    """

    level_target = 0.25

    def __init__(self, coeffs: CoefficientSet, cfg: SolverConfig, mass: float = 1.0):
        self.coeffs = coeffs
        self.cfg = cfg
        self.grid = coeffs.grid
        self.mass = mass
        cfg.check_grid(self.grid)
        self._has_B = bool(np.any(coeffs.B.frames != 0))
        self._heat = {}

    def heat(self, level: int) -> np.ndarray:
        if level not in self._heat:
            h = self.cfg.dt / 2.0**level
            self._heat[level] = np.exp(-h * (self.mass + self.grid.ksq))
        return self._heat[level]

    def nonlinearity(self, v: np.ndarray, c: CoefficientFrame) -> np.ndarray:
        out = c.Z0 + v * (c.Z1 + v * (c.Z2 - c.A * v))
        if self._has_B:
            out = out + np.sum(c.B * gradient(v, self.grid), axis=-self.grid.dim - 1)
        return out

    def _levels(self, v: np.ndarray, n: np.ndarray):
        axes = self.grid.axes
        ratio = np.abs(n).max(axis=axes) / (np.abs(v).max(axis=axes) + 1.0)
        x = self.cfg.dt * ratio / self.level_target
        with np.errstate(divide="ignore"):
            lev = np.ceil(np.log2(np.maximum(x, 1e-300)))
        return np.maximum(lev, 0).astype(int), ratio

    def _check_stable(self, ratio, t, rows, single):
        cap = self.cfg.max_halvings
        # past the cap, accept the finest level only while explicit Euler stays monotone
        if np.any(self.cfg.dt / 2.0**cap * ratio > 1.0):
            bad = int(rows[int(np.argmax(ratio))])
            raise BlowUpError(f"explicit step unstable after {cap} halvings at t={t:.6g}",
                              last_finite_time=t, replica=None if single else bad)

    def step(self, v: np.ndarray, t: float, rate: np.ndarray | None = None,
             kick: np.ndarray | None = None) -> np.ndarray:
        """Advance one base step from ``t``.

        ``rate`` is added to the drift (per unit time); ``kick`` is an
        increment added once per base step, spread in proportion to substep
        length.  Coefficients are frozen at ``t``.
        """
        c = self.coeffs.at(t)
        grid = self.grid
        single = v.ndim == grid.dim
        vb = v[None] if single else v
        n0 = self.nonlinearity(vb, c)
        levels, ratio = self._levels(vb, n0)
        rate_b = _rows(rate, slice(None), single, grid.dim)
        kick_b = _rows(kick, slice(None), single, grid.dim)
        easy = levels == 0
        if np.all(easy):
            out = self._substep(vb, n0, rate_b, kick_b, 0)
        else:
            out = np.empty_like(vb)
            rows = np.nonzero(easy)[0]
            if rows.size:
                out[rows] = self._substep(vb[rows], n0[rows], _rows(rate_b, rows, False, grid.dim),
                                          _rows(kick_b, rows, False, grid.dim), 0)
            for r in np.nonzero(~easy)[0]:
                sel = np.array([r])
                cr = c if self.coeffs.batch is None else CoefficientFrame(*(x[sel] for x in c))
                out[sel] = self._adaptive(vb[sel], cr, t, n0[sel], _rows(rate_b, sel, False, grid.dim),
                                          _rows(kick_b, sel, False, grid.dim), sel, single)
        if not np.all(np.isfinite(out)):
            bad = np.nonzero(~np.all(np.isfinite(out.reshape(out.shape[0], -1)), axis=1))[0]
            raise BlowUpError(f"non-finite state after step at t={t:.6g}", last_finite_time=t,
                              replica=None if single else int(bad[0]))
        return out[0] if single else out

    def _substep(self, v, n, rate, kick, level):
        h = self.cfg.dt / 2**level
        w = v + h * (n if rate is None else n + rate)
        if kick is not None:
            w = w + kick / 2**level
        return self.grid.ifft(self.grid.fft(w) * self.heat(level))

    def _adaptive(self, v, c, t, n0, rate, kick, rows, single):
        """Substeps of size ``dt / 2^k``, with ``k`` re-chosen after every substep
        and kept aligned to the dyadic subdivision of the base step."""
        cap = self.cfg.max_halvings
        units = 2**cap
        pos = 0
        n = n0
        while pos < units:
            if pos:
                n = self.nonlinearity(v, c)
            lev, ratio = self._levels(v, n)
            lev = int(lev.max())
            if lev > cap:
                self._check_stable(ratio, t, rows, single)
                lev = cap
            while pos % 2 ** (cap - lev):
                lev += 1
            v = self._substep(v, n, rate, kick, lev)
            pos += 2 ** (cap - lev)
        return v


def _rows(x, rows, single, dim):
    if x is None:
        return None
    x = np.asarray(x)
    if single or x.ndim <= dim:
        # shared across the batch
        return x[None] if x.ndim == dim else x
    return x[rows]


def _as_rate(extra, t: float, v: np.ndarray):
    if extra is None:
        return None
    if isinstance(extra, FieldTrajectory):
        return extra.at(t)
    if isinstance(extra, Field):
        return extra.values
    return extra(t, v)


def solve_jp(phi_prime, coeffs: CoefficientSet, cfg: SolverConfig, extra_drift=None,
             noise=None, save_every: int = 1, mass: float = 1.0) -> FieldTrajectory:
    """Integrate from ``t = 0`` to ``cfg.horizon``.

    ``phi_prime`` is a Field or an array (optionally with a leading replica
    axis).  ``extra_drift`` is a FieldTrajectory, a Field, or a callable
    ``(t, v) -> rate``; ``noise`` is any object with ``next_array()`` returning
    white-noise increments, which enter as ``exp_tree * dW``.
    """
    v = phi_prime.values if isinstance(phi_prime, Field) else np.asarray(phi_prime, dtype=float)
    solver = JPSolver(coeffs, cfg, mass=mass)
    if not np.all(np.isfinite(v)):
        raise DomainError("initial condition must be finite")
    frames = [v.copy()]
    t = 0.0
    for n in range(cfg.n_steps):
        t = n * cfg.dt
        kick = None
        if noise is not None:
            kick = coeffs.exp_tree.at(t) * noise.next_array()
        v = solver.step(v, t, _as_rate(extra_drift, t, v), kick)
        if (n + 1) % save_every == 0:
            frames.append(v.copy())
    return FieldTrajectory(solver.grid, cfg.dt * save_every, 0.0, np.stack(frames),
                           {"scheme": cfg.scheme, "dt": cfg.dt})


def max_principle_bound(g_minus: float, h_sup: float, t: float) -> float:
    """``max((g t)^{-1/2}, (h/g)^{1/3})`` for the cubic-damped comparison problem."""
    if not g_minus > 0:
        raise DomainError(f"g_minus must be positive, got {g_minus}")
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    if h_sup < 0:
        raise DomainError("h_sup must be nonnegative")
    return max((g_minus * t) ** -0.5, (h_sup / g_minus) ** (1.0 / 3.0))


def supersolution_bound(g_minus: float, h_sup: float, t: float) -> float:
    """Sum-form bound ``(2 g t)^{-1/2} + (h/g)^{1/3}`` from an explicit supersolution.

    The spatially constant function ``rho`` solving ``rho' = -g rho^3 + h``
    from infinity stays below this sum, so it holds without slack.
    """
    if not g_minus > 0 or not t > 0:
        raise DomainError("g_minus and t must be positive")
    return (2.0 * g_minus * t) ** -0.5 + (h_sup / g_minus) ** (1.0 / 3.0)


def sup_on_domain(traj: FieldTrajectory, s: float) -> np.ndarray:
    """``||v||_{D_s}``: sup over frames at times >= s^2 (per replica if batched)."""
    i = traj.first_index_at_or_after(s * s)
    frames = traj.frames[i:]
    return np.abs(frames).max(axis=(0,) + tuple(range(frames.ndim - traj.grid.dim, frames.ndim)))


def coefficient_norm_terms(coeffs: CoefficientSet, table: ExponentTable) -> dict[str, float]:
    """``(c_A [tau]_{|tau|})^{m_tau}`` per coefficient; norms are grid Besov
    ``B^{|tau|}_{inf,inf}`` maxima over the stored knots."""
    idx = coefficient_exponents(table.epsilon)
    m = table.as_dict()
    out = {}
    for name, alpha in idx.items():
        frames = getattr(coeffs, name).frames
        norm = float(np.max(besov_norm_array(frames, coeffs.grid, alpha)))
        base = coeffs.c_A * norm
        out[name] = base ** m[name] if base > 0 else 0.0
    return out


@dataclass
class ComingDownReport:
    rows: list = field(default_factory=list)
    fitted_C: float = 0.0
    C_cap: float = 100.0
    max_ratio: float = 0.0

    @property
    def passed(self) -> bool:
        return self.fitted_C <= self.C_cap


def coming_down_rhs(min_A: float, s: float, terms: dict[str, float]) -> float:
    """Bound with ``C = 1``: ``max{(1 + minA^{-1/2})/s, max_tau terms}``."""
    first = (1.0 + min_A ** -0.5) / s
    return max([first] + list(terms.values()))


def coming_down_check(runs: dict, coeffs: CoefficientSet, table: ExponentTable,
                      s_grid=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7), C_cap: float = 100.0
                      ) -> ComingDownReport:
    """``runs`` maps run id to a FieldTrajectory; one constant is fitted over all."""
    min_A = coeffs.A_minus
    if min_A <= 0:
        raise DomainError("coming-down bound needs min A > 0")
    terms = coefficient_norm_terms(coeffs, table)
    rep = ComingDownReport(C_cap=C_cap)
    raw = []
    for s in s_grid:
        base = coming_down_rhs(min_A, s, terms)
        for run_id, traj in runs.items():
            lhs = float(np.max(sup_on_domain(traj, s)))
            raw.append((s, run_id, lhs, base))
    rep.fitted_C = max(lhs / base for _, _, lhs, base in raw) if raw else 0.0
    C = rep.fitted_C
    for s, run_id, lhs, base in raw:
        rhs = C * base
        rep.rows.append({"s": s, "run_id": run_id, "lhs": lhs, "rhs": rhs,
                         "ratio": lhs / rhs if rhs > 0 else 0.0, "fitted_C": C})
    rep.max_ratio = max((r["ratio"] for r in rep.rows), default=0.0)
    return rep


def merge_gap(trajs, t: float) -> float:
    """Largest pairwise relative sup-distance between trajectories at time ``t``."""
    frames = [np.asarray(tr.at(t)) for tr in trajs]
    worst = 0.0
    for i in range(len(frames)):
        for j in range(i + 1, len(frames)):
            scale = max(np.abs(frames[i]).max(), np.abs(frames[j]).max(), 1e-300)
            worst = max(worst, float(np.abs(frames[i] - frames[j]).max() / scale))
    return worst


def shrink_schedule(norm_fn: Callable[[float], float], s_start: float = 0.0,
                    s_base: float = 0.0, target: float = 0.5, norm_floor: float | None = None,
                    max_steps: int = 100000) -> list[float]:
    """Iterates ``s_{n+1} = s_n + 4 / norm_fn(s_n)`` until ``s_base + s_n`` reaches
    ``target`` (last iterate clamped) or the norm drops below ``norm_floor``."""
    sched = [float(s_start)]
    s = float(s_start)
    for _ in range(max_steps):
        if s_base + s >= target:
            break
        nv = float(norm_fn(s))
        if not nv > 0:
            raise DomainError(f"norm must be positive, got {nv} at s={s}")
        if norm_floor is not None and nv < norm_floor:
            break
        s = s + 4.0 / nv
        if s_base + s >= target:
            s = target - s_base
        sched.append(s)
    return sched


def strong_norm_lambda0(C_empty: float, Z2_norm: float, v_norm: float, epsilon: float) -> float:
    _check_epsilon(epsilon)
    if not (C_empty > 0 and Z2_norm > 0 and v_norm > 0):
        raise DomainError("C_empty, Z2_norm and v_norm must be positive")
    return min(C_empty, (Z2_norm * v_norm) ** (-2.0 / (3.0 - 4.0 * epsilon)))
