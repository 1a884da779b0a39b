"""Coupling by change of measure.

Two solutions share one noise realisation.  From ``t = 1`` the second one,
``v_l``, receives the drift ``l (v - v_l) / ||v - v_l|| * exp_tree``, which
closes the L^2 gap at rate at least ``l``.  Once they meet, ``v_l`` is glued
to ``v``.  The drift is a shift of the noise by ``l d_hat``, so the law of
``v_l`` becomes the law of an unforced solution under the density

    R = exp(-l sum_n <d_hat_n, dW_n> - l^2 (tau - 1) / 2).

Windows: attempt ``k`` (1-based) frees both solutions on ``[2k-2, 2k-1]``
and drives them on ``[2k-1, 2k]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable

import numpy as np

from .coefficients import CoefficientFrame, CoefficientSet, NoiseBank, NoiseStream
from .dynamics import JPSolver, SolverConfig
from .errors import BlowUpError, ConfigurationError, DomainError, StateError
from .spectral import Field, FieldTrajectory, TorusGrid, gradient, l2_inner, lp_norm

Z95 = NormalDist().inv_cdf(0.975)


def wilson_interval(successes: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def coupling_drift(v_frame: Field, v_ell_frame: Field, ell: float, exp_tree_frame: Field,
                   m_tol: float) -> Field:
    """``l (v - v_l) / ||v - v_l||_{L2} * exp_tree``, or zero once ``||v - v_l|| <= m_tol``."""
    grid = v_frame.grid
    d = v_frame.values - v_ell_frame.values
    norm = float(lp_norm(d, grid, 2))
    if norm <= m_tol:
        return Field(grid, np.zeros_like(d))
    return Field(grid, ell * d / norm * exp_tree_frame.values)


@dataclass
class GirsanovLedger:
    log_weight: float
    stochastic_integral: float
    energy: float
    replica_id: int = 0

    @classmethod
    def from_parts(cls, stochastic_integral: float, energy: float, replica_id: int = 0):
        return cls(-stochastic_integral - energy, stochastic_integral, energy, replica_id)


@dataclass
class CouplingRun:
    v: FieldTrajectory
    v_ell: FieldTrajectory
    ell: float
    tau: float
    l2_times: np.ndarray
    l2_trace: np.ndarray
    success: bool
    ledger: GirsanovLedger
    m_tol: float
    drift_steps: list = field(default_factory=list)
    directions: dict = field(default_factory=dict, repr=False)
    noise_record: dict | None = field(default=None, repr=False)

    @property
    def l2_at_1(self) -> float:
        i = int(np.searchsorted(self.l2_times, 1.0 - 1e-9))
        return float(self.l2_trace[i])


@dataclass
class BatchResult:
    """Per-replica outcome of a batched coupling run."""

    ell: float
    tau: np.ndarray  # (windows, R): coupling time inside each window, nan if none
    coupled_window: np.ndarray  # (R,): 1-based window of success, 0 if never
    l2_at_start: np.ndarray  # (windows, R): ||d|| at the start of each attempt
    stochastic_integral: np.ndarray
    energy: np.ndarray
    v_end: np.ndarray
    v_ell_end: np.ndarray
    m_tol: np.ndarray
    slopes: np.ndarray  # (R,): steepest one-step slope of ||d|| during the first attempt
    tau_bound: np.ndarray  # (R,): 1 + ||d(1)|| / ell

    @property
    def log_weight(self) -> np.ndarray:
        return -self.stochastic_integral - self.energy

    @property
    def success(self) -> np.ndarray:
        return self.coupled_window > 0

    def failed_after(self, n: int) -> np.ndarray:
        return (self.coupled_window == 0) | (self.coupled_window > n)


class CoupledIntegrator:
    """Steps ``v`` and ``v_l`` for a batch of replicas in one array."""

    def __init__(self, coeffs: CoefficientSet, cfg: SolverConfig):
        self.coeffs = coeffs
        self.cfg = cfg
        self.solver = JPSolver(coeffs, cfg)
        self.grid = coeffs.grid

    def run(self, phi1: np.ndarray, phi2: np.ndarray, ell, noise, windows: int = 1,
            record: bool = False, save_every: int = 1, m_tol_relative: bool = True,
            stop_at: float | None = None):
        """Integrate the pair over ``[0, 2 * windows]``.

        ``ell`` may be a number or a callable receiving the array of
        ``||d(1)||`` values and returning the drift strength.  ``record``
        keeps every saved frame together with directions and increments of
        the driven steps (single-replica use).
        """
        grid, cfg = self.grid, self.cfg
        if windows < 1:
            raise DomainError("windows must be >= 1")
        if self.coeffs.horizon < 2 * windows - 1e-9:
            raise ConfigurationError(f"coefficients cover [0, {self.coeffs.horizon}], "
                                     f"{windows} windows need [0, {2 * windows}]")
        v = np.array(phi1, dtype=float, ndmin=grid.dim + 1)
        w = np.array(phi2, dtype=float, ndmin=grid.dim + 1)
        R = v.shape[0]
        w = np.broadcast_to(w, v.shape).copy()
        dt = cfg.dt
        steps_per_unit = int(round(1.0 / dt))
        if abs(steps_per_unit * dt - 1.0) > 1e-9:
            raise ConfigurationError("dt must divide 1")
        n_total = 2 * windows * steps_per_unit
        if stop_at is not None:
            n_total = min(n_total, int(round(stop_at / dt)))

        tau = np.full((windows, R), np.nan)
        coupled_window = np.zeros(R, dtype=int)
        l2_start = np.full((windows, R), np.nan)
        stoch = np.zeros(R)
        energy = np.zeros(R)
        m_tol = np.zeros(R)
        slopes = np.full(R, -np.inf)
        tau_bound = np.full(R, np.nan)
        ell_value = ell if not callable(ell) else None

        frames_v, frames_w, l2_times, l2_vals = [], [], [], []
        directions, incs, drift_steps = {}, {}, []
        if record:
            frames_v.append(v.copy())
            frames_w.append(w.copy())

        prev_norm = None
        for n in range(n_total):
            t = n * dt
            k, phase = divmod(n, 2 * steps_per_unit)
            attempt = phase >= steps_per_unit
            d = v - w
            norms = lp_norm(d, grid, 2)
            if record:
                l2_times.append(t)
                l2_vals.append(float(norms[0]))
            if phase == steps_per_unit:
                # start of attempt k+1
                l2_start[k] = norms
                if k == 0:
                    if ell_value is None:
                        ell_value = float(ell(norms.copy()))
                    scale = lp_norm(v, grid, 2) if m_tol_relative else np.ones(R)
                    m_tol = cfg.m_tol * np.maximum(scale, 1e-300)
                    tau_bound = 1.0 + norms / ell_value if ell_value > 0 else np.full(R, np.inf)
                # rows already glued (or meeting at the very start) couple at once
                meet = (coupled_window == 0) & (norms <= m_tol)
                coupled_window[meet] = k + 1
                tau[k, meet] = t
                w[meet] = v[meet]
                prev_norm = norms.copy()
            active = attempt & (coupled_window == 0) if attempt else np.zeros(R, bool)
            c = self.coeffs.at(t)
            dW = noise.next_array()
            kick = c.exp_tree * dW
            rate = None
            if np.any(active):
                dhat = np.zeros_like(d)
                dhat[active] = d[active] / norms[active].reshape((-1,) + (1,) * grid.dim)
                rate = ell_value * dhat * c.exp_tree
                stoch[active] += ell_value * l2_inner(dhat[active], dW[active], grid)
                energy[active] += 0.5 * ell_value**2 * dt
                if record:
                    drift_steps.append(n)
                    directions[n] = dhat[0].copy()
                    incs[n] = np.array(dW[0], copy=True)
            both = np.concatenate([v, w])
            kicks = np.concatenate([np.broadcast_to(kick, v.shape)] * 2)
            rates = None
            if rate is not None:
                rates = np.concatenate([np.zeros_like(v), rate])
            try:
                both = self.solver.step(both, t, rates, kicks)
            except BlowUpError as err:
                rep = None if err.replica is None else err.replica % R
                raise BlowUpError(str(err), err.last_finite_time, replica=rep) from err
            v, w_new = both[:R], both[R:]
            t_next = t + dt
            if np.any(active):
                d_new = v - w_new
                new_norms = lp_norm(d_new, grid, 2)
                overshoot = l2_inner(d_new, d, grid) <= 0
                meet = active & ((new_norms <= m_tol) | overshoot)
                if k == 0:
                    ok = active & ~meet
                    slopes[ok] = np.maximum(slopes[ok], (new_norms[ok] - norms[ok]) / dt)
                coupled_window[meet] = k + 1
                tau[k, meet] = t_next
                w_new[meet] = v[meet]
            glued = coupled_window > 0
            w_new[glued] = v[glued]
            w = w_new
            if record and (n + 1) % save_every == 0:
                frames_v.append(v.copy())
                frames_w.append(w.copy())

        result = BatchResult(ell_value if ell_value is not None else float("nan"), tau,
                             coupled_window, l2_start, stoch, energy, v, w, m_tol, slopes,
                             tau_bound)
        if not record:
            return result
        d = v - w
        l2_times.append(n_total * dt)
        l2_vals.append(float(lp_norm(d, grid, 2)[0]))
        extras = {
            "frames_v": np.stack(frames_v), "frames_w": np.stack(frames_w),
            "l2_times": np.asarray(l2_times), "l2": np.asarray(l2_vals),
            "directions": directions, "increments": incs, "drift_steps": drift_steps,
        }
        return result, extras


def solve_coupled(phi1_prime: Field, phi2_prime: Field, ell: float, coeffs: CoefficientSet,
                  noise: NoiseStream, cfg: SolverConfig, save_every: int = 1,
                  record_noise: bool = True) -> CouplingRun:
    """Single coupled pair over ``[0, 2]`` with full frame and noise records."""
    if phi1_prime.grid != phi2_prime.grid or phi1_prime.grid != coeffs.grid:
        raise DomainError("initial conditions and coefficients must share one grid")

    class _Single:
        def next_array(self):
            return noise.next_array()[None]

    integ = CoupledIntegrator(coeffs, cfg)
    res, ex = integ.run(phi1_prime.values[None], phi2_prime.values[None], ell, _Single(),
                        windows=1, record=True, save_every=save_every)
    grid = coeffs.grid
    step = cfg.dt * save_every
    v = FieldTrajectory(grid, step, 0.0, ex["frames_v"][:, 0])
    v_ell = FieldTrajectory(grid, step, 0.0, ex["frames_w"][:, 0])
    success = bool(res.coupled_window[0] > 0)
    tau = float(res.tau[0, 0]) if success else 2.0
    ledger = GirsanovLedger.from_parts(float(res.stochastic_integral[0]), float(res.energy[0]))
    return CouplingRun(v, v_ell, ell, tau, ex["l2_times"], ex["l2"], success, ledger,
                       float(res.m_tol[0]), ex["drift_steps"], ex["directions"],
                       ex["increments"] if record_noise else None)


def girsanov_log_weight(run: CouplingRun, noise_record: dict | None = None,
                        dt: float | None = None) -> GirsanovLedger:
    """Rebuild the ledger from the stored directions and noise increments."""
    record = run.noise_record if noise_record is None else noise_record
    if record is None:
        raise StateError("noise increments of the driven steps are not available")
    missing = [n for n in run.drift_steps if n not in record or n not in run.directions]
    if missing:
        raise StateError(f"noise record lacks {len(missing)} driven steps")
    grid = run.v.grid
    if dt is None:
        dt = float(run.l2_times[1] - run.l2_times[0]) if len(run.l2_times) > 1 else 0.0
    stoch = sum(run.ell * float(l2_inner(run.directions[n], record[n], grid))
                for n in run.drift_steps)
    energy = 0.5 * run.ell**2 * dt * len(run.drift_steps)
    return GirsanovLedger.from_parts(stoch, energy)


def fixed_direction_weights(grid: TorusGrid, direction: np.ndarray, ell: float, dt: float,
                            n_replicas: int, root_seed: int, t_start: float = 1.0,
                            t_end: float = 2.0) -> np.ndarray:
    """Log-weights ``-l sum <e, dW_n> - l^2 (t_end - t_start)/2`` for a fixed unit
    direction ``e``, one independent noise stream per replica."""
    from .coefficients import replica_seed

    e = np.asarray(direction, dtype=float)
    e = e / lp_norm(e, grid, 2)
    n0, n1 = int(round(t_start / dt)), int(round(t_end / dt))
    out = np.empty(n_replicas)
    for r in range(n_replicas):
        s = NoiseStream(grid, dt, replica_seed(root_seed, r))
        s.skip(n0)
        inc = s.take(n1 - n0)
        stoch = ell * float(np.sum(l2_inner(inc, e, grid)))
        out[r] = -stoch - 0.5 * ell**2 * (n1 - n0) * dt
    return out


@dataclass
class CouplingEstimate:
    ell: float
    n_replicas: int
    windows: int
    successes: list  # successes by the end of window n, n = 1..windows
    frequency: list
    ci: list
    results: list = field(default_factory=list, repr=False)


def run_replicas(phi1: np.ndarray, phi2: np.ndarray, ell, coeffs: CoefficientSet,
                 cfg: SolverConfig, n_replicas: int, root_seed: int, windows: int = 1,
                 batch: int = 256, replica_offset: int = 0) -> list[BatchResult]:
    integ = CoupledIntegrator(coeffs, cfg)
    out = []
    for start in range(0, n_replicas, batch):
        reps = range(replica_offset + start, replica_offset + min(n_replicas, start + batch))
        bank = NoiseBank(coeffs.grid, cfg.dt, root_seed, reps)
        r = len(reps)
        p1 = np.broadcast_to(phi1, (r,) + coeffs.grid.shape)
        p2 = np.broadcast_to(phi2, (r,) + coeffs.grid.shape)
        out.append(integ.run(p1, p2, ell, bank, windows=windows))
    return out


def _concat(results: list[BatchResult], name: str, axis: int = -1) -> np.ndarray:
    return np.concatenate([getattr(r, name) for r in results], axis=axis)


def coupling_probability(phi1: Field, phi2: Field, ell: float, n_replicas: int, windows: int,
                         root_seed: int, coeffs: CoefficientSet, cfg: SolverConfig,
                         batch: int = 256) -> CouplingEstimate:
    if n_replicas < 100:
        raise DomainError("coupling_probability needs at least 100 replicas")
    results = run_replicas(phi1.values, phi2.values, ell, coeffs, cfg, n_replicas, root_seed,
                           windows, batch)
    cw = _concat(results, "coupled_window")
    succ = [int(np.sum((cw > 0) & (cw <= n))) for n in range(1, windows + 1)]
    return CouplingEstimate(ell, n_replicas, windows, succ, [s / n_replicas for s in succ],
                            [wilson_interval(s, n_replicas) for s in succ], results)


def frame_coefficients(coeffs: CoefficientSet, t: float) -> CoefficientFrame:
    return coeffs.at(t)


def monotonicity_terms(v: np.ndarray, vp: np.ndarray, c: CoefficientFrame, ell: float,
                       grid: TorusGrid, m_tol: float = 0.0) -> dict[str, float]:
    """Pairings ``<F(v) - F_l(v'), v - v'>`` split by coefficient.

    The drift acts on the ``v'`` side; ``Z0`` cancels; the distributional
    pairings are plain grid quadrature.
    """
    d = v - vp
    norm = float(lp_norm(d, grid, 2))
    out = {
        "A": float(l2_inner(-c.A * (v**3 - vp**3), d, grid)),
        "B": float(l2_inner(np.sum(c.B * gradient(d, grid), axis=0), d, grid)),
        "Z2": float(l2_inner(c.Z2 * (v**2 - vp**2), d, grid)),
        "Z1": float(l2_inner(c.Z1 * d, d, grid)),
    }
    out["drift"] = 0.0 if norm <= m_tol else -ell * float(l2_inner(c.exp_tree * d, d, grid)) / norm
    out["norm"] = norm
    return out


def monotonicity_gap(v_frame: Field, vprime_frame: Field, coeffs_at_t: CoefficientFrame,
                     ell: float, m_tol: float = 0.0) -> float:
    t = monotonicity_terms(v_frame.values, vprime_frame.values, coeffs_at_t, ell,
                           v_frame.grid, m_tol)
    return t["A"] + t["B"] + t["Z2"] + t["Z1"] + t["drift"]


@dataclass
class HarnackReport:
    p1: float
    lhs: float
    rhs: float
    psi_hat: float
    a_hat: float
    lhs_se: float = 0.0
    rhs_se: float = 0.0

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.lhs - self.rhs <= 3.0 * math.hypot(self.lhs_se, self.rhs_se)


def harnack_from_samples(f_ell: np.ndarray, f_plain: np.ndarray, log_w: np.ndarray,
                         failed: np.ndarray, p1: float, f_sup: float) -> HarnackReport:
    """Estimate both sides from per-replica samples.

    ``f_ell`` are values of f at the driven terminal states (weighted by R),
    ``f_plain`` values at terminal states of the unforced solution from the
    other initial condition.
    """
    if np.any(f_ell < 1) or np.any(f_plain < 1):
        raise DomainError("f must be >= 1 on every sample")
    n = f_ell.size
    R = np.exp(log_w)
    m_vals = R * f_ell
    m = float(m_vals.mean())
    m_se = float(m_vals.std(ddof=1) / math.sqrt(n))
    lhs = m**p1
    lhs_se = p1 * abs(m) ** (p1 - 1) * m_se
    q = p1 / (p1 - 1)
    e_psi = float(np.mean(R**q)) ** (p1 - 1)
    a_p = float(np.mean(failed))
    a_q = float(np.mean(R * failed))
    a_hat = min(1.0, max(a_p, a_q))
    fp = f_plain**p1
    base = float(fp.mean())
    base_se = float(fp.std(ddof=1) / math.sqrt(n))
    factor = e_psi * (1 + a_hat ** (1 / p1) * f_sup * e_psi) ** p1
    return HarnackReport(p1, lhs, base * factor, math.log(e_psi), a_hat, lhs_se,
                         base_se * factor)


def harnack_check(f: Callable[[np.ndarray], np.ndarray], p1: float, phi1: Field, phi2: Field,
                  ell: float, n_replicas: int, coeffs: CoefficientSet, cfg: SolverConfig,
                  root_seed: int, f_sup: float | None = None, batch: int = 256
                  ) -> HarnackReport:
    """Harnack inequality at time 2 for one pair of initial conditions.

    The driven solution starts from ``phi2`` and the reference from ``phi1``;
    ``f`` maps a batch of terminal states ``(R, *grid)`` to values >= 1.
    """
    if not p1 > 1:
        raise DomainError("p1 must exceed 1")
    results = run_replicas(phi1.values, phi2.values, ell, coeffs, cfg, n_replicas, root_seed,
                           1, batch)
    v_end = _concat(results, "v_end", axis=0)
    w_end = _concat(results, "v_ell_end", axis=0)
    log_w = _concat(results, "log_weight")
    failed = ~_concat(results, "success")
    f_ell, f_plain = np.asarray(f(w_end)), np.asarray(f(v_end))
    sup = f_sup if f_sup is not None else float(max(f_ell.max(), f_plain.max()))
    return harnack_from_samples(f_ell, f_plain, log_w, failed, p1, sup)


@dataclass(frozen=True)
class JPSurrogates:
    tree1: np.ndarray
    tree2: np.ndarray
    tree3: np.ndarray
    v_ref: np.ndarray

    @classmethod
    def zeros(cls, grid: TorusGrid):
        z = np.zeros(grid.shape)
        return cls(z, z, z, z)


def _surrogates(s):
    if s is None:
        raise ConfigurationError("jp transform needs tree1, tree2, tree3 and v_ref")
    if isinstance(s, dict):
        missing = {"tree1", "tree2", "tree3", "v_ref"} - set(s)
        if missing:
            raise ConfigurationError(f"missing surrogate fields: {sorted(missing)}")
        s = JPSurrogates(*(np.asarray(_val(s[k])) for k in ("tree1", "tree2", "tree3", "v_ref")))
    return s


def _val(x):
    return x.values if isinstance(x, Field) else x


def jp_inverse(v_frame: Field, surrogates) -> Field:
    """``u = tree1 - tree3 + exp(-3 tree2) (v + v_ref)``."""
    s = _surrogates(surrogates)
    return Field(v_frame.grid, s.tree1 - s.tree3 + np.exp(-3.0 * s.tree2) * (v_frame.values + s.v_ref))


def jp_forward(u_frame: Field, surrogates) -> Field:
    """Inverse of ``jp_inverse``: ``v = exp(3 tree2) (u - tree1 + tree3) - v_ref``."""
    s = _surrogates(surrogates)
    return Field(u_frame.grid, np.exp(3.0 * s.tree2) * (u_frame.values - s.tree1 + s.tree3) - s.v_ref)
