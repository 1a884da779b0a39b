"""Random coefficient fields and white-noise increments.

The coefficients of the transformed equation are replaced by Gaussian fields
with power-law spectra, so each one has a prescribed Hölder/Besov exponent.
Time dependence comes from an Ornstein-Uhlenbeck recursion between
independent spatial draws placed at regular knots.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError
from .spectral import Field, FieldTrajectory, TorusGrid, read_field, write_field

COEFFICIENT_NAMES = ("A", "B", "Z2", "Z1", "Z0")
TREE_NAME = "tree"
_STREAM_INDEX = {name: i for i, name in enumerate(COEFFICIENT_NAMES + (TREE_NAME,))}


@dataclass(frozen=True)
class RegularitySpec:
    alpha: float
    amplitude: float
    mean_offset: float = 0.0
    floor: float | None = None

    def __post_init__(self):
        # amplitude 0 is accepted: it yields the deterministic field == mean_offset
        if not (self.amplitude >= 0 and math.isfinite(self.amplitude)):
            raise ConfigurationError(f"amplitude must be finite and >= 0, got {self.amplitude}")
        if self.floor is not None and not self.floor > 0:
            raise ConfigurationError(f"floor must be positive, got {self.floor}")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "amplitude": self.amplitude,
                "mean_offset": self.mean_offset, "floor": self.floor}


def default_specs(eta: float = 0.05) -> dict[str, RegularitySpec]:
    """A at 1-eta, B at -eta, the Z_i at -1/2-eta; plus a smooth tree field.

    The offsets of A and Z0 put the solution near a level where the cubic
    term is strongly dissipative, so memory of the initial condition fades
    within one time unit on desk-size grids.
    """
    return {
        "A": RegularitySpec(1.0 - eta, 0.3, mean_offset=2.0, floor=0.5),
        "B": RegularitySpec(-eta, 0.2),
        "Z2": RegularitySpec(-0.5 - eta, 0.2),
        "Z1": RegularitySpec(-0.5 - eta, 0.2),
        "Z0": RegularitySpec(-0.5 - eta, 0.2, mean_offset=3.0),
        TREE_NAME: RegularitySpec(2.0, 0.05),
    }


def spectral_std(grid: TorusGrid, spec: RegularitySpec) -> np.ndarray:
    """Standard deviation of each Fourier coefficient, on the rfft layout."""
    return spec.amplitude * (1.0 + grid.ksq) ** (-(spec.alpha + grid.dim / 2.0) / 2.0)


def _gaussian_draw(grid: TorusGrid, spec: RegularitySpec, rng: np.random.Generator,
                   components: int | None) -> np.ndarray:
    shape = grid.shape if components is None else (components,) + grid.shape
    if spec.amplitude == 0:
        return np.zeros(shape)
    white = rng.standard_normal(shape)
    # rfftn of unit white noise has E|c|^2 = n^dim; rescale so the normalised
    # coefficients (1/n^dim) * sum f e^{-ikx} have std spectral_std
    coeffs = grid.fft(white) * spectral_std(grid, spec)
    return grid.ifft(coeffs) * math.sqrt(grid.size)


def _finish(values: np.ndarray, spec: RegularitySpec) -> np.ndarray:
    values = values + spec.mean_offset
    if spec.floor is not None:
        values = np.maximum(values, spec.floor)
    return values


def synthesize_holder_field(grid: TorusGrid, spec: RegularitySpec, seed,
                            components: int | None = None) -> Field:
    """Gaussian field with power-law spectrum; deterministic in ``seed``.

    ``seed`` may be an int or a ``numpy.random.SeedSequence``.
    """
    rng = np.random.default_rng(seed)
    return Field(grid, _finish(_gaussian_draw(grid, spec, rng, components), spec))


class CoefficientFrame(NamedTuple):
    A: np.ndarray
    B: np.ndarray
    Z2: np.ndarray
    Z1: np.ndarray
    Z0: np.ndarray
    exp_tree: np.ndarray


def compute_c_A(a_plus: float, a_minus: float) -> float:
    if a_minus <= 0:
        return math.inf
    return (1.0 + max(a_plus, 1.0 / a_minus)) ** 2


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    A: FieldTrajectory
    B: FieldTrajectory
    Z2: FieldTrajectory
    Z1: FieldTrajectory
    Z0: FieldTrajectory
    exp_tree: FieldTrajectory
    c_A: float
    horizon: float
    specs: dict = field(default_factory=dict)
    seed: int | None = None
    linear_bypass: bool = False
    meta: dict = field(default_factory=dict)
    batch: int | None = None

    def __post_init__(self):
        a_min = float(self.A.frames.min())
        if a_min <= 0 and not self.linear_bypass:
            raise ConfigurationError("A must be positive unless the linear bypass is enabled")
        if float(self.exp_tree.frames.min()) <= 0:
            raise ConfigurationError("exp_tree must be positive")
        for name in COEFFICIENT_NAMES + ("exp_tree",):
            traj = getattr(self, name)
            if traj.t_end < self.horizon - 1e-9 or traj.t0 > 1e-12:
                raise ConfigurationError(f"{name} does not cover [0, {self.horizon}]")

    @property
    def grid(self) -> TorusGrid:
        return self.A.grid

    @property
    def A_plus(self) -> float:
        return float(self.A.frames.max())

    @property
    def A_minus(self) -> float:
        return float(self.A.frames.min())

    def recompute_c_A(self) -> float:
        return compute_c_A(self.A_plus, self.A_minus)

    def at(self, t: float) -> CoefficientFrame:
        return CoefficientFrame(self.A.at(t), self.B.at(t), self.Z2.at(t), self.Z1.at(t),
                                self.Z0.at(t), self.exp_tree.at(t))

    def sup_norms(self) -> dict[str, float]:
        return {name: float(np.abs(getattr(self, name).frames).max())
                for name in COEFFICIENT_NAMES + ("exp_tree",)}

    def trajectories(self) -> dict[str, FieldTrajectory]:
        return {name: getattr(self, name) for name in COEFFICIENT_NAMES + ("exp_tree",)}

    def member_frames(self, name: str, r: int) -> np.ndarray:
        frames = getattr(self, name).frames
        return frames if self.batch is None else frames[:, r]


def stack_coefficients(sets: list[CoefficientSet]) -> CoefficientSet:
    """One set whose coefficients carry a leading member axis (after time).

    Member ``r`` drives row ``r`` of a batched solve; all members must share
    grid, knot times and horizon.
    """
    first = sets[0]
    trajs = {}
    for name in COEFFICIENT_NAMES + ("exp_tree",):
        parts = [getattr(cs, name) for cs in sets]
        if any(p.grid != parts[0].grid or p.dt != parts[0].dt or len(p) != len(parts[0])
               for p in parts):
            raise ConfigurationError(f"{name}: members differ in grid or knots")
        trajs[name] = FieldTrajectory(first.grid, parts[0].dt, parts[0].t0,
                                      np.stack([p.frames for p in parts], axis=1))
    return CoefficientSet(
        c_A=max(cs.c_A for cs in sets), horizon=min(cs.horizon for cs in sets),
        linear_bypass=any(cs.linear_bypass for cs in sets),
        meta={"members": len(sets), "c_A": [cs.c_A for cs in sets]},
        batch=len(sets), **trajs,
    )


def _ou_knots(grid, spec, seed, stream, n_knots, rho, components):
    base = replace(spec, mean_offset=0.0, floor=None)
    knots = []
    x = None
    for i in range(n_knots):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, i)))
        g = _gaussian_draw(grid, base, rng, components)
        x = g if x is None else rho * x + math.sqrt(1.0 - rho**2) * g
        knots.append(x)
    return np.stack(knots)


def make_coefficient_set(grid: TorusGrid, horizon: float, dt: float,
                         specs: dict[str, RegularitySpec] | None = None, seed: int = 0,
                         correlation_time: float = 0.5, linear_bypass: bool = False
                         ) -> CoefficientSet:
    """Time-correlated coefficient trajectories on knots spaced ``dt`` apart.

    Knot values follow ``X_{n+1} = rho X_n + sqrt(1 - rho^2) G_{n+1}`` with
    ``rho = exp(-dt / correlation_time)`` and independent spatial draws ``G``,
    so each knot has the stationary law of a single draw.  Between knots the
    trajectory is linear, which keeps A above its floor.
    """
    full = default_specs()
    if specs:
        unknown = set(specs) - set(full)
        if unknown:
            raise ConfigurationError(f"unknown coefficient names: {sorted(unknown)}")
        full.update(specs)
    if full["A"].floor is None and not linear_bypass:
        raise ConfigurationError("the regularity spec for A must set a positive floor")
    if not (horizon > 0 and dt > 0):
        raise ConfigurationError("horizon and dt must be positive")
    n_knots = int(math.ceil(horizon / dt - 1e-9)) + 1
    rho = math.exp(-dt / correlation_time)

    trajs = {}
    for name in COEFFICIENT_NAMES + (TREE_NAME,):
        spec = full[name]
        comps = grid.dim if name == "B" else None
        raw = _ou_knots(grid, spec, seed, _STREAM_INDEX[name], n_knots, rho, comps)
        if name == TREE_NAME:
            vals = np.exp(3.0 * (raw + spec.mean_offset))
            name = "exp_tree"
        else:
            vals = _finish(raw, spec)
        trajs[name] = FieldTrajectory(grid, dt, 0.0, vals, {"spec": spec.to_dict()})

    a = trajs["A"].frames
    return CoefficientSet(
        c_A=compute_c_A(float(a.max()), float(a.min())), horizon=horizon,
        specs=full, seed=seed, linear_bypass=linear_bypass,
        meta={"correlation_time": correlation_time, "knot_dt": dt,
              "tree_amplitude": full[TREE_NAME].amplitude},
        **trajs,
    )


def constant_coefficients(grid: TorusGrid, horizon: float, A: float = 1.0, B=0.0,
                          Z2: float = 0.0, Z1: float = 0.0, Z0: float = 0.0,
                          exp_tree: float = 1.0) -> CoefficientSet:
    """Spatially and temporally constant coefficients (two knots, 0 and horizon).

    ``A = 0`` switches on the linear bypass, so ``c_A`` is infinite.
    """
    def traj(value, comps=None):
        f = Field.constant(grid, value, comps)
        return FieldTrajectory.static(f, 2, horizon)

    b = np.broadcast_to(np.asarray(B, dtype=float), (grid.dim,))
    b_vals = np.stack([np.full(grid.shape, c) for c in b])
    return CoefficientSet(
        A=traj(A), B=FieldTrajectory(grid, horizon, 0.0, np.stack([b_vals, b_vals])),
        Z2=traj(Z2), Z1=traj(Z1), Z0=traj(Z0), exp_tree=traj(exp_tree),
        c_A=compute_c_A(A, A), horizon=horizon, linear_bypass=A <= 0,
        meta={"constant": True},
    )


def save_coefficients(cs: CoefficientSet, directory: str | Path) -> Path:
    """One snapshot per knot and field, plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, traj in cs.trajectories().items():
        names = []
        for i in range(len(traj)):
            fname = f"{name}_{i:05d}.fld"
            write_field(directory / fname, traj.frame(i))
            names.append(fname)
        files[name] = {"dt": traj.dt, "t0": traj.t0, "frames": names}
    manifest = {
        "grid": cs.grid.to_dict(),
        "horizon": cs.horizon,
        "seed": cs.seed,
        "c_A": None if math.isinf(cs.c_A) else cs.c_A,
        "linear_bypass": cs.linear_bypass,
        "specs": {k: v.to_dict() for k, v in cs.specs.items()},
        "meta": cs.meta,
        "files": files,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_coefficients(directory: str | Path) -> CoefficientSet:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    grid = TorusGrid(**manifest["grid"])
    trajs = {}
    for name, info in manifest["files"].items():
        frames = [read_field(directory / f) for f in info["frames"]]
        if any(f.grid != grid for f in frames):
            raise ConfigurationError(f"{name}: snapshot grid does not match the manifest")
        traj = FieldTrajectory.from_fields(frames, info["dt"], info["t0"])
        if name == "B":
            # a one-component vector field reads back without its component axis
            traj = FieldTrajectory(grid, traj.dt, traj.t0,
                                   traj.frames.reshape((len(traj), grid.dim) + grid.shape))
        trajs[name] = traj
    c_A = manifest["c_A"]
    return CoefficientSet(
        c_A=math.inf if c_A is None else c_A, horizon=manifest["horizon"],
        specs={k: RegularitySpec(**v) for k, v in manifest["specs"].items()},
        seed=manifest["seed"], linear_bypass=manifest["linear_bypass"],
        meta=manifest["meta"], **trajs,
    )


def replica_seed(root_seed: int, replica: int) -> int:
    """Disjoint 64-bit stream seed for one replica."""
    state = np.random.SeedSequence(root_seed, spawn_key=(replica,)).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


@dataclass(eq=False)
class NoiseStream:
    """Space-time white noise increments over successive steps of length ``dt``.

    Each increment is i.i.d. N(0, dt / cell_volume) per grid point.  Draws are
    buffered in chunks; the sequence only depends on ``(seed, grid, dt)``.
    """

    grid: TorusGrid
    dt: float
    seed: int
    cursor: int = 0
    chunk: int = 256

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("noise dt must be positive")
        self._rng = np.random.default_rng(self.seed)
        self._scale = math.sqrt(self.dt / self.grid.cell_volume)
        self._buf = np.empty((0,) + self.grid.shape)
        self._pos = 0
        start, self.cursor = self.cursor, 0
        if start:
            self.skip(start)

    def _refill(self):
        self._buf = self._rng.standard_normal((self.chunk,) + self.grid.shape)
        self._pos = 0

    def next_array(self) -> np.ndarray:
        if self._pos >= self._buf.shape[0]:
            self._refill()
        out = self._buf[self._pos] * self._scale
        self._pos += 1
        self.cursor += 1
        return out

    def take(self, m: int) -> np.ndarray:
        """The next ``m`` increments as one ``(m,) + grid.shape`` array."""
        left = self._buf[self._pos:self._pos + m]
        self._pos += left.shape[0]
        rest = m - left.shape[0]
        parts = [left]
        if rest > 0:
            parts.append(self._rng.standard_normal((rest,) + self.grid.shape))
        self.cursor += m
        return np.concatenate(parts) * self._scale

    def skip(self, n: int) -> None:
        self.take(n)


def sample_noise_increment(stream: NoiseStream) -> Field:
    return Field(stream.grid, stream.next_array())


class NoiseBank:
    """Independent streams for a batch of replicas, stepped together.

    Replica ``r`` uses the stream seeded by ``replica_seed(root_seed, r)``, so
    its increments do not depend on how replicas are batched.
    """

    def __init__(self, grid: TorusGrid, dt: float, root_seed: int, replicas,
                 max_buffer: int = 4_000_000):
        self.grid = grid
        self.streams = [NoiseStream(grid, dt, replica_seed(root_seed, int(r))) for r in replicas]
        self.chunk = max(1, min(256, max_buffer // max(1, len(self.streams) * grid.size)))
        self._buf = np.empty((0, len(self.streams)) + grid.shape)
        self._pos = 0

    def next_array(self) -> np.ndarray:
        if self._pos >= self._buf.shape[0]:
            self._buf = np.stack([s.take(self.chunk) for s in self.streams], axis=1)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


class CommonNoise:
    """One stream broadcast to every row of a batch."""

    def __init__(self, stream: NoiseStream, rows: int):
        self.stream = stream
        self.rows = rows

    def next_array(self) -> np.ndarray:
        return np.broadcast_to(self.stream.next_array(), (self.rows,) + self.stream.grid.shape)
