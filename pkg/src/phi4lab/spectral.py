"""Periodic spectral backbone on flat tori.

Fields live on a uniform grid of ``n**dim`` points over ``[0, L)**dim``.  All
array-level helpers act on the trailing ``dim`` axes, so any leading axes
(replicas, vector components, time frames) are carried along for free.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "TorusGrid",
    "Field",
    "FieldTrajectory",
    "heat_semigroup",
    "lp_block",
    "lp_blocks",
    "besov_norm",
    "besov_norm_array",
    "lp_norm",
    "l2_inner",
    "gradient",
    "write_field",
    "read_field",
]

# Dyadic window: chi == 1 on [0, LP_INNER], chi == 0 on [LP_OUTER, inf).  The
# ratio LP_INNER / LP_OUTER >= 3/4 keeps every paraproduct term
# S_{l-1}f * Delta_l g inside blocks l-2 .. l+1.
LP_INNER = 0.75
LP_OUTER = 1.0

SNAPSHOT_MAGIC = b"PHI4FLD\0"
_HEADER = struct.Struct("<8sIIdI")


def _smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    out = np.zeros_like(x)
    inner = (x > 0) & (x < 1)
    xi = x[inner]
    a = np.exp(-1.0 / xi)
    b = np.exp(-1.0 / (1.0 - xi))
    out[inner] = a / (a + b)
    out[x >= 1] = 1.0
    return out


def dyadic_chi(r):
    """Low-pass profile of the Littlewood-Paley partition."""
    return 1.0 - _smooth_step((np.asarray(r, dtype=float) - LP_INNER) / (LP_OUTER - LP_INNER))


def dyadic_weight(kmag, j: int):
    """Window of block ``j`` evaluated at frequency magnitude(s) ``kmag``."""
    kmag = np.asarray(kmag, dtype=float)
    if j < -1:
        raise ValueError(f"block index must be >= -1, got {j}")
    if j == -1:
        return dyadic_chi(kmag)
    return dyadic_chi(kmag / 2.0 ** (j + 1)) - dyadic_chi(kmag / 2.0**j)


@dataclass(frozen=True)
class TorusGrid:
    dim: int
    n: int
    length: float = 2 * math.pi

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"points_per_axis must be a power of two >= 8, got {self.n}")
        if not self.length > 0:
            raise ValueError("side_length must be positive")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def volume(self) -> float:
        return self.length**self.dim

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        return (self.n,) * (self.dim - 1) + (self.n // 2 + 1,)

    def coordinates(self) -> list[np.ndarray]:
        x = np.arange(self.n) * self.spacing
        return np.meshgrid(*([x] * self.dim), indexing="ij")

    @cached_property
    def _wavevectors(self) -> list[np.ndarray]:
        # rfftn layout: full fftfreq on leading axes, rfftfreq on the last one
        scale = 2 * math.pi / self.length
        freqs = [np.fft.fftfreq(self.n, d=1.0 / self.n) * scale] * (self.dim - 1)
        freqs.append(np.fft.rfftfreq(self.n, d=1.0 / self.n) * scale)
        return np.meshgrid(*freqs, indexing="ij")

    @cached_property
    def ksq(self) -> np.ndarray:
        return sum(k**2 for k in self._wavevectors)

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.ksq)

    @cached_property
    def derivative_multipliers(self) -> list[np.ndarray]:
        """``i*k`` per axis with the Nyquist frequency removed (odd derivative)."""
        nyq = math.pi * self.n / self.length
        out = []
        for k in self._wavevectors:
            k = k.copy()
            k[np.isclose(np.abs(k), nyq)] = 0.0
            out.append(1j * k)
        return out

    @cached_property
    def top_level(self) -> int:
        """Largest dyadic level whose block can be nonzero on this grid."""
        kmax = float(self.kmag.max())
        j = 0
        while kmax > LP_INNER * 2.0 ** (j + 1):
            j += 1
        return j

    @cached_property
    def block_windows(self) -> np.ndarray:
        """Spectral windows for blocks ``-1 .. top_level``; they sum to one."""
        windows = [dyadic_weight(self.kmag, j) for j in range(-1, self.top_level + 1)]
        return np.stack(windows)

    def fft(self, values: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(values, axes=self.axes)

    def ifft(self, coeffs: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(coeffs, s=self.shape, axes=self.axes)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "n": self.n, "length": self.length}


@dataclass(frozen=True, eq=False)
class Field:
    """Immutable lattice function; ``values`` has shape ``grid.shape`` or
    ``(components,) + grid.shape``."""

    grid: TorusGrid
    values: np.ndarray
    _spectral: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.shape[-self.grid.dim :] != self.grid.shape or values.ndim > self.grid.dim + 1:
            raise ValueError(f"values of shape {values.shape} do not fit grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: TorusGrid, c: float, components: int | None = None) -> "Field":
        shape = grid.shape if components is None else (components,) + grid.shape
        return cls(grid, np.full(shape, float(c)))

    @property
    def components(self) -> int:
        return 1 if self.values.ndim == self.grid.dim else self.values.shape[0]

    @property
    def spectral(self) -> np.ndarray:
        if self._spectral is None:
            coeffs = self.grid.fft(self.values)
            coeffs.flags.writeable = False
            object.__setattr__(self, "_spectral", coeffs)
        return self._spectral

    def mean(self) -> float:
        return float(self.values.mean())

    def sup(self) -> float:
        return float(np.abs(self.values).max())

    def l2(self) -> float:
        return float(lp_norm(self.values, self.grid, 2))

    def __add__(self, other):
        return Field(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return Field(self.grid, self.values - _vals(other))

    def __mul__(self, other):
        return Field(self.grid, self.values * _vals(other))

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)


def _vals(x):
    return x.values if isinstance(x, Field) else x


@dataclass(frozen=True, eq=False)
class FieldTrajectory:
    """Frames of a time-dependent field; frame ``i`` sits at ``t0 + i*dt``."""

    grid: TorusGrid
    dt: float
    t0: float
    frames: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if frames.shape[-self.grid.dim :] != self.grid.shape:
            raise ValueError("frames do not fit the grid")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        frames.flags.writeable = False
        object.__setattr__(self, "frames", frames)

    @classmethod
    def from_fields(cls, fields: Sequence[Field], dt: float, t0: float = 0.0, **meta):
        grid = fields[0].grid
        if any(f.grid != grid for f in fields):
            raise ValueError("all frames must share the same grid")
        return cls(grid, dt, t0, np.stack([f.values for f in fields]), dict(meta))

    @classmethod
    def static(cls, f: Field, n_frames: int, dt: float, t0: float = 0.0):
        return cls(f.grid, dt, t0, np.broadcast_to(f.values, (n_frames,) + f.values.shape).copy())

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (len(self) - 1)

    def frame(self, i: int) -> Field:
        return Field(self.grid, self.frames[i])

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation in time (clamped to the covered span)."""
        x = (t - self.t0) / self.dt
        last = len(self) - 1
        if x <= 0:
            return self.frames[0]
        if x >= last:
            return self.frames[last]
        i = int(math.floor(x))
        w = x - i
        if w < 1e-12:
            return self.frames[i]
        return (1.0 - w) * self.frames[i] + w * self.frames[i + 1]

    def first_index_at_or_after(self, t: float) -> int:
        i = int(math.ceil((t - self.t0) / self.dt - 1e-9))
        return min(max(i, 0), len(self) - 1)

    def sup(self, t_from: float | None = None) -> float:
        i = 0 if t_from is None else self.first_index_at_or_after(t_from)
        return float(np.abs(self.frames[i:]).max())


def heat_semigroup(f: Field, t: float) -> Field:
    """``e^{t(Delta-1)} f``; every Fourier mode decays by ``exp(-t(1+|k|^2))``."""
    if t < 0:
        raise ValueError(f"semigroup time must be nonnegative, got {t}")
    if t == 0:
        return f
    return Field(f.grid, apply_heat(f.values, f.grid, t))


def heat_multiplier(grid: TorusGrid, t: float) -> np.ndarray:
    return np.exp(-t * (1.0 + grid.ksq))


def apply_heat(values: np.ndarray, grid: TorusGrid, t: float) -> np.ndarray:
    return grid.ifft(grid.fft(values) * heat_multiplier(grid, t))


def gradient(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Spectral gradient; the component axis is inserted just before the grid axes."""
    coeffs = grid.fft(values)
    parts = [grid.ifft(coeffs * m) for m in grid.derivative_multipliers]
    return np.stack(parts, axis=-grid.dim - 1)


def lp_blocks(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """All nonzero dyadic blocks, stacked on a new leading axis (index j+1)."""
    coeffs = grid.fft(values)
    windows = grid.block_windows.reshape(
        (grid.block_windows.shape[0],) + (1,) * (coeffs.ndim - grid.dim) + grid.spectral_shape
    )
    return grid.ifft(windows * coeffs[None])


def lp_block(f: Field, j: int) -> Field:
    if j < -1:
        raise ValueError(f"block index must be >= -1, got {j}")
    if j > f.grid.top_level:
        return Field(f.grid, np.zeros_like(f.values))
    window = f.grid.block_windows[j + 1]
    return Field(f.grid, f.grid.ifft(f.spectral * window))


def lp_norm(values: np.ndarray, grid: TorusGrid, p: float) -> np.ndarray:
    """Grid ``L^p`` norm over the trailing grid axes (cell-volume quadrature)."""
    a = np.abs(values)
    if math.isinf(p):
        return a.max(axis=grid.axes)
    return (np.sum(a**p, axis=grid.axes) * grid.cell_volume) ** (1.0 / p)


def l2_inner(a: np.ndarray, b: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return np.sum(a * b, axis=grid.axes) * grid.cell_volume


def _weighted_sum(terms: np.ndarray, q: float) -> np.ndarray:
    if math.isinf(q):
        return terms.max(axis=0)
    return np.sum(terms**q, axis=0) ** (1.0 / q)


def besov_norm_array(values: np.ndarray, grid: TorusGrid, alpha: float, p: float = math.inf,
                     q: float = math.inf) -> np.ndarray:
    blocks = lp_blocks(values, grid)
    js = np.arange(-1, grid.top_level + 1)
    # the low block carries weight one for every alpha
    weights = 2.0 ** (alpha * np.maximum(js, 0))
    norms = np.stack([lp_norm(b, grid, p) for b in blocks])
    weights = weights.reshape((-1,) + (1,) * (norms.ndim - 1))
    return _weighted_sum(weights * norms, q)


def besov_norm(f: Field, alpha: float, p: float = math.inf, q: float = math.inf) -> float:
    """Grid Besov norm ``(sum_j (2^{j alpha} ||Delta_j f||_p)^q)^{1/q}``."""
    for name, v in (("p", p), ("q", q)):
        if not v >= 1:
            raise ValueError(f"{name} must lie in [1, inf], got {v}")
    if f.grid.top_level + 2 < 3:
        raise ValueError("grid too coarse for three dyadic levels")
    # vector fields: largest componentwise norm
    return float(np.max(besov_norm_array(f.values, f.grid, alpha, p, q)))


def write_field(path: str | Path, f: Field) -> None:
    comps = 1 if f.values.ndim == f.grid.dim else f.values.shape[0]
    header = _HEADER.pack(SNAPSHOT_MAGIC, f.grid.dim, f.grid.n, float(f.grid.length), comps)
    payload = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def read_field(path: str | Path) -> Field:
    raw = Path(path).read_bytes()
    magic, dim, n, length, comps = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a field snapshot")
    grid = TorusGrid(dim, n, length)
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    shape = grid.shape if comps == 1 else (comps,) + grid.shape
    if values.size != math.prod(shape):
        raise ValueError(f"{path}: payload size mismatch")
    return Field(grid, values.reshape(shape))
