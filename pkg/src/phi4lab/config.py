"""Strict TOML configuration.

Every table maps onto a dataclass; unknown keys are errors.  Defaults come
from the selected profile (``smoke`` or ``full``), then the file, then
command-line overrides.
"""

from __future__ import annotations

import dataclasses
import math
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .coefficients import COEFFICIENT_NAMES, TREE_NAME, RegularitySpec, default_specs
from .errors import ConfigurationError


@dataclass
class GridConfig:
    dim: int = 1
    points: int = 64
    length: float = 2 * math.pi


@dataclass
class SolverSection:
    dt: float = 1e-3
    horizon: float = 2.0
    m_tol: float = 1e-8
    max_halvings: int = 20


@dataclass
class SpecSection:
    alpha: float = 0.0
    amplitude: float = 0.0
    mean_offset: float = 0.0
    floor: float | None = None

    def to_spec(self) -> RegularitySpec:
        return RegularitySpec(self.alpha, self.amplitude, self.mean_offset, self.floor)


def _spec_sections(eta: float) -> dict[str, SpecSection]:
    return {k: SpecSection(v.alpha, v.amplitude, v.mean_offset, v.floor)
            for k, v in default_specs(eta).items()}


@dataclass
class CoefficientSection:
    knot_dt: float = 0.05
    correlation_time: float = 0.5
    seed: int = 11
    A: SpecSection | None = None
    B: SpecSection | None = None
    Z2: SpecSection | None = None
    Z1: SpecSection | None = None
    Z0: SpecSection | None = None
    tree: SpecSection | None = None

    def specs(self, eta: float) -> dict[str, RegularitySpec]:
        base = _spec_sections(eta)
        out = {}
        for name in COEFFICIENT_NAMES + (TREE_NAME,):
            sec = getattr(self, name)
            out[name] = (sec or base[name]).to_spec()
        return out


@dataclass
class CouplingSection:
    ell: list = field(default_factory=lambda: [2.0, 4.0, 8.0])
    replicas: int = 200
    pairs: int = 20
    windows: int = 3
    window_replicas: int = 400
    norm_decades: float = 2.0
    mono_ells: list = field(default_factory=lambda: [4.0, 8.0, 16.0, 32.0])
    mono_seeds: int = 20
    mono_c1: float = 1.0
    mono_time: float = 1.5


@dataclass
class ComeDownSection:
    initial_sizes: list = field(default_factory=lambda: [1.0, 10.0, 100.0, 1000.0])
    dt: float = 1e-4
    horizon: float = 2.0
    s_grid: list = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7])
    merge_time: float = 1.0
    merge_rtol: float = 1e-2


@dataclass
class MaxPrincipleSection:
    configs: int = 50
    adversarial: int = 5
    dt: float = 1e-4
    times: list = field(default_factory=lambda: [0.1, 0.25, 0.5])
    slack: float = 1.05
    max_initial: float = 1e4


@dataclass
class GirsanovSection:
    replicas: int = 10000
    ell: float = 1.0
    dt: float = 1e-3


@dataclass
class HarnackSection:
    seed_pairs: int = 10
    replicas: int = 1000
    p1: float = 2.0


@dataclass
class ParaproductSection:
    bony_pairs: int = 100
    bony_points: int = 128
    pairs: int = 100
    n_max: int = 8
    a1: float = 0.5
    a2: float = 0.6
    gamma: float = 0.2
    grids: list = field(default_factory=lambda: [64, 128])
    stability_factor: float = 2.0
    ell_exponents: list = field(default_factory=lambda: [4, 5, 6, 7, 8, 9, 10])
    ell_margin: float = 0.2


@dataclass
class SeminormSection:
    semigroup_fields: int = 50
    seeds: int = 20
    betas: list = field(default_factory=lambda: [0.3, 0.6])
    points: int = 4096
    delta_exponents: list = field(default_factory=lambda: [2, 3, 4, 5, 6])
    slope_tol: float = 0.15


@dataclass
class StrongNormSection:
    C_empty: float = 1.0
    s: float = 0.5
    budget: int = 200000


@dataclass
class LabConfig:
    root_seed: int = 0
    epsilon: float = 0.1
    eta: float = 0.05
    C_cap: float = 100.0
    output_dir: str = "phi4lab-out"
    profile: str = "smoke"
    grid: GridConfig = field(default_factory=GridConfig)
    solver: SolverSection = field(default_factory=SolverSection)
    coefficients: CoefficientSection = field(default_factory=CoefficientSection)
    coupling: CouplingSection = field(default_factory=CouplingSection)
    come_down: ComeDownSection = field(default_factory=ComeDownSection)
    max_principle: MaxPrincipleSection = field(default_factory=MaxPrincipleSection)
    girsanov: GirsanovSection = field(default_factory=GirsanovSection)
    harnack: HarnackSection = field(default_factory=HarnackSection)
    paraproduct: ParaproductSection = field(default_factory=ParaproductSection)
    seminorm: SeminormSection = field(default_factory=SeminormSection)
    strong_norm: StrongNormSection = field(default_factory=StrongNormSection)

    def validate(self) -> "LabConfig":
        if not (0 < self.epsilon <= 0.25):
            raise ConfigurationError(
                f"epsilon={self.epsilon} rejected: the strong-norm estimate needs 0 < epsilon <= 1/4")
        if not self.eta > 0:
            raise ConfigurationError("eta must be positive")
        if self.profile not in PROFILES:
            raise ConfigurationError(f"unknown profile {self.profile!r}")
        for name in ("replicas", "pairs", "windows", "window_replicas"):
            if getattr(self.coupling, name) < 1:
                raise ConfigurationError(f"coupling.{name} must be >= 1")
        if self.harnack.replicas < 1 or self.girsanov.replicas < 1:
            raise ConfigurationError("replica counts must be >= 1")
        if any(e < 0 for e in self.coupling.ell + self.coupling.mono_ells):
            raise ConfigurationError("ell values must be >= 0")
        if not self.C_cap > 0:
            raise ConfigurationError("C_cap must be positive")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


PROFILES = {
    "smoke": {},
    "full": {"grid": {"dim": 3, "points": 32}, "solver": {"dt": 5e-4}},
}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where or 'config'}: expected a table")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where or 'top level'}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(hints[key], value, f"{where}.{key}" if where else key)
    return cls(**kwargs)


def _coerce(tp, value, where):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        inner = [a for a in args if a is not type(None)]
        return None if value is None else _coerce(inner[0], value, where)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{where}: expected a string, got {value!r}")
        return value
    if tp is list or origin is list:
        if not isinstance(value, list):
            raise ConfigurationError(f"{where}: expected a list, got {value!r}")
        return list(value)
    return value


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_text(text: str, source: str = "<inline>") -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        # the decoder message carries "(at line L, column C)"
        raise ConfigurationError(f"{source}: parse error: {err}") from err


def parse_config(source: str | Path | None = None, text: str | None = None,
                 overrides: dict | None = None, profile: str | None = None) -> LabConfig:
    """Build a validated config from a file path or inline TOML text."""
    data = {}
    if text is not None:
        data = parse_text(text)
    elif source is not None:
        path = Path(source)
        try:
            raw = path.read_text()
        except OSError as err:
            raise OSError(f"cannot read config {path}: {err.strerror}") from err
        data = parse_text(raw, str(path))
    if overrides:
        data = _merge(data, overrides)
    coeffs = data.get("coefficients")
    if isinstance(coeffs, dict):
        # partial spec tables inherit the remaining keys from the defaults
        eta = data.get("eta", 0.05)
        base = _spec_sections(eta if isinstance(eta, (int, float)) else 0.05)
        for name in COEFFICIENT_NAMES + (TREE_NAME,):
            if isinstance(coeffs.get(name), dict):
                coeffs[name] = {**dataclasses.asdict(base[name]), **coeffs[name]}
    chosen = profile or data.get("profile", "smoke")
    if chosen not in PROFILES:
        raise ConfigurationError(f"unknown profile {chosen!r}")
    data = _merge(PROFILES[chosen], data)
    data["profile"] = chosen
    return _build(LabConfig, data, "").validate()
