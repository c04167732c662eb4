"""Run configuration as flat ``section.key = value`` text.

Values are JSON literals so a written file reads back to an identical
config. Bare words are accepted as strings when reading hand-written files.
One seed (``run.seed``) feeds both the simulator and the engine.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

from .data import RvConfig
from .dlm import DiscountConfig
from .engine import EngineConfig
from .errors import ConfigError, DataError
from .parents import ParentConfig
from .signals import DEFAULT_LAGS
from .sim import SimSpec

DESIGNS = ("price", "cascade")
TARGETS = ("log_rv", "latent")
SIGNAL_KINDS = ("rv", "lev", "core", "spread")


@dataclass(frozen=True)
class DataSection:
    path: str | None = None  # None: simulate from the sim section


@dataclass(frozen=True)
class EngineSection:
    n_mc: int = 500
    ess_floor: float = 10.0
    interval_mass: float = 0.9
    prior_var: float = 1.0
    prior_r: float = 1.0
    prior_s: float = 1.0
    det_tol: float = 1e-10
    max_reject_frac: float = 0.1


@dataclass(frozen=True)
class FeatureSection:
    design: str = "price"
    target: str = "log_rv"
    har: bool = True
    ohlc: bool = False

    def __post_init__(self) -> None:
        if self.design not in DESIGNS:
            raise ConfigError(f"features.design must be one of {', '.join(DESIGNS)}; got '{self.design}'")
        if self.target not in TARGETS:
            raise ConfigError(f"features.target must be one of {', '.join(TARGETS)}; got '{self.target}'")
        if self.design == "price" and self.target != "log_rv":
            raise ConfigError("features.target='latent' needs features.design='cascade'")
        if self.design == "cascade" and self.ohlc:
            raise ConfigError("features.ohlc is only available with features.design='price'")


@dataclass(frozen=True)
class SignalSection:
    kinds: tuple[str, ...] = SIGNAL_KINDS
    lags: tuple[int, ...] = DEFAULT_LAGS
    threshold: float = 0.0
    cutoff: str | None = None  # select one lag per kind on rows before this date

    def __post_init__(self) -> None:
        bad = [k for k in self.kinds if k not in SIGNAL_KINDS]
        if bad or not self.kinds:
            raise ConfigError(f"signals.kinds must be a non-empty subset of {', '.join(SIGNAL_KINDS)}; got {bad}")
        if not self.lags or any(int(l) < 1 for l in self.lags):
            raise ConfigError("signals.lags must be positive integers")
        if self.threshold < 0:
            raise ConfigError("signals.threshold must be >= 0")


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    warmup: int = 250
    out: str = "out"
    keep_states: bool = False

    def __post_init__(self) -> None:
        if self.warmup < 0:
            raise ConfigError("run.warmup must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    sim: SimSpec = field(default_factory=SimSpec)
    rv: RvConfig = field(default_factory=RvConfig)
    discount: DiscountConfig = field(default_factory=DiscountConfig)
    parents: ParentConfig = field(default_factory=ParentConfig)
    engine: EngineSection = field(default_factory=EngineSection)
    features: FeatureSection = field(default_factory=FeatureSection)
    signals: SignalSection = field(default_factory=SignalSection)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self) -> None:
        self.engine_config()  # validates the engine section

    def sim_spec(self) -> SimSpec:
        return replace(self.sim, seed=self.run.seed)

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            discount=self.discount, parents=self.parents, seed=self.run.seed, **asdict(self.engine)
        )

    def with_overrides(self, pairs: dict[str, Any]) -> "RunConfig":
        """Apply ``{"section.key": value}``; string values are parsed like file values."""
        cfg = self
        grouped: dict[str, dict[str, Any]] = {}
        for key, value in pairs.items():
            section, name = _split_key(key)
            grouped.setdefault(section, {})[name] = _parse_value(value) if isinstance(value, str) else value
        for section, values in grouped.items():
            cfg = _set_section(cfg, section, values)
        return cfg

    # ---- serialization

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            section = getattr(self, f.name)
            for key, value in _section_items(f.name, section):
                lines.append(f"{f.name}.{key} = {json.dumps(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        pairs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'section.key = value', got '{line}'")
            key, value = (s.strip() for s in line.split("=", 1))
            pairs[key] = value
        return cls().with_overrides(pairs)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def read(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)


# sim.seed is replaced by run.seed, so it is not a configurable key
_HIDDEN = {("sim", "seed")}
_OPTIONAL = {"data.path", "signals.cutoff"}


def _section_items(name: str, section) -> list[tuple[str, Any]]:
    out = []
    for f in fields(section):
        if (name, f.name) in _HIDDEN:
            continue
        value = getattr(section, f.name)
        out.append((f.name, list(value) if isinstance(value, tuple) else value))
    return out


def _split_key(key: str) -> tuple[str, str]:
    parts = key.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"config key '{key}' must look like section.key")
    names = {f.name for f in fields(RunConfig)}
    if parts[0] not in names:
        raise ConfigError(f"unknown config section '{parts[0]}' (in '{key}')")
    return parts[0], parts[1]


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text  # bare word


def _coerce(key: str, default: Any, value: Any) -> Any:
    if value is None:
        if key not in _OPTIONAL:
            raise ConfigError(f"{key} cannot be null")
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list, got {value!r}")
        kinds = {type(v) for v in default}
        items = []
        for v in value:
            if float in kinds and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if kinds and not any(isinstance(v, k) and not (k is int and isinstance(v, bool)) for k in kinds):
                raise ConfigError(f"{key} has an entry of the wrong type: {v!r}")
            items.append(v)
        return tuple(items)
    if isinstance(default, str) or default is None:
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    return value


def _set_section(cfg: RunConfig, section: str, values: dict[str, Any]) -> RunConfig:
    current = getattr(cfg, section)
    assert is_dataclass(current)
    known = {f.name for f in fields(current)} - {k for s, k in _HIDDEN if s == section}
    changes = {}
    for name, value in values.items():
        key = f"{section}.{name}"
        if name not in known:
            raise ConfigError(f"unknown config key '{key}'")
        changes[name] = _coerce(key, getattr(current, name), value)
    try:
        updated = replace(current, **changes)
    except (ConfigError, DataError) as exc:
        raise ConfigError(str(exc)) from exc  # module messages already name the field
    return replace(cfg, **{section: updated})
