"""Strict YAML scenario files for the command-line front end.

A scenario is a mapping of sections (``model``, ``grid``, ``evolution``,
``mc``, ``calibrate``, ``price``, ``figure1``, ``bohm``, ``check``,
``output``); every section and key is optional and falls back to the
defaults below. Unknown sections or keys, duplicate keys and ill-typed
values are rejected with the line they occur on.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from typing import Dict, Tuple

import yaml

__all__ = ["ConfigError", "ScenarioConfig", "load_config", "parse_config"]


class ConfigError(ValueError):
    """Invalid scenario; the message names the file, line and field."""


@dataclass(frozen=True)
class ModelSection:
    sigma: float = 0.2
    x0: float = 0.0
    S0: float = 100.0
    strike: float = 100.0
    T: float = 1.0
    epsilon: float = 0.0
    guard_fraction: float = 0.9
    target: str = "forward"
    factors: int = 1
    sigma_y: float = 0.3
    calibration: str = "auto"


@dataclass(frozen=True)
class GridSection:
    n: int = 2049
    half_width: float = 6.0
    n_x2: int = 256
    n_y: int = 128
    half_width_y: float = 6.0


@dataclass(frozen=True)
class EvolutionSection:
    dt: float = 1e-3
    dt_2d: float = 1e-2
    mode: str = "diffusive"
    n_checkpoints: int = 10


@dataclass(frozen=True)
class McSection:
    n_paths: int = 100_000
    n_steps: int = 50
    seed: int = 12345
    batch_size: int = 10_000


@dataclass(frozen=True)
class CalibrateSection:
    defect_threshold: float = 1e-4


@dataclass(frozen=True)
class PriceSection:
    n_se: float = 3.0
    strikes: Tuple[float, ...] = ()


@dataclass(frozen=True)
class Figure1Section:
    epsilon: float = 0.1
    x_max: float = 2.5
    n_points: int = 201


@dataclass(frozen=True)
class BohmSection:
    sigma: float = 1.0
    width: float = 0.25
    center: float = 0.0
    momentum: float = 0.0
    T: float = 4.0
    half_width: float = 80.0
    n: int = 3201
    dt: float = 1e-3
    n_particles: int = 10_000
    seed: int = 42
    record_every: int = 100
    n_saved: int = 100
    fit_t_min: float = 1.0


@dataclass(frozen=True)
class CheckSection:
    operator: str = "K"
    metric: str = "log_price"
    perturbation: float = 0.0
    perturb_x: float = -1.0
    width: float = 0.5
    momentum: float = 1.0
    T: float = 0.5
    dt: float = 1e-3
    floor: float = 1e-3
    defect_max: float = 1e-10
    drift_max: float = 1e-10
    hje_max: float = 1e-3
    continuity_max: float = 1e-5


@dataclass(frozen=True)
class OutputSection:
    format: str = "csv"


_SECTIONS = {
    "model": ModelSection,
    "grid": GridSection,
    "evolution": EvolutionSection,
    "mc": McSection,
    "calibrate": CalibrateSection,
    "price": PriceSection,
    "figure1": Figure1Section,
    "bohm": BohmSection,
    "check": CheckSection,
    "output": OutputSection,
}

_CHOICES = {
    ("model", "target"): ("forward", "exp"),
    ("model", "calibration"): ("auto", "analytic", "fd"),
    ("model", "factors"): (1, 2),
    ("evolution", "mode"): ("diffusive", "unitary"),
    ("check", "operator"): ("K", "H"),
    ("check", "metric"): ("log_price", "flat"),
    ("output", "format"): ("csv", "json"),
}

# (section, key) -> (lower bound, strict)
_BOUNDS = {
    ("model", "sigma"): (0.0, True),
    ("model", "S0"): (0.0, True),
    ("model", "strike"): (0.0, True),
    ("model", "T"): (0.0, True),
    ("model", "guard_fraction"): (0.0, True),
    ("model", "sigma_y"): (0.0, True),
    ("grid", "n"): (3, False),
    ("grid", "half_width"): (0.0, True),
    ("grid", "n_x2"): (3, False),
    ("grid", "n_y"): (3, False),
    ("grid", "half_width_y"): (0.0, True),
    ("evolution", "dt"): (0.0, True),
    ("evolution", "dt_2d"): (0.0, True),
    ("evolution", "n_checkpoints"): (1, False),
    ("mc", "n_paths"): (2, False),
    ("mc", "n_steps"): (1, False),
    ("mc", "seed"): (0, False),
    ("mc", "batch_size"): (1, False),
    ("calibrate", "defect_threshold"): (0.0, False),
    ("price", "n_se"): (0.0, True),
    ("figure1", "x_max"): (0.0, True),
    ("figure1", "n_points"): (2, False),
    ("bohm", "sigma"): (0.0, True),
    ("bohm", "width"): (0.0, True),
    ("bohm", "T"): (0.0, True),
    ("bohm", "half_width"): (0.0, True),
    ("bohm", "n"): (3, False),
    ("bohm", "dt"): (0.0, True),
    ("bohm", "n_particles"): (1, False),
    ("bohm", "seed"): (0, False),
    ("bohm", "record_every"): (1, False),
    ("bohm", "n_saved"): (0, False),
    ("bohm", "fit_t_min"): (0.0, True),
    ("check", "width"): (0.0, True),
    ("check", "T"): (0.0, True),
    ("check", "dt"): (0.0, True),
    ("check", "floor"): (0.0, True),
    ("check", "defect_max"): (0.0, False),
    ("check", "drift_max"): (0.0, False),
    ("check", "hje_max"): (0.0, False),
    ("check", "continuity_max"): (0.0, False),
}


@dataclass(frozen=True)
class ScenarioConfig:
    model: ModelSection = field(default_factory=ModelSection)
    grid: GridSection = field(default_factory=GridSection)
    evolution: EvolutionSection = field(default_factory=EvolutionSection)
    mc: McSection = field(default_factory=McSection)
    calibrate: CalibrateSection = field(default_factory=CalibrateSection)
    price: PriceSection = field(default_factory=PriceSection)
    figure1: Figure1Section = field(default_factory=Figure1Section)
    bohm: BohmSection = field(default_factory=BohmSection)
    check: CheckSection = field(default_factory=CheckSection)
    output: OutputSection = field(default_factory=OutputSection)
    source: str = field(default="<defaults>", compare=False)
    lines: Dict[Tuple[str, str], int] = field(default_factory=dict, compare=False, repr=False)

    def with_overrides(self, **overrides):
        """Apply ``section__key=value`` overrides and revalidate them."""
        sections = {}
        for name, value in overrides.items():
            section, _, key = name.partition("__")
            if section not in _SECTIONS or key not in {f.name for f in fields(_SECTIONS[section])}:
                raise ConfigError(f"unknown override {section}.{key}")
            sections.setdefault(section, {})[key] = value
        updated = {}
        for section, values in sections.items():
            current = getattr(self, section)
            for key, value in values.items():
                _check_value(section, key, value, f"override --{section}.{key}")
            updated[section] = dataclasses.replace(current, **values)
        return dataclasses.replace(self, **updated)

    def where(self, section, key):
        line = self.lines.get((section, key))
        return f"{self.source} line {line}" if line else self.source

    def to_dict(self):
        out = {}
        for f in fields(self):
            if f.name in _SECTIONS:
                out[f.name] = dataclasses.asdict(getattr(self, f.name))
        return out


def _coerce(section, key, value, kind, where):
    label = f"{where}: {section}.{key}"
    if kind is float:
        if isinstance(value, bool):
            raise ConfigError(f"{label} must be a number, got {value!r}")
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"{label} must be a number, got {value!r}") from None
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{label} must be a finite number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{label} must be an integer, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{label} must be a string, got {value!r}")
        return value
    # tuple of floats
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{label} must be a list of numbers, got {value!r}")
    return tuple(_coerce(section, key, v, float, where) for v in value)


def _field_kind(section, key):
    ftype = {f.name: f.type for f in fields(_SECTIONS[section])}[key]
    return {"float": float, "int": int, "str": str}.get(ftype, tuple)


def _check_value(section, key, value, where):
    choices = _CHOICES.get((section, key))
    label = f"{where}: {section}.{key}"
    if choices is not None and value not in choices:
        raise ConfigError(f"{label} must be one of {list(choices)}, got {value!r}")
    bound = _BOUNDS.get((section, key))
    if bound is not None:
        lo, strict = bound
        if value < lo or (strict and value == lo):
            op = ">" if strict else ">="
            raise ConfigError(f"{label} must be {op} {lo}, got {value!r}")
    if (section, key) == ("mc", "seed") or (section, key) == ("bohm", "seed"):
        if value >= 2**64:
            raise ConfigError(f"{label} must fit in 64 bits")
    if (section, key) == ("model", "guard_fraction") and value > 1.0:
        raise ConfigError(f"{label} must be <= 1, got {value!r}")
    if (section, key) == ("check", "floor") and value >= 1.0:
        raise ConfigError(f"{label} must be < 1, got {value!r}")


def _line(node):
    return node.start_mark.line + 1


def _mapping_items(node, source, context):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{source} line {_line(node)}: {context} must be a mapping")
    seen = {}
    for key_node, value_node in node.value:
        if not isinstance(key_node, yaml.ScalarNode):
            raise ConfigError(f"{source} line {_line(key_node)}: keys must be plain names")
        key = key_node.value
        if key in seen:
            raise ConfigError(
                f"{source} line {_line(key_node)}: duplicate key {key!r} "
                f"(first on line {seen[key]})"
            )
        seen[key] = _line(key_node)
        yield key, key_node, value_node


def parse_config(text, source="<string>"):
    """Parse scenario text into a validated :class:`ScenarioConfig`."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: malformed YAML: {exc}") from None
    if root is None:
        return ScenarioConfig(source=source)
    constructor = yaml.SafeLoader("")
    sections, lines = {}, {}
    for name, key_node, section_node in _mapping_items(root, source, "the scenario"):
        if name not in _SECTIONS:
            raise ConfigError(
                f"{source} line {_line(key_node)}: unknown section {name!r}; "
                f"expected one of {sorted(_SECTIONS)}"
            )
        known = {f.name for f in fields(_SECTIONS[name])}
        values = {}
        for key, knode, vnode in _mapping_items(section_node, source, f"section {name!r}"):
            where = f"{source} line {_line(knode)}"
            if key not in known:
                raise ConfigError(
                    f"{where}: unknown key {key!r} in section {name!r}; "
                    f"expected one of {sorted(known)}"
                )
            raw = constructor.construct_object(vnode, deep=True)
            value = _coerce(name, key, raw, _field_kind(name, key), where)
            _check_value(name, key, value, where)
            values[key] = value
            lines[(name, key)] = _line(knode)
        sections[name] = _SECTIONS[name](**values)
    return ScenarioConfig(**sections, source=source, lines=lines)


def load_config(path):
    """Read and validate a scenario file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))
