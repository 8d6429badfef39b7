"""Run configuration: an INI file with fixed sections and a content hash.

Grammar (every key optional, defaults shown)::

    [grid]
    dims = 1                  ; 1, 2 or 3
    half_extent = 20.0        ; R, the box is [-R, R]^dims
    points_per_axis = 401     ; odd N
    max_unknowns = 250000

    [potential]
    id = inverse_power:eps=1,mu=1
    c1 =                      ; empty: midpoint of (c_tilde, 2)
    delta = 0.05
    calibrate = false         ; resonant_well only: bisect the bump height
    calibrate_hi = 60.0       ; upper end of the height bracket

    [lambda]
    start = 0.0
    stop = 2.0
    count = 21

    [mu]
    start = 1.0
    floor = auto              ; auto (3 x level spacing) or a number
    count = 8

    [epsilon]
    count = 12                ; schedule eps1/2, ..., eps1/2^count
    substeps = 16
    lambda = 1.0              ; spectral point for proof-trace
    mu = 0.5

    [smooth]
    weight = L_max            ; L_max, one or zero
    cap = 10.0
    samples = 8

    [run]
    seed = 0
    threads = 1               ; LAPLAB_THREADS overrides
    solve_tol = 1e-10
    eig_tol = 1e-9
    samples = 100
    output = laplab-out

Comments start with ``;`` or ``#``.  Unknown sections or keys are errors.
The hash covers every field except ``run.output`` and ``run.threads``,
neither of which changes any number written.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError


@dataclass
class GridConfig:
    dims: int = 1
    half_extent: float = 20.0
    points_per_axis: int = 401
    max_unknowns: int = 250_000


@dataclass
class PotentialConfig:
    id: str = "inverse_power:eps=1,mu=1"
    c1: Optional[float] = None
    delta: float = 0.05
    calibrate: bool = False
    calibrate_hi: float = 60.0


@dataclass
class LambdaConfig:
    start: float = 0.0
    stop: float = 2.0
    count: int = 21


@dataclass
class MuConfig:
    start: float = 1.0
    floor: Optional[float] = None
    count: int = 8


@dataclass
class EpsilonConfig:
    count: int = 12
    substeps: int = 16
    # spectral point used by proof-trace
    lam: float = 1.0
    mu: float = 0.5


@dataclass
class SmoothConfig:
    weight: str = "L_max"
    cap: float = 10.0
    samples: int = 8


@dataclass
class RunSection:
    seed: int = 0
    threads: int = 1
    solve_tol: float = 1e-10
    eig_tol: float = 1e-9
    samples: int = 100
    output: str = "laplab-out"


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    lam: LambdaConfig = field(default_factory=LambdaConfig)
    mu: MuConfig = field(default_factory=MuConfig)
    epsilon: EpsilonConfig = field(default_factory=EpsilonConfig)
    smooth: SmoothConfig = field(default_factory=SmoothConfig)
    run: RunSection = field(default_factory=RunSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return config_hash(self)

    def to_ini(self) -> str:
        return dump_config(self)


# INI section name -> (attribute, key renames)
_SECTIONS = {
    "grid": ("grid", {}),
    "potential": ("potential", {}),
    "lambda": ("lam", {}),
    "mu": ("mu", {}),
    "epsilon": ("epsilon", {"lambda": "lam"}),
    "smooth": ("smooth", {}),
    "run": ("run", {}),
}
_WEIGHTS = ("L_max", "one", "zero")


def _convert(section: str, key: str, raw: str, default, annotation: str):
    raw = raw.strip()
    where = f"[{section}] {key}"
    try:
        if annotation.startswith("Optional"):
            if raw == "" or raw.lower() in ("auto", "none"):
                return None
            return float(raw)
        if annotation == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if annotation == "int":
            return int(raw)
        if annotation == "float":
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError(raw)
            return val
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {annotation}") from None


def parse_config(text: str) -> RunConfig:
    """Parse INI text into a validated :class:`RunConfig`."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"),
                                       interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = RunConfig()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        attr, renames = _SECTIONS[section]
        target = getattr(cfg, attr)
        types = {f.name: str(f.type) for f in fields(target)}
        for key, raw in parser.items(section):
            name = renames.get(key, key)
            if name not in types:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            setattr(target, name, _convert(section, key, raw, getattr(target, name), types[name]))
    validate_config(cfg)
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def validate_config(cfg: RunConfig) -> None:
    g = cfg.grid
    if g.dims not in (1, 2, 3):
        raise ConfigError(f"[grid] dims must be 1, 2 or 3, got {g.dims}")
    if g.points_per_axis < 3 or g.points_per_axis % 2 == 0:
        raise ConfigError(f"[grid] points_per_axis must be odd and >= 3, got {g.points_per_axis}")
    if not g.half_extent > 0:
        raise ConfigError("[grid] half_extent must be positive")
    if cfg.potential.c1 is not None and not 0 <= cfg.potential.c1 < 2:
        raise ConfigError("[potential] c1 must lie in [0, 2)")
    if not 0 < cfg.potential.delta < 0.25:
        raise ConfigError("[potential] delta must lie in (0, 1/4)")
    if cfg.lam.count < 1 or cfg.lam.stop < cfg.lam.start:
        raise ConfigError("[lambda] needs count >= 1 and stop >= start")
    if cfg.mu.count < 1 or not cfg.mu.start > 0:
        raise ConfigError("[mu] needs count >= 1 and start > 0")
    if cfg.mu.floor is not None and not 0 < cfg.mu.floor <= cfg.mu.start:
        raise ConfigError("[mu] floor must lie in (0, start]")
    if cfg.epsilon.count < 3 or cfg.epsilon.substeps < 16:
        raise ConfigError("[epsilon] needs count >= 3 and substeps >= 16")
    if not cfg.epsilon.mu > 0:
        raise ConfigError("[epsilon] mu must be positive")
    if cfg.smooth.weight not in _WEIGHTS:
        raise ConfigError(f"[smooth] weight must be one of {', '.join(_WEIGHTS)}")
    if cfg.run.threads < 1:
        raise ConfigError("[run] threads must be >= 1")


def _ini_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    """Canonical INI text; ``parse_config(dump_config(c)) == c``."""
    lines = []
    for section, (attr, renames) in _SECTIONS.items():
        inverse = {v: k for k, v in renames.items()}
        lines.append(f"[{section}]")
        for f in fields(getattr(cfg, attr)):
            key = inverse.get(f.name, f.name)
            value = _ini_value(getattr(getattr(cfg, attr), f.name))
            lines.append(f"{key} = {value}".rstrip())
        lines.append("")
    return "\n".join(lines)


def apply_overrides(cfg: RunConfig, items) -> RunConfig:
    """Apply ``section.key=value`` strings on top of ``cfg``; returns a new config."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(dump_config(cfg))
    for item in items or ():
        lhs, sep, value = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        if not parser.has_section(section):
            raise ConfigError(f"unknown section [{section}] in override {item!r}")
        if not parser.has_option(section, key):
            raise ConfigError(f"unknown key {key!r} in [{section}] (override {item!r})")
        parser.set(section, key, value.strip())
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}".rstrip() for k, v in parser.items(section))
    return parse_config("\n".join(lines))


def config_hash(cfg: RunConfig) -> str:
    """First 16 hex digits of SHA-256 over the canonical JSON of the hashed fields."""
    d = cfg.to_dict()
    d["run"] = {k: v for k, v in d["run"].items() if k not in ("output", "threads")}
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
