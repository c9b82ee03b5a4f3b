"""Run configuration: INI-style files with sections, or JSON.

Example::

    [grid]
    h = 0.01
    interp_order = 8

    [tt]
    coefficients = 1, 0.3, -0.5, 0.2, 0.7, -1

Unknown sections or keys are rejected so that typos cannot silently fall
back to defaults.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .hyperbolic import DEFAULT_INJ_RHO

# section -> field names; the flat dataclass below holds them all
SECTIONS = {
    "grid": ("h", "interp_order", "word_budget"),
    "series": ("L",),
    "solver": ("tol", "max_iter", "damping_floor"),
    "tt": ("coefficients", "coefficient_file", "schedule"),
    "geometry": ("inj_rho",),
    "mms": ("r_patch", "mms_levels", "mms_amplitude"),
    "roundtrip": ("n_random", "refine"),
    "scan": ("n_rays", "scales"),
    "run": ("out", "seed"),
}


@dataclass
class RunConfig:
    h: float = 0.01
    interp_order: int = 8
    word_budget: int = 8
    L: int = 8
    tol: float = 1e-10
    max_iter: int = 50
    damping_floor: float = 1e-4
    coefficients: list = field(default_factory=lambda: [1.0, 0.3, -0.5, 0.2, 0.7, -1.0])
    coefficient_file: str | None = None
    schedule: list = field(default_factory=list)
    inj_rho: float = DEFAULT_INJ_RHO
    r_patch: float = 0.5
    mms_levels: list = field(default_factory=lambda: [0.04, 0.02, 0.01])
    mms_amplitude: float = 0.1
    n_random: int = 10
    refine: bool = False
    n_rays: int = 4
    scales: list = field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0, 8.0])
    out: str = "runs"
    seed: int = 0

    # -- validation ----------------------------------------------------------
    def validate(self):
        if not (self.h > 0):
            raise ConfigError(f"h must be positive, got {self.h}")
        if self.L < 0:
            raise ConfigError("L must be >= 0")
        if not (self.tol > 0):
            raise ConfigError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if self.interp_order < 4 or self.interp_order % 2:
            raise ConfigError("interp_order must be an even integer >= 4")
        for name in ("schedule", "scales", "mms_levels"):
            seq = getattr(self, name)
            if name == "mms_levels":
                seq = [-x for x in seq]
            if any(b <= a for a, b in zip(seq, seq[1:])):
                raise ConfigError(f"{name} must be strictly monotone "
                                  f"({'descending' if name == 'mms_levels' else 'ascending'})")
        if any(s <= 0 for s in self.scales) or any(s <= 0 for s in self.schedule):
            raise ConfigError("scales and schedule entries must be positive")
        if len(self.coefficients) != 6:
            raise ConfigError("coefficients must have 6 entries")
        if not all(np.isfinite(self.coefficients)):
            raise ConfigError("coefficients must be finite")
        if not (self.inj_rho > 0):
            raise ConfigError("inj_rho must be positive")
        if not (0 < self.r_patch <= 0.5):
            raise ConfigError("r_patch must lie in (0, 0.5]")
        return self

    # -- serialization -------------------------------------------------------
    def to_dict(self):
        return dataclasses.asdict(self)

    def canonical_json(self):
        """Byte-stable serialization (sorted keys, fixed separators)."""
        d = self.to_dict()
        d.pop("out")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:12]

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return dataclasses.replace(self, **kw).validate()

    def coefficient_vector(self):
        return np.asarray(self.coefficients, dtype=float)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_LISTS = {"coefficients", "schedule", "mms_levels", "scales"}
_INTS = {"interp_order", "word_budget", "L", "max_iter", "n_random", "n_rays", "seed"}
_BOOLS = {"refine"}
_STRS = {"coefficient_file", "out"}


def _convert(key, raw):
    try:
        if key in _LISTS:
            if isinstance(raw, str):
                return [float(x) for x in raw.replace(",", " ").split()]
            return [float(x) for x in raw]
        if key in _INTS:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(raw)
        if key in _BOOLS:
            if isinstance(raw, str):
                low = raw.strip().lower()
                if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                    raise ValueError(raw)
                return low in ("true", "yes", "1", "on")
            return bool(raw)
        if key in _STRS:
            return None if raw in (None, "") else str(raw)
        return float(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def from_dict(d: dict) -> RunConfig:
    """Build a config from a flat or sectioned mapping."""
    flat = {}
    for k, v in d.items():
        if isinstance(v, dict):
            if k not in SECTIONS:
                raise ConfigError(f"unknown section [{k}]")
            for kk, vv in v.items():
                if kk not in SECTIONS[k]:
                    raise ConfigError(f"unknown key {kk!r} in section [{k}]")
                flat[kk] = vv
        else:
            if k not in _FIELDS:
                raise ConfigError(f"unknown key {k!r}")
            flat[k] = v
    cfg = RunConfig(**{k: _convert(k, v) for k, v in flat.items()})
    if cfg.coefficient_file:
        cfg.coefficients = _read_coefficients(cfg.coefficient_file)
    return cfg.validate()


def _read_coefficients(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"coefficient file not found: {p}")
    try:
        vals = np.loadtxt(p, delimiter=None, ndmin=1, comments="#").ravel()
    except ValueError as exc:
        raise ConfigError(f"cannot parse coefficient file {p}: {exc}") from exc
    return [float(x) for x in vals]


def load_config(path) -> RunConfig:
    """Read a ``.json`` file or an INI-style file.

    Raises
    ------
    ConfigError
        Missing file, syntax error, unknown key or invalid value.
    """
    if path is None:
        return RunConfig().validate()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text()
    if p.suffix.lower() == ".json":
        try:
            return from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(p))
    except configparser.Error as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    return from_dict({s: dict(parser.items(s)) for s in parser.sections()})


def dump_ini(cfg: RunConfig) -> str:
    """INI text that :func:`load_config` reads back to the same config."""
    lines = []
    d = cfg.to_dict()
    for sec, keys in SECTIONS.items():
        lines.append(f"[{sec}]")
        for k in keys:
            v = d[k]
            if v is None:
                continue
            if isinstance(v, list):
                v = ", ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(float(v))
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)
