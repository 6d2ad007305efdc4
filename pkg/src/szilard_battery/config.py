"""TOML run configuration with strict key checking.

Every section mirrors a dataclass of the library.  Unknown sections or keys
and wrongly typed values raise :class:`ConfigError` naming the field and,
when the file is available, its line.
"""
from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .channels import DetectorModel, RecoilGeometry, SweepParams
from .engine import BACKENDS, EngineConfig
from .errors import ConfigError
from .fock import FockSpace

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

DEFAULT_P_SET = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    shots: int = 10_000
    threads: int = 1
    cycles: int = 10
    p_up: tuple = DEFAULT_P_SET
    backends: tuple = BACKENDS


@dataclass(frozen=True)
class EngineSection:
    use_sweep: bool = False
    heating_per_cycle: float = 0.02
    cycle_time: float = 455.0
    initial_nbar: float = 0.009
    recoil_samples: int = 20_000
    pump_photon_pairs: int = 0
    max_leakage: float = 1e-3


@dataclass(frozen=True)
class SpaceSection:
    n_max: int = 10
    pad: int = 20


@dataclass(frozen=True)
class Figure4Section:
    p_grid: tuple = tuple(np.round(np.arange(1, 26) * 0.02, 2))
    backend: str = "exact_channel"


@dataclass(frozen=True)
class CalibrateSection:
    target: float = 0.5
    shots: int = 100_000
    m1_shots: int = 10_000
    m2_samples: int = 20_000
    verify_shots: int = 10_000


@dataclass(frozen=True)
class JarzynskiSection:
    p_grid: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    shots: int = 100_000
    mode: str = "ideal"  # ideal | sweep | errors


JARZYNSKI_MODES = ("ideal", "sweep", "errors")

SECTIONS = {
    "run": RunSection,
    "engine": EngineSection,
    "space": SpaceSection,
    "detector": DetectorModel,
    "geometry": RecoilGeometry,
    "sweep": SweepParams,
    "figure4": Figure4Section,
    "calibrate": CalibrateSection,
    "jarzynski": JarzynskiSection,
}


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    engine: EngineSection = field(default_factory=EngineSection)
    space: SpaceSection = field(default_factory=SpaceSection)
    detector: DetectorModel = field(default_factory=DetectorModel)
    geometry: RecoilGeometry = field(default_factory=RecoilGeometry)
    sweep: SweepParams = field(default_factory=SweepParams)
    figure4: Figure4Section = field(default_factory=Figure4Section)
    calibrate: CalibrateSection = field(default_factory=CalibrateSection)
    jarzynski: JarzynskiSection = field(default_factory=JarzynskiSection)

    def engine_config(self, p_up: float, backend: str, cycles: int = None, **overrides) -> EngineConfig:
        cycles = self.run.cycles if cycles is None else cycles
        kw = dict(
            p_up=p_up,
            cycles=cycles,
            backend=backend,
            detector=self.detector,
            geometry=self.geometry,
            sweep=self.sweep,
            space=FockSpace.for_cycles(cycles, n_max=self.space.n_max, pad=self.space.pad),
            shots=self.run.shots,
            seed=self.run.seed,
            threads=self.run.threads,
            **{f.name: getattr(self.engine, f.name) for f in fields(EngineSection)},
        )
        kw.update(overrides)
        return EngineConfig(**kw)

    def as_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            sec = getattr(self, name)
            out[name] = {f.name: _plain(getattr(sec, f.name)) for f in fields(sec)}
        return out


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _find_line(text: str, section: str, key: str = None):
    """1-based line of ``[section]`` (or of ``key`` inside it), else None."""
    if text is None:
        return None
    current = None
    header = re.compile(r"^\s*\[\s*([^\]]+?)\s*\]")
    for i, line in enumerate(text.splitlines(), start=1):
        m = header.match(line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section and re.match(rf"^\s*{re.escape(key)}\s*=", line):
            return i
    return None


def _where(source, text, section, key=None):
    line = _find_line(text, section, key)
    loc = f"{source}:{line}" if line else str(source)
    return f"{loc}: [{section}]" + (f" {key}" if key else "")


def _coerce(value, default, where):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, (int, np.integer)) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, (float, np.floating)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        if default:
            return tuple(_coerce(v, default[0], where) for v in value)
        return tuple(value)
    return value


def parse_config(data: dict, source: str = "<config>", text: str = None) -> RunConfig:
    sections = {}
    for name, body in data.items():
        if name not in SECTIONS:
            raise ConfigError(f"{_where(source, text, name)}: unknown section; expected one of {sorted(SECTIONS)}")
        if not isinstance(body, dict):
            raise ConfigError(f"{source}: '{name}' must be a [section] table")
        cls = SECTIONS[name]
        defaults = cls()
        known = {f.name for f in fields(cls)}
        kw = {}
        for key, value in body.items():
            where = _where(source, text, name, key)
            if key not in known:
                raise ConfigError(f"{where}: unknown key; expected one of {sorted(known)}")
            kw[key] = _coerce(value, getattr(defaults, key), where)
        try:
            sections[name] = cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{_where(source, text, name)}: {exc}") from exc
    cfg = RunConfig(**sections)
    _validate(cfg, source, text)
    return cfg


def _validate(cfg: RunConfig, source, text):
    for b in cfg.run.backends:
        if b not in BACKENDS:
            raise ConfigError(f"{_where(source, text, 'run', 'backends')}: unknown backend {b!r}")
    for p in cfg.run.p_up:
        if not 0.0 <= p <= 0.5:
            raise ConfigError(f"{_where(source, text, 'run', 'p_up')}: {p} outside [0, 0.5]")
    for p in cfg.figure4.p_grid + cfg.jarzynski.p_grid:
        if not 0.0 < p <= 0.5:
            raise ConfigError(f"{source}: p_grid values must lie in (0, 0.5], got {p}")
    if cfg.figure4.backend not in BACKENDS:
        raise ConfigError(f"{_where(source, text, 'figure4', 'backend')}: unknown backend")
    if cfg.jarzynski.mode not in JARZYNSKI_MODES:
        raise ConfigError(f"{_where(source, text, 'jarzynski', 'mode')}: choose from {JARZYNSKI_MODES}")
    if cfg.run.shots < 1 or cfg.run.threads < 1 or cfg.run.cycles < 0:
        raise ConfigError(f"{_where(source, text, 'run')}: shots and threads must be >= 1, cycles >= 0")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, str(path), text)
