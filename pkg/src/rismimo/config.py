"""
Experiment configuration: TOML sections, defaults, unit-suffixed keys.

Every key that carries a unit spells it in its suffix (``_db``, ``_dbw``,
``_hz``, ``_w``, ``_m``, ``_deg``, ``_lambda``). Logarithmic values are turned
into linear ones by the derived properties only.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import tomli
import tomli_w

from .estimation import num_training_configs
from .geometry_channel import SPEED_OF_LIGHT, ChannelModelParams
from .performance import training_prelog

UNIT_SUFFIXES = ("_dbm_hz", "_dbw", "_db", "_hz", "_w", "_m", "_deg", "_lambda")

ANTENNAS = ("omni", "directional")
PHASES = ("random", "optimized")
MEASURES = ("pcsi", "ub", "lb")


class ConfigError(ValueError):
    pass


class UnknownKeyError(ConfigError):
    def __init__(self, key: str):
        super().__init__(f"unknown config key {key!r}")
        self.key = key


class UnitSuffixError(ConfigError):
    def __init__(self, key: str, expected: str):
        super().__init__(f"config key {key!r} has the wrong unit; expected {expected!r}")
        self.key = key
        self.expected = expected


def _f(section, default, **kw):
    return field(default=default, metadata={"section": section}, **kw)


def _l(section, default):
    return field(default_factory=lambda: list(default), metadata={"section": section})


@dataclass
class ExperimentConfig:
    # system
    n_active: int = _f("system", 16)
    n_ris: int = _f("system", 64)
    num_users: int = _f("system", 8)
    carrier_hz: float = _f("system", 1.9e9)
    bandwidth_hz: float = _f("system", 20e6)
    noise_psd_dbm_hz: float = _f("system", -174.0)
    noise_figure_db: float = _f("system", 5.0)
    array_height_m: float = _f("system", 10.0)
    ue_height_m: float = _f("system", 1.5)
    # geometry; spacings and distance in wavelengths
    distance_lambda: float = _f("geometry", 5.0)
    ris_spacing_lambda: float = _f("geometry", 0.5)
    active_spacing_lambda: float = _f("geometry", 0.5)
    ris_efficiency: float = _f("geometry", 1.0)
    omni_gain_db: float = _f("geometry", 3.0)
    ris_gain_db: float = _f("geometry", 3.0)
    directional_gain_db: float = _f("geometry", 10.0)
    sector_half_angle_deg: float = _f("geometry", 60.0)
    back_lobe_db: float = _f("geometry", -math.inf)
    # user drop
    user_sector_deg: float = _f("users", 120.0)
    min_distance_m: float = _f("users", 10.0)
    max_distance_m: float = _f("users", 400.0)
    # large-scale fading
    pl_offset_db: float = _f("pathloss", 32.4)
    pl_distance_coef: float = _f("pathloss", 21.0)
    pl_frequency_coef: float = _f("pathloss", 20.0)
    pl_min_distance_m: float = _f("pathloss", 1.0)
    # training
    pilot_length: int = _f("training", 16)
    coherence_length: int = _f("training", 200)
    uplink_power_w: float = _f("training", 0.8)
    phase_bits: int = _f("training", 3)
    energy_fraction: float = _f("training", 0.98)
    energy_mode: str = _f("training", "sum")
    num_configs: int = _f("training", 0)
    # downlink
    p_max_dbw: float = _f("downlink", 7.0)
    pcsi_prelog: float = _f("downlink", 1.0)
    overhead: str = _f("downlink", "single")
    # optimizer
    objectives: list = _l("optimizer", ["f1", "f2"])
    rel_tol: float = _f("optimizer", 1e-6)
    max_sweeps: int = _f("optimizer", 50)
    # experiment
    antennas: list = _l("experiment", ANTENNAS)
    phases: list = _l("experiment", PHASES)
    measures: list = _l("experiment", MEASURES)
    baseline: bool = _f("experiment", True)
    drops: int = _f("experiment", 100)
    draws: int = _f("experiment", 100)
    seed: int = _f("experiment", 0)

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive = [
            "n_active", "n_ris", "num_users", "carrier_hz", "bandwidth_hz",
            "array_height_m", "ue_height_m", "distance_lambda", "ris_spacing_lambda",
            "active_spacing_lambda", "ris_efficiency", "min_distance_m", "max_distance_m",
            "pilot_length", "coherence_length", "uplink_power_w", "phase_bits",
            "energy_fraction", "pcsi_prelog", "rel_tol", "max_sweeps", "drops", "draws",
            "pl_min_distance_m", "user_sector_deg", "sector_half_angle_deg",
        ]  # fmt: skip
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.n_ris < self.n_active:
            raise ConfigError("n_ris must be at least n_active")
        if self.ris_efficiency > 1 or self.energy_fraction > 1 or self.pcsi_prelog > 1:
            raise ConfigError("ris_efficiency, energy_fraction and pcsi_prelog must be <= 1")
        if self.min_distance_m >= self.max_distance_m:
            raise ConfigError("min_distance_m must be below max_distance_m")
        if self.num_configs < 0:
            raise ConfigError("num_configs must be >= 0 (0 selects ceil(n_ris / n_active))")
        if self.energy_mode not in ("sum", "squared"):
            raise ConfigError(f"energy_mode must be 'sum' or 'squared', got {self.energy_mode!r}")
        if self.overhead not in ("single", "repeated"):
            raise ConfigError(f"overhead must be 'single' or 'repeated', got {self.overhead!r}")
        for name, allowed in [
            ("objectives", ("f1", "f2")),
            ("antennas", ANTENNAS),
            ("phases", PHASES),
            ("measures", MEASURES),
        ]:
            bad = [v for v in getattr(self, name) if v not in allowed]
            if bad:
                raise ConfigError(f"{name}: unsupported values {bad}")
        if not self.prelog_bar > 0:
            raise ConfigError("pilot overhead leaves no room for data")

    # derived quantities
    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def resolved_num_configs(self) -> int:
        return self.num_configs or num_training_configs(self.n_active, self.n_ris)

    @property
    def p_max_w(self) -> float:
        return 10 ** (self.p_max_dbw / 10)

    @property
    def prelog_bar(self) -> float:
        reps = self.resolved_num_configs if self.overhead == "repeated" else 1
        return training_prelog(self.pilot_length, self.coherence_length, reps)

    @property
    def channel_params(self) -> ChannelModelParams:
        return ChannelModelParams(
            ris_efficiency=self.ris_efficiency,
            carrier_hz=self.carrier_hz,
            pl_offset_db=self.pl_offset_db,
            pl_distance_coef=self.pl_distance_coef,
            pl_frequency_coef=self.pl_frequency_coef,
            pl_min_distance_m=self.pl_min_distance_m,
            noise_psd_dbm_hz=self.noise_psd_dbm_hz,
            bandwidth_hz=self.bandwidth_hz,
            noise_figure_db=self.noise_figure_db,
        )

    @property
    def noise_power(self) -> float:
        return self.channel_params.noise_power

    def modes(self) -> list:
        """Enabled output modes as ``antenna/phase/measure`` labels, in emission order."""
        out = []
        for ant in self.antennas:
            if "random" in self.phases:
                out += [f"{ant}/random/{m}" for m in self.measures]
            if "optimized" in self.phases:
                for obj in self.objectives:
                    out += [f"{ant}/opt_{obj}/{m}" for m in self.measures if m != "lb"]
        if self.baseline:
            out += [f"baseline/none/{m}" for m in self.measures]
        return out

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
SECTIONS = tuple(dict.fromkeys(f.metadata["section"] for f in _FIELDS.values()))


def _unit_violation(key: str) -> Optional[str]:
    """Name of the known key that ``key`` would be with the right unit suffix."""
    stem = key
    for suf in UNIT_SUFFIXES:
        if key.endswith(suf):
            stem = key[: -len(suf)]
            break
    for name in _FIELDS:
        for suf in UNIT_SUFFIXES:
            if name.endswith(suf) and name[: -len(suf)] == stem and name != key:
                return name
    return None


def _check_key(key: str, section: Optional[str] = None):
    if key not in _FIELDS:
        expected = _unit_violation(key)
        if expected is not None:
            raise UnitSuffixError(key, expected)
        raise UnknownKeyError(key)
    if section is not None and _FIELDS[key].metadata["section"] != section:
        raise UnknownKeyError(f"{section}.{key}")


def _coerce(key: str, value):
    default = _FIELDS[key].default
    if default is dataclasses.MISSING:
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a list")
        return list(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    return value


def config_from_mapping(data: dict) -> ExperimentConfig:
    values = {}
    for section, body in data.items():
        if section not in SECTIONS:
            raise UnknownKeyError(section)
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in body.items():
            _check_key(key, section)
            values[key] = _coerce(key, value)
    return ExperimentConfig(**values)


def loads_config(text: str) -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return config_from_mapping(data)


def parse_config(path=None, overrides=()) -> ExperimentConfig:
    """Read a TOML config file (``None`` means all defaults) and apply ``key=value`` overrides."""
    cfg = ExperimentConfig() if path is None else loads_config(Path(path).read_text())
    return apply_overrides(cfg, overrides) if overrides else cfg


def parse_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = (s.strip() for s in item.split("=", 1))
    key = key.rsplit(".", 1)[-1]
    _check_key(key)
    try:
        value = tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        value = raw
    return key, _coerce(key, value)


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    changes = dict(parse_override(o) for o in overrides)
    return cfg.replace(**changes)


def config_to_mapping(cfg: ExperimentConfig) -> dict:
    out = {s: {} for s in SECTIONS}
    for name, f in _FIELDS.items():
        out[f.metadata["section"]][name] = getattr(cfg, name)
    return out


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_mapping(cfg))
