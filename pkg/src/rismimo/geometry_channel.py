"""
System geometry and deterministic RIS-to-array channel.

The RIS sits on the line x = 0 and the active array on the line x = D, both
centered on the x-axis. The array boresight points toward the RIS (the -x
direction), so the look angle of a pair is ``atan2(y_ris - y_active, D)``.

All gains are stored linear; dB values are converted once, in the
constructors.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class InvalidGeometryError(ValueError):
    pass


class DegenerateArrayError(ValueError):
    pass


class SectorCoversRisError(ValueError):
    """The directional sector already spans the whole RIS; use d_A = lambda/2."""


def db2lin(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def lin2db(x):
    return 10.0 * np.log10(x)


@dataclass(frozen=True)
class SystemGeometry:
    n_active: int
    n_ris: int
    distance: float
    active_spacing: float
    ris_spacing: float
    wavelength: float
    active_pos: np.ndarray = field(repr=False)
    ris_pos: np.ndarray = field(repr=False)
    pair_distance: np.ndarray = field(repr=False)
    look_angle: np.ndarray = field(repr=False)

    def far_field_ok(self, active_size: float, ris_size: float) -> bool:
        """Per-element far-field check ``d_ij > 2 max(Da^2, Dr^2) / lambda``."""
        limit = 2.0 * max(active_size**2, ris_size**2) / self.wavelength
        return bool(np.all(self.pair_distance > limit))


def _centered_line(n: int, spacing: float) -> np.ndarray:
    return (np.arange(n) - (n - 1) / 2.0) * spacing


def build_geometry(n_active, n_ris, active_spacing, ris_spacing, distance, wavelength):
    """Lay out both arrays and tabulate pair distances and look angles.

    Parameters
    ----------
    n_active, n_ris : int
        Element counts; ``n_ris >= n_active >= 1``.
    active_spacing, ris_spacing, distance, wavelength : float
        Meters.

    Returns
    -------
    SystemGeometry
    """
    if n_active < 1 or n_ris < 1:
        raise InvalidGeometryError("element counts must be positive")
    if n_ris < n_active:
        raise InvalidGeometryError(f"need n_ris >= n_active, got {n_ris} < {n_active}")
    for name, val in [
        ("active_spacing", active_spacing),
        ("ris_spacing", ris_spacing),
        ("distance", distance),
        ("wavelength", wavelength),
    ]:
        if not val > 0:
            raise InvalidGeometryError(f"{name} must be positive, got {val}")

    ya = _centered_line(n_active, active_spacing)
    yr = _centered_line(n_ris, ris_spacing)
    active_pos = np.column_stack([np.full(n_active, float(distance)), ya])
    ris_pos = np.column_stack([np.zeros(n_ris), yr])
    dy = yr[None, :] - ya[:, None]
    pair_distance = np.hypot(float(distance), dy)
    look_angle = np.arctan2(dy, float(distance))
    for arr in (active_pos, ris_pos, pair_distance, look_angle):
        arr.setflags(write=False)
    return SystemGeometry(
        n_active=int(n_active),
        n_ris=int(n_ris),
        distance=float(distance),
        active_spacing=float(active_spacing),
        ris_spacing=float(ris_spacing),
        wavelength=float(wavelength),
        active_pos=active_pos,
        ris_pos=ris_pos,
        pair_distance=pair_distance,
        look_angle=look_angle,
    )


def directional_spacing(n_active, n_ris, ris_spacing, distance, half_angle):
    """Active-element spacing that keeps every RIS element inside some sector."""
    if n_active <= 2:
        raise DegenerateArrayError(f"directional spacing needs n_active >= 3, got {n_active}")
    span = (n_ris - 1) * ris_spacing
    numerator = span - 2.0 * distance * math.tan(half_angle)
    if not numerator > 1e-12 * span:
        raise SectorCoversRisError(
            "sector already covers the RIS (non-positive numerator); use half-wavelength spacing"
        )
    return numerator / (n_active - 2)


@dataclass(frozen=True)
class AntennaPattern:
    """Element gain pattern, linear scale.

    ``back_lobe`` is the linear gain outside the sector of a directional
    element; zero means no radiation there.
    """

    kind: str
    gain: float
    half_angle: float = math.pi
    back_lobe: float = 0.0

    def __post_init__(self):
        if self.kind not in ("omni", "directional"):
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        if self.kind == "directional" and not 0 < self.half_angle < math.pi / 2:
            raise ValueError("sector half-angle must lie in (0, pi/2)")
        if not (math.isfinite(self.gain) and self.gain >= 0):
            raise ValueError("gain must be finite and nonnegative")

    @classmethod
    def omni(cls, gain_db: float = 3.0) -> "AntennaPattern":
        return cls("omni", float(db2lin(gain_db)))

    @classmethod
    def directional(
        cls, gain_db: float, half_angle: float, back_lobe_db: Optional[float] = None
    ) -> "AntennaPattern":
        back = 0.0 if back_lobe_db is None else float(db2lin(back_lobe_db))
        return cls("directional", float(db2lin(gain_db)), float(half_angle), back)

    def __call__(self, theta):
        return antenna_gain(self, theta)


def antenna_gain(pattern: AntennaPattern, theta):
    theta = np.asarray(theta, dtype=float)
    if pattern.kind == "omni":
        return np.full(theta.shape, pattern.gain)
    return np.where(np.abs(theta) <= pattern.half_angle, pattern.gain, pattern.back_lobe)


@dataclass(frozen=True)
class ChannelModelParams:
    ris_efficiency: float = 1.0
    carrier_hz: float = 1.9e9
    pl_offset_db: float = 32.4
    pl_distance_coef: float = 21.0
    pl_frequency_coef: float = 20.0
    pl_min_distance_m: float = 1.0
    noise_psd_dbm_hz: float = -174.0
    bandwidth_hz: float = 20e6
    noise_figure_db: float = 5.0

    def __post_init__(self):
        if not 0 < self.ris_efficiency <= 1:
            raise ValueError("ris_efficiency must lie in (0, 1]")
        if not self.noise_power > 0:
            raise ValueError("noise power must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def noise_power(self) -> float:
        """Receiver noise power in watts."""
        dbm = self.noise_psd_dbm_hz + 10 * math.log10(self.bandwidth_hz) + self.noise_figure_db
        return 10 ** ((dbm - 30) / 10)


@dataclass(frozen=True)
class ChannelMatrix:
    entries: np.ndarray
    geometry: SystemGeometry = field(repr=False)

    @property
    def shape(self):
        return self.entries.shape


def build_H(geometry: SystemGeometry, array_pattern, ris_pattern, params: ChannelModelParams):
    """Free-space RIS-to-array matrix with per-pair element gains."""
    d = geometry.pair_distance
    if np.any(d <= 0):
        raise InvalidGeometryError("zero pair distance")
    lam = geometry.wavelength
    theta = geometry.look_angle
    amp = np.sqrt(params.ris_efficiency * array_pattern(theta) * ris_pattern(theta))
    entries = amp * lam / (4 * np.pi * d) * np.exp(-2j * np.pi * d / lam)
    entries.setflags(write=False)
    return ChannelMatrix(entries, geometry)


def pathloss(distance_3d, params: ChannelModelParams):
    """Linear large-scale gain from a UMi-LOS style closed form."""
    d = np.asarray(distance_3d, dtype=float)
    if np.any(d < params.pl_min_distance_m):
        warnings.warn(
            f"distance below {params.pl_min_distance_m} m clamped", RuntimeWarning, stacklevel=2
        )
        d = np.maximum(d, params.pl_min_distance_m)
    pl_db = (
        params.pl_offset_db
        + params.pl_distance_coef * np.log10(d)
        + params.pl_frequency_coef * np.log10(params.carrier_hz / 1e9)
    )
    return 10.0 ** (-pl_db / 10.0)


def draw_small_scale(beta, n, rng: np.random.Generator, batch=()):
    """Rayleigh vectors with covariance ``beta * I``.

    Returns an array of shape ``batch + np.shape(beta) + (n,)``.
    """
    beta = np.asarray(beta, dtype=float)
    if np.any(beta < 0):
        raise ValueError("beta must be nonnegative")
    shape = tuple(batch) + beta.shape + (n,)
    scale = np.sqrt(beta / 2.0)[..., None]
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def compose_effective_channel(H, phasors, h):
    """Composite channel ``H diag(phasors) h`` over the last axis of ``h``."""
    H = np.asarray(H)
    phasors = np.asarray(phasors)
    h = np.asarray(h)
    if phasors.shape != (H.shape[1],) or h.shape[-1] != H.shape[1]:
        raise ValueError(
            f"shape mismatch: H {H.shape}, phasors {phasors.shape}, h {h.shape}"
        )
    return (h * phasors) @ H.T


@dataclass
class UserLink:
    position: np.ndarray
    beta: float
    pilot: int
    uplink_power: float
    downlink_power: Optional[float] = None
    h: Optional[np.ndarray] = None
