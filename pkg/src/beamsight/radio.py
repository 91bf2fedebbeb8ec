"""Antenna arrays, element patterns, beam codebooks and OFDM channel synthesis."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import SPEED_OF_LIGHT, direction, wrap_angle


# --------------------------------------------------------------------------
# arrays and patterns
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """Element offsets (N, 3) in metres, centred on the array origin."""

    offsets: np.ndarray
    wavelength: float

    def __post_init__(self):
        off = np.atleast_2d(np.asarray(self.offsets, dtype=float))
        if off.shape[1] != 3:
            raise ValueError("element offsets must have shape (N, 3)")
        object.__setattr__(self, "offsets", off)

    @property
    def n(self) -> int:
        return self.offsets.shape[0]

    @classmethod
    def upa_xz(cls, nx: int, nz: int, wavelength: float, spacing: float | None = None):
        """Rectangular array in the local xz-plane (broadside along +y)."""
        d = wavelength / 2.0 if spacing is None else spacing
        ix = (np.arange(nx) - (nx - 1) / 2.0) * d
        iz = (np.arange(nz) - (nz - 1) / 2.0) * d
        gx, gz = np.meshgrid(ix, iz, indexing="ij")
        off = np.stack([gx.ravel(), np.zeros(nx * nz), gz.ravel()], axis=1)
        return cls(off, wavelength)

    @classmethod
    def ula(cls, n: int, wavelength: float, axis_azimuth: float = 0.0, spacing: float | None = None):
        """Linear array in the horizontal plane along azimuth ``axis_azimuth``."""
        d = wavelength / 2.0 if spacing is None else spacing
        t = (np.arange(n) - (n - 1) / 2.0) * d
        axis = np.array([np.cos(axis_azimuth), np.sin(axis_azimuth), 0.0])
        return cls(np.outer(t, axis), wavelength)


def wave_vector(theta, phi, wavelength: float) -> np.ndarray:
    return (2.0 * np.pi / wavelength) * direction(theta, phi)


def steering_vector(geom: ArrayGeometry, theta, phi) -> np.ndarray:
    """Ideal unit-norm response; broadcasts over angle arrays (element axis last)."""
    k = wave_vector(theta, phi, geom.wavelength)
    return np.exp(-1j * (k @ geom.offsets.T)) / np.sqrt(geom.n)


def steering_derivatives(geom: ArrayGeometry, theta, phi):
    """Return the response and its partial derivatives in theta and phi."""
    a = steering_vector(geom, theta, phi)
    c = 2.0 * np.pi / geom.wavelength
    theta = np.asarray(theta, dtype=float)[..., None]
    phi = np.asarray(phi, dtype=float)[..., None]
    dx, dy, dz = geom.offsets.T
    dk_dtheta = c * (-np.sin(theta) * np.sin(phi) * dx + np.cos(theta) * np.sin(phi) * dy)
    dk_dphi = c * (np.cos(theta) * np.cos(phi) * dx + np.sin(theta) * np.cos(phi) * dy - np.sin(phi) * dz)
    return a, -1j * dk_dtheta * a, -1j * dk_dphi * a


@dataclass(frozen=True)
class RadiationPattern:
    """Parametric sector element pattern (horizontal and vertical cuts combined).

    ``boresight_az`` is the azimuth of the element boresight in the array's
    local frame; the vertical cut always peaks at the horizon (phi = 90 deg).
    With ``front_only`` set, directions behind the mounting plane are blocked.
    """

    max_gain_dbi: float = 8.0
    theta_3db_deg: float = 65.0
    sla_v_db: float = 30.0
    a_max_db: float = 30.0
    boresight_az: float = np.pi / 2
    front_only: bool = True

    @classmethod
    def isotropic(cls, boresight_az: float = np.pi / 2) -> "RadiationPattern":
        return cls(0.0, 65.0, 0.0, 0.0, boresight_az, front_only=False)

    def with_boresight(self, boresight_az: float) -> "RadiationPattern":
        return RadiationPattern(
            self.max_gain_dbi, self.theta_3db_deg, self.sla_v_db, self.a_max_db, boresight_az, self.front_only
        )

    def _attenuation(self, theta, phi):
        t3 = np.deg2rad(self.theta_3db_deg)
        dv = np.asarray(phi, dtype=float) - np.pi / 2
        dh = wrap_angle(np.asarray(theta, dtype=float) - self.boresight_az)
        av = np.minimum(12.0 * (dv / t3) ** 2, self.sla_v_db)
        ah = np.minimum(12.0 * (dh / t3) ** 2, self.a_max_db)
        return av, ah, dv, dh, t3

    def gain_db(self, theta, phi):
        av, ah, *_ = self._attenuation(theta, phi)
        return self.max_gain_dbi - np.minimum(av + ah, self.a_max_db)

    def visible(self, theta, phi):
        """Front half-space mask (always True when ``front_only`` is off)."""
        if not self.front_only:
            return np.ones(np.broadcast(np.asarray(theta), np.asarray(phi)).shape, dtype=bool)
        return np.cos(np.asarray(theta) - self.boresight_az) * np.sin(phi) > 0.0

    def amplitude(self, theta, phi):
        return 10.0 ** (self.gain_db(theta, phi) / 20.0)

    def amplitude_derivatives(self, theta, phi):
        """Amplitude and its partials in theta and phi (zero on clamped branches)."""
        av, ah, dv, dh, t3 = self._attenuation(theta, phi)
        amp = 10.0 ** ((self.max_gain_dbi - np.minimum(av + ah, self.a_max_db)) / 20.0)
        free = (av + ah) < self.a_max_db
        d_ah = np.where(12.0 * (dh / t3) ** 2 < self.a_max_db, 24.0 * dh / t3**2, 0.0)
        d_av = np.where(12.0 * (dv / t3) ** 2 < self.sla_v_db, 24.0 * dv / t3**2, 0.0)
        scale = -np.log(10.0) / 20.0 * amp * free
        return amp, scale * d_ah, scale * d_av


def element_gain(pattern: RadiationPattern, theta, phi):
    """Linear amplitude of a single element towards (theta, phi)."""
    return pattern.amplitude(theta, phi)


@dataclass(frozen=True)
class Antenna:
    array: ArrayGeometry
    pattern: RadiationPattern

    @property
    def n(self) -> int:
        return self.array.n

    def response(self, theta, phi) -> np.ndarray:
        amp = self.pattern.amplitude(theta, phi) * self.pattern.visible(theta, phi)
        return np.asarray(amp)[..., None] * steering_vector(self.array, theta, phi)


def bs_antenna(nx: int = 8, nz: int = 8, wavelength: float = SPEED_OF_LIGHT / 28e9, pattern=None) -> Antenna:
    pattern = RadiationPattern() if pattern is None else pattern
    return Antenna(ArrayGeometry.upa_xz(nx, nz, wavelength), pattern.with_boresight(np.pi / 2))


@dataclass(frozen=True)
class UePanelSet:
    """J linear panels on the device edges, all sharing the device centre.

    Panel j (0-based) has its boresight at azimuth pi/2 + j*pi/2 and its
    elements laid out along the perpendicular edge direction j*pi/2.
    """

    n_elements: int = 4
    n_panels: int = 4
    wavelength: float = SPEED_OF_LIGHT / 28e9
    pattern: RadiationPattern = field(default_factory=RadiationPattern)

    def offset(self, j: int) -> float:
        return j * np.pi / 2

    def boresight(self, j: int) -> float:
        return np.pi / 2 + self.offset(j)

    def panel(self, j: int) -> Antenna:
        if not 0 <= j < self.n_panels:
            raise ValueError(f"panel index {j} out of range")
        geom = ArrayGeometry.ula(self.n_elements, self.wavelength, axis_azimuth=self.offset(j))
        return Antenna(geom, self.pattern.with_boresight(self.boresight(j)))

    def panels(self) -> list[Antenna]:
        return [self.panel(j) for j in range(self.n_panels)]


# --------------------------------------------------------------------------
# codebooks
# --------------------------------------------------------------------------


def _check_sorted(vals, what):
    if len(vals) == 0:
        raise ValueError(f"{what} codebook is empty")
    if np.any(np.diff(vals) <= 0):
        raise ValueError(f"{what} codebook angles must be strictly increasing")


@dataclass(frozen=True, eq=False)
class TxCodebook:
    """Grid of (azimuth, elevation) beams; beam m = i_az * n_el + i_el."""

    az: np.ndarray
    el: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "az", np.asarray(self.az, dtype=float))
        object.__setattr__(self, "el", np.asarray(self.el, dtype=float))
        _check_sorted(self.az, "Tx azimuth")
        _check_sorted(self.el, "Tx elevation")

    @classmethod
    def from_degrees(cls, az_deg: Sequence[float], el_deg: Sequence[float]):
        return cls(np.deg2rad(az_deg), np.deg2rad(el_deg))

    @property
    def size(self) -> int:
        return len(self.az) * len(self.el)

    def angles(self) -> tuple[np.ndarray, np.ndarray]:
        ga, ge = np.meshgrid(self.az, self.el, indexing="ij")
        return ga.ravel(), ge.ravel()

    def index(self, i_az: int, i_el: int) -> int:
        return i_az * len(self.el) + i_el

    def weights(self, array: ArrayGeometry, subset=None) -> np.ndarray:
        """Beamformers as columns, shape (N_t, M)."""
        th, ph = self.angles()
        if subset is not None:
            th, ph = th[subset], ph[subset]
        return steering_vector(array, th, ph).T


@dataclass(frozen=True, eq=False)
class RxCodebook:
    """Panel-local azimuths; panel j steers at az + j*pi/2 with elevation pi/2."""

    az: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "az", np.asarray(self.az, dtype=float))
        _check_sorted(self.az, "Rx")

    @classmethod
    def from_degrees(cls, az_deg: Sequence[float]):
        return cls(np.deg2rad(az_deg))

    @property
    def size(self) -> int:
        return len(self.az)

    def angles(self, j: int) -> np.ndarray:
        return self.az + j * np.pi / 2

    def weights(self, array: ArrayGeometry, j: int) -> np.ndarray:
        th = self.angles(j)
        return steering_vector(array, th, np.full_like(th, np.pi / 2)).T


def default_tx_codebook() -> TxCodebook:
    g = np.arange(20.0, 161.0, 20.0)
    return TxCodebook.from_degrees(g, g)


def default_rx_codebook() -> RxCodebook:
    return RxCodebook.from_degrees(np.arange(30.0, 151.0, 15.0))


# --------------------------------------------------------------------------
# paths, schedules and channels
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PathParams:
    aoa_az: float
    aoa_el: float
    aod_az: float
    aod_el: float
    toa: float
    gain: complex
    source: int = 0
    reflection_point: tuple | None = None

    def with_gain(self, gain: complex) -> "PathParams":
        return PathParams(self.aoa_az, self.aoa_el, self.aod_az, self.aod_el, self.toa, gain, self.source, self.reflection_point)


@dataclass(frozen=True, eq=False)
class MeasurementSchedule:
    """Beams and subcarriers of one measurement instance.

    ``tx_beams`` and ``rx_beams`` are beamformer matrices with one column per
    beam (already steered for the active panel).
    """

    n_subcarriers: int
    subcarrier_spacing: float
    noise_var: float
    tx_beams: np.ndarray
    rx_beams: np.ndarray
    carrier: float = 28e9
    kind: str = "SSB"

    def __post_init__(self):
        if self.n_subcarriers < 1 or self.tx_beams.shape[1] < 1 or self.rx_beams.shape[1] < 1:
            raise ValueError("measurement schedule is empty")
        if not self.noise_var > 0:
            raise ValueError("noise variance must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier

    def with_noise(self, noise_var: float) -> "MeasurementSchedule":
        return MeasurementSchedule(
            self.n_subcarriers, self.subcarrier_spacing, noise_var, self.tx_beams, self.rx_beams, self.carrier, self.kind
        )

    @classmethod
    def ssb(cls, tx_beams, rx_beams, noise_var, n_subcarriers=240, subcarrier_spacing=60e3, carrier=28e9):
        return cls(n_subcarriers, subcarrier_spacing, noise_var, tx_beams, rx_beams, carrier, "SSB")

    @classmethod
    def csirs(cls, serving_beam, rx_beams, noise_var, n_subcarriers=330, subcarrier_spacing=60e3, carrier=28e9):
        tx = np.asarray(serving_beam).reshape(-1, 1)
        return cls(n_subcarriers, subcarrier_spacing, noise_var, tx, rx_beams, carrier, "CSI-RS")


def _path_arrays(paths: Sequence[PathParams]):
    arr = np.array([[p.aoa_az, p.aoa_el, p.aod_az, p.aod_el, p.toa] for p in paths], dtype=float).reshape(-1, 5)
    gains = np.array([p.gain for p in paths], dtype=complex)
    return arr, gains


def delay_phases(toa, n_subcarriers: int, spacing: float) -> np.ndarray:
    """exp(-j 2 pi n df tau), shape (L, N_s)."""
    n = np.arange(n_subcarriers)
    return np.exp(-2j * np.pi * spacing * np.outer(np.atleast_1d(toa), n))


def channel_matrix(paths: Sequence[PathParams], tx: Antenna, rx: Antenna, n: int, subcarrier_spacing: float) -> np.ndarray:
    """N_r x N_t channel at subcarrier n."""
    h = np.zeros((rx.n, tx.n), dtype=complex)
    for p in paths:
        a_r = rx.response(p.aoa_az, p.aoa_el)
        a_t = tx.response(p.aod_az, p.aod_el)
        ph = np.exp(-2j * np.pi * n * subcarrier_spacing * p.toa)
        h += ph * p.gain * np.outer(a_r, a_t.conj())
    return np.sqrt(tx.n * rx.n) * h


def effective_channel(h: np.ndarray, w_tx: np.ndarray, w_rx: np.ndarray) -> complex:
    """w_rx^H H w_tx for single beam vectors."""
    h = np.asarray(h)
    if h.shape != (w_rx.shape[0], w_tx.shape[0]):
        raise ValueError(f"beam sizes {w_rx.shape[0]}x{w_tx.shape[0]} do not match channel {h.shape}")
    return complex(w_rx.conj() @ h @ w_tx)


def beam_factors(paths: Sequence[PathParams], tx: Antenna, rx: Antenna, w_tx: np.ndarray, w_rx: np.ndarray):
    """Per-path receive and transmit factors of the effective channel.

    Returns (r, t) with r[l, m_r] = rho_r * w_rx[:, m_r]^H a~_r and
    t[l, m_t] = rho_t * a~_t^H w_tx[:, m_t].
    """
    arr, _ = _path_arrays(paths)
    a_r = rx.response(arr[:, 0], arr[:, 1])  # (L, N_r), includes rho_r
    a_t = tx.response(arr[:, 2], arr[:, 3])
    r = a_r @ np.asarray(w_rx).reshape(rx.n, -1).conj()
    t = a_t.conj() @ np.asarray(w_tx).reshape(tx.n, -1)
    return r, t


def effective_channel_tensor(paths: Sequence[PathParams], tx: Antenna, rx: Antenna, schedule: MeasurementSchedule) -> np.ndarray:
    """Noise-free beam-domain channel H~[m_r, m_t, n]."""
    if len(paths) == 0:
        return np.zeros((schedule.rx_beams.shape[1], schedule.tx_beams.shape[1], schedule.n_subcarriers), dtype=complex)
    arr, gains = _path_arrays(paths)
    r, t = beam_factors(paths, tx, rx, schedule.tx_beams, schedule.rx_beams)
    e = delay_phases(arr[:, 4], schedule.n_subcarriers, schedule.subcarrier_spacing)
    s = np.sqrt(tx.n * rx.n)
    return s * np.einsum("l,lr,lt,ln->rtn", gains, r, t, e)


def beamforming_gain(paths: Sequence[PathParams], tx: Antenna, rx: Antenna, w_tx, w_rx, n_subcarriers: int, subcarrier_spacing: float) -> float:
    """Sum over subcarriers of |w_rx^H H(n) w_tx| for one beam pair."""
    if len(paths) == 0:
        return 0.0
    arr, gains = _path_arrays(paths)
    r, t = beam_factors(paths, tx, rx, w_tx, w_rx)
    coef = np.sqrt(tx.n * rx.n) * gains * r[:, 0] * t[:, 0]
    e = delay_phases(arr[:, 4], n_subcarriers, subcarrier_spacing)
    return float(np.abs(coef @ e).sum())


def observe(paths: Sequence[PathParams], tx: Antenna, rx: Antenna, schedule: MeasurementSchedule, rng: np.random.Generator) -> np.ndarray:
    """Noisy beam-domain observations Y[m_r, m_t, n]."""
    h = effective_channel_tensor(paths, tx, rx, schedule)
    z = rng.standard_normal(h.shape + (2,)) @ np.array([1.0, 1j])
    return h + np.sqrt(schedule.noise_var / 2.0) * z
