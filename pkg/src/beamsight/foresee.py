"""Beam foreseeing: predicted path angles with von Mises uncertainty, expected
beamforming gain, and ranked beam/panel candidates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import i0e

from . import crlb
from .geometry import (
    Plane,
    Pose,
    Quaternion,
    SPEED_OF_LIGHT,
    quat_to_rotmat,
    raw_angles,
    reflection_point,
    rotmat,
    wrap_angle,
)
from .radio import Antenna, RxCodebook, TxCodebook, UePanelSet, steering_vector

INF = math.inf


@dataclass(frozen=True)
class AngleBelief:
    mean: float
    kappa: float = INF

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError("von Mises concentration must be non-negative")

    @classmethod
    def from_variance(cls, mean: float, variance: float) -> "AngleBelief":
        if variance < 0:
            raise ValueError("variance must be non-negative")
        if variance == 0:
            return cls(mean, INF)
        return cls(mean, 0.0 if math.isinf(variance) else 1.0 / variance)

    @property
    def variance(self) -> float:
        if self.kappa == 0:
            return INF
        return 0.0 if math.isinf(self.kappa) else 1.0 / self.kappa


def von_mises_pdf(x, belief: AngleBelief):
    """Density of angle ``x`` under a von Mises belief (finite concentration)."""
    k = belief.kappa
    if math.isinf(k):
        raise ValueError("point-mass belief has no density")
    # i0e(k) = exp(-k) I0(k) keeps large concentrations finite
    return np.exp(k * (np.cos(np.asarray(x) - belief.mean) - 1.0)) / (2.0 * np.pi * i0e(k))


# --------------------------------------------------------------------------
# quadrature
# --------------------------------------------------------------------------

GRID_STEP = np.deg2rad(1.0)
_N_GLOBAL = 360
GLOBAL_NODES = -np.pi + GRID_STEP * np.arange(1, _N_GLOBAL + 1)  # (-pi, pi]
_LOCAL_HALF_WIDTH = 8.0  # standard deviations covered by a local grid
_LOCAL_MAX_SIGMA = np.deg2rad(2.5)


def angular_rule(belief: AngleBelief, elevation: bool = False) -> tuple[np.ndarray, np.ndarray, bool]:
    """Nodes and weights integrating a function against the belief density.

    Narrow beliefs get a grid centred on the mean; wide ones use the fixed
    1-degree periodic grid (flag returned True).  Elevation nodes outside
    [0, pi] carry no weight.
    """
    if math.isinf(belief.kappa):
        return np.array([belief.mean]), np.array([1.0]), False
    sigma = 1.0 / math.sqrt(belief.kappa) if belief.kappa > 0 else INF
    if sigma <= _LOCAL_MAX_SIGMA:
        h = min(GRID_STEP, sigma / 4.0)
        n = int(math.ceil(_LOCAL_HALF_WIDTH * sigma / h))
        nodes = belief.mean + h * np.arange(-n, n + 1)
        w = von_mises_pdf(nodes, belief)
        w = w / w.sum()
        is_global = False
    else:
        nodes = GLOBAL_NODES.copy()
        w = von_mises_pdf(nodes, belief) * GRID_STEP
        is_global = True
    if elevation:
        inside = (nodes >= -1e-12) & (nodes <= np.pi + 1e-12)
        edge = np.isclose(nodes, 0.0, atol=1e-12) | np.isclose(nodes, np.pi, atol=1e-12)
        w = w * inside * np.where(edge & is_global, 0.5, 1.0)
    return nodes, w, is_global


# --------------------------------------------------------------------------
# beams
# --------------------------------------------------------------------------


def _nearest(grid: np.ndarray, x: float) -> int:
    d = np.abs(wrap_angle(grid - x))
    return int(np.flatnonzero(d <= d.min() + 1e-12)[0])


def quantize_beam(tx_cb: TxCodebook, rx_cb: RxCodebook, aod_az: float, aod_el: float, aoa_az: float, panel: int):
    """Nearest codebook beams per axis (wrapped distance, ties to the lower index)."""
    i_az = _nearest(tx_cb.az, aod_az)
    i_el = _nearest(tx_cb.el, aod_el)
    m_r = _nearest(rx_cb.angles(panel), aoa_az)
    return tx_cb.index(i_az, i_el), m_r, panel


def nearest_panel(panels: UePanelSet, aoa_az: float) -> int:
    off = [abs(float(wrap_angle(aoa_az - panels.boresight(j)))) for j in range(panels.n_panels)]
    return int(np.argmin(off))


@dataclass
class BeamEvaluator:
    """Codebook responses and their expectations under angle beliefs."""

    tx: Antenna
    tx_codebook: TxCodebook
    panels: UePanelSet
    rx_codebook: RxCodebook
    n_subcarriers: int
    _tx_w: np.ndarray = field(init=False, repr=False)
    _rx: list = field(init=False, repr=False)
    _table: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self._tx_w = self.tx_codebook.weights(self.tx.array)
        self._rx = [(p, self.rx_codebook.weights(p.array, j)) for j, p in enumerate(self.panels.panels())]

    @property
    def scale(self) -> float:
        return math.sqrt(self.tx.n * self.panels.n_elements)

    # point responses -------------------------------------------------
    def tx_inner(self, az, el) -> np.ndarray:
        """|a~_t^H w_m| for every Tx beam; angles broadcast, beam axis last."""
        return np.abs(steering_vector(self.tx.array, az, el).conj() @ self._tx_w)

    def rx_inner(self, j: int, az, el) -> np.ndarray:
        panel, w = self._rx[j]
        return np.abs(steering_vector(panel.array, az, el) @ w.conj())

    def tx_gain(self, az, el):
        return self.tx.pattern.amplitude(az, el) * self.tx.pattern.visible(az, el)

    def rx_gain(self, j: int, az, el):
        p = self._rx[j][0].pattern
        return p.amplitude(az, el) * p.visible(az, el)

    # expectations ----------------------------------------------------
    def _global_table(self) -> np.ndarray:
        if self._table is None:
            el = GLOBAL_NODES[(GLOBAL_NODES >= -1e-12) & (GLOBAL_NODES <= np.pi + 1e-12)]
            ga, ge = np.meshgrid(GLOBAL_NODES, el, indexing="ij")
            vals = np.empty(ga.shape + (self.tx_codebook.size,))
            for i in range(ga.shape[0]):
                vals[i] = self.tx_inner(ga[i], ge[i])
            self._table = vals
        return self._table

    def tx_expectation(self, az: AngleBelief, el: AngleBelief, with_pattern: bool = False) -> np.ndarray:
        """E|rho_t^? a~_t^H w_m| under independent azimuth/elevation beliefs, shape (M_t,)."""
        na, wa, ga = angular_rule(az)
        ne, we, ge = angular_rule(el, elevation=True)
        if ga and ge and not with_pattern:
            table = self._global_table()
            keep = (ne >= -1e-12) & (ne <= np.pi + 1e-12)
            return np.einsum("a,e,aem->m", wa, we[keep], table)
        A, E = np.meshgrid(na, ne, indexing="ij")
        W = np.outer(wa, we).ravel()
        A, E = A.ravel()[W > 0], E.ravel()[W > 0]
        W = W[W > 0]
        out = np.zeros(self.tx_codebook.size)
        for s in range(0, W.size, 8192):
            sl = slice(s, s + 8192)
            vals = self.tx_inner(A[sl], E[sl])
            if with_pattern:
                vals = vals * self.tx_gain(A[sl], E[sl])[:, None]
            out += W[sl] @ vals
        return out

    def rx_expectation(self, j: int, az: AngleBelief, el_mean: float, with_pattern: bool = False) -> np.ndarray:
        na, wa, _ = angular_rule(az)
        vals = self.rx_inner(j, na, np.full_like(na, el_mean))
        if with_pattern:
            vals = vals * self.rx_gain(j, na, np.full_like(na, el_mean))[:, None]
        return wa @ vals


def aligned_beam_expectation(array, az: float, el: float, variance: float) -> float:
    """sqrt(N) E|a(az_hat, el_hat)^H a(az, el)| with the beam steered at the estimate.

    The estimates are von Mises around the true angles with the given
    variance on each axis; this is the ideal-resolution alignment gain.
    """
    belief = AngleBelief.from_variance
    na, wa, _ = angular_rule(belief(az, variance))
    ne, we, _ = angular_rule(belief(el, variance), elevation=True)
    target = steering_vector(array, az, el)
    A, E = np.meshgrid(na, ne, indexing="ij")
    W = np.outer(wa, we)
    vals = np.abs(steering_vector(array, A.ravel(), E.ravel()).conj() @ target).reshape(A.shape)
    return float(math.sqrt(array.n) * np.sum(W * vals) / np.sum(W))


# --------------------------------------------------------------------------
# spatial map and angle prediction
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MapSource:
    source_id: int
    position: np.ndarray
    plane: Plane | None = None

    @property
    def mirror_h(self) -> bool:
        return self.plane is not None and self.plane.mirror_class == "horizontal"

    @property
    def mirror_v(self) -> bool:
        return self.plane is not None and self.plane.mirror_class == "vertical"

    @property
    def loss_db(self) -> float:
        return 0.0 if self.plane is None else self.plane.loss_db


@dataclass(eq=False)
class SpatialMap:
    """Estimated transmit sources and orientation bias, with their information.

    ``fim`` is None for an error-free map (all beliefs are point masses).
    """

    sources: list[MapSource]
    delta_q: np.ndarray
    bs_orientation: Quaternion
    reference_orientation: Quaternion
    room: tuple[Plane, ...] = ()
    fim: crlb.SpatialFim | None = None
    wavelength: float = SPEED_OF_LIGHT / 28e9
    bs_boresight: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))

    @property
    def bs_position(self) -> np.ndarray:
        return next(s.position for s in self.sources if s.source_id == 0)

    def without_uncertainty(self) -> "SpatialMap":
        return SpatialMap(
            self.sources, self.delta_q, self.bs_orientation, self.reference_orientation,
            self.room, None, self.wavelength, self.bs_boresight,
        )


@dataclass
class PathBelief:
    source_id: int
    aoa_az: AngleBelief
    aoa_el: float
    aod_az: AngleBelief
    aod_el: AngleBelief
    toa: float
    gain_abs: float


def _rot_ue(smap: SpatialMap, ue: Pose) -> np.ndarray:
    rot_rel = quat_to_rotmat(ue.orientation) @ quat_to_rotmat(smap.reference_orientation).T
    return rot_rel @ rotmat(smap.delta_q).T @ quat_to_rotmat(smap.bs_orientation), rot_rel


def path_exists(smap: SpatialMap, src: MapSource, ue_position) -> bool:
    """Geometric existence of the single-bounce path and BS front-side departure."""
    bs = smap.bs_position
    if src.plane is None:
        target = ue_position
    else:
        s = reflection_point(src.position, ue_position, src.plane, smap.room)
        if s is None:
            return False
        target = s
    local = quat_to_rotmat(smap.bs_orientation).T @ (np.asarray(target) - bs)
    return float(local @ smap.bs_boresight) > 0.0


def predict_path_angles(smap: SpatialMap, ue: Pose, check_existence: bool = True):
    """Beliefs for every source with a predicted path; returns (beliefs, excluded).

    ``excluded`` lists (source_id, reason) pairs.
    """
    rot_ue, rot_rel = _rot_ue(smap, ue)
    rot_bs = quat_to_rotmat(smap.bs_orientation)
    v0 = smap.bs_position
    beliefs, excluded = [], []
    for src in smap.sources:
        if check_existence and not path_exists(smap, src, ue.position):
            excluded.append((src.source_id, "no geometric path"))
            continue
        raw = raw_angles(src.position, v0, ue.position, rot_ue, rot_bs, src.mirror_h, src.mirror_v)
        var = np.zeros(4)
        if smap.fim is not None:
            slot = smap.fim.slot(src.source_id)
            jac = crlb.path_jacobian(
                src.position, v0, ue.position, rot_rel, smap.delta_q, rot_bs, src.mirror_h, src.mirror_v
            )
            var = crlb.aeb(smap.fim, jac, slot)
            if not np.all(np.isfinite(var[[0, 2, 3]])):
                excluded.append((src.source_id, "unobservable"))
                continue
        dist = raw[0] * SPEED_OF_LIGHT
        gain = smap.wavelength / (4.0 * np.pi * dist) * 10.0 ** (-src.loss_db / 20.0)
        phi_t = float(np.mod(raw[4], 2 * np.pi))
        if phi_t > np.pi:
            phi_t = 2 * np.pi - phi_t
        beliefs.append(
            PathBelief(
                src.source_id,
                AngleBelief.from_variance(float(wrap_angle(raw[1])), max(var[0], 0.0)),
                float(raw[2]),
                AngleBelief.from_variance(float(wrap_angle(raw[3])), max(var[2], 0.0)),
                AngleBelief.from_variance(phi_t, max(var[3], 0.0)),
                float(raw[0]),
                float(gain),
            )
        )
    return beliefs, excluded


# --------------------------------------------------------------------------
# expected gain and selection
# --------------------------------------------------------------------------


def score_tensor(ev: BeamEvaluator, belief: PathBelief) -> np.ndarray:
    """Lower-bound objective for one path over (panel, rx beam, tx beam).

    N_s |g| |rho_r| |rho_t| sqrt(N_t N_r) E|b_r| E|b_t|, patterns at the
    predicted means.
    """
    e_t = ev.tx_expectation(belief.aod_az, belief.aod_el)
    rho_t = float(ev.tx_gain(belief.aod_az.mean, belief.aod_el.mean))
    out = np.zeros((ev.panels.n_panels, ev.rx_codebook.size, ev.tx_codebook.size))
    base = ev.n_subcarriers * belief.gain_abs * ev.scale * rho_t
    if base == 0.0:
        return out
    for j in range(ev.panels.n_panels):
        rho_r = float(ev.rx_gain(j, belief.aoa_az.mean, belief.aoa_el))
        if rho_r == 0.0:
            continue
        e_r = ev.rx_expectation(j, belief.aoa_az, belief.aoa_el)
        out[j] = base * rho_r * np.outer(e_r, e_t)
    return out


def expected_bg(ev: BeamEvaluator, belief: PathBelief, panel: int, m_t: int, m_r: int, factored: bool = False) -> float:
    """Expected single-path BG of one beam pair under the belief.

    The default averages the full gain (patterns inside the expectation);
    ``factored`` evaluates the pattern-outside lower-bound objective instead.
    """
    if factored:
        return float(score_tensor(ev, belief)[panel, m_r, m_t])
    e_t = ev.tx_expectation(belief.aod_az, belief.aod_el, with_pattern=True)[m_t]
    e_r = ev.rx_expectation(panel, belief.aoa_az, belief.aoa_el, with_pattern=True)[m_r]
    return float(ev.n_subcarriers * belief.gain_abs * ev.scale * e_r * e_t)


@dataclass(frozen=True)
class CandidateBeam:
    source_id: int
    panel: int
    m_t: int
    m_r: int
    expected_bg: float


@dataclass
class Selection:
    candidates: list[CandidateBeam]
    excluded: list[tuple[int, str]]

    @property
    def best(self) -> CandidateBeam | None:
        return self.candidates[0] if self.candidates else None


def in_sector(tx_cb: TxCodebook, az: float, el: float, margin: float = 0.0) -> bool:
    return bool(
        tx_cb.az[0] - margin <= az <= tx_cb.az[-1] + margin and tx_cb.el[0] - margin <= el <= tx_cb.el[-1] + margin
    )


TIE_RTOL = 1e-12


def argmax_ordered(s: np.ndarray) -> tuple[int, int, int]:
    """Argmax of a (J, M_r, M_t) array with ties broken by lowest (j, m_t, m_r).

    Values within a relative TIE_RTOL of the maximum count as ties so that
    rounding noise does not decide between symmetric beams.
    """
    t = np.transpose(s, (0, 2, 1)).ravel()
    top = t.max()
    idx = int(np.flatnonzero(t >= top - TIE_RTOL * abs(top))[0])
    j, m_t, m_r = np.unravel_index(idx, (s.shape[0], s.shape[2], s.shape[1]))
    return int(j), int(m_t), int(m_r)


def select_paths_panels(
    ev: BeamEvaluator,
    beliefs: Sequence[PathBelief],
    budget: int = 6,
    sector_margin: float = np.deg2rad(10.0),
    elevation_threshold: float | None = None,
) -> Selection:
    """Rank beam pairs for the predicted paths.

    Paths whose departure falls outside the Tx codebook sector (or whose
    arrival elevation is too far from the horizon, if a threshold is given)
    are dropped.  Each survivor contributes its best (panel, beams) under the
    lower-bound objective; remaining budget is filled with the next-best
    pairs over all survivors.
    """
    excluded: list[tuple[int, str]] = []
    scored = []
    for b in beliefs:
        if not in_sector(ev.tx_codebook, b.aod_az.mean, b.aod_el.mean, sector_margin):
            excluded.append((b.source_id, "departure outside Tx sector"))
            continue
        off_horizon = abs(b.aoa_el - np.pi / 2)
        if elevation_threshold is not None and off_horizon > elevation_threshold:
            excluded.append((b.source_id, "arrival elevation far from horizon"))
            continue
        s = score_tensor(ev, b)
        if not np.any(s > 0):
            excluded.append((b.source_id, "zero predicted gain"))
            continue
        scored.append((b, s, off_horizon))

    primaries = []
    for b, s, off in scored:
        j, m_t, m_r = argmax_ordered(s)
        primaries.append((-s[j, m_r, m_t], off, b.source_id, CandidateBeam(b.source_id, j, m_t, m_r, float(s[j, m_r, m_t]))))
    primaries.sort(key=lambda x: x[:3])
    chosen: list[CandidateBeam] = []
    seen = set()
    for *_, c in primaries:
        key = (c.panel, c.m_t, c.m_r)
        if key not in seen and len(chosen) < budget:
            chosen.append(c)
            seen.add(key)

    if len(chosen) < budget and scored:
        pool = []
        for b, s, off in scored:
            flat = np.transpose(s, (0, 2, 1)).ravel()
            top = np.argsort(-flat, kind="stable")[: budget + len(seen)]
            for idx in top:
                j, m_t, m_r = np.unravel_index(int(idx), (s.shape[0], s.shape[2], s.shape[1]))
                pool.append((-flat[idx], off, b.source_id, int(j), int(m_t), int(m_r)))
        pool.sort()
        for neg, off, sid, j, m_t, m_r in pool:
            if len(chosen) >= budget:
                break
            if (j, m_t, m_r) in seen or neg == 0.0:
                continue
            chosen.append(CandidateBeam(sid, j, m_t, m_r, -neg))
            seen.add((j, m_t, m_r))
    return Selection(chosen, excluded)
