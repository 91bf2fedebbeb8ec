"""Fisher information for channel and spatial parameters, and the derived bounds.

Parameter orderings (the export contract):

* channel parameters per path: ``CHANNEL_PARAMS``
  = [aoa_az, aoa_el, aod_az, aod_el, toa, gain_re, gain_im]
* spatial parameters: [dq0, dq1, dq2, dq3, v_0 (xyz), v_1 (xyz), ...] where
  ``dq`` is the orientation bias quaternion and v_i are the transmit sources
  in the order of ``SpatialFim.source_ids``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import null_space

from .geometry import SPEED_OF_LIGHT, rotmat, rotmat_grad, DegenerateGeometryError, DEGENERATE_DISTANCE
from .radio import Antenna, MeasurementSchedule, PathParams, _path_arrays, delay_phases, steering_derivatives

log = logging.getLogger(__name__)

CHANNEL_PARAMS = ("aoa_az", "aoa_el", "aod_az", "aod_el", "toa", "gain_re", "gain_im")
AVAILABLE = (0, 1, 4)  # aoa_az, aoa_el, toa
NUISANCE = (2, 3, 5, 6)
ANGLE_ROWS = ("aoa_az", "aoa_el", "aod_az", "aod_el")
PINV_RTOL = 1e-10

# Groups kept by the in-block approximation: receive angles, transmit
# angles, delay, and each gain component on its own.
_APPROX_GROUPS = ((0, 1), (2, 3), (4,), (5,), (6,))


# --------------------------------------------------------------------------
# linear algebra helpers
# --------------------------------------------------------------------------


def _equilibrate(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric Jacobi scaling D m D with unit diagonal where the diagonal is nonzero.

    Mixed units (unit quaternion, metres) otherwise push the eigenvalue spread of
    well-posed problems below any sensible rank threshold.
    """
    m = 0.5 * (m + m.T)
    diag = np.diag(m)
    d = np.where(diag > 0, 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0)), 1.0)
    return m * np.outer(d, d), d


def _eig_keep(ms: np.ndarray, rtol: float):
    lam, vec = np.linalg.eigh(ms)
    top = max(lam.max(), 0.0)
    keep = lam > rtol * top if top > 0 else np.zeros_like(lam, dtype=bool)
    return lam, vec, keep


def psd_pinv(m: np.ndarray, rtol: float = PINV_RTOL) -> tuple[np.ndarray, int]:
    """Generalized inverse of a symmetric PSD matrix and its numerical rank.

    Equals the Moore-Penrose inverse when m is invertible; otherwise it is a
    reflexive g-inverse, so w^T m^- w is exact for any w in the range of m.
    """
    if m.size == 0:
        return m.copy(), 0
    ms, d = _equilibrate(m)
    lam, vec, keep = _eig_keep(ms, rtol)
    inv = (vec[:, keep] / lam[keep]) @ vec[:, keep].T
    return inv * np.outer(d, d), int(keep.sum())


def pinv_quadratic(m: np.ndarray, w: np.ndarray, rtol: float = PINV_RTOL, range_tol: float = 1e-7) -> float:
    """w^T m^+ w, or +inf if w has a component outside the range of m."""
    nw = np.linalg.norm(w)
    if nw == 0.0:
        return 0.0
    ms, d = _equilibrate(m)
    lam, vec, keep = _eig_keep(ms, rtol)
    ws = d * w
    proj = vec.T @ ws
    if np.linalg.norm(proj[~keep]) > range_tol * np.linalg.norm(ws):
        return float("inf")
    return float(np.sum(proj[keep] ** 2 / lam[keep]))


def schur_complement(m: np.ndarray, keep: Sequence[int]) -> tuple[np.ndarray, bool]:
    """Schur complement of ``m`` onto ``keep``; flag is True when the eliminated block is singular."""
    keep = np.asarray(keep)
    drop = np.setdiff1d(np.arange(m.shape[0]), keep)
    a = m[np.ix_(keep, keep)]
    if drop.size == 0:
        return a.copy(), False
    b = m[np.ix_(keep, drop)]
    d_inv, rank = psd_pinv(m[np.ix_(drop, drop)])
    s = a - b @ d_inv @ b.T
    return 0.5 * (s + s.T), rank < drop.size


# --------------------------------------------------------------------------
# channel-parameter FIM
# --------------------------------------------------------------------------

# Each derivative of the effective channel alters exactly one of its three
# factors (delay, receive, transmit).  Index of the factor variant used per
# parameter: delay {0: e, 1: de/dtau}; rx/tx {0: value, 1: d/daz, 2: d/del}.
_E_IDX = np.array([0, 0, 0, 0, 1, 0, 0])
_R_IDX = np.array([1, 2, 0, 0, 0, 0, 0])
_T_IDX = np.array([0, 0, 1, 2, 0, 0, 0])


def _factor_variants(paths, tx: Antenna, rx: Antenna, schedule: MeasurementSchedule):
    arr, gains = _path_arrays(paths)
    th_r, ph_r, th_t, ph_t, toa = arr.T

    def side(ant: Antenna, th, ph, beams, conj_steer):
        a, da_t, da_p = steering_derivatives(ant.array, th, ph)
        amp, damp_t, damp_p = ant.pattern.amplitude_derivatives(th, ph)
        mask = ant.pattern.visible(th, ph)
        amp, damp_t, damp_p = amp * mask, damp_t * mask, damp_p * mask
        if conj_steer:
            proj = lambda v: v.conj() @ beams  # noqa: E731
        else:
            proj = lambda v: v @ beams.conj()  # noqa: E731
        b, db_t, db_p = proj(a), proj(da_t), proj(da_p)
        val = amp[:, None] * b
        d_t = damp_t[:, None] * b + amp[:, None] * db_t
        d_p = damp_p[:, None] * b + amp[:, None] * db_p
        return np.stack([val, d_t, d_p], axis=1)

    r = side(rx, th_r, ph_r, schedule.rx_beams, conj_steer=False)  # (L, 3, M_r)
    t = side(tx, th_t, ph_t, schedule.tx_beams, conj_steer=True)  # (L, 3, M_t)
    e = delay_phases(toa, schedule.n_subcarriers, schedule.subcarrier_spacing)
    de = -2j * np.pi * schedule.subcarrier_spacing * np.arange(schedule.n_subcarriers) * e
    e2 = np.stack([e, de], axis=1)  # (L, 2, N_s)

    s = np.sqrt(tx.n * rx.n)
    coef = np.empty((len(gains), 7), dtype=complex)
    coef[:, :5] = (s * gains)[:, None]
    coef[:, 5] = s
    coef[:, 6] = 1j * s
    return e2, r, t, coef


def channel_fim_dense(paths: Sequence[PathParams], tx: Antenna, rx: Antenna, schedule: MeasurementSchedule) -> np.ndarray:
    """Exact 7L x 7L FIM including cross-path terms."""
    if len(paths) == 0:
        raise ValueError("no paths given")
    e2, r, t, coef = _factor_variants(paths, tx, rx, schedule)
    ge = np.einsum("ain,bjn->aibj", e2.conj(), e2)
    gr = np.einsum("ain,bjn->aibj", r.conj(), r)
    gt = np.einsum("ain,bjn->aibj", t.conj(), t)
    g = (
        ge[:, _E_IDX][:, :, :, _E_IDX]
        * gr[:, _R_IDX][:, :, :, _R_IDX]
        * gt[:, _T_IDX][:, :, :, _T_IDX]
    )
    f = (2.0 / schedule.noise_var) * np.real(coef.conj()[:, :, None, None] * coef[None, None, :, :] * g)
    n = 7 * len(paths)
    f = f.reshape(n, n)
    return 0.5 * (f + f.T)


@dataclass
class ChannelFim:
    """Per-path 7x7 blocks; ``cross_path`` and ``discarded`` are diagnostics."""

    blocks: list[np.ndarray]
    approx: bool = False
    discarded: float = 0.0
    cross_path: float = 0.0

    def matrix(self) -> np.ndarray:
        n = len(self.blocks)
        out = np.zeros((7 * n, 7 * n))
        for i, b in enumerate(self.blocks):
            out[7 * i : 7 * i + 7, 7 * i : 7 * i + 7] = b
        return out


def _normalized_magnitude(full: np.ndarray, mask: np.ndarray) -> float:
    d = np.sqrt(np.abs(np.diag(full)))
    scale = np.outer(d, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(scale > 0, np.abs(full) / scale, 0.0)
    return float(rel[mask].max()) if mask.any() else 0.0


def approx_block(block: np.ndarray) -> tuple[np.ndarray, float]:
    """In-block approximation: keep only the grouped entries of a 7x7 block."""
    mask = np.zeros((7, 7), dtype=bool)
    for g in _APPROX_GROUPS:
        mask[np.ix_(g, g)] = True
    return np.where(mask, block, 0.0), _normalized_magnitude(block, ~mask)


def fim_channel(
    paths: Sequence[PathParams],
    tx: Antenna,
    rx: Antenna,
    schedule: MeasurementSchedule,
    approx: bool = False,
) -> ChannelFim:
    """Channel-parameter FIM, block-diagonal across paths.

    With ``approx`` the angle/delay/gain groups inside each block are also
    decoupled; the largest discarded normalized entry is reported either way.
    """
    dense = channel_fim_dense(paths, tx, rx, schedule)
    L = len(paths)
    off = np.ones_like(dense, dtype=bool)
    blocks = []
    worst = 0.0
    for l in range(L):
        sl = slice(7 * l, 7 * l + 7)
        off[sl, sl] = False
        b, lost = approx_block(dense[sl, sl])
        worst = max(worst, lost)
        blocks.append(b if approx else dense[sl, sl].copy())
    return ChannelFim(blocks, approx=approx, discarded=worst, cross_path=_normalized_magnitude(dense, off))


@dataclass
class AvailableFim:
    """Per-path 3x3 EFIM over [aoa_az, aoa_el, toa]."""

    blocks: list[np.ndarray]
    unobservable: list[bool]


def efim_block(block: np.ndarray) -> tuple[np.ndarray, bool]:
    s, singular = schur_complement(block, AVAILABLE)
    zero = not np.any(block[np.ix_(AVAILABLE, AVAILABLE)])
    return s, singular or zero


def efim_available(fim: ChannelFim) -> AvailableFim:
    out = [efim_block(b) for b in fim.blocks]
    return AvailableFim([o[0] for o in out], [o[1] for o in out])


# --------------------------------------------------------------------------
# spatial transform Jacobian
# --------------------------------------------------------------------------


@dataclass
class PathJacobian:
    """Partials of [aoa_az, aoa_el, aod_az, aod_el, toa] for one path.

    Columns: ``d_dq`` (5x4) orientation bias, ``d_vl`` (5x3) the path's own
    source, ``d_v0`` (5x3) the physical BS (non-zero only for mirrored AoD
    rows).  For the LoS path the source *is* the BS and ``d_v0`` is zero.
    """

    d_dq: np.ndarray
    d_vl: np.ndarray
    d_v0: np.ndarray


def _azimuth_grad(u):
    rho2 = u[0] ** 2 + u[1] ** 2
    return np.array([-u[1], u[0], 0.0]) / rho2


def _elevation_grad(u):
    rho = np.hypot(u[0], u[1])
    n2 = u @ u
    return -(np.array([0.0, 0.0, 1.0]) - u[2] * u / n2) / rho


def path_jacobian(
    v_l,
    v_0,
    p,
    rot_rel: np.ndarray,
    delta_q,
    rot_bs: np.ndarray,
    mirror_h: bool = False,
    mirror_v: bool = False,
    singular_tol: float = 1e-12,
) -> PathJacobian:
    """Analytic partials of the angle transform at one sensing instance.

    The UE attitude is rot_rel @ R(dq)^T @ rot_bs, so derivatives in ``dq``
    pass through the quaternion polynomial.  ``delta_q`` need not be unit.
    """
    v_l = np.asarray(v_l, dtype=float)
    v_0 = np.asarray(v_0, dtype=float)
    p = np.asarray(p, dtype=float)
    dq = np.asarray(delta_q, dtype=float)
    a = v_l - p
    dist = np.linalg.norm(a)
    if dist < DEGENERATE_DISTANCE:
        raise DegenerateGeometryError("UE coincides with a transmit source")
    r_dq = rotmat(dq)
    rot_ue_t = rot_bs.T @ r_dq @ rot_rel.T  # global -> UE local
    v_loc = rot_ue_t @ a
    dv_ddq = np.stack([rot_bs.T @ g @ rot_rel.T @ a for g in rotmat_grad(dq)], axis=1)  # (3, 4)

    d_dq = np.zeros((5, 4))
    d_vl = np.zeros((5, 3))
    d_v0 = np.zeros((5, 3))

    g_az = _azimuth_grad(v_loc)
    g_el = _elevation_grad(v_loc)
    d_dq[0] = g_az @ dv_ddq
    d_dq[1] = g_el @ dv_ddq
    d_vl[0] = g_az @ rot_ue_t
    d_vl[1] = g_el @ rot_ue_t
    d_vl[4] = a / (SPEED_OF_LIGHT * dist)

    # departure: p_loc = R_bs^T (p - v_l), so d p_loc / d v_l = -R_bs^T
    p_loc = rot_bs.T @ (-a)
    d_vl[2] = -_azimuth_grad(p_loc) @ rot_bs.T
    d_vl[3] = -_elevation_grad(p_loc) @ rot_bs.T
    if mirror_h or mirror_v:
        w = rot_bs.T @ (v_l - v_0)
        if mirror_h:
            g = 2.0 * _azimuth_grad(w) @ rot_bs.T
            d_vl[2] = g - d_vl[2]
            d_v0[2] = -g
        if mirror_v:
            # the folded elevation term has a cone singularity when the
            # source offset is exactly vertical; its derivative is taken as 0
            if w[0] ** 2 + w[1] ** 2 > singular_tol * (w @ w):
                g = 2.0 * _elevation_grad(w) @ rot_bs.T
            else:
                g = np.zeros(3)
            d_vl[3] = g - d_vl[3]
            d_v0[3] = -g
    return PathJacobian(d_dq, d_vl, d_v0)


# --------------------------------------------------------------------------
# spatial FIM
# --------------------------------------------------------------------------


@dataclass
class SpatialFim:
    """Unconstrained FIM over [dq, v_0, ..., v_{L-1}]."""

    matrix: np.ndarray
    delta_q: np.ndarray
    source_ids: tuple[int, ...]
    instances: int = 0

    @classmethod
    def zeros(cls, delta_q, source_ids: Sequence[int]) -> "SpatialFim":
        n = 4 + 3 * len(source_ids)
        return cls(np.zeros((n, n)), np.asarray(delta_q, dtype=float), tuple(source_ids), 0)

    @property
    def n_sources(self) -> int:
        return len(self.source_ids)

    def slot(self, source_id: int) -> int:
        return self.source_ids.index(source_id)

    def v_index(self, i: int) -> slice:
        return slice(4 + 3 * i, 7 + 3 * i)

    def block_dq(self) -> np.ndarray:
        return self.matrix[:4, :4]

    def block_v(self, i: int) -> np.ndarray:
        s = self.v_index(i)
        return self.matrix[s, s]

    def block_v_dq(self, i: int) -> np.ndarray:
        return self.matrix[self.v_index(i), :4]

    def copy(self) -> "SpatialFim":
        return SpatialFim(self.matrix.copy(), self.delta_q.copy(), self.source_ids, self.instances)

    def __add__(self, other: "SpatialFim") -> "SpatialFim":
        if self.source_ids != other.source_ids or not np.allclose(self.delta_q, other.delta_q, atol=1e-12):
            raise ValueError("spatial FIMs refer to different parameter vectors")
        return SpatialFim(self.matrix + other.matrix, self.delta_q, self.source_ids, self.instances + other.instances)


def instance_fim(
    jacobians: Sequence[PathJacobian],
    efims: Sequence[np.ndarray],
    slots: Sequence[int],
    delta_q,
    source_ids: Sequence[int],
) -> SpatialFim:
    """Contribution of one sensing instance: sum over paths of J^T EFIM J."""
    out = SpatialFim.zeros(delta_q, source_ids)
    rows = list(AVAILABLE)
    for jac, e, s in zip(jacobians, efims, slots):
        j = np.zeros((3, out.matrix.shape[0]))
        j[:, :4] = jac.d_dq[rows]
        j[:, out.v_index(s)] = jac.d_vl[rows]
        out.matrix += j.T @ e @ j
    out.matrix = 0.5 * (out.matrix + out.matrix.T)
    out.instances = 1
    return out


def fim_spatial(contributions: Sequence[SpatialFim]) -> SpatialFim:
    if len(contributions) == 0:
        raise ValueError("at least one sensing instance is required")
    total = contributions[0].copy()
    for c in contributions[1:]:
        total = total + c
    return total


def orientation_null_basis(delta_q) -> np.ndarray:
    """Orthonormal 4x3 basis of the tangent space of the unit sphere at dq."""
    dq = np.asarray(delta_q, dtype=float)
    return null_space(dq[None, :])


def printed_null_basis(delta_q) -> np.ndarray:
    """Non-orthonormal tangent basis [dq_1:3 / dq_0 ; -I] (requires dq_0 != 0)."""
    dq = np.asarray(delta_q, dtype=float)
    return np.vstack([dq[1:] / dq[0], -np.eye(3)])


def constraint_matrix(fim: SpatialFim, u0: np.ndarray | None = None) -> np.ndarray:
    u0 = orientation_null_basis(fim.delta_q) if u0 is None else u0
    n = 3 * fim.n_sources
    u = np.zeros((4 + n, 3 + n))
    u[:4, :3] = u0
    u[4:, 3:] = np.eye(n)
    return u


def constrain(fim: SpatialFim, u0: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return (U^T F U, U)."""
    u = constraint_matrix(fim, u0)
    ft = u.T @ fim.matrix @ u
    return 0.5 * (ft + ft.T), u


def constrained_crlb(fim: SpatialFim, u0: np.ndarray | None = None) -> np.ndarray:
    """U (U^T F U)^+ U^T; with a non-orthonormal u0 the result is unchanged."""
    ft, u = constrain(fim, u0)
    if u0 is None:
        inv, _ = psd_pinv(ft)
    else:
        inv = np.linalg.inv(ft)
    return u @ inv @ u.T


# --------------------------------------------------------------------------
# bounds
# --------------------------------------------------------------------------


def _full_rank(m: np.ndarray, rtol: float = PINV_RTOL) -> bool:
    lam = np.linalg.eigvalsh(_equilibrate(m)[0])
    return lam.max() > 0 and lam.min() > rtol * lam.max()


def source_efim(fim: SpatialFim, i: int) -> np.ndarray:
    """Constrained EFIM of source slot i, with the bias and all other sources eliminated."""
    ft, _ = constrain(fim)
    keep = np.arange(3 + 3 * i, 6 + 3 * i)
    s, _ = schur_complement(ft, keep)
    return s


def orientation_efim(fim: SpatialFim) -> np.ndarray:
    ft, _ = constrain(fim)
    s, _ = schur_complement(ft, np.arange(3))
    return s


def peb(fim: SpatialFim, i: int) -> float:
    e = source_efim(fim, i)
    if not _full_rank(e):
        return float("inf")
    return float(np.sqrt(np.trace(np.linalg.inv(e))))


def oeb_from_trace(t: float) -> float:
    arg = 1.0 - t / 2.0
    if arg < -1.0 or arg > 1.0:
        warnings.warn(f"orientation trace {t:.6g} outside [0, 4]; clamping", RuntimeWarning, stacklevel=2)
    return 2.0 * float(np.arccos(np.clip(arg, -1.0, 1.0)))


def oeb(fim: SpatialFim) -> float:
    e = orientation_efim(fim)
    if not _full_rank(e):
        return float("inf")
    # U0 is orthonormal, so tr(U0 E^-1 U0^T) = tr(E^-1)
    return oeb_from_trace(float(np.trace(np.linalg.inv(e))))


def _reduced_bias_block(ft: np.ndarray, n_sources: int, exclude: set[int]) -> np.ndarray:
    """Bias information after eliminating every source slot not in ``exclude``."""
    a = ft[:3, :3].copy()
    for k in range(n_sources):
        if k in exclude:
            continue
        s = slice(3 + 3 * k, 6 + 3 * k)
        b = ft[s, :3]
        inv, _ = psd_pinv(ft[s, s])
        a -= b.T @ inv @ b
    return 0.5 * (a + a.T)


def aeb(
    fim: SpatialFim,
    jac: PathJacobian,
    i: int,
    known_orientation: bool = False,
) -> np.ndarray:
    """Angle error bounds [aoa_az, aoa_el, aod_az, aod_el] (rad^2) for source slot i.

    Block formulation: the bias is reduced by the sources the angle does not
    depend on, then the small composite matrix is inverted.
    """
    ft, _ = constrain(fim)
    u0 = orientation_null_basis(fim.delta_q)
    L = fim.n_sources
    vi = slice(3 + 3 * i, 6 + 3 * i)
    v0 = slice(3, 6)
    out = np.empty(4)

    # arrival angles depend on the bias and v_i
    if known_orientation:
        m_r = ft[vi, vi]
    else:
        a = _reduced_bias_block(ft, L, {i})
        b = ft[vi, :3]
        m_r = np.block([[a, b.T], [b, ft[vi, vi]]])
    for row in (0, 1):
        w = jac.d_vl[row] if known_orientation else np.concatenate([u0.T @ jac.d_dq[row], jac.d_vl[row]])
        out[row] = pinv_quadratic(m_r, w)

    # departure angles depend on v_0 and v_i only
    sl = [v0] if i == 0 else [v0, vi]
    idx = np.concatenate([np.arange(s.start, s.stop) for s in sl])
    m_t = ft[np.ix_(idx, idx)].copy()
    if i != 0:
        m_t[0:3, 3:6] = 0.0  # distinct sources share no direct information
        m_t[3:6, 0:3] = 0.0
    if not known_orientation:
        a = _reduced_bias_block(ft, L, {0, i})
        b = ft[idx, :3]
        inv, _ = psd_pinv(a)
        m_t -= b @ inv @ b.T
    for row in (2, 3):
        w = jac.d_vl[row] if i == 0 else np.concatenate([jac.d_v0[row], jac.d_vl[row]])
        out[row] = pinv_quadratic(m_t, w)
    return out


def aeb_direct(fim: SpatialFim, jac: PathJacobian, i: int) -> np.ndarray:
    """Angle error bounds as quadratic forms with the full constrained CRLB."""
    crlb = constrained_crlb(fim)
    out = np.empty(4)
    for row in range(4):
        w = np.zeros(crlb.shape[0])
        w[fim.v_index(i)] += jac.d_vl[row]
        if row < 2:
            w[:4] = jac.d_dq[row]
        else:
            w[fim.v_index(0)] += jac.d_v0[row]
        out[row] = w @ crlb @ w
    return out


def information_ellipse(f_v: np.ndarray) -> tuple[float, float, float]:
    """Extremes of the horizontal Rayleigh quotient u^T F^-1 u, u = [-sin t, cos t, 0].

    Returns (minimum, maximum, direction of the minimum in radians).
    """
    inv = np.linalg.inv(f_v)[:2, :2]
    lam, vec = np.linalg.eigh(inv)
    u = vec[:, 0]  # u = [-sin t, cos t]
    return float(lam[0]), float(lam[1]), float(np.arctan2(-u[0], u[1]))


@dataclass
class BoundReport:
    source_ids: tuple[int, ...]
    peb: np.ndarray
    oeb: float
    aeb: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))

    @property
    def unobservable(self) -> np.ndarray:
        return ~np.isfinite(self.peb)


def bound_report(fim: SpatialFim, jacobians: dict[int, PathJacobian] | None = None) -> BoundReport:
    pebs = np.array([peb(fim, i) for i in range(fim.n_sources)])
    aebs = np.full((fim.n_sources, 4), np.nan)
    if jacobians:
        for i, sid in enumerate(fim.source_ids):
            if sid in jacobians:
                aebs[i] = aeb(fim, jacobians[sid], i)
    return BoundReport(fim.source_ids, pebs, oeb(fim), aebs)
