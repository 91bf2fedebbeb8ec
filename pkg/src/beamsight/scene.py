"""Indoor scenario, mirror sources, path synthesis and the experiment runners."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from . import crlb
from .foresee import (
    AngleBelief,
    BeamEvaluator,
    MapSource,
    PathBelief,
    SpatialMap,
    argmax_ordered,
    predict_path_angles,
    quantize_beam,
    select_paths_panels,
)
from .geometry import (
    SPEED_OF_LIGHT,
    Plane,
    Pose,
    Quaternion,
    geometric_transform,
    inside_room,
    mirror_point,
    quat_multiply,
    quat_to_rotmat,
    reflection_point,
)
from .radio import (
    Antenna,
    ArrayGeometry,
    MeasurementSchedule,
    PathParams,
    RadiationPattern,
    RxCodebook,
    TxCodebook,
    UePanelSet,
    delay_phases,
)

log = logging.getLogger(__name__)

TIERS = ("poor", "medium", "good")
_MIRROR_X = np.diag([-1.0, 1.0, 1.0])


def _point_in_polygon(x: float, y: float, poly: np.ndarray) -> bool:
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xc:
                inside = not inside
    return inside


@dataclass(eq=False)
class Scenario:
    planes: tuple[Plane, ...]
    bs: Pose
    region: np.ndarray
    height_range: tuple[float, float] = (0.9, 1.4)
    carrier: float = 28e9
    subcarrier_spacing: float = 60e3
    ssb_subcarriers: int = 240
    csirs_subcarriers: int = 330
    bs_array: tuple[int, int] = (8, 8)
    ue_elements: int = 4
    ue_panels: int = 4
    max_tilt: float = np.deg2rad(15.0)
    pattern: RadiationPattern = field(default_factory=RadiationPattern)
    tx_codebook: TxCodebook | None = None
    rx_codebook: RxCodebook | None = None
    rx_sets: dict[int, np.ndarray] = field(default_factory=dict)
    snr_db: dict[str, float] = field(default_factory=lambda: {"poor": 0.0, "medium": 10.0, "good": 20.0})
    tier: str = "medium"
    k: int = 100
    rx_beams: int = 4
    grid_spacing: float = 0.25
    grid_height: float = 1.2
    grid_margin: float = 0.25
    budget: int = 6
    sector_margin: float = np.deg2rad(10.0)
    elevation_threshold: float | None = None
    seed: int = 7

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier

    @cached_property
    def tx(self) -> Antenna:
        geom = ArrayGeometry.upa_xz(*self.bs_array, self.wavelength)
        return Antenna(geom, self.pattern.with_boresight(np.pi / 2))

    @cached_property
    def panels(self) -> UePanelSet:
        return UePanelSet(self.ue_elements, self.ue_panels, self.wavelength, self.pattern)

    @cached_property
    def evaluator(self) -> BeamEvaluator:
        return BeamEvaluator(self.tx, self.tx_codebook, self.panels, self.rx_codebook, self.ssb_subcarriers)

    @cached_property
    def sources(self) -> list["VirtualSource"]:
        return build_virtual_sources(self)

    @property
    def visible_sources(self) -> list["VirtualSource"]:
        return [s for s in self.sources if s.visible]

    @cached_property
    def tx_weights(self) -> np.ndarray:
        return self.tx_codebook.weights(self.tx.array)

    def rx_weights(self, j: int, angles=None) -> np.ndarray:
        if angles is None:
            return self.rx_codebook.weights(self.panels.panel(j).array, j)
        return RxCodebook(np.asarray(angles)).weights(self.panels.panel(j).array, j)

    def room_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned extent of the room spanned by its planes."""
        lo = np.full(3, -np.inf)
        hi = np.full(3, np.inf)
        for pl in self.planes:
            ax = int(np.argmax(np.abs(pl.normal)))
            if abs(abs(pl.normal[ax]) - 1.0) > 1e-9:
                continue
            pos = pl.offset * pl.normal[ax]
            if pl.normal[ax] > 0:
                lo[ax] = max(lo[ax], pos)
            else:
                hi[ax] = min(hi[ax], pos)
        return lo, hi

    def contains(self, p) -> bool:
        return inside_room(p, self.planes, tol=0.0)

    @cached_property
    def noise_vars(self) -> dict[str, float]:
        return {t: calibrate_noise(self, db) for t, db in self.snr_db.items()}

    def noise_var(self, tier: str | None = None) -> float:
        tier = self.tier if tier is None else tier
        if tier not in self.noise_vars:
            raise ValueError(f"unknown SNR tier {tier!r}")
        return self.noise_vars[tier]

    def reference_pose(self) -> Pose:
        cx, cy = self.region.mean(axis=0)
        return Pose(np.array([cx, cy, float(np.mean(self.height_range))]), Quaternion.identity())


# --------------------------------------------------------------------------
# mirror sources and paths
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VirtualSource:
    index: int
    position: np.ndarray
    plane: Plane | None
    visible: bool

    @property
    def mirror_h(self) -> bool:
        return self.plane is not None and self.plane.mirror_class == "horizontal"

    @property
    def mirror_v(self) -> bool:
        return self.plane is not None and self.plane.mirror_class == "vertical"

    @property
    def name(self) -> str:
        return "bs" if self.plane is None else self.plane.name


def bs_boresight_global(sc: Scenario) -> np.ndarray:
    return quat_to_rotmat(sc.bs.orientation) @ np.array([0.0, 1.0, 0.0])


def build_virtual_sources(sc: Scenario) -> list[VirtualSource]:
    """The BS plus one image per plane; images of planes behind the array are invisible."""
    out = [VirtualSource(0, sc.bs.position.copy(), None, True)]
    bore = bs_boresight_global(sc)
    for i, pl in enumerate(sc.planes, start=1):
        toward = -pl.normal  # direction from the room towards the plane
        visible = float(toward @ bore) > -1e-9
        out.append(VirtualSource(i, mirror_point(sc.bs.position, pl), pl, visible))
    return out


def _departs_forward(sc: Scenario, target) -> bool:
    local = quat_to_rotmat(sc.bs.orientation).T @ (np.asarray(target) - sc.bs.position)
    return float(local[1]) > 0.0


def path_gain(wavelength: float, length: float, loss_db: float = 0.0) -> float:
    return wavelength / (4.0 * np.pi * length) * 10.0 ** (-loss_db / 20.0)


def synthesize_paths(
    sc: Scenario,
    ue: Pose,
    rng: np.random.Generator | None = None,
    sources: Sequence[VirtualSource] | None = None,
) -> list[PathParams]:
    """Single-bounce paths from every visible source that reaches ``ue``.

    Gains follow free-space spreading over the unfolded length with the
    plane's reflection loss; phases are uniform from ``rng`` (zero if None).
    """
    sources = sc.visible_sources if sources is None else sources
    paths = []
    for src in sources:
        phase = 0.0 if rng is None else float(rng.uniform(-np.pi, np.pi))
        if not src.visible:
            continue
        if src.plane is None:
            refl = None
            first_hop = ue.position
        else:
            refl = reflection_point(src.position, ue.position, src.plane, sc.planes)
            if refl is None:
                continue
            first_hop = refl
        if not _departs_forward(sc, first_hop):
            continue
        ang = geometric_transform(src.position, sc.bs.position, ue, sc.bs.orientation, src.mirror_h, src.mirror_v)
        length = ang.toa * SPEED_OF_LIGHT
        loss = 0.0 if src.plane is None else src.plane.loss_db
        g = path_gain(sc.wavelength, length, loss) * np.exp(1j * phase)
        paths.append(
            PathParams(
                ang.aoa_az, ang.aoa_el, ang.aod_az, ang.aod_el, ang.toa, complex(g), src.index,
                None if refl is None else tuple(map(float, refl)),
            )
        )
    return paths


# --------------------------------------------------------------------------
# beam-domain evaluation
# --------------------------------------------------------------------------


def _coefficients(sc: Scenario, paths: Sequence[PathParams], j: int, rx_w: np.ndarray, tx_w: np.ndarray) -> np.ndarray:
    """Per-path beam coefficients c[m_r, m_t, l] (gain, scale and patterns included)."""
    panel = sc.panels.panel(j)
    arr = np.array([[p.aoa_az, p.aoa_el, p.aod_az, p.aod_el] for p in paths])
    g = np.array([p.gain for p in paths])
    r = panel.response(arr[:, 0], arr[:, 1]) @ rx_w.conj()  # (L, M_r)
    t = sc.tx.response(arr[:, 2], arr[:, 3]).conj() @ tx_w  # (L, M_t)
    s = math.sqrt(sc.tx.n * panel.n)
    return s * np.einsum("l,lr,lt->rtl", g, r, t)


def bg_tensor(sc: Scenario, paths: Sequence[PathParams], n_subcarriers: int | None = None) -> np.ndarray:
    """Beamforming gain for every (panel, rx beam, tx beam) of the full codebooks."""
    ns = sc.ssb_subcarriers if n_subcarriers is None else n_subcarriers
    out = np.zeros((sc.ue_panels, sc.rx_codebook.size, sc.tx_codebook.size))
    if len(paths) == 0:
        return out
    e = delay_phases([p.toa for p in paths], ns, sc.subcarrier_spacing)
    for j in range(sc.ue_panels):
        c = _coefficients(sc, paths, j, sc.rx_weights(j), sc.tx_weights)
        out[j] = np.abs(c @ e).sum(axis=-1)
    return out


def pair_bg(sc: Scenario, paths: Sequence[PathParams], j: int, m_t: int, m_r: int) -> float:
    if len(paths) == 0:
        return 0.0
    e = delay_phases([p.toa for p in paths], sc.ssb_subcarriers, sc.subcarrier_spacing)
    c = _coefficients(sc, paths, j, sc.rx_weights(j)[:, [m_r]], sc.tx_weights[:, [m_t]])
    return float(np.abs(c[0, 0] @ e).sum())


@dataclass(frozen=True)
class ScanResult:
    panel: int
    m_t: int
    m_r: int
    bg: float
    evaluations: int


def exhaustive_scan(sc: Scenario, paths: Sequence[PathParams]) -> ScanResult:
    """Best beam pair and panel over the full codebooks (ties: lowest (j, m_t, m_r))."""
    bg = bg_tensor(sc, paths)
    j, m_t, m_r = argmax_ordered(bg)
    return ScanResult(j, m_t, m_r, float(bg[j, m_r, m_t]), bg.size)


def panel_by_power(sc: Scenario, paths: Sequence[PathParams], m_t: int) -> int:
    """Panel with the largest noiseless received power for Tx beam ``m_t`` over its Rx codebook."""
    if len(paths) == 0:
        return 0
    e = delay_phases([p.toa for p in paths], sc.ssb_subcarriers, sc.subcarrier_spacing)
    power = []
    for j in range(sc.ue_panels):
        c = _coefficients(sc, paths, j, sc.rx_weights(j), sc.tx_weights[:, [m_t]])
        power.append(float(np.sum(np.abs(c @ e) ** 2)))
    return int(np.argmax(power))


def calibrate_noise(sc: Scenario, snr_db: float) -> float:
    """Noise variance giving the requested best-beam per-subcarrier SNR at the reference pose."""
    paths = synthesize_paths(sc, sc.reference_pose())
    if len(paths) == 0:
        raise ValueError("reference pose receives no paths; cannot calibrate noise")
    e = delay_phases([p.toa for p in paths], sc.ssb_subcarriers, sc.subcarrier_spacing)
    best = 0.0
    for j in range(sc.ue_panels):
        c = _coefficients(sc, paths, j, sc.rx_weights(j), sc.tx_weights)
        best = max(best, float(np.max(np.mean(np.abs(c @ e) ** 2, axis=-1))))
    return best / 10.0 ** (snr_db / 10.0)


# --------------------------------------------------------------------------
# sensing
# --------------------------------------------------------------------------


@dataclass
class ExperimentPlan:
    k: int = 100
    tier: str = "medium"
    rx_beams: int = 4
    mirrored: bool = False
    seed: int = 7
    approx_fim: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("K must be at least 1")
        if self.tier not in TIERS:
            raise ValueError(f"unknown SNR tier {self.tier!r}")


def instance_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, index])


def sample_pose(sc: Scenario, rng: np.random.Generator) -> Pose:
    lo, hi = sc.region.min(axis=0), sc.region.max(axis=0)
    while True:
        x, y = rng.uniform(lo, hi)
        if _point_in_polygon(x, y, sc.region):
            break
    z = rng.uniform(*sc.height_range)
    yaw = rng.uniform(-np.pi, np.pi)
    tilt_axis = rng.uniform(-np.pi, np.pi)
    tilt = rng.uniform(0.0, sc.max_tilt)
    q_tilt = Quaternion.from_axis_angle([np.cos(tilt_axis), np.sin(tilt_axis), 0.0], tilt)
    return Pose(np.array([x, y, z]), quat_multiply(q_tilt, Quaternion.from_yaw(yaw)))


def mirror_pose(pose: Pose) -> Pose:
    """Reflection of a pose across the x = 0 plane (a proper rotation S R S)."""
    rot = _MIRROR_X @ quat_to_rotmat(pose.orientation) @ _MIRROR_X
    return Pose(_MIRROR_X @ pose.position, Quaternion.from_rotmat(rot))


def sensing_poses(sc: Scenario, plan: ExperimentPlan) -> list[Pose]:
    poses = []
    for k in range(plan.k):
        if plan.mirrored:
            base = sample_pose(sc, instance_rng(plan.seed, 1, k // 2))
            poses.append(base if k % 2 == 0 else mirror_pose(base))
        else:
            poses.append(sample_pose(sc, instance_rng(plan.seed, 1, k)))
    return poses


def delta_quaternion(sc: Scenario, reference: Quaternion) -> Quaternion:
    """Orientation bias dq with bs = dq * reference."""
    return quat_multiply(sc.bs.orientation, reference.conjugate())


@dataclass
class InstanceInfo:
    panel: int
    serving_tx: int
    observed: tuple[int, ...]


def _observed_paths(sc: Scenario, paths: Sequence[PathParams], j: int) -> list[PathParams]:
    pat = sc.panels.panel(j).pattern
    return [p for p in paths if bool(pat.visible(p.aoa_az, p.aoa_el))]


def measurement_fim(
    sc: Scenario,
    paths: Sequence[PathParams],
    pose: Pose,
    j: int,
    schedule: MeasurementSchedule,
    dq: np.ndarray,
    reference: Quaternion,
    source_ids: Sequence[int],
    approx: bool = False,
) -> crlb.SpatialFim:
    """Spatial information contributed by one measurement on panel j."""
    seen = _observed_paths(sc, paths, j)
    if not seen:
        return crlb.SpatialFim.zeros(dq, source_ids)
    cf = crlb.fim_channel(seen, sc.tx, sc.panels.panel(j), schedule, approx=approx)
    avail = crlb.efim_available(cf)
    rot_rel = quat_to_rotmat(pose.orientation) @ quat_to_rotmat(reference).T
    rot_bs = quat_to_rotmat(sc.bs.orientation)
    src = {s.index: s for s in sc.sources}
    jacs, slots = [], []
    for p in seen:
        s = src[p.source]
        jacs.append(crlb.path_jacobian(s.position, sc.bs.position, pose.position, rot_rel, dq, rot_bs, s.mirror_h, s.mirror_v))
        slots.append(list(source_ids).index(p.source))
    return crlb.instance_fim(jacs, avail.blocks, slots, dq, source_ids)


@dataclass
class SensingResult:
    source_ids: tuple[int, ...]
    delta_q: np.ndarray
    reference: Quaternion
    poses: list[Pose]
    info: list[InstanceInfo]
    contributions: list[crlb.SpatialFim]
    peb: np.ndarray  # (K, L)
    oeb: np.ndarray  # (K,)

    @property
    def fim(self) -> crlb.SpatialFim:
        return crlb.fim_spatial(self.contributions)

    def fim_at(self, k: int) -> crlb.SpatialFim:
        return crlb.fim_spatial(self.contributions[:k])


def _sensing_instance(args):
    sc, plan, k, pose, dq, reference, source_ids = args
    paths = synthesize_paths(sc, pose, instance_rng(plan.seed, 2, k))
    scan = exhaustive_scan(sc, paths)
    j = panel_by_power(sc, paths, scan.m_t)
    angles = sc.rx_sets[plan.rx_beams]
    sched = MeasurementSchedule.ssb(
        sc.tx_weights, sc.rx_weights(j, angles), sc.noise_var(plan.tier),
        sc.ssb_subcarriers, sc.subcarrier_spacing, sc.carrier,
    )
    f = measurement_fim(sc, paths, pose, j, sched, dq, reference, source_ids, plan.approx_fim)
    observed = tuple(p.source for p in _observed_paths(sc, paths, j))
    return f, InstanceInfo(j, scan.m_t, observed)


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def run_sensing(sc: Scenario, plan: ExperimentPlan, jobs: int = 1) -> SensingResult:
    """Accumulate spatial information over K sensing instances and trace PEB/OEB."""
    if plan.rx_beams not in sc.rx_sets:
        raise ValueError(f"no sensing Rx set with {plan.rx_beams} beams")
    poses = sensing_poses(sc, plan)
    reference = poses[0].orientation
    dq = delta_quaternion(sc, reference).as_array()
    ids = tuple(s.index for s in sc.visible_sources)
    sc.noise_vars  # compute once before fanning out
    out = parallel_map(_sensing_instance, [(sc, plan, k, poses[k], dq, reference, ids) for k in range(plan.k)], jobs)
    contributions = [o[0] for o in out]
    info = [o[1] for o in out]
    peb = np.empty((plan.k, len(ids)))
    oeb = np.empty(plan.k)
    total = crlb.SpatialFim.zeros(dq, ids)
    for k, c in enumerate(contributions):
        total = total + c
        peb[k] = [crlb.peb(total, i) for i in range(len(ids))]
        # early in the trace the orientation bound can exceed the sphere; it is clamped
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            oeb[k] = crlb.oeb(total)
    return SensingResult(ids, dq, reference, poses, info, contributions, peb, oeb)


# --------------------------------------------------------------------------
# maps and CSI-RS fusion
# --------------------------------------------------------------------------


def spatial_map(sc: Scenario, sensing: SensingResult | None = None) -> SpatialMap:
    """Map of the true sources; carries the accumulated information when given."""
    sources = [MapSource(s.index, s.position, s.plane) for s in sc.visible_sources]
    if sensing is None:
        ref = Quaternion.identity()
        dq = delta_quaternion(sc, ref).as_array()
        fim = None
    else:
        ref, dq, fim = sensing.reference, sensing.delta_q, sensing.fim
    return SpatialMap(sources, dq, sc.bs.orientation, ref, sc.planes, fim, sc.wavelength)


@dataclass
class FusionResult:
    sensing: np.ndarray  # AEB rows per mode, [aoa_az, aoa_el, aod_az, aod_el]
    csirs: np.ndarray
    combined: np.ndarray


def csirs_fim(sc: Scenario, sensing: SensingResult, pose: Pose, rx_beams: int, tier: str, noise_scale: float = 1.0, seed: int = 0):
    """Spatial information of one CSI-RS measurement at ``pose`` plus the per-path channel EFIMs."""
    paths = synthesize_paths(sc, pose, instance_rng(seed, 5, 0))
    scan = exhaustive_scan(sc, paths)
    j = panel_by_power(sc, paths, scan.m_t)
    sched = MeasurementSchedule.csirs(
        sc.tx_weights[:, scan.m_t], sc.rx_weights(j, sc.rx_sets[rx_beams]), sc.noise_var(tier) * noise_scale,
        sc.csirs_subcarriers, sc.subcarrier_spacing, sc.carrier,
    )
    f = measurement_fim(sc, paths, pose, j, sched, sensing.delta_q, sensing.reference, sensing.source_ids)
    seen = _observed_paths(sc, paths, j)
    efims = {}
    if seen:
        avail = crlb.efim_available(crlb.fim_channel(seen, sc.tx, sc.panels.panel(j), sched))
        efims = {p.source: b for p, b in zip(seen, avail.blocks)}
    return f, efims


def fuse_csirs(
    sc: Scenario,
    sensing: SensingResult,
    pose: Pose,
    source_id: int = 0,
    rx_beams: int = 2,
    tier: str = "medium",
    noise_scale: float = 1.0,
    seed: int = 0,
) -> FusionResult:
    """AEB of one source at ``pose`` from sensing only, the CSI-RS only, and both."""
    f_c, efims = csirs_fim(sc, sensing, pose, rx_beams, tier, noise_scale, seed)
    f_s = sensing.fim
    i = f_s.slot(source_id)
    src = next(s for s in sc.sources if s.index == source_id)
    rot_rel = quat_to_rotmat(pose.orientation) @ quat_to_rotmat(sensing.reference).T
    jac = crlb.path_jacobian(
        src.position, sc.bs.position, pose.position, rot_rel, sensing.delta_q,
        quat_to_rotmat(sc.bs.orientation), src.mirror_h, src.mirror_v,
    )
    only_s = crlb.aeb(f_s, jac, i)
    both = crlb.aeb(f_s + f_c, jac, i)
    only_c = np.full(4, np.inf)
    if source_id in efims:
        # each arrival angle on its own; elevation may be unobservable while azimuth is not
        e = efims[source_id]
        for row in (0, 1):
            only_c[row] = crlb.pinv_quadratic(e, np.eye(3)[row])
    return FusionResult(only_s, only_c, both)


# --------------------------------------------------------------------------
# beam foreseeing over a grid
# --------------------------------------------------------------------------


def grid_points(sc: Scenario, spacing: float | None = None) -> np.ndarray:
    h = sc.grid_spacing if spacing is None else spacing
    lo, hi = sc.room_bounds()
    m = sc.grid_margin
    xs = np.arange(lo[0] + m, hi[0] - m + 1e-9, h)
    ys = np.arange(lo[1] + m, hi[1] - m + 1e-9, h)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def sample_beliefs(beliefs: Sequence[PathBelief], rng: np.random.Generator) -> list[PathBelief]:
    """Replace each belief mean with a draw around it, keeping the concentration."""

    def draw(b: AngleBelief) -> AngleBelief:
        if math.isinf(b.kappa):
            return b
        return AngleBelief(float(b.mean + rng.vonmises(0.0, b.kappa)), b.kappa)

    out = []
    for b in beliefs:
        el = draw(b.aod_el)
        el_mean = float(np.mod(el.mean, 2 * np.pi))
        if el_mean > np.pi:
            el_mean = 2 * np.pi - el_mean
        out.append(PathBelief(b.source_id, draw(b.aoa_az), b.aoa_el, draw(b.aod_az), AngleBelief(el_mean, el.kappa), b.toa, b.gain_abs))
    return out


@dataclass
class CellResult:
    x: float
    y: float
    es_bg: float
    sel_bg: float
    es_panel: int
    sel_panel: int
    candidates: int

    @property
    def loss_db(self) -> float:
        if self.es_bg == 0.0:
            return float("nan")
        if self.sel_bg == 0.0:
            return float("inf")
        return 20.0 * math.log10(self.es_bg / self.sel_bg)


def foresee_cell(sc: Scenario, smap: SpatialMap, pose: Pose, mode: str, blockage: bool, rng_paths, rng_err) -> CellResult:
    paths = synthesize_paths(sc, pose, rng_paths)
    if blockage:
        paths = [p for p in paths if p.source != 0]
    es = exhaustive_scan(sc, paths)
    beliefs, _ = predict_path_angles(smap, pose)
    beliefs = sample_beliefs(beliefs, rng_err)
    ev = sc.evaluator
    if mode == "optimal":
        sel = select_paths_panels(ev, beliefs, sc.budget, sc.sector_margin, sc.elevation_threshold)
        best_bg, best_panel = 0.0, -1
        for c in sel.candidates:
            bg = pair_bg(sc, paths, c.panel, c.m_t, c.m_r)
            if bg > best_bg:
                best_bg, best_panel = bg, c.panel
        if best_panel < 0:
            best_panel = sel.candidates[0].panel if sel.candidates else es.panel
        return CellResult(pose.position[0], pose.position[1], es.bg, best_bg, es.panel, best_panel, len(sel.candidates))
    if mode == "standard":
        los = [b for b in beliefs if b.source_id == 0]
        if not los:
            los_all, _ = predict_path_angles(smap.without_uncertainty(), pose, check_existence=False)
            los = [b for b in los_all if b.source_id == 0]
        b = los[0]
        m_t, _, _ = quantize_beam(sc.tx_codebook, sc.rx_codebook, b.aod_az.mean, b.aod_el.mean, b.aoa_az.mean, 0)
        j = panel_by_power(sc, paths, m_t)
        _, m_r, _ = quantize_beam(sc.tx_codebook, sc.rx_codebook, b.aod_az.mean, b.aod_el.mean, b.aoa_az.mean, j)
        bg = pair_bg(sc, paths, j, m_t, m_r)
        return CellResult(pose.position[0], pose.position[1], es.bg, bg, es.panel, j, 1)
    raise ValueError(f"unknown foreseeing mode {mode!r}")


def _grid_task(args):
    sc, smap, seed, mode, blockage, idx, xy = args
    pose = Pose(np.array([xy[0], xy[1], sc.grid_height]), Quaternion.identity())
    return foresee_cell(sc, smap, pose, mode, blockage, instance_rng(seed, 4, idx), instance_rng(seed, 3, idx))


@dataclass
class GridResult:
    cells: list[CellResult]
    mode: str
    blockage: bool

    @property
    def loss_db(self) -> np.ndarray:
        return np.array([c.loss_db for c in self.cells])

    def summary(self) -> dict:
        loss = self.loss_db
        fin = loss[np.isfinite(loss)]
        valid = ~np.isnan(loss)
        agree = np.mean([c.es_panel == c.sel_panel for c, v in zip(self.cells, valid) if v]) if valid.any() else float("nan")
        cands = np.array([c.candidates for c, v in zip(self.cells, valid) if v])
        return {
            "mode": self.mode,
            "blockage": self.blockage,
            "cells": int(valid.sum()),
            "max_loss_db": float(loss[valid].max()) if valid.any() else float("nan"),
            "mean_loss_db": float(loss[valid].mean()) if valid.any() else float("nan"),
            "median_loss_db": float(np.median(fin)) if fin.size else float("nan"),
            "panel_agreement": float(agree),
            "mean_candidates": float(cands.mean()) if cands.size else float("nan"),
        }


def bg_loss_map(
    sc: Scenario,
    smap: SpatialMap,
    mode: str = "optimal",
    blockage: bool = False,
    seed: int | None = None,
    spacing: float | None = None,
    jobs: int = 1,
) -> GridResult:
    """BG loss of foreseeing against the exhaustive scan on the evaluation grid."""
    seed = sc.seed if seed is None else seed
    pts = grid_points(sc, spacing)
    args = [(sc, smap, seed, mode, blockage, i, xy) for i, xy in enumerate(pts)]
    return GridResult(parallel_map(_grid_task, args, jobs), mode, blockage)


# --------------------------------------------------------------------------
# AEB direction profiles
# --------------------------------------------------------------------------


def aeb_profiles(sc: Scenario, sensing: SensingResult, step_deg: float = 5.0, reference_point=None) -> list[dict]:
    """AoA AEB of every source versus arrival direction in the z = 0 and x = 0 profiles.

    The query UE sits on the ray from each source through the reference
    point, at the source's distance, with the sensing reference attitude.
    """
    ref = sc.reference_pose().position if reference_point is None else np.asarray(reference_point, dtype=float)
    fim = sensing.fim
    rot_bs = quat_to_rotmat(sc.bs.orientation)
    rot_rel = np.eye(3) @ quat_to_rotmat(sensing.reference).T
    angles = np.deg2rad(np.arange(0.0, 360.0, step_deg))
    rows = []
    for s in sc.visible_sources:
        i = fim.slot(s.index)
        r = float(np.linalg.norm(s.position - ref))
        for profile in ("z0", "x0"):
            for a in angles:
                if profile == "z0":
                    d = np.array([np.cos(a), np.sin(a), 0.0])
                else:
                    d = np.array([0.0, np.cos(a), np.sin(a)])
                p = s.position - r * d
                with np.errstate(invalid="ignore", divide="ignore"):
                    jac = crlb.path_jacobian(s.position, sc.bs.position, p, rot_rel, sensing.delta_q, rot_bs, s.mirror_h, s.mirror_v)
                # arrival along the local vertical has no defined azimuth
                if np.all(np.isfinite(jac.d_dq)) and np.all(np.isfinite(jac.d_vl)):
                    eb = crlb.aeb(fim, jac, i)[0 if profile == "z0" else 1]
                else:
                    eb = float("nan")
                rows.append({"source": s.index, "profile": profile, "angle_deg": float(np.rad2deg(a)), "aeb": float(eb)})
    return rows
