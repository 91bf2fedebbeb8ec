"""YAML scenario loading with line-aware validation."""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .geometry import Plane, Pose, Quaternion, UNIT_TOL
from .radio import RadiationPattern, RxCodebook, TxCodebook
from .scene import TIERS, Scenario


class ConfigError(ValueError):
    """Invalid configuration; the message carries the file line when known."""


def default_config_path() -> Path:
    return Path(str(resources.files("beamsight") / "data" / "default.yaml"))


def _line_index(text: str) -> dict[tuple, int]:
    """Map key paths (tuples of keys / list indices) to 1-based source lines."""
    out: dict[tuple, int] = {}

    def walk(node, path):
        out[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = k.value
                try:
                    key = int(key)
                except ValueError:
                    pass
                out[path + (key,)] = k.start_mark.line + 1
                walk(v, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    root = yaml.compose(text)
    if root is not None:
        walk(root, ())
    return out


class _Reader:
    def __init__(self, data: dict, lines: dict[tuple, int], source: str):
        self.data = data
        self.lines = lines
        self.source = source

    def fail(self, path: tuple, msg: str):
        line = None
        for n in range(len(path), -1, -1):
            if path[:n] in self.lines:
                line = self.lines[path[:n]]
                break
        where = f"{self.source}:{line}" if line else self.source
        key = ".".join(str(p) for p in path) or "<root>"
        raise ConfigError(f"{where}: {key}: {msg}")

    def get(self, path: tuple, default: Any = ...):
        node = self.data
        for p in path:
            if isinstance(node, dict) and p in node:
                node = node[p]
            elif isinstance(node, list) and isinstance(p, int) and p < len(node):
                node = node[p]
            else:
                if default is ...:
                    self.fail(path, "missing required key")
                return default
        return node

    def number(self, path: tuple, default: Any = ..., positive: bool = False) -> float:
        v = self.get(path, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            hint = " (write exponents with a sign, e.g. 28.0e+9)" if isinstance(v, str) and "e" in v.lower() else ""
            self.fail(path, f"expected a number, got {v!r}{hint}")
        if positive and v <= 0:
            self.fail(path, "must be positive")
        return float(v)

    def integer(self, path: tuple, default: Any = ..., minimum: int = 1) -> int:
        v = self.get(path, default)
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(path, f"expected an integer, got {v!r}")
        if v < minimum:
            self.fail(path, f"must be at least {minimum}")
        return int(v)

    def vector(self, path: tuple, n: int | None = None, default: Any = ...) -> np.ndarray:
        v = self.get(path, default)
        if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            self.fail(path, f"expected a list of numbers, got {v!r}")
        if n is not None and len(v) != n:
            self.fail(path, f"expected {n} values, got {len(v)}")
        return np.asarray(v, dtype=float)

    def sorted_angles(self, path: tuple, default: Any = ...) -> np.ndarray:
        v = self.vector(path, default=default)
        if v.size == 0:
            self.fail(path, "codebook is empty")
        if np.any(np.diff(v) <= 0):
            self.fail(path, "codebook angles must be strictly increasing")
        return np.deg2rad(v)


def load_scenario(path: str | Path | None = None, text: str | None = None) -> Scenario:
    """Build a Scenario from a YAML file (or literal ``text``)."""
    if text is None:
        path = default_config_path() if path is None else Path(path)
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"{path}: cannot read: {e.strerror}") from e
    source = str(path) if path is not None else "<config>"
    try:
        data = yaml.safe_load(text)
        lines = _line_index(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{source}{line}: YAML syntax error: {getattr(e, 'problem', e)}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return _build(_Reader(data, lines, source))


def _build(r: _Reader) -> Scenario:
    planes = []
    raw_planes = r.get(("room", "planes"))
    if not isinstance(raw_planes, list) or not raw_planes:
        r.fail(("room", "planes"), "expected a non-empty list of planes")
    for i, _ in enumerate(raw_planes):
        name = str(r.get(("room", "planes", i, "name"), f"plane{i}"))
        point = r.vector(("room", "planes", i, "point"), 3)
        normal = r.vector(("room", "planes", i, "normal"), 3)
        if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
            r.fail(("room", "planes", i, "normal"), f"normal of {name} is not unit length (|n| = {np.linalg.norm(normal):.6g})")
        loss = r.number(("room", "planes", i, "loss_db"), 6.0)
        try:
            pl = Plane.from_point_normal(point, normal, name=name, loss_db=loss)
            pl.mirror_class
        except ValueError as e:
            r.fail(("room", "planes", i), f"{name}: {e}")
        planes.append(pl)
    planes = tuple(planes)

    q = r.vector(("bs", "orientation"), 4, [1.0, 0.0, 0.0, 0.0])
    if abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
        r.fail(("bs", "orientation"), "orientation quaternion is not unit norm")
    bs_pos = r.vector(("bs", "position"), 3)
    inside = all(float(p.signed_distance(bs_pos)) > 0 for p in planes)
    if not inside:
        r.fail(("bs", "position"), "base station lies outside the room")
    bs = Pose(bs_pos, Quaternion.from_array(q))
    bs_array = r.vector(("bs", "array"), 2, [8, 8]).astype(int)

    poly = np.asarray(r.get(("region", "polygon")), dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
        r.fail(("region", "polygon"), "expected at least three [x, y] vertices")
    height = r.vector(("region", "height"), 2)
    if height[0] > height[1]:
        r.fail(("region", "height"), "height range is reversed")
    for k, (x, y) in enumerate(poly):
        for h in height:
            if not all(float(p.signed_distance([x, y, h])) > 0 for p in planes):
                r.fail(("region", "polygon", k), "deployment region leaves the room")

    pattern = RadiationPattern(
        max_gain_dbi=r.number(("pattern", "max_gain_dbi"), 8.0),
        theta_3db_deg=r.number(("pattern", "theta_3db_deg"), 65.0, positive=True),
        sla_v_db=r.number(("pattern", "sla_v_db"), 30.0),
        a_max_db=r.number(("pattern", "a_max_db"), 30.0),
    )
    tx_cb = TxCodebook(r.sorted_angles(("codebook", "tx_az_deg")), r.sorted_angles(("codebook", "tx_el_deg")))
    rx_cb = RxCodebook(r.sorted_angles(("codebook", "rx_az_deg")))

    tiers_raw = r.get(("snr", "tiers_db"), {"poor": 0.0, "medium": 10.0, "good": 20.0})
    if not isinstance(tiers_raw, dict):
        r.fail(("snr", "tiers_db"), "expected a mapping of tier name to dB")
    snr = {}
    for t in tiers_raw:
        if t not in TIERS:
            r.fail(("snr", "tiers_db", t), f"unknown tier {t!r}; expected one of {', '.join(TIERS)}")
        snr[t] = r.number(("snr", "tiers_db", t))
    tier = r.get(("snr", "tier"), "medium")
    if tier not in snr:
        r.fail(("snr", "tier"), f"unknown tier {tier!r}")

    sets_raw = r.get(("sensing", "rx_sets_deg"))
    if not isinstance(sets_raw, dict):
        r.fail(("sensing", "rx_sets_deg"), "expected a mapping of beam count to angles")
    rx_sets = {}
    for n in sets_raw:
        angles = r.sorted_angles(("sensing", "rx_sets_deg", n))
        if not isinstance(n, int) or len(angles) != n:
            r.fail(("sensing", "rx_sets_deg", n), f"set {n!r} has {len(angles)} angles")
        rx_sets[n] = angles
    rx_beams = r.integer(("sensing", "rx_beams"), 4)
    if rx_beams not in rx_sets:
        r.fail(("sensing", "rx_beams"), f"no Rx set with {rx_beams} beams")

    thr = r.get(("foresee", "elevation_threshold_deg"), None)
    if thr is not None:
        thr = np.deg2rad(r.number(("foresee", "elevation_threshold_deg"), positive=True))

    return Scenario(
        planes=planes,
        bs=bs,
        region=poly,
        height_range=(float(height[0]), float(height[1])),
        carrier=r.number(("radio", "carrier_hz"), 28e9, positive=True),
        subcarrier_spacing=r.number(("radio", "subcarrier_spacing_hz"), 60e3, positive=True),
        ssb_subcarriers=r.integer(("radio", "ssb_subcarriers"), 240),
        csirs_subcarriers=r.integer(("radio", "csirs_subcarriers"), 330),
        bs_array=(int(bs_array[0]), int(bs_array[1])),
        ue_elements=r.integer(("ue", "elements"), 4),
        ue_panels=r.integer(("ue", "panels"), 4),
        max_tilt=float(np.deg2rad(r.number(("ue", "max_tilt_deg"), 15.0))),
        pattern=pattern,
        tx_codebook=tx_cb,
        rx_codebook=rx_cb,
        rx_sets=rx_sets,
        snr_db=snr,
        tier=tier,
        k=r.integer(("sensing", "k"), 100),
        rx_beams=rx_beams,
        grid_spacing=r.number(("grid", "spacing"), 0.25, positive=True),
        grid_height=r.number(("grid", "height"), 1.2),
        grid_margin=r.number(("grid", "margin"), 0.25),
        budget=r.integer(("foresee", "budget"), 6),
        sector_margin=float(np.deg2rad(r.number(("foresee", "sector_margin_deg"), 10.0))),
        elevation_threshold=thr,
        seed=r.integer(("seed",), 7, minimum=0),
    )
