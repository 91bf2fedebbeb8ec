"""Command-line entry point: validate, bounds, foresee."""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import crlb, scene
from .config import ConfigError, default_config_path, load_scenario
from .geometry import quat_to_rotmat
from .io import RunManifest, write_csv, write_json

log = logging.getLogger("beamsight")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERIC = 2


class NumericalFailure(RuntimeError):
    pass


def _setup_logging():
    level = os.environ.get("BEAMSIGHT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _scenario(args):
    path = Path(args.config) if args.config else default_config_path()
    sc = load_scenario(path)
    if getattr(args, "seed", None) is not None:
        sc.seed = args.seed
    if getattr(args, "tier", None):
        sc.tier = args.tier
    if getattr(args, "rx_beams", None):
        if args.rx_beams not in sc.rx_sets:
            raise ConfigError(f"{path}: no sensing Rx set with {args.rx_beams} beams")
        sc.rx_beams = args.rx_beams
    if getattr(args, "k", None):
        sc.k = args.k
    return sc, path


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _plan(sc) -> scene.ExperimentPlan:
    return scene.ExperimentPlan(k=sc.k, tier=sc.tier, rx_beams=sc.rx_beams, seed=sc.seed)


def _radius_db(eb: float) -> float:
    if math.isnan(eb):
        return eb
    return max(0.0, -10.0 * math.log10(eb)) if 0 < eb < math.inf else 0.0


def _deg(x: float) -> float:
    return math.degrees(x) if math.isfinite(x) else x


# --------------------------------------------------------------------------


def cmd_validate(args) -> int:
    sc, path = _scenario(args)
    print(f"config: {path}")
    print(f"planes: {len(sc.planes)}  bs: {np.round(sc.bs.position, 6).tolist()}")
    print(f"{'id':>3} {'source':<12} {'x':>9} {'y':>9} {'z':>9}  mirror")
    for s in sc.visible_sources:
        kind = "none" if s.plane is None else s.plane.mirror_class
        x, y, z = s.position
        print(f"{s.index:>3} {s.name:<12} {x:>9.3f} {y:>9.3f} {z:>9.3f}  {kind}")
    hidden = [s.name for s in sc.sources if not s.visible]
    print(f"sources: {len(sc.visible_sources)} visible" + (f"; pruned behind the array: {', '.join(hidden)}" if hidden else ""))
    print(f"codebooks: {sc.tx_codebook.size} Tx beams, {sc.rx_codebook.size} Rx beams x {sc.ue_panels} panels")
    print("errors: 0")
    return EXIT_OK


def cmd_bounds(args) -> int:
    sc, path = _scenario(args)
    out = _outdir(args)
    res = scene.run_sensing(sc, _plan(sc), jobs=args.jobs)
    names = {s.index: s.name for s in sc.sources}
    cols = ["k"] + [f"peb_{names[i]}" for i in res.source_ids] + ["oeb_deg"]
    rows = [[k + 1, *res.peb[k], _deg(res.oeb[k])] for k in range(len(res.oeb))]
    write_csv(out / "bounds_trace.csv", "k = sensing instances; peb in metres per source; oeb in degrees; inf = unobservable", cols, rows)

    fim = res.fim
    ref = sc.reference_pose()
    rot_rel = np.eye(3) @ quat_to_rotmat(res.reference).T
    aebs = {}
    for s in sc.visible_sources:
        i = fim.slot(s.index)
        jac = crlb.path_jacobian(s.position, sc.bs.position, ref.position, rot_rel, res.delta_q,
                                 quat_to_rotmat(sc.bs.orientation), s.mirror_h, s.mirror_v)
        aebs[names[s.index]] = [_deg(math.sqrt(v)) if math.isfinite(v) else v for v in crlb.aeb(fim, jac, i)]
    unobs = [names[i] for i, p in zip(res.source_ids, res.peb[-1]) if not math.isfinite(p)]
    summary = {
        "k": sc.k,
        "tier": sc.tier,
        "rx_beams": sc.rx_beams,
        "peb_m": {names[i]: float(p) for i, p in zip(res.source_ids, res.peb[-1])},
        "oeb_deg": _deg(float(res.oeb[-1])),
        "aeb_deg_at_reference": aebs,
        "aeb_order": ["aoa_az", "aoa_el", "aod_az", "aod_el"],
        "unobservable": unobs,
        "panels": [inf.panel for inf in res.info],
    }
    write_json(out / "bounds.json", summary)
    if args.aeb_profiles:
        prof = scene.aeb_profiles(sc, res)
        write_csv(
            out / "aeb_profiles.csv",
            "profile z0: azimuth AoA bound vs direction in the horizontal plane; x0: elevation AoA bound in the y-z plane; "
            "angle in degrees; aeb in rad^2; radius_db = max(0, -10 log10 aeb)",
            ["source", "profile", "angle_deg", "aeb_rad2", "radius_db"],
            [[names[r["source"]], r["profile"], r["angle_deg"], r["aeb"],
              _radius_db(r["aeb"])] for r in prof],
        )
    RunManifest.create("bounds", path, sc.seed, out, _options(args)).write(out)
    for n in unobs:
        print(f"unobservable: {n}")
    print(f"K={sc.k} tier={sc.tier} rx_beams={sc.rx_beams} OEB={summary['oeb_deg']:.4g} deg")
    for n, p in summary["peb_m"].items():
        print(f"  PEB {n:<12} {p:.4g} m")
    if args.strict and unobs:
        raise NumericalFailure(f"sources not observable after K={sc.k}: {', '.join(unobs)}")
    return EXIT_OK


def cmd_foresee(args) -> int:
    sc, path = _scenario(args)
    out = _outdir(args)
    if args.kappa_inf:
        smap = scene.spatial_map(sc)
    else:
        res = scene.run_sensing(sc, _plan(sc), jobs=args.jobs)
        if not math.isfinite(res.peb[-1][0]):
            raise NumericalFailure("BS position is not observable; cannot build a map with uncertainty")
        smap = scene.spatial_map(sc, res)
    grid = scene.bg_loss_map(sc, smap, args.mode, args.blockage, seed=sc.seed, spacing=args.spacing, jobs=args.jobs)
    write_csv(out / "bg_loss.csv", "x, y in metres; loss_db = 20 log10(BG_exhaustive / BG_selected); nan = no signal",
              ["x", "y", "loss_db"], [[c.x, c.y, c.loss_db] for c in grid.cells])
    write_csv(out / "panel.csv", "x, y in metres; panels 0-based, panel j faces azimuth 90 + 90 j degrees in the device frame",
              ["x", "y", "es_panel", "selected_panel"], [[c.x, c.y, c.es_panel, c.sel_panel] for c in grid.cells])
    summary = grid.summary()
    summary.update({
        "kappa_inf": bool(args.kappa_inf),
        "evaluations_exhaustive": sc.ue_panels * sc.rx_codebook.size * sc.tx_codebook.size,
        "evaluations_selected_max": sc.budget if args.mode == "optimal" else 1,
    })
    write_json(out / "summary.json", summary)
    RunManifest.create("foresee", path, sc.seed, out, _options(args)).write(out)
    print(f"mode={args.mode} blockage={args.blockage} cells={summary['cells']} "
          f"max loss={summary['max_loss_db']:.3f} dB mean loss={summary['mean_loss_db']:.3f} dB "
          f"panel agreement={100 * summary['panel_agreement']:.1f}%")
    return EXIT_OK


def _options(args) -> dict:
    skip = {"func", "config", "out", "jobs"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="beamsight", description="Spatial-map error bounds and beam foreseeing")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, experiment=True):
        sp.add_argument("--config", help="scenario YAML (default: packaged room)")
        if not experiment:
            return
        sp.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--k", type=int, help="number of sensing instances")
        sp.add_argument("--tier", choices=scene.TIERS, help="SNR tier")
        sp.add_argument("--rx-beams", type=int, choices=(2, 3, 4), help="Rx beams per sensing sweep")
        sp.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")

    v = sub.add_parser("validate", help="check a scenario and list its transmit sources")
    common(v, experiment=False)
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bounds", help="PEB/OEB traces over sensing instances")
    common(b)
    b.add_argument("--aeb-profiles", action="store_true", help="also export AoA bound direction profiles")
    b.add_argument("--strict", action="store_true", help="exit 2 if any source is unobservable")
    b.set_defaults(func=cmd_bounds)

    f = sub.add_parser("foresee", help="BG loss of beam foreseeing against the exhaustive scan")
    common(f)
    f.add_argument("--mode", choices=("standard", "optimal"), default="optimal")
    f.add_argument("--blockage", action="store_true", help="remove the line-of-sight path")
    f.add_argument("--kappa-inf", action="store_true", help="use an error-free map instead of a sensing run")
    f.add_argument("--spacing", type=float, help="grid spacing in metres (overrides the config)")
    f.set_defaults(func=cmd_foresee)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "k", None) is not None and args.k < 1:
        print("error: --k must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalFailure, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
