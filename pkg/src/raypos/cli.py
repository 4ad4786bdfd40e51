"""Command-line front end: trace, calibrate, locate, eval, gen-scene.

Exit codes: 0 ok, 2 I/O or scene error, 3 coverage failure (locate only),
4 config error. Angles on the command line are in degrees.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .aoa import (CalibrationTable, Measurement, calibrate_position, derive_rng,
                  load_calibration, sample_measurement)
from .config import RunConfig, load_config, write_effective
from .demo import demo_scene
from .errors import (CalibrationMissing, ConfigError, NoCellScored, OriginOutsideScene,
                     SceneLoadError)
from .estimator import ALGORITHMS, locate
from .evaluation import (campaign_positions, calibrate_campaign, run_campaign,
                         write_campaign)
from .geometry import load_scene, save_scene
from .rays import CellGrid, LaunchAngle, trace

EXIT_OK = 0
EXIT_IO = 2
EXIT_COVERAGE = 3
EXIT_CONFIG = 4

TRACE_HEADER = ["vertex", "x", "y", "z"]
SCORE_MAP_HEADER = ["cell_ix", "cell_iy", "beta"]
MEASUREMENT_HEADER = ["bs_index", "azimuth_deg", "elevation_deg"]


def _global_flags(parser: argparse.ArgumentParser, default) -> None:
    # ``default`` is SUPPRESS on subcommands so flags given before the
    # subcommand are not reset by the subparser
    d = (lambda v: v) if default is None else (lambda v: default)
    parser.add_argument("--config", type=Path, default=d(None), help="YAML run config")
    parser.add_argument("--seed", type=int, default=d(None), help="master seed (overrides config)")
    parser.add_argument("--workers", type=int, default=d(1), help="worker processes")
    parser.add_argument("--out", type=Path, default=d(None), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raypos", description=__doc__.splitlines()[0])
    _global_flags(parser, None)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, argparse.SUPPRESS)
        return p

    p = add("trace", "trace one ray and dump its polyline as CSV")
    p.add_argument("--scene", type=Path, help="scene file (default: config scene or demo hall)")
    p.add_argument("--origin", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"))
    p.add_argument("--azimuth", type=float, required=True, help="degrees")
    p.add_argument("--elevation", type=float, default=0.0, help="degrees above horizontal")
    p.add_argument("--max-bounces", type=int, default=None)

    add("calibrate", "compute the ground-truth AoA table for the configured positions")

    p = add("locate", "estimate a position from one AoA per BS")
    p.add_argument("--aoa", action="append", default=[], metavar="BS:AZ[:EL]",
                   help="inline measurement in degrees; repeat per BS")
    p.add_argument("--measurements", type=Path,
                   help=f"CSV with columns {','.join(MEASUREMENT_HEADER)} (elevation optional)")
    p.add_argument("--ue", type=float, nargs=3, metavar=("X", "Y", "Z"),
                   help="synthesize noisy measurements for this true position")
    p.add_argument("--algo", choices=ALGORITHMS, default=None)
    p.add_argument("--rays", type=int, default=None, help="rays per BS (default: first in config)")
    p.add_argument("--sigma", type=float, default=None,
                   help="AoA error std in degrees (default: first in config)")

    add("eval", "run a positioning campaign and write results, CDF and summary CSVs")

    p = add("gen-scene", "write the demo hall scene and a matching config")
    p.add_argument("--racks", type=int, default=4)
    p.add_argument("--rack-height", type=float, default=2.5)
    p.add_argument("--no-machines", action="store_true")
    return parser


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config is not None else RunConfig()
    if args.seed is not None:
        cfg.campaign.seed = args.seed
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    return cfg


def _out_dir(args) -> Optional[Path]:
    if args.out is None:
        return None
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _positions(cfg: RunConfig, scene) -> np.ndarray:
    if cfg.positions is not None:
        return np.asarray(cfg.positions, float).reshape(-1, 3)
    return campaign_positions(cfg.campaign, scene, cfg.base_stations())


def cmd_trace(args) -> int:
    cfg = _load_run_config(args)
    if args.scene is not None:
        scene = load_scene(args.scene)
    else:
        scene = cfg.load_scene()
    bounces = cfg.campaign.max_bounces if args.max_bounces is None else args.max_bounces
    path = trace(scene, args.origin, LaunchAngle.from_degrees(args.azimuth, args.elevation), bounces)
    out = _out_dir(args)
    fh = open(out / "trace.csv", "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for i, v in enumerate(path.vertices):
            w.writerow([i, *(repr(float(c)) for c in v)])
    finally:
        if out:
            fh.close()
    status = "escaped" if path.escaped else "terminated"
    print(f"{path.bounce_count} bounces, length {path.length:.4f} m, {status}", file=sys.stderr)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(args) or Path(".")
    scene = cfg.load_scene()
    c = cfg.campaign
    table = calibrate_campaign(c, scene, _positions(cfg, scene), args.workers)
    table_path = out / "calibration.csv"
    table.write_csv(table_path)
    found = sum(ang is not None for *_, ang in table.rows())
    print(f"wrote {table_path} ({found}/{len(table)} (position, BS) pairs reached)")
    echo = dataclasses.replace(cfg, calibration=str(table_path.resolve()))
    write_effective(echo, out)
    return EXIT_OK


def _parse_inline(item: str) -> tuple:
    parts = item.split(":")
    if len(parts) not in (2, 3):
        raise ConfigError(f"--aoa {item!r}: expected BS:AZ or BS:AZ:EL")
    try:
        bs = int(parts[0])
        az = float(parts[1])
        el = float(parts[2]) if len(parts) == 3 else None
    except ValueError:
        raise ConfigError(f"--aoa {item!r}: not numeric") from None
    return bs, az, el


def _read_measurement_file(path: Path) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"bs_index", "azimuth_deg"} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: header must include bs_index,azimuth_deg")
        for row in reader:
            el = row.get("elevation_deg")
            rows.append((int(row["bs_index"]), float(row["azimuth_deg"]),
                         float(el) if el not in (None, "") else None))
    return rows


def _measurements(args, cfg: RunConfig, scene, bs_list) -> tuple:
    """Measurements from --aoa / --measurements, or synthesized from --ue.

    Returns ``(measurements, true_position or None)``.
    """
    if args.ue is not None:
        ue = np.asarray(args.ue, float)
        table = load_calibration(cfg.calibration) if cfg.calibration else CalibrationTable()
        if all(table.has(ue, b.index) for b in bs_list):
            truth = [table.lookup(ue, b.index) for b in bs_list]
        else:
            c = cfg.campaign
            truth = calibrate_position(scene, ue, bs_list, c.n_probe_rays,
                                       math.radians(c.bin_width_deg), c.max_bounces)
        meas = []
        for b, theta in zip(bs_list, truth):
            if theta is None:
                print(f"BS {b.index}: no ray reaches this position, skipped", file=sys.stderr)
                continue
            rng = derive_rng(cfg.campaign.seed, 0, 0, b.index, 0)
            meas.append(sample_measurement(theta, b, rng, cfg.campaign.measurement_3d))
        return meas, ue
    rows = [_parse_inline(s) for s in args.aoa]
    if args.measurements is not None:
        rows += _read_measurement_file(args.measurements)
    if not rows:
        raise ConfigError("locate needs --aoa, --measurements or --ue")
    known = {b.index for b in bs_list}
    meas = []
    for bs, az, el in rows:
        if bs not in known:
            raise ConfigError(f"measurement for unknown BS index {bs}")
        if el is None and cfg.campaign.elevation_range_deg is None:
            raise ConfigError(f"BS {bs}: elevation required unless elevation_range_deg is set")
        meas.append(Measurement(bs, LaunchAngle.from_degrees(az, 0.0 if el is None else el)))
    return meas, None


def write_score_map(beta: np.ndarray, grid: CellGrid, path) -> None:
    """Non-zero cells only, in linear-index order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_MAP_HEADER)
        for k in np.flatnonzero(beta):
            ix, iy = grid.unravel(int(k))
            w.writerow([int(ix), int(iy), repr(float(beta[k]))])


def cmd_locate(args) -> int:
    cfg = _load_run_config(args)
    c = cfg.campaign
    scene = cfg.load_scene()
    sigma_deg = c.sigmas_deg[0] if args.sigma is None else args.sigma
    if sigma_deg < 0:
        raise ConfigError("--sigma must be >= 0")
    bs_list = cfg.base_stations(math.radians(sigma_deg))
    algo = args.algo or c.estimators[0]
    l = c.rays_per_bs[0] if args.rays is None else args.rays
    if l < 1:
        raise ConfigError("--rays must be >= 1")
    grid = CellGrid.for_scene(scene, c.cell_size, c.slab_z_center, c.slab_z_halfwidth)
    meas, truth = _measurements(args, cfg, scene, bs_list)
    rngs = [derive_rng(c.seed, 0, 0, m.bs_index, 1) for m in meas]
    try:
        score, est = locate(scene, bs_list, meas, grid, algo, l, rngs, c.max_bounces,
                            c.measurement_3d, c.benchmark_cone_scale,
                            elevation_range=c.elevation_range)
    except NoCellScored as exc:
        print(f"coverage failure: {exc} ({len(meas)} BS, {l} rays each, "
              f"cell {c.cell_size} m)", file=sys.stderr)
        return EXIT_COVERAGE
    ix, iy = grid.unravel(est.argmax_cell)
    print(f"algo {algo}, {len(meas)} BS, {l} rays per BS, sigma {sigma_deg:g} deg")
    print(f"argmax cell ({ix}, {iy}) at ({est.argmax_point[0]:.4f}, {est.argmax_point[1]:.4f})")
    print(f"mean estimate ({est.mean_point[0]:.4f}, {est.mean_point[1]:.4f})")
    if truth is not None:
        err = float(np.hypot(*(est.argmax_point - truth[:2])))
        print(f"true position ({truth[0]:.4f}, {truth[1]:.4f}), error {err:.4f} m")
    out = _out_dir(args)
    if out is not None:
        write_score_map(score.beta, grid, out / "score_map.csv")
        write_effective(cfg, out)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(args) or Path(".")
    scene = cfg.load_scene()
    c = cfg.resolved_campaign()
    positions = _positions(cfg, scene)
    if cfg.calibration:
        table = load_calibration(cfg.calibration)
    else:
        table = calibrate_campaign(c, scene, positions, args.workers)
        table.write_csv(out / "calibration.csv")
    results = run_campaign(c, scene, table, args.workers, positions)
    summaries = write_campaign(results, out)
    write_effective(cfg, out)
    for s in summaries.values():
        print(f"{s.algo:9s} sigma {s.sigma_deg:g} deg, l {s.rays_per_bs}: "
              f"Q50 {s.quantiles[0.5]:.3f} Q90 {s.quantiles[0.9]:.3f} "
              f"Q95 {s.quantiles[0.95]:.3f} m, coverage failures {s.coverage_fail_rate:.1%}")
    return EXIT_OK


def cmd_gen_scene(args) -> int:
    out = _out_dir(args) or Path(".")
    scene = demo_scene(n_racks=args.racks, rack_height=args.rack_height,
                       machines=not args.no_machines)
    save_scene(scene, out / "scene.obj")
    cfg = RunConfig()
    cfg.campaign.scene = "scene.obj"
    if args.seed is not None:
        cfg.campaign.seed = args.seed
    doc = cfg.to_dict()
    doc["scene"] = "scene.obj"
    (out / "config.yaml").write_text(yaml.safe_dump(doc, sort_keys=False, default_flow_style=None))
    print(f"wrote {out / 'scene.obj'} ({len(scene)} triangles) and {out / 'config.yaml'}")
    return EXIT_OK


COMMANDS = {
    "trace": cmd_trace,
    "calibrate": cmd_calibrate,
    "locate": cmd_locate,
    "eval": cmd_eval,
    "gen-scene": cmd_gen_scene,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"raypos: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SceneLoadError, OriginOutsideScene, CalibrationMissing, OSError) as exc:
        print(f"raypos: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
