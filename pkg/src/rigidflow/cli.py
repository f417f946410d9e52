"""Command-line entry point: ``rigidflow <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from rigidflow.config import Config, load_config

log = logging.getLogger("rigidflow")


def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    return cfg.with_seed(args.seed) if args.seed is not None else cfg


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_meshes(path: Path):
    from rigidflow.pcio import read_mesh

    files = sorted(path.glob("*.obj")) if path.is_dir() else [path]
    if not files:
        raise SystemExit(f"no .obj meshes found in {path}")
    return [read_mesh(f) for f in files]


def cmd_augment(args) -> int:
    from rigidflow.augmentor import make_pair
    from rigidflow.pcio import read_velodyne_bin

    cfg = _config(args)
    if args.ego_mode:
        import dataclasses

        cfg.augment = dataclasses.replace(cfg.augment, ego_mode=args.ego_mode)
    scan = read_velodyne_bin(args.scan)
    meshes = _load_meshes(Path(args.meshes))
    seed = args.seed if args.seed is not None else 0
    pair = make_pair(scan, meshes, cfg.sensor, seed, cfg.augment, cfg.grid, n_cars=args.n_cars)
    manifest = pair.save(_out_dir(args, "pair"))
    print(manifest)
    return 0


def cmd_evaluate(args) -> int:
    from rigidflow.augmentor import load_pair
    from rigidflow.metrics import FieldPerturbation, run_pipeline

    cfg = _config(args)
    pair = load_pair(args.manifest)
    perturb = None
    if args.perturb_theta or args.perturb_t:
        perturb = FieldPerturbation(args.perturb_theta, tuple(args.perturb_t or (0.0, 0.0)), args.perturb_target)
    report = run_pipeline(pair, cfg, args.method, perturb, rng_seed=args.seed or 0)
    out = _out_dir(args, "eval")
    (out / "report.tsv").write_text(report.to_text("\t"))
    (out / "report.json").write_text(report.to_json() + "\n")
    sys.stdout.write(report.to_text("\t"))
    return 0


def _motion_json(m) -> dict:
    return {"theta": m.theta, "tx": m.t[0], "ty": m.t[1]}


def cmd_icp_flow(args) -> int:
    from rigidflow.augmentor import load_pair
    from rigidflow.baselines import icp
    from rigidflow.metrics import decode, icp_field
    from rigidflow.pcio import read_velodyne_bin, write_flow

    cfg = _config(args)
    out = _out_dir(args, "icp")
    if len(args.inputs) == 1:
        pair = load_pair(args.inputs[0])
        field, _, _ = icp_field(pair, cfg, args.seed or 0)
        dec = decode(field, pair.boxes, pair.scan_t.points)
        flow = dec.flow
        summary = {"ego": _motion_json(dec.ego), "objects": [_motion_json(m) for m in dec.motions]}
    elif len(args.inputs) == 2:
        src = read_velodyne_bin(args.inputs[0]).points
        dst = read_velodyne_bin(args.inputs[1]).points
        res = icp(src, dst, cfg.eval.icp_max_iter, cfg.eval.icp_tol)
        flow = res.motion.apply(src) - src
        summary = {
            "R": res.motion.R.tolist(), "t": res.motion.t.tolist(), "planar": _motion_json(res.motion.to_planar()),
            "iterations": res.iterations, "converged": res.converged, "mean_residual": res.mean_residual,
        }
    else:
        raise SystemExit("icp-flow takes a manifest or two scan files")
    write_flow(flow, out / "flow_icp.bin")
    (out / "motions.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(out / "flow_icp.bin")
    return 0


def cmd_equivariance(args) -> int:
    from rigidflow.rigidmotion import format_spread_table, stationarity_experiment

    thetas = np.round(np.arange(1, 11) * 0.1, 10)
    rows = stationarity_experiment(grid_n=args.grid_n, thetas=thetas, spacing=args.spacing)
    table = format_spread_table(rows, "\t")
    if args.out:
        (_out_dir(args, ".") / "spread.tsv").write_text(table)
    sys.stdout.write(table)
    return 0


def cmd_voxelize(args) -> int:
    from rigidflow.pcio import read_velodyne_bin
    from rigidflow.voxelgrid import voxelize

    cfg = _config(args)
    grid = voxelize(read_velodyne_bin(args.scan), cfg.grid)
    out = _out_dir(args, "voxels")
    np.savez_compressed(out / "voxels.npz", indices=grid.indices, features=grid.features,
                        members=grid.members, offsets=grid.offsets)
    print(f"{len(grid)} voxels, {grid.n_retained} points kept, "
          f"{grid.n_dropped} outside grid, {grid.n_discarded} over cap")
    return 0


def cmd_fixture(args) -> int:
    from rigidflow.pcio import write_mesh, write_velodyne_bin
    from rigidflow.synthetic import box_car_mesh, synthetic_scan

    cfg = _config(args)
    out = _out_dir(args, "fixture")
    write_velodyne_bin(synthetic_scan(sensor=cfg.sensor, rng_seed=args.seed or 0), out / "scan.bin")
    (out / "meshes").mkdir(exist_ok=True)
    write_mesh(box_car_mesh(), out / "meshes" / "car.obj")
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="seed for every random draw")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rigidflow", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("augment", parents=[common], help="insert moving cars into a scan, write a pair")
    a.add_argument("scan")
    a.add_argument("meshes", help=".obj file or directory of .obj files")
    a.add_argument("--n-cars", type=int)
    a.add_argument("--ego-mode", choices=["identity", "sampled"])
    a.set_defaults(func=cmd_augment)

    e = sub.add_parser("evaluate", parents=[common], help="decode a motion field and report errors")
    e.add_argument("manifest")
    e.add_argument("--method", choices=["gt", "icp"], default="gt")
    e.add_argument("--perturb-theta", type=float, default=0.0)
    e.add_argument("--perturb-t", type=float, nargs=2)
    e.add_argument("--perturb-target", choices=["objects", "background", "all"], default="objects")
    e.set_defaults(func=cmd_evaluate)

    i = sub.add_parser("icp-flow", parents=[common], help="scene flow from the ICP baseline")
    i.add_argument("inputs", nargs="+", help="pair manifest, or scan at t and scan at t+1")
    i.set_defaults(func=cmd_icp_flow)

    q = sub.add_parser("experiment-equivariance", parents=[common], help="world vs local target spread table")
    q.add_argument("--grid-n", type=int, default=10)
    q.add_argument("--spacing", type=float, default=1.0)
    q.set_defaults(func=cmd_equivariance)

    v = sub.add_parser("voxelize", parents=[common], help="voxel features of a scan")
    v.add_argument("scan")
    v.set_defaults(func=cmd_voxelize)

    f = sub.add_parser("fixture", parents=[common], help="write a synthetic street scan and a car mesh")
    f.set_defaults(func=cmd_fixture)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
