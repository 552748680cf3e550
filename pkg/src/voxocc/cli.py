"""Command-line surface for batch use: label generation, rendering,
evaluation, threshold sweeps, fitting, and mesh extraction.

Exit codes: 0 success, 1 usage error, 2 data error. Every subcommand
writes its artifacts under --out along with a manifest.json recording the
exact configuration, so a run can be replayed bit for bit.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import depthmap, fitting, labels, meshing, metrics, volume
from .fitting import (DEFAULT_LIDAR_ORIGIN, OptimConfig, ScanPattern, fit,
                      history_csv, init_grid, load_scene, make_default_rig,
                      make_default_scene, synthesize_views)
from .geometry import GridSpec, load_rig, save_rig
from .render import RenderConfig, render_depth_map
from .volume import GridMode, Interp


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _load_cloud(path, origin=(0.0, 0.0, 0.0)):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    try:
        if path.suffix == ".xyz":
            return labels.load_cloud_xyz(path, origin)
        return labels.load_cloud_bin(path, origin)
    except ValueError as e:
        raise DataError(str(e))


def _load_depth(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    try:
        if path.suffix == ".pgm":
            return depthmap.load_pgm(path)
        return depthmap.load_f32(path)
    except ValueError as e:
        raise DataError(f"{path}: {e}")


def _load_grid(path):
    try:
        return volume.load_grid(path)
    except (OSError, ValueError) as e:
        raise DataError(f"{path}: {e}")


def _write_manifest(out: Path, args, artifacts):
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    doc = {"command": args.command, "config": cfg,
           "artifacts": sorted(str(a) for a in artifacts)}
    with open(out / "manifest.json", "w") as f:
        json.dump(doc, f, indent=2, default=str)
        f.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_labels(args):
    cloud = _load_cloud(args.cloud, args.lidar_origin)
    scene, origin, _, _ = load_scene(args.scene) if args.scene else (None, None, None, None)
    if scene is not None:
        spec = scene.spec
        cloud = labels.PointCloud(cloud.points, origin)
    else:
        spec = GridSpec(args.grid_min, args.grid_max, args.dims)
    ls = labels.generate_labels(cloud, spec, args.n, args.seed)
    out = _out_dir(args)
    occ = labels.PointCloud(ls.occupied, cloud.origin)
    emp = labels.PointCloud(ls.empty, cloud.origin)
    labels.save_cloud_xyz(occ, out / "occupied.xyz")
    labels.save_cloud_xyz(emp, out / "empty.xyz")
    _write_manifest(out, args, ["occupied.xyz", "empty.xyz"])
    print(f"{len(ls.occupied)} occupied, {len(ls.empty)} empty labels")
    return 0


def cmd_render_depth(args):
    grid = _load_grid(args.grid)
    rig = load_rig(args.rig)
    cams = {c.name: c for c in rig}
    if args.camera not in cams:
        raise DataError(f"camera {args.camera!r} not in rig "
                        f"({', '.join(sorted(cams))})")
    cfg = RenderConfig(n_samples=args.samples, near=args.near, far=args.far,
                       interp=Interp(args.interp), jitter_seed=args.jitter_seed)
    dm = render_depth_map(grid, cams[args.camera], cfg)
    out = _out_dir(args)
    depthmap.save_pgm(dm, out / f"{args.camera}.pgm")
    depthmap.save_f32(dm, out / f"{args.camera}.f32")
    artifacts = [f"{args.camera}.pgm", f"{args.camera}.f32"]
    if args.png:
        from PIL import Image
        vis = np.where(dm.valid, dm.depth, 0.0)
        vis = (255 * vis / max(vis.max(), 1e-9)).astype(np.uint8)
        Image.fromarray(vis).save(out / f"{args.camera}.png")
        artifacts.append(f"{args.camera}.png")
    _write_manifest(out, args, artifacts)
    return 0


def cmd_eval_occ(args):
    grid = _load_grid(args.grid)
    cloud = _load_cloud(args.cloud, args.lidar_origin)
    try:
        report, skipped = metrics.discrete_depth_metrics(
            grid, cloud, args.threshold, args.step, args.max_depth)
    except ValueError as e:
        raise DataError(str(e))
    csv = metrics.report_csv([(args.threshold, report)])
    out = _out_dir(args)
    (out / "discrete_depth.csv").write_text(csv)
    _write_manifest(out, args, ["discrete_depth.csv"])
    sys.stdout.write(csv)
    print(f"# skipped {skipped} out-of-range points")
    return 0


def cmd_eval_depth(args):
    pred = _load_depth(args.pred)
    gt = _load_depth(args.gt)
    try:
        report = metrics.depth_map_metrics(pred, gt, args.cap)
    except ValueError as e:
        raise DataError(str(e))
    csv = metrics.report_csv([report], header_extra=())
    out = _out_dir(args)
    (out / "depth_metrics.csv").write_text(csv)
    _write_manifest(out, args, ["depth_metrics.csv"])
    sys.stdout.write(csv)
    return 0


def cmd_sweep_threshold(args):
    grid = _load_grid(args.grid)
    cloud = _load_cloud(args.cloud, args.lidar_origin)
    try:
        table, best = metrics.threshold_sweep(
            grid, cloud, args.lo, args.hi, args.step,
            args.walk_step, args.max_depth)
    except ValueError as e:
        raise DataError(str(e))
    csv = metrics.report_csv(table)
    out = _out_dir(args)
    (out / "sweep.csv").write_text(csv)
    _write_manifest(out, args, ["sweep.csv"])
    sys.stdout.write(csv)
    print(f"# best threshold (min abs_rel): {best:g}")
    return 0


def cmd_fit_synthetic(args):
    if args.scene == "default":
        scene = make_default_scene()
        rig = make_default_rig()
        lidar_origin = DEFAULT_LIDAR_ORIGIN
        scan = ScanPattern()
    else:
        scene, lidar_origin, scan, rig_file = load_scene(args.scene)
        if rig_file is None:
            raise DataError(f"{args.scene}: scene file must reference a rig_file")
        rig = load_rig(Path(args.scene).parent / rig_file)
    if args.mode is None:
        args.mode = ("probability" if args.loss in ("bce", "weighted_l1")
                     else "density")
    mode = GridMode[args.mode.upper()]
    cfg = OptimConfig(lr=args.lr, iters=args.iters, loss=args.loss,
                      batch_rays=args.batch_rays, n_samples=args.samples,
                      near=args.near, far=args.far, gt_range=args.gt_range)
    views = synthesize_views(scene, rig, lidar_origin, scan,
                             max_range=cfg.gt_range,
                             with_images="photometric" in cfg.loss)
    grid = init_grid(scene.spec, mode)
    grid, history = fit(grid, views, rig, cfg, args.seed)
    out = _out_dir(args)
    volume.save_grid(grid, out / "fitted.occ")
    (out / "loss.csv").write_text(history_csv(history))
    cloud_path = out / "scan.xyz"
    labels.save_cloud_xyz(views.cloud, cloud_path)
    save_rig(rig, out / "rig.json")
    _write_manifest(out, args, ["fitted.occ", "loss.csv", "scan.xyz", "rig.json"])
    print(f"final loss {history[-1][1]:.6f} after {len(history)} iters")
    return 0


def cmd_extract_mesh(args):
    grid = _load_grid(args.grid)
    mesh = meshing.marching_cubes(grid, args.iso)
    out = _out_dir(args)
    name = "mesh.ply"
    meshing.write_ply(mesh, out / name, binary=args.binary)
    _write_manifest(out, args, [name])
    print(f"{len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles")
    return 0


def cmd_selfcheck(args):
    from . import selfcheck
    return selfcheck.run()


def build_parser() -> _Parser:
    p = _Parser(prog="voxocc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        sp = sub.add_parser(name, **kw)
        sp.set_defaults(func=fn)
        return sp

    sp = add("gen-labels", cmd_gen_labels,
             help="stratified occupancy labels from a point cloud")
    sp.add_argument("--cloud", required=True)
    sp.add_argument("--scene", help="scene file supplying grid and lidar origin")
    sp.add_argument("--grid-min", type=float, nargs=3, default=[-52.0, 0.0, -52.0])
    sp.add_argument("--grid-max", type=float, nargs=3, default=[52.0, 6.0, 52.0])
    sp.add_argument("--dims", type=int, nargs=3, default=[256, 16, 256])
    sp.add_argument("--lidar-origin", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    sp.add_argument("--n", type=int, default=30)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("render-depth", cmd_render_depth, help="render a depth map")
    sp.add_argument("--grid", required=True)
    sp.add_argument("--rig", required=True)
    sp.add_argument("--camera", required=True)
    sp.add_argument("--samples", type=int, default=64)
    sp.add_argument("--near", type=float, default=0.4)
    sp.add_argument("--far", type=float, default=52.0)
    sp.add_argument("--interp", choices=["nearest", "trilinear"], default="trilinear")
    sp.add_argument("--jitter-seed", type=int, default=None)
    sp.add_argument("--png", action="store_true",
                    help="also write an 8-bit visualization PNG")
    sp.add_argument("--out", required=True)

    sp = add("eval-occ", cmd_eval_occ, help="ray-walk depth statistics vs a cloud")
    sp.add_argument("--grid", required=True)
    sp.add_argument("--cloud", required=True)
    sp.add_argument("--lidar-origin", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    sp.add_argument("--threshold", type=float, required=True)
    sp.add_argument("--step", type=float, default=0.2)
    sp.add_argument("--max-depth", type=float, default=52.0)
    sp.add_argument("--out", required=True)

    sp = add("eval-depth", cmd_eval_depth, help="depth-map statistics")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--cap", type=float, default=52.0)
    sp.add_argument("--out", required=True)

    sp = add("sweep-threshold", cmd_sweep_threshold,
             help="discrete depth statistics over a threshold range")
    sp.add_argument("--grid", required=True)
    sp.add_argument("--cloud", required=True)
    sp.add_argument("--lidar-origin", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    sp.add_argument("--lo", type=float, default=0.0)
    sp.add_argument("--hi", type=float, default=1.0)
    sp.add_argument("--step", type=float, default=0.05)
    sp.add_argument("--walk-step", type=float, default=0.2)
    sp.add_argument("--max-depth", type=float, default=52.0)
    sp.add_argument("--out", required=True)

    sp = add("fit-synthetic", cmd_fit_synthetic,
             help="fit a voxel grid to a synthetic scene")
    sp.add_argument("--scene", default="default",
                    help="'default' or a scene JSON file")
    sp.add_argument("--loss", default="silog",
                    choices=["silog", "bce", "weighted_l1", "photometric"])
    sp.add_argument("--mode", default=None,
                    choices=["probability", "density", "sdf"],
                    help="grid representation; defaults to density for "
                         "rendered-depth losses, probability for label losses")
    sp.add_argument("--iters", type=int, default=2000)
    sp.add_argument("--lr", type=float, default=0.3)
    sp.add_argument("--batch-rays", type=int, default=3072)
    sp.add_argument("--samples", type=int, default=48)
    sp.add_argument("--near", type=float, default=0.4)
    sp.add_argument("--far", type=float, default=12.0)
    sp.add_argument("--gt-range", type=float, default=9.5,
                    help="max synthetic return distance kept for supervision")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("extract-mesh", cmd_extract_mesh, help="marching-cubes PLY export")
    sp.add_argument("--grid", required=True)
    sp.add_argument("--iso", type=float, default=0.5)
    sp.add_argument("--binary", action="store_true")
    sp.add_argument("--out", required=True)

    sp = add("selfcheck", cmd_selfcheck,
             help="run the built-in gradient and oracle suites")
    return p


def main(argv=None) -> int:
    threads = os.environ.get("THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as e:
        sys.stderr.write(f"error: {e}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
