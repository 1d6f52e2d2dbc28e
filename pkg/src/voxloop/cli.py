"""Command-line interface tying the pipeline together.

Exit codes are machine-checkable: 0 success, 1 usage error, 2 data or
format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import errors
from .config import Config, load_config
from .evaluation import evaluate, rotation_error, translation_error, write_report_csv
from .geometry import PointCloud, RigidTransform, voxelize
from .kitti_io import read_poses, read_scan, write_poses, write_scan
from .loop import ConstraintWriter, DetectorConfig, LoopDetector
from .models import ModelDims, PipelineModel
from .overlap import cloud_overlap, frames_overlapped
from .synthetic import (SyntheticWorld, TrainingPair, WorldParams,
                        generate_pair, make_dataset, sample_offset, yaw_pose)
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_DATA_ERRORS = (errors.FormatError, errors.EmptyInput, errors.InvalidPoint,
                errors.InputMismatch, errors.OrderError)
_NUMERIC_ERRORS = (errors.NumericalFailure, errors.DegenerateGeometry,
                   errors.Underdetermined, errors.NoMatches,
                   errors.NotARotation, errors.ShapeError,
                   errors.NotNormalized, errors.NotScalar)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="voxloop",
                     description="Lidar loop closure and registration toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", help="write voxel centroids as CSV")
    p.add_argument("--in", dest="scan", required=True)
    p.add_argument("--size", type=float, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("overlap", help="ground-truth (and estimated) overlap")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--gt", required=True, help="pose file with the a->b transform")
    p.add_argument("--config")
    p.add_argument("--checkpoint")

    p = sub.add_parser("register", help="estimate the transform between two scans")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--gt", help="optional pose file for TE/RE")
    p.add_argument("--config")

    p = sub.add_parser("loopdetect", help="run loop detection over a trajectory")
    p.add_argument("--frames", required=True, help="directory of .bin scans")
    p.add_argument("--poses", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")

    p = sub.add_parser("train", help="train a checkpoint on synthetic pairs")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log-every", type=int, default=0)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a pair manifest")
    p.add_argument("--pairs", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")

    p = sub.add_parser("synth", help="write a synthetic dataset to disk")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--frames", type=int, default=107,
                   help="trajectory length in frames")
    p.add_argument("--eval-pairs", type=int, default=40)
    return parser


def _load_cfg(path: str | None) -> Config:
    return load_config(path) if path else Config()


def _dims(cfg: Config) -> ModelDims:
    return ModelDims(cfg.voxel_dim, cfg.point_dim, cfg.hidden_dim,
                     cfg.model_dim, cfg.heads, cfg.point_budget,
                     cfg.density_radius, cfg.pair_term)


def _read_relative_pose(path: str) -> RigidTransform:
    poses = read_poses(path)
    return poses[0]


def _frame_features(model: PipelineModel, cloud: PointCloud, cfg: Config,
                    seed: int):
    _, desc = model.describe_frame(cloud, cfg.voxel_size, sample_seed=seed)
    return model.embed(desc)


def cmd_voxelize(args) -> int:
    cloud = read_scan(args.scan)
    if args.size <= 0:
        raise _UsageError("--size must be positive")
    vc = voxelize(cloud, args.size)
    with open(args.out, "w") as fh:
        fh.write("x,y,z,point_count\n")
        for v in vc.voxels:
            fh.write(f"{v.centroid[0]:.9g},{v.centroid[1]:.9g},"
                     f"{v.centroid[2]:.9g},{len(v.point_indices)}\n")
    print(f"voxelized {len(cloud)} points into {len(vc)} voxels")
    return EXIT_OK


def cmd_overlap(args) -> int:
    cfg = _load_cfg(args.config)
    cloud_a = read_scan(args.a)
    cloud_b = read_scan(args.b)
    gt = _read_relative_pose(args.gt)
    qa = voxelize(cloud_a, cfg.voxel_size)
    qb = voxelize(cloud_b, cfg.voxel_size)
    ov = cloud_overlap(qa, qb, gt, th=cfg.pair_threshold)
    est_text = "na"
    if args.checkpoint:
        model = PipelineModel.load(args.checkpoint)
        fa = _frame_features(model, cloud_a, cfg, 0)
        fb = _frame_features(model, cloud_b, cfg, 1)
        pred = model.predict_frame_overlap(fa, fb, cfg.pair_threshold)
        est_text = f"{pred.cloud_value:.6f}"
    print(f"overlap gt={ov.value:.6f} est={est_text} "
          f"overlapped={frames_overlapped(ov)}")
    return EXIT_OK


def cmd_register(args) -> int:
    cfg = _load_cfg(args.config)
    model = PipelineModel.load(args.checkpoint)
    cloud_a = read_scan(args.a)
    cloud_b = read_scan(args.b)
    fa = _frame_features(model, cloud_a, cfg, 0)
    fb = _frame_features(model, cloud_b, cfg, 1)
    pred = model.predict_frame_overlap(fa, fb, cfg.pair_threshold)
    est, _, _ = model.register_pair(fa, fb, pred.o_hat,
                                    cfg.pairing_threshold, cfg.max_pairs)
    print(" ".join(f"{v:.12g}" for v in est.as_matrix().ravel()))
    if args.gt:
        gt = _read_relative_pose(args.gt)
        print(f"te={translation_error(est, gt):.6f} "
              f"re={rotation_error(est, gt):.6f}")
    return EXIT_OK


def cmd_loopdetect(args) -> int:
    cfg = _load_cfg(args.config)
    model = PipelineModel.load(args.checkpoint)
    scans = sorted(f for f in os.listdir(args.frames) if f.endswith(".bin"))
    if not scans:
        raise errors.EmptyInput(f"no .bin scans in {args.frames}")
    poses = read_poses(args.poses)
    if len(poses) < len(scans):
        raise errors.FormatError(
            f"{len(scans)} scans but only {len(poses)} poses")
    detector = LoopDetector(model, DetectorConfig(
        keyframe_stride=cfg.keyframe_stride, far_radius=cfg.far_radius,
        recent_arclength=cfg.recent_arclength,
        overlap_threshold=cfg.overlap_threshold,
        translation_threshold=cfg.translation_threshold,
        voxel_size=cfg.voxel_size, pair_threshold=cfg.pair_threshold,
        pairing_threshold=cfg.pairing_threshold, max_pairs=cfg.max_pairs))
    total = 0
    with open(args.out, "w") as fh:
        writer = ConstraintWriter(fh)
        for frame_id, name in enumerate(scans):
            cloud = read_scan(os.path.join(args.frames, name))
            constraints = detector.process(frame_id, cloud, poses[frame_id])
            total += writer.emit(constraints)
    print(f"processed {len(scans)} frames, "
          f"{len(detector.keyframes)} keyframes, {total} loop constraints")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    dataset = make_dataset(cfg.seed, cfg.train_pairs, cfg.noise_sigma,
                           cfg.scene_style, cfg.half_extent, cfg.voxel_size)
    model = PipelineModel(_dims(cfg), seed=cfg.seed)
    tcfg = TrainConfig(steps=cfg.steps, lr=cfg.lr, seed=cfg.seed,
                       voxel_size=cfg.voxel_size,
                       pair_threshold=cfg.pair_threshold,
                       pairing_threshold=cfg.pairing_threshold,
                       max_pairs=cfg.max_pairs, gamma=cfg.gamma, eta=cfg.eta,
                       circle_alpha=cfg.circle_alpha,
                       circle_beta=cfg.circle_beta,
                       distance_points_cap=cfg.distance_points_cap)
    report = train(model, dataset, tcfg, log_every=args.log_every)
    model.save(args.out, {"train_summary": report.summary()})
    print(report.summary())
    return EXIT_OK


def _load_manifest(path: str) -> list[TrainingPair]:
    base = os.path.dirname(os.path.abspath(path))
    cfg = Config()
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = text.split()
            if len(fields) != 14:
                raise errors.FormatError(
                    f"manifest line needs 2 paths + 12 values, got {len(fields)}",
                    line=lineno)
            cloud_a = read_scan(os.path.join(base, fields[0]))
            cloud_b = read_scan(os.path.join(base, fields[1]))
            gt = RigidTransform.from_matrix(np.array([float(v) for v in fields[2:]]))
            qa = voxelize(cloud_a, cfg.voxel_size)
            qb = voxelize(cloud_b, cfg.voxel_size)
            ov = cloud_overlap(qa, qb, gt, th=cfg.pair_threshold)
            pairs.append(TrainingPair(cloud_a, cloud_b, gt, ov,
                                      frames_overlapped(ov),
                                      meta={"seed": lineno}))
    if not pairs:
        raise errors.EmptyInput(f"manifest has no pairs: {path}")
    return pairs


def cmd_eval(args) -> int:
    cfg = _load_cfg(args.config)
    model = PipelineModel.load(args.checkpoint)
    dataset = _load_manifest(args.pairs)
    report = evaluate(model, dataset, cfg.success_te, cfg.success_re,
                      cfg.overlap_threshold, cfg.translation_threshold,
                      cfg.voxel_size, cfg.pair_threshold,
                      cfg.pairing_threshold, cfg.max_pairs)
    write_report_csv(report, args.out)
    print(report.summary(), end="")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _load_cfg(args.config)
    out = args.out
    os.makedirs(os.path.join(out, "velodyne"), exist_ok=True)
    os.makedirs(os.path.join(out, "pairs"), exist_ok=True)

    world = SyntheticWorld(WorldParams(seed=args.seed, style=cfg.scene_style))
    poses = square_loop_poses(side=25.0, step=1.0, frames=args.frames)
    for i, pose in enumerate(poses):
        cloud = world.frame(pose, cfg.half_extent)
        write_scan(os.path.join(out, "velodyne", f"{i:06d}.bin"), cloud)
    write_poses(os.path.join(out, "poses.txt"), poses)

    rng = np.random.default_rng([args.seed, 99])
    manifest = os.path.join(out, "pairs", "manifest.txt")
    with open(manifest, "w") as fh:
        for k in range(args.eval_pairs):
            if k % 4 == 3:
                offset = sample_offset(rng, 40.0, 180.0)
            else:
                offset = sample_offset(rng, 5.0, 30.0)
            pair = generate_pair(args.seed + 500 + k, offset, cfg.noise_sigma,
                                 cfg.scene_style, cfg.half_extent,
                                 cfg.voxel_size, cfg.pair_threshold)
            name_a, name_b = f"a_{k:03d}.bin", f"b_{k:03d}.bin"
            write_scan(os.path.join(out, "pairs", name_a), pair.frame_a)
            write_scan(os.path.join(out, "pairs", name_b), pair.frame_b)
            values = " ".join(f"{v:.17g}"
                              for v in pair.gt_transform.as_matrix().ravel())
            fh.write(f"{name_a} {name_b} {values}\n")
    print(f"wrote {len(poses)} frames and {args.eval_pairs} eval pairs to {out}")
    return EXIT_OK


def square_loop_poses(side: float, step: float, frames: int,
                      overshoot: float | None = None) -> list[RigidTransform]:
    """Square trajectory with heading-aligned yaw; extra frames revisit
    the first side after closing the loop."""
    corners = [(0.0, 0.0), (side, 0.0), (side, side), (0.0, side)]
    poses = []
    dist = 0.0
    perimeter = 4 * side
    for i in range(frames):
        s = (i * step) % perimeter
        leg = int(s // side)
        along = s - leg * side
        x0, y0 = corners[leg]
        x1, y1 = corners[(leg + 1) % 4]
        ux, uy = (x1 - x0) / side, (y1 - y0) / side
        yaw = np.arctan2(uy, ux)
        poses.append(yaw_pose(x0 + ux * along, y0 + uy * along, yaw))
        dist += step
    return poses


_COMMANDS = {
    "voxelize": cmd_voxelize,
    "overlap": cmd_overlap,
    "register": cmd_register,
    "loopdetect": cmd_loopdetect,
    "train": cmd_train,
    "eval": cmd_eval,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except errors.NotConfigured as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
