"""Command-line front end.

Commands: ``register`` (align two scans), ``detect-loops`` (full sequence
evaluation), ``eval-losses`` (loss breakdown for a labeled pair),
``synth`` (generate synthetic scenes and trajectories), and ``info``
(inspect data files). Exit codes: 0 success, 2 input error, 3 config
error. Every command is deterministic given its config and seeds; when an
output directory is used, the effective config is echoed into it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import kitti, pipeline, synth, tensorio
from .config import ConfigError, RunConfig
from .geom import PointCloud
from .kitti import read_labels, read_poses, read_scan, write_labels, write_poses, write_scan
from .loopdb import registration_errors


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="padloc",
        description="LiDAR loop-closure detection and point cloud registration.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, help="TOML config file ([padloc] table)")
        p.add_argument("--seed", type=int, help="RNG seed (PADLOC_SEED overrides)")
        p.add_argument("--keypoints", type=int, help="keypoints sampled per scan")
        p.add_argument("--feature-dim", type=int, help="feature dimension f")
        p.add_argument("--descriptor-dim", type=int, help="descriptor length g")
        p.add_argument("--clusters", type=int, help="NetVLAD cluster count k")
        p.add_argument("--heads", type=int, help="attention head count")
        p.add_argument("--window", type=int, help="temporal exclusion window (scans)")
        p.add_argument("--positive-radius", type=float, help="loop positive radius (m)")
        p.add_argument("--feature-radius", type=float, help="feature neighborhood radius (m)")
        p.add_argument("--diversity", help="confidence metric: uniform, column-sum, "
                                           "shannon, hill(r), berger-parker")
        p.add_argument("--mode", choices=["pure-attention", "full-tel"], help="matching mode")
        p.add_argument("--include-xyz", action="store_true", default=None,
                       help="append raw keypoint xyz to base features")
        p.add_argument("--feature-weights", help="linear feature weight file")
        p.add_argument("--encoder-weights", help="encoder weight file")
        p.add_argument("--vlad-weights", help="descriptor weight file")

    p_reg = sub.add_parser("register", help="estimate the transform between two scans")
    p_reg.add_argument("scan_a", type=Path)
    p_reg.add_argument("scan_b", type=Path)
    p_reg.add_argument("--oracle-matching", action="store_true",
                       help="assume shared point order (synthetic pairs)")
    p_reg.add_argument("--gt-poses", type=Path,
                       help="pose file whose first line is the a->b ground truth")
    p_reg.add_argument("--out", type=Path, help="directory for the JSON report")
    add_config_flags(p_reg)
    p_reg.set_defaults(func=cmd_register)

    p_loops = sub.add_parser("detect-loops", help="evaluate loop closure over a sequence")
    p_loops.add_argument("sequence", type=Path, help="dir with velodyne/*.bin and poses.txt")
    p_loops.add_argument("--out", type=Path, required=True, help="output directory")
    p_loops.add_argument("--oracle-descriptors", action="store_true",
                         help="derive descriptors from ground-truth positions")
    p_loops.add_argument("--descriptor-noise", type=float, default=0.0,
                         help="gaussian noise sigma on oracle descriptors")
    p_loops.add_argument("--oracle-matching", action="store_true",
                         help="identity correspondences when registering candidate pairs")
    p_loops.add_argument("--no-register", action="store_true",
                         help="skip registering candidate pairs")
    add_config_flags(p_loops)
    p_loops.set_defaults(func=cmd_detect_loops)

    p_loss = sub.add_parser("eval-losses", help="loss breakdown for a labeled scan pair")
    p_loss.add_argument("scan_a", type=Path)
    p_loss.add_argument("scan_b", type=Path)
    p_loss.add_argument("--labels-a", type=Path, required=True)
    p_loss.add_argument("--labels-b", type=Path, required=True)
    p_loss.add_argument("--gt-transform", type=Path, required=True,
                        help="pose file whose first line maps scan_a into scan_b")
    p_loss.add_argument("--negative", type=Path, help="negative scan for the triplet term")
    p_loss.add_argument("--oracle-matching", action="store_true")
    p_loss.add_argument("--forward-only", action="store_true",
                        help="skip the reverse direction")
    p_loss.add_argument("--mmo-transpose", action="store_true",
                        help="use transposed forward matching in the object penalty")
    p_loss.add_argument("--out", type=Path, help="directory for the JSON breakdown")
    add_config_flags(p_loss)
    p_loss.set_defaults(func=cmd_eval_losses)

    p_synth = sub.add_parser("synth", help="generate synthetic data")
    synth_sub = p_synth.add_subparsers(dest="kind", required=True)

    p_pair = synth_sub.add_parser("pair", help="labeled scene pair with known transform")
    p_pair.add_argument("--out", type=Path, required=True)
    p_pair.add_argument("--objects", type=int, default=6)
    p_pair.add_argument("--points-per-object", type=int, default=64)
    p_pair.add_argument("--ground-points", type=int, default=0)
    p_pair.add_argument("--sigma", type=float, default=0.0, help="noise on the second cloud")
    p_pair.add_argument("--seed", type=int, default=0)
    p_pair.set_defaults(func=cmd_synth_pair)

    p_traj = synth_sub.add_parser("trajectory",
                                  help="figure-eight sequence with planted revisits")
    p_traj.add_argument("--out", type=Path, required=True)
    p_traj.add_argument("--samples-per-lap", type=int, default=64)
    p_traj.add_argument("--laps", type=int, default=2)
    p_traj.add_argument("--scale", type=float, default=150.0, help="trajectory extent (m)")
    p_traj.add_argument("--objects", type=int, default=6)
    p_traj.add_argument("--points-per-object", type=int, default=48)
    p_traj.add_argument("--seed", type=int, default=0)
    p_traj.set_defaults(func=cmd_synth_trajectory)

    p_info = sub.add_parser("info", help="inspect a scan, label, pose, tensor, or config file")
    p_info.add_argument("path", type=Path)
    p_info.set_defaults(func=cmd_info)

    return parser


def effective_config(args: argparse.Namespace) -> RunConfig:
    """File config, overridden by CLI flags, overridden by PADLOC_SEED."""
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {
        "seed": getattr(args, "seed", None),
        "n_keypoints": getattr(args, "keypoints", None),
        "f": getattr(args, "feature_dim", None),
        "g": getattr(args, "descriptor_dim", None),
        "k": getattr(args, "clusters", None),
        "heads": getattr(args, "heads", None),
        "window": getattr(args, "window", None),
        "positive_radius": getattr(args, "positive_radius", None),
        "feature_radius": getattr(args, "feature_radius", None),
        "diversity": getattr(args, "diversity", None),
        "mode": getattr(args, "mode", None),
        "include_xyz": getattr(args, "include_xyz", None),
        "feature_weights": getattr(args, "feature_weights", None),
        "encoder_weights": getattr(args, "encoder_weights", None),
        "vlad_weights": getattr(args, "vlad_weights", None),
    }
    cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg.with_env_overrides()


def _write_outputs(out_dir: Path, cfg: RunConfig, files: dict[str, str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.toml").write_text(cfg.to_toml())
    for name, content in files.items():
        (out_dir / name).write_text(content)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_register(args: argparse.Namespace, cfg: RunConfig) -> int:
    cloud_a = read_scan(args.scan_a)
    cloud_b = read_scan(args.scan_b)
    comps = pipeline.build_components(cfg)
    reg, residual, pair = pipeline.register_pair(cloud_a, cloud_b, cfg, comps,
                                                 oracle_matching=args.oracle_matching)

    conf = pair.forward.confidence
    report = {
        "rotation": reg.transform.rotation.tolist(),
        "translation": reg.transform.translation.tolist(),
        "residual_m": residual,
        "degenerate": reg.degenerate,
        "confidence": {"min": float(conf.min()), "mean": float(conf.mean()),
                       "max": float(conf.max())},
    }
    if args.gt_poses:
        gt = read_poses(args.gt_poses)[0]
        r_err, t_err = registration_errors(reg.transform, gt)
        report["r_err_deg"] = r_err
        report["t_err_m"] = t_err

    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if reg.degenerate:
        print("warning: degenerate configuration; transform is best-effort", file=sys.stderr)
    if args.out:
        _write_outputs(args.out, cfg, {"register.json": text + "\n"})
    return 0


def cmd_detect_loops(args: argparse.Namespace, cfg: RunConfig) -> int:
    report, _ = pipeline.detect_loops(
        args.sequence, cfg,
        oracle_descriptors=args.oracle_descriptors,
        descriptor_noise=args.descriptor_noise,
        oracle_matching=args.oracle_matching,
        register_candidates=not args.no_register,
    )
    poses = list(kitti.SequenceIndex.from_dir(args.sequence).poses)
    _write_outputs(args.out, cfg, {
        "report.json": report.to_json() + "\n",
        "pr_curve.csv": report.pr_curve_csv(),
        "loop_pairs.csv": report.pairs_csv(),
        "path.csv": pipeline.path_markers_csv(report, poses),
    })
    print(json.dumps({"ap": report.ap, "max_f1": report.max_f1, "ep": report.ep,
                      "pairs": len(report.pairs), "no_positives": report.no_positives},
                     indent=2, sort_keys=True))
    return 0


def cmd_eval_losses(args: argparse.Namespace, cfg: RunConfig) -> int:
    cloud_a = read_scan(args.scan_a)
    cloud_b = read_scan(args.scan_b)
    cloud_a = PointCloud(xyz=cloud_a.xyz, reflectance=cloud_a.reflectance,
                         labels=read_labels(args.labels_a, len(cloud_a)))
    cloud_b = PointCloud(xyz=cloud_b.xyz, reflectance=cloud_b.reflectance,
                         labels=read_labels(args.labels_b, len(cloud_b)))
    h_gt = read_poses(args.gt_transform)[0]
    negative = read_scan(args.negative) if args.negative else None

    comps = pipeline.build_components(cfg)
    breakdown = pipeline.pair_losses(
        cloud_a, cloud_b, h_gt, cfg, comps,
        oracle_matching=args.oracle_matching,
        negative=negative,
        include_reverse=not args.forward_only,
        mmo_transpose_fallback=args.mmo_transpose,
    )
    payload = {
        "losses": breakdown.to_json_dict(),
        "weights": {f.name: getattr(cfg.loss, f.name)
                    for f in dataclasses.fields(cfg.loss)},
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if args.out:
        _write_outputs(args.out, cfg, {"losses.json": text + "\n"})
    return 0


def cmd_synth_pair(args: argparse.Namespace, cfg: RunConfig | None = None) -> int:
    spec = synth.SceneSpec(n_objects=args.objects, points_per_object=args.points_per_object,
                           noise_sigma=args.sigma, seed=args.seed,
                           ground_points=args.ground_points)
    first, second, transform = synth.synth_pair(spec)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_scan(out / "a.bin", first)
    write_scan(out / "b.bin", second)
    write_labels(out / "a.label", first.labels)
    write_labels(out / "b.label", second.labels)
    write_poses(out / "gt_transform.txt", [transform])
    print(f"wrote pair of {len(first)}-point scenes to {out}")
    return 0


def cmd_synth_trajectory(args: argparse.Namespace, cfg: RunConfig | None = None) -> int:
    spec = synth.SceneSpec(n_objects=args.objects,
                           points_per_object=args.points_per_object, seed=args.seed)
    world, _ = synth.synth_scene(spec)
    poses = synth.figure_eight_poses(args.samples_per_lap, args.laps, args.scale)
    scans = synth.render_scans(world, poses)

    out = args.out
    (out / "velodyne").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    for i, scan in enumerate(scans):
        write_scan(out / "velodyne" / f"{i:06d}.bin", scan)
        write_labels(out / "labels" / f"{i:06d}.label", scan.labels)
    write_poses(out / "poses.txt", poses)
    print(f"wrote {len(scans)} scans ({len(world)} points each) to {out}")
    return 0


def cmd_info(args: argparse.Namespace, cfg: RunConfig | None = None) -> int:
    path = args.path
    if not path.exists():
        raise FileNotFoundError(path)

    head = b""
    if path.is_file():
        with path.open("rb") as fh:
            head = fh.read(4)
    if head == tensorio.MAGIC:
        tensors = tensorio.load_tensors(path)
        info = {name: list(t.shape) for name, t in tensors.items()}
        print(json.dumps({"kind": "tensor-container", "tensors": info}, indent=2))
        return 0
    if path.suffix == ".bin":
        cloud = read_scan(path)
        info = {
            "kind": "scan",
            "points": len(cloud),
            "bounds_min": cloud.xyz.min(axis=0).tolist() if len(cloud) else None,
            "bounds_max": cloud.xyz.max(axis=0).tolist() if len(cloud) else None,
        }
        print(json.dumps(info, indent=2))
        return 0
    if path.suffix == ".label":
        words = np.frombuffer(path.read_bytes(), dtype="<u4")
        labels = kitti.decode_label_words(words)
        unique, counts = np.unique(labels.semantic, return_counts=True)
        print(json.dumps({
            "kind": "labels",
            "points": len(labels),
            "semantic_histogram": {int(u): int(c) for u, c in zip(unique, counts)},
            "instances": int(np.unique(labels.instance).size),
        }, indent=2))
        return 0
    if path.suffix == ".toml":
        cfg_loaded = RunConfig.load(path)
        print(cfg_loaded.to_toml(), end="")
        return 0
    if path.suffix == ".txt":
        poses = read_poses(path)
        info = {
            "kind": "poses",
            "count": len(poses),
            "first_translation": poses[0].translation.tolist() if poses else None,
            "last_translation": poses[-1].translation.tolist() if poses else None,
        }
        print(json.dumps(info, indent=2))
        return 0
    raise ValueError(f"unrecognized file type: {path}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = effective_config(args) if hasattr(args, "config") else None
        return args.func(args, cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 3
    except (FileNotFoundError, OSError, ValueError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
