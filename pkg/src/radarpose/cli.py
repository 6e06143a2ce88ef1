"""Command-line entry point wiring data generation, training, and evaluation.

Subcommands: gen-data, train, eval, infer, bench, render. Every run
resolves its configuration as defaults < --config JSON < explicit flags,
writes the resolved configuration to a run-manifest JSON next to its
outputs, and can be reproduced bit-exactly by passing that manifest back
via --config. Exit codes: 0 success, 2 usage error, 1 runtime failure.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from . import autodiff as ad
from .dataset import build_samples, gt_joints_for, load_dataset, stack_samples
from .metrics import (
    compute_report,
    frames_trend_report,
    predict_joints,
    render_skeletons,
    timing_benchmark,
)
from .model import ModelConfig, ModelParams, decode_greedy, encode, load_params
from .seeding import rng_for
from .synth import (
    ACTIONS,
    SceneConfig,
    default_action_specs,
    frame_world_points,
    generate_dataset,
    generate_pose_sequence,
    synthesize_radar_frame,
    detections_to_world,
)
from .training import (
    SplitSpec,
    TrainConfig,
    make_splits,
    run_experiment_grid,
    train,
    write_results_csv,
)
from .voxels import VoxelDictionary, detokenize_keypoints

EVAL_COLUMNS = [
    "n_frames", "fold", "test_set",
    "mae_depth_cm", "mae_horizontal_cm", "mae_vertical_cm",
    "mae17_depth_cm", "mae17_horizontal_cm", "mae17_vertical_cm",
    "token_accuracy", "eos_agreement", "sample_count",
]


class UsageError(ValueError):
    pass


def _positive_int(text):
    try:
        value = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _frames_spec(text):
    """Parse '4', '1,4,8' or '1..10' into a sorted list of frame counts."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..")
            values = list(range(int(lo), int(hi) + 1))
        else:
            values = [int(part) for part in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad frame spec {text!r}") from exc
    if not values or any(not 1 <= v <= 10 for v in values):
        raise argparse.ArgumentTypeError("frame counts must be in 1..10")
    return sorted(set(values))


def _load_config_file(path):
    with open(path) as fh:
        data = json.load(fh)
    # Accept both bare config objects and run manifests.
    if isinstance(data, dict) and "config" in data and data.get("format") == "radarpose-manifest":
        return data["config"]
    return data


def _resolve(defaults: dict, args, keys) -> dict:
    """defaults < config file < explicit flags."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
        for key, value in file_cfg.items():
            if key in resolved:
                resolved[key] = value
    for key in keys:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            resolved[key] = value
    return resolved


def _write_manifest(command: str, config: dict, target_path: str):
    manifest = {
        "format": "radarpose-manifest",
        "version": 1,
        "tool_version": __version__,
        "command": command,
        "config": config,
    }
    with open(target_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _require_file(path):
    if not path or not os.path.exists(path):
        raise UsageError(f"input path does not exist: {path}")
    return path


def cmd_gen_data(args):
    defaults = {
        "frames": None,
        "seed": 0,
        "actions": ",".join(ACTIONS),
        "out": "data.jsonl",
        "scene": SceneConfig().to_config(),
    }
    cfg = _resolve(defaults, args, ["frames", "seed", "actions", "out"])
    if not cfg["frames"] or int(cfg["frames"]) <= 0:
        raise UsageError("--frames must be a positive record count")
    actions = [a.strip() for a in cfg["actions"].split(",") if a.strip()]
    for action in actions:
        if action not in ACTIONS:
            raise UsageError(f"unknown action {action!r}; choose from {ACTIONS}")
    scene = SceneConfig.from_config(cfg["scene"])
    specs = [s for s in default_action_specs() if s.action in actions]
    frames = int(cfg["frames"])
    base, extra = divmod(frames, len(specs))
    per_spec = [base + (1 if i < extra else 0) for i in range(len(specs))]
    summary = generate_dataset(specs, scene, per_spec, int(cfg["seed"]), cfg["out"])
    _write_manifest("gen-data", cfg, cfg["out"] + ".manifest.json")
    print(f"wrote {summary['records']} records to {cfg['out']} "
          f"({summary['roi_regenerations']} frames re-sampled for ROI)")
    return 0


def _train_setup(cfg):
    dataset = load_dataset(_require_file(cfg["data"]))
    dictionary = VoxelDictionary.from_config(cfg["dictionary"])
    split = SplitSpec(continuous_test_len=int(cfg["continuous_len"]), folds=int(cfg["folds"]),
                      train_fraction=float(cfg["train_fraction"]), seed=int(cfg["split_seed"]))
    tcfg = TrainConfig(learning_rate=float(cfg["lr"]), batch_size=int(cfg["batch_size"]),
                       max_epochs=int(cfg["epochs"]), patience=int(cfg["patience"]),
                       seed=int(cfg["seed"]), dtype=cfg["dtype"])
    return dataset, dictionary, split, tcfg


_TRAIN_DEFAULTS = {
    "data": None,
    "n_frames": 4,
    "fold": 1,
    "all_grid": False,
    "frames": "1..10",
    "epochs": 40,
    "batch_size": 32,
    "lr": 1e-3,
    "patience": 10,
    "seed": 0,
    "split_seed": 0,
    "dtype": "float32",
    "continuous_len": 1200,
    "folds": 5,
    "train_fraction": 0.8,
    "out": "runs",
    "dictionary": VoxelDictionary().to_config(),
    "model": {},
}


def cmd_train(args):
    cfg = _resolve(_TRAIN_DEFAULTS, args,
                   ["data", "n_frames", "fold", "all_grid", "frames", "epochs", "batch_size",
                    "lr", "patience", "seed", "split_seed", "dtype", "continuous_len",
                    "folds", "out"])
    if args.data:
        cfg["data"] = args.data
    dataset, dictionary, split, tcfg = _train_setup(cfg)
    os.makedirs(cfg["out"], exist_ok=True)
    _write_manifest("train", cfg, os.path.join(cfg["out"], "manifest_train.json"))

    if cfg["all_grid"]:
        frames = _frames_spec(cfg["frames"]) if isinstance(cfg["frames"], str) else cfg["frames"]
        rows = run_experiment_grid(
            dataset, dictionary, frames, split, tcfg, model_kwargs=cfg["model"],
            results_path=os.path.join(cfg["out"], "results.csv"),
            checkpoint_dir=cfg["out"],
            log=lambda row: print(f"n={row['n_frames']} fold={row['fold']} "
                                  f"{row['test_set']}: depth {row['mae_depth_cm']:.2f} cm"))
        frames_trend_report(rows, path=os.path.join(cfg["out"], "trend.tsv"))
        print(f"grid complete: {len(rows)} result rows in {cfg['out']}/results.csv")
        return 0

    n_frames = int(cfg["n_frames"])
    fold = int(cfg["fold"])
    if not 1 <= fold <= split.folds:
        raise UsageError(f"--fold must be in 1..{split.folds}")
    samples, _ = build_samples(dataset, dictionary, n_frames)
    _, folds = make_splits(samples, split)
    train_set, test_set = folds[fold - 1]
    mcfg = ModelConfig(vocab_size=dictionary.vocab_size, n_frames=n_frames, **cfg["model"])
    ckpt = os.path.join(cfg["out"], f"model_n{n_frames}_fold{fold}.ckpt")
    history = os.path.join(cfg["out"], f"history_n{n_frames}_fold{fold}.jsonl")
    result = train(train_set, test_set, tcfg, mcfg, dictionary,
                   checkpoint_path=ckpt, history_path=history,
                   log=lambda e: print(f"epoch {e['epoch']}: train {e['train_loss']:.4f} "
                                       f"val {e.get('val_loss', float('nan')):.4f}"))
    print(f"best epoch {result.best_epoch}; checkpoint {ckpt}")
    return 0


def _eval_rows(cfg, dataset, loaded):
    dictionary = loaded.dictionary
    config = loaded.config
    n_frames = config.n_frames
    samples, _ = build_samples(dataset, dictionary, n_frames)
    split = SplitSpec(continuous_test_len=int(cfg["continuous_len"]), folds=int(cfg["folds"]),
                      train_fraction=float(cfg["train_fraction"]), seed=int(cfg["split_seed"]))
    continuous, folds = make_splits(samples, split)
    fold = int(cfg["fold"])
    subsets = []
    if cfg["test"] in ("continuous", "both"):
        subsets.append(("continuous", continuous))
    if cfg["test"] in ("random20", "both"):
        subsets.append(("random20", folds[fold - 1][1]))
    rows = []
    for tag, subset in subsets:
        pred, stats = predict_joints(loaded.params, config, dictionary, subset)
        gt = gt_joints_for(dataset, subset, n_frames)
        report = compute_report(pred, gt, n_frames=n_frames, fold=fold, test_set=tag)
        from .training import evaluate_loss

        inputs, targets = stack_samples(subset)
        _, token_acc = evaluate_loss(inputs, targets, loaded.params, config)
        rows.append({
            "n_frames": n_frames, "fold": fold, "test_set": tag,
            "mae_depth_cm": report.mae_axes_cm[0],
            "mae_horizontal_cm": report.mae_axes_cm[1],
            "mae_vertical_cm": report.mae_axes_cm[2],
            "mae17_depth_cm": report.mae17_axes_cm[0],
            "mae17_horizontal_cm": report.mae17_axes_cm[1],
            "mae17_vertical_cm": report.mae17_axes_cm[2],
            "token_accuracy": token_acc,
            "eos_agreement": stats["eos_agreement"],
            "sample_count": report.sample_count,
        })
    return rows


def cmd_eval(args):
    defaults = {
        "data": None, "ckpt": None, "test": "both", "fold": 1,
        "split_seed": 0, "continuous_len": 1200, "folds": 5, "train_fraction": 0.8,
        "out": "eval_metrics.csv",
    }
    cfg = _resolve(defaults, args, ["data", "ckpt", "test", "fold", "split_seed",
                                    "continuous_len", "folds", "out"])
    if args.data:
        cfg["data"] = args.data
    dataset = load_dataset(_require_file(cfg["data"]))
    loaded = load_params(_require_file(cfg["ckpt"]))
    rows = _eval_rows(cfg, dataset, loaded)
    with open(cfg["out"], "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EVAL_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    _write_manifest("eval", cfg, cfg["out"] + ".manifest.json")
    for row in rows:
        print(f"{row['test_set']}: depth {row['mae_depth_cm']:.2f} cm, "
              f"horizontal {row['mae_horizontal_cm']:.2f} cm, "
              f"vertical {row['mae_vertical_cm']:.2f} cm over {row['sample_count']} samples")
    return 0


def cmd_infer(args):
    defaults = {"data": None, "ckpt": None, "index": None, "out": "prediction.json"}
    cfg = _resolve(defaults, args, ["data", "ckpt", "index", "out"])
    if args.data:
        cfg["data"] = args.data
    dataset = load_dataset(_require_file(cfg["data"]))
    loaded = load_params(_require_file(cfg["ckpt"]))
    n = loaded.config.n_frames
    index = int(cfg["index"]) if cfg["index"] is not None else n - 1
    if not n - 1 <= index < len(dataset.records):
        raise UsageError(f"--index must be in [{n - 1}, {len(dataset.records) - 1}]")
    window = [frame_world_points(dataset.records[i], dataset.scene)
              for i in range(index - n + 1, index + 1)]
    union = np.concatenate(window, axis=0)
    if union.shape[0] == 0:
        raise RuntimeError("window contains no radar points")
    centroid = union.mean(axis=0)
    from .voxels import tokenize_frame

    rows = np.empty((n, loaded.config.tokens_per_frame), dtype=np.int64)
    for i, pts in enumerate(window):
        rows[i], _ = tokenize_frame(pts - centroid, loaded.dictionary)
    with ad.no_grad():
        enc = encode(rows[None], loaded.params, loaded.config)
    result = decode_greedy(enc, loaded.params, loaded.config)
    joints = detokenize_keypoints(result.tokens[0], centroid, loaded.dictionary)
    payload = {
        "index": index,
        "tokens": result.tokens[0].tolist(),
        "terminal_token": int(result.terminal[0]),
        "centroid": centroid.tolist(),
        "joints": joints.tolist(),
    }
    with open(cfg["out"], "w") as fh:
        json.dump(payload, fh, indent=2)
    _write_manifest("infer", cfg, cfg["out"] + ".manifest.json")
    print(f"wrote 25 predicted joints for record {index} to {cfg['out']}")
    return 0


def cmd_bench(args):
    defaults = {"n_frames": "1..10", "samples": 200, "seed": 0, "out": "bench.tsv"}
    cfg = _resolve(defaults, args, ["n_frames", "samples", "seed", "out"])
    frames = _frames_spec(cfg["n_frames"]) if isinstance(cfg["n_frames"], str) else cfg["n_frames"]
    n_samples = int(cfg["samples"])
    seed = int(cfg["seed"])
    scene = SceneConfig()
    dictionary = VoxelDictionary()
    spec = default_action_specs()[0]
    max_n = max(frames)
    poses = generate_pose_sequence(spec, n_samples + max_n, seed, fps=scene.frame_rate_hz)
    world = []
    for k, pose in enumerate(poses):
        top, bottom = synthesize_radar_frame(
            pose, scene, rng_for(seed, "bench-frame", k), prev_pose=poses[k - 1] if k else None)
        world.append(np.concatenate([
            detections_to_world(top, scene.radar_top),
            detections_to_world(bottom, scene.radar_bottom)], axis=0))

    stats_rows = []
    for n in frames:
        mcfg = ModelConfig(vocab_size=dictionary.vocab_size, n_frames=n)
        params = ModelParams.init(mcfg, seed=seed, dtype=np.float32)
        windows = [world[k : k + n] for k in range(n_samples)]
        stats = timing_benchmark(params, mcfg, dictionary, windows, n_samples=n_samples)
        stats_rows.append(stats)
        print(f"N={n}: mean {stats.mean_ms:.2f} ms, p50 {stats.p50_ms:.2f} ms, "
              f"p95 {stats.p95_ms:.2f} ms over {stats.samples} decodes")
    with open(cfg["out"], "w") as fh:
        fh.write("n_frames\tsamples\tmean_ms\tp50_ms\tp95_ms\n")
        for stats in stats_rows:
            fh.write(f"{stats.n_frames}\t{stats.samples}\t{stats.mean_ms:.4f}"
                     f"\t{stats.p50_ms:.4f}\t{stats.p95_ms:.4f}\n")
    _write_manifest("bench", cfg, cfg["out"] + ".manifest.json")
    return 0


def cmd_render(args):
    defaults = {"data": None, "ckpt": None, "start": None, "count": 3, "out": "render"}
    cfg = _resolve(defaults, args, ["data", "ckpt", "start", "count", "out"])
    if args.data:
        cfg["data"] = args.data
    dataset = load_dataset(_require_file(cfg["data"]))
    loaded = load_params(_require_file(cfg["ckpt"]))
    n = loaded.config.n_frames
    start = int(cfg["start"]) if cfg["start"] is not None else n - 1
    count = int(cfg["count"])
    if count < 1:
        raise UsageError("--count must be positive")
    if not n - 1 <= start <= len(dataset.records) - count:
        raise UsageError(f"--start must be in [{n - 1}, {len(dataset.records) - count}]")

    samples, _ = build_samples(dataset, loaded.dictionary, n)
    by_start = {s.sample_id[1]: s for s in samples}
    chosen = []
    for k in range(start - n + 1, start - n + 1 + count):
        if k not in by_start:
            raise RuntimeError(f"window starting at record {k} was skipped during tokenization")
        chosen.append(by_start[k])
    pred, _ = predict_joints(loaded.params, loaded.config, loaded.dictionary, chosen)
    gt = gt_joints_for(dataset, chosen, n)
    written = render_skeletons(pred, gt, cfg["out"])
    _write_manifest("render", cfg, os.path.join(cfg["out"], "manifest_render.json"))
    print(f"wrote {len(written) - 1} SVG frames and animation.json to {cfg['out']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radarpose",
        description="Skeletal key-point estimation from mmWave radar point clouds.")
    parser.add_argument("--version", action="version", version=f"radarpose {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic two-radar dataset")
    p.add_argument("--frames", type=_positive_int, help="total number of records")
    p.add_argument("--seed", type=int)
    p.add_argument("--actions", help=f"comma-separated subset of {','.join(ACTIONS)}")
    p.add_argument("--config", help="JSON config or manifest file")
    p.add_argument("-o", "--out", help="output JSONL path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model or the full grid")
    p.add_argument("data", nargs="?", help="dataset JSONL path")
    p.add_argument("--n-frames", type=_positive_int, dest="n_frames")
    p.add_argument("--fold", type=_positive_int)
    p.add_argument("--all-grid", action="store_true", dest="all_grid", default=None)
    p.add_argument("--frames", help="grid frame counts, e.g. 1..10 or 1,4,8")
    p.add_argument("--epochs", type=_positive_int)
    p.add_argument("--batch-size", type=_positive_int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--split-seed", type=int, dest="split_seed")
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--continuous-len", type=_positive_int, dest="continuous_len")
    p.add_argument("--folds", type=_positive_int)
    p.add_argument("--config")
    p.add_argument("-o", "--out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test sets")
    p.add_argument("data", nargs="?")
    p.add_argument("--ckpt")
    p.add_argument("--test", choices=("continuous", "random20", "both"))
    p.add_argument("--fold", type=_positive_int)
    p.add_argument("--split-seed", type=int, dest="split_seed")
    p.add_argument("--continuous-len", type=_positive_int, dest="continuous_len")
    p.add_argument("--folds", type=_positive_int)
    p.add_argument("--config")
    p.add_argument("-o", "--out", help="metrics CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict 25 joints for one record window")
    p.add_argument("data", nargs="?")
    p.add_argument("--ckpt")
    p.add_argument("--index", type=int, help="record index of the window's last frame")
    p.add_argument("--config")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="time single-sample inference across frame counts")
    p.add_argument("--n-frames", dest="n_frames", help="e.g. 1..10")
    p.add_argument("--samples", type=_positive_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", help="render predicted vs ground-truth skeletons")
    p.add_argument("data", nargs="?")
    p.add_argument("--ckpt")
    p.add_argument("--start", type=int, help="record index of the first rendered frame")
    p.add_argument("--count", type=_positive_int)
    p.add_argument("--config")
    p.add_argument("-o", "--out", help="output directory")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (KeyboardInterrupt, BrokenPipeError):
        return 1
    except Exception as exc:  # runtime failure contract: exit 1 with diagnostic
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
