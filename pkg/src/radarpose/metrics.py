"""Localization metrics, trend reporting, timing, and skeleton rendering.

MAE is computed in world coordinates (after detokenization and centroid
restoration), per axis, in centimeters, as the mean over samples and
joints of |pred - gt|. The 17-joint variant excludes the eight
hand-region joints whose radar cross-section is too small to resolve.
"""

from dataclasses import dataclass
import json
import os
import platform
import time

import numpy as np

from . import autodiff as ad
from .model import ModelConfig, ModelParams, decode_greedy, encode
from .skeleton import JOINT_NAMES, OUTLIER_JOINT_INDICES, SKELETON_EDGE_INDICES
from .voxels import VoxelDictionary, detokenize_keypoints, tokenize_frame

# Accuracies reported for the original hardware dataset at the 8-frame
# setting (25-joint metric, shuffled test split), kept as documentation
# constants. Synthetic-data results are NOT comparable to these.
REFERENCE_MAE_8_FRAMES_CM = {"depth": 2.68, "horizontal": 2.12, "vertical": 2.37}
REFERENCE_BEST_N_FRAMES = 8

AXIS_NAMES = ("depth", "horizontal", "vertical")


def mae_per_axis(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-axis MAE in cm over (S, 25, 3) predicted and ground-truth joints."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return np.abs(pred - gt).mean(axis=tuple(range(pred.ndim - 1))) * 100.0


def mae_per_joint(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """(25, 3) per-joint per-axis MAE in cm."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 25, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 25, 3)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return np.abs(pred - gt).mean(axis=0) * 100.0


def mae_17_outlier_removed(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-axis MAE in cm excluding the eight hand-region joints."""
    keep = [i for i in range(25) if i not in OUTLIER_JOINT_INDICES]
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 25, 3)[:, keep, :]
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 25, 3)[:, keep, :]
    return np.abs(pred - gt).mean(axis=(0, 1)) * 100.0


@dataclass
class MaeReport:
    mae_axes_cm: np.ndarray  # (3,) depth/horizontal/vertical
    mae_per_joint_cm: np.ndarray  # (25, 3)
    mae17_axes_cm: np.ndarray  # (3,)
    sample_count: int
    n_frames: int
    fold: object
    test_set: str


def compute_report(pred, gt, n_frames: int, fold, test_set: str) -> MaeReport:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 25, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 25, 3)
    return MaeReport(
        mae_axes_cm=mae_per_axis(pred, gt),
        mae_per_joint_cm=mae_per_joint(pred, gt),
        mae17_axes_cm=mae_17_outlier_removed(pred, gt),
        sample_count=pred.shape[0],
        n_frames=n_frames,
        fold=fold,
        test_set=test_set,
    )


def cross_fold_average(reports) -> MaeReport:
    """Elementwise mean of same-setting fold reports."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to average")
    first = reports[0]
    for r in reports[1:]:
        if r.n_frames != first.n_frames or r.test_set != first.test_set:
            raise ValueError("cannot average reports with mixed n_frames or test-set tags")
    return MaeReport(
        mae_axes_cm=np.mean([r.mae_axes_cm for r in reports], axis=0),
        mae_per_joint_cm=np.mean([r.mae_per_joint_cm for r in reports], axis=0),
        mae17_axes_cm=np.mean([r.mae17_axes_cm for r in reports], axis=0),
        sample_count=int(np.sum([r.sample_count for r in reports])),
        n_frames=first.n_frames,
        fold="mean",
        test_set=first.test_set,
    )


def predict_joints(params: ModelParams, config: ModelConfig, dictionary: VoxelDictionary,
                   samples, batch_size: int = 128) -> tuple[np.ndarray, dict]:
    """Greedy-decode samples into world-frame joints.

    Returns ((S, 25, 3) joints, decode stats). Stats carry the
    eos-agreement rate, the worst attention-weight sum error over all
    decode steps, and the count of decodes that returned exactly 25
    voxel-range tokens (all of them, by the masking guarantee).
    """
    samples = list(samples)
    preds = np.empty((len(samples), 25, 3), dtype=np.float64)
    eos_hits = 0
    worst_att = 0.0
    exact_25 = 0
    first_voxel = dictionary.first_voxel_token
    for lo in range(0, len(samples), batch_size):
        batch = samples[lo : lo + batch_size]
        inputs = np.stack([s.input_tokens for s in batch])
        with ad.no_grad():
            enc = encode(inputs, params, config)
        result = decode_greedy(enc, params, config)
        worst_att = max(worst_att, result.max_attention_sum_error)
        eos_hits += int(np.sum(result.terminal == dictionary.eos_token))
        in_range = (result.tokens >= first_voxel) & (result.tokens < dictionary.vocab_size)
        exact_25 += int(np.sum(in_range.all(axis=1) & (result.tokens.shape[1] == 25)))
        for i, sample in enumerate(batch):
            preds[lo + i] = detokenize_keypoints(result.tokens[i], sample.centroid, dictionary)
    stats = {
        "eos_agreement": eos_hits / max(1, len(samples)),
        "max_attention_sum_error": worst_att,
        "decodes": len(samples),
        "decodes_exactly_25_voxel_tokens": exact_25,
    }
    return preds, stats


def frames_trend_report(rows, path=None) -> dict:
    """MAE-vs-N trend per axis and test set; flags the argmin N.

    ``rows`` are result dicts as produced by the experiment grid. Fold
    entries are averaged per (n_frames, test_set). Writes a TSV
    (n_frames, axis, test_set, mae_cm) when ``path`` is given. A flat
    trend (spread below 0.1 cm) is flagged explicitly.
    """
    keyed: dict = {}
    for row in rows:
        key = (int(row["n_frames"]), row["test_set"])
        keyed.setdefault(key, []).append(
            [row["mae_depth_cm"], row["mae_horizontal_cm"], row["mae_vertical_cm"]])
    table = []
    for (n_frames, test_set), values in sorted(keyed.items()):
        mean = np.mean(values, axis=0)
        for axis, value in zip(AXIS_NAMES, mean):
            table.append({"n_frames": n_frames, "axis": axis,
                          "test_set": test_set, "mae_cm": float(value)})
    argmin = {}
    flat = {}
    for test_set in sorted({row["test_set"] for row in table}):
        per_n = {}
        for row in table:
            if row["test_set"] == test_set:
                per_n.setdefault(row["n_frames"], []).append(row["mae_cm"])
        ns = sorted(per_n)
        overall = [float(np.mean(per_n[n])) for n in ns]
        argmin[test_set] = ns[int(np.argmin(overall))]
        flat[test_set] = bool(max(overall) - min(overall) < 0.1)
    if path is not None:
        with open(path, "w") as fh:
            fh.write("n_frames\taxis\ttest_set\tmae_cm\n")
            for row in table:
                fh.write(f"{row['n_frames']}\t{row['axis']}\t{row['test_set']}\t{row['mae_cm']:.6f}\n")
    return {"table": table, "argmin_n": argmin, "flat_trend": flat,
            "reference_best_n": REFERENCE_BEST_N_FRAMES}


@dataclass
class TimingStats:
    n_frames: int
    samples: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    environment: dict


def timing_benchmark(params: ModelParams, config: ModelConfig, dictionary: VoxelDictionary,
                     point_frames, n_samples: int = 200, warmup: int = 10) -> TimingStats:
    """Wall-clock of single-sample inference: tokenization + greedy decode.

    ``point_frames`` is a sequence of windows, each a list of N (M, 3)
    world-frame point arrays (file I/O excluded by construction). Reports
    mean/p50/p95 over at least ``n_samples`` decodes after warm-up.
    """
    windows = list(point_frames)
    if not windows:
        raise ValueError("need at least one window")
    from .training import tune_allocator

    tune_allocator()

    def run_one(window):
        union = np.concatenate(window, axis=0)
        centroid = union.mean(axis=0)
        rows = np.empty((config.n_frames, config.tokens_per_frame), dtype=np.int64)
        for i, pts in enumerate(window):
            rows[i], _ = tokenize_frame(pts - centroid, dictionary)
        with ad.no_grad():
            enc = encode(rows[None, :, :], params, config)
        result = decode_greedy(enc, params, config)
        return detokenize_keypoints(result.tokens[0], centroid, dictionary)

    for i in range(warmup):
        run_one(windows[i % len(windows)])
    times = []
    for i in range(max(n_samples, 1)):
        window = windows[i % len(windows)]
        started = time.perf_counter()
        run_one(window)
        times.append((time.perf_counter() - started) * 1e3)
    times = np.asarray(times)
    env = {
        "python": platform.python_version(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "cpu_count": os.cpu_count(),
        "numpy": np.__version__,
        "dtype": str(params.dtype),
    }
    return TimingStats(
        n_frames=config.n_frames,
        samples=len(times),
        mean_ms=float(times.mean()),
        p50_ms=float(np.percentile(times, 50)),
        p95_ms=float(np.percentile(times, 95)),
        environment=env,
    )


_SVG_VIEW = (-1.2, -1.3, 2.4, 2.6)  # x-min, y-min, width, height in meters


def _svg_skeleton(joints: np.ndarray, stroke: str, dash: str = "") -> str:
    """Front-view (horizontal, vertical) polyline group for one skeleton."""
    parts = [f'<g stroke="{stroke}" stroke-width="0.02" fill="none"{dash}>']
    for a, b in SKELETON_EDGE_INDICES:
        x1, y1 = joints[a][1], -joints[a][2]
        x2, y2 = joints[b][1], -joints[b][2]
        parts.append(f'<line x1="{x1:.4f}" y1="{y1:.4f}" x2="{x2:.4f}" y2="{y2:.4f}" />')
    parts.append("</g>")
    return "\n".join(parts)


def render_skeletons(pred: np.ndarray, gt: np.ndarray, out_dir) -> list[str]:
    """Write one SVG per frame (GT and prediction overlaid) plus animation JSON.

    Frames are drawn in a front view centered on the ground-truth pelvis;
    ground truth is green, prediction red-dashed. Returns written paths.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 25, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 25, 3)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    vx, vy, vw, vh = _SVG_VIEW
    for k in range(pred.shape[0]):
        center = gt[k][0]  # pelvis
        g = gt[k] - center
        p = pred[k] - center
        body = "\n".join([
            f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{vx} {vy} {vw} {vh}">',
            f'<rect x="{vx}" y="{vy}" width="{vw}" height="{vh}" fill="white" />',
            _svg_skeleton(g, "green"),
            _svg_skeleton(p, "red", ' stroke-dasharray="0.04 0.02"'),
            "</svg>",
        ])
        out_path = os.path.join(out_dir, f"frame_{k:04d}.svg")
        with open(out_path, "w") as fh:
            fh.write(body)
        written.append(out_path)
    anim_path = os.path.join(out_dir, "animation.json")
    with open(anim_path, "w") as fh:
        json.dump({
            "joint_names": JOINT_NAMES,
            "bones": SKELETON_EDGE_INDICES,
            "frames": [{"gt": gt[k].tolist(), "pred": pred[k].tolist()}
                       for k in range(pred.shape[0])],
        }, fh)
    written.append(anim_path)
    return written
