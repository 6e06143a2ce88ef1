"""Dataset loading and N-frame training-sample assembly.

Records come from the JSONL format written by :mod:`radarpose.synth`.
Frames are grouped into recordings (maximal runs of one subject doing
one action); sliding N-frame windows are cut within a recording only,
never across action or subject boundaries. For each window the merged
world-frame radar points of all N frames define one shared centroid;
both the N token rows and the ground-truth joints of the window's last
frame are centered with it, so a prediction can always be mapped back to
world coordinates from radar data alone.
"""

from dataclasses import dataclass
import json

import numpy as np

from .synth import SceneConfig, frame_world_points
from .voxels import (
    SampleInvalid,
    TokenizedSample,
    VoxelDictionary,
    tokenize_frame,
    tokenize_target,
)


@dataclass
class Dataset:
    header: dict
    records: list
    scene: SceneConfig


def load_dataset(path) -> Dataset:
    """Read a JSONL dataset (header line + one record per frame)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path} is empty")
    header = json.loads(lines[0])
    if header.get("format") != "radarpose-dataset":
        raise ValueError(f"{path} is not a radarpose dataset")
    if header.get("version") != 1:
        raise ValueError(f"unsupported dataset version {header.get('version')}")
    records = [json.loads(line) for line in lines[1:]]
    return Dataset(header=header, records=records, scene=SceneConfig.from_config(header["scene"]))


def recording_runs(records) -> list[tuple[int, int]]:
    """[start, stop) index ranges of maximal same-(subject, action) runs."""
    runs = []
    start = 0
    for i in range(1, len(records) + 1):
        if i == len(records) or (
            records[i]["subject"] != records[start]["subject"]
            or records[i]["action"] != records[start]["action"]
        ):
            runs.append((start, i))
            start = i
    return runs


@dataclass
class SampleStats:
    built: int = 0
    skipped_out_of_roi: int = 0
    skipped_empty: int = 0
    dropped_points: int = 0


def build_samples(dataset: Dataset, dictionary: VoxelDictionary, n_frames: int,
                  ) -> tuple[list[TokenizedSample], SampleStats]:
    """Cut and tokenize all N-frame sliding windows of a dataset.

    Samples whose ground-truth joints leave the ROI (or whose windows
    contain no radar points at all) are skipped and counted.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    stats = SampleStats()
    samples: list[TokenizedSample] = []
    world_cache = [frame_world_points(rec, dataset.scene) for rec in dataset.records]

    for run_idx, (start, stop) in enumerate(recording_runs(dataset.records)):
        for w_start in range(start, stop - n_frames + 1):
            frames = world_cache[w_start : w_start + n_frames]
            union = np.concatenate(frames, axis=0)
            if union.shape[0] == 0:
                stats.skipped_empty += 1
                continue
            centroid = union.mean(axis=0)
            rows = np.empty((n_frames, 90), dtype=np.int64)
            for i, pts in enumerate(frames):
                rows[i], dropped = tokenize_frame(pts - centroid, dictionary)
                stats.dropped_points += dropped
            last = dataset.records[w_start + n_frames - 1]
            joints = np.asarray(last["joints"], dtype=np.float64).reshape(25, 3)
            try:
                target = tokenize_target(joints - centroid, dictionary)
            except SampleInvalid:
                stats.skipped_out_of_roi += 1
                continue
            timestamps = np.array(
                [dataset.records[w_start + i]["t"] for i in range(n_frames)], dtype=np.float64)
            samples.append(TokenizedSample(
                input_tokens=rows,
                target_tokens=target,
                centroid=centroid,
                frame_timestamps=timestamps,
                sample_id=(run_idx, w_start),
            ))
            stats.built += 1
    return samples, stats


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    """(S, N, 90) inputs and (S, 27) targets as contiguous arrays."""
    inputs = np.stack([s.input_tokens for s in samples])
    targets = np.stack([s.target_tokens for s in samples])
    return inputs, targets


def gt_joints_for(dataset: Dataset, samples, n_frames: int) -> np.ndarray:
    """(S, 25, 3) ground-truth joints of each sample's last window frame.

    These are the original world-frame joints, not the detokenized
    targets, so metrics computed against them include quantization error.
    """
    out = np.empty((len(samples), 25, 3), dtype=np.float64)
    for i, sample in enumerate(samples):
        _, w_start = sample.sample_id
        record = dataset.records[w_start + n_frames - 1]
        out[i] = np.asarray(record["joints"], dtype=np.float64).reshape(25, 3)
    return out
