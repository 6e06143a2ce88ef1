"""Dataset splitting, the optimizer loop, and the N-frame experiment grid.

The split protocol: a continuous block of samples is branched off first
as an unshuffled test set (for temporal/visual evaluation), then the
remainder is shuffled per fold into 80/20 train/test partitions, five
folds by default. Training minimizes sparse categorical cross-entropy
with Adam and is bit-deterministic given (samples, seeds, config).
"""

from dataclasses import dataclass, field
import csv
import json
import time

import numpy as np

from . import autodiff as ad
from .dataset import Dataset, build_samples, gt_joints_for, stack_samples
from .metrics import compute_report, predict_joints
from .model import ModelConfig, ModelParams, forward_teacher_forced, save_params
from .seeding import rng_for
from .voxels import VoxelDictionary

RESULT_COLUMNS = [
    "n_frames", "fold", "test_set",
    "mae_depth_cm", "mae_horizontal_cm", "mae_vertical_cm",
    "mae17_depth_cm", "mae17_horizontal_cm", "mae17_vertical_cm",
    "token_accuracy", "eos_agreement", "train_seconds", "infer_ms_mean",
]


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; aborted with diagnostics."""


_ALLOCATOR_TUNED = False


def tune_allocator():
    """Keep vocabulary-sized temporaries off the mmap path (glibc only).

    Every training step allocates and frees ~100 MB logits/softmax
    arrays; by default glibc returns such blocks to the OS, so each step
    pays the page-fault cost again. Raising the mmap threshold lets the
    arena recycle them (2-3x faster steps). No-op where unavailable.
    """
    global _ALLOCATOR_TUNED
    if _ALLOCATOR_TUNED:
        return
    _ALLOCATOR_TUNED = True
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except Exception:
        pass


@dataclass(frozen=True)
class SplitSpec:
    continuous_test_len: int = 1200
    folds: int = 5
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.continuous_test_len < 1 or self.folds < 1:
            raise ValueError("continuous_test_len and folds must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")

    def to_dict(self) -> dict:
        return {"continuous_test_len": self.continuous_test_len, "folds": self.folds,
                "train_fraction": self.train_fraction, "seed": self.seed}


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 60
    patience: int = 10
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.optimizer != "adam":
            raise ValueError("only the adaptive-moment optimizer is provided")
        if self.learning_rate < 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size, max_epochs must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        return {"optimizer": self.optimizer, "learning_rate": self.learning_rate,
                "batch_size": self.batch_size, "max_epochs": self.max_epochs,
                "patience": self.patience, "seed": self.seed, "dtype": self.dtype}


def _contiguous_runs(samples) -> list[tuple[int, int]]:
    """[start, stop) ranges of consecutive sample ids in the sample list."""
    runs = []
    start = 0
    for i in range(1, len(samples) + 1):
        if i == len(samples) or not (
            samples[i].sample_id[0] == samples[i - 1].sample_id[0]
            and samples[i].sample_id[1] == samples[i - 1].sample_id[1] + 1
        ):
            runs.append((start, i))
            start = i
    return runs


def make_splits(samples, spec: SplitSpec):
    """Branch off the continuous test block, then draw the shuffled folds.

    Returns (continuous_test, [(train_j, test_j), ...]). The continuous
    block is the head of the first contiguous run of samples long enough
    to supply ``continuous_test_len``; the remainder is shuffled with a
    per-fold sub-seed and split train_fraction/(1 - train_fraction).
    """
    samples = list(samples)
    block = None
    for start, stop in _contiguous_runs(samples):
        if stop - start >= spec.continuous_test_len:
            block = (start, start + spec.continuous_test_len)
            break
    if block is None:
        raise ValueError(
            f"no contiguous run of {spec.continuous_test_len} samples for the continuous test set")
    continuous = samples[block[0] : block[1]]
    remainder = samples[: block[0]] + samples[block[1] :]
    if len(remainder) < 2 * spec.folds:
        raise ValueError("dataset too small after removing the continuous block")

    folds = []
    for j in range(1, spec.folds + 1):
        perm = rng_for(spec.seed, "fold", j).permutation(len(remainder))
        cut = int(round(spec.train_fraction * len(remainder)))
        train = [remainder[i] for i in perm[:cut]]
        test = [remainder[i] for i in perm[cut:]]
        folds.append((train, test))
    return continuous, folds


class Adam:
    """Adaptive-moment estimation over flat (value, gradient) buffer pairs.

    Accepts a ModelParams (runs over its pooled storage as single passes)
    or any list of tensors.
    """

    def __init__(self, params, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if isinstance(params, ModelParams):
            if params._pool is None:
                params.pool()
            self.pairs = [(params._pool, params._grad_pool)]
        else:
            tensors = list(params)
            for t in tensors:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
            self.pairs = [(t.data, t.grad) for t in tensors]
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p, _ in self.pairs]
        self.v = [np.zeros_like(p) for p, _ in self.pairs]
        self.t = 0
        self._scratch = [np.empty_like(p) for p, _ in self.pairs]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        scale = self.lr / bias1
        for (p, g), m, v, tmp in zip(self.pairs, self.m, self.v, self._scratch):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - b2
            v += tmp
            np.divide(v, bias2, out=tmp)
            np.sqrt(tmp, out=tmp)
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= scale
            p -= tmp


def evaluate_loss(inputs: np.ndarray, targets: np.ndarray, params: ModelParams,
                  config: ModelConfig, batch_size: int = 256) -> tuple[float, float]:
    """Teacher-forced loss and token accuracy without recording a tape."""
    total_loss = 0.0
    total_acc = 0.0
    count = inputs.shape[0]
    with ad.no_grad():
        for lo in range(0, count, batch_size):
            hi = min(lo + batch_size, count)
            res = forward_teacher_forced(inputs[lo:hi], targets[lo:hi], params, config)
            total_loss += float(res.loss.data) * (hi - lo)
            total_acc += res.token_accuracy * (hi - lo)
    return total_loss / count, total_acc / count


@dataclass
class TrainResult:
    params: ModelParams
    history: list = field(default_factory=list)
    best_epoch: int = 0
    train_seconds: float = 0.0


def train(train_samples, val_samples, config: TrainConfig, model_config: ModelConfig,
          dictionary: VoxelDictionary, checkpoint_path=None, history_path=None,
          log=None) -> TrainResult:
    """Fit a model; returns the best-validation parameters and history.

    Deterministic given the seed: epoch shuffles use per-epoch derived
    sub-seeds and the gradient reduction order is fixed. A non-finite
    loss aborts with :class:`TrainingDiverged`.
    """
    if not train_samples:
        raise ValueError("empty training set")
    tune_allocator()
    dtype = np.float64 if config.dtype == "float64" else np.float32
    params = ModelParams.init(model_config, seed=config.seed, dtype=dtype)
    opt = Adam(params, learning_rate=config.learning_rate)

    tr_inputs, tr_targets = stack_samples(train_samples)
    if val_samples:
        va_inputs, va_targets = stack_samples(val_samples)
    else:
        va_inputs = va_targets = None

    history = []
    best_metric = np.inf
    best_epoch = -1
    best_state = None
    bad_epochs = 0
    started = time.perf_counter()

    for epoch in range(config.max_epochs):
        order = rng_for(config.seed, "epoch-shuffle", epoch).permutation(tr_inputs.shape[0])
        epoch_loss = 0.0
        epoch_acc = 0.0
        for lo in range(0, order.shape[0], config.batch_size):
            idx = order[lo : lo + config.batch_size]
            res = forward_teacher_forced(tr_inputs[idx], tr_targets[idx], params, model_config)
            loss_value = float(res.loss.data)
            if not np.isfinite(loss_value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {lo // config.batch_size} "
                    f"(lr={config.learning_rate}, batch={idx.shape[0]})")
            res.loss.backward()
            opt.step()
            params.zero_grads()
            epoch_loss += loss_value * idx.shape[0]
            epoch_acc += res.token_accuracy * idx.shape[0]
        entry = {
            "epoch": epoch,
            "train_loss": epoch_loss / order.shape[0],
            "train_token_accuracy": epoch_acc / order.shape[0],
        }
        if va_inputs is not None:
            val_loss, val_acc = evaluate_loss(va_inputs, va_targets, params, model_config)
            entry["val_loss"] = val_loss
            entry["val_token_accuracy"] = val_acc
            metric = val_loss
        else:
            metric = entry["train_loss"]
        history.append(entry)
        if log:
            log(entry)

        if metric < best_metric:
            best_metric = metric
            best_epoch = epoch
            best_state = params.state_vector()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                break

    if best_state is not None:
        params.load_state_vector(best_state)
    elapsed = time.perf_counter() - started

    if history_path is not None:
        with open(history_path, "w") as fh:
            for entry in history:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    if checkpoint_path is not None:
        save_params(checkpoint_path, params, model_config, dictionary, seed=config.seed)
    return TrainResult(params=params, history=history, best_epoch=best_epoch,
                       train_seconds=elapsed)


def _evaluate_split(samples, dataset: Dataset, params, model_config, dictionary,
                    n_frames: int, fold, tag: str, train_seconds: float) -> dict:
    inputs, targets = stack_samples(samples)
    started = time.perf_counter()
    pred, decode_stats = predict_joints(params, model_config, dictionary, samples)
    infer_ms = (time.perf_counter() - started) / len(samples) * 1e3
    gt = gt_joints_for(dataset, samples, n_frames)
    report = compute_report(pred, gt, n_frames=n_frames, fold=fold, test_set=tag)
    _, token_acc = evaluate_loss(inputs, targets, params, model_config)
    return {
        "n_frames": n_frames,
        "fold": fold,
        "test_set": tag,
        "mae_depth_cm": report.mae_axes_cm[0],
        "mae_horizontal_cm": report.mae_axes_cm[1],
        "mae_vertical_cm": report.mae_axes_cm[2],
        "mae17_depth_cm": report.mae17_axes_cm[0],
        "mae17_horizontal_cm": report.mae17_axes_cm[1],
        "mae17_vertical_cm": report.mae17_axes_cm[2],
        "token_accuracy": token_acc,
        "eos_agreement": decode_stats["eos_agreement"],
        "train_seconds": train_seconds,
        "infer_ms_mean": infer_ms,
    }


def run_experiment_grid(dataset: Dataset, dictionary: VoxelDictionary, frames,
                        split_spec: SplitSpec, train_config: TrainConfig,
                        model_kwargs: dict | None = None, results_path=None,
                        checkpoint_dir=None, log=None) -> list[dict]:
    """Train and evaluate the (n_frames x fold) grid; returns result rows.

    For every N in ``frames`` the sliding-window samples are rebuilt,
    split per ``split_spec``, and one model per fold is trained and
    evaluated on both its shuffled test split and the continuous block.
    """
    model_kwargs = dict(model_kwargs or {})
    rows = []
    for n_frames in frames:
        samples, _ = build_samples(dataset, dictionary, n_frames)
        continuous, folds = make_splits(samples, split_spec)
        for fold_idx, (train_set, test_set) in enumerate(folds, start=1):
            model_config = ModelConfig(vocab_size=dictionary.vocab_size, n_frames=n_frames,
                                       **model_kwargs)
            ckpt = None
            if checkpoint_dir is not None:
                ckpt = f"{checkpoint_dir}/model_n{n_frames}_fold{fold_idx}.ckpt"
            result = train(train_set, test_set, train_config, model_config, dictionary,
                           checkpoint_path=ckpt)
            for tag, subset in (("random20", test_set), ("continuous", continuous)):
                row = _evaluate_split(subset, dataset, result.params, model_config,
                                      dictionary, n_frames, fold_idx, tag,
                                      result.train_seconds)
                rows.append(row)
                if log:
                    log(row)
    if results_path is not None:
        write_results_csv(results_path, rows)
    return rows


def write_results_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
