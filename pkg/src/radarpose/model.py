"""GRU encoder / attention / decoder network over voxel tokens.

Data flow for one sample: N frames of 90 tokens are embedded (shared
L-dim table), each frame flattened to 90*L and run through two GRU
encoder layers (E1 then E2 units). The decoder (D = E2 units) starts
from the final encoder state and the start-of-sequence token, and at
every step attends over the N intermediate encoder states. The context
vector and the updated decoder state are concatenated, passed through a
tanh dense layer, then projected to vocabulary logits. Exactly 26 steps
are run: 25 key-point predictions plus a terminal step checked against
the end-of-sequence token.

All cells follow the gate equations

    R = sigmoid(W_r s + U_r x),  Z = sigmoid(W_z s + U_z x),
    S~ = tanh(W (R o s) + U x),  S = Z o s + (1 - Z) o S~,

with bias terms absorbed into the input-side weight matrices as an
appended constant-1 input component (U_* carry one extra row).
"""

from dataclasses import dataclass
import json
import struct

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .seeding import rng_for
from .voxels import (
    EOS_TOKEN,
    FIRST_VOXEL_TOKEN,
    JOINT_COUNT,
    SOS_TOKEN,
    TOKENS_PER_FRAME,
    VoxelDictionary,
)

CHECKPOINT_MAGIC = b"RPOSE1CK"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {"float64": "<f8", "float32": "<f4"}


class ConfigMismatchError(ValueError):
    """Checkpoint header disagrees with the configuration in use."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_frames: int
    tokens_per_frame: int = TOKENS_PER_FRAME
    embed_dim: int = 50
    enc1_units: int = 64
    enc2_units: int = 64
    dec_units: int = 0  # 0 resolves to enc2_units
    attn_units: int = 0  # 0 resolves to enc2_units
    dense_units: int = 128
    joint_count: int = JOINT_COUNT
    attention_kind: str = "additive"  # or "dot"

    def __post_init__(self):
        if self.dec_units == 0:
            object.__setattr__(self, "dec_units", self.enc2_units)
        if self.attn_units == 0:
            object.__setattr__(self, "attn_units", self.enc2_units)
        if not 1 <= self.n_frames <= 10:
            raise ValueError("n_frames must be in 1..10")
        if self.dec_units != self.enc2_units:
            raise ValueError("decoder state is initialized from the encoder-2 "
                             "final state, so dec_units must equal enc2_units")
        if self.attention_kind not in ("additive", "dot"):
            raise ValueError(f"unknown attention kind {self.attention_kind!r}")
        if self.vocab_size <= FIRST_VOXEL_TOKEN:
            raise ValueError("vocabulary must contain at least one voxel token")

    @property
    def decode_steps(self) -> int:
        return self.joint_count + 1

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "n_frames": self.n_frames,
            "tokens_per_frame": self.tokens_per_frame,
            "embed_dim": self.embed_dim,
            "enc1_units": self.enc1_units,
            "enc2_units": self.enc2_units,
            "dec_units": self.dec_units,
            "attn_units": self.attn_units,
            "dense_units": self.dense_units,
            "joint_count": self.joint_count,
            "attention_kind": self.attention_kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class GruWeights:
    """One GRU cell; U_* carry the absorbed bias row (input_dim + 1 rows)."""

    W_r: Tensor
    U_r: Tensor
    W_z: Tensor
    U_z: Tensor
    W: Tensor
    U: Tensor


@dataclass
class RnnWeights:
    """Plain recurrent cell S = tanh(W s + U x); reference/testing only."""

    W: Tensor
    U: Tensor


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, bias_row: bool, dtype) -> Tensor:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-a, a, size=(fan_in, fan_out))
    if bias_row:
        w = np.concatenate([w, np.zeros((1, fan_out))], axis=0)
    return Tensor(np.ascontiguousarray(w, dtype=dtype), requires_grad=True)


def _init_gru(rng, input_dim: int, units: int, dtype) -> GruWeights:
    return GruWeights(
        W_r=_glorot(rng, units, units, False, dtype),
        U_r=_glorot(rng, input_dim, units, True, dtype),
        W_z=_glorot(rng, units, units, False, dtype),
        U_z=_glorot(rng, input_dim, units, True, dtype),
        W=_glorot(rng, units, units, False, dtype),
        U=_glorot(rng, input_dim, units, True, dtype),
    )


@dataclass
class ModelParams:
    embedding: Tensor
    enc1: GruWeights
    enc2: GruWeights
    dec: GruWeights
    attn_w: Tensor
    attn_u: Tensor
    attn_v: Tensor
    dense: Tensor
    head: Tensor
    _pool: np.ndarray | None = None  # flat value storage when pooled
    _grad_pool: np.ndarray | None = None

    @classmethod
    def init(cls, config: ModelConfig, seed: int, dtype=np.float64) -> "ModelParams":
        rng = rng_for(seed, "model-init")
        L = config.embed_dim
        params = cls(
            # Lookup-table convention for the embedding; glorot-uniform
            # over 41.9k rows would start it near zero.
            embedding=Tensor(rng.uniform(-0.05, 0.05, (config.vocab_size, L)).astype(dtype),
                             requires_grad=True),
            enc1=_init_gru(rng, config.tokens_per_frame * L, config.enc1_units, dtype),
            enc2=_init_gru(rng, config.enc1_units, config.enc2_units, dtype),
            dec=_init_gru(rng, L, config.dec_units, dtype),
            attn_w=_glorot(rng, config.dec_units, config.attn_units, False, dtype),
            attn_u=_glorot(rng, config.enc2_units, config.attn_units, False, dtype),
            attn_v=_glorot(rng, config.attn_units, 1, False, dtype),
            dense=_glorot(rng, config.enc2_units + config.dec_units, config.dense_units, True, dtype),
            head=_glorot(rng, config.dense_units, config.vocab_size, True, dtype),
        )
        params.pool()
        return params

    def pool(self):
        """Re-home all parameter values and gradients into two flat buffers.

        Tensor .data/.grad become views, so the optimizer and zero-grad
        can run as single passes over contiguous memory.
        """
        tensors = self.tensors()
        total = sum(t.data.size for t in tensors)
        dtype = tensors[0].data.dtype
        pool = np.empty(total, dtype=dtype)
        grad_pool = np.zeros(total, dtype=dtype)
        offset = 0
        for t in tensors:
            size = t.data.size
            view = pool[offset : offset + size].reshape(t.data.shape)
            view[...] = t.data
            t.data = view
            t.grad = grad_pool[offset : offset + size].reshape(t.data.shape)
            offset += size
        self._pool = pool
        self._grad_pool = grad_pool

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = [("embedding", self.embedding)]
        for cell_name, cell in (("enc1", self.enc1), ("enc2", self.enc2), ("dec", self.dec)):
            for gate in ("W_r", "U_r", "W_z", "U_z", "W", "U"):
                out.append((f"{cell_name}.{gate}", getattr(cell, gate)))
        out += [
            ("attn_w", self.attn_w),
            ("attn_u", self.attn_u),
            ("attn_v", self.attn_v),
            ("dense", self.dense),
            ("head", self.head),
        ]
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_params()]

    def zero_grads(self):
        if self._grad_pool is not None:
            self._grad_pool.fill(0.0)
        else:
            for t in self.tensors():
                t.zero_grad()

    def state_vector(self) -> np.ndarray:
        """Flat copy of all parameter values (for snapshots)."""
        if self._pool is not None:
            return self._pool.copy()
        return np.concatenate([t.data.reshape(-1) for t in self.tensors()])

    def load_state_vector(self, state: np.ndarray):
        if self._pool is not None:
            self._pool[...] = state
            return
        offset = 0
        for t in self.tensors():
            size = t.data.size
            t.data[...] = state[offset : offset + size].reshape(t.data.shape)
            offset += size

    @property
    def dtype(self):
        return self.embedding.data.dtype


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Expected shape of every named parameter under ``config``."""
    L = config.embed_dim
    shapes = {"embedding": (config.vocab_size, L)}
    for name, in_dim, units in (
        ("enc1", config.tokens_per_frame * L, config.enc1_units),
        ("enc2", config.enc1_units, config.enc2_units),
        ("dec", L, config.dec_units),
    ):
        for gate in ("W_r", "W_z", "W"):
            shapes[f"{name}.{gate}"] = (units, units)
        for gate in ("U_r", "U_z", "U"):
            shapes[f"{name}.{gate}"] = (in_dim + 1, units)
    shapes["attn_w"] = (config.dec_units, config.attn_units)
    shapes["attn_u"] = (config.enc2_units, config.attn_units)
    shapes["attn_v"] = (config.attn_units, 1)
    shapes["dense"] = (config.enc2_units + config.dec_units + 1, config.dense_units)
    shapes["head"] = (config.dense_units + 1, config.vocab_size)
    return shapes


@dataclass
class EncoderOutput:
    """All N second-layer states plus the final one (its last row)."""

    states: Tensor  # (B, N, E2)
    final: Tensor  # (B, E2)

    @property
    def intermediate_states(self) -> Tensor:
        return self.states


def gru_cell_forward(x: Tensor, s_prev: Tensor, w: GruWeights) -> Tensor:
    """One GRU step for a (B, in) input and (B, H) previous state."""
    r = ad.sigmoid(ad.affine_pair(s_prev, w.W_r, x, w.U_r))
    z = ad.sigmoid(ad.affine_pair(s_prev, w.W_z, x, w.U_z))
    s_tilde = ad.tanh(ad.affine_pair(r * s_prev, w.W, x, w.U))
    return ad.gru_state_update(z, s_prev, s_tilde)


def rnn_cell_forward(x: Tensor, s_prev: Tensor, w: RnnWeights) -> Tensor:
    """One vanilla recurrent step S = tanh(W s + U x)."""
    return ad.tanh(ad.affine_pair(s_prev, w.W, x, w.U))


def _validate_tokens(ids: np.ndarray, vocab_size: int):
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ValueError(f"token out of vocabulary of {vocab_size}")


def encode(input_tokens, params: ModelParams, config: ModelConfig) -> EncoderOutput:
    """Run the two-layer GRU encoder over (B, N, 90) (or (N, 90)) token ids."""
    ids = np.asarray(input_tokens, dtype=np.int64)
    if ids.ndim == 2:
        ids = ids[None, :, :]
    b, n, t = ids.shape
    if n != config.n_frames or t != config.tokens_per_frame:
        raise ValueError(f"expected (B, {config.n_frames}, {config.tokens_per_frame}) tokens, got {ids.shape}")
    _validate_tokens(ids, config.vocab_size)

    dtype = params.dtype
    flat_dim = config.tokens_per_frame * config.embed_dim
    s1 = Tensor(np.zeros((b, config.enc1_units), dtype=dtype))
    s2 = Tensor(np.zeros((b, config.enc2_units), dtype=dtype))
    states1 = []
    for step in range(n):
        x = ad.reshape(ad.embedding_lookup(params.embedding, ids[:, step, :]), (b, flat_dim))
        s1 = gru_cell_forward(x, s1, params.enc1)
        states1.append(s1)
    states2 = []
    for step in range(n):
        s2 = gru_cell_forward(states1[step], s2, params.enc2)
        states2.append(ad.reshape(s2, (b, 1, config.enc2_units)))
    stacked = ad.concat(states2, axis=1) if n > 1 else states2[0]
    return EncoderOutput(states=stacked, final=s2)


def _attention_keys(enc_states: Tensor, params: ModelParams, config: ModelConfig):
    """Precompute U_a * EncS_j for all j (additive attention only)."""
    if config.attention_kind != "additive":
        return None
    b, n, e2 = enc_states.data.shape
    keys = ad.matmul(ad.reshape(enc_states, (b * n, e2)), params.attn_u)
    return ad.reshape(keys, (b, n, config.attn_units))


def _attend(dec_state_prev: Tensor, enc_states: Tensor, keys, params: ModelParams,
            config: ModelConfig) -> tuple[Tensor, Tensor]:
    b, n, e2 = enc_states.data.shape
    if config.attention_kind == "additive":
        scores = ad.additive_attention_scores(dec_state_prev, params.attn_w, keys, params.attn_v)
    else:
        scores = ad.reduce_sum(enc_states * ad.reshape(dec_state_prev, (b, 1, e2)), axis=2)
    weights = ad.softmax(scores, axis=1)
    context = ad.weighted_context(weights, enc_states)
    return context, weights


def attention(dec_state_prev: Tensor, enc_states: Tensor, params: ModelParams,
              config: ModelConfig) -> tuple[Tensor, Tensor]:
    """Context vector and softmax weights for one decoder step.

    The query is the pre-step decoder state; scores are the additive form
    v . tanh(W_a q + U_a EncS_j) (or a dot product when configured).
    """
    keys = _attention_keys(enc_states, params, config)
    return _attend(dec_state_prev, enc_states, keys, params, config)


def decode_step(prev_tokens, dec_state_prev: Tensor, enc_states: Tensor,
                params: ModelParams, config: ModelConfig,
                _keys=None) -> tuple[Tensor, Tensor, Tensor]:
    """One decoder step: returns (logits (B, V), next state, attention weights)."""
    ids = np.asarray(prev_tokens, dtype=np.int64).reshape(-1)
    _validate_tokens(ids, config.vocab_size)
    keys = _keys if _keys is not None else _attention_keys(enc_states, params, config)
    x = ad.embedding_lookup(params.embedding, ids)
    context, weights = _attend(dec_state_prev, enc_states, keys, params, config)
    state = gru_cell_forward(x, dec_state_prev, params.dec)
    h = ad.tanh(ad.affine(ad.concat([context, state], axis=1), params.dense))
    logits = ad.affine(h, params.head)
    return logits, state, weights


@dataclass
class TeacherForcedResult:
    loss: Tensor
    token_accuracy: float


def forward_teacher_forced(input_tokens, target_tokens, params: ModelParams,
                           config: ModelConfig) -> TeacherForcedResult:
    """Teacher-forced loss over a batch.

    The decoder consumes target positions 0..25 (sos + ground-truth
    tokens) and predicts positions 1..26 (25 key-points + eos); the loss
    is mean sparse categorical cross-entropy over the 26 positions. The
    dense layer and output head run once over all steps stacked, which is
    much faster than 26 vocabulary-sized matmuls.
    """
    targets = np.asarray(target_tokens, dtype=np.int64)
    if targets.ndim == 1:
        targets = targets[None, :]
    steps = config.decode_steps
    if targets.shape[1] != steps + 1:
        raise ValueError(f"targets must have {steps + 1} positions, got {targets.shape[1]}")
    _validate_tokens(targets, config.vocab_size)

    enc = encode(input_tokens, params, config)
    keys = _attention_keys(enc.states, params, config)
    b = enc.final.data.shape[0]
    state = enc.final
    step_features = []
    for step in range(steps):
        x = ad.embedding_lookup(params.embedding, targets[:, step])
        context, _ = _attend(state, enc.states, keys, params, config)
        state = gru_cell_forward(x, state, params.dec)
        step_features.append(ad.concat([context, state], axis=1))
    feats = ad.concat(step_features, axis=0)  # (steps*B, E2+D), step-major
    hidden = ad.tanh(ad.affine(feats, params.dense))
    logits = ad.affine(hidden, params.head)
    flat_targets = targets[:, 1:].T.reshape(-1)  # step-major to match feats
    loss = ad.sparse_categorical_cross_entropy(logits, flat_targets)
    accuracy = float(np.mean(np.argmax(logits.data, axis=1) == flat_targets))
    return TeacherForcedResult(loss=loss, token_accuracy=accuracy)


@dataclass
class GreedyResult:
    tokens: np.ndarray  # (B, 25) voxel tokens
    terminal: np.ndarray  # (B,) unmasked argmax of step 26
    eos_agreement: float  # fraction of rows whose terminal token is eos
    max_attention_sum_error: float  # worst |sum(weights) - 1| seen
    attention_weights: list | None = None  # per step (B, N), when requested


def decode_greedy(enc_out: EncoderOutput, params: ModelParams, config: ModelConfig,
                  return_attention: bool = False) -> GreedyResult:
    """Greedy 26-step decode.

    Steps 1..25 take the argmax over voxel tokens only (specials masked),
    so exactly 25 voxel tokens come out whatever the parameters. Step
    26's unmasked argmax is recorded and compared against eos as a health
    metric but never alters the predictions.
    """
    with ad.no_grad():
        keys = _attention_keys(enc_out.states, params, config)
        b = enc_out.final.data.shape[0]
        state = enc_out.final
        prev = np.full(b, SOS_TOKEN, dtype=np.int64)
        tokens = np.empty((b, config.joint_count), dtype=np.int64)
        terminal = np.empty(b, dtype=np.int64)
        att_all = [] if return_attention else None
        worst_sum_err = 0.0
        for step in range(1, config.decode_steps + 1):
            logits, state, weights = decode_step(prev, state, enc_out.states, params, config, _keys=keys)
            err = float(np.abs(weights.data.sum(axis=1) - 1.0).max())
            worst_sum_err = max(worst_sum_err, err)
            if att_all is not None:
                att_all.append(weights.data.copy())
            if step <= config.joint_count:
                nxt = FIRST_VOXEL_TOKEN + np.argmax(logits.data[:, FIRST_VOXEL_TOKEN:], axis=1)
                tokens[:, step - 1] = nxt
                prev = nxt
            else:
                terminal[:] = np.argmax(logits.data, axis=1)
    return GreedyResult(
        tokens=tokens,
        terminal=terminal,
        eos_agreement=float(np.mean(terminal == EOS_TOKEN)),
        max_attention_sum_error=worst_sum_err,
        attention_weights=att_all,
    )


def _header_bytes(config: ModelConfig, dictionary: VoxelDictionary, seed: int,
                  dtype_name: str, param_order: list[str]) -> bytes:
    header = {
        "config": config.to_dict(),
        "dictionary": dictionary.to_config(),
        "seed": int(seed),
        "dtype": dtype_name,
        "param_order": param_order,
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_params(path, params: ModelParams, config: ModelConfig,
                dictionary: VoxelDictionary, seed: int):
    """Write a checkpoint; see README for the exact byte layout."""
    named = params.named_params()
    dtype_name = np.dtype(params.dtype).name
    if dtype_name not in _DTYPE_CODES:
        raise ValueError(f"unsupported parameter dtype {dtype_name}")
    header = _header_bytes(config, dictionary, seed, dtype_name, [n for n, _ in named])
    code = _DTYPE_CODES[dtype_name]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for name, tensor in named:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", tensor.data.ndim))
            for dim in tensor.data.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(tensor.data).astype(code).tobytes())


@dataclass
class LoadedCheckpoint:
    params: ModelParams
    config: ModelConfig
    dictionary: VoxelDictionary
    seed: int
    dtype: str


def load_params(path, expected_config: ModelConfig | None = None,
                expected_dictionary: VoxelDictionary | None = None) -> LoadedCheckpoint:
    """Read a checkpoint; optional expectations raise ConfigMismatchError."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        dictionary = VoxelDictionary.from_config(header["dictionary"])
        code = _DTYPE_CODES[header["dtype"]]

        tensors = {}
        for expected_name in header["param_order"]:
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            if name != expected_name:
                raise ValueError(f"corrupt checkpoint: expected block {expected_name}, found {name}")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            raw = fh.read(count * np.dtype(code).itemsize)
            if len(raw) != count * np.dtype(code).itemsize:
                raise ValueError("corrupt checkpoint: truncated parameter block")
            tensors[name] = Tensor(np.frombuffer(raw, dtype=code).reshape(shape).copy(),
                                   requires_grad=True)

    if expected_config is not None and expected_config.to_dict() != config.to_dict():
        raise ConfigMismatchError(
            f"checkpoint model config {config.to_dict()} != expected {expected_config.to_dict()}")
    if expected_dictionary is not None and expected_dictionary.to_config() != dictionary.to_config():
        raise ConfigMismatchError(
            f"checkpoint dictionary {dictionary.to_config()} != expected {expected_dictionary.to_config()}")

    def cell(prefix):
        return GruWeights(**{g: tensors[f"{prefix}.{g}"] for g in ("W_r", "U_r", "W_z", "U_z", "W", "U")})

    params = ModelParams(
        embedding=tensors["embedding"],
        enc1=cell("enc1"),
        enc2=cell("enc2"),
        dec=cell("dec"),
        attn_w=tensors["attn_w"],
        attn_u=tensors["attn_u"],
        attn_v=tensors["attn_v"],
        dense=tensors["dense"],
        head=tensors["head"],
    )
    expected_shapes = param_shapes(config)
    for name, tensor in params.named_params():
        if tensor.data.shape != expected_shapes[name]:
            raise ConfigMismatchError(
                f"parameter {name} has shape {tensor.data.shape}, config implies {expected_shapes[name]}")
    params.pool()
    return LoadedCheckpoint(params=params, config=config, dictionary=dictionary,
                            seed=header["seed"], dtype=header["dtype"])
