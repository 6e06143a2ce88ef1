"""Voxel-token dictionary and point-cloud tokenization.

A fixed cuboidal region of interest (ROI), centered on the origin, is
divided into cubic voxels of 5 cm edge. Every voxel maps to one integer
token; three special tokens (PAD=0, SOS=1, EOS=2) precede the voxel
range, which starts at token 3. Point clouds are translated so their
centroid sits at the origin before voxelization, which makes the token
representation invariant to where the subject stands.

Token layout is row-major over (depth, horizontal, vertical) voxel
indices with depth slowest. Fractional voxel indices are floored, so a
point sitting exactly on an interior cell boundary lands in the cell
whose lower edge it touches under ``floor((coord - min_corner)/res)``;
this tie-break is deterministic and fixed so checkpoints stay portable.
"""

from dataclasses import dataclass, field
import math

import numpy as np

PAD_TOKEN = 0
SOS_TOKEN = 1
EOS_TOKEN = 2
FIRST_VOXEL_TOKEN = 3

# Sentinel returned for points outside the ROI.
OUT_OF_ROI = -1

TOKENS_PER_FRAME = 90
JOINT_COUNT = 25
TARGET_LENGTH = JOINT_COUNT + 2  # sos + 25 joints + eos


class SampleInvalid(ValueError):
    """A ground-truth joint (or frame) cannot be tokenized; skip the sample."""


def _axis_cells(extent: float, resolution: float) -> int:
    # ceil with a tolerance so exact multiples (1.7/0.05) don't round up.
    return int(math.ceil(extent / resolution - 1e-9))


@dataclass(frozen=True)
class VoxelDictionary:
    """Bijection between ROI voxels and integer tokens, plus specials.

    Extents follow the (horizontal, vertical, depth) order they are
    usually quoted in; internally the grid is indexed (depth, horizontal,
    vertical) with depth slowest.
    """

    resolution: float = 0.05
    extent_horizontal: float = 1.7
    extent_vertical: float = 2.2
    extent_depth: float = 1.4
    n_depth: int = field(init=False)
    n_horizontal: int = field(init=False)
    n_vertical: int = field(init=False)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        for name in ("extent_horizontal", "extent_vertical", "extent_depth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        object.__setattr__(self, "n_depth", _axis_cells(self.extent_depth, self.resolution))
        object.__setattr__(self, "n_horizontal", _axis_cells(self.extent_horizontal, self.resolution))
        object.__setattr__(self, "n_vertical", _axis_cells(self.extent_vertical, self.resolution))

    @property
    def grid_dims(self) -> tuple[int, int, int]:
        """(depth, horizontal, vertical) voxel counts."""
        return (self.n_depth, self.n_horizontal, self.n_vertical)

    @property
    def voxel_count(self) -> int:
        return self.n_depth * self.n_horizontal * self.n_vertical

    @property
    def vocab_size(self) -> int:
        return self.voxel_count + FIRST_VOXEL_TOKEN

    @property
    def pad_token(self) -> int:
        return PAD_TOKEN

    @property
    def sos_token(self) -> int:
        return SOS_TOKEN

    @property
    def eos_token(self) -> int:
        return EOS_TOKEN

    @property
    def first_voxel_token(self) -> int:
        return FIRST_VOXEL_TOKEN

    def min_corner(self) -> np.ndarray:
        """Lower (x, y, z) corner of the cell-aligned, origin-centered grid."""
        return np.array(
            [
                -0.5 * self.n_depth * self.resolution,
                -0.5 * self.n_horizontal * self.resolution,
                -0.5 * self.n_vertical * self.resolution,
            ],
            dtype=np.float64,
        )

    def to_config(self) -> dict:
        return {
            "resolution": self.resolution,
            "extent_horizontal": self.extent_horizontal,
            "extent_vertical": self.extent_vertical,
            "extent_depth": self.extent_depth,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "VoxelDictionary":
        return cls(
            resolution=cfg["resolution"],
            extent_horizontal=cfg["extent_horizontal"],
            extent_vertical=cfg["extent_vertical"],
            extent_depth=cfg["extent_depth"],
        )


def build_dictionary(resolution: float, extents) -> VoxelDictionary:
    """Build a dictionary from resolution and (horizontal, vertical, depth) extents."""
    eh, ev, ed = extents
    return VoxelDictionary(
        resolution=resolution,
        extent_horizontal=eh,
        extent_vertical=ev,
        extent_depth=ed,
    )


def centroid_center(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate a non-empty (M, 3) cloud so its centroid is the origin.

    Returns (centered points, centroid). Adding the centroid back
    restores the original coordinates.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        raise ValueError("cannot center an empty point cloud")
    centroid = points.mean(axis=0)
    return points - centroid, centroid


def points_to_tokens(points: np.ndarray, dictionary: VoxelDictionary) -> np.ndarray:
    """Vectorized point-to-token map; out-of-ROI points get OUT_OF_ROI (-1).

    Points must already be centroid-centered (grid is origin-centered).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    idx = np.floor((points - dictionary.min_corner()) / dictionary.resolution).astype(np.int64)
    nd, nh, nv = dictionary.grid_dims
    valid = (
        (idx[:, 0] >= 0) & (idx[:, 0] < nd)
        & (idx[:, 1] >= 0) & (idx[:, 1] < nh)
        & (idx[:, 2] >= 0) & (idx[:, 2] < nv)
    )
    flat = (idx[:, 0] * nh + idx[:, 1]) * nv + idx[:, 2] + FIRST_VOXEL_TOKEN
    return np.where(valid, flat, OUT_OF_ROI)


def point_to_token(p, dictionary: VoxelDictionary) -> int:
    """Token of the voxel containing one centered point, or OUT_OF_ROI."""
    arr = p.as_array() if hasattr(p, "as_array") else np.asarray(p, dtype=np.float64)
    return int(points_to_tokens(arr.reshape(1, 3), dictionary)[0])


def tokens_to_points(tokens: np.ndarray, dictionary: VoxelDictionary) -> np.ndarray:
    """Vectorized token-to-voxel-center map for an array of voxel tokens."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if np.any(tokens < FIRST_VOXEL_TOKEN) or np.any(tokens >= dictionary.vocab_size):
        bad = tokens[(tokens < FIRST_VOXEL_TOKEN) | (tokens >= dictionary.vocab_size)]
        raise ValueError(f"not voxel tokens: {bad[:8].tolist()}")
    flat = tokens - FIRST_VOXEL_TOKEN
    nd, nh, nv = dictionary.grid_dims
    iz = flat % nv
    iy = (flat // nv) % nh
    ix = flat // (nv * nh)
    idx = np.stack([ix, iy, iz], axis=-1).astype(np.float64)
    return dictionary.min_corner() + (idx + 0.5) * dictionary.resolution


def token_to_point(token: int, dictionary: VoxelDictionary) -> np.ndarray:
    """Geometric center (x, y, z) of voxel ``token``; specials are errors."""
    return tokens_to_points(np.array([token]), dictionary)[0]


def tokenize_frame(points: np.ndarray, dictionary: VoxelDictionary) -> tuple[np.ndarray, int]:
    """Turn one centered radar frame into a fixed-length token row.

    The first M entries are the voxel tokens of the M in-ROI points in
    input order; the remaining entries are PAD (0). Out-of-ROI points are
    dropped; the count of dropped points is returned alongside the row.
    More than 90 in-ROI points is an error surfaced to the caller.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tokens = points_to_tokens(points, dictionary)
    in_roi = tokens[tokens != OUT_OF_ROI]
    dropped = int(tokens.shape[0] - in_roi.shape[0])
    if in_roi.shape[0] > TOKENS_PER_FRAME:
        raise ValueError(
            f"{in_roi.shape[0]} in-ROI points exceed the {TOKENS_PER_FRAME}-token frame"
        )
    row = np.full(TOKENS_PER_FRAME, PAD_TOKEN, dtype=np.int64)
    row[: in_roi.shape[0]] = in_roi
    return row, dropped


def tokenize_target(joints: np.ndarray, dictionary: VoxelDictionary) -> np.ndarray:
    """Tokenize 25 ordered, centered joints into [sos, 25 voxel tokens, eos].

    Any out-of-ROI joint raises :class:`SampleInvalid`; a bad label must
    invalidate the whole sample rather than silently corrupt training.
    """
    joints = np.asarray(joints, dtype=np.float64).reshape(-1, 3)
    if joints.shape[0] != JOINT_COUNT:
        raise ValueError(f"expected {JOINT_COUNT} joints, got {joints.shape[0]}")
    tokens = points_to_tokens(joints, dictionary)
    if np.any(tokens == OUT_OF_ROI):
        bad = np.nonzero(tokens == OUT_OF_ROI)[0]
        raise SampleInvalid(f"joints outside ROI at indices {bad.tolist()}")
    out = np.empty(TARGET_LENGTH, dtype=np.int64)
    out[0] = SOS_TOKEN
    out[1:-1] = tokens
    out[-1] = EOS_TOKEN
    return out


def detokenize_keypoints(
    tokens: np.ndarray, centroid: np.ndarray, dictionary: VoxelDictionary
) -> np.ndarray:
    """Map 25 predicted voxel tokens back to world-frame joints.

    Accepts either the bare 25 voxel tokens or a full 27-token sequence
    (sos/eos are stripped). The stored centroid is added back so joints
    come out in world coordinates.
    """
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if tokens.shape[0] == TARGET_LENGTH and tokens[0] == SOS_TOKEN and tokens[-1] == EOS_TOKEN:
        tokens = tokens[1:-1]
    if tokens.shape[0] != JOINT_COUNT:
        raise ValueError(f"expected {JOINT_COUNT} voxel tokens, got {tokens.shape[0]}")
    centers = tokens_to_points(tokens, dictionary)
    return centers + np.asarray(centroid, dtype=np.float64).reshape(1, 3)


@dataclass
class TokenizedSample:
    """One training example: N tokenized frames, a 27-token target, its centroid."""

    input_tokens: np.ndarray  # (N, 90) int64
    target_tokens: np.ndarray  # (27,) int64
    centroid: np.ndarray  # (3,) float64, shared by inputs and target
    frame_timestamps: np.ndarray  # (N,) float64 seconds
    sample_id: tuple = ()  # (recording index, window start) for split bookkeeping

    def __post_init__(self):
        self.input_tokens = np.asarray(self.input_tokens, dtype=np.int64)
        self.target_tokens = np.asarray(self.target_tokens, dtype=np.int64)
        self.centroid = np.asarray(self.centroid, dtype=np.float64).reshape(3)
        self.frame_timestamps = np.asarray(self.frame_timestamps, dtype=np.float64)
        if self.input_tokens.ndim != 2 or self.input_tokens.shape[1] != TOKENS_PER_FRAME:
            raise ValueError(f"input_tokens must be (N, {TOKENS_PER_FRAME})")
        if self.target_tokens.shape != (TARGET_LENGTH,):
            raise ValueError(f"target_tokens must have length {TARGET_LENGTH}")
        if self.target_tokens[0] != SOS_TOKEN or self.target_tokens[-1] != EOS_TOKEN:
            raise ValueError("target must start with sos and end with eos")
