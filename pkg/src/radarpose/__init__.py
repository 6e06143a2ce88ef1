"""Skeletal key-point estimation from mmWave radar point clouds.

Point clouds from two wall-mounted radars are merged into a common
ground-plane frame, translated to their centroid, and quantized into
integer voxel tokens over a fixed region of interest. A GRU
encoder/attention/decoder sequence model summarizes N such token frames
into the 25 voxel tokens of a skeleton's key-points, which map back to
world coordinates through the same voxel dictionary.
"""

__version__ = "0.1.0"

from .geometry import (
    CartesianPoint,
    RadarExtrinsics,
    RadarParams,
    SphericalDetection,
    apply_extrinsics,
    max_unambiguous_range,
    merge_radar_frames,
    progressive_phase,
    range_resolution,
    spherical_to_cartesian,
    virtual_aperture,
)
from .voxels import (
    TokenizedSample,
    VoxelDictionary,
    build_dictionary,
    centroid_center,
    detokenize_keypoints,
    point_to_token,
    token_to_point,
    tokenize_frame,
    tokenize_target,
)
from .autodiff import Tensor, checked_mode, finite_difference_check, no_grad
from .model import (
    EncoderOutput,
    ModelConfig,
    ModelParams,
    attention,
    decode_greedy,
    decode_step,
    encode,
    forward_teacher_forced,
    gru_cell_forward,
    load_params,
    rnn_cell_forward,
    save_params,
)
from .synth import ActionSpec, SceneConfig, SkeletonPose, generate_dataset, generate_pose_sequence, synthesize_radar_frame
from .dataset import Dataset, build_samples, load_dataset
from .training import Adam, SplitSpec, TrainConfig, make_splits, run_experiment_grid, train
from .metrics import (
    MaeReport,
    cross_fold_average,
    frames_trend_report,
    mae_17_outlier_removed,
    mae_per_axis,
    render_skeletons,
    timing_benchmark,
)
