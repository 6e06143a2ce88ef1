"""Synthetic stand-in for a two-radar motion-capture collection.

A forward-kinematic 25-joint skeleton performs one of four actions
(walking, left/right/both arm swing) along or at a short path a few
meters in front of two wall-mounted radars. Radar frames are produced by
sampling reflection points along the skeleton bones (density weighted by
a surface-area proxy), jittering them with Gaussian noise, converting
each point into the radar's local frame by inverting the mounting
transform, expressing it as a spherical detection, and quantizing range
to the radar's resolution grid. Downstream code must run the real
spherical-to-Cartesian and extrinsics pipeline to get world points, so
the geometry module is exercised end to end.

Everything is a pure function of (spec, scene, seed).
"""

from dataclasses import dataclass, field
import json
import math

import numpy as np

from .geometry import (
    RadarExtrinsics,
    apply_extrinsics_array,
    cartesian_to_spherical_array,
    invert_extrinsics_array,
    merge_radar_frames,
    spherical_to_cartesian_array,
)
from .seeding import rng_for
from .skeleton import JOINT_INDEX, JOINT_NAMES, SKELETON_EDGE_INDICES, SKELETON_EDGES
from .voxels import VoxelDictionary, centroid_center, points_to_tokens, OUT_OF_ROI

ACTIONS = ("walking", "left_arm_swing", "right_arm_swing", "both_arms_swing")

# Segment lengths as fractions of subject height.
SEGMENTS = {
    "spine_lower": 0.12,   # SpineBase -> SpineMid
    "spine_upper": 0.12,   # SpineMid -> SpineShoulder
    "neck": 0.03,
    "head": 0.10,
    "shoulder_halfwidth": 0.11,
    "shoulder_drop": 0.02,
    "upper_arm": 0.17,
    "forearm": 0.15,
    "hand": 0.05,
    "hand_tip": 0.04,
    "thumb": 0.035,
    "hip_halfwidth": 0.06,
    "hip_drop": 0.02,
    "thigh": 0.24,
    "shank": 0.22,
    "foot": 0.08,
    "pelvis_height": 0.55,
}

# Reflection-density proxy per bone, aligned with SKELETON_EDGES.
DEFAULT_BONE_WEIGHTS = {
    ("SpineBase", "SpineMid"): 3.0,
    ("SpineMid", "SpineShoulder"): 3.0,
    ("SpineShoulder", "Neck"): 1.0,
    ("Neck", "Head"): 1.2,
    ("SpineShoulder", "ShoulderLeft"): 1.5,
    ("ShoulderLeft", "ElbowLeft"): 1.0,
    ("ElbowLeft", "WristLeft"): 0.8,
    ("WristLeft", "HandLeft"): 0.3,
    ("HandLeft", "HandTipLeft"): 0.2,
    ("WristLeft", "ThumbLeft"): 0.2,
    ("SpineShoulder", "ShoulderRight"): 1.5,
    ("ShoulderRight", "ElbowRight"): 1.0,
    ("ElbowRight", "WristRight"): 0.8,
    ("WristRight", "HandRight"): 0.3,
    ("HandRight", "HandTipRight"): 0.2,
    ("WristRight", "ThumbRight"): 0.2,
    ("SpineBase", "HipLeft"): 2.0,
    ("HipLeft", "KneeLeft"): 1.5,
    ("KneeLeft", "AnkleLeft"): 1.0,
    ("AnkleLeft", "FootLeft"): 0.5,
    ("SpineBase", "HipRight"): 2.0,
    ("HipRight", "KneeRight"): 1.5,
    ("KneeRight", "AnkleRight"): 1.0,
    ("AnkleRight", "FootRight"): 0.5,
}


@dataclass(frozen=True)
class ActionSpec:
    """One recording: a subject performing one action at/along a path."""

    action: str = "walking"
    subject: str = "s1"
    subject_height_m: float = 1.75
    gait_frequency_hz: float = 1.0
    stride_m: float = 0.5
    arm_amplitude_rad: float = 0.8
    path_start: tuple = (2.7, 0.0)
    path_end: tuple = (3.3, 0.0)

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}; expected one of {ACTIONS}")
        if not 0.0 < self.gait_frequency_hz <= 3.0:
            raise ValueError("gait frequency must be in (0, 3] Hz")
        if not 0.0 <= self.stride_m <= 1.2:
            raise ValueError("stride must be in [0, 1.2] m")
        if not 0.0 <= self.arm_amplitude_rad <= 1.6:
            raise ValueError("arm amplitude must be in [0, 1.6] rad")
        if not 1.3 <= self.subject_height_m <= 2.1:
            raise ValueError("subject height must be in [1.3, 2.1] m")

    def to_config(self) -> dict:
        return {
            "action": self.action,
            "subject": self.subject,
            "subject_height_m": self.subject_height_m,
            "gait_frequency_hz": self.gait_frequency_hz,
            "stride_m": self.stride_m,
            "arm_amplitude_rad": self.arm_amplitude_rad,
            "path_start": list(self.path_start),
            "path_end": list(self.path_end),
        }


@dataclass(frozen=True)
class SceneConfig:
    """Two-radar mounting geometry and radar sampling behavior."""

    radar_top: RadarExtrinsics = RadarExtrinsics(2.0, math.radians(20.0), "top")
    radar_bottom: RadarExtrinsics = RadarExtrinsics(1.0, math.radians(15.0), "bottom")
    frame_rate_hz: float = 15.0
    points_per_radar_mean: float = 30.0
    points_per_radar_sd: float = 8.0
    min_points_per_radar: int = 3
    noise_sigma_m: float = 0.03
    max_combined_points: int = 88
    range_quantization_m: float = 0.05
    angular_quantization_rad: float | None = None
    fov_azimuth_rad: float = math.radians(60.0)
    fov_elevation_rad: float = math.radians(55.0)
    bone_weights: tuple = field(
        default=tuple(DEFAULT_BONE_WEIGHTS[edge] for edge in SKELETON_EDGES))

    def __post_init__(self):
        if self.max_combined_points > 90:
            raise ValueError("combined per-frame point count is hard-capped at 90")
        if len(self.bone_weights) != len(SKELETON_EDGES):
            raise ValueError("bone_weights must give one weight per bone")

    def to_config(self) -> dict:
        return {
            "radar_top": {"height": self.radar_top.height, "tilt": self.radar_top.tilt},
            "radar_bottom": {"height": self.radar_bottom.height, "tilt": self.radar_bottom.tilt},
            "frame_rate_hz": self.frame_rate_hz,
            "points_per_radar_mean": self.points_per_radar_mean,
            "points_per_radar_sd": self.points_per_radar_sd,
            "min_points_per_radar": self.min_points_per_radar,
            "noise_sigma_m": self.noise_sigma_m,
            "max_combined_points": self.max_combined_points,
            "range_quantization_m": self.range_quantization_m,
            "angular_quantization_rad": self.angular_quantization_rad,
            "fov_azimuth_rad": self.fov_azimuth_rad,
            "fov_elevation_rad": self.fov_elevation_rad,
            "bone_weights": list(self.bone_weights),
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "SceneConfig":
        return cls(
            radar_top=RadarExtrinsics(cfg["radar_top"]["height"], cfg["radar_top"]["tilt"], "top"),
            radar_bottom=RadarExtrinsics(
                cfg["radar_bottom"]["height"], cfg["radar_bottom"]["tilt"], "bottom"),
            frame_rate_hz=cfg["frame_rate_hz"],
            points_per_radar_mean=cfg["points_per_radar_mean"],
            points_per_radar_sd=cfg["points_per_radar_sd"],
            min_points_per_radar=cfg["min_points_per_radar"],
            noise_sigma_m=cfg["noise_sigma_m"],
            max_combined_points=cfg["max_combined_points"],
            range_quantization_m=cfg["range_quantization_m"],
            angular_quantization_rad=cfg["angular_quantization_rad"],
            fov_azimuth_rad=cfg["fov_azimuth_rad"],
            fov_elevation_rad=cfg["fov_elevation_rad"],
            bone_weights=tuple(cfg["bone_weights"]),
        )


@dataclass
class SkeletonPose:
    """25 world-frame joints (fixed order) at one instant."""

    joints: np.ndarray  # (25, 3) float64
    timestamp: float

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(25, 3)


def _pose_at(spec: ActionSpec, t: float, gait_phase0: float, path_phase0: float) -> np.ndarray:
    h = spec.subject_height_m
    seg = {k: v * h for k, v in SEGMENTS.items()}

    start = np.array([spec.path_start[0], spec.path_start[1]], dtype=np.float64)
    end = np.array([spec.path_end[0], spec.path_end[1]], dtype=np.float64)
    span = end - start
    walking = spec.action == "walking" and np.linalg.norm(span) > 0

    if walking:
        # Smooth out-and-back traversal; facing follows the path axis.
        path_freq = spec.gait_frequency_hz / 8.0
        u = 0.5 - 0.5 * math.cos(2.0 * math.pi * path_freq * t + path_phase0)
        pelvis_xy = start + u * span
        fwd = span / np.linalg.norm(span)
    else:
        pelvis_xy = start
        fwd = np.array([-1.0, 0.0])  # face the radars

    fwd3 = np.array([fwd[0], fwd[1], 0.0])
    lat3 = np.array([-fwd[1], fwd[0], 0.0])  # left-hand side of facing
    up = np.array([0.0, 0.0, 1.0])

    phase = 2.0 * math.pi * spec.gait_frequency_hz * t + gait_phase0
    leg_len = seg["thigh"] + seg["shank"]
    if walking:
        leg_amp = math.asin(min(0.95, spec.stride_m / (2.0 * leg_len)))
        arm_amp_walk = 0.3 * leg_amp + 0.15
        bob = 0.01 * h * math.cos(2.0 * phase)
    else:
        leg_amp = 0.0
        arm_amp_walk = 0.0
        bob = 0.003 * h * math.sin(0.4 * phase)  # idle sway

    pelvis = np.array([pelvis_xy[0], pelvis_xy[1], seg["pelvis_height"] + bob])

    joints = np.zeros((25, 3), dtype=np.float64)

    def put(name, pos):
        joints[JOINT_INDEX[name]] = pos

    put("SpineBase", pelvis)
    spine_mid = pelvis + seg["spine_lower"] * up
    put("SpineMid", spine_mid)
    spine_shoulder = spine_mid + seg["spine_upper"] * up
    put("SpineShoulder", spine_shoulder)
    neck = spine_shoulder + seg["neck"] * up
    put("Neck", neck)
    put("Head", neck + seg["head"] * up)

    knee_amp = 0.6 * leg_amp
    for side, sign, leg_ph in (("Left", 1.0, 0.0), ("Right", -1.0, math.pi)):
        hip = pelvis + sign * seg["hip_halfwidth"] * lat3 - seg["hip_drop"] * up
        put(f"Hip{side}", hip)
        alpha = leg_amp * math.sin(phase + leg_ph)
        knee_flex = knee_amp * 0.5 * (1.0 + math.cos(phase + leg_ph))
        knee = hip + seg["thigh"] * (math.sin(alpha) * fwd3 - math.cos(alpha) * up)
        put(f"Knee{side}", knee)
        beta = alpha - knee_flex
        ankle = knee + seg["shank"] * (math.sin(beta) * fwd3 - math.cos(beta) * up)
        put(f"Ankle{side}", ankle)
        foot_pitch = math.radians(15.0)
        put(f"Foot{side}",
            ankle + seg["foot"] * (math.cos(foot_pitch) * fwd3 - math.sin(foot_pitch) * up))

    swing_left = spec.action in ("left_arm_swing", "both_arms_swing")
    swing_right = spec.action in ("right_arm_swing", "both_arms_swing")
    for side, sign, arm_ph, swinging in (
        ("Left", 1.0, math.pi, swing_left),
        ("Right", -1.0, 0.0, swing_right),
    ):
        shoulder = (spine_shoulder + sign * seg["shoulder_halfwidth"] * lat3
                    - seg["shoulder_drop"] * up)
        put(f"Shoulder{side}", shoulder)
        if swinging:
            amp = spec.arm_amplitude_rad
        else:
            amp = arm_amp_walk  # natural counter-swing while walking, else ~0
        alpha = amp * math.sin(phase + arm_ph)
        elbow = shoulder + seg["upper_arm"] * (math.sin(alpha) * fwd3 - math.cos(alpha) * up)
        put(f"Elbow{side}", elbow)
        fore = alpha + 0.25  # constant slight elbow flexion
        hand_dir = math.sin(fore) * fwd3 - math.cos(fore) * up
        wrist = elbow + seg["forearm"] * hand_dir
        put(f"Wrist{side}", wrist)
        hand = wrist + seg["hand"] * hand_dir
        put(f"Hand{side}", hand)
        put(f"HandTip{side}", hand + seg["hand_tip"] * hand_dir)
        thumb_dir = 0.8 * hand_dir - sign * 0.6 * lat3
        put(f"Thumb{side}", wrist + seg["thumb"] * thumb_dir)

    return joints


def generate_pose_sequence(spec: ActionSpec, frames: int, seed: int,
                           fps: float = 15.0) -> list[SkeletonPose]:
    """Forward-kinematic pose track; deterministic per (spec, frames, seed)."""
    if frames < 1:
        raise ValueError("frames must be >= 1")
    rng = rng_for(seed, "poses", spec.subject, spec.action)
    gait_phase0 = float(rng.uniform(0.0, 2.0 * math.pi))
    path_phase0 = float(rng.uniform(0.0, 2.0 * math.pi))
    out = []
    for k in range(frames):
        t = k / fps
        out.append(SkeletonPose(joints=_pose_at(spec, t, gait_phase0, path_phase0), timestamp=t))
    return out


def _sample_bone_points(pose: SkeletonPose, count: int, sigma: float, weights,
                        rng: np.random.Generator, prev_pose: SkeletonPose | None,
                        fps: float) -> tuple[np.ndarray, np.ndarray]:
    """World-frame reflection points on the skeleton plus their velocities."""
    edges = np.asarray(SKELETON_EDGE_INDICES)
    p = np.asarray(weights, dtype=np.float64)
    p = p / p.sum()
    chosen = rng.choice(len(edges), size=count, p=p)
    u = rng.uniform(0.0, 1.0, size=count)[:, None]
    a = pose.joints[edges[chosen, 0]]
    b = pose.joints[edges[chosen, 1]]
    pts = (1.0 - u) * a + u * b + rng.normal(0.0, sigma, size=(count, 3))
    if prev_pose is not None:
        pa = prev_pose.joints[edges[chosen, 0]]
        pb = prev_pose.joints[edges[chosen, 1]]
        vel = ((1.0 - u) * (a - pa) + u * (b - pb)) * fps
    else:
        vel = np.zeros_like(pts)
    return pts, vel


def _to_radar_detections(points: np.ndarray, velocities: np.ndarray,
                         ext: RadarExtrinsics, scene: SceneConfig) -> np.ndarray:
    """World points -> in-FOV radar-local (rho, theta, phi, v) detections."""
    local = invert_extrinsics_array(points, ext)
    # Rotation-only transform for velocity vectors (no height offset).
    vel_local = invert_extrinsics_array(velocities, RadarExtrinsics(0.0, ext.tilt, ext.radar_index))
    sph = cartesian_to_spherical_array(local)
    rho, theta, phi = sph[:, 0], sph[:, 1], sph[:, 2]
    mask = (
        (rho > 0.0)
        & (np.abs(theta) <= scene.fov_azimuth_rad)
        & (np.abs(phi - math.pi / 2.0) <= scene.fov_elevation_rad)
    )
    rho, theta, phi = rho[mask], theta[mask], phi[mask]
    local, vel_local = local[mask], vel_local[mask]
    radial = np.einsum("ij,ij->i", local, vel_local) / np.where(rho > 0, rho, 1.0)
    q = scene.range_quantization_m
    rho = np.round(rho / q) * q
    if scene.angular_quantization_rad:
        qa = scene.angular_quantization_rad
        theta = np.round(theta / qa) * qa
        phi = np.round(phi / qa) * qa
    return np.stack([rho, theta, phi, radial], axis=1)


def synthesize_radar_frame(pose: SkeletonPose, scene: SceneConfig, seed,
                           prev_pose: SkeletonPose | None = None
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Simulate both radars observing one pose.

    Returns two (M, 4) arrays of radar-local spherical detections
    (rho, theta, phi, v), top radar first. The combined count is capped
    at scene.max_combined_points by random thinning.
    """
    rng = seed if isinstance(seed, np.random.Generator) else rng_for(seed, "radar-frame")
    per_radar = []
    for ext in (scene.radar_top, scene.radar_bottom):
        n = int(round(rng.normal(scene.points_per_radar_mean, scene.points_per_radar_sd)))
        n = max(scene.min_points_per_radar, min(n, scene.max_combined_points))
        pts, vel = _sample_bone_points(pose, n, scene.noise_sigma_m, scene.bone_weights,
                                       rng, prev_pose, scene.frame_rate_hz)
        per_radar.append(_to_radar_detections(pts, vel, ext, scene))
    top, bottom = per_radar
    total = top.shape[0] + bottom.shape[0]
    if total > scene.max_combined_points:
        keep = np.sort(rng.choice(total, size=scene.max_combined_points, replace=False))
        merged = np.concatenate([top, bottom], axis=0)[keep]
        n_top = int(np.sum(keep < top.shape[0]))
        top, bottom = merged[:n_top], merged[n_top:]
    return top, bottom


def detections_to_world(detections: np.ndarray, ext: RadarExtrinsics) -> np.ndarray:
    """Radar-local spherical detections -> world Cartesian, via the real pipeline."""
    return apply_extrinsics_array(spherical_to_cartesian_array(detections), ext)


def frame_world_points(record: dict, scene: SceneConfig) -> np.ndarray:
    """Merged world-frame point cloud of one dataset record (top then bottom)."""
    top = detections_to_world(np.asarray(record["radar_top"], dtype=np.float64).reshape(-1, 4),
                              scene.radar_top)
    bottom = detections_to_world(
        np.asarray(record["radar_bottom"], dtype=np.float64).reshape(-1, 4), scene.radar_bottom)
    return merge_radar_frames(top, bottom)


def _joints_in_roi(joints: np.ndarray, world_points: np.ndarray,
                   dictionary: VoxelDictionary) -> bool:
    if world_points.shape[0] == 0:
        return False
    centered_joints = joints - world_points.mean(axis=0)
    return not np.any(points_to_tokens(centered_joints, dictionary) == OUT_OF_ROI)


def generate_dataset(specs, scene: SceneConfig, frames_per_action, seed: int,
                     path, dictionary: VoxelDictionary | None = None) -> dict:
    """Write a JSONL dataset of radar detections plus ground-truth joints.

    ``frames_per_action`` is one count for all specs or a per-spec list.
    The first line is a header record carrying the scene config and
    format version. Each frame is checked for ROI containment of the
    joints after centering on that frame's radar centroid; violating
    frames are re-sampled with a new sub-seed (counted in the summary).
    """
    dictionary = dictionary or VoxelDictionary()
    specs = list(specs)
    if isinstance(frames_per_action, int):
        frame_counts = [frames_per_action] * len(specs)
    else:
        frame_counts = [int(c) for c in frames_per_action]
        if len(frame_counts) != len(specs):
            raise ValueError("need one frame count per spec")
    n_records = 0
    regenerated = 0
    with open(path, "w") as fh:
        header = {
            "format": "radarpose-dataset",
            "version": 1,
            "scene": scene.to_config(),
            "joint_names": JOINT_NAMES,
            "seed": int(seed),
            "records": sum(frame_counts),
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for spec_idx, spec in enumerate(specs):
            poses = generate_pose_sequence(spec, frame_counts[spec_idx], seed,
                                           fps=scene.frame_rate_hz)
            for k, pose in enumerate(poses):
                prev_pose = poses[k - 1] if k > 0 else None
                for attempt in range(32):
                    rng = rng_for(seed, "radar", spec_idx, k, attempt)
                    top, bottom = synthesize_radar_frame(pose, scene, rng, prev_pose=prev_pose)
                    world = merge_radar_frames(
                        detections_to_world(top, scene.radar_top),
                        detections_to_world(bottom, scene.radar_bottom),
                    )
                    if _joints_in_roi(pose.joints, world, dictionary):
                        break
                    regenerated += 1
                else:
                    raise RuntimeError(
                        f"frame {k} of {spec.subject}/{spec.action}: joints stay outside the "
                        "ROI after 32 resampling attempts; scene geometry is inconsistent")
                record = {
                    "t": pose.timestamp,
                    "subject": spec.subject,
                    "action": spec.action,
                    "radar_top": top.tolist(),
                    "radar_bottom": bottom.tolist(),
                    "joints": pose.joints.tolist(),
                }
                fh.write(json.dumps(record, sort_keys=True) + "\n")
                n_records += 1
    return {"records": n_records, "roi_regenerations": regenerated}


def default_action_specs(subjects=(("s1", 1.75), ("s2", 1.62))) -> list[ActionSpec]:
    """One spec per (subject, action): the standard 8-recording layout."""
    specs = []
    for subject, height in subjects:
        for action in ACTIONS:
            specs.append(ActionSpec(action=action, subject=subject, subject_height_m=height))
    return specs
