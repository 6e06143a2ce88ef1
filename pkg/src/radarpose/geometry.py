"""Radar coordinate transforms and front-end utility formulas.

Axis convention, fixed package-wide:

    x = depth (radar boresight direction),
    y = horizontal (cross-range),
    z = vertical (up).

A detection in a radar's local spherical frame is (rho, theta, phi, v)
with rho the range in meters, theta the azimuth in radians, phi the
elevation angle measured from zenith (phi = pi/2 is the horizontal
plane), and v the radial velocity in m/s.

Mounting a radar at height h with a downward tilt angle t (in the
depth-elevation plane) is undone by ``apply_extrinsics``, which rotates
radar-local Cartesian points into the shared ground-plane frame and adds
the height offset.
"""

from dataclasses import dataclass
import math

import numpy as np

# Speed of light to four significant figures (m/s).
SPEED_OF_LIGHT = 2.998e8


@dataclass(frozen=True)
class SphericalDetection:
    """One radar detection in the radar-local spherical frame."""

    rho: float
    theta: float
    phi: float
    v: float = 0.0

    def __post_init__(self):
        if not (self.rho >= 0.0):
            raise ValueError(f"range must be non-negative, got {self.rho}")
        if not (-math.pi < self.theta <= math.pi):
            raise ValueError(f"azimuth must be in (-pi, pi], got {self.theta}")
        if not (0.0 <= self.phi <= math.pi):
            raise ValueError(f"zenith angle must be in [0, pi], got {self.phi}")


@dataclass(frozen=True)
class CartesianPoint:
    """A 3-D point: x = depth, y = horizontal, z = vertical (meters)."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise ValueError("coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True)
class RadarExtrinsics:
    """Mounting of one radar: height above ground and tilt in depth-elevation."""

    height: float
    tilt: float
    radar_index: str = "top"

    def __post_init__(self):
        if self.height < 0.0:
            raise ValueError(f"height must be non-negative, got {self.height}")
        if not abs(self.tilt) < math.pi / 2:
            raise ValueError(f"|tilt| must be < pi/2, got {self.tilt}")


@dataclass(frozen=True)
class RadarParams:
    """Waveform and antenna-array parameters of one transceiver."""

    bandwidth: float = 3e9
    pri: float = 270e-6
    wavelength: float = SPEED_OF_LIGHT / 77e9
    element_spacing: float = 0.5 * SPEED_OF_LIGHT / 77e9
    n_tx: int = 3
    n_rx: int = 4

    def __post_init__(self):
        for name in ("bandwidth", "pri", "wavelength", "element_spacing"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_tx < 1 or self.n_rx < 1:
            raise ValueError("n_tx and n_rx must be >= 1")


def spherical_to_cartesian(det: SphericalDetection) -> CartesianPoint:
    """Convert one radar-local spherical detection to Cartesian coordinates.

    x = rho*sin(phi)*cos(theta), y = rho*sin(phi)*sin(theta), z = rho*cos(phi).
    """
    sin_phi = math.sin(det.phi)
    return CartesianPoint(
        x=det.rho * sin_phi * math.cos(det.theta),
        y=det.rho * sin_phi * math.sin(det.theta),
        z=det.rho * math.cos(det.phi),
    )


def spherical_to_cartesian_array(sph: np.ndarray) -> np.ndarray:
    """Vectorized spherical-to-Cartesian for an (M, 3) or (M, 4) array.

    Columns are (rho, theta, phi[, v]); the velocity column is ignored.
    Returns an (M, 3) float64 array of (x, y, z).
    """
    sph = np.asarray(sph, dtype=np.float64)
    if sph.size == 0:
        return np.zeros((0, 3), dtype=np.float64)
    sph = sph.reshape(-1, sph.shape[-1])
    rho, theta, phi = sph[:, 0], sph[:, 1], sph[:, 2]
    sin_phi = np.sin(phi)
    return np.stack(
        [rho * sin_phi * np.cos(theta), rho * sin_phi * np.sin(theta), rho * np.cos(phi)],
        axis=1,
    )


def cartesian_to_spherical_array(points: np.ndarray) -> np.ndarray:
    """Inverse of :func:`spherical_to_cartesian_array`; returns (M, 3) (rho, theta, phi)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rho = np.linalg.norm(points, axis=1)
    theta = np.arctan2(points[:, 1], points[:, 0])
    # Guard rho == 0: define phi = 0 there.
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_phi = np.where(rho > 0, points[:, 2] / np.where(rho > 0, rho, 1.0), 1.0)
    phi = np.arccos(np.clip(cos_phi, -1.0, 1.0))
    return np.stack([rho, theta, phi], axis=1)


def apply_extrinsics(p: CartesianPoint, ext: RadarExtrinsics) -> CartesianPoint:
    """Re-adjust one radar-local point into the shared ground-plane frame."""
    c, s = math.cos(ext.tilt), math.sin(ext.tilt)
    return CartesianPoint(
        x=p.x * c + p.z * s,
        y=p.y,
        z=p.z * c - p.x * s + ext.height,
    )


def apply_extrinsics_array(points: np.ndarray, ext: RadarExtrinsics) -> np.ndarray:
    """Vectorized :func:`apply_extrinsics` for an (M, 3) array."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    c, s = math.cos(ext.tilt), math.sin(ext.tilt)
    out = np.empty_like(points)
    out[:, 0] = points[:, 0] * c + points[:, 2] * s
    out[:, 1] = points[:, 1]
    out[:, 2] = points[:, 2] * c - points[:, 0] * s + ext.height
    return out


def invert_extrinsics(p: CartesianPoint, ext: RadarExtrinsics) -> CartesianPoint:
    """Analytic inverse of :func:`apply_extrinsics` (world -> radar-local)."""
    c, s = math.cos(ext.tilt), math.sin(ext.tilt)
    zs = p.z - ext.height
    return CartesianPoint(x=p.x * c - zs * s, y=p.y, z=zs * c + p.x * s)


def invert_extrinsics_array(points: np.ndarray, ext: RadarExtrinsics) -> np.ndarray:
    """Vectorized :func:`invert_extrinsics` for an (M, 3) array."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    c, s = math.cos(ext.tilt), math.sin(ext.tilt)
    zs = points[:, 2] - ext.height
    out = np.empty_like(points)
    out[:, 0] = points[:, 0] * c - zs * s
    out[:, 1] = points[:, 1]
    out[:, 2] = zs * c + points[:, 0] * s
    return out


def range_resolution(params: RadarParams) -> float:
    """Range resolution c/(2*BW) in meters."""
    if params.bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    return SPEED_OF_LIGHT / (2.0 * params.bandwidth)


def max_unambiguous_range(params: RadarParams) -> float:
    """Maximum unambiguous range c*PRI/2 in meters."""
    if params.pri <= 0:
        raise ValueError("PRI must be positive")
    return SPEED_OF_LIGHT * params.pri / 2.0


def progressive_phase(n: int, theta: float, params: RadarParams) -> float:
    """Phase 2*pi*n*d*sin(theta)/lambda seen at receive element n (radians)."""
    if n < 0:
        raise ValueError("element index must be non-negative")
    return 2.0 * math.pi * n * params.element_spacing * math.sin(theta) / params.wavelength


def virtual_aperture(params: RadarParams) -> float:
    """TDM-MIMO virtual aperture (n_rx*n_tx - 1)*d in meters."""
    return (params.n_rx * params.n_tx - 1) * params.element_spacing


def merge_radar_frames(frame_top, frame_bottom):
    """Concatenate two same-frame point sets, top first, preserving order.

    Accepts either two (M, 3) arrays (returns one array) or two point
    lists (returns a list). Either input may be empty.
    """
    if isinstance(frame_top, np.ndarray) or isinstance(frame_bottom, np.ndarray):
        top = np.asarray(frame_top, dtype=np.float64).reshape(-1, 3)
        bottom = np.asarray(frame_bottom, dtype=np.float64).reshape(-1, 3)
        return np.concatenate([top, bottom], axis=0)
    return list(frame_top) + list(frame_bottom)
