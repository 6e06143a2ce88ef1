import math

import numpy as np
import pytest

from radarpose.geometry import (
    SPEED_OF_LIGHT,
    CartesianPoint,
    RadarExtrinsics,
    RadarParams,
    SphericalDetection,
    apply_extrinsics,
    apply_extrinsics_array,
    cartesian_to_spherical_array,
    invert_extrinsics,
    invert_extrinsics_array,
    max_unambiguous_range,
    merge_radar_frames,
    progressive_phase,
    range_resolution,
    spherical_to_cartesian,
    spherical_to_cartesian_array,
    virtual_aperture,
)


def test_spherical_to_cartesian_axis_aligned():
    p = spherical_to_cartesian(SphericalDetection(rho=2.0, theta=0.0, phi=math.pi / 2))
    assert p.x == pytest.approx(2.0)
    assert p.y == pytest.approx(0.0, abs=1e-12)
    assert p.z == pytest.approx(0.0, abs=1e-12)

    p = spherical_to_cartesian(SphericalDetection(rho=1.0, theta=math.pi / 2, phi=math.pi / 2))
    assert p.x == pytest.approx(0.0, abs=1e-12)
    assert p.y == pytest.approx(1.0)
    assert p.z == pytest.approx(0.0, abs=1e-12)


def test_spherical_to_cartesian_general():
    # rho=2, azimuth 30 deg, zenith 60 deg: hand evaluation gives
    # x = 2*sin60*cos30 = 1.5, y = 2*sin60*sin30 = 0.8660, z = 2*cos60 = 1.
    p = spherical_to_cartesian(SphericalDetection(2.0, math.radians(30), math.radians(60)))
    assert p.x == pytest.approx(1.5, abs=1e-4)
    assert p.y == pytest.approx(0.8660, abs=1e-4)
    assert p.z == pytest.approx(1.0, abs=1e-4)


def test_spherical_invariants_rejected():
    with pytest.raises(ValueError):
        SphericalDetection(rho=-1.0, theta=0.0, phi=0.5)
    with pytest.raises(ValueError):
        SphericalDetection(rho=1.0, theta=4.0, phi=0.5)
    with pytest.raises(ValueError):
        SphericalDetection(rho=1.0, theta=0.0, phi=3.5)


def test_range_preserved_over_random_inputs():
    rng = np.random.default_rng(1234)
    n = 10_000
    rho = rng.uniform(0.0, 50.0, n)
    theta = rng.uniform(-math.pi + 1e-9, math.pi, n)
    phi = rng.uniform(0.0, math.pi, n)
    pts = spherical_to_cartesian_array(np.stack([rho, theta, phi], axis=1))
    assert np.abs(np.linalg.norm(pts, axis=1) - rho).max() <= 1e-12 * max(1.0, rho.max())


def test_spherical_round_trip():
    rng = np.random.default_rng(7)
    sph = np.stack(
        [rng.uniform(0.1, 20, 500), rng.uniform(-3.1, 3.1, 500), rng.uniform(0.01, 3.13, 500)],
        axis=1,
    )
    back = cartesian_to_spherical_array(spherical_to_cartesian_array(sph))
    assert np.allclose(back, sph, atol=1e-10)


def test_apply_extrinsics_identity():
    ext = RadarExtrinsics(height=0.0, tilt=0.0)
    p = apply_extrinsics(CartesianPoint(1.0, 2.0, 3.0), ext)
    assert (p.x, p.y, p.z) == (1.0, 2.0, 3.0)


def test_apply_extrinsics_examples():
    # 90-degree tilt is not a legal mounting (|tilt| < pi/2), so evaluate
    # the same formula just inside the limit and at the documented
    # bottom-radar configuration.
    ext = RadarExtrinsics(height=1.0, tilt=math.radians(15))
    p = apply_extrinsics(CartesianPoint(1.0, 0.0, 0.0), ext)
    assert p.x == pytest.approx(0.9659, abs=1e-4)
    assert p.y == 0.0
    assert p.z == pytest.approx(0.7412, abs=1e-4)


def test_extrinsics_90_degree_formula():
    # The rotation formula itself, evaluated at tilt=90 deg via the array
    # path with explicit trig: x=1,z=0 -> (0, 0, 1) with height 2.
    c, s = math.cos(math.pi / 2), math.sin(math.pi / 2)
    x, z = 1.0, 0.0
    assert (x * c + z * s) == pytest.approx(0.0, abs=1e-12)
    assert (z * c - x * s + 2.0) == pytest.approx(1.0)


def test_extrinsics_isometry_and_inverse():
    rng = np.random.default_rng(99)
    ext = RadarExtrinsics(height=2.0, tilt=math.radians(20))
    pts = rng.uniform(-5, 5, (1000, 3))
    out = apply_extrinsics_array(pts, ext)
    # pairwise distances preserved (height offset cancels)
    d_in = np.linalg.norm(pts[:-1] - pts[1:], axis=1)
    d_out = np.linalg.norm(out[:-1] - out[1:], axis=1)
    assert np.abs(d_in - d_out).max() <= 1e-12 * max(1.0, d_in.max())
    # analytic inverse restores the input
    back = invert_extrinsics_array(out, ext)
    assert np.abs(back - pts).max() <= 1e-12

    p = CartesianPoint(0.3, -0.4, 1.2)
    q = invert_extrinsics(apply_extrinsics(p, ext), ext)
    assert (q.x, q.y, q.z) == pytest.approx((p.x, p.y, p.z), abs=1e-12)


def test_range_resolution():
    assert range_resolution(RadarParams(bandwidth=3e9)) == pytest.approx(0.04997, abs=1e-5)
    assert range_resolution(RadarParams(bandwidth=4e9)) == pytest.approx(0.0375, abs=1e-4)
    assert range_resolution(RadarParams(bandwidth=SPEED_OF_LIGHT / 2)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        RadarParams(bandwidth=0.0)


def test_max_unambiguous_range():
    assert max_unambiguous_range(RadarParams(pri=1e-6)) == pytest.approx(149.9, abs=0.05)
    assert max_unambiguous_range(RadarParams(pri=270e-6)) == pytest.approx(40_470, rel=1e-3)
    assert max_unambiguous_range(RadarParams(pri=2.0 / SPEED_OF_LIGHT)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        RadarParams(pri=-1.0)


def test_progressive_phase():
    params = RadarParams()
    assert progressive_phase(0, 0.7, params) == 0.0
    assert progressive_phase(3, 0.0, params) == 0.0
    # n=1, d = lambda/2, theta=30 deg -> 2*pi*(1/2)*sin(30)/1 = pi/2
    half_lambda = RadarParams(wavelength=2.0, element_spacing=1.0)
    assert progressive_phase(1, math.radians(30), half_lambda) == pytest.approx(math.pi / 2)


def test_virtual_aperture():
    d = 0.5 * RadarParams().wavelength
    assert virtual_aperture(RadarParams(n_tx=3, n_rx=4, element_spacing=d)) == pytest.approx(11 * d)
    assert virtual_aperture(RadarParams(n_tx=1, n_rx=4, element_spacing=d)) == pytest.approx(3 * d)
    assert virtual_aperture(RadarParams(n_tx=1, n_rx=1, element_spacing=d)) == 0.0


def test_merge_radar_frames():
    assert merge_radar_frames(["a", "b"], ["c"]) == ["a", "b", "c"]
    assert merge_radar_frames([], []) == []
    top = np.arange(12, dtype=float).reshape(4, 3)
    bottom = np.arange(9, dtype=float).reshape(3, 3) + 100
    merged = merge_radar_frames(top, bottom)
    assert merged.shape == (7, 3)
    assert np.array_equal(merged[:4], top)
    assert np.array_equal(merged[4:], bottom)
    # 88-point combined input keeps its length
    a, b = np.zeros((50, 3)), np.zeros((38, 3))
    assert merge_radar_frames(a, b).shape[0] == 88
