import numpy as np
import pytest

from radarpose.voxels import (
    EOS_TOKEN,
    FIRST_VOXEL_TOKEN,
    OUT_OF_ROI,
    PAD_TOKEN,
    SOS_TOKEN,
    SampleInvalid,
    TokenizedSample,
    VoxelDictionary,
    build_dictionary,
    centroid_center,
    detokenize_keypoints,
    point_to_token,
    points_to_tokens,
    token_to_point,
    tokenize_frame,
    tokenize_target,
    tokens_to_points,
)


@pytest.fixture(scope="module")
def default_dict():
    return VoxelDictionary()


def test_default_dictionary_dimensions(default_dict):
    assert default_dict.grid_dims == (28, 34, 44)  # depth, horizontal, vertical
    assert default_dict.n_horizontal == 34
    assert default_dict.n_vertical == 44
    assert default_dict.n_depth == 28
    assert default_dict.voxel_count == 41_888
    assert default_dict.vocab_size == 41_891
    assert (default_dict.pad_token, default_dict.sos_token, default_dict.eos_token) == (0, 1, 2)
    assert default_dict.first_voxel_token == 3


def test_degenerate_grids():
    one = build_dictionary(1.0, [1.0, 1.0, 1.0])
    assert one.voxel_count == 1
    assert one.vocab_size == 4
    eight = build_dictionary(0.5, [1.0, 1.0, 1.0])
    assert eight.grid_dims == (2, 2, 2)
    assert eight.vocab_size == 11


def test_build_dictionary_rejects_bad_inputs():
    with pytest.raises(ValueError):
        build_dictionary(0.0, [1, 1, 1])
    with pytest.raises(ValueError):
        build_dictionary(0.05, [1, -1, 1])


def test_centroid_center():
    pts, centroid = centroid_center(np.array([[1.0, 1, 1], [3, 3, 3]]))
    assert np.allclose(pts, [[-1, -1, -1], [1, 1, 1]])
    assert np.allclose(centroid, [2, 2, 2])

    single, c = centroid_center(np.array([[7.0, -2.0, 3.0]]))
    assert np.allclose(single, 0.0)
    assert np.allclose(c, [7, -2, 3])

    rng = np.random.default_rng(5)
    cloud = rng.uniform(-4, 4, (50, 3))
    centered, _ = centroid_center(cloud)
    assert np.linalg.norm(centered.mean(axis=0)) < 1e-12

    with pytest.raises(ValueError):
        centroid_center(np.zeros((0, 3)))


def test_origin_token_and_out_of_roi(default_dict):
    t = point_to_token(np.zeros(3), default_dict)
    assert t >= FIRST_VOXEL_TOKEN
    center = token_to_point(t, default_dict)
    # origin sits on the corner of the central cells; its voxel center is
    # half a resolution away on each axis
    assert np.all(np.abs(center) <= default_dict.resolution / 2 + 1e-12)
    assert point_to_token(np.array([10.0, 0, 0]), default_dict) == OUT_OF_ROI


def test_token_point_idempotence(default_dict):
    rng = np.random.default_rng(11)
    pts = rng.uniform(-0.6, 0.6, (200, 3))
    tokens = points_to_tokens(pts, default_dict)
    assert np.all(tokens != OUT_OF_ROI)
    again = points_to_tokens(tokens_to_points(tokens, default_dict), default_dict)
    assert np.array_equal(tokens, again)


def test_exhaustive_bijection(default_dict):
    all_tokens = np.arange(FIRST_VOXEL_TOKEN, default_dict.vocab_size)
    centers = tokens_to_points(all_tokens, default_dict)
    back = points_to_tokens(centers, default_dict)
    assert np.array_equal(back, all_tokens)


def test_quantization_bound(default_dict):
    rng = np.random.default_rng(21)
    lo = default_dict.min_corner()
    hi = -lo
    pts = rng.uniform(lo, hi, (10_000, 3))
    tokens = points_to_tokens(pts, default_dict)
    inside = tokens != OUT_OF_ROI
    assert inside.mean() > 0.999  # sampling the open box, boundary hits are measure-zero
    centers = tokens_to_points(tokens[inside], default_dict)
    err = np.abs(centers - pts[inside]).max()
    assert err <= default_dict.resolution / 2 + 1e-12


def test_first_voxel_token_is_min_corner_cell(default_dict):
    center = token_to_point(FIRST_VOXEL_TOKEN, default_dict)
    expected = default_dict.min_corner() + default_dict.resolution / 2
    assert np.allclose(center, expected)


def test_specials_are_not_locations(default_dict):
    for token in (PAD_TOKEN, SOS_TOKEN, EOS_TOKEN):
        with pytest.raises(ValueError):
            token_to_point(token, default_dict)
    with pytest.raises(ValueError):
        token_to_point(default_dict.vocab_size, default_dict)


def test_boundary_floor_semantics(default_dict):
    res = default_dict.resolution
    # A point exactly on an interior cell boundary: floor semantics put it
    # in the cell whose lower edge it touches, deterministically.
    p = np.array([res, 0.012, -0.018])
    t1 = point_to_token(p, default_dict)
    t2 = point_to_token(p, default_dict)
    assert t1 == t2 != OUT_OF_ROI
    center = token_to_point(t1, default_dict)
    assert center[0] == pytest.approx(res + res / 2)


def test_tokenize_frame_padding(default_dict):
    rng = np.random.default_rng(3)
    pts = rng.uniform(-0.5, 0.5, (5, 3))
    row, dropped = tokenize_frame(pts, default_dict)
    assert row.shape == (90,)
    assert dropped == 0
    assert np.all(row[:5] >= FIRST_VOXEL_TOKEN)
    assert np.all(row[5:] == PAD_TOKEN)

    empty_row, dropped = tokenize_frame(np.zeros((0, 3)), default_dict)
    assert np.all(empty_row == PAD_TOKEN)
    assert dropped == 0

    big = rng.uniform(-0.5, 0.5, (88, 3))
    row, _ = tokenize_frame(big, default_dict)
    assert np.sum(row != PAD_TOKEN) == 88
    assert np.all(row[88:] == PAD_TOKEN)


def test_tokenize_frame_drops_and_errors(default_dict):
    pts = np.array([[0.0, 0, 0], [50.0, 0, 0], [0.1, 0.1, 0.1]])
    row, dropped = tokenize_frame(pts, default_dict)
    assert dropped == 1
    assert np.sum(row != PAD_TOKEN) == 2

    rng = np.random.default_rng(9)
    too_many = rng.uniform(-0.5, 0.5, (91, 3))
    with pytest.raises(ValueError):
        tokenize_frame(too_many, default_dict)


def test_pad_only_as_suffix(default_dict):
    rng = np.random.default_rng(15)
    for _ in range(50):
        count = rng.integers(0, 91)
        pts = rng.uniform(-0.6, 0.6, (count, 3))
        row, _ = tokenize_frame(pts, default_dict)
        assert row.shape == (90,)
        non_pad = row != PAD_TOKEN
        if non_pad.any():
            last = np.nonzero(non_pad)[0].max()
            assert np.all(non_pad[: last + 1])
            assert not non_pad[last + 1 :].any()


def test_translation_invariance(default_dict):
    rng = np.random.default_rng(33)
    cloud = rng.uniform(-0.6, 0.6, (60, 3))
    base_row, _ = tokenize_frame(centroid_center(cloud)[0], default_dict)
    for _ in range(1000):
        offset = rng.uniform(-25, 25, 3)
        moved, _ = centroid_center(cloud + offset)
        row, _ = tokenize_frame(moved, default_dict)
        assert np.array_equal(row, base_row)


def test_tokenize_target_framing(default_dict):
    rng = np.random.default_rng(8)
    joints = rng.uniform(-0.5, 0.5, (25, 3))
    target = tokenize_target(joints, default_dict)
    assert target.shape == (27,)
    assert target[0] == SOS_TOKEN
    assert target[-1] == EOS_TOKEN
    assert np.all(target[1:-1] >= FIRST_VOXEL_TOKEN)

    recovered = detokenize_keypoints(target, np.zeros(3), default_dict)
    assert np.abs(recovered - joints).max() <= default_dict.resolution / 2 + 1e-12


def test_tokenize_target_out_of_roi(default_dict):
    joints = np.zeros((25, 3))
    joints[7] = [50.0, 0, 0]
    with pytest.raises(SampleInvalid):
        tokenize_target(joints, default_dict)
    with pytest.raises(ValueError):
        tokenize_target(np.zeros((24, 3)), default_dict)


def test_detokenize_round_trip_with_centroid(default_dict):
    rng = np.random.default_rng(88)
    joints = rng.uniform(-0.5, 0.5, (25, 3))
    centroid = np.array([1.0, 0.0, 1.0])
    target = tokenize_target(joints, default_dict)
    world = detokenize_keypoints(target, centroid, default_dict)
    assert np.abs(world - (joints + centroid)).max() <= default_dict.resolution / 2 + 1e-12


def test_detokenize_errors(default_dict):
    with pytest.raises(ValueError):
        detokenize_keypoints(np.full(24, FIRST_VOXEL_TOKEN), np.zeros(3), default_dict)
    bad = np.full(25, FIRST_VOXEL_TOKEN)
    bad[3] = SOS_TOKEN
    with pytest.raises(ValueError):
        detokenize_keypoints(bad, np.zeros(3), default_dict)


def test_detokenize_degenerate_prediction(default_dict):
    tokens = np.full(25, FIRST_VOXEL_TOKEN + 17)
    pts = detokenize_keypoints(tokens, np.zeros(3), default_dict)
    assert np.allclose(pts, pts[0])


def test_tokenized_sample_validation(default_dict):
    rng = np.random.default_rng(2)
    joints = rng.uniform(-0.5, 0.5, (25, 3))
    target = tokenize_target(joints, default_dict)
    row, _ = tokenize_frame(rng.uniform(-0.5, 0.5, (10, 3)), default_dict)
    sample = TokenizedSample(
        input_tokens=np.stack([row, row]),
        target_tokens=target,
        centroid=np.zeros(3),
        frame_timestamps=np.array([0.0, 0.1]),
    )
    assert sample.input_tokens.shape == (2, 90)
    bad_target = target.copy()
    bad_target[0] = PAD_TOKEN
    with pytest.raises(ValueError):
        TokenizedSample(np.stack([row]), bad_target, np.zeros(3), np.array([0.0]))
