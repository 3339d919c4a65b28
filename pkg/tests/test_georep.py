import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from geoman.errors import DegenerateError, RangeError, ValidationError
from geoman.scenegen import CameraModel, build_scene, render_frame, single_sphere_spec
from geoman.georep import (
    AffineInvariantDepthMap,
    MetricDepthMap,
    PointCloud,
    RootPose,
    RootRelativeDepthMap,
    affine_normalize,
    backproject,
    decode_from_diffusion,
    decode_normal,
    encode_for_diffusion,
    encode_normal,
    read_ply,
    reproject,
    root_depth,
    to_metric,
    to_root_relative,
    write_ply,
)


def test_root_depth_examples():
    assert root_depth(RootPose([0, 0, 3], np.eye(3), [0, 0, 0])) == 3.0
    assert root_depth(RootPose([0, 0, 3], np.eye(3), [0, 0, -1])) == 2.0
    c, s = np.cos(np.pi / 2), np.sin(np.pi / 2)
    Ry = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    # explicit multiply oracle: third row of R dotted with P_w
    expected = sum(Ry[2, k] * [2.0, 0.0, 0.0][k] for k in range(3))
    assert expected == pytest.approx(-2.0)
    assert root_depth(RootPose([2, 0, 0], Ry, [0, 0, 0])) == pytest.approx(expected, abs=1e-12)


def test_root_pose_rejects_reflection():
    with pytest.raises(ValidationError):
        RootPose([0, 0, 0], np.diag([1.0, 1.0, -1.0]), [0, 0, 0])


def test_root_relative_examples():
    m = np.ones((1, 2), bool)
    rr = to_root_relative(MetricDepthMap(np.array([[2.5, 2.0]]), m), 2.0)
    assert rr.values.tolist() == [[0.5, 0.0]]
    assert to_metric(RootRelativeDepthMap(np.array([[0.5]]), np.ones((1, 1), bool)), 2.0).values[0, 0] == 2.5
    z = to_metric(RootRelativeDepthMap(np.zeros((2, 2)), np.ones((2, 2), bool)), 1.7)
    assert (z.values == 1.7).all()
    with pytest.raises(RangeError):
        to_metric(RootRelativeDepthMap(np.array([[-2.5]]), np.ones((1, 1), bool)), 2.0)


def test_out_of_range_names_pixel():
    d = np.full((3, 3), 2.0)
    d[1, 2] = 3.5
    with pytest.raises(RangeError, match=r"\(1, 2\)"):
        to_root_relative(MetricDepthMap(d, np.ones((3, 3), bool)), 2.0, h=2.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(0.5, 1.5)), st.floats(1.0, 8.0),
       arrays(bool, (4, 5)))
def test_metric_root_relative_round_trip_exact(rel, root, mask):
    metric = np.where(mask, root + rel - 1.0, 0.0)
    rr = to_root_relative(MetricDepthMap(metric, mask), root)
    back = to_metric(rr, root)
    assert np.array_equal(back.values[mask], metric[mask])


def test_affine_normalize():
    m = np.ones((1, 3), bool)
    a = affine_normalize(MetricDepthMap(np.array([[1.0, 2.0, 3.0]]), m))
    assert a.values.tolist() == [[0.0, 0.5, 1.0]] and (a.dmin, a.dmax) == (1.0, 3.0)
    with pytest.raises(DegenerateError):
        affine_normalize(MetricDepthMap(np.full((1, 3), 5.0), m))
    b = affine_normalize(MetricDepthMap(np.array([[1.0, 2.0, 3.0]]) * 2.5 + 7.0, m))
    assert np.allclose(a.values, b.values, atol=1e-15)


def test_encode_depth_examples():
    m = np.ones((1, 3), bool)
    enc = encode_for_diffusion(RootRelativeDepthMap(np.array([[1.0, 0.0, -0.4]]), m, 3.0, 2.0))
    assert enc.shape == (1, 3, 3)
    assert enc[0, 0].tolist() == [1.0, 1.0, 1.0] and enc[0, 1].tolist() == [0.0, 0.0, 0.0]
    m2 = np.array([[True, False]])
    enc2 = encode_for_diffusion(RootRelativeDepthMap(np.array([[0.2, 9.0]]), m2))
    assert (enc2[0, 1] == -1.0).all()
    with pytest.raises(RangeError):
        encode_for_diffusion(RootRelativeDepthMap(np.array([[1.2]]), np.ones((1, 1), bool), None, 2.0))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-1.0, 1.0)), st.floats(0.5, 3.0))
def test_depth_encoding_round_trip(vals, h):
    mask = np.ones(vals.shape, bool)
    rr = RootRelativeDepthMap(vals * h / 2, mask, None, h)
    back = decode_from_diffusion(encode_for_diffusion(rr), mask, h)
    assert np.abs(back.values - rr.values).max() <= 1e-6


def test_normal_encoding_examples():
    m = np.ones((1, 1), bool)
    assert encode_normal(np.array([[[0.0, 0.0, -1.0]]]), m)[0, 0].tolist() == [0.0, 0.0, -1.0]
    assert np.allclose(decode_normal(np.array([[[0.6, 0.0, -0.8]]])), [[[0.6, 0.0, -0.8]]], atol=1e-15)
    assert np.allclose(decode_normal(np.array([[[1.2, 0.0, -1.6]]])), [[[0.6, 0.0, -0.8]]], atol=1e-15)
    with pytest.raises(DegenerateError):
        decode_normal(np.zeros((1, 1, 3)))
    # zero vectors outside the mask are fine
    out = decode_normal(np.zeros((1, 2, 3)) + [[[0, 0, 0], [0, 0, -1]]], np.array([[False, True]]))
    assert out[0, 0].tolist() == [0, 0, 0]


def test_backproject_examples():
    cam = CameraModel(50.0, 60.0, 16.0, 12.0, np.eye(3), np.zeros(3), 32, 24)
    d = np.zeros((24, 32))
    m = np.zeros((24, 32), bool)
    d[12, 16], m[12, 16] = 2.0, True
    d[12, 66 - 50 + 0] = 2.0  # same pixel twice is harmless
    pc = backproject(MetricDepthMap(d, m), cam)
    assert pc.points.tolist() == [[0.0, 0.0, 2.0]]
    cam2 = CameraModel(10.0, 10.0, 5.0, 5.0, np.eye(3), np.zeros(3), 20, 20)
    d2 = np.zeros((20, 20))
    m2 = np.zeros((20, 20), bool)
    d2[5, 15], m2[5, 15] = 1.0, True
    assert backproject(MetricDepthMap(d2, m2), cam2).points.tolist() == [[1.0, 0.0, 1.0]]


def test_backproject_reproject_and_ply(tmp_path):
    scene = build_scene(single_sphere_spec((0.1, 0.0, 3.0), 0.7))
    cam = CameraModel.identity(40, 30, focal=35.0)
    fr = render_frame(scene, cam, 0.0)
    pc = backproject(MetricDepthMap(fr.depth.astype(np.float64), fr.mask), cam, fr.rgb)
    assert len(pc.points) == fr.mask.sum()
    v, u = np.nonzero(fr.mask)
    assert np.abs(reproject(pc, cam) - np.stack([u, v], -1)).max() <= 1e-5
    write_ply(pc, tmp_path / "a.ply")
    back = read_ply(tmp_path / "a.ply")
    assert len(back.points) == fr.mask.sum()
    assert np.allclose(back.points, pc.points, rtol=1e-6)
    text = (tmp_path / "a.ply").read_text()
    assert f"element vertex {fr.mask.sum()}" in text
    write_ply(PointCloud(pc.points), tmp_path / "b.ply")
    assert read_ply(tmp_path / "b.ply").colors is None


def test_root_relative_translation_invariance_vs_affine():
    """Dolly the camera along its axis: root-relative depth of the surface seen at the principal point is
    unchanged, while the affine-normalized value there moves because a side object leaves the view and
    the max-depth pixel changes."""
    from geoman.scenegen import PartSpec, SceneSpec

    parts = (
        PartSpec("body", "sphere", (0.5,)),
        PartSpec("side", "sphere", (0.2,), parent=0, joint=(1.4, 0.0, 1.0)),
        PartSpec("near", "sphere", (0.15,), parent=0, joint=(-0.4, 0.0, -0.8)),
    )
    scene = build_scene(SceneSpec(parts=parts, root_keys=np.array([[0.0, 0.0, 3.0]])))
    cams = [CameraModel(40.0, 40.0, 16.0, 16.0, np.eye(3), np.array([0.0, 0.0, -dz]), 32, 32) for dz in (0.0, 1.0)]
    frames = [render_frame(scene, c, 0.0) for c in cams]
    rr, aff = [], []
    for fr, cam in zip(frames, cams):
        d = MetricDepthMap(fr.depth.astype(np.float64), fr.mask)
        r = root_depth(RootPose([0.0, 0.0, 3.0], cam.R, cam.T))
        rr.append(to_root_relative(d, r).values)
        aff.append(affine_normalize(d).values)
    assert frames[0].mask[16, 16] and frames[1].mask[16, 16]
    # the side sphere is in view before the dolly only
    far = [(fr.mask & (fr.depth > 3.5 - dz)).any() for fr, dz in zip(frames, (0.0, 1.0))]
    assert far == [True, False]
    # pixels hit by the same surface point in both views: the principal ray and the sphere front
    rr_err = abs(rr[0][16, 16] - rr[1][16, 16])
    aff_err = abs(aff[0][16, 16] - aff[1][16, 16])
    assert rr_err <= 1e-5
    assert rr_err < aff_err


def test_scale_preservation():
    scene = build_scene(single_sphere_spec((0.0, 0.0, 3.0), 0.6))
    fr = render_frame(scene, CameraModel.identity(32, 32, focal=30.0), 0.0)
    d = MetricDepthMap(fr.depth.astype(np.float64), fr.mask)
    rr = to_root_relative(d, 3.0)
    extent = d.values[d.mask].max() - d.values[d.mask].min()
    assert rr.values[rr.mask].max() - rr.values[rr.mask].min() == pytest.approx(extent, abs=1e-12)
    aff = affine_normalize(d)
    assert aff.values[aff.mask].max() - aff.values[aff.mask].min() == 1.0
    assert isinstance(aff, AffineInvariantDepthMap)
