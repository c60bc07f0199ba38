import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tagnav.errors import (
    BehindCameraError,
    InvalidParameterError,
    NonFiniteError,
    SchemaError,
    UnknownMarkerIdError,
)
from tagnav.geometry import (
    CameraIntrinsics,
    Marker,
    MarkerMap,
    Pose,
    back_project,
    default_intrinsics,
    project,
    project_camera_points,
    transform_points,
    wall_marker_map,
    wrap_angle,
)

finite = st.floats(-50, 50, allow_nan=False)
angles = st.floats(-20, 20, allow_nan=False)


# -- Pose ---------------------------------------------------------------------

@given(angles)
def test_theta_is_wrapped_into_half_open_interval(theta):
    p = Pose(0.0, 0.0, 0.0, theta)
    assert -math.pi < p.theta <= math.pi
    assert math.isclose(math.cos(p.theta), math.cos(theta), abs_tol=1e-9)
    assert math.isclose(math.sin(p.theta), math.sin(theta), abs_tol=1e-9)


def test_wrap_angle_boundaries():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    np.testing.assert_allclose(wrap_angle(np.array([0.0, 2 * math.pi, -0.5])), [0, 0, -0.5],
                               atol=1e-15)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_pose_rejects_non_finite(bad):
    with pytest.raises(NonFiniteError):
        Pose(bad, 0, 0, 0)
    with pytest.raises(NonFiniteError):
        Pose(0, 0, 0, bad)


@given(finite, finite, finite, angles)
def test_world_to_camera_round_trip(x, y, z, theta):
    p = Pose(x, y, z, theta)
    R, t = p.world_to_camera()
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)
    q = Pose.from_world_to_camera(R, t)
    np.testing.assert_allclose(q.position, p.position, atol=1e-9)
    assert math.isclose(wrap_angle(q.theta - p.theta), 0.0, abs_tol=1e-12)


def test_camera_looks_along_heading():
    # theta = pi/2 faces +y: a point straight ahead lands on the principal point
    intr = default_intrinsics()
    uv = project(intr, Pose(1.0, -3.0, 1.0, math.pi / 2), [1.0, 0.0, 1.0])
    np.testing.assert_allclose(uv, [intr.cx, intr.cy], atol=1e-12)
    # +x in the world is to the right, +z is up (smaller v)
    right = project(intr, Pose(1.0, -3.0, 1.0, math.pi / 2), [1.5, 0.0, 1.0])
    up = project(intr, Pose(1.0, -3.0, 1.0, math.pi / 2), [1.0, 0.0, 1.5])
    assert right[0] > intr.cx and up[1] < intr.cy


# -- projection ---------------------------------------------------------------

def test_project_optical_axis_point_to_principal_point():
    intr = CameraIntrinsics(1, 1, 0, 0, 10, 10)
    # theta = 0 looks along +x, so camera-frame (0, 0, 1) is world (1, 0, 0)
    np.testing.assert_allclose(project(intr, Pose(0, 0, 0, 0.0), [1, 0, 0]), [0, 0], atol=1e-15)


def test_project_formula_example():
    intr = CameraIntrinsics(100, 100, 428, 240, 856, 480)
    np.testing.assert_allclose(project_camera_points(intr, [1, 2, 2]), [478, 340])


@pytest.mark.parametrize("depth", [-1.0, 0.0])
def test_project_behind_camera(depth):
    with pytest.raises(BehindCameraError):
        project_camera_points(default_intrinsics(), [0.1, 0.2, depth])


def test_project_non_finite():
    with pytest.raises(NonFiniteError):
        project_camera_points(default_intrinsics(), [math.nan, 0, 1])


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 20), st.floats(0.01, 100))
def test_projection_homogeneous_in_depth(X, Y, Z, lam):
    intr = default_intrinsics()
    a = project_camera_points(intr, [X, Y, Z])
    b = project_camera_points(intr, [lam * X, lam * Y, lam * Z])
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-9)


@given(st.floats(0, 855.999), st.floats(0, 479.999), st.floats(1e-3, 1e3))
def test_back_project_round_trip(u, v, d):
    intr = default_intrinsics()
    uv = project_camera_points(intr, back_project(intr, [u, v], d))
    np.testing.assert_allclose(uv, [u, v], atol=1e-12, rtol=0)


def test_transform_points_vectorised(rng):
    pose = Pose(0.3, -2.0, 1.1, 1.4)
    pts = rng.normal(size=(5, 3))
    one_by_one = np.array([transform_points(pose, p) for p in pts])
    np.testing.assert_allclose(transform_points(pose, pts), one_by_one, atol=1e-14)


# -- intrinsics -----------------------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(fx=0), dict(fy=-1), dict(cx=856), dict(cy=-0.5), dict(width=0),
])
def test_intrinsics_invariants(kw):
    base = dict(fx=537.0, fy=537.0, cx=428.0, cy=240.0, width=856, height=480)
    base.update(kw)
    with pytest.raises(InvalidParameterError):
        CameraIntrinsics(**base)


def test_default_intrinsics_match_image_size():
    intr = default_intrinsics()
    assert (intr.width, intr.height) == (856, 480)
    assert (intr.fx, intr.fy, intr.cx, intr.cy) == (537.0, 537.0, 428.0, 240.0)


def test_intrinsics_file_round_trip(tmp_path):
    path = tmp_path / "k.json"
    path.write_text(json.dumps(default_intrinsics().to_dict()))
    assert CameraIntrinsics.load(path) == default_intrinsics()


def test_intrinsics_schema_rejects_missing_field():
    d = default_intrinsics().to_dict()
    del d["fy"]
    with pytest.raises(SchemaError, match="fy"):
        CameraIntrinsics.from_dict(d)


# -- markers ----------------------------------------------------------------------

def test_wall_map_default_geometry():
    m = wall_marker_map(8, 0.2, 0.58, 0.724)
    assert m.ids == list(range(1, 9))
    np.testing.assert_allclose(m[1].corners, [[-0.1, 0, 0.824], [0.1, 0, 0.824],
                                              [0.1, 0, 0.624], [-0.1, 0, 0.624]], atol=1e-15)
    assert np.linalg.norm(m[2].center - m[1].center) == pytest.approx(0.58)
    assert np.all(m.corners[..., 1] == 0.0)


def test_wall_map_unit_geometry():
    m = wall_marker_map(1, 2.0, 1.0, 1.0)
    np.testing.assert_allclose(m[1].corners, [[-1, 0, 2], [1, 0, 2], [1, 0, 0], [-1, 0, 0]])


@pytest.mark.parametrize("kw", [dict(n=0), dict(side=0), dict(spacing=-1),
                                dict(center_height=0)])
def test_wall_map_rejects_bad_dimensions(kw):
    with pytest.raises(InvalidParameterError):
        wall_marker_map(**kw)


@given(st.integers(1, 12), st.floats(0.01, 2), st.floats(0.01, 3), st.floats(0.01, 3))
def test_wall_map_satisfies_marker_invariants(n, side, spacing, height):
    m = wall_marker_map(n, side, spacing, height)
    assert len(m) == n and len(set(m.ids)) == n
    for mk in m:
        edges = np.linalg.norm(np.roll(mk.corners, -1, axis=0) - mk.corners, axis=1)
        np.testing.assert_allclose(edges, side, atol=1e-9)
        assert np.all(np.abs(mk.corners[:, 1]) <= 1e-9)
        # TL, TR, BR, BL seen from -y: x increases TL->TR, z decreases TR->BR
        c = mk.corners
        assert c[1, 0] > c[0, 0] and c[2, 2] < c[1, 2]


def test_marker_rejects_non_square_and_non_planar():
    sq = np.array([[0, 0, 1], [1, 0, 1], [1, 0, 0], [0, 0, 0]], dtype=float)
    with pytest.raises(InvalidParameterError):
        Marker(1, sq * [2, 1, 1])
    bent = sq.copy()
    bent[2, 1] = 1e-6
    with pytest.raises(InvalidParameterError):
        Marker(1, bent)
    with pytest.raises(InvalidParameterError):
        Marker(1, sq[:3])


def test_marker_map_lookup_and_duplicates(wall):
    assert wall[3].id == 3 and wall.index_of(3) == 2
    with pytest.raises(UnknownMarkerIdError) as exc:
        wall[9]
    assert exc.value.marker_id == 9
    with pytest.raises(InvalidParameterError):
        MarkerMap([wall[1], wall[1]])
    with pytest.raises(InvalidParameterError):
        MarkerMap([])
    assert wall.subset([2, 5]).ids == [2, 5]


def test_marker_map_is_immutable(wall):
    with pytest.raises(ValueError):
        wall.corners[0, 0, 0] = 1.0
    with pytest.raises(ValueError):
        wall[1].corners[0, 0] = 1.0


def test_marker_map_file_round_trip(tmp_path, wall):
    path = tmp_path / "map.json"
    path.write_text(json.dumps(wall.to_dict()))
    back = MarkerMap.load(path)
    assert back.ids == wall.ids and back.frame == wall.frame
    np.testing.assert_array_equal(back.corners, wall.corners)


def test_marker_map_schema_errors(tmp_path, wall):
    d = wall.to_dict()
    d["markers"][0]["corners"] = d["markers"][0]["corners"][:3]
    with pytest.raises(SchemaError):
        MarkerMap.from_dict(d)
    with pytest.raises(SchemaError):
        MarkerMap.from_dict({"markers": []})
