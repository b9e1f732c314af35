import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gazecal.errors import PointBehindCamera, SceneFormatError
from gazecal.geometry import HeadPose, inverse_project, look_at, project, rotation_about
from gazecal.scene import SceneModel, box_mesh, merge_meshes, parse_obj, quad_mesh

angles = st.floats(-180, 180, allow_nan=False)
small = st.floats(-0.8, 0.8, allow_nan=False)


def test_point_on_axis():
    assert np.allclose(project(HeadPose.identity(), [0, 0, 2]), [0, 0, 1])


def test_similar_triangles():
    assert np.allclose(project(HeadPose.identity(), [1, 0, 2]), [0.5, 0, 1])


def test_rotated_camera_projection():
    R = rotation_about([0, 1, 0], 90)
    cam = HeadPose(R, [0, 0, 0])
    right, fwd = R[:, 0], R[:, 2]
    point = 2.0 * fwd + 0.2 * right
    # camera frame coordinates by hand: x = 0.2, y = 0, z = 2
    assert np.allclose(project(cam, point), [0.1, 0.0, 1.0], atol=1e-12)


def test_behind_camera_raises():
    with pytest.raises(PointBehindCamera):
        project(HeadPose.identity(), [0, 0, -1])
    with pytest.raises(PointBehindCamera):
        project(HeadPose.identity(), [1, 0, 0])


def test_inverse_project_axis_hit(plane_z2):
    hit = inverse_project(HeadPose.identity(), [0, 0, 1], plane_z2)
    assert np.allclose(hit, [0, 0, 2])


def test_inverse_project_reversed_camera(plane_z2):
    # A camera at z = 4 turned 180 degrees about up looks along world -z,
    # so its own forward ray g = [0, 0, 1] is the world ray toward the plane.
    cam = HeadPose(rotation_about([0, 1, 0], 180), [0, 0, 4])
    assert np.allclose(cam.rotation[:, 2], [0, 0, -1])
    hit = inverse_project(cam, [0, 0, 1], plane_z2)
    assert np.allclose(hit, [0, 0, 2], atol=1e-12)


def test_inverse_project_miss(plane_z2):
    cam = HeadPose(rotation_about([0, 1, 0], 180), [0, 0, 0])
    assert inverse_project(cam, [0, 0, 1], plane_z2) is None


def test_nearest_hit_of_two_planes():
    near = quad_mesh([(-5, -5, 2), (5, -5, 2), (5, 5, 2), (-5, 5, 2)])
    far = quad_mesh([(-5, -5, 3), (5, -5, 3), (5, 5, 3), (-5, 5, 3)])
    for parts in ([near, far], [far, near]):
        scene = SceneModel(*merge_meshes(parts))
        assert np.allclose(inverse_project(HeadPose.identity(), [0.3, -0.2, 1], scene), [0.6, -0.4, 2])


def test_back_faces_count(plane_z2):
    cam = HeadPose(rotation_about([0, 1, 0], 180), [0, 0, 5])
    assert inverse_project(cam, [0, 0, 1], plane_z2) is not None


def test_scene_drops_degenerate_triangles():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], float)
    scene = SceneModel(v, [[0, 1, 2], [0, 1, 3]])
    assert len(scene) == 1
    with pytest.raises(SceneFormatError):
        SceneModel(v, [[0, 1, 3]])
    with pytest.raises(SceneFormatError):
        SceneModel(v, [[0, 1, 9]])


def test_scene_is_read_only(room):
    with pytest.raises(ValueError):
        room.vertices[0, 0] = 1.0


def test_obj_parsing_fans_polygons_and_reports_lines():
    v, f = parse_obj("# c\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    assert f.tolist() == [[0, 1, 2], [0, 2, 3]]
    with pytest.raises(SceneFormatError, match="line 2"):
        parse_obj("v 0 0 0\nv 1 x 0\n")
    with pytest.raises(SceneFormatError, match="line 4"):
        parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 7\n")


def test_obj_round_trip(tmp_path, room):
    path = tmp_path / "room.obj"
    room.to_obj(path)
    again = SceneModel.from_obj(path)
    assert np.array_equal(again.vertices, room.vertices)
    assert np.array_equal(again.triangles, room.triangles)


def test_bvh_matches_exhaustive_on_1000_rays(room):
    rng = np.random.default_rng(5)
    o = rng.uniform([-1, 0.5, -1], [1, 2.5, 1], size=(1000, 3))
    d = rng.normal(size=(1000, 3))
    t1, k1 = room.cast(o, d)
    t2, k2 = room.cast_exhaustive(o, d)
    both = np.isfinite(t1) & np.isfinite(t2)
    assert np.array_equal(np.isfinite(t1), np.isfinite(t2))
    assert np.all(np.abs(t1[both] - t2[both]) * np.linalg.norm(d[both], axis=1) < 1e-9)


@given(yaw=angles, pitch=st.floats(-60, 60), x=st.floats(-1, 1), z=st.floats(-1, 1),
       u=small, v=small)
def test_round_trip_project_inverse(room, yaw, pitch, x, z, u, v):
    R = rotation_about([0, 1, 0], yaw) @ rotation_about([1, 0, 0], pitch)
    cam = HeadPose(R, [x, 1.6, z])
    hit = inverse_project(cam, [u, v, 1], room)
    assert hit is not None  # inside a closed room every ray hits
    assert np.all(np.abs(project(cam, hit) - [u, v, 1]) < 1e-9)


@given(yaw=angles, ax=st.floats(-1, 1), ay=st.floats(-1, 1), az=st.floats(-1, 1),
       angle=angles, tx=st.floats(-10, 10), ty=st.floats(-10, 10), tz=st.floats(-10, 10),
       px=st.floats(-3, 3), py=st.floats(-3, 3), pz=st.floats(0.5, 5))
def test_rigid_invariance(yaw, ax, ay, az, angle, tx, ty, tz, px, py, pz):
    axis = np.array([ax, ay, az])
    if np.linalg.norm(axis) < 1e-3:
        axis = np.array([0.0, 0.0, 1.0])
    cam = HeadPose(rotation_about([0, 1, 0], yaw), [0.3, 1.0, -0.2])
    point = cam.translation + cam.rotation @ np.array([px, py, pz])
    Q, t = rotation_about(axis, angle), np.array([tx, ty, tz])
    moved = HeadPose(Q @ cam.rotation, Q @ cam.translation + t)
    assert np.all(np.abs(project(cam, point) - project(moved, Q @ point + t)) < 1e-9)


@given(yaw=angles, pitch=st.floats(-80, 80), roll=angles)
def test_rotations_are_orthonormal(yaw, pitch, roll):
    R = rotation_about([0, 1, 0], yaw) @ rotation_about([1, 0, 0], pitch) @ rotation_about([0, 0, 1], roll)
    assert HeadPose(R, [0, 0, 0]).is_orthonormal()


def test_look_at_frame():
    R = look_at([0, 1.6, 0], [0, 1.6, 3])
    assert HeadPose(R, [0, 0, 0]).is_orthonormal()
    assert np.allclose(R[:, 2], [0, 0, 1])
    assert np.allclose(R[:, 1], [0, -1, 0])  # camera +y is world down
    with pytest.raises(ValueError):
        look_at([0, 0, 0], [0, 5, 0])


def test_box_mesh_is_closed():
    v, f = box_mesh((0, 0, 0), (1, 1, 1))
    scene = SceneModel(v, f)
    t, k = scene.cast(np.full((50, 3), 0.5), np.random.default_rng(0).normal(size=(50, 3)))
    assert np.all(k >= 0)
    assert np.all(np.isfinite(t))
