import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import intrinsics_for, random_tracks
from trackscene.core import CameraIntrinsics, CameraPose, ColorGrid, DepthMap, TrackSet
from trackscene.geometry import (
    BehindCameraError,
    DegenerateSpecError,
    DomainError,
    TrajectorySpec,
    backproject,
    make_trajectory,
    project,
    rotation_angle_deg,
    scene_centroid,
    tracks_to_pointclouds,
    transform,
    yaw_matrix,
)

K = CameraIntrinsics(500, 500, 256, 184, 512, 368)


class TestPinhole:
    def test_principal_ray(self):
        np.testing.assert_array_equal(backproject(K.cx, K.cy, 1.0, K), [0.0, 0.0, 1.0])

    def test_backproject_hand_value(self):
        # (381 - 256) * 2 / 500 = 0.5
        np.testing.assert_allclose(backproject(381, 184, 2, K), [0.5, 0.0, 2.0], rtol=0, atol=1e-15)

    def test_project_optical_axis(self):
        np.testing.assert_array_equal(project([0, 0, 2], K), [256, 184, 2])

    def test_project_hand_value(self):
        # 500 * 0.5 / 2 + 256 = 381
        assert project([0.5, 0, 2], K)[0] == pytest.approx(381.0, abs=1e-12)

    def test_errors(self):
        with pytest.raises(DomainError):
            backproject(1, 1, 0.0, K)
        with pytest.raises(DomainError):
            backproject([1, 2], [1, 2], [1.0, -1.0], K)
        with pytest.raises(BehindCameraError):
            project([0, 0, 0], K)
        with pytest.raises(BehindCameraError):
            project([[0, 0, 1], [0, 0, -1]], K)

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(0, 511.999), st.floats(0, 367.999), st.floats(0.1, 100),
    )
    def test_inverse_pair(self, u, v, d):
        np.testing.assert_allclose(project(backproject(u, v, d, K), K), [u, v, d], rtol=0, atol=1e-5 * max(1, d))
        uvd = project(backproject(u, v, d, K), K)
        assert abs(uvd[0] - u) < 1e-5 and abs(uvd[1] - v) < 1e-5

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 50), st.floats(0.01, 100))
    def test_scale_homogeneity(self, x, y, z, s):
        a = project([x, y, z], K)
        b = project([s * x, s * y, s * z], K)
        np.testing.assert_allclose(b[:2], a[:2], rtol=1e-12, atol=1e-9)
        assert b[2] == pytest.approx(s * z)


class TestTransform:
    def test_identity(self):
        p = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(transform(p, CameraPose.identity()), p)

    def test_translation(self):
        t = np.array([0.1, 0.2, 0.3])
        np.testing.assert_array_equal(transform(np.zeros(3), CameraPose(np.eye(3), t)), t)

    def test_yaw_90(self):
        pose = CameraPose(yaw_matrix(np.pi / 2), np.zeros(3))
        np.testing.assert_allclose(transform([1.0, 0.0, 0.0], pose), [0.0, 0.0, -1.0], atol=1e-15)


class TestTrajectory:
    def test_identity(self):
        traj = make_trajectory(TrajectorySpec.identity(5), K)
        assert traj.frame_count == 5
        assert all(p == CameraPose.identity() for p in traj.poses)

    def test_linear_up(self):
        traj = make_trajectory(TrajectorySpec.linear((0, -1, 0), 3, distance=1.0), K)
        heights = [-p.center[1] for p in traj.poses]
        np.testing.assert_allclose(heights, [0.0, 0.5, 1.0], atol=1e-15)
        assert all(np.array_equal(p.rotation, np.eye(3)) for p in traj.poses)

    @pytest.mark.parametrize("frames", [2, 3, 49])
    def test_orbit_90(self, frames):
        center = (0.0, 0.0, 3.0)
        traj = make_trajectory(TrajectorySpec.orbit(90, frames, center=center), K)
        assert traj[0] == CameraPose.identity()
        angle = rotation_angle_deg(traj[0].optical_axis, traj[-1].optical_axis)
        assert abs(angle - 90.0) <= 1e-6
        c = np.asarray(center)
        r0 = np.linalg.norm(traj[0].center - c)
        for i, pose in enumerate(traj.poses):
            assert abs(np.linalg.norm(pose.center - c) - r0) <= 1e-9 * r0
            np.testing.assert_allclose(pose.rotation.T @ pose.rotation, np.eye(3), atol=1e-9)
            # aimed at the center: the center stays on the optical axis
            cam = transform(c, pose)
            assert abs(cam[0]) < 1e-9 and abs(cam[1]) < 1e-9 and cam[2] > 0
            expected = 90.0 * i / (frames - 1)
            assert rotation_angle_deg(traj[0].optical_axis, pose.optical_axis) == pytest.approx(expected, abs=1e-6)

    def test_orbit_leftward_convention(self):
        traj = make_trajectory(TrajectorySpec.orbit(30, 2, center=(0, 0, 2)), K)
        assert traj[-1].center[0] < 0  # camera moved to the scene's left
        right = make_trajectory(TrajectorySpec.orbit(30, 2, center=(0, 0, 2), leftward=False), K)
        assert right[-1].center[0] > 0

    def test_orbit_default_center_is_centroid(self):
        depth = DepthMap(np.full((368, 512), 2.0))
        traj = make_trajectory(TrajectorySpec.orbit(45, 3), K, depth)
        c = scene_centroid(depth, K)
        d = [np.linalg.norm(p.center - c) for p in traj.poses]
        np.testing.assert_allclose(d, d[0], rtol=1e-12)

    def test_linear_default_distance(self):
        depth = DepthMap(np.full((4, 4), 5.0))
        k = intrinsics_for(4, 4)
        traj = make_trajectory(TrajectorySpec.linear((0, 0, 1), 2), k, depth)
        assert traj[-1].center[2] == pytest.approx(0.5)

    def test_degenerate(self):
        with pytest.raises(DegenerateSpecError):
            make_trajectory(TrajectorySpec.orbit(90, 1, center=(0, 0, 1)), K)
        with pytest.raises(DegenerateSpecError):
            make_trajectory(TrajectorySpec.linear((1, 0, 0), 1, distance=1.0), K)
        assert make_trajectory(TrajectorySpec.orbit(0, 1, center=(0, 0, 1)), K).frame_count == 1

    @pytest.mark.parametrize(
        "kw", [dict(kind="linear", frames=3, direction=(1, 1, 0), distance=1), dict(kind="orbit", frames=0), dict(kind="spiral", frames=2)]
    )
    def test_invalid_specs(self, kw):
        with pytest.raises(ValueError):
            TrajectorySpec(**kw)

    def test_json(self):
        text = '{"kind":"orbit","angle_deg":90,"frames":49,"center":[0,0,2]}'
        spec = TrajectorySpec.from_json(text)
        assert spec == TrajectorySpec.orbit(90, 49, center=(0, 0, 2))
        assert TrajectorySpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec
        assert TrajectorySpec.from_json('{"kind":"orbit","angle_deg":90,"frames":49}').center is None
        with pytest.raises(ValueError):
            TrajectorySpec.from_dict({"kind": "identity", "frames": 2, "angle_deg": 3})


class TestTracksToPointClouds:
    def test_unit_depth_surface(self):
        k = intrinsics_for(3, 4)
        tracks = TrackSet.static(np.ones((3, 4)))
        pcs = tracks_to_pointclouds(tracks, ColorGrid.uniform(3, 4), k)
        assert pcs.num_points == 12 and pcs.grid == (3, 4)
        np.testing.assert_array_equal(pcs.positions[0, :, 2], 1.0)
        rows, cols = np.mgrid[0:3, 0:4]
        np.testing.assert_allclose(pcs.positions[0, :, 0], ((cols - k.cx) / k.fx).ravel())
        assert pcs.visibility.all()

    def test_occluded_and_invalid(self, rng):
        tracks = random_tracks(rng, 3, 5, 6, occlusion=0.3, invalid=0.1)
        pcs = tracks_to_pointclouds(tracks, ColorGrid.uniform(5, 6), intrinsics_for(5, 6))
        expected = (~tracks.occluded & tracks.depth_valid).reshape(3, -1)
        assert np.array_equal(pcs.visibility, expected)
        assert np.all(np.isfinite(pcs.positions))

    def test_reprojection(self, rng):
        tracks = random_tracks(rng, 5, 9, 11, occlusion=0.2, invalid=0.05)
        k = intrinsics_for(9, 11)
        pcs = tracks_to_pointclouds(tracks, ColorGrid(rng.random((9, 11, 3))), k)
        vis = pcs.visibility
        uvd = project(pcs.positions[vis], k)
        flat = lambda a: a.reshape(5, -1)[vis]
        np.testing.assert_allclose(uvd[:, 0], flat(tracks.u), atol=1e-5)
        np.testing.assert_allclose(uvd[:, 1], flat(tracks.v), atol=1e-5)
        np.testing.assert_allclose(uvd[:, 2], flat(tracks.depth), rtol=1e-12)

    def test_colors_from_frame0(self, rng):
        colors = ColorGrid(rng.random((2, 3, 3)))
        pcs = tracks_to_pointclouds(TrackSet.static(np.ones((2, 3)), 2), colors, intrinsics_for(2, 3))
        np.testing.assert_array_equal(pcs.colors, colors.rgb.reshape(-1, 3))
