"""Pinhole projection, rigid transforms and novel-view camera trajectories."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import CameraIntrinsics, CameraPose, ColorGrid, DepthMap, PointCloudSequence, TrackSet


class DomainError(ValueError):
    """Back-projection requested at a non-positive depth."""


class BehindCameraError(ValueError):
    """Projection requested for a point with z <= 0."""


class DegenerateSpecError(ValueError):
    """Trajectory spec that cannot produce the requested motion."""


def backproject(u, v, d, k: CameraIntrinsics) -> np.ndarray:
    """Lift pixel coordinates at depth ``d`` to camera space.

    Inputs broadcast against each other; the result has a trailing axis of 3.
    """
    u, v, d = np.broadcast_arrays(
        np.asarray(u, np.float64), np.asarray(v, np.float64), np.asarray(d, np.float64)
    )
    if not np.all(d > 0):
        raise DomainError("back-projection needs strictly positive depth")
    x = (u - k.cx) * d / k.fx
    y = (v - k.cy) * d / k.fy
    return np.stack([x, y, d], axis=-1)


def project(p, k: CameraIntrinsics) -> np.ndarray:
    """Project camera-space points (..., 3) to (..., 3) arrays of (u, v, depth)."""
    p = np.asarray(p, np.float64)
    z = p[..., 2]
    if not np.all(z > 0):
        raise BehindCameraError("cannot project points with z <= 0")
    u = k.fx * p[..., 0] / z + k.cx
    v = k.fy * p[..., 1] / z + k.cy
    return np.stack([u, v, z], axis=-1)


def transform(p, pose: CameraPose) -> np.ndarray:
    """Map world points (..., 3) into the camera frame of ``pose``."""
    return np.asarray(p, np.float64) @ pose.rotation.T + pose.translation


def yaw_matrix(angle_rad: float) -> np.ndarray:
    """Rotation about the vertical (y) axis; positive angles carry +x toward -z."""
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class TrajectorySpec:
    """Description of a camera path.

    ``kind`` is ``"orbit"``, ``"linear"`` or ``"identity"``. Orbits turn the
    camera rig by ``angle_deg`` around the vertical axis through ``center``;
    with ``leftward`` (the default) a positive angle moves the camera to the
    scene's left. Linear paths slide the camera by ``distance`` meters along
    the unit vector ``direction``. ``center`` and ``distance`` may be left as
    ``None`` and are then derived from the frame-0 depth map.
    """

    kind: str
    frames: int
    angle_deg: float = 0.0
    center: Optional[tuple] = None
    leftward: bool = True
    direction: Optional[tuple] = None
    distance: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("orbit", "linear", "identity"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if int(self.frames) != self.frames or self.frames < 1:
            raise ValueError(f"frames must be a positive integer, got {self.frames}")
        if not np.isfinite(self.angle_deg):
            raise ValueError("orbit angle must be finite")
        if self.center is not None:
            c = tuple(float(x) for x in self.center)
            if len(c) != 3 or not all(np.isfinite(c)):
                raise ValueError(f"center must be a finite 3-vector, got {self.center}")
            object.__setattr__(self, "center", c)
        if self.kind == "linear":
            if self.direction is None:
                raise ValueError("linear trajectory needs a direction")
            d = tuple(float(x) for x in self.direction)
            if len(d) != 3 or abs(np.linalg.norm(d) - 1.0) > 1e-9:
                raise ValueError(f"direction must be a unit 3-vector, got {self.direction}")
            object.__setattr__(self, "direction", d)
            if self.distance is not None and not np.isfinite(self.distance):
                raise ValueError("distance must be finite")

    @classmethod
    def orbit(cls, angle_deg: float, frames: int, center=None, leftward: bool = True):
        return cls("orbit", frames, angle_deg=angle_deg, center=center, leftward=leftward)

    @classmethod
    def linear(cls, direction, frames: int, distance: Optional[float] = None):
        return cls("linear", frames, direction=direction, distance=distance)

    @classmethod
    def identity(cls, frames: int):
        return cls("identity", frames)

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectorySpec":
        d = dict(d)
        kind = d.pop("kind")
        frames = d.pop("frames")
        allowed = {
            "orbit": {"angle_deg", "center", "leftward"},
            "linear": {"direction", "distance"},
            "identity": set(),
        }.get(kind)
        if allowed is None:
            raise ValueError(f"unknown trajectory kind {kind!r}")
        extra = set(d) - allowed
        if extra:
            raise ValueError(f"unexpected keys for {kind} trajectory: {sorted(extra)}")
        return cls(kind, frames, **d)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "frames": self.frames}
        if self.kind == "orbit":
            out["angle_deg"] = self.angle_deg
            out["leftward"] = self.leftward
            if self.center is not None:
                out["center"] = list(self.center)
        elif self.kind == "linear":
            out["direction"] = list(self.direction)
            if self.distance is not None:
                out["distance"] = self.distance
        return out

    @classmethod
    def from_json(cls, text: str) -> "TrajectorySpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class CameraTrajectory:
    poses: tuple

    def __post_init__(self):
        poses = tuple(self.poses)
        if not poses:
            raise ValueError("a trajectory needs at least one pose")
        if not all(isinstance(p, CameraPose) for p in poses):
            raise TypeError("trajectory entries must be CameraPose instances")
        object.__setattr__(self, "poses", poses)

    @property
    def frame_count(self) -> int:
        return len(self.poses)

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i) -> CameraPose:
        return self.poses[i]


def scene_centroid(depth: DepthMap, k: CameraIntrinsics) -> np.ndarray:
    """Mean camera-space position of every valid pixel in ``depth``."""
    valid = depth.valid()
    if not valid.any():
        raise ValueError("depth map has no valid pixels")
    rows, cols = np.nonzero(valid)
    return backproject(cols, rows, depth.depth[valid], k).mean(axis=0)


def default_linear_distance(depth: DepthMap, fraction: float = 0.1) -> float:
    """Default dolly distance: ``fraction`` of the median valid depth."""
    valid = depth.valid()
    if not valid.any():
        raise ValueError("depth map has no valid pixels")
    return fraction * float(np.median(depth.depth[valid]))


def make_trajectory(
    spec: TrajectorySpec, k: CameraIntrinsics, depth: Optional[DepthMap] = None
) -> CameraTrajectory:
    """Expand ``spec`` into one pose per frame, starting at the source camera.

    ``depth`` (the frame-0 depth map) is only needed when the spec leaves the
    orbit center or the linear distance unset.
    """
    n = spec.frames
    steps = np.arange(n) / (n - 1) if n > 1 else np.zeros(1)

    if spec.kind == "identity":
        return CameraTrajectory([CameraPose.identity() for _ in range(n)])

    if spec.kind == "orbit":
        if n == 1 and spec.angle_deg != 0:
            raise DegenerateSpecError("a one-frame orbit cannot sweep a nonzero angle")
        if spec.center is not None:
            center = np.asarray(spec.center, np.float64)
        elif depth is not None:
            center = scene_centroid(depth, k)
        else:
            raise ValueError("orbit without center needs a depth map for the centroid default")
        sign = 1.0 if spec.leftward else -1.0
        poses = []
        for s in steps:
            r = yaw_matrix(sign * np.deg2rad(spec.angle_deg) * s)
            # rigid turn of the whole rig about the vertical axis through the center
            cam_center = center - r @ center
            poses.append(CameraPose.from_camera_to_world(r, cam_center))
        poses[0] = CameraPose.identity()
        return CameraTrajectory(poses)

    distance = spec.distance
    if distance is None:
        if depth is None:
            raise ValueError("linear trajectory without distance needs a depth map for the default")
        distance = default_linear_distance(depth)
    if n == 1 and distance != 0:
        raise DegenerateSpecError("a one-frame linear path cannot cover a nonzero distance")
    direction = np.asarray(spec.direction, np.float64)
    poses = [CameraPose.from_camera_to_world(np.eye(3), distance * s * direction) for s in steps]
    poses[0] = CameraPose.identity()
    return CameraTrajectory(poses)


def tracks_to_pointclouds(
    tracks: TrackSet, colors: ColorGrid, k: CameraIntrinsics
) -> PointCloudSequence:
    """Back-project every track sample to camera space.

    Points with an invalid depth are kept at the origin and marked invisible,
    as are occluded samples.
    """
    if colors.shape != (tracks.height, tracks.width):
        raise ValueError(f"colors are {colors.shape}, tracks are {(tracks.height, tracks.width)}")
    valid = tracks.depth_valid & np.isfinite(tracks.u) & np.isfinite(tracks.v)
    positions = np.zeros(tracks.shape + (3,))
    positions[valid] = backproject(tracks.u[valid], tracks.v[valid], tracks.depth[valid], k)
    t, h, w = tracks.shape
    return PointCloudSequence(
        positions.reshape(t, h * w, 3),
        colors.rgb.reshape(h * w, 3),
        (valid & ~tracks.occluded).reshape(t, h * w),
        grid=(h, w),
    )


def rotation_angle_deg(a: Sequence[float], b: Sequence[float]) -> float:
    """Angle between two direction vectors in degrees."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    cos = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    sin = np.linalg.norm(np.cross(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.degrees(np.arctan2(sin, cos)))
