"""Domain types shared by every stage, plus the T4D track container.

Conventions used throughout the package:

* camera space is right-handed with x right, y down and z forward, so it
  lines up with pixel coordinates (u right, v down);
* positions, translations and depths are in meters, image-plane quantities
  in pixels;
* an invalid depth is stored as ``DEPTH_SENTINEL`` with the occlusion flag
  set. In memory it is exposed through ``TrackSet.depth_valid`` and
  ``TrackSet.depth_at`` (which returns ``None``).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from os import PathLike
from typing import Optional, Union

import numpy as np

DEPTH_SENTINEL = -1.0
T4D_MAGIC = b"T4D1"
T4D_VERSION = 1

_FLAG_COLORS = 0x01
_FLAG_INTRINSICS = 0x02

_HEADER = struct.Struct("<4sIIIIB4f")
_RECORD = np.dtype([("u", "<f4"), ("v", "<f4"), ("d", "<f4"), ("o", "u1")])

PathType = Union[str, PathLike]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


class T4DError(ValueError):
    """Base class for container errors. ``code`` is stable and machine readable."""

    code = "t4d_error"


class BadMagicError(T4DError):
    code = "bad_magic"


class UnsupportedVersionError(T4DError):
    code = "unsupported_version"


class TruncatedPayloadError(T4DError):
    code = "truncated_payload"


class DimensionMismatchError(T4DError):
    code = "dimension_mismatch"


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels for a ``width`` x ``height`` image.

    Focal lengths and principal point are rounded to float32 on construction,
    the precision they are stored with on disk.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(np.float32(getattr(self, name))))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def alpha_x(self) -> float:
        """Horizontal frustum scale f_x / W."""
        return self.fx / self.width

    @property
    def alpha_y(self) -> float:
        return self.fy / self.height

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def resized(self, width: int, height: int) -> "CameraIntrinsics":
        """Intrinsics for the same camera sampled at a different resolution."""
        sx = width / self.width
        sy = height / self.height
        return CameraIntrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)


@dataclass(frozen=True, eq=False)
class CameraPose:
    """World-to-camera rigid transform: ``p_cam = rotation @ p_world + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"pose needs a 3x3 rotation and 3-vector, got {r.shape} and {t.shape}")
        if not np.allclose(r.T @ r, np.eye(3), rtol=0, atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_camera_to_world(cls, rotation, center) -> "CameraPose":
        """Build from the camera orientation and position expressed in the world frame."""
        r = np.asarray(rotation, dtype=np.float64).T
        return cls(r, -r @ np.asarray(center, dtype=np.float64))

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        """Unit viewing direction in world coordinates."""
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )


@dataclass(frozen=True, eq=False)
class TrackSet:
    """Dense per-pixel tracks anchored to the first frame.

    ``u``, ``v`` and ``depth`` are float32 arrays of shape (T, H, W) and
    ``occluded`` a bool array of the same shape. Sample (t, row, col) is the
    position in frame t of the point seen at pixel (col, row) in frame 0.
    The constructor does not enforce the anchoring or depth invariants; use
    :func:`validate` for that so malformed data can still be inspected.
    """

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    occluded: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float32)
        if u.ndim != 3 or u.shape[0] < 1:
            raise ValueError(f"track arrays must have shape (T, H, W) with T >= 1, got {u.shape}")
        arrays = {
            "u": u,
            "v": np.asarray(self.v, dtype=np.float32),
            "depth": np.asarray(self.depth, dtype=np.float32),
            "occluded": np.asarray(self.occluded, dtype=bool),
        }
        for name, a in arrays.items():
            if a.shape != u.shape:
                raise ValueError(f"{name} has shape {a.shape}, expected {u.shape}")
            object.__setattr__(self, name, _frozen(a))

    @classmethod
    def from_raw(cls, u, v, depth, occluded) -> "TrackSet":
        """Build a track set, folding non-finite or non-positive depths into the sentinel."""
        depth = np.array(depth, dtype=np.float32)
        occluded = np.array(occluded, dtype=bool)
        bad = ~(np.isfinite(depth) & (depth > 0))
        depth[bad] = DEPTH_SENTINEL
        occluded[bad] = True
        return cls(u, v, depth, occluded)

    @classmethod
    def static(cls, depth: np.ndarray, frames: int = 1) -> "TrackSet":
        """Tracks of a motionless scene whose frame-0 depth map is ``depth`` (H, W)."""
        depth = np.asarray(depth, dtype=np.float32)
        h, w = depth.shape
        rows, cols = np.mgrid[0:h, 0:w].astype(np.float32)
        tile = lambda a: np.broadcast_to(a, (frames, h, w))
        return cls.from_raw(tile(cols), tile(rows), tile(depth), np.zeros((frames, h, w), bool))

    @property
    def shape(self) -> tuple:
        return self.u.shape

    @property
    def frames(self) -> int:
        return self.u.shape[0]

    @property
    def height(self) -> int:
        return self.u.shape[1]

    @property
    def width(self) -> int:
        return self.u.shape[2]

    @property
    def is_sentinel(self) -> np.ndarray:
        return (self.depth == DEPTH_SENTINEL) & self.occluded

    @property
    def depth_valid(self) -> np.ndarray:
        return np.isfinite(self.depth) & (self.depth > 0)

    def depth_at(self, t: int, row: int, col: int) -> Optional[float]:
        if not self.depth_valid[t, row, col]:
            return None
        return float(self.depth[t, row, col])

    def frame0_depth(self) -> "DepthMap":
        return DepthMap(np.where(self.depth_valid[0], self.depth[0], np.nan))

    def __eq__(self, other):
        if not isinstance(other, TrackSet):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, n), getattr(other, n), equal_nan=n != "occluded")
            for n in ("u", "v", "depth", "occluded")
        )


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel depth (H, W); invalid entries are NaN."""

    depth: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"depth map must be 2-D, got shape {d.shape}")
        d = np.where(np.isfinite(d) & (d > 0), d, np.nan)
        object.__setattr__(self, "depth", _frozen(d))

    @property
    def shape(self) -> tuple:
        return self.depth.shape

    def valid(self, min_depth: float = 0.0) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.isfinite(self.depth) & (self.depth > min_depth)


@dataclass(frozen=True, eq=False)
class ColorGrid:
    """First-frame RGB (H, W, 3) with channels in [0, 1]."""

    rgb: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.rgb, dtype=np.float32)
        if c.ndim != 3 or c.shape[2] != 3:
            raise ValueError(f"colors must have shape (H, W, 3), got {c.shape}")
        if not np.all((c >= 0) & (c <= 1)):
            raise ValueError("color channels must lie in [0, 1]")
        object.__setattr__(self, "rgb", _frozen(c))

    @classmethod
    def uniform(cls, height: int, width: int, rgb=(0.5, 0.5, 0.5)) -> "ColorGrid":
        return cls(np.broadcast_to(np.asarray(rgb, np.float32), (height, width, 3)))

    @property
    def shape(self) -> tuple:
        return self.rgb.shape[:2]

    def __eq__(self, other):
        if not isinstance(other, ColorGrid):
            return NotImplemented
        return np.array_equal(self.rgb, other.rgb)


@dataclass(frozen=True, eq=False)
class PointCloudSequence:
    """T frames of N camera-space points with per-point color and per-frame visibility.

    ``grid`` records the (H, W) pixel grid when the points are anchored one per
    frame-0 pixel in row-major order.
    """

    positions: np.ndarray
    colors: np.ndarray
    visibility: np.ndarray
    grid: Optional[tuple] = None

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"positions must have shape (T, N, 3), got {p.shape}")
        t, n, _ = p.shape
        c = np.asarray(self.colors, dtype=np.float32)
        vis = np.asarray(self.visibility, dtype=bool)
        if c.shape != (n, 3):
            raise ValueError(f"colors must have shape ({n}, 3), got {c.shape}")
        if vis.shape != (t, n):
            raise ValueError(f"visibility must have shape ({t}, {n}), got {vis.shape}")
        if not np.all(np.isfinite(p[vis])):
            raise ValueError("visible points must have finite positions")
        if self.grid is not None:
            grid = tuple(int(g) for g in self.grid)
            if len(grid) != 2 or grid[0] * grid[1] != n:
                raise ValueError(f"grid {self.grid} does not hold {n} points")
            object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "positions", _frozen(p))
        object.__setattr__(self, "colors", _frozen(c))
        object.__setattr__(self, "visibility", _frozen(vis))

    @property
    def frames(self) -> int:
        return self.positions.shape[0]

    @property
    def num_points(self) -> int:
        return self.positions.shape[1]

    def frame(self, t: int) -> "PointCloudSequence":
        return PointCloudSequence(
            self.positions[t : t + 1], self.colors, self.visibility[t : t + 1], self.grid
        )

    def scaled(self, s: float) -> "PointCloudSequence":
        """Uniform scaling about the camera center."""
        return PointCloudSequence(self.positions * s, self.colors, self.visibility, self.grid)


@dataclass
class Violation:
    kind: str
    t: int
    row: int
    col: int
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def by_kind(self, kind: str) -> list:
        return [v for v in self.violations if v.kind == kind]

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [
                {"kind": v.kind, "t": v.t, "row": v.row, "col": v.col, "detail": v.detail}
                for v in self.violations
            ],
        }


def validate(tracks: TrackSet) -> ValidationReport:
    """Report every anchoring and depth-validity violation in ``tracks``.

    Never raises on bad data and never modifies the input.
    """
    report = ValidationReport()
    h, w = tracks.height, tracks.width
    rows, cols = np.mgrid[0:h, 0:w]

    bad_u = tracks.u[0] != cols
    bad_v = tracks.v[0] != rows
    for r, c in zip(*np.nonzero(bad_u | bad_v)):
        report.violations.append(
            Violation(
                "anchoring", 0, int(r), int(c),
                f"frame-0 sample at ({float(tracks.u[0, r, c])}, {float(tracks.v[0, r, c])})",
            )
        )

    for name in ("u", "v"):
        bad = ~np.isfinite(getattr(tracks, name))
        for t, r, c in zip(*np.nonzero(bad)):
            report.violations.append(Violation("non_finite_" + name, int(t), int(r), int(c)))

    bad_depth = ~tracks.depth_valid & ~tracks.is_sentinel
    for t, r, c in zip(*np.nonzero(bad_depth)):
        report.violations.append(
            Violation("depth_validity", int(t), int(r), int(c), f"raw depth {float(tracks.depth[t, r, c])}")
        )
    return report


def save_t4d(
    tracks: TrackSet,
    path: PathType,
    colors: Optional[ColorGrid] = None,
    intrinsics: Optional[CameraIntrinsics] = None,
) -> None:
    """Write ``tracks`` (plus optional colors and intrinsics) as a T4D file.

    Intrinsics are stored as float32; values that are not float32-exact are
    rounded on disk.
    """
    t, h, w = tracks.shape
    flags = 0
    k = (0.0, 0.0, 0.0, 0.0)
    if colors is not None:
        if colors.shape != (h, w):
            raise ValueError(f"colors are {colors.shape}, tracks are {(h, w)}")
        flags |= _FLAG_COLORS
    if intrinsics is not None:
        if (intrinsics.height, intrinsics.width) != (h, w):
            raise ValueError("intrinsics image size does not match the track grid")
        flags |= _FLAG_INTRINSICS
        k = (intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy)

    records = np.empty(t * h * w, dtype=_RECORD)
    records["u"] = tracks.u.ravel()
    records["v"] = tracks.v.ravel()
    records["d"] = tracks.depth.ravel()
    records["o"] = tracks.occluded.ravel()
    with open(path, "wb") as f:
        f.write(_HEADER.pack(T4D_MAGIC, T4D_VERSION, t, h, w, flags, *k))
        f.write(records.tobytes())
        if colors is not None:
            f.write(colors.rgb.astype("<f4").tobytes())


def load_t4d(path: PathType):
    """Read a T4D file.

    Returns ``(tracks, colors, intrinsics)``; the last two are ``None`` when
    the file does not carry them.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4 or data[:4] != T4D_MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: header is {len(data)} bytes, need {_HEADER.size}")
    _, version, t, h, w, flags, fx, fy, cx, cy = _HEADER.unpack_from(data)
    if version != T4D_VERSION:
        raise UnsupportedVersionError(f"{path}: version {version}")
    if t < 1 or h < 1 or w < 1:
        raise DimensionMismatchError(f"{path}: header declares empty grid T={t} H={h} W={w}")

    n_rec = t * h * w
    expected = _HEADER.size + n_rec * _RECORD.itemsize
    if flags & _FLAG_COLORS:
        expected += h * w * 12
    if len(data) < expected:
        have = (len(data) - _HEADER.size) // (h * w * _RECORD.itemsize)
        raise TruncatedPayloadError(
            f"{path}: header declares T={t} frames of {h}x{w}, payload holds {have} complete frame(s)"
        )
    if len(data) > expected:
        raise DimensionMismatchError(
            f"{path}: {len(data) - expected} trailing bytes beyond the declared T={t} H={h} W={w}"
        )

    records = np.frombuffer(data, dtype=_RECORD, count=n_rec, offset=_HEADER.size)
    shape = (t, h, w)
    tracks = TrackSet(
        records["u"].reshape(shape),
        records["v"].reshape(shape),
        records["d"].reshape(shape),
        records["o"].reshape(shape).astype(bool),
    )
    colors = None
    if flags & _FLAG_COLORS:
        off = _HEADER.size + n_rec * _RECORD.itemsize
        colors = ColorGrid(np.frombuffer(data, "<f4", h * w * 3, off).reshape(h, w, 3))
    intrinsics = None
    if flags & _FLAG_INTRINSICS:
        try:
            intrinsics = CameraIntrinsics(float(fx), float(fy), float(cx), float(cy), w, h)
        except ValueError as e:
            raise DimensionMismatchError(f"{path}: {e}") from None
    return tracks, colors, intrinsics
