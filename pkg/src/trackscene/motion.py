"""Relative motion, depth-guided normalization and the 16-bit motion-map codec.

Motion is expressed relative to frame 0 and divided by the size of the
viewing frustum at each point's initial depth::

    dx_n = alpha_x * dx / z,   dy_n = alpha_y * dy / z,   dz_n = dz / z

with ``alpha_x = f_x / W`` and ``alpha_y = f_y / H``. Scaling a scene
uniformly scales both the displacement and ``z``, so the normalized motion
does not change.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from os import PathLike
from typing import Union

import numpy as np

from .core import (
    BadMagicError,
    CameraIntrinsics,
    DepthMap,
    DimensionMismatchError,
    PointCloudSequence,
    TruncatedPayloadError,
    _frozen,
)

M4D_MAGIC = b"M4D1"
DEFAULT_RANGE = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
MIN_DEPTH = 1e-4
CODE_MAX = 65535

_M4D_HEADER = struct.Struct("<4sIII6f")


def _check_motion_arrays(delta, valid):
    delta = np.asarray(delta, np.float64)
    if delta.ndim != 4 or delta.shape[3] != 3 or delta.shape[0] < 1:
        raise ValueError(f"motion must have shape (T, H, W, 3), got {delta.shape}")
    if not np.all(np.isfinite(delta)):
        raise ValueError("motion entries must be finite")
    if np.any(delta[0] != 0):
        raise ValueError("motion at frame 0 must be exactly zero")
    if valid is None:
        valid = np.ones(delta.shape[1:3], bool)
    valid = np.asarray(valid, bool)
    if valid.shape != delta.shape[1:3]:
        raise ValueError(f"validity mask has shape {valid.shape}, expected {delta.shape[1:3]}")
    return _frozen(delta), _frozen(valid)


@dataclass(frozen=True, eq=False)
class MotionTensor:
    """Displacements (T, H, W, 3) in meters relative to frame 0, plus a per-track validity mask."""

    delta: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        delta, valid = _check_motion_arrays(self.delta, self.valid)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self):
        return self.delta.shape[:3]


@dataclass(frozen=True, eq=False)
class NormalizedMotion:
    """Unitless frustum-normalized displacements (T, H, W, 3) plus validity."""

    ndelta: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        ndelta, valid = _check_motion_arrays(self.ndelta, self.valid)
        object.__setattr__(self, "ndelta", ndelta)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self):
        return self.ndelta.shape[:3]

    def crosses_camera_plane(self) -> np.ndarray:
        """Tracks whose normalized depth change reaches -1, i.e. z would hit 0."""
        return np.any(self.ndelta[..., 2] <= -1.0, axis=0) & self.valid


def relative_motion(pcs: PointCloudSequence) -> MotionTensor:
    """Per-point displacement from frame 0. Tracks invisible at frame 0 are flagged invalid."""
    if pcs.grid is None:
        raise ValueError("relative motion needs a point cloud anchored to a pixel grid")
    h, w = pcs.grid
    delta = pcs.positions - pcs.positions[:1]
    delta[0] = 0.0
    return MotionTensor(delta.reshape(pcs.frames, h, w, 3), pcs.visibility[0].reshape(h, w))


def _frustum_scale(z0: DepthMap, k: CameraIntrinsics, min_depth: float):
    """Per-pixel divisors (H, W, 3) and the mask of usable depths."""
    ok = z0.valid(min_depth)
    z = np.where(ok, z0.depth, 1.0)
    scale = np.stack([z / k.alpha_x, z / k.alpha_y, z], axis=-1)
    return scale, ok


def _check_grid(shape, z0, k):
    if z0.shape != tuple(shape[1:3]):
        raise ValueError(f"depth map is {z0.shape}, motion grid is {tuple(shape[1:3])}")
    if (k.height, k.width) != tuple(shape[1:3]):
        raise ValueError("intrinsics image size does not match the motion grid")


def normalize(m: MotionTensor, z0: DepthMap, k: CameraIntrinsics, min_depth: float = MIN_DEPTH) -> NormalizedMotion:
    """Divide each displacement by the frustum size at the point's frame-0 depth.

    Moving pixels whose frame-0 depth is missing or below ``min_depth`` cannot
    be normalized; they are zeroed and flagged invalid.
    """
    _check_grid(m.delta.shape, z0, k)
    scale, ok = _frustum_scale(z0, k, min_depth)
    moving = np.any(m.delta != 0, axis=(0, 3))
    valid = m.valid & (ok | ~moving)
    nd = np.where(valid[None, :, :, None], m.delta / scale[None], 0.0)
    return NormalizedMotion(nd, valid)


def denormalize(nm: NormalizedMotion, z0: DepthMap, k: CameraIntrinsics, min_depth: float = MIN_DEPTH) -> MotionTensor:
    """Inverse of :func:`normalize`."""
    _check_grid(nm.ndelta.shape, z0, k)
    scale, ok = _frustum_scale(z0, k, min_depth)
    moving = np.any(nm.ndelta != 0, axis=(0, 3))
    valid = nm.valid & (ok | ~moving)
    d = np.where(valid[None, :, :, None], nm.ndelta * scale[None], 0.0)
    return MotionTensor(d, valid)


def compose_scene(p0: PointCloudSequence, m: MotionTensor) -> PointCloudSequence:
    """Add the displacements to the frame-0 points to obtain a T-frame scene.

    Only frame 0 of ``p0`` is used. Visibility of every frame is the frame-0
    visibility restricted to valid tracks.
    """
    t, h, w = m.shape
    if p0.grid != (h, w):
        raise ValueError(f"point grid {p0.grid} does not match motion grid {(h, w)}")
    base = p0.positions[0]
    positions = base[None] + m.delta.reshape(t, h * w, 3)
    positions[0] = base
    vis = p0.visibility[0] & m.valid.reshape(-1)
    return PointCloudSequence(positions, p0.colors, np.broadcast_to(vis, (t, h * w)), grid=(h, w))


@dataclass(frozen=True, eq=False)
class MotionMap:
    """Quantized normalized motion: uint16 codes (T, H, W, 3) and per-channel ranges."""

    codes: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.dtype != np.uint16 or codes.ndim != 4 or codes.shape[3] != 3:
            raise ValueError("codes must be a uint16 array of shape (T, H, W, 3)")
        lo, hi = _check_range(self.lo, self.hi)
        valid = np.asarray(self.valid, bool)
        if valid.shape != codes.shape[1:3]:
            raise ValueError(f"validity mask has shape {valid.shape}, expected {codes.shape[1:3]}")
        object.__setattr__(self, "codes", _frozen(codes))
        object.__setattr__(self, "lo", _frozen(lo))
        object.__setattr__(self, "hi", _frozen(hi))
        object.__setattr__(self, "valid", _frozen(valid))

    @property
    def step(self) -> np.ndarray:
        """Width of one quantization step per channel."""
        return (self.hi - self.lo) / CODE_MAX

    def __eq__(self, other):
        if not isinstance(other, MotionMap):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in ("codes", "lo", "hi", "valid")
        )


def _check_range(lo, hi):
    # bounds live in the file as float32, so pin them to float32 values up front
    lo = np.broadcast_to(np.asarray(lo, np.float32), (3,)).astype(np.float64)
    hi = np.broadcast_to(np.asarray(hi, np.float32), (3,)).astype(np.float64)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("codec range must be finite")
    if np.any(hi <= lo):
        raise ValueError(f"degenerate codec range lo={lo.tolist()} hi={hi.tolist()}")
    return lo, hi


def encode_values(x, lo, hi) -> np.ndarray:
    """Affine 16-bit quantization of ``x`` (..., 3); out-of-range values clamp."""
    lo, hi = _check_range(lo, hi)
    x = np.asarray(x, np.float64)
    unit = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    return np.rint(CODE_MAX * unit).astype(np.uint16)


def decode_values(codes, lo, hi) -> np.ndarray:
    lo, hi = _check_range(lo, hi)
    return lo + (np.asarray(codes, np.float64) / CODE_MAX) * (hi - lo)


def encode_motion_map(nm: NormalizedMotion, lo=DEFAULT_RANGE[0], hi=DEFAULT_RANGE[1]) -> MotionMap:
    lo, hi = _check_range(lo, hi)
    return MotionMap(encode_values(nm.ndelta, lo, hi), lo, hi, nm.valid)


def decode_motion_map(mm: MotionMap) -> NormalizedMotion:
    x = decode_values(mm.codes, mm.lo, mm.hi)
    # frame 0 is zero by definition; its codes only approximate zero
    x[0] = 0.0
    x[:, ~mm.valid] = 0.0
    return NormalizedMotion(x, mm.valid)


def save_motion_map(mm: MotionMap, path: Union[str, PathLike]) -> None:
    t, h, w, _ = mm.codes.shape
    bounds = [v for pair in zip(mm.lo, mm.hi) for v in pair]
    with open(path, "wb") as f:
        f.write(_M4D_HEADER.pack(M4D_MAGIC, t, h, w, *bounds))
        f.write(mm.codes.astype("<u2").tobytes())
        f.write(mm.valid.astype(np.uint8).tobytes())


def load_motion_map(path: Union[str, PathLike]) -> MotionMap:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != M4D_MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < _M4D_HEADER.size:
        raise TruncatedPayloadError(f"{path}: header is {len(data)} bytes, need {_M4D_HEADER.size}")
    _, t, h, w, *bounds = _M4D_HEADER.unpack_from(data)
    if t < 1 or h < 1 or w < 1:
        raise DimensionMismatchError(f"{path}: header declares empty grid T={t} H={h} W={w}")
    n_codes = t * h * w * 3
    expected = _M4D_HEADER.size + 2 * n_codes + h * w
    if len(data) < expected:
        raise TruncatedPayloadError(f"{path}: payload is {len(data) - _M4D_HEADER.size} bytes, need {expected - _M4D_HEADER.size}")
    if len(data) > expected:
        raise DimensionMismatchError(f"{path}: {len(data) - expected} trailing bytes")
    codes = np.frombuffer(data, "<u2", n_codes, _M4D_HEADER.size).reshape(t, h, w, 3)
    valid = np.frombuffer(data, np.uint8, h * w, _M4D_HEADER.size + 2 * n_codes).reshape(h, w)
    return MotionMap(codes.astype(np.uint16), bounds[0::2], bounds[1::2], valid.astype(bool))
