"""Z-buffered point splatting along a camera trajectory, with void masks.

Every visible point is moved into the target camera, projected, and painted
over a small pixel disc. The nearest depth wins each pixel; on exactly equal
depths the lower point index wins. Pixels that receive no point keep the
background color and get mask value 0.5, covered pixels get 1.0.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from os import PathLike
from pathlib import Path
from typing import Optional, Union

import numba
import numpy as np

from .core import CameraIntrinsics, CameraPose, PointCloudSequence
from .geometry import CameraTrajectory

MASK_VOID = 0.5
MASK_COVERED = 1.0


@dataclass(frozen=True)
class RenderConfig:
    """Output size defaults to the intrinsics' image size when left as ``None``.

    ``render_occluded`` also splats points whose track is flagged occluded in
    that frame (they still need a valid depth).
    """

    width: Optional[int] = None
    height: Optional[int] = None
    splat_radius: float = 1.0
    background: tuple = (0.0, 0.0, 0.0)
    z_near: float = 1e-3
    render_occluded: bool = False

    def __post_init__(self):
        for name in ("width", "height"):
            v = getattr(self, name)
            if v is not None and (int(v) != v or v < 1):
                raise ValueError(f"{name} must be a positive integer, got {v}")
        if not (self.splat_radius >= 0 and np.isfinite(self.splat_radius)):
            raise ValueError(f"splat_radius must be >= 0, got {self.splat_radius}")
        bg = tuple(float(c) for c in self.background)
        if len(bg) != 3 or not all(0.0 <= c <= 1.0 for c in bg):
            raise ValueError(f"background must be an RGB triple in [0, 1], got {self.background}")
        object.__setattr__(self, "background", bg)
        if not self.z_near > 0:
            raise ValueError(f"z_near must be positive, got {self.z_near}")

    def output_intrinsics(self, k: CameraIntrinsics) -> CameraIntrinsics:
        w = self.width or k.width
        h = self.height or k.height
        if (w, h) == (k.width, k.height):
            return k
        return k.resized(w, h)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FrameSequence:
    """Rendered RGB frames, float32 (T, H', W', 3) in [0, 1]."""

    rgb: np.ndarray

    @property
    def frames(self) -> int:
        return self.rgb.shape[0]


@dataclass
class VoidMask:
    """Per-pixel coverage (T, H', W') holding only 0.5 (void) and 1.0 (covered)."""

    values: np.ndarray

    @property
    def binary(self) -> np.ndarray:
        """Strict {0, 1} variant: 1 where covered."""
        return (self.values == MASK_COVERED).astype(np.uint8)

    def coverage(self) -> np.ndarray:
        """Fraction of covered pixels per frame."""
        return (self.values == MASK_COVERED).mean(axis=(1, 2))


def disc_offsets(radius: float) -> np.ndarray:
    """Integer pixel offsets (dx, dy) with dx^2 + dy^2 <= radius^2, row-major."""
    r = int(np.floor(radius))
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    keep = dx * dx + dy * dy <= radius * radius
    return np.stack([dx[keep], dy[keep]], axis=1).astype(np.int64)


@numba.njit(cache=True, nogil=True)
def _zbuffer_kernel(pts, vis, rot, trans, fx, fy, cx, cy, width, height, offsets, z_near, depth_buf, index_buf):
    n = pts.shape[0]
    for i in range(n):
        if not vis[i]:
            continue
        px = pts[i, 0]
        py = pts[i, 1]
        pz = pts[i, 2]
        x = rot[0, 0] * px + rot[0, 1] * py + rot[0, 2] * pz + trans[0]
        y = rot[1, 0] * px + rot[1, 1] * py + rot[1, 2] * pz + trans[1]
        z = rot[2, 0] * px + rot[2, 1] * py + rot[2, 2] * pz + trans[2]
        if not (z >= z_near):
            continue
        u = fx * x / z + cx
        v = fy * y / z + cy
        fu = np.floor(u + 0.5)
        fv = np.floor(v + 0.5)
        if fu < -1e9 or fu > 1e9 or fv < -1e9 or fv > 1e9:
            continue
        col = int(fu)
        row = int(fv)
        for j in range(offsets.shape[0]):
            c = col + offsets[j, 0]
            r = row + offsets[j, 1]
            if c < 0 or c >= width or r < 0 or r >= height:
                continue
            # strict test: on a tie the earlier (lower) index stays
            if z < depth_buf[r, c]:
                depth_buf[r, c] = z
                index_buf[r, c] = i


def _prepare(points, visible):
    pts = np.ascontiguousarray(points, dtype=np.float64)
    vis = np.ascontiguousarray(visible, dtype=np.bool_)
    if pts.ndim != 2 or pts.shape[1] != 3 or vis.shape != (pts.shape[0],):
        raise ValueError("points must be (N, 3) with a matching (N,) visibility mask")
    return pts, vis


def _compose(index_buf, depth_buf, colors, cfg):
    covered = index_buf >= 0
    frame = np.empty(index_buf.shape + (3,), np.float32)
    frame[...] = np.asarray(cfg.background, np.float32)
    frame[covered] = colors[index_buf[covered]]
    mask = np.where(covered, np.float32(MASK_COVERED), np.float32(MASK_VOID))
    return frame, depth_buf, mask


def splat_frame(points, colors, visible, k: CameraIntrinsics, pose: CameraPose, cfg: RenderConfig):
    """Render one frame.

    Args:
        points: (N, 3) world positions (the source camera frame).
        colors: (N, 3) RGB in [0, 1].
        visible: (N,) bool; invisible points are skipped.
        k: intrinsics of the source camera; rescaled to the output size.
        pose: target camera.

    Returns:
        ``(frame, depth_buffer, mask)``: float32 (H', W', 3), float64 (H', W')
        with ``inf`` where nothing landed, and float32 (H', W') in {0.5, 1}.
    """
    k_out = cfg.output_intrinsics(k)
    pts, vis = _prepare(points, visible)
    colors = np.asarray(colors, np.float32)
    depth_buf = np.full((k_out.height, k_out.width), np.inf)
    index_buf = np.full((k_out.height, k_out.width), -1, np.int64)
    _zbuffer_kernel(
        pts, vis, np.ascontiguousarray(pose.rotation), np.ascontiguousarray(pose.translation),
        k_out.fx, k_out.fy, k_out.cx, k_out.cy, k_out.width, k_out.height,
        disc_offsets(cfg.splat_radius), cfg.z_near, depth_buf, index_buf,
    )
    return _compose(index_buf, depth_buf, colors, cfg)


def splat_frame_reference(points, colors, visible, k: CameraIntrinsics, pose: CameraPose, cfg: RenderConfig):
    """Vectorized sort-based implementation of :func:`splat_frame`.

    Much slower; kept as an independent check of the compiled kernel.
    """
    k_out = cfg.output_intrinsics(k)
    pts, vis = _prepare(points, visible)
    colors = np.asarray(colors, np.float32)
    h, w = k_out.height, k_out.width
    idx = np.nonzero(vis)[0]
    p, r, t = pts[idx], pose.rotation, pose.translation
    # same summation order as the kernel so both paths round identically
    cam = np.stack(
        [r[i, 0] * p[:, 0] + r[i, 1] * p[:, 1] + r[i, 2] * p[:, 2] + t[i] for i in range(3)], axis=1
    )
    front = cam[:, 2] >= cfg.z_near
    idx, cam = idx[front], cam[front]
    with np.errstate(over="ignore", invalid="ignore"):
        col = np.floor(k_out.fx * cam[:, 0] / cam[:, 2] + k_out.cx + 0.5)
        row = np.floor(k_out.fy * cam[:, 1] / cam[:, 2] + k_out.cy + 0.5)
    offs = disc_offsets(cfg.splat_radius)
    cc = (col[:, None] + offs[None, :, 0]).ravel()
    rr = (row[:, None] + offs[None, :, 1]).ravel()
    zz = np.repeat(cam[:, 2], len(offs))
    ii = np.repeat(idx, len(offs))
    inside = (cc >= 0) & (cc < w) & (rr >= 0) & (rr < h)
    pix = (rr[inside] * w + cc[inside]).astype(np.int64)
    zz, ii = zz[inside], ii[inside]
    order = np.lexsort((ii, zz, pix))
    pix, zz, ii = pix[order], zz[order], ii[order]
    first = np.ones(len(pix), bool)
    first[1:] = pix[1:] != pix[:-1]
    depth_buf = np.full(h * w, np.inf)
    index_buf = np.full(h * w, -1, np.int64)
    depth_buf[pix[first]] = zz[first]
    index_buf[pix[first]] = ii[first]
    return _compose(index_buf.reshape(h, w), depth_buf.reshape(h, w), colors, cfg)


def render_sequence(
    pcs: PointCloudSequence,
    traj: CameraTrajectory,
    k: CameraIntrinsics,
    cfg: RenderConfig = RenderConfig(),
    workers: int = 1,
):
    """Render every frame of ``pcs`` from the matching pose of ``traj``.

    A one-pose trajectory is treated as a static camera. Frames are rendered
    independently, so the output does not depend on ``workers``.
    """
    if traj.frame_count not in (1, pcs.frames):
        raise ValueError(f"trajectory has {traj.frame_count} poses for {pcs.frames} frames")
    k_out = cfg.output_intrinsics(k)
    rgb = np.empty((pcs.frames, k_out.height, k_out.width, 3), np.float32)
    mask = np.empty((pcs.frames, k_out.height, k_out.width), np.float32)
    if cfg.render_occluded:
        vis = np.all(np.isfinite(pcs.positions), axis=2) & (pcs.positions[..., 2] > 0)
    else:
        vis = pcs.visibility

    def one(t):
        pose = traj[t] if traj.frame_count > 1 else traj[0]
        frame, _, m = splat_frame(pcs.positions[t], pcs.colors, vis[t], k, pose, cfg)
        rgb[t] = frame
        mask[t] = m

    if workers <= 1:
        for t in range(pcs.frames):
            one(t)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, range(pcs.frames)))
    return FrameSequence(rgb), VoidMask(mask)


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary P6 PPM from an (H, W, 3) float image in [0, 1]."""
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(to_uint8(rgb).tobytes())


def write_pgm(path, gray: np.ndarray, maxval: int = 255) -> None:
    """Binary P5 PGM from an (H, W) uint8 array."""
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        f.write(np.asarray(gray, np.uint8).tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary PPM/PGM written by this module; returns the raw uint8 array."""
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    pos += 1
    magic, w, h = tokens[0], int(tokens[1]), int(tokens[2])
    channels = {b"P6": 3, b"P5": 1}[magic]
    arr = np.frombuffer(data, np.uint8, w * h * channels, pos)
    return arr.reshape(h, w, 3) if channels == 3 else arr.reshape(h, w)


def mask_to_uint8(values: np.ndarray) -> np.ndarray:
    """0.5 -> 128, 1.0 -> 255."""
    return np.where(values == MASK_COVERED, 255, 128).astype(np.uint8)


def write_render(
    out_dir: Union[str, PathLike],
    frames: FrameSequence,
    mask: VoidMask,
    trajectory_spec: Optional[dict] = None,
    config: Optional[RenderConfig] = None,
    extra: Optional[dict] = None,
) -> Path:
    """Write frames, masks and a manifest into ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digits = max(4, len(str(frames.frames - 1)))
    entries = []
    for t in range(frames.frames):
        name = f"{t:0{digits}d}"
        frame_path = f"frame_{name}.ppm"
        mask_path = f"mask_{name}.pgm"
        bin_path = f"binmask_{name}.pgm"
        write_ppm(out / frame_path, frames.rgb[t])
        write_pgm(out / mask_path, mask_to_uint8(mask.values[t]))
        write_pgm(out / bin_path, mask.binary[t], maxval=1)
        entries.append({"index": t, "frame": frame_path, "mask": mask_path, "binary_mask": bin_path})
    manifest = {
        "frames": entries,
        "mask_encoding": {"void": 128, "covered": 255, "void_value": MASK_VOID, "covered_value": MASK_COVERED},
        "trajectory": trajectory_spec,
        "config": config.to_dict() if config is not None else None,
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
