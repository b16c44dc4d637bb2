"""End-to-end compositions used by the command line and the demos."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import CameraIntrinsics, ColorGrid, TrackSet
from .geometry import CameraTrajectory, TrajectorySpec, make_trajectory, tracks_to_pointclouds
from .motion import (
    DEFAULT_RANGE,
    MotionMap,
    compose_scene,
    decode_motion_map,
    denormalize,
    encode_motion_map,
    normalize,
    relative_motion,
)
from .quality import QualityThresholds
from .render import RenderConfig, render_sequence


@dataclass
class PipelineConfig:
    render: RenderConfig = field(default_factory=RenderConfig)
    thresholds: QualityThresholds = field(default_factory=QualityThresholds)
    codec_lo: tuple = DEFAULT_RANGE[0]
    codec_hi: tuple = DEFAULT_RANGE[1]
    trajectory: Optional[TrajectorySpec] = None
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {"render", "thresholds", "codec_range", "trajectory", "seed"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        cfg = cls()
        if "render" in d:
            r = dict(d["render"])
            if "background" in r:
                r["background"] = tuple(r["background"])
            cfg.render = RenderConfig(**r)
        if "thresholds" in d:
            cfg.thresholds = QualityThresholds.from_dict(d["thresholds"])
        if "codec_range" in d:
            cfg.codec_lo = tuple(d["codec_range"]["lo"])
            cfg.codec_hi = tuple(d["codec_range"]["hi"])
        if "trajectory" in d:
            cfg.trajectory = TrajectorySpec.from_dict(d["trajectory"])
        if "seed" in d:
            cfg.seed = int(d["seed"])
        return cfg


def encode_tracks(
    tracks: TrackSet, colors: ColorGrid, k: CameraIntrinsics, lo=DEFAULT_RANGE[0], hi=DEFAULT_RANGE[1]
) -> MotionMap:
    """Tracks -> points -> relative motion -> normalized motion -> motion map."""
    pcs = tracks_to_pointclouds(tracks, colors, k)
    nm = normalize(relative_motion(pcs), tracks.frame0_depth(), k)
    return encode_motion_map(nm, lo, hi)


def scene_from_motion_map(mm: MotionMap, tracks: TrackSet, colors: ColorGrid, k: CameraIntrinsics):
    """Rebuild a 4D scene from a motion map and the frame-0 geometry in ``tracks``."""
    if mm.codes.shape[1:3] != (tracks.height, tracks.width):
        raise ValueError(
            f"motion map grid {mm.codes.shape[1:3]} does not match tracks {(tracks.height, tracks.width)}"
        )
    p0 = tracks_to_pointclouds(tracks, colors, k).frame(0)
    m = denormalize(decode_motion_map(mm), tracks.frame0_depth(), k)
    return compose_scene(p0, m)


def render_tracks(
    tracks: TrackSet,
    colors: ColorGrid,
    k: CameraIntrinsics,
    spec: TrajectorySpec,
    cfg: RenderConfig = RenderConfig(),
    motion_map: Optional[MotionMap] = None,
    workers: int = 1,
):
    """Render the tracked scene (or the scene decoded from ``motion_map``) along ``spec``.

    Returns ``(frames, mask, trajectory)``.
    """
    if motion_map is not None:
        pcs = scene_from_motion_map(motion_map, tracks, colors, k)
    else:
        pcs = tracks_to_pointclouds(tracks, colors, k)
    traj: CameraTrajectory = make_trajectory(spec, k, tracks.frame0_depth())
    frames, mask = render_sequence(pcs, traj, k, cfg, workers=workers)
    return frames, mask, traj
