"""Trajectory quality-control filters.

Three checks, each returning a :class:`CheckResult`:

* depth validity: share of trajectories that hit a missing, zero, negative,
  non-finite or absurdly large depth at any frame;
* depth dispersion: population std of all valid depths over their median;
* scale consistency: the frame-0 view reprojected from the point cloud after
  a uniform scale must match the observed frame-0 image.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import CameraIntrinsics, CameraPose, ColorGrid, PointCloudSequence, TrackSet
from .geometry import tracks_to_pointclouds
from .render import RenderConfig, splat_frame

MAX_PLAUSIBLE_DEPTH = 1e4


@dataclass(frozen=True)
class QualityThresholds:
    max_invalid_fraction: float = 0.02
    depth_std_rel_max: float = 3.0
    scale_factor: float = 2.0
    max_render_diff: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.max_invalid_fraction <= 1.0:
            raise ValueError(f"max_invalid_fraction must lie in [0, 1], got {self.max_invalid_fraction}")
        if not (np.isfinite(self.depth_std_rel_max) and self.depth_std_rel_max >= 0):
            raise ValueError(f"depth_std_rel_max must be finite and >= 0, got {self.depth_std_rel_max}")
        if not (np.isfinite(self.scale_factor) and self.scale_factor > 0) or self.scale_factor == 1:
            raise ValueError(f"scale_factor must be positive and != 1, got {self.scale_factor}")
        if not 0.0 <= self.max_render_diff <= 1.0:
            raise ValueError(f"max_render_diff must lie in [0, 1], got {self.max_render_diff}")

    @classmethod
    def from_dict(cls, d: dict) -> "QualityThresholds":
        return cls(**d)


@dataclass
class CheckResult:
    name: str
    statistic: float
    threshold: float
    passed: bool
    note: str = ""


@dataclass
class QualityReport:
    checks: list = field(default_factory=list)
    sample_id: Optional[str] = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        out = {"passed": self.passed, "checks": [asdict(c) for c in self.checks]}
        if self.sample_id is not None:
            out["sample"] = self.sample_id
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class Sample:
    """One dataset entry. ``positions`` overrides the point cloud otherwise back-projected from the tracks."""

    tracks: TrackSet
    colors: ColorGrid
    intrinsics: CameraIntrinsics
    positions: Optional[PointCloudSequence] = None
    sample_id: Optional[str] = None


def invalid_depth_mask(tracks: TrackSet) -> np.ndarray:
    d = tracks.depth
    with np.errstate(invalid="ignore"):
        return ~(np.isfinite(d) & (d > 0) & (d <= MAX_PLAUSIBLE_DEPTH))


def check_depth_validity(tracks: TrackSet, th: QualityThresholds = QualityThresholds()) -> CheckResult:
    """Share of trajectories with an invalid or implausible depth at any frame."""
    bad_track = invalid_depth_mask(tracks).any(axis=0)
    stat = float(bad_track.mean())
    return CheckResult("depth_validity", stat, th.max_invalid_fraction, stat <= th.max_invalid_fraction)


def check_depth_dispersion(tracks: TrackSet, th: QualityThresholds = QualityThresholds()) -> CheckResult:
    """Population std over median of every valid depth sample."""
    d = tracks.depth[~invalid_depth_mask(tracks)].astype(np.float64)
    if d.size < 2:
        return CheckResult(
            "depth_dispersion", float("nan"), th.depth_std_rel_max, False,
            f"insufficient data: {d.size} valid depth(s)",
        )
    stat = float(np.std(d) / np.median(d))
    return CheckResult(
        "depth_dispersion", stat, th.depth_std_rel_max, stat <= th.depth_std_rel_max, "population std"
    )


def observed_view(tracks: TrackSet, colors: ColorGrid, cfg: RenderConfig) -> np.ndarray:
    """Frame-0 colors splatted at their own pixels, z-tested by frame-0 depth.

    This is what the source camera recorded, expressed with the same splat
    footprint, visibility and tie rule as the point renderer.
    """
    h, w = tracks.height, tracks.width
    valid = tracks.depth_valid[0]
    visible = valid if cfg.render_occluded else valid & ~tracks.occluded[0]
    rows, cols = np.mgrid[0:h, 0:w]
    # unit intrinsics put the point (col * d, row * d, d) on pixel (col, row)
    k = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, w, h)
    d = np.where(valid, tracks.depth[0].astype(np.float64), 1.0)
    pts = np.stack([cols * d, rows * d, d], axis=-1).reshape(-1, 3)
    frame, _, _ = splat_frame(pts, colors.rgb.reshape(-1, 3), visible.ravel(), k, CameraPose.identity(), cfg)
    return frame


def check_scale_consistency(
    tracks: TrackSet,
    colors: ColorGrid,
    k: CameraIntrinsics,
    th: QualityThresholds = QualityThresholds(),
    positions: Optional[PointCloudSequence] = None,
    cfg: Optional[RenderConfig] = None,
) -> CheckResult:
    """Compare the observed frame 0 against the source-view render of the scaled cloud.

    A cloud obtained by back-projecting the tracks reprojects onto the
    observed pixels at any scale, so the statistic is exactly 0. Points whose
    3D position disagrees with their pixel land elsewhere and show up as a
    mean absolute RGB difference.
    """
    if positions is None:
        positions = tracks_to_pointclouds(tracks, colors, k)
    if cfg is None:
        cfg = RenderConfig(splat_radius=0)
    # source-view comparison at native size; no near clip so scaling cannot push points across it
    cfg = RenderConfig(None, None, cfg.splat_radius, cfg.background, np.finfo(float).tiny, cfg.render_occluded)
    reference = observed_view(tracks, colors, cfg)
    scaled = positions.positions[0] * th.scale_factor
    vis = positions.visibility[0]
    if cfg.render_occluded:
        vis = vis | tracks.depth_valid[0].ravel()
    frame, _, _ = splat_frame(scaled, positions.colors, vis, k, CameraPose.identity(), cfg)
    stat = float(np.mean(np.abs(frame.astype(np.float64) - reference)))
    return CheckResult("scale_consistency", stat, th.max_render_diff, stat <= th.max_render_diff)


def run_filters(sample: Sample, th: QualityThresholds = QualityThresholds()) -> QualityReport:
    checks = [
        check_depth_validity(sample.tracks, th),
        check_depth_dispersion(sample.tracks, th),
        check_scale_consistency(sample.tracks, sample.colors, sample.intrinsics, th, sample.positions),
    ]
    return QualityReport(checks, sample.sample_id)


def filter_batch(samples, th: QualityThresholds = QualityThresholds(), workers: int = 1) -> list:
    """Reports in input order."""
    if workers <= 1:
        return [run_filters(s, th) for s in samples]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: run_filters(s, th), samples))


def summarize(reports) -> dict:
    n = len(reports)
    passed = sum(r.passed for r in reports)
    return {"samples": n, "passed": passed, "pass_rate": passed / n if n else 0.0}
