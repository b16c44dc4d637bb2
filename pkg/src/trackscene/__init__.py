"""Dense 4D point tracks to renderable dynamic scenes.

Submodules: ``core`` (types and the T4D container), ``geometry`` (pinhole
camera and trajectories), ``motion`` (relative motion, depth-guided
normalization, motion-map codec), ``render`` (z-buffer splatting with void
masks), ``quality`` (dataset filters) and ``flowlab`` (toy flow matching and
MAdaNorm numerics).
"""
from .core import (
    DEPTH_SENTINEL,
    CameraIntrinsics,
    CameraPose,
    ColorGrid,
    DepthMap,
    PointCloudSequence,
    TrackSet,
    ValidationReport,
    load_t4d,
    save_t4d,
    validate,
)
from .geometry import (
    CameraTrajectory,
    TrajectorySpec,
    backproject,
    make_trajectory,
    project,
    rotation_angle_deg,
    scene_centroid,
    tracks_to_pointclouds,
    transform,
)
from .motion import (
    MotionMap,
    MotionTensor,
    NormalizedMotion,
    compose_scene,
    decode_motion_map,
    denormalize,
    encode_motion_map,
    load_motion_map,
    normalize,
    relative_motion,
    save_motion_map,
)
from .quality import QualityReport, QualityThresholds, Sample, filter_batch, run_filters, summarize
from .render import FrameSequence, RenderConfig, VoidMask, render_sequence, splat_frame, write_render

__version__ = "0.1.0"
