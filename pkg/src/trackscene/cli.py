"""Command line entry point: ``trackscene <subcommand> ...``.

Exit codes: 0 success, 2 bad input, 3 internal error. Failures print one
JSON object on stderr.
"""
from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .core import ColorGrid, T4DError, load_t4d, validate
from .flowlab import FlowField, GaussianMixture, euler_sample, fm_loss, sample_pairs, train_toy
from .geometry import TrajectorySpec
from .motion import load_motion_map, save_motion_map
from .pipeline import PipelineConfig, encode_tracks, render_tracks
from .quality import QualityThresholds, Sample, filter_batch, summarize
from .render import RenderConfig, write_render

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_INTERNAL = 3

log = logging.getLogger("trackscene")


class BadInput(Exception):
    def __init__(self, message, code="bad_input", **context):
        super().__init__(message)
        self.code = code
        self.context = context


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise BadInput(f"no such file: {path}", "missing_file", path=str(path)) from None
    except json.JSONDecodeError as e:
        raise BadInput(f"{path}: invalid JSON ({e})", "bad_json", path=str(path)) from None


def _load_config(args) -> PipelineConfig:
    try:
        cfg = PipelineConfig.from_dict(_read_json(args.config)) if args.config else PipelineConfig()
    except (TypeError, ValueError, KeyError) as e:
        if isinstance(e, BadInput):
            raise
        raise BadInput(f"bad config: {e}", "bad_config", path=str(args.config)) from None
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _load_tracks(path, need_camera=False):
    try:
        tracks, colors, k = load_t4d(path)
    except FileNotFoundError:
        raise BadInput(f"no such file: {path}", "missing_file", path=str(path)) from None
    except T4DError as e:
        raise BadInput(str(e), e.code, path=str(path)) from None
    if need_camera and k is None:
        raise BadInput(f"{path}: file carries no intrinsics", "missing_intrinsics", path=str(path))
    if colors is None:
        colors = ColorGrid.uniform(tracks.height, tracks.width)
    return tracks, colors, k


def cmd_validate(args) -> int:
    tracks, _, _ = _load_tracks(args.tracks)
    report = validate(tracks)
    out = report.to_dict()
    out["path"] = str(args.tracks)
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK if report.ok else EXIT_BAD_INPUT


def cmd_normalize(args) -> int:
    cfg = _load_config(args)
    tracks, colors, k = _load_tracks(args.tracks, need_camera=True)
    lo = tuple(args.range[:3]) if args.range else cfg.codec_lo
    hi = tuple(args.range[3:]) if args.range else cfg.codec_hi
    try:
        mm = encode_tracks(tracks, colors, k, lo, hi)
    except ValueError as e:
        raise BadInput(str(e), "normalize_failed", path=str(args.tracks)) from None
    save_motion_map(mm, args.output)
    n_invalid = int((~mm.valid).sum())
    log.info("wrote %s (%d invalid track(s))", args.output, n_invalid)
    print(json.dumps({"output": str(args.output), "shape": list(mm.codes.shape[:3]), "invalid_tracks": n_invalid}))
    return EXIT_OK


def _render_config(args, cfg: PipelineConfig) -> RenderConfig:
    r = cfg.render
    over = {}
    for name in ("width", "height"):
        if getattr(args, name) is not None:
            over[name] = getattr(args, name)
    if args.radius is not None:
        over["splat_radius"] = args.radius
    if not over:
        return r
    base = r.to_dict()
    base.update(over)
    return RenderConfig(**base)


def cmd_render(args) -> int:
    cfg = _load_config(args)
    if args.out is None:
        raise BadInput("render needs --out", "missing_out")
    tracks, colors, k = _load_tracks(args.tracks, need_camera=True)
    if args.trajectory:
        spec_dict = _read_json(args.trajectory)
    elif cfg.trajectory is not None:
        spec_dict = cfg.trajectory.to_dict()
    else:
        spec_dict = {"kind": "identity", "frames": tracks.frames}
    try:
        spec = TrajectorySpec.from_dict(spec_dict)
        rcfg = _render_config(args, cfg)
    except (TypeError, ValueError, KeyError) as e:
        raise BadInput(f"bad trajectory or render config: {e}", "bad_config") from None
    mm = None
    if args.motion:
        try:
            mm = load_motion_map(args.motion)
        except FileNotFoundError:
            raise BadInput(f"no such file: {args.motion}", "missing_file", path=str(args.motion)) from None
        except T4DError as e:
            raise BadInput(str(e), e.code, path=str(args.motion)) from None
    try:
        frames, mask, _ = render_tracks(tracks, colors, k, spec, rcfg, mm, workers=args.threads)
    except ValueError as e:
        raise BadInput(str(e), "render_failed", path=str(args.tracks)) from None
    manifest = write_render(
        args.out, frames, mask, spec.to_dict(), rcfg,
        extra={"source": str(args.tracks), "motion_map": str(args.motion) if args.motion else None},
    )
    log.info("rendered %d frame(s) into %s", frames.frames, args.out)
    print(json.dumps({"manifest": str(manifest), "frames": frames.frames}))
    return EXIT_OK


def cmd_filter(args) -> int:
    cfg = _load_config(args)
    th = cfg.thresholds
    if args.thresholds:
        try:
            th = QualityThresholds.from_dict(_read_json(args.thresholds))
        except (TypeError, ValueError) as e:
            if isinstance(e, BadInput):
                raise
            raise BadInput(f"bad thresholds: {e}", "bad_thresholds") from None
    paths = sorted({p for pattern in args.inputs for p in (glob.glob(pattern) or [pattern])})
    samples = []
    for p in paths:
        tracks, colors, k = _load_tracks(p, need_camera=True)
        samples.append(Sample(tracks, colors, k, sample_id=p))
    reports = filter_batch(samples, th, workers=args.threads)
    lines = [r.to_json() for r in reports]
    summary = summarize(reports)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.jsonl").write_text("".join(line + "\n" for line in lines))
        (out / "summary.json").write_text(json.dumps(summary, sort_keys=True) + "\n")
    for line in lines:
        print(line)
    print(json.dumps({"summary": summary}, sort_keys=True))
    return EXIT_OK


FLOW_DEFAULTS = {
    "distribution": {"means": [[1.5, 0.0], [-1.5, 0.0]], "std": 0.3},
    "hidden": 64,
    "steps": 5000,
    "lr": 0.05,
    "batch": 1024,
    "seed": 0,
    "samples": 2048,
    "euler_steps": 64,
    "eval_batch": 8192,
}


def run_flow_experiment(spec: dict, seed=None) -> dict:
    """Train, evaluate and sample one toy flow-matching experiment."""
    unknown = set(spec) - set(FLOW_DEFAULTS)
    if unknown:
        raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
    e = {**FLOW_DEFAULTS, **spec}
    if seed is not None:
        e["seed"] = seed
    data = GaussianMixture.from_dict(e["distribution"])
    field0 = FlowField.init(data.dim, int(e["hidden"]), seed=e["seed"])
    eval_pairs = sample_pairs(data, int(e["eval_batch"]), np.random.default_rng([e["seed"], 1]))
    initial = fm_loss(field0, *eval_pairs)
    result = train_toy(field0, data, int(e["steps"]), float(e["lr"]), seed=e["seed"], batch_size=int(e["batch"]))
    final = fm_loss(result.field, *eval_pairs)
    x0 = np.random.default_rng([e["seed"], 2]).standard_normal((int(e["samples"]), data.dim))
    samples = euler_sample(result.field, x0, int(e["euler_steps"]))
    return {
        "experiment": e,
        "field": result.field,
        "losses": result.losses,
        "initial_loss": initial,
        "final_loss": final,
        "samples": samples,
    }


def cmd_flow_demo(args) -> int:
    spec = _read_json(args.experiment)
    if args.out is None:
        raise BadInput("flow-demo needs --out", "missing_out")
    try:
        res = run_flow_experiment(spec, seed=args.seed)
    except (TypeError, ValueError, KeyError) as e:
        raise BadInput(f"bad experiment: {e}", "bad_experiment", path=str(args.experiment)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "loss.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss"])
        for i, loss in enumerate(res["losses"]):
            w.writerow([i, repr(loss)])
    with open(out / "samples.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"x{i}" for i in range(res["samples"].shape[1])])
        for row in res["samples"]:
            w.writerow([repr(float(v)) for v in row])
    summary = {
        "initial_loss": res["initial_loss"],
        "final_loss": res["final_loss"],
        "reduction": 1.0 - res["final_loss"] / res["initial_loss"],
        "steps": len(res["losses"]),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker cap (results do not depend on it)")
    common.add_argument("--seed", type=int, default=None)

    parser = argparse.ArgumentParser(prog="trackscene", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check track invariants")
    p.add_argument("tracks")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("normalize", parents=[common], help="tracks -> motion map")
    p.add_argument("tracks")
    p.add_argument("output")
    p.add_argument("--range", type=float, nargs=6, metavar=("LO_X", "LO_Y", "LO_Z", "HI_X", "HI_Y", "HI_Z"))
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("render", parents=[common], help="render frames and void masks")
    p.add_argument("tracks", help="T4D file with colors and intrinsics (frame-0 geometry)")
    p.add_argument("--motion", help="motion map to animate frame 0 with instead of the tracked motion")
    p.add_argument("--trajectory", help="trajectory spec JSON")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--radius", type=float)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("filter", parents=[common], help="quality-filter T4D samples")
    p.add_argument("inputs", nargs="+", help="T4D files or glob patterns")
    p.add_argument("--thresholds", help="thresholds JSON")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("flow-demo", parents=[common], help="toy flow-matching experiment")
    p.add_argument("experiment", help="experiment JSON")
    p.set_defaults(func=cmd_flow_demo)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("TRACKSCENE_LOG_LEVEL", "WARNING").upper(),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BadInput as e:
        print(json.dumps({"error": e.code, "message": str(e), **e.context}), file=sys.stderr)
        return EXIT_BAD_INPUT
    except Exception as e:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(json.dumps({"error": "internal", "message": f"{type(e).__name__}: {e}"}), file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
