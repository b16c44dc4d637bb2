import json

import numpy as np
import pytest

from conftest import intrinsics_for, random_tracks
from trackscene.cli import main, run_flow_experiment
from trackscene.core import ColorGrid, TrackSet, load_t4d, save_t4d
from trackscene.geometry import tracks_to_pointclouds
from trackscene.motion import load_motion_map
from trackscene.pipeline import scene_from_motion_map
from trackscene.render import read_pnm


def write_sample(path, seed=0, t=4, h=12, w=16, corrupt=False, static=False):
    rng = np.random.default_rng(seed)
    if static:
        tracks = TrackSet.static(rng.uniform(1, 4, (h, w)), t)
    else:
        tracks = random_tracks(rng, t, h, w)
    if corrupt:
        d = tracks.depth.copy()
        d[:, : h // 2] = -1.0
        tracks = TrackSet.from_raw(tracks.u, tracks.v, d, tracks.occluded)
    save_t4d(tracks, path, ColorGrid(rng.random((h, w, 3))), intrinsics_for(h, w))
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestValidate:
    def test_clean(self, tmp_path, capsys):
        p = write_sample(tmp_path / "a.t4d")
        code, out, _ = run(capsys, "validate", p)
        assert code == 0 and json.loads(out)["ok"] is True

    def test_violations(self, tmp_path, capsys):
        tracks = TrackSet.static(np.ones((3, 3)), 2)
        u = tracks.u.copy()
        u[0, 1, 1] += 0.5
        save_t4d(TrackSet(u, tracks.v, tracks.depth, tracks.occluded), tmp_path / "b.t4d")
        code, out, _ = run(capsys, "validate", tmp_path / "b.t4d")
        assert code == 2 and json.loads(out)["ok"] is False

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(capsys, "validate", tmp_path / "nope.t4d")
        assert code == 2 and json.loads(err)["error"] == "missing_file"

    def test_bad_magic(self, tmp_path, capsys):
        (tmp_path / "x.t4d").write_bytes(b"JUNK" + bytes(40))
        code, _, err = run(capsys, "validate", tmp_path / "x.t4d")
        assert code == 2 and json.loads(err)["error"] == "bad_magic"

    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["explode"])
        assert e.value.code == 2


class TestNormalizeRender:
    def test_normalize(self, tmp_path, capsys):
        p = write_sample(tmp_path / "a.t4d")
        code, out, _ = run(capsys, "normalize", p, tmp_path / "m.m4d", "--range", -2, -2, -2, 2, 2, 2)
        assert code == 0 and json.loads(out)["shape"] == [4, 12, 16]
        mm = load_motion_map(tmp_path / "m.m4d")
        assert mm.lo.tolist() == [-2, -2, -2]

    def test_normalize_needs_intrinsics(self, tmp_path, capsys):
        save_t4d(TrackSet.static(np.ones((2, 2)), 2), tmp_path / "a.t4d")
        code, _, err = run(capsys, "normalize", tmp_path / "a.t4d", tmp_path / "m.m4d")
        assert code == 2 and json.loads(err)["error"] == "missing_intrinsics"

    def test_static_identity_identical_frames(self, tmp_path, capsys):
        p = write_sample(tmp_path / "s.t4d", static=True, t=5)
        code, _, _ = run(capsys, "render", p, "--out", tmp_path / "r")
        assert code == 0
        m = json.loads((tmp_path / "r" / "manifest.json").read_text())
        frames = [read_pnm(tmp_path / "r" / e["frame"]) for e in m["frames"]]
        assert len(frames) == 5 and all(np.array_equal(f, frames[0]) for f in frames)

    def test_roundtrip_within_quantization(self, tmp_path, capsys):
        p = write_sample(tmp_path / "a.t4d", seed=3)
        assert run(capsys, "normalize", p, tmp_path / "m.m4d")[0] == 0
        traj = tmp_path / "orbit.json"
        traj.write_text(json.dumps({"kind": "orbit", "frames": 4, "angle_deg": 10.0}))
        assert run(capsys, "render", p, "--trajectory", traj, "--radius", 0, "--out", tmp_path / "direct")[0] == 0
        assert run(capsys, "render", p, "--motion", tmp_path / "m.m4d", "--trajectory", traj, "--radius", 0,
                   "--out", tmp_path / "coded")[0] == 0

        # scene-level bound: |dx| <= (hi - lo) / 65535 * z / alpha per component
        tracks, colors, k = load_t4d(p)
        direct = tracks_to_pointclouds(tracks, colors, k)
        coded = scene_from_motion_map(load_motion_map(tmp_path / "m.m4d"), tracks, colors, k)
        z0 = tracks.depth[0].reshape(-1).astype(np.float64)
        bound = 2.0 / 65535 * np.stack([z0 / k.alpha_x, z0 / k.alpha_y, z0], axis=1)
        err = np.abs(coded.positions - direct.positions)
        assert np.all(err <= bound * (1 + 1e-9) + 1e-12)

        # image-level: frame 0 is exact, later frames differ only where a point sits on a rounding edge
        for t in range(4):
            a = read_pnm(tmp_path / "direct" / f"frame_{t:04d}.ppm")
            b = read_pnm(tmp_path / "coded" / f"frame_{t:04d}.ppm")
            diff = np.any(a != b, axis=2).mean()
            assert diff == 0 if t == 0 else diff < 0.02

    def test_resized_and_idempotent(self, tmp_path, capsys):
        p = write_sample(tmp_path / "a.t4d")
        for name in ("x", "y"):
            assert run(capsys, "render", p, "--width", 32, "--height", 24, "--threads", 2,
                       "--out", tmp_path / name)[0] == 0
        assert read_pnm(tmp_path / "x" / "frame_0000.ppm").shape == (24, 32, 3)
        for f in (tmp_path / "x").iterdir():
            if f.name != "manifest.json":
                assert f.read_bytes() == (tmp_path / "y" / f.name).read_bytes()

    def test_input_not_mutated(self, tmp_path, capsys):
        p = write_sample(tmp_path / "a.t4d")
        before = p.read_bytes()
        run(capsys, "normalize", p, tmp_path / "m.m4d")
        run(capsys, "render", p, "--motion", tmp_path / "m.m4d", "--out", tmp_path / "r")
        assert p.read_bytes() == before

    def test_config_file(self, tmp_path, capsys):
        p = write_sample(tmp_path / "a.t4d")
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"render": {"splat_radius": 0, "background": [1, 1, 1]},
                                   "trajectory": {"kind": "linear", "frames": 4, "direction": [1, 0, 0]}}))
        assert run(capsys, "render", p, "--config", cfg, "--out", tmp_path / "r")[0] == 0
        m = json.loads((tmp_path / "r" / "manifest.json").read_text())
        assert m["trajectory"]["kind"] == "linear" and m["config"]["splat_radius"] == 0

    def test_bad_trajectory(self, tmp_path, capsys):
        p = write_sample(tmp_path / "a.t4d")
        traj = tmp_path / "t.json"
        traj.write_text(json.dumps({"kind": "spiral", "frames": 4}))
        code, _, err = run(capsys, "render", p, "--trajectory", traj, "--out", tmp_path / "r")
        assert code == 2 and json.loads(err)["error"] == "bad_config"

    def test_frame_mismatch(self, tmp_path, capsys):
        p = write_sample(tmp_path / "a.t4d")
        traj = tmp_path / "t.json"
        traj.write_text(json.dumps({"kind": "orbit", "frames": 7, "angle_deg": 30}))
        code, _, err = run(capsys, "render", p, "--trajectory", traj, "--out", tmp_path / "r")
        assert code == 2 and "render_failed" in err


class TestFilter:
    def test_pass_rate(self, tmp_path, capsys):
        labels = [True, True, False, True, False, True, True, False]
        for i, ok in enumerate(labels):
            write_sample(tmp_path / f"s{i}.t4d", seed=i, corrupt=not ok)
        code, out, _ = run(capsys, "filter", str(tmp_path / "*.t4d"), "--threads", 3, "--out", tmp_path / "rep")
        assert code == 0
        lines = [json.loads(line) for line in out.strip().splitlines()]
        reports, summary = lines[:-1], lines[-1]["summary"]
        assert [r["passed"] for r in reports] == labels
        assert summary["pass_rate"] == sum(labels) / len(labels)
        assert json.loads((tmp_path / "rep" / "summary.json").read_text()) == summary
        assert len((tmp_path / "rep" / "report.jsonl").read_text().splitlines()) == len(labels)

    def test_thresholds_file(self, tmp_path, capsys):
        write_sample(tmp_path / "s.t4d", corrupt=True)
        th = tmp_path / "th.json"
        th.write_text(json.dumps({"max_invalid_fraction": 1.0}))
        code, out, _ = run(capsys, "filter", tmp_path / "s.t4d", "--thresholds", th)
        assert json.loads(out.splitlines()[0])["checks"][0]["passed"] is True

    def test_bad_thresholds(self, tmp_path, capsys):
        write_sample(tmp_path / "s.t4d")
        th = tmp_path / "th.json"
        th.write_text(json.dumps({"scale_factor": 1.0}))
        code, _, err = run(capsys, "filter", tmp_path / "s.t4d", "--thresholds", th)
        assert code == 2 and json.loads(err)["error"] == "bad_thresholds"


class TestFlowDemo:
    def test_outputs(self, tmp_path, capsys):
        exp = tmp_path / "exp.json"
        exp.write_text(json.dumps({"steps": 30, "hidden": 8, "batch": 64, "samples": 10, "eval_batch": 256}))
        code, out, _ = run(capsys, "flow-demo", exp, "--out", tmp_path / "f")
        assert code == 0
        loss = (tmp_path / "f" / "loss.csv").read_text().splitlines()
        assert loss[0] == "step,loss" and len(loss) == 31
        samples = (tmp_path / "f" / "samples.csv").read_text().splitlines()
        assert samples[0] == "x0,x1" and len(samples) == 11
        first = {p.name: p.read_bytes() for p in (tmp_path / "f").iterdir()}
        run(capsys, "flow-demo", exp, "--out", tmp_path / "f")
        assert first == {p.name: p.read_bytes() for p in (tmp_path / "f").iterdir()}

    def test_seed_override(self):
        a = run_flow_experiment({"steps": 5, "hidden": 4, "batch": 16, "samples": 3}, seed=1)
        b = run_flow_experiment({"steps": 5, "hidden": 4, "batch": 16, "samples": 3, "seed": 1})
        assert a["losses"] == b["losses"]

    def test_unknown_key(self, tmp_path, capsys):
        exp = tmp_path / "exp.json"
        exp.write_text(json.dumps({"stepz": 3}))
        code, _, err = run(capsys, "flow-demo", exp, "--out", tmp_path / "f")
        assert code == 2 and json.loads(err)["error"] == "bad_experiment"


def test_internal_error_exit_code(tmp_path, capsys, monkeypatch):
    import trackscene.cli as cli

    def boom(*a, **k):
        raise RuntimeError("kaboom")

    monkeypatch.setattr(cli, "validate", boom)
    p = write_sample(tmp_path / "a.t4d")
    code, _, err = run(capsys, "validate", p)
    assert code == 3 and json.loads(err)["error"] == "internal"
