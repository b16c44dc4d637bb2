import numpy as np
import pytest

from trackscene import CameraIntrinsics, ColorGrid, TrackSet


def random_tracks(rng, t, h, w, moving=True, occlusion=0.0, invalid=0.0):
    """Anchored tracks with depth in [1, 4] and random per-frame image motion."""
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float32)
    u = np.broadcast_to(cols, (t, h, w)).copy()
    v = np.broadcast_to(rows, (t, h, w)).copy()
    d = np.broadcast_to(rng.uniform(1.0, 4.0, (h, w)), (t, h, w)).astype(np.float32)
    if moving and t > 1:
        u[1:] += rng.normal(0, 2.0, (t - 1, h, w)).astype(np.float32)
        v[1:] += rng.normal(0, 2.0, (t - 1, h, w)).astype(np.float32)
        d[1:] *= rng.uniform(0.8, 1.2, (t - 1, h, w)).astype(np.float32)
    occ = rng.random((t, h, w)) < occlusion
    occ[0] = False
    bad = rng.random((t, h, w)) < invalid
    d = np.where(bad, np.nan, d)
    return TrackSet.from_raw(u, v, d, occ)


def intrinsics_for(h, w, f=None):
    f = f if f is not None else 1.2 * max(h, w)
    return CameraIntrinsics(f, f, w / 2.0, h / 2.0, w, h)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_scene(rng):
    t, h, w = 4, 12, 16
    tracks = random_tracks(rng, t, h, w)
    colors = ColorGrid(rng.random((h, w, 3)))
    return tracks, colors, intrinsics_for(h, w)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
