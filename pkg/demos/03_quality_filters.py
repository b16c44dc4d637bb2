"""
Filtering bad samples
=====================

Three checks flag samples with broken depth, wildly spread depth, or 3D
positions that do not agree with their pixels.
"""

import numpy as np

import trackscene as ts

rng = np.random.default_rng(2)
T, H, W = 3, 16, 20
K = ts.CameraIntrinsics(24.0, 24.0, W / 2, H / 2, W, H)
colors = ts.ColorGrid(rng.random((H, W, 3)))


def plane(depth=3.0):
    return ts.TrackSet.static(np.full((H, W), depth) + rng.uniform(0, 0.5, (H, W)), T)


clean = ts.Sample(plane(), colors, K, sample_id="clean")

# a block of sentinel depths
t = plane()
d = t.depth.copy()
d[1, :4] = -1.0
holes = ts.Sample(ts.TrackSet.from_raw(t.u, t.v, d, t.occluded), colors, K, sample_id="holes")

# depth spread over five orders of magnitude
spread = ts.Sample(ts.TrackSet.static(np.geomspace(0.01, 5000, H * W).reshape(H, W), T), colors, K,
                   sample_id="spread")

# points pushed along z: the pixel they came from no longer matches
pcs = ts.tracks_to_pointclouds(clean.tracks, colors, K)
pos = pcs.positions.copy()
pos[:, ::2, 2] *= 2.0
moved = ts.Sample(clean.tracks, colors, K, ts.PointCloudSequence(pos, pcs.colors, pcs.visibility, pcs.grid),
                  sample_id="moved")

reports = ts.filter_batch([clean, holes, spread, moved])
for r in reports:
    stats = ", ".join(f"{c.name}={c.statistic:.4f}{'' if c.passed else ' (fail)'}" for c in r.checks)
    print(f"{r.sample_id:7s} passed={r.passed}  {stats}")
print(ts.summarize(reports))
