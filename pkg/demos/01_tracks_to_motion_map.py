"""
From dense point tracks to a motion map
=======================================

Build a small synthetic scene, write it as a T4D container, lift it to 3D,
and encode the normalized motion as a 16-bit motion map.
"""

import numpy as np

import trackscene as ts

rng = np.random.default_rng(0)
T, H, W = 8, 24, 32

# a tilted plane seen by a 30-pixel-focal camera
K = ts.CameraIntrinsics(30.0, 30.0, W / 2, H / 2, W, H)
rows, cols = np.mgrid[0:H, 0:W].astype(np.float32)
depth0 = 2.0 + 0.05 * cols

# every point drifts right and slightly away from the camera
u = np.stack([cols + 0.5 * t for t in range(T)])
v = np.stack([rows for t in range(T)])
d = np.stack([depth0 * (1 + 0.01 * t) for t in range(T)])
occ = np.zeros((T, H, W), bool)
tracks = ts.TrackSet.from_raw(u, v, d, occ)
colors = ts.ColorGrid(np.dstack([cols / W, rows / H, np.full((H, W), 0.5)]))

print(ts.validate(tracks).to_dict())

ts.save_t4d(tracks, "/tmp/plane.t4d", colors, K)
tracks, colors, K = ts.load_t4d("/tmp/plane.t4d")

# %%
# Lift to 3D and take motion relative to frame 0
pcs = ts.tracks_to_pointclouds(tracks, colors, K)
m = ts.relative_motion(pcs)
print("raw displacement at the last frame, pixel (0,0):", m.delta[-1, 0, 0])

# the normalized motion is unitless; scaling the whole scene does not move it
nm = ts.normalize(m, tracks.frame0_depth(), K)
nm2 = ts.normalize(ts.relative_motion(pcs.scaled(7.0)), ts.DepthMap(tracks.frame0_depth().depth * 7.0), K)
print("normalized, last frame:", nm.ndelta[-1, 0, 0])
print("max change under 7x scale:", np.abs(nm2.ndelta - nm.ndelta).max())

# %%
# Quantize to 16 bits and back
mm = ts.encode_motion_map(nm)
back = ts.decode_motion_map(mm)
print("codes at the last frame:", mm.codes[-1, 0, 0])
print("worst quantization error:", np.abs(back.ndelta - nm.ndelta).max(), "<=", 2 / 65535)
ts.save_motion_map(mm, "/tmp/plane.m4d")
