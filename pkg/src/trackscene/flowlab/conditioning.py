"""Channel-wise stacking of the image, noise and depth latents."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConditionBundle:
    z_image: np.ndarray
    z_noise: np.ndarray
    z_depth: np.ndarray

    def __post_init__(self):
        grids = [np.asarray(g) for g in (self.z_image, self.z_noise, self.z_depth)]
        if any(g.ndim != 2 for g in grids):
            raise ValueError("condition grids must be (tokens, channels)")
        counts = {g.shape[0] for g in grids}
        if len(counts) != 1:
            raise ValueError(f"token counts differ: {[g.shape[0] for g in grids]}")

    @property
    def channels(self) -> tuple:
        return tuple(np.asarray(g).shape[1] for g in (self.z_image, self.z_noise, self.z_depth))


def concat_condition(b: ConditionBundle) -> np.ndarray:
    """Image, noise, depth along the channel axis; token order unchanged."""
    return np.concatenate([b.z_image, b.z_noise, b.z_depth], axis=1)


def split_condition(z: np.ndarray, channels) -> ConditionBundle:
    """Inverse of :func:`concat_condition` for known channel counts."""
    c1, c2, c3 = channels
    if z.shape[1] != c1 + c2 + c3:
        raise ValueError(f"expected {c1 + c2 + c3} channels, got {z.shape[1]}")
    return ConditionBundle(z[:, :c1], z[:, c1 : c1 + c2], z[:, c1 + c2 :])
