"""
Motion-aware adaptive normalization
===================================

A single MAdaNorm layer: motion features produce per-token scales and
biases, gated per channel, around an attention block and an MLP.
"""

import numpy as np

from trackscene.flowlab import (
    ConditionBundle,
    MAdaNormParams,
    concat_condition,
    grad_check,
    madanorm_backward,
    madanorm_forward,
    resample_grid,
)

rng = np.random.default_rng(3)

# the three latents are stacked on the channel axis
z = concat_condition(ConditionBundle(rng.normal(size=(16, 4)), rng.normal(size=(16, 4)), np.zeros((16, 4))))
print("combined condition:", z.shape)

# motion features on an 8x8 grid, resized to the 4x4 token grid
S = resample_grid(rng.normal(size=(8, 8, 6)), 4, 4)
F = rng.normal(size=(16, 12))
p = MAdaNormParams.init(channels=12, feature_channels=6, hidden=24, seed=0)
out = madanorm_forward(F, S, p)
print("output:", out.shape)

# closing both gates removes every trace of S and of F's values
p0 = p.replace(gamma1=np.zeros(12), gamma2=np.zeros(12))
a = madanorm_forward(F, S, p0)
b = madanorm_forward(rng.normal(size=F.shape), rng.normal(size=S.shape), p0)
print("gates closed, outputs equal:", np.array_equal(a, b))

# hand-written backward pass against central differences
W = rng.normal(size=out.shape)
_, cache = madanorm_forward(F, S, p, return_cache=True)
dF, dS, dp = madanorm_backward(W, cache, p)
loss = lambda th: np.sum(W * madanorm_forward(F, S, p.with_flat(th)))
print("parameter gradient rel. error:", grad_check(loss, lambda th: dp.flat(), p.flat(), step=1e-4, directions=20))
