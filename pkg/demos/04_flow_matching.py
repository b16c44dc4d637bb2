"""
Flow matching on two blobs
==========================

Train a tiny velocity field to carry standard-normal noise onto a
two-component Gaussian mixture, then integrate it with Euler steps.
"""

import numpy as np

from trackscene.flowlab import (
    FlowField,
    GaussianMixture,
    euler_sample,
    fm_loss,
    interpolate_state,
    optimal_velocity,
    sample_pairs,
    train_toy,
)

data = GaussianMixture(((1.5, 0.0), (-1.5, 0.0)), 0.3)
field = FlowField.init(2, 64, seed=0)

x0, x1, t = sample_pairs(data, 8192, np.random.default_rng(1))
print("loss at init:", fm_loss(field, x0, x1, t))

# the loss has a floor: even the best possible field cannot know which blob a noise sample is headed for
xt = interpolate_state(x0, x1, t)
floor = np.mean(np.sum((optimal_velocity(data, t, xt) - (x1 - x0)) ** 2, axis=1))
print("loss of the optimal field:", floor)

res = train_toy(field, data, steps=5000, lr=0.05, seed=0, batch_size=1024)
print("loss after training:", fm_loss(res.field, x0, x1, t))
print("trace every 1000 steps:", np.round(res.losses[::1000], 3))

z = np.random.default_rng(2).standard_normal((2048, 2))
samples = euler_sample(res.field, z, 64)
right, left = samples[samples[:, 0] > 0], samples[samples[:, 0] <= 0]
print("right cluster mean:", right.mean(axis=0), "share", len(right) / len(samples))
print("left cluster mean: ", left.mean(axis=0))
