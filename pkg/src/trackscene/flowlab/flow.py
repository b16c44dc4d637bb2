"""Flow matching on a toy velocity network with hand-written gradients.

The velocity field is a two-layer tanh perceptron ``v(t, x)`` taking the
concatenation ``[x, t]``. States are interpolated linearly between a noise
sample ``x0`` and a data sample ``x1``, and the regression target is the
constant velocity ``x1 - x0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class FlowPair:
    x0: np.ndarray
    x1: np.ndarray
    t: float

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {self.t}")


_PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass
class FlowField:
    """``v(t, x) = tanh([x, t] @ w1 + b1) @ w2 + b2``."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for n in _PARAM_NAMES:
            setattr(self, n, np.asarray(getattr(self, n), np.float64))
        d1, h = self.w1.shape
        if self.b1.shape != (h,) or self.w2.shape[0] != h or self.b2.shape != (self.w2.shape[1],):
            raise ValueError("inconsistent parameter shapes")
        if d1 != self.w2.shape[1] + 1:
            raise ValueError("input width must be output width + 1 (state plus time)")
        if not all(np.all(np.isfinite(getattr(self, n))) for n in _PARAM_NAMES):
            raise ValueError("parameters must be finite")

    @classmethod
    def init(cls, dim: int, hidden: int, seed: int = 0) -> "FlowField":
        """LeCun-normal weights (std 1/sqrt(fan_in)), zero biases."""
        rng = np.random.default_rng(seed)
        return cls(
            rng.normal(0.0, 1.0 / np.sqrt(dim + 1), (dim + 1, hidden)),
            np.zeros(hidden),
            rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, dim)),
            np.zeros(dim),
        )

    @classmethod
    def constant(cls, c, hidden: int = 1) -> "FlowField":
        """A field that outputs ``c`` everywhere."""
        c = np.asarray(c, np.float64)
        d = c.shape[0]
        return cls(np.zeros((d + 1, hidden)), np.zeros(hidden), np.zeros((hidden, d)), c)

    @property
    def dim(self) -> int:
        return self.w2.shape[1]

    @property
    def hidden(self) -> int:
        return self.w2.shape[0]

    def copy(self) -> "FlowField":
        return FlowField(*(getattr(self, n).copy() for n in _PARAM_NAMES))

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel() for n in _PARAM_NAMES])

    def with_flat(self, theta) -> "FlowField":
        theta = np.asarray(theta, np.float64)
        out, i = [], 0
        for n in _PARAM_NAMES:
            shape = getattr(self, n).shape
            size = int(np.prod(shape))
            out.append(theta[i : i + size].reshape(shape))
            i += size
        return FlowField(*out)

    def _forward(self, t, x):
        x = np.atleast_2d(np.asarray(x, np.float64))
        t = np.broadcast_to(np.asarray(t, np.float64), (x.shape[0],))
        inp = np.concatenate([x, t[:, None]], axis=1)
        a = np.tanh(inp @ self.w1 + self.b1)
        return inp, a, a @ self.w2 + self.b2

    def __call__(self, t, x) -> np.ndarray:
        return self._forward(t, x)[2]


def interpolate_state(x0, x1, t) -> np.ndarray:
    """Linear path ``(1 - t) * x0 + t * x1``; ``t`` may be per-row."""
    t = np.asarray(t, np.float64)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("t must lie in [0, 1]")
    x0 = np.asarray(x0, np.float64)
    x1 = np.asarray(x1, np.float64)
    if t.ndim == 1 and x0.ndim == 2:
        t = t[:, None]
    return (1.0 - t) * x0 + t * x1


def _as_batch(pairs_or_x0, x1=None, t=None):
    if x1 is None:
        pairs = list(pairs_or_x0)
        if not pairs:
            raise ValueError("empty batch")
        x0 = np.stack([np.asarray(p.x0, np.float64) for p in pairs])
        x1 = np.stack([np.asarray(p.x1, np.float64) for p in pairs])
        t = np.array([p.t for p in pairs], np.float64)
    else:
        x0 = np.atleast_2d(np.asarray(pairs_or_x0, np.float64))
        x1 = np.atleast_2d(np.asarray(x1, np.float64))
        t = np.atleast_1d(np.asarray(t, np.float64))
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    return x0, x1, t


def fm_loss(field: FlowField, pairs_or_x0, x1=None, t=None) -> float:
    """Mean squared distance between predicted and straight-line velocities.

    Accepts either a sequence of :class:`FlowPair` or the arrays
    ``(x0, x1, t)`` with shapes (B, d), (B, d), (B,).
    """
    return fm_loss_and_grad(field, pairs_or_x0, x1, t, need_grad=False)[0]


def fm_loss_and_grad(field: FlowField, pairs_or_x0, x1=None, t=None, need_grad: bool = True):
    """Loss and its gradient with respect to the flattened parameters."""
    x0, x1, t = _as_batch(pairs_or_x0, x1, t)
    xt = interpolate_state(x0, x1, t)
    inp, a, v = field._forward(t, xt)
    resid = v - (x1 - x0)
    n = x0.shape[0]
    loss = float(np.sum(resid * resid) / n)
    if not need_grad:
        return loss, None
    g_v = 2.0 * resid / n
    g_w2 = a.T @ g_v
    g_b2 = g_v.sum(axis=0)
    g_z = (g_v @ field.w2.T) * (1.0 - a * a)
    g_w1 = inp.T @ g_z
    g_b1 = g_z.sum(axis=0)
    return loss, np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])


@dataclass(frozen=True)
class GaussianMixture:
    """Isotropic Gaussian mixture; the toy data distribution."""

    means: tuple
    std: float
    weights: Optional[tuple] = None

    @property
    def mean_array(self) -> np.ndarray:
        return np.asarray(self.means, np.float64)

    @property
    def weight_array(self) -> np.ndarray:
        k = len(self.means)
        if self.weights is None:
            return np.full(k, 1.0 / k)
        w = np.asarray(self.weights, np.float64)
        return w / w.sum()

    @property
    def dim(self) -> int:
        return self.mean_array.shape[1]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.means), size=n, p=self.weight_array)
        return self.mean_array[comp] + self.std * rng.standard_normal((n, self.dim))

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMixture":
        means = tuple(tuple(float(x) for x in m) for m in d["means"])
        w = d.get("weights")
        return cls(means, float(d["std"]), tuple(w) if w is not None else None)


def sample_pairs(data: GaussianMixture, n: int, rng: np.random.Generator):
    """Noise/data/time triples with standard-normal noise and uniform time."""
    x0 = rng.standard_normal((n, data.dim))
    x1 = data.sample(n, rng)
    t = rng.uniform(0.0, 1.0, n)
    return x0, x1, t


@dataclass
class TrainResult:
    field: FlowField
    losses: list = dc_field(default_factory=list)


def train_toy(
    field: FlowField,
    data: GaussianMixture,
    steps: int,
    lr: float,
    seed: int = 0,
    batch_size: int = 1024,
    pairs=None,
) -> TrainResult:
    """Plain fixed-step gradient descent on the flow-matching loss.

    Each step draws a fresh batch from ``data`` unless ``pairs`` (a fixed
    ``(x0, x1, t)`` batch) is given. The input field is not modified.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    rng = np.random.default_rng(seed)
    theta = field.flat()
    current = field.copy()
    losses = []
    for step in range(steps):
        batch = pairs if pairs is not None else sample_pairs(data, batch_size, rng)
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grad = fm_loss_and_grad(current, *batch)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise DivergenceError(step, loss)
        losses.append(loss)
        theta = theta - lr * grad
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(step, float("inf"))
        current = current.with_flat(theta)
    return TrainResult(current, losses)


def euler_sample(field, x0, n_steps: int) -> np.ndarray:
    """Integrate ``dx/dt = field(t, x)`` from t = 0 to 1 with ``n_steps`` Euler steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.array(x0, np.float64)
    h = 1.0 / n_steps
    for k in range(n_steps):
        x = x + h * field(k / n_steps, x)
    return x


def optimal_velocity(data: GaussianMixture, t, x) -> np.ndarray:
    """Closed-form minimizer ``E[x1 - x0 | x_t = x]`` of the flow-matching loss.

    Valid for standard-normal noise, a :class:`GaussianMixture` target and the
    linear path; used as a reference field, never for training.
    """
    x = np.atleast_2d(np.asarray(x, np.float64))
    t = np.broadcast_to(np.asarray(t, np.float64), (x.shape[0],))[:, None]
    mu = data.mean_array
    s2 = (1.0 - t) ** 2 + t**2 * data.std**2
    diff = x[:, None, :] - t[:, :, None] * mu[None]
    logp = np.log(data.weight_array)[None] - 0.5 * np.sum(diff**2, axis=2) / s2
    post = np.exp(logp - logp.max(axis=1, keepdims=True))
    post /= post.sum(axis=1, keepdims=True)
    # per component: E[x1 | x_t] - E[x0 | x_t]
    gain = (t * data.std**2 - (1.0 - t)) / s2
    v_k = mu[None] + gain[:, :, None] * diff
    return np.einsum("bk,bkd->bd", post, v_k)
