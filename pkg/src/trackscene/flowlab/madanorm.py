"""Motion-aware adaptive normalization over a token grid.

For tokens ``F`` (N, d) and aligned motion features ``S`` (N, c)::

    alpha1, alpha2, beta1, beta2 = split(S @ w_s + b_s)
    F'  = Attn(gamma1 * alpha1 * LN(F)  + gamma1 * beta1)
    F'' = MLP (gamma2 * alpha2 * LN(F') + gamma2 * beta2)

Scales and biases are per token and channel; the gates are per channel.
There are no residual connections unless ``residual=True`` is requested.
Attention is single-head scaled dot-product, LN has no affine part and the
MLP uses the tanh approximation of GELU.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LN_EPS = 1e-6
_GELU_C = np.sqrt(2.0 / np.pi)

_PARAMS = ("w_s", "b_s", "gamma1", "gamma2", "w_q", "w_k", "w_v", "w_o", "w_m1", "b_m1", "w_m2", "b_m2")


@dataclass
class MAdaNormParams:
    w_s: np.ndarray  # (c, 4d): motion features -> alpha1, alpha2, beta1, beta2
    b_s: np.ndarray  # (4d,)
    gamma1: np.ndarray  # (d,)
    gamma2: np.ndarray  # (d,)
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_m1: np.ndarray  # (d, h)
    b_m1: np.ndarray
    w_m2: np.ndarray  # (h, d)
    b_m2: np.ndarray

    def __post_init__(self):
        for n in _PARAMS:
            setattr(self, n, np.asarray(getattr(self, n), np.float64))
        d = self.gamma1.shape[0]
        h = self.w_m1.shape[1]
        expected = {
            "b_s": (4 * d,), "gamma2": (d,), "w_q": (d, d), "w_k": (d, d), "w_v": (d, d),
            "w_o": (d, d), "w_m1": (d, h), "b_m1": (h,), "w_m2": (h, d), "b_m2": (d,),
        }
        for n, shape in expected.items():
            if getattr(self, n).shape != shape:
                raise ValueError(f"{n} has shape {getattr(self, n).shape}, expected {shape}")
        if self.w_s.ndim != 2 or self.w_s.shape[1] != 4 * d:
            raise ValueError(f"w_s must have shape (c, {4 * d}), got {self.w_s.shape}")
        if not all(np.all(np.isfinite(getattr(self, n))) for n in _PARAMS):
            raise ValueError("parameters must be finite")

    @classmethod
    def init(cls, channels: int, feature_channels: int, hidden: int, seed: int = 0, gate: float = 1.0):
        rng = np.random.default_rng(seed)
        d, c, h = channels, feature_channels, hidden
        w = lambda fan_in, shape: rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)
        return cls(
            w(c, (c, 4 * d)), rng.normal(0.0, 0.1, 4 * d),
            np.full(d, gate), np.full(d, gate),
            w(d, (d, d)), w(d, (d, d)), w(d, (d, d)), w(d, (d, d)),
            w(d, (d, h)), np.zeros(h), w(h, (h, d)), np.zeros(d),
        )

    @property
    def channels(self) -> int:
        return self.gamma1.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel() for n in _PARAMS])

    def with_flat(self, theta) -> "MAdaNormParams":
        theta = np.asarray(theta, np.float64)
        out, i = {}, 0
        for n in _PARAMS:
            shape = getattr(self, n).shape
            size = int(np.prod(shape))
            out[n] = theta[i : i + size].reshape(shape)
            i += size
        return MAdaNormParams(**out)

    def replace(self, **kw) -> "MAdaNormParams":
        return MAdaNormParams(**{n: kw.get(n, getattr(self, n)) for n in _PARAMS})


def resample_tokens(features, n_tokens: int) -> np.ndarray:
    """Nearest-neighbour resampling of a (M, c) feature sequence to ``n_tokens`` rows."""
    features = np.asarray(features)
    m = features.shape[0]
    idx = np.minimum(((np.arange(n_tokens) + 0.5) * m / n_tokens).astype(np.int64), m - 1)
    return features[idx]


def resample_grid(features, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resize of a (h, w, c) patch grid, flattened to (height * width, c)."""
    features = np.asarray(features)
    rows = resample_tokens(np.arange(features.shape[0]), height)
    cols = resample_tokens(np.arange(features.shape[1]), width)
    return features[rows][:, cols].reshape(height * width, -1)


def layer_norm(x):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    return xc * inv, inv


def _layer_norm_backward(dy, y, inv):
    return inv * (dy - dy.mean(axis=-1, keepdims=True) - y * (dy * y).mean(axis=-1, keepdims=True))


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def _gelu_grad(x):
    th = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def modulation(S, p: MAdaNormParams):
    """Token-wise (alpha1, alpha2, beta1, beta2), each (N, d)."""
    a = np.asarray(S, np.float64) @ p.w_s + p.b_s
    return np.split(a, 4, axis=-1)


def madanorm_forward(F, S, p: MAdaNormParams, residual: bool = False, return_cache: bool = False):
    F = np.asarray(F, np.float64)
    S = np.asarray(S, np.float64)
    if F.ndim != 2 or F.shape[1] != p.channels:
        raise ValueError(f"tokens must have shape (N, {p.channels}), got {F.shape}")
    if S.ndim != 2 or S.shape[0] != F.shape[0] or S.shape[1] != p.w_s.shape[0]:
        raise ValueError(
            f"motion features must have shape ({F.shape[0]}, {p.w_s.shape[0]}), got {S.shape}; "
            "align them with resample_tokens first"
        )
    d = p.channels
    a1, a2, b1, b2 = modulation(S, p)

    ln1, inv1 = layer_norm(F)
    x1 = p.gamma1 * a1 * ln1 + p.gamma1 * b1
    q, k, v = x1 @ p.w_q, x1 @ p.w_k, x1 @ p.w_v
    attn = _softmax(q @ k.T / np.sqrt(d))
    o = attn @ v
    f1 = o @ p.w_o
    if residual:
        f1 = F + f1

    ln2, inv2 = layer_norm(f1)
    x2 = p.gamma2 * a2 * ln2 + p.gamma2 * b2
    hpre = x2 @ p.w_m1 + p.b_m1
    hact = gelu(hpre)
    f2 = hact @ p.w_m2 + p.b_m2
    if residual:
        f2 = f1 + f2
    if not return_cache:
        return f2
    cache = dict(
        F=F, S=S, a1=a1, a2=a2, b1=b1, b2=b2, ln1=ln1, inv1=inv1, x1=x1, q=q, k=k, v=v,
        attn=attn, o=o, f1=f1, ln2=ln2, inv2=inv2, x2=x2, hpre=hpre, hact=hact, residual=residual,
    )
    return f2, cache


def madanorm_backward(d_out, cache, p: MAdaNormParams):
    """Gradients of ``sum(d_out * output)``.

    Returns ``(dF, dS, dparams)`` where ``dparams`` is a
    :class:`MAdaNormParams` holding the parameter gradients.
    """
    c = cache
    d = p.channels
    g = {}
    d_f2 = np.asarray(d_out, np.float64)

    g["w_m2"] = c["hact"].T @ d_f2
    g["b_m2"] = d_f2.sum(axis=0)
    d_h = (d_f2 @ p.w_m2.T) * _gelu_grad(c["hpre"])
    g["w_m1"] = c["x2"].T @ d_h
    g["b_m1"] = d_h.sum(axis=0)
    d_x2 = d_h @ p.w_m1.T

    g["gamma2"] = np.sum(d_x2 * (c["a2"] * c["ln2"] + c["b2"]), axis=0)
    d_a2 = d_x2 * p.gamma2 * c["ln2"]
    d_b2 = d_x2 * p.gamma2
    d_f1 = _layer_norm_backward(d_x2 * p.gamma2 * c["a2"], c["ln2"], c["inv2"])
    if c["residual"]:
        d_f1 = d_f1 + d_f2

    g["w_o"] = c["o"].T @ d_f1
    d_o = d_f1 @ p.w_o.T
    attn = c["attn"]
    d_v = attn.T @ d_o
    d_attn = d_o @ c["v"].T
    d_score = attn * (d_attn - np.sum(d_attn * attn, axis=-1, keepdims=True)) / np.sqrt(d)
    d_q = d_score @ c["k"]
    d_k = d_score.T @ c["q"]
    x1 = c["x1"]
    g["w_q"], g["w_k"], g["w_v"] = x1.T @ d_q, x1.T @ d_k, x1.T @ d_v
    d_x1 = d_q @ p.w_q.T + d_k @ p.w_k.T + d_v @ p.w_v.T

    g["gamma1"] = np.sum(d_x1 * (c["a1"] * c["ln1"] + c["b1"]), axis=0)
    d_a1 = d_x1 * p.gamma1 * c["ln1"]
    d_b1 = d_x1 * p.gamma1
    d_F = _layer_norm_backward(d_x1 * p.gamma1 * c["a1"], c["ln1"], c["inv1"])
    if c["residual"]:
        d_F = d_F + d_f1

    d_mod = np.concatenate([d_a1, d_a2, d_b1, d_b2], axis=-1)
    g["w_s"] = c["S"].T @ d_mod
    g["b_s"] = d_mod.sum(axis=0)
    d_S = d_mod @ p.w_s.T
    return d_F, d_S, MAdaNormParams(**g)
