"""Central-difference gradient checking."""
from __future__ import annotations

import numpy as np


def relative_error(a, b, floor: float = 1e-12) -> np.ndarray:
    """Elementwise |a - b| / max(|a|, |b|); entries where both are below ``floor`` count as exact."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    den = np.maximum(np.abs(a), np.abs(b))
    return np.where(den < floor, 0.0, np.abs(a - b) / np.where(den < floor, 1.0, den))


def numerical_gradient(f, x, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``, one coordinate at a time."""
    x = np.array(x, np.float64)
    g = np.empty_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f(x)
        flat[i] = old - step
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def grad_check(f, grad, x, step: float = 1e-5, directions: int = 0, seed: int = 0) -> float:
    """Worst relative error between ``grad(x)`` and central differences of ``f``.

    With ``directions == 0`` every coordinate is checked. Otherwise the
    directional derivative along that many random unit vectors is compared
    with ``grad(x) . u``, which is cheaper for large parameter vectors.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.array(x, np.float64)
    analytic = np.asarray(grad(x), np.float64)
    if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(x))):
        raise ValueError("non-finite gradient or evaluation point")
    if directions <= 0:
        numeric = numerical_gradient(f, x, step)
        if not np.all(np.isfinite(numeric)):
            raise ValueError("non-finite function values during differencing")
        return float(np.max(relative_error(analytic, numeric)))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(directions):
        u = rng.standard_normal(x.shape)
        u /= np.linalg.norm(u)
        numeric = (f(x + step * u) - f(x - step * u)) / (2.0 * step)
        if not np.isfinite(numeric):
            raise ValueError("non-finite function values during differencing")
        worst = max(worst, float(relative_error(np.sum(analytic * u), numeric)))
    return worst
