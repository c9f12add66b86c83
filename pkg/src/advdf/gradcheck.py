"""Central finite-difference checks for hand-written adjoints.

All checks run in float64 with a default step of 1e-6, probing random
directions so large inputs stay cheap to verify.
"""

from __future__ import annotations

import numpy as np


def relative_error(a: float, b: float, scale: float = 1.0) -> float:
    denom = max(abs(a), abs(b), scale * 1e-12)
    return abs(a - b) / denom


def directional_derivative(f, x: np.ndarray, v: np.ndarray, h: float = 1e-6) -> float:
    """Central difference of a scalar-valued f along direction v."""
    return (f(x + h * v) - f(x - h * v)) / (2.0 * h)


def check_vjp(forward, vjp, x: np.ndarray, rng: np.random.Generator,
              n_dirs: int = 3, h: float = 1e-6) -> float:
    """Max relative error between <vjp(u), v> and the central difference of
    <u, forward(.)> along random directions v, for random cotangents u."""
    x = np.asarray(x, dtype=np.float64)
    y = forward(x)
    worst = 0.0
    for _ in range(n_dirs):
        u = rng.standard_normal(y.shape)
        v = rng.standard_normal(x.shape)
        v /= np.linalg.norm(v.ravel())
        analytic = float(np.vdot(vjp(x, u), v))
        numeric = directional_derivative(lambda z: float(np.vdot(u, forward(z))), x, v, h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
