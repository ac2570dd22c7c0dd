"""Unit-sphere primitives: tangent projection, retraction and the two update rules.

All radii live in the diagonal matrix ``D``, so every point here is on the
unit sphere. Column-wise versions operate on a (d, k) matrix whose columns
are independent sphere points.
"""
from __future__ import annotations

import numpy as np

# tolerances, double precision throughout
UNIT_NORM_TOL = 1e-9
TANGENT_TOL = 1e-10
ZERO_NORM_GUARD = 1e-12


class RetractionError(ArithmeticError):
    """A retraction would divide by a (near) zero norm."""

    def __init__(self, message, column=None):
        super().__init__(message if column is None else f"{message} (column {column})")
        self.column = column


def _check_unit(x, tol=UNIT_NORM_TOL):
    n = np.linalg.norm(x, axis=0)
    if np.any(np.abs(n - 1.0) > tol):
        raise ValueError(f"point is not on the unit sphere: norm {n}")


def project_tangent(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Component of ``y`` orthogonal to the unit vector ``x``: ``y - (x.y) x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_unit(x)
    return y - np.sum(x * y, axis=0) * x


def retract(x: np.ndarray, t: np.ndarray, h: float = 1.0) -> np.ndarray:
    """``(x + h t) / ||x + h t||``; raises instead of producing NaN."""
    v = np.asarray(x, dtype=float) + h * np.asarray(t, dtype=float)
    n = np.linalg.norm(v, axis=0)
    bad = np.flatnonzero(np.atleast_1d(n) <= ZERO_NORM_GUARD)
    if bad.size:
        col = int(bad[0]) if v.ndim == 2 else None
        raise RetractionError("retraction through the origin", column=col)
    return v / n


def rsgd_step(x: np.ndarray, euclid_grad: np.ndarray, h: float) -> np.ndarray:
    """One Riemannian gradient step: tangent descent direction, then retraction."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(euclid_grad, dtype=float)
    s = np.sum(x * g, axis=0) * x - g
    return retract(x, s, h)


def projected_step(x: np.ndarray, euclid_grad: np.ndarray, h: float) -> np.ndarray:
    """Euclidean step followed by renormalisation onto the sphere."""
    return retract(x, -np.asarray(euclid_grad, dtype=float), h)


def random_sphere_point(d: int, seed=None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Normalised standard-normal sample; ``rng`` takes precedence over ``seed``."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(seed)
    while True:
        v = rng.standard_normal(d)
        n = np.linalg.norm(v)
        if n > ZERO_NORM_GUARD:
            return v / n


def random_sphere_columns(d: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return np.stack([random_sphere_point(d, rng=rng) for _ in range(k)], axis=1) if k else np.zeros((d, 0))


def norm_drift(x: np.ndarray) -> np.ndarray:
    """Absolute deviation of each column norm from one."""
    return np.abs(np.linalg.norm(x, axis=0) - 1.0)
