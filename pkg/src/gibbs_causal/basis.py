"""Cubic (or general degree) B-spline bases with knots at the sample quartiles."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

QUARTILES = (0.25, 0.5, 0.75)


def empirical_quantile(x, q):
    """Quantiles by linear interpolation of order statistics (Hyndman-Fan type 7).

    Shared by knot placement and posterior interval summaries.
    """
    return np.quantile(np.asarray(x, dtype=float), q, method="linear")


@dataclass(frozen=True)
class SplineBasis:
    degree: int
    interior_knots: tuple
    boundary_knots: tuple

    def __post_init__(self):
        if self.degree < 1:
            raise ConfigurationError(f"spline degree must be >= 1, got {self.degree}")
        lo, hi = self.boundary_knots
        inner = np.asarray(self.interior_knots, dtype=float)
        if not lo < hi:
            raise ConfigurationError("boundary knots must satisfy min < max")
        if inner.size and (np.any(inner <= lo) or np.any(inner >= hi) or np.any(np.diff(inner) < 0)):
            raise ConfigurationError("interior knots must be sorted and strictly inside the boundary")

    @property
    def column_count(self) -> int:
        return len(self.interior_knots) + self.degree + 1

    @property
    def knot_vector(self) -> np.ndarray:
        lo, hi = self.boundary_knots
        p = self.degree
        return np.concatenate([np.full(p + 1, lo), np.asarray(self.interior_knots, float), np.full(p + 1, hi)])


def make_quartile_basis(x, degree: int = 3) -> SplineBasis:
    """Basis with three interior knots at the 25/50/75% sample quantiles of `x`."""
    x = np.asarray(x, dtype=float)
    if np.unique(x).size < 4:
        raise ConfigurationError("quartile basis needs at least 4 distinct values")
    knots = tuple(float(k) for k in empirical_quantile(x, QUARTILES))
    return SplineBasis(degree=int(degree), interior_knots=knots,
                       boundary_knots=(float(x.min()), float(x.max())))


def evaluate_basis(basis: SplineBasis, x) -> np.ndarray:
    """Evaluate every basis function at `x`, returning an ``(n, column_count)`` matrix.

    Uses the triangular Cox-de Boor scheme on the knot span containing each
    point, so only the ``degree + 1`` locally supported functions are computed.
    Points outside the boundary knots are clamped onto the boundary.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lo, hi = basis.boundary_knots
    outside = (x < lo) | (x > hi)
    if outside.any():
        logger.info("clamping %d out-of-range points to boundary knots", int(outside.sum()))
        x = np.clip(x, lo, hi)

    t = basis.knot_vector
    p = basis.degree
    m = basis.column_count
    # span index s with t[s] <= x < t[s+1]; the right boundary belongs to the last span
    span = np.searchsorted(t, x, side="right") - 1
    span = np.clip(span, p, m - 1)

    n = x.size
    vals = np.zeros((n, p + 1))
    vals[:, 0] = 1.0
    left = np.empty((n, p + 1))
    right = np.empty((n, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - t[span + 1 - j]
        right[:, j] = t[span + j] - x
        saved = np.zeros(n)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = vals[:, r] / denom
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved

    out = np.zeros((n, m))
    cols = span[:, None] - p + np.arange(p + 1)[None, :]
    np.put_along_axis(out, cols, vals, axis=1)
    return out
