"""Box constraints ``l <= x <= u`` and the projection onto them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch

# Index classes of the box (finiteness pattern of each coordinate).
BOTH_FINITE = 1
UPPER_ONLY = 2
LOWER_ONLY = 3
FREE = 4


@dataclass(frozen=True)
class Bounds:
    """Feasible box; entries of ``lower`` may be ``-inf``, of ``upper`` ``+inf``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).copy()
        upper = np.asarray(self.upper, dtype=float).copy()
        if lower.shape != upper.shape or lower.ndim != 1:
            raise DimensionMismatch(
                f"bounds shapes differ: {lower.shape} vs {upper.shape}")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValueError("bounds must not contain NaN")
        if not np.all(lower < upper):
            raise ValueError("every lower bound must be strictly below its upper bound")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def size(self) -> int:
        return self.lower.size

    def index_classes(self) -> np.ndarray:
        """Class 1..4 of every coordinate: both bounds, upper only, lower only, none."""
        has_l = np.isfinite(self.lower)
        has_u = np.isfinite(self.upper)
        cls = np.full(self.size, FREE, dtype=int)
        cls[has_l & has_u] = BOTH_FINITE
        cls[~has_l & has_u] = UPPER_ONLY
        cls[has_l & ~has_u] = LOWER_ONLY
        return cls

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


def project_box(z, bounds: Bounds) -> np.ndarray:
    """Componentwise ``median(l, z, u)``.

    For a separable box this is also the projection in the norm induced by
    any positive diagonal matrix, so the scaling never needs to be passed.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != bounds.lower.shape:
        raise DimensionMismatch(f"point has shape {z.shape}, bounds {bounds.lower.shape}")
    return np.minimum(np.maximum(z, bounds.lower), bounds.upper)
