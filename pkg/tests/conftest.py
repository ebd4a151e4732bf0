import numpy as np
import pytest

from sgpsysid.kernels import make_preset
from sgpsysid.likelihood import precompute

PRESETS = ("dc-m", "tcss-m", "dc", "tc", "ss")


def random_feasible(bounds, rng, scale=1.0):
    """Random interior point of a preset box (finite bounds sampled uniformly)."""
    lo, hi = bounds.lower, bounds.upper
    x = np.empty(bounds.size)
    for i in range(bounds.size):
        if np.isfinite(hi[i]):
            x[i] = rng.uniform(lo[i], hi[i])
        else:
            x[i] = lo[i] + scale * rng.uniform(0.05, 2.0)
    return x


def random_problem(preset, n, rows, seed, keep=True):
    rng = np.random.default_rng(seed)
    N = n + rows
    u = rng.standard_normal(N)
    y = np.convolve(u, 0.8 ** np.arange(1, n + 1))[:N] + 0.3 * rng.standard_normal(N)
    spec, bounds, x0 = make_preset(preset, n)
    return precompute(u, y, n, spec, keep_regressor=keep), bounds, x0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
