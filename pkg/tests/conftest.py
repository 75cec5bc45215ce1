import numpy as np
import pytest


def numeric_gradient(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. x, in place.

    ``f`` must recompute the scalar from the current contents of ``x``;
    x is perturbed coordinate by coordinate and restored.
    """
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
