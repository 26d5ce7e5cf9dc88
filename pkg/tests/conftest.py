import numpy as np
import pytest

from coopdrive.config import PipelineConfig


def finite_difference(f, x, eps=1e-5):
    """Central finite differences of a scalar function over every entry."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def grad_rel_err(analytic, fd):
    a, f = np.asarray(analytic), np.asarray(fd)
    scale = max(np.abs(a).max(initial=0.0), np.abs(f).max(initial=0.0), 1e-3)
    return float(np.abs(a - f).max(initial=0.0) / scale)


@pytest.fixture
def small_cfg():
    """Desk-scale-but-fast pipeline configuration for end-to-end tests."""
    return PipelineConfig(grid_h=20, grid_w=20, channels=8,
                          image_width=32, image_height=24,
                          encoder_layers=2, n_det_queries=6, det_layers=2,
                          modes=2, horizon=4, seed=0, detector="oracle")
