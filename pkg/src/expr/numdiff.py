import numpy as np

FIRST_STEP = 1e-6
SECOND_STEP = 1e-4


def d_dx(fn, x, rel_step=FIRST_STEP, **kwargs):
    """Central difference with step rel_step*(1+|x|)."""
    x = np.asarray(x, dtype=float)
    h = rel_step * (1.0 + np.abs(x))
    return (fn(x + h, **kwargs) - fn(x - h, **kwargs)) / (2.0 * h)


def d2_dx2(fn, x, rel_step=SECOND_STEP, **kwargs):
    x = np.asarray(x, dtype=float)
    h = rel_step * (1.0 + np.abs(x))
    return (fn(x + h, **kwargs) - 2.0 * fn(x, **kwargs) + fn(x - h, **kwargs)) / (h * h)
