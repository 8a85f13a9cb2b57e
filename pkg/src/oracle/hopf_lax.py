"""Brute-force Hopf–Lax minimiser S(x, t) = min_y [S0(y) + t L((x − y)/t)]."""
import logging

import numpy as np

from utils.errors import BoxTooSmallError, ConfigurationError, UnsupportedConfigurationError

logger = logging.getLogger(__name__)

GRID_POINTS = 2001
SPEED_CAP = 10.0


def lagrangian(model, v):
    """L(v) = sup_p [v p − P(p)] for a homogeneous symbol; +inf outside the attainable velocities."""
    v = np.asarray(v, dtype=float)
    v_lo, v_hi = model.velocity_range(0.0)
    L = np.full(v.shape, np.inf)
    ok = (v > v_lo) & (v < v_hi)
    if ok.any():
        _, L[ok] = model.legendre_array(np.zeros(int(ok.sum())), v[ok])
    return L


def _window(model, x, t):
    v_lo, v_hi = model.velocity_range(0.0)
    v_lo, v_hi = max(float(v_lo), -SPEED_CAP), min(float(v_hi), SPEED_CAP)
    return x - t * v_hi, x - t * v_lo


def _minimise(model, S0, x, t, y):
    values = S0(y) + t * lagrangian(model, (x - y) / t)
    i = int(np.argmin(values))
    if not np.isfinite(values[i]):
        raise BoxTooSmallError(f"no feasible y for x={x:.6g}, t={t:.6g}")
    if i == 0 or i == len(y) - 1 or not np.isfinite(values[i - 1]) or not np.isfinite(values[i + 1]):
        raise BoxTooSmallError(
            f"Hopf-Lax minimiser at the edge of the search box (y={y[i]:.6g}) for x={x:.6g}, t={t:.6g}")
    return i, values


def hopf_lax(model, S0, x, t, y_range=None, n=GRID_POINTS):
    if not model.is_homogeneous:
        raise UnsupportedConfigurationError("Hopf-Lax needs a spatially homogeneous symbol")
    if model.time_dependent:
        raise UnsupportedConfigurationError("Hopf-Lax needs a time-independent symbol")
    if t <= 0:
        raise ConfigurationError(f"Hopf-Lax needs t > 0 (got {t})")
    x = float(x)
    lo, hi = y_range if y_range is not None else _window(model, x, t)
    y = np.linspace(lo, hi, n)
    i, _ = _minimise(model, S0, x, t, y)
    # one refinement around the coarse argmin
    y = np.linspace(y[i - 1], y[i + 1], n)
    j, values = _minimise(model, S0, x, t, y)
    return float(values[j])


def hopf_lax_grid(model, S0, x_grid, t, y_range=None, n=GRID_POINTS):
    return np.array([hopf_lax(model, S0, x, t, y_range, n) for x in np.asarray(x_grid, dtype=float)])
