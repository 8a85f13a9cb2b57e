"""Finite-difference checks of the Hamilton–Jacobi and transport equations on an (t, x) grid."""
import logging
from dataclasses import dataclass

import numpy as np

from core.characteristics import a_coefficient
from core.density import density_at
from core.manifold import curve_at, essential
from utils.errors import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass
class EssentialGrid:
    times: np.ndarray
    x_grid: np.ndarray
    S: np.ndarray
    p: np.ndarray
    u: np.ndarray
    branch_id: np.ndarray


def essential_grid(fan, times, x_grid):
    """Essential S, p, u and branch ids at every (t, x) of the grid."""
    times = np.asarray(times, dtype=float)
    x_grid = np.asarray(x_grid, dtype=float)
    shape = (len(times), len(x_grid))
    S, p, u = np.empty(shape), np.empty(shape), np.empty(shape)
    ids = np.empty(shape, dtype=int)
    for k, t in enumerate(times):
        sol = essential(curve_at(fan, t), x_grid, allow_uncovered=True)
        S[k], p[k], u[k], ids[k] = sol.S, sol.p, sol.u, sol.branch_id
    return EssentialGrid(times, x_grid, S, p, u, ids)


def regular_mask(branch_id):
    """Interior points whose 3x3 stencil stays on one covered branch."""
    ids = np.asarray(branch_id)
    if ids.ndim != 2 or min(ids.shape) < 3:
        raise ConfigurationError("residual grids need at least 3 points along each axis")
    centre = ids[1:-1, 1:-1]
    ok = centre >= 0
    for dk in (-1, 0, 1):
        for dj in (-1, 0, 1):
            ok &= ids[1 + dk:ids.shape[0] - 1 + dk, 1 + dj:ids.shape[1] - 1 + dj] == centre
    mask = np.zeros(ids.shape, dtype=bool)
    mask[1:-1, 1:-1] = ok
    return mask


def _central(values, times, x_grid):
    dt = (values[2:, 1:-1] - values[:-2, 1:-1]) / (times[2:] - times[:-2])[:, None]
    dx = (values[1:-1, 2:] - values[1:-1, :-2]) / (x_grid[2:] - x_grid[:-2])[None, :]
    return dt, dx


def hj_field(model, S, times, x_grid):
    """|S_t + P(x, S_x, t)| at interior points by central differences (NaN on the border)."""
    S = np.asarray(S, dtype=float)
    times = np.asarray(times, dtype=float)
    x_grid = np.asarray(x_grid, dtype=float)
    S_t, S_x = _central(S, times, x_grid)
    X, Tm = np.meshgrid(x_grid[1:-1], times[1:-1])
    out = np.full(S.shape, np.nan)
    out[1:-1, 1:-1] = np.abs(S_t + model.P(X, S_x, Tm))
    return out


def hj_residual(model, S, times, x_grid, mask=None):
    """max |S_t + P(x, S_x)| over the masked interior; 0 when nothing is regular."""
    field = hj_field(model, S, times, x_grid)
    if mask is None:
        mask = np.zeros(field.shape, dtype=bool)
        mask[1:-1, 1:-1] = True
    values = field[mask & np.isfinite(field)]
    return float(values.max()) if values.size else 0.0


def fan_hj_residual(fan, times, x_grid):
    grid = essential_grid(fan, times, x_grid)
    value = hj_residual(fan.model, grid.S, grid.times, grid.x_grid, regular_mask(grid.branch_id))
    logger.info("HJ residual on %dx%d grid: %.3g", len(grid.times), len(grid.x_grid), value)
    return value


def transport_residual(gd, times, x_grid, collar=0.0):
    """
    max |φ_t + u φ_x + ½(u_x + a) φ| with φ = √R over regular interior points.
    Equivalent to the continuity equation for R divided by 2φ.
    """
    grid = essential_grid(gd.fan, times, x_grid)
    R = np.stack([density_at(gd, t, grid.x_grid, collar) for t in grid.times])
    phi = np.sqrt(R)
    phi_t, phi_x = _central(phi, grid.times, grid.x_grid)
    _, u_x = _central(grid.u, grid.times, grid.x_grid)
    X, Tm = np.meshgrid(grid.x_grid[1:-1], grid.times[1:-1])
    inner_p = grid.p[1:-1, 1:-1]
    a = a_coefficient(gd.model, gd.a_mode, X, inner_p, Tm) + 0.0 * X
    field = np.full(phi.shape, np.nan)
    core = phi[1:-1, 1:-1]
    field[1:-1, 1:-1] = np.abs(phi_t + grid.u[1:-1, 1:-1] * phi_x + 0.5 * (u_x + a) * core)
    mask = regular_mask(grid.branch_id) & np.isfinite(field)
    value = float(field[mask].max()) if mask.any() else 0.0
    logger.info("Transport residual: %.3g over %d regular points", value, int(mask.sum()))
    return value
