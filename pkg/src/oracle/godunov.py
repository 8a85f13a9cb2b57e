"""
First-order Godunov scheme for p_t + P(p, t)_x = 0 with a homogeneous convex flux.

The interface flux is the exact Riemann flux: the minimum of P over [p_l, p_r]
for p_l <= p_r (sonic point included) and the maximum of the end values otherwise.
"""
import logging
from dataclasses import dataclass
from typing import List

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from utils.errors import ConfigurationError, NoRootError, StabilityError, UnsupportedConfigurationError

logger = logging.getLogger(__name__)

CFL = 0.4
CFL_LIMIT = 0.5
SHOCK_FRACTION = 0.1
GODUNOV_COLUMNS = ["t", "x", "p", "u"]


@dataclass
class GodunovResult:
    x: np.ndarray            # cell centres
    times: np.ndarray
    p: np.ndarray            # (len(times), len(x))
    u: np.ndarray
    shocks: List[np.ndarray]
    dt: float

    def to_frame(self):
        frames = [pd.DataFrame({"t": t, "x": self.x, "p": self.p[k], "u": self.u[k]})
                  for k, t in enumerate(self.times)]
        return pd.concat(frames, ignore_index=True)[GODUNOV_COLUMNS]


def sonic_point(model, t=0.0):
    """p with dP/dp = 0, or ±inf when the flux is monotone on the momentum box."""
    v_lo, v_hi = model.velocity_range(0.0, t)
    if v_lo > 0:
        return -np.inf
    if v_hi < 0:
        return np.inf
    try:
        p, _ = model.legendre(0.0, 0.0, t)
    except NoRootError:
        return -np.inf
    return p


def riemann_flux(model, p_l, p_r, t=0.0, p_sonic=None):
    p_sonic = sonic_point(model, t) if p_sonic is None else p_sonic
    F_l = model.P(0.0, p_l, t)
    F_r = model.P(0.0, p_r, t)
    rarefaction = p_l <= p_r
    inside = rarefaction & (p_l <= p_sonic) & (p_sonic <= p_r)
    F_s = model.P(0.0, p_sonic, t) if np.isfinite(p_sonic) else 0.0
    return np.where(rarefaction, np.where(inside, F_s, np.minimum(F_l, F_r)), np.maximum(F_l, F_r))


def detect_shocks(p, x, fraction=SHOCK_FRACTION):
    """Interfaces of locally steepest compressive jumps above `fraction` of the total range."""
    jump = p[:-1] - p[1:]
    span = float(np.max(p) - np.min(p))
    if span <= 0:
        return np.array([])
    threshold = fraction * span
    mid = 0.5 * (x[:-1] + x[1:])
    steep = jump > threshold
    left = np.concatenate([[True], jump[1:] >= jump[:-1]])
    right = np.concatenate([jump[:-1] > jump[1:], [True]])
    return mid[steep & left & right]


def godunov(model, p0, T, x_grid, out_times=None, dt=None, cfl=CFL):
    """
    Evolve the momentum data p0 (callable of x or array of cell values) to T on the
    cell-centred grid x_grid with transmissive boundaries.
    """
    if not model.is_homogeneous:
        raise UnsupportedConfigurationError("Godunov oracle needs a spatially homogeneous symbol")
    x = np.asarray(x_grid, dtype=float)
    if len(x) < 3 or np.any(np.diff(x) <= 0):
        raise ConfigurationError("Godunov grid needs at least 3 increasing points")
    dx = float(np.min(np.diff(x)))
    p = np.array(p0(x) if callable(p0) else p0, dtype=float)
    out_times = np.array([T] if out_times is None else sorted(out_times), dtype=float)

    t = 0.0
    snaps, speed_max = [], 0.0
    k = 0
    while k < len(out_times) and out_times[k] <= 0:
        snaps.append(p.copy())
        k += 1
    while k < len(out_times):
        speed = float(np.max(np.abs(model.dP_dp(0.0, p, t))))
        speed_max = max(speed_max, speed)
        step = cfl * dx / max(speed, 1e-300) if dt is None else dt
        if step * speed / dx > CFL_LIMIT:
            raise StabilityError(f"CFL violation: dt*max|P'|/dx = {step * speed / dx:.3g} > {CFL_LIMIT}")
        step = min(step, out_times[k] - t)
        ext = np.concatenate([[p[0]], p, [p[-1]]])
        F = riemann_flux(model, ext[:-1], ext[1:], t, sonic_point(model, t))
        p = p - step / dx * (F[1:] - F[:-1])
        t += step
        if abs(t - out_times[k]) <= 1e-12 * max(1.0, out_times[k]):
            t = out_times[k]
            snaps.append(p.copy())
            k += 1

    P = np.array(snaps)
    U = model.dP_dp(0.0, P, 0.0)
    shocks = [detect_shocks(row, x) for row in P]
    logger.info("Godunov: %d cells, T=%.4g, max speed %.4g", len(x), T, speed_max)
    return GodunovResult(x, out_times, P, U, shocks, dt if dt is not None else cfl * dx / max(speed_max, 1e-300))


def l1_distance(a, b, x):
    return float(trapezoid(np.abs(np.asarray(a) - np.asarray(b)), x))
