"""Lattice solution against the tunnel asymptotics exp(−S/h)·√R."""
import logging

import numpy as np
import pandas as pd

from core.density import density_at, shocks_at
from core.manifold import curve_at, essential
from oracle.kf_lattice import kf_lattice, lattice_from_initial
from utils.errors import ConfigurationError
from utils.parallel import ordered_map

logger = logging.getLogger(__name__)

COLLAR_CELLS = 5
COLLAR_H = 3.0
TUNNEL_COLUMNS = ["h", "E_of_h", "fitted_order", "n_compare"]


def comparison_set(gd, t, x, h, dx, window=None):
    """Lattice nodes covered by exactly one branch, away from shocks by 5Δx + 3h."""
    curve = curve_at(gd.fan, t)
    covers = np.zeros(x.shape, dtype=int)
    for b in curve.branches:
        covers += b.covers(x)
    ok = covers == 1
    collar = COLLAR_CELLS * dx + COLLAR_H * h
    for _, state in shocks_at(gd, t):
        ok &= np.abs(x - state["x_s"]) > collar
    if window is not None:
        ok &= (x >= window[0]) & (x <= window[1])
    return ok


def tunnel_error(gd, lattice, window=None):
    """E(h) = max |u e^{S/h} − √R| over the comparison set, and the set size."""
    t, h, dx = lattice.t, lattice.h, lattice.dx
    x = np.asarray(lattice.x_grid, dtype=float)
    ok = comparison_set(gd, t, x, h, dx, window)
    if not ok.any():
        raise ConfigurationError(f"tunnel comparison set is empty at t={t:.6g}, h={h:g}")
    xq = x[ok]
    S = essential(curve_at(gd.fan, t), xq).S
    R = density_at(gd, t, xq)
    with np.errstate(over="ignore", invalid="ignore"):
        scaled = lattice.values[ok] * np.exp(S / h)
    diff = np.abs(scaled - np.sqrt(R))
    diff = diff[np.isfinite(diff)]
    if diff.size == 0:
        raise ConfigurationError(f"tunnel comparison set is empty at t={t:.6g}, h={h:g}")
    return float(diff.max()), int(diff.size)


def fitted_order(h_values, errors):
    """Slope of log E against log h; NaN with fewer than two usable points."""
    h_values, errors = np.asarray(h_values, dtype=float), np.asarray(errors, dtype=float)
    good = errors > 0
    if good.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(h_values[good]), np.log(errors[good]), 1)[0])


def tunnel_compare(gd, lattices, window=None):
    """One row per lattice (one h each) with E(h) and the fitted order over the schedule."""
    rows = []
    for lattice in lattices:
        E, n = tunnel_error(gd, lattice, window)
        rows.append({"h": lattice.h, "E_of_h": E, "n_compare": n})
        logger.info("Tunnel h=%.4g: E=%.4g over %d points", lattice.h, E, n)
    frame = pd.DataFrame(rows).sort_values("h", ascending=False, ignore_index=True)
    frame["fitted_order"] = fitted_order(frame["h"], frame["E_of_h"])
    return frame[TUNNEL_COLUMNS]


def run_lattices(model, S0, rho0, h_schedule, x_range, dx, T, threads=1):
    """Lattice runs across the h schedule, one independent run per h."""
    if not h_schedule:
        raise ConfigurationError("tunnel study needs a non-empty h schedule")

    def one(h):
        start = lattice_from_initial(S0, rho0, h, x_range[0], x_range[1], dx)
        return kf_lattice(model, start, T)[-1]

    return ordered_map(one, list(h_schedule), threads)
