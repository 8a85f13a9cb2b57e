"""ε → 0 convergence of the regularized flow towards the δ-shock solution."""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import integrate
from scipy.interpolate import CubicSpline

from core.characteristics import integrate_fan
from core.density import build_generalized_density, shock_state
from core.manifold import track_shocks
from regularize.blend import RegularizationParams, blended_fan
from utils.errors import UnsupportedConfigurationError
from utils.parallel import ordered_map

logger = logging.getLogger(__name__)

FINE_WINDOW = 3.0      # in units of beta
FINE_ROWS_PER_BETA = 40
COLLAR = 3.0           # in units of beta
QUAD_LIMIT = 200
ROUNDOFF = 1e-12
ERROR_COLUMNS = ["sup_R_error", "e_error_at_t_ref", "e_error_at_T"]
STUDY_COLUMNS = ["epsilon", "beta", "A_shift", "sup_R_error", "t_ref", "e_error_at_t_ref",
                 "e_error_at_T", "minJ_over_eps"]


def limit_grid(x0_min, x0_max, n, x0_star=None, beta=None):
    """Uniform rows plus a refined block of ±3β around x0* that contains x0* ± β exactly."""
    grid = np.linspace(x0_min, x0_max, n)
    if x0_star is None:
        return grid
    half = FINE_WINDOW * beta
    fine = np.linspace(x0_star - half, x0_star + half, int(2 * FINE_WINDOW * FINE_ROWS_PER_BETA) + 1)
    grid = np.concatenate([grid[(grid < x0_star - half) | (grid > x0_star + half)], fine,
                           [x0_star - beta, x0_star + beta]])
    grid = np.unique(np.clip(grid, x0_min, x0_max))
    keep = np.concatenate([[True], np.diff(grid) > 1e-12 * (1 + np.abs(grid[1:]))])
    return grid[keep]


@dataclass
class StudyPoint:
    epsilon: float
    beta: float
    A_shift: float
    sup_R_error: float
    t_ref: float
    e_error_at_t_ref: float
    e_error_at_T: float
    minJ_over_eps: float
    e_errors: dict


def _increasing(x, y):
    order = np.argsort(x)
    x, y = x[order], y[order]
    keep = np.concatenate([[True], np.diff(x) > 0])
    return x[keep], y[keep]


def _spline(x, y):
    x, y = _increasing(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return (CubicSpline(x, y), x[0], x[-1]) if len(x) >= 4 else None


def _mass(rho0, x0_grid, a_int, lo, hi):
    """∫_lo^hi ρ0(y) exp(−a(y)) dy over labels; signed."""
    if hi == lo:
        return 0.0
    if np.all(a_int == 0):
        weight = lambda y: 1.0
    else:
        weight = lambda y: float(np.exp(-np.interp(y, x0_grid, a_int)))
    value, _ = integrate.quad(lambda y: float(rho0(y)) * weight(y), lo, hi, limit=QUAD_LIMIT)
    return value


def _shock_sides(shock, t):
    """Shock position and the absorbed label interval at t; the birth point before the shock exists."""
    if t < shock.t_birth:
        return shock.x_birth, shock.x0_birth, shock.x0_birth, 0.0
    path = shock.path
    ts = np.concatenate([[shock.t_birth], path["t"].to_numpy()])
    x0_l = float(np.interp(t, ts, np.concatenate([[shock.x0_birth], path["x0_l"].to_numpy()])))
    x0_r = float(np.interp(t, ts, np.concatenate([[shock.x0_birth], path["x0_r"].to_numpy()])))
    state = shock_state(shock, t)
    return state["x_s"], x0_l, x0_r, state["e"]


def _side_rows(x, x0, x_s, cut, left, x0_split):
    """Rows on one side of the shock label split whose positions clear x_s by more than `cut`."""
    if left:
        return (x0 < x0_split) & (x < x_s - cut) & np.isfinite(x)
    return (x0 > x0_split) & (x > x_s + cut) & np.isfinite(x)


def _R_error(plain_x, plain_R, plain_rows, eps_x, eps_R, eps_rows):
    """sup |R_ε − R| at the plain positions, with R_ε splined over the regularized rows."""
    ok = plain_rows & np.isfinite(plain_R)
    fit = _spline(eps_x[eps_rows], eps_R[eps_rows])
    if fit is None or not ok.any():
        return 0.0
    spline, lo, hi = fit
    xq = plain_x[ok]
    inside = (xq >= lo) & (xq <= hi)
    if not inside.any():
        return 0.0
    return float(np.max(np.abs(spline(xq[inside]) - plain_R[ok][inside])))


def _preimage(x, x0, rows, target):
    fit = _spline(x[rows], x0[rows])
    if fit is None:
        return None
    spline, lo, hi = fit
    if not lo <= target <= hi:
        return None
    return float(spline(target))


def _study_point(scenario, eps, reg):
    params = RegularizationParams(eps, beta=reg.get("beta"), profile=reg.get("profile", "tanh"),
                                  c_mode=reg.get("c_mode", "boundary"), t1=reg.get("t1", 0.1),
                                  C_target=reg.get("C_target", 1.0))
    beta = params.beta
    t_ref = float(reg.get("t_ref", 1.0))
    x0_min, x0_max = scenario.x0_range
    coarse = integrate_fan(scenario.model, scenario.S0, np.linspace(x0_min, x0_max, scenario.n_x0),
                           scenario.T, scenario.h_t, scenario.a_field, scenario.dS0, scenario.x_box)
    shocks, _ = track_shocks(coarse)
    if not shocks:
        logger.info("epsilon=%.3g: no shock, regularized flow equals the plain flow", eps)
        return StudyPoint(eps, beta, 0.0, 0.0, t_ref, 0.0, 0.0, np.nan, {})

    x0_star = shocks[0].x0_birth
    grid = limit_grid(x0_min, x0_max, scenario.n_x0, x0_star, beta)
    fan = integrate_fan(scenario.model, scenario.S0, grid, scenario.T, scenario.h_t, scenario.a_field,
                        scenario.dS0, scenario.x_box)
    shocks, merges = track_shocks(fan)
    gd = build_generalized_density(fan, scenario.rho0, shocks, merges, scenario.a_field,
                                   scenario.stratum_decay)
    shock = gd.shocks[0]
    bf = blended_fan(scenario.model, scenario.S0, params, scenario.T, scenario.h_t, grid, shock,
                     scenario.dS0, scenario.a_field)

    collar = COLLAR * beta
    sup_R = 0.0
    e_errors = {}
    for k, t in enumerate(bf.times):
        x_s, x0_l, x0_r, e_ref = _shock_sides(shock, float(t))
        plain_x, eps_x = fan.x[k], bf.x[k]
        plain_R, eps_R = gd.R[k], bf.R(scenario.rho0, k)
        edges = {}
        for left, split, target in ((True, x0_l, x_s - collar), (False, x0_r, x_s + collar)):
            plain_rows = _side_rows(plain_x, grid, x_s, collar, left, split) & (fan.J[k] > 0)
            eps_rows = _side_rows(eps_x, grid, x_s, 0.5 * collar, left, split) & (bf.J[k] > 0)
            sup_R = max(sup_R, _R_error(plain_x, plain_R, plain_rows, eps_x, eps_R, eps_rows))
            plain_near = _side_rows(plain_x, grid, x_s, 0.5 * collar, left, split) & (fan.J[k] > 0)
            edges[left] = (_preimage(plain_x, grid, plain_near, target),
                           _preimage(eps_x, grid, eps_rows, target))
        (xi_l, xi_eps_l), (xi_r, xi_eps_r) = edges[True], edges[False]
        if None in (xi_l, xi_eps_l, xi_r, xi_eps_r):
            continue
        # mass of the regularized flow in the collar minus the smooth mass the δ-shock solution puts there
        e_eps = (_mass(scenario.rho0, grid, bf.a_int[k], xi_eps_l, xi_eps_r)
                 - _mass(scenario.rho0, grid, fan.a_int[k], xi_l, x0_l)
                 - _mass(scenario.rho0, grid, fan.a_int[k], x0_r, xi_r))
        e_errors[float(t)] = abs(e_eps - e_ref)

    k_ref = int(np.argmin(np.abs(bf.times - t_ref)))
    e_ref_err = e_errors.get(float(bf.times[k_ref]), np.nan)
    e_T = e_errors.get(float(bf.times[-1]), np.nan)
    after = bf.times >= bf.t_ins
    minJ = float(np.min(bf.J[after][:, bf.inserted])) / eps if after.any() and bf.inserted.any() else np.nan
    logger.info("epsilon=%.3g: sup R error %.3g, e error %.3g at t=%.3g and %.3g at T, min J/eps %.3g",
                eps, sup_R, e_ref_err, bf.times[k_ref], e_T, minJ)
    return StudyPoint(eps, beta, bf.A_shift, sup_R, float(bf.times[k_ref]), e_ref_err, e_T, minJ, e_errors)


def strictly_decreasing(values):
    """Strict decrease along the schedule, or every value at roundoff (the shock-free case)."""
    values = np.asarray(values, dtype=float)
    if np.all(np.abs(values) <= ROUNDOFF):
        return True
    return bool(np.all(np.isfinite(values)) and np.all(np.diff(values) < 0))


def limit_study(scenario, eps_schedule, regularization=None, threads=1):
    """One row per ε; `frame.attrs['monotone']` flags whether every error column decreases strictly."""
    if not scenario.model.is_homogeneous:
        raise UnsupportedConfigurationError(
            "limit study needs a spatially homogeneous symbol; use surgery for the inhomogeneous case")
    reg = dict(regularization or {})
    schedule = sorted((float(e) for e in eps_schedule), reverse=True)
    points = ordered_map(lambda eps: _study_point(scenario, eps, reg), schedule, threads)
    frame = pd.DataFrame([{column: getattr(p, column) for column in STUDY_COLUMNS}
                          for p in points])[STUDY_COLUMNS]
    monotone = True
    for column in ERROR_COLUMNS:
        values = frame[column].to_numpy()
        if not strictly_decreasing(values):
            monotone = False
            logger.warning("limit study: %s does not decrease strictly along the schedule: %s", column, values)
    frame.attrs["monotone"] = monotone
    frame.attrs["e_errors"] = {p.epsilon: p.e_errors for p in points}
    return frame
