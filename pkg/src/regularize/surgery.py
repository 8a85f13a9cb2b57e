"""
Lagrangian surgery for space-dependent symbols.

At t1* = t* + β the essential part of the curve is joined by a vertical
segment at the equal-action point and pulled back by the flow for a time t1.
The pulled-back curve is a graph over x with two angle points a1 < a2; the
rows between them are then blended into the plateau around t1*, after a
shift of Aε that dilates the segment and translates the rest of the curve.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from core.characteristics import a_coefficient, advance, rk4_step, time_grid
from core.manifold import locate_shock, seed_anchors, slice_fan
from regularize.blend import get_profile, plateau_speed, shifted_start
from utils.errors import ConfigurationError, RegularityError, TuningError, UnsupportedConfigurationError

logger = logging.getLogger(__name__)

SEGMENT_POINTS = 41
PULLBACK_SUBSTEPS = 16
SURGERY_TUNE_ITER = 20
STEPS_PER_EPS = 8


@dataclass
class SurgeredCurve:
    t_start: float
    t1_star: float
    x: np.ndarray
    p: np.ndarray
    S: np.ndarray
    i1: int
    i2: int
    x1_star: float
    p_l: float
    p_r: float

    @property
    def angle_points(self):
        return float(self.x[self.i1]), float(self.x[self.i2])


def surgery(model, fan, t_star, x0_star, beta, t1, n_segment=SEGMENT_POINTS):
    """Replace the fold at t* + β by a vertical segment and pull the curve back by t1."""
    if model.time_dependent:
        raise UnsupportedConfigurationError("surgery needs a time-independent symbol")
    k1 = int(round((t_star + beta) / fan.h_t))
    if k1 >= len(fan.times):
        raise ConfigurationError(f"t* + beta = {t_star + beta:.6g} lies beyond the fan (T={fan.T:.6g})")
    t1_star = float(fan.times[k1])
    if t1 <= 0 or t1 > t1_star:
        raise ConfigurationError(f"t1 must lie in (0, {t1_star:.6g}] (got {t1})")

    curve = slice_fan(fan, t1_star)
    spacing = float(np.max(np.diff(fan.x0_grid)))
    x0_l, x0_r = seed_anchors(curve, x0_star, spacing)
    shock = locate_shock(curve, x0_l, x0_r, 0)
    x_s, p_l, p_r = shock["x_s"], shock["p_l"], shock["p_r"]

    state = fan.state(k1)
    ok = np.isfinite(state.x)
    left = ok & (fan.x0_grid < shock["x0_l"]) & (state.x < x_s)
    right = ok & (fan.x0_grid > shock["x0_r"]) & (state.x > x_s)
    seg_p = np.linspace(p_l, p_r, n_segment)
    x = np.concatenate([state.x[left], np.full(n_segment, x_s), state.x[right]])
    p = np.concatenate([state.p[left], seg_p, state.p[right]])
    S = np.concatenate([state.S[left], np.full(n_segment, shock["S_l"]), state.S[right]])
    i1 = int(left.sum())
    i2 = i1 + n_segment - 1

    zeros = np.zeros_like(x)
    Y = np.stack([x, p, S, zeros, zeros, zeros])
    n_sub = max(PULLBACK_SUBSTEPS, int(math.ceil(4 * t1 / fan.h_t)))
    back = advance(model, "auto", Y, t1_star, t1_star - t1, n_sub)
    if np.any(np.diff(back[0]) <= 0):
        bad = int(np.argmin(np.diff(back[0])))
        raise RegularityError(
            f"pulled-back curve folds near x={back[0][bad]:.6g} (t1={t1:g} too large)")
    result = SurgeredCurve(t1_star - t1, t1_star, back[0], back[1], back[2], i1, i2, x_s, p_l, p_r)
    a1, a2 = result.angle_points
    logger.info("Surgery at t1*=%.6g, x1*=%.6g: angle points a1=%.6g, a2=%.6g", t1_star, x_s, a1, a2)
    return result


def forward_segment(model, curve, t1_star=None):
    """Flow the pulled-back curve forward to t1*; recovers the vertical segment."""
    t1_star = curve.t1_star if t1_star is None else t1_star
    zeros = np.zeros_like(curve.x)
    Y = np.stack([curve.x, curve.p, curve.S, zeros, zeros, zeros])
    n_sub = max(PULLBACK_SUBSTEPS, int(math.ceil(400 * (t1_star - curve.t_start))))
    return advance(model, "auto", Y, curve.t_start, t1_star, n_sub)


@dataclass
class SurgeredFan:
    x0_grid: np.ndarray
    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    J: np.ndarray
    a_int: np.ndarray
    blended: np.ndarray
    A_shift: float
    t1_star: float
    c: np.ndarray


def _piecewise_slope(p, x, i1, i2):
    slope = np.zeros_like(p)
    for lo, hi in ((0, i1), (i1, i2), (i2, len(p) - 1)):
        if hi - lo >= 1:
            slope[lo:hi + 1] = np.gradient(p[lo:hi + 1], x[lo:hi + 1])
    return slope


def _run(model, curve, params, A, T, h_t, a_field, rows=None):
    B_of, _ = get_profile(params.profile)
    eps = params.epsilon
    a1, a2 = curve.angle_points
    x, J = shifted_start(curve.x, a1, a2, A, eps)
    p = curve.p
    blended = np.zeros(len(x), dtype=bool)
    blended[curve.i1 + 1:curve.i2] = True
    dpdx = _piecewise_slope(p, curve.x, curve.i1, curve.i2)
    if rows is not None:
        x, p, J, dpdx, blended = x[rows], p[rows], J[rows], dpdx[rows], blended[rows]
        left_col, right_col = 0, len(x) - 1
    else:
        left_col, right_col = curve.i1, curve.i2
    frozen = plateau_speed(model, curve.x1_star, curve.p_l, curve.x1_star, curve.p_r)

    def speed(t, xx, pp):
        if params.c_mode == "frozen":
            return frozen
        return plateau_speed(model, xx[left_col], pp[left_col], xx[right_col], pp[right_col], t)

    def rhs(t, Y):
        xx, pp, dx, dp = Y[0], Y[1], Y[2], Y[3]
        c = speed(t, xx, pp)
        B = np.where(blended, B_of((t - curve.t1_star) / eps), 0.0)
        Pp = model.dP_dp(xx, pp, t)
        Pxp = model.d2P_dxdp(xx, pp, t)
        g = 1.0 - B
        return np.stack([
            g * Pp + B * c,
            -g * model.dP_dx(xx, pp, t),
            g * (Pxp * dx + model.hess(xx, pp, t) * dp),
            -g * (model.d2P_dx2(xx, pp, t) * dx + Pxp * dp),
            a_coefficient(model, a_field, xx, pp, t) + 0.0 * xx,
        ])

    span = T - curve.t_start
    store = curve.t_start + time_grid(span, h_t)
    n_sub = max(1, int(math.ceil(STEPS_PER_EPS * (store[1] - store[0]) / eps)))
    Y = np.stack([x, p, J, dpdx, np.zeros_like(x)])
    out = np.empty((len(store),) + Y.shape)
    cs = np.empty(len(store))
    out[0] = Y
    cs[0] = speed(store[0], Y[0], Y[1])
    for k in range(1, len(store)):
        h = (store[k] - store[k - 1]) / n_sub
        t = store[k - 1]
        for _ in range(n_sub):
            Y = rk4_step(rhs, t, Y, h)
            t = t + h
        out[k] = Y
        cs[k] = speed(store[k], Y[0], Y[1])
    return store, out, blended, cs


def _segment_min_J(model, curve, params, A, T, h_t, a_field):
    rows = np.arange(curve.i1, curve.i2 + 1)
    store, out, blended, _ = _run(model, curve, params, A, T, h_t, a_field, rows)
    after = store >= curve.t1_star
    return float(np.min(out[after][:, 2][:, blended])) if after.any() else np.inf


def surgered_fan(model, curve, params, T, h_t, a_field="auto"):
    """Blended flow of the pulled-back curve; only the rows strictly between a1 and a2 blend."""
    if T <= curve.t1_star:
        raise ConfigurationError(f"T={T:g} must exceed t1*={curve.t1_star:.6g}")
    A = params.A_shift
    if A is None:
        target = 0.5 * params.C_target * params.epsilon
        lo, hi = 0.0, 100.0
        if _segment_min_J(model, curve, params, lo, T, h_t, a_field) >= target:
            A = lo
        elif _segment_min_J(model, curve, params, hi, T, h_t, a_field) < target:
            raise TuningError(f"no A in [0, 100] keeps J >= {target:.3g} between the angle points")
        else:
            for _ in range(SURGERY_TUNE_ITER):
                mid = 0.5 * (lo + hi)
                if _segment_min_J(model, curve, params, mid, T, h_t, a_field) >= target:
                    hi = mid
                else:
                    lo = mid
            A = hi
        logger.info("Tuned A_shift=%.6g on the surgered curve", A)
    store, out, blended, cs = _run(model, curve, params, A, T, h_t, a_field)
    return SurgeredFan(curve.x, store, out[:, 0], out[:, 1], out[:, 2], out[:, 4], blended, float(A),
                       curve.t1_star, cs)
