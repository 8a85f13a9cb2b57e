"""
ε-regularized characteristics for homogeneous symbols.

Each row switches from its own velocity to the plateau speed c(t) through
B((t − τ)/ε), where τ is the focal time of the insertion for inserted rows
and the time the plain flow feeds the row into the shock otherwise. Rows
start from x0 + Aε·w(x0), w the clipped ramp across the insertion, so the
insertion is dilated by Aε on each side and the outer data is translated.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.special import erf

from core.characteristics import initial_state, rk4_step, time_grid
from regularize.insertion import build_insertion
from utils.errors import ConfigurationError, TuningError

logger = logging.getLogger(__name__)

A_RANGE = (0.0, 100.0)
TUNE_ITER = 80
STEPS_PER_EPS = 8
C_MODES = ("boundary", "frozen")


# ---------------------- blend profiles ----------------------

def _tanh_profile(z):
    return 0.5 * (1.0 + np.tanh(z))


def _tanh_slope(z):
    return 0.5 / np.cosh(np.clip(z, -350, 350)) ** 2


def _erf_profile(z):
    return 0.5 * (1.0 + erf(z))


def _erf_slope(z):
    return np.exp(-np.square(np.clip(z, -40, 40))) / math.sqrt(math.pi)


PROFILES = {
    "tanh": (_tanh_profile, _tanh_slope),
    "erf": (_erf_profile, _erf_slope),
}


def get_profile(name):
    if name not in PROFILES:
        raise ConfigurationError(f"unknown B profile '{name}' (choose from {', '.join(PROFILES)})")
    return PROFILES[name]


def check_profile(name, z_max=40.0, n=4001):
    B, _ = get_profile(name)
    z = np.linspace(-z_max, z_max, n)
    values = B(z)
    ok = np.all(np.diff(values) >= 0) and values[0] < 1e-12 and values[-1] > 1 - 1e-12
    if not ok:
        raise ConfigurationError(f"B profile '{name}' is not a monotone 0 -> 1 switch")
    return True


@dataclass(frozen=True)
class RegularizationParams:
    epsilon: float
    beta: Optional[float] = None
    A_shift: Optional[float] = None
    profile: str = "tanh"
    t1: float = 0.1
    c_mode: str = "boundary"
    C_target: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive (got {self.epsilon})")
        if self.beta is None:
            object.__setattr__(self, "beta", math.sqrt(self.epsilon))
        if not self.beta > 0:
            raise ConfigurationError(f"beta must be positive (got {self.beta})")
        if self.epsilon > self.beta ** 2 * (1 + 1e-12):
            raise ConfigurationError(
                f"need epsilon <= beta^2 (epsilon={self.epsilon:g}, beta={self.beta:g})")
        if self.c_mode not in C_MODES:
            raise ConfigurationError(f"c_mode must be one of {C_MODES} (got '{self.c_mode}')")
        if self.t1 <= 0:
            raise ConfigurationError(f"t1 must be positive (got {self.t1})")
        check_profile(self.profile)


# ---------------------- plateau speed ----------------------

def plateau_speed(model, x_l, p_l, x_r, p_r, t=0.0):
    """Rankine–Hugoniot quotient of the end states; one-sided ∂P/∂p when they coincide."""
    dp = p_r - p_l
    if abs(dp) <= 1e-12:
        logger.warning("plateau speed: degenerate denominator |p_r - p_l| = %.3g, using dP/dp", abs(dp))
        return float(model.dP_dp(x_l, p_l, t))
    return float((model.P(x_r, p_r, t) - model.P(x_l, p_l, t)) / dp)


# ---------------------- absorption times ----------------------

def absorption_times(shock, x0_grid):
    """Time at which the plain flow feeds each row into `shock`; inf for rows it never reaches."""
    path = shock.path
    t = np.concatenate([[shock.t_birth], path["t"].to_numpy()])
    left = np.minimum.accumulate(np.concatenate([[shock.x0_birth], path["x0_l"].to_numpy()]))
    right = np.maximum.accumulate(np.concatenate([[shock.x0_birth], path["x0_r"].to_numpy()]))
    x0 = np.asarray(x0_grid, dtype=float)
    tau = np.full(x0.shape, np.inf)
    lm = (x0 <= shock.x0_birth) & (x0 >= left[-1])
    rm = (x0 > shock.x0_birth) & (x0 <= right[-1])
    tau[lm] = np.interp(x0[lm], left[::-1], t[::-1])
    tau[rm] = np.interp(x0[rm], right, t)
    return tau


def _segment_gradient(values, x0, mask):
    """np.gradient of `values` over each contiguous run of `mask`, zero elsewhere."""
    out = np.zeros_like(values)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return out
    breaks = np.flatnonzero(np.diff(idx) > 1)
    for run in np.split(idx, breaks + 1):
        if run.size >= 2:
            out[run] = np.gradient(values[run], x0[run])
    return out


# ---------------------- A shift ----------------------

def shift_ramp(x0, lo, hi):
    """w(x0): −1 left of [lo, hi], +1 right of it, linear in between; and dw/dx0."""
    x0 = np.asarray(x0, dtype=float)
    half = 0.5 * (hi - lo)
    w = np.clip((x0 - 0.5 * (hi + lo)) / half, -1.0, 1.0)
    dw = np.where((x0 >= lo) & (x0 <= hi), 1.0 / half, 0.0)
    return w, dw


def shifted_start(x0, lo, hi, A, eps):
    """Starting positions x0 + Aε·w(x0) and their Jacobian 1 + Aε·w'(x0)."""
    w, dw = shift_ramp(x0, lo, hi)
    return np.asarray(x0, dtype=float) + A * eps * w, 1.0 + A * eps * dw


def insertion_jacobian(insertion, params, A, T):
    """J(T) of the inserted rows: 1 + Aε/β − ∫_0^T (1 − B) K dt (independent of the row)."""
    B, _ = get_profile(params.profile)
    n = 2 * int(math.ceil(T * STEPS_PER_EPS / params.epsilon / 2)) + 1
    t = np.linspace(0.0, T, max(n, 3))
    K = np.interp(t, insertion.times, insertion.K)
    integrand = (1.0 - B((t - insertion.t_ins) / params.epsilon)) * K
    return 1.0 + A * params.epsilon / insertion.beta - integrate.simpson(integrand, x=t)


def tune_shift(insertion, params, T):
    """Smallest A in [0, 100] with J(T) >= C_target·ε/2 on the insertion."""
    if T <= insertion.t_ins:
        return 0.0
    target = 0.5 * params.C_target * params.epsilon
    lo, hi = A_RANGE
    if insertion_jacobian(insertion, params, lo, T) >= target:
        return lo
    if insertion_jacobian(insertion, params, hi, T) < target:
        raise TuningError(f"no A in [{lo:g}, {hi:g}] keeps J >= {target:.3g} on the insertion "
                          f"(epsilon={params.epsilon:g})")
    for _ in range(TUNE_ITER):
        mid = 0.5 * (lo + hi)
        if insertion_jacobian(insertion, params, mid, T) >= target:
            hi = mid
        else:
            lo = mid
    logger.info("Tuned A_shift=%.6g for epsilon=%.3g", hi, params.epsilon)
    return hi


# ---------------------- blended fan ----------------------

@dataclass
class BlendedFan:
    params: RegularizationParams
    A_shift: float
    x0_grid: np.ndarray
    times: np.ndarray
    x: np.ndarray
    J: np.ndarray
    a_int: np.ndarray
    B: np.ndarray
    c: np.ndarray
    tau: np.ndarray
    inserted: np.ndarray
    t_ins: float
    insertion: object = None

    def R(self, rho0, k):
        with np.errstate(divide="ignore"):
            return rho0(self.x0_grid) / np.abs(self.J[k]) * np.exp(-self.a_int[k])

    def absorbed_interval(self, k):
        """x0 span of rows with B >= 1/2 at stored step k (end points interpolated), or None."""
        B = self.B[k]
        rows = np.flatnonzero(B >= 0.5)
        if rows.size == 0:
            return None
        lo, hi = rows[0], rows[-1]
        x0 = self.x0_grid

        def edge(i, j):
            if B[j] == B[i]:
                return float(x0[i])
            return float(x0[i] + (0.5 - B[i]) * (x0[j] - x0[i]) / (B[j] - B[i]))

        left = edge(lo - 1, lo) if lo > 0 else float(x0[lo])
        right = edge(hi, hi + 1) if hi < len(x0) - 1 else float(x0[hi])
        return left, right

    def plateau_mass(self, rho0, k):
        span = self.absorbed_interval(k)
        if span is None:
            return 0.0
        a = self.a_int[k]
        weight = (lambda y: 1.0) if np.all(a == 0) else (
            lambda y: float(np.exp(-np.interp(y, self.x0_grid, a))))
        value, _ = integrate.quad(lambda y: float(rho0(y)) * weight(y), span[0], span[1], limit=200)
        return value


def blended_fan(model, S0, params, T, h_t, x0_grid, shock, dS0=None, a_field="auto"):
    """Regularized flow around the first shock of a homogeneous problem, stored on the plain time grid."""
    x0 = np.asarray(x0_grid, dtype=float)
    Y0 = initial_state(S0, x0, dS0)
    p0, curvature = Y0[1], Y0[4]
    u0 = lambda y: float(initial_state(S0, np.array([y]), dS0)[1][0])
    B_of, dB_of = get_profile(params.profile)
    eps = params.epsilon

    store = time_grid(T, h_t)
    insertion = build_insertion(model, u0, shock.x0_birth, params.beta, T, store)
    A = params.A_shift if params.A_shift is not None else tune_shift(insertion, params, T)
    inserted = insertion.contains(x0)
    x_start, J_start = shifted_start(x0, insertion.x_l, insertion.x_r, A, eps)
    tau_plain = absorption_times(shock, x0)
    tau = np.where(inserted, insertion.t_ins, np.maximum(tau_plain, insertion.t_ins))
    outer = ~inserted & np.isfinite(tau)
    dtau = _segment_gradient(np.where(outer, tau, 0.0), x0, outer)

    path = shock.path
    path_t = np.concatenate([[shock.t_birth], path["t"].to_numpy()])
    path_l = np.minimum.accumulate(np.concatenate([[shock.x0_birth], path["x0_l"].to_numpy()]))
    path_r = np.maximum.accumulate(np.concatenate([[shock.x0_birth], path["x0_r"].to_numpy()]))

    def boundary_speed(t):
        x0_l = min(insertion.x_l, float(np.interp(t, path_t, path_l)))
        x0_r = max(insertion.x_r, float(np.interp(t, path_t, path_r)))
        p_l, p_r = float(np.interp(x0_l, x0, p0)), float(np.interp(x0_r, x0, p0))
        return plateau_speed(model, 0.0, p_l, 0.0, p_r, t)

    c_frozen = boundary_speed(insertion.t_ins)
    speed = (lambda t: c_frozen) if params.c_mode == "frozen" else boundary_speed

    def rhs(t, Y):
        x = Y[0]
        with np.errstate(invalid="ignore", over="ignore"):
            z = (t - tau) / eps
            B, dB = B_of(z), dB_of(z)
        B = np.where(np.isfinite(tau), B, 0.0)
        dB = np.where(np.isfinite(tau), dB, 0.0)
        K, b = insertion.coefficients(t)
        v = np.where(inserted, -K * x0 + b, model.dP_dp(0.0, p0, t))
        w = np.where(inserted, -K, model.hess(0.0, p0, t) * curvature)
        c = speed(t)
        xdot = (1.0 - B) * v + B * c
        Jdot = (1.0 - B) * w - dB * dtau / eps * (c - v)
        if a_field in (None, "auto"):
            adot = np.zeros_like(x)
        else:
            adot = a_field(x, t, xdot) + 0.0 * x
        return np.stack([xdot, Jdot, adot])

    n_sub = max(1, int(math.ceil(STEPS_PER_EPS * (store[1] - store[0]) / eps)))
    Y = np.stack([x_start, J_start, np.zeros_like(x0)])
    out = np.empty((len(store), 3, len(x0)))
    Bs = np.empty((len(store), len(x0)))
    cs = np.empty(len(store))
    out[0] = Y
    for k in range(len(store)):
        if k > 0:
            h = (store[k] - store[k - 1]) / n_sub
            t = store[k - 1]
            for _ in range(n_sub):
                Y = rk4_step(rhs, t, Y, h)
                t = t + h
            out[k] = Y
        with np.errstate(invalid="ignore", over="ignore"):
            Bk = B_of((store[k] - tau) / eps)
        Bs[k] = np.where(np.isfinite(tau), Bk, 0.0)
        cs[k] = speed(store[k])
    logger.info("Blended fan: epsilon=%.3g, beta=%.3g, A=%.4g, %d rows, %d substeps per step",
                eps, params.beta, A, len(x0), n_sub)
    return BlendedFan(params, float(A), x0, store, out[:, 0], out[:, 1], out[:, 2], Bs, cs, tau,
                      inserted, insertion.t_ins, insertion)
