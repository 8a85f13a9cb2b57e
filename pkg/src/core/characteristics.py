"""
Fans of characteristics: RK4 for the Hamiltonian system together with the
action, the variational pair (δx, δp) and the accumulated coefficient ∫a dt.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from expr.numdiff import d2_dx2, d_dx
from utils.errors import ConfigurationError, OffGridError, StepRejectedError
from utils.parallel import ordered_map

logger = logging.getLogger(__name__)

STEP_TOLERANCE = 1e-8
CHUNK_ROWS = 256
GRID_TOL = 1e-9
J_FLOOR = np.finfo(float).tiny
N_COMPONENTS = 6  # x, p, S, δx, δp, a_int
FAN_COLUMNS = ["t", "x0", "x", "p", "S", "J", "a_int"]


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    x: float
    p: float
    S: float
    J: float
    a_int: float


@dataclass(frozen=True)
class FanState:
    """All rows of a fan at one instant (grid or interpolated)."""
    t: float
    x0: np.ndarray
    x: np.ndarray
    p: np.ndarray
    S: np.ndarray
    J: np.ndarray
    dp: np.ndarray
    a_int: np.ndarray


def a_coefficient(model, a_field, x, p, t):
    """a = −∂²P/∂x∂p in auto mode, otherwise f(x, u) with u = ∂P/∂p."""
    if a_field is None or a_field == "auto":
        return -model.d2P_dxdp(x, p, t)
    return a_field(x, t, model.dP_dp(x, p, t))


def hamiltonian_rhs(model, a_field, t, Y):
    x, p, _, dx, dp, _ = Y
    Pp = model.dP_dp(x, p, t)
    Pxp = model.d2P_dxdp(x, p, t)
    return np.stack([
        Pp,
        -model.dP_dx(x, p, t),
        p * Pp - model.P(x, p, t),
        Pxp * dx + model.hess(x, p, t) * dp,
        -model.d2P_dx2(x, p, t) * dx - Pxp * dp,
        a_coefficient(model, a_field, x, p, t) + 0.0 * x,
    ])


def rk4_step(rhs, t, Y, h, k1=None):
    if k1 is None:
        k1 = rhs(t, Y)
    k2 = rhs(t + h / 2, Y + h / 2 * k1)
    k3 = rhs(t + h / 2, Y + h / 2 * k2)
    k4 = rhs(t + h, Y + h * k3)
    return Y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def advance(model, a_field, Y, t0, t1, n_sub=8):
    """Re-integrate states Y (shape 6×n) from t0 to t1 with n_sub RK4 substeps."""
    rhs = lambda t, Z: hamiltonian_rhs(model, a_field, t, Z)
    h = (t1 - t0) / n_sub
    t = t0
    for _ in range(n_sub):
        Y = rk4_step(rhs, t, Y, h)
        t = t + h
    return Y


def initial_state(S0, x0, dS0=None):
    x0 = np.asarray(x0, dtype=float)
    if dS0 is not None:
        p0 = dS0(x0)
        curvature = d_dx(dS0, x0)
    else:
        p0 = d_dx(S0, x0)
        curvature = d2_dx2(S0, x0)
    return np.stack([x0, p0, S0(x0), np.ones_like(x0), curvature, np.zeros_like(x0)])


@dataclass
class Fan:
    model: object
    a_field: object
    x0_grid: np.ndarray
    times: np.ndarray
    x: np.ndarray          # (steps+1, rows)
    p: np.ndarray
    S: np.ndarray
    J: np.ndarray
    dp: np.ndarray
    a_int: np.ndarray
    xdot: np.ndarray
    pdot: np.ndarray
    Sdot: np.ndarray
    escaped_at: np.ndarray  # first step index outside the working box, −1 if never
    x_box: Optional[tuple] = None

    @property
    def h_t(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def T(self):
        return float(self.times[-1])

    @property
    def n_rows(self):
        return len(self.x0_grid)

    def time_index(self, t):
        k = int(round(t / self.h_t)) if self.h_t > 0 else 0
        if k < 0 or k >= len(self.times) or abs(self.times[k] - t) > GRID_TOL * (1.0 + abs(t)):
            raise OffGridError(f"t={t!r} is not on the fan time grid (h_t={self.h_t:.6g}, T={self.T:.6g})")
        return k

    def alive(self, k):
        return (self.escaped_at < 0) | (self.escaped_at > k)

    def state(self, k):
        return FanState(float(self.times[k]), self.x0_grid, self.x[k], self.p[k], self.S[k],
                        self.J[k], self.dp[k], self.a_int[k])

    def row(self, i):
        return [TrajectoryPoint(float(t), float(self.x[k, i]), float(self.p[k, i]), float(self.S[k, i]),
                                float(self.J[k, i]), float(self.a_int[k, i]))
                for k, t in enumerate(self.times)]

    def state_at(self, t):
        """Rows at an arbitrary t in [0, T]: cubic Hermite for x, p, S; 4-point Lagrange for the rest."""
        if t < -GRID_TOL or t > self.T * (1 + GRID_TOL) + GRID_TOL:
            raise OffGridError(f"t={t!r} outside the fan span [0, {self.T:.6g}]")
        h = self.h_t
        k = min(int(math.floor(t / h)), len(self.times) - 2)
        k = max(k, 0)
        s = (t - self.times[k]) / h
        if abs(s) <= GRID_TOL:
            return self.state(k)
        if abs(s - 1) <= GRID_TOL:
            return self.state(k + 1)

        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2

        def hermite(v, dv):
            return h00 * v[k] + h10 * h * dv[k] + h01 * v[k + 1] + h11 * h * dv[k + 1]

        lo = min(max(k - 1, 0), max(len(self.times) - 4, 0))
        idx = np.arange(lo, min(lo + 4, len(self.times)))
        weights = []
        for j in idx:
            w = 1.0
            for m in idx:
                if m != j:
                    w *= (t - self.times[m]) / (self.times[j] - self.times[m])
            weights.append(w)

        def lagrange(v):
            return sum(w * v[j] for w, j in zip(weights, idx))

        return FanState(float(t), self.x0_grid, hermite(self.x, self.xdot), hermite(self.p, self.pdot),
                        hermite(self.S, self.Sdot), lagrange(self.J), lagrange(self.dp), lagrange(self.a_int))

    def to_frame(self, every=1):
        frames = []
        for k in range(0, len(self.times), every):
            frames.append(pd.DataFrame({
                "t": self.times[k], "x0": self.x0_grid, "x": self.x[k], "p": self.p[k],
                "S": self.S[k], "J": self.J[k], "a_int": self.a_int[k],
            }))
        return pd.concat(frames, ignore_index=True)[FAN_COLUMNS]


def time_grid(T, h_t):
    if h_t <= 0 or T <= 0:
        raise ConfigurationError(f"need T > 0 and h_t > 0 (got T={T}, h_t={h_t})")
    steps = max(1, int(math.ceil(T / h_t - 1e-9)))
    return np.linspace(0.0, T, steps + 1)


def _outside(model, x_box, x, p):
    bad = ~np.isfinite(x) | ~np.isfinite(p) | (p < model.p_box[0]) | (p > model.p_box[1])
    if x_box is not None:
        bad |= (x < x_box[0]) | (x > x_box[1])
    return bad


def _integrate_chunk(model, a_field, Y0, times, x_box, monitor):
    steps, n = len(times) - 1, Y0.shape[1]
    Y = np.full((steps + 1, N_COMPONENTS, n), np.nan)
    dY = np.full((steps + 1, N_COMPONENTS, n), np.nan)
    escaped_at = np.full(n, -1)
    rhs = lambda t, Z: hamiltonian_rhs(model, a_field, t, Z)

    live = ~_outside(model, x_box, Y0[0], Y0[1])
    escaped_at[~live] = 0
    Y[0] = Y0
    if live.any():
        dY[0][:, live] = rhs(times[0], Y0[:, live])
    for k in range(steps):
        if not live.any():
            break
        t, h = times[k], times[k + 1] - times[k]
        Z = Y[k][:, live]
        full = rk4_step(rhs, t, Z, h, k1=dY[k][:, live])
        if monitor:
            half = rk4_step(rhs, t + h / 2, rk4_step(rhs, t, Z, h / 2, k1=dY[k][:, live]), h / 2)
            estimate = np.abs(half - full) / 15.0 / (1.0 + np.abs(half))
            worst = np.nanmax(estimate) if estimate.size else 0.0
            if worst > STEP_TOLERANCE:
                col = int(np.nanargmax(np.nanmax(estimate, axis=0)))
                x0 = float(Y0[0][np.flatnonzero(live)[col]])
                raise StepRejectedError(
                    f"local error estimate {worst:.3g} > {STEP_TOLERANCE:g} at t={t:.6g}, row x0={x0:.6g}; "
                    f"reduce h_t")
        Y[k + 1][:, live] = full
        gone = _outside(model, x_box, full[0], full[1])
        if gone.any():
            idx = np.flatnonzero(live)[gone]
            escaped_at[idx] = k + 1
            Y[k + 1][:, idx] = np.nan
            live[idx] = False
        if live.any():
            dY[k + 1][:, live] = rhs(times[k + 1], Y[k + 1][:, live])
    return Y, dY, escaped_at


def integrate_fan(model, S0, x0_grid, T, h_t, a_field="auto", dS0=None, x_box=None,
                  threads=1, monitor=True):
    x0_grid = np.asarray(x0_grid, dtype=float)
    if x0_grid.ndim != 1 or len(x0_grid) < 1:
        raise ConfigurationError("x0_grid must be a non-empty 1-D array")
    if np.any(np.diff(x0_grid) <= 0):
        raise ConfigurationError("x0_grid must be strictly increasing")
    times = time_grid(T, h_t)
    Y0 = initial_state(S0, x0_grid, dS0)

    # chunk size is fixed so results never depend on the thread count
    chunks = [Y0[:, i:i + CHUNK_ROWS] for i in range(0, len(x0_grid), CHUNK_ROWS)]
    results = ordered_map(lambda Y: _integrate_chunk(model, a_field, Y, times, x_box, monitor),
                          chunks, threads)
    Y = np.concatenate([r[0] for r in results], axis=2)
    dY = np.concatenate([r[1] for r in results], axis=2)
    escaped_at = np.concatenate([r[2] for r in results])

    n_escaped = int(np.sum(escaped_at >= 0))
    if n_escaped:
        logger.warning("%d of %d rows left the working box and were truncated", n_escaped, len(x0_grid))
    logger.info("Integrated fan: %d rows, %d steps, h_t=%.4g", len(x0_grid), len(times) - 1, times[1])
    return Fan(model=model, a_field=a_field, x0_grid=x0_grid, times=times,
               x=Y[:, 0], p=Y[:, 1], S=Y[:, 2], J=Y[:, 3], dp=Y[:, 4], a_int=Y[:, 5],
               xdot=dY[:, 0], pdot=dY[:, 1], Sdot=dY[:, 2], escaped_at=escaped_at, x_box=x_box)


@dataclass(frozen=True)
class JacobianReport:
    max_deviation: float
    t: float
    x0: float


def jacobian_check(fan, t=None):
    """Variational J against the finite-difference slope ∂x/∂x0 of neighbouring rows."""
    if fan.n_rows < 3:
        raise ConfigurationError("fan too small: jacobian_check needs at least 3 rows")
    ks = range(len(fan.times)) if t is None else [fan.time_index(t)]
    worst = JacobianReport(0.0, 0.0, float(fan.x0_grid[0]))
    for k in ks:
        alive = fan.alive(k)
        if alive.sum() < 3:
            continue
        slope = np.gradient(fan.x[k], fan.x0_grid, edge_order=2)
        # rows next to an escaped row have a polluted stencil
        ok = alive & np.roll(alive, 1) & np.roll(alive, -1)
        ok[0] &= alive[1]
        ok[-1] &= alive[-2]
        dev = np.abs(slope - fan.J[k]) / np.maximum(np.abs(fan.J[k]), J_FLOOR)
        dev = np.where(ok, dev, 0.0)
        i = int(np.argmax(dev))
        if dev[i] > worst.max_deviation:
            worst = JacobianReport(float(dev[i]), float(fan.times[k]), float(fan.x0_grid[i]))
    return worst


def hamiltonian_drift(fan):
    """max |P(x(t), p(t)) − P(x0, p0)| over living rows; meaningful for time-independent symbols."""
    drift = 0.0
    for k in range(1, len(fan.times)):
        alive = fan.alive(k)
        if alive.any():
            P0 = fan.model.P(fan.x[0][alive], fan.p[0][alive])
            Pk = fan.model.P(fan.x[k][alive], fan.p[k][alive])
            drift = max(drift, float(np.max(np.abs(Pk - P0))))
    return drift
