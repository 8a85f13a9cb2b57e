"""
Direct lattice solver for h u_t = A h² u_xx + V u + Σ λ_k (u(x − h ν_k) − u(x)).

Explicit RK4 in time, second-order centred differences in space, exact
integer grid shifts for the jump terms, boundary nodes frozen at their
initial values.
"""
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from utils.errors import BoundaryContactError, ConfigurationError, StabilityError

logger = logging.getLogger(__name__)

SAFETY = 0.4
SHIFT_TOL = 1e-9
CONTACT_TOL = 1e-6
POSITIVITY_TOL = 1e-12
TINY = 1e-300
LATTICE_COLUMNS = ["t", "x", "u", "minus_h_log_u"]


@dataclass
class LatticeField:
    x_grid: np.ndarray
    values: np.ndarray
    h: float
    t: float = 0.0
    dt: float = None
    reach: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x_grid, dtype=float)
        steps = np.diff(x)
        if len(x) < 3 or np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps.mean():
            raise ConfigurationError("lattice grid must be uniform with at least 3 nodes")
        if self.h <= 0:
            raise ConfigurationError(f"h must be positive (got {self.h})")

    @property
    def dx(self):
        return float(self.x_grid[1] - self.x_grid[0])

    def minus_h_log(self):
        with np.errstate(divide="ignore"):
            return -self.h * np.log(np.maximum(self.values, TINY))

    def to_frame(self):
        return pd.DataFrame({"t": self.t, "x": self.x_grid, "u": self.values,
                             "minus_h_log_u": self.minus_h_log()})[LATTICE_COLUMNS]


def lattice_from_initial(S0, rho0, h, x_min, x_max, dx):
    """u0 = exp(−S0/h) √ρ0 on a uniform grid."""
    n = int(round((x_max - x_min) / dx)) + 1
    x = np.linspace(x_min, x_max, n)
    values = np.exp(-np.asarray(S0(x), dtype=float) / h) * np.sqrt(np.asarray(rho0(x), dtype=float))
    return LatticeField(x, values, float(h))


def grid_shifts(model, h, dx):
    """Integer node shifts m_k = ν_k h / Δx; non-commensurate jumps are a configuration error."""
    shifts = []
    for jump in model.jumps:
        m = jump.nu * h / dx
        if abs(m - round(m)) > SHIFT_TOL * max(1.0, abs(m)):
            raise ConfigurationError(
                f"jump nu={jump.nu:g} with h={h:g} is not a whole number of lattice cells (dx={dx:g})")
        shifts.append(int(round(m)))
    return shifts


def _rates(model, x, t):
    A = model.A(x, t) + 0.0 * x
    V = model.V(x, t) + 0.0 * x
    lam = [jump.rate(x, t) + 0.0 * x for jump in model.jumps]
    return A, V, lam


def stability_bound(model, lattice, t=0.0):
    """0.4·min(Δx²/(2 max A h), Δx/max|P'|, h/max Σλ, h/max|V|) over the current lattice."""
    x, h, dx = lattice.x_grid, lattice.h, lattice.dx
    A, V, lam = _rates(model, x, t)
    bounds = []
    if np.max(A) > 0:
        bounds.append(dx * dx / (2.0 * np.max(A) * h))
    u = np.maximum(lattice.values, TINY)
    p = np.clip(-h * np.gradient(np.log(u), dx), *model.p_box)
    speed = float(np.max(np.abs(model.dP_dp(x, p, t))))
    if speed > 0:
        bounds.append(dx / speed)
    if lam:
        total = float(np.max(np.sum(lam, axis=0)))
        if total > 0:
            bounds.append(h / total)
    if np.max(np.abs(V)) > 0:
        bounds.append(h / float(np.max(np.abs(V))))
    return SAFETY * min(bounds) if bounds else np.inf


def _rhs_factory(model, x, h, dx, shifts, reach, left_value, right_value):
    n = len(x)
    core = slice(1, n - 1)
    pad_l, pad_r = np.full(reach, left_value), np.full(reach, right_value)

    def rhs(t, u):
        A, V, lam = _rates(model, x, t)
        du = np.zeros_like(u)
        uxx = (u[2:] - 2 * u[1:-1] + u[:-2]) / (dx * dx)
        du[core] = A[core] * h * uxx + V[core] / h * u[core]
        if shifts:
            ext = np.concatenate([pad_l, u, pad_r])
            for m, rate in zip(shifts, lam):
                shifted = ext[reach - m:reach - m + n]
                du[core] += rate[core] / h * (shifted[core] - u[core])
        return du

    return rhs


def kf_lattice(model, lattice, T, dt=None, snapshot_times=None):
    """Step the lattice to T; returns one LatticeField per snapshot time (default [T])."""
    if T <= lattice.t:
        raise ConfigurationError(f"T={T:g} must exceed the lattice time {lattice.t:g}")
    x, h, dx = np.asarray(lattice.x_grid, dtype=float), lattice.h, lattice.dx
    shifts = grid_shifts(model, h, dx)
    reach = max([1] + [abs(m) for m in shifts])
    bound = stability_bound(model, lattice, lattice.t)
    if dt is None:
        dt = bound
    elif dt > bound * (1 + 1e-12):
        raise StabilityError(f"dt={dt:.3g} exceeds the stability bound {bound:.3g}")
    if not np.isfinite(dt):
        dt = T - lattice.t

    u = np.array(lattice.values, dtype=float)
    rhs = _rhs_factory(model, x, h, dx, shifts, reach, u[0], u[-1])
    initial_edges = np.concatenate([u[:reach + 1], u[-reach - 1:]])

    times = sorted(snapshot_times) if snapshot_times is not None else [T]
    out = []
    t = lattice.t
    for target in times:
        while t < target - 1e-14 * max(1.0, target):
            step = min(dt, target - t)
            k1 = rhs(t, u)
            k2 = rhs(t + 0.5 * step, u + 0.5 * step * k1)
            k3 = rhs(t + 0.5 * step, u + 0.5 * step * k2)
            k4 = rhs(t + step, u + step * k3)
            u = u + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += step
        t = target
        scale = float(np.max(np.abs(u)))
        if np.min(u) < -POSITIVITY_TOL * scale:
            raise StabilityError(f"lattice lost positivity at t={t:.6g} (min u={np.min(u):.3g})")
        edges = np.concatenate([u[:reach + 1], u[-reach - 1:]])
        if np.max(np.abs(edges - initial_edges)) > CONTACT_TOL * scale:
            raise BoundaryContactError(
                f"lattice solution reaches the grid edge by t={t:.6g}; widen [{x[0]:.4g}, {x[-1]:.4g}]")
        out.append(replace(lattice, values=u.copy(), t=float(t), dt=float(dt), reach=reach,
                           meta={"stability_bound": float(bound), "shifts": list(shifts)}))
    logger.info("KF lattice: h=%.3g, dx=%.3g, dt=%.3g, %d nodes, T=%.4g", h, dx, dt, len(x), T)
    return out
