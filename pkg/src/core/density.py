"""
Generalized δ-shock density ρ = R + Σ e_i δ(x − x_i(t)).

R comes from the Cauchy formula along characteristics; each amplitude e_i is
driven by the mass its shock absorbs, so smooth plus singular mass is
conserved up to quadrature when a = 0.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from core.manifold import curve_at, essential, slice_fan
from utils.errors import AdmissibilityError, FoldContactError, OffGridError

logger = logging.getLogger(__name__)

FOLD_J_MIN = 1e-12
NEGATIVE_E_TOL = 1e-10
QUAD_LIMIT = 200
MASS_COLUMNS = ["t", "smooth_mass", "singular_mass", "total"]
AMPLITUDE_COLUMNS = ["t", "shock_id", "e"]
DENSITY_COLUMNS = ["t", "x", "R"]


@dataclass
class GeneralizedDensity:
    fan: object
    rho0: object
    R: np.ndarray
    shocks: List[object] = field(default_factory=list)
    merges: List[object] = field(default_factory=list)
    a_mode: object = "auto"
    stratum_decay: bool = True

    @property
    def model(self):
        return self.fan.model

    def shock(self, sid):
        return self.shocks[sid]

    def stratum_rate(self, x, t, c):
        """f(c) on a shock; zero in auto mode or when the stratum term is switched off."""
        if self.a_mode in (None, "auto") or not self.stratum_decay:
            return 0.0
        return float(self.a_mode(x, t, c))


def transport_R(fan, rho0, a_mode="auto", stratum_decay=True):
    """Smooth part R(t, x0) = ρ0(x0) |J|⁻¹ exp(−∫a dt) on every row."""
    r0 = rho0(fan.x0_grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = r0[None, :] / np.abs(fan.J) * np.exp(-fan.a_int)
    return GeneralizedDensity(fan=fan, rho0=rho0, R=R, a_mode=a_mode, stratum_decay=stratum_decay)


def _curve(fan, t):
    try:
        return slice_fan(fan, t)
    except OffGridError:
        return curve_at(fan, t)


# ---------------------- shocks at an instant ----------------------

def shock_window(shock):
    """(t_start, t_end) during which the shock exists; starts at birth or at its merge."""
    return shock.t_birth, float(shock.path["t"].iloc[-1])


def shock_state(shock, t):
    """Position, speed and amplitude of a shock at time t (linear in time between samples)."""
    path = shock.path
    ts = np.concatenate([[shock.t_birth], path["t"].to_numpy()])
    xs = np.concatenate([[shock.x_birth], path["x_s"].to_numpy()])
    cs = np.concatenate([[path["c"].iloc[0]], path["c"].to_numpy()])
    e0 = shock.e_start
    es = np.concatenate([[e0], path["e"].to_numpy()]) if "e" in path else np.zeros_like(ts)
    if ts[1] - ts[0] <= 1e-12:
        ts, xs, cs, es = ts[1:], xs[1:], cs[1:], es[1:]
    return {"x_s": float(np.interp(t, ts, xs)), "c": float(np.interp(t, ts, cs)),
            "e": float(np.interp(t, ts, es))}


def shocks_at(gd, t):
    out = []
    for shock in gd.shocks:
        t0, t1 = shock_window(shock)
        if t0 <= t <= t1 and not (shock.status == "merged" and t >= t1):
            out.append((shock, shock_state(shock, t)))
    out.sort(key=lambda item: item[1]["x_s"])
    return out


# ---------------------- smooth part at (t, x) ----------------------

def density_at(gd, t, x_grid, collar=0.0):
    """Essential-branch R at the query points; points within `collar` of a shock are NaN."""
    x_grid = np.asarray(x_grid, dtype=float)
    curve = _curve(gd.fan, t)
    sol = essential(curve, x_grid)
    R = np.full(x_grid.shape, np.nan)
    near_shock = np.zeros(x_grid.shape, dtype=bool)
    for _, state in shocks_at(gd, t):
        near_shock |= np.abs(x_grid - state["x_s"]) <= max(collar, 0.0)
    for b in curve.branches:
        sel = (sol.branch_id == b.index)
        if not sel.any():
            continue
        xq = x_grid[sel]
        J = b.jacobian(xq)
        thin = (np.abs(J) < FOLD_J_MIN) & ~near_shock[sel]
        if thin.any():
            raise FoldContactError(
                f"|J| < {FOLD_J_MIN:g} away from tracked shocks at t={t:.6g}, x={xq[thin][0]:.6g}")
        R[sel] = gd.rho0(b.x0_at(xq)) / np.abs(J) * np.exp(-b.a_int_at(xq))
    R[near_shock] = np.nan
    if np.any(R[np.isfinite(R)] < 0):
        raise AdmissibilityError(f"negative smooth density at t={t:.6g}")
    return R


def one_sided_R(gd, x0, J, a_int):
    with np.errstate(divide="ignore", invalid="ignore"):
        return gd.rho0(x0) / np.abs(J) * np.exp(-a_int)


# ---------------------- amplitudes ----------------------

def _weighted_mass(gd, t, lo, hi):
    """∫_lo^hi ρ0(y) exp(−a_int(y, t)) dy; signed when hi < lo."""
    if hi == lo:
        return 0.0
    fan = gd.fan
    if np.all(fan.a_int[np.isfinite(fan.a_int)] == 0):
        weight = lambda y: 1.0
    else:
        state = fan.state_at(t)
        ok = np.isfinite(state.a_int)
        xs, av = fan.x0_grid[ok], state.a_int[ok]
        weight = lambda y: float(np.exp(-np.interp(y, xs, av)))
    value, _ = integrate.quad(lambda y: float(gd.rho0(y)) * weight(y), lo, hi, limit=QUAD_LIMIT)
    return value


def absorbed_mass(gd, shock, start=None):
    """Cumulative absorbed mass at the birth/merge time and at every path sample."""
    path = shock.path
    t_nodes = [shock.t_birth]
    if start is None:
        A, prev_l, prev_r = 0.0, shock.x0_birth, shock.x0_birth
    else:
        A, prev_l, prev_r = start
    masses = [A]
    for _, row in path.iterrows():
        t = float(row["t"])
        A += _weighted_mass(gd, t, row["x0_l"], prev_l) + _weighted_mass(gd, t, prev_r, row["x0_r"])
        prev_l, prev_r = row["x0_l"], row["x0_r"]
        if t - t_nodes[-1] <= 1e-12:
            masses[-1] = A
            continue
        t_nodes.append(t)
        masses.append(A)
    return np.asarray(t_nodes), np.asarray(masses)


def evolve_amplitude(gd, shock, e_start=0.0, start=None):
    """Integrate de/dt = s(t) − f(c) e from the shock's start, s the absorbed-mass rate."""
    t_nodes, A = absorbed_mass(gd, shock, start)
    path = shock.path
    ts = path["t"].to_numpy()
    if len(t_nodes) >= 2:
        source = PchipInterpolator(t_nodes, A).derivative()
    else:
        source = lambda t: 0.0
    c_of_t = lambda t: float(np.interp(t, ts, path["c"].to_numpy()))
    x_of_t = lambda t: float(np.interp(t, ts, path["x_s"].to_numpy()))
    rhs = lambda t, e: float(source(t)) - gd.stratum_rate(x_of_t(t), t, c_of_t(t)) * e

    e_nodes = [e_start]
    for t0, t1 in zip(t_nodes[:-1], t_nodes[1:]):
        h, e = t1 - t0, e_nodes[-1]
        k1 = rhs(t0, e)
        k2 = rhs(t0 + h / 2, e + h / 2 * k1)
        k3 = rhs(t0 + h / 2, e + h / 2 * k2)
        k4 = rhs(t1, e + h * k3)
        e_nodes.append(e + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
    e_nodes = np.asarray(e_nodes)
    if np.any(e_nodes < -NEGATIVE_E_TOL):
        k = int(np.argmin(e_nodes))
        raise AdmissibilityError(
            f"shock {shock.id}: amplitude e={e_nodes[k]:.3g} < 0 at t={t_nodes[k]:.6g}")
    e_path = np.interp(ts, t_nodes, e_nodes)
    A_path = np.interp(ts, t_nodes, A)

    R_l = one_sided_R(gd, path["x0_l"].to_numpy(), path["J_l"].to_numpy(), path["a_l"].to_numpy())
    R_r = one_sided_R(gd, path["x0_r"].to_numpy(), path["J_r"].to_numpy(), path["a_r"].to_numpy())
    c = path["c"].to_numpy()
    path["R_l"] = R_l
    path["R_r"] = R_r
    path["flux"] = R_l * (path["u_l"].to_numpy() - c) - R_r * (path["u_r"].to_numpy() - c)
    path["absorbed"] = A_path
    path["e"] = e_path
    shock.e_start = e_start
    return e_path


def kirchhoff(e_in):
    """Amplitude leaving a merge point: the sum of the incoming amplitudes."""
    return float(sum(e_in))


def merge(gd, s1, s2, t_merge):
    """Seed the shock born from s1 and s2 with e1 + e2 and evolve it."""
    child = next(s for s in gd.shocks if s.parents == (s1.id, s2.id))
    e1 = float(np.interp(t_merge, s1.path["t"], s1.path["e"]))
    e2 = float(np.interp(t_merge, s2.path["t"], s2.path["e"]))
    A1 = float(np.interp(t_merge, s1.path["t"], s1.path["absorbed"]))
    A2 = float(np.interp(t_merge, s2.path["t"], s2.path["absorbed"]))
    end1, end2 = s1.path.iloc[-1], s2.path.iloc[-1]
    evolve_amplitude(gd, child, e_start=kirchhoff([e1, e2]),
                     start=(A1 + A2, float(end1["x0_l"]), float(end2["x0_r"])))
    logger.info("Merged shocks %d + %d -> %d at t=%.6g: e=%.6g", s1.id, s2.id, child.id, t_merge, e1 + e2)
    return child


def build_generalized_density(fan, rho0, shocks, merges=(), a_mode="auto", stratum_decay=True):
    gd = transport_R(fan, rho0, a_mode, stratum_decay)
    gd.shocks = list(shocks)
    gd.merges = list(merges)
    by_child = {m.child: m for m in gd.merges}
    for shock in gd.shocks:
        event = by_child.get(shock.id)
        if event is None:
            evolve_amplitude(gd, shock)
        else:
            merge(gd, gd.shocks[event.left], gd.shocks[event.right], event.t)
    return gd


# ---------------------- diagnostics and outputs ----------------------

def initial_mass(gd):
    x0 = gd.fan.x0_grid
    value, _ = integrate.quad(lambda y: float(gd.rho0(y)), x0[0], x0[-1], limit=QUAD_LIMIT)
    return value


def masses(gd, times=None):
    """Smooth, singular and total mass per output time (Lagrangian quadrature)."""
    fan = gd.fan
    times = fan.times if times is None else np.asarray(times, dtype=float)
    lo_end, hi_end = float(fan.x0_grid[0]), float(fan.x0_grid[-1])
    rows = []
    for t in times:
        live = shocks_at(gd, float(t))
        absorbed, singular = [], 0.0
        for shock, state in live:
            path = shock.path
            x0_l = float(np.interp(t, path["t"], path["x0_l"]))
            x0_r = float(np.interp(t, path["t"], path["x0_r"]))
            absorbed.append((x0_l, x0_r))
            singular += state["e"]
        absorbed.sort()
        smooth, cursor = 0.0, lo_end
        for a, b in absorbed:
            if a > cursor:
                smooth += _weighted_mass(gd, float(t), cursor, a)
            cursor = max(cursor, b)
        if hi_end > cursor:
            smooth += _weighted_mass(gd, float(t), cursor, hi_end)
        rows.append({"t": float(t), "smooth_mass": smooth, "singular_mass": singular,
                     "total": smooth + singular})
    return pd.DataFrame(rows)[MASS_COLUMNS]


def amplitude_frame(gd):
    frames = [pd.DataFrame({"t": s.path["t"], "shock_id": s.id, "e": s.path["e"]}) for s in gd.shocks]
    if not frames:
        return pd.DataFrame(columns=AMPLITUDE_COLUMNS)
    return pd.concat(frames, ignore_index=True)[AMPLITUDE_COLUMNS]


def density_frame(gd, times, x_grid):
    frames = []
    for t in times:
        frames.append(pd.DataFrame({"t": float(t), "x": x_grid, "R": density_at(gd, float(t), x_grid)}))
    return pd.concat(frames, ignore_index=True)[DENSITY_COLUMNS]


@dataclass
class MadelungField:
    t: float
    h: float
    x: np.ndarray
    u: np.ndarray
    mask: np.ndarray

    def to_frame(self):
        keep = ~self.mask
        return pd.DataFrame({"t": self.t, "x": self.x[keep], "u": self.u[keep]})


def madelung_assemble(sol, gd, h, collar=0.0, shift_action: Optional[float] = None):
    """u = exp(−S/h)·√R on the regular set; points within `collar` of a shock are masked."""
    R = density_at(gd, sol.t, sol.x_grid, collar=collar)
    if np.any(R[np.isfinite(R)] < 0):
        raise AdmissibilityError("negative R in Madelung assembly")
    S = sol.S if shift_action is None else sol.S - shift_action
    mask = ~np.isfinite(R) | ~np.isfinite(S)
    with np.errstate(invalid="ignore", over="ignore"):
        u = np.where(mask, np.nan, np.exp(-S / h) * np.sqrt(np.where(mask, 0.0, R)))
    return MadelungField(sol.t, h, sol.x_grid, u, mask)
