"""
Integral-identity certificate for δ-shock solutions of ρ_t + (uρ)_x + aρ = 0.

For a test bump ζ vanishing near t = 0 a generalized solution satisfies

    ∬ R (ζ_t + u ζ_x − a ζ) dx dt + Σ_i ∫ e_i (ζ_t + c_i ζ_x − f(c_i) ζ)(x_i(t), t) dt = 0,

and the residual is the absolute value of the left-hand side.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List, Optional

import numpy as np
import pandas as pd
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline

from core.characteristics import a_coefficient
from core.manifold import curve_at, essential
from utils.errors import ConfigurationError
from utils.parallel import ordered_map

logger = logging.getLogger(__name__)

LEVELS = (5, 6, 7)
BUMP_NORM = (32.0 / 35.0) ** 2
REPORT_COLUMNS = ["bump_id", "x_c", "t_c", "level", "residual", "order"]


@dataclass(frozen=True)
class BumpTestFunction:
    x_c: float
    t_c: float
    r_x: float
    r_t: float

    def __post_init__(self):
        if self.r_x <= 0 or self.r_t <= 0:
            raise ConfigurationError("bump radii must be positive")
        if self.t_c - self.r_t <= 0:
            raise ConfigurationError(
                f"bump support must stay in t > 0 (t_c={self.t_c:g}, r_t={self.r_t:g})")

    @property
    def support(self):
        return (self.x_c - self.r_x, self.x_c + self.r_x, self.t_c - self.r_t, self.t_c + self.r_t)

    def norm(self):
        """∬ ζ dx dt."""
        return self.r_x * self.r_t * BUMP_NORM

    def _parts(self, x, t):
        sx = (np.asarray(x, dtype=float) - self.x_c) / self.r_x
        st = (np.asarray(t, dtype=float) - self.t_c) / self.r_t
        inside = (np.abs(sx) < 1) & (np.abs(st) < 1)
        gx = np.where(inside, 1 - sx ** 2, 0.0)
        gt = np.where(inside, 1 - st ** 2, 0.0)
        return sx, st, gx, gt

    def value(self, x, t):
        _, _, gx, gt = self._parts(x, t)
        return (gx * gt) ** 3

    def dx(self, x, t):
        sx, _, gx, gt = self._parts(x, t)
        return 3 * gx ** 2 * gt ** 3 * (-2 * sx / self.r_x)

    def dt(self, x, t):
        _, st, gx, gt = self._parts(x, t)
        return 3 * gt ** 2 * gx ** 3 * (-2 * st / self.r_t)


# ---------------------- solutions ----------------------

@dataclass
class ShockPath:
    t: np.ndarray
    x_s: np.ndarray
    c: np.ndarray
    e: np.ndarray
    f: Optional[Callable] = None   # f(x, t, c) on the stratum

    def __post_init__(self):
        smooth = len(self.t) >= 4
        self._x = CubicSpline(self.t, self.x_s) if smooth else None
        self._e = CubicSpline(self.t, self.e) if smooth else None

    def window(self):
        return float(self.t[0]), float(self.t[-1])

    def position(self, t):
        if self._x is None:
            return np.interp(t, self.t, self.x_s)
        return self._x(t)

    def amplitude(self, t):
        if self._e is None:
            return np.interp(t, self.t, self.e)
        return self._e(t)

    def speed(self, t):
        return np.interp(t, self.t, self.c)


class _PathSolution:
    """Shared bookkeeping: shock positions at t come from the same paths the line integral uses."""

    paths: List[ShockPath]

    def positions(self, t):
        out = []
        for path in self.paths:
            t0, t1 = path.window()
            if t0 <= t <= t1:
                out.append(float(path.position(t)))
        return sorted(out)

    def shock_paths(self):
        return self.paths


class AnalyticSolution(_PathSolution):
    """
    Closed-form solution. `field(x, t, cell) -> (R, u, a)` where `cell` counts the
    shocks to the left of x; each shock is a dict of callables x(t), c(t), e(t) on [t0, t1].
    """

    def __init__(self, field, shocks, x_range, t_range, samples=2049):
        self.field = field
        self.x_range = tuple(x_range)
        self.t_range = tuple(t_range)
        self.paths = []
        for s in shocks:
            t = np.linspace(s["t0"], s["t1"], samples)
            self.paths.append(ShockPath(t, np.array([s["x"](v) for v in t]),
                                        np.array([s["c"](v) for v in t]),
                                        np.array([s["e"](v) for v in t]), s.get("f")))

    def cell_fields(self, t, x, cell, anchor=None):
        return self.field(np.asarray(x, dtype=float), t, cell)


class FanSolution(_PathSolution):
    """Generalized density from the fan pipeline exposed for the identity."""

    def __init__(self, gd):
        self.gd = gd
        fan = gd.fan
        self.t_range = (0.0, fan.T)
        self.x_range = (float(np.nanmax(fan.x[:, 0])), float(np.nanmin(fan.x[:, -1])))
        self._curve = lru_cache(maxsize=4096)(lambda t: curve_at(fan, t))
        rate = None
        if gd.a_mode not in (None, "auto") and gd.stratum_decay:
            rate = np.vectorize(gd.stratum_rate)
        self.paths = []
        for shock in gd.shocks:
            path = shock.path
            t = np.concatenate([[shock.t_birth], path["t"].to_numpy()])
            x = np.concatenate([[shock.x_birth], path["x_s"].to_numpy()])
            c = np.concatenate([[path["c"].iloc[0]], path["c"].to_numpy()])
            e = np.concatenate([[shock.e_start], path["e"].to_numpy()])
            if t[1] - t[0] <= 1e-12:
                t, x, c, e = t[1:], x[1:], c[1:], e[1:]
            end = t[-1] if shock.status != "merged" else np.nextafter(t[-1], -np.inf)
            keep = t <= end
            self.paths.append(ShockPath(t[keep], x[keep], c[keep], e[keep], rate))

    def cell_fields(self, t, x, cell, anchor=None):
        """
        R, u and a at the nodes. With an `anchor`, every node the anchor's essential
        branch covers is read off that branch, so a cell ending on a shock gets the
        one-sided limit there instead of whichever branch wins the tie.
        """
        gd = self.gd
        curve = self._curve(float(t))
        x = np.asarray(x, dtype=float)
        branch_id = essential(curve, x).branch_id.copy()
        if anchor is not None:
            ref = int(essential(curve, np.array([anchor])).branch_id[0])
            home = next(b for b in curve.branches if b.index == ref)
            branch_id[home.covers(x)] = ref
        R = np.empty_like(x)
        u = np.empty_like(x)
        a = np.empty_like(x)
        for b in curve.branches:
            sel = branch_id == b.index
            if sel.any():
                xq = x[sel]
                p = b.momentum(xq)
                R[sel] = gd.rho0(b.x0_at(xq)) / np.abs(b.jacobian(xq)) * np.exp(-b.a_int_at(xq))
                u[sel] = gd.model.dP_dp(xq, p, t)
                a[sel] = a_coefficient(gd.model, gd.a_mode, xq, p, t)
        return R, u, a


# ---------------------- residual ----------------------

def _simpson_nodes(lo, hi, panels):
    return np.linspace(lo, hi, panels + 1)


def _x_integral(solution, zeta, t, panels):
    x_lo, x_hi, _, _ = zeta.support
    shocks = solution.positions(t)
    edges = [x_lo] + [x for x in shocks if x_lo < x < x_hi] + [x_hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 0:
            continue
        x = _simpson_nodes(a, b, panels)
        mid = 0.5 * (a + b)
        cell = int(np.searchsorted(shocks, mid))
        # one branch per cell: the one essential at its midpoint
        R, u, av = solution.cell_fields(t, x, cell, anchor=mid)
        integrand = R * (zeta.dt(x, t) + u * zeta.dx(x, t) - av * zeta.value(x, t))
        total += simpson(integrand, x=x)
    return total


def _line_integral(path, zeta, panels):
    _, _, t_lo, t_hi = zeta.support
    p0, p1 = path.window()
    lo, hi = max(t_lo, p0), min(t_hi, p1)
    if hi <= lo or len(path.t) < 2:
        return 0.0
    t = _simpson_nodes(lo, hi, panels)
    x, e, c = path.position(t), path.amplitude(t), path.speed(t)
    f = 0.0 if path.f is None else path.f(x, t, c)
    integrand = e * (zeta.dt(x, t) + c * zeta.dx(x, t) - f * zeta.value(x, t))
    return simpson(integrand, x=t)


def identity_residual(solution, zeta, level):
    """|weak-form pairing| of the solution with ζ using 2^level Simpson panels per axis."""
    x_lo, x_hi, t_lo, t_hi = zeta.support
    dom_x, dom_t = solution.x_range, solution.t_range
    if x_lo < dom_x[0] or x_hi > dom_x[1] or t_lo < dom_t[0] or t_hi > dom_t[1]:
        raise ConfigurationError(
            f"bump support [{x_lo:.4g}, {x_hi:.4g}]x[{t_lo:.4g}, {t_hi:.4g}] leaves the solution domain "
            f"[{dom_x[0]:.4g}, {dom_x[1]:.4g}]x[{dom_t[0]:.4g}, {dom_t[1]:.4g}]")
    panels = 2 ** level
    t_nodes = _simpson_nodes(t_lo, t_hi, panels)
    smooth = simpson([_x_integral(solution, zeta, t, panels) for t in t_nodes], x=t_nodes)
    singular = sum(_line_integral(path, zeta, panels) for path in solution.shock_paths())
    return abs(smooth + singular)


# ---------------------- suite ----------------------

@dataclass
class IdentityReport:
    frame: pd.DataFrame
    bumps: List[BumpTestFunction]

    def residuals(self, bump_id):
        rows = self.frame[self.frame["bump_id"] == bump_id]
        return rows["residual"].to_numpy()

    def max_residual(self, level=None):
        rows = self.frame if level is None else self.frame[self.frame["level"] == level]
        return float(rows["residual"].max())


def _bump_in(rng, x_range, t_range, r_x, r_t):
    x_c = rng.uniform(x_range[0] + r_x, x_range[1] - r_x)
    t_c = rng.uniform(t_range[0] + r_t * 1.05, t_range[1] - r_t)
    return BumpTestFunction(float(x_c), float(t_c), r_x, r_t)


def place_bumps(solution, count, seed, merges=()):
    """Seeded random bumps plus one straddling each shock and one on each merge point."""
    if count < 1:
        raise ConfigurationError(f"identity suite needs count >= 1 (got {count})")
    rng = np.random.default_rng(seed)
    x_lo, x_hi = solution.x_range
    t_lo, t_hi = solution.t_range
    r_x = 0.15 * (x_hi - x_lo)
    r_t = 0.15 * (t_hi - t_lo)
    bumps = [_bump_in(rng, (x_lo, x_hi), (t_lo, t_hi), r_x, r_t) for _ in range(count)]
    for path in solution.shock_paths():
        p0, p1 = path.window()
        t_c = min(max(0.5 * (p0 + p1), r_t * 1.05), t_hi - r_t)
        x_c = float(np.interp(t_c, path.t, path.x_s))
        x_c = min(max(x_c, x_lo + r_x), x_hi - r_x)
        bumps.append(BumpTestFunction(x_c, float(t_c), r_x, r_t))
    for event in merges:
        t_c = min(max(event.t, r_t * 1.05), t_hi - r_t)
        x_c = min(max(event.x, x_lo + r_x), x_hi - r_x)
        bumps.append(BumpTestFunction(float(x_c), float(t_c), r_x, r_t))
    return bumps


def identity_suite(solution, count, seed, levels=LEVELS, merges=(), threads=1):
    bumps = place_bumps(solution, count, seed, merges)
    jobs = [(i, level) for i in range(len(bumps)) for level in levels]
    values = ordered_map(lambda job: identity_residual(solution, bumps[job[0]], job[1]), jobs, threads)
    rows = []
    for (i, level), value in zip(jobs, values):
        rows.append({"bump_id": i, "x_c": bumps[i].x_c, "t_c": bumps[i].t_c, "level": level,
                     "residual": value, "order": np.nan})
    frame = pd.DataFrame(rows)[REPORT_COLUMNS]
    for i in range(len(bumps)):
        sel = frame.index[frame["bump_id"] == i]
        res = frame.loc[sel, "residual"].to_numpy()
        with np.errstate(divide="ignore", invalid="ignore"):
            orders = np.log2(res[:-1] / res[1:])
        frame.loc[sel[1:], "order"] = orders
    if not np.all(np.isfinite(frame["residual"])):
        logger.warning("identity suite produced non-finite residuals")
    logger.info("Identity suite: %d bumps, max residual %.3g", len(bumps), frame["residual"].max())
    return IdentityReport(frame, bumps)
