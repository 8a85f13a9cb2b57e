"""
Lagrangian curves, essential (minimal-action) selection, fold births and
equal-action shock tracking.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator
from scipy.optimize import brentq

from core.characteristics import advance
from utils.errors import ProjectionError, ShockTrackingError, UnsupportedConfigurationError

logger = logging.getLogger(__name__)

TIE_TOL = 1e-10
FOLD_TIE = 1e-9
PROMINENCE = 1e-6
BISECT_ITER = 48
BISECT_SUBSTEPS = 8
TANGENTIAL_TOL = 1e-6
BRACKET_TOL = 1e-8
SEED_ROWS = 4
ESSENTIAL_COLUMNS = ["t", "x", "S", "u", "branch_id"]
SHOCK_COLUMNS = ["t", "x_s", "c", "p_l", "p_r", "R_l", "R_r", "e"]


# ---------------------- curves and branches ----------------------

class Branch:
    """Rows lo..hi of a curve on which J keeps one sign and x0 -> x is strictly monotone."""

    def __init__(self, index, sign, lo, hi, x0, x, p, S, J, a_int, x0_lo, x0_hi):
        self.index = index
        self.sign = sign
        self.lo, self.hi = lo, hi
        self.x0_lo, self.x0_hi = x0_lo, x0_hi
        rows = slice(lo, hi + 1)
        self.x0, self.x, self.p, self.S = x0[rows], x[rows], p[rows], S[rows]
        self.J, self.a_int = J[rows], a_int[rows]
        order = slice(None) if sign > 0 else slice(None, None, -1)
        xs = self.x[order]
        self.x_min, self.x_max = float(xs[0]), float(xs[-1])
        self._S = CubicHermiteSpline(xs, self.S[order], self.p[order])
        self._p = PchipInterpolator(xs, self.p[order])
        self._x0 = PchipInterpolator(xs, self.x0[order])
        self._J = PchipInterpolator(xs, self.J[order])
        self._a = PchipInterpolator(xs, self.a_int[order])

    def __repr__(self):
        return (f"Branch({self.index}, sign={self.sign:+d}, rows={self.lo}..{self.hi}, "
                f"x=[{self.x_min:.6g}, {self.x_max:.6g}])")

    def covers(self, x):
        x = np.asarray(x, dtype=float)
        return (x >= self.x_min) & (x <= self.x_max)

    def _clip(self, x):
        return np.clip(x, self.x_min, self.x_max)

    def action(self, x):
        return self._S(self._clip(x))

    def momentum(self, x):
        return self._p(self._clip(x))

    def x0_at(self, x):
        return self._x0(self._clip(x))

    def jacobian(self, x):
        return self._J(self._clip(x))

    def a_int_at(self, x):
        return self._a(self._clip(x))

    def x_of_x0(self, x0):
        return np.interp(x0, self.x0, self.x)


@dataclass
class LagrangianCurve:
    t: float
    model: object
    x0: np.ndarray
    x: np.ndarray
    p: np.ndarray
    S: np.ndarray
    J: np.ndarray
    a_int: np.ndarray
    branches: List[Branch] = field(default_factory=list)

    def positive_branches(self):
        return [b for b in self.branches if b.sign > 0]


def _crossing(x0, J, i, j):
    """x0 where J changes sign between rows i and j (linear in x0)."""
    if J[j] == J[i]:
        return float(x0[i])
    return float(x0[i] - J[i] * (x0[j] - x0[i]) / (J[j] - J[i]))


def decompose(x0, x, J):
    """Index runs (lo, hi, sign, x0_lo, x0_hi) of one-signed J with strictly monotone x."""
    valid = np.isfinite(x) & np.isfinite(J)
    sign = np.where(valid, np.sign(J), 0).astype(int)
    n = len(x0)
    runs = []
    start = None
    for i in range(n + 1):
        if start is not None:
            extend = (i < n and sign[i] == sign[start]
                      and (x[i] - x[i - 1]) * sign[start] > 0)
            if extend:
                continue
            if i - 1 > start:
                runs.append((start, i - 1))
            start = None
        if i < n and sign[i] != 0:
            start = i
    out = []
    for lo, hi in runs:
        s = sign[lo]
        x0_lo = _crossing(x0, J, lo - 1, lo) if lo > 0 and sign[lo - 1] == -s else float(x0[lo])
        x0_hi = _crossing(x0, J, hi, hi + 1) if hi < n - 1 and sign[hi + 1] == -s else float(x0[hi])
        out.append((lo, hi, int(s), x0_lo, x0_hi))
    return out


def curve_from_state(model, state):
    curve = LagrangianCurve(state.t, model, state.x0, state.x, state.p, state.S, state.J, state.a_int)
    for index, (lo, hi, s, x0_lo, x0_hi) in enumerate(decompose(state.x0, state.x, state.J)):
        curve.branches.append(Branch(index, s, lo, hi, state.x0, state.x, state.p, state.S,
                                     state.J, state.a_int, x0_lo, x0_hi))
    return curve


def slice_fan(fan, t):
    """Lagrangian curve at a grid time of the fan (OffGridError otherwise)."""
    return curve_from_state(fan.model, fan.state(fan.time_index(t)))


def curve_at(fan, t):
    """Lagrangian curve at an arbitrary time in [0, T] (time-interpolated rows)."""
    return curve_from_state(fan.model, fan.state_at(t))


# ---------------------- essential selection ----------------------

@dataclass
class EssentialSolution:
    t: float
    x_grid: np.ndarray
    S: np.ndarray
    p: np.ndarray
    u: np.ndarray
    branch_id: np.ndarray

    def to_frame(self):
        return pd.DataFrame({"t": self.t, "x": self.x_grid, "S": self.S, "u": self.u,
                             "branch_id": self.branch_id})[ESSENTIAL_COLUMNS]


def essential(curve, x_grid, allow_uncovered=False):
    """Minimum branch action per x; ties go to smaller |p|, then to the smaller branch index."""
    x_grid = np.asarray(x_grid, dtype=float)
    nb, nx = len(curve.branches), len(x_grid)
    S = np.full((max(nb, 1), nx), np.inf)
    p = np.full((max(nb, 1), nx), np.nan)
    for b in curve.branches:
        cov = b.covers(x_grid)
        if cov.any():
            S[b.index, cov] = b.action(x_grid[cov])
            p[b.index, cov] = b.momentum(x_grid[cov])
    S_min = S.min(axis=0)
    uncovered = ~np.isfinite(S_min)
    if uncovered.any() and not allow_uncovered:
        bad = x_grid[uncovered]
        raise ProjectionError(
            f"{bad.size} query point(s) not covered by any branch at t={curve.t:.6g}, "
            f"e.g. x={', '.join(f'{v:.6g}' for v in bad[:5])}")
    tie = S <= (S_min + TIE_TOL * (1.0 + np.abs(S_min)))[None, :]
    abs_p = np.where(tie, np.abs(p), np.inf)
    # lexicographic: smallest |p| among ties, argmin picks the lowest branch index on equal |p|
    best = np.argmin(abs_p, axis=0)
    cols = np.arange(nx)
    branch_id = np.where(uncovered, -1, best)
    S_out = np.where(uncovered, np.nan, S[best, cols])
    p_out = np.where(uncovered, np.nan, p[best, cols])
    u_out = np.full(nx, np.nan)
    ok = ~uncovered
    if ok.any():
        u_out[ok] = curve.model.dP_dp(x_grid[ok], p_out[ok], curve.t)
    return EssentialSolution(curve.t, x_grid, S_out, p_out, u_out, branch_id)


# ---------------------- singularities ----------------------

@dataclass(frozen=True)
class Singularity:
    t: float
    x: float
    x0: float
    row: int


def first_zero_times(fan):
    """Per row, the first time J reaches zero (bisection on the variational system); inf if never."""
    J = fan.J
    tz = np.full(fan.n_rows, np.inf)
    alive_prev = np.isfinite(J[0]) & (J[0] > 0)
    hit = np.zeros(fan.n_rows, dtype=bool)
    k_hit = np.full(fan.n_rows, -1)
    for k in range(1, len(fan.times)):
        now = np.isfinite(J[k]) & (J[k] <= 0) & alive_prev & ~hit
        k_hit[now] = k
        hit |= now
        alive_prev &= np.isfinite(J[k])
    rows = np.flatnonzero(hit)
    if rows.size == 0:
        return tz
    k0 = k_hit[rows] - 1
    Y0 = np.stack([fan.x[k0, rows], fan.p[k0, rows], fan.S[k0, rows],
                   fan.J[k0, rows], fan.dp[k0, rows], fan.a_int[k0, rows]])
    t0 = fan.times[k0]
    lo, hi = t0.copy(), fan.times[k0 + 1].copy()
    for _ in range(BISECT_ITER):
        mid = 0.5 * (lo + hi)
        Jm = advance(fan.model, fan.a_field, Y0, t0, mid, BISECT_SUBSTEPS)[3]
        lo = np.where(Jm > 0, mid, lo)
        hi = np.where(Jm > 0, hi, mid)
    tz[rows] = 0.5 * (lo + hi)
    return tz


def _local_minima(tz):
    """Indices of local minima of tz; flat stretches collapse onto their median row."""
    n = len(tz)
    finite = np.isfinite(tz)
    cand = np.zeros(n, dtype=bool)
    for i in np.flatnonzero(finite):
        tol = FOLD_TIE * (1.0 + tz[i])
        nb = tz[max(0, i - 2):i + 3]
        cand[i] = np.all(tz[i] <= nb + tol)
    picks = []
    i = 0
    while i < n:
        if cand[i]:
            j = i
            while j + 1 < n and cand[j + 1] and abs(tz[j + 1] - tz[i]) <= FOLD_TIE * (1.0 + tz[i]):
                j += 1
            picks.append((i + j) // 2)
            i = j + 1
        else:
            i += 1
    # drop minima that are not separated from a lower neighbour minimum by a real ridge
    kept = []
    for m in picks:
        if kept:
            prev = kept[-1]
            ridge = np.max(tz[prev:m + 1])
            if ridge < max(tz[prev], tz[m]) + PROMINENCE * (1.0 + tz[m]):
                if tz[m] < tz[prev]:
                    kept[-1] = m
                continue
        kept.append(m)
    return kept


def _birth_at(fan, tz, i):
    x0 = fan.x0_grid
    x0_star, t_star = float(x0[i]), float(tz[i])
    if 0 < i < len(x0) - 1 and np.all(np.isfinite(tz[i - 1:i + 2])):
        a = np.polyfit(x0[i - 1:i + 2] - x0[i], tz[i - 1:i + 2], 2)
        flat = abs(tz[i - 1] - tz[i]) <= FOLD_TIE * (1 + tz[i]) and abs(tz[i + 1] - tz[i]) <= FOLD_TIE * (1 + tz[i])
        if a[0] > 0 and not flat:
            shift = -a[1] / (2 * a[0])
            if abs(shift) <= x0[i + 1] - x0[i - 1]:
                x0_star = float(x0[i] + shift)
                t_star = float(np.polyval(a, shift))
    state = fan.state_at(min(t_star, fan.T))
    lo, hi = max(i - 2, 0), min(i + 3, len(x0))
    x_star = float(np.interp(x0_star, x0[lo:hi], state.x[lo:hi]))
    return Singularity(t_star, x_star, x0_star, int(i))


def singularities(fan):
    """Every fold birth in the fan span, earliest first."""
    tz = first_zero_times(fan)
    births = [_birth_at(fan, tz, i) for i in _local_minima(tz)]
    births.sort(key=lambda s: (s.t, s.x0))
    for s in births:
        logger.info("Fold birth at t*=%.6g, x*=%.6g (x0*=%.6g)", s.t, s.x, s.x0)
    return births


def first_singularity(fan):
    """Earliest fold birth, or None when J stays positive on the whole fan."""
    births = singularities(fan)
    if not births:
        logger.info("No singularity up to T=%.6g", fan.T)
        return None
    return births[0]


# ---------------------- shock tracking ----------------------

@dataclass
class ShockRecord:
    id: int
    t_birth: float
    x_birth: float
    x0_birth: float
    samples: list = field(default_factory=list)
    status: str = "active"
    merged_into: Optional[int] = None
    parents: Tuple[int, ...] = ()
    e_start: float = 0.0
    path: Optional[pd.DataFrame] = None

    @property
    def anchors(self):
        last = self.samples[-1]
        return last["x0_l"], last["x0_r"]

    def finalize(self, model):
        frame = pd.DataFrame(self.samples)
        t, x = frame["t"].to_numpy(), frame["x_s"].to_numpy()
        dp_ = frame["p_l"].to_numpy() - frame["p_r"].to_numpy()
        P_l = model.P(x, frame["p_l"].to_numpy(), t)
        P_r = model.P(x, frame["p_r"].to_numpy(), t)
        with np.errstate(divide="ignore", invalid="ignore"):
            c_rh = np.where(np.abs(dp_) > 1e-12, (P_l - P_r) / dp_, frame["u_l"].to_numpy())
        if np.any(np.abs(dp_) <= 1e-12):
            logger.warning("shock %d: degenerate Rankine-Hugoniot denominator at %d sample(s)",
                           self.id, int(np.sum(np.abs(dp_) <= 1e-12)))
        frame["c_rh"] = c_rh
        frame["c"] = np.gradient(x, t) if len(t) > 1 else c_rh
        self.path = frame
        return self


def locate_shock(curve, x0_l, x0_r, sid):
    pos = curve.positive_branches()
    left = [b for b in pos if b.x0_lo <= x0_l]
    right = [b for b in pos if b.x0_hi >= x0_r]
    if not left or not right:
        raise ShockTrackingError(
            f"shock {sid} ran out of branches at t={curve.t:.6g} (anchors x0_l={x0_l:.6g}, x0_r={x0_r:.6g}); "
            f"widen the x0 range")
    l, r = left[-1], right[0]
    if l is r:
        x_s = float(l.x_of_x0(0.5 * (x0_l + x0_r)))
        on_root = False
    else:
        lo, hi = max(l.x_min, r.x_min), min(l.x_max, r.x_max)
        on_root = False
        if lo < hi:
            gap = lambda y: float(l.action(y) - r.action(y))
            g_lo, g_hi = gap(lo), gap(hi)
            if g_lo == 0.0:
                x_s, on_root = lo, True
            elif g_hi == 0.0:
                x_s, on_root = hi, True
            elif g_lo * g_hi < 0:
                x_s, on_root = brentq(gap, lo, hi, xtol=1e-14, rtol=1e-14), True
            else:
                x_s = lo if abs(g_lo) <= abs(g_hi) else hi
                miss = min(abs(g_lo), abs(g_hi))
                if miss > BRACKET_TOL * (1.0 + abs(float(l.action(x_s)))):
                    raise ShockTrackingError(
                        f"shock {sid}: action gap keeps one sign on [{lo:.6g}, {hi:.6g}] at t={curve.t:.6g} "
                        f"(closest |gap| {miss:.3g})")
                logger.warning("shock %d: no sign change of the action gap at t=%.6g; using x=%.6g "
                               "where |gap|=%.3g", sid, curve.t, x_s, miss)
        else:
            x_s = 0.5 * (r.x_min + l.x_max)
    p_l, p_r = float(l.momentum(x_s)), float(r.momentum(x_s))
    model = curve.model
    return {
        "t": curve.t,
        "x_s": float(x_s),
        "p_l": p_l,
        "p_r": p_r,
        "u_l": float(model.dP_dp(x_s, p_l, curve.t)),
        "u_r": float(model.dP_dp(x_s, p_r, curve.t)),
        "S_l": float(l.action(x_s)),
        "S_r": float(r.action(x_s)),
        "J_l": float(l.jacobian(x_s)),
        "J_r": float(r.jacobian(x_s)),
        "a_l": float(l.a_int_at(x_s)),
        "a_r": float(r.a_int_at(x_s)),
        "x0_l": float(l.x0_at(x_s)) if l is not r else x0_l,
        "x0_r": float(r.x0_at(x_s)) if l is not r else x0_r,
        "on_root": on_root,
    }


def seed_anchors(curve, x0_star, spacing):
    """Anchors for a new shock: the x0 span of the nearby J<0 branch once the fold has opened."""
    best = None
    for b in curve.branches:
        if b.sign > 0:
            continue
        dist = max(b.x0_lo - x0_star, x0_star - b.x0_hi, 0.0)
        if dist <= SEED_ROWS * spacing and (best is None or dist < best[0]):
            best = (dist, b)
    if best is None:
        return x0_star, x0_star
    return best[1].x0_lo, best[1].x0_hi


def _interp_sample(a, b, theta):
    out = {}
    for key, va in a.items():
        vb = b[key]
        out[key] = va + theta * (vb - va) if isinstance(va, float) else va
    return out


def _inside_absorbed(shocks, x0):
    for s in shocks:
        if s.status == "active" and s.samples:
            lo, hi = s.anchors
            if lo <= x0 <= hi:
                return True
    return False


def track_shocks(fan, births=None):
    """Track every shock seeded at the fold births; crossings of neighbours merge them."""
    if births is None:
        births = singularities(fan)
    pending = sorted(births, key=lambda s: s.t)
    shocks: List[ShockRecord] = []
    spacing = float(np.max(np.diff(fan.x0_grid))) if fan.n_rows > 1 else 0.0
    merges = []
    for k, t in enumerate(fan.times):
        if not pending and not any(s.status == "active" for s in shocks):
            break
        due = [s for s in pending if s.t <= t + 1e-12]
        active = [s for s in shocks if s.status == "active"]
        if not due and not active:
            continue
        curve = slice_fan(fan, float(t))
        for birth in due:
            pending.remove(birth)
            if _inside_absorbed(shocks, birth.x0):
                logger.debug("fold at x0=%.6g lies inside an absorbed interval; no new shock", birth.x0)
                continue
            shock = ShockRecord(len(shocks), birth.t, birth.x, birth.x0)
            x0_l, x0_r = seed_anchors(curve, birth.x0, spacing)
            shock.samples.append(locate_shock(curve, x0_l, x0_r, shock.id))
            shocks.append(shock)
            logger.info("Shock %d born at t=%.6g, x=%.6g", shock.id, birth.t, birth.x)
        for shock in active:
            x0_l, x0_r = shock.anchors
            if x0_l == x0_r:
                x0_l, x0_r = seed_anchors(curve, x0_l, spacing)
            shock.samples.append(locate_shock(curve, x0_l, x0_r, shock.id))
        if k > 0:
            _resolve_crossings(fan, curve, shocks, merges)
    for shock in shocks:
        shock.finalize(fan.model)
    return shocks, merges


@dataclass(frozen=True)
class MergeEvent:
    t: float
    x: float
    left: int
    right: int
    child: int


def find_crossings(a_prev, a_now, b_prev, b_now):
    """Linear-interpolated crossing (theta in (0, 1]) of x_a − x_b from negative to non-negative, or None."""
    d_prev = b_prev["x_s"] - a_prev["x_s"]
    d_now = b_now["x_s"] - a_now["x_s"]
    if d_prev > 0 and d_now <= 0:
        return d_prev / (d_prev - d_now)
    return None


def _resolve_crossings(fan, curve, shocks, merges):
    while True:
        active = [s for s in shocks if s.status == "active" and len(s.samples) >= 2
                  and s.samples[-2]["t"] < curve.t]
        active.sort(key=lambda s: s.samples[-2]["x_s"])
        hit = None
        for a, b in zip(active, active[1:]):
            theta = find_crossings(a.samples[-2], a.samples[-1], b.samples[-2], b.samples[-1])
            if theta is not None:
                hit = (a, b, theta)
                break
        if hit is None:
            return
        a, b, theta = hit
        dt = a.samples[-1]["t"] - a.samples[-2]["t"]
        c_a = (a.samples[-1]["x_s"] - a.samples[-2]["x_s"]) / dt
        c_b = (b.samples[-1]["x_s"] - b.samples[-2]["x_s"]) / dt
        if abs(c_a - c_b) < TANGENTIAL_TOL:
            raise UnsupportedConfigurationError(
                f"tangential crossing of shocks {a.id} and {b.id} near t={curve.t:.6g} "
                f"(speeds {c_a:.6g}, {c_b:.6g})")
        end_a = _interp_sample(a.samples[-2], a.samples[-1], theta)
        end_b = _interp_sample(b.samples[-2], b.samples[-1], theta)
        t_m = end_a["t"]
        x_m = 0.5 * (end_a["x_s"] + end_b["x_s"])
        end_a["x_s"] = end_b["x_s"] = x_m
        a.samples[-1], b.samples[-1] = end_a, end_b
        child = ShockRecord(len(shocks), t_m, x_m, 0.5 * (end_a["x0_r"] + end_b["x0_l"]),
                            parents=(a.id, b.id))
        child.samples.append(locate_shock(curve, end_a["x0_l"], end_b["x0_r"], child.id))
        a.status = b.status = "merged"
        a.merged_into = b.merged_into = child.id
        shocks.append(child)
        merges.append(MergeEvent(t_m, x_m, a.id, b.id, child.id))
        logger.info("Shocks %d and %d merged into %d at t=%.6g, x=%.6g", a.id, b.id, child.id, t_m, x_m)


def track_shock(fan, seed):
    """Track the single shock born at `seed` (a Singularity or a (t, x, x0) tuple)."""
    if not isinstance(seed, Singularity):
        t, x, x0 = seed
        seed = Singularity(float(t), float(x), float(x0), int(np.argmin(np.abs(fan.x0_grid - x0))))
    shocks, _ = track_shocks(fan, [seed])
    return shocks[0]


def admissibility_margin(shock, min_gap=1e-8):
    """min over opened samples of (u_l − c, c − u_r); positive means Lax-admissible."""
    path = shock.path
    opened = np.abs(path["p_l"] - path["p_r"]) > min_gap
    if not opened.any():
        return np.inf
    c = path["c_rh"][opened]
    return float(min((path["u_l"][opened] - c).min(), (c - path["u_r"][opened]).min()))
