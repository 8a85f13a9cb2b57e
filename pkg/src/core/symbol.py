"""
Kolmogorov–Feller symbol P(x, p, t) = A p² + V + Σ λ_k (e^{p ν_k} − 1).

Jump terms are evaluated at real momenta (e^{pν}, not e^{ipν}) so that the
symbol is convex in p.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from expr.numdiff import d2_dx2, d_dx
from expr.parser import Expression, constant, parse
from utils.errors import (
    ConfigurationError,
    DomainError,
    ExponentRangeError,
    NoRootError,
    UnsupportedConfigurationError,
)

logger = logging.getLogger(__name__)

EXPONENT_GUARD = 700.0
P_BOX = (-20.0, 20.0)
LEGENDRE_TOL = 1e-14
LEGENDRE_MAX_ITER = 200


@dataclass(frozen=True)
class Jump:
    nu: float
    rate: Expression


@dataclass(frozen=True)
class SymbolModel:
    A: Expression
    V: Expression
    jumps: Tuple[Jump, ...] = ()
    time_dependent: bool = False
    p_box: Tuple[float, float] = P_BOX

    def __post_init__(self):
        coefficients = self.coefficients()
        uses_t = any(c.depends_on("t") for c in coefficients)
        uses_x = any(c.depends_on("x") for c in coefficients)
        if uses_t and not self.time_dependent:
            raise ConfigurationError("symbol coefficients depend on t but time_dependent is off")
        if self.time_dependent and uses_x:
            raise UnsupportedConfigurationError(
                "time-dependent symbols must be spatially homogeneous (no x in A, V, rates)")
        if any(c.depends_on("u") for c in coefficients):
            raise ConfigurationError("symbol coefficients may not depend on u")
        if self.p_box[0] >= self.p_box[1]:
            raise ConfigurationError(f"empty momentum box {self.p_box}")

    def coefficients(self):
        return (self.A, self.V) + tuple(j.rate for j in self.jumps)

    @property
    def is_homogeneous(self):
        return not any(c.depends_on("x") for c in self.coefficients())

    # ---------------------- evaluation ----------------------

    def _exponentials(self, p):
        out = []
        for jump in self.jumps:
            arg = p * jump.nu
            if np.any(np.abs(arg) > EXPONENT_GUARD):
                worst = float(np.max(np.abs(np.atleast_1d(arg))))
                raise ExponentRangeError(f"|p*nu| = {worst:.6g} exceeds {EXPONENT_GUARD} (nu={jump.nu})")
            out.append(np.exp(arg))
        return out

    def _A(self, x, t):
        a = self.A(x, t)
        if np.any(np.asarray(a) < 0):
            raise DomainError("diffusion coefficient A(x) is negative")
        return a

    def P(self, x, p, t=0.0):
        x, p = np.asarray(x, dtype=float), np.asarray(p, dtype=float)
        value = self._A(x, t) * p * p + self.V(x, t)
        for jump, e in zip(self.jumps, self._exponentials(p)):
            value = value + jump.rate(x, t) * (e - 1.0)
        return value

    def dP_dp(self, x, p, t=0.0):
        x, p = np.asarray(x, dtype=float), np.asarray(p, dtype=float)
        value = 2.0 * self._A(x, t) * p
        for jump, e in zip(self.jumps, self._exponentials(p)):
            value = value + jump.rate(x, t) * jump.nu * e
        return value

    def hess(self, x, p, t=0.0):
        x, p = np.asarray(x, dtype=float), np.asarray(p, dtype=float)
        value = 2.0 * self._A(x, t) + 0.0 * p
        for jump, e in zip(self.jumps, self._exponentials(p)):
            value = value + jump.rate(x, t) * jump.nu ** 2 * e
        return value

    def _coefficient_slopes(self, x, t, order):
        diff = d_dx if order == 1 else d2_dx2
        slopes = []
        for c in self.coefficients():
            if c.depends_on("x"):
                slopes.append(diff(lambda y, tt=t, cc=c: cc(y, tt), x))
            else:
                slopes.append(0.0 * x)
        return slopes

    def _x_derivative(self, x, p, t, order):
        x, p = np.asarray(x, dtype=float), np.asarray(p, dtype=float)
        dA, dV, *drates = self._coefficient_slopes(x, t, order)
        value = dA * p * p + dV
        for dl, e in zip(drates, self._exponentials(p)):
            value = value + dl * (e - 1.0)
        return value

    def dP_dx(self, x, p, t=0.0):
        return self._x_derivative(x, p, t, 1)

    def d2P_dx2(self, x, p, t=0.0):
        return self._x_derivative(x, p, t, 2)

    def d2P_dxdp(self, x, p, t=0.0):
        x, p = np.asarray(x, dtype=float), np.asarray(p, dtype=float)
        dA, _, *drates = self._coefficient_slopes(x, t, 1)
        value = 2.0 * dA * p
        for jump, dl, e in zip(self.jumps, drates, self._exponentials(p)):
            value = value + dl * jump.nu * e
        return value

    # ---------------------- Legendre transform ----------------------

    def velocity_range(self, x, t=0.0):
        lo, hi = self.p_box
        return self.dP_dp(x, lo, t), self.dP_dp(x, hi, t)

    def legendre_array(self, x, v, t=0.0):
        """Vectorised safeguarded Newton for dP/dp(x, p) = v on the momentum box."""
        x, v = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(v, dtype=float))
        x, v = x.astype(float), v.astype(float)
        lo = np.full(x.shape, self.p_box[0])
        hi = np.full(x.shape, self.p_box[1])
        v_lo, v_hi = self.dP_dp(x, lo, t), self.dP_dp(x, hi, t)
        outside = (v < v_lo) | (v > v_hi)
        if np.any(outside):
            k = np.flatnonzero(outside.ravel())[0]
            raise NoRootError(
                f"v={v.ravel()[k]:.6g} outside dP/dp range "
                f"[{v_lo.ravel()[k]:.6g}, {v_hi.ravel()[k]:.6g}] at x={x.ravel()[k]:.6g}")
        p = np.clip(np.zeros_like(x), lo, hi)
        for _ in range(LEGENDRE_MAX_ITER):
            g = self.dP_dp(x, p, t) - v
            lo = np.where(g < 0, p, lo)
            hi = np.where(g > 0, p, hi)
            h = self.hess(x, p, t)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = p - g / h
            bad = ~np.isfinite(newton) | (newton <= lo) | (newton >= hi)
            p_next = np.where(bad, 0.5 * (lo + hi), newton)
            if np.all(np.abs(p_next - p) <= LEGENDRE_TOL * (1.0 + np.abs(p))) or np.all(g == 0):
                p = p_next
                break
            p = p_next
        L = v * p - self.P(x, p, t)
        return p, L

    def legendre(self, x, v, t=0.0):
        p, L = self.legendre_array(float(x), float(v), t)
        return float(p), float(L)

    # ---------------------- convexity ----------------------

    def convexity_certificate(self, x_range, t=0.0, n_x=41, n_p=81):
        """Minimum of Hess_p P on a sample grid of the working box."""
        xs = np.linspace(x_range[0], x_range[1], n_x)
        ps = np.linspace(self.p_box[0], self.p_box[1], n_p)
        X, Pm = np.meshgrid(xs, ps, indexing="ij")
        H = self.hess(X, Pm, t)
        k = np.unravel_index(np.argmin(H), H.shape)
        return float(H[k]), float(X[k]), float(Pm[k])


def make_symbol(A="0.5", V="0", jumps=(), time_dependent=False, p_box=P_BOX):
    """Build a model from expression text or Expressions; jumps are (nu, rate) pairs."""

    def as_expr(value):
        if isinstance(value, Expression):
            return value
        if isinstance(value, (int, float)):
            return constant(value)
        return parse(value)

    return SymbolModel(
        A=as_expr(A),
        V=as_expr(V),
        jumps=tuple(Jump(float(nu), as_expr(rate)) for nu, rate in jumps),
        time_dependent=time_dependent,
        p_box=tuple(p_box),
    )


def eval_P(m, x, p, t=0.0):
    return m.P(x, p, t)


def eval_dP_dp(m, x, p, t=0.0):
    return m.dP_dp(x, p, t)


def eval_dP_dx(m, x, p, t=0.0):
    return m.dP_dx(x, p, t)


def eval_hess(m, x, p, t=0.0):
    return m.hess(x, p, t)


def legendre(m, x, v, t=0.0):
    return m.legendre(x, v, t)
