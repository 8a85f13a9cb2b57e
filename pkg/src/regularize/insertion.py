"""
Initial-data insertion on (x0* − β, x0* + β) for spatially homogeneous symbols.

Inside the window the velocity data is replaced by the affine field
P'(u1(x0, t), t) = −K(t) x0 + b(t) matched to the outer data at both ends,
so every inserted characteristic reaches the same point when ∫K dt = 1.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from utils.errors import ConfigurationError, UnsupportedConfigurationError

logger = logging.getLogger(__name__)

FOCUS_SUBSTEPS = 64


@dataclass
class Insertion:
    model: object
    x0_star: float
    beta: float
    p_l: np.ndarray        # outer momentum at the left end, per time on `times`
    p_r: np.ndarray
    times: np.ndarray
    K: np.ndarray
    b: np.ndarray
    t_ins: float           # focal time: ∫_0^t K = 1

    @property
    def x_l(self):
        return self.x0_star - self.beta

    @property
    def x_r(self):
        return self.x0_star + self.beta

    def contains(self, x0):
        x0 = np.asarray(x0, dtype=float)
        return (x0 >= self.x_l) & (x0 <= self.x_r)

    def coefficients(self, t):
        return float(np.interp(t, self.times, self.K)), float(np.interp(t, self.times, self.b))

    def velocity(self, x0, t):
        K, b = self.coefficients(t)
        return -K * np.asarray(x0, dtype=float) + b

    def momentum(self, x0, t):
        """u1(x0, t): inverse of P' applied to the affine velocity (NoRootError outside the box)."""
        v = self.velocity(x0, t)
        p, _ = self.model.legendre_array(np.zeros_like(v), v, t)
        return p


def build_insertion(model, u0, x0_star, beta, T, times=None):
    """Solve the end-point matching for K(t), b(t); u0 is the momentum data p0(x0)."""
    if not model.is_homogeneous:
        raise UnsupportedConfigurationError("insertion needs a spatially homogeneous symbol; use surgery")
    if beta <= 0:
        raise ConfigurationError(f"beta must be positive (got {beta})")
    if times is None:
        times = np.linspace(0.0, T, 2 * FOCUS_SUBSTEPS + 1)
    times = np.asarray(times, dtype=float)
    x_l, x_r = x0_star - beta, x0_star + beta
    p_l, p_r = float(u0(x_l)), float(u0(x_r))
    v_l = np.array([float(model.dP_dp(0.0, p_l, t)) for t in times])
    v_r = np.array([float(model.dP_dp(0.0, p_r, t)) for t in times])
    # −K x_l + b = v_l and −K x_r + b = v_r
    K = (v_l - v_r) / (x_r - x_l)
    b = v_l + K * x_l
    if np.any(K <= 0):
        raise ConfigurationError(
            f"insertion at x0*={x0_star:.6g} is not compressive (K <= 0); no focusing to regularize")
    if np.allclose(K, K[0], rtol=1e-14, atol=0.0):
        t_ins = 1.0 / K[0]
    else:
        integral = cumulative_trapezoid(K, times, initial=0.0)
        if integral[-1] < 1.0:
            raise ConfigurationError(f"insertion does not focus before T={times[-1]:.6g}")
        t_ins = float(np.interp(1.0, integral, times))
    logger.info("Insertion on [%.6g, %.6g]: K(0)=%.6g, b(0)=%.6g, focal time %.6g",
                x_l, x_r, K[0], b[0], t_ins)
    return Insertion(model, float(x0_star), float(beta), np.full_like(times, p_l), np.full_like(times, p_r),
                     times, K, b, float(t_ins))
