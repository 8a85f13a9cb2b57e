import os
import sys

import numpy as np
import pytest

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
sys.path.insert(0, os.path.join(ROOT, "src"))

from core.symbol import make_symbol  # noqa: E402
from expr.parser import parse  # noqa: E402

SCENARIOS = os.path.join(ROOT, "scenarios")


def scenario_path(name):
    return os.path.join(SCENARIOS, f"{name}.ini")


@pytest.fixture
def burgers():
    """P = p²/2: the inviscid Burgers symbol."""
    return make_symbol(A="0.5")


@pytest.fixture
def jump_model():
    return make_symbol(A="0", jumps=[(1.0, "1")])


@pytest.fixture
def gaussian():
    return parse("x^2/2"), parse("exp(-x^2)")


@pytest.fixture
def uniform_grid():
    return np.linspace(-2.0, 2.0, 81)


RIEMANN_S0 = "-0.05*(abs(x/0.05) + log((1 + exp(-2*abs(x/0.05)))/2))"
RIEMANN_P0 = "-tanh(x/0.05)"


@pytest.fixture(scope="session")
def riemann_fan():
    """Smoothed Riemann data u_l = 1, u_r = −1 for Burgers; fold at t = 0.05."""
    from core.characteristics import integrate_fan

    model = make_symbol(A="0.5")
    return integrate_fan(model, parse(RIEMANN_S0), np.linspace(-2.0, 2.0, 801), 1.0, 0.01,
                         dS0=parse(RIEMANN_P0))


@pytest.fixture(scope="session")
def riemann_density(riemann_fan):
    from core.density import build_generalized_density
    from core.manifold import track_shocks

    shocks, merges = track_shocks(riemann_fan)
    return build_generalized_density(riemann_fan, parse("1"), shocks, merges)
