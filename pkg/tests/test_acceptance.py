"""End-to-end checks on the shipped scenarios (minutes, not seconds)."""
import numpy as np
import pytest
from scipy import integrate

from cli.pipeline import build_density, build_fan
from cli.scenario import load_scenario
from conftest import scenario_path
from core.density import density_at, initial_mass, shocks_at
from core.manifold import admissibility_margin, first_singularity
from oracle.godunov import godunov
from oracle.tunnel import run_lattices, tunnel_compare
from regularize.limit_study import limit_study
from verify.identity import BumpTestFunction, FanSolution, ShockPath, identity_residual

pytestmark = pytest.mark.slow


def scenario_density(name):
    scenario = load_scenario(scenario_path(name))
    fan = build_fan(scenario)
    return scenario, build_density(scenario, fan)


def test_three_plateau_merge():
    _, gd = scenario_density("three_plateau")
    assert len(gd.merges) == 1
    event = gd.merges[0]
    assert event.t == pytest.approx(1.0, abs=1e-2)
    assert event.x == pytest.approx(0.0, abs=1e-2)
    left, right, child = gd.shocks[event.left], gd.shocks[event.right], gd.shocks[event.child]
    e1 = float(np.interp(event.t, left.path["t"], left.path["e"]))
    e2 = float(np.interp(event.t, right.path["t"], right.path["e"]))
    assert child.e_start == pytest.approx(e1 + e2, abs=1e-3)
    assert e1 + e2 == pytest.approx(4.0, abs=5e-2)
    path = child.path
    rate = (path["e"].iloc[-1] - child.e_start) / (path["t"].iloc[-1] - event.t)
    assert rate == pytest.approx(4.0, rel=2e-2)


def test_jump_symbol_shock_is_admissible():
    _, gd = scenario_density("jump_homogeneous")
    assert gd.shocks
    assert admissibility_margin(gd.shocks[0]) > 0


def test_godunov_agrees_with_tracked_shock():
    scenario, gd = scenario_density("riemann_2_0")
    result = godunov(scenario.model, scenario.dS0, scenario.T, scenario.x_grid)
    tracked = gd.shocks[0].path["x_s"].iloc[-1]
    assert result.shocks[-1][0] == pytest.approx(tracked, abs=2e-2)
    assert tracked == pytest.approx(1.0, abs=2e-2)


def test_gaussian_tunnel():
    scenario, gd = scenario_density("gaussian_tunnel")
    lattices = run_lattices(scenario.model, scenario.S0, scenario.rho0, scenario.h_schedule,
                            scenario.lattice_range, scenario.lattice_dx, scenario.T)
    frame = tunnel_compare(gd, lattices, scenario.compare_window)
    assert frame["E_of_h"].max() <= 1e-3


def test_jump_tunnel_order():
    scenario, gd = scenario_density("quadratic_jump_tunnel")
    lattices = run_lattices(scenario.model, scenario.S0, scenario.rho0, scenario.h_schedule,
                            scenario.lattice_range, scenario.lattice_dx, scenario.T, threads=3)
    frame = tunnel_compare(gd, lattices, scenario.compare_window)
    assert np.all(np.diff(frame["E_of_h"]) < 0)
    assert frame["fitted_order"].iloc[0] >= 0.8


def eulerian_mass(gd, t, n=20001, gap=1e-6):
    """Simpson over x of the smooth density, split at every shock, plus the shock amplitudes."""
    k = int(np.argmin(np.abs(gd.fan.times - t)))
    t = float(gd.fan.times[k])
    x = gd.fan.x[k]
    lo, hi = float(np.nanmin(x)), float(np.nanmax(x))
    live = shocks_at(gd, t)
    cuts = [lo] + [state["x_s"] for _, state in live] + [hi]
    smooth = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        a_in = a + gap if a != lo else a
        b_in = b - gap if b != hi else b
        grid = np.linspace(a_in, b_in, n)
        smooth += integrate.simpson(density_at(gd, t, grid), x=grid)
    return smooth + sum(state["e"] for _, state in live)


@pytest.mark.parametrize("t", [1.5, 2.0, 3.0])
def test_eulerian_mass_balance(t):
    _, gd = scenario_density("burgers_tanh")
    assert eulerian_mass(gd, t) == pytest.approx(initial_mass(gd), rel=1e-6)


def test_amplitude_integrates_the_recorded_flux():
    _, gd = scenario_density("burgers_tanh")
    path = gd.shocks[0].path
    late = path[path["t"] >= 1.5]
    gained = integrate.trapezoid(late["flux"], x=late["t"])
    assert gained == pytest.approx(late["e"].iloc[-1] - late["e"].iloc[0], abs=2e-3)
    assert np.all(late["flux"] > 0)


def test_limit_study_converges():
    scenario = load_scenario(scenario_path("burgers_tanh"))
    assert first_singularity(build_fan(scenario)).t == pytest.approx(1.0, abs=1e-3)
    frame = limit_study(scenario, scenario.eps_schedule, scenario.regularization)
    assert frame.attrs["monotone"]
    for column in ("sup_R_error", "e_error_at_t_ref", "e_error_at_T"):
        assert np.all(np.diff(frame[column]) < 0), column
    np.testing.assert_allclose(frame["t_ref"], 1.0)
    assert frame["e_error_at_t_ref"].iloc[-1] <= 5e-3
    minJ = frame["minJ_over_eps"]
    assert np.all(minJ > 0.25)
    assert minJ.max() / minJ.min() <= 2.0


def test_three_plateau_identity_is_high_order():
    _, gd = scenario_density("three_plateau")
    solution = FanSolution(gd)
    zeta = BumpTestFunction(-0.47, 0.53, 0.3, 0.2)
    res = np.array([identity_residual(solution, zeta, level) for level in (5, 6, 7)])
    orders = np.log2(res[:-1] / res[1:])
    assert orders[0] >= 1.8
    assert res[2] < res[1]


def test_merge_bump_detects_kirchhoff_violation():
    _, gd = scenario_density("three_plateau")
    event = gd.merges[0]
    solution = FanSolution(gd)
    zeta = BumpTestFunction(event.x, event.t, 0.4, 0.2)
    exact = identity_residual(solution, zeta, 6)
    child = solution.paths[event.child]
    bad = ShockPath(child.t, child.x_s, child.c, child.e - 0.1 * gd.shocks[event.child].e_start, child.f)
    solution.paths[event.child] = bad
    violated = identity_residual(solution, zeta, 6)
    assert violated > 5 * exact


def test_quadratic_potential_tunnel():
    scenario, gd = scenario_density("quadratic_tunnel")
    lattices = run_lattices(scenario.model, scenario.S0, scenario.rho0, scenario.h_schedule,
                            scenario.lattice_range, scenario.lattice_dx, scenario.T)
    frame = tunnel_compare(gd, lattices, scenario.compare_window)
    assert list(frame["h"]) == [0.2, 0.1, 0.05]
    assert frame["E_of_h"].max() <= 1e-3
