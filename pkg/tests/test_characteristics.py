import numpy as np
import pytest

from cli.pipeline import build_fan
from cli.scenario import load_scenario
from core.characteristics import hamiltonian_drift, integrate_fan, jacobian_check, time_grid
from core.symbol import make_symbol
from expr.parser import parse
from utils.errors import ConfigurationError, OffGridError

from conftest import scenario_path


@pytest.fixture
def rarefaction_fan(burgers):
    return integrate_fan(burgers, parse("x^2/2"), np.linspace(-2.0, 2.0, 81), 1.0, 0.05)


def test_diverging_rays(rarefaction_fan):
    fan = rarefaction_fan
    t = fan.times[-1]
    np.testing.assert_allclose(fan.x[-1], fan.x0_grid * (1 + t), atol=1e-8)
    np.testing.assert_allclose(fan.p[-1], fan.x0_grid, atol=1e-8)
    np.testing.assert_allclose(fan.J[-1], 1 + t, atol=1e-6)
    np.testing.assert_allclose(fan.S[-1], fan.x[-1] ** 2 / (2 * (1 + t)), atol=1e-8)
    np.testing.assert_allclose(fan.a_int[-1], 0.0)


def test_linear_potential_action():
    model = make_symbol(A="0.5", V="x")
    fan = integrate_fan(model, parse("0"), np.linspace(-2.0, 2.0, 41), 1.0, 0.05)
    t = fan.times[-1]
    np.testing.assert_allclose(fan.p[-1], -t, atol=1e-8)
    np.testing.assert_allclose(fan.S[-1], -fan.x[-1] * t - t ** 3 / 6, atol=1e-8)


def test_off_grid_state_matches_exact_rays(rarefaction_fan):
    state = rarefaction_fan.state_at(0.37)
    np.testing.assert_allclose(state.x, rarefaction_fan.x0_grid * 1.37, atol=1e-6)
    np.testing.assert_allclose(state.J, 1.37, atol=1e-6)


def test_time_index(rarefaction_fan):
    assert rarefaction_fan.time_index(0.5) == 10
    with pytest.raises(OffGridError):
        rarefaction_fan.time_index(0.51)
    with pytest.raises(OffGridError):
        rarefaction_fan.state_at(2.0)


def test_jacobian_and_hamiltonian_checks(rarefaction_fan):
    assert jacobian_check(rarefaction_fan).max_deviation < 1e-6
    assert hamiltonian_drift(rarefaction_fan) < 1e-10


def test_thread_count_does_not_change_results(burgers):
    x0 = np.linspace(-3.0, 3.0, 600)
    S0, dS0 = parse("-x^3/3"), parse("-x^2")
    one = integrate_fan(burgers, S0, x0, 0.5, 0.05, dS0=dS0, threads=1)
    many = integrate_fan(burgers, S0, x0, 0.5, 0.05, dS0=dS0, threads=3)
    np.testing.assert_array_equal(one.x, many.x)
    np.testing.assert_array_equal(one.S, many.S)


def test_rows_leaving_the_box_are_truncated(burgers):
    fan = integrate_fan(burgers, parse("x^2/2"), np.linspace(-2.0, 2.0, 21), 1.0, 0.05, x_box=(-3.0, 3.0))
    assert fan.escaped_at[0] > 0
    assert fan.escaped_at[10] == -1
    assert not fan.alive(len(fan.times) - 1)[0]


def test_invalid_grids(burgers):
    with pytest.raises(ConfigurationError):
        integrate_fan(burgers, parse("0"), np.array([0.0, -1.0]), 1.0, 0.1)
    with pytest.raises(ConfigurationError):
        time_grid(1.0, 0.0)


def test_fan_frame_columns(rarefaction_fan):
    frame = rarefaction_fan.to_frame(every=10)
    assert list(frame.columns) == ["t", "x0", "x", "p", "S", "J", "a_int"]
    assert frame["t"].nunique() == 3


def test_rk4_converges_at_fourth_order():
    model = make_symbol(A="0.5", V="0.5*cos(x)")
    x0 = np.linspace(-1.0, 1.0, 11)

    def final_x(h_t):
        return integrate_fan(model, parse("0"), x0, 2.0, h_t, monitor=False).x[-1]

    exact = final_x(0.0125)
    coarse = np.max(np.abs(final_x(0.2) - exact))
    fine = np.max(np.abs(final_x(0.1) - exact))
    assert coarse / fine >= 12


def test_jacobian_check_on_focusing_rays():
    fan = build_fan(load_scenario(scenario_path("focusing")))
    assert jacobian_check(fan).max_deviation < 1e-6


def test_jacobian_check_is_relative_near_a_fold(burgers):
    fan = integrate_fan(burgers, parse("-x^2/2"), np.linspace(-2.0, 2.0, 81), 0.99, 0.01)
    np.testing.assert_allclose(fan.J[-1], 0.01, atol=1e-12)
    assert jacobian_check(fan).max_deviation < 1e-8
    fan.J[-1] += 1e-7
    report = jacobian_check(fan)
    assert report.max_deviation == pytest.approx(1e-5, rel=1e-3)
    assert report.t == pytest.approx(0.99)
