import math

import numpy as np
import pytest

from cli.scenario import load_scenario
from core.characteristics import integrate_fan
from core.manifold import first_singularity
from core.symbol import make_symbol
from expr.parser import parse
from regularize.blend import (
    RegularizationParams,
    absorption_times,
    blended_fan,
    check_profile,
    insertion_jacobian,
    plateau_speed,
    shift_ramp,
    shifted_start,
    tune_shift,
)
from regularize.insertion import build_insertion
from regularize.limit_study import limit_grid, limit_study, strictly_decreasing
from regularize.surgery import forward_segment, surgered_fan, surgery
from utils.errors import ConfigurationError, UnsupportedConfigurationError

from conftest import RIEMANN_P0, RIEMANN_S0, scenario_path


def test_params_defaults_and_validation():
    params = RegularizationParams(0.01)
    assert params.beta == pytest.approx(0.1)
    with pytest.raises(ConfigurationError):
        RegularizationParams(0.01, beta=0.05)
    with pytest.raises(ConfigurationError):
        RegularizationParams(0.01, c_mode="moving")
    with pytest.raises(ConfigurationError):
        RegularizationParams(0.01, profile="sigmoid")
    with pytest.raises(ConfigurationError):
        RegularizationParams(0.0)


def test_profiles_are_monotone_switches():
    assert check_profile("tanh")
    assert check_profile("erf")


def test_plateau_speed(burgers):
    assert plateau_speed(burgers, 0.0, 1.0, 0.0, -1.0) == pytest.approx(0.0)
    assert plateau_speed(burgers, 0.0, 2.0, 0.0, 0.0) == pytest.approx(1.0)
    assert plateau_speed(burgers, 0.0, 0.7, 0.0, 0.7) == pytest.approx(0.7)


def test_insertion_focuses_at_one_point(burgers):
    u0 = parse("-tanh(x)")
    ins = build_insertion(burgers, u0, 0.0, 0.1, 2.0)
    K = 2 * math.tanh(0.1) / 0.2
    assert ins.t_ins == pytest.approx(1 / K)
    x0 = np.linspace(-0.1, 0.1, 5)
    positions = x0 + ins.t_ins * ins.velocity(x0, 0.0)
    np.testing.assert_allclose(positions, 0.0, atol=1e-12)
    np.testing.assert_allclose(ins.momentum(x0, 0.0), ins.velocity(x0, 0.0), atol=1e-10)


def test_insertion_rejects_expanding_data(burgers):
    with pytest.raises(ConfigurationError):
        build_insertion(burgers, parse("tanh(x)"), 0.0, 0.1, 2.0)
    with pytest.raises(UnsupportedConfigurationError):
        build_insertion(make_symbol(A="0.5", V="x"), parse("-tanh(x)"), 0.0, 0.1, 2.0)


def test_tuned_shift_keeps_jacobian_positive(burgers):
    ins = build_insertion(burgers, parse("-tanh(x)"), 0.0, 0.1, 2.0)
    params = RegularizationParams(0.01)
    A = tune_shift(ins, params, 2.0)
    assert 0.0 <= A <= 100.0
    assert insertion_jacobian(ins, params, A, 2.0) >= 0.5 * params.epsilon * (1 - 1e-6)
    assert tune_shift(ins, params, 0.5) == 0.0


def test_limit_grid_contains_window_ends():
    grid = limit_grid(-2.0, 2.0, 41, 0.013, 0.1)
    assert np.all(np.diff(grid) > 0)
    assert np.any(np.isclose(grid, 0.013 - 0.1, atol=1e-15))
    assert np.any(np.isclose(grid, 0.013 + 0.1, atol=1e-15))


def test_absorption_times(riemann_density):
    shock = riemann_density.shocks[0]
    x0 = np.array([-1.9, -0.5, 0.5, 1.9])
    tau = absorption_times(shock, x0)
    np.testing.assert_allclose(tau[1:3], 0.5, atol=2e-2)
    assert np.isinf(tau[0]) and np.isinf(tau[3])


def test_blended_fan_on_riemann_data(riemann_density):
    fan = riemann_density.fan
    params = RegularizationParams(0.01)
    bf = blended_fan(fan.model, parse(RIEMANN_S0), params, fan.T, fan.h_t, fan.x0_grid,
                     riemann_density.shocks[0], dS0=parse(RIEMANN_P0))
    after = bf.times >= bf.t_ins
    assert np.min(bf.J[after][:, bf.inserted]) / params.epsilon >= 0.4
    np.testing.assert_allclose(bf.c, 0.0, atol=1e-10)
    assert bf.plateau_mass(parse("1"), len(bf.times) - 1) == pytest.approx(2.0, abs=0.1)
    far = np.abs(fan.x0_grid) > 1.5
    shift = bf.A_shift * params.epsilon * np.sign(fan.x0_grid[far])
    np.testing.assert_allclose(bf.x[-1][far], fan.x[-1][far] + shift, atol=1e-10)


@pytest.fixture(scope="module")
def cos_fan():
    model = make_symbol(A="0.5", V="0.2*cos(x)")
    return integrate_fan(model, parse("-(abs(x) + log((1 + exp(-2*abs(x)))/2))"),
                         np.linspace(-6.0, 6.0, 1201), 1.6, 0.01, dS0=parse("-tanh(x)"))


def test_surgery_builds_a_graph(cos_fan):
    birth = first_singularity(cos_fan)
    curve = surgery(cos_fan.model, cos_fan, birth.t, birth.x0, 0.1, 0.1)
    a1, a2 = curve.angle_points
    assert a1 < a2
    assert curve.i2 - curve.i1 == 40
    assert np.all(np.diff(curve.x) > 0)
    forward = forward_segment(cos_fan.model, curve)
    np.testing.assert_allclose(forward[0][curve.i1:curve.i2 + 1], curve.x1_star, atol=1e-6)


def test_surgery_rejects_long_pullback(cos_fan):
    birth = first_singularity(cos_fan)
    with pytest.raises(ConfigurationError):
        surgery(cos_fan.model, cos_fan, birth.t, birth.x0, 0.1, 5.0)


def test_surgered_fan_keeps_segment_open(cos_fan):
    birth = first_singularity(cos_fan)
    curve = surgery(cos_fan.model, cos_fan, birth.t, birth.x0, 0.1, 0.1)
    params = RegularizationParams(0.01, beta=0.1)
    sf = surgered_fan(cos_fan.model, curve, params, 1.6, 0.01)
    assert sf.blended.sum() == 39
    after = sf.times >= sf.t1_star
    assert np.min(sf.J[after][:, sf.blended]) >= 0.49 * params.epsilon


def test_shift_ramp_dilates_the_insertion():
    x0 = np.array([-1.0, -0.1, 0.0, 0.05, 0.1, 1.0])
    w, dw = shift_ramp(x0, -0.1, 0.1)
    np.testing.assert_allclose(w, [-1.0, -1.0, 0.0, 0.5, 1.0, 1.0])
    np.testing.assert_allclose(dw, [0.0, 10.0, 10.0, 10.0, 10.0, 0.0])
    start, J = shifted_start(x0, -0.1, 0.1, 2.0, 0.01)
    np.testing.assert_allclose(start - x0, 0.02 * w)
    np.testing.assert_allclose(J, [1.0, 1.2, 1.2, 1.2, 1.2, 1.0])
    assert np.all(np.diff(start) > 0)


@pytest.fixture(scope="module")
def tanh_density():
    from core.density import build_generalized_density
    from core.manifold import track_shocks

    model = make_symbol(A="0.5")
    fan = integrate_fan(model, parse("-(abs(x) + log((1 + exp(-2*abs(x)))/2))"),
                        np.linspace(-4.0, 4.0, 801), 1.5, 0.01, dS0=parse("-tanh(x)"))
    shocks, merges = track_shocks(fan)
    return build_generalized_density(fan, parse("1"), shocks, merges)


def test_blended_rows_start_from_shifted_positions(tanh_density):
    fan = tanh_density.fan
    params = RegularizationParams(0.01)
    bf = blended_fan(fan.model, parse("-(abs(x) + log((1 + exp(-2*abs(x)))/2))"), params, fan.T, fan.h_t,
                     fan.x0_grid, tanh_density.shocks[0], dS0=parse("-tanh(x)"))
    x0 = fan.x0_grid
    ins = bf.insertion
    start, J0 = shifted_start(x0, ins.x_l, ins.x_r, bf.A_shift, params.epsilon)
    velocity = np.where(bf.inserted, ins.velocity(x0, 0.0), -np.tanh(x0))
    np.testing.assert_allclose(bf.x[0], start, atol=1e-14)
    np.testing.assert_allclose(bf.J[0], J0, atol=1e-14)
    for k in np.flatnonzero(bf.times <= 0.5):
        np.testing.assert_allclose(bf.x[k], start + bf.times[k] * velocity, atol=1e-10)
    assert bf.A_shift > 0


def test_limit_study_without_shock_is_exact():
    scenario = load_scenario(scenario_path("rarefaction"))
    frame = limit_study(scenario, [1e-2, 2.5e-3])
    assert frame.attrs["monotone"]
    np.testing.assert_allclose(frame[["sup_R_error", "e_error_at_t_ref", "e_error_at_T"]].to_numpy(), 0.0)
    assert list(frame["epsilon"]) == [1e-2, 2.5e-3]


def test_strictly_decreasing():
    assert strictly_decreasing([3e-3, 1e-3, 2e-4])
    assert not strictly_decreasing([3e-3, 3e-3, 2e-4])
    assert not strictly_decreasing([1e-13, 5e-13, 2e-3])
    assert strictly_decreasing([1e-13, 5e-13, 0.0])


@pytest.fixture(scope="module")
def tilted_fan():
    model = make_symbol(A="0.5", V="0.2*cos(x) + 0.05*x")
    return integrate_fan(model, parse("-(abs(x) + log((1 + exp(-2*abs(x)))/2))"),
                         np.linspace(-6.0, 6.0, 1201), 1.6, 0.01, dS0=parse("-tanh(x)"))


def test_surgered_plateau_speed_follows_the_shift(tilted_fan):
    birth = first_singularity(tilted_fan)
    curve = surgery(tilted_fan.model, tilted_fan, birth.t, birth.x0, 0.1, 0.1)
    a1, a2 = curve.angle_points
    T = curve.t1_star + 0.1
    speeds = {}
    for A in (0.0, 2.0):
        params = RegularizationParams(0.01, beta=0.1, A_shift=A)
        sf = surgered_fan(tilted_fan.model, curve, params, T, 0.01)
        assert sf.A_shift == A
        assert len(sf.c) == len(sf.times)
        shift = A * params.epsilon
        expected = plateau_speed(tilted_fan.model, a1 - shift, curve.p[curve.i1], a2 + shift,
                                 curve.p[curve.i2], curve.t_start)
        assert sf.c[0] == pytest.approx(expected, rel=1e-12)
        np.testing.assert_allclose(sf.x[0][curve.i1], a1 - shift)
        np.testing.assert_allclose(sf.x[0][curve.i2], a2 + shift)
        speeds[A] = sf.c[0]
    assert abs(speeds[2.0] - speeds[0.0]) > 1e-5
