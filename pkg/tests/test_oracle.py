import numpy as np
import pytest

from core.characteristics import integrate_fan
from core.density import build_generalized_density
from core.manifold import essential, slice_fan
from core.symbol import make_symbol
from expr.parser import parse
from oracle.godunov import detect_shocks, godunov, l1_distance, riemann_flux, sonic_point
from oracle.hopf_lax import hopf_lax, hopf_lax_grid, lagrangian
from oracle.kf_lattice import LatticeField, grid_shifts, kf_lattice, lattice_from_initial, stability_bound
from oracle.tunnel import fitted_order, tunnel_compare, tunnel_error
from utils.errors import (
    BoundaryContactError,
    BoxTooSmallError,
    ConfigurationError,
    StabilityError,
    UnsupportedConfigurationError,
)

LOG_COSH = "abs(x) + log((1 + exp(-2*abs(x)))/2)"


def cells(lo, hi, n):
    dx = (hi - lo) / n
    return lo + dx * (np.arange(n) + 0.5)


# ---------------------- Hopf-Lax ----------------------

def test_hopf_lax_diverging_data(burgers):
    assert hopf_lax(burgers, parse("x^2/2"), 1.0, 1.0) == pytest.approx(0.25, abs=1e-8)


def test_lagrangian(burgers, jump_model):
    v = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_allclose(lagrangian(burgers, v), v ** 2 / 2, atol=1e-12)
    assert np.isinf(lagrangian(jump_model, np.array([-1.0]))[0])


def test_hopf_lax_matches_essential_action(burgers):
    S0, dS0 = parse(f"-({LOG_COSH})"), parse("-tanh(x)")
    fan = integrate_fan(burgers, S0, np.linspace(-6.0, 6.0, 601), 2.0, 0.05, dS0=dS0)
    x = np.array([-1.0, -0.3, 0.1, 0.7])
    for t in (0.5, 2.0):
        S_fan = essential(slice_fan(fan, t), x).S
        np.testing.assert_allclose(hopf_lax_grid(burgers, S0, x, t), S_fan, atol=1e-5)


def test_hopf_lax_matches_essential_action_for_jumps(jump_model):
    S0, dS0 = parse(f"-({LOG_COSH})"), parse("-tanh(x)")
    fan = integrate_fan(jump_model, S0, np.linspace(-10.0, 6.0, 1601), 2.0, 0.01, dS0=dS0)
    x = np.array([-1.0, -0.3, 0.1, 0.7])
    for t in (0.5, 2.0):
        S_fan = essential(slice_fan(fan, t), x).S
        np.testing.assert_allclose(hopf_lax_grid(jump_model, S0, x, t), S_fan, atol=1e-6)


def test_hopf_lax_small_time(burgers):
    S0 = parse(f"-({LOG_COSH})")
    assert hopf_lax(burgers, S0, 0.1, 1e-3) == pytest.approx(float(S0(0.1)) - 1e-3 * np.tanh(0.1) ** 2 / 2,
                                                               abs=1e-6)


def test_hopf_lax_errors(burgers):
    S0 = parse("x^2/2")
    with pytest.raises(BoxTooSmallError):
        hopf_lax(burgers, S0, 0.0, 1.0, y_range=(5.0, 6.0))
    with pytest.raises(ConfigurationError):
        hopf_lax(burgers, S0, 0.0, 0.0)
    with pytest.raises(UnsupportedConfigurationError):
        hopf_lax(make_symbol(A="0.5", V="x"), S0, 0.0, 1.0)


# ---------------------- Godunov ----------------------

def test_riemann_flux(burgers):
    assert sonic_point(burgers) == pytest.approx(0.0)
    flux = riemann_flux(burgers, np.array([1.0, -1.0, 0.5]), np.array([-1.0, 1.0, 1.0]))
    np.testing.assert_allclose(flux, [0.5, 0.0, 0.125])


def test_monotone_flux_is_upwind(jump_model):
    assert sonic_point(jump_model) == -np.inf
    flux = riemann_flux(jump_model, np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    np.testing.assert_allclose(flux, [0.0, np.e - 1.0])


def test_stationary_shock(burgers):
    x = cells(-1.0, 1.0, 400)
    result = godunov(burgers, lambda y: np.where(y < 0, 1.0, -1.0), 0.5, x)
    shocks = result.shocks[-1]
    assert len(shocks) == 1
    assert shocks[0] == pytest.approx(0.0, abs=0.01)


def test_moving_shock(burgers):
    x = cells(-1.0, 2.0, 600)
    result = godunov(burgers, lambda y: np.where(y < 0, 2.0, 0.0), 0.5, x)
    assert result.shocks[-1][0] == pytest.approx(0.5, abs=0.02)
    assert list(result.to_frame().columns) == ["t", "x", "p", "u"]


def test_rarefaction_fan(burgers):
    x = cells(-1.0, 1.0, 800)
    result = godunov(burgers, lambda y: np.where(y < 0, -1.0, 1.0), 0.5, x)
    exact = np.clip(x / 0.5, -1.0, 1.0)
    assert l1_distance(result.p[-1], exact, x) < 0.02
    assert len(result.shocks[-1]) == 0


def test_cfl_violation(burgers):
    x = cells(-1.0, 1.0, 100)
    with pytest.raises(StabilityError):
        godunov(burgers, lambda y: np.where(y < 0, 1.0, -1.0), 0.5, x, dt=0.05)


def test_detect_shocks_ignores_small_jumps():
    x = np.linspace(0.0, 1.0, 11)
    p = np.array([1.0] * 5 + [-1.0] * 6)
    p[8] += 0.01
    assert detect_shocks(p, x) == pytest.approx([0.45])


# ---------------------- KF lattice ----------------------

def test_lattice_validation():
    with pytest.raises(ConfigurationError):
        LatticeField(np.array([0.0, 1.0]), np.ones(2), 0.1)
    with pytest.raises(ConfigurationError):
        LatticeField(np.linspace(0, 1, 5), np.ones(5), 0.0)


def test_grid_shifts(jump_model):
    assert grid_shifts(jump_model, 0.1, 0.01) == [10]
    with pytest.raises(ConfigurationError):
        grid_shifts(jump_model, 0.1, 0.03)


def test_heat_lattice(burgers):
    h = 0.05
    start = lattice_from_initial(parse("x^2/2"), parse("1"), h, -2.0, 2.0, 5e-3)
    end = kf_lattice(burgers, start, 0.2)[-1]
    exact = (1.2) ** -0.5 * np.exp(-end.x_grid ** 2 / (2 * h * 1.2))
    assert np.max(np.abs(end.values - exact)) / np.max(exact) <= 1e-3
    assert end.t == pytest.approx(0.2)
    assert list(end.to_frame().columns) == ["t", "x", "u", "minus_h_log_u"]


def test_heat_lattice_is_second_order_in_dx(burgers):
    h, T = 0.05, 0.2
    errors = []
    for dx in (1e-2, 5e-3):
        start = lattice_from_initial(parse("x^2/2"), parse("1"), h, -2.0, 2.0, dx)
        end = kf_lattice(burgers, start, T)[-1]
        exact = (1 + T) ** -0.5 * np.exp(-end.x_grid ** 2 / (2 * h * (1 + T)))
        errors.append(np.max(np.abs(end.values - exact)))
    assert errors[0] / errors[1] >= 3.5


def test_pure_jump_lattice_stays_positive(jump_model):
    h = 0.1
    start = lattice_from_initial(parse("x^2/2"), parse("1"), h, -3.0, 3.0, 0.01)
    snaps = kf_lattice(jump_model, start, 0.2, snapshot_times=[0.05, 0.1, 0.2])
    for snap in snaps:
        assert np.min(snap.values) >= 0.0
    assert snaps[-1].meta["shifts"] == [10]


def test_potential_only_lattice():
    model = make_symbol(A="0", V="-1")
    h = 0.1
    start = lattice_from_initial(parse("x^2/2"), parse("1"), h, -3.0, 3.0, 0.01)
    snaps = kf_lattice(model, start, 0.5, dt=1e-3, snapshot_times=[0.25, 0.5])
    assert [s.t for s in snaps] == [0.25, 0.5]
    np.testing.assert_allclose(snaps[-1].values[1:-1], start.values[1:-1] * np.exp(-0.5 / h), rtol=1e-8)


def test_lattice_stability_and_boundary(burgers):
    h = 0.05
    start = lattice_from_initial(parse("x^2/2"), parse("1"), h, -2.0, 2.0, 5e-3)
    bound = stability_bound(burgers, start)
    with pytest.raises(StabilityError):
        kf_lattice(burgers, start, 0.1, dt=2 * bound)
    narrow = lattice_from_initial(parse("x^2/2"), parse("1"), h, -0.5, 0.5, 5e-3)
    with pytest.raises(BoundaryContactError):
        kf_lattice(burgers, narrow, 0.2)


# ---------------------- tunnel comparison ----------------------

def test_fitted_order():
    assert fitted_order([0.2, 0.1, 0.05], [0.4, 0.2, 0.1]) == pytest.approx(1.0)
    assert np.isnan(fitted_order([0.1], [0.3]))


def test_gaussian_tunnel_is_exact(burgers):
    T, h = 0.5, 0.1
    fan = integrate_fan(burgers, parse("x^2/2"), np.linspace(-2.0, 2.0, 401), T, 0.01)
    gd = build_generalized_density(fan, parse("1"), [])
    start = lattice_from_initial(parse("x^2/2"), parse("1"), h, -2.5, 2.5, 5e-3)
    end = kf_lattice(burgers, start, T)[-1]
    frame = tunnel_compare(gd, [end], window=(-1.0, 1.0))
    assert frame["E_of_h"].iloc[0] <= 1e-3
    assert 399 <= frame["n_compare"].iloc[0] <= 401
    with pytest.raises(ConfigurationError):
        tunnel_error(gd, end, window=(10.0, 11.0))
