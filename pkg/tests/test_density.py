import numpy as np
import pytest

from core.characteristics import integrate_fan
from core.density import (
    amplitude_frame,
    build_generalized_density,
    density_at,
    initial_mass,
    kirchhoff,
    madelung_assemble,
    masses,
    shocks_at,
)
from core.manifold import essential, slice_fan
from expr.parser import parse
from utils.errors import AdmissibilityError, FoldContactError


@pytest.fixture(scope="module")
def rarefaction():
    from core.symbol import make_symbol

    fan = integrate_fan(make_symbol(A="0.5"), parse("x^2/2"), np.linspace(-2.0, 2.0, 401), 1.0, 0.01)
    return build_generalized_density(fan, parse("1"), [])


def test_rarefaction_density(rarefaction):
    x = np.linspace(-1.0, 1.0, 21)
    np.testing.assert_allclose(density_at(rarefaction, 1.0, x), 0.5, rtol=1e-6)
    np.testing.assert_allclose(density_at(rarefaction, 0.5, x), 1 / 1.5, rtol=1e-6)


def test_focusing_density(burgers):
    fan = integrate_fan(burgers, parse("-x^2/2"), np.linspace(-2.0, 2.0, 401), 0.9, 0.01)
    gd = build_generalized_density(fan, parse("1"), [])
    x = np.linspace(-0.1, 0.1, 5)
    np.testing.assert_allclose(density_at(gd, 0.5, x), 2.0, rtol=1e-6)
    np.testing.assert_allclose(density_at(gd, 0.9, x), 10.0, rtol=1e-5)


def test_stratum_density_is_zero_for_linear_flux(rarefaction):
    assert rarefaction.stratum_rate(0.0, 0.5, 1.0) == 0.0


def test_riemann_amplitude_grows_linearly(riemann_density):
    path = riemann_density.shocks[0].path
    late = path[path["t"] >= 0.25]
    np.testing.assert_allclose(late["e"], 2 * late["t"], atol=1e-2)
    assert np.all(np.diff(path["e"]) >= -1e-12)


def test_mass_balance(riemann_density):
    frame = masses(riemann_density, riemann_density.fan.times[::10])
    m0 = initial_mass(riemann_density)
    assert m0 == pytest.approx(4.0)
    np.testing.assert_allclose(frame["total"], m0, rtol=1e-5)
    assert frame["singular_mass"].iloc[-1] > 1.9


def test_density_masks_shock_neighbourhood(riemann_density):
    x = np.array([-0.5, 0.0, 0.5])
    R = density_at(riemann_density, 1.0, x, collar=0.05)
    assert np.isnan(R[1])
    np.testing.assert_allclose(R[[0, 2]], 1.0, rtol=1e-6)
    live = shocks_at(riemann_density, 1.0)
    assert len(live) == 1
    assert live[0][1]["e"] == pytest.approx(2.0, abs=1e-2)


def test_kirchhoff_sum():
    assert kirchhoff([0.5, 1.25]) == pytest.approx(1.75)


def test_amplitude_frame_columns(riemann_density):
    frame = amplitude_frame(riemann_density)
    assert list(frame.columns) == ["t", "shock_id", "e"]
    assert frame["shock_id"].unique().tolist() == [0]


def test_madelung_assembly(rarefaction):
    h = 0.1
    sol = essential(slice_fan(rarefaction.fan, 1.0), np.linspace(-1.0, 1.0, 11))
    field = madelung_assemble(sol, rarefaction, h)
    expected = np.exp(-sol.x_grid ** 2 / (4 * h)) * np.sqrt(0.5)
    np.testing.assert_allclose(field.u, expected, rtol=1e-6)
    assert not field.mask.any()


@pytest.fixture(scope="module")
def untracked_tanh():
    from core.symbol import make_symbol

    fan = integrate_fan(make_symbol(A="0.5"), parse("-(abs(x) + log((1 + exp(-2*abs(x)))/2))"),
                        np.linspace(-4.0, 4.0, 801), 1.0, 0.01, dS0=parse("-tanh(x)"))
    return fan


def test_thin_jacobian_away_from_shocks_is_a_fold_contact(untracked_tanh, monkeypatch):
    gd = build_generalized_density(untracked_tanh, parse("1"), [])
    monkeypatch.setattr("core.density.FOLD_J_MIN", 0.5)
    assert np.all(np.isfinite(density_at(gd, 0.4, np.array([-0.5, 0.0, 0.5]))))
    with pytest.raises(FoldContactError, match="t=0.8"):
        density_at(gd, 0.8, np.array([0.0]))


def test_negative_density_is_inadmissible(untracked_tanh):
    gd = build_generalized_density(untracked_tanh, parse("x"), [])
    with pytest.raises(AdmissibilityError):
        density_at(gd, 0.5, np.linspace(-1.0, 1.0, 11))
