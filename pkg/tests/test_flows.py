import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bayesflows import catalog
from bayesflows.errors import InputError, StabilityError
from bayesflows.flows import (DecayCurve, FlowState, barenblatt, decay_curve, evolve,
                              porous_medium_dt, prior_stencil, stationary_density,
                              step_fokker_planck, step_porous_medium, step_weighted_laplacian,
                              wasserstein_1d)
from bayesflows.functionals import BayesModel, j_chi2, j_kl
from bayesflows.grid import Grid, GridDensity

OU = BayesModel(catalog.ou(1.0))
G8 = Grid.with_spacing(-8, 8, 0.01)


def gauss(grid, mean=0.0, var=1.0):
    return GridDensity.from_function(grid, lambda x: np.exp(-(x[:, 0] - mean) ** 2 / (2 * var)))


def test_fokker_planck_stationary_at_discrete_posterior():
    mu = stationary_density(OU, G8)
    s1 = step_fokker_planck(FlowState(0.0, mu, 0.01), OU)
    assert np.abs(s1.density.values - mu.values).max() <= 1e-10 * mu.values.max()


@pytest.mark.parametrize("model", [
    OU,
    BayesModel(catalog.double_well()),
    BayesModel(catalog.student(0.5), catalog.ou(2.0, mean=1.0)),
], ids=["ou", "double_well", "student"])
@pytest.mark.parametrize("scheme,tol", [("semi-implicit", 1e-10), ("explicit", 1e-8)])
def test_mass_conservation_per_step(model, scheme, tol):
    g = Grid.with_spacing(-6, 6, 0.05)
    dt = 0.01 if scheme == "semi-implicit" else 5e-5
    state = FlowState(0.0, gauss(g, 1.0, 0.5), dt, scheme)
    for _ in range(20):
        new = step_fokker_planck(state, model)
        assert abs(new.mass() - state.mass()) <= tol
        assert np.all(new.density.values >= 0)
        state = new


def test_fokker_planck_2d_mass_and_stationarity():
    model = BayesModel(catalog.gauss_quadratic(np.diag([1.0, 0.5])), metric=catalog.constant(np.diag([1.0, 2.0])))
    g = Grid.with_spacing([-5, -5], [5, 5], 0.1)
    mu = stationary_density(model, g)
    s = FlowState(0.0, mu, 0.05)
    s1 = step_fokker_planck(s, model)
    assert np.abs(s1.density.values - mu.values).max() <= 1e-10 * mu.values.max()
    init = GridDensity.from_function(g, lambda x: np.exp(-((x[:, 0] - 1) ** 2 + x[:, 1] ** 2)))
    s = FlowState(0.0, init, 0.05)
    for _ in range(5):
        n = step_fokker_planck(s, model)
        assert abs(n.mass() - s.mass()) <= 1e-10
        s = n


def test_explicit_step_bound():
    with pytest.raises(StabilityError):
        step_fokker_planck(FlowState(0.0, gauss(G8), 0.1, "explicit"), OU)


def test_ou_mean_relaxation():
    g = Grid.with_spacing(-8, 8, 0.01)
    means = []
    state = FlowState(0.0, gauss(g, 1.0, 1.0), 0.001)
    for k in range(1, 21):
        state = evolve(state, OU, "kl_fp", 0.1 * k)
        means.append(state.density.mean()[0])
    t = 0.1 * np.arange(1, 21)
    np.testing.assert_allclose(means, np.exp(-t), rtol=0.02)


def test_heat_equation_variance_growth():
    flat = BayesModel(catalog.zero())
    g = Grid.with_spacing(-15, 15, 0.02)
    state = FlowState(0.0, gauss(g, 0.0, 0.1), 0.002)
    for t in (0.25, 0.5, 1.0):
        state = evolve(state, flat, "kl_fp", t)
        assert state.density.covariance()[0, 0] == pytest.approx(0.1 + 2 * t, rel=0.02)


def test_weighted_laplacian_fixes_constants():
    mu = stationary_density(OU, G8)
    s1 = step_weighted_laplacian(FlowState.from_rho(OU, G8, np.ones(G8.size), t=0.0, dt=0.01), OU)
    assert np.abs(s1.rho(OU) - 1).max() <= 1e-12
    assert np.abs(s1.density.values - mu.values).max() <= 1e-12 * mu.values.max()


def test_cross_scheme_consistency():
    init = gauss(G8, 1.0, 0.5)
    a = evolve(FlowState(0.0, init, 0.005), OU, "kl_fp", 0.5)
    b = evolve(FlowState(0.0, init, 0.005), OU, "wl", 0.5)
    assert a.density.l1_distance(b.density) <= 1e-6


def test_weighted_laplacian_spectral_gap_decay():
    mu = stationary_density(OU, G8)

    def l2(state):
        r = state.rho(OU) - 1
        return math.sqrt(mu.integrate(r * r))

    state = FlowState(0.0, gauss(G8, 1.0, 0.5), 0.001)
    e0 = l2(state)
    for k in range(1, 21):
        state = evolve(state, OU, "wl", 0.1 * k)
        assert l2(state) <= 1.03 * math.exp(-0.1 * k) * e0


def test_porous_medium_stationary_for_flat_likelihood():
    model = BayesModel(catalog.ou(1.0))
    g = Grid.with_spacing(-8, 8, 0.05)
    state = FlowState.from_rho_tilde(model, g, np.ones(g.size), t=0.0, scheme="explicit")
    end = evolve(state, model, "chi2_pm", 1.0)
    assert np.abs(end.density.values - state.density.values).max() <= 1e-8 * state.density.values.max()


def test_porous_medium_stationary_state_with_likelihood():
    # discrete stationary state of the equation as written: (c - phi/2)_+ relative to the prior
    model = BayesModel(catalog.zero(), catalog.ou(1.0))
    g = Grid.with_spacing(-4, 4, 0.05)
    x = g.points[:, 0]
    c = 1.0
    rt = np.maximum(c - x**2 / 4, 0)
    state = FlowState.from_rho_tilde(model, g, rt, t=0.0, scheme="explicit")
    end = evolve(state, model, "chi2_pm", 1.0)
    assert end.density.l1_distance(state.density) <= 0.02


@given(st.floats(-1, 1), st.floats(0.2, 1.0))
def test_porous_medium_mass_positivity_and_descent(mean, var):
    model = BayesModel(catalog.ou(1.0))
    g = Grid.with_spacing(-6, 6, 0.1)
    state = FlowState(0.0, gauss(g, mean, var), None, "explicit")
    J = j_chi2(state.density, model)
    for _ in range(30):
        new = step_porous_medium(state, model)
        assert abs(new.mass() - state.mass()) <= 1e-8
        assert np.all(new.density.values >= 0)
        Jn = j_chi2(new.density, model)
        assert Jn <= J + 1e-12
        state, J = new, Jn


def test_porous_medium_rejects_large_step():
    model = BayesModel(catalog.ou(1.0))
    state = FlowState(0.0, gauss(Grid.with_spacing(-6, 6, 0.1)), None, "explicit")
    bound = porous_medium_dt(state, model)
    with pytest.raises(StabilityError):
        step_porous_medium(state, model, dt=2 * bound)


def support_radius(state, model, level=1e-3):
    rt = state.rho_tilde(model)
    x = state.grid.axes[0]
    return np.abs(x[rt > level * rt.max()]).max()


def test_barenblatt_support_exponent():
    flat = BayesModel(catalog.zero())
    g = Grid.with_spacing(-6, 6, 0.02)
    t0 = 0.1
    state = FlowState.from_rho_tilde(flat, g, barenblatt(g, t0), t=t0, scheme="explicit")
    times = np.geomspace(t0, 1.0, 6)
    radii = [support_radius(state, flat)]
    for t in times[1:]:
        state = evolve(state, flat, "chi2_pm", t)
        radii.append(support_radius(state, flat))
    slope = np.polyfit(np.log(times), np.log(radii), 1)[0]
    assert slope == pytest.approx(1 / 3, rel=0.05)


def test_barenblatt_profile_is_tracked():
    flat = BayesModel(catalog.zero())
    g = Grid.with_spacing(-6, 6, 0.02)
    state = FlowState.from_rho_tilde(flat, g, barenblatt(g, 0.1), t=0.1, scheme="explicit")
    end = evolve(state, flat, "chi2_pm", 0.5)
    exact = barenblatt(g, 0.5)
    err = np.abs(end.rho_tilde(flat) - exact).max() / exact.max()
    assert err <= 0.02


def test_wasserstein_oracles():
    g = Grid.with_spacing(-20, 20, 0.01)
    a = gauss(g)
    assert wasserstein_1d(a, a) == pytest.approx(0.0, abs=1e-12)
    assert wasserstein_1d(a, gauss(g, 2.0)) == pytest.approx(2.0, abs=1e-3)
    assert wasserstein_1d(a, gauss(g, 0.0, 4.0)) == pytest.approx(1.0, abs=1e-3)


def test_kl_decay_rate_ou():
    curve = decay_curve(OU, gauss(G8, 2.0, 0.5), "kl_fp", "KL", t_end=2.0, record_every=0.01,
                        window=(0.5, 2.0))
    assert curve.fitted_rate <= -1 + 0.05
    assert np.all(np.diff(curve.values) <= 0)


def test_decay_from_posterior_is_flat():
    mu = stationary_density(OU, G8)
    for functional in ("KL", "CHI2", "L2"):
        curve = decay_curve(OU, mu, "kl_fp", functional, t_end=0.5, record_every=0.1)
        assert np.all(np.abs(curve.values) <= 1e-9)


def test_w2_decay_monotone():
    g = Grid.with_spacing(-10, 10, 0.01)
    curve = decay_curve(OU, gauss(g, 2.0, 0.5), "kl_fp", "W2", t_end=3.0, record_every=0.1, dt=0.001)
    assert np.all(np.diff(curve.values) <= 1e-4)
    # Gaussian W2 along the OU flow: mean 2e^{-t}, variance 1 - 0.5e^{-2t}
    t = curve.times
    exact = np.sqrt((2 * np.exp(-t)) ** 2 + (np.sqrt(1 - 0.5 * np.exp(-2 * t)) - 1) ** 2)
    np.testing.assert_allclose(curve.values, exact, atol=2e-3)


def test_energy_descent_along_fokker_planck():
    model = BayesModel(catalog.double_well(), catalog.ou(4.0, mean=0.5))
    g = Grid.with_spacing(-5, 5, 0.02)
    state = FlowState(0.0, gauss(g, -1.5, 0.3), 0.01)
    J = j_kl(state.density, model)
    floor = -model.log_Z(g)
    for _ in range(100):
        state = step_fokker_planck(state, model)
        Jn = j_kl(state.density, model)
        assert Jn <= J + 1e-12
        if J - floor > 1e-9:
            assert Jn < J
        J = Jn


def test_flows_agree_at_long_times():
    model = BayesModel(catalog.ou(1.0))
    g = Grid.with_spacing(-8, 8, 0.04)
    init = gauss(g, 0.5, 0.64)
    a = evolve(FlowState(0.0, init, 0.01), model, "kl_fp", 10.0)
    b = evolve(FlowState(0.0, init, None, "explicit"), model, "chi2_pm", 10.0)
    assert a.density.l1_distance(b.density) <= 1e-3


def test_grid_refinement_changes_rate_little():
    rates = []
    for h in (0.02, 0.01):
        g = Grid.with_spacing(-8, 8, h)
        rates.append(decay_curve(OU, gauss(g, 2.0, 0.5), "kl_fp", "KL", 2.0, 0.01,
                                 window=(0.5, 2.0)).fitted_rate)
    assert abs(rates[1] - rates[0]) <= 0.01 * abs(rates[1])


def test_decay_curve_csv_roundtrip():
    curve = DecayCurve([0.0, 0.5, 1.0, 1.5], [1.0, 0.5, 0.25, 0.125])
    assert curve.fitted_rate == pytest.approx(-2 * math.log(2))
    back = DecayCurve.from_csv(curve.to_csv())
    np.testing.assert_array_equal(back.values, curve.values)
    assert back.fitted_rate == curve.fitted_rate


def test_decay_curve_rejects_bad_input():
    with pytest.raises(InputError):
        DecayCurve([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(InputError):
        decay_curve(OU, gauss(G8), "kl_fp", "bogus")


def test_prior_stencil_constant_is_uniform_for_flat_prior():
    flat = BayesModel(catalog.zero())
    g = Grid.with_spacing(-2, 2, 0.1)
    st_ = prior_stencil(flat, g)
    np.testing.assert_allclose(st_.density, st_.density[0], rtol=1e-14)


def test_face_average_survives_tiny_densities():
    from bayesflows.stencil import log_mean, sg_mean

    a = np.array([1e-225, 1e-300, 0.3, 0.0])
    b = np.array([2e-225, 1e-290, 0.7, 1.0])
    out = sg_mean(a, b)
    assert out[0] == pytest.approx(2 * math.log(2) * 1e-225, rel=1e-12)
    assert out[1] > 0 and out[3] == 0
    assert out[2] == pytest.approx(0.21 / log_mean(0.3, 0.7), rel=1e-14)
    np.testing.assert_array_equal(sg_mean(a, b), sg_mean(b, a))
