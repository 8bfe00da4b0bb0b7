import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bayesflows import catalog
from bayesflows.errors import ConvergenceError, InputError, NumericDomainError
from bayesflows.flows import decay_curve
from bayesflows.functionals import BayesModel
from bayesflows.geometry import PotentialField
from bayesflows.grid import Grid, GridDensity
from bayesflows.spectral import (assemble_weighted_laplacian, best_convexity_constant,
                                 convex_envelope_1d, dense_spectral_gap, gl_poincare_bound,
                                 mass_one, poincare_convexity_check, spectral_gap)

OU = BayesModel(catalog.ou(1.0))


def ou_op(sigma2=1.0, h=0.01):
    g = Grid.with_spacing(-10 * math.sqrt(sigma2), 10 * math.sqrt(sigma2), h * math.sqrt(sigma2))
    return assemble_weighted_laplacian(BayesModel(catalog.ou(sigma2)), g)


OPS = {
    "ou": lambda: assemble_weighted_laplacian(OU, Grid.with_spacing(-8, 8, 0.05)),
    "double_well": lambda: assemble_weighted_laplacian(BayesModel(catalog.double_well()),
                                                       Grid.with_spacing(-4, 4, 0.05)),
    "ou_2d": lambda: assemble_weighted_laplacian(
        BayesModel(catalog.gauss_quadratic(np.diag([1.0, 0.5])), metric=catalog.constant(np.diag([2.0, 1.0]))),
        Grid.with_spacing([-6, -5], [6, 5], 0.3)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_operator_invariants(name):
    op = OPS[name]()
    assert np.abs(op.apply(np.ones(op.size))).max() <= 1e-12
    rng = np.random.default_rng(0)
    for _ in range(5):
        f, h = rng.normal(size=(2, op.size))
        lhs, rhs = op.inner(op.apply(f), h), op.inner(f, op.apply(h))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
        assert op.inner(op.apply(f), f) >= -1e-12
        assert op.inner(op.apply(f), f) == pytest.approx(op.dirichlet(f), rel=1e-10)
    assert sum(op.mu_weights) == pytest.approx(1.0, abs=1e-14)


@given(st.integers(0, 2**31), st.sampled_from(sorted(OPS)))
def test_operator_positive_semidefinite(seed, name):
    op = OPS[name]()
    f = np.random.default_rng(seed).normal(size=op.size)
    assert op.dirichlet(f) >= 0


def test_neumann_box():
    flat = BayesModel(catalog.zero())
    op = assemble_weighted_laplacian(flat, Grid.with_spacing(0, 1, 1 / 256))
    res = spectral_gap(op)
    assert res.lambda2 == pytest.approx(math.pi**2, rel=0.01)
    assert dense_spectral_gap(op).lambda2 == pytest.approx(res.lambda2, rel=1e-8)
    # eigenfunction is cos(pi x) up to sign
    x = op.grid.axes[0]
    v = res.eigenfunction * np.sign(res.eigenfunction[0])
    c = np.cos(np.pi * x)
    assert np.abs(v / op.norm(v) - c / op.norm(c)).max() <= 1e-3


@pytest.mark.parametrize("sigma2", [0.5, 1.0, 2.0])
def test_gaussian_gap(sigma2):
    res = spectral_gap(ou_op(sigma2))
    assert res.lambda2 == pytest.approx(1 / sigma2, rel=0.01)
    assert res.residual <= 1e-8


def test_dense_and_iterative_agree_2d():
    op = OPS["ou_2d"]()
    a, b = spectral_gap(op), dense_spectral_gap(op)
    assert a.lambda2 == pytest.approx(b.lambda2, rel=1e-7)


def test_anisotropic_2d_gap():
    # G^{-1} Hess = diag(1/2, 2): gap 1/2
    model = BayesModel(catalog.gauss_quadratic(np.diag([1.0, 0.5])), metric=catalog.constant(np.diag([2.0, 1.0])))
    op = assemble_weighted_laplacian(model, Grid.with_spacing([-6, -5], [6, 5], 0.1))
    assert spectral_gap(op).lambda2 == pytest.approx(0.5, rel=0.01)


def test_disconnected_support_has_tiny_gap():
    # two bumps at +-4; between them the potential is capped so the density is
    # tiny but positive
    def value(x):
        return np.minimum(2.0 * (np.abs(x[..., 0]) - 4.0) ** 2, 500.0)

    model = BayesModel(PotentialField(1, value, vectorized=True))
    op = assemble_weighted_laplacian(model, Grid.with_spacing(-8, 8, 0.02))
    assert spectral_gap(op).lambda2 < 1e-6


def test_convergence_failure_reports_residual():
    with pytest.raises(ConvergenceError) as info:
        spectral_gap(ou_op(), tol=1e-14, max_iter=1)
    assert info.value.residual > 0


def test_result_serialisation():
    res = spectral_gap(OPS["ou"]())
    d = json.loads(res.to_json())
    assert set(d) == {"lambda2", "residual", "n_iter"}
    lines = res.eigenfunction_text().splitlines()
    assert lines[0].startswith("# grid") and len(lines) == res.grid.size + 1


def smooth_basis(x):
    cols = [x**k for k in range(1, 6)]
    cols += [np.sin(k * x / 2) for k in range(1, 5)] + [np.cos(k * x / 2) for k in range(1, 5)]
    cols += [np.tanh(x - c) for c in (-1.0, 0.0, 1.0)]
    return np.stack(cols, axis=1)


def random_pairs(op, n, seed):
    x = op.grid.points[:, 0]
    B = smooth_basis(x)
    B = B / np.sqrt(op.mu_weights @ B**2)
    rng = np.random.default_rng(seed)
    return [(mass_one(op, B @ rng.normal(size=B.shape[1])), mass_one(op, B @ rng.normal(size=B.shape[1])))
            for _ in range(n)]


def test_poincare_checks_on_ou():
    op = OPS["ou"]()
    res = spectral_gap(op)
    pairs = random_pairs(op, 100, 1)
    funcs = [op.center(f0) for f0, _ in pairs]
    rep = poincare_convexity_check(op, funcs, pairs, lam=res.lambda2)
    assert rep.ok
    assert rep.parallelogram_error <= 1e-10
    # a constant slightly above the gap fails on the eigenfunction direction
    v = res.eigenfunction
    rep2 = poincare_convexity_check(op, [], [(mass_one(op, v), mass_one(op, -v))], lam=1.05 * res.lambda2)
    assert not rep2.convexity_ok


def test_eigenfunction_is_equality_case():
    op = OPS["ou"]()
    res = spectral_gap(op)
    v = res.eigenfunction
    rep = poincare_convexity_check(op, [v], lam=res.lambda2)
    assert abs(rep.poincare_margins[0]) <= 10 * res.residual * op.norm(v) ** 2
    f0 = mass_one(op, v)
    f1 = mass_one(op, -v)
    rep2 = poincare_convexity_check(op, [], [(f0, f1)], lam=res.lambda2)
    assert np.abs(rep2.convexity_margins).max() <= 10 * res.residual * op.norm(f0 - f1) ** 2


def test_identical_pair_is_trivial():
    op = OPS["ou"]()
    f = random_pairs(op, 1, 3)[0][0]
    rep = poincare_convexity_check(op, [], [(f, f)], lam=1.0)
    assert np.abs(rep.convexity_margins).max() <= 1e-12 * max(1.0, op.dirichlet(f))


def test_trial_functions_validated():
    op = OPS["ou"]()
    with pytest.raises(InputError):
        poincare_convexity_check(op, [np.ones(op.size)], lam=1.0)
    with pytest.raises(InputError):
        poincare_convexity_check(op, [], [(np.zeros(op.size), np.zeros(op.size))], lam=1.0)


@pytest.mark.parametrize("name", ["ou", "double_well"])
def test_best_convexity_constant_is_twice_the_gap(name):
    op = OPS[name]()
    lam2 = spectral_gap(op).lambda2
    kappa = best_convexity_constant(op, random_pairs(op, 200, 7))
    assert kappa == pytest.approx(2 * lam2, rel=0.05)
    assert kappa >= 2 * lam2 * (1 - 1e-8)


@pytest.mark.parametrize("model,box", [
    (OU, (-8, 8)),
    (BayesModel(catalog.double_well()), (-4, 4)),
], ids=["ou", "double_well"])
def test_gap_matches_l2_decay(model, box):
    g = Grid.with_spacing(box[0], box[1], 0.02)
    lam2 = spectral_gap(assemble_weighted_laplacian(model, g)).lambda2
    init = GridDensity.from_function(g, lambda x: np.exp(-(x[:, 0] - 0.8) ** 2 / 0.5))
    curve = decay_curve(model, init, "kl_fp", "L2", t_end=8.0, record_every=0.1, dt=0.002,
                        window=(3.0, 8.0))
    assert -curve.fitted_rate == pytest.approx(lam2, rel=0.03)


def test_envelope_of_convex_input_is_exact():
    x = np.linspace(-2, 2, 101)
    for w in (x**2, np.abs(x), np.exp(x), np.maximum(x, 0)):
        np.testing.assert_array_equal(convex_envelope_1d(x, w), w)


def test_double_well_envelope():
    eps = 0.3
    x = np.linspace(-2, 2, 401)
    W = (x**2 - 1) ** 2 / (4 * eps)
    env = convex_envelope_1d(x, W)
    inside = np.abs(x) <= 1
    assert np.abs(env[inside]).max() <= 1e-12
    np.testing.assert_allclose(env[~inside], W[~inside], atol=1e-12)
    assert (W - env).max() == pytest.approx(1 / (4 * eps), abs=1e-12)


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=60))
def test_envelope_is_a_convex_minorant(ws):
    w = np.array(ws)
    x = np.arange(w.size, dtype=float)
    env = convex_envelope_1d(x, w)
    assert np.all(env <= w + 1e-12)
    assert np.all(np.diff(env, 2) >= -1e-9)
    np.testing.assert_array_equal(convex_envelope_1d(w), env)


@pytest.mark.parametrize("k,eps", [(1, 0.5), (2, 1.0), (3, 0.25)])
def test_separable_envelope_gap(k, eps):
    # the envelope of a separable sum is the sum of the one-dimensional envelopes
    x = np.linspace(-2, 2, 801)
    W = (x**2 - 1) ** 2 / (4 * eps)
    gap1 = W - convex_envelope_1d(x, W)
    total = sum(np.meshgrid(*([gap1] * min(k, 2)), indexing="ij")) if k <= 2 else None
    gap = total.max() if total is not None else k * gap1.max()
    assert gap == pytest.approx(k / (4 * eps), abs=1e-8)


def test_gl_bound_values():
    assert gl_poincare_bound(0, 0.3, 0.7, 1.5) == pytest.approx(0.7**1.5)
    assert gl_poincare_bound(2, 1.0, 0.5, 1.0) == pytest.approx(math.exp(-2) * 0.5)
    assert gl_poincare_bound(2, 1.0, 0.5, 1.0) == pytest.approx(0.06767, abs=1e-5)
    with pytest.raises(NumericDomainError):
        gl_poincare_bound(-1, 1.0, 0.5, 1.0)
    with pytest.raises(NumericDomainError):
        gl_poincare_bound(1.5, 1.0, 0.5, 1.0)
    with pytest.raises(NumericDomainError):
        gl_poincare_bound(1, 0.0, 0.5, 1.0)


@given(st.integers(0, 10), st.floats(0.05, 5.0), st.floats(0.05, 5.0), st.floats(0.1, 3.0))
def test_gl_bound_monotone(k, eps, lam, alpha):
    b = gl_poincare_bound(k, eps, lam, alpha)
    assert gl_poincare_bound(k + 1, eps, lam, alpha) < b
    assert gl_poincare_bound(k, eps * 1.5, lam, alpha) >= b
