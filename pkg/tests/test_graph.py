import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, optimize

from bayesflows.errors import InputError, SingularPriorError
from bayesflows.geometry import Box, MetricField, PotentialField, lambda_G
from bayesflows.graph import (GraphModel, LatentState, build_graph, eigen_hessian_min,
                              fractional_laplacian_apply, gl_potentials, hat_kernel,
                              laplacian, logistic_phi, map_estimate, objective,
                              posterior_label_summary, precond_langevin_step, probit_phi,
                              probit_hessian_diag, read_edge_list, read_labels, run_chains,
                              sample_prior)


def path(n, w=1.0):
    W = np.zeros((n, n))
    i = np.arange(n - 1)
    W[i, i + 1] = W[i + 1, i] = w
    return W


def random_graph(n, seed, p=0.5):
    rng = np.random.default_rng(seed)
    while True:
        W = np.triu(rng.uniform(0.1, 2.0, (n, n)) * (rng.random((n, n)) < p), 1)
        W = W + W.T
        if GraphModel(W).connected:
            return W


def two_cliques():
    W = np.zeros((8, 8))
    for block in (range(4), range(4, 8)):
        for i in block:
            for j in block:
                if i != j:
                    W[i, j] = 1.0
    W[3, 4] = W[4, 3] = 0.1
    return W


# graph construction

def test_hat_kernel_pair():
    W = build_graph([[0.0], [0.5]], r=1.0)
    assert W[0, 1] == 0.5 and W[1, 0] == 0.5 and W[0, 0] == 0


def test_far_points_are_disconnected():
    W = build_graph([[0.0], [2.0], [5.0]], r=1.0)
    assert np.all(W == 0)
    m = GraphModel(W)
    assert not m.connected and m.lambda_min == 0
    with pytest.raises(SingularPriorError):
        fractional_laplacian_apply(m, np.array([1.0, -1.0, 0.0]))


def test_circle_matches_brute_force():
    n = 20
    th = 2 * np.pi * np.arange(n) / n
    X = np.stack([np.cos(th), np.sin(th)], axis=1)
    d2, d3 = 2 * math.sin(2 * math.pi / n), 2 * math.sin(3 * math.pi / n)
    r = 0.5 * (d2 + d3)
    W_ref = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                W_ref[i, j] = max(1.0 - np.sqrt(np.sum((X[i] - X[j]) ** 2)) / r, 0.0)
    L_ref = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            L_ref[i, j] = -W_ref[i, j]
        L_ref[i, i] = sum(W_ref[i])
    W = build_graph(X, r)
    np.testing.assert_allclose(laplacian(W), L_ref, rtol=0, atol=1e-15)
    assert np.all((W > 0).sum(axis=1) == 4)


def test_duplicates_and_errors():
    W = build_graph([[1.0], [1.0]], r=1.0)
    assert W[0, 1] == hat_kernel(0.0)
    with pytest.raises(InputError):
        build_graph([[0.0]], r=1.0)
    with pytest.raises(InputError):
        build_graph([[0.0], [1.0]], r=0.0)


@given(st.integers(2, 12), st.integers(0, 10**6))
def test_laplacian_invariants(n, seed):
    W = np.random.default_rng(seed).uniform(0, 1, (n, n))
    m = GraphModel(W + W.T)
    assert np.abs(m.L @ np.ones(n)).max() <= 1e-12
    assert np.all(np.diff(m.evals) >= 0) and m.evals[0] == 0
    assert np.linalg.eigvalsh(m.L)[0] >= -1e-12
    np.testing.assert_allclose(m.evecs[:, 0], 1 / math.sqrt(n))


def test_io_parsers():
    W = read_edge_list("# path\n0 1 1.0\n1 2 2.5\n")
    np.testing.assert_array_equal(W, [[0, 1, 0], [1, 0, 2.5], [0, 2.5, 0]])
    assert read_edge_list("0 1 1", n=4).shape == (4, 4)
    idx, y = read_labels("0 -1\n5 1\n")
    assert idx.tolist() == [0, 5] and y.tolist() == [-1.0, 1.0]
    for bad in ("0 1", "0 1 -1", "a b c"):
        with pytest.raises((InputError, ValueError)):
            read_edge_list(bad)
    with pytest.raises(InputError):
        read_edge_list("0 5 1", n=3)
    with pytest.raises(InputError):
        GraphModel(path(3), [0], [0.5], likelihood="probit")


# fractional powers

def test_alpha_one_is_matrix_product():
    m = GraphModel(random_graph(10, 1))
    u = m.basis @ np.random.default_rng(0).normal(size=9)
    np.testing.assert_allclose(fractional_laplacian_apply(m, u, alpha=1.0), m.L @ u, atol=1e-12)


def test_eigenvector_and_semigroup():
    m = GraphModel(random_graph(10, 2), alpha=1.7)
    v = m.basis[:, 3]
    lam = m.evals[4]
    np.testing.assert_allclose(fractional_laplacian_apply(m, v), lam**1.7 * v, atol=1e-12)
    u = m.basis @ np.random.default_rng(1).normal(size=9)
    half = fractional_laplacian_apply(m, fractional_laplacian_apply(m, u, 0.5), 0.5)
    np.testing.assert_allclose(half, fractional_laplacian_apply(m, u, 1.0), atol=1e-10)
    back = fractional_laplacian_apply(m, fractional_laplacian_apply(m, u), inverse=True)
    np.testing.assert_allclose(back, u, atol=1e-10)


# likelihoods

def H(w, gamma):
    return integrate.quad(lambda t: math.exp(-t * t / (2 * gamma**2)), -np.inf, w)[0]


def test_probit_value_at_zero():
    v, g = probit_phi(np.zeros(3), [1], np.array([1.0]), 1.0)
    assert v == pytest.approx(-math.log(math.sqrt(math.pi / 2)), abs=1e-14)
    assert v == pytest.approx(-0.2258, abs=1e-4)
    assert g[0] == 0 and g[2] == 0


@pytest.mark.parametrize("w,gamma", [(-3.0, 1.0), (0.4, 0.5), (2.0, 2.0), (-0.7, 0.3)])
def test_probit_matches_quadrature(w, gamma):
    v, g = probit_phi(np.array([w, 0.0]), [0], np.array([1.0]), gamma)
    Hw = H(w, gamma)
    assert v == pytest.approx(-math.log(Hw), rel=1e-10)
    assert g[0] == pytest.approx(-math.exp(-w * w / (2 * gamma**2)) / Hw, rel=1e-8)
    # label -1 flips the argument
    v2, g2 = probit_phi(np.array([-w, 0.0]), [0], np.array([-1.0]), gamma)
    assert v2 == pytest.approx(v, rel=1e-14) and g2[0] == pytest.approx(-g[0], rel=1e-14)


def test_probit_limits():
    v, g = probit_phi(np.array([60.0]), [0], np.array([1.0]), 2.0)
    assert v == pytest.approx(-math.log(math.sqrt(2 * math.pi * 4.0)), abs=1e-14)
    assert abs(g[0]) < 1e-100
    v, g = probit_phi(np.array([-60.0]), [0], np.array([1.0]), 1.0)
    assert math.isfinite(v) and math.isfinite(g[0])
    # Mills ratio asymptotics: d phi / du ~ u for u << 0
    assert g[0] == pytest.approx(-60.0, rel=1e-3)


def numerical_hessian(fun, u, h=1e-5):
    n = u.size
    Hm = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        Hm[:, i] = (fun(u + e)[1] - fun(u - e)[1]) / (2 * h)
    return 0.5 * (Hm + Hm.T)


@pytest.mark.parametrize("phi,hdiag", [(probit_phi, probit_hessian_diag), (logistic_phi, None)],
                         ids=["probit", "logistic"])
def test_likelihood_hessians_are_psd(phi, hdiag):
    rng = np.random.default_rng(5)
    idx = np.array([0, 2, 3])
    y = np.array([1.0, -1.0, 1.0])
    for _ in range(50):
        u = rng.normal(scale=3.0, size=5)
        gamma = rng.uniform(0.3, 2.0)
        Hm = numerical_hessian(lambda v: phi(v, idx, y, gamma), u)
        assert np.linalg.eigvalsh(Hm)[0] >= -1e-8
        if hdiag is not None:
            np.testing.assert_allclose(np.diag(Hm), hdiag(u, idx, y, gamma), atol=1e-6)


def test_logistic_values():
    v, _ = logistic_phi(np.zeros(4), [0, 1, 3], np.array([1.0, -1.0, 1.0]), 0.7)
    assert v == pytest.approx(3 * math.log(2), abs=1e-15)
    v, _ = logistic_phi(np.array([1.0, -2.0, 0.5]), [0, 1, 2], np.array([1.0, 1.0, -1.0]), 1e9)
    assert v == pytest.approx(3 * math.log(2), abs=1e-8)
    v, g = logistic_phi(np.array([-800.0]), [0], np.array([1.0]), 1.0)
    assert v == pytest.approx(800.0) and g[0] == pytest.approx(-1.0)


def test_gl_potentials():
    eps, gam = 0.2, 0.5
    y = np.array([1.0, -1.0, 0.3])
    idx = [0, 1, 2]
    w, _, phi, _ = gl_potentials(np.array([1.0, -1.0, 0.3, 7.0]), idx, y, gam, eps)
    assert w == pytest.approx((0.09 - 1) ** 2 / (4 * eps)) and phi == 0
    w, _, _, _ = gl_potentials(np.array([0.0, 1.0, -1.0, 0.0]), idx, y, gam, eps)
    assert w == pytest.approx(1 / (4 * eps))
    u = np.random.default_rng(2).normal(size=4)
    _, gw, _, gp = gl_potentials(u, idx, y, gam, eps)
    for k in range(4):
        e = np.zeros(4)
        e[k] = 1e-6
        hi, lo = gl_potentials(u + e, idx, y, gam, eps), gl_potentials(u - e, idx, y, gam, eps)
        assert (hi[0] - lo[0]) / 2e-6 == pytest.approx(gw[k], abs=1e-6)
        assert (hi[2] - lo[2]) / 2e-6 == pytest.approx(gp[k], abs=1e-6)


def test_gl_prior_is_not_convex_at_zero():
    m = GraphModel(path(6), [0, 5], [-1.0, 1.0], epsilon=0.1, gamma=1.0, likelihood="gl")
    hess = np.linalg.matrix_power(m.L, 1) + np.diag(np.isin(np.arange(6), m.labeled) * (-1 / m.epsilon))
    restricted = m.basis.T @ hess @ m.basis
    assert np.linalg.eigvalsh(restricted)[0] < 0


# MAP

def test_map_without_labels_is_zero():
    st_ = map_estimate(GraphModel(random_graph(8, 3)), u0=np.arange(8.0))
    assert np.abs(st_.u).max() <= 1e-8


def brute_force_map(model):
    B = model.basis

    def f(z):
        v, g = objective(model, B @ z)
        return v, B.T @ g

    res = optimize.minimize(f, np.zeros(B.shape[1]), jac=True, method="BFGS",
                            options={"gtol": 1e-12, "maxiter": 10000})
    return B @ res.x


@pytest.mark.parametrize("likelihood", ["probit", "logistic"])
def test_two_clusters_are_separated(likelihood):
    m = GraphModel(two_cliques(), [0, 7], [-1.0, 1.0], likelihood=likelihood, gamma=0.5)
    u = map_estimate(m).u
    assert np.all(u[:4] < 0) and np.all(u[4:] > 0)
    np.testing.assert_allclose(u[::-1], -u, atol=1e-9)
    np.testing.assert_allclose(u, brute_force_map(m), atol=1e-6)


@pytest.mark.parametrize("likelihood", ["probit", "logistic"])
def test_convex_map_is_unique(likelihood):
    m = GraphModel(random_graph(10, 4), [1, 4, 8], [1.0, -1.0, 1.0], alpha=1.5,
                   gamma=0.3, likelihood=likelihood)
    rng = np.random.default_rng(6)
    ref = map_estimate(m).u
    for _ in range(10):
        u = map_estimate(m, u0=rng.normal(scale=5.0, size=10)).u
        np.testing.assert_allclose(u, ref, atol=1e-6)
        assert abs(u.sum()) <= 1e-12


def test_gl_map_reaches_stationarity():
    m = GraphModel(path(6), [0, 5], [-1.0, 1.0], epsilon=0.5, gamma=0.5, likelihood="gl")
    u = map_estimate(m, u0=np.linspace(-1, 1, 6)).u
    assert np.linalg.norm(objective(m, u)[1]) <= 1e-8


# sampler

def test_prior_sampling_variance():
    m = GraphModel(random_graph(8, 7), alpha=1.3)
    S = sample_prior(m, 20000, seed=11)
    assert np.abs(S.sum(axis=1)).max() <= 1e-12
    c = S @ m.basis
    var = (c**2).mean(axis=0)
    target = m.evals[1:] ** -1.3
    assert np.all(np.abs(var - target) <= 3 * target * math.sqrt(2 / c.shape[0]))


def test_flat_likelihood_chain_is_ou_per_mode():
    m = GraphModel(random_graph(6, 8), alpha=1.0)
    dt, chains = 0.01, 4000
    state = LatentState(np.zeros((chains, 6)), seed=21)
    state, _ = run_chains(m, state, dt, 0, burn_in=800)
    c = state.u @ m.basis
    var = (c**2).mean(axis=0)
    # stationary variance of the Euler-Maruyama recursion for a unit-rate OU mode
    target = m.evals[1:] ** -1.0 / (1 - dt / 2)
    assert np.all(np.abs(var - target) <= 3 * target * math.sqrt(2 / chains))


def test_steps_preserve_zero_mean():
    m = GraphModel(random_graph(7, 9), [0, 3], [1.0, -1.0], alpha=0.8)
    state = LatentState(np.random.default_rng(0).normal(size=(5, 7)), seed=1)
    for _ in range(20):
        state = precond_langevin_step(state, m, 0.05)
        assert np.abs(state.u.sum(axis=1)).max() <= 1e-12
    assert state.step_count == 20 and state.t == pytest.approx(1.0)


def test_sampler_is_reproducible():
    m = GraphModel(path(5), [0, 4], [-1.0, 1.0])
    a = run_chains(m, LatentState(np.zeros((3, 5)), seed=4), 0.05, 30)[1]
    b = run_chains(m, LatentState(np.zeros((3, 5)), seed=4), 0.05, 30)[1]
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("seed", range(5))
def test_probit_convexity_constant_at_least_one(seed):
    n = 6 + 2 * seed
    m = GraphModel(random_graph(n, 100 + seed), [0, n - 1], [1.0, -1.0], alpha=1.0 + 0.25 * seed,
                   gamma=0.5)
    rng = np.random.default_rng(seed)
    for _ in range(20):
        assert eigen_hessian_min(m, rng.normal(scale=3.0, size=n)) >= 1 - 1e-6
    # two-mode spectral slice u = B z with metric diag(Lambda^alpha)
    B = m.basis[:, :2]
    lam = m.evals[1:3] ** m.alpha

    def value(z):
        return 0.5 * float(lam @ (z * z)) + float(probit_phi(B @ z, m.labeled, m.labels, m.gamma)[0])

    def grad(z):
        return lam * z + B.T @ probit_phi(B @ z, m.labeled, m.labels, m.gamma)[1]

    def hess(z):
        h = probit_hessian_diag(B @ z, m.labeled, m.labels, m.gamma)
        return np.diag(lam) + (B.T * h) @ B

    F = PotentialField(2, value, grad, hess)
    G = MetricField(2, lambda z: np.diag(lam), constant=True)
    rep = lambda_G(F, G, Box.cube(2, 3.0), sample_count=400)
    assert rep.lambda_ >= 1 - 1e-6


def test_preconditioned_drift_is_dimension_free():
    m = GraphModel(path(50))
    rng = np.random.default_rng(3)
    for alpha in (1.0, 2.0):
        bound = (m.lambda_max / 2) ** alpha
        for u in (m.basis[:, -1], m.basis @ rng.normal(size=49)):
            raw = fractional_laplacian_apply(m, u, alpha)
            pre = fractional_laplacian_apply(m, raw, alpha, inverse=True)
            assert np.linalg.norm(pre) == pytest.approx(np.linalg.norm(u), rel=1e-10)
            assert np.linalg.norm(raw) / np.linalg.norm(pre) > bound


# label summary and equilibrium

def test_single_state_summary():
    p, se = posterior_label_summary(np.array([[0.3, -0.1, 0.2]]))
    assert set(p.tolist()) <= {0.0, 1.0} and np.all(se == 0)
    with pytest.raises(InputError):
        posterior_label_summary(np.zeros((0, 3)))


def test_symmetric_middle_node_is_undecided():
    m = GraphModel(path(5), [0, 4], [-1.0, 1.0], gamma=0.5)
    state, _ = run_chains(m, LatentState(np.zeros((4000, 5)), seed=9), 0.02, 0, burn_in=300)
    p, se = posterior_label_summary(state.u)
    assert abs(p[2] - 0.5) <= 3 * math.sqrt(0.25 / 4000)
    assert p[0] < 0.5 < p[4]


def posterior_quadrature(m, funcs, half=6.0, nodes=601):
    B = m.basis
    z = np.linspace(-half, half, nodes)
    Z = np.stack(np.meshgrid(z, z, indexing="ij"), axis=-1).reshape(-1, 2)
    U = Z @ B.T
    lam = m.evals[1:] ** m.alpha
    like = probit_phi(U, m.labeled, m.labels, m.gamma)[0]
    logp = -0.5 * (Z * Z) @ lam - like
    w = np.exp(logp - logp.max())
    w /= w.sum()
    return [w @ f(U) for f in funcs]


def test_three_node_equilibrium_matches_quadrature():
    m = GraphModel(path(3), [0], [1.0], gamma=1.0)
    chains = 4000
    state, _ = run_chains(m, LatentState(np.zeros((chains, 3)), seed=13), 0.005, 0, burn_in=1200)
    U = state.u
    mean_q, sq_q = posterior_quadrature(m, [lambda u: u, lambda u: u * u])
    mean_s, sq_s = U.mean(axis=0), (U * U).mean(axis=0)
    sd_mean = U.std(axis=0) / math.sqrt(chains)
    sd_sq = (U * U).std(axis=0) / math.sqrt(chains)
    assert np.all(np.abs(mean_s - mean_q) <= 3 * sd_mean)
    assert np.all(np.abs(sq_s - sq_q) <= 3 * sd_sq)


def test_strong_signal_label_probability():
    m = GraphModel(path(3), [0], [1.0], gamma=0.01)
    (p_q,) = posterior_quadrature(m, [lambda u: (u[:, 0] > 0).astype(float)], nodes=801)
    assert p_q >= 0.99
    state, _ = run_chains(m, LatentState(np.zeros((500, 3)), seed=17), 1e-4, 0, burn_in=10000)
    p, _ = posterior_label_summary(state.u)
    assert p[0] >= 0.99
