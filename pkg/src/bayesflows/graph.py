r"""Bayesian semi-supervised learning on weighted graphs.

The latent field :math:`u` lives on :math:`U = \{u : \sum_i u_i = 0\}` with
the Gaussian prior :math:`\tfrac12\langle L^\alpha u, u\rangle` built from
the unnormalised Laplacian :math:`L = D - W`. Fractional powers use a dense
eigendecomposition restricted to :math:`U`; the zero-mean constraint is
kept by projection.

Likelihoods:

* probit, :math:`\phi = -\sum_j \log H(y_j u_j;\gamma)` with
  :math:`H(w;\gamma) = \int_{-\infty}^w e^{-t^2/2\gamma^2}dt` (no
  normaliser), evaluated through ``log_ndtr``;
* logistic, :math:`\phi = \sum_j \log(1 + e^{-y_j u_j/\gamma})`;
* Ginzburg-Landau, a Gaussian likelihood
  :math:`\sum_j |y_j - u_j|^2/2\gamma^2` plus the double-well prior term
  :math:`\sum_j W_\varepsilon(u_j)`,
  :math:`W_\varepsilon(t) = (t^2-1)^2/4\varepsilon`.
"""
import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erfcx, expit, log_ndtr

from .errors import InputError, OptimizationError, SingularPriorError
from .geometry import PotentialField
from .samplers import standard_normals

__all__ = [
    "GraphModel",
    "LatentState",
    "hat_kernel",
    "build_graph",
    "laplacian",
    "read_edge_list",
    "read_labels",
    "project",
    "fractional_laplacian_apply",
    "probit_phi",
    "probit_hessian_diag",
    "logistic_phi",
    "logistic_hessian_diag",
    "gl_potentials",
    "likelihood_terms",
    "objective",
    "map_estimate",
    "precond_langevin_step",
    "run_chains",
    "sample_prior",
    "posterior_label_summary",
    "eigen_hessian_min",
    "gl_surrogate_model",
    "gl_surrogate_grid",
    "format_vector",
    "format_label_table",
]

LIKELIHOODS = ("probit", "logistic", "gl")
NOISE_GRAPH = 3
LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


def hat_kernel(s):
    """Compactly supported profile ``(1 - s)_+``."""
    return np.maximum(1.0 - np.asarray(s, dtype=float), 0.0)


def build_graph(points, r, kernel=hat_kernel):
    """Similarity matrix ``W_ij = K(|x_i - x_j| / r)`` with zero diagonal."""
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise InputError("a graph needs at least two points")
    if not r > 0:
        raise InputError("r must be positive")
    d = np.sqrt(np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=-1))
    W = np.asarray(kernel(d / r), dtype=float)
    np.fill_diagonal(W, 0.0)
    if not np.all(np.isfinite(W)) or np.any(W < 0):
        raise InputError("kernel must return finite nonnegative weights")
    return 0.5 * (W + W.T)


def laplacian(W):
    W = np.asarray(W, dtype=float)
    return np.diag(W.sum(axis=1)) - W


def read_edge_list(text, n=None):
    """Symmetric weight matrix from ``i j w`` lines (0-indexed)."""
    edges = []
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise InputError(f"edge line {ln}: expected 'i j w'")
        i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
        if i < 0 or j < 0 or w < 0 or not math.isfinite(w):
            raise InputError(f"edge line {ln}: indices and weight must be nonnegative")
        edges.append((i, j, w))
    size = max([max(i, j) for i, j, _ in edges], default=-1) + 1
    n = size if n is None else int(n)
    if n < size:
        raise InputError("edge list refers to nodes beyond n")
    W = np.zeros((n, n))
    for i, j, w in edges:
        if i != j:
            W[i, j] = W[j, i] = w
    return W


def read_labels(text):
    """``(indices, labels)`` from ``j y_j`` lines."""
    idx, ys = [], []
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InputError(f"label line {ln}: expected 'j y'")
        idx.append(int(parts[0]))
        ys.append(float(parts[1]))
    return np.array(idx, dtype=int), np.array(ys, dtype=float)


def project(u):
    """Orthogonal projection onto the zero-mean subspace (last axis)."""
    u = np.asarray(u, dtype=float)
    return u - u.mean(axis=-1, keepdims=True)


class GraphModel:
    """Weighted graph with a fractional Laplacian prior and labelled nodes.

    Parameters
    ----------
    W : (n, n) array
        Symmetric nonnegative weights.
    labeled : sequence of int
    labels : sequence of float
        ``±1`` for probit/logistic, real for Ginzburg-Landau.
    alpha, gamma : float
    epsilon : float, optional
        Double-well width (Ginzburg-Landau only).
    likelihood : {"probit", "logistic", "gl"}
    """

    def __init__(self, W, labeled=(), labels=(), alpha=1.0, gamma=1.0, epsilon=None,
                 likelihood="probit"):
        W = np.array(W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] < 2:
            raise InputError("W must be a square matrix with n >= 2")
        if not np.allclose(W, W.T, rtol=0, atol=1e-12 * max(1.0, np.abs(W).max())):
            raise InputError("W must be symmetric")
        if np.any(W < 0) or not np.all(np.isfinite(W)):
            raise InputError("W must be finite and nonnegative")
        if likelihood not in LIKELIHOODS:
            raise InputError(f"likelihood must be one of {LIKELIHOODS}")
        if not (alpha > 0 and gamma > 0):
            raise InputError("alpha and gamma must be positive")
        if likelihood == "gl" and not (epsilon is not None and epsilon > 0):
            raise InputError("the Ginzburg-Landau model needs epsilon > 0")
        W = 0.5 * (W + W.T)
        np.fill_diagonal(W, 0.0)
        self.W = W
        self.L = laplacian(W)
        self.n = W.shape[0]
        self.alpha = float(alpha)
        self.gamma = float(gamma)
        self.epsilon = None if epsilon is None else float(epsilon)
        self.likelihood = likelihood
        self.labeled = np.asarray(labeled, dtype=int).reshape(-1)
        self.labels = np.asarray(labels, dtype=float).reshape(-1)
        if self.labeled.size != self.labels.size:
            raise InputError("one label per labelled node")
        if self.labeled.size and (self.labeled.min() < 0 or self.labeled.max() >= self.n):
            raise InputError("labelled index out of range")
        if np.unique(self.labeled).size != self.labeled.size:
            raise InputError("labelled indices must be distinct")
        if likelihood in ("probit", "logistic") and not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise InputError("probit and logistic labels must be -1 or +1")
        evals, evecs = np.linalg.eigh(self.L)
        evals[0] = 0.0
        # make the constant direction exact
        evecs[:, 0] = 1.0 / math.sqrt(self.n)
        self.evals = evals
        self.evecs = evecs
        self.connected = bool(evals[1] > 1e-10 * max(1.0, evals[-1]))

    @property
    def k(self):
        return int(self.labeled.size)

    @property
    def lambda_min(self):
        """Smallest Laplacian eigenvalue on ``U``."""
        return float(self.evals[1])

    @property
    def lambda_max(self):
        return float(self.evals[-1])

    def with_labels(self, labeled, labels, **kw):
        params = dict(alpha=self.alpha, gamma=self.gamma, epsilon=self.epsilon,
                      likelihood=self.likelihood)
        params.update(kw)
        return GraphModel(self.W, labeled, labels, **params)

    def _require_connected(self):
        if not self.connected:
            raise SingularPriorError("graph is disconnected: L is singular on U")

    @property
    def basis(self):
        """Eigenvectors spanning ``U`` (columns), ascending eigenvalues."""
        return self.evecs[:, 1:]

    def power(self, u, p):
        """``L^p u`` on ``U`` via the spectral cache (any real ``p``)."""
        self._require_connected()
        V = self.basis
        lam = self.evals[1:] ** p
        u = project(u)
        return ((u @ V) * lam) @ V.T


@dataclass
class LatentState:
    """Chain positions (``(n,)`` or ``(chains, n)``) on ``U`` with step bookkeeping."""

    u: np.ndarray
    t: float = 0.0
    step_count: int = 0
    seed: int = 0

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if not np.all(np.isfinite(u)):
            raise InputError("latent state must be finite")
        self.u = project(u)


def fractional_laplacian_apply(model, u, alpha=None, inverse=False):
    """``L^alpha u`` (or ``L^{-alpha} u``) on the zero-mean subspace."""
    a = model.alpha if alpha is None else float(alpha)
    return model.power(u, -a if inverse else a)


def _labelled(u, idx):
    u = np.asarray(u, dtype=float)
    return u[..., idx]


def probit_phi(u, idx, y, gamma):
    """Value and gradient of ``-sum_j log H(y_j u_j; gamma)``."""
    gamma = float(gamma)
    u = np.asarray(u, dtype=float)
    z = y * _labelled(u, idx) / gamma
    logH = math.log(gamma) + LOG_SQRT_2PI + log_ndtr(z)
    value = -np.sum(logH, axis=-1)
    # phi_N(z) / Phi(z) = sqrt(2/pi) / erfcx(-z / sqrt 2), stable for z << 0
    ratio = math.sqrt(2 / math.pi) / erfcx(-z / math.sqrt(2))
    grad = np.zeros_like(u)
    grad[..., idx] = -y * ratio / gamma
    return value, grad


def probit_hessian_diag(u, idx, y, gamma):
    """Diagonal of the probit Hessian (zero off the labelled nodes)."""
    u = np.asarray(u, dtype=float)
    z = y * _labelled(u, idx) / gamma
    r = math.sqrt(2 / math.pi) / erfcx(-z / math.sqrt(2))
    h = np.zeros_like(u)
    h[..., idx] = r * (z + r) / gamma**2
    return h


def logistic_phi(u, idx, y, gamma):
    """Value and gradient of ``sum_j log(1 + exp(-y_j u_j / gamma))``."""
    u = np.asarray(u, dtype=float)
    s = y * _labelled(u, idx) / gamma
    value = np.sum(np.logaddexp(0.0, -s), axis=-1)
    grad = np.zeros_like(u)
    grad[..., idx] = -y * expit(-s) / gamma
    return value, grad


def logistic_hessian_diag(u, idx, y, gamma):
    u = np.asarray(u, dtype=float)
    s = y * _labelled(u, idx) / gamma
    h = np.zeros_like(u)
    h[..., idx] = expit(s) * expit(-s) / gamma**2
    return h


def gl_potentials(u, idx, y, gamma, epsilon):
    """Double-well prior term and Gaussian likelihood with gradients.

    Returns ``(prior_extra, prior_extra_grad, phi, phi_grad)``.
    """
    u = np.asarray(u, dtype=float)
    v = _labelled(u, idx)
    w = np.sum((v * v - 1) ** 2, axis=-1) / (4 * epsilon)
    gw = np.zeros_like(u)
    gw[..., idx] = v * (v * v - 1) / epsilon
    r = v - y
    phi = np.sum(r * r, axis=-1) / (2 * gamma**2)
    gp = np.zeros_like(u)
    gp[..., idx] = r / gamma**2
    return w, gw, phi, gp


def likelihood_terms(model, u):
    """Value and gradient of every non-quadratic term of the negative log-posterior."""
    idx, y = model.labeled, model.labels
    if model.likelihood == "probit":
        return probit_phi(u, idx, y, model.gamma)
    if model.likelihood == "logistic":
        return logistic_phi(u, idx, y, model.gamma)
    w, gw, phi, gp = gl_potentials(u, idx, y, model.gamma, model.epsilon)
    return w + phi, gw + gp


def objective(model, u):
    r""":math:`\tfrac12\langle L^\alpha u, u\rangle` plus the likelihood terms, with the projected gradient."""
    u = project(u)
    Lu = model.power(u, model.alpha)
    v, g = likelihood_terms(model, u)
    return float(0.5 * u @ Lu + v), project(Lu + g)


def map_estimate(model, u0=None, tol=1e-8, max_iter=20000, precondition=True):
    r"""Projected gradient descent with Armijo backtracking and Barzilai-Borwein steps.

    Search directions are preconditioned by :math:`L^{-\alpha}` (the
    natural metric of the prior) unless ``precondition=False``. Stops when
    the Euclidean norm of the projected gradient is at most ``tol``.

    Raises
    ------
    OptimizationError
        If the tolerance is not met within ``max_iter`` iterations.
    """
    model._require_connected()
    u = np.zeros(model.n) if u0 is None else project(np.asarray(u0, dtype=float))
    f, g = objective(model, u)
    gnorm = float(np.linalg.norm(g))
    step = 1.0
    prev = None
    for it in range(max_iter):
        if gnorm <= tol:
            return LatentState(u)
        d = -model.power(g, -model.alpha) if precondition else -g
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g, -gnorm * gnorm
        if prev is not None:
            s, yv = u - prev[0], g - prev[1]
            sy = float(s @ yv)
            if sy > 0:
                # BB1 step measured along the current preconditioned direction
                ys = float(yv @ (model.power(yv, -model.alpha) if precondition else yv))
                step = sy / ys if ys > 0 else 1.0
        step = min(max(step, 1e-12), 1e6)
        while True:
            cand = project(u + step * d)
            fc, gc = objective(model, cand)
            # allow round-off in f so tiny final steps are not rejected
            if fc <= f + 1e-4 * step * slope + 8 * np.finfo(float).eps * abs(f) or step < 1e-20:
                break
            step *= 0.5
        if step < 1e-20:
            raise OptimizationError(f"line search failed at gradient norm {gnorm:.3e}",
                                    residual=gnorm)
        prev = (u, g)
        u, f, g = cand, fc, gc
        gnorm = float(np.linalg.norm(g))
    if gnorm <= tol:
        return LatentState(u)
    raise OptimizationError(f"no convergence after {max_iter} iterations "
                            f"(gradient norm {gnorm:.3e})", residual=gnorm)


def precond_langevin_step(state, model, dt):
    r"""``X - (X + L^{-alpha} grad phi(X)) dt + sqrt(2 dt) L^{-alpha/2} xi`` on ``U``.

    ``xi`` is a projected standard normal drawn from the counter-based
    stream ``(seed, step)``, so chains are reproducible.
    """
    if not dt > 0:
        raise InputError("dt must be positive")
    X = np.atleast_2d(state.u)
    _, g = likelihood_terms(model, X)
    drift = X + model.power(g, -model.alpha)
    xi = project(standard_normals(state.seed, state.step_count, X.shape[0], model.n,
                                  purpose=NOISE_GRAPH))
    new = X - drift * dt + math.sqrt(2 * dt) * model.power(xi, -model.alpha / 2)
    if not np.all(np.isfinite(new)):
        from .errors import DivergenceError
        bad = int(np.flatnonzero(~np.all(np.isfinite(new), axis=1))[0])
        raise DivergenceError(f"chain {bad} diverged", index=bad, position=X[bad].copy())
    new = project(new)
    if np.ndim(state.u) == 1:
        new = new[0]
    return replace(state, u=new, t=state.t + dt, step_count=state.step_count + 1)


def run_chains(model, state, dt, n_steps, burn_in=0, thin=1):
    """Run ``n_steps`` preconditioned Langevin steps; returns ``(state, samples)``.

    ``samples`` has shape ``(kept, chains, n)``.
    """
    kept = []
    for k in range(int(burn_in) + int(n_steps)):
        state = precond_langevin_step(state, model, dt)
        if k >= burn_in and (k - burn_in) % thin == 0:
            kept.append(np.atleast_2d(state.u).copy())
    return state, np.array(kept)


def sample_prior(model, n_samples, seed=0):
    """Spectral synthesis ``sum_k Lambda_k^{-alpha/2} xi_k v_k`` of prior samples."""
    model._require_connected()
    xi = standard_normals(seed, 0, n_samples, model.n - 1, purpose=NOISE_GRAPH + 1)
    return project((xi * model.evals[1:] ** (-model.alpha / 2)) @ model.basis.T)


def posterior_label_summary(samples):
    """Per-node probability of label +1 with its Monte Carlo standard error."""
    S = np.asarray(samples, dtype=float)
    S = S.reshape(-1, S.shape[-1])
    if S.shape[0] < 1:
        raise InputError("need at least one sample")
    p = np.mean(S > 0, axis=0)
    se = np.sqrt(p * (1 - p) / S.shape[0])
    return p, se


def eigen_hessian_min(model, u):
    r"""Least eigenvalue of :math:`L^{-\alpha/2}\,\mathrm{Hess}\,L^{-\alpha/2}` on ``U``.

    This is the whitened convexity constant for the metric ``G = L^alpha``
    (exact, since the metric is constant).
    """
    if model.likelihood == "probit":
        h = probit_hessian_diag(u, model.labeled, model.labels, model.gamma)
    elif model.likelihood == "logistic":
        h = logistic_hessian_diag(u, model.labeled, model.labels, model.gamma)
    else:
        v = np.asarray(u)[model.labeled]
        h = np.zeros(model.n)
        h[model.labeled] = (3 * v * v - 1) / model.epsilon + 1 / model.gamma**2
    V = model.basis
    s = model.evals[1:] ** (-model.alpha / 2)
    H = (V.T * h) @ V
    M = np.eye(model.n - 1) + s[:, None] * H * s[None, :]
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def gl_surrogate_model(model, modes=(0, 1)):
    r"""Two-coordinate reduction of the Ginzburg-Landau posterior.

    ``u = B z`` with ``B`` the eigenvectors of the chosen nontrivial modes;
    returns ``(prior, likelihood, B, lambdas)`` as vectorised potentials on
    :math:`\mathbb{R}^2`. The quadratic part is
    :math:`\tfrac12\sum_k \Lambda_k^\alpha z_k^2`, the double-well and
    Gaussian terms act on ``u``.
    """
    if model.likelihood != "gl":
        raise InputError("surrogate is defined for the Ginzburg-Landau model")
    model._require_connected()
    cols = [1 + m for m in modes]
    B = model.evecs[:, cols]
    lam = model.evals[cols] ** model.alpha
    idx, y, eps, gam = model.labeled, model.labels, model.epsilon, model.gamma
    Bl = B[idx]

    def prior_value(z):
        v = z @ Bl.T
        return 0.5 * np.sum(lam * z * z, axis=-1) + np.sum((v * v - 1) ** 2, axis=-1) / (4 * eps)

    def prior_grad(z):
        v = z @ Bl.T
        return lam * z + (v * (v * v - 1) / eps) @ Bl

    def like_value(z):
        r = z @ Bl.T - y
        return np.sum(r * r, axis=-1) / (2 * gam**2)

    def like_grad(z):
        return ((z @ Bl.T - y) / gam**2) @ Bl

    prior = PotentialField(len(cols), prior_value, prior_grad, name="gl_prior", vectorized=True)
    like = PotentialField(len(cols), like_value, like_grad, name="gl_likelihood", vectorized=True)
    return prior, like, B, model.evals[cols]


def gl_surrogate_grid(prior, likelihood, nodes=41, level=40.0):
    """Square-cell grid on a box where the surrogate potential rises by ``level``.

    Each half-width is the smallest ``r`` (by bisection) with
    ``U(+-r e_k) - U(0) >= level`` along both directions of axis ``k``.
    """
    from .grid import Grid

    U = prior + likelihood
    u0 = U.value(np.zeros(2))
    hw = []
    for k in range(2):
        e = np.eye(2)[k]

        def rise(r):
            return min(U.value(r * e), U.value(-r * e)) - u0

        hi = 1.0
        while rise(hi) < level:
            hi *= 2
            if hi > 1e6:
                raise InputError("surrogate potential does not grow along an axis")
        lo = 0.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if rise(mid) < level else (lo, mid)
        hw.append(hi)
    return Grid.uniform([-hw[0], -hw[1]], hw, nodes)


def format_vector(u, name="u"):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", name])
    for i, v in enumerate(np.asarray(u).reshape(-1)):
        w.writerow([i, f"{v:.17g}"])
    return buf.getvalue()


def format_label_table(p, se):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", "prob_plus", "std_error"])
    for i, (a, b) in enumerate(zip(p, se)):
        w.writerow([i, f"{a:.17g}", f"{b:.17g}"])
    return buf.getvalue()
