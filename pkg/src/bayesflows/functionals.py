r"""Divergences, variational energies and convexity criteria of the Bayesian update.

A :class:`BayesModel` holds the prior potential :math:`\Psi`, the negative
log-likelihood :math:`\phi` and a metric :math:`G`; the prior is
:math:`\pi \propto e^{-\Psi}\sqrt{\det G}\,dx` and the posterior
:math:`\mu \propto e^{-\phi}\pi`. On a grid both are materialised as
normalised :class:`~bayesflows.grid.GridDensity` objects, so
:math:`Z = \int e^{-\phi}\,d\pi` refers to the grid-normalised prior.

Infinite divergences are returned as ``math.inf``, set explicitly and never
produced by overflow.
"""
import math
import threading
from dataclasses import dataclass

import numpy as np

from .catalog import euclidean
from .errors import InputError, NumericDomainError
from .geometry import (
    ConvexityReport,
    _curvature_from,
    _min_eig_over,
    _resolve_points,
    christoffel_derivatives,
    connection_matrix,
    inv_sqrtm,
    lambda_G,
    log_volume_potential,
)
from .grid import GridDensity

__all__ = [
    "BayesModel",
    "kl_divergence",
    "chi2_divergence",
    "j_kl",
    "j_chi2",
    "dirichlet_energy",
    "kl_convexity_constant",
    "chi2_convexity_check",
    "Chi2Convexity",
]

ABS_CONT_TOL = 1e-12


class BayesModel:
    """Prior potential, negative log-likelihood and metric on a bounded box.

    Parameters
    ----------
    prior_potential : PotentialField
    neg_log_likelihood : PotentialField, optional
        Defaults to zero.
    metric : MetricField, optional
        Defaults to the Euclidean metric.
    domain : Box, optional
        Box used for quadrature and convexity sampling.
    name : str, optional
    """

    def __init__(self, prior_potential, neg_log_likelihood=None, metric=None,
                 domain=None, name=None):
        m = prior_potential.dim
        if neg_log_likelihood is None:
            from .catalog import zero
            neg_log_likelihood = zero(m)
        if neg_log_likelihood.dim != m:
            raise InputError("prior and likelihood dimensions differ")
        self.prior_potential = prior_potential
        self.neg_log_likelihood = neg_log_likelihood
        self.metric = metric if metric is not None else euclidean(m)
        if self.metric.dim != m:
            raise InputError("metric dimension differs from the potentials")
        self.domain = domain
        self.name = name or "model"
        self._cache = {}
        self._lock = threading.Lock()

    @property
    def dim(self):
        return self.prior_potential.dim

    def __repr__(self):
        return f"BayesModel({self.name!r}, dim={self.dim})"

    @property
    def potential(self):
        r""":math:`\Psi + \phi` (negative log posterior w.r.t. the volume form)."""
        return self.prior_potential + self.neg_log_likelihood

    def _cached(self, key, compute):
        # racing threads compute identical values; first writer wins
        if key in self._cache:
            return self._cache[key]
        value = compute()
        with self._lock:
            return self._cache.setdefault(key, value)

    def psi_on(self, grid):
        return self._cached(("psi", grid), lambda: self.prior_potential.values_on(grid.points).reshape(grid.shape))

    def phi_on(self, grid):
        return self._cached(("phi", grid), lambda: self.neg_log_likelihood.values_on(grid.points).reshape(grid.shape))

    def log_volume_on(self, grid):
        r""":math:`\log\sqrt{\det G}` at the nodes."""
        def compute():
            if self.metric.constant:
                val = 0.5 * np.linalg.slogdet(self.metric(np.zeros(self.dim)))[1]
                return np.full(grid.shape, val)
            lv = log_volume_potential(self.metric)
            return np.array([lv.value(p) for p in grid.points]).reshape(grid.shape)
        return self._cached(("logvol", grid), compute)

    def prior_density(self, grid):
        """Normalised Lebesgue density of the prior on ``grid``."""
        return self._cached(("prior", grid), lambda: GridDensity.from_log_density(
            grid, -self.psi_on(grid) + self.log_volume_on(grid)))

    def posterior_density(self, grid):
        """Normalised Lebesgue density of the posterior on ``grid``."""
        return self._cached(("post", grid), lambda: GridDensity.from_log_density(
            grid, -self.psi_on(grid) - self.phi_on(grid) + self.log_volume_on(grid)))

    def log_Z(self, grid):
        r""":math:`\log\int e^{-\phi}\,d\pi` by quadrature against the grid prior."""
        def compute():
            phi = self.phi_on(grid)
            prior = self.prior_density(grid)
            lo = float(np.min(phi))
            z = prior.integrate(np.exp(-(phi - lo)))
            if not (np.isfinite(z) and z > 0):
                raise NumericDomainError("partition function is not finite and positive")
            return math.log(z) - lo
        return self._cached(("logZ", grid), compute)

    def boundary_mass_ratio(self, grid):
        """Largest posterior density on the grid boundary relative to its max."""
        v = self.posterior_density(grid).values
        peak = v.max()
        if v.ndim == 1:
            edge = max(v[0], v[-1])
        else:
            edge = max(v[0].max(), v[-1].max(), v[:, 0].max(), v[:, -1].max())
        return float(edge / peak)


def _pair(nu1, nu2):
    nu1.grid.check_same(nu2.grid)
    return nu1.values, nu2.values, nu1.grid.weights


def _absolutely_continuous(p, q, w):
    return float(np.sum(w * np.where(q > 0, 0.0, p))) <= ABS_CONT_TOL


def kl_divergence(nu1, nu2):
    """Trapezoid ``KL(nu1 || nu2)``; ``inf`` when nu1 is not dominated by nu2."""
    p, q, w = _pair(nu1, nu2)
    if not _absolutely_continuous(p, q, w):
        return math.inf
    mask = (p > 0) & (q > 0)
    integrand = np.zeros_like(p)
    integrand[mask] = p[mask] * (np.log(p[mask]) - np.log(q[mask]))
    return float(np.sum(w * integrand))


def chi2_divergence(nu1, nu2):
    """Trapezoid chi-square divergence ``int (nu1/nu2 - 1)^2 dnu2``."""
    p, q, w = _pair(nu1, nu2)
    if not _absolutely_continuous(p, q, w):
        return math.inf
    mask = q > 0
    integrand = np.zeros_like(p)
    integrand[mask] = (p[mask] - q[mask]) ** 2 / q[mask]
    return float(np.sum(w * integrand))


def j_kl(nu, model):
    r"""``KL(nu || pi) + int phi dnu`` with the prior materialised on ``nu``'s grid."""
    d = kl_divergence(nu, model.prior_density(nu.grid))
    if math.isinf(d):
        return math.inf
    return d + nu.integrate(model.phi_on(nu.grid))


def j_chi2(nu, model):
    r"""``chi2(nu || pi) + int (exp(phi) - 1) dnu``."""
    d = chi2_divergence(nu, model.prior_density(nu.grid))
    if math.isinf(d):
        return math.inf
    phi = model.phi_on(nu.grid)
    support = nu.values > 0
    if np.any(phi[support] > 700):
        return math.inf
    ephi = np.where(support, np.expm1(np.where(support, phi, 0.0)), 0.0)
    return d + nu.integrate(ephi)


def dirichlet_energy(f, mu, metric=None):
    r"""Quadrature of :math:`\langle G^{-1}\nabla f, \nabla f\rangle` against ``mu``.

    ``f`` holds node values on ``mu.grid``; derivatives are central in the
    interior and one-sided at the boundary.
    """
    grid = mu.grid
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        if f.size != grid.size:
            raise InputError(f"function has {f.size} values, grid has {grid.size}")
        f = f.reshape(grid.shape)
    if not np.all(np.isfinite(f)):
        raise InputError("function values must be finite")
    grads = np.gradient(f, *grid.spacing, edge_order=1)
    if grid.dim == 1:
        grads = [grads]
    D = np.stack([g.ravel() for g in grads], axis=-1)
    if metric is None or metric.constant:
        Ginv = np.eye(grid.dim) if metric is None else np.linalg.inv(metric(np.zeros(grid.dim)))
        q = np.einsum("ni,ij,nj->n", D, Ginv, D)
    else:
        q = np.array([d @ np.linalg.solve(metric(p), d) for d, p in zip(D, grid.points)])
    return mu.integrate(q.reshape(grid.shape))


def _model_box(model, domain):
    domain = domain if domain is not None else model.domain
    if domain is None:
        raise InputError("a sampling box is required (model has no domain)")
    return domain


def kl_convexity_constant(model, domain=None, sampler="grid", sample_count=64, seed=0):
    r"""Sampled inf of :math:`\mathrm{Ric}_g + \mathrm{Hess}_g(\Psi + \phi)` over g-unit vectors.

    Delegates to :func:`~bayesflows.geometry.lambda_G` with the Lebesgue
    potential :math:`\Psi + \phi - \log\sqrt{\det G}`.
    """
    F = model.potential
    if not model.metric.constant:
        F = F - log_volume_potential(model.metric)
    return lambda_G(F, model.metric, _model_box(model, domain), sampler, sample_count, seed)


@dataclass
class Chi2Convexity:
    """Outcome of the two-part convexity test for the chi-square energy."""

    condition1: bool
    margin: float
    lambda_: float
    margin_report: ConvexityReport
    lambda_report: ConvexityReport

    def __iter__(self):
        yield self.condition1
        yield self.lambda_


def _prior_condition_matrix(model, x):
    metric = model.metric
    Psi = model.prior_potential
    m = model.dim
    grad = Psi.gradient(x)
    if metric.constant:
        M = Psi.hessian(x)
    else:
        gamma, dgamma = christoffel_derivatives(metric, x)
        _, R = _curvature_from(gamma, dgamma)
        M = R + Psi.hessian(x) - connection_matrix(gamma, grad)
    M = M + np.outer(grad, grad) / (m + 1)
    Gm = inv_sqrtm(metric.checked(x))
    M = Gm @ M @ Gm
    return 0.5 * (M + M.T)


def _likelihood_hessian_matrix(model, x):
    metric = model.metric
    phi = model.neg_log_likelihood
    H = phi.hessian(x)
    if not metric.constant:
        gamma, _ = christoffel_derivatives(metric, x)
        H = H - connection_matrix(gamma, phi.gradient(x))
    Gm = inv_sqrtm(metric.checked(x))
    M = Gm @ H @ Gm
    return 0.5 * (M + M.T)


def chi2_convexity_check(model, domain=None, sampler="grid", sample_count=64, seed=0,
                         tol=1e-12):
    r"""Two-part convexity test of the chi-square energy.

    Condition 1 is the sampled inf over g-unit ``v`` of
    :math:`\mathrm{Ric}_g(v,v) + \mathrm{Hess}_g\Psi(v,v) + \langle\nabla\Psi, v\rangle^2/(m+1)`,
    which must be nonnegative (``>= -tol``). The returned ``lambda_`` is the
    geodesic-convexity constant of :math:`\phi` alone, taken with the metric
    Hessian and no Ricci term.
    """
    box = _model_box(model, domain)
    box, pts = _resolve_points(box, sampler, sample_count, seed, model.dim)
    margin = _min_eig_over(pts, lambda p: _prior_condition_matrix(model, p), box)
    lam = _min_eig_over(pts, lambda p: _likelihood_hessian_matrix(model, p), box)
    return Chi2Convexity(margin.lambda_ >= -tol, margin.lambda_, lam.lambda_, margin, lam)
