r"""Differential geometry of position-dependent metrics on :math:`\mathbb{R}^m`.

A metric is a field :math:`x \mapsto G(x)` of symmetric positive-definite
matrices. This module evaluates its Christoffel symbols, the curvature
matrices :math:`B` and :math:`R`, metric Hessians of scalar potentials and the
sharp convexity constant

.. math::

    \lambda_G = \inf_x \Lambda_{\min}\big(G^{-1/2}(B + \nabla^2 F - C)G^{-1/2}\big)

of the relative entropy of :math:`\mu \propto e^{-F}dx` in the Wasserstein
geometry induced by :math:`G`. Infima over :math:`\mathbb{R}^m` are replaced by
minima over points sampled in a bounded :class:`Box`.

Index conventions
-----------------
``dG[k, i, j]`` is :math:`\partial_k G_{ij}`, ``ddG[k, l, i, j]`` is
:math:`\partial_k\partial_l G_{ij}` and ``gamma[l, i, j]`` is
:math:`\Gamma^l_{ij}`.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import (
    InvalidDomainError,
    NumericDomainError,
    NumericError,
    SingularMetricError,
)

__all__ = [
    "Box",
    "MetricField",
    "PotentialField",
    "ChristoffelData",
    "ConvexityReport",
    "sample_points",
    "fd_step",
    "christoffel",
    "christoffel_derivatives",
    "curvature_matrices",
    "connection_matrix",
    "hess_g",
    "inv_sqrtm",
    "local_matrix",
    "lambda_G",
    "drift_lipschitz",
    "log_volume_potential",
]

SINGULAR_RTOL = 1e-12


def fd_step(x, rel=1e-5):
    """Central-difference step ``max(rel, rel * |x|_inf)``."""
    x = np.asarray(x, dtype=float)
    return max(rel, rel * float(np.max(np.abs(x), initial=0.0)))


def _as_point(x, dim):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != dim:
        raise ValueError(f"expected a point in R^{dim}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lower_i, upper_i]`` in R^m."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or lo.size == 0:
            raise InvalidDomainError("box bounds must be non-empty and of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InvalidDomainError("box bounds must be finite")
        if np.any(hi < lo):
            raise InvalidDomainError(f"degenerate box: lower={lo}, upper={hi}")
        object.__setattr__(self, "lower", tuple(lo.tolist()))
        object.__setattr__(self, "upper", tuple(hi.tolist()))

    @classmethod
    def cube(cls, dim, half_width):
        return cls((-half_width,) * dim, (half_width,) * dim)

    @property
    def dim(self):
        return len(self.lower)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= np.asarray(self.lower)) and np.all(x <= np.asarray(self.upper)))


def sample_points(box, sampler="grid", sample_count=64, seed=0):
    """Deterministically ordered sample points in ``box``.

    Parameters
    ----------
    box : Box
    sampler : {"grid", "sobol", "random"}
        ``"grid"`` uses ``ceil(sample_count ** (1/m))`` nodes per axis (at
        least 2, or 1 along zero-width axes); ``"sobol"`` uses a scrambled
        Sobol sequence; ``"random"`` uses uniform draws.
    sample_count : int
    seed : int

    Returns
    -------
    ndarray, shape (n, m)
    """
    if not isinstance(box, Box):
        box = Box(*box)
    lo = np.asarray(box.lower)
    hi = np.asarray(box.upper)
    m = box.dim
    if sample_count < 1:
        raise InvalidDomainError("sample_count must be positive")
    if sampler == "grid":
        per_axis = max(2, int(np.ceil(sample_count ** (1.0 / m) - 1e-9)))
        axes = [
            np.array([lo[i]]) if hi[i] == lo[i] else np.linspace(lo[i], hi[i], per_axis)
            for i in range(m)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)
    if sampler == "sobol":
        u = qmc.Sobol(d=m, scramble=True, seed=seed).random(sample_count)
    elif sampler == "random":
        u = np.random.default_rng(seed).random((sample_count, m))
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    return lo + u * (hi - lo)


class MetricField:
    """A field of SPD matrices ``G(x)`` with first and second derivatives.

    Parameters
    ----------
    dim : int
    func : callable
        ``func(x) -> (m, m) array``.
    jacobian : callable, optional
        ``jacobian(x) -> (m, m, m)`` with entry ``[k, i, j] = d_k G_ij``. When
        omitted, derivatives are central finite differences.
    hessian : callable, optional
        ``hessian(x) -> (m, m, m, m)`` with entry ``[k, l, i, j]``.
    step : float, optional
        Fixed finite-difference step. Defaults to :func:`fd_step` of the point
        (``1e-5`` relative for first derivatives, ``1e-4`` for second).
    name : str, optional
    constant : bool
        Declares ``G`` independent of ``x``; derivatives are then exactly zero.
    """

    def __init__(self, dim, func, jacobian=None, hessian=None, step=None,
                 name=None, constant=False):
        self.dim = int(dim)
        if self.dim < 1:
            raise ValueError("dim must be positive")
        self._func = func
        self._jacobian = jacobian
        self._hessian = hessian
        self.step = step
        self.name = name or "metric"
        self.constant = bool(constant)

    @property
    def derivative_mode(self):
        if self.constant or self._jacobian is not None:
            return "analytic"
        return "fd"

    def __repr__(self):
        return f"MetricField({self.name!r}, dim={self.dim}, mode={self.derivative_mode})"

    @classmethod
    def from_matrix(cls, matrix, name=None):
        G = np.array(matrix, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValueError("constant metric must be a square matrix")
        G.setflags(write=False)
        return cls(G.shape[0], lambda x: G, name=name or "constant", constant=True)

    def scaled(self, a):
        """The metric ``a * G`` (a > 0)."""
        if not a > 0:
            raise ValueError("scale must be positive")
        jac = None if self._jacobian is None else (lambda x: a * self._jacobian(x))
        hes = None if self._hessian is None else (lambda x: a * self._hessian(x))
        return MetricField(self.dim, lambda x: a * self._func(x), jac, hes,
                           step=self.step, name=f"{a:g}*{self.name}",
                           constant=self.constant)

    def with_finite_differences(self, step=None):
        """Same metric with derivatives forced to central finite differences."""
        return MetricField(self.dim, self._func, step=step, name=f"{self.name}[fd]")

    def __call__(self, x):
        x = _as_point(x, self.dim)
        G = np.asarray(self._func(x), dtype=float)
        if G.shape != (self.dim, self.dim):
            raise ValueError(f"metric returned shape {G.shape}")
        if not np.all(np.isfinite(G)):
            raise NumericDomainError(f"metric is not finite at x={x}")
        return G

    def checked(self, x):
        """``G(x)`` after symmetry and positive-definiteness validation."""
        G = self(x)
        scale = np.max(np.abs(G))
        if np.max(np.abs(G - G.T)) > 1e-12 * max(scale, 1e-300):
            raise NumericDomainError(f"metric is not symmetric at x={x}")
        w = np.linalg.eigvalsh(0.5 * (G + G.T))
        if w[0] <= SINGULAR_RTOL * max(w[-1], 0.0) or w[-1] <= 0:
            raise SingularMetricError(f"metric is not positive definite at x={x}: eig={w}")
        return G

    def jacobian(self, x):
        x = _as_point(x, self.dim)
        m = self.dim
        if self.constant:
            return np.zeros((m, m, m))
        if self._jacobian is not None:
            dG = np.asarray(self._jacobian(x), dtype=float)
        else:
            h = self.step or fd_step(x)
            dG = np.empty((m, m, m))
            for k in range(m):
                e = np.zeros(m)
                e[k] = h
                dG[k] = (self(x + e) - self(x - e)) / (2 * h)
        if not np.all(np.isfinite(dG)):
            raise NumericDomainError(f"metric derivative is not finite at x={x}")
        return dG

    def hessian(self, x):
        x = _as_point(x, self.dim)
        m = self.dim
        if self.constant:
            return np.zeros((m, m, m, m))
        if self._hessian is not None:
            ddG = np.asarray(self._hessian(x), dtype=float)
        elif self._jacobian is not None:
            h = self.step or fd_step(x)
            ddG = np.empty((m, m, m, m))
            for l in range(m):
                e = np.zeros(m)
                e[l] = h
                ddG[:, l] = (self.jacobian(x + e) - self.jacobian(x - e)) / (2 * h)
            ddG = 0.5 * (ddG + ddG.transpose(1, 0, 2, 3))
        else:
            h = self.step or fd_step(x, rel=1e-4)
            ddG = np.empty((m, m, m, m))
            G0 = self(x)
            for k in range(m):
                ek = np.zeros(m)
                ek[k] = h
                ddG[k, k] = (self(x + ek) - 2 * G0 + self(x - ek)) / h**2
                for l in range(k + 1, m):
                    el = np.zeros(m)
                    el[l] = h
                    d = (self(x + ek + el) - self(x + ek - el)
                         - self(x - ek + el) + self(x - ek - el)) / (4 * h**2)
                    ddG[k, l] = d
                    ddG[l, k] = d
        if not np.all(np.isfinite(ddG)):
            raise NumericDomainError(f"metric second derivative is not finite at x={x}")
        return ddG


class PotentialField:
    """Scalar potential with gradient and Hessian.

    Missing derivatives are filled in by central differences: the gradient
    from values, the Hessian from the gradient.
    """

    def __init__(self, dim, value, gradient=None, hessian=None, step=None, name=None,
                 vectorized=False):
        self.dim = int(dim)
        # vectorized closures accept (..., m) arrays
        self.vectorized = bool(vectorized)
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.step = step
        self.name = name or "potential"

    def __repr__(self):
        return f"PotentialField({self.name!r}, dim={self.dim}, mode={self.derivative_mode})"

    @property
    def derivative_mode(self):
        return "analytic" if self._gradient is not None and self._hessian is not None else "fd"

    def value(self, x):
        x = _as_point(x, self.dim)
        return float(self._value(x))

    __call__ = value

    def gradient(self, x):
        x = _as_point(x, self.dim)
        if self._gradient is not None:
            g = np.asarray(self._gradient(x), dtype=float).reshape(self.dim)
        else:
            h = self.step or fd_step(x)
            g = np.empty(self.dim)
            for k in range(self.dim):
                e = np.zeros(self.dim)
                e[k] = h
                g[k] = (self._value(x + e) - self._value(x - e)) / (2 * h)
        if not np.all(np.isfinite(g)):
            raise NumericDomainError(f"gradient of {self.name} not finite at x={x}")
        return g

    def hessian(self, x):
        x = _as_point(x, self.dim)
        m = self.dim
        if self._hessian is not None:
            H = np.asarray(self._hessian(x), dtype=float).reshape(m, m)
        elif self._gradient is not None:
            h = self.step or fd_step(x)
            H = np.empty((m, m))
            for k in range(m):
                e = np.zeros(m)
                e[k] = h
                H[:, k] = (self.gradient(x + e) - self.gradient(x - e)) / (2 * h)
            H = 0.5 * (H + H.T)
        else:
            h = self.step or fd_step(x, rel=1e-4)
            H = np.empty((m, m))
            f0 = self._value(x)
            for k in range(m):
                ek = np.zeros(m)
                ek[k] = h
                H[k, k] = (self._value(x + ek) - 2 * f0 + self._value(x - ek)) / h**2
                for l in range(k + 1, m):
                    el = np.zeros(m)
                    el[l] = h
                    H[k, l] = H[l, k] = (
                        self._value(x + ek + el) - self._value(x + ek - el)
                        - self._value(x - ek + el) + self._value(x - ek - el)
                    ) / (4 * h**2)
        if not np.all(np.isfinite(H)):
            raise NumericDomainError(f"Hessian of {self.name} not finite at x={x}")
        return H

    def __add__(self, other):
        if not isinstance(other, PotentialField):
            return NotImplemented
        if other.dim != self.dim:
            raise ValueError("potentials live in different dimensions")
        a, b = self, other
        return PotentialField(
            self.dim,
            lambda x: a.value(x) + b.value(x),
            lambda x: a.gradient(x) + b.gradient(x),
            lambda x: a.hessian(x) + b.hessian(x),
            name=f"{a.name}+{b.name}",
            vectorized=a.vectorized and b.vectorized,
        )

    def __neg__(self):
        return self.scaled(-1.0)

    def __sub__(self, other):
        if not isinstance(other, PotentialField):
            return NotImplemented
        return self + (-other)

    def scaled(self, c):
        a = self
        return PotentialField(
            self.dim,
            lambda x: c * a.value(x),
            lambda x: c * a.gradient(x),
            lambda x: c * a.hessian(x),
            name=f"{c:g}*{a.name}",
            vectorized=a.vectorized,
        )

    def shifted(self, c):
        """Potential plus the constant ``c``."""
        a = self
        return PotentialField(self.dim, lambda x: a.value(x) + c, a.gradient, a.hessian,
                              name=f"{a.name}{c:+g}")

    @classmethod
    def zero(cls, dim):
        return cls(dim, lambda x: 0.0, lambda x: np.zeros(dim),
                   lambda x: np.zeros((dim, dim)), name="zero")

    @classmethod
    def quadratic(cls, precision, center=None, name=None):
        """``F(x) = 1/2 <P (x - c), x - c>``."""
        P = np.array(precision, dtype=float)
        P.setflags(write=False)
        m = P.shape[0]
        c = np.zeros(m) if center is None else np.asarray(center, dtype=float)
        return cls(
            m,
            lambda x: 0.5 * float((x - c) @ P @ (x - c)),
            lambda x: P @ (x - c),
            lambda x: P,
            name=name or "quadratic",
        )

    def values_on(self, points):
        """Values at each row of ``points`` (n, m)."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        if self.vectorized:
            out = np.asarray(self._value(pts), dtype=float).reshape(-1)
        else:
            out = np.array([self._value(p) for p in pts], dtype=float)
        if out.shape[0] != pts.shape[0]:
            out = np.broadcast_to(out, (pts.shape[0],)).copy()
        return out

    def gradients_on(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        if self.vectorized and self._gradient is not None:
            out = np.asarray(self._gradient(pts), dtype=float)
            return np.broadcast_to(out, pts.shape).copy()
        return np.array([self.gradient(p) for p in pts]).reshape(pts.shape)


@dataclass
class ChristoffelData:
    """Connection and curvature data at one point.

    ``B``, ``R`` and ``C`` are ``None`` until computed.
    """

    point: np.ndarray
    gamma: np.ndarray
    B: np.ndarray = None
    R: np.ndarray = None
    C: np.ndarray = None


@dataclass
class ConvexityReport:
    """Result of a sampled infimum of smallest eigenvalues.

    ``lambda_`` is the sampled minimum, attained at ``argmin_point`` in the
    (whitened) unit direction ``argmin_direction``.
    """

    lambda_: float
    argmin_point: np.ndarray
    argmin_direction: np.ndarray
    sample_count: int
    domain_box: Box
    extra: dict = field(default_factory=dict)

    @property
    def on_boundary(self):
        """True when the minimum sits on the box boundary (true inf may be lower)."""
        lo = np.asarray(self.domain_box.lower)
        hi = np.asarray(self.domain_box.upper)
        p = np.asarray(self.argmin_point)
        tol = 1e-12 * (1 + np.abs(hi - lo))
        return bool(np.any((np.abs(p - lo) <= tol) & (hi > lo))
                    or np.any((np.abs(p - hi) <= tol) & (hi > lo)))


def _christoffel_from(Ginv, dG):
    # S[k,i,j] = d_j G_ki + d_i G_kj - d_k G_ij
    S = dG.transpose(1, 2, 0) + dG.transpose(1, 0, 2) - dG
    return S, 0.5 * np.einsum("lk,kij->lij", Ginv, S)


def _checked_inverse(metric, x):
    G = metric.checked(x)
    try:
        Ginv = np.linalg.inv(G)
    except np.linalg.LinAlgError as exc:
        raise SingularMetricError(f"metric not invertible at x={x}") from exc
    return G, Ginv


def christoffel(metric, x):
    r"""Christoffel symbols :math:`\Gamma^l_{ij}` of the Levi-Civita connection.

    Returns
    -------
    ChristoffelData
        With ``gamma[l, i, j]`` filled in; symmetric in ``(i, j)``.
    """
    x = _as_point(x, metric.dim)
    _, Ginv = _checked_inverse(metric, x)
    _, gamma = _christoffel_from(Ginv, metric.jacobian(x))
    gamma = 0.5 * (gamma + gamma.transpose(0, 2, 1))
    return ChristoffelData(point=x, gamma=gamma)


def christoffel_derivatives(metric, x):
    r"""Return ``(gamma, dgamma)`` with ``dgamma[p, l, i, j]`` = :math:`\partial_p\Gamma^l_{ij}`."""
    x = _as_point(x, metric.dim)
    _, Ginv = _checked_inverse(metric, x)
    dG = metric.jacobian(x)
    ddG = metric.hessian(x)
    S, gamma = _christoffel_from(Ginv, dG)
    dGinv = -np.einsum("ab,pbc,cd->pad", Ginv, dG, Ginv)
    # dS[p,k,i,j] = d_p d_j G_ki + d_p d_i G_kj - d_p d_k G_ij
    dS = np.einsum("jpki->pkij", ddG) + np.einsum("ipkj->pkij", ddG) - np.einsum("kpij->pkij", ddG)
    dgamma = 0.5 * (np.einsum("plk,kij->plij", dGinv, S) + np.einsum("lk,pkij->plij", Ginv, dS))
    gamma = 0.5 * (gamma + gamma.transpose(0, 2, 1))
    dgamma = 0.5 * (dgamma + dgamma.transpose(0, 1, 3, 2))
    if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(dgamma))):
        raise NumericDomainError(f"non-finite Christoffel data at x={x}")
    return gamma, dgamma


def _curvature_from(gamma, dgamma):
    div_gamma = np.einsum("llij->ij", dgamma)
    quad = np.einsum("kil,ljk->ij", gamma, gamma)
    B = div_gamma - quad
    trace = np.einsum("kkl->l", gamma)
    R = (div_gamma - np.einsum("jlil->ij", dgamma)
         + np.einsum("lij,l->ij", gamma, trace) - quad)
    return 0.5 * (B + B.T), 0.5 * (R + R.T)


def curvature_matrices(metric, x):
    r"""Curvature matrices ``(B, R)`` at ``x``.

    .. math::

        B_{ij} = \partial_l\Gamma^l_{ij} - \Gamma^k_{il}\Gamma^l_{jk}, \qquad
        R_{ij} = \partial_l\Gamma^l_{ij} - \partial_j\Gamma^l_{il}
                 + \Gamma^l_{ij}\Gamma^k_{kl} - \Gamma^k_{il}\Gamma^l_{jk}

    ``R`` represents the Ricci tensor: :math:`\mathrm{Ric}_g(v, v) = \langle Rv, v\rangle`.
    """
    gamma, dgamma = christoffel_derivatives(metric, x)
    return _curvature_from(gamma, dgamma)


def connection_matrix(gamma, grad):
    r""":math:`A_{ij} = \Gamma^l_{ij}\,\partial_l I` for a gradient vector ``grad``."""
    return np.einsum("lij,l->ij", gamma, grad)


def hess_g(potential, metric, x):
    """Metric Hessian ``Hess I(x) - A(I)(x)`` as an m x m matrix."""
    x = _as_point(x, metric.dim)
    gamma = christoffel(metric, x).gamma
    H = potential.hessian(x) - connection_matrix(gamma, potential.gradient(x))
    return 0.5 * (H + H.T)


def inv_sqrtm(G):
    """Symmetric inverse square root via eigendecomposition."""
    w, V = np.linalg.eigh(0.5 * (G + G.T))
    if w[-1] <= 0 or w[0] <= SINGULAR_RTOL * w[-1]:
        raise SingularMetricError(f"matrix is not positive definite: eig={w}")
    return (V / np.sqrt(w)) @ V.T


def local_matrix(F, metric, x):
    """Whitened matrix ``G^{-1/2} (B + Hess F - C) G^{-1/2}`` at ``x``."""
    x = _as_point(x, metric.dim)
    G = metric.checked(x)
    Gm = inv_sqrtm(G)
    if metric.constant:
        M = F.hessian(x)
    else:
        gamma, dgamma = christoffel_derivatives(metric, x)
        B, _ = _curvature_from(gamma, dgamma)
        M = B + F.hessian(x) - connection_matrix(gamma, F.gradient(x))
    M = Gm @ M @ Gm
    return 0.5 * (M + M.T)


def _min_eig_over(points, matrix_at, box):
    best = np.inf
    best_point = None
    best_dir = None
    for p in points:
        M = matrix_at(p)
        try:
            w, V = np.linalg.eigh(M)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"eigensolver failed at x={p}") from exc
        if not np.isfinite(w[0]):
            raise NumericDomainError(f"non-finite eigenvalue at x={p}")
        if w[0] < best:
            best, best_point, best_dir = float(w[0]), np.array(p), V[:, 0].copy()
    return ConvexityReport(best, best_point, best_dir, len(points), box)


def _resolve_points(domain, sampler, sample_count, seed, dim):
    if not isinstance(domain, Box):
        domain = Box(*domain)
    if domain.dim != dim:
        raise InvalidDomainError(f"box has dimension {domain.dim}, expected {dim}")
    if isinstance(sampler, np.ndarray):
        pts = np.asarray(sampler, dtype=float).reshape(-1, dim)
    else:
        pts = sample_points(domain, sampler, sample_count, seed)
    return domain, pts


def lambda_G(F, metric, domain, sampler="grid", sample_count=64, seed=0):
    """Sampled sharp convexity constant of KL under the metric ``metric``.

    Parameters
    ----------
    F : PotentialField
        Negative log Lebesgue density of the target (up to a constant).
    metric : MetricField
    domain : Box
    sampler : {"grid", "sobol", "random"} or ndarray of points
    sample_count : int
    seed : int

    Returns
    -------
    ConvexityReport
    """
    domain, pts = _resolve_points(domain, sampler, sample_count, seed, metric.dim)
    return _min_eig_over(pts, lambda p: local_matrix(F, metric, p), domain)


def drift_lipschitz(F, metric, domain, sampler="grid", sample_count=64, seed=0):
    r"""Sampled estimate of :math:`\mathrm{Lip}(G^{-1}\nabla F)` over ``domain``.

    The Jacobian of :math:`x \mapsto G(x)^{-1}\nabla F(x)` is
    :math:`G^{-1}\nabla^2F - G^{-1}(\partial_k G)G^{-1}\nabla F\,e_k^T`, with
    metric derivatives in the metric's own derivative mode. The sup over
    sample points lower-bounds the true constant.
    """
    domain, pts = _resolve_points(domain, sampler, sample_count, seed, metric.dim)
    best = 0.0
    for p in pts:
        G = metric.checked(p)
        Ginv = np.linalg.inv(G)
        grad = F.gradient(p)
        J = Ginv @ F.hessian(p)
        if not metric.constant:
            dG = metric.jacobian(p)
            J = J - np.einsum("ab,kbc,c->ak", Ginv, dG, Ginv @ grad)
        best = max(best, float(np.linalg.norm(J, 2)))
    return best


def log_volume_potential(metric):
    r"""The potential :math:`x \mapsto \log\sqrt{\det G(x)}` with analytic derivatives.

    Gradient :math:`\tfrac12\mathrm{tr}(G^{-1}\partial_k G)`; Hessian
    :math:`\tfrac12\mathrm{tr}(G^{-1}\partial_k\partial_l G)
    - \tfrac12\mathrm{tr}(G^{-1}\partial_l G\,G^{-1}\partial_k G)`.
    """
    m = metric.dim

    def value(x):
        sign, logdet = np.linalg.slogdet(metric(x))
        if sign <= 0:
            raise SingularMetricError(f"metric determinant not positive at x={x}")
        return 0.5 * logdet

    def gradient(x):
        if metric.constant:
            return np.zeros(m)
        Ginv = np.linalg.inv(metric(x))
        return 0.5 * np.einsum("ab,kba->k", Ginv, metric.jacobian(x))

    def hessian(x):
        if metric.constant:
            return np.zeros((m, m))
        Ginv = np.linalg.inv(metric(x))
        dG = metric.jacobian(x)
        ddG = metric.hessian(x)
        P = np.einsum("ab,kbc->kac", Ginv, dG)
        H = 0.5 * np.einsum("ab,klba->kl", Ginv, ddG) - 0.5 * np.einsum("lab,kba->kl", P, P)
        return 0.5 * (H + H.T)

    return PotentialField(m, value, gradient, hessian, name=f"logvol[{metric.name}]")
