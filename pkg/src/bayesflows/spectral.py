r"""Weighted Laplacian spectra, Poincaré constants and convex envelopes.

The operator :math:`A = -\Delta^\mu_g` is discretised as :math:`M^{-1}K`
with the stencil of :mod:`bayesflows.stencil`. Its smallest nontrivial
eigenvalue is the best Poincaré constant of the grid posterior, and
the Dirichlet energy :math:`D^\mu(f) = f^T K f` is a quadratic form. That
makes the parallelogram identity exact and lets the Poincaré and
:math:`2\lambda`-convexity statements be checked pair by pair.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import splu

from .errors import ConvergenceError, InputError, NumericDomainError
from .flows import posterior_stencil
from .grid import GridDensity
from .serialize import dumps

__all__ = [
    "WeightedLaplacianOperator",
    "SpectralResult",
    "assemble_weighted_laplacian",
    "spectral_gap",
    "dense_spectral_gap",
    "PoincareReport",
    "poincare_convexity_check",
    "best_convexity_constant",
    "mass_one",
    "convex_envelope_1d",
    "gl_poincare_bound",
    "DENSE_LIMIT",
]

DENSE_LIMIT = 2000


class WeightedLaplacianOperator:
    """Discrete :math:`-\\Delta^\\mu_g` on a grid.

    Attributes
    ----------
    grid : Grid
    K : scipy.sparse.csr_matrix
        Symmetric stiffness matrix (``f @ K @ f`` is the Dirichlet energy).
    mu_weights : ndarray
        Node masses of the grid posterior (sum to one).
    """

    def __init__(self, grid, K, mu_weights, faces=None, face_weight=None, density=None):
        self.grid = grid
        self.K = sparse.csr_matrix(K)
        self.mu_weights = np.asarray(mu_weights, dtype=float)
        self._faces = faces
        self._w = face_weight
        self._density = density

    @classmethod
    def from_stencil(cls, st):
        return cls(st.grid, st.K, st.mass, st.faces, st.face_weight, st.density)

    @property
    def size(self):
        return self.grid.size

    @property
    def matrix(self):
        """Sparse ``M^{-1} K``."""
        return sparse.diags(1.0 / self.mu_weights) @ self.K

    @property
    def mu(self):
        """The grid posterior as a :class:`GridDensity`."""
        if self._density is None:
            return GridDensity(self.grid, self.mu_weights / self.grid.weights.reshape(-1))
        return GridDensity(self.grid, self._density)

    def _flat(self, f):
        f = np.asarray(f, dtype=float)
        if f.size != self.size:
            raise InputError(f"grid function has {f.size} values, operator has {self.size}")
        return f.reshape(-1)

    def apply(self, f):
        """``A f`` computed face by face, so constants map to exactly zero."""
        f = self._flat(f)
        if self._faces is None:
            return (self.K @ f) / self.mu_weights
        fi, fj = self._faces.i, self._faces.j
        flux = self._w * (f[fi] - f[fj])
        n = self.size
        return (np.bincount(fi, flux, n) - np.bincount(fj, flux, n)) / self.mu_weights

    def inner(self, f, h):
        return float(np.sum(self.mu_weights * self._flat(f) * self._flat(h)))

    def norm(self, f):
        return math.sqrt(max(self.inner(f, f), 0.0))

    def mean(self, f):
        return float(np.sum(self.mu_weights * self._flat(f)))

    def dirichlet(self, f):
        """:math:`D^\\mu(f) = \\sum_{faces} w (f_i - f_j)^2`."""
        f = self._flat(f)
        if self._faces is None:
            return float(f @ (self.K @ f))
        d = f[self._faces.i] - f[self._faces.j]
        return float(np.sum(self._w * d * d))

    def center(self, f):
        f = self._flat(f)
        return f - self.mean(f)


def assemble_weighted_laplacian(model, grid):
    """Assemble the weighted Laplacian of ``model``'s posterior on ``grid``."""
    return WeightedLaplacianOperator.from_stencil(posterior_stencil(model, grid))


@dataclass
class SpectralResult:
    """Smallest nontrivial eigenpair with its residual and iteration count.

    The eigenfunction is centred and normalised in :math:`L^2(\\mu)`.
    """

    lambda2: float
    eigenfunction: np.ndarray
    residual: float
    n_iter: int
    grid: object = field(default=None, repr=False)

    def to_json(self):
        return dumps({"lambda2": self.lambda2, "residual": self.residual, "n_iter": self.n_iter})

    def eigenfunction_text(self):
        """Eigenfunction values in the grid text format (values may be negative)."""
        lines = [self.grid.header()] + [f"{float(v):.17g}" for v in self.eigenfunction.ravel()]
        return "\n".join(lines) + "\n"


def _residual(op, v, lam):
    r = op.apply(v) - lam * v
    return op.norm(r) / max(1.0, abs(lam))


def _finish(op, v, lam, n_iter):
    v = op.center(v)
    v = v / op.norm(v)
    # fix the sign so results are reproducible
    k = int(np.argmax(np.abs(v)))
    if v[k] < 0:
        v = -v
    return SpectralResult(float(lam), v.reshape(op.grid.shape), _residual(op, v, lam), n_iter, op.grid)


def spectral_gap(op, tol=1e-8, max_iter=1000, block=3, seed=0):
    """Smallest nontrivial eigenvalue by block inverse iteration.

    Each sweep solves ``(K + delta M) X = M V`` with ``V`` M-orthogonal to
    constants (so the solve never excites the null space), re-deflates
    constants, and applies Rayleigh-Ritz on the block.

    Raises
    ------
    ConvergenceError
        If the residual stays above ``tol`` after ``max_iter`` sweeps.
    """
    n = op.size
    if n < 3:
        raise InputError("grid too small for a spectral gap")
    M = op.mu_weights
    K = op.K
    scale = float(np.max(K.diagonal() / M))
    delta = 1e-8 * scale
    lu = splu((K + delta * sparse.diags(M)).tocsc())
    b = max(1, min(block, n - 1))
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((n, b))
    lam, v, res = math.nan, None, math.inf
    for it in range(1, max_iter + 1):
        V = V - np.outer(np.ones(n), M @ V)
        X = lu.solve(M[:, None] * V)
        X = X - np.outer(np.ones(n), M @ X)
        # M-orthonormalise, then Rayleigh-Ritz
        S = X.T @ (M[:, None] * X)
        w, U = np.linalg.eigh(0.5 * (S + S.T))
        keep = w > w.max() * 1e-14
        Q = X @ (U[:, keep] / np.sqrt(w[keep]))
        H = Q.T @ (K @ Q)
        mu_, Y = np.linalg.eigh(0.5 * (H + H.T))
        V = Q @ Y
        lam, v = mu_[0], V[:, 0]
        res = _residual(op, v, lam)
        if res <= tol:
            return _finish(op, v, lam, it)
    raise ConvergenceError(f"inverse iteration stalled at residual {res:.3e}", residual=res)


def dense_spectral_gap(op):
    """Dense generalized eigensolver oracle (``n <= DENSE_LIMIT``)."""
    if op.size > DENSE_LIMIT:
        raise InputError(f"dense path limited to {DENSE_LIMIT} unknowns")
    w, V = linalg.eigh(op.K.toarray(), np.diag(op.mu_weights), subset_by_index=[0, 1])
    return _finish(op, V[:, 1], w[1], 1)


def mass_one(op, f):
    """Shift ``f`` so that its :math:`\\mu`-integral is one."""
    f = op._flat(f)
    return f - op.mean(f) + 1.0


@dataclass
class PoincareReport:
    """Outcome of the three Poincaré/convexity checks.

    ``poincare_margins`` are ``D(f) - lambda ||f||^2`` per trial;
    ``convexity_margins`` are right minus left side of the convexity
    inequality per pair and ``t``.
    """

    lambda_: float
    poincare_ok: bool
    poincare_margins: np.ndarray
    parallelogram_error: float
    convexity_ok: bool
    convexity_margins: np.ndarray

    @property
    def ok(self):
        return self.poincare_ok and self.convexity_ok and self.parallelogram_error <= 1e-10


def poincare_convexity_check(op, trial_functions, trial_pairs=(), lam=None,
                             ts=(0.25, 0.5, 0.75), tol=1e-8):
    r"""Check the Poincaré inequality, the parallelogram identity and convexity.

    Parameters
    ----------
    op : WeightedLaplacianOperator
    trial_functions : list of arrays
        Mean-zero grid functions for the Poincaré inequality.
    trial_pairs : list of (f0, f1)
        Mass-one pairs for the parallelogram identity and for
        :math:`D(tf_0 + (1-t)f_1) + \lambda t(1-t)\|f_0 - f_1\|^2 \le tD(f_0) + (1-t)D(f_1)`.
    lam : float, optional
        Poincaré constant to test; defaults to the spectral gap. The
        convexity inequality above is :math:`2\lambda`-geodesic convexity
        of :math:`D^\mu` with the usual :math:`\kappa t(1-t)/2` modulus.

    Notes
    -----
    The parallelogram error is relative to ``max(1, D(f0), D(f1))``.
    """
    if lam is None:
        lam = spectral_gap(op).lambda2
    pm = []
    for f in trial_functions:
        f = op._flat(f)
        nf = op.norm(f)
        if abs(op.mean(f)) > 1e-10 * max(1.0, nf):
            raise InputError("Poincaré trial functions must have zero mean")
        pm.append(op.dirichlet(f) - lam * nf * nf)
    pm = np.array(pm)
    par_err, cm = 0.0, []
    for f0, f1 in trial_pairs:
        f0, f1 = op._flat(f0), op._flat(f1)
        if abs(op.mean(f0) - 1) > 1e-10 or abs(op.mean(f1) - 1) > 1e-10:
            raise InputError("convexity trial pairs must have unit mass")
        D0, D1 = op.dirichlet(f0), op.dirichlet(f1)
        Dd = op.dirichlet(f0 - f1)
        nd = op.norm(f0 - f1) ** 2
        scale = max(1.0, D0, D1)
        for t in ts:
            Dt = op.dirichlet(t * f0 + (1 - t) * f1)
            par_err = max(par_err, abs(Dt + t * (1 - t) * Dd - t * D0 - (1 - t) * D1) / scale)
            cm.append(t * D0 + (1 - t) * D1 - Dt - lam * t * (1 - t) * nd)
    cm = np.array(cm)
    return PoincareReport(float(lam), bool(np.all(pm >= -tol)), pm, float(par_err),
                          bool(np.all(cm >= -tol)), cm)


def best_convexity_constant(op, trial_pairs, rcond=1e-10):
    r"""Largest :math:`\kappa` making :math:`D^\mu` :math:`\kappa`-convex along the pairs' span.

    By the parallelogram identity the convexity inequality along
    ``(f0, f1)`` holds with constant :math:`\kappa` iff
    :math:`\kappa/2 \le D(g)/\|g\|^2` for ``g = f0 - f1``. Every ``g`` in the
    span of the differences is such a difference, so the best constant is
    twice the Rayleigh-Ritz minimum over that span.
    """
    G = np.stack([op._flat(f0) - op._flat(f1) for f0, f1 in trial_pairs], axis=1)
    G = G - np.outer(np.ones(G.shape[0]), op.mu_weights @ G)
    S = G.T @ (op.mu_weights[:, None] * G)
    w, U = np.linalg.eigh(0.5 * (S + S.T))
    keep = w > w.max() * rcond
    Q = G @ (U[:, keep] / np.sqrt(w[keep]))
    H = Q.T @ (op.K @ Q)
    return float(2 * np.linalg.eigvalsh(0.5 * (H + H.T))[0])


def convex_envelope_1d(x, w=None):
    """Greatest convex minorant of samples ``w`` at increasing ``x``.

    ``convex_envelope_1d(w)`` treats ``w`` as samples on a uniform grid.
    The lower hull is built with the monotone-chain algorithm and
    interpolated back onto ``x``.
    """
    if w is None:
        w = np.asarray(x, dtype=float)
        x = np.arange(w.size, dtype=float)
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != w.shape or x.ndim != 1:
        raise InputError("x and w must be 1D arrays of equal length")
    if x.size < 2:
        raise InputError("need at least two samples")
    if not np.all(np.isfinite(w)):
        raise InputError("samples must be finite")
    if np.any(np.diff(x) <= 0):
        raise InputError("x must be strictly increasing")
    hull = []
    for k in range(x.size):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            # drop j when it lies on or above the chord i -> k
            cross = (x[j] - x[i]) * (w[k] - w[i]) - (w[j] - w[i]) * (x[k] - x[i])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(k)
    env = np.interp(x, x[hull], w[hull])
    # vertices carry the sample values exactly
    env[hull] = w[hull]
    return np.minimum(env, w)


def gl_poincare_bound(k, epsilon, lambda_min_L, alpha):
    r"""Lower bound :math:`e^{-k/\varepsilon}\,\Lambda_{\min}(L)^\alpha` on the GL spectral gap."""
    if k < 0 or int(k) != k:
        raise NumericDomainError("k must be a nonnegative integer")
    for name, v in (("epsilon", epsilon), ("lambda_min_L", lambda_min_L), ("alpha", alpha)):
        if not (v > 0 and math.isfinite(v)):
            raise NumericDomainError(f"{name} must be positive and finite")
    return math.exp(-k / epsilon) * lambda_min_L ** alpha
