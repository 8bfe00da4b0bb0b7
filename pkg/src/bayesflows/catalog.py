"""Named builtin metric and potential families.

Configs refer to these by key plus numeric parameters, e.g.
``make_metric("constant", matrix=[[1, 0], [0, 10]])``.

Potential closures are vectorised: they accept ``(..., m)`` arrays.
"""
import numpy as np

from .errors import ConfigError
from .geometry import MetricField, PotentialField

__all__ = ["METRICS", "POTENTIALS", "make_metric", "make_potential", "catalog_listing"]


def _spd(matrix, what):
    A = np.array(matrix, dtype=float)
    if A.ndim == 1:
        A = np.diag(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError(f"{what} must be a square matrix", field=what)
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise ConfigError(f"{what} must be symmetric", field=what)
    if np.linalg.eigvalsh(A)[0] <= 0:
        raise ConfigError(f"{what} must be positive definite", field=what)
    return A


def euclidean(dim=2):
    return MetricField.from_matrix(np.eye(int(dim)), name="euclidean")


def constant(matrix):
    return MetricField.from_matrix(_spd(matrix, "matrix"), name="constant")


def diag_poly(c=1.0):
    """``G(x) = diag(1, c x_1^2 + 1)`` on R^2."""
    c = float(c)

    def G(x):
        return np.diag([1.0, c * x[0] ** 2 + 1.0])

    def dG(x):
        out = np.zeros((2, 2, 2))
        out[0, 1, 1] = 2 * c * x[0]
        return out

    def ddG(x):
        out = np.zeros((2, 2, 2, 2))
        out[0, 0, 1, 1] = 2 * c
        return out

    return MetricField(2, G, dG, ddG, name="diag_poly")


def conformal(c=1.0, dim=2):
    """``G(x) = exp(2 c x_1) I``: a flat conformal metric (polar-type coordinates)."""
    c, m = float(c), int(dim)
    I = np.eye(m)

    def G(x):
        return np.exp(2 * c * x[0]) * I

    def dG(x):
        out = np.zeros((m, m, m))
        out[0] = 2 * c * np.exp(2 * c * x[0]) * I
        return out

    def ddG(x):
        out = np.zeros((m, m, m, m))
        out[0, 0] = 4 * c * c * np.exp(2 * c * x[0]) * I
        return out

    return MetricField(m, G, dG, ddG, name="conformal")


def conformal_radial(c=1.0, dim=2):
    """``G(x) = exp(c |x|^2) I``; in 2D its Ricci matrix is ``-2c I`` everywhere."""
    c, m = float(c), int(dim)
    I = np.eye(m)

    def G(x):
        return np.exp(c * x @ x) * I

    def dG(x):
        e = np.exp(c * x @ x)
        return 2 * c * e * x[:, None, None] * I

    def ddG(x):
        e = np.exp(c * x @ x)
        H = e * (2 * c * I + 4 * c * c * np.outer(x, x))
        return H[:, :, None, None] * I

    return MetricField(m, G, dG, ddG, name="conformal_radial")


def fisher_gaussian(Sigma):
    """Constant metric ``Sigma^{-1}``."""
    S = _spd(Sigma, "Sigma")
    return MetricField.from_matrix(np.linalg.inv(S), name="gauss_fisher")


def scaled_identity(scale, dim=2):
    return MetricField.from_matrix(float(scale) * np.eye(int(dim)), name=f"{float(scale):g}*I")


METRICS = {
    "euclidean": euclidean,
    "constant": constant,
    "diag_poly": diag_poly,
    "conformal": conformal,
    "conformal_radial": conformal_radial,
    "gauss_quadratic": fisher_gaussian,
    "scaled_identity": scaled_identity,
}


def gauss_quadratic(Sigma, mean=None):
    """``F(x) = 1/2 <Sigma^{-1}(x - mean), x - mean>``."""
    S = _spd(Sigma, "Sigma")
    P = np.linalg.inv(S)
    P = 0.5 * (P + P.T)
    m = P.shape[0]
    c = np.zeros(m) if mean is None else np.asarray(mean, dtype=float)

    def value(x):
        d = x - c
        return 0.5 * np.einsum("...i,ij,...j->...", d, P, d)

    return PotentialField(m, value, lambda x: (x - c) @ P, lambda x: P,
                          name="gauss_quadratic", vectorized=True)


def zero(dim=1):
    m = int(dim)
    return PotentialField(m, lambda x: np.zeros(np.shape(x)[:-1]), lambda x: np.zeros(np.shape(x)),
                          lambda x: np.zeros((m, m)), name="zero", vectorized=True)


def ou(sigma2=1.0, dim=1, mean=0.0):
    """Isotropic ``|x - mean|^2 / (2 sigma2)``."""
    return gauss_quadratic(np.eye(int(dim)) * float(sigma2), np.full(int(dim), float(mean)))


def double_well(scale=0.25, dim=1):
    """``scale * sum_i (x_i^2 - 1)^2``; the default is ``(x^2 - 1)^2 / 4``."""
    a, m = float(scale), int(dim)
    return PotentialField(
        m,
        lambda x: a * np.sum((x**2 - 1) ** 2, axis=-1),
        lambda x: 4 * a * x * (x**2 - 1),
        lambda x: np.diag(a * (12 * x**2 - 4)),
        name="double_well", vectorized=True,
    )


def power_tail(power=0.25, dim=1):
    """``sum_i (1 + x_i^2)^power``: heavy-tailed for power < 1/2."""
    p, m = float(power), int(dim)

    def grad(x):
        return 2 * p * x * (1 + x**2) ** (p - 1)

    def hess(x):
        s = 1 + x**2
        return np.diag(2 * p * s ** (p - 2) * (s + 2 * (p - 1) * x**2))

    return PotentialField(m, lambda x: np.sum((1 + x**2) ** p, axis=-1), grad, hess,
                          name="power_tail", vectorized=True)


def student(scale=0.5, dim=1):
    """``scale * sum_i log(1 + x_i^2)``."""
    c, m = float(scale), int(dim)
    return PotentialField(
        m,
        lambda x: c * np.sum(np.log1p(x**2), axis=-1),
        lambda x: 2 * c * x / (1 + x**2),
        lambda x: np.diag(2 * c * (1 - x**2) / (1 + x**2) ** 2),
        name="student", vectorized=True,
    )


def linear(coef):
    a = np.asarray(coef, dtype=float).reshape(-1)
    m = a.size
    return PotentialField(m, lambda x: x @ a, lambda x: np.broadcast_to(a, np.shape(x)).copy(),
                          lambda x: np.zeros((m, m)), name="linear", vectorized=True)


def constant_potential(value=0.0, dim=1):
    c, m = float(value), int(dim)
    return PotentialField(m, lambda x: np.full(np.shape(x)[:-1], c), lambda x: np.zeros(np.shape(x)),
                          lambda x: np.zeros((m, m)), name="constant", vectorized=True)


POTENTIALS = {
    "gauss_quadratic": gauss_quadratic,
    "zero": zero,
    "ou": ou,
    "double_well": double_well,
    "power_tail": power_tail,
    "student": student,
    "linear": linear,
    "constant": constant_potential,
}


def _make(table, kind, name, params):
    try:
        factory = table[name]
    except KeyError:
        raise ConfigError(f"unknown {kind} {name!r}; known: {sorted(table)}", field=name) from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {kind} {name!r}: {exc}", field=name) from exc


def make_metric(name, **params):
    return _make(METRICS, "metric", name, params)


def make_potential(name, **params):
    return _make(POTENTIALS, "potential", name, params)


def catalog_listing():
    """Human-readable one-line summaries of every builtin."""
    def first_line(f):
        doc = (f.__doc__ or "").strip().splitlines()
        return doc[0] if doc else ""

    lines = ["metrics:"]
    lines += [f"  {k:18s} {first_line(f)}" for k, f in sorted(METRICS.items())]
    lines.append("potentials:")
    lines += [f"  {k:18s} {first_line(f)}" for k, f in sorted(POTENTIALS.items())]
    return "\n".join(lines)
