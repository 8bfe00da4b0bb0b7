r"""Euler-Maruyama simulation of the Langevin and chi-square diffusions.

Randomness comes from counter-based Philox streams. The block for step
``k`` is keyed by the seed with counter ``(purpose, k, 0, 0)``, and particle
``i`` reads raw words ``[i*w, (i+1)*w)`` of that block. A particle's noise
therefore depends only on ``(seed, i, k)``, never on the ensemble size or on
how the work is split between threads.

The metric must be constant; the two drift parts
:math:`G^{-1}\nabla\Psi` and :math:`G^{-1}\nabla\phi` are evaluated
separately, so :func:`chi2_step` with :math:`\tilde\rho \equiv 1`
reproduces :func:`langevin_step` bit for bit.
"""
import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DivergenceError,
    InputError,
    InsufficientSampleError,
    OutOfDomainError,
)
from .grid import GridDensity
from .serialize import dumps

__all__ = [
    "ParticleEnsemble",
    "EnsembleStats",
    "DensitySeries",
    "standard_normals",
    "langevin_step",
    "chi2_step",
    "run",
    "ensemble_stats",
    "integrated_autocorr_time",
    "sample_from_density",
    "histogram",
    "format_trace",
]

NOISE_LANGEVIN = 1
NOISE_INIT = 2
TWO_POW_M53 = 2.0 ** -53


def standard_normals(seed, step, n, m, purpose=NOISE_LANGEVIN):
    """``(n, m)`` standard normals for ``step``; row ``i`` is independent of ``n``."""
    w = m + (m % 2)
    bg = np.random.Philox(key=[int(seed) & (2**64 - 1), 0],
                          counter=[int(purpose), int(step), 0, 0])
    raw = bg.random_raw(n * w).reshape(n, w)
    u1 = ((raw[:, 0::2] >> np.uint64(11)).astype(float) + 1.0) * TWO_POW_M53
    u2 = (raw[:, 1::2] >> np.uint64(11)).astype(float) * TWO_POW_M53
    r = np.sqrt(-2.0 * np.log(u1))
    ang = 2 * np.pi * u2
    z = np.empty((n, m))
    z[:, 0::2] = r * np.cos(ang)
    z[:, 1::2] = r[:, : m // 2] * np.sin(ang[:, : m // 2])
    return z


@dataclass
class ParticleEnsemble:
    """Particle positions ``(N, m)`` with time, seed and step counter."""

    positions: np.ndarray
    t: float = 0.0
    rng_seed: int = 0
    step_count: int = 0

    def __post_init__(self):
        X = np.array(self.positions, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1:
            raise InputError("positions must be an (N, m) array with N >= 1")
        if not np.all(np.isfinite(X)):
            raise InputError("positions must be finite")
        self.positions = X
        self.rng_seed = int(self.rng_seed)

    @property
    def size(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    @classmethod
    def gaussian(cls, n, mean, cov, seed=0):
        """Ensemble drawn from ``N(mean, cov)`` with the ensemble's own RNG."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        L = np.linalg.cholesky(np.atleast_2d(cov))
        z = standard_normals(seed, 0, n, mean.size, purpose=NOISE_INIT)
        return cls(mean + z @ L.T, 0.0, seed, 0)


def _constant_metric(model):
    if not model.metric.constant:
        raise InputError("samplers need a constant metric")
    G = model.metric(np.zeros(model.dim))
    w, V = np.linalg.eigh(G)
    if w[0] <= 0:
        raise InputError("metric must be positive definite")
    return np.linalg.inv(G), (V / np.sqrt(w)) @ V.T


def _drifts(model, X, Ginv):
    a = model.prior_potential.gradients_on(X) @ Ginv
    b = model.neg_log_likelihood.gradients_on(X) @ Ginv
    return a, b


def _check(ensemble, new, drift):
    bad = ~np.all(np.isfinite(drift), axis=1) | ~np.all(np.isfinite(new), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DivergenceError(
            f"non-finite update for particle {i} at {ensemble.positions[i].tolist()}",
            index=i, position=ensemble.positions[i].copy())


def _advance(ensemble, new, dt):
    return replace(ensemble, positions=new, t=ensemble.t + dt, step_count=ensemble.step_count + 1)


def langevin_step(ensemble, model, dt):
    r"""Euler-Maruyama step ``X - G^{-1}grad(Psi + phi) dt + sqrt(2 dt) G^{-1/2} xi``."""
    if not dt > 0:
        raise InputError("dt must be positive")
    Ginv, Gm12 = _constant_metric(model)
    X = ensemble.positions
    a, b = _drifts(model, X, Ginv)
    drift = a + b
    xi = standard_normals(ensemble.rng_seed, ensemble.step_count, ensemble.size, ensemble.dim)
    new = X - drift * dt + np.sqrt(2 * dt) * (xi @ Gm12)
    _check(ensemble, new, drift)
    return _advance(ensemble, new, dt)


class DensitySeries:
    """Snapshots of a nonnegative field on a grid, looked up by nearest time.

    Parameters
    ----------
    grid : Grid
    times : sequence of float
        Strictly increasing.
    values : sequence of arrays
        One array of ``grid.shape`` per time.
    """

    def __init__(self, grid, times, values):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0):
            raise InputError("snapshot times must be strictly increasing")
        self.values = np.stack([np.asarray(v, dtype=float).reshape(grid.shape) for v in values])
        if self.values.shape[0] != self.times.size:
            raise InputError("one snapshot per time is required")

    @classmethod
    def constant(cls, grid, value=1.0):
        return cls(grid, [0.0], [np.full(grid.shape, float(value))])

    def at(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        return self.values[k]

    def interpolate(self, t, X):
        """Multilinear interpolation at points ``X`` (``(N, dim)``), clipped at 0."""
        field = self.at(t)
        g = self.grid
        lo = np.asarray(g.lower)
        h = np.asarray(g.spacing)
        s = (X - lo) / h
        shape = np.asarray(g.shape)
        k = np.clip(np.floor(s).astype(int), 0, shape - 2)
        f = np.clip(s - k, 0.0, 1.0)
        if g.dim == 1:
            v = field[k[:, 0]] * (1 - f[:, 0]) + field[k[:, 0] + 1] * f[:, 0]
        else:
            i, j = k[:, 0], k[:, 1]
            fx, fy = f[:, 0], f[:, 1]
            v = (field[i, j] * (1 - fx) * (1 - fy) + field[i + 1, j] * fx * (1 - fy)
                 + field[i, j + 1] * (1 - fx) * fy + field[i + 1, j + 1] * fx * fy)
        return np.maximum(v, 0.0)


def _reflect(X, lo, hi):
    width = hi - lo
    y = np.mod(X - lo, 2 * width)
    return lo + np.where(y > width, 2 * width - y, y)


def chi2_step(ensemble, model, rho_tilde, dt, boundary="halt"):
    r"""Euler-Maruyama step of the chi-square diffusion driven by a known ``rho_tilde``.

    ``X - (r grad_g Psi + grad_g phi) dt + sqrt(2 dt r) G^{-1/2} xi`` with
    ``r = rho_tilde(t, X)``. Particles leaving the snapshot grid raise
    :class:`OutOfDomainError` (``boundary="halt"``) or are mirrored back
    (``boundary="reflect"``).
    """
    if not dt > 0:
        raise InputError("dt must be positive")
    if boundary not in ("halt", "reflect"):
        raise InputError("boundary must be 'halt' or 'reflect'")
    Ginv, Gm12 = _constant_metric(model)
    X = ensemble.positions
    if X.shape[1] != rho_tilde.grid.dim:
        raise InputError("ensemble and rho_tilde dimensions differ")
    lo = np.asarray(rho_tilde.grid.lower)
    hi = np.asarray(rho_tilde.grid.upper)
    r = rho_tilde.interpolate(ensemble.t, X)
    a, b = _drifts(model, X, Ginv)
    drift = r[:, None] * a + b
    xi = standard_normals(ensemble.rng_seed, ensemble.step_count, ensemble.size, ensemble.dim)
    new = X - drift * dt + np.sqrt(2 * dt * r)[:, None] * (xi @ Gm12)
    _check(ensemble, new, drift)
    outside = np.any((new < lo) | (new > hi), axis=1)
    if outside.any():
        if boundary == "halt":
            i = int(np.flatnonzero(outside)[0])
            raise OutOfDomainError(f"particle {i} left the density grid at {new[i].tolist()}")
        new = _reflect(new, lo, hi)
    return _advance(ensemble, new, dt)


def run(ensemble, model, dt, n_steps, step=langevin_step, record=None, **kw):
    """Apply ``step`` ``n_steps`` times.

    ``record`` is ``None`` or a callable ``record(ensemble)`` invoked after
    every step (for traces).
    """
    for _ in range(int(n_steps)):
        ensemble = step(ensemble, model, dt=dt, **kw) if kw else step(ensemble, model, dt)
        if record is not None:
            record(ensemble)
    return ensemble


def integrated_autocorr_time(trace, max_lag=None):
    """Integrated autocorrelation time of a ``(T,)`` or ``(T, chains)`` trace.

    Autocorrelations are averaged over chains and summed until the first
    nonpositive value (initial positive sequence).
    """
    x = np.asarray(trace, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    T = x.shape[0]
    if T < 4:
        raise InsufficientSampleError("need at least 4 trace points")
    x = x - x.mean(axis=0)
    n = 1 << int(math.ceil(math.log2(2 * T)))
    f = np.fft.rfft(x, n=n, axis=0)
    acov = np.fft.irfft(f * np.conj(f), n=n, axis=0)[:T].mean(axis=1)
    if acov[0] <= 0:
        return 1.0
    rho = acov / acov[0]
    max_lag = T // 2 if max_lag is None else min(int(max_lag), T - 1)
    tau = 1.0
    for k in range(1, max_lag):
        if rho[k] <= 0:
            break
        tau += 2 * rho[k]
    return float(tau)


@dataclass
class EnsembleStats:
    """Mean, unbiased covariance, histogram and effective sample size."""

    t: float
    mean: np.ndarray
    covariance: np.ndarray
    histogram: GridDensity
    ess_proxy: float

    def to_json(self):
        return dumps({
            "t": self.t,
            "mean": [float(v) for v in self.mean],
            "cov": [[float(v) for v in row] for row in self.covariance],
            "ess_proxy": None if math.isnan(self.ess_proxy) else float(self.ess_proxy),
        })


def histogram(X, grid):
    """Nearest-node histogram normalised so its trapezoid mass is 1.

    Boundary nodes own half cells, matching the trapezoid weights; points
    beyond the grid are counted at the nearest boundary node.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != grid.dim:
        raise InputError("histogram grid dimension differs from the ensemble")
    lo = np.asarray(grid.lower)
    h = np.asarray(grid.spacing)
    k = np.clip(np.rint((X - lo) / h).astype(int), 0, np.asarray(grid.shape) - 1)
    flat = np.ravel_multi_index(tuple(k.T), grid.shape)
    counts = np.bincount(flat, minlength=grid.size).reshape(grid.shape)
    return GridDensity(grid, counts / (X.shape[0] * grid.weights))


def ensemble_stats(ensemble, bins=None, trace=None):
    """Summary statistics of an ensemble.

    Parameters
    ----------
    ensemble : ParticleEnsemble
    bins : Grid, optional
        Histogram grid (1D or 2D).
    trace : array_like, optional
        Recorded coordinate-1 values, ``(T,)`` for one chain or
        ``(T, chains)``; the effective sample size is
        ``T * chains / tau``. Without a trace it is NaN.
    """
    X = ensemble.positions
    if X.shape[0] < 2:
        raise InsufficientSampleError("ensemble statistics need at least two particles")
    mean = X.mean(axis=0)
    C = np.cov(X, rowvar=False, ddof=1).reshape(X.shape[1], X.shape[1])
    C = 0.5 * (C + C.T)
    hist = histogram(X, bins) if bins is not None else None
    if trace is None:
        ess = float("nan")
    else:
        tr = np.asarray(trace, dtype=float)
        ess = tr.size / integrated_autocorr_time(tr)
    return EnsembleStats(ensemble.t, mean, C, hist, ess)


def sample_from_density(density, n, seed=0):
    """Inverse-CDF samples from a 1D grid density (piecewise-linear CDF)."""
    if density.grid.dim != 1:
        raise InputError("inverse-CDF sampling is 1D only")
    x = density.grid.axes[0]
    v = density.values
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    bg = np.random.Philox(key=[int(seed) & (2**64 - 1), 0], counter=[NOISE_INIT, 0, 1, 0])
    u = ((bg.random_raw(n) >> np.uint64(11)).astype(float) + 0.5) * TWO_POW_M53
    return np.interp(u, cdf[keep], x[keep])


def format_trace(rows, thin=1):
    """CSV ``t,particle_id,x1[,x2]`` from ``(t, positions)`` pairs, keeping every ``thin``-th."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = None
    for k, (t, X) in enumerate(rows):
        if k % thin:
            continue
        X = np.atleast_2d(X)
        if header is None:
            header = ["t", "particle_id"] + [f"x{d + 1}" for d in range(X.shape[1])]
            w.writerow(header)
        for i, x in enumerate(X):
            w.writerow([f"{t:.17g}", i] + [f"{v:.17g}" for v in x])
    return buf.getvalue()
