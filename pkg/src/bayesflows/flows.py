r"""Grid solvers for the Fokker-Planck and weighted porous-medium flows.

All states carry the Lebesgue density :math:`p` of :math:`\mu_t` at the
nodes. Converters give :math:`\theta = p/\sqrt{\det G}`,
:math:`\rho = p/\mu` and :math:`\tilde\rho = p/\pi`, where :math:`\mu` and
:math:`\pi` are the discrete stationary densities of the stencils in
:mod:`bayesflows.stencil`. Boundaries are no-flux.

Two discretisations of the linear flow share one set of face weights:

* :func:`step_fokker_planck` evolves :math:`p` with Scharfetter-Gummel
  drift-diffusion fluxes (a nonsymmetric system);
* :func:`step_weighted_laplacian` evolves :math:`\rho` with the symmetric
  weighted stiffness matrix.

They agree up to linear-solver round-off, which makes them mutual checks.
The porous-medium step is explicit with an automatic positivity bound.
"""
import csv
import io
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import (
    FitError,
    InputError,
    SchemeError,
    StabilityError,
    UnsupportedDimensionError,
)
from .functionals import chi2_divergence, kl_divergence
from .grid import GridDensity
from .stencil import assemble, bernoulli

__all__ = [
    "FlowState",
    "DecayCurve",
    "posterior_stencil",
    "prior_stencil",
    "stationary_density",
    "step_fokker_planck",
    "step_weighted_laplacian",
    "step_porous_medium",
    "porous_medium_dt",
    "evolve",
    "wasserstein_1d",
    "decay_curve",
    "barenblatt",
]

SCHEMES = ("explicit", "semi-implicit")
NEG_TOL = 1e-12
PM_SAFETY = 0.5


def _lebesgue_potential(model, grid, with_likelihood):
    U = model.psi_on(grid) - model.log_volume_on(grid)
    if with_likelihood:
        U = U + model.phi_on(grid)
    return U


def posterior_stencil(model, grid):
    """Stencil whose stationary density is the grid posterior."""
    return model._cached(("st_post", grid), lambda: assemble(
        grid, _lebesgue_potential(model, grid, True), model.metric))


def prior_stencil(model, grid):
    """Stencil weighted by the prior (used by the porous-medium flow)."""
    return model._cached(("st_prior", grid), lambda: assemble(
        grid, _lebesgue_potential(model, grid, False), model.metric))


def stationary_density(model, grid):
    """Discrete posterior: the normalised null vector of the linear flow."""
    return GridDensity(grid, posterior_stencil(model, grid).density)


@dataclass
class FlowState:
    """Time, Lebesgue density, step size and scheme of an evolving flow.

    ``dt=None`` selects the automatic step of the porous-medium flow.
    """

    t: float
    density: GridDensity
    dt: float = None
    scheme: str = "semi-implicit"

    def __post_init__(self):
        if self.t < 0:
            raise InputError("time must be nonnegative")
        if self.scheme not in SCHEMES:
            raise InputError(f"scheme must be one of {SCHEMES}")
        if self.dt is not None and not self.dt > 0:
            raise InputError("dt must be positive")

    @property
    def grid(self):
        return self.density.grid

    def mass(self):
        return self.density.mass()

    def theta(self, model):
        """Density with respect to the Riemannian volume."""
        return self.density.values / np.exp(model.log_volume_on(self.grid))

    def rho(self, model):
        """Relative density with respect to the discrete posterior."""
        mu = posterior_stencil(model, self.grid).density.reshape(self.grid.shape)
        return self.density.values / mu

    def rho_tilde(self, model):
        """Relative density with respect to the discrete prior."""
        pi = prior_stencil(model, self.grid).density.reshape(self.grid.shape)
        return self.density.values / pi

    @classmethod
    def from_rho(cls, model, grid, rho, **kw):
        mu = posterior_stencil(model, grid).density.reshape(grid.shape)
        return cls(density=GridDensity(grid, np.asarray(rho).reshape(grid.shape) * mu), **kw)

    @classmethod
    def from_rho_tilde(cls, model, grid, rho_tilde, **kw):
        pi = prior_stencil(model, grid).density.reshape(grid.shape)
        return cls(density=GridDensity(grid, np.asarray(rho_tilde).reshape(grid.shape) * pi), **kw)


def _accept(state, values, dt):
    v = values.reshape(state.grid.shape)
    lo = v.min()
    if lo < -NEG_TOL * max(1.0, np.abs(v).max()):
        raise SchemeError(f"negative density {lo:.3e} after step at t={state.t:.6g}")
    if not np.all(np.isfinite(v)):
        raise SchemeError(f"non-finite density after step at t={state.t:.6g}")
    return replace(state, t=state.t + dt, density=GridDensity(state.grid, np.maximum(v, 0.0)))


def _fp_matrix(model, grid):
    """Sparse ``L`` with ``c * dp/dt = L p`` (Scharfetter-Gummel fluxes)."""
    def compute():
        st = posterior_stencil(model, grid)
        f = st.faces
        dU = st.U[f.j] - st.U[f.i]
        a = st.kappa * bernoulli(dU)      # weight of p_i in the i -> j flux
        b = st.kappa * bernoulli(-dU)     # weight of p_j
        n = grid.size
        rows = np.concatenate([f.i, f.i, f.j, f.j])
        cols = np.concatenate([f.i, f.j, f.i, f.j])
        vals = np.concatenate([-a, b, a, -b])
        return sparse.csc_matrix((vals, (rows, cols)), shape=(n, n))
    return model._cached(("fp_L", grid), compute)


def _explicit_bound(cell, diag_rate):
    with np.errstate(divide="ignore"):
        r = np.where(diag_rate > 0, cell / diag_rate, np.inf)
    return float(r.min())


def _require_dt(state):
    if state.dt is None:
        raise InputError("the linear flows need an explicit dt")
    return state.dt


def step_fokker_planck(state, model):
    """One no-flux finite-volume step of the drift-diffusion equation for ``p``.

    The semi-implicit scheme is backward Euler; the explicit scheme is
    forward Euler and raises :class:`StabilityError` when ``dt`` exceeds
    the positivity bound ``min_i c_i / |L_ii|``.
    """
    dt = _require_dt(state)
    grid = state.grid
    L = _fp_matrix(model, grid)
    cell = posterior_stencil(model, grid).cell
    p = state.density.values.reshape(-1)
    if state.scheme == "explicit":
        bound = _explicit_bound(cell, -L.diagonal())
        if dt > bound:
            raise StabilityError(f"dt={dt:.3e} exceeds the explicit bound {bound:.3e}")
        new = p + dt * (L @ p) / cell
    else:
        lu = model._cached(("fp_lu", grid, dt), lambda: splu(
            (sparse.diags(cell) - dt * L).tocsc()))
        new = lu.solve(cell * p)
    return _accept(state, new, dt)


def step_weighted_laplacian(state, model):
    r"""One step of :math:`\partial_t\rho = \Delta^\mu_g\rho` on the symmetric stencil.

    The state is converted to ``rho``, advanced with ``(M + dt K)`` (or its
    explicit counterpart) and converted back.
    """
    dt = _require_dt(state)
    grid = state.grid
    st = posterior_stencil(model, grid)
    rho = state.density.values.reshape(-1) / st.density
    if state.scheme == "explicit":
        bound = _explicit_bound(st.mass, st.K.diagonal())
        if dt > bound:
            raise StabilityError(f"dt={dt:.3e} exceeds the explicit bound {bound:.3e}")
        new = rho - dt * (st.K @ rho) / st.mass
    else:
        lu = model._cached(("wl_lu", grid, dt), lambda: splu(
            (sparse.diags(st.mass) + dt * st.K).tocsc()))
        new = lu.solve(st.mass * rho)
    return _accept(state, new * st.density, dt)


def _pm_operator(model, grid, rt):
    """Face diffusivities, drift fluxes and the node rate bound for ``rt``."""
    st = prior_stencil(model, grid)
    f = st.faces
    rbar = np.maximum(0.5 * (rt[f.i] + rt[f.j]), 0.0)
    a = 2.0 * rbar * st.face_weight
    n = grid.size
    rate = (np.bincount(f.i, a, n) + np.bincount(f.j, a, n)) / st.mass
    phi = model.phi_on(grid).reshape(-1)
    vel = -st.kappa * (phi[f.j] - phi[f.i])          # i -> j transport coefficient
    out = np.bincount(f.i, np.maximum(vel, 0.0), n) + np.bincount(f.j, np.maximum(-vel, 0.0), n)
    rate += out / st.cell
    return st, a, vel, rate


def porous_medium_dt(state, model):
    """Largest explicit step keeping the porous-medium update positive."""
    rt = state.density.values.reshape(-1) / prior_stencil(model, state.grid).density
    _, _, _, rate = _pm_operator(model, state.grid, rt)
    top = rate.max()
    return math.inf if top == 0 else 1.0 / top


def step_porous_medium(state, model, dt=None):
    r"""One explicit step of the weighted porous-medium equation for :math:`\tilde\rho`.

    Diffusion uses the face mean of :math:`\tilde\rho` clipped at 0, so the
    face flux is :math:`2\bar\rho\,w\,(\tilde\rho_j - \tilde\rho_i)`; the
    likelihood drift is upwinded. ``dt`` defaults to ``state.dt`` and, if
    that is ``None``, to half the positivity bound.
    """
    grid = state.grid
    st = prior_stencil(model, grid)
    p = state.density.values.reshape(-1)
    rt = p / st.density
    st, a, vel, rate = _pm_operator(model, grid, rt)
    top = rate.max()
    bound = math.inf if top == 0 else 1.0 / top
    dt = dt if dt is not None else state.dt
    if dt is None:
        dt = PM_SAFETY * bound
        if not math.isfinite(dt):
            raise InputError("state is stationary with no intrinsic time scale; pass dt")
    elif dt > bound:
        raise StabilityError(f"dt={dt:.3e} exceeds the porous-medium bound {bound:.3e}")
    f = st.faces
    flux = a * (rt[f.i] - rt[f.j]) + vel * np.where(vel > 0, p[f.i], p[f.j])
    dp = np.bincount(f.j, flux, grid.size) - np.bincount(f.i, flux, grid.size)
    return _accept(state, p + dt * dp / st.cell, dt)


def evolve(state, model, flow, t_end, callback=None):
    """Advance ``state`` to ``t_end`` with ``flow`` in ``{"kl_fp", "wl", "chi2_pm"}``.

    ``callback(state)`` is invoked after every accepted step.
    """
    step = {"kl_fp": step_fokker_planck, "wl": step_weighted_laplacian}.get(flow)
    if step is None and flow != "chi2_pm":
        raise InputError(f"unknown flow {flow!r}")
    eps = 1e-12 * max(1.0, abs(t_end))
    while state.t < t_end - eps:
        remaining = t_end - state.t
        if flow == "chi2_pm":
            dt = state.dt if state.dt is not None else PM_SAFETY * porous_medium_dt(state, model)
            dt = min(dt, remaining) if math.isfinite(dt) else remaining
            state = replace(step_porous_medium(state, model, dt=dt), dt=state.dt)
        else:
            dt = _require_dt(state)
            if dt > remaining * (1 + 1e-9):
                # shorten the final step to land on t_end
                state = replace(step(replace(state, dt=remaining), model), dt=dt)
            else:
                state = step(state, model)
        if callback is not None:
            callback(state)
    return state


def _quantiles(density, s):
    grid = density.grid
    x = grid.axes[0]
    v = density.values
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(x))])
    total = cdf[-1]
    if not total > 0:
        raise InputError("density has zero mass")
    cdf = cdf / total
    # drop flat stretches so the inverse is well defined
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return np.interp(s, cdf[keep], x[keep])


@lru_cache(maxsize=4)
def _legendre(nodes):
    x, w = np.polynomial.legendre.leggauss(nodes)
    return 0.5 * (x + 1), 0.5 * w


def wasserstein_1d(nu1, nu2, nodes=2048):
    """Quadratic Wasserstein distance of two 1D grid densities by quantile coupling.

    ``int_0^1 |Q1(s) - Q2(s)|^2 ds`` uses Gauss-Legendre nodes, which resolve
    the logarithmic growth of the quantiles near 0 and 1 far better than
    equispaced ones.
    """
    if nu1.grid.dim != 1 or nu2.grid.dim != 1:
        raise UnsupportedDimensionError("wasserstein_1d needs 1D densities")
    s, w = _legendre(int(nodes))
    d = _quantiles(nu1, s) - _quantiles(nu2, s)
    return float(math.sqrt(w @ (d * d)))


@dataclass
class DecayCurve:
    """Recorded functional values with a log-linear fitted rate."""

    times: np.ndarray
    values: np.ndarray
    window: tuple = None
    fitted_rate: float = field(default=None)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise InputError("times and values differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise InputError("times must be strictly increasing")
        if self.window is None:
            self.window = (float(self.times[0]), float(self.times[-1]))
        if self.fitted_rate is None:
            self.fitted_rate = self.fit(self.window)

    def fit(self, window):
        """Least-squares slope of ``log(value)`` on ``window``; nonpositive values are skipped."""
        a, b = window
        sel = (self.times >= a) & (self.times <= b) & (self.values > 0) & np.isfinite(self.values)
        if sel.sum() < 3:
            raise FitError(f"only {int(sel.sum())} positive values in window [{a}, {b}]")
        slope = np.polyfit(self.times[sel], np.log(self.values[sel]), 1)[0]
        return float(slope)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "value"])
        for t, v in zip(self.times, self.values):
            w.writerow([f"{t:.17g}", f"{v:.17g}"])
        buf.write(f"# fitted_rate={self.fitted_rate:.17g} window=[{self.window[0]:.17g},{self.window[1]:.17g}]\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows, window = [], None
        for line in text.splitlines():
            if line.startswith("# fitted_rate="):
                w = line.split("window=[", 1)[1].rstrip("]").split(",")
                window = (float(w[0]), float(w[1]))
            elif line and not line.startswith("t,"):
                t, v = line.split(",")
                rows.append((float(t), float(v)))
        t, v = zip(*rows)
        return cls(t, v, window=window)


FUNCTIONALS = ("KL", "CHI2", "L2", "W2")


def _functional(name, density, target):
    if name == "KL":
        return kl_divergence(density, target)
    if name == "CHI2":
        return chi2_divergence(density, target)
    if name == "L2":
        return math.sqrt(chi2_divergence(density, target))
    return wasserstein_1d(density, target)


def decay_curve(model, initial, flow="kl_fp", functional="KL", t_end=2.0,
                record_every=0.1, dt=None, window=None, scheme="semi-implicit"):
    """Evolve ``initial`` and record a functional against the discrete posterior.

    Parameters
    ----------
    model : BayesModel
    initial : GridDensity
    flow : {"kl_fp", "chi2_pm"}
    functional : {"KL", "CHI2", "L2", "W2"}
    t_end, record_every : float
    dt : float, optional
        Step for ``kl_fp`` (default ``min(record_every, 0.01)``). For
        ``chi2_pm`` the default is the automatic explicit step.
    window : (float, float), optional
        Fit window; defaults to the whole curve.
    """
    if functional not in FUNCTIONALS:
        raise InputError(f"functional must be one of {FUNCTIONALS}")
    if flow not in ("kl_fp", "chi2_pm"):
        raise InputError("flow must be 'kl_fp' or 'chi2_pm'")
    if functional == "W2" and initial.grid.dim != 1:
        raise UnsupportedDimensionError("W2 decay curves are 1D only")
    if not (t_end > 0 and record_every > 0):
        raise InputError("t_end and record_every must be positive")
    grid = initial.grid
    target = stationary_density(model, grid)
    if flow == "kl_fp":
        if dt is None:
            dt = min(record_every, 0.01)
        # an integer number of steps per record
        dt = record_every / math.ceil(record_every / dt - 1e-9)
        state = FlowState(0.0, initial.normalized(), dt, scheme)
    else:
        state = FlowState(0.0, initial.normalized(), dt, "explicit")
    n_rec = int(math.floor(t_end / record_every + 1e-9))
    times = [0.0]
    values = [_functional(functional, state.density, target)]
    for k in range(1, n_rec + 1):
        state = evolve(state, model, flow, k * record_every)
        times.append(k * record_every)
        values.append(_functional(functional, state.density, target))
    return DecayCurve(times, values, window=window)


def barenblatt(grid, t, C=1.0):
    """Barenblatt profile of ``u_t = (u^2)_xx`` in 1D: ``t^{-1/3}(C - x^2 t^{-2/3}/12)_+``."""
    x = grid.axes[0]
    return t ** (-1 / 3) * np.maximum(C - x * x * t ** (-2 / 3) / 12, 0.0)
