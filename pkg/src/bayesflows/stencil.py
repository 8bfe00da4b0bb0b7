r"""Conservative node-centred finite-volume stencil shared by flows and spectra.

For a Lebesgue density :math:`m = e^{-U}` the stiffness matrix

.. math::

    f^T K f = \sum_{\text{faces } (i,j)} w_{ij}\,(f_i - f_j)^2,
    \qquad w_{ij} = \kappa_{ij}\,\frac{m_i m_j}{\mathrm{logmean}(m_i, m_j)}

discretises :math:`\int \langle G^{-1}\nabla f, \nabla f\rangle\, m\,dx`.
Here :math:`\kappa_{ij} = (G^{-1})_{aa}\,|\text{face}|/h_a` along axis
:math:`a`, evaluated at the face midpoint. Node masses are
:math:`M_i = c_i m_i` with trapezoid cell sizes :math:`c_i`, so
:math:`-M^{-1}K` annihilates constants and is self-adjoint in the discrete
:math:`L^2(m)` inner product. This face average makes the drift-diffusion
fluxes in the density variable :math:`p = m\rho` coincide with
Scharfetter-Gummel fluxes, whose stationary state is exactly :math:`m` at the
nodes.

2D grids require metrics that are diagonal at the face midpoints.
"""
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import AssemblyError, UnsupportedDimensionError

__all__ = ["Faces", "grid_faces", "log_mean", "sg_mean", "bernoulli", "StencilData", "assemble"]


@dataclass(frozen=True)
class Faces:
    """Nearest-neighbour faces of a grid with their geometric conductance."""

    i: np.ndarray
    j: np.ndarray
    axis: np.ndarray
    midpoints: np.ndarray
    area_over_h: np.ndarray


def grid_faces(grid):
    idx = np.arange(grid.size).reshape(grid.shape)
    pts = grid.points
    h = grid.spacing
    ii, jj, ax, area = [], [], [], []
    for a in range(grid.dim):
        sl_lo = [slice(None)] * grid.dim
        sl_hi = [slice(None)] * grid.dim
        sl_lo[a] = slice(0, -1)
        sl_hi[a] = slice(1, None)
        lo = idx[tuple(sl_lo)].ravel()
        hi = idx[tuple(sl_hi)].ravel()
        if grid.dim == 1:
            fa = np.ones(lo.size)
        else:
            # face length = trapezoid weight along the other axis
            b = 1 - a
            wb = np.full(grid.shape[b], h[b])
            wb[0] = wb[-1] = 0.5 * h[b]
            shape = list(grid.shape)
            shape[a] -= 1
            fa = np.broadcast_to(np.expand_dims(wb, a), shape).ravel()
        ii.append(lo)
        jj.append(hi)
        ax.append(np.full(lo.size, a))
        area.append(fa / h[a])
    i = np.concatenate(ii)
    j = np.concatenate(jj)
    return Faces(i, j, np.concatenate(ax), 0.5 * (pts[i] + pts[j]), np.concatenate(area))


def log_mean(a, b):
    """Logarithmic mean ``(a - b) / (log a - log b)`` (``a`` when equal, 0 if either is 0)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.zeros(np.broadcast(a, b).shape)
    pos = (a > 0) & (b > 0)
    la = np.log(np.where(pos, a, 1.0))
    lb = np.log(np.where(pos, b, 1.0))
    d = la - lb
    small = pos & (np.abs(d) < 1e-6)
    big = pos & ~small
    out[big] = (a - b)[big] / d[big]
    # series a * (1 - d/2 + d^2/6) around b -> a
    out[small] = (a * (1 - d / 2 + d * d / 6))[small]
    return out


def sg_mean(a, b):
    """Face average ``a b / logmean(a, b)`` matching Scharfetter-Gummel fluxes."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    out = np.zeros(a.shape)
    pos = (a > 0) & (b > 0)
    # a * B(log a - log b) equals a b / logmean(a, b) without forming the product,
    # which underflows for densities below ~1e-154
    lo, hi = np.minimum(a[pos], b[pos]), np.maximum(a[pos], b[pos])
    out[pos] = lo * bernoulli(np.log(lo) - np.log(hi))
    return out


def bernoulli(z):
    """``z / (exp(z) - 1)`` with the removable singularity at 0."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-8
    out[small] = 1.0 - z[small] / 2
    zb = z[~small]
    with np.errstate(over="ignore"):
        out[~small] = zb / np.expm1(zb)
    return out


@dataclass
class StencilData:
    """Assembled weighted stencil.

    ``U`` is the Lebesgue potential at the nodes (shifted so its minimum is
    0), ``density`` the node density normalised to unit trapezoid mass and
    ``mass`` the node masses ``c_i * density_i`` (summing to one).
    """

    grid: object
    faces: Faces
    kappa: np.ndarray
    U: np.ndarray
    density: np.ndarray
    cell: np.ndarray
    mass: np.ndarray
    face_weight: np.ndarray
    K: sparse.csr_matrix

    def stiffness_with(self, face_coef):
        """Stiffness matrix for per-face weights ``face_coef``."""
        n = self.grid.size
        f = self.faces
        rows = np.concatenate([f.i, f.j, f.i, f.j])
        cols = np.concatenate([f.i, f.j, f.j, f.i])
        vals = np.concatenate([face_coef, face_coef, -face_coef, -face_coef])
        return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _inverse_metric_diagonal(metric, faces, dim):
    if metric is None or metric.constant:
        G = np.eye(dim) if metric is None else metric(np.zeros(dim))
        Ginv = np.linalg.inv(G)
        if dim == 2 and abs(Ginv[0, 1]) > 1e-14 * np.abs(Ginv).max():
            raise UnsupportedDimensionError("2D stencils need a diagonal metric")
        return np.diag(Ginv)[faces.axis]
    out = np.empty(faces.i.size)
    for k, (p, a) in enumerate(zip(faces.midpoints, faces.axis)):
        Ginv = np.linalg.inv(metric(p))
        if dim == 2 and abs(Ginv[0, 1]) > 1e-14 * np.abs(Ginv).max():
            raise UnsupportedDimensionError("2D stencils need a diagonal metric")
        out[k] = Ginv[a, a]
    return out


def assemble(grid, U, metric=None):
    """Assemble the stencil for the Lebesgue potential ``U`` (node values).

    Parameters
    ----------
    grid : Grid
    U : array_like
        ``-log`` of the (unnormalised) Lebesgue density at the nodes.
    metric : MetricField, optional
    """
    if grid.dim not in (1, 2):
        raise UnsupportedDimensionError("stencils are 1D or 2D")
    U = np.asarray(U, dtype=float).reshape(-1)
    bad = np.flatnonzero(~np.isfinite(U))
    if bad.size:
        raise AssemblyError(f"non-finite potential at nodes {bad[:20].tolist()}"
                            + (" ..." if bad.size > 20 else ""))
    U = U - U.min()
    if U.max() > 700:
        raise AssemblyError("density underflows on the grid (potential range > 700); shrink the box")
    faces = grid_faces(grid)
    kappa = faces.area_over_h * _inverse_metric_diagonal(metric, faces, grid.dim)
    cell = grid.weights.reshape(-1)
    raw = np.exp(-U)
    Z = float(np.sum(cell * raw))
    density = raw / Z
    mass = cell * density
    w = kappa * sg_mean(density[faces.i], density[faces.j])
    data = StencilData(grid, faces, kappa, U, density, cell, mass, w, None)
    data.K = data.stiffness_with(w)
    return data
