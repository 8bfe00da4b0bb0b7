"""Uniform 1D/2D lattices and nonnegative densities on them.

Densities are stored as Lebesgue densities at the nodes and integrated with
trapezoid weights. The text format is::

    # grid <dim> <nx> [ny] <xmin> <xmax> [ymin ymax]
    <value>
    ...

with values in row-major (C) order.
"""
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, InputError, UnsupportedDimensionError

__all__ = ["Grid", "GridDensity", "read_density", "write_density", "format_density"]


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product lattice including both endpoints of each axis."""

    lower: tuple
    upper: tuple
    shape: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        n = tuple(int(v) for v in np.atleast_1d(self.shape))
        if not (len(lo) == len(hi) == len(n)):
            raise InputError("grid bounds and shape must have the same length")
        if len(n) not in (1, 2):
            raise UnsupportedDimensionError(f"grids are 1D or 2D, got {len(n)}D")
        if any(k < 2 for k in n):
            raise InputError("each axis needs at least two nodes")
        if any(not b > a for a, b in zip(lo, hi)):
            raise InputError("grid upper bounds must exceed lower bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "shape", n)

    @classmethod
    def uniform(cls, lower, upper, n):
        lower = np.atleast_1d(lower)
        n = np.broadcast_to(np.atleast_1d(n), lower.shape)
        return cls(tuple(lower), tuple(np.atleast_1d(upper)), tuple(n))

    @classmethod
    def with_spacing(cls, lower, upper, dx):
        """Grid whose spacing is ``dx`` (the box is assumed to be a multiple of it)."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        dx = np.broadcast_to(np.atleast_1d(np.asarray(dx, dtype=float)), lower.shape)
        n = np.rint((upper - lower) / dx).astype(int) + 1
        return cls(tuple(lower), tuple(upper), tuple(n))

    @property
    def dim(self):
        return len(self.shape)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def spacing(self):
        return tuple((b - a) / (k - 1) for a, b, k in zip(self.lower, self.upper, self.shape))

    @property
    def axes(self):
        return tuple(np.linspace(a, b, k) for a, b, k in zip(self.lower, self.upper, self.shape))

    @property
    def points(self):
        """Node coordinates, shape ``(size, dim)`` in row-major order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    @property
    def weights(self):
        """Trapezoid quadrature weights with the grid's shape."""
        ws = []
        for h, k in zip(self.spacing, self.shape):
            w = np.full(k, h)
            w[0] = w[-1] = 0.5 * h
            ws.append(w)
        if self.dim == 1:
            return ws[0]
        return np.outer(ws[0], ws[1])

    def integrate(self, values):
        values = np.asarray(values, dtype=float).reshape(self.shape)
        return float(np.sum(self.weights * values))

    def check_same(self, other):
        if self != other:
            raise GridMismatchError(f"grids differ: {self} vs {other}")

    def header(self):
        parts = ["# grid", str(self.dim)] + [str(k) for k in self.shape]
        for a, b in zip(self.lower, self.upper):
            parts += [repr(a), repr(b)]
        return " ".join(parts)


class GridDensity:
    """Nonnegative Lebesgue density sampled on a :class:`Grid`.

    Parameters
    ----------
    grid : Grid
    values : array_like
        Reshaped to ``grid.shape``. Must be finite and nonnegative.
    normalize : bool
        Rescale to unit trapezoid mass.
    """

    def __init__(self, grid, values, normalize=False):
        v = np.array(values, dtype=float).reshape(grid.shape)
        if not np.all(np.isfinite(v)):
            raise InputError("density values must be finite")
        if np.any(v < 0):
            raise InputError(f"density has negative values (min {v.min():.3e})")
        self.grid = grid
        self.values = v
        if normalize:
            mass = self.mass()
            if not mass > 0:
                raise InputError("cannot normalize a density with zero mass")
            self.values = v / mass

    def __repr__(self):
        return f"GridDensity(shape={self.grid.shape}, mass={self.mass():.12g})"

    @classmethod
    def from_function(cls, grid, func, normalize=True):
        """Evaluate ``func`` on the node array ``(size, dim)``."""
        vals = np.asarray(func(grid.points), dtype=float).reshape(grid.shape)
        return cls(grid, vals, normalize=normalize)

    @classmethod
    def from_log_density(cls, grid, log_values):
        """Normalised ``exp(log_values)`` computed without overflow."""
        lv = np.asarray(log_values, dtype=float).reshape(grid.shape)
        finite = np.isfinite(lv)
        top = lv[finite].max() if finite.any() else 0.0
        with np.errstate(under="ignore"):
            vals = np.where(finite, np.exp(lv - top), 0.0)
        return cls(grid, vals, normalize=True)

    def mass(self):
        return self.grid.integrate(self.values)

    def normalized(self):
        return GridDensity(self.grid, self.values, normalize=True)

    def integrate(self, f_values):
        """Integral of ``f * density`` for node values ``f``."""
        f = np.asarray(f_values, dtype=float).reshape(self.grid.shape)
        return self.grid.integrate(f * self.values)

    def mean(self):
        pts = self.grid.points
        v = self.values.reshape(-1) * self.grid.weights.reshape(-1)
        return (v @ pts) / v.sum()

    def covariance(self):
        pts = self.grid.points
        v = self.values.reshape(-1) * self.grid.weights.reshape(-1)
        v = v / v.sum()
        c = pts - v @ pts
        return (c * v[:, None]).T @ c

    def l1_distance(self, other):
        self.grid.check_same(other.grid)
        return self.grid.integrate(np.abs(self.values - other.values))

    def to_text(self):
        return format_density(self)


def format_density(density):
    lines = [density.grid.header()]
    lines += [f"{float(v):.17g}" for v in density.values.ravel(order="C")]
    return "\n".join(lines) + "\n"


def write_density(density, path):
    with open(path, "w") as fh:
        fh.write(format_density(density))


def parse_density(text, mass_tol=1e-6):
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# grid"):
        raise InputError("missing '# grid' header")
    head = lines[0].split()[2:]
    try:
        dim = int(head[0])
        shape = tuple(int(v) for v in head[1:1 + dim])
        bounds = [float(v) for v in head[1 + dim:1 + 3 * dim]]
    except (ValueError, IndexError) as exc:
        raise InputError(f"malformed grid header: {lines[0]!r}") from exc
    if len(shape) != dim or len(bounds) != 2 * dim:
        raise InputError(f"malformed grid header: {lines[0]!r}")
    grid = Grid(tuple(bounds[0::2]), tuple(bounds[1::2]), shape)
    vals = np.array([float(v) for v in lines[1:]])
    if vals.size != grid.size:
        raise InputError(f"expected {grid.size} values, found {vals.size}")
    dens = GridDensity(grid, vals)
    if mass_tol is not None and abs(dens.mass() - 1.0) > mass_tol:
        raise InputError(f"density mass {dens.mass():.10g} differs from 1 by more than {mass_tol}")
    return dens


def read_density(path, mass_tol=1e-6):
    with open(path) as fh:
        return parse_density(fh.read(), mass_tol=mass_tol)
