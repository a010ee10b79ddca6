"""1D stiffness/mass factors, Gauss quadrature and separated load vectors.

Every multi-dimensional integral in the solvers factors into products of
the 1D pieces assembled here.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import IncompatibleDomainError, UnsupportedSourceError
from .mesh import Grid1D, locate

DEFAULT_GAUSS_ORDER = 4


@dataclass(frozen=True)
class TriDiag:
    """Symmetric tridiagonal matrix stored as its diagonal and off-diagonal."""

    diag: np.ndarray
    off: np.ndarray

    @property
    def n(self) -> int:
        return self.diag.size

    @property
    def sub(self) -> np.ndarray:
        return self.off

    @property
    def sup(self) -> np.ndarray:
        return self.off

    def __matmul__(self, v):
        """Product with a vector, or with each column of a 2D array."""
        v = np.asarray(v)
        d = self.diag if v.ndim == 1 else self.diag[:, None]
        o = self.off if v.ndim == 1 else self.off[:, None]
        out = d * v
        out[:-1] += o * v[1:]
        out[1:] += o * v[:-1]
        return out

    def quad(self, a, b=None):
        """Bilinear form aᵀ T b, batched over columns: returns A.T @ T @ B."""
        b = a if b is None else b
        return np.asarray(a).T @ (self @ b)

    def to_sparse(self) -> sp.csr_matrix:
        return sp.diags([self.off, self.diag, self.off], [-1, 0, 1], format="csr")

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def interior(self) -> "TriDiag":
        return TriDiag(self.diag[1:-1], self.off[1:-1])

    def __add__(self, other):
        return TriDiag(self.diag + other.diag, self.off + other.off)

    def __rmul__(self, c):
        return TriDiag(c * self.diag, c * self.off)

    def solve(self, rhs):
        """Solve with a positive definite tridiagonal via banded Cholesky."""
        ab = np.zeros((2, self.n))
        ab[0, 1:] = self.off
        ab[1] = self.diag
        return sla.solveh_banded(ab, rhs)


def stiffness_1d(grid: Grid1D | np.ndarray) -> TriDiag:
    h = np.diff(_nodes(grid))
    diag = np.zeros(h.size + 1)
    diag[:-1] += 1.0 / h
    diag[1:] += 1.0 / h
    return TriDiag(diag, -1.0 / h)


def mass_1d(grid: Grid1D | np.ndarray) -> TriDiag:
    h = np.diff(_nodes(grid))
    diag = np.zeros(h.size + 1)
    diag[:-1] += h / 3.0
    diag[1:] += h / 3.0
    return TriDiag(diag, h / 6.0)


def _nodes(grid) -> np.ndarray:
    return grid.nodes if isinstance(grid, Grid1D) else np.asarray(grid, dtype=float)


# -- quadrature -------------------------------------------------------------

@dataclass(frozen=True)
class QuadRule:
    """Gauss-Legendre points/weights per element, shape (n_elements, order)."""

    points: np.ndarray
    weights: np.ndarray
    t: np.ndarray
    w: np.ndarray

    @property
    def order(self) -> int:
        return self.t.size


@lru_cache(maxsize=None)
def gauss_reference(order: int) -> tuple:
    """Points and weights on [0, 1] (cached, read-only)."""
    xi, wi = np.polynomial.legendre.leggauss(order)
    t, w = 0.5 * (xi + 1.0), 0.5 * wi
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


def gauss_rule(grid: Grid1D | np.ndarray, order: int = DEFAULT_GAUSS_ORDER) -> QuadRule:
    nodes = _nodes(grid)
    t, w = gauss_reference(order)
    h = np.diff(nodes)
    pts = nodes[:-1, None] + h[:, None] * t[None, :]
    return QuadRule(pts, h[:, None] * w[None, :], t, w)


def integrate(grid, func, order: int = DEFAULT_GAUSS_ORDER) -> float:
    rule = gauss_rule(grid, order)
    return float(np.sum(rule.weights * func(rule.points)))


# -- sources ----------------------------------------------------------------

@dataclass(frozen=True)
class SeparatedTerm:
    """scale * Π_d factors[d](x_d). ``derivatives`` are optional per-axis d/dx."""

    factors: tuple
    derivatives: Optional[tuple] = None
    scale: float = 1.0

    @property
    def dim(self) -> int:
        return len(self.factors)


@dataclass(frozen=True)
class PointLoad:
    point: tuple
    magnitude: float = 1.0

    @property
    def dim(self) -> int:
        return len(self.point)


@dataclass(frozen=True)
class SourceTerm:
    """Load b(x) = Σ separated terms + Σ point loads."""

    terms: tuple = ()
    point_loads: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "point_loads", tuple(self.point_loads))
        dims = {t.dim for t in self.terms} | {p.dim for p in self.point_loads}
        if len(dims) > 1:
            raise IncompatibleDomainError("source terms disagree on dimension")

    @property
    def dim(self) -> Optional[int]:
        for t in self.terms + self.point_loads:
            return t.dim
        return None

    @property
    def rank(self) -> int:
        return len(self.terms) + len(self.point_loads)

    def __call__(self, *x):
        """Pointwise value of the smooth part (point loads excluded)."""
        out = 0.0
        for t in self.terms:
            val = t.scale
            for f, xd in zip(t.factors, x):
                val = val * f(np.asarray(xd, dtype=float))
            out = out + val
        return out


@dataclass(frozen=True)
class SeparatedLoad:
    """Load tensor f = Σ_s ⊗_d vectors[s][d] over full node sets."""

    vectors: tuple

    @property
    def rank(self) -> int:
        return len(self.vectors)

    def dense(self) -> np.ndarray:
        if not self.vectors:
            raise ValueError("empty load has no shape")
        out = 0.0
        for vs in self.vectors:
            out = out + _outer(vs)
        return out

    def shape(self):
        return tuple(v.size for v in self.vectors[0])


def _outer(vs) -> np.ndarray:
    out = vs[0]
    for v in vs[1:]:
        out = np.multiply.outer(out, v)
    return out


def _fd_derivative(f: Callable) -> Callable:
    def df(x):
        step = 1e-6 * np.maximum(1.0, np.abs(x))
        return (f(x + step) - f(x - step)) / (2.0 * step)
    return df


def axis_load(nodes: np.ndarray, func: Callable, order: int = DEFAULT_GAUSS_ORDER) -> np.ndarray:
    """f_I = ∫ N_I(x) func(x) dx with per-element Gauss quadrature."""
    rule = gauss_rule(nodes, order)
    vals = rule.weights * func(rule.points)
    f = np.zeros(nodes.size)
    f[:-1] += vals @ (1.0 - rule.t)
    f[1:] += vals @ rule.t
    return f


def axis_load_vjp(nodes: np.ndarray, func: Callable, dfunc: Optional[Callable],
                  weights: np.ndarray, order: int = DEFAULT_GAUSS_ORDER) -> np.ndarray:
    """Gradient of weightsᵀ f(nodes) with respect to every node coordinate.

    Gauss points ride along with their element, so both the element length
    and the sampled source value change with the nodes.
    """
    dfunc = dfunc or _fd_derivative(func)
    t, w = gauss_reference(order)
    h = np.diff(nodes)
    pts = nodes[:-1, None] + h[:, None] * t[None, :]
    b = func(pts)
    db = dfunc(pts)
    blend = w[None, :] * ((1.0 - t)[None, :] * weights[:-1, None] + t[None, :] * weights[1:, None])
    g = np.zeros(nodes.size)
    g[:-1] += np.sum(blend * (-b + h[:, None] * db * (1.0 - t)[None, :]), axis=1)
    g[1:] += np.sum(blend * (b + h[:, None] * db * t[None, :]), axis=1)
    return g


def point_factor(nodes: np.ndarray, p: float) -> np.ndarray:
    """Shape-function values at p: the Dirac pairing ∫ N_I δ_p."""
    f = np.zeros(nodes.size)
    if p < nodes[0] or p > nodes[-1]:
        raise IncompatibleDomainError(f"point load at {p} lies outside the grid")
    e, t = locate(nodes, p)
    f[e] += 1.0 - t
    f[e + 1] += t
    return f


def point_factor_vjp(nodes: np.ndarray, p: float, weights: np.ndarray) -> np.ndarray:
    e, t = locate(nodes, p)
    e = int(e)
    h = nodes[e + 1] - nodes[e]
    jump = weights[e + 1] - weights[e]
    g = np.zeros(nodes.size)
    g[e] = jump * (t - 1.0) / h
    g[e + 1] = -jump * t / h
    return g


def load_separated(grids: Sequence[Grid1D], source: SourceTerm,
                   order: int = DEFAULT_GAUSS_ORDER) -> SeparatedLoad:
    if not isinstance(source, SourceTerm):
        raise UnsupportedSourceError(
            "sources must be SourceTerm values (separated sums and point loads); "
            "separate a general b(x) first")
    nodes = [_nodes(g) for g in grids]
    if source.dim is not None and source.dim != len(nodes):
        raise IncompatibleDomainError(f"{source.dim}D source on a {len(nodes)}D mesh")
    vectors = []
    for term in source.terms:
        vs = [axis_load(x, f, order) for x, f in zip(nodes, term.factors)]
        vs[0] = term.scale * vs[0]
        vectors.append(tuple(vs))
    for pl in source.point_loads:
        vs = [point_factor(x, p) for x, p in zip(nodes, pl.point)]
        vs[0] = pl.magnitude * vs[0]
        vectors.append(tuple(vs))
    if not vectors:
        vectors.append(tuple(np.zeros(x.size) for x in nodes))
    return SeparatedLoad(tuple(vectors))


def load_position_gradient(grids: Sequence[Grid1D | np.ndarray], source: SourceTerm,
                           weights: Sequence[Sequence[np.ndarray]],
                           order: int = DEFAULT_GAUSS_ORDER) -> list:
    """Per-axis gradient of Σ_s Σ_d weights[s][d]ᵀ f_{s,d} w.r.t. node positions.

    ``weights[s][d]`` is the vector contracting the axis-d factor of load term
    s with everything else held fixed; terms are ordered as in
    :func:`load_separated` (smooth terms, then point loads).
    """
    nodes = [_nodes(g) for g in grids]
    grads = [np.zeros(x.size) for x in nodes]
    s = 0
    for term in source.terms:
        derivs = term.derivatives or (None,) * term.dim
        for d, x in enumerate(nodes):
            w = weights[s][d] * (term.scale if d == 0 else 1.0)
            grads[d] += axis_load_vjp(x, term.factors[d], derivs[d], w, order)
        s += 1
    for pl in source.point_loads:
        for d, x in enumerate(nodes):
            w = weights[s][d] * (pl.magnitude if d == 0 else 1.0)
            grads[d] += point_factor_vjp(x, pl.point[d], w)
        s += 1
    return grads
