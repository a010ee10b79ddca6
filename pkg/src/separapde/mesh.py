"""1D grids, tensor-product meshes and linear hat shape functions.

Hats are available in closed form and as the two-branch ReLU composition
whose weights and biases are functions of the neighbouring node
coordinates. Both agree pointwise; the ReLU form is what makes nodal
positions trainable parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidRangeError

#: minimum element size, as a fraction of the axis length
MIN_ELEMENT_FRACTION = 1e-6


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Grid1D:
    """Strictly increasing nodes on [nodes[0], nodes[-1]].

    The endpoints are never movable.
    """

    nodes: np.ndarray
    movable: np.ndarray = field(default=None)

    def __post_init__(self):
        nodes = _frozen(self.nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise InvalidRangeError("a grid needs at least two nodes")
        if not np.all(np.isfinite(nodes)) or np.any(np.diff(nodes) <= 0):
            raise InvalidRangeError("grid nodes must be finite and strictly increasing")
        if self.movable is None:
            movable = np.ones(nodes.size, dtype=bool)
        else:
            movable = np.array(self.movable, dtype=bool)
            if movable.shape != nodes.shape:
                raise InvalidRangeError("movable flags must match the nodes")
        movable[0] = movable[-1] = False
        movable.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "movable", movable)

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def a(self) -> float:
        return float(self.nodes[0])

    @property
    def b(self) -> float:
        return float(self.nodes[-1])

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def min_gap(self) -> float:
        return MIN_ELEMENT_FRACTION * (self.b - self.a)

    def with_nodes(self, nodes) -> "Grid1D":
        """Same movability pattern, new coordinates. Endpoints must not move."""
        nodes = np.asarray(nodes, dtype=float)
        if nodes[0] != self.nodes[0] or nodes[-1] != self.nodes[-1]:
            raise InvalidRangeError("grid endpoints are fixed")
        return Grid1D(nodes, self.movable)

    def support(self, i: int) -> "ShapeSupport":
        if not 0 <= i < self.n:
            raise IndexError(i)
        left = float(self.nodes[i - 1]) if i > 0 else None
        right = float(self.nodes[i + 1]) if i < self.n - 1 else None
        return ShapeSupport(i, left, float(self.nodes[i]), right,
                            closes_domain=(i >= self.n - 2))

    def __eq__(self, other):
        if not isinstance(other, Grid1D):
            return NotImplemented
        return np.array_equal(self.nodes, other.nodes)

    def __hash__(self):
        return hash(self.nodes.tobytes())


@dataclass(frozen=True)
class TensorMesh:
    axes: tuple

    def __post_init__(self):
        axes = tuple(self.axes)
        if len(axes) not in (2, 3):
            raise InvalidRangeError("tensor meshes are 2D or 3D")
        if not all(isinstance(g, Grid1D) for g in axes):
            raise TypeError("axes must be Grid1D values")
        object.__setattr__(self, "axes", axes)

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(g.n for g in self.axes)

    def label(self) -> str:
        return "x".join(str(n) for n in self.shape)


@dataclass(frozen=True)
class ShapeSupport:
    """Neighbourhood of node ``index``; missing neighbours are ``None``.

    ``closes_domain`` marks a support whose rightmost point is the last
    grid node, where derivatives take the left limit.
    """

    index: int
    left: Optional[float]
    center: float
    right: Optional[float]
    closes_domain: bool = False

    def __post_init__(self):
        pts = [p for p in (self.left, self.center, self.right) if p is not None]
        if len(pts) < 2 or any(q <= p for p, q in zip(pts, pts[1:])):
            raise InvalidRangeError("support coordinates must be strictly increasing")


def build_uniform_grid(a: float, b: float, n: int) -> Grid1D:
    if not (a < b) or n < 2:
        raise InvalidRangeError(f"need a < b and n >= 2, got a={a}, b={b}, n={n}")
    nodes = np.linspace(a, b, n)
    nodes[0], nodes[-1] = a, b
    return Grid1D(nodes)


def uniform_mesh(shape: Sequence[int], lower=0.0, upper=1.0) -> TensorMesh:
    d = len(shape)
    lo = np.broadcast_to(lower, (d,))
    hi = np.broadcast_to(upper, (d,))
    return TensorMesh(tuple(build_uniform_grid(lo[k], hi[k], n) for k, n in enumerate(shape)))


# -- single shape function -------------------------------------------------

def _branch(support: ShapeSupport, x: float) -> int:
    """-1 for the rising element, +1 for the falling element, 0 outside."""
    s = support
    if s.left is not None and s.left <= x < s.center:
        return -1
    if s.right is not None and s.center <= x < s.right:
        return 1
    if s.closes_domain:
        if s.right is not None and x == s.right:
            return 1
        if s.right is None and s.left is not None and x == s.center:
            return -1
    return 0


def hat_eval(support: ShapeSupport, x: float) -> float:
    s = support
    if x == s.center:
        return 1.0
    if s.left is not None and s.left <= x < s.center:
        return (x - s.left) / (s.center - s.left)
    if s.right is not None and s.center < x <= s.right:
        return (s.right - x) / (s.right - s.center)
    return 0.0


def relu(z):
    return np.maximum(0.0, z)


def hat_eval_relu(support: ShapeSupport, x: float) -> float:
    """Hat value through the ReLU network whose weights are set by the nodes.

    A missing neighbour is the infinite-slope limit of its branch.
    """
    s = support
    if s.left is None:
        rise = 1.0 if x >= s.center else 0.0
    else:
        rise = relu(-1.0 / (s.center - s.left) * relu(-x + s.center) + 1.0)
    if s.right is None:
        fall = 1.0 if x <= s.center else 0.0
    else:
        fall = relu(-1.0 / (s.right - s.center) * relu(x - s.center) + 1.0)
    return float(rise + fall - 1.0)


def hat_deriv_x(support: ShapeSupport, x: float) -> float:
    s = support
    br = _branch(s, x)
    if br < 0:
        return 1.0 / (s.center - s.left)
    if br > 0:
        return -1.0 / (s.right - s.center)
    return 0.0


def hat_grad_nodes(support: ShapeSupport, x: float) -> tuple:
    """Partials of N_I(x) with respect to (x_{I-1}, x_I, x_{I+1}) at fixed x."""
    s = support
    br = _branch(s, x)
    if br < 0:
        h = s.center - s.left
        return ((x - s.center) / h**2, -(x - s.left) / h**2, 0.0)
    if br > 0:
        h = s.right - s.center
        return (0.0, (s.right - x) / h**2, (x - s.center) / h**2)
    return (0.0, 0.0, 0.0)


# -- vectorised helpers used by the solvers --------------------------------

def locate(nodes: np.ndarray, x) -> tuple:
    """Element index and local coordinate t in [0, 1] for each point.

    Breakpoints belong to the element on their right, except the last node.
    """
    nodes = np.asarray(nodes)
    x = np.asarray(x, dtype=float)
    e = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, nodes.size - 2)
    h = nodes[e + 1] - nodes[e]
    return e, (x - nodes[e]) / h


def interp_matrix(nodes: np.ndarray, x, deriv: bool = False) -> sp.csr_matrix:
    """Sparse matrix mapping nodal values to values (or slopes) at ``x``.

    Points outside [nodes[0], nodes[-1]] get zero rows.
    """
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    e, t = locate(nodes, x)
    inside = (x >= nodes[0]) & (x <= nodes[-1])
    if deriv:
        h = nodes[e + 1] - nodes[e]
        w0, w1 = -1.0 / h, 1.0 / h
    else:
        w0, w1 = 1.0 - t, t
    rows = np.repeat(np.arange(x.size), 2)
    cols = np.column_stack([e, e + 1]).ravel()
    vals = np.column_stack([w0 * inside, w1 * inside]).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(x.size, nodes.size))


def relu_shape_values(nodes: np.ndarray, x) -> np.ndarray:
    """Dense (len(x), n) matrix of N_I(x) through the ReLU construction.

    Vectorised form of :func:`hat_eval_relu` over all nodes at once.
    """
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))[:, None]
    c = nodes[None, :]
    rise = np.empty((x.shape[0], nodes.size))
    fall = np.empty_like(rise)
    rise[:, 1:] = relu(-relu(c[:, 1:] - x) / np.diff(nodes)[None, :] + 1.0)
    rise[:, :1] = (x >= c[:, :1]).astype(float)
    fall[:, :-1] = relu(-relu(x - c[:, :-1]) / np.diff(nodes)[None, :] + 1.0)
    fall[:, -1:] = (x <= c[:, -1:]).astype(float)
    return rise + fall - 1.0


def shape_values(nodes: np.ndarray, x) -> np.ndarray:
    """Dense (len(x), n) matrix of N_I(x)."""
    return interp_matrix(nodes, x).toarray()


def project_positions(nodes: np.ndarray, movable: np.ndarray, gap: float) -> np.ndarray:
    """Clamp movable nodes so consecutive gaps stay >= ``gap``.

    A forward then backward sweep keeps the ordering and never touches fixed
    nodes. Assumes the fixed nodes themselves are at least ``gap`` apart per
    intervening element.
    """
    x = np.array(nodes, dtype=float)
    if np.all(np.diff(x) >= gap):
        return x
    n = x.size
    for i in range(1, n):
        if movable[i] and x[i] < x[i - 1] + gap:
            x[i] = x[i - 1] + gap
    for i in range(n - 2, -1, -1):
        if movable[i] and x[i] > x[i + 1] - gap:
            x[i] = x[i + 1] - gap
    return x
