"""Tensor-product FEM Poisson solver, energy functional and energy norm.

The discrete operator is never assembled in 2D/3D. It is applied as a
Kronecker sum of 1D factors, and the linear system is solved by fast
diagonalization: a generalized eigendecomposition of every 1D (K, M) pair,
followed by one step of iterative refinement against the Kronecker
product.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .assembly import (DEFAULT_GAUSS_ORDER, SourceTerm,
                       TriDiag, gauss_rule, load_separated, mass_1d, stiffness_1d)
from .errors import IncompatibleDomainError, SeparaError
from .mesh import Grid1D, TensorMesh, interp_matrix

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class NodalField:
    mesh: TensorMesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.mesh.shape:
            raise IncompatibleDomainError(f"values {vals.shape} do not match mesh {self.mesh.shape}")
        object.__setattr__(self, "values", vals)

    @property
    def grids(self) -> tuple:
        return self.mesh.axes


@dataclass(frozen=True)
class EnergyValue:
    """Π = ½a(u,u) − (b,u)."""

    total: float
    quadratic: float
    linear: float


@dataclass(frozen=True)
class AnalyticSolution:
    """Exact solution as a sum of separated terms with per-axis derivatives."""

    terms: tuple

    def __call__(self, *x):
        out = 0.0
        for t in self.terms:
            val = t.scale
            for f, xd in zip(t.factors, x):
                val = val * f(np.asarray(xd, dtype=float))
            out = out + val
        return out


# -- Kronecker helpers ------------------------------------------------------

def axis_operators(grids: Sequence[Grid1D]) -> list:
    return [(stiffness_1d(g), mass_1d(g)) for g in grids]


def mode_apply(T, X: np.ndarray, axis: int) -> np.ndarray:
    """Apply a 1D operator (TriDiag or matrix) along one tensor axis."""
    Xm = np.moveaxis(X, axis, 0)
    shp = Xm.shape
    flat = Xm.reshape(shp[0], -1)
    out = (T @ flat) if isinstance(T, TriDiag) else np.asarray(T) @ flat
    return np.moveaxis(out.reshape((out.shape[0],) + shp[1:]), 0, axis)


def apply_operator(U: np.ndarray, ops: Sequence[tuple]) -> np.ndarray:
    """Σ_d (K_d along axis d, M_e along every other axis) applied to U."""
    D = U.ndim
    out = np.zeros_like(U)
    for d in range(D):
        V = mode_apply(ops[d][0], U, d)
        for e in range(D):
            if e != d:
                V = mode_apply(ops[e][1], V, e)
        out += V
    return out


def bilinear(U: np.ndarray, V: np.ndarray, ops) -> float:
    return float(np.sum(U * apply_operator(V, ops)))


def dense_operator(grids: Sequence[Grid1D]) -> np.ndarray:
    """Assembled full-node operator; only for small meshes and tests."""
    ops = axis_operators(grids)
    D = len(grids)
    A = 0.0
    for d in range(D):
        term = np.ones((1, 1))
        for e in range(D):
            term = np.kron(term, ops[e][0].to_dense() if e == d else ops[e][1].to_dense())
        A = A + term
    return A


# -- solver -----------------------------------------------------------------

class _FastDiag:
    """Interior-node solver for Σ_d K_d ⊗ Π M_e by generalized eigenvectors."""

    def __init__(self, ops_interior):
        self.ops = ops_interior
        self.vecs = []
        lam = 0.0
        for d, (K, M) in enumerate(ops_interior):
            w, V = sla.eigh(K.to_dense(), M.to_dense())
            self.vecs.append(V)
            shape = [1] * len(ops_interior)
            shape[d] = w.size
            lam = lam + w.reshape(shape)
        self.lam = lam

    def solve(self, F: np.ndarray) -> np.ndarray:
        X = F
        for d, V in enumerate(self.vecs):
            X = mode_apply(V.T, X, d)
        X = X / self.lam
        for d, V in enumerate(self.vecs):
            X = mode_apply(V, X, d)
        return X


def interior(X: np.ndarray) -> np.ndarray:
    return X[(slice(1, -1),) * X.ndim]


def pad_boundary(X: np.ndarray) -> np.ndarray:
    return np.pad(X, 1)


def solve_interior(F: np.ndarray, ops, refinements: int = 2) -> np.ndarray:
    """Solve the homogeneous-Dirichlet system for interior load F."""
    ops_i = [(K.interior(), M.interior()) for K, M in ops]
    if F.size == 0:
        return F.copy()
    fd = _FastDiag(ops_i)
    U = fd.solve(F)
    for _ in range(refinements):
        U = U + fd.solve(F - apply_operator(U, ops_i))
    fnorm = np.linalg.norm(F)
    if fnorm > 0:
        res = np.linalg.norm(F - apply_operator(U, ops_i)) / fnorm
        if not np.isfinite(res) or res > RESIDUAL_TOL:
            raise SeparaError(f"internal error: FEM residual {res:.2e} above {RESIDUAL_TOL}")
    return U


def solve_fem(mesh: TensorMesh, source: SourceTerm, order: int = DEFAULT_GAUSS_ORDER) -> NodalField:
    load = load_separated(mesh.axes, source, order)
    F = load.dense()
    ops = axis_operators(mesh.axes)
    U = pad_boundary(solve_interior(interior(F), ops))
    return NodalField(mesh, U)


# -- energy -----------------------------------------------------------------

def energy(u, source: SourceTerm, order: int = DEFAULT_GAUSS_ORDER) -> EnergyValue:
    """Π(u) for a NodalField or a SeparatedSolution."""
    if hasattr(u, "factors"):
        from .separated import separated_energy
        return separated_energy(u, source, order)
    if not isinstance(u, NodalField):
        raise IncompatibleDomainError("energy expects a NodalField or SeparatedSolution")
    load = load_separated(u.grids, source, order)
    ops = axis_operators(u.grids)
    quad = 0.5 * bilinear(u.values, u.values, ops)
    lin = float(np.sum(load.dense() * u.values))
    return EnergyValue(quad - lin, quad, lin)


def as_nodal(u) -> NodalField:
    if isinstance(u, NodalField):
        return u
    if hasattr(u, "factors"):
        from .separated import expand_to_nodal
        return expand_to_nodal(u)
    raise IncompatibleDomainError(f"cannot interpret {type(u).__name__} as a nodal field")


def energy_norm(u) -> float:
    u = as_nodal(u)
    return float(np.sqrt(max(bilinear(u.values, u.values, axis_operators(u.grids)), 0.0)))


def merge_nodes(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Union of two node sets on the same interval, near-duplicates collapsed."""
    if abs(a[0] - b[0]) > 1e-12 * (a[-1] - a[0]) or abs(a[-1] - b[-1]) > 1e-12 * (a[-1] - a[0]):
        raise IncompatibleDomainError("grids cover different intervals")
    m = np.union1d(a, b)
    keep = np.concatenate([[True], np.diff(m) > 1e-12 * (m[-1] - m[0])])
    m = m[keep]
    m[0], m[-1] = a[0], a[-1]
    return m


def prolongate(u: NodalField, grids: Sequence[Grid1D]) -> np.ndarray:
    """Nodal values of u (piecewise multilinear) at the nodes of ``grids``."""
    X = u.values
    for d, g in enumerate(grids):
        P = interp_matrix(u.grids[d].nodes, g.nodes)
        X = mode_apply(P.toarray(), X, d)
    return X


def energy_norm_diff(u, v) -> float:
    """‖u − v‖_E, integrated exactly on the common refinement of both meshes."""
    u, v = as_nodal(u), as_nodal(v)
    if u.mesh.dim != v.mesh.dim:
        raise IncompatibleDomainError("fields differ in dimension")
    if u.mesh == v.mesh:
        D = u.values - v.values
        grids = u.grids
    else:
        grids = tuple(Grid1D(merge_nodes(gu.nodes, gv.nodes)) for gu, gv in zip(u.grids, v.grids))
        D = prolongate(u, grids) - prolongate(v, grids)
    return float(np.sqrt(max(bilinear(D, D, axis_operators(grids)), 0.0)))


def energy_norm_error(u, ref, order: int = 8) -> float:
    """Relative energy-norm error ‖u − ref‖_E / ‖ref‖_E.

    ``ref`` is a NodalField / SeparatedSolution (integrated exactly on the
    common refinement) or an :class:`AnalyticSolution` (integrated with
    ``order``-point Gauss rules on u's elements).
    """
    if isinstance(ref, AnalyticSolution):
        return _analytic_error(as_nodal(u), ref, order)
    ref_n = as_nodal(ref)
    denom = energy_norm(ref_n)
    if denom == 0:
        raise IncompatibleDomainError("reference has zero energy norm")
    return energy_norm_diff(u, ref_n) / denom


def _axis_moments(nodes, f, df, order):
    """(∫N_I f, ∫N_I' f') on one axis."""
    rule = gauss_rule(nodes, order)
    fv = rule.weights * f(rule.points)
    dv = rule.weights * df(rule.points)
    val = np.zeros(nodes.size)
    val[:-1] += fv @ (1.0 - rule.t)
    val[1:] += fv @ rule.t
    h = np.diff(nodes)
    ds = dv.sum(axis=1) / h
    der = np.zeros(nodes.size)
    der[:-1] -= ds
    der[1:] += ds
    return val, der


def _analytic_energy_sq(ref: AnalyticSolution, grids, order) -> float:
    total = 0.0
    rules = [gauss_rule(g.nodes, order) for g in grids]
    for s in ref.terms:
        for t in ref.terms:
            for d in range(len(grids)):
                prod = s.scale * t.scale
                for e, rule in enumerate(rules):
                    if e == d:
                        prod *= np.sum(rule.weights * s.derivatives[e](rule.points) * t.derivatives[e](rule.points))
                    else:
                        prod *= np.sum(rule.weights * s.factors[e](rule.points) * t.factors[e](rule.points))
                total += prod
    return total


def _analytic_error(u: NodalField, ref: AnalyticSolution, order: int) -> float:
    grids = u.grids
    ops = axis_operators(grids)
    uu = bilinear(u.values, u.values, ops)
    cross = 0.0
    for term in ref.terms:
        moments = [_axis_moments(g.nodes, f, df, order)
                   for g, f, df in zip(grids, term.factors, term.derivatives)]
        for d in range(len(grids)):
            X = u.values
            for e in reversed(range(len(grids))):
                vec = moments[e][1] if e == d else moments[e][0]
                X = np.tensordot(X, vec, axes=([e], [0]))
            cross += term.scale * float(X)
    rr = _analytic_energy_sq(ref, grids, order)
    return float(np.sqrt(max(uu - 2.0 * cross + rr, 0.0) / rr))


def galerkin_residual(u: NodalField, v: np.ndarray, source: SourceTerm,
                      order: int = DEFAULT_GAUSS_ORDER) -> float:
    """a(u, v) − (b, v) for a nodal test function v on u's mesh."""
    ops = axis_operators(u.grids)
    F = load_separated(u.grids, source, order).dense()
    return bilinear(u.values, v, ops) - float(np.sum(F * v))


# -- serialization ----------------------------------------------------------

def dumps_field(u: NodalField) -> str:
    """``nodal-field v1`` header, one ``nodes=`` line per axis, values in C order."""
    shape = u.mesh.shape
    lines = [f"nodal-field v1 dims={len(shape)} n={','.join(map(str, shape))}"]
    lines += ["nodes= " + " ".join(repr(float(v)) for v in g.nodes) for g in u.grids]
    flat = u.values.reshape(-1, shape[-1])
    lines += [" ".join(repr(float(v)) for v in row) for row in flat]
    return "\n".join(lines) + "\n"


def loads_field(text: str) -> NodalField:
    from .errors import FormatError
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split() if lines else []
    if head[:2] != ["nodal-field", "v1"]:
        raise FormatError("expected a 'nodal-field v1' header")
    try:
        kv = dict(tok.split("=", 1) for tok in head[2:])
        dims = int(kv["dims"])
        shape = tuple(int(v) for v in kv["n"].split(","))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad header {lines[0]!r}") from exc
    if len(shape) != dims or len(lines) < 1 + dims:
        raise FormatError("header and body disagree")
    grids = tuple(Grid1D(np.array(lines[1 + d].split("=", 1)[1].split(), dtype=float)) for d in range(dims))
    try:
        vals = np.array(" ".join(lines[1 + dims:]).split(), dtype=float)
        values = vals.reshape(shape)
    except ValueError as exc:
        raise FormatError("value count does not match the header") from exc
    return NodalField(TensorMesh(grids), values)
