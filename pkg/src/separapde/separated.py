"""Separated (canonical-decomposition) solutions and fixed-mesh reduced solvers.

A solution is u = Σ_q ⊗_d X_d^(q) with X_d^(q) = Σ_I N_I β_{d,I}^(q). All
solvers work on interior coefficients through Gram matrices, so no 2D/3D
array is ever formed. Two schemes share one block solver:

* CD optimizes all Q modes jointly by alternating least squares, one axis
  at a time (each block update is an exact minimization).
* PGD adds one mode at a time, each found by the alternating-direction
  fixed point with the earlier modes frozen.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import DEFAULT_GAUSS_ORDER, SeparatedLoad, SourceTerm, load_separated
from .errors import FormatError, IncompatibleDomainError, InvalidRangeError, SingularDirectionError
from .fem import EnergyValue, NodalField, as_nodal, axis_operators
from .mesh import Grid1D, TensorMesh, interp_matrix

DEFAULT_SEED = 42
STAGNATION_RTOL = 1e-12
NULL_RTOL = 1e-12


@dataclass(frozen=True)
class SeparatedSolution:
    """Q modes of per-axis nodal coefficients, ``factors[d]`` of shape (n_d, Q)."""

    grids: tuple
    factors: tuple
    converged: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        grids = tuple(self.grids)
        factors = tuple(np.asarray(F, dtype=float).reshape(g.n, -1) for g, F in zip(grids, self.factors))
        if len(factors) != len(grids) or len(grids) not in (2, 3):
            raise IncompatibleDomainError("need one factor matrix per axis (2D or 3D)")
        if len({F.shape[1] for F in factors}) != 1:
            raise IncompatibleDomainError("all axes must carry the same number of modes")
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "factors", factors)

    @property
    def Q(self) -> int:
        return self.factors[0].shape[1]

    @property
    def dim(self) -> int:
        return len(self.grids)

    @property
    def mesh(self) -> TensorMesh:
        return TensorMesh(self.grids)

    def modes(self):
        """Iterate over modes as tuples of per-axis vectors."""
        for q in range(self.Q):
            yield tuple(F[:, q] for F in self.factors)

    def truncate(self, k: int) -> "SeparatedSolution":
        return SeparatedSolution(self.grids, tuple(F[:, :k] for F in self.factors), self.converged)


def zero_solution(grids) -> SeparatedSolution:
    return SeparatedSolution(tuple(grids), tuple(np.zeros((g.n, 0)) for g in grids))


def eval(s: SeparatedSolution, *x):
    """u(x, y[, z]) at one point or at arrays of points."""
    shape = np.broadcast(*[np.asarray(v) for v in x]).shape
    prod = None
    for g, F, xd in zip(s.grids, s.factors, x):
        vals = interp_matrix(g.nodes, np.broadcast_to(xd, shape).ravel()) @ F
        prod = vals if prod is None else prod * vals
    out = prod.sum(axis=1)
    return out.reshape(shape) if shape else float(out[0])


def expand_to_nodal(s: SeparatedSolution) -> NodalField:
    letters = "ijk"[: s.dim]
    spec = ",".join(f"{c}q" for c in letters) + "->" + letters
    return NodalField(s.mesh, np.einsum(spec, *s.factors))


# -- operator ---------------------------------------------------------------

@dataclass(frozen=True)
class SeparatedOperator:
    """A = Σ_t ⊗_d terms[t][d], acting on interior coefficients."""

    terms: tuple

    @property
    def dim(self) -> int:
        return len(self.terms[0])


def poisson_operator(grids: Sequence[Grid1D]) -> SeparatedOperator:
    ops = [(K.interior().to_sparse(), M.interior().to_sparse()) for K, M in axis_operators(grids)]
    D = len(ops)
    terms = tuple(tuple(ops[e][0] if e == d else ops[e][1] for e in range(D)) for d in range(D))
    return SeparatedOperator(terms)


def interior_load(load: SeparatedLoad) -> list:
    return [tuple(v[1:-1] for v in vs) for vs in load.vectors]


def _hadamard(mats):
    out = None
    for m in mats:
        out = m if out is None else out * m
    return out


def _grams(op: SeparatedOperator, F: Sequence[np.ndarray]) -> list:
    """grams[t][d] = F_dᵀ T_{t,d} F_d."""
    return [[F[d].T @ (T @ F[d]) for d, T in enumerate(term)] for term in op.terms]


def operator_energy(op: SeparatedOperator, load, F: Sequence[np.ndarray]) -> tuple:
    """(½a(u,u), (b,u)) for interior factors F."""
    grams = _grams(op, F)
    quad = 0.5 * sum(float(np.sum(_hadamard(g))) for g in grams)
    lin = sum(float(np.sum(_hadamard([f @ Fd for f, Fd in zip(vs, F)]))) for vs in load)
    return quad, lin


def _block_system(op, load, F, d, grams=None):
    """Coefficients of the axis-d normal equations Σ_t T_{t,d} F_d H_t = R."""
    grams = grams if grams is not None else _grams(op, F)
    D = len(F)
    H = [_hadamard([grams[t][e] for e in range(D) if e != d]) for t in range(len(op.terms))]
    R = 0.0
    for vs in load:
        c = _hadamard([vs[e] @ F[e] for e in range(D) if e != d])
        R = R + np.outer(vs[d], c)
    return H, R


def block_gradient(op, load, F) -> list:
    grams = _grams(op, F)
    out = []
    for d in range(len(F)):
        H, R = _block_system(op, load, F, d, grams)
        G = -R
        for t, term in enumerate(op.terms):
            G = G + term[d] @ (F[d] @ H[t])
        out.append(G)
    return out


def solve_block(op, load, F: list, d: int, free: Sequence[int]) -> np.ndarray:
    """Exact minimizer over F_d[:, free] with everything else frozen.

    Directions of F_d that cannot change u (the other-axis factors of the
    free modes are linearly dependent) are projected out, so the returned
    block is the minimum-norm minimizer.
    """
    D = len(F)
    free = list(free)
    fixed = [q for q in range(F[d].shape[1]) if q not in free]
    H, R = _block_system(op, load, F, d)
    rhs = R[:, free]
    for t, term in enumerate(op.terms):
        if fixed:
            rhs = rhs - term[d] @ (F[d][:, fixed] @ H[t][np.ix_(fixed, free)])
    S = _hadamard([F[e][:, free].T @ F[e][:, free] for e in range(D) if e != d])
    w, V = np.linalg.eigh(S)
    keep = w > NULL_RTOL * max(w.max(initial=0.0), 0.0)
    if not np.any(keep) or w.max(initial=0.0) <= 0.0:
        raise SingularDirectionError(f"frozen factors for axis {d} are numerically zero")
    P = V[:, keep]
    r = P.shape[1]
    n = F[d].shape[0]
    A = None
    for t, term in enumerate(op.terms):
        C = P.T @ H[t][np.ix_(free, free)] @ P
        blk = sp.kron(sp.csr_matrix(C.T), sp.csr_matrix(term[d]), format="csr")
        A = blk if A is None else A + blk
    A = 0.5 * (A + A.T)
    b = (rhs @ P).reshape(-1, order="F")
    if n * r <= 400:
        Y = sla.solve(A.toarray(), b, assume_a="sym")
    else:
        Y = spla.spsolve(A.tocsc(), b)
    Y = np.asarray(Y).reshape(n, r, order="F")
    return Y @ P.T


# -- alternating direction / PGD --------------------------------------------

def _random_unit(rng, n):
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def _rank1_change(new, old) -> float:
    nn = np.prod([a @ a for a in new])
    oo = np.prod([b @ b for b in old])
    no = np.prod([a @ b for a, b in zip(new, old)])
    if nn == 0:
        return 0.0 if oo == 0 else np.inf
    return float(np.sqrt(max(nn + oo - 2 * no, 0.0) / nn))


@dataclass
class DirectionResult:
    mode: tuple
    sweeps: int
    converged: bool
    energies: list


def alternating_direction(op: SeparatedOperator, load, previous: Sequence[np.ndarray],
                          init: Sequence[np.ndarray], max_sweeps: int = 200,
                          tol: float = 1e-10, rng=None, track_energy: bool = False) -> DirectionResult:
    """One enrichment mode by block-coordinate minimization, axes cycled in order.

    ``previous`` are the frozen interior factors of earlier modes (n_d, Qp),
    ``init`` the starting vectors of the new mode. A frozen factor that is
    numerically zero is re-drawn at random once; a second failure raises
    :class:`SingularDirectionError`.
    """
    rng = rng if rng is not None else np.random.default_rng(DEFAULT_SEED)
    D = len(init)
    mode = [np.array(v, dtype=float) for v in init]
    qnew = previous[0].shape[1]
    retried = False
    energies = []
    converged = False
    sweep = 0
    for sweep in range(1, max_sweeps + 1):
        old = [v.copy() for v in mode]
        for d in range(D):
            F = [np.column_stack([previous[e], mode[e]]) for e in range(D)]
            try:
                blk = solve_block(op, load, F, d, [qnew])
            except SingularDirectionError:
                if retried:
                    raise
                retried = True
                for e in range(D):
                    if e != d and not np.any(mode[e]):
                        mode[e] = _random_unit(rng, mode[e].size)
                F = [np.column_stack([previous[e], mode[e]]) for e in range(D)]
                blk = solve_block(op, load, F, d, [qnew])
            mode[d] = blk[:, 0]
            if track_energy:
                F = [np.column_stack([previous[e], mode[e]]) for e in range(D)]
                q, l = operator_energy(op, load, F)
                energies.append(q - l)
        if _rank1_change(mode, old) <= tol:
            converged = True
            break
    return DirectionResult(tuple(mode), sweep, converged, energies)


def normalize_mode(vectors: Sequence[np.ndarray]) -> tuple:
    """Equal Euclidean norms on every axis; largest |entry| of axis 0 positive."""
    norms = [np.linalg.norm(v) for v in vectors]
    total = np.prod(norms)
    if total == 0:
        return tuple(np.zeros_like(v) for v in vectors)
    target = total ** (1.0 / len(vectors))
    out = [v * (target / nv) for v, nv in zip(vectors, norms)]
    first = out[0]
    if first[np.argmax(np.abs(first))] < 0:
        out[0] = -out[0]
        out[1] = -out[1]
    return tuple(out)


def _pad(F_int: Sequence[np.ndarray]) -> tuple:
    return tuple(np.pad(F, ((1, 1), (0, 0))) for F in F_int)


def _problem(mesh, source, order):
    grids = mesh.axes if isinstance(mesh, TensorMesh) else tuple(mesh)
    op = poisson_operator(grids)
    load = interior_load(load_separated(grids, source, order))
    return grids, op, load


def solve_pgd(mesh: TensorMesh, source: SourceTerm, Q: int, seed: int = DEFAULT_SEED,
              order: int = DEFAULT_GAUSS_ORDER, max_sweeps: int = 200, tol: float = 1e-10,
              stagnation: float = STAGNATION_RTOL) -> SeparatedSolution:
    if Q < 1:
        raise InvalidRangeError("PGD needs Q >= 1")
    grids, op, load = _problem(mesh, source, order)
    return pgd_enrich(grids, op, load, Q, seed=seed, max_sweeps=max_sweeps, tol=tol,
                      stagnation=stagnation)


def pgd_enrich(grids, op, load, Q, seed=DEFAULT_SEED, max_sweeps=200, tol=1e-10,
               stagnation=STAGNATION_RTOL) -> SeparatedSolution:
    """Greedy enrichment for an arbitrary separated operator and interior load."""
    rng = np.random.default_rng(seed)
    D = len(grids)
    sizes = [g.n - 2 for g in grids]
    F = [np.zeros((n, 0)) for n in sizes]
    energy_prev = 0.0
    energies, sweeps = [], []
    all_converged, stagnated = True, False
    for _ in range(Q):
        init = [_random_unit(rng, n) for n in sizes]
        try:
            res = alternating_direction(op, load, F, init, max_sweeps, tol, rng)
        except SingularDirectionError:
            stagnated = True
            break
        trial = [np.column_stack([F[e], res.mode[e]]) for e in range(D)]
        quad, lin = operator_energy(op, load, trial)
        e_new = quad - lin
        if energy_prev - e_new <= stagnation * abs(e_new):
            stagnated = True
            break
        mode = normalize_mode(res.mode)
        F = [np.column_stack([F[e], mode[e]]) for e in range(D)]
        energy_prev = e_new
        energies.append(e_new)
        sweeps.append(res.sweeps)
        all_converged &= res.converged
    return SeparatedSolution(grids, _pad(F), converged=all_converged and not stagnated,
                             meta={"energies": energies, "sweeps": sweeps, "stagnated": stagnated})


# -- canonical decomposition --------------------------------------------------

@dataclass(frozen=True)
class ALSConfig:
    max_sweeps: int = 2000
    tol: float = 1e-8


def _pad_modes(F_int, Q, rng):
    """Extend to Q modes with zero axis-0 factors and random others."""
    out = [np.array(F, dtype=float) for F in F_int]
    extra = Q - out[0].shape[1]
    if extra <= 0:
        return [F[:, :Q] for F in out]
    for e in range(len(out)):
        n = out[e].shape[0]
        add = np.zeros((n, extra)) if e == 0 else np.column_stack(
            [_random_unit(rng, n) for _ in range(extra)])
        out[e] = np.column_stack([out[e], add])
    return out


def solve_cd(mesh: TensorMesh, source: SourceTerm, Q: int, opt=None, init=None,
             seed: Optional[int] = None, order: int = DEFAULT_GAUSS_ORDER) -> SeparatedSolution:
    """Joint minimization of Π over Q-mode separated functions (alternating least squares).

    ``init`` is "pgd" (default: greedy modes, then joint refinement),
    "random", or a SeparatedSolution to warm start from (padded with
    zero-contribution modes when it has fewer than Q). ``opt`` supplies the
    sweep limit (``max_iter``) and gradient tolerance (``tol``).
    """
    if Q < 1:
        raise InvalidRangeError("CD needs Q >= 1")
    max_sweeps = getattr(opt, "max_iter", ALSConfig.max_sweeps)
    tol = getattr(opt, "tol", ALSConfig.tol)
    seed = seed if seed is not None else getattr(opt, "seed", DEFAULT_SEED)
    grids, op, load = _problem(mesh, source, order)
    rng = np.random.default_rng(seed)
    init = "pgd" if init is None else init
    if isinstance(init, SeparatedSolution):
        start = [F[1:-1] for F in init.factors]
    elif init == "pgd":
        start = [F[1:-1] for F in pgd_enrich(grids, op, load, Q, seed=seed).factors]
    elif init == "random":
        start = [np.column_stack([_random_unit(rng, g.n - 2) for _ in range(Q)]) for g in grids]
    else:
        raise InvalidRangeError(f"unknown CD initialization {init!r}")
    F = _pad_modes(start, Q, rng)
    return als(grids, op, load, F, max_sweeps=max_sweeps, tol=tol)


def als(grids, op, load, F, max_sweeps=ALSConfig.max_sweeps, tol=ALSConfig.tol) -> SeparatedSolution:
    D = len(F)
    Q = F[0].shape[1]
    quad, lin = operator_energy(op, load, F)
    history = [quad - lin]
    converged = False
    gnorm = np.inf
    sweep = 0
    for sweep in range(1, max_sweeps + 1):
        for d in range(D):
            F[d] = solve_block(op, load, F, d, range(Q))
        quad, lin = operator_energy(op, load, F)
        history.append(quad - lin)
        gnorm = float(np.sqrt(sum(np.sum(g * g) for g in block_gradient(op, load, F))))
        if gnorm <= tol:
            converged = True
            break
        # no representable progress left: a sweep that cannot lower Π in floating point
        if history[-2] - history[-1] <= 4 * np.finfo(float).eps * abs(history[-1]):
            break
    modes = [normalize_mode([F[e][:, q] for e in range(D)]) for q in range(Q)]
    F = [np.column_stack([m[e] for m in modes]) for e in range(D)]
    return SeparatedSolution(tuple(grids), _pad(F), converged=converged,
                             meta={"energies": history, "sweeps": sweep, "grad_norm": gnorm})


# -- energy, SVD, DoFs --------------------------------------------------------

def separated_energy(s: SeparatedSolution, source: SourceTerm,
                     order: int = DEFAULT_GAUSS_ORDER) -> EnergyValue:
    op = poisson_operator(s.grids)
    load = interior_load(load_separated(s.grids, source, order))
    quad, lin = operator_energy(op, load, [F[1:-1] for F in s.factors])
    return EnergyValue(quad - lin, quad, lin)


def svd_modes(u: NodalField, rtol: float = 1e-12) -> SeparatedSolution:
    u = as_nodal(u)
    if u.mesh.dim != 2:
        raise IncompatibleDomainError("SVD mode extraction is defined for 2D fields")
    W, sig, Vt = np.linalg.svd(u.values, full_matrices=False)
    if sig.size == 0 or sig[0] == 0:
        return zero_solution(u.grids)
    r = int(np.sum(sig > rtol * sig[0]))
    return SeparatedSolution(u.grids, (W[:, :r] * sig[:r], Vt[:r].T))


_DOF_METHODS = {"fem", "pgd", "cd", "hidenn-pgd", "hidenn"}


def dof_count(method: str, mesh: TensorMesh, Q: int = 0) -> int:
    """Degrees of freedom on interior nodes.

    ``hidenn`` counts free nodal values plus every coordinate a node may move
    along (interior nodes all axes, boundary nodes only tangentially), the
    fully adaptive convention. The per-axis HiDeNN solver here uses fewer.
    """
    m = method.lower()
    if m not in _DOF_METHODS:
        raise InvalidRangeError(f"unknown method {method!r}")
    n = np.array(mesh.shape)
    ni = n - 2
    if m == "fem":
        return int(np.prod(ni))
    if m in ("pgd", "cd"):
        return int(ni.sum() * Q)
    if m == "hidenn-pgd":
        return int(ni.sum() * Q + ni.sum())
    moves = sum(int(np.prod(np.where(np.arange(n.size) == d, ni, n))) for d in range(n.size))
    return int(np.prod(ni)) + moves


# -- serialization -------------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def dumps_modes(s: SeparatedSolution, include_nodes: bool = True) -> str:
    lines = [f"pgd-modes v1 dims={s.dim} Q={s.Q} n={','.join(str(g.n) for g in s.grids)}"]
    if include_nodes:
        lines += [f"nodes= {_fmt(g.nodes)}" for g in s.grids]
    for mode in s.modes():
        lines += [_fmt(v) for v in mode]
    return "\n".join(lines) + "\n"


def loads_modes(text: str) -> SeparatedSolution:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty mode file")
    head = lines[0].split()
    if head[:2] != ["pgd-modes", "v1"]:
        raise FormatError(f"bad header {lines[0]!r}")
    try:
        kv = dict(tok.split("=", 1) for tok in head[2:])
        dims, Q = int(kv["dims"]), int(kv["Q"])
        sizes = [int(v) for v in kv["n"].split(",")]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad header {lines[0]!r}") from exc
    if dims not in (2, 3) or len(sizes) != dims:
        raise FormatError("header dims and n disagree")
    body = lines[1:]
    grids = []
    if body and body[0].startswith("nodes="):
        for d in range(dims):
            vals = np.array(body[d].split("=", 1)[1].split(), dtype=float)
            if vals.size != sizes[d]:
                raise FormatError(f"axis {d + 1}: {vals.size} nodes, header says {sizes[d]}")
            grids.append(Grid1D(vals))
        body = body[dims:]
    else:
        grids = [Grid1D(np.linspace(0.0, 1.0, n)) for n in sizes]
    if len(body) != dims * Q:
        raise FormatError(f"expected {dims * Q} coefficient lines, found {len(body)}")
    factors = [np.zeros((n, Q)) for n in sizes]
    for q in range(Q):
        for d in range(dims):
            vals = np.array(body[q * dims + d].split(), dtype=float)
            if vals.size != sizes[d]:
                raise FormatError(f"mode {q + 1} axis {d + 1}: {vals.size} values, expected {sizes[d]}")
            factors[d][:, q] = vals
    return SeparatedSolution(tuple(grids), tuple(factors))


def write_modes(path, s: SeparatedSolution, include_nodes: bool = True) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_modes(s, include_nodes))


def read_modes(path) -> SeparatedSolution:
    with open(path) as fh:
        return loads_modes(fh.read())
