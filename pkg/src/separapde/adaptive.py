"""r-adaptive solvers: per-axis HiDeNN and HiDeNN-PGD.

Both minimize Π over nodal positions (interior nodes of every axis, shared
along grid lines) together with the interpolation coefficients. Shape
functions, 1D matrices and the source quadrature are rebuilt from the
positions at every step, so the Gauss points travel with their elements.

Position gradients use the element-length derivative of the 1D factors,

    d(vᵀK w)/dh_e = -(δv_e δw_e)/h_e²,
    d(vᵀM w)/dh_e = (2v_e w_e + v_e w_{e+1} + v_{e+1} w_e + 2v_{e+1} w_{e+1})/6,

with dΠ/dx_k = dΠ/dh_{k-1} - dΠ/dh_k, plus the load sensitivity from
:func:`load_position_gradient`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .assembly import (DEFAULT_GAUSS_ORDER, SourceTerm, load_position_gradient, load_separated,
                       mass_1d, stiffness_1d)
from .errors import InvalidRangeError, NonFiniteGradientError
from .fem import NodalField, apply_operator, interior, mode_apply, pad_boundary, solve_interior
from .mesh import MIN_ELEMENT_FRACTION, Grid1D, TensorMesh, project_positions
from .separated import SeparatedSolution, normalize_mode, solve_cd


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    lr_pos: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iter: int = 20000
    tol: float = 1e-8
    seed: int = 42

    def __post_init__(self):
        if self.lr <= 0 or self.lr_pos < 0:
            raise InvalidRangeError("learning rates must be positive (position rate may be 0)")
        if self.max_iter < 1:
            raise InvalidRangeError("max_iter must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise InvalidRangeError("invalid Adam moments")


# -- Adam ---------------------------------------------------------------------

@dataclass
class AdaptiveState:
    """Parameter blocks, their Adam moments and the best iterate seen so far.

    ``kinds[i]`` is "coef" or "pos"; position blocks hold full node arrays
    whose fixed entries (``movable[i]`` False) never change.
    """

    blocks: list
    kinds: list
    movable: list
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    best_energy: float = np.inf
    best_blocks: Optional[list] = None
    best_iter: int = 0

    def __post_init__(self):
        self.blocks = [np.array(b, dtype=float) for b in self.blocks]
        if not self.m:
            self.m = [np.zeros_like(b) for b in self.blocks]
            self.v = [np.zeros_like(b) for b in self.blocks]

    def record(self, energy: float) -> None:
        if energy < self.best_energy:
            self.best_energy = energy
            self.best_blocks = [b.copy() for b in self.blocks]
            self.best_iter = self.t


def _gap(nodes) -> float:
    return MIN_ELEMENT_FRACTION * float(nodes[-1] - nodes[0])


def adam_step(state: AdaptiveState, grads: Sequence[np.ndarray], cfg: OptimizerConfig) -> AdaptiveState:
    """One bias-corrected Adam update, positions projected back to feasibility."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            bad = [i for i, gi in enumerate(grads) if not np.all(np.isfinite(gi))]
            raise NonFiniteGradientError(
                f"non-finite gradient at iteration {state.t + 1} in blocks {bad} "
                f"({[state.kinds[i] for i in bad]})")
    state.t += 1
    c1 = 1.0 - cfg.beta1 ** state.t
    c2 = 1.0 - cfg.beta2 ** state.t
    for i, g in enumerate(grads):
        pos = state.kinds[i] == "pos"
        lr = cfg.lr_pos if pos else cfg.lr
        if pos:
            g = np.where(state.movable[i], g, 0.0)
        state.m[i] = cfg.beta1 * state.m[i] + (1 - cfg.beta1) * g
        state.v[i] = cfg.beta2 * state.v[i] + (1 - cfg.beta2) * g * g
        step = lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + cfg.eps)
        new = state.blocks[i] - step
        if pos:
            new = np.where(state.movable[i], new, state.blocks[i])
            new = project_positions(new, state.movable[i], _gap(new))
        state.blocks[i] = new
    return state


# -- element-length sensitivities -------------------------------------------

def element_position_grad(nodes: np.ndarray, B: np.ndarray, BK: np.ndarray, BM: np.ndarray) -> np.ndarray:
    """d/dx of ½Σ⟨B, K BK⟩-type + ½Σ⟨B, M BM⟩-type pairings.

    Rows of B, BK and BM are nodes; BK pairs with the stiffness factor and
    BM with the mass factor. Returns the gradient for every node.
    """
    h = np.diff(nodes)
    B = B.reshape(nodes.size, -1)
    BK = BK.reshape(nodes.size, -1)
    BM = BM.reshape(nodes.size, -1)
    dB = B[1:] - B[:-1]
    dBK = BK[1:] - BK[:-1]
    lo, hi = slice(0, -1), slice(1, None)
    k_part = -np.sum(dB * dBK, axis=1) / h**2
    m_part = (2 * np.sum(B[lo] * BM[lo], axis=1) + np.sum(B[lo] * BM[hi], axis=1)
              + np.sum(B[hi] * BM[lo], axis=1) + 2 * np.sum(B[hi] * BM[hi], axis=1)) / 6.0
    dh = 0.5 * (k_part + m_part)
    g = np.zeros(nodes.size)
    g[1:] += dh
    g[:-1] -= dh
    return g


def _hadamard(mats, like):
    out = np.ones_like(like)
    for m in mats:
        out = out * m
    return out


# -- HiDeNN-PGD objective -------------------------------------------------------

def hidenn_pgd_objective(nodes: Sequence[np.ndarray], F: Sequence[np.ndarray], source: SourceTerm,
                         order: int = DEFAULT_GAUSS_ORDER) -> tuple:
    """Π and its gradients for separated coefficients on movable grids.

    ``F[d]`` holds full-node coefficients (n_d, Q) with zero boundary rows.
    Returns (Π, coefficient gradients, position gradients), all full-node.
    """
    D = len(nodes)
    Ks = [stiffness_1d(x) for x in nodes]
    Ms = [mass_1d(x) for x in nodes]
    KF = [K @ Fd for K, Fd in zip(Ks, F)]
    MF = [M @ Fd for M, Fd in zip(Ms, F)]
    GK = [Fd.T @ k for Fd, k in zip(F, KF)]
    GM = [Fd.T @ m for Fd, m in zip(F, MF)]
    load = load_separated(nodes, source, order).vectors
    proj = [[f @ Fd for f, Fd in zip(vs, F)] for vs in load]
    quad = 0.5 * sum(float(np.sum(_hadamard([GK[d]] + [GM[e] for e in range(D) if e != d], GK[0])))
                     for d in range(D))
    lin = sum(float(np.sum(_hadamard(p, p[0]))) for p in proj)
    gF, gx = [], []
    weights = [[None] * D for _ in load]
    for d in range(D):
        others = [e for e in range(D) if e != d]
        HK = _hadamard([GM[e] for e in others], GK[0])
        HM = sum(_hadamard([GK[e]] + [GM[f] for f in others if f != e], GK[0]) for e in others)
        R = np.zeros_like(F[d])
        for s, (vs, p) in enumerate(zip(load, proj)):
            c = _hadamard([p[e] for e in others], p[0])
            R += np.outer(vs[d], c)
            weights[s][d] = F[d] @ c
        g = KF[d] @ HK + MF[d] @ HM - R
        g[0] = g[-1] = 0.0
        gF.append(g)
        gx.append(element_position_grad(nodes[d], F[d], F[d] @ HK, F[d] @ HM))
    for g, gl in zip(gx, load_position_gradient(nodes, source, weights, order)):
        g -= gl
    return quad - lin, gF, gx


# -- HiDeNN (per-axis) objective --------------------------------------------------

def _contract_all_but(U: np.ndarray, vecs, d: int) -> np.ndarray:
    X = U
    for e in reversed(range(U.ndim)):
        if e != d:
            X = np.tensordot(X, vecs[e], axes=([e], [0]))
    return X


def hidenn_objective(nodes: Sequence[np.ndarray], U: np.ndarray, source: SourceTerm,
                     order: int = DEFAULT_GAUSS_ORDER) -> tuple:
    """Π and its gradients for full nodal values U on per-axis movable grids."""
    D = U.ndim
    ops = [(stiffness_1d(x), mass_1d(x)) for x in nodes]
    load = load_separated(nodes, source, order)
    F = load.dense()
    AU = apply_operator(U, ops)
    energy = 0.5 * float(np.sum(U * AU)) - float(np.sum(F * U))
    gU = AU - F
    gU = pad_boundary(interior(gU))
    gx = []
    for d in range(D):
        others = [e for e in range(D) if e != d]
        VK = U
        for e in others:
            VK = mode_apply(ops[e][1], VK, e)
        VM = 0.0
        for e in others:
            W = mode_apply(ops[e][0], U, e)
            for f in others:
                if f != e:
                    W = mode_apply(ops[f][1], W, f)
            VM = VM + W
        mat = lambda X: np.moveaxis(X, d, 0).reshape(U.shape[d], -1)
        gx.append(element_position_grad(nodes[d], mat(U), mat(VK), mat(VM)))
    weights = [[_contract_all_but(U, vs, d) for d in range(D)] for vs in load.vectors]
    for g, gl in zip(gx, load_position_gradient(nodes, source, weights, order)):
        g -= gl
    return energy, gU, gx


# -- drivers ----------------------------------------------------------------------

class AdaptiveResult(tuple):
    """(solution, adapted mesh) with optimizer diagnostics as attributes."""

    def __new__(cls, solution, mesh, converged: bool, iterations: int, history):
        obj = super().__new__(cls, (solution, mesh))
        obj.converged = converged
        obj.iterations = iterations
        obj.history = history
        return obj

    @property
    def solution(self):
        return self[0]

    @property
    def mesh(self):
        return self[1]


def _grad_norm(gF, gx, movable) -> float:
    sq = sum(float(np.sum(interior(g) ** 2)) if g.ndim else 0.0 for g in gF)
    sq += sum(float(np.sum(np.where(m, g, 0.0) ** 2)) for g, m in zip(gx, movable))
    return float(np.sqrt(sq))


def _pos_mask(g: Grid1D) -> np.ndarray:
    return np.array(g.movable)


def solve_hidenn_pgd(mesh: TensorMesh, source: SourceTerm, Q: int, opt: Optional[OptimizerConfig] = None,
                     init: Optional[SeparatedSolution] = None,
                     order: int = DEFAULT_GAUSS_ORDER) -> AdaptiveResult:
    """Joint Adam on mode coefficients and per-axis node positions.

    Starts from the fixed-mesh CD solution with Q modes (or ``init``) on the
    initial mesh and returns the lowest-energy iterate.
    """
    opt = opt or OptimizerConfig()
    if Q < 1:
        raise InvalidRangeError("HiDeNN-PGD needs Q >= 1")
    grids = mesh.axes
    start = init if init is not None else solve_cd(mesh, source, Q, seed=opt.seed, order=order)
    D = len(grids)
    state = AdaptiveState(blocks=list(start.factors) + [g.nodes for g in grids],
                          kinds=["coef"] * D + ["pos"] * D,
                          movable=[None] * D + [_pos_mask(g) for g in grids])
    history = []
    converged = False
    for it in range(opt.max_iter + 1):
        F, nodes = state.blocks[:D], state.blocks[D:]
        energy, gF, gx = hidenn_pgd_objective(nodes, F, source, order)
        state.record(energy)
        history.append(energy)
        if _grad_norm(gF, gx, state.movable[D:]) <= opt.tol:
            converged = True
            break
        if it == opt.max_iter:
            break
        adam_step(state, gF + gx, opt)
    best = state.best_blocks
    new_grids = tuple(g.with_nodes(x) for g, x in zip(grids, best[D:]))
    modes = [normalize_mode([best[d][:, q] for d in range(D)]) for q in range(best[0].shape[1])]
    factors = tuple(np.column_stack([m[d] for m in modes]) for d in range(D))
    sol = SeparatedSolution(new_grids, factors, converged=converged,
                            meta={"energy": state.best_energy, "best_iter": state.best_iter})
    return AdaptiveResult(sol, TensorMesh(new_grids), converged, len(history) - 1, history)


def _fem_values(nodes, source, order) -> np.ndarray:
    ops = [(stiffness_1d(x), mass_1d(x)) for x in nodes]
    F = load_separated(nodes, source, order).dense()
    return pad_boundary(solve_interior(interior(F), ops))


def solve_hidenn(mesh: TensorMesh, source: SourceTerm, opt: Optional[OptimizerConfig] = None,
                 order: int = DEFAULT_GAUSS_ORDER) -> AdaptiveResult:
    """Minimize Π over nodal values and per-axis node positions.

    The nodal values are eliminated exactly (a FEM solve on the current
    grids each step), so Adam runs over positions only and the gradient is
    the partial position gradient at the optimal values.
    """
    opt = opt or OptimizerConfig()
    grids = mesh.axes
    D = len(grids)
    state = AdaptiveState(blocks=[g.nodes for g in grids], kinds=["pos"] * D,
                          movable=[_pos_mask(g) for g in grids])
    history = []
    converged = False
    best_U = None
    for it in range(opt.max_iter + 1):
        nodes = state.blocks
        U = _fem_values(nodes, source, order)
        energy, _, gx = hidenn_objective(nodes, U, source, order)
        if energy < state.best_energy:
            best_U = U
        state.record(energy)
        history.append(energy)
        if _grad_norm([], gx, state.movable) <= opt.tol:
            converged = True
            break
        if it == opt.max_iter:
            break
        adam_step(state, gx, opt)
    new_mesh = TensorMesh(tuple(g.with_nodes(x) for g, x in zip(grids, state.best_blocks)))
    return AdaptiveResult(NodalField(new_mesh, best_U), new_mesh, converged, len(history) - 1, history)
