"""Study harness: error tables, convergence slopes, error decomposition, mode-count guidance."""
from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import adaptive, fem, mapping, separated
from .adaptive import OptimizerConfig
from .errors import FormatError, InvalidRangeError, SeparaError
from .mesh import TensorMesh, uniform_mesh
from .problems import Problem, get_problem

METHODS = ("fem", "pgd", "cd", "hidenn-pgd", "hidenn", "pgd-mapped")
MODAL = {"pgd", "cd", "hidenn-pgd", "pgd-mapped"}
CSV_HEADER = ["method", "mesh", "Q", "dofs", "rel_energy_err", "energy", "wall_ms", "converged"]
OPT_KEYS = {"lr", "lr_pos", "beta1", "beta2", "eps", "max_iter", "tol"}
STUDY_KEYS = {"problem", "methods", "meshes", "modes", "reference", "output", "seed", "timing",
              "jobs"} | OPT_KEYS


# -- config ----------------------------------------------------------------------

def parse_config(text: str, allowed: Optional[set] = None) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if allowed is not None and key not in allowed:
            raise FormatError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise FormatError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_mesh(text: str) -> tuple:
    try:
        shape = tuple(int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise InvalidRangeError(f"bad mesh {text!r}; expected n1xn2[xn3]") from exc
    if len(shape) not in (2, 3) or min(shape) < 3:
        raise InvalidRangeError(f"bad mesh {text!r}; need 2 or 3 axes with >= 3 nodes")
    return shape


def parse_modes(text: str) -> list:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = (int(v) for v in part.split("-"))
            out.extend(range(lo, hi + 1))
        elif part:
            out.append(int(part))
    if any(q < 1 for q in out):
        raise InvalidRangeError("mode counts must be >= 1")
    return out


def optimizer_from(kv: dict, seed: int) -> OptimizerConfig:
    kwargs = {k: (int(kv[k]) if k == "max_iter" else float(kv[k])) for k in OPT_KEYS if k in kv}
    return OptimizerConfig(seed=seed, **kwargs)


# -- study -----------------------------------------------------------------------

@dataclass(frozen=True)
class StudySpec:
    problem: str
    methods: tuple
    meshes: tuple
    modes: tuple = (1,)
    opt: OptimizerConfig = field(default_factory=OptimizerConfig)
    reference: Optional[int] = None
    output: Optional[str] = None
    seed: int = separated.DEFAULT_SEED
    timing: bool = False
    jobs: int = 1

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise InvalidRangeError(f"unknown methods {bad}")
        if self.reference is not None:
            for shape in self.meshes:
                for n in shape:
                    if self.reference <= n or (self.reference - 1) % (n - 1):
                        raise InvalidRangeError(
                            f"reference {self.reference} is not an integer refinement of {n} nodes")

    @classmethod
    def from_text(cls, text: str, seed: Optional[int] = None) -> "StudySpec":
        kv = parse_config(text, STUDY_KEYS)
        for key in ("problem", "methods", "meshes"):
            if key not in kv:
                raise FormatError(f"missing required key {key!r}")
        seed = seed if seed is not None else int(kv.get("seed", separated.DEFAULT_SEED))
        methods = tuple(m.strip().lower() for m in kv["methods"].split(",") if m.strip())
        ref = kv.get("reference", "").strip().lower()
        return cls(problem=kv["problem"], methods=methods,
                   meshes=tuple(parse_mesh(m.strip()) for m in kv["meshes"].split(",")),
                   modes=tuple(parse_modes(kv.get("modes", "1"))),
                   opt=optimizer_from(kv, seed),
                   reference=None if ref in ("", "analytic") else int(ref),
                   output=kv.get("output"), seed=seed,
                   timing=kv.get("timing", "false").lower() in ("1", "true", "yes"),
                   jobs=int(kv.get("jobs", "1")))


@dataclass(frozen=True)
class ErrorReport:
    method: str
    mesh: str
    Q: Optional[int]
    dofs: int
    rel_energy_err: Optional[float]
    energy: Optional[float]
    wall_ms: Optional[float]
    converged: bool
    error: Optional[str] = None

    def csv_row(self) -> list:
        num = lambda v: "" if v is None else repr(float(v))
        return [self.method, self.mesh, "" if self.Q is None else str(self.Q), str(self.dofs),
                num(self.rel_energy_err), num(self.energy),
                "" if self.wall_ms is None else f"{self.wall_ms:.1f}",
                "true" if self.converged else "false"]


def _cells(spec: StudySpec) -> list:
    return [(m, shape, q if m in MODAL else None)
            for m in spec.methods for shape in spec.meshes
            for q in (spec.modes if m in MODAL else (None,))]


def _dofs(method, shape, Q) -> int:
    mesh = uniform_mesh(shape)
    tag = "pgd" if method == "pgd-mapped" else method
    return separated.dof_count(tag, mesh, Q or 0)


def solve_cell(problem: Problem, method: str, shape: tuple, Q: Optional[int],
               opt: OptimizerConfig, seed: int):
    """(solution, converged) for one study cell."""
    if problem.mapped != (method == "pgd-mapped"):
        raise InvalidRangeError(f"method {method} does not apply to problem {problem.name}")
    if problem.dim != len(shape):
        raise InvalidRangeError(f"{problem.dim}D problem on a {len(shape)}D mesh")
    src = problem.source
    if method == "pgd-mapped":
        s = mapping.solve_pgd_mapped(mapping.quarter_ring(*shape), src, Q, seed=seed)
        return s, s.converged
    mesh = uniform_mesh(shape)
    if method == "fem":
        return fem.solve_fem(mesh, src), True
    if method == "pgd":
        s = separated.solve_pgd(mesh, src, Q, seed=seed)
        return s, s.converged
    if method == "cd":
        s = separated.solve_cd(mesh, src, Q, opt=opt, seed=seed)
        return s, s.converged
    if method == "hidenn-pgd":
        r = adaptive.solve_hidenn_pgd(mesh, src, Q, replace(opt, seed=seed))
        return r.solution, r.converged
    r = adaptive.solve_hidenn(mesh, src, opt)
    return r.solution, r.converged


def relative_error(problem: Problem, u, shape, reference) -> float:
    if problem.mapped:
        return mapping.mapped_energy_error(mapping.quarter_ring(*shape), u, problem.exact_grad)
    if reference is None:
        if problem.exact is None:
            raise InvalidRangeError(f"problem {problem.name} needs a reference mesh")
        return fem.energy_norm_error(u, problem.exact)
    return fem.energy_norm_error(u, reference)


def cell_energy(problem: Problem, u, shape) -> float:
    if problem.mapped:
        return mapping.mapped_energy(mapping.quarter_ring(*shape), u, problem.source)
    return fem.energy(u, problem.source).total


def reference_solution(problem: Problem, n: Optional[int]):
    if n is None or problem.mapped:
        return None
    return fem.solve_fem(uniform_mesh((n,) * problem.dim), problem.source)


def run_cell(problem, method, shape, Q, opt, seed, reference, timing=False) -> ErrorReport:
    return evaluate_cell(problem, method, shape, Q, opt, seed, reference, timing)[0]


def evaluate_cell(problem, method, shape, Q, opt, seed, reference, timing=False) -> tuple:
    """(ErrorReport, solution); the solution is None when the cell failed."""
    label = "x".join(map(str, shape))
    dofs = _dofs(method, shape, Q)
    t0 = time.perf_counter()
    try:
        u, ok = solve_cell(problem, method, shape, Q, opt, seed)
        wall = (time.perf_counter() - t0) * 1e3
        err = relative_error(problem, u, shape, reference)
        en = cell_energy(problem, u, shape)
    except (SeparaError, ValueError, ArithmeticError) as exc:
        return ErrorReport(method, label, Q, dofs, None, None, None, False,
                           f"{type(exc).__name__}: {exc}"), None
    return ErrorReport(method, label, Q, dofs, err, en, wall if timing else None, bool(ok)), u


def run_study(spec: StudySpec) -> list:
    """One report per (method, mesh, Q) cell, in spec order."""
    cells = _cells(spec)
    if not cells:
        return []
    problem = get_problem(spec.problem)
    if problem.exact is None and not problem.mapped and spec.reference is None:
        raise InvalidRangeError(f"problem {problem.name} has no exact solution; set reference")
    ref = reference_solution(problem, spec.reference) if problem.exact is None else None
    job = lambda c: run_cell(problem, *c, spec.opt, spec.seed, ref, spec.timing)
    if spec.jobs > 1:
        with ThreadPoolExecutor(max_workers=spec.jobs) as pool:
            return list(pool.map(job, cells))
    return [job(c) for c in cells]


def reports_to_csv(reports: Sequence[ErrorReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def write_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(reports_to_csv(reports))


def study_slopes(reports: Sequence[ErrorReport]) -> dict:
    """Convergence slope per (method, Q) over the meshes of a study (≥ 3 meshes)."""
    groups = {}
    for r in reports:
        if r.rel_energy_err is not None and r.rel_energy_err > 0:
            groups.setdefault((r.method, r.Q), []).append(r)
    out = {}
    for key, rows in groups.items():
        if len(rows) >= 3:
            hs = [1.0 / (max(parse_mesh(r.mesh)) - 1) for r in rows]
            out[key] = convergence_slope(hs, [r.rel_energy_err for r in rows])
    return out


# -- convergence and decomposition ------------------------------------------------------

def convergence_slope(h: Sequence[float], errors: Sequence[float]) -> float:
    h, e = np.asarray(h, float), np.asarray(errors, float)
    if h.size < 3 or h.size != e.size:
        raise InvalidRangeError("need at least three (h, error) pairs")
    if np.any(e <= 0) or np.any(h <= 0):
        raise InvalidRangeError("errors and sizes must be positive")
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


@dataclass(frozen=True)
class Decomposition:
    """Pythagorean split of the PGD error against a fine reference."""

    residual: float
    galerkin: float
    pgd_sq: float
    fem_sq: float
    mode_sq: float


def decomposition_check(mesh: TensorMesh, source, Q: int, ref, seed: int = separated.DEFAULT_SEED) -> Decomposition:
    """‖u^PGD − ref‖² vs ‖u^FEM − ref‖² + ‖u^PGD − u^FEM‖².

    ``residual`` is |LHS − RHS| / LHS. ``galerkin`` is
    |a(u^FEM, v) − (b, v)| / (‖u^FEM‖_E ‖v‖_E) for v = u^PGD − u^FEM.
    """
    u_fem = fem.solve_fem(mesh, source)
    u_pgd = fem.as_nodal(separated.solve_pgd(mesh, source, Q, seed=seed))
    v = u_pgd.values - u_fem.values
    pgd_sq = fem.energy_norm_diff(u_pgd, ref) ** 2
    fem_sq = fem.energy_norm_diff(u_fem, ref) ** 2
    mode_sq = fem.energy_norm_diff(u_pgd, u_fem) ** 2
    lhs, rhs = pgd_sq, fem_sq + mode_sq
    residual = abs(lhs - rhs) / lhs if lhs > 0 else 0.0
    scale = fem.energy_norm(u_fem) * np.sqrt(mode_sq)
    galerkin = abs(fem.galerkin_residual(u_fem, v, source)) / scale if scale > 0 else 0.0
    return Decomposition(residual, galerkin, pgd_sq, fem_sq, mode_sq)


@dataclass(frozen=True)
class ModeDecay:
    mesh: str
    modes: tuple
    errors: tuple
    slope: Optional[float]
    exact_at: Optional[int]


EXACT_TOL = 1e-10


def mode_errors(mesh: TensorMesh, source, Qmax: int, seed: int = separated.DEFAULT_SEED) -> list:
    """Mode-reduction errors ‖u^PGD_Q − u^FEM‖_E / ‖u^FEM‖_E for Q = 1..Qmax.

    One greedy run is truncated: the Q-mode PGD is a prefix of the
    Qmax-mode one. After stagnation the last error repeats.
    """
    u = fem.solve_fem(mesh, source)
    s = separated.solve_pgd(mesh, source, Qmax, seed=seed)
    errs = [fem.energy_norm_error(s.truncate(q), u) for q in range(1, s.Q + 1)]
    if not errs:
        errs = [1.0]
    return errs + [errs[-1]] * (Qmax - len(errs))


def mode_decay_study(meshes: Sequence[tuple], modes: Sequence[int], source,
                     seed: int = separated.DEFAULT_SEED) -> list:
    """Per-mesh least-squares slope of log(mode-reduction error) vs Q."""
    out = []
    for shape in meshes:
        mesh = uniform_mesh(shape)
        errs = mode_errors(mesh, source, max(modes), seed)
        sel = [(q, errs[q - 1]) for q in modes]
        live = [(q, e) for q, e in sel if e > EXACT_TOL]
        exact_at = next((q for q, e in sel if e <= EXACT_TOL), None)
        slope = float(np.polyfit([q for q, _ in live], np.log([e for _, e in live]), 1)[0]) \
            if len(live) >= 2 else None
        out.append(ModeDecay(mesh.label(), tuple(q for q, _ in sel), tuple(e for _, e in sel), slope, exact_at))
    return out


def slopes_agree(slopes: Sequence[float], rel: float = 0.2) -> bool:
    s = np.asarray(slopes, float)
    return bool(np.max(np.abs(s[:, None] - s[None, :])) <= rel * np.max(np.abs(s)))


def suggest_mode_count(mesh: TensorMesh, source, target: float,
                       seed: int = separated.DEFAULT_SEED) -> tuple:
    """(smallest Q with coarse-mesh mode error ≤ target, the error curve).

    Falls back to min(n) when no swept Q reaches the target; at that count
    the separated set contains the whole FEM space.
    """
    if not 0 <= target < 1:
        raise InvalidRangeError("target must lie in [0, 1)")
    qmax = min(mesh.shape)
    errs = mode_errors(mesh, source, qmax, seed)
    for q, e in enumerate(errs, 1):
        if e <= target:
            return q, errs
    return qmax, errs
