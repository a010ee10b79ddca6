"""Command-line front end: ``separapde {solve,study,modes}``.

Exit codes: 0 success, 1 usage or input error, 2 solver did not converge
(the best iterate is still written).
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from . import analysis, fem, separated
from .adaptive import OptimizerConfig
from .errors import SeparaError
from .mesh import uniform_mesh
from .problems import get_problem

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2
SEED_ENV = "SEPARAPDE_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def default_seed() -> int:
    env = os.environ.get(SEED_ENV)
    if env is None:
        return separated.DEFAULT_SEED
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from exc


def default_reference(shape) -> int:
    """Smallest integer refinement of every axis with at least 8x (2D) or 2x (3D) the elements."""
    factor = 8 if len(shape) == 2 else 2
    lcm = math.lcm(*(n - 1 for n in shape))
    k = math.ceil(factor * max(n - 1 for n in shape) / lcm)
    return k * lcm + 1


def _opt_args(p):
    p.add_argument("--max-iter", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-pos", type=float)
    p.add_argument("--tol", type=float)


def _optimizer(args, seed) -> OptimizerConfig:
    kw = {k: getattr(args, k) for k in ("max_iter", "lr", "lr_pos", "tol") if getattr(args, k) is not None}
    return OptimizerConfig(seed=seed, **kw)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="separapde", description="Separated-representation Poisson solvers and studies.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="solve one problem and write the solution and a CSV row")
    s.add_argument("--method", required=True, choices=analysis.METHODS)
    s.add_argument("--mesh", required=True, help="node counts, e.g. 41x41")
    s.add_argument("--modes", type=int, default=1)
    s.add_argument("--problem", default="sinsin", help="built-in id or problem file")
    s.add_argument("--out", required=True, help="CSV path; the solution goes next to it")
    s.add_argument("--seed", type=int)
    s.add_argument("--reference", type=int, help="reference mesh nodes per axis")
    s.add_argument("--timing", action="store_true")
    _opt_args(s)

    st = sub.add_parser("study", help="run a study spec and write its CSV")
    st.add_argument("--spec", required=True, help="config file or bundled name (table2, convdof)")
    st.add_argument("--out")
    st.add_argument("--jobs", type=int)
    st.add_argument("--seed", type=int)

    m = sub.add_parser("modes", help="suggest a mode count from a coarse-mesh PGD sweep")
    m.add_argument("--problem", required=True)
    m.add_argument("--coarse", required=True)
    m.add_argument("--target", required=True, type=float)
    m.add_argument("--seed", type=int)
    return p


def cmd_solve(args) -> int:
    if args.method in analysis.MODAL and args.modes < 1:
        raise UsageError("--modes must be >= 1")
    seed = args.seed if args.seed is not None else default_seed()
    shape = analysis.parse_mesh(args.mesh)
    problem = get_problem(args.problem)
    Q = args.modes if args.method in analysis.MODAL else None
    ref = None
    if problem.exact is None and not problem.mapped:
        ref = analysis.reference_solution(problem, args.reference or default_reference(shape))
    report, sol = analysis.evaluate_cell(problem, args.method, shape, Q, _optimizer(args, seed),
                                         seed, ref, args.timing)
    if report.error is not None:
        print(f"error: {report.error}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    if hasattr(sol, "factors"):
        separated.write_modes(out.with_suffix(".modes"), sol)
    else:
        out.with_suffix(".field").write_text(fem.dumps_field(sol))
    analysis.write_csv([report], out)
    print(analysis.reports_to_csv([report]), end="")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _bundled(name: str) -> str:
    fname = name if name.endswith(".cfg") else name + ".cfg"
    res = resources.files("separapde") / "studies" / fname
    if not res.is_file():
        raise UsageError(f"spec file {name!r} not found")
    return res.read_text()


def load_spec_text(path: str) -> str:
    p = Path(path)
    return p.read_text() if p.is_file() else _bundled(path)


def cmd_study(args) -> int:
    text = load_spec_text(args.spec)
    seed = args.seed
    if seed is None and "seed" not in analysis.parse_config(text):
        seed = default_seed()
    spec = analysis.StudySpec.from_text(text, seed=seed)
    if args.jobs:
        spec = replace(spec, jobs=args.jobs)
    reports = analysis.run_study(spec)
    out = args.out or spec.output
    if out:
        analysis.write_csv(reports, out)
    else:
        print(analysis.reports_to_csv(reports), end="")
    _summary(reports)
    if reports and all(r.error is not None for r in reports):
        return EXIT_USAGE
    return EXIT_OK


def _summary(reports) -> None:
    err = sys.stderr
    print(f"{'method':<12}{'mesh':<10}{'Q':>4}{'dofs':>9}{'rel err':>14}", file=err)
    for r in reports:
        e = "failed" if r.rel_energy_err is None else f"{r.rel_energy_err:.6e}"
        print(f"{r.method:<12}{r.mesh:<10}{'' if r.Q is None else r.Q:>4}{r.dofs:>9}{e:>14}", file=err)
    for (method, q), slope in analysis.study_slopes(reports).items():
        tag = method if q is None else f"{method} Q={q}"
        print(f"slope {tag}: {slope:.4f}", file=err)


def cmd_modes(args) -> int:
    seed = args.seed if args.seed is not None else default_seed()
    problem = get_problem(args.problem)
    if problem.mapped:
        raise UsageError("mode suggestion needs a tensor-mesh problem")
    mesh = uniform_mesh(analysis.parse_mesh(args.coarse))
    q, errs = analysis.suggest_mode_count(mesh, problem.source, args.target, seed)
    print(f"Q={q}")
    print("Q,mode_err")
    for k, e in enumerate(errs, 1):
        print(f"{k},{e!r}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return {"solve": cmd_solve, "study": cmd_study, "modes": cmd_modes}[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SeparaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
