"""Named benchmark problems."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .assembly import PointLoad, SeparatedTerm, SourceTerm
from .errors import FormatError, InvalidRangeError
from .fem import AnalyticSolution

PI = np.pi


@dataclass(frozen=True)
class Problem:
    name: str
    dim: int
    source: object
    exact: Optional[AnalyticSolution] = None
    mapped: bool = False
    exact_grad: Optional[Callable] = None


def _sin(x):
    return np.sin(PI * x)


def _dsin(x):
    return PI * np.cos(PI * x)


def sinsin(dim: int = 2) -> Problem:
    """u = Π sin(πx_d) on the unit cube, b = dπ² u."""
    term = SeparatedTerm((_sin,) * dim, (_dsin,) * dim, scale=dim * PI**2)
    exact = AnalyticSolution((SeparatedTerm((_sin,) * dim, (_dsin,) * dim),))
    return Problem(f"sinsin{'' if dim == 2 else '3d'}", dim, SourceTerm((term,)), exact)


def pointload(dim: int = 2, point=None, magnitude: float = 1.0) -> Problem:
    """Unit load concentrated at the centre of the unit square (cube)."""
    point = tuple(point) if point is not None else (0.5,) * dim
    return Problem(f"pointload{'' if dim == 2 else '3d'}", dim,
                   SourceTerm(point_loads=(PointLoad(point, magnitude),)))


def quarterring(r0: float = 1.0, r1: float = 2.0) -> Problem:
    from .mapping import ring_solution
    _, grad, b = ring_solution(r0, r1)
    return Problem("quarterring", 2, b, mapped=True, exact_grad=grad)


_BUILTIN = {
    "sinsin": lambda: sinsin(2),
    "sinsin3d": lambda: sinsin(3),
    "pointload": lambda: pointload(2),
    "pointload3d": lambda: pointload(3),
    "quarterring": quarterring,
}

PROBLEM_KEYS = {"kind", "dim", "point", "magnitude"}


def get_problem(ident: str) -> Problem:
    """Built-in id, or a path to a ``key = value`` problem file.

    Problem files accept ``kind`` (sinsin | pointload), ``dim`` (2 | 3) and,
    for point loads, ``point`` (comma list) and ``magnitude``.
    """
    if ident in _BUILTIN:
        return _BUILTIN[ident]()
    try:
        with open(ident) as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidRangeError(f"unknown problem {ident!r} (not a built-in id or readable file)") from exc
    from .analysis import parse_config
    kv = parse_config(text, PROBLEM_KEYS)
    kind = kv.get("kind")
    dim = int(kv.get("dim", "2"))
    if dim not in (2, 3):
        raise FormatError("dim must be 2 or 3")
    if kind == "sinsin":
        return sinsin(dim)
    if kind == "pointload":
        point = [float(v) for v in kv["point"].split(",")] if "point" in kv else None
        if point is not None and len(point) != dim:
            raise FormatError("point has the wrong number of coordinates")
        return pointload(dim, point, float(kv.get("magnitude", "1")))
    raise FormatError(f"unknown problem kind {kind!r}")
