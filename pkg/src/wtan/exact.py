"""Exact rational arithmetic: transportation-polytope vertices and brute-force costs.

Everything here works on :class:`fractions.Fraction` values so the results can
serve as independent oracles for the floating-point solvers.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import permutations
from typing import Sequence

import numpy as np

from .errors import TooLarge

MAX_CELLS = 20

Plan = tuple  # sorted tuple of ((i, j), Fraction)


def vertex_plans(a: Sequence[Fraction], b: Sequence[Fraction],
                 max_cells: int = MAX_CELLS) -> list[Plan]:
    """All vertices of the transportation polytope with margins ``a`` and ``b``.

    Every vertex is produced by a greedy sequence that picks a cell ``(i, j)``
    among the still-active rows/columns, puts ``min(a_i, b_j)`` on it and
    retires the saturated row or column (both when they tie).  Branching over
    all such sequences, memoised on the residual margins, reaches each vertex
    (peel a leaf of its support forest) and nothing else.

    The returned list is sorted, so the output is deterministic.
    """
    a = tuple(Fraction(x) for x in a)
    b = tuple(Fraction(x) for x in b)
    if sum(a) != sum(b):
        raise ValueError("margins must have equal total mass")
    if len(a) * len(b) > max_cells:
        raise TooLarge(f"{len(a)}x{len(b)} polytope exceeds {max_cells} cells")

    memo: dict = {}

    def rec(ra: tuple, rb: tuple) -> frozenset:
        key = (ra, rb)
        if key in memo:
            return memo[key]
        rows = [i for i, v in enumerate(ra) if v > 0]
        cols = [j for j, v in enumerate(rb) if v > 0]
        if not rows:
            out = frozenset([()])
        else:
            acc = set()
            for i in rows:
                for j in cols:
                    v = min(ra[i], rb[j])
                    na = ra[:i] + (ra[i] - v,) + ra[i + 1:]
                    nb = rb[:j] + (rb[j] - v,) + rb[j + 1:]
                    for rest in rec(na, nb):
                        acc.add(tuple(sorted(rest + (((i, j), v),))))
            out = frozenset(acc)
        memo[key] = out
        return out

    return sorted(rec(a, b))


def _sq_dist(x: Sequence[Fraction], y: Sequence[Fraction]) -> Fraction:
    return sum(((xi - yi) ** 2 for xi, yi in zip(x, y)), Fraction(0))


def to_fractions(points: np.ndarray) -> list[tuple[Fraction, ...]]:
    """Exact rational value of every float coordinate (floats are dyadic rationals)."""
    pts = np.asarray(points)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    return [tuple(Fraction(v) if not isinstance(v, Fraction) else v for v in row) for row in pts.tolist()]


def plan_cost_sq(plan: Plan, xs, ys) -> Fraction:
    """``sum pi_ij |x_i - y_j|^2`` in exact arithmetic."""
    return sum((v * _sq_dist(xs[i], ys[j]) for (i, j), v in plan), Fraction(0))


def exact_w2_squared(xs, a, ys, b) -> Fraction:
    """Exact ``W_2^2`` by minimising over every vertex of the coupling polytope."""
    xs, ys = to_fractions(xs), to_fractions(ys)
    return min(plan_cost_sq(p, xs, ys) for p in vertex_plans(a, b))


def pairing_w2_squared(xs, ys) -> Fraction:
    """Exact ``W_2^2`` between two uniform measures with the same number of atoms.

    Brute force over all pairings; fine for a handful of atoms.
    """
    xs, ys = to_fractions(xs), to_fractions(ys)
    n = len(xs)
    if n != len(ys):
        raise ValueError("pairing oracle needs equal atom counts")
    if n > 8:
        raise TooLarge("pairing enumeration limited to 8 atoms")
    best = min(sum((_sq_dist(xs[i], ys[s[i]]) for i in range(n)), Fraction(0))
               for s in permutations(range(n)))
    return best / n


def exact_plan_from_support(a: Sequence[Fraction], b: Sequence[Fraction],
                            cells: Sequence[tuple[int, int]]) -> dict | None:
    """Recover the exact masses of a basic plan from its support.

    The support of a vertex is a forest, so masses follow by repeatedly peeling
    a row or column that has a single remaining cell.  Returns ``None`` if the
    support does not determine a nonnegative plan.
    """
    ra = [Fraction(x) for x in a]
    rb = [Fraction(x) for x in b]
    remaining = set(cells)
    out: dict = {}
    while remaining:
        progress = False
        row_cells: dict = {}
        col_cells: dict = {}
        for c in remaining:
            row_cells.setdefault(c[0], []).append(c)
            col_cells.setdefault(c[1], []).append(c)
        for i in sorted(row_cells):
            if len(row_cells[i]) == 1:
                c = row_cells[i][0]
                if c not in remaining:
                    continue
                v = ra[i]
                out[c] = v
                ra[i] -= v
                rb[c[1]] -= v
                remaining.discard(c)
                progress = True
        if not progress:
            for j in sorted(col_cells):
                if len(col_cells[j]) == 1:
                    c = col_cells[j][0]
                    if c not in remaining:
                        continue
                    v = rb[j]
                    out[c] = v
                    rb[j] -= v
                    ra[c[0]] -= v
                    remaining.discard(c)
                    progress = True
        if not progress:
            return None
    if any(v < 0 for v in out.values()) or any(ra) or any(rb):
        return None
    return out
