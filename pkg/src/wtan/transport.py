"""Couplings, exact and entropic optimal transport, and gluing.

The exact solver is the network simplex of POT (``ot.emd``).  Its dual
potentials are used to certify optimality of every returned plan.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import cdist

from . import exact as _exact
from .errors import (DimensionMismatch, MarginalMismatch, NonConvergence,
                     NonRationalWeights, SolverFailure, TooLarge, ValidationError)
from .measure import MERGE_TOL, DiscreteMeasure, check_same_dim

for _key in ("POT_BACKEND_DISABLE_PYTORCH", "POT_BACKEND_DISABLE_JAX",
             "POT_BACKEND_DISABLE_CUPY", "POT_BACKEND_DISABLE_TENSORFLOW"):
    os.environ.setdefault(_key, "1")
import ot  # noqa: E402

MARGINAL_TOL = 1e-10
MAX_SUPPORT = 2000


class Coupling:
    """Sparse coupling between two discrete measures.

    ``rows[k], cols[k], mass[k]`` list the positive cells.  ``exact`` carries
    the same masses as fractions when both marginals are exact.
    """

    __slots__ = ("left", "right", "rows", "cols", "mass", "exact")

    def __init__(self, left: DiscreteMeasure, right: DiscreteMeasure, rows, cols, mass,
                 *, exact=None, check: bool = True):
        if check:
            check_same_dim(left, right)
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        if exact is not None:
            exact = [Fraction(v) for v in exact]
            mass = np.array([float(v) for v in exact])
        else:
            mass = np.asarray(mass, dtype=float).reshape(-1)
        if not (len(rows) == len(cols) == len(mass)):
            raise ValidationError("rows, cols and mass must have equal length")
        if np.any(mass < 0) or not np.all(np.isfinite(mass)):
            raise ValidationError("coupling masses must be finite and nonnegative")
        if len(rows) and (rows.min() < 0 or rows.max() >= left.size
                          or cols.min() < 0 or cols.max() >= right.size):
            raise ValidationError("coupling index out of range")

        # merge duplicate cells and drop zeros, in lexicographic cell order
        key = rows * right.size + cols
        order = np.argsort(key, kind="stable")
        uniq, start = np.unique(key[order], return_index=True)
        if len(uniq) != len(key) or np.any(mass == 0) or np.any(order != np.arange(len(order))):
            summed = np.add.reduceat(mass[order], start) if len(key) else mass
            if exact is not None:
                ex_sorted = [exact[k] for k in order]
                bounds = list(start) + [len(order)]
                exact = [sum(ex_sorted[s:e], Fraction(0)) for s, e in zip(bounds[:-1], bounds[1:])]
                summed = np.array([float(v) for v in exact])
            rows, cols, mass = uniq // right.size, uniq % right.size, summed
            keep = mass > 0
            rows, cols, mass = rows[keep], cols[keep], mass[keep]
            if exact is not None:
                exact = [v for v, k in zip(exact, keep) if k]

        self.left = left
        self.right = right
        self.rows = rows
        self.cols = cols
        self.mass = mass
        if exact is not None and (left.exact is None or right.exact is None):
            exact = None
        self.exact = tuple(exact) if exact is not None else None
        for arr in (self.rows, self.cols, self.mass):
            arr.setflags(write=False)
        if check:
            self._check_marginals()

    def _check_marginals(self):
        if self.exact is not None:
            ra = [Fraction(0)] * self.left.size
            rb = [Fraction(0)] * self.right.size
            for i, j, v in zip(self.rows, self.cols, self.exact):
                ra[i] += v
                rb[j] += v
            if tuple(ra) != self.left.exact or tuple(rb) != self.right.exact:
                raise MarginalMismatch("exact coupling marginals do not match")
            return
        r = np.bincount(self.rows, weights=self.mass, minlength=self.left.size)
        c = np.bincount(self.cols, weights=self.mass, minlength=self.right.size)
        err = max(np.max(np.abs(r - self.left.weights)), np.max(np.abs(c - self.right.weights)))
        if err > MARGINAL_TOL:
            raise MarginalMismatch(f"coupling marginals off by {err:.3e}")

    # -- constructors -----------------------------------------------------

    @classmethod
    def from_dense(cls, left, right, plan, *, tol: float = 0.0) -> Coupling:
        plan = np.asarray(plan, dtype=float)
        rows, cols = np.nonzero(plan > tol)
        return cls(left, right, rows, cols, plan[rows, cols])

    @classmethod
    def from_pairs(cls, xs, ys, masses) -> Coupling:
        """Coupling of the (merged) marginals of a weighted list of point pairs."""
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        xs = xs.reshape(len(xs), -1)
        ys = ys.reshape(len(ys), -1)
        masses = [Fraction(m) if isinstance(m, str) else m for m in masses]
        left = DiscreteMeasure(xs, masses)
        right = DiscreteMeasure(ys, masses)
        li = _nearest(left.atoms, xs)
        rj = _nearest(right.atoms, ys)
        exact = masses if left.exact is not None and right.exact is not None else None
        return cls(left, right, li, rj, np.asarray([float(m) for m in masses]), exact=exact)

    @classmethod
    def identity(cls, m: DiscreteMeasure) -> Coupling:
        idx = np.arange(m.size)
        return cls(m, m, idx, idx, m.weights, exact=m.exact)

    @classmethod
    def product(cls, mu: DiscreteMeasure, nu: DiscreteMeasure) -> Coupling:
        rows, cols = np.divmod(np.arange(mu.size * nu.size), nu.size)
        exact = None
        if mu.exact is not None and nu.exact is not None:
            exact = [mu.exact[i] * nu.exact[j] for i, j in zip(rows, cols)]
        return cls(mu, nu, rows, cols, mu.weights[rows] * nu.weights[cols], exact=exact)

    @classmethod
    def graph(cls, mu: DiscreteMeasure, fn) -> Coupling:
        """Coupling ``(Id, fn)_# mu`` induced by a map."""
        ys = np.asarray(fn(np.array(mu.atoms)), dtype=float).reshape(mu.size, -1)
        weights = list(mu.exact) if mu.exact is not None else mu.weights
        return cls.from_pairs(mu.atoms, ys, weights)

    # -- accessors ----------------------------------------------------------

    @property
    def nnz(self) -> int:
        return len(self.mass)

    def dense(self) -> np.ndarray:
        out = np.zeros((self.left.size, self.right.size))
        out[self.rows, self.cols] = self.mass
        return out

    def transpose(self) -> Coupling:
        return Coupling(self.right, self.left, self.cols, self.rows, self.mass,
                        exact=self.exact, check=False)

    def pairs(self):
        """Arrays ``(x, y, mass)`` with one row per support cell."""
        return self.left.atoms[self.rows], self.right.atoms[self.cols], self.mass

    def successors(self) -> list[np.ndarray]:
        """For each left atom, the indices of right atoms it sends mass to."""
        out = [[] for _ in range(self.left.size)]
        for i, j in zip(self.rows, self.cols):
            out[i].append(j)
        return [np.array(o, dtype=np.int64) for o in out]

    def is_graph(self) -> bool:
        return bool(np.all(np.bincount(self.rows, minlength=self.left.size) == 1))

    def interpolate(self, t: float) -> DiscreteMeasure:
        """Position marginal at time ``t`` of the straight-line interpolation."""
        x, y, _ = self.pairs()
        pts = (1.0 - t) * x + t * y
        weights = list(self.exact) if self.exact is not None else self.mass
        return DiscreteMeasure(pts, weights)

    def to_dict(self) -> dict:
        out = {
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
            "mass": [[int(i), int(j), float(v)] for i, j, v in zip(self.rows, self.cols, self.mass)],
        }
        if self.exact is not None:
            out["exact_mass"] = [str(v) for v in self.exact]
        return out

    @classmethod
    def from_dict(cls, data: dict, where: str = "coupling") -> Coupling:
        if not isinstance(data, dict):
            raise ValidationError(f"{where}: expected an object")
        for key in ("left", "right", "mass"):
            if key not in data:
                raise ValidationError(f"{where}: missing field '{key}'")
        left = DiscreteMeasure.from_dict(data["left"], f"{where}.left")
        right = DiscreteMeasure.from_dict(data["right"], f"{where}.right")
        entries = data["mass"]
        for k, e in enumerate(entries):
            if not (isinstance(e, list) and len(e) == 3):
                raise ValidationError(f"{where}.mass[{k}]: expected [i, j, mass]")
        rows = [int(e[0]) for e in entries]
        cols = [int(e[1]) for e in entries]
        exact = data.get("exact_mass")
        try:
            return cls(left, right, rows, cols, [float(e[2]) for e in entries], exact=exact)
        except (MarginalMismatch, ValidationError) as exc:
            raise ValidationError(f"{where}: {exc}") from None

    def __repr__(self) -> str:
        return f"Coupling({self.left.size}x{self.right.size}, nnz={self.nnz}, exact={self.exact is not None})"


def _nearest(atoms: np.ndarray, pts: np.ndarray) -> np.ndarray:
    from scipy.spatial import cKDTree

    dist, idx = cKDTree(atoms).query(pts, k=1)
    if np.any(dist > MERGE_TOL * 10):
        raise MarginalMismatch("point not found among merged atoms")
    return idx


def cost(gamma: Coupling, p: float = 2.0) -> float:
    """Transport cost ``C_p(gamma) = (sum pi_ij |x_i - y_j|^p)^(1/p)``.

    Any ``p > 0`` is accepted; exponents below one are used for ``C_{2 alpha}``.
    """
    if p <= 0:
        raise ValueError("p must be positive")
    x, y, m = gamma.pairs()
    d = np.linalg.norm(x - y, axis=1)
    return float(m @ d**p) ** (1.0 / p)


def cost_matrix(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 2.0) -> np.ndarray:
    if p == 2.0:
        return cdist(mu.atoms, nu.atoms, "sqeuclidean")
    return cdist(mu.atoms, nu.atoms) ** p


class OTSolution(NamedTuple):
    coupling: Coupling
    value: float          # W_p
    objective: float      # W_p^p
    u: np.ndarray
    v: np.ndarray
    gap: float            # primal - dual objective
    dual_violation: float  # max(u_i + v_j - c_ij, 0)


def solve_ot_certified(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 2.0) -> OTSolution:
    """Exact OT with its dual certificate; see :func:`solve_ot`."""
    check_same_dim(mu, nu)
    if p < 1:
        raise ValueError("p must be >= 1")
    if mu.size > MAX_SUPPORT or nu.size > MAX_SUPPORT:
        raise TooLarge(f"supports limited to {MAX_SUPPORT} atoms")
    C = cost_matrix(mu, nu, p)
    a = np.array(mu.weights)
    b = np.array(nu.weights)
    b = b * (a.sum() / b.sum())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        plan, log = ot.emd(a, b, C, numItermax=max(100_000, 50 * mu.size * nu.size), log=True)
    if log.get("result_code", 1) != 1:
        raise SolverFailure(f"network simplex failed: {log.get('warning')}")
    plan = np.asarray(plan)
    u = np.asarray(log["u"], dtype=float)
    v = np.asarray(log["v"], dtype=float)
    rows, cols = np.nonzero(plan > 0)
    mass = plan[rows, cols]
    objective = float(mass @ C[rows, cols])
    dual = float(a @ u + b @ v)
    gap = objective - dual
    viol = float(max(np.max(u[:, None] + v[None, :] - C), 0.0))
    scale = 1.0 + abs(objective)
    if abs(gap) > 1e-9 * scale or viol > 1e-9 * (1.0 + float(C.max())):
        raise SolverFailure(f"optimality certificate failed: gap={gap:.3e}, dual violation={viol:.3e}")

    exact = None
    if mu.exact is not None and nu.exact is not None:
        found = _exact.exact_plan_from_support(mu.exact, nu.exact, list(zip(rows.tolist(), cols.tolist())))
        if found is not None:
            cells = sorted(found)
            rows = np.array([c[0] for c in cells], dtype=np.int64)
            cols = np.array([c[1] for c in cells], dtype=np.int64)
            exact = [found[c] for c in cells]
            mass = np.array([float(x) for x in exact])
    if exact is None:
        mass = _polish(mass, rows, cols, mu.weights, nu.weights)
    gamma = Coupling(mu, nu, rows, cols, mass, exact=exact)
    objective = float(gamma.mass @ C[gamma.rows, gamma.cols])
    return OTSolution(gamma, max(objective, 0.0) ** (1.0 / p), objective, u, v, gap, viol)


def _polish(mass, rows, cols, a, b):
    # one proportional row rescale removes the emd round-off on the left marginal
    r = np.bincount(rows, weights=mass, minlength=len(a))
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(r > 0, a / r, 1.0)
    return mass * s[rows]


def solve_ot(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 2.0) -> tuple[Coupling, float]:
    """Optimal coupling and ``W_p(mu, nu)``.

    The returned plan is a vertex chosen by the network simplex; when optimal
    couplings are not unique nothing canonical should be read into it.
    Optimality is certified through LP duality before returning.
    """
    sol = solve_ot_certified(mu, nu, p)
    return sol.coupling, sol.value


def wasserstein(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 2.0) -> float:
    return solve_ot_certified(mu, nu, p).value


def wasserstein_sq(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    return solve_ot_certified(mu, nu, 2.0).objective


def sinkhorn(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 2.0, eps: float = 1e-2,
             *, max_iter: int = 20_000, tol: float = 1e-7) -> Coupling:
    """Entropic coupling rounded onto the coupling polytope.

    Log-domain Sinkhorn with epsilon scaling: the regularisation starts at the
    cost scale and is divided by two until it reaches ``eps``, warm-starting
    the potentials each time.  ``eps`` is absolute, in units of ``|x - y|^p``.
    Raises :class:`NonConvergence` when the marginal error is still above
    ``1e-5`` after ``max_iter`` sweeps in total.
    """
    check_same_dim(mu, nu)
    if eps <= 0:
        raise ValueError("eps must be positive")
    C = cost_matrix(mu, nu, p)
    log_a = np.log(mu.weights)
    log_b = np.log(nu.weights)
    f = np.zeros(mu.size)
    g = np.zeros(nu.size)
    schedule = []
    e = max(float(C.max()), eps)
    while e > eps:
        schedule.append(e)
        e /= 2.0
    schedule.append(eps)
    sweeps = 0
    err = np.inf
    plan = np.exp((f[:, None] + g[None, :] - C) / schedule[0])
    for k, e in enumerate(schedule):
        final = k == len(schedule) - 1
        while sweeps < max_iter:
            sweeps += 1
            f = e * (log_a - _lse((g[None, :] - C) / e, axis=1))
            g = e * (log_b - _lse((f[:, None] - C) / e, axis=0))
            if sweeps % 10 and sweeps < max_iter:
                continue
            plan = np.exp((f[:, None] + g[None, :] - C) / e)
            err = float(np.abs(plan.sum(1) - mu.weights).sum())
            if err < (tol if final else 1e-3):
                break
        if sweeps >= max_iter:
            break
    if err > 1e-5:
        raise NonConvergence(f"sinkhorn marginal error {err:.3e} after {sweeps} sweeps")
    plan = round_to_polytope(plan, np.array(mu.weights), np.array(nu.weights))
    return Coupling.from_dense(mu, nu, plan)


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def round_to_polytope(plan: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project an approximate plan onto ``Pi(a, b)`` (row/column shrink plus rank-one fix)."""
    r = plan.sum(1)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(r > 0, np.minimum(a / r, 1.0), 1.0)
    plan = plan * x[:, None]
    c = plan.sum(0)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.where(c > 0, np.minimum(b / c, 1.0), 1.0)
    plan = plan * y[None, :]
    err_r = a - plan.sum(1)
    err_c = b - plan.sum(0)
    total = err_r.sum()
    if total > 0:
        plan = plan + np.outer(err_r, err_c) / total
    return np.maximum(plan, 0.0)


# -- vertex enumeration ------------------------------------------------------

def enumerate_vertex_couplings(mu: DiscreteMeasure, nu: DiscreteMeasure,
                               limit: int = 10_000) -> list[Coupling]:
    """Every extreme point of ``Pi(mu, nu)``, computed in exact arithmetic.

    Requires exact weights and ``size(mu) * size(nu) <= 20``.  At most
    ``limit`` couplings are returned (in a fixed order).
    """
    if mu.exact is None or nu.exact is None:
        raise NonRationalWeights("vertex enumeration needs exact rational weights")
    if mu.size * nu.size > _exact.MAX_CELLS:
        raise TooLarge(f"{mu.size}x{nu.size} exceeds {_exact.MAX_CELLS} cells")
    out = []
    for plan in _exact.vertex_plans(mu.exact, nu.exact)[:limit]:
        rows = [c[0] for c, _ in plan]
        cols = [c[1] for c, _ in plan]
        out.append(Coupling(mu, nu, rows, cols, None, exact=[v for _, v in plan]))
    return out


# -- gluing ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Gluing:
    """Sparse measure on triples ``(x, y, z)`` built from two couplings sharing ``x``."""

    x: DiscreteMeasure
    y: DiscreteMeasure
    z: DiscreteMeasure
    xi: np.ndarray
    yi: np.ndarray
    zi: np.ndarray
    mass: np.ndarray
    exact: tuple | None = None

    def project_xy(self) -> Coupling:
        return Coupling(self.x, self.y, self.xi, self.yi, self.mass, exact=self.exact)

    def project_xz(self) -> Coupling:
        return Coupling(self.x, self.z, self.xi, self.zi, self.mass, exact=self.exact)

    def project_yz(self) -> Coupling:
        return Coupling(self.y, self.z, self.yi, self.zi, self.mass, exact=self.exact)

    def triples(self):
        return self.x.atoms[self.xi], self.y.atoms[self.yi], self.z.atoms[self.zi], self.mass


def align_left(gamma: Coupling, base: DiscreteMeasure, weight_tol: float = MARGINAL_TOL) -> Coupling:
    """Re-index ``gamma`` so that its left marginal is literally ``base``."""
    if gamma.left is base:
        return gamma
    idx = gamma.left.index_in(base)
    if idx is None:
        raise MarginalMismatch("left marginal support differs from the base measure")
    if np.max(np.abs(gamma.left.weights - base.weights[idx])) > weight_tol:
        raise MarginalMismatch("left marginal weights differ from the base measure")
    exact = gamma.exact if base.exact is not None else None
    return Coupling(base, gamma.right, idx[gamma.rows], gamma.cols, gamma.mass, exact=exact,
                    check=False)


def glue(gamma_xy: Coupling, gamma_xz: Coupling) -> Gluing:
    """Conditional-product gluing of two couplings with the same left marginal.

    ``mass(i, j, k) = gamma_xy(i, j) * gamma_xz(i, k) / w_i``.
    """
    check_same_dim(gamma_xy.left, gamma_xz.left)
    gxz = align_left(gamma_xz, gamma_xy.left)
    base = gamma_xy.left
    exact_mode = gamma_xy.exact is not None and gxz.exact is not None and base.exact is not None
    by_row_y = _group_rows(gamma_xy, base.size)
    by_row_z = _group_rows(gxz, base.size)
    xi, yi, zi, mass, ex = [], [], [], [], []
    for i in range(base.size):
        ky, kz = by_row_y[i], by_row_z[i]
        w = base.weights[i]
        for a in ky:
            for b in kz:
                xi.append(i)
                yi.append(gamma_xy.cols[a])
                zi.append(gxz.cols[b])
                mass.append(gamma_xy.mass[a] * gxz.mass[b] / w)
                if exact_mode:
                    ex.append(gamma_xy.exact[a] * gxz.exact[b] / base.exact[i])
    g = Gluing(base, gamma_xy.right, gxz.right, np.array(xi, dtype=np.int64),
               np.array(yi, dtype=np.int64), np.array(zi, dtype=np.int64),
               np.array(mass), tuple(ex) if exact_mode else None)
    return g


def _group_rows(gamma: Coupling, n: int) -> list[list[int]]:
    out: list[list[int]] = [[] for _ in range(n)]
    for k, i in enumerate(gamma.rows):
        out[i].append(k)
    return out


def marginal_error(gamma: Coupling) -> float:
    r = np.bincount(gamma.rows, weights=gamma.mass, minlength=gamma.left.size)
    c = np.bincount(gamma.cols, weights=gamma.mass, minlength=gamma.right.size)
    return float(max(np.max(np.abs(r - gamma.left.weights)), np.max(np.abs(c - gamma.right.weights))))


def particle_w2_sq(points: np.ndarray, weights: np.ndarray, ref: DiscreteMeasure):
    """``W_2^2`` from a weighted particle cloud (no merging) to ``ref``, and its gradient.

    The gradient with respect to particle ``b`` is ``2 (w_b x_b - sum_j pi_bj y_j)``
    for the plan ``pi`` returned by the network simplex.  At coincident particles
    the plan splits mass arbitrarily, so this is one element of the subdifferential.
    """
    x = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    C = cdist(x, ref.atoms, "sqeuclidean")
    b = np.array(ref.weights) * (w.sum() / ref.weights.sum())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        plan = np.asarray(ot.emd(w, b, C, numItermax=max(100_000, 50 * C.size)))
    value = float(np.sum(plan * C))
    grad = 2.0 * (plan.sum(axis=1)[:, None] * x - plan @ ref.atoms)
    return max(value, 0.0), grad
