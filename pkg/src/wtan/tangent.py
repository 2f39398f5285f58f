"""Tangent elements over a discrete base measure and the metrics between them.

A tangent element is a velocity distribution ``psi_x`` attached to every atom
``x`` of the base measure ``mu``.  Equivalently it is the joint measure
``mu(dx) psi_x(dz)`` on base x velocity, which is how most computations below
see it.
"""

from __future__ import annotations

from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from .errors import BaseMismatch, DimensionMismatch, SolverFailure, TooLarge, ValidationError
from .measure import DiscreteMeasure, moment
from .parallel_pool import pmap
from .transport import Coupling, solve_ot, solve_ot_certified

LP_MAX_VARIABLES = 1_000_000


class TangentElement:
    """Fibred velocity distribution ``x -> psi_x`` over a merged base measure.

    Parameters
    ----------
    base : DiscreteMeasure
    fibers : sequence of DiscreteMeasure
        One velocity measure per base atom, in base atom order.
    p : float
        Exponent of the ambient space; velocities are integrated with the
        conjugate exponent ``p / (p - 1)``.
    """

    __slots__ = ("base", "fibers", "p")

    def __init__(self, base: DiscreteMeasure, fibers: Sequence[DiscreteMeasure], p: float = 2.0):
        fibers = tuple(fibers)
        if len(fibers) != base.size:
            raise ValidationError(f"{base.size} base atoms but {len(fibers)} fibers")
        for f in fibers:
            if f.dim != base.dim:
                raise DimensionMismatch("fiber dimension differs from base dimension")
        if p <= 1:
            raise ValidationError("p must exceed 1")
        self.base = base
        self.fibers = fibers
        self.p = float(p)

    # -- constructors -------------------------------------------------------

    @classmethod
    def deterministic(cls, base: DiscreteMeasure, velocities, p: float = 2.0) -> TangentElement:
        """Element ``x_i -> delta_{v_i}``; ``velocities`` is an array or a map on atoms."""
        if callable(velocities):
            velocities = velocities(np.array(base.atoms))
        v = np.asarray(velocities, dtype=float).reshape(base.size, base.dim)
        return cls(base, [DiscreteMeasure.dirac(row) for row in v], p)

    @classmethod
    def zero(cls, base: DiscreteMeasure, p: float = 2.0) -> TangentElement:
        return cls.deterministic(base, np.zeros((base.size, base.dim)), p)

    @classmethod
    def from_joint(cls, gamma: Coupling, p: float = 2.0) -> TangentElement:
        """Disintegrate a coupling on base x velocity along its left marginal."""
        base = gamma.left
        fibers = []
        groups = [[] for _ in range(base.size)]
        for k, i in enumerate(gamma.rows):
            groups[i].append(k)
        for i, ks in enumerate(groups):
            pts = gamma.right.atoms[gamma.cols[ks]]
            if gamma.exact is not None:
                wi = base.exact[i]
                weights = [gamma.exact[k] / wi for k in ks]
            else:
                weights = gamma.mass[ks] / gamma.mass[ks].sum()
            fibers.append(DiscreteMeasure(pts, weights))
        return cls(base, fibers, p)

    # -- properties ---------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def conjugate_exponent(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def is_deterministic(self) -> bool:
        return all(f.size == 1 for f in self.fibers)

    @property
    def is_exact(self) -> bool:
        return self.base.exact is not None and all(f.exact is not None for f in self.fibers)

    def velocity_moment(self, q: float | None = None) -> float:
        """``sum_i w_i int |z|^q psi_{x_i}(dz)``, by default with the conjugate exponent."""
        q = self.conjugate_exponent if q is None else q
        return float(sum(w * moment(f, q) for w, f in zip(self.base.weights, self.fibers)))

    def velocity_moment_exact(self) -> Fraction:
        """Second velocity moment in rational arithmetic (exact weights required)."""
        if not self.is_exact:
            raise ValidationError("exact velocity moment needs exact weights")
        total = Fraction(0)
        for wi, f in zip(self.base.exact, self.fibers):
            for q, z in zip(f.exact, f.atoms.tolist()):
                total += wi * q * sum((Fraction(c) ** 2 for c in z), Fraction(0))
        return total

    def velocity_field(self) -> np.ndarray:
        """Velocity per base atom of a deterministic element, shape ``(n, d)``."""
        if not self.is_deterministic:
            raise ValidationError("element is not deterministic")
        return np.vstack([f.atoms[0] for f in self.fibers])

    def mean_field(self) -> np.ndarray:
        """Barycentre of each fiber, shape ``(n, d)``."""
        return np.vstack([f.mean() for f in self.fibers])

    def scaled(self, c: float) -> TangentElement:
        return TangentElement(self.base, [f.scaled(c) for f in self.fibers], self.p)

    # -- joint view ----------------------------------------------------------

    def as_joint(self) -> Coupling:
        """Coupling ``mu(dx) psi_x(dz)`` between the base and the union of fiber supports."""
        pts, xi, mass, exact = self._joint_cells()
        vel = DiscreteMeasure(pts, exact if exact is not None else mass)
        zi = _locate(vel, pts)
        return Coupling(self.base, vel, xi, zi, mass, exact=exact)

    def joint_measure(self) -> DiscreteMeasure:
        """The same joint law as a measure on ``R^{2d}`` (atoms ``(x, z)``)."""
        pts, xi, mass, exact = self._joint_cells()
        atoms = np.hstack([self.base.atoms[xi], pts])
        return DiscreteMeasure(atoms, exact if exact is not None else mass, merge_tol=None)

    def _joint_cells(self):
        pts, xi, mass = [], [], []
        exact = [] if self.is_exact else None
        for i, f in enumerate(self.fibers):
            pts.append(f.atoms)
            xi.extend([i] * f.size)
            mass.append(self.base.weights[i] * f.weights)
            if exact is not None:
                exact.extend(self.base.exact[i] * q for q in f.exact)
        return np.vstack(pts), np.array(xi, dtype=np.int64), np.concatenate(mass), exact

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(), "fibers": [f.to_dict() for f in self.fibers],
                "p": self.p}

    @classmethod
    def from_dict(cls, data: dict, where: str = "tangent") -> TangentElement:
        if not isinstance(data, dict):
            raise ValidationError(f"{where}: expected an object")
        for key in ("base", "fibers"):
            if key not in data:
                raise ValidationError(f"{where}: missing field '{key}'")
        base = DiscreteMeasure.from_dict(data["base"], f"{where}.base")
        fibers = [DiscreteMeasure.from_dict(f, f"{where}.fibers[{k}]")
                  for k, f in enumerate(data["fibers"])]
        return cls(base, fibers, float(data.get("p", 2.0)))

    def __repr__(self) -> str:
        sizes = [f.size for f in self.fibers]
        return f"TangentElement(base={self.base.size} atoms, fiber sizes {min(sizes)}..{max(sizes)})"


def _locate(m: DiscreteMeasure, pts: np.ndarray) -> np.ndarray:
    from scipy.spatial import cKDTree

    _, idx = cKDTree(m.atoms).query(pts, k=1)
    return idx


def _check_same_base(psi: TangentElement, phi: TangentElement) -> np.ndarray:
    """Index map from ``phi.base`` atoms into ``psi.base`` atoms."""
    if psi.base is phi.base:
        return np.arange(psi.base.size)
    idx = phi.base.index_in(psi.base)
    if idx is None or np.max(np.abs(phi.base.weights - psi.base.weights[idx])) > 1e-10:
        raise BaseMismatch("tangent elements live over different base measures")
    return idx


def _fiber_w2_sq(pair) -> float:
    f, g = pair
    if f.size == 1 and g.size == 1:
        d = f.atoms[0] - g.atoms[0]
        return float(d @ d)
    return solve_ot_certified(f, g, 2.0).objective


def tangent_distance(psi: TangentElement, phi: TangentElement, *, threads: int | None = None) -> float:
    """``d_mu(psi, phi)``: square root of the base-weighted fiberwise ``W_2^2``.

    The base coordinate is shared by both joint laws, so the optimal triple
    coupling splits into independent transport problems, one per base atom.
    """
    return float(np.sqrt(tangent_distance_sq(psi, phi, threads=threads)))


def tangent_distance_sq(psi: TangentElement, phi: TangentElement, *, threads: int | None = None) -> float:
    idx = _check_same_base(psi, phi)
    inv = np.empty_like(idx)
    inv[idx] = np.arange(len(idx))
    pairs = [(psi.fibers[i], phi.fibers[inv[i]]) for i in range(psi.base.size)]
    per_fiber = pmap(_fiber_w2_sq, pairs, threads=threads)
    # summation in base-index order, independent of how fibers were scheduled
    total = 0.0
    for w, v in zip(psi.base.weights, per_fiber):
        total += w * v
    return total


def inner_product(psi: TangentElement, phi: TangentElement) -> float:
    """``d^2(psi, 0) + d^2(0, phi) - d^2(psi, phi)``.

    No factor one half: this is twice the usual polarisation, kept as is.
    """
    zero = TangentElement.zero(psi.base, psi.p)
    return (tangent_distance_sq(psi, zero) + tangent_distance_sq(zero, phi)
            - tangent_distance_sq(psi, phi))


def sheaf_distance(phi: TangentElement, psi: TangentElement) -> float:
    """``W_2`` between the two joint laws viewed as measures on ``R^{2d}``."""
    if phi.dim != psi.dim:
        raise DimensionMismatch("tangent elements of different dimensions")
    if phi.p != psi.p:
        raise ValidationError("tangent elements with different exponents")
    _, value = solve_ot(phi.joint_measure(), psi.joint_measure(), 2.0)
    return value


class ComparisonLP(NamedTuple):
    value: float            # sum gamma |z - z'|^2 at the optimum
    w2_sq: float            # W_2^2 between the base measures
    geodesic_slack: float   # eps_geo used in the constraint
    multiplier: float       # dual value of the geodesic constraint (<= 0 for a minimum)
    plan: np.ndarray        # dense plan between the two joint laws
    joint_left: DiscreteMeasure
    joint_right: DiscreteMeasure


def _comparison_lp(phi: TangentElement, psi: TangentElement, sense: int,
                   eps_geo: float | None) -> ComparisonLP:
    if phi.dim != psi.dim:
        raise DimensionMismatch("tangent elements of different dimensions")
    d = phi.dim
    A = phi.joint_measure()
    B = psi.joint_measure()
    n, m = A.size, B.size
    if n * m > LP_MAX_VARIABLES:
        raise TooLarge(f"comparison LP would need {n * m} variables")
    w2_sq = solve_ot_certified(phi.base, psi.base, 2.0).objective
    if eps_geo is None:
        eps_geo = 1e-7 * (1.0 + w2_sq)
    xa, za = A.atoms[:, :d], A.atoms[:, d:]
    yb, zb = B.atoms[:, :d], B.atoms[:, d:]
    c_vel = cdist(za, zb, "sqeuclidean").ravel()
    c_pos = cdist(xa, yb, "sqeuclidean").ravel()

    idx = np.arange(n * m)
    rows = np.concatenate([idx // m, n + idx % m])
    A_eq = sp.csr_matrix((np.ones(2 * n * m), (rows, np.concatenate([idx, idx]))), shape=(n + m, n * m))
    b_eq = np.concatenate([A.weights, B.weights])
    res = linprog(sense * c_vel, A_ub=c_pos.reshape(1, -1), b_ub=[w2_sq + eps_geo],
                  A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise SolverFailure(f"comparison LP failed: {res.message}")
    plan = np.maximum(res.x, 0.0)
    value = float(plan @ c_vel)
    mult = float(res.ineqlin.marginals[0]) * sense
    return ComparisonLP(value, w2_sq, eps_geo, mult, plan.reshape(n, m), A, B)


def compare_by_transport(phi: TangentElement, psi: TangentElement, *,
                         eps_geo: float | None = None) -> float:
    """Smallest fiber discrepancy after transporting ``phi`` along a geodesic.

    Solved as one linear program over couplings of the two joint laws
    ``mu(dx)phi_x(dz)`` and ``nu(dy)psi_y(dz')``: minimise ``E|Z - Z'|^2``
    subject to ``E|X - Y|^2 <= W_2^2(mu, nu) + eps_geo``, which ranges over
    every optimal coupling of the bases and every way to glue the velocities.
    ``eps_geo`` defaults to ``1e-7 * (1 + W_2^2)``.
    """
    return _comparison_lp(phi, psi, 1, eps_geo).value


def compare_by_transport_sup(phi: TangentElement, psi: TangentElement, *,
                             eps_geo: float | None = None) -> float:
    """Same program as :func:`compare_by_transport` with a maximum instead."""
    return _comparison_lp(phi, psi, -1, eps_geo).value


def comparison_details(phi: TangentElement, psi: TangentElement, *,
                       eps_geo: float | None = None, sup: bool = False) -> ComparisonLP:
    return _comparison_lp(phi, psi, -1 if sup else 1, eps_geo)
