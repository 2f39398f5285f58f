"""Finitely supported probability measures on R^d.

A :class:`DiscreteMeasure` is immutable: atoms are stored as a read-only
``(n, d)`` float array and weights as a read-only ``(n,)`` float array.  An
optional exact mode keeps the weights as :class:`fractions.Fraction` values as
well, which is what the brute-force vertex enumerations work with.
"""

from __future__ import annotations

import csv
import io
import json
import math
from fractions import Fraction
from numbers import Integral, Rational

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import DimensionMismatch, ValidationError

MERGE_TOL = 1e-9
WEIGHT_SUM_TOL = 1e-12


def _is_exact_scalar(w) -> bool:
    if isinstance(w, bool):
        return False
    return isinstance(w, (Rational, Integral, str))


def _to_fraction(w) -> Fraction:
    if isinstance(w, str):
        return Fraction(w.strip())
    return Fraction(w)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _component_labels(atoms: np.ndarray, tol: float) -> np.ndarray:
    """Union-find labels: atoms linked when within ``tol``; label = smallest index."""
    n = atoms.shape[0]
    if n <= 1:
        return np.arange(n)
    if tol == 0.0:
        _, first, inverse = np.unique(atoms, axis=0, return_index=True, return_inverse=True)
        return first[inverse.reshape(-1)]
    pairs = cKDTree(atoms).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return np.arange(n)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    # representative of each component is its smallest atom index
    rep = np.full(comp.max() + 1, n, dtype=np.int64)
    np.minimum.at(rep, comp, np.arange(n))
    return rep[comp]


class DiscreteMeasure:
    """Probability measure ``sum_i w_i delta_{x_i}`` on R^d.

    Parameters
    ----------
    atoms : array_like, shape (n, d) or (n,)
        Support points.  A 1-d input is read as ``n`` points in R^1.
    weights : sequence, optional
        Nonnegative weights summing to one.  If every entry is a rational
        (``Fraction``, ``int`` or a string such as ``"1/4"``) the measure is
        built in exact mode.  Defaults to the exact uniform weights ``1/n``.
    merge_tol : float or None
        Atoms closer than this are merged (greedy union-find in index order,
        the merged atom sits at the lowest index).  ``None`` skips merging and
        must only be used for inputs that are already merged.
    """

    __slots__ = ("atoms", "weights", "exact")

    def __init__(self, atoms, weights=None, *, merge_tol: float | None = MERGE_TOL):
        pts = np.array(atoms, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise ValidationError(f"atoms must be a non-empty (n, d) array, got shape {pts.shape}")
        n = pts.shape[0]
        if not np.all(np.isfinite(pts)):
            raise ValidationError("atoms contain non-finite coordinates")

        exact: tuple[Fraction, ...] | None
        if weights is None:
            exact = tuple(Fraction(1, n) for _ in range(n))
        elif len(weights) and all(_is_exact_scalar(w) for w in weights):
            exact = tuple(_to_fraction(w) for w in weights)
        else:
            exact = None
        if exact is not None:
            w = np.array([float(f) for f in exact])
        else:
            w = np.asarray(weights, dtype=float).reshape(-1)
        if w.shape[0] != n:
            raise ValidationError(f"{n} atoms but {w.shape[0]} weights")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValidationError("weights must be finite and nonnegative")
        if exact is not None:
            if sum(exact) != 1:
                raise ValidationError(f"exact weights sum to {sum(exact)}, not 1")
        elif abs(math.fsum(w) - 1.0) > WEIGHT_SUM_TOL:
            raise ValidationError(f"weights sum to {math.fsum(w)!r}, not 1")

        keep = w > 0
        if not np.all(keep):
            pts, w = pts[keep], w[keep]
            if exact is not None:
                exact = tuple(f for f, k in zip(exact, keep) if k)

        if merge_tol is not None:
            if merge_tol < 0:
                raise ValueError("merge_tol must be nonnegative")
            pts, w, exact = _merge(pts, w, exact, merge_tol)

        self.atoms = _frozen(pts)
        self.weights = _frozen(w)
        self.exact = exact

    # -- construction helpers -------------------------------------------------

    @classmethod
    def dirac(cls, x) -> DiscreteMeasure:
        return cls(np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1), [1])

    @classmethod
    def empirical(cls, points) -> DiscreteMeasure:
        """Empirical measure of a point cloud; every point gets weight ``1/N``."""
        pts = np.array(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        return cls(pts, [Fraction(1, pts.shape[0])] * pts.shape[0])

    @classmethod
    def uniform_grid(cls, n: int, lo: float = 0.0, hi: float = 1.0) -> DiscreteMeasure:
        return cls.empirical(np.linspace(lo, hi, n))

    # -- basic accessors ------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    def __len__(self) -> int:
        return self.atoms.shape[0]

    @property
    def is_exact(self) -> bool:
        return self.exact is not None

    def __repr__(self) -> str:
        return f"DiscreteMeasure(dim={self.dim}, size={self.size}, exact={self.is_exact})"

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def pushforward(self, fn, *, merge_tol: float | None = MERGE_TOL) -> DiscreteMeasure:
        """Image measure under ``fn``, applied row-wise to the ``(n, d)`` atom array."""
        new = np.asarray(fn(np.array(self.atoms)), dtype=float)
        if new.ndim == 1:
            new = new.reshape(-1, 1)
        return DiscreteMeasure(new, self.exact if self.exact is not None else self.weights,
                               merge_tol=merge_tol)

    def scaled(self, s: float) -> DiscreteMeasure:
        return self.pushforward(lambda x: s * x)

    def shifted(self, h) -> DiscreteMeasure:
        h = np.asarray(h, dtype=float)
        return self.pushforward(lambda x: x + h)

    def with_float_weights(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.atoms, np.array(self.weights), merge_tol=None)

    def canonical_order(self) -> np.ndarray:
        """Permutation sorting atoms lexicographically (first coordinate first)."""
        return np.lexsort(self.atoms.T[::-1])

    def index_in(self, other: DiscreteMeasure, tol: float = MERGE_TOL) -> np.ndarray | None:
        """For every atom of ``self`` the index of the matching atom of ``other``.

        Returns ``None`` when some atom has no partner within ``tol`` or the map
        is not a bijection.
        """
        if self.dim != other.dim or self.size != other.size:
            return None
        dist, idx = cKDTree(other.atoms).query(self.atoms, k=1)
        if np.any(dist > tol) or len(np.unique(idx)) != len(idx):
            return None
        return idx

    def isclose(self, other: DiscreteMeasure, atol: float = 1e-10,
                atom_tol: float = MERGE_TOL) -> bool:
        """Same support (within ``atom_tol``) and weights within ``atol``."""
        idx = self.index_in(other, atom_tol)
        if idx is None:
            return False
        return bool(np.all(np.abs(self.weights - other.weights[idx]) <= atol))

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "dim": self.dim,
            "atoms": self.atoms.tolist(),
            "weights": self.weights.tolist(),
        }
        if self.exact is not None:
            out["exact_weights"] = [str(f) for f in self.exact]
        return out

    @classmethod
    def from_dict(cls, data: dict, where: str = "measure") -> DiscreteMeasure:
        if not isinstance(data, dict):
            raise ValidationError(f"{where}: expected an object")
        for key in ("dim", "atoms", "weights"):
            if key not in data:
                raise ValidationError(f"{where}: missing field '{key}'")
        dim = data["dim"]
        if not isinstance(dim, int) or dim < 1:
            raise ValidationError(f"{where}.dim: positive integer required")
        atoms = data["atoms"]
        if not isinstance(atoms, list):
            raise ValidationError(f"{where}.atoms: list required")
        for k, a in enumerate(atoms):
            if not isinstance(a, list) or len(a) != dim:
                raise ValidationError(f"{where}.atoms[{k}]: expected {dim} coordinates")
        weights = data.get("exact_weights", data["weights"])
        if not isinstance(weights, list):
            raise ValidationError(f"{where}.weights: list required")
        try:
            return cls(np.array(atoms, dtype=float).reshape(len(atoms), dim), weights)
        except ValidationError as exc:
            raise ValidationError(f"{where}: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> DiscreteMeasure:
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x_{k + 1}" for k in range(self.dim)] + ["w"])
        for x, w in zip(self.atoms, self.weights):
            writer.writerow([format(v, ".17g") for v in x] + [format(w, ".17g")])
        return buf.getvalue()


def _merge(pts: np.ndarray, w: np.ndarray, exact, tol: float):
    labels = _component_labels(pts, tol)
    reps = np.unique(labels)
    if len(reps) == len(labels):
        return pts, w, exact
    pos = np.searchsorted(reps, labels)
    new_w = np.zeros(len(reps))
    np.add.at(new_w, pos, w)  # unbuffered, index order
    new_exact = None
    if exact is not None:
        acc = [Fraction(0)] * len(reps)
        for k, p in enumerate(pos):
            acc[p] += exact[k]
        new_exact = tuple(acc)
        new_w = np.array([float(f) for f in new_exact])
    return pts[reps], new_w, new_exact


def merge_atoms(m: DiscreteMeasure, tol: float = MERGE_TOL) -> DiscreteMeasure:
    """Merge atoms of ``m`` lying within ``tol`` of each other; total mass is kept."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    weights = m.exact if m.exact is not None else m.weights
    return DiscreteMeasure(m.atoms, weights, merge_tol=tol)


def moment(m: DiscreteMeasure, p: float) -> float:
    """``sum_i w_i |x_i|^p`` with the Euclidean norm."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    norms = np.linalg.norm(m.atoms, axis=1)
    return float(m.weights @ norms**p)


def check_same_dim(*measures: DiscreteMeasure) -> int:
    dims = {m.dim for m in measures}
    if len(dims) != 1:
        raise DimensionMismatch(f"dimensions differ: {sorted(dims)}")
    return dims.pop()
