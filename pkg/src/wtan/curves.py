"""Lagrangian curves: weighted ensembles of time-sampled trajectories.

A :class:`PathEnsemble` is the particle-level stand-in for a law on paths.
When velocity tracks are present they define the positions through the
left-endpoint rule ``x[j+1] = x[j] + z[j] * (t[j+1] - t[j])``, which is applied
with exactly the same floating-point operations everywhere (integration,
translation, validation).  Positions, velocities and the grid may also be
numpy object arrays of :class:`fractions.Fraction` for exact computations.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import exact as _exact
from .errors import MarginalMismatch, MissingVelocities, NonFiniteField, TooLarge, ValidationError
from .measure import MERGE_TOL, DiscreteMeasure, _component_labels
from .transport import Coupling, align_left

DEFAULT_GRID_POINTS = 11


def uniform_grid(m_steps: int = DEFAULT_GRID_POINTS - 1, horizon: float = 1.0,
                 exact: bool = False) -> np.ndarray:
    if exact:
        h = Fraction(horizon)
        return np.array([h * Fraction(j, m_steps) for j in range(m_steps + 1)], dtype=object)
    return np.linspace(0.0, horizon, m_steps + 1)


def _step(x, z, dt):
    return x + z * dt


class PathEnsemble:
    """Weighted trajectories ``x_r(t_0), ..., x_r(t_M)`` in R^d.

    Parameters
    ----------
    grid : array, shape (M+1,)
        Strictly increasing sample times starting at 0.
    weights : sequence
        Trajectory weights, summing to one.  Rationals switch on exact weights.
    positions : array, shape (N, M+1, d)
    velocities : array, shape (N, M+1, d), optional
    labels : sequence of int, optional
        Randomisation labels; trajectories sharing a start point and a label
        are the same particle class.
    """

    __slots__ = ("grid", "weights", "exact", "positions", "velocities", "labels")

    def __init__(self, grid, weights, positions, velocities=None, labels=None, *, check: bool = True):
        grid = np.asarray(grid)
        pos = np.asarray(positions)
        if pos.dtype != object:
            pos = pos.astype(float)
        if pos.ndim == 2:
            pos = pos[:, :, None]
        if grid.ndim != 1 or len(grid) < 2:
            raise ValidationError("grid needs at least two times")
        if pos.ndim != 3 or pos.shape[1] != len(grid):
            raise ValidationError(f"positions must have shape (N, {len(grid)}, d), got {pos.shape}")
        n = pos.shape[0]
        weights = list(weights)
        if len(weights) != n:
            raise ValidationError(f"{n} trajectories but {len(weights)} weights")
        if all(isinstance(w, (Fraction, int, str)) and not isinstance(w, bool) for w in weights):
            exact = tuple(Fraction(w) for w in weights)
            w = np.array([float(v) for v in exact])
            if sum(exact) != 1:
                raise ValidationError("exact trajectory weights must sum to 1")
        else:
            exact = None
            w = np.asarray(weights, dtype=float)
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValidationError(f"trajectory weights sum to {w.sum()!r}")
        if np.any(w < 0):
            raise ValidationError("negative trajectory weight")
        if velocities is not None:
            vel = np.asarray(velocities)
            if vel.dtype != object:
                vel = vel.astype(float)
            if vel.ndim == 2:
                vel = vel[:, :, None]
            if vel.shape != pos.shape:
                raise ValidationError("velocities must have the same shape as positions")
        else:
            vel = None
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64).reshape(-1)
            if len(labels) != n:
                raise ValidationError("one label per trajectory required")
        self.grid = grid
        self.weights = w
        self.exact = exact
        self.positions = pos
        self.velocities = vel
        self.labels = labels
        if check:
            self.validate()

    def validate(self) -> None:
        dt = np.diff(self.grid)
        if np.any(dt <= 0):
            raise ValidationError("grid must be strictly increasing")
        if self.positions.dtype != object and not np.all(np.isfinite(self.positions)):
            raise ValidationError("non-finite positions")
        if self.velocities is not None:
            nxt = _step(self.positions[:, :-1], self.velocities[:, :-1], dt[None, :, None])
            if not np.all(nxt == self.positions[:, 1:]):
                raise ValidationError("positions do not follow the left-endpoint rule")

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_velocities(cls, starts, velocities, grid, weights, labels=None) -> PathEnsemble:
        """Integrate velocity samples from start points with the left-endpoint rule."""
        grid = np.asarray(grid)
        vel = np.asarray(velocities)
        if vel.dtype != object:
            vel = vel.astype(float)
        if vel.ndim == 2:
            vel = vel[:, :, None]
        starts = np.asarray(starts)
        if starts.ndim == 1:
            starts = starts.reshape(-1, vel.shape[2])
        n, m1, d = vel.shape
        dtype = object if (vel.dtype == object or grid.dtype == object or starts.dtype == object) else float
        pos = np.empty((n, m1, d), dtype=dtype)
        pos[:, 0] = starts
        dt = np.diff(grid)
        for j in range(m1 - 1):
            pos[:, j + 1] = _step(pos[:, j], vel[:, j], dt[j])
        return cls(grid, weights, pos, vel, labels)

    @classmethod
    def constant(cls, m: DiscreteMeasure, grid=None) -> PathEnsemble:
        grid = uniform_grid() if grid is None else np.asarray(grid)
        vel = np.zeros((m.size, len(grid), m.dim))
        weights = list(m.exact) if m.exact is not None else m.weights
        return cls.from_velocities(m.atoms, vel, grid, weights)

    @classmethod
    def interpolation(cls, gamma: Coupling, grid=None) -> PathEnsemble:
        """Straight lines ``(1-t) x + t y`` over the support of a coupling (no velocity tracks)."""
        grid = uniform_grid() if grid is None else np.asarray(grid, dtype=float)
        x, y, mass = gamma.pairs()
        t = grid[None, :, None]
        pos = (1.0 - t) * x[:, None, :] + t * y[:, None, :]
        weights = list(gamma.exact) if gamma.exact is not None else mass
        return cls(grid, weights, pos)

    # -- accessors ----------------------------------------------------------

    @property
    def n_paths(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    @property
    def is_exact_arithmetic(self) -> bool:
        return self.positions.dtype == object

    def weight_values(self):
        return list(self.exact) if self.exact is not None else self.weights

    def float_positions(self) -> np.ndarray:
        return self.positions.astype(float) if self.is_exact_arithmetic else self.positions

    def marginal_at_index(self, j: int) -> DiscreteMeasure:
        return DiscreteMeasure(self.float_positions()[:, j], self.weight_values())

    def marginal_at(self, t: float) -> DiscreteMeasure:
        """Position law at time ``t``, linear between grid samples, merged."""
        grid = self.grid.astype(float)
        t = float(t)
        if t < grid[0] - 1e-15 or t > grid[-1] + 1e-15:
            raise ValueError(f"t={t} outside [{grid[0]}, {grid[-1]}]")
        j = int(np.searchsorted(grid, t, side="right") - 1)
        j = min(max(j, 0), len(grid) - 1)
        pos = self.float_positions()
        if t == grid[j] or j == len(grid) - 1:
            pts = pos[:, j]
        else:
            lam = (t - grid[j]) / (grid[j + 1] - grid[j])
            pts = (1.0 - lam) * pos[:, j] + lam * pos[:, j + 1]
        return DiscreteMeasure(pts, self.weight_values())

    def endpoint_coupling(self) -> Coupling:
        """Law of ``(x(t_0), x(t_M))`` as a coupling of the two end marginals."""
        pos = self.float_positions()
        return Coupling.from_pairs(pos[:, 0], pos[:, -1], self.weight_values())

    def kinetic_energy(self):
        """``sum_r w_r sum_{j<M} |z_r(t_j)|^2 (t_{j+1} - t_j)``."""
        if self.velocities is None:
            raise MissingVelocities("ensemble has no velocity tracks")
        dt = np.diff(self.grid)
        sq = (self.velocities[:, :-1] ** 2).sum(axis=2)
        per_path = (sq * dt[None, :]).sum(axis=1)
        if self.exact is not None and self.is_exact_arithmetic:
            return sum((w * e for w, e in zip(self.exact, per_path)), Fraction(0))
        return float(np.asarray(per_path, dtype=float) @ self.weights)

    def reversed(self) -> PathEnsemble:
        """Time reversal ``t -> T - t`` (velocity tracks are dropped)."""
        grid = self.grid[-1] - self.grid[::-1]
        return PathEnsemble(grid, self.weight_values(), self.positions[:, ::-1], None,
                            self.labels, check=False)

    def law_key(self, decimals: int = 11) -> tuple:
        """Hashable law: identical trajectories pooled, weights summed, sorted."""
        pooled: dict = {}
        pos = self.float_positions()
        rounded = np.round(pos, decimals) + 0.0
        for r in range(self.n_paths):
            key = tuple(rounded[r].ravel().tolist())
            w = self.exact[r] if self.exact is not None else self.weights[r]
            pooled[key] = pooled.get(key, 0) + w
        if self.exact is None:
            return tuple(sorted((k, round(float(v), 12)) for k, v in pooled.items()))
        return tuple(sorted(pooled.items()))

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        trajs = []
        pos = self.float_positions()
        vel = None if self.velocities is None else np.asarray(self.velocities, dtype=float)
        exact_arith = self.is_exact_arithmetic
        for r in range(self.n_paths):
            item = {"w": float(self.weights[r]), "x": pos[r].tolist()}
            if self.exact is not None:
                item["w_exact"] = str(self.exact[r])
            if vel is not None:
                item["z"] = vel[r].tolist()
            if self.labels is not None:
                item["k"] = int(self.labels[r])
            if exact_arith:
                item["x_exact"] = [[str(v) for v in row] for row in self.positions[r]]
                if self.velocities is not None:
                    item["z_exact"] = [[str(v) for v in row] for row in self.velocities[r]]
            trajs.append(item)
        out = {"grid": np.asarray(self.grid, dtype=float).tolist(), "trajectories": trajs}
        if exact_arith:
            out["grid_exact"] = [str(v) for v in self.grid]
        return out

    @classmethod
    def from_dict(cls, data: dict, where: str = "ensemble") -> PathEnsemble:
        if not isinstance(data, dict) or "grid" not in data or "trajectories" not in data:
            raise ValidationError(f"{where}: needs 'grid' and 'trajectories'")
        trajs = data["trajectories"]
        if not trajs:
            raise ValidationError(f"{where}.trajectories: empty")
        has_z = ["z" in t for t in trajs]
        has_k = ["k" in t for t in trajs]
        if len(set(has_z)) != 1 or len(set(has_k)) != 1:
            raise ValidationError(f"{where}: 'z' and 'k' must be given for all trajectories or none")
        for r, t in enumerate(trajs):
            if "w" not in t or "x" not in t:
                raise ValidationError(f"{where}.trajectories[{r}]: needs 'w' and 'x'")
        weights = [t["w_exact"] if "w_exact" in t else t["w"] for t in trajs]
        try:
            pos = np.array([t["x"] for t in trajs], dtype=float)
            vel = np.array([t["z"] for t in trajs], dtype=float) if has_z[0] else None
        except ValueError as exc:
            raise ValidationError(f"{where}: ragged trajectory arrays ({exc})") from None
        labels = [t["k"] for t in trajs] if has_k[0] else None
        grid = np.array(data["grid"], dtype=float)
        if "grid_exact" in data:
            # exact arithmetic: rebuild rationals so the stepping rule still holds exactly
            try:
                grid = np.array([Fraction(v) for v in data["grid_exact"]], dtype=object)
                pos = np.array([[[Fraction(v) for v in row] for row in t["x_exact"]] for t in trajs],
                               dtype=object)
                if vel is not None:
                    vel = np.array([[[Fraction(v) for v in row] for row in t["z_exact"]] for t in trajs],
                                   dtype=object)
            except (KeyError, ValueError, TypeError, ZeroDivisionError) as exc:
                raise ValidationError(f"{where}: bad exact coordinates ({exc})") from None
        try:
            return cls(grid, weights, pos, vel, labels)
        except ValidationError as exc:
            raise ValidationError(f"{where}: {exc}") from None

    def to_csv(self) -> str:
        """One row per (trajectory, grid time)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.dim
        header = ["path", "t"] + [f"x_{k + 1}" for k in range(d)]
        if self.velocities is not None:
            header += [f"z_{k + 1}" for k in range(d)]
        w.writerow(header + ["w"])
        pos = self.float_positions()
        vel = None if self.velocities is None else np.asarray(self.velocities, dtype=float)
        grid = np.asarray(self.grid, dtype=float)
        for r in range(self.n_paths):
            for j, t in enumerate(grid):
                row = [r, format(t, ".17g")] + [format(v, ".17g") for v in pos[r, j]]
                if vel is not None:
                    row += [format(v, ".17g") for v in vel[r, j]]
                w.writerow(row + [format(self.weights[r], ".17g")])
        return buf.getvalue()

    def __repr__(self) -> str:
        return (f"PathEnsemble(paths={self.n_paths}, steps={len(self.grid) - 1}, dim={self.dim}, "
                f"velocities={self.velocities is not None})")


# -- superposition at particle level --------------------------------------------

def from_velocity_field(m0: DiscreteMeasure, field: Callable, grid=None) -> PathEnsemble:
    """One trajectory per atom of ``m0`` driven by ``field(t, X) -> V``.

    ``field`` receives the time and the ``(N, d)`` array of current positions
    and returns the ``(N, d)`` velocities; the left-endpoint rule integrates.
    """
    grid = uniform_grid() if grid is None else np.asarray(grid)
    n, d = m0.size, m0.dim
    exact_arith = grid.dtype == object
    dtype = object if exact_arith else float
    pos = np.empty((n, len(grid), d), dtype=dtype)
    vel = np.empty((n, len(grid), d), dtype=dtype)
    pos[:, 0] = _exact.to_fractions(m0.atoms) if exact_arith else m0.atoms
    dt = np.diff(grid)
    for j in range(len(grid)):
        v = np.asarray(field(grid[j], pos[:, j]))
        v = np.broadcast_to(v.reshape(n, -1) if v.size == n * d else v, (n, d))
        if not np.all(np.isfinite(v.astype(float))):
            raise NonFiniteField(f"field is not finite at t={grid[j]}")
        vel[:, j] = v
        if j + 1 < len(grid):
            pos[:, j + 1] = _step(pos[:, j], vel[:, j], dt[j])
    weights = list(m0.exact) if m0.exact is not None else m0.weights
    return PathEnsemble(grid, weights, pos, vel, np.arange(n))


@dataclass(frozen=True)
class EulerianField:
    """Weight-averaged velocity at every (grid time, merged position atom)."""

    grid: np.ndarray
    atoms: tuple       # per grid index, array (n_j, d)
    values: tuple      # per grid index, array (n_j, d)

    def at(self, j: int):
        return self.atoms[j], self.values[j]

    def value(self, j: int, x, tol: float = MERGE_TOL) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        atoms, values = self.atoms[j], self.values[j]
        dist = np.linalg.norm(atoms - x[None, :], axis=1)
        k = int(np.argmin(dist))
        if dist[k] > tol:
            raise KeyError(f"no ensemble mass at {x} at grid index {j}")
        return values[k]

    def __call__(self, j: int, x) -> np.ndarray:
        return self.value(j, x)


def eulerian_field(eta: PathEnsemble, tol: float = MERGE_TOL) -> EulerianField:
    """Conditional mean of the velocity given the position, per grid time."""
    if eta.velocities is None:
        raise MissingVelocities("ensemble has no velocity tracks")
    pos = eta.float_positions()
    vel = np.asarray(eta.velocities, dtype=float)
    atoms, values = [], []
    for j in range(len(eta.grid)):
        labels = _component_labels(pos[:, j], tol)
        reps, inv = np.unique(labels, return_inverse=True)
        mass = np.zeros(len(reps))
        np.add.at(mass, inv, eta.weights)
        mom = np.zeros((len(reps), eta.dim))
        np.add.at(mom, inv, eta.weights[:, None] * vel[:, j])
        atoms.append(pos[reps, j])
        values.append(mom / mass[:, None])
    return EulerianField(np.asarray(eta.grid, dtype=float), tuple(atoms), tuple(values))


# -- translation ----------------------------------------------------------------

def _start_groups(eta: PathEnsemble, m0: DiscreteMeasure) -> list[list[int]]:
    """Trajectory indices grouped by the atom of ``m0`` they start from."""
    from scipy.spatial import cKDTree

    dist, idx = cKDTree(m0.atoms).query(eta.float_positions()[:, 0], k=1)
    if np.any(dist > MERGE_TOL * 10):
        raise MarginalMismatch("trajectory start not in the initial marginal")
    groups: list[list[int]] = [[] for _ in range(m0.size)]
    for r, i in enumerate(idx):
        groups[i].append(r)
    return groups


def _fiber_inputs(eta: PathEnsemble, gamma0: Coupling):
    m0 = eta.marginal_at_index(0)
    gamma0 = align_left(gamma0, m0)
    groups = _start_groups(eta, m0)
    targets: list[list[int]] = [[] for _ in range(m0.size)]
    for k, i in enumerate(gamma0.rows):
        targets[i].append(k)
    return m0, gamma0, groups, targets


def _build_translation(eta: PathEnsemble, gamma0: Coupling, cells):
    """``cells``: list of (trajectory r, coupling cell k, weight) -> coupling curve, translated."""
    d = eta.dim
    exact_arith = eta.is_exact_arithmetic
    rs = [c[0] for c in cells]
    ks = [c[1] for c in cells]
    weights = [c[2] for c in cells]
    y0 = gamma0.right.atoms[gamma0.cols[ks]]
    if exact_arith:
        y0 = np.array(_exact.to_fractions(y0), dtype=object)
    vel = eta.velocities[rs]
    grid = eta.grid
    dt = np.diff(grid)
    ypos = np.empty(vel.shape, dtype=object if exact_arith else float)
    ypos[:, 0] = y0
    for j in range(len(grid) - 1):
        ypos[:, j + 1] = _step(ypos[:, j], vel[:, j], dt[j])
    labels = eta.labels[rs] if eta.labels is not None else np.asarray(rs, dtype=np.int64)
    translated = PathEnsemble(grid, weights, ypos, vel, labels)
    xpos = eta.positions[rs]
    pair_pos = np.concatenate([xpos, ypos], axis=2)
    pair_vel = np.concatenate([vel, vel], axis=2)
    coupling_curve = PathEnsemble(grid, weights, pair_pos, pair_vel, labels)
    assert pair_pos.shape[2] == 2 * d
    return coupling_curve, translated


def translate(eta: PathEnsemble, gamma0: Coupling):
    """Translate ``eta`` along the initial coupling ``gamma0``.

    Every trajectory starting at ``x`` is paired with every target ``y`` of
    ``x`` under ``gamma0`` (conditionally independent given ``x``), and the
    partner ``Y`` is integrated with the same velocity samples, so
    ``X(t_j) - Y(t_j)`` stays equal to ``X_0 - Y_0``.

    Returns ``(coupling_curve, translated)``: the pair process on ``R^{2d}``
    and its second component.
    """
    if eta.velocities is None:
        raise MissingVelocities("translation needs velocity tracks")
    m0, g0, groups, targets = _fiber_inputs(eta, gamma0)
    use_exact = eta.exact is not None and g0.exact is not None and m0.exact is not None
    cells = []
    for i in range(m0.size):
        for r in groups[i]:
            for k in targets[i]:
                if use_exact:
                    w = eta.exact[r] * g0.exact[k] / m0.exact[i]
                else:
                    w = eta.weights[r] * g0.mass[k] / m0.weights[i]
                cells.append((r, k, w))
    if not use_exact:
        total = sum(c[2] for c in cells)
        cells = [(r, k, w / total) for r, k, w in cells]
    return _build_translation(eta, g0, cells)


def enumerate_translations(eta: PathEnsemble, gamma0: Coupling, limit: int = 1000) -> list[PathEnsemble]:
    """Translations whose initial gluing is a per-fiber vertex, plus the canonical one.

    Deduplicated by law of the translated curve.  Needs exact weights on
    ``eta`` and ``gamma0``; each fiber polytope is limited to 20 cells.
    """
    if eta.velocities is None:
        raise MissingVelocities("translation needs velocity tracks")
    m0, g0, groups, targets = _fiber_inputs(eta, gamma0)
    if eta.exact is None or g0.exact is None or m0.exact is None:
        from .errors import NonRationalWeights

        raise NonRationalWeights("enumeration needs exact weights")
    per_fiber = []
    for i in range(m0.size):
        a = [eta.exact[r] / m0.exact[i] for r in groups[i]]
        b = [g0.exact[k] / m0.exact[i] for k in targets[i]]
        if len(a) * len(b) > _exact.MAX_CELLS:
            raise TooLarge(f"fiber {i}: {len(a)}x{len(b)} polytope too large")
        per_fiber.append(_exact.vertex_plans(a, b))
    out = [translate(eta, gamma0)[1]]
    seen = {out[0].law_key()}
    for combo in itertools.product(*per_fiber):
        if len(out) >= limit:
            break
        cells = []
        for i, plan in enumerate(combo):
            for (a, b), v in plan:
                cells.append((groups[i][a], targets[i][b], m0.exact[i] * v))
        translated = _build_translation(eta, g0, cells)[1]
        key = translated.law_key()
        if key not in seen:
            seen.add(key)
            out.append(translated)
    return out


def max_constant_difference_deviation(coupling_curve: PathEnsemble) -> float:
    """``max_{r,j} |(X_r(t_j) - Y_r(t_j)) - (X_r(0) - Y_r(0))|``."""
    d = coupling_curve.dim // 2
    pos = coupling_curve.positions
    diff = pos[:, :, :d] - pos[:, :, d:]
    dev = diff - diff[:, :1, :]
    return float(np.max(np.abs(dev.astype(float)))) if dev.size else 0.0


def split(coupling_curve: PathEnsemble) -> tuple[PathEnsemble, PathEnsemble]:
    """The two component ensembles of a pair process."""
    d = coupling_curve.dim // 2
    w = coupling_curve.weight_values()
    vel = coupling_curve.velocities
    return (PathEnsemble(coupling_curve.grid, w, coupling_curve.positions[:, :, :d],
                         None if vel is None else vel[:, :, :d], coupling_curve.labels),
            PathEnsemble(coupling_curve.grid, w, coupling_curve.positions[:, :, d:],
                         None if vel is None else vel[:, :, d:], coupling_curve.labels))


def branch_ensemble(start, branch_velocities: Sequence, weights: Sequence, grid) -> PathEnsemble:
    """Trajectories leaving one point with constant velocities, one label per branch."""
    grid = np.asarray(grid)
    start = np.atleast_1d(np.asarray(start, dtype=float))
    n = len(branch_velocities)
    d = start.shape[0]
    vel = np.empty((n, len(grid), d), dtype=object if grid.dtype == object else float)
    for r, v in enumerate(branch_velocities):
        vel[r, :] = np.atleast_1d(v)
    starts = np.tile(start, (n, 1))
    if grid.dtype == object:
        starts = np.array(_exact.to_fractions(starts), dtype=object)
    return PathEnsemble.from_velocities(starts, vel, grid, list(weights), np.arange(n))
