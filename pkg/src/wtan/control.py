"""Particle-level mean-field optimal control.

A control problem is discretised on a uniform time grid.  A candidate control
is a set of branches: weighted particles with their own velocity sequences,
integrated with the left-endpoint rule of :class:`~wtan.curves.PathEnsemble`.

* ``deterministic`` mode ties every particle to the atom it starts from, so
  particles at the same place move together (a velocity field).
* ``randomized`` mode splits each atom into ``branches`` particles with
  independent velocities (a randomised control with labels fixed in time).

Values returned by :func:`solve_value` come from local optimisation and are
upper bounds of the discrete infimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize

from .curves import PathEnsemble, translate, uniform_grid
from .errors import BudgetExhausted, GridMismatch, MissingVelocities, ValidationError
from .measure import DiscreteMeasure, _component_labels
from .parallel_pool import pmap
from .transport import Coupling, cost, particle_w2_sq, solve_ot

FD_STEP = 1e-5
MODES = ("deterministic", "randomized")


# -- scalar functions on R^d -------------------------------------------------------

@dataclass(frozen=True)
class ScalarFn:
    """Library scalar function ``f: R^d -> R`` with its gradient, applied row-wise.

    Tags: ``zero``; ``quadratic`` (``coef |x - c|^2``); ``sin_sq``
    (``coef sum_k sin^2 x_k``); ``gauss_well`` (``coef (1 - exp(-|x - c|^2))``).
    """

    tag: str = "zero"
    coef: float = 1.0
    center: tuple | None = None

    def __post_init__(self):
        if self.tag not in ("zero", "quadratic", "sin_sq", "gauss_well"):
            raise ValidationError(f"unknown function tag '{self.tag}'")

    def _shift(self, x):
        return x if self.center is None else x - np.asarray(self.center, dtype=float)

    def value(self, x: np.ndarray) -> np.ndarray:
        if self.tag == "zero":
            return np.zeros(x.shape[0])
        if self.tag == "quadratic":
            y = self._shift(x)
            return self.coef * np.sum(y * y, axis=1)
        if self.tag == "sin_sq":
            return self.coef * np.sum(np.sin(x) ** 2, axis=1)
        y = self._shift(x)
        return self.coef * (1.0 - np.exp(-np.sum(y * y, axis=1)))

    def grad(self, x: np.ndarray) -> np.ndarray:
        if self.tag == "zero":
            return np.zeros_like(x)
        if self.tag == "quadratic":
            return 2.0 * self.coef * self._shift(x)
        if self.tag == "sin_sq":
            return self.coef * np.sin(2.0 * x)
        y = self._shift(x)
        return 2.0 * self.coef * y * np.exp(-np.sum(y * y, axis=1))[:, None]

    def to_dict(self) -> dict:
        out = {"tag": self.tag, "coef": self.coef}
        if self.center is not None:
            out["center"] = list(self.center)
        return out

    @classmethod
    def from_dict(cls, data, where: str = "function") -> ScalarFn:
        if not isinstance(data, dict) or "tag" not in data:
            raise ValidationError(f"{where}: needs a 'tag'")
        center = data.get("center")
        try:
            return cls(data["tag"], float(data.get("coef", 1.0)),
                       None if center is None else tuple(float(c) for c in center))
        except ValidationError as exc:
            raise ValidationError(f"{where}: {exc}") from None


# -- measure terms evaluated on weighted particle clouds -------------------------

@dataclass(frozen=True)
class LinearTerm:
    """``coef * int f dm``."""

    f: ScalarFn
    coef: float = 1.0

    def value_grad(self, x, w):
        return self.coef * float(w @ self.f.value(x)), self.coef * w[:, None] * self.f.grad(x)

    def to_dict(self):
        return {"tag": "linear", "coef": self.coef, "f": self.f.to_dict()}


@dataclass(frozen=True)
class W2Term:
    """``coef * min(cap, W_2(m, ref)^power)`` with ``power`` 1 or 2."""

    ref: DiscreteMeasure
    power: int = 1
    cap: float | None = None
    coef: float = 1.0

    def value_grad(self, x, w):
        v2, g2 = particle_w2_sq(x, w, self.ref)
        if self.power == 2:
            v, g = v2, g2
        else:
            v = math.sqrt(v2)
            g = g2 / (2.0 * v) if v > 0 else np.zeros_like(g2)
        if self.cap is not None and v >= self.cap:
            v, g = self.cap, np.zeros_like(g)
        return self.coef * v, self.coef * g

    def to_dict(self):
        out = {"tag": "w2", "coef": self.coef, "power": self.power, "ref": self.ref.to_dict()}
        if self.cap is not None:
            out["cap"] = self.cap
        return out


def term_from_dict(data, where: str):
    if not isinstance(data, dict) or "tag" not in data:
        raise ValidationError(f"{where}: needs a 'tag'")
    if data["tag"] == "linear":
        return LinearTerm(ScalarFn.from_dict(data.get("f", {"tag": "zero"}), f"{where}.f"),
                          float(data.get("coef", 1.0)))
    if data["tag"] == "w2":
        if "ref" not in data:
            raise ValidationError(f"{where}: w2 term needs 'ref'")
        power = int(data.get("power", 1))
        if power not in (1, 2):
            raise ValidationError(f"{where}.power: must be 1 or 2")
        cap = data.get("cap")
        return W2Term(DiscreteMeasure.from_dict(data["ref"], f"{where}.ref"), power,
                      None if cap is None else float(cap), float(data.get("coef", 1.0)))
    raise ValidationError(f"{where}: unknown term tag '{data['tag']}'")


# -- problem ----------------------------------------------------------------------

@dataclass(frozen=True)
class ControlProblem:
    """Running cost ``kinetic |z|^2 + V(x) + sum_k F_k(m)`` and terminal cost ``G(m_T)``.

    ``constant`` is the declared constant ``C`` of the Lipschitz estimate:
    ``|G| <= C``, ``G`` is ``C``-Lipschitz in ``W_2`` and
    ``L >= |z|^2 / C - C``.  ``beta`` maps ``(x, a)`` arrays to velocities when
    the control acts indirectly; the default is ``z = a``.
    """

    horizon: float = 1.0
    steps: int = 20
    kinetic: float = 1.0
    potential: ScalarFn = field(default_factory=ScalarFn)
    mean_field: tuple = ()
    terminal: object = field(default_factory=lambda: LinearTerm(ScalarFn()))
    constant: float = 1.0
    beta: Callable | None = None
    velocity_bound: float = 10.0

    @property
    def grid(self) -> np.ndarray:
        return uniform_grid(self.steps, self.horizon)

    def running_cost(self, x: np.ndarray, z: np.ndarray, w: np.ndarray) -> np.ndarray:
        """``L(x_b, z_b, m)`` per particle for the cloud ``m = sum w_b delta_{x_b}``."""
        mf = sum((t.value_grad(x, w)[0] for t in self.mean_field), 0.0)
        return self.kinetic * np.sum(z * z, axis=1) + self.potential.value(x) + mf

    def terminal_cost(self, m: DiscreteMeasure) -> float:
        return self.terminal.value_grad(np.array(m.atoms), np.array(m.weights))[0]

    def to_dict(self) -> dict:
        return {"horizon": self.horizon, "steps": self.steps, "kinetic": self.kinetic,
                "potential": self.potential.to_dict(),
                "mean_field": [t.to_dict() for t in self.mean_field],
                "terminal": self.terminal.to_dict(), "constant": self.constant,
                "velocity_bound": self.velocity_bound}

    @classmethod
    def from_dict(cls, data, where: str = "problem") -> ControlProblem:
        if not isinstance(data, dict):
            raise ValidationError(f"{where}: expected an object")
        try:
            steps = int(data.get("steps", 20))
            horizon = float(data.get("horizon", 1.0))
        except (TypeError, ValueError):
            raise ValidationError(f"{where}: 'steps' and 'horizon' must be numbers") from None
        if steps < 1 or horizon <= 0:
            raise ValidationError(f"{where}: need steps >= 1 and horizon > 0")
        mf = data.get("mean_field", [])
        if not isinstance(mf, list):
            raise ValidationError(f"{where}.mean_field: list required")
        return cls(horizon=horizon, steps=steps, kinetic=float(data.get("kinetic", 1.0)),
                   potential=ScalarFn.from_dict(data.get("potential", {"tag": "zero"}), f"{where}.potential"),
                   mean_field=tuple(term_from_dict(t, f"{where}.mean_field[{k}]") for k, t in enumerate(mf)),
                   terminal=term_from_dict(data.get("terminal", {"tag": "linear"}), f"{where}.terminal"),
                   constant=float(data.get("constant", 1.0)),
                   velocity_bound=float(data.get("velocity_bound", 10.0)))


@dataclass(frozen=True)
class ControlledEnsemble:
    """Path ensemble with velocity tracks, in ``deterministic`` or ``randomized`` mode."""

    ensemble: PathEnsemble
    mode: str

    def tying_ok(self, tol: float = 0.0) -> bool:
        """Particles at the same position at a grid time share the velocity sample there."""
        if self.mode != "deterministic":
            return True
        pos = self.ensemble.float_positions()
        vel = np.asarray(self.ensemble.velocities, dtype=float)
        for j in range(len(self.ensemble.grid)):
            labels = _component_labels(pos[:, j], tol)
            if not np.all(vel[:, j] == vel[labels, j]):
                return False
        return True


# -- cost evaluation ----------------------------------------------------------------

def _paths(P: ControlProblem, x0: np.ndarray, a: np.ndarray):
    """Positions and velocities of branches driven by controls ``a`` of shape (nb, M, d)."""
    grid = P.grid
    dt = np.diff(grid)
    nb, M, d = a.shape
    x = np.empty((nb, M + 1, d))
    z = np.empty((nb, M + 1, d))
    x[:, 0] = x0
    for j in range(M):
        z[:, j] = a[:, j] if P.beta is None else np.asarray(P.beta(x[:, j], a[:, j]), dtype=float)
        x[:, j + 1] = x[:, j] + z[:, j] * dt[j]
    z[:, M] = z[:, M - 1]
    return x, z


def _cost_and_grad(P: ControlProblem, x: np.ndarray, z: np.ndarray, w: np.ndarray,
                   want_grad: bool = True):
    """Left-endpoint cost of particle paths and its gradient with respect to ``z[:, :M]``."""
    dt = np.diff(P.grid)
    M = len(dt)
    total = 0.0
    gx = np.zeros_like(x) if want_grad else None
    for j in range(M):
        xj, zj = x[:, j], z[:, j]
        run = P.kinetic * float(w @ np.sum(zj * zj, axis=1)) + float(w @ P.potential.value(xj))
        g = w[:, None] * P.potential.grad(xj) if want_grad else None
        for t in P.mean_field:
            v, gt = t.value_grad(xj, w)
            run += v
            if want_grad:
                g = g + gt
        total += dt[j] * run
        if want_grad:
            gx[:, j] = dt[j] * g
    v, gT = P.terminal.value_grad(x[:, M], w)
    total += v
    if not want_grad:
        return total, None
    gx[:, M] = gT
    # d x_k / d z_j = dt_j for k > j
    tail = np.cumsum(gx[:, ::-1], axis=1)[:, ::-1]
    gz = 2.0 * P.kinetic * w[:, None, None] * z[:, :M] * dt[None, :, None] + tail[:, 1:] * dt[None, :, None]
    return total, gz


def evaluate_cost(P: ControlProblem, e: ControlledEnsemble | PathEnsemble) -> float:
    """Running cost by left-endpoint quadrature plus terminal cost at the final marginal."""
    ens = e.ensemble if isinstance(e, ControlledEnsemble) else e
    if ens.velocities is None:
        raise MissingVelocities("control cost needs velocity tracks")
    grid = np.asarray(ens.grid, dtype=float)
    if len(grid) != P.steps + 1 or np.max(np.abs(grid - P.grid)) > 1e-12:
        raise GridMismatch(f"ensemble grid does not match the problem grid ({P.steps} steps on [0, {P.horizon}])")
    return _cost_and_grad(P, ens.float_positions(), np.asarray(ens.velocities, dtype=float),
                          ens.weights, want_grad=False)[0]


def kinetic_action(e: ControlledEnsemble | PathEnsemble) -> float:
    """``I = sum_b w_b sum_j |z_bj|^2 dt_j``."""
    ens = e.ensemble if isinstance(e, ControlledEnsemble) else e
    return float(ens.kinetic_energy())


# -- optimisation ------------------------------------------------------------------

@dataclass(frozen=True)
class _Layout:
    x0: np.ndarray          # (nb, d)
    weights: list           # exact or float weights, length nb
    var_of: np.ndarray      # (nb,) variable block of each branch
    labels: np.ndarray      # (nb,)

    @property
    def w(self) -> np.ndarray:
        return np.array([float(v) for v in self.weights])

    @property
    def n_vars(self) -> int:
        return int(self.var_of.max()) + 1


def _layout(m0: DiscreteMeasure, mode: str, branches: int) -> _Layout:
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}")
    B = 1 if mode == "deterministic" else int(branches)
    if B < 1:
        raise ValidationError("branches must be positive")
    idx = np.repeat(np.arange(m0.size), B)
    if m0.exact is not None:
        weights = [m0.exact[i] / B for i in idx]
    else:
        weights = list(m0.weights[idx] / B)
    return _Layout(np.array(m0.atoms)[idx], weights, np.arange(len(idx)), np.arange(len(idx)))


def _objective(P: ControlProblem, lay: _Layout, gradient: str):
    w = lay.w
    nv = lay.n_vars
    M, d = P.steps, lay.x0.shape[1]

    def expand(v):
        return v.reshape(nv, M, d)[lay.var_of]

    def value(v):
        x, z = _paths(P, lay.x0, expand(v))
        return _cost_and_grad(P, x, z, w, want_grad=False)[0]

    def fun(v):
        if gradient == "fd" or P.beta is not None:
            f0 = value(v)
            g = np.empty_like(v)
            h = FD_STEP * max(1.0, float(np.max(np.abs(v))) if v.size else 1.0)
            for k in range(v.size):
                vp, vm = v.copy(), v.copy()
                vp[k] += h
                vm[k] -= h
                g[k] = (value(vp) - value(vm)) / (2 * h)
            return f0, g
        x, z = _paths(P, lay.x0, expand(v))
        f0, gz = _cost_and_grad(P, x, z, w)
        g = np.zeros((nv, M, d))
        np.add.at(g, lay.var_of, gz)
        return f0, g.ravel()

    return fun, value


class StartResult(NamedTuple):
    value: float
    controls: np.ndarray
    converged: bool


def _run_start(P: ControlProblem, lay: _Layout, v0: np.ndarray, maxiter: int, gradient: str) -> StartResult:
    fun, value = _objective(P, lay, gradient)
    f0 = value(v0)
    vb = P.velocity_bound
    res = minimize(fun, v0, jac=True, method="L-BFGS-B", bounds=[(-vb, vb)] * v0.size,
                   options={"maxiter": maxiter, "ftol": 1e-13, "gtol": 1e-10})
    v = np.asarray(res.x, dtype=float)
    f = value(v)
    if not f <= f0:
        return StartResult(f0, v0, bool(res.success))
    return StartResult(f, v, bool(res.success))


def _ensemble(P: ControlProblem, lay: _Layout, v: np.ndarray, mode: str) -> ControlledEnsemble:
    M, d = P.steps, lay.x0.shape[1]
    x, z = _paths(P, lay.x0, v.reshape(lay.n_vars, M, d)[lay.var_of])
    return ControlledEnsemble(PathEnsemble(P.grid, lay.weights, x, z, lay.labels), mode)


@dataclass(frozen=True)
class SolveResult:
    """Best control found.  ``value`` is an upper bound of the discrete value function."""

    value: float
    ensemble: ControlledEnsemble
    converged: bool
    start_values: tuple
    best_start: int
    source: str = "multistart"

    @property
    def kinetic_action(self) -> float:
        return kinetic_action(self.ensemble)


def solve_value(P: ControlProblem, m0: DiscreteMeasure, mode: str = "randomized", budget: int = 8,
                *, branches: int = 4, seed: int = 0, maxiter: int = 300, start_scale: float = 1.0,
                gradient: str = "analytic", threads: int | None = None, strict: bool = False,
                deterministic: SolveResult | None = None) -> SolveResult:
    """Multi-start local minimisation of the control cost from ``m0``.

    Start 0 is the zero control; start ``k >= 1`` draws controls from
    ``default_rng([seed, k])``.  The best start wins (first one on ties), so a
    larger budget never gives a larger value.  In randomized mode the
    deterministic solution (lifted to branches) is one of the candidates, so the
    randomized value never exceeds the deterministic one.
    """
    if budget < 1:
        raise ValidationError("budget must be at least 1")
    if m0.size > 200:
        raise ValidationError("initial measure limited to 200 atoms")
    lay = _layout(m0, mode, branches)
    size = lay.n_vars * P.steps * m0.dim

    def start(k):
        if k == 0:
            v0 = np.zeros(size)
        else:
            rng = np.random.default_rng([seed, k])
            v0 = np.clip(rng.normal(scale=start_scale, size=size), -P.velocity_bound, P.velocity_bound)
        return _run_start(P, lay, v0, maxiter, gradient)

    results = pmap(start, range(budget), threads)
    values = np.array([r.value for r in results])
    k = int(np.argmin(values))
    best = SolveResult(float(values[k]), _ensemble(P, lay, results[k].controls, mode),
                       results[k].converged, tuple(float(v) for v in values), k)
    if mode == "randomized":
        det = deterministic
        if det is None:
            det = solve_value(P, m0, "deterministic", budget, seed=seed, maxiter=maxiter,
                              start_scale=start_scale, gradient=gradient, threads=threads)
        if det.value <= best.value:
            best = SolveResult(det.value, lift(det.ensemble, branches), det.converged,
                               best.start_values, det.best_start, "deterministic")
    if strict and not any(r.converged for r in results):
        raise BudgetExhausted("no start converged within the iteration limit", best=best)
    return best


def lift(e: ControlledEnsemble, branches: int) -> ControlledEnsemble:
    """Copy every trajectory into ``branches`` equal-weight labelled branches."""
    ens = e.ensemble
    idx = np.repeat(np.arange(ens.n_paths), branches)
    w = ens.weight_values()
    weights = [w[i] / branches for i in idx]
    out = PathEnsemble(ens.grid, weights, ens.positions[idx], ens.velocities[idx], np.arange(len(idx)))
    return ControlledEnsemble(out, "randomized")


def polish(P: ControlProblem, e: ControlledEnsemble | PathEnsemble, mode: str = "randomized",
           maxiter: int = 300, gradient: str = "analytic") -> SolveResult:
    """Local minimisation started from an existing ensemble (velocities used as controls).

    In deterministic mode trajectories starting at the same point are tied.
    The result is never worse than the input.
    """
    ens = e.ensemble if isinstance(e, ControlledEnsemble) else e
    if ens.velocities is None:
        raise MissingVelocities("polishing needs velocity tracks")
    pos = ens.float_positions()
    vel = np.asarray(ens.velocities, dtype=float)
    if mode == "deterministic":
        labels = _component_labels(pos[:, 0], 0.0)
        reps, var_of = np.unique(labels, return_inverse=True)
    else:
        reps, var_of = np.arange(ens.n_paths), np.arange(ens.n_paths)
    labels = ens.labels if ens.labels is not None else np.arange(ens.n_paths)
    lay = _Layout(pos[:, 0], ens.weight_values(), np.asarray(var_of).reshape(-1), labels)
    v0 = vel[reps, :P.steps].ravel()
    r = _run_start(P, lay, v0, maxiter, gradient)
    start_value = evaluate_cost(P, ens)
    if start_value <= r.value and P.beta is None:
        return SolveResult(start_value, ControlledEnsemble(ens, mode), r.converged, (start_value,), 0, "input")
    return SolveResult(r.value, _ensemble(P, lay, r.controls, mode), r.converged, (r.value,), 0, "polish")


# -- Lipschitz verification -------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    pair_id: int
    W2: float
    U_m: float
    U_mprime: float
    translated_cost: float
    ratio: float
    certificate_rhs: float
    reverse_translated_cost: float
    reverse_certificate_rhs: float
    ratio_bound: float
    kinetic_I: float
    kinetic_I_prime: float
    coercivity_ok: bool

    def certificate_ok(self, tol: float = 1e-9) -> bool:
        return (self.translated_cost - self.U_m <= self.certificate_rhs + tol
                and self.reverse_translated_cost - self.U_mprime <= self.reverse_certificate_rhs + tol)

    def ratio_ok(self, tol: float = 1e-9) -> bool:
        return self.ratio <= self.ratio_bound + tol / max(self.W2, 1e-300) if self.W2 > 0 else True


CSV_COLUMNS = ("pair_id", "W2", "U_m", "U_mprime", "translated_cost", "ratio", "certificate_rhs")


def certificate(P: ControlProblem, I: float, w2: float) -> float:
    """``C (1 + sqrt(I)) (W_2 + T W_2)``."""
    return P.constant * (1.0 + math.sqrt(max(I, 0.0))) * (1.0 + P.horizon) * w2


def lipschitz_sweep(P: ControlProblem, pairs: Sequence, mode: str = "randomized", budget: int = 4,
                    *, branches: int = 2, seed: int = 0, rounds: int = 3,
                    threads: int | None = None) -> list[SweepRow]:
    """Solve both sides of every pair, cross-translate the solutions, report ratios.

    ``pairs`` holds ``(m, m_prime, gamma0)`` with ``gamma0`` a W_2-optimal
    coupling.  Each side's solution is translated along ``gamma0`` (or its
    transpose), polished and kept when it improves the other side; this repeats
    until nothing improves (at most ``rounds`` times).  Afterwards
    ``U(m') <= cost(translated)`` holds for the reported values.
    """
    rows = []
    for pid, (m, mp, g0) in enumerate(pairs):
        w2 = cost(g0, 2.0)
        r1 = solve_value(P, m, mode, budget, branches=branches, seed=seed, threads=threads)
        r2 = solve_value(P, mp, mode, budget, branches=branches, seed=seed, threads=threads)
        gT = g0.transpose()
        for _ in range(rounds):
            changed = False
            p12 = polish(P, translate(r1.ensemble.ensemble, g0)[1], mode)
            if p12.value < r2.value:
                r2, changed = p12, True
            p21 = polish(P, translate(r2.ensemble.ensemble, gT)[1], mode)
            if p21.value < r1.value:
                r1, changed = p21, True
            if not changed:
                break
        t12 = evaluate_cost(P, translate(r1.ensemble.ensemble, g0)[1])
        t21 = evaluate_cost(P, translate(r2.ensemble.ensemble, gT)[1])
        I1, I2 = r1.kinetic_action, r2.kinetic_action
        c1, c2 = certificate(P, I1, w2), certificate(P, I2, w2)
        ratio = abs(r1.value - r2.value) / w2 if w2 > 0 else 0.0
        bound = P.constant * (1.0 + math.sqrt(max(I1, I2))) * (1.0 + P.horizon)
        C = P.constant
        coercive = I1 <= C * (C + r1.value) + 1e-12 and I2 <= C * (C + r2.value) + 1e-12
        rows.append(SweepRow(pid, w2, r1.value, r2.value, t12, ratio, c1, t21, c2, bound, I1, I2,
                             bool(coercive)))
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in rows:
        vals = [str(r.pair_id)] + [format(getattr(r, c), ".17g") for c in CSV_COLUMNS[1:]]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def shift_pairs(m: DiscreteMeasure, deltas: Sequence[float]) -> list:
    """``(m, m + delta, optimal coupling)`` for each shift, plus the trivial pair ``(m, m)``."""
    out = [(m, m, Coupling.identity(m))]
    for delta in deltas:
        mp = m.shifted(np.full(m.dim, delta))
        out.append((m, mp, solve_ot(m, mp, 2.0)[0]))
    return out


def check_hypotheses(P: ControlProblem, samples: int = 50, seed: int = 0, dim: int = 1) -> dict:
    """Check the declared constant on sampled measures, pairs and running-cost points."""
    C = P.constant
    g_bound = 0.0
    g_lip = 0.0
    l_gap = math.inf
    for k in range(samples):
        rng = np.random.default_rng([seed, k])
        n = int(rng.integers(1, 6))
        m = DiscreteMeasure(rng.normal(scale=2.0, size=(n, dim)))
        mp = DiscreteMeasure(np.array(m.atoms) + rng.normal(scale=0.5, size=(n, dim)))
        gm, gmp = P.terminal_cost(m), P.terminal_cost(mp)
        g_bound = max(g_bound, abs(gm), abs(gmp))
        w2 = solve_ot(m, mp, 2.0)[1]
        if w2 > 0:
            g_lip = max(g_lip, abs(gm - gmp) / w2)
        x = rng.normal(scale=3.0, size=(8, dim))
        z = rng.normal(scale=3.0, size=(8, dim))
        L = P.running_cost(x, z, np.full(8, 1 / 8))
        l_gap = min(l_gap, float(np.min(L - (np.sum(z * z, axis=1) / C - C))))
    return {"G_bounded": g_bound <= C, "G_lipschitz": g_lip <= C, "L_coercive": l_gap >= 0,
            "max_abs_G": g_bound, "max_G_ratio": g_lip, "min_L_margin": l_gap}


# -- library instances ----------------------------------------------------------------

def theorem_problem(steps: int = 20) -> ControlProblem:
    """Instance meeting the Lipschitz-theorem hypotheses with ``C = 1`` (d = 1, T = 1).

    ``L = |z|^2 + 1/2 sin^2 x + int 1/2 (1 - exp(-y^2)) m(dy)`` and
    ``G(m) = int (1 - exp(-(y - 1)^2)) m(dy)``.
    """
    return ControlProblem(horizon=1.0, steps=steps, kinetic=1.0,
                          potential=ScalarFn("sin_sq", 0.5),
                          mean_field=(LinearTerm(ScalarFn("gauss_well", 0.5, (0.0,))),),
                          terminal=LinearTerm(ScalarFn("gauss_well", 1.0, (1.0,))),
                          constant=1.0)


def split_target_problem(eps: float = 0.05, steps: int = 40) -> ControlProblem:
    """``L = eps |z|^2``, ``G(m) = min(1, W_2^2(m, (delta_{-1} + delta_1) / 2))``."""
    ref = DiscreteMeasure([[-1.0], [1.0]])
    return ControlProblem(horizon=1.0, steps=steps, kinetic=eps,
                          terminal=W2Term(ref, power=2, cap=1.0), constant=1.0)


def lq_problem(steps: int = 20) -> ControlProblem:
    """``L = |z|^2``, ``G(m) = int |x|^2 dm``; from ``delta_1`` the value is 1/2."""
    return ControlProblem(horizon=1.0, steps=steps, kinetic=1.0,
                          terminal=LinearTerm(ScalarFn("quadratic", 1.0)), constant=1.0)


def lq_dp_oracle(x0: float = 1.0, steps: int = 10, h: float = 0.01, lo: float = -1.0,
                 hi: float = 2.0) -> float:
    """Dynamic programming for the 1-d LQ instance on a position lattice of spacing ``h``.

    Velocities are restricted to lattice moves ``k h / dt`` so positions stay
    on the lattice.
    """
    dt = 1.0 / steps
    xs = lo + h * np.arange(int(round((hi - lo) / h)) + 1)
    V = xs**2
    moves = xs[:, None] - xs[None, :]            # target - source
    run = (moves / dt) ** 2 * dt
    for _ in range(steps):
        V = np.min(run + V[:, None], axis=0)
    k = int(np.argmin(np.abs(xs - x0)))
    return float(V[k])


def split_target_gap(budget: int = 50, particles: int = 16, steps: int = 40, eps: float = 0.05,
                     seed: int = 0, threads: int | None = None) -> tuple[SolveResult, SolveResult]:
    """Deterministic-constrained and randomized values from ``delta_0``."""
    P = split_target_problem(eps, steps)
    m0 = DiscreteMeasure.dirac([0.0])
    det = solve_value(P, m0, "deterministic", budget, seed=seed, threads=threads)
    rnd = solve_value(P, m0, "randomized", budget, branches=particles, seed=seed, threads=threads,
                      deterministic=det)
    return det, rnd


__all__ = [
    "ControlProblem", "ControlledEnsemble", "LinearTerm", "W2Term", "ScalarFn", "SolveResult",
    "SweepRow", "certificate", "check_hypotheses", "evaluate_cost", "kinetic_action", "lift",
    "lipschitz_sweep", "lq_dp_oracle", "lq_problem", "polish", "shift_pairs", "solve_value",
    "split_target_gap", "split_target_problem", "sweep_csv", "theorem_problem",
]
