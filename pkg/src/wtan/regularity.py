"""First-order regularity of functionals on discrete measures.

A :class:`Functional` knows its value and its derivative, the deterministic
tangent element ``x -> delta_{phi_mu(x)}``.  Since the derivative is
deterministic, its parallel transport along a coupling is unique and the
Hölder quotient has the closed form
``(int |phi_mu(x) - phi_nu(y)|^2 gamma(dx, dy))^{1/2} / C_2(gamma)^alpha``.

Suprema over couplings are estimated by sampling, so every estimate here is a
lower bound and comes with the coupling that attains it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import MarginalMismatch, ZeroCost
from .measure import DiscreteMeasure
from .parallel_pool import pmap
from .tangent import TangentElement
from .transport import Coupling, align_left, solve_ot

SMALL_INSTANCE_CELLS = 20


@dataclass(frozen=True, eq=False)
class Functional:
    """``U(mu)`` with its derivative field ``phi_mu`` evaluated on the atoms of ``mu``.

    ``scale`` multiplies both; keeping it separate makes seminorm estimates of
    ``c * U`` exactly ``|c|`` times those of ``U``.  ``curvature`` is a bound
    ``K`` with ``|U(nu) - U(mu) - int (y - x).phi_mu(x) dgamma| <= K C_2(gamma)^2``
    when one is known.
    """

    value_fn: Callable[[DiscreteMeasure], float]
    gradient_fn: Callable[[DiscreteMeasure], np.ndarray]
    tag: str
    curvature: float | None = None
    scale: float = 1.0
    params: dict = field(default_factory=dict)

    def evaluate(self, mu: DiscreteMeasure) -> float:
        return self.scale * float(self.value_fn(mu))

    def gradient(self, mu: DiscreteMeasure) -> np.ndarray:
        g = np.asarray(self.gradient_fn(mu), dtype=float).reshape(mu.size, mu.dim)
        return g if self.scale == 1.0 else self.scale * g

    def derivative(self, mu: DiscreteMeasure) -> TangentElement:
        return TangentElement.deterministic(mu, self.gradient(mu))

    def __call__(self, mu: DiscreteMeasure) -> float:
        return self.evaluate(mu)

    def __mul__(self, c: float) -> Functional:
        k = None if self.curvature is None else abs(c) * self.curvature
        return Functional(self.value_fn, self.gradient_fn, self.tag, k, self.scale * float(c),
                          self.params)

    __rmul__ = __mul__

    def __add__(self, other: Functional) -> Functional:
        k = None
        if self.curvature is not None and other.curvature is not None:
            k = self.curvature + other.curvature
        return Functional(lambda m: self.evaluate(m) + other.evaluate(m),
                          lambda m: self.gradient(m) + other.gradient(m),
                          f"Sum({self.tag}, {other.tag})", k)

    def is_heuristic(self, mu: DiscreteMeasure) -> bool:
        """Whether the derivative at ``mu`` is only a surrogate (see ``half_squared_w2_to``)."""
        check = self.params.get("heuristic_check")
        return bool(check(mu)) if check is not None else False


def linear(V: Callable, grad_V: Callable, hessian_bound: float | None = None,
           name: str = "V") -> Functional:
    """``U(mu) = int V dmu`` with derivative ``grad V``; ``V`` acts row-wise on ``(n, d)``."""
    return Functional(lambda m: float(m.weights @ np.asarray(V(np.array(m.atoms)), dtype=float).reshape(-1)),
                      lambda m: grad_V(np.array(m.atoms)),
                      f"Linear({name})", hessian_bound)


def interaction(W: Callable, grad_W: Callable, hessian_bound: float | None = None,
                name: str = "W") -> Functional:
    """``U(mu) = 1/2 iint W(x - y) mu(dx) mu(dy)`` for an even ``W``.

    The derivative is ``phi_mu(x) = int grad W(x - y) mu(dy)``.  ``W`` and
    ``grad_W`` act on ``(..., d)`` arrays of differences.
    """

    def value(m: DiscreteMeasure) -> float:
        diff = m.atoms[:, None, :] - m.atoms[None, :, :]
        vals = np.asarray(W(diff), dtype=float).reshape(m.size, m.size)
        return 0.5 * float(m.weights @ vals @ m.weights)

    def grad(m: DiscreteMeasure) -> np.ndarray:
        diff = m.atoms[:, None, :] - m.atoms[None, :, :]
        g = np.asarray(grad_W(diff), dtype=float).reshape(m.size, m.size, m.dim)
        return np.einsum("ijk,j->ik", g, m.weights)

    return Functional(value, grad, f"Interaction({name})", hessian_bound)


def _barycentric(mu: DiscreteMeasure, ref: DiscreteMeasure):
    plan, w2 = solve_ot(mu, ref, 2.0)
    bary = np.zeros((mu.size, mu.dim))
    np.add.at(bary, plan.rows, plan.mass[:, None] * ref.atoms[plan.cols])
    return bary / mu.weights[:, None], w2


def optimal_coupling_is_unique(mu: DiscreteMeasure, ref: DiscreteMeasure) -> bool | None:
    """Uniqueness of the W_2-optimal coupling on small exact instances, else ``None``."""
    if mu.exact is None or ref.exact is None or mu.size * ref.size > SMALL_INSTANCE_CELLS:
        return None
    from .exact import plan_cost_sq, to_fractions, vertex_plans

    xs, ys = to_fractions(mu.atoms), to_fractions(ref.atoms)
    costs = [plan_cost_sq(p, xs, ys) for p in vertex_plans(mu.exact, ref.exact)]
    best = min(costs)
    return sum(1 for c in costs if c == best) == 1


def half_squared_w2_to(ref: DiscreteMeasure) -> Functional:
    """``U(mu) = 1/2 W_2^2(mu, ref)`` with the surrogate derivative ``x - b(x)``.

    ``b`` is the barycentric projection of the optimal coupling returned by
    the solver.  The derivative is only meaningful when that coupling is unique;
    :meth:`Functional.is_heuristic` reports ``True`` when uniqueness fails or
    cannot be checked (instances above 20 cells or with float weights).
    """

    def value(m):
        return 0.5 * solve_ot(m, ref, 2.0)[1] ** 2

    def grad(m):
        bary, _ = _barycentric(m, ref)
        return np.array(m.atoms) - bary

    def heuristic(m):
        return optimal_coupling_is_unique(m, ref) is not True

    return Functional(value, grad, "HalfSquaredW2ToRef", None,
                      params={"reference": ref, "heuristic_check": heuristic})


def constant(c: float) -> Functional:
    return Functional(lambda m: c, lambda m: np.zeros((m.size, m.dim)), f"Constant({c})", 0.0)


def half_square_potential() -> Functional:
    """``Linear(1/2 |x|^2)``: derivative is the identity, Hessian bound 1."""
    return linear(lambda x: 0.5 * np.sum(x * x, axis=1), lambda x: x, 1.0, "1/2|x|^2")


def half_square_interaction() -> Functional:
    """``Interaction(1/2 |x|^2)``: ``phi_mu(x) = x - mean(mu)``, Hessian bound 1."""
    return interaction(lambda z: 0.5 * np.sum(z * z, axis=-1), lambda z: z, 1.0, "1/2|x|^2")


# -- quotients ------------------------------------------------------------------

def _check_coupling(mu: DiscreteMeasure, nu: DiscreteMeasure, gamma: Coupling) -> Coupling:
    gamma = align_left(gamma, mu)
    idx = gamma.right.index_in(nu)
    if idx is None or np.max(np.abs(gamma.right.weights - nu.weights[idx])) > 1e-10:
        raise MarginalMismatch("right marginal of the coupling differs from nu")
    return Coupling(mu, nu, gamma.rows, idx[gamma.cols], gamma.mass,
                    exact=gamma.exact if nu.exact is not None else None, check=False)


def taylor_remainder(U: Functional, mu: DiscreteMeasure, nu: DiscreteMeasure, gamma: Coupling) -> float:
    """``|U(nu) - U(mu) - int (y - x).phi_mu(x) gamma(dx, dy)|``."""
    gamma = _check_coupling(mu, nu, gamma)
    phi = U.gradient(mu)
    x, y, m = gamma.pairs()
    first = float(m @ np.sum((y - x) * phi[gamma.rows], axis=1))
    return abs(U.evaluate(nu) - U.evaluate(mu) - first)


def _sq_displacements(gamma: Coupling) -> np.ndarray:
    x, y, _ = gamma.pairs()
    return np.sum((x - y) ** 2, axis=1)


def _gradient_mismatch(U: Functional, gamma: Coupling) -> float:
    """``(int |phi_mu(x) - phi_nu(y)|^2 dgamma)^{1/2}`` for the unscaled functional."""
    base = U if U.scale == 1.0 else Functional(U.value_fn, U.gradient_fn, U.tag, None, 1.0, U.params)
    phi = base.gradient(gamma.left)
    psi = base.gradient(gamma.right)
    diff = phi[gamma.rows] - psi[gamma.cols]
    return float(np.sqrt(gamma.mass @ np.sum(diff**2, axis=1)))


def _quotients(U: Functional, gamma: Coupling, alpha: float) -> tuple[float, float]:
    d2 = _sq_displacements(gamma)
    c2sq = float(gamma.mass @ d2)
    if c2sq <= 0:
        raise ZeroCost("coupling has zero transport cost")
    num = _gradient_mismatch(U, gamma)
    den_i = np.sqrt(c2sq) if alpha == 1.0 else c2sq ** (alpha / 2.0)
    den_j = np.sqrt(float(gamma.mass @ d2**alpha)) if alpha != 1.0 else np.sqrt(c2sq)
    # scale last: rounded multiplication by |c| is monotone, so maxima scale exactly
    c = abs(U.scale)
    return c * (num / den_i), c * (num / den_j)


def holder_quotient(U: Functional, mu: DiscreteMeasure, nu: DiscreteMeasure, gamma: Coupling,
                    alpha: float) -> float:
    """Distance between the transported derivative and the derivative at ``nu``, over ``C_2^alpha``."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    return _quotients(U, _check_coupling(mu, nu, gamma), alpha)[0]


def j_quotient(U: Functional, mu: DiscreteMeasure, nu: DiscreteMeasure, gamma: Coupling,
               alpha: float) -> float:
    """Same numerator over ``C_{2 alpha}(gamma)^alpha``."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    return _quotients(U, _check_coupling(mu, nu, gamma), alpha)[1]


# -- sampling -------------------------------------------------------------------

FAMILIES = ("graph", "split", "optimal", "product")


@dataclass(frozen=True)
class CouplingSampler:
    """Seeded generator of couplings with ``0 < C_2 <= 1``.

    Sample ``i`` uses ``numpy.random.default_rng([seed, i])`` and the family
    ``FAMILIES[i % 4]``, so samples do not depend on evaluation order.
    """

    seed: int = 0
    dim: int = 1
    max_atoms: int = 5
    spread: float = 2.0
    families: tuple = FAMILIES

    def base_measure(self, rng: np.random.Generator) -> DiscreteMeasure:
        from fractions import Fraction

        n = int(rng.integers(1, self.max_atoms + 1))
        atoms = rng.normal(scale=self.spread, size=(n, self.dim))
        k = rng.integers(1, 6, size=n)
        return DiscreteMeasure(atoms, [Fraction(int(v), int(k.sum())) for v in k])

    def sample(self, i: int) -> Coupling:
        rng = np.random.default_rng([self.seed, i])
        family = self.families[i % len(self.families)]
        mu = self.base_measure(rng)
        xs, ys, ms = getattr(self, "_" + family)(mu, rng)
        xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
        disp = ys - xs
        c2 = float(np.sqrt(np.asarray([float(m) for m in ms]) @ np.sum(disp**2, axis=1)))
        if c2 == 0.0:
            disp = rng.normal(size=disp.shape)
            c2 = float(np.sqrt(np.asarray([float(m) for m in ms]) @ np.sum(disp**2, axis=1)))
        target = float(rng.uniform(1e-3, 1.0))
        ys = xs + disp * (target / c2)
        return Coupling.from_pairs(xs, ys, ms)

    def samples(self, budget: int) -> list[Coupling]:
        return [self.sample(i) for i in range(budget)]

    # families: each returns lists of pairs (x, y, mass)

    def _graph(self, mu, rng):
        a = rng.normal(size=self.dim)
        b = rng.normal(size=self.dim)
        c = rng.uniform(0, 2 * np.pi, size=self.dim)
        xs = np.array(mu.atoms)
        ys = xs + a * np.sin(b * xs + c)
        return xs, ys, list(mu.exact)

    def _split(self, mu, rng):
        from fractions import Fraction

        xs, ys, ms = [], [], []
        i = int(rng.integers(mu.size))
        symmetric = bool(rng.integers(2))
        h = rng.normal(size=self.dim)
        for k in range(mu.size):
            x = mu.atoms[k]
            if k == i:
                h2 = -h if symmetric else rng.normal(size=self.dim)
                q = Fraction(int(rng.integers(1, 4)), 4)
                xs += [x, x]
                ys += [x + h, x + h2]
                ms += [mu.exact[k] * q, mu.exact[k] * (1 - q)]
            else:
                xs.append(x)
                ys.append(x + 0.1 * rng.normal(size=self.dim) * rng.integers(2))
                ms.append(mu.exact[k])
        return xs, ys, ms

    def _optimal(self, mu, rng):
        from fractions import Fraction

        m = int(rng.integers(1, self.max_atoms + 1))
        pts = mu.atoms[rng.integers(mu.size, size=m)] + rng.normal(scale=0.5, size=(m, self.dim))
        k = rng.integers(1, 6, size=m)
        nu = DiscreteMeasure(pts, [Fraction(int(v), int(k.sum())) for v in k])
        plan, _ = solve_ot(mu, nu, 2.0)
        x, y, mass = plan.pairs()
        return x, y, list(plan.exact) if plan.exact is not None else mass

    def _product(self, mu, rng):
        m = int(rng.integers(1, 4))
        pts = mu.mean() + rng.normal(scale=0.5, size=(m, self.dim))
        nu = DiscreteMeasure(pts)
        plan = Coupling.product(mu, nu)
        x, y, mass = plan.pairs()
        return x, y, list(plan.exact) if plan.exact is not None else mass


class Estimate(NamedTuple):
    value: float            # lower bound of the supremum
    coupling: Coupling | None
    index: int              # sample index attaining it (-1 if none)
    scores: np.ndarray


def _estimate(U, sampler, alpha, budget, which, threads):
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")

    def score(i):
        g = sampler.sample(i)
        return _quotients(U, g, alpha)[which]

    scores = np.array(pmap(score, range(budget), threads))
    k = int(np.argmax(scores))  # first maximum in sample order
    return Estimate(float(scores[k]), sampler.sample(k), k, scores)


def estimate_I_alpha(U: Functional, sampler: CouplingSampler, alpha: float, budget: int,
                     threads: int | None = None) -> Estimate:
    """Largest Hölder quotient over ``budget`` sampled couplings (a lower bound of ``I_alpha``)."""
    return _estimate(U, sampler, alpha, budget, 0, threads)


def estimate_J_alpha(U: Functional, sampler: CouplingSampler, alpha: float, budget: int,
                     threads: int | None = None) -> Estimate:
    """As :func:`estimate_I_alpha` with denominator ``C_{2 alpha}(gamma)^alpha``."""
    return _estimate(U, sampler, alpha, budget, 1, threads)


def c1alpha_norm(U: Functional, sampler: CouplingSampler, alpha: float, budget: int,
                 threads: int | None = None) -> float:
    """Sampled ``sup |U| + sup d_mu(D U(mu), 0) + I_alpha`` over the sampler's measures.

    Each term is a lower bound of its supremum.
    """
    base = Functional(U.value_fn, U.gradient_fn, U.tag, None, 1.0, U.params)

    def terms(i):
        g = sampler.sample(i)
        sup_u = max(abs(base.evaluate(g.left)), abs(base.evaluate(g.right)))
        sup_d = 0.0
        for m in (g.left, g.right):
            phi = base.gradient(m)
            sup_d = max(sup_d, float(np.sqrt(m.weights @ np.sum(phi**2, axis=1))))
        return sup_u, sup_d, _quotients(base, g, alpha)[0]

    vals = np.array(pmap(terms, range(budget), threads))
    return abs(U.scale) * float(vals[:, 0].max() + vals[:, 1].max() + vals[:, 2].max())


def lipschitz_ratio(U: Functional, mu: DiscreteMeasure) -> float:
    """``max |phi_mu(x) - phi_mu(x')| / |x - x'|`` over pairs of atoms of ``mu``."""
    if mu.size < 2:
        return 0.0
    phi = U.gradient(mu)
    i, j = np.triu_indices(mu.size, 1)
    num = np.linalg.norm(phi[i] - phi[j], axis=1)
    den = np.linalg.norm(mu.atoms[i] - mu.atoms[j], axis=1)
    return float(np.max(num / den))


def regularity_report(U: Functional, sampler: CouplingSampler, alpha: float, budget: int,
                      threads: int | None = None) -> dict:
    est_i = estimate_I_alpha(U, sampler, alpha, budget, threads)
    est_j = estimate_J_alpha(U, sampler, alpha, budget, threads)
    return {
        "alpha": alpha,
        "I_est": est_i.value,
        "J_est": est_j.value,
        "argmax_coupling": est_i.coupling.to_dict() if est_i.coupling is not None else None,
        "samples": budget,
        "seed": sampler.seed,
    }


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True)
