"""Worked examples with known answers, shared by ``wtan repro`` and the tests.

Every ``repro_*`` function rebuilds one example, compares it against the
expected values and returns a :class:`Report` with one entry per check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy.stats import norm

from .control import lipschitz_sweep, shift_pairs, split_target_gap, sweep_csv, theorem_problem
from .curves import PathEnsemble, branch_ensemble, enumerate_translations, translate, uniform_grid
from .exact import pairing_w2_squared
from .measure import DiscreteMeasure
from .parallel import enumerate_transports, path_dependence_check, transport_along_coupling
from .tangent import TangentElement, comparison_details, sheaf_distance, tangent_distance_sq
from .transport import Coupling

HALF = Fraction(1, 2)
QUARTER = Fraction(1, 4)


@dataclass
class Report:
    example: str
    checks: list = field(default_factory=list)      # (name, passed, detail)
    data: dict = field(default_factory=dict)
    curve: tuple | None = None                      # (xlabel, ylabel, xs, ys) for SVG output
    csv: str | None = None

    def check(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append((name, bool(passed), detail))

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def to_dict(self) -> dict:
        return {"example": self.example, "passed": self.passed,
                "checks": [{"name": n, "passed": ok, "detail": d} for n, ok, d in self.checks],
                "data": self.data}


# -- parallel transport -----------------------------------------------------------------

def wml_instance():
    """``mu = delta_0``, fiber ``(delta_0 + delta_2)/2``, endpoints ``+-1`` with mass 1/2."""
    mu = DiscreteMeasure.dirac([0.0])
    psi = TangentElement(mu, [DiscreteMeasure([[0.0], [2.0]], [HALF, HALF])])
    gamma = Coupling.from_pairs([[0.0], [0.0]], [[1.0], [-1.0]], [HALF, HALF])
    return psi, gamma


def wml_expected() -> dict:
    """Laws as sorted ``((direction, velocity), weight)`` over trajectories ``(s t, z)``."""
    return {
        "W": (((-1, 2), HALF), ((1, 0), HALF)),
        "M": (((-1, 0), HALF), ((1, 2), HALF)),
        "L": (((-1, 0), QUARTER), ((-1, 2), QUARTER), ((1, 0), QUARTER), ((1, 2), QUARTER)),
    }


def transport_signature(res) -> tuple:
    """``((end position, velocity), weight)`` per trajectory, pooled and sorted."""
    pos = res.ensemble.float_positions()
    pooled: dict = {}
    for r in range(res.ensemble.n_paths):
        key = (int(round(pos[r, -1, 0])), int(round(pos[r, -1, 1])))
        pooled[key] = pooled.get(key, 0) + res.ensemble.exact[r]
    return tuple(sorted(pooled.items()))


def repro_nonuniq_transport() -> Report:
    rep = Report("nonuniq-transport")
    psi, gamma = wml_instance()
    found = enumerate_transports(psi, gamma)
    sigs = [transport_signature(r) for r in found]
    expected = wml_expected()
    rep.check("three_laws", len(found) == 3, f"{len(found)} laws")
    rep.check("match_WML", sorted(sigs) == sorted(expected.values()))
    names = {v: k for k, v in expected.items()}
    rep.data["laws"] = [{"name": names.get(s, "?"),
                         "trajectories": [{"end": list(k), "weight": str(w)} for k, w in s]} for s in sigs]
    return rep


def normal_quantiles(n: int = 200) -> DiscreteMeasure:
    return DiscreteMeasure.empirical(norm.ppf((np.arange(n) + 0.5) / n))


def repro_dirac_arrival() -> Report:
    rep = Report("dirac-arrival")
    mu = normal_quantiles(200)
    psi = TangentElement.deterministic(mu, lambda x: x)
    gamma = Coupling.product(mu, DiscreteMeasure.dirac([0.0]))
    res = transport_along_coupling(psi, gamma)
    arr = res.arrival
    rep.check("arrival_base_is_dirac", arr.base.size == 1 and float(arr.base.atoms[0, 0]) == 0.0)
    rep.check("arrival_fiber_is_mu", arr.fibers[0].isclose(mu, atol=1e-12))
    rep.check("arrival_not_deterministic", not arr.is_deterministic)
    rep.data["fiber_size"] = arr.fibers[0].size
    rep.data["fiber_second_moment"] = float(arr.fibers[0].weights @ arr.fibers[0].atoms[:, 0] ** 2)
    return rep


def path_dependence_instance(n: int = 401):
    mu = DiscreteMeasure.uniform_grid(n)
    grid = uniform_grid()
    u = np.array(mu.atoms)
    w = list(mu.exact)
    eta1 = PathEnsemble.from_velocities(u, np.zeros((n, len(grid), 1)), grid, w)
    pos2 = grid[None, :, None] * u[:, None, :] + (1 - grid[None, :, None]) * (1 - u[:, None, :])
    eta2 = PathEnsemble(grid, w, pos2)
    psi = TangentElement.deterministic(mu, lambda x: x)
    return psi, eta1, eta2


def repro_path_dependence() -> Report:
    rep = Report("path-dependence")
    psi, eta1, eta2 = path_dependence_instance()
    last = len(eta1.grid) - 1
    same_ends = all(eta1.marginal_at_index(j).isclose(eta2.marginal_at_index(j), atol=1e-12)
                    for j in (0, last))
    rep.check("same_endpoint_marginals", same_ends)
    # intermediate laws differ: eta2 is uniform on an interval of length |2t - 1|
    mid = eta2.marginal_at(0.5)
    rep.data["eta2_support_size_at_half"] = mid.size
    rep.data["same_marginals_at_grid_times"] = [
        bool(eta1.marginal_at_index(j).isclose(eta2.marginal_at_index(j), atol=1e-12))
        for j in range(last + 1)]
    rep.check("transports_differ", path_dependence_check(psi, eta1, eta2))
    rep.check("self_comparison_equal", not path_dependence_check(psi, eta1, eta1))
    # time change of straight lines keeps the endpoint coupling
    grid = eta2.grid
    s = grid**2
    pos = eta2.positions
    repar = PathEnsemble(grid, eta2.weight_values(),
                         (1 - s)[None, :, None] * pos[:, :1] + s[None, :, None] * pos[:, -1:])
    rep.check("reparametrization_equal", not path_dependence_check(psi, eta2, repar))
    return rep


# -- tangent comparison -------------------------------------------------------------------

def lambda_instance(n: int = 401, lam: float = 2.0):
    mu = DiscreteMeasure.uniform_grid(n)
    phi = TangentElement.deterministic(mu, lambda x: lam * x)
    psi = TangentElement.deterministic(mu, lambda x: lam * (1 - x))
    return phi, psi


def repro_lambda_e_d() -> Report:
    rep = Report("lambda-E-D")
    phi, psi = lambda_instance()
    det = comparison_details(phi, psi)
    d2 = sheaf_distance(phi, psi) ** 2
    dmu2 = tangent_distance_sq(phi, psi)
    rep.check("E_close_to_4/3", abs(det.value - 4 / 3) <= 2e-2, f"E={det.value:.17g}")
    rep.check("D2_at_most_1/3", d2 <= 1 / 3 + 2e-3, f"D^2={d2:.17g}")
    rep.check("E_exceeds_D2", det.value > d2)
    rep.data.update({"E": det.value, "D_sq": d2, "d_mu_sq": dmu2, "geodesic_multiplier": det.multiplier,
                     "atoms": 401, "lambda": 2.0})
    return rep


# -- translations ---------------------------------------------------------------------------

def two_atom_translation_instance(steps: int = 30):
    """``m_t = (delta_{-4+3t} + delta_{4-3t})/2`` translated along ``-4 -> -1``, ``4 -> 1``."""
    grid = uniform_grid(steps, exact=True)
    n = len(grid)
    vel = np.empty((2, n, 1), dtype=object)
    vel[0, :, 0] = Fraction(3)
    vel[1, :, 0] = Fraction(-3)
    starts = np.array([[Fraction(-4)], [Fraction(4)]], dtype=object)
    eta = PathEnsemble.from_velocities(starts, vel, grid, [HALF, HALF], [0, 1])
    gamma0 = Coupling.from_pairs([[-4.0], [4.0]], [[-1.0], [1.0]], [HALF, HALF])
    return eta, gamma0


def expected_translated_w2_sq(t: Fraction) -> Fraction:
    return Fraction(9) if t <= Fraction(1, 3) else (5 - 6 * t) ** 2


def translated_distance_curve(eta: PathEnsemble, translated: PathEnsemble) -> list:
    """Exact ``W_2^2(m_t, m~_t)`` at every grid time (pairing enumeration)."""
    return [pairing_w2_squared(eta.positions[:, j], translated.positions[:, j])
            for j in range(len(eta.grid))]


def repro_translated_distance() -> Report:
    rep = Report("translated-distance")
    eta, gamma0 = two_atom_translation_instance()
    pair, tr = translate(eta, gamma0)
    curve = translated_distance_curve(eta, tr)
    expected = [expected_translated_w2_sq(t) for t in eta.grid]
    err = max(abs(a - b) for a, b in zip(curve, expected))
    rep.check("exact_match", err == 0, f"max error {err}")
    dev = np.max(np.abs((pair.positions[:, :, 0] - pair.positions[:, :, 1])
                        - (pair.positions[:, :1, 0] - pair.positions[:, :1, 1])))
    rep.check("constant_difference", dev == 0)
    ts = [float(t) for t in eta.grid]
    rep.data["curve"] = [{"t": str(t), "W2_sq": str(v)} for t, v in zip(eta.grid, curve)]
    rep.curve = ("t", "W2^2", ts, [float(v) for v in curve])
    rep.csv = "t,W2_sq\n" + "".join(f"{format(a, '.17g')},{format(float(v), '.17g')}\n"
                                    for a, v in zip(ts, curve))
    return rep


def split_translation_instance():
    """``m_t = (delta_t + delta_{-t})/2`` from two branches at 0, ``gamma0 = delta_0 x (delta_{-2} + delta_2)/2``."""
    eta = branch_ensemble(0.0, [1.0, -1.0], [HALF, HALF], uniform_grid())
    gamma0 = Coupling.from_pairs([[0.0], [0.0]], [[-2.0], [2.0]], [HALF, HALF])
    return eta, gamma0


def translation_signature(tr: PathEnsemble) -> tuple:
    """``((start, velocity), weight)`` per translated trajectory, pooled and sorted."""
    pooled: dict = {}
    for r in range(tr.n_paths):
        key = (int(round(float(tr.positions[r, 0, 0]))), int(round(float(tr.velocities[r, 0, 0]))))
        pooled[key] = pooled.get(key, 0) + tr.exact[r]
    return tuple(sorted(pooled.items()))


def split_translation_expected() -> dict:
    return {
        "eta1": (((-2, -1), HALF), ((2, 1), HALF)),
        "eta2": (((-2, 1), HALF), ((2, -1), HALF)),
        "eta3": (((-2, -1), QUARTER), ((-2, 1), QUARTER), ((2, -1), QUARTER), ((2, 1), QUARTER)),
    }


def repro_split_translations() -> Report:
    rep = Report("split-translations")
    eta, gamma0 = split_translation_instance()
    found = enumerate_translations(eta, gamma0)
    sigs = [translation_signature(t) for t in found]
    expected = split_translation_expected()
    rep.check("three_laws", len(found) == 3, f"{len(found)} laws")
    rep.check("match_eta123", sorted(sigs) == sorted(expected.values()))
    names = {v: k for k, v in expected.items()}
    rep.data["laws"] = [{"name": names.get(s, "?"),
                         "trajectories": [{"start": k[0], "velocity": k[1], "weight": str(w)} for k, w in s]}
                        for s in sigs]
    return rep


def nonsmooth_split_instance(steps: int = 20):
    """Exercise curve ``(delta_{f(s)} + delta_{-f(s)})/2``, ``f(s) = max(-1/2 - s, 0, -1/2 + s)``.

    Time ``t in [0, 1]`` is mapped to ``s = 2t - 1 in [-1, 1]``: the particles
    at ``+-1/2`` meet at 0, rest, and separate again.  After the meeting either
    particle may take either side, which gives two ensembles with the same
    marginals.  Translating both along the deterministic coupling
    ``-1/2 -> -1/2``, ``1/2 -> 5`` gives different curves.

    Returns ``(straight, crossed, gamma0)``.
    """
    grid = uniform_grid(steps, exact=True)
    speed = np.empty(len(grid), dtype=object)
    for j, t in enumerate(grid):
        speed[j] = Fraction(-2) if t < Fraction(1, 4) else (Fraction(0) if t < Fraction(3, 4) else Fraction(2))
    down = np.empty((2, len(grid), 1), dtype=object)
    down[0, :, 0] = speed
    down[1, :, 0] = -speed
    crossed = down.copy()
    late = np.array([t >= Fraction(3, 4) for t in grid])
    crossed[0, late, 0] = -speed[late]
    crossed[1, late, 0] = speed[late]
    starts = np.array([[HALF], [-HALF]], dtype=object)
    straight = PathEnsemble.from_velocities(starts, down, grid, [HALF, HALF], [0, 1])
    cross = PathEnsemble.from_velocities(starts, crossed, grid, [HALF, HALF], [0, 1])
    gamma0 = Coupling.from_pairs([[-0.5], [0.5]], [[-0.5], [5.0]], [HALF, HALF])
    return straight, cross, gamma0


# -- control ----------------------------------------------------------------------------------

SWEEP_DELTAS = (0.5, 0.1, 0.02)


def sweep_base_measure() -> DiscreteMeasure:
    return DiscreteMeasure([[-1.0], [-0.3], [0.4], [1.2]])


def repro_lipschitz_sweep(threads: int | None = None) -> Report:
    rep = Report("lipschitz-sweep")
    P = theorem_problem()
    rows = lipschitz_sweep(P, shift_pairs(sweep_base_measure(), SWEEP_DELTAS), threads=threads)
    rep.check("ratio_bounded", all(r.ratio_ok() for r in rows),
              f"max ratio {max(r.ratio for r in rows):.17g}")
    rep.check("translated_certificate", all(r.certificate_ok() for r in rows))
    rep.check("coercivity", all(r.coercivity_ok for r in rows))
    rep.check("trivial_pair_zero", rows[0].ratio == 0.0)
    rep.data["rows"] = [r.__dict__ for r in rows]
    rep.data["max_ratio"] = max(r.ratio for r in rows)
    rep.csv = sweep_csv(rows)
    rep.curve = ("delta", "ratio", list(SWEEP_DELTAS), [r.ratio for r in rows[1:]])
    return rep


def repro_split_target_gap(threads: int | None = None) -> Report:
    rep = Report("split-target-gap")
    det, rnd = split_target_gap(threads=threads)
    rep.check("deterministic_at_least_0.9", det.value >= 0.9, f"V={det.value:.17g}")
    rep.check("randomized_at_most_0.1", rnd.value <= 0.1, f"U={rnd.value:.17g}")
    rep.check("gap_at_least_0.8", det.value - rnd.value >= 0.8)
    rep.check("U_le_V", rnd.value <= det.value)
    rep.data.update({"V_deterministic": det.value, "U_randomized": rnd.value,
                     "gap": det.value - rnd.value, "budget": 50, "particles": 16, "steps": 40,
                     "eps": 0.05, "values_are_upper_bounds": True})
    return rep


REPRO: dict[str, Callable[..., Report]] = {
    "nonuniq-transport": repro_nonuniq_transport,
    "lambda-E-D": repro_lambda_e_d,
    "translated-distance": repro_translated_distance,
    "split-translations": repro_split_translations,
    "dirac-arrival": repro_dirac_arrival,
    "path-dependence": repro_path_dependence,
    "lipschitz-sweep": repro_lipschitz_sweep,
    "split-target-gap": repro_split_target_gap,
}

THREADED = {"lipschitz-sweep", "split-target-gap"}


def run_repro(example: str, threads: int | None = None) -> Report:
    fn = REPRO[example]
    return fn(threads=threads) if example in THREADED else fn()
