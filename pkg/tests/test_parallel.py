from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import random_exact_tangent, random_float_tangent, random_transport
from wtan.curves import PathEnsemble, uniform_grid
from wtan.errors import NonRationalWeights
from wtan.measure import DiscreteMeasure
from wtan.parallel import (Uniqueness, check_transport, classify_uniqueness, enumerate_transports,
                           path_dependence_check, reverse, transport_along_coupling,
                           transport_along_paths)
from wtan.tangent import TangentElement
from wtan.transport import Coupling, solve_ot

HALF, QUARTER = Fraction(1, 2), Fraction(1, 4)
seeds = st.integers(0, 2**31)


def wml():
    psi = TangentElement(DiscreteMeasure.dirac(0.0), [DiscreteMeasure([0.0, 2.0], [HALF, HALF])])
    gamma = Coupling.from_pairs([[0.0], [0.0]], [[1.0], [-1.0]], [HALF, HALF])
    return psi, gamma


def law(res):
    """Pooled ``((end position, velocity), weight)`` of a one-dimensional transport."""
    pos = res.ensemble.float_positions()
    out = {}
    for r in range(res.ensemble.n_paths):
        key = (float(pos[r, -1, 0]), float(pos[r, -1, 1]))
        out[key] = out.get(key, 0) + res.ensemble.exact[r]
    return sorted(out.items())


WML_LAWS = sorted([
    [((-1.0, 2.0), HALF), ((1.0, 0.0), HALF)],                                          # W
    [((-1.0, 0.0), HALF), ((1.0, 2.0), HALF)],                                          # M
    [((-1.0, 0.0), QUARTER), ((-1.0, 2.0), QUARTER), ((1.0, 0.0), QUARTER), ((1.0, 2.0), QUARTER)],  # L
])


def test_canonical_transport_is_product_law():
    psi, gamma = wml()
    res = transport_along_coupling(psi, gamma)
    assert law(res) == [((-1.0, 0.0), QUARTER), ((-1.0, 2.0), QUARTER), ((1.0, 0.0), QUARTER),
                        ((1.0, 2.0), QUARTER)]


def test_wml_enumeration():
    psi, gamma = wml()
    found = enumerate_transports(psi, gamma)
    assert sorted(law(r) for r in found) == WML_LAWS
    assert classify_uniqueness(psi, gamma) is Uniqueness.PossiblyNonUnique
    # canonical product transport comes first
    assert law(found[0]) == law(transport_along_coupling(psi, gamma))


def test_wml_midpoint_positions():
    psi, gamma = wml()
    res = transport_along_coupling(psi, gamma)
    j = int(np.argmin(np.abs(res.ensemble.grid - 0.5)))
    m = DiscreteMeasure(res.ensemble.float_positions()[:, j, :1], res.ensemble.weight_values())
    assert m.isclose(DiscreteMeasure([0.5, -0.5], [HALF, HALF]), atol=1e-15)


def test_identity_coupling_arrival_is_source():
    psi = random_exact_tangent(np.random.default_rng(0), 3)
    res = transport_along_coupling(psi, Coupling.identity(psi.base))
    assert res.arrival.base.isclose(psi.base, atol=0)
    for f, g in zip(res.arrival.fibers, psi.fibers):
        assert f.exact == g.exact and np.array_equal(f.atoms, g.atoms)


def test_dirac_arrival_collects_base():
    from scipy.stats import norm

    mu = DiscreteMeasure.empirical(norm.ppf((np.arange(200) + 0.5) / 200))
    psi = TangentElement.deterministic(mu, lambda x: x)
    res = transport_along_coupling(psi, Coupling.product(mu, DiscreteMeasure.dirac(0.0)))
    assert res.arrival.base.size == 1
    assert res.arrival.fibers[0].isclose(mu, atol=1e-12)
    assert not res.arrival.is_deterministic


def test_deterministic_tangent_unique():
    mu = DiscreteMeasure.dirac(0.0)
    psi = TangentElement.deterministic(mu, [[3.0]])
    gamma = Coupling.from_pairs([[0.0], [0.0]], [[1.0], [-1.0]], [HALF, HALF])
    assert classify_uniqueness(psi, gamma) is Uniqueness.UniqueDeterministicTangent
    assert len(enumerate_transports(psi, gamma)) == 1


def test_graph_coupling_unique():
    psi = random_exact_tangent(np.random.default_rng(5), 3, max_fiber=3)
    gamma = Coupling.graph(psi.base, lambda x: 2 * x + 1)
    kind = classify_uniqueness(psi, gamma)
    assert kind in (Uniqueness.UniqueDeterministicFlow, Uniqueness.UniqueDeterministicTangent)
    assert len(enumerate_transports(psi, gamma)) == 1


def test_enumeration_needs_exact_weights():
    psi = random_float_tangent(np.random.default_rng(0), 2)
    with pytest.raises(NonRationalWeights):
        enumerate_transports(psi, Coupling.identity(psi.base))


@given(seeds)
def test_enumeration_contains_canonical(seed):
    rng = np.random.default_rng(seed)
    res = random_transport(rng)
    psi = res.source
    gamma = res.route if isinstance(res.route, Coupling) else None
    assert gamma is not None
    found = enumerate_transports(psi, gamma)
    assert found[0].law_key() == transport_along_coupling(psi, gamma).law_key()


@given(seeds)
def test_random_transports_pass_checks(seed):
    res = random_transport(np.random.default_rng(seed))
    assert check_transport(res) == {"time0": True, "constant_velocity": True, "route_marginals": True,
                                    "arrival": True, "moment": True}


def test_reverse_involution_and_identity():
    psi, gamma = wml()
    for res in enumerate_transports(psi, gamma):
        back = reverse(reverse(res))
        assert back.law_key() == res.law_key()
        assert np.array_equal(back.ensemble.grid, res.ensemble.grid)
        assert all(check_transport(reverse(res)).values())
    p2 = random_exact_tangent(np.random.default_rng(1), 3)
    ident = transport_along_coupling(p2, Coupling.identity(p2.base))
    assert reverse(ident).law_key() == ident.law_key()


def test_round_trip_keeps_velocity_marginal():
    rng = np.random.default_rng(3)
    psi = random_exact_tangent(rng, 3, max_fiber=2)
    nu = DiscreteMeasure(np.array([[0.5], [1.5]]), [HALF, HALF])
    gamma, _ = solve_ot(psi.base, nu)
    there = transport_along_coupling(psi, gamma).arrival
    back = transport_along_coupling(there, gamma.transpose()).arrival

    def velocity_marginal(t):
        pts = np.vstack([f.atoms for f in t.fibers])
        w = [wi * q for wi, f in zip(t.base.exact, t.fibers) for q in f.exact]
        return DiscreteMeasure(pts, w)

    assert velocity_marginal(back).isclose(velocity_marginal(psi), atol=0)


def test_transport_along_paths_matches_endpoint_coupling():
    psi, gamma = wml()
    eta = PathEnsemble.interpolation(gamma)
    a = transport_along_paths(psi, eta)
    b = transport_along_coupling(psi, gamma)
    assert a.law_key() == b.law_key()
    assert all(check_transport(a).values())


def test_path_dependence():
    n = 41
    mu = DiscreteMeasure.uniform_grid(n)
    grid = uniform_grid()
    u = np.array(mu.atoms)
    eta1 = PathEnsemble.from_velocities(u, np.zeros((n, len(grid), 1)), grid, list(mu.exact))
    pos2 = grid[None, :, None] * u[:, None, :] + (1 - grid[None, :, None]) * (1 - u[:, None, :])
    eta2 = PathEnsemble(grid, list(mu.exact), pos2)
    psi = TangentElement.deterministic(mu, lambda x: x)
    assert path_dependence_check(psi, eta1, eta2)
    assert not path_dependence_check(psi, eta1, eta1)
    # a reparametrisation with the same endpoints
    slow = PathEnsemble(grid, list(mu.exact), grid[None, :, None] ** 2 * pos2[:, -1:, :]
                        + (1 - grid[None, :, None] ** 2) * pos2[:, :1, :])
    assert not path_dependence_check(psi, eta2, slow)
