from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import comparison_oracle, random_exact_tangent, random_float_tangent
from wtan.errors import BaseMismatch, ValidationError
from wtan.measure import DiscreteMeasure
from wtan.parallel import transport_along_coupling
from wtan.tangent import (TangentElement, compare_by_transport, compare_by_transport_sup,
                          comparison_details, inner_product, sheaf_distance, tangent_distance,
                          tangent_distance_sq)
from wtan.transport import Coupling, solve_ot, solve_ot_certified

seeds = st.integers(0, 2**31)


def lam_pair(lam=2.0, n=401):
    mu = DiscreteMeasure.uniform_grid(n)
    x = mu.atoms[:, 0]
    return (TangentElement.deterministic(mu, lam * x), TangentElement.deterministic(mu, lam * (1 - x)))


# -- construction -----------------------------------------------------------------------

def test_deterministic_as_joint_is_graph():
    mu = DiscreteMeasure([0.0, 1.0, 2.0])
    psi = TangentElement.deterministic(mu, lambda x: x ** 2)
    g = psi.as_joint()
    assert g.is_graph()
    x, z, _ = g.pairs()
    assert np.array_equal(z, x ** 2)


def test_two_point_fiber_joint():
    psi = TangentElement(DiscreteMeasure.dirac(0.0), [DiscreteMeasure([0.0, 2.0], ["1/2", "1/2"])])
    g = psi.as_joint()
    x, z, _ = g.pairs()
    assert g.exact == (Fraction(1, 2), Fraction(1, 2))
    assert x.ravel().tolist() == [0.0, 0.0] and z.ravel().tolist() == [0.0, 2.0]


@given(seeds)
def test_joint_round_trip(seed):
    psi = random_float_tangent(np.random.default_rng(seed), 4, dim=2)
    back = TangentElement.from_joint(psi.as_joint())
    assert back.base.isclose(psi.base, atol=0)
    for f, g in zip(psi.fibers, back.fibers):
        assert f.isclose(g, atol=1e-15)


def test_fiber_count_must_match():
    with pytest.raises(ValidationError):
        TangentElement(DiscreteMeasure([0.0, 1.0]), [DiscreteMeasure.dirac(0.0)])


def test_dict_round_trip():
    psi = random_exact_tangent(np.random.default_rng(4), 3)
    back = TangentElement.from_dict(psi.to_dict())
    assert back.is_exact and back.velocity_moment_exact() == psi.velocity_moment_exact()


# -- fiberwise distance -------------------------------------------------------------------

def test_d_mu_self_is_zero():
    psi = random_float_tangent(np.random.default_rng(0), 5)
    assert tangent_distance(psi, psi) == 0.0


@given(seeds)
def test_d_mu_deterministic_is_l2(seed):
    rng = np.random.default_rng(seed)
    mu = DiscreteMeasure(rng.normal(size=(6, 2)), None)
    a, b = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    d2 = tangent_distance_sq(TangentElement.deterministic(mu, a), TangentElement.deterministic(mu, b))
    assert d2 == pytest.approx(np.sum(mu.weights[:, None] * (a - b) ** 2), rel=1e-12)


def test_d_mu_lambda_example():
    phi, psi = lam_pair()
    # exact value: lambda^2 * mean((2x - 1)^2) over the 401-point grid, ~ lambda^2 / 3
    x = phi.base.atoms[:, 0]
    assert tangent_distance_sq(phi, psi) == pytest.approx(4 * np.mean((2 * x - 1) ** 2), rel=1e-12)
    assert abs(tangent_distance_sq(phi, psi) - 4 / 3) <= 1e-2


@given(seeds)
def test_d_mu_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    base = DiscreteMeasure(rng.normal(size=(4, 1)))

    def element():
        fibers = []
        for _ in range(4):
            k = int(rng.integers(1, 4))
            w = rng.random(k) + 0.1
            fibers.append(DiscreteMeasure(rng.normal(size=(k, 1)), w / w.sum()))
        return TangentElement(base, fibers)

    a, b, c = element(), element(), element()
    assert tangent_distance(a, b) == pytest.approx(tangent_distance(b, a), abs=1e-12)
    assert tangent_distance(a, b) <= tangent_distance(a, c) + tangent_distance(c, b) + 1e-8


def test_d_mu_needs_common_base():
    a = TangentElement.zero(DiscreteMeasure([0.0, 1.0]))
    b = TangentElement.zero(DiscreteMeasure([0.0, 2.0]))
    with pytest.raises(BaseMismatch):
        tangent_distance(a, b)


def test_d_mu_thread_independent():
    rng = np.random.default_rng(7)
    a, b = random_float_tangent(rng, 30), None
    b = TangentElement(a.base, [DiscreteMeasure(rng.normal(size=(3, 1))) for _ in range(a.base.size)])
    assert tangent_distance_sq(a, b, threads=1) == tangent_distance_sq(a, b, threads=4)


# -- inner product --------------------------------------------------------------------------

def test_inner_product_identities():
    rng = np.random.default_rng(1)
    mu = DiscreteMeasure(rng.normal(size=(5, 1)))
    alpha = rng.normal(size=(5, 1))
    norm2 = float(np.sum(mu.weights[:, None] * alpha ** 2))
    psi = TangentElement.deterministic(mu, alpha)
    zero = TangentElement.zero(mu)
    # d^2(psi, 0) + d^2(0, 0) - d^2(psi, 0): the pairing with the zero element vanishes
    assert inner_product(psi, zero) == 0.0
    assert inner_product(psi, psi) == pytest.approx(2 * norm2, rel=1e-12)
    assert inner_product(psi, TangentElement.deterministic(mu, -alpha)) == pytest.approx(-2 * norm2, rel=1e-12)


# -- sheaf distance -----------------------------------------------------------------------------

def test_sheaf_distance_zero_on_identical():
    psi = random_float_tangent(np.random.default_rng(2), 4)
    assert sheaf_distance(psi, psi) == 0.0


@given(seeds)
def test_sheaf_distance_dominates_base_distance(seed):
    rng = np.random.default_rng(seed)
    phi, psi = random_float_tangent(rng, 4, 2), random_float_tangent(rng, 3, 2)
    w2 = solve_ot_certified(phi.base, psi.base).objective
    assert sheaf_distance(phi, psi) ** 2 >= w2 - 1e-10


@given(seeds)
def test_sheaf_triangle(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_float_tangent(rng, 3) for _ in range(3))
    assert sheaf_distance(a, b) <= sheaf_distance(a, c) + sheaf_distance(c, b) + 1e-8


def test_sheaf_distance_lambda_example():
    phi, psi = lam_pair()
    assert sheaf_distance(phi, psi) ** 2 <= 1 / 3 + 2e-3


# -- transport comparison ---------------------------------------------------------------------

def test_comparison_zero_for_transported_element():
    rng = np.random.default_rng(3)
    psi = random_float_tangent(rng, 4)
    nu = DiscreteMeasure(rng.normal(size=(4, 1)))
    gamma, _ = solve_ot(psi.base, nu)
    phi = transport_along_coupling(psi, gamma).arrival
    assert compare_by_transport(psi, phi) <= 1e-7


def test_comparison_lambda_example():
    phi, psi = lam_pair()
    e = compare_by_transport(phi, psi)
    assert abs(e - 4 / 3) <= 2e-2
    assert e > sheaf_distance(phi, psi) ** 2


@given(seeds)
def test_comparison_symmetry_and_bounds(seed):
    rng = np.random.default_rng(seed)
    phi, psi = random_float_tangent(rng, 3), random_float_tangent(rng, 4)
    e1, e2 = compare_by_transport(phi, psi), compare_by_transport(psi, phi)
    assert abs(e1 - e2) <= 1e-7
    det = comparison_details(phi, psi)
    d2 = sheaf_distance(phi, psi) ** 2
    assert d2 <= det.w2_sq + e1 + det.geodesic_slack + 1e-10
    assert compare_by_transport_sup(phi, psi) >= e1 - 1e-9


@given(seeds)
def test_comparison_matches_vertex_oracle(seed):
    rng = np.random.default_rng(seed)
    phi = random_exact_tangent(rng, int(rng.integers(1, 4)), max_joint=4)
    psi = random_exact_tangent(rng, int(rng.integers(1, 4)), max_joint=4)
    oracle = float(comparison_oracle(phi, psi))
    det = comparison_details(phi, psi)
    # the LP may use the geodesic slack: its value is below the exact one by at most multiplier * slack
    assert det.value <= oracle + 1e-9
    assert oracle - det.value <= abs(det.multiplier) * det.geodesic_slack + 1e-9


def test_comparison_tight_slack_matches_oracle():
    rng = np.random.default_rng(11)
    for _ in range(10):
        phi = random_exact_tangent(rng, 2, max_joint=4)
        psi = random_exact_tangent(rng, 2, max_joint=4)
        oracle = float(comparison_oracle(phi, psi))
        assert compare_by_transport(phi, psi, eps_geo=1e-12) == pytest.approx(oracle, abs=1e-8)
