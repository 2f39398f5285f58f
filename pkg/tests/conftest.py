"""Shared hypothesis strategies and settings."""

from __future__ import annotations

from fractions import Fraction

import numpy as np
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from wtan.measure import DiscreteMeasure

settings.register_profile("default", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# dyadic coordinates are exact in binary floating point, so float and rational
# computations agree bit for bit
dyadic = st.integers(-24, 24).map(lambda k: k / 8)


@st.composite
def exact_weights(draw, n: int):
    ints = draw(st.lists(st.integers(1, 6), min_size=n, max_size=n))
    tot = sum(ints)
    return [Fraction(k, tot) for k in ints]


@st.composite
def exact_measures(draw, max_atoms: int = 4, dim: int | None = None):
    d = dim if dim is not None else draw(st.integers(1, 2))
    n = draw(st.integers(1, max_atoms))
    pts = draw(st.lists(st.tuples(*[dyadic] * d), min_size=n, max_size=n, unique=True))
    return DiscreteMeasure(np.array(pts, dtype=float), draw(exact_weights(n)))


@st.composite
def float_measures(draw, max_atoms: int = 8, dim: int | None = None):
    d = dim if dim is not None else draw(st.integers(1, 3))
    n = draw(st.integers(1, max_atoms))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    w = rng.random(n) + 0.05
    return DiscreteMeasure(rng.normal(size=(n, d)) * 2, w / w.sum())


def random_measure(rng, n, d, exact=False, scale=2.0):
    atoms = rng.normal(size=(n, d)) * scale
    if exact:
        atoms = np.round(atoms * 8) / 8
        ints = rng.integers(1, 7, size=n)
        return DiscreteMeasure(atoms, [Fraction(int(k), int(ints.sum())) for k in ints])
    w = rng.random(n) + 0.05
    return DiscreteMeasure(atoms, w / w.sum())


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
