import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from besqmkv import BoundaryClass, EmpiricalMeasure, GammaParams, classify_boundary, gamma_laplace, wasserstein1
from besqmkv.measures import fmt

atom = st.floats(0, 100, allow_nan=False)
atoms = st.lists(atom, min_size=1, max_size=8)
pos = st.floats(1e-3, 50, allow_nan=False)


class TestMetric:
    @given(atoms, atoms)
    def test_symmetric_nonnegative(self, a, b):
        if len(a) != len(b):
            b = (b * len(a))[: len(a)]
        mu, nu = EmpiricalMeasure(a), EmpiricalMeasure(b)
        d = wasserstein1(mu, nu)
        assert d >= 0
        assert math.isclose(d, wasserstein1(nu, mu), abs_tol=1e-12)
        assert wasserstein1(mu, mu) == 0

    @given(atoms, atoms, atoms)
    def test_triangle(self, a, b, c):
        n = len(a)
        mu, nu, rho = (EmpiricalMeasure((x * n)[:n]) for x in (a, b, c))
        assert wasserstein1(mu, rho) <= wasserstein1(mu, nu) + wasserstein1(nu, rho) + 1e-9

    @given(atoms, st.floats(0, 10))
    def test_shift(self, a, s):
        mu = EmpiricalMeasure(a)
        assert math.isclose(wasserstein1(mu, EmpiricalMeasure(np.asarray(a) + s)), s, rel_tol=1e-9, abs_tol=1e-9)


class TestClassifier:
    @given(pos, st.floats(0, 10), st.floats(0, 10))
    def test_total_and_consistent(self, m, lo, extra):
        rep = classify_boundary(m, lo, lo + extra)
        assert isinstance(rep.cls, BoundaryClass)
        assert rep.lower <= rep.upper
        if rep.cls is BoundaryClass.REFLECTING_WITH_LOCAL_TIME:
            assert 0 < rep.lower and rep.upper <= 1
        if rep.cls is BoundaryClass.HITS_ZERO_NULL_LOCAL_TIME:
            assert 1 < rep.lower and rep.upper < 2
        if rep.lower > 2:
            assert rep.cls is BoundaryClass.TRANSIENT_NEVER_HITS_ZERO


class TestGamma:
    @given(pos, pos, st.floats(0, 1e3))
    def test_laplace_in_unit_interval_and_decreasing(self, a, b, x):
        p = GammaParams(a, b)
        u = gamma_laplace(p, x)
        assert 0 <= u <= 1
        assert gamma_laplace(p, x + 1.0) <= u
        assert gamma_laplace(p, 0.0) == 1.0


class TestFmt:
    @given(st.floats(allow_nan=False, allow_infinity=False))
    @settings(max_examples=200)
    def test_round_trip_nine_digits(self, v):
        back = float(fmt(v))
        assert math.isclose(back, v, rel_tol=1e-8, abs_tol=0.0) or back == v
