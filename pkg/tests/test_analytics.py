import math

import numpy as np
import pytest
from scipy import optimize

from besqmkv import (
    AssumptionError,
    BoundaryClass,
    GammaParams,
    InitialLaw,
    LaplaceGrid,
    NumericalError,
    PhiSpec,
    classify_boundary,
    gamma_laplace,
    laplace_pde_residual,
    laplace_pde_solve,
    stationary_fixed_point,
)


def laplace_exact(c, m, x0, t, x):
    """E exp(-x X(t)) for dX = c (m - X) dt + 2 sqrt(X) dW, X(0) = x0 (noncentral chi-square)."""
    s = t if c == 0 else -math.expm1(-c * t) / c
    return (1 + 2 * s * x) ** (-m * c / 2) * math.exp(-x0 * math.exp(-c * t) * x / (1 + 2 * s * x))


class TestBoundary:
    @pytest.mark.parametrize(
        "m,lo,hi,expected",
        [
            (2.0, 1.5, 1.5, BoundaryClass.TRANSIENT_NEVER_HITS_ZERO),
            (1.0, 1.2, 1.8, BoundaryClass.HITS_ZERO_NULL_LOCAL_TIME),
            (0.5, 1.0, 2.0, BoundaryClass.REFLECTING_WITH_LOCAL_TIME),
            (1.0, 2.0, 2.0, BoundaryClass.RECURRENT),
            (1.0, 0.5, 1.5, BoundaryClass.INDETERMINATE),
            (1.0, 2.0, 3.0, BoundaryClass.INDETERMINATE),
        ],
    )
    def test_examples(self, m, lo, hi, expected):
        assert classify_boundary(m, lo, hi).cls is expected

    def test_record(self):
        rep = classify_boundary(1.0, 2.0, 2.0)
        assert rep.never_hits_zero and rep.recurrent and not rep.transient
        assert str(rep) == "Recurrent"

    def test_errors(self):
        with pytest.raises(ValueError):
            classify_boundary(1.0, 2.0, 1.0)
        with pytest.raises(ValueError):
            classify_boundary(0.0, 1.0, 1.0)


class TestLaplace:
    def test_trivial_values(self):
        u0 = InitialLaw.point(1.0).laplace
        assert laplace_pde_solve(1.0, 1.0, u0, 0.7, 0.0) == 1.0
        assert laplace_pde_solve(1.0, 1.0, u0, 0.0, 0.5) == pytest.approx(math.exp(-0.5))

    @pytest.mark.parametrize("c", [0.0, 1.0, 2.5])
    @pytest.mark.parametrize("t,x", [(0.5, 0.5), (1.0, 2.0), (2.0, 1.0)])
    def test_closed_form(self, c, t, x):
        m = 1.0
        u0 = InitialLaw.point(m).laplace
        assert laplace_pde_solve(c, m, u0, t, x) == pytest.approx(laplace_exact(c, m, m, t, x), rel=1e-10)

    def test_sampled_phi_path(self):
        grid = np.linspace(0, 1, 11)
        u0 = InitialLaw.point(1.0).laplace
        a = laplace_pde_solve(np.ones(11), 1.0, u0, 1.0, 1.0, grid=grid)
        assert a == pytest.approx(laplace_exact(1.0, 1.0, 1.0, 1.0, 1.0), rel=1e-10)
        with pytest.raises(ValueError):
            laplace_pde_solve(np.ones(11), 1.0, u0, 1.0, 1.0)

    def test_residual_small(self):
        u0 = InitialLaw.point(1.0).laplace
        for t, x in [(0.5, 0.5), (1.0, 1.0), (1.0, 2.0)]:
            assert abs(laplace_pde_residual(lambda s: 1 + 0.5 * math.sin(s), 1.0, u0, t, x)) < 1e-3

    def test_monotone_and_convex_in_x(self):
        u0 = InitialLaw.gamma_law(GammaParams(2.0, 0.5)).laplace
        xs = np.linspace(0, 3, 31)
        U = np.array([laplace_pde_solve(1.0, 1.0, u0, 1.0, x, dt_char=1e-3) for x in xs])
        assert U[0] == 1.0 and np.all(np.diff(U) < 0) and np.all(np.diff(U, 2) > 0)

    def test_grid_csv(self):
        g = LaplaceGrid(np.array([1.0]), np.array([0.5, 1.0]), np.array([[0.9, 0.8]]), np.array([[0.91, 0.8]]))
        lines = g.to_csv().splitlines()
        assert lines[0] == "t,x,U_pde,U_mc,abs_err"
        assert lines[1] == "1,0.5,0.9,0.91,0.01"


class TestStationary:
    def test_gamma_laplace(self):
        assert gamma_laplace(GammaParams(2.0, 0.5), 0.0) == 1.0
        assert gamma_laplace(GammaParams(2.0, 0.5), 1.0) == pytest.approx(3**-0.5)
        h = 1e-6
        p = GammaParams(2.0 / 1.3, 1.3 * 0.8 / 2)
        assert (gamma_laplace(p, h) - 1) / h == pytest.approx(-0.8, rel=1e-4)
        with pytest.raises(ValueError):
            gamma_laplace(p, -1.0)

    def test_constant_phi(self):
        phi_star, p = stationary_fixed_point(PhiSpec.constant(1.5), 1.2)
        assert phi_star == 1.5
        assert (p.a, p.b) == pytest.approx((2 / 1.5, 1.5 * 1.2 / 2))
        assert p.a * p.b == pytest.approx(1.2)

    def test_laplace_functional_phi(self):
        # phi(mu) = 0.5 + int exp(-y) mu(dy): on Gamma(2/p, p m/2) this is 0.5 + (1 + 2/p)^(-p m/2)
        m = 1.0
        phi = PhiSpec.custom(lambda a: 0.5 + np.mean(np.exp(-a)), 0.5, 1.5)
        phi_star, p = stationary_fixed_point(phi, m, tol=1e-13)
        oracle = optimize.brentq(lambda q: 0.5 + (1 + 2 / q) ** (-q * m / 2) - q, 0.5, 1.5, xtol=1e-14)
        # the only error left is the 4096-point quantile rule
        assert phi_star == pytest.approx(oracle, abs=1e-5)
        assert p.a * p.b == pytest.approx(m)

    def test_non_recurrent_rejected(self):
        with pytest.raises(AssumptionError, match="recurrence"):
            stationary_fixed_point(PhiSpec.constant(2.5), 1.0)

    def test_iteration_budget(self):
        phi = PhiSpec.custom(lambda a: 0.5 + np.mean(np.exp(-a)), 0.5, 1.5)
        with pytest.raises(NumericalError, match="residual"):
            stationary_fixed_point(phi, 1.0, tol=1e-15, max_iter=2)
