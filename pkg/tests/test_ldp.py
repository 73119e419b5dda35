import math
import warnings

import numpy as np
import pytest
from scipy import stats

from besqmkv import (
    ControlSpec,
    NumericalError,
    RareEvent,
    SchemeConfig,
    constant_control_search,
    importance_sampling,
    log_mgf_mean,
    rate_fit,
    simulate_controlled_limit,
    solve_selfconsistent,
    sum_tilt_control,
    tilt_parameter,
)
from besqmkv.ldp import LowESSWarning, RateReport

from conftest import make_spec

# dimension delta + m phi = 2: Euler rarely touches 0, so its bias is negligible here
WIDE = make_spec(delta=1.0, phi=1.0, x0=1.0)
T = 0.5


def exact_tail(spec, n, a, T):
    """P(S_n(T) / n > a) with S_n a BESQ(n delta) started at n m."""
    return stats.ncx2.sf(n * a / T, n * spec.delta, n * spec.m_lambda / T)


class TestEvents:
    def test_indicators(self):
        paths = np.array([[1.0, 2.0, 1.5], [1.0, 0.5, 0.4]])
        assert RareEvent.terminal_mean_above(1.0).on_mean_path(paths).tolist() == [True, False]
        assert RareEvent.terminal_mean_below(1.0).on_mean_path(paths).tolist() == [False, True]
        assert RareEvent.path_sup_above(1.8).on_mean_path(paths).tolist() == [True, False]

    def test_validation(self):
        with pytest.raises(ValueError):
            RareEvent("MeanNear", 1.0)
        with pytest.raises(ValueError):
            RareEvent.terminal_mean_above(float("inf"))


class TestTilt:
    def test_log_mgf_matches_noncentral_chi2(self):
        n, theta = 7, 0.3
        x = np.linspace(0, 400, 400_001)
        dens = stats.ncx2(df=n * WIDE.delta, nc=n * WIDE.m_lambda / T, scale=T).pdf(x)
        numeric = math.log(np.trapezoid(np.exp(theta * x) * dens, x)) / n
        assert log_mgf_mean(theta, WIDE, T) == pytest.approx(numeric, rel=1e-6)

    def test_tilt_parameter_solves_slope(self):
        ev = RareEvent.terminal_mean_above(2.1)
        th = tilt_parameter(ev, WIDE, T)
        h = 1e-6
        slope = (log_mgf_mean(th + h, WIDE, T) - log_mgf_mean(th - h, WIDE, T)) / (2 * h)
        assert slope == pytest.approx(2.1, rel=1e-6)
        assert tilt_parameter(RareEvent.terminal_mean_above(1.5), WIDE, T) == 0.0
        assert tilt_parameter(RareEvent.terminal_mean_below(1.0), WIDE, T) < 0

    def test_tilted_mean_hits_threshold(self):
        ev = RareEvent.terminal_mean_above(2.1)
        ctrl = sum_tilt_control(tilt_parameter(ev, WIDE, T), WIDE, T)
        from besqmkv import simulate_replicas

        means = simulate_replicas(20, WIDE, SchemeConfig(dt=2e-3, seed=1), T, 1000, control=ctrl).terminal().mean(axis=1)
        assert abs(means.mean() - 2.1) < 3 * means.std(ddof=1) / math.sqrt(means.size) + 0.01


class TestImportanceSampling:
    def test_matches_exact_probability(self):
        n, a = 20, 2.1
        ev = RareEvent.terminal_mean_above(a)
        ctrl = sum_tilt_control(tilt_parameter(ev, WIDE, T), WIDE, T)
        res = importance_sampling(ev, n, WIDE, SchemeConfig(dt=2e-3, seed=3), T, ctrl, 2000)
        assert abs(res.p_hat - exact_tail(WIDE, n, a, T)) < 3 * res.stderr
        assert res.ess > 100 and not res.low_ess

    def test_zero_control_is_plain_monte_carlo(self):
        ev = RareEvent.terminal_mean_above(1.6)
        cfg = SchemeConfig(dt=5e-3, seed=4)
        a = importance_sampling(ev, 10, WIDE, cfg, T, None, 300)
        b = importance_sampling(ev, 10, WIDE, cfg, T, ControlSpec.zero(), 300)
        assert a == b
        assert a.p_hat == pytest.approx(a.hits / 300)

    def test_needs_replicas(self):
        with pytest.raises(ValueError):
            importance_sampling(RareEvent.terminal_mean_above(2.0), 10, WIDE, SchemeConfig(dt=0.01), T, None, 10)

    def test_low_ess_warns(self):
        ev = RareEvent.terminal_mean_above(1.5)
        with pytest.warns(LowESSWarning):
            res = importance_sampling(ev, 50, WIDE, SchemeConfig(dt=0.01), T, ControlSpec.constant(3.0), 100)
        assert res.low_ess


class TestControlledLimit:
    def test_zero_control_matches_uncontrolled(self):
        cfg = SchemeConfig(dt=0.01, seed=2)
        a = simulate_controlled_limit(WIDE, lambda t: 0.0, 200, cfg, T)
        b = solve_selfconsistent(WIDE, 200, cfg, T)
        assert np.array_equal(a.states, b.states)

    def test_positive_control_raises_mean(self):
        cfg = SchemeConfig(dt=0.01, seed=2)
        law = simulate_controlled_limit(WIDE, lambda t: 0.5, 2000, cfg, T)
        se = math.sqrt(law.var_path[-1] / law.N)
        assert law.mean_path[-1] > WIDE.m_lambda + WIDE.delta * T + 3 * se

    def test_constant_search(self):
        cfg = SchemeConfig(dt=0.01, seed=0)
        typical = WIDE.m_lambda + WIDE.delta * T
        grid = np.arange(0, 2, 0.05)
        assert constant_control_search(RareEvent.terminal_mean_above(typical), WIDE, T, grid, N=2000, cfg=cfg) == (0.0, 0.0)
        costs = [constant_control_search(RareEvent.terminal_mean_above(typical + d), WIDE, T, grid, N=2000, cfg=cfg)[1] for d in (0.1, 0.3)]
        assert 0 < costs[0] <= costs[1]
        u, c = constant_control_search(RareEvent.terminal_mean_above(typical + 0.3), WIDE, T, grid, N=2000, cfg=cfg)
        assert c == pytest.approx(u * u * T / 2)
        with pytest.raises(NumericalError, match="unreachable"):
            constant_control_search(RareEvent.terminal_mean_above(typical + 50), WIDE, T, grid, N=2000, cfg=cfg)


class TestRateFit:
    def test_typical_event_has_zero_rate_scale(self):
        rep = rate_fit(RareEvent.terminal_mean_above(1.5), WIDE, SchemeConfig(dt=0.01), T, [5, 10, 20], 200)
        for n, p, se, r in zip(rep.n, rep.p_hat, rep.stderr, rep.rates):
            assert abs(p - exact_tail(WIDE, n, 1.5, T)) < 3 * se
            assert 0 <= n * r < 1.5
        assert rep.control == "tilt:0"

    def test_report_csv_and_spread(self):
        rep = RateReport((1, 2, 4), (0.5, 0.2, 0.05), (0.01, 0.01, 0.01), (0.6, 0.8, 0.75), "none", (0.0, 0.0, 0.0), (1, 1, 1))
        assert rep.to_csv().splitlines()[0] == "n,p_hat,stderr,neg_log_p_over_n,control,cost"
        assert rep.relative_spread == pytest.approx(0.05 / 0.75)

    def test_errors(self):
        ev = RareEvent.terminal_mean_above(20.0)
        with pytest.raises(ValueError):
            rate_fit(ev, WIDE, SchemeConfig(dt=0.01), T, [10, 20], 100)
        with pytest.raises(NumericalError, match="increase replicas or control"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rate_fit(ev, WIDE, SchemeConfig(dt=0.01), T, [5, 10, 20], 100, control="none")
