import math

import numpy as np
import pytest
from scipy import stats

from shapesize import ScenarioSpec, simulate_dataset, with_seed
from shapesize.simulate import ScenarioError, draw_event_times, frailty_draw


def _mean_count_m3(x, tau=2.0):
    # integral of max(0, t^3 + x) over [0, tau]
    if x >= 0.0:
        return tau**4 / 4.0 + tau * x
    a = (-x) ** (1.0 / 3.0)
    if a >= tau:
        return 0.0
    return tau**4 / 4.0 + tau * x + 0.75 * a**4


class TestScenarioSpec:
    def test_unknown_scenario(self):
        with pytest.raises(ScenarioError, match="unknown scenario"):
            ScenarioSpec(scenario="M4", n=10)

    def test_unknown_frailty(self):
        with pytest.raises(ScenarioError, match="unknown frailty"):
            ScenarioSpec(scenario="M1", n=10, frailty="lognormal")

    def test_m1_default_size_direction(self):
        spec = ScenarioSpec(scenario="M1", n=10)
        assert spec.gamma0 == (0.6, 0.8)
        assert spec.beta0 == (0.8, 0.6)

    def test_tied_directions(self):
        for sc in ("M2", "M3"):
            spec = ScenarioSpec(scenario=sc, n=10)
            assert spec.gamma0 == spec.beta0
            # explicit but equal is accepted
            ScenarioSpec(scenario=sc, n=10, gamma0=(0.8, 0.6))
            with pytest.raises(ScenarioError, match="ties gamma0"):
                ScenarioSpec(scenario=sc, n=10, gamma0=(0.6, 0.8))

    def test_tau_defaults(self):
        assert ScenarioSpec(scenario="M1", n=5).tau == 1.0
        assert ScenarioSpec(scenario="M2", n=5).tau == 2.0
        assert ScenarioSpec(scenario="M3", n=5).tau == 2.0

    def test_m1_window_floor(self):
        with pytest.raises(ScenarioError, match="tau must be >= 1"):
            ScenarioSpec(scenario="M1", n=5, tau=0.5)

    def test_bad_sizes(self):
        with pytest.raises(ScenarioError, match="n must be"):
            ScenarioSpec(scenario="M1", n=0)
        with pytest.raises(ScenarioError, match="censor_rate_scale"):
            ScenarioSpec(scenario="M1", n=5, censor_rate_scale=-0.1)
        with pytest.raises(ScenarioError, match="same length"):
            ScenarioSpec(scenario="M1", n=5, gamma0=(1.0, 0.0, 0.0))

    def test_truth_payload(self):
        spec = ScenarioSpec(scenario="M1", n=5, seed=42)
        assert spec.truth() == {
            "beta0": [0.8, 0.6],
            "gamma0": [0.6, 0.8],
            "scenario": "M1",
            "seed": 42,
        }

    def test_with_seed(self):
        spec = ScenarioSpec(scenario="M2", n=7, seed=1)
        other = with_seed(spec, 9)
        assert other.seed == 9
        assert (other.scenario, other.n, other.tau) == ("M2", 7, 2.0)

    def test_p(self):
        assert ScenarioSpec(scenario="M1", n=5).p == 2
        assert ScenarioSpec(
            scenario="M1", n=5, beta0=(0.6, 0.0, 0.8), gamma0=(1.0, 0.0, 0.0)
        ).p == 3


class TestFrailty:
    def test_degenerate(self):
        spec = ScenarioSpec(scenario="M1", n=1)
        assert frailty_draw(spec) == 1.0

    def test_gamma_moments(self):
        spec = ScenarioSpec(scenario="M1", n=1, frailty="gamma")
        rng = np.random.default_rng(77)
        draws = np.array([frailty_draw(spec, rng) for _ in range(200_000)])
        assert draws.mean() == pytest.approx(1.0, abs=0.005)
        assert draws.var() == pytest.approx(1.0 / 3.0, abs=0.006)
        assert np.all(draws > 0.0)


class TestEventLaw:
    def test_m1_count_is_unit_poisson_at_origin(self):
        spec = ScenarioSpec(scenario="M1", n=1)
        rng = np.random.default_rng(5)
        z = np.zeros(2)
        counts = np.array([
            draw_event_times(spec, z, 1.0, rng).size for _ in range(100_000)
        ])
        assert counts.mean() == pytest.approx(1.0, abs=0.01)
        assert counts.var() == pytest.approx(1.0, abs=0.03)

    def test_m1_times_follow_stated_density(self):
        # at index zero the normalized rate is the density 2(1-t) mirror,
        # i.e. Beta(2, 1) with cdf t^2
        spec = ScenarioSpec(scenario="M1", n=1)
        rng = np.random.default_rng(6)
        z = np.zeros(2)
        times = np.concatenate([
            draw_event_times(spec, z, 1.0, rng) for _ in range(60_000)
        ])
        assert times.size > 50_000
        ks = stats.kstest(times, lambda t: t**2)
        assert ks.statistic < 0.01

    def test_m2_conditional_mean(self):
        spec = ScenarioSpec(scenario="M2", n=1)
        rng = np.random.default_rng(7)
        ratios = []
        for _ in range(4000):
            z = rng.standard_normal(2)
            x = float(np.dot(spec.beta0, z))
            expected = 3.0 * -math.expm1(-2.0 * math.exp(x))
            m = draw_event_times(spec, z, 1.0, rng).size
            ratios.append(m / expected)
        assert np.mean(ratios) == pytest.approx(1.0, abs=0.03)

    def test_m3_conditional_mean_with_clamp(self):
        spec = ScenarioSpec(scenario="M3", n=1)
        rng = np.random.default_rng(8)
        num = 0.0
        den = 0.0
        for _ in range(4000):
            z = rng.standard_normal(2)
            x = float(np.dot(spec.beta0, z))
            expected = _mean_count_m3(x)
            if expected < 0.5:
                continue
            num += draw_event_times(spec, z, 1.0, rng).size
            den += expected
        assert num / den == pytest.approx(1.0, abs=0.03)

    def test_times_sorted_and_in_window(self):
        for sc in ("M1", "M2", "M3"):
            spec = ScenarioSpec(scenario=sc, n=1)
            rng = np.random.default_rng(9)
            for _ in range(200):
                z = rng.standard_normal(2)
                t = draw_event_times(spec, z, 1.3, rng)
                assert np.all(np.diff(t) >= 0.0)
                if t.size:
                    assert t.min() >= 0.0 and t.max() <= spec.tau


class TestSimulateDataset:
    @pytest.mark.parametrize("scenario", ["M1", "M2", "M3"])
    @pytest.mark.parametrize("frailty", ["degenerate_one", "gamma"])
    def test_structure(self, scenario, frailty):
        spec = ScenarioSpec(scenario=scenario, n=60, frailty=frailty, seed=3)
        ds = simulate_dataset(spec)
        assert ds.n == 60
        assert ds.p == 2
        assert ds.tau == spec.tau
        for s in ds.subjects:
            assert 0.0 <= s.c <= spec.tau + 1e-12
            assert np.all(np.diff(s.events) >= 0.0)
            if s.events.size:
                assert s.events.min() >= 0.0
                assert s.events.max() <= s.c
        assert [s.id for s in ds.subjects] == [str(i + 1) for i in range(60)]

    def test_bit_reproducible(self):
        spec = ScenarioSpec(scenario="M1", n=40, frailty="gamma", seed=17)
        a = simulate_dataset(spec)
        b = simulate_dataset(spec)
        for sa, sb in zip(a.subjects, b.subjects):
            assert sa.id == sb.id
            assert sa.c == sb.c
            assert np.array_equal(sa.z, sb.z)
            assert np.array_equal(sa.events, sb.events)

    def test_seed_changes_data(self):
        spec = ScenarioSpec(scenario="M1", n=40, seed=17)
        a = simulate_dataset(spec)
        b = simulate_dataset(with_seed(spec, 18))
        assert not np.array_equal(a.covariates(), b.covariates())

    def test_censoring_disabled(self):
        spec = ScenarioSpec(scenario="M2", n=50, censor_rate_scale=0.0, seed=2)
        ds = simulate_dataset(spec)
        assert np.all(ds.censoring() == spec.tau)

    def test_censoring_active(self):
        spec = ScenarioSpec(scenario="M1", n=300, seed=2)
        ds = simulate_dataset(spec)
        c = ds.censoring()
        assert np.any(c < spec.tau)
        assert np.all(c > 0.0)

    def test_m1_conditional_mean_without_censoring(self):
        spec = ScenarioSpec(
            scenario="M1", n=40_000, censor_rate_scale=0.0, seed=19)
        ds = simulate_dataset(spec)
        g0 = np.array(spec.gamma0)
        ratio = ds.event_counts() / np.exp(ds.covariates() @ g0)
        assert ratio.mean() == pytest.approx(1.0, abs=0.02)

    def test_frailty_inflates_dispersion(self):
        base = ScenarioSpec(
            scenario="M1", n=20_000, censor_rate_scale=0.0, seed=23)
        mixed = ScenarioSpec(
            scenario="M1", n=20_000, censor_rate_scale=0.0, seed=23,
            frailty="gamma")
        y0 = simulate_dataset(base).event_counts()
        y1 = simulate_dataset(mixed).event_counts()
        assert y1.mean() == pytest.approx(y0.mean(), rel=0.05)
        assert y1.var() > 1.2 * y0.var()
