import math

import numpy as np
import pytest
from scipy import special, stats

from tcsmallball.subordinators import (
    Family,
    MonotonePath,
    SubordinatorSpec,
    laplace_exponent,
    levy_tail,
    mean_rate,
    parse_subordinator,
    passage_probability,
    sample_increment,
    sample_path,
)

STABLE = SubordinatorSpec.stable(0.5)
GAMMA = SubordinatorSpec.gamma(1.0, 1.0)
TEMPERED = SubordinatorSpec.tempered(0.5, 1.0)
ALL = [STABLE, GAMMA, TEMPERED]

# mpmath references
TEMPERED_TAIL_1 = 0.0502545416600122
TEMPERED_TAIL_SMALL_LAMBDA = 0.564089589189652
# scipy.integrate.quad on 60 pieces of the defining integral of P(D(x) > 1)
TEMPERED_PASSAGE = {0.05: 0.0026403854166663935, 0.5: 0.039632593004746135, 2.0: 0.3723021618447471}


class TestSpec:
    @pytest.mark.parametrize("beta", [0.0, 1.0, 1.5, -0.2])
    def test_beta_range(self, beta):
        with pytest.raises(ValueError, match="beta must lie in"):
            SubordinatorSpec.stable(beta)

    def test_other_invariants(self):
        with pytest.raises(ValueError):
            SubordinatorSpec.tempered(0.5, 0.0)
        with pytest.raises(ValueError):
            SubordinatorSpec.gamma(0.0, 1.0)
        with pytest.raises(ValueError):
            SubordinatorSpec.gamma(1.0, -1.0)
        with pytest.raises(ValueError):
            SubordinatorSpec.stable(0.5, drift=-1.0)

    def test_parse(self):
        assert parse_subordinator("stable:beta=0.7") == SubordinatorSpec.stable(0.7)
        assert parse_subordinator("tempered:beta=0.5,lambda=1.0") == TEMPERED
        assert parse_subordinator(" gamma:c=1.0, b=1.0 ") == GAMMA
        assert parse_subordinator("gamma:c=2,b=3,drift=0.5") == SubordinatorSpec.gamma(2, 3, drift=0.5)

    @pytest.mark.parametrize("text", ["stable:beta=1.5", "stable:alpha=0.5", "levy:beta=0.5", "gamma:c=1", "stable:beta=0,5x"])
    def test_parse_errors(self, text):
        with pytest.raises(ValueError):
            parse_subordinator(text)

    def test_label_roundtrip(self):
        for s in ALL + [SubordinatorSpec.gamma(2, 3, drift=0.25)]:
            assert parse_subordinator(s.label()) == s


class TestLaplaceExponent:
    def test_examples(self):
        assert laplace_exponent(STABLE, 4.0) == pytest.approx(2.0, rel=1e-15)
        assert laplace_exponent(GAMMA, 1.0) == pytest.approx(math.log(2.0), rel=1e-15)
        assert laplace_exponent(TEMPERED, 1e-300) == pytest.approx(0.0, abs=1e-200)

    def test_drift(self):
        s = SubordinatorSpec.stable(0.5, drift=2.0)
        assert laplace_exponent(s, 4.0) == pytest.approx(10.0)

    def test_increasing_unbounded(self):
        ss = np.geomspace(1e-6, 1e12, 200)
        for spec in ALL:
            v = np.array([laplace_exponent(spec, x) for x in ss])
            assert np.all(np.diff(v) > 0.0)
            assert v[-1] > 20.0

    def test_domain(self):
        with pytest.raises(ValueError):
            laplace_exponent(STABLE, 0.0)


class TestLevyTail:
    def test_examples(self):
        assert levy_tail(STABLE, 1.0) == pytest.approx(1.0 / math.gamma(0.5), rel=1e-14)
        assert levy_tail(GAMMA, 1.0) == pytest.approx(0.219383934395520, rel=1e-13)
        assert levy_tail(TEMPERED, 1.0) == pytest.approx(TEMPERED_TAIL_1, rel=1e-12)

    def test_small_lambda_limit(self):
        assert levy_tail(SubordinatorSpec.tempered(0.5, 1e-8), 1.0) == pytest.approx(TEMPERED_TAIL_SMALL_LAMBDA, rel=1e-12)
        near = levy_tail(SubordinatorSpec.tempered(0.5, 1e-12), 1.0)
        assert near == pytest.approx(levy_tail(STABLE, 1.0), rel=1e-4)

    def test_decreasing(self):
        Ts = np.geomspace(0.01, 100.0, 50)
        for spec in ALL:
            v = [levy_tail(spec, t) for t in Ts]
            assert all(b < a for a, b in zip(v, v[1:]))

    def test_domain(self):
        with pytest.raises(ValueError):
            levy_tail(STABLE, 0.0)


class TestSampling:
    def test_gamma_mean(self):
        rng = np.random.default_rng(1)
        x = sample_increment(GAMMA, 1.0, rng, size=100_000)
        assert abs(x.mean() - 1.0) <= 3.0 * x.std() / math.sqrt(x.size)

    def test_stable_levy_cdf(self):
        rng = np.random.default_rng(2)
        x = sample_increment(STABLE, 1.0, rng, size=100_000)
        p = np.mean(x <= 1.0)
        ref = special.erfc(0.5)
        assert ref == pytest.approx(0.479500122186953, rel=1e-12)
        assert abs(p - ref) <= 3.0 * math.sqrt(ref * (1 - ref) / x.size)

    @pytest.mark.parametrize("spec", ALL)
    def test_positive_tiny_dt(self, spec):
        x = sample_increment(spec, 1e-6, np.random.default_rng(3), size=10_000)
        assert np.all(x > 0.0)

    @pytest.mark.parametrize("spec", ALL)
    @pytest.mark.parametrize("s", [0.5, 1.0, 2.0])
    def test_empirical_laplace(self, spec, s):
        x = sample_increment(spec, 1.0, np.random.default_rng(4), size=100_000)
        f = np.exp(-s * x)
        ref = math.exp(-laplace_exponent(spec, s))
        assert abs(f.mean() - ref) <= 4.0 * f.std() / math.sqrt(f.size)

    def test_scalar_draw(self):
        v = sample_increment(STABLE, 0.1, np.random.default_rng(0))
        assert isinstance(v, float) and v > 0.0

    def test_drift_added(self):
        spec = SubordinatorSpec.gamma(1.0, 1.0, drift=3.0)
        x = sample_increment(spec, 0.5, np.random.default_rng(0), size=1000)
        assert np.all(x >= 1.5)


class TestPath:
    def test_shape_and_monotone(self):
        for spec in ALL:
            p = sample_path(spec, 1.0, 0.01, np.random.default_rng(5))
            assert len(p) == 101
            assert p.values[0] == 0.0
            assert np.all(np.diff(p.values) > 0.0)

    def test_gamma_lln(self):
        rng = np.random.default_rng(6)
        ends = np.array([sample_path(GAMMA, 10.0, 0.1, rng).values[100] / 10.0 for _ in range(2000)])
        assert abs(ends.mean() - 1.0) <= 3.0 * ends.std() / math.sqrt(ends.size)

    def test_step_consistency(self):
        rng = np.random.default_rng(7)
        a = [sample_path(STABLE, 1.0, 0.5, rng).values[-1] for _ in range(10_000)]
        b = [sample_path(STABLE, 1.0, 0.25, rng).values[-1] for _ in range(10_000)]
        assert stats.ks_2samp(a, b).pvalue > 0.01

    def test_monotone_path_rejects_ties(self):
        with pytest.raises(ValueError):
            MonotonePath(0.1, np.array([0.0, 1.0, 1.0]))
        with pytest.raises(ValueError):
            MonotonePath(0.1, np.array([0.5, 1.0]))

    def test_path_readonly(self):
        p = sample_path(GAMMA, 1.0, 0.5, np.random.default_rng(0))
        with pytest.raises(ValueError):
            p.values[1] = 5.0

    def test_bad_step(self):
        with pytest.raises(ValueError):
            sample_path(GAMMA, 1.0, 2.0, np.random.default_rng(0))


class TestPassageProbability:
    def test_stable_half_closed_form(self):
        x = np.geomspace(1e-6, 30.0, 60)
        ref = special.erf(x / 2.0)
        np.testing.assert_allclose(passage_probability(STABLE, 1.0, x), ref, rtol=1e-12, atol=1e-300)

    def test_gamma(self):
        x = np.array([0.01, 0.5, 2.0])
        np.testing.assert_allclose(passage_probability(GAMMA, 1.0, x), special.gammaincc(x, 1.0), rtol=1e-14)

    def test_tempered_oracle(self):
        for x, ref in TEMPERED_PASSAGE.items():
            assert passage_probability(TEMPERED, 1.0, x) == pytest.approx(ref, rel=1e-10)

    def test_small_x_slope(self):
        for spec in ALL:
            x = 1e-7
            assert passage_probability(spec, 1.0, x) / x == pytest.approx(levy_tail(spec, 1.0), rel=1e-3)

    def test_drift_cap(self):
        spec = SubordinatorSpec.stable(0.5, drift=2.0)
        assert passage_probability(spec, 1.0, 0.6) == 1.0

    def test_mean_rate(self):
        assert mean_rate(GAMMA) == 1.0
        assert math.isinf(mean_rate(STABLE))
        assert mean_rate(TEMPERED) == pytest.approx(0.5)
        assert Family("tempered") is Family.TEMPERED
