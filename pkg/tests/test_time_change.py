import math

import numpy as np
import pytest
from scipy import stats

from tcsmallball.specfun import mittag_leffler
from tcsmallball.subordinators import MonotonePath, SubordinatorSpec, levy_tail, passage_probability
from tcsmallball.theory import invert_laplace_E
from tcsmallball.time_change import (
    PassageTable,
    ResourceLimitError,
    TimeChangeSample,
    TimeChangeSpec,
    invert_path,
    parse_time_change,
    passage_table,
    sample_E_at,
    sample_E_T,
)

STABLE = SubordinatorSpec.stable(0.5)
GAMMA = SubordinatorSpec.gamma(1.0, 1.0)
TEMPERED = SubordinatorSpec.tempered(0.5, 1.0)


class TestSpec:
    def test_single_and_mixture(self):
        tc = TimeChangeSpec.single(STABLE)
        assert tc.sigma == 1 and tc.is_single
        mix = TimeChangeSpec.mixture([(STABLE, 1.0), (GAMMA, 2.0)])
        assert mix.sigma == 2 and not mix.is_single

    def test_weights_positive(self):
        with pytest.raises(ValueError):
            TimeChangeSpec.mixture([(STABLE, 0.0)])
        with pytest.raises(ValueError):
            TimeChangeSpec.mixture([])

    def test_parse(self):
        tc = parse_time_change("mix:[stable:beta=0.5*1.0;gamma:c=1,b=1*2.0]")
        assert tc.components == ((STABLE, 1.0), (GAMMA, 2.0))
        assert parse_time_change("tempered:beta=0.5,lambda=1").components == ((TEMPERED, 1.0),)
        assert parse_time_change(tc.label()) == tc
        with pytest.raises(ValueError):
            parse_time_change("mix:[stable:beta=0.5]")


class TestInvertPath:
    PATH = MonotonePath(0.1, np.array([0.0, 0.5, 3.0]))

    def test_examples(self):
        assert invert_path(self.PATH, 1.0) == pytest.approx(0.2)
        assert invert_path(self.PATH, 0.4) == pytest.approx(0.1)

    def test_drift_only(self):
        for h in [0.1, 0.01, 0.003]:
            u = h * np.arange(0, int(2.0 / h) + 2)
            v = invert_path(MonotonePath(h, 2.0 * u), 1.0)
            assert 0.5 <= v <= 0.5 + h + 1e-12

    def test_one_sided_bias(self):
        h = 0.01
        u = h * np.arange(0, 301)
        path = MonotonePath(h, u**2)
        for t in np.linspace(0.0, 8.0, 57):
            err = invert_path(path, t) - math.sqrt(t)
            assert -1e-12 <= err <= h + 1e-12

    def test_coverage_error(self):
        with pytest.raises(ValueError):
            invert_path(self.PATH, 3.0)


class TestSample:
    def test_invariants_checked(self):
        with pytest.raises(ValueError):
            TimeChangeSample(np.array([0.0, 1.0]), np.array([0.1, 0.2]), 0.1)
        with pytest.raises(ValueError):
            TimeChangeSample(np.array([0.0, 1.0]), np.array([0.0, -0.1]), 0.1)
        s = TimeChangeSample(np.array([0.0, 1.0, 2.0]), np.array([0.0, 0.3, 0.7]), 0.1)
        assert s.sup_M == 0.7 and s.inf_N == 0.0

    def test_time_zero(self):
        s = sample_E_at(TimeChangeSpec.single(STABLE), [0.0], 1e-3, np.random.default_rng(0))
        assert s.e_values.tolist() == [0.0]

    def test_stable_mittag_leffler_paths(self):
        rng = np.random.default_rng(1)
        tc = TimeChangeSpec.single(STABLE)
        f = np.array([math.exp(-sample_E_at(tc, [1.0], 1e-4, rng).e_values[0]) for _ in range(3000)])
        ref = mittag_leffler(0.5, -1.0)
        # grid bias is at most a*h = 1e-4
        assert abs(f.mean() - ref) <= 4.0 * f.std() / math.sqrt(f.size) + 1e-4

    def test_stable_mittag_leffler_exact_route(self):
        tc = TimeChangeSpec.single(STABLE)
        E = sample_E_T(tc, 1.0, 1e-4, np.random.default_rng(2), size=100_000)
        f = np.exp(-E)
        assert abs(f.mean() - mittag_leffler(0.5, -1.0)) <= 4.0 * f.std() / math.sqrt(f.size) + 1e-4

    def test_mixture_is_sum(self):
        rng = np.random.default_rng(3)
        mix = TimeChangeSpec.mixture([(STABLE, 1.0), (STABLE, 1.0)])
        one = TimeChangeSpec.single(STABLE)
        a = [sample_E_at(mix, [1.0], 1e-3, rng).e_values[0] for _ in range(2000)]
        b = [sample_E_at(one, [1.0], 1e-3, rng).e_values[0] + sample_E_at(one, [1.0], 1e-3, rng).e_values[0] for _ in range(2000)]
        assert stats.ks_2samp(a, b).pvalue > 0.01

    def test_resource_cap(self):
        with pytest.raises(ResourceLimitError):
            sample_E_at(TimeChangeSpec.single(GAMMA), [100.0], 1e-3, np.random.default_rng(0), max_points=1000)

    def test_bad_times(self):
        tc = TimeChangeSpec.single(GAMMA)
        with pytest.raises(ValueError):
            sample_E_at(tc, [1.0, 0.5], 0.1, np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_E_at(tc, [], 0.1, np.random.default_rng(0))


class TestExactRoute:
    def test_tiny_T(self):
        tc = TimeChangeSpec.single(STABLE)
        assert sample_E_T(tc, 1e-12, 1e-3, np.random.default_rng(0)) == pytest.approx(1e-3)

    def test_small_ball_of_E(self):
        tc = TimeChangeSpec.single(STABLE)
        E = sample_E_T(tc, 1.0, 1e-5, np.random.default_rng(4), size=1_000_000)
        p = np.mean(E <= 0.01)
        ref = levy_tail(STABLE, 1.0) * 0.01
        assert abs(p - ref) <= 4.0 * math.sqrt(ref * (1 - ref) / E.size)

    def test_gamma_vs_talbot(self):
        tc = TimeChangeSpec.single(GAMMA)
        f = np.exp(-sample_E_T(tc, 1.0, 1e-5, np.random.default_rng(5), size=100_000))
        assert abs(f.mean() - invert_laplace_E(GAMMA, 1.0, 1.0)) <= 4.0 * f.std() / math.sqrt(f.size)

    def test_same_law_as_paths(self):
        h = 0.01
        tc = TimeChangeSpec.single(GAMMA)
        rng = np.random.default_rng(6)
        a = sample_E_T(tc, 1.0, h, rng, size=3000)
        b = [sample_E_at(tc, [1.0], h, rng).e_values[0] for _ in range(3000)]
        assert stats.ks_2samp(a, b).pvalue > 0.01

    def test_on_grid(self):
        E = sample_E_T(TimeChangeSpec.single(GAMMA), 1.0, 0.01, np.random.default_rng(7), size=1000)
        k = E / 0.01
        assert np.allclose(k, np.round(k)) and np.all(k >= 1)

    @pytest.mark.parametrize("spec", [STABLE, GAMMA, SubordinatorSpec.stable(0.9), SubordinatorSpec.gamma(0.3, 2.0)])
    def test_table_accuracy(self, spec):
        tab = passage_table(spec, 1.0)
        u = np.concatenate([np.geomspace(1e-10, 0.5, 40), 1.0 - np.geomspace(1e-8, 0.5, 40)])
        back = passage_probability(spec, 1.0, tab.ppf(u))
        tail = np.minimum(u, 1.0 - u)
        assert np.all(np.abs(back - u) <= 2e-7 * tail + 2e-13)

    def test_uniforms_shape(self):
        tc = TimeChangeSpec.mixture([(STABLE, 1.0), (GAMMA, 1.0)])
        with pytest.raises(ValueError):
            sample_E_T(tc, 1.0, 0.01, uniforms=np.full((3, 1), 0.5))
        v = sample_E_T(tc, 1.0, 0.01, uniforms=np.full((3, 2), 0.5))
        assert v.shape == (3,)

    def test_table_is_cached(self):
        assert passage_table(STABLE, 1.0) is passage_table(STABLE, 1.0)
        assert isinstance(passage_table(STABLE, 1.0), PassageTable)


def test_halving_h_moves_monotonically():
    tc = TimeChangeSpec.single(STABLE)
    u = np.random.default_rng(11).random((20000, 1))
    p = [np.mean(sample_E_T(tc, 1.0, h, uniforms=u) <= 0.05) for h in (0.02, 0.01, 0.005, 0.0025, 1e-6)]
    assert all(a <= b for a, b in zip(p, p[1:]))
    ref = passage_probability(STABLE, 1.0, 0.05)
    assert abs(p[-1] - ref) <= 4 * math.sqrt(ref * (1 - ref) / u.shape[0])
