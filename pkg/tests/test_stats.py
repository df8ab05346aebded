import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctcbench.stats import (
    Alternative,
    Center,
    DegenerateDataError,
    Sample,
    StatsError,
    PValueMethod,
    compare_arms,
    f_sf,
    levene_test,
    mann_whitney_u,
    normal_cdf,
    normal_ppf,
    normal_sf,
    regularized_incomplete_beta,
    shapiro_wilk,
    student_t_sf,
    two_sample_t_test,
)

# ---------------------------------------------------------------------------
# Frozen reference inputs: exact distribution quantiles at (i - 0.5) / n.
# ---------------------------------------------------------------------------
QUANTILE_INPUTS = {
    ("normal", 5): [-1.2815515655446004, -0.5244005127080409, 0.0, 0.5244005127080407, 1.2815515655446004],
    ("normal", 10): [-1.6448536269514729, -1.0364333894937898, -0.6744897501960817, -0.38532046640756773,
                     -0.12566134685507402, 0.12566134685507416, 0.38532046640756773, 0.6744897501960817,
                     1.0364333894937898, 1.6448536269514722],
    ("normal", 20): [-1.9599639845400545, -1.4395314709384563, -1.1503493803760079, -0.9345892910734802,
                     -0.7554150263604693, -0.5977601260424784, -0.45376219016987945, -0.31863936396437514,
                     -0.18911842627279252, -0.06270677794321385, 0.06270677794321385, 0.18911842627279238,
                     0.31863936396437514, 0.45376219016987956, 0.5977601260424784, 0.7554150263604693,
                     0.93458929107348, 1.1503493803760079, 1.4395314709384563, 1.959963984540054],
    ("uniform", 5): [0.1, 0.3, 0.5, 0.7, 0.9],
    ("uniform", 10): [0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95],
    ("uniform", 20): [0.025, 0.075, 0.125, 0.175, 0.225, 0.275, 0.325, 0.375, 0.425, 0.475,
                      0.525, 0.575, 0.625, 0.675, 0.725, 0.775, 0.825, 0.875, 0.925, 0.975],
    ("exponential", 5): [0.10536051565782631, 0.35667494393873245, 0.6931471805599453,
                         1.203972804325936, 2.302585092994046],
    ("exponential", 10): [0.051293294387550536, 0.1625189294977749, 0.2876820724517809, 0.4307829160924542,
                          0.5978370007556204, 0.7985076962177717, 1.0498221244986778, 1.3862943611198906,
                          1.897119984885881, 2.99573227355399],
    ("exponential", 20): [0.025317807984289876, 0.07796154146971186, 0.13353139262452263, 0.19237189264745605,
                          0.2548922496287901, 0.32158362412746233, 0.3930425881096072, 0.4700036292457356,
                          0.5533852381847867, 0.6443570163905132, 0.7444404749474959, 0.8556661100577201,
                          0.9808292530117262, 1.1239300966523997, 1.2909841813155656, 1.491654876777717,
                          1.7429693050586228, 2.0794415416798357, 2.590267165445827, 3.6888794541139354],
}

# Golden (W, p) pairs for the inputs above, computed once with an independent
# reference implementation (scipy 1.15.3) and frozen.
SHAPIRO_GOLDEN = {
    ("normal", 5): (0.9983953487114067, 0.9991801829661028),
    ("normal", 10): (0.9979773027372532, 0.9999970154037127),
    ("normal", 20): (0.9984548979891772, 0.9999999999869974),
    ("uniform", 5): (0.986762155211559, 0.9671739349728582),
    ("uniform", 10): (0.9701646110856056, 0.8923673061902978),
    ("uniform", 20): (0.9603751832429884, 0.5513717457916771),
    ("exponential", 5): (0.916637104210767, 0.508481954694536),
    ("exponential", 10): (0.8797573506844889, 0.12965887451297553),
    ("exponential", 20): (0.856357456706601, 0.00682480924712512),
}

# Golden Levene (statistic, p) per (pair, center), same reference source.
LEVENE_GOLDEN = {
    ("norm5_vs_unif5x3", "MEAN"): (5.075602668643941e-05, 0.9944901123466457),
    ("norm5_vs_unif5x3", "MEDIAN"): (5.075602668643941e-05, 0.9944901123466457),
    ("norm10_vs_exp10", "MEAN"): (0.10374594901369988, 0.7510905750483967),
    ("norm10_vs_exp10", "MEDIAN"): (0.17227735667806474, 0.683001105725085),
    ("unif20_vs_exp20x2", "MEAN"): (18.675611869719077, 0.00010757418826216494),
    ("unif20_vs_exp20x2", "MEDIAN"): (11.880054692922243, 0.0014003758043756077),
}

LEVENE_PAIRS = {
    "norm5_vs_unif5x3": (QUANTILE_INPUTS[("normal", 5)],
                         [3 * v for v in QUANTILE_INPUTS[("uniform", 5)]]),
    "norm10_vs_exp10": (QUANTILE_INPUTS[("normal", 10)], QUANTILE_INPUTS[("exponential", 10)]),
    "unif20_vs_exp20x2": (QUANTILE_INPUTS[("uniform", 20)],
                          [2 * v for v in QUANTILE_INPUTS[("exponential", 20)]]),
}


class TestSpecialFunctions:
    def test_incomplete_beta_bounds(self):
        assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
        assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0
        assert regularized_incomplete_beta(1.0, 1.0, 0.3) == pytest.approx(0.3, abs=1e-14)

    def test_incomplete_beta_symmetry(self):
        for a, b, x in [(2.5, 4.0, 0.3), (0.5, 0.5, 0.8), (10.0, 3.0, 0.6)]:
            assert regularized_incomplete_beta(a, b, x) == pytest.approx(
                1.0 - regularized_incomplete_beta(b, a, 1.0 - x), abs=1e-13
            )

    def test_t_sf_published_quantiles(self):
        # t distribution: sf at the published 97.5% quantile of df=10 is 0.025.
        assert student_t_sf(2.228138851986273, 10) == pytest.approx(0.025, abs=1e-10)
        assert student_t_sf(1.0, 5) == pytest.approx(0.18160873382456127, rel=1e-10)
        assert student_t_sf(3.5, 3) == pytest.approx(0.019740518809641387, rel=1e-10)
        assert student_t_sf(0.5, 30) == pytest.approx(0.31036150244256366, rel=1e-10)
        assert student_t_sf(0.0, 7) == 0.5
        assert student_t_sf(-1.0, 5) == pytest.approx(1.0 - 0.18160873382456127, rel=1e-10)

    def test_f_sf_published_quantiles(self):
        # F distribution: sf at the published 95% quantile of (1, 8) is 0.05.
        assert f_sf(5.317655071578714, 1, 8) == pytest.approx(0.05, abs=1e-10)
        assert f_sf(1.0, 1, 8) == pytest.approx(0.3465935070873342, rel=1e-10)
        assert f_sf(4.0, 1, 18) == pytest.approx(0.060821465669332546, rel=1e-10)
        assert f_sf(0.25, 1, 4) == pytest.approx(0.6433299631818626, rel=1e-10)
        assert f_sf(0.0, 1, 8) == 1.0

    def test_normal_helpers(self):
        assert normal_cdf(0.0) == pytest.approx(0.5)
        assert normal_sf(1.6448536269514722) == pytest.approx(0.05, abs=1e-10)
        assert normal_ppf(0.975) == pytest.approx(1.959963984540054, abs=1e-9)


class TestLevene:
    def test_identical_deviation_multisets(self):
        result = levene_test([1, 2, 3], [4, 5, 6], Center.MEAN)
        assert result.statistic == 0.0
        assert result.p_value == 1.0
        assert result.df == (1.0, 4.0)
        assert not result.reject_null

    def test_basic_case_matches_reference(self):
        result = levene_test([1, 2, 3, 4, 5], [2, 4, 6, 8, 10], Center.MEAN)
        assert result.statistic == pytest.approx(2.0571428571428565, rel=1e-12)
        assert result.p_value == pytest.approx(0.18940366109332119, rel=1e-6)

    @pytest.mark.parametrize("pair_name", sorted(LEVENE_PAIRS))
    @pytest.mark.parametrize("center", [Center.MEAN, Center.MEDIAN])
    def test_golden_grid(self, pair_name, center):
        a, b = LEVENE_PAIRS[pair_name]
        result = levene_test(a, b, center)
        stat, p = LEVENE_GOLDEN[(pair_name, center.value)]
        assert result.statistic == pytest.approx(stat, rel=1e-9, abs=1e-12)
        assert result.p_value == pytest.approx(p, abs=1e-3)

    def test_both_groups_constant_degenerate(self):
        with pytest.raises(DegenerateDataError):
            levene_test([2, 2, 2], [5, 5, 5], Center.MEAN)

    def test_zero_within_spread_gives_p_zero(self):
        result = levene_test([0, 2], [0, 8], Center.MEAN)
        assert result.p_value == 0.0
        assert math.isinf(result.statistic)

    def test_size_validation(self):
        with pytest.raises(StatsError):
            levene_test([1], [2, 3])


class TestShapiroWilk:
    @pytest.mark.parametrize("key", sorted(SHAPIRO_GOLDEN))
    def test_golden_grid(self, key):
        result = shapiro_wilk(QUANTILE_INPUTS[key])
        w, p = SHAPIRO_GOLDEN[key]
        assert result.statistic == pytest.approx(w, abs=1e-8)
        assert result.p_value == pytest.approx(p, abs=1e-3)
        assert 0.0 < result.statistic <= 1.0

    def test_normal_quantiles_look_normal(self):
        result = shapiro_wilk(QUANTILE_INPUTS[("normal", 10)])
        assert result.statistic > 0.99
        assert result.p_value > 0.5

    def test_skewed_sample_rejected(self):
        result = shapiro_wilk(QUANTILE_INPUTS[("exponential", 20)])
        assert result.p_value < 0.05
        assert result.reject_null

    def test_location_scale_invariance(self, rng):
        for _ in range(1000):
            n = int(rng.integers(3, 50))
            x = rng.normal(size=n) + rng.exponential(size=n)
            if np.ptp(x) == 0:
                continue
            scale = float(rng.uniform(1e-3, 1e3))
            shift = float(rng.uniform(-1e3, 1e3))
            base = shapiro_wilk(x)
            moved = shapiro_wilk(scale * x + shift)
            assert moved.statistic == pytest.approx(base.statistic, abs=1e-10)
            assert moved.p_value == pytest.approx(base.p_value, abs=1e-8)

    def test_n3_exact_formula(self):
        x = [1.0, 2.0, 4.0]
        result = shapiro_wilk(x)
        w = result.statistic
        expected_p = (6.0 / math.pi) * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        assert result.p_value == pytest.approx(min(max(expected_p, 0.0), 1.0), abs=1e-12)
        assert result.method is PValueMethod.EXACT

    def test_size_limits(self):
        with pytest.raises(StatsError):
            shapiro_wilk([1.0, 2.0])
        with pytest.raises(StatsError):
            shapiro_wilk(list(range(5001)))

    def test_constant_sample_degenerate(self):
        with pytest.raises(DegenerateDataError):
            shapiro_wilk([3.0, 3.0, 3.0, 3.0])


def enumeration_oracle(a, b, alternative):
    """Independent brute-force Mann-Whitney p: walk every assignment of the
    pooled values, recomputing U from scratch by pairwise comparison."""
    pooled = list(a) + list(b)
    n1, n2 = len(a), len(b)

    def u_of(group_a):
        u = 0.0
        group_b = list(pooled)
        for v in group_a:
            group_b.remove(v)
        for x in group_a:
            for y in group_b:
                if x > y:
                    u += 1.0
                elif x == y:
                    u += 0.5
        return u

    u_obs = u_of(list(a))
    mu = n1 * n2 / 2.0
    us = []
    for combo in itertools.combinations(range(n1 + n2), n1):
        us.append(u_of([pooled[i] for i in combo]))
    us = np.array(us)
    if alternative is Alternative.TWO_SIDED:
        return float(np.mean(np.abs(us - mu) >= abs(u_obs - mu)))
    if alternative is Alternative.GREATER:
        return float(np.mean(us <= u_obs))
    return float(np.mean(us >= u_obs))


class TestMannWhitney:
    def test_textbook_case(self):
        result = mann_whitney_u([1, 2], [3, 4])
        assert result.statistic == 0.0
        assert result.p_value == pytest.approx(2 / 6, abs=1e-15)
        assert result.method is PValueMethod.EXACT

    def test_identical_multisets(self):
        result = mann_whitney_u([1, 2, 3], [1, 2, 3])
        assert result.statistic == 4.5
        assert result.p_value == 1.0

    def test_separated_five_vs_five(self):
        a = [0.777, 0.7775, 0.7765, 0.777, 0.7772]
        b = [0.798, 0.7985, 0.7975, 0.798, 0.7982]
        result = mann_whitney_u(a, b)
        assert result.p_value == pytest.approx(2 / 252, abs=1e-15)
        assert result.reject_null

    def test_exact_matches_oracle_tie_free_grid(self, rng):
        for n1 in range(1, 7):
            for n2 in range(1, 7):
                for _ in range(2):
                    pooled = rng.permutation(rng.normal(size=n1 + n2))
                    a, b = pooled[:n1].tolist(), pooled[n1:].tolist()
                    for alt in Alternative:
                        mine = mann_whitney_u(a, b, alt).p_value
                        assert mine == pytest.approx(enumeration_oracle(a, b, alt), abs=1e-12)

    def test_exact_matches_oracle_with_ties(self, rng):
        for _ in range(50):
            n1, n2 = int(rng.integers(2, 6)), int(rng.integers(2, 6))
            pooled = rng.integers(0, 4, size=n1 + n2).astype(float)
            a, b = pooled[:n1].tolist(), pooled[n1:].tolist()
            mine = mann_whitney_u(a, b, Alternative.TWO_SIDED).p_value
            assert mine == pytest.approx(enumeration_oracle(a, b, Alternative.TWO_SIDED), abs=1e-12)

    def test_u_symmetry_exhaustive(self, rng):
        for n1 in range(1, 7):
            for n2 in range(1, 7):
                values = rng.integers(0, 5, size=n1 + n2).astype(float)
                a, b = values[:n1].tolist(), values[n1:].tolist()
                u_ab = mann_whitney_u(a, b).statistic
                u_ba = mann_whitney_u(b, a).statistic
                assert u_ab + u_ba == pytest.approx(n1 * n2, abs=1e-12)

    def test_monotone_shift_weakly_decreases_greater_p(self, rng):
        for _ in range(25):
            n1, n2 = int(rng.integers(2, 6)), int(rng.integers(2, 6))
            a = rng.normal(size=n1).tolist()
            b = rng.normal(size=n2).tolist()
            spread = max(a + b) - min(a + b)
            base = mann_whitney_u(a, b, Alternative.GREATER).p_value
            shifted = mann_whitney_u(a, [v + spread + 1.0 for v in b], Alternative.GREATER).p_value
            assert shifted <= base + 1e-15

    def test_large_sample_uses_normal_approximation(self, rng):
        a = rng.normal(size=30).tolist()
        b = (rng.normal(size=30) + 0.5).tolist()
        result = mann_whitney_u(a, b)
        assert result.method is PValueMethod.APPROXIMATE
        assert 0.0 <= result.p_value <= 1.0

    def test_approximation_identical_large_samples(self):
        a = list(range(20))
        result = mann_whitney_u(a, a)
        assert result.p_value == 1.0

    def test_empty_group_rejected(self):
        with pytest.raises(StatsError):
            mann_whitney_u([], [1.0])


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=6),
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=6),
)
def test_mw_p_in_unit_interval_and_symmetry(a, b):
    result = mann_whitney_u(a, b)
    assert 0.0 <= result.p_value <= 1.0
    assert result.statistic + mann_whitney_u(b, a).statistic == pytest.approx(len(a) * len(b))


class TestTTest:
    def test_pooled_matches_reference(self):
        result = two_sample_t_test([1, 2, 3, 4], [2, 3, 4, 5], pooled=True)
        assert result.statistic == pytest.approx(-1.0954451150103321, rel=1e-12)
        assert result.p_value == pytest.approx(0.3153335962012299, rel=1e-9)
        assert result.df == (6.0,)

    def test_welch_matches_reference(self):
        result = two_sample_t_test([1, 2, 3, 4], [2, 3, 4, 9], pooled=False)
        assert result.statistic == pytest.approx(-1.1881770515720091, rel=1e-12)
        assert result.p_value == pytest.approx(0.30041896897270826, rel=1e-9)

    def test_zero_variance_equal_means(self):
        result = two_sample_t_test([2, 2], [2, 2])
        assert result.p_value == 1.0


class TestCompareArms:
    def test_bimodal_pooled_selects_mann_whitney(self):
        # Two tight clusters far apart: per-group normality passes, pooled
        # normality rejects, so the nonparametric branch runs.
        a = [0.777, 0.7775, 0.7765, 0.777, 0.7772]
        b = [0.798, 0.7985, 0.7975, 0.798, 0.7982]
        trace = compare_arms(a, b)
        assert trace.levene is not None and not trace.levene.reject_null
        assert trace.shapiro_pooled.reject_null
        assert trace.normality_rejected
        assert trace.selected_test == "mann-whitney"
        assert trace.final.p_value == pytest.approx(2 / 252, abs=1e-12)
        assert trace.reject_null

    def test_normalish_arms_select_pooled_t(self):
        a = [v + 1.0 for v in QUANTILE_INPUTS[("normal", 10)]]
        b = [v + 1.3 for v in QUANTILE_INPUTS[("normal", 10)]]
        trace = compare_arms(a, b)
        assert not trace.normality_rejected
        assert trace.selected_test == "t-test (pooled)"

    def test_unequal_variances_select_welch(self):
        # Normal-shaped groups with very different spreads: Levene rejects,
        # normality holds, so the unpooled t-test runs.
        a = [v + 0.5 for v in QUANTILE_INPUTS[("normal", 10)]]
        b = [6.0 * v + 1.0 for v in QUANTILE_INPUTS[("normal", 10)]]
        trace = compare_arms(a, b)
        assert trace.levene.reject_null
        assert not trace.normality_rejected
        assert trace.selected_test == "t-test (welch)"

    def test_identical_arms_no_rejection(self):
        arm = [0.79, 0.80, 0.81, 0.80, 0.795]
        trace = compare_arms(arm, arm)
        assert trace.final.p_value == 1.0
        assert not trace.reject_null

    def test_constant_arms_degenerate_fallback(self):
        trace = compare_arms([0.8] * 5, [0.8] * 5)
        assert trace.levene is None
        assert trace.shapiro_a is None
        assert trace.selected_test == "mann-whitney"
        assert trace.final.p_value == 1.0
        assert any("degenerate" in n for n in trace.notes)

    def test_trace_serializes(self):
        import json

        trace = compare_arms([1.0, 2.0, 3.0, 4.0, 5.0], [2.0, 3.0, 4.0, 5.0, 6.0])
        payload = json.loads(json.dumps(trace.to_dict()))
        assert payload["final"]["p_value"] == trace.final.p_value
        assert payload["selected_test"] == trace.selected_test
        text = trace.summary_text()
        assert "levene" in text and "shapiro-wilk (pooled)" in text and "decision:" in text

    def test_alpha_respected(self):
        a = [0.777, 0.7775, 0.7765, 0.777, 0.7772]
        b = [0.798, 0.7985, 0.7975, 0.798, 0.7982]
        trace = compare_arms(a, b, alpha=0.001)
        assert not trace.final.reject_null  # p ~ 0.0079 > 0.001


class TestResultInvariants:
    def test_reject_flag_consistent_with_alpha(self, rng):
        for _ in range(50):
            a = rng.normal(size=6).tolist()
            b = rng.normal(loc=rng.uniform(0, 2), size=6).tolist()
            for result in (mann_whitney_u(a, b), levene_test(a, b), two_sample_t_test(a, b)):
                assert result.reject_null == (result.p_value < result.alpha)

    def test_sample_validates_finiteness(self):
        with pytest.raises(StatsError):
            Sample(values=(1.0, float("nan")))
