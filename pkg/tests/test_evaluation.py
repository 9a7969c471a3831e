import math

import numpy as np
import pytest
from scipy import stats

from cvforecast.errors import ContractError, MetricError
from cvforecast.evaluation import (
    compute_metrics,
    mae,
    mape,
    paired_t_test,
    rmse,
    select_candidate,
    sweep,
    sweep_csv,
    t_sf,
)
from cvforecast.predictors import Normalization


class TestMetrics:
    def test_identity(self):
        m = compute_metrics([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert (m.rmse, m.mae, m.mape_pct, m.n) == (0.0, 0.0, 0.0, 3)

    def test_hand_values(self):
        assert rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5))
        assert rmse([0, 0], [3, 4]) == pytest.approx(3.53553, abs=1e-5)
        assert mae([0, 0], [3, 4]) == 3.5
        assert mape([10, 20], [9, 22]) == pytest.approx(10.0)

    def test_zero_actual(self):
        with pytest.raises(MetricError) as exc:
            compute_metrics([0, 0], [3, 4])
        assert exc.value.indices == [0, 1]
        m = compute_metrics([0, 0], [3, 4], with_mape=False)
        assert math.isnan(m.mape_pct) and m.mae == 3.5

    def test_root_sum_rmse(self):
        assert rmse([0, 0, 0, 0], [1, 1, 1, 1], mode="root_sum") == pytest.approx(0.5)
        assert rmse([0, 0, 0, 0], [1, 1, 1, 1]) == 1.0
        with pytest.raises(ContractError):
            rmse([1], [1], mode="cubic")

    def test_normalized(self):
        norm = Normalization(0.0, 10.0)
        m = compute_metrics([5.0, 6.0], [6.0, 6.0], normalization=norm)
        assert m.normalized and m.rmse == pytest.approx(math.sqrt(0.005))
        assert m.mape_pct == pytest.approx(10.0)

    def test_mae_le_rmse_and_permutation_invariant(self, rng):
        for _ in range(50):
            a = rng.normal(size=30) + 5
            p = rng.normal(size=30) + 5
            m = compute_metrics(a, p)
            assert m.mae <= m.rmse + 1e-15
            perm = rng.permutation(30)
            m2 = compute_metrics(a[perm], p[perm])
            assert m2.rmse == pytest.approx(m.rmse, rel=1e-14) and m2.mape_pct == pytest.approx(m.mape_pct, rel=1e-14)

    def test_bad_lengths(self):
        with pytest.raises(ContractError):
            compute_metrics([1.0, 2.0], [1.0])
        with pytest.raises(ContractError):
            compute_metrics([], [])


class TestTTest:
    def test_equal(self):
        r = paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert r.t_stat == 0 and not r.significant_at_95 and r.dof == 2 and r.p_value == 1.0

    def test_planted_bias(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=100)
        r = paired_t_test(a, a + rng.normal(1.0, 0.1, size=100))
        assert r.significant_at_95 and r.p_value < 1e-3

    def test_matches_scipy(self, rng):
        for n in (2, 5, 40, 2800):
            a = rng.normal(size=n)
            p = a + rng.normal(0.05, 1.0, size=n)
            ours = paired_t_test(a, p)
            ref = stats.ttest_rel(p, a)
            assert ours.t_stat == pytest.approx(ref.statistic, rel=1e-12)
            assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-300)
            assert ours.dof == n - 1

    def test_tail_function(self):
        assert t_sf(0.0, 10) == pytest.approx(1.0)
        assert t_sf(2.228138851986274, 10) == pytest.approx(0.05, rel=1e-9)

    def test_constant_difference_is_infinite(self):
        r = paired_t_test([1.0, 2.0, 3.0], [2.0, 3.0, 4.0])
        assert r.infinite_t and math.isinf(r.t_stat) and r.significant_at_95 and r.p_value == 0.0

    def test_size_under_null(self):
        rng = np.random.default_rng(2024)
        rej = sum(paired_t_test(np.zeros(100), rng.normal(size=100)).significant_at_95 for _ in range(1000))
        assert 0.03 <= rej / 1000 <= 0.07

    def test_too_short(self):
        with pytest.raises(ContractError):
            paired_t_test([1.0], [2.0])


class TestSweep:
    def test_quartiles(self):
        s = sweep({10: [1, 2, 3, 4, 5]})[10]
        assert (s.median, s.q1, s.q3, s.min, s.max, s.trials) == (3, 2, 4, 1, 5, 5)

    def test_argmin_median(self):
        st = sweep({50: [0.03, 0.03, 0.03], 100: [0.02, 0.02, 0.02]})
        assert select_candidate(st) == 100

    def test_tie_goes_to_smaller(self):
        st = sweep({200: [1, 2, 3], 25: [1, 2, 3], 100: [1, 2, 3]})
        assert select_candidate(st) == 25

    def test_quartile_ordering(self, rng):
        for s in sweep({k: rng.normal(size=30) for k in range(5)}).values():
            assert s.min <= s.q1 <= s.median <= s.q3 <= s.max

    def test_errors(self):
        with pytest.raises(ContractError):
            sweep({})
        with pytest.raises(ContractError):
            sweep({1: []})
        with pytest.raises(ContractError):
            select_candidate({})

    def test_csv(self):
        text = sweep_csv(sweep({1: [1.0, 3.0]}))
        assert text.splitlines() == ["candidate,median,q1,q3,min,max", "1,2.0,1.5,2.5,1.0,3.0"]
