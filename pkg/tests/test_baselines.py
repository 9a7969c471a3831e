import math

import numpy as np
import pytest
from scipy import signal

from cvforecast.baselines import (
    DEFAULT_ARIMA_GRID,
    HES_ALPHA_GRID,
    BaselineSpec,
    arima_aic,
    arima_one_step,
    fit_arima,
    fit_predict_baseline,
    hes_smooth,
    linear_trend,
    select_arima_order,
    select_hes_alpha,
)
from cvforecast.errors import ContractError, FitError, SelectionError
from cvforecast.flowparams import TimeSeries


def ar1(n, phi, seed, mean=0.0):
    e = np.random.default_rng(seed).standard_normal(n)
    return signal.lfilter([1.0], [1.0, -phi], e) + mean


class TestSpec:
    def test_parse(self):
        assert BaselineSpec.parse("arima(2,1,0)").order == (2, 1, 0)
        assert BaselineSpec.parse("hes(0.3)").alpha == 0.3
        assert BaselineSpec.parse("hes").alpha is None

    @pytest.mark.parametrize(
        "kw",
        [
            {"kind": "prophet"},
            {"kind": "arima"},
            {"kind": "arima", "order": (-1, 0, 0)},
            {"kind": "arima", "order": (1, 2, 0)},
            {"kind": "hes", "alpha": 0.0},
            {"kind": "hes", "alpha": 1.5},
            {"kind": "arima_auto", "grid": ()},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ContractError):
            BaselineSpec(**kw)

    def test_unknown_name(self):
        with pytest.raises(ContractError):
            BaselineSpec.parse("arima(1,0)")


class TestLinearRegression:
    def test_exact_line(self):
        t = np.arange(100)
        y = 2.0 * t + 1.0
        res = fit_predict_baseline(y[:70], y[70:], BaselineSpec("linear_regression"))
        np.testing.assert_allclose(res.predictions, y[70:], rtol=0, atol=1e-9)
        assert res.diagnostics["slope"] == pytest.approx(2.0)

    def test_residuals_orthogonal_to_time(self, rng):
        y = rng.normal(size=500) * 30 + 7
        a, b = linear_trend(y)
        t = np.arange(500)
        r = y - (a + b * t)
        assert abs(r @ t) < 1e-8 * len(y) * np.abs(y).max() * len(y)
        assert abs(r.sum()) < 1e-8 * len(y) * np.abs(y).max()

    def test_single_point_slope_zero(self):
        assert linear_trend([5.0]) == (5.0, 0.0)

    def test_constant_series(self):
        res = fit_predict_baseline(np.full(20, 3.0), np.full(5, 3.0), BaselineSpec("linear_regression"))
        np.testing.assert_array_equal(res.predictions, 3.0)

    def test_fit_window(self):
        y = np.concatenate([np.zeros(50), np.arange(50.0)])
        res = fit_predict_baseline(y, np.zeros(3), BaselineSpec("linear_regression", fit_window=50))
        np.testing.assert_allclose(res.predictions, [50, 51, 52], atol=1e-9)


class TestHes:
    def test_alpha_one_is_persistence(self, rng):
        x = rng.normal(size=60)
        res = fit_predict_baseline(x[:40], x[40:], BaselineSpec("hes", alpha=1.0))
        np.testing.assert_array_equal(res.predictions, x[39:59])

    def test_recursion_by_hand(self):
        s = hes_smooth([2.0, 4.0, 0.0], 0.5)
        np.testing.assert_allclose(s, [2.0, 3.0, 1.5])

    def test_small_alpha_tends_to_initial_level(self, rng):
        x = rng.normal(size=200) + 5
        s = hes_smooth(x, 1e-9)
        np.testing.assert_allclose(s, x[0], atol=1e-6)

    def test_auto_alpha_on_grid(self, rng):
        a = select_hes_alpha(np.cumsum(rng.normal(size=300)))
        assert a in HES_ALPHA_GRID
        # A random walk is forecast best by its last value.
        assert a == 1.0

    def test_auto_alpha_smooths_white_noise(self, rng):
        assert select_hes_alpha(rng.normal(size=2000)) == 0.05


class TestArima:
    def test_white_noise_mean_only(self, rng):
        x = rng.normal(size=400) + 3.0
        f = fit_arima(x, (0, 0, 0))
        assert f.intercept == pytest.approx(x.mean(), rel=1e-12)
        css = np.sum((x - x.mean()) ** 2)
        assert f.aic == pytest.approx(400 * math.log(css / 400) + 2, rel=1e-12)

    def test_ar1_recovery(self):
        f = fit_arima(ar1(5000, 0.8, 0, mean=3.0), (1, 0, 0))
        assert 0.75 <= f.ar[0] <= 0.85
        assert f.mean == pytest.approx(3.0, abs=0.2)

    def test_ma1_recovery(self):
        e = np.random.default_rng(1).standard_normal(5001)
        x = e[1:] + 0.5 * e[:-1]
        f = fit_arima(x, (0, 0, 1))
        assert 0.4 <= f.ma[0] <= 0.6

    def test_differencing_nested(self):
        x = np.cumsum(ar1(2000, 0.6, 2))
        assert fit_arima(x, (1, 1, 0)).sigma2 < fit_arima(x, (0, 1, 0)).sigma2

    def test_aic_monotone_in_css(self):
        vals = [arima_aic(c, 100, 1, 1) for c in (1.0, 2.0, 5.0)]
        assert vals == sorted(vals)
        assert arima_aic(1.0, 100, 2, 1) - arima_aic(1.0, 100, 1, 1) == pytest.approx(2.0)

    def test_too_short(self):
        with pytest.raises(ContractError):
            fit_arima(np.arange(20.0), (1, 0, 1))

    def test_constant_fails(self):
        with pytest.raises(FitError):
            fit_arima(np.full(50, 1.0), (1, 0, 0))

    def test_iteration_budget(self):
        with pytest.raises(FitError, match="ARIMA"):
            fit_arima(ar1(500, 0.5, 3), (2, 0, 2), max_iter=3)

    def test_one_step_is_teacher_forced(self):
        x = ar1(300, 0.7, 4, mean=1.0)
        f = fit_arima(x[:200], (1, 0, 0))
        pred = arima_one_step(f, x)
        np.testing.assert_allclose(pred[1:], f.intercept + f.ar[0] * x[:-1], rtol=1e-10)
        res = fit_predict_baseline(x[:200], x[200:], BaselineSpec("arima", order=(1, 0, 0)))
        np.testing.assert_allclose(res.predictions, pred[200:], rtol=1e-12)

    def test_one_step_differenced(self):
        x = np.cumsum(ar1(300, 0.5, 5))
        f = fit_arima(x, (1, 1, 0))
        pred = arima_one_step(f, x)
        dx = np.diff(x)
        expect = x[1:-1] + f.mean + f.ar[0] * (dx[:-1] - f.mean)
        np.testing.assert_allclose(pred[2:], expect, rtol=1e-10)


class TestSelection:
    def test_ar1_selects_ar_terms(self):
        hits = sum(select_arima_order(ar1(300, 0.8, s)).order[0] >= 1 for s in range(20))
        assert hits >= 16

    def test_white_noise_near_minimum(self):
        x = np.random.default_rng(0).normal(size=500)
        best = select_arima_order(x)
        assert fit_arima(x, (0, 0, 0)).aic - best.aic <= 2.0

    def test_singleton_grid(self):
        x = ar1(300, 0.5, 1)
        assert select_arima_order(x, [(2, 0, 1)]).order == (2, 0, 1)

    def test_tie_break_prefers_simpler(self, monkeypatch):
        import cvforecast.baselines as b

        real = b.fit_arima

        def flat_aic(train, order, max_iter=None):
            f = real(train, order, max_iter)
            return b.ArimaFit(**{**f.__dict__, "aic": 0.0})

        monkeypatch.setattr(b, "fit_arima", flat_aic)
        assert b.select_arima_order(ar1(200, 0.5, 0), [(2, 1, 0), (1, 1, 0), (1, 0, 0)]).order == (1, 0, 0)

    def test_all_fail(self):
        with pytest.raises(SelectionError) as exc:
            select_arima_order(np.full(100, 2.0), [(1, 0, 0), (0, 1, 0)])
        assert set(exc.value.diagnostics) == {(1, 0, 0), (0, 1, 0)}

    def test_empty_grid(self):
        with pytest.raises(ContractError):
            select_arima_order(ar1(100, 0.5, 0), [])

    def test_default_grid_shape(self):
        assert len(DEFAULT_ARIMA_GRID) == 32


class TestDispatch:
    def test_test_must_follow_train(self):
        s = TimeSeries(values=np.arange(100.0))
        with pytest.raises(ContractError):
            fit_predict_baseline(s.slice(0, 50), s.slice(60, 100), BaselineSpec("hes"))

    def test_empty_train(self):
        with pytest.raises(ContractError):
            fit_predict_baseline([], [1.0], BaselineSpec("hes"))

    def test_auto_arima_diagnostics(self):
        x = ar1(400, 0.6, 9, mean=10)
        res = fit_predict_baseline(x[:300], x[300:], BaselineSpec("arima_auto", grid=((1, 0, 0), (0, 0, 0))))
        assert res.diagnostics["order"] == [1, 0, 0]
        assert len(res.predictions) == 100
