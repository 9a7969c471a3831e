"""Statistical comparison models: linear trend, ARIMA and single exponential smoothing.

Every baseline produces teacher-forced one-step forecasts over the test range,
i.e. the forecast for step ``t`` uses observations up to ``t - 1`` only.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, signal
from scipy.linalg import solve_toeplitz

from .errors import ContractError, FitError, SelectionError
from .flowparams import TimeSeries

log = logging.getLogger(__name__)

BASELINE_KINDS = ("linear_regression", "arima", "arima_auto", "hes")
HES_ALPHA_GRID = tuple(round(0.05 * k, 2) for k in range(1, 21))
DEFAULT_ARIMA_GRID = tuple(itertools.product(range(4), (0, 1), range(4)))


@dataclass(frozen=True)
class BaselineSpec:
    """Which baseline to fit.

    ``order`` is used by ``arima``, ``grid`` by ``arima_auto`` (a sequence
    of ``(p, d, q)``), ``alpha`` by ``hes`` (``None`` selects it from the
    grid). ``fit_window`` limits fitting to the last that many training
    values; ``None`` uses the whole training series.
    """

    kind: str
    order: Optional[Tuple[int, int, int]] = None
    grid: Optional[Tuple[Tuple[int, int, int], ...]] = None
    alpha: Optional[float] = None
    fit_window: Optional[int] = None

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ContractError(f"unknown baseline kind {self.kind!r}")
        if self.kind == "arima":
            if self.order is None:
                raise ContractError("arima needs an order")
            _check_order(self.order)
        if self.grid is not None:
            if len(self.grid) == 0:
                raise ContractError("ARIMA grid is empty")
            for o in self.grid:
                _check_order(o)
        if self.alpha is not None and not 0 < self.alpha <= 1:
            raise ContractError("alpha must lie in (0, 1]")
        if self.fit_window is not None and self.fit_window < 2:
            raise ContractError("fit_window must be >= 2")

    @classmethod
    def parse(cls, name: str) -> "BaselineSpec":
        """Build a spec from a predictor name such as ``arima(1,0,0)`` or ``hes(0.3)``."""
        name = name.strip()
        if name in ("linear_regression", "arima_auto", "hes"):
            return cls(kind=name)
        if name.startswith("arima(") and name.endswith(")"):
            parts = tuple(int(v) for v in name[6:-1].split(","))
            if len(parts) != 3:
                raise ContractError(f"bad ARIMA order in {name!r}")
            return cls(kind="arima", order=parts)
        if name.startswith("hes(") and name.endswith(")"):
            return cls(kind="hes", alpha=float(name[4:-1]))
        raise ContractError(f"unknown baseline {name!r}")


def _check_order(order):
    if len(order) != 3:
        raise ContractError(f"order must be (p, d, q), got {order!r}")
    p, d, q = order
    if p < 0 or q < 0:
        raise ContractError("p and q must be non-negative")
    if d not in (0, 1):
        raise ContractError("d must be 0 or 1")


@dataclass(frozen=True)
class ArimaFit:
    order: Tuple[int, int, int]
    ar: np.ndarray
    ma: np.ndarray
    intercept: float
    mean: float
    sigma2: float
    css: float
    n_obs: int
    aic: float
    iterations: int = 0

    def diagnostics(self) -> dict:
        return {
            "order": list(self.order),
            "ar": self.ar.tolist(),
            "ma": self.ma.tolist(),
            "intercept": self.intercept,
            "sigma2": self.sigma2,
            "aic": self.aic,
        }


@dataclass(frozen=True)
class BaselineResult:
    predictions: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _values(series):
    if isinstance(series, TimeSeries):
        return series.values
    return np.asarray(series, dtype=np.float64)


# ---------------------------------------------------------------- regression


def linear_trend(train) -> Tuple[float, float]:
    """OLS ``(intercept, slope)`` of value on time index ``0..n-1``.

    A single observation gives slope 0.
    """
    y = _values(train)
    n = len(y)
    if n == 0:
        raise ContractError("training series is empty")
    t = np.arange(n, dtype=np.float64)
    tc = t - t.mean()
    sxx = float(tc @ tc)
    slope = float(tc @ (y - y.mean())) / sxx if sxx > 0 else 0.0
    return float(y.mean() - slope * t.mean()), slope


# ---------------------------------------------------------------- smoothing


def hes_smooth(x, alpha: float, s0: Optional[float] = None) -> np.ndarray:
    """Smoothed levels ``s_t = alpha x_t + (1 - alpha) s_{t-1}`` with ``s_{-1} = s0``.

    ``s0`` defaults to the first observation.
    """
    x = np.asarray(x, dtype=np.float64)
    if not 0 < alpha <= 1:
        raise ContractError("alpha must lie in (0, 1]")
    s0 = float(x[0]) if s0 is None else s0
    out, _ = signal.lfilter([alpha], [1.0, alpha - 1.0], x, zi=[(1.0 - alpha) * s0])
    return out


def hes_sse(x, alpha: float) -> float:
    """In-sample one-step squared error of single exponential smoothing."""
    x = np.asarray(x, dtype=np.float64)
    s = hes_smooth(x, alpha)
    e = x[1:] - s[:-1]
    return float(e @ e)


def select_hes_alpha(x, grid: Sequence[float] = HES_ALPHA_GRID) -> float:
    """Grid value with the smallest in-sample SSE (ties go to the smaller alpha)."""
    sse = [hes_sse(x, a) for a in grid]
    return float(grid[int(np.argmin(sse))])


# ---------------------------------------------------------------- ARIMA


def _difference(x, d):
    return np.diff(x, n=d) if d else np.asarray(x, dtype=np.float64)


def _residuals(y, mean, ar, ma):
    """Conditional residuals of an ARMA(p, q) around ``mean``.

    The first ``p`` observations are conditioned on and pre-sample errors
    are zero, so ``len(y) - p`` residuals are returned.
    """
    p = len(ar)
    yc = y - mean
    w = signal.lfilter(np.concatenate([[1.0], -ar]), [1.0], yc)[p:]
    if len(ma):
        w = signal.lfilter([1.0], np.concatenate([[1.0], ma]), w)
    return w


def _invertible(ma) -> bool:
    if not len(ma):
        return True
    return bool(np.all(np.abs(np.roots(np.concatenate([[1.0], ma]))) < 1.0))


def _yule_walker(yc, p):
    if p == 0:
        return np.zeros(0)
    n = len(yc)
    r = np.array([yc[: n - k] @ yc[k:] for k in range(p + 1)]) / n
    if r[0] <= 0:
        return np.zeros(p)
    return solve_toeplitz(r[:p], r[1:])


def arima_aic(css: float, n: int, p: int, q: int) -> float:
    return n * math.log(css / n) + 2.0 * (p + q + 1)


def fit_arima(train, order, max_iter: Optional[int] = None) -> ArimaFit:
    """Conditional-sum-of-squares ARIMA fit with a Nelder-Mead search.

    The series is differenced ``d`` times and standardised; the simplex
    starts from Yule-Walker AR estimates with zero MA terms. Non-invertible
    MA polynomials are rejected during the search.
    """
    _check_order(order)
    p, d, q = order
    x = _values(train)
    k = p + q + 1
    if len(x) < 10 * k:
        raise ContractError(f"ARIMA{tuple(order)} needs at least {10 * k} observations, got {len(x)}")
    y = _difference(x, d)
    loc = float(y.mean())
    scale = float(y.std())
    if not scale > 0:
        raise FitError(f"ARIMA{tuple(order)}: differenced series has zero variance")
    z = (y - loc) / scale

    def css(theta):
        ma = theta[1 + p:]
        if not _invertible(ma):
            return np.inf
        e = _residuals(z, theta[0], theta[1:1 + p], ma)
        v = float(e @ e)
        return v if math.isfinite(v) else np.inf

    start = np.concatenate([[0.0], _yule_walker(z, p), np.zeros(q)])
    if max_iter is None:
        max_iter = 1000 * k
    if k == 1:
        # Mean-only model: CSS minimiser is the sample mean.
        theta, iters, ok = np.zeros(1), 0, True
    else:
        res = optimize.minimize(
            css, start, method="Nelder-Mead",
            options={"maxiter": max_iter, "maxfev": 2 * max_iter, "xatol": 1e-7, "fatol": 1e-9 * len(z)},
        )
        theta, iters, ok = res.x, int(res.nit), bool(res.success)
    if not ok:
        raise FitError(f"ARIMA{tuple(order)}: simplex search did not converge in {max_iter} iterations")
    ar = theta[1:1 + p].copy()
    ma = theta[1 + p:].copy()
    mean = loc + scale * float(theta[0])
    e = _residuals(y, mean, ar, ma)
    n = len(e)
    ss = float(e @ e)
    if not (math.isfinite(ss) and ss > 0 and np.isfinite(theta).all()):
        raise FitError(f"ARIMA{tuple(order)}: degenerate fit (CSS = {ss})")
    return ArimaFit(
        order=tuple(order),
        ar=ar,
        ma=ma,
        intercept=mean * (1.0 - float(ar.sum())),
        mean=mean,
        sigma2=ss / n,
        css=ss,
        n_obs=n,
        aic=arima_aic(ss, n, p, q),
        iterations=iters,
    )


def select_arima_order(train, grid: Sequence[Tuple[int, int, int]] = DEFAULT_ARIMA_GRID) -> ArimaFit:
    """Minimum-AIC fit over ``grid``; ties go to smaller ``p + q`` then smaller ``d``.

    Cells that fail to fit are skipped. If all fail a ``SelectionError``
    carries the per-cell messages.
    """
    if len(grid) == 0:
        raise ContractError("ARIMA grid is empty")
    best, best_key = None, None
    failures = {}
    for order in grid:
        try:
            fit = fit_arima(train, order)
        except (FitError, ContractError) as exc:
            failures[tuple(order)] = str(exc)
            log.debug("ARIMA%s skipped: %s", tuple(order), exc)
            continue
        key = (fit.aic, order[0] + order[2], order[1])
        if best_key is None or key < best_key:
            best, best_key = fit, key
    if best is None:
        raise SelectionError("no ARIMA order in the grid could be fitted", diagnostics=failures)
    return best


def arima_one_step(fit: ArimaFit, history) -> np.ndarray:
    """One-step forecasts of every value of ``history`` from its own past.

    Entry ``t`` forecasts ``history[t]``; the first ``p + d`` entries, which
    lack enough past, repeat the observation itself.
    """
    p, d, _ = fit.order
    x = _values(history)
    y = _difference(x, d)
    e = _residuals(y, fit.mean, fit.ar, fit.ma)
    yhat = y[p:] - e
    out = x.copy()
    if d:
        out[p + 1:] = x[p:-1] + yhat
    else:
        out[p:] = yhat
    return out


# ---------------------------------------------------------------- dispatch


def fit_predict_baseline(train, test, spec: BaselineSpec) -> BaselineResult:
    """Fit ``spec`` on ``train`` and forecast every test step one step ahead."""
    x_train = _values(train)
    x_test = _values(test)
    if len(x_train) == 0:
        raise ContractError("training series is empty")
    if isinstance(train, TimeSeries) and isinstance(test, TimeSeries):
        if test.start_frame != train.start_frame + len(train):
            raise ContractError("test series must follow the training series directly")
    fit_x = x_train if spec.fit_window is None else x_train[-spec.fit_window:]
    n_tr, n_te = len(x_train), len(x_test)

    if spec.kind == "linear_regression":
        a, b = linear_trend(fit_x)
        offset = n_tr - len(fit_x)
        t = np.arange(n_tr, n_tr + n_te) - offset
        return BaselineResult(a + b * t, {"intercept": a, "slope": b})

    history = np.concatenate([x_train, x_test])
    if spec.kind == "hes":
        alpha = spec.alpha if spec.alpha is not None else select_hes_alpha(fit_x)
        s = hes_smooth(history[n_tr - len(fit_x):], alpha)
        return BaselineResult(s[len(fit_x) - 1:-1].copy(), {"alpha": alpha})

    if spec.kind == "arima":
        fit = fit_arima(fit_x, spec.order)
    else:
        fit = select_arima_order(fit_x, spec.grid or DEFAULT_ARIMA_GRID)
    pred = arima_one_step(fit, history)
    return BaselineResult(pred[n_tr:].copy(), fit.diagnostics())
