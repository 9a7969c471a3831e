"""Scalar noise reduction: moving average, Kalman filter, RTS smoothers.

The state model is ``x_t = A x_{t-1} + B u_t + w_t`` with ``w_t ~ N(0, Q)``
and measurements ``z_t = H x_t + v_t`` with ``v_t ~ N(0, R)``. ``x0``/``P0``
describe the state *before* the first measurement, so the first prior is
``A x0 + B u_0``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, DegenerateInputError, NumericError
from .flowparams import TimeSeries

DEFAULT_MA_WINDOW = 10
DEFAULT_LAG = 20
DEFAULT_Q_RATIO = 0.01


@dataclass(frozen=True)
class FilterParams:
    A: float = 1.0
    B: float = 0.0
    H: float = 1.0
    Q: float = 0.01
    R: float = 1.0
    x0: float = 0.0
    P0: float = 1.0
    u: Optional[Sequence[float]] = None

    def __post_init__(self):
        if not self.Q >= 0:
            raise ContractError("Q must be non-negative")
        if not self.R > 0:
            raise ContractError("R must be positive")
        if not self.P0 > 0:
            raise ContractError("P0 must be positive")

    def control(self, n):
        if self.u is None:
            return np.zeros(n)
        u = np.asarray(self.u, dtype=np.float64)
        if len(u) < n:
            raise ContractError(f"control sequence has {len(u)} entries, need {n}")
        return u[:n]

    def to_dict(self):
        return {k: getattr(self, k) for k in ("A", "B", "H", "Q", "R", "x0", "P0")}


@dataclass(frozen=True)
class FilterResult:
    prior_x: np.ndarray
    prior_P: np.ndarray
    post_x: np.ndarray
    post_P: np.ndarray
    gain: np.ndarray

    def __len__(self):
        return len(self.post_x)


@dataclass(frozen=True)
class SmoothResult:
    smooth_x: np.ndarray
    smooth_P: np.ndarray
    smoother_gain: np.ndarray


def _values(series):
    if isinstance(series, TimeSeries):
        return series.values
    return np.asarray(series, dtype=np.float64)


def _wrap(series, values):
    if isinstance(series, TimeSeries):
        return series.with_values(values)
    return np.asarray(values)


def moving_average(series, window: int = DEFAULT_MA_WINDOW):
    """Causal trailing mean over the last ``min(window, t+1)`` values."""
    if window < 1:
        raise ContractError("window must be >= 1")
    x = _values(series)
    c = np.concatenate([[0.0], np.cumsum(x)])
    n = np.arange(1, len(x) + 1)
    lo = np.maximum(n - window, 0)
    out = (c[n] - c[lo]) / (n - lo)
    return _wrap(series, out)


def kalman_forward(series, params: FilterParams) -> FilterResult:
    z = _values(series)
    n = len(z)
    if not np.isfinite(z).all():
        raise ContractError("series must be finite")
    A, B, H, Q, R = params.A, params.B, params.H, params.Q, params.R
    u = params.control(n)
    prior_x = np.empty(n)
    prior_P = np.empty(n)
    post_x = np.empty(n)
    post_P = np.empty(n)
    gain = np.empty(n)
    x, P = params.x0, params.P0
    for t in range(n):
        xp = A * x + B * u[t]
        Pp = A * P * A + Q
        K = Pp * H / (H * Pp * H + R)
        x = xp + K * (z[t] - H * xp)
        P = (1.0 - K * H) * Pp
        if not (math.isfinite(x) and math.isfinite(P) and math.isfinite(K)):
            raise NumericError(f"non-finite Kalman state at step {t}", step=t)
        prior_x[t] = xp
        prior_P[t] = Pp
        post_x[t] = x
        post_P[t] = P
        gain[t] = K
    return FilterResult(prior_x, prior_P, post_x, post_P, gain)


def rts_smooth(forward: FilterResult, params: FilterParams) -> SmoothResult:
    """Backward Rauch-Tung-Striebel pass over a forward filter result."""
    A = params.A
    n = len(forward)
    if (forward.prior_P[1:] <= 0).any():
        t = int(np.flatnonzero(forward.prior_P[1:] <= 0)[0]) + 1
        raise NumericError(f"non-positive prior covariance at step {t}", step=t)
    xs = forward.post_x.copy()
    Ps = forward.post_P.copy()
    C = np.zeros(n)
    for t in range(n - 2, -1, -1):
        c = forward.post_P[t] * A / forward.prior_P[t + 1]
        xs[t] = forward.post_x[t] + c * (xs[t + 1] - forward.prior_x[t + 1])
        Ps[t] = forward.post_P[t] + c * (Ps[t + 1] - forward.prior_P[t + 1]) * c
        C[t] = c
    return SmoothResult(xs, Ps, C)


def kalman_filter(series, params: FilterParams):
    """Kalman posterior means as a series."""
    return _wrap(series, kalman_forward(series, params).post_x)


def rts_filter(series, params: FilterParams):
    """Full-interval RTS smoothed means as a series."""
    fwd = kalman_forward(series, params)
    return _wrap(series, rts_smooth(fwd, params).smooth_x)


def fixed_lag_smooth(series, params: FilterParams, lag: int = DEFAULT_LAG):
    """Fixed-lag RTS estimates, aligned with the input.

    Entry ``t`` conditions on measurements up to ``min(t + lag, N - 1)``: it
    is what a streaming smoother emits ``lag`` frames after observing step
    ``t`` (the trailing ``lag`` entries are flushed at end of stream).
    """
    if lag < 0:
        raise ContractError("lag must be >= 0")
    fwd = kalman_forward(series, params)
    n = len(fwd)
    A = params.A
    if lag == 0:
        return _wrap(series, fwd.post_x.copy())
    if lag >= n - 1:
        return _wrap(series, rts_smooth(fwd, params).smooth_x)
    # Windows [t, t+lag] for t <= n-1-lag, run backwards in lockstep.
    m = n - lag
    t = np.arange(m)
    xs = fwd.post_x[t + lag].copy()
    for j in range(lag - 1, -1, -1):
        k = t + j
        c = fwd.post_P[k] * A / fwd.prior_P[k + 1]
        xs = fwd.post_x[k] + c * (xs - fwd.prior_x[k + 1])
    out = np.empty(n)
    out[:m] = xs
    out[m:] = rts_smooth(fwd, params).smooth_x[m:]
    return _wrap(series, out)


class FixedLagSmoother:
    """Incremental fixed-lag RTS smoother for streaming use.

    ``step(z)`` ingests one measurement and returns ``(t, estimate)`` for the
    step that just became ``lag`` frames old, or ``None`` during warm-up.
    ``flush()`` returns the estimates still pending at end of stream.
    Instances are single-owner state machines.
    """

    def __init__(self, params: FilterParams, lag: int = DEFAULT_LAG):
        if lag < 0:
            raise ContractError("lag must be >= 0")
        self.params = params
        self.lag = lag
        self._x = params.x0
        self._P = params.P0
        self._t = -1
        # (prior_x, prior_P, post_x, post_P) of the last lag+1 steps
        self._buf = deque(maxlen=lag + 1)
        self._emitted = -1

    def _update(self, z, u=0.0):
        p = self.params
        xp = p.A * self._x + p.B * u
        Pp = p.A * self._P * p.A + p.Q
        K = Pp * p.H / (p.H * Pp * p.H + p.R)
        self._x = xp + K * (z - p.H * xp)
        self._P = (1.0 - K * p.H) * Pp
        self._t += 1
        if not math.isfinite(self._x):
            raise NumericError(f"non-finite Kalman state at step {self._t}", step=self._t)
        self._buf.append((xp, Pp, self._x, self._P))

    def _smooth_back(self, depth):
        """Smoothed mean ``depth`` steps behind the newest one."""
        A = self.params.A
        buf = self._buf
        xs = buf[-1][2]
        for i in range(len(buf) - 2, len(buf) - 2 - depth, -1):
            _, _, xf, Pf = buf[i]
            xp_next, Pp_next = buf[i + 1][0], buf[i + 1][1]
            xs = xf + Pf * A / Pp_next * (xs - xp_next)
        return xs

    def step(self, z, u=0.0):
        self._update(z, u)
        t_out = self._t - self.lag
        if t_out < 0:
            return None
        self._emitted = t_out
        return t_out, self._smooth_back(self.lag)

    def flush(self):
        out = []
        for t_out in range(self._emitted + 1, self._t + 1):
            out.append((t_out, self._smooth_back(self._t - t_out)))
        self._emitted = self._t
        return out


def fit_noise_params(
    sampled,
    reference=None,
    q_ratio: float = DEFAULT_Q_RATIO,
    Q: Optional[float] = None,
    R: Optional[float] = None,
) -> FilterParams:
    """Data-driven random-walk filter parameters.

    ``R`` is the variance of ``sampled - reference`` when a full-penetration
    reference is given, otherwise half the variance of first differences.
    ``Q = q_ratio * R``; ``x0`` is the first observation and ``P0 = R``.
    Explicit ``Q``/``R`` override the estimates.
    """
    z = _values(sampled)
    if len(z) < 10:
        raise ContractError("need at least 10 observations to fit noise parameters")
    if R is None:
        if reference is not None:
            ref = _values(reference)
            if len(ref) != len(z):
                raise ContractError("reference length differs from sampled series")
            R = float(np.var(z - ref, ddof=1))
        else:
            R = float(np.var(np.diff(z), ddof=1)) / 2.0
    if Q is None:
        Q = q_ratio * R
    if not R > 0:
        raise DegenerateInputError("zero-variance input: nothing to filter")
    return FilterParams(A=1.0, B=0.0, H=1.0, Q=Q, R=R, x0=float(z[0]), P0=R)


FILTERS = ("none", "moving_average", "kalman", "rts", "fixed_lag_rts")


def apply_filter(series, name: str, params: Optional[FilterParams] = None, *, window=DEFAULT_MA_WINDOW, lag=DEFAULT_LAG):
    """Apply a named filter. Degenerate (zero-variance) input passes through unchanged."""
    if name == "none":
        return series
    if name == "moving_average":
        return moving_average(series, window)
    if params is None:
        try:
            params = fit_noise_params(series)
        except DegenerateInputError:
            return series
    if name == "kalman":
        return kalman_filter(series, params)
    if name == "rts":
        return rts_filter(series, params)
    if name == "fixed_lag_rts":
        return fixed_lag_smooth(series, params, lag)
    raise ContractError(f"unknown filter {name!r}")
