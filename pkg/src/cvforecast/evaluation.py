"""Accuracy metrics, paired significance tests and hyperparameter sweep statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Mapping, Sequence

import numpy as np
from scipy import special

from .errors import ContractError, MetricError

RMSE_MODES = ("standard", "root_sum")


@dataclass(frozen=True)
class MetricsRecord:
    rmse: float
    mae: float
    mape_pct: float
    n: int
    normalized: bool = False

    def as_dict(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae, "mape_pct": self.mape_pct, "n": self.n}


@dataclass(frozen=True)
class TTestResult:
    t_stat: float
    dof: int
    p_value: float
    significant_at_95: bool
    infinite_t: bool = False


@dataclass(frozen=True)
class SweepStats:
    candidate: float
    median: float
    q1: float
    q3: float
    min: float
    max: float
    trials: int


def _pair(actual, predicted):
    a = np.asarray(actual, dtype=np.float64).ravel()
    p = np.asarray(predicted, dtype=np.float64).ravel()
    if len(a) != len(p):
        raise ContractError(f"length mismatch: {len(a)} actual vs {len(p)} predicted")
    if len(a) == 0:
        raise ContractError("need at least one pair")
    return a, p


def rmse(actual, predicted, mode: str = "standard") -> float:
    """Root mean square error.

    ``mode="root_sum"`` evaluates ``sqrt(sum e^2) / N`` instead of the
    usual ``sqrt(sum e^2 / N)``; the two differ by a factor ``sqrt(N)``.
    """
    a, p = _pair(actual, predicted)
    e = p - a
    ss = float(e @ e)
    if mode == "standard":
        return math.sqrt(ss / len(e))
    if mode == "root_sum":
        return math.sqrt(ss) / len(e)
    raise ContractError(f"unknown RMSE mode {mode!r}")


def mae(actual, predicted) -> float:
    a, p = _pair(actual, predicted)
    return float(np.mean(np.abs(p - a)))


def mape(actual, predicted) -> float:
    """Mean absolute percentage error in percent; zero actuals raise ``MetricError``."""
    a, p = _pair(actual, predicted)
    zero = np.flatnonzero(a == 0)
    if len(zero):
        raise MetricError(f"MAPE undefined: {len(zero)} zero actual value(s)", indices=zero.tolist())
    return float(np.mean(np.abs(p - a) / np.abs(a))) * 100.0


def compute_metrics(actual, predicted, normalization=None, rmse_mode: str = "standard", with_mape: bool = True) -> MetricsRecord:
    """RMSE, MAE and MAPE of ``predicted`` against ``actual``.

    With ``normalization`` (an object exposing ``apply``) both sequences are
    scaled first and RMSE/MAE are reported on that scale; MAPE is always
    computed on the original values. ``with_mape=False`` reports NaN instead
    of raising on zero actuals.
    """
    a, p = _pair(actual, predicted)
    mp = mape(a, p) if with_mape else float("nan")
    if normalization is not None:
        a, p = normalization.apply(a), normalization.apply(p)
    return MetricsRecord(
        rmse=rmse(a, p, rmse_mode),
        mae=mae(a, p),
        mape_pct=mp,
        n=len(a),
        normalized=normalization is not None,
    )


def t_sf(t: float, dof: int) -> float:
    """Two-sided tail probability ``P(|T| >= |t|)`` of Student's t."""
    if math.isinf(t):
        return 0.0
    return float(special.betainc(dof / 2.0, 0.5, dof / (dof + t * t)))


def paired_t_test(actual, predicted, alpha: float = 0.05) -> TTestResult:
    """Two-sided paired t-test of ``predicted - actual`` against mean zero.

    Identical non-zero differences give an infinite statistic (flagged,
    p = 0); all-zero differences give t = 0, p = 1.
    """
    a, p = _pair(actual, predicted)
    n = len(a)
    if n < 2:
        raise ContractError("paired t-test needs at least 2 pairs")
    d = p - a
    dof = n - 1
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0 or sd <= 1e-15 * max(abs(mean), 1e-300):
        if mean == 0:
            return TTestResult(0.0, dof, 1.0, False)
        return TTestResult(math.copysign(math.inf, mean), dof, 0.0, True, infinite_t=True)
    t = mean / (sd / math.sqrt(n))
    pv = min(1.0, max(0.0, t_sf(t, dof)))
    return TTestResult(t, dof, pv, pv < alpha)


def sweep(trials: Mapping[float, Sequence[float]]) -> Dict[float, SweepStats]:
    """Box statistics of a metric per candidate hyperparameter value."""
    if not trials:
        raise ContractError("sweep needs at least one candidate")
    out = {}
    for cand in sorted(trials):
        v = np.asarray(trials[cand], dtype=np.float64)
        if len(v) == 0:
            raise ContractError(f"candidate {cand!r} has no trials")
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        out[cand] = SweepStats(cand, float(med), float(q1), float(q3), float(v.min()), float(v.max()), len(v))
    return out


def select_candidate(stats: Mapping[float, SweepStats]) -> float:
    """Candidate with the smallest median; ties go to the smaller value."""
    if not stats:
        raise ContractError("no sweep statistics to select from")
    return min(stats, key=lambda c: (stats[c].median, c))


def sweep_csv(stats: Mapping[float, SweepStats]) -> str:
    lines = ["candidate,median,q1,q3,min,max"]
    for c in sorted(stats):
        s = stats[c]
        lines.append(f"{c!r},{s.median!r},{s.q1!r},{s.q3!r},{s.min!r},{s.max!r}")
    return "\n".join(lines) + "\n"
