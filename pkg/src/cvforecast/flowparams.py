"""Per-frame flow parameters at a given connected-vehicle penetration.

At each frame a random subset of the vehicles present is treated as
connected; the segment mean speed (or mean space headway) over that subset
is the observed flow parameter. Comparing against the full-fleet series
exposes the sampling noise, which is characterised by a histogram, a normal
Q-Q correlation and Tukey box statistics.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats

from .errors import AggregationError, ContractError
from .trajectory import TrajectoryDataset, headway_arrays

log = logging.getLogger(__name__)

QUANTITIES = ("speed_mps", "headway_m")
GAUSSIAN_R_THRESHOLD = 0.99


def canonical_quantity(name: str) -> str:
    aliases = {"speed": "speed_mps", "headway": "headway_m"}
    name = aliases.get(name, name)
    if name not in QUANTITIES:
        raise ContractError(f"unknown quantity {name!r}")
    return name


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled scalar series of one flow parameter."""

    values: np.ndarray
    quantity: str = "speed_mps"
    frame_rate_hz: float = 10.0
    penetration_pct: float = 100.0
    rng_seed: Optional[int] = None
    start_frame: int = 1

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1 or len(v) == 0:
            raise ContractError("series must be a non-empty 1-D sequence")
        if not np.isfinite(v).all():
            raise ContractError("series contains NaN or infinite values")
        if not 0 < self.penetration_pct <= 100:
            raise ContractError("penetration_pct must lie in (0, 100]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "quantity", canonical_quantity(self.quantity))

    def __len__(self):
        return len(self.values)

    def with_values(self, values) -> "TimeSeries":
        return replace(self, values=np.asarray(values, dtype=np.float64))

    def slice(self, start, stop=None) -> "TimeSeries":
        start_frame = self.start_frame + (start if start >= 0 else len(self) + start)
        return replace(self, values=self.values[start:stop], start_frame=start_frame)

    @property
    def frame_ids(self):
        return np.arange(self.start_frame, self.start_frame + len(self))

    def metadata(self):
        return {
            "quantity": self.quantity,
            "frame_rate_hz": self.frame_rate_hz,
            "penetration_pct": self.penetration_pct,
            "rng_seed": self.rng_seed,
        }

    def to_csv(self) -> str:
        """``frame_id,value`` rows preceded by one ``# {json metadata}`` line."""
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.metadata(), sort_keys=True) + "\n")
        buf.write("frame_id,value\n")
        for f, v in zip(self.frame_ids.tolist(), self.values.tolist()):
            buf.write(f"{f},{v!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TimeSeries":
        lines = text.splitlines()
        meta = {}
        body = []
        for line in lines:
            if line.startswith("#"):
                meta.update(json.loads(line[1:]))
            elif line.strip():
                body.append(line)
        if not body or body[0].strip() != "frame_id,value":
            raise ContractError("missing 'frame_id,value' header")
        rows = [r.split(",") for r in body[1:]]
        frames = [int(r[0]) for r in rows]
        values = [float(r[1]) for r in rows]
        return cls(values=np.array(values), start_frame=frames[0] if frames else 1, **meta)


@dataclass(frozen=True)
class NoiseReport:
    noise: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    qq_points: np.ndarray  # (N, 2): theoretical quantile, standardised sample quantile
    qq_pearson_r: float
    mean: float
    std: float
    zero_variance: bool = False

    @property
    def gaussian_consistent(self) -> bool:
        return self.qq_pearson_r >= GAUSSIAN_R_THRESHOLD


@dataclass(frozen=True)
class BoxStats:
    median: float
    q1: float
    q3: float
    lower_fence: float
    upper_fence: float
    outlier_count: int


def _sample_sizes(available: np.ndarray, penetration_pct: float) -> np.ndarray:
    # Rounded before the ceiling so 10% of 30 is 3, not 4.
    k = np.ceil(np.round(available * (penetration_pct / 100.0), 9)).astype(np.int64)
    return np.clip(k, 1, available)


def _frame_values(dataset: TrajectoryDataset, quantity: str):
    """(frame index per available row, value per available row), frame-sorted."""
    first = int(dataset.frame_ids[0])
    if quantity == "speed_mps":
        return dataset.frame_id - first, np.asarray(dataset.speed_mps)
    rows, h = headway_arrays(dataset)
    return dataset.frame_id[rows] - first, h


def aggregate(
    dataset: TrajectoryDataset,
    quantity: str,
    penetration_pct: float,
    rng_seed: int = 0,
    mode: str = "per_frame",
) -> TimeSeries:
    """Mean flow parameter per frame over a random q% of available vehicles.

    ``mode="per_frame"`` draws ``ceil(q% * n_t)`` vehicles without
    replacement independently at every frame (at least one). For headway
    only vehicles with a leader count as available. ``mode="persistent"``
    instead marks each vehicle as connected once, with probability q, for
    its whole trip; frames with no connected vehicle repeat the previous
    frame's value.
    """
    quantity = canonical_quantity(quantity)
    if not 0 < penetration_pct <= 100:
        raise ContractError("penetration_pct must lie in (0, 100]")
    n_frames = dataset.n_frames
    frame_idx, values = _frame_values(dataset, quantity)
    available = np.bincount(frame_idx, minlength=n_frames)
    empty = np.flatnonzero(available == 0)
    if len(empty):
        f = int(dataset.frame_ids[empty[0]])
        raise AggregationError(f"frame {f} has no vehicles with a defined {quantity}", frame_id=f)

    if penetration_pct >= 100:
        sums = np.bincount(frame_idx, weights=values, minlength=n_frames)
        out = sums / available
    elif mode == "per_frame":
        rng = np.random.default_rng(rng_seed)
        keys = rng.random(len(values))
        order = np.lexsort((keys, frame_idx))
        starts = np.concatenate([[0], np.cumsum(available)[:-1]])
        rank = np.arange(len(values)) - np.repeat(starts, available)
        k = _sample_sizes(available, penetration_pct)
        chosen = order[rank < np.repeat(k, available)]
        sums = np.bincount(frame_idx[chosen], weights=values[chosen], minlength=n_frames)
        out = sums / k
    elif mode == "persistent":
        rng = np.random.default_rng(rng_seed)
        vid_all = dataset.vehicle_id
        if quantity == "headway_m":
            rows, _ = headway_arrays(dataset)
            vid_all = vid_all[rows]
        fleet = np.unique(dataset.vehicle_id)
        connected = fleet[rng.random(len(fleet)) < penetration_pct / 100.0]
        mask = np.isin(vid_all, connected)
        cnt = np.bincount(frame_idx[mask], minlength=n_frames)
        sums = np.bincount(frame_idx[mask], weights=values[mask], minlength=n_frames)
        out = np.full(n_frames, np.nan)
        ok = cnt > 0
        out[ok] = sums[ok] / cnt[ok]
        if not ok[0]:
            f = int(dataset.frame_ids[0])
            raise AggregationError(f"no connected vehicle at frame {f}", frame_id=f)
        if not ok.all():
            log.info("persistent fleet: %d frames without a connected vehicle carried forward", int((~ok).sum()))
            idx = np.where(ok, np.arange(n_frames), 0)
            np.maximum.accumulate(idx, out=idx)
            out = out[idx]
    else:
        raise ContractError(f"unknown sampling mode {mode!r}")

    return TimeSeries(
        values=out,
        quantity=quantity,
        frame_rate_hz=dataset.frame_rate_hz,
        penetration_pct=float(penetration_pct),
        rng_seed=None if penetration_pct >= 100 else rng_seed,
        start_frame=int(dataset.frame_ids[0]),
    )


def blom_quantiles(n: int) -> np.ndarray:
    i = np.arange(1, n + 1)
    return stats.norm.ppf((i - 0.375) / (n + 0.25))


def qq_correlation(sample) -> tuple:
    """Normal Q-Q points and their Pearson r. Zero variance gives r = 1, flagged."""
    x = np.sort(np.asarray(sample, dtype=np.float64))
    theo = blom_quantiles(len(x))
    sd = x.std(ddof=1) if len(x) > 1 else 0.0
    if sd == 0:
        return np.column_stack([theo, np.zeros_like(x)]), 1.0, True
    z = (x - x.mean()) / sd
    r = float(np.corrcoef(theo, z)[0, 1])
    return np.column_stack([theo, z]), r, False


def noise_series(sampled: TimeSeries, full: TimeSeries) -> NoiseReport:
    """Sampling noise ``sampled - full`` with histogram and normal Q-Q summary."""
    if len(sampled) != len(full):
        raise ContractError(f"length mismatch: {len(sampled)} vs {len(full)}")
    if sampled.quantity != full.quantity:
        raise ContractError(f"quantity mismatch: {sampled.quantity} vs {full.quantity}")
    if full.penetration_pct != 100:
        raise ContractError("reference series must be at 100% penetration")
    noise = sampled.values - full.values
    n = len(noise)
    bins = max(1, math.ceil(math.sqrt(n)))
    counts, edges = np.histogram(noise, bins=bins)
    qq, r, flat = qq_correlation(noise)
    return NoiseReport(
        noise=noise,
        bin_edges=edges,
        counts=counts,
        qq_points=qq,
        qq_pearson_r=r,
        mean=float(noise.mean()),
        std=float(noise.std(ddof=1)) if n > 1 else 0.0,
        zero_variance=flat,
    )


def box_stats(series) -> BoxStats:
    """Quartiles (linear interpolation) and Tukey 1.5 IQR outlier count."""
    x = np.asarray(series.values if isinstance(series, TimeSeries) else series, dtype=np.float64)
    if len(x) < 4:
        raise ContractError("box statistics need at least 4 values")
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    return BoxStats(
        median=float(med),
        q1=float(q1),
        q3=float(q3),
        lower_fence=float(lo),
        upper_fence=float(hi),
        outlier_count=int(((x < lo) | (x > hi)).sum()),
    )
