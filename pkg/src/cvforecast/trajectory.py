"""Vehicle trajectory datasets: CSV loading, synthetic generation, headways.

A dataset is one road segment observed at a fixed frame rate (10 Hz by
default). Each row is one vehicle at one frame, the stand-in for a Basic
Safety Message. Storage is columnar numpy; :class:`TrajectoryRecord` objects
are materialised on demand.

Units are SI throughout. NGSIM files carry feet and are converted on load.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import IO, Iterator, Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import DataIntegrityError, GenerationError, ParseError, ValidationError

log = logging.getLogger(__name__)

FEET_TO_METERS = 0.3048
NO_ID = -1

NATIVE_COLUMNS = (
    "vehicle_id",
    "frame_id",
    "lane_id",
    "position_m",
    "speed_mps",
    "accel_mps2",
    "veh_length_m",
    "preceding_id",
    "following_id",
)

# NGSIM header name -> (native column, unit factor). Matching is case-insensitive.
NGSIM_COLUMNS = {
    "vehicle_id": ("vehicle_id", None),
    "frame_id": ("frame_id", None),
    "lane_id": ("lane_id", None),
    "local_y": ("position_m", FEET_TO_METERS),
    "v_vel": ("speed_mps", FEET_TO_METERS),
    "v_acc": ("accel_mps2", FEET_TO_METERS),
    "v_length": ("veh_length_m", FEET_TO_METERS),
    "preceding": ("preceding_id", None),
    "following": ("following_id", None),
}

_INT_COLUMNS = ("vehicle_id", "frame_id", "lane_id", "preceding_id", "following_id")
_FLOAT_COLUMNS = ("position_m", "speed_mps", "accel_mps2", "veh_length_m")


@dataclass(frozen=True)
class TrajectoryRecord:
    vehicle_id: int
    frame_id: int
    lane_id: int
    position: float
    speed: float
    acceleration: float
    vehicle_length: float
    preceding_id: Optional[int] = None
    following_id: Optional[int] = None


class TrajectoryDataset:
    """Immutable, validated collection of trajectory rows.

    Columns are numpy arrays sorted by ``(frame_id, vehicle_id)``. Absent
    leader/follower ids are stored as ``-1`` and surface as ``None`` on
    :class:`TrajectoryRecord`.
    """

    def __init__(self, columns, segment_length, frame_rate_hz=10.0, unit_system_tag="si"):
        cols = {}
        for name in _INT_COLUMNS:
            cols[name] = np.asarray(columns[name], dtype=np.int64)
        for name in _FLOAT_COLUMNS:
            cols[name] = np.asarray(columns[name], dtype=np.float64)
        n = len(cols["vehicle_id"])
        if any(len(v) != n for v in cols.values()):
            raise ValidationError("column lengths differ")
        order = np.lexsort((cols["vehicle_id"], cols["frame_id"]))
        if not np.array_equal(order, np.arange(n)):
            cols = {k: v[order] for k, v in cols.items()}
        for v in cols.values():
            v.setflags(write=False)
        self._cols = cols
        self.segment_length = float(segment_length)
        self.frame_rate_hz = float(frame_rate_hz)
        self.unit_system_tag = unit_system_tag
        self._validate()
        self._frame_bounds = None

    # -- column access -----------------------------------------------------
    def __getattr__(self, name):
        cols = self.__dict__.get("_cols")
        if cols is not None and name in cols:
            return cols[name]
        raise AttributeError(name)

    @property
    def columns(self):
        return dict(self._cols)

    def __len__(self):
        return len(self._cols["vehicle_id"])

    @property
    def frame_ids(self):
        """Sorted unique frame ids (contiguous by invariant)."""
        f = self._cols["frame_id"]
        if len(f) == 0:
            return np.empty(0, dtype=np.int64)
        return np.arange(f[0], f[-1] + 1, dtype=np.int64)

    @property
    def n_frames(self):
        return len(self.frame_ids)

    def frame_slices(self):
        """Start/stop row offsets of every frame, in frame order."""
        if self._frame_bounds is None:
            f = self._cols["frame_id"]
            starts = np.searchsorted(f, self.frame_ids, side="left")
            stops = np.searchsorted(f, self.frame_ids, side="right")
            self._frame_bounds = (starts, stops)
        return self._frame_bounds

    def record(self, i) -> TrajectoryRecord:
        c = self._cols
        prec = int(c["preceding_id"][i])
        foll = int(c["following_id"][i])
        return TrajectoryRecord(
            vehicle_id=int(c["vehicle_id"][i]),
            frame_id=int(c["frame_id"][i]),
            lane_id=int(c["lane_id"][i]),
            position=float(c["position_m"][i]),
            speed=float(c["speed_mps"][i]),
            acceleration=float(c["accel_mps2"][i]),
            vehicle_length=float(c["veh_length_m"][i]),
            preceding_id=None if prec == NO_ID else prec,
            following_id=None if foll == NO_ID else foll,
        )

    @property
    def records(self) -> Sequence[TrajectoryRecord]:
        return _RecordView(self)

    def __eq__(self, other):
        if not isinstance(other, TrajectoryDataset):
            return NotImplemented
        return (
            self.segment_length == other.segment_length
            and self.frame_rate_hz == other.frame_rate_hz
            and all(np.array_equal(self._cols[k], other._cols[k]) for k in self._cols)
        )

    # -- invariants --------------------------------------------------------
    def _validate(self):
        c = self._cols
        n = len(c["vehicle_id"])
        if n == 0:
            raise ValidationError("dataset has no records")
        key_dup = (np.diff(c["frame_id"]) == 0) & (np.diff(c["vehicle_id"]) == 0)
        if key_dup.any():
            i = int(np.flatnonzero(key_dup)[0])
            raise ValidationError(
                f"duplicate (vehicle_id, frame_id) = ({c['vehicle_id'][i]}, {c['frame_id'][i]})"
            )
        gaps = np.diff(np.unique(c["frame_id"]))
        if (gaps != 1).any():
            i = int(np.flatnonzero(gaps != 1)[0])
            raise ValidationError(f"frame range is not contiguous after frame {np.unique(c['frame_id'])[i]}")
        for name in _FLOAT_COLUMNS:
            if not np.isfinite(c[name]).all():
                raise ValidationError(f"non-finite value in {name}")
        if (c["speed_mps"] < 0).any():
            raise ValidationError("negative speed")
        if (c["veh_length_m"] <= 0).any():
            raise ValidationError("non-positive vehicle length")
        pos = c["position_m"]
        if (pos < 0).any() or (pos > self.segment_length).any():
            raise ValidationError(f"position outside [0, {self.segment_length}]")
        missing = _dangling_leaders(c)
        if missing.any():
            i = int(np.flatnonzero(missing)[0])
            raise DataIntegrityError(
                f"vehicle {c['vehicle_id'][i]} at frame {c['frame_id'][i]} references "
                f"leader {c['preceding_id'][i]} which is absent at that frame"
            )


class _RecordView(Sequence):
    def __init__(self, ds):
        self._ds = ds

    def __len__(self):
        return len(self._ds)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self._ds.record(j) for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        return self._ds.record(i)

    def __iter__(self) -> Iterator[TrajectoryRecord]:
        for i in range(len(self)):
            yield self._ds.record(i)


def _leader_rows(cols):
    """Row index of each record's leader at the same frame, -1 if none/missing."""
    frame = cols["frame_id"]
    vid = cols["vehicle_id"]
    prec = cols["preceding_id"]
    # Rows are sorted by (frame, vehicle) so a combined key is sorted too.
    span = int(vid.max()) + 2
    keys = frame * span + vid
    want = frame * span + prec
    has = prec != NO_ID
    idx = np.searchsorted(keys, want)
    idx = np.clip(idx, 0, len(keys) - 1)
    found = has & (keys[idx] == want)
    out = np.where(found, idx, -1)
    return out, has & ~found


def _dangling_leaders(cols):
    return _leader_rows(cols)[1]


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def _as_text(source):
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, io.TextIOBase):
        return source
    if hasattr(source, "read"):
        return io.TextIOWrapper(source, encoding="utf-8", newline="")
    raise TypeError("source must be bytes or a file object")


def _parse_id(text):
    text = text.strip()
    if text == "":
        return NO_ID
    return int(text)


def parse_trajectory_file(
    source: IO | bytes,
    layout: str = "native",
    segment_length: Optional[float] = None,
    frame_rate_hz: float = 10.0,
) -> TrajectoryDataset:
    """Parse a header-bearing trajectory CSV into an SI-unit dataset.

    ``layout`` is ``"native"`` (columns :data:`NATIVE_COLUMNS`, SI units) or
    ``"ngsim"`` (NGSIM headers, feet). In the NGSIM layout a leader id of 0
    means "no leader", and references to leaders that are off the recorded
    segment at that frame are cleared. ``segment_length`` defaults to the
    largest position seen.
    """
    if layout not in ("native", "ngsim"):
        raise ValueError(f"unknown layout {layout!r}")
    reader = csv.reader(_as_text(source))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file", line=1) from None
    header = [h.strip() for h in header]

    if layout == "native":
        if tuple(header) != NATIVE_COLUMNS:
            raise ParseError(f"expected header {','.join(NATIVE_COLUMNS)}", line=1)
        picks = [(i, name, None) for i, name in enumerate(NATIVE_COLUMNS)]
    else:
        lower = {h.lower(): i for i, h in enumerate(header)}
        picks = []
        for src, (dst, factor) in NGSIM_COLUMNS.items():
            if src not in lower:
                raise ParseError(f"missing NGSIM column {src!r}", line=1)
            picks.append((lower[src], dst, factor))

    data = {name: [] for name in NATIVE_COLUMNS}
    width = len(header)
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != width:
            raise ParseError(f"expected {width} fields, got {len(row)}", line=lineno)
        for i, name, factor in picks:
            text = row[i]
            try:
                if name in _INT_COLUMNS:
                    value = _parse_id(text) if name in ("preceding_id", "following_id") else int(text)
                else:
                    value = float(text)
                    if factor is not None:
                        value *= factor
            except ValueError:
                raise ParseError(f"column {header[i]!r}: cannot parse {text!r}", line=lineno) from None
            data[name].append(value)

    if not data["vehicle_id"]:
        raise ParseError("no data rows", line=2)
    cols = {k: np.array(v) for k, v in data.items()}
    if layout == "ngsim":
        for k in ("preceding_id", "following_id"):
            cols[k] = np.where(cols[k] == 0, NO_ID, cols[k])
        cols = _clear_dangling(cols)
    if segment_length is None:
        segment_length = float(np.max(cols["position_m"]))
    return TrajectoryDataset(cols, segment_length=segment_length, frame_rate_hz=frame_rate_hz)


def _clear_dangling(cols):
    order = np.lexsort((cols["vehicle_id"], cols["frame_id"]))
    cols = {k: v[order] for k, v in cols.items()}
    dangling = _dangling_leaders(cols)
    if dangling.any():
        log.warning("cleared %d leader references to vehicles off the segment", int(dangling.sum()))
        cols["preceding_id"] = np.where(dangling, NO_ID, cols["preceding_id"])
    return cols


def _fmt_id(v):
    return "" if v == NO_ID else str(int(v))


def write_trajectory_csv(dataset: TrajectoryDataset, sink: IO[str]) -> None:
    """Write ``dataset`` in the native layout. Floats use shortest round-trip repr."""
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(NATIVE_COLUMNS)
    c = dataset.columns
    cols = [
        c["vehicle_id"].tolist(),
        c["frame_id"].tolist(),
        c["lane_id"].tolist(),
        c["position_m"].tolist(),
        c["speed_mps"].tolist(),
        c["accel_mps2"].tolist(),
        c["veh_length_m"].tolist(),
        [_fmt_id(v) for v in c["preceding_id"].tolist()],
        [_fmt_id(v) for v in c["following_id"].tolist()],
    ]
    w.writerows(zip(*cols))


def serialize(dataset: TrajectoryDataset) -> bytes:
    buf = io.StringIO()
    write_trajectory_csv(dataset, buf)
    return buf.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpeedProfile:
    """Slowly varying segment mean speed: sinusoids plus an OU perturbation."""

    mean: float = 12.0
    amplitudes: tuple = (4.0, 2.0)
    periods_s: tuple = (600.0, 170.0)
    phases: tuple = (0.0, 1.3)
    reversion_scale: float = 0.4
    reversion_timescale_s: float = 30.0


@dataclass(frozen=True)
class VehicleNoise:
    """Per-vehicle AR(1) deviation from the mean profile (stationary std)."""

    ar_coefficient: float = 0.98
    std: float = 3.0


@dataclass(frozen=True)
class SyntheticConfig:
    n_frames: int = 9800
    segment_length: float = 500.0
    target_vehicle_count: float = 60.0
    n_lanes: int = 3
    frame_rate_hz: float = 10.0
    speed_profile: SpeedProfile = field(default_factory=SpeedProfile)
    per_vehicle_noise: VehicleNoise = field(default_factory=VehicleNoise)
    vehicle_length_mean: float = 4.6
    vehicle_length_std: float = 0.6
    standstill_clearance: float = 2.0
    time_gap_s: float = 1.2
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_frames <= 0:
            raise ValueError("n_frames must be positive")
        if self.n_lanes <= 0:
            raise ValueError("n_lanes must be positive")
        positive = {
            "segment_length": self.segment_length,
            "target_vehicle_count": self.target_vehicle_count,
            "frame_rate_hz": self.frame_rate_hz,
            "vehicle_length_mean": self.vehicle_length_mean,
            "standstill_clearance": self.standstill_clearance,
        }
        for name, v in positive.items():
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive")
        non_negative = {
            "vehicle_length_std": self.vehicle_length_std,
            "time_gap_s": self.time_gap_s,
            "noise std": self.per_vehicle_noise.std,
            "reversion_scale": self.speed_profile.reversion_scale,
            "profile mean": self.speed_profile.mean,
        }
        for name, v in non_negative.items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative")
        if not -1 < self.per_vehicle_noise.ar_coefficient < 1:
            raise ValueError("AR coefficient must lie in (-1, 1)")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "speed_profile" in d and isinstance(d["speed_profile"], dict):
            sp = dict(d["speed_profile"])
            for k in ("amplitudes", "periods_s", "phases"):
                if k in sp:
                    sp[k] = tuple(sp[k])
            d["speed_profile"] = SpeedProfile(**sp)
        if "per_vehicle_noise" in d and isinstance(d["per_vehicle_noise"], dict):
            d["per_vehicle_noise"] = VehicleNoise(**d["per_vehicle_noise"])
        return cls(**d)


def mean_speed_profile(config: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    sp = config.speed_profile
    dt = 1.0 / config.frame_rate_hz
    t = np.arange(config.n_frames) * dt
    v = np.full(config.n_frames, sp.mean)
    for a, p, ph in zip(sp.amplitudes, sp.periods_s, sp.phases):
        v += a * np.sin(2 * np.pi * t / p + ph)
    if sp.reversion_scale > 0:
        phi = math.exp(-dt / sp.reversion_timescale_s)
        eps = rng.standard_normal(config.n_frames) * sp.reversion_scale * math.sqrt(1 - phi * phi)
        eps[0] = rng.standard_normal() * sp.reversion_scale
        v += lfilter([1.0], [1.0, -phi], eps)
    return np.maximum(v, 0.0)


def generate_synthetic(config: SyntheticConfig) -> TrajectoryDataset:
    """Simulate a multi-lane segment with a mean-speed profile and AR(1) drivers.

    Vehicles enter at position 0 whenever the last vehicle in a lane is
    further than the speed-dependent target spacing, and leave once past the
    segment end. A follower never closes to less than the leader's length
    plus ``standstill_clearance``, so same-lane gaps stay positive. The
    recorded speed is the realised displacement per frame.
    """
    rng = np.random.default_rng(config.rng_seed)
    dt = 1.0 / config.frame_rate_hz
    L = config.segment_length
    profile = mean_speed_profile(config, rng)
    noise = config.per_vehicle_noise
    phi = noise.ar_coefficient
    innov = noise.std * math.sqrt(1.0 - phi * phi)
    len_hi = config.vehicle_length_mean + 4 * config.vehicle_length_std
    len_lo = max(config.vehicle_length_mean - 2 * config.vehicle_length_std, 0.5)
    min_spacing = len_hi + config.standstill_clearance
    lane_density = L * config.n_lanes / config.target_vehicle_count
    base = config.vehicle_length_mean + config.standstill_clearance + config.time_gap_s * config.speed_profile.mean
    scale = lane_density / base

    def spacing(v):
        s = scale * (config.vehicle_length_mean + config.standstill_clearance + config.time_gap_s * v)
        return max(s, min_spacing)

    def new_lengths(k):
        ln = config.vehicle_length_mean + config.vehicle_length_std * rng.standard_normal(k)
        return np.clip(ln, len_lo, len_hi)

    # Initial fill: evenly spaced per lane with a random lane offset.
    s0 = spacing(profile[0])
    pos, lane = [], []
    for ln in range(config.n_lanes):
        offset = rng.uniform(0, s0)
        p = np.arange(offset, L, s0)
        pos.append(p)
        lane.append(np.full(len(p), ln + 1))
    pos = np.concatenate(pos)
    lane = np.concatenate(lane).astype(np.int64)
    n0 = len(pos)
    vid = np.arange(1, n0 + 1, dtype=np.int64)
    length = new_lengths(n0)
    dev = noise.std * rng.standard_normal(n0)
    speed = np.maximum(profile[0] + dev, 0.0)
    accel = np.zeros(n0)
    next_id = n0 + 1

    out = {k: [] for k in NATIVE_COLUMNS}
    for k in range(config.n_frames):
        if k > 0:
            dev = phi * dev + innov * rng.standard_normal(len(dev))
            desired = np.maximum(profile[k] + dev, 0.0)
            new_pos = pos + desired * dt
            capped = _enforce_gaps(new_pos, pos, lane, length, config.standstill_clearance)
            new_speed = np.where(capped, (new_pos - pos) / dt, desired)
            accel = (new_speed - speed) / dt
            speed = new_speed
            pos = new_pos
            keep = pos <= L
            if not keep.all():
                pos, lane, vid, length, dev, speed, accel = (
                    a[keep] for a in (pos, lane, vid, length, dev, speed, accel)
                )
            # Entries.
            s_k = spacing(profile[k])
            add_lane = []
            for ln in range(1, config.n_lanes + 1):
                in_lane = lane == ln
                last = pos[in_lane].min() if in_lane.any() else np.inf
                if last >= s_k:
                    add_lane.append(ln)
            if add_lane:
                m = len(add_lane)
                d_new = noise.std * rng.standard_normal(m)
                pos = np.concatenate([pos, np.zeros(m)])
                lane = np.concatenate([lane, np.array(add_lane, dtype=np.int64)])
                vid = np.concatenate([vid, np.arange(next_id, next_id + m, dtype=np.int64)])
                next_id += m
                length = np.concatenate([length, new_lengths(m)])
                dev = np.concatenate([dev, d_new])
                s_new = np.maximum(profile[k] + d_new, 0.0)
                speed = np.concatenate([speed, s_new])
                accel = np.concatenate([accel, np.zeros(m)])
        if len(pos) == 0:
            raise GenerationError(
                f"no vehicles on the segment at frame {k + 1}; increase target_vehicle_count"
            )
        prec, foll = _link_lanes(pos, lane, vid)
        order = np.argsort(vid)
        out["vehicle_id"].append(vid[order])
        out["frame_id"].append(np.full(len(vid), k + 1, dtype=np.int64))
        out["lane_id"].append(lane[order])
        out["position_m"].append(pos[order])
        out["speed_mps"].append(speed[order])
        out["accel_mps2"].append(accel[order])
        out["veh_length_m"].append(length[order])
        out["preceding_id"].append(prec[order])
        out["following_id"].append(foll[order])

    cols = {k: np.concatenate(v) for k, v in out.items()}
    ds = TrajectoryDataset(cols, segment_length=L, frame_rate_hz=config.frame_rate_hz)
    return ds


def _enforce_gaps(new_pos, pos, lane, length, clearance):
    """Cap followers behind their (already capped) leader, in place.

    Within a lane sorted front to back, the capped position satisfies
    ``x[j] + S[j] = min_{i<=j}(x_desired[i] + S[i])`` with ``S`` the running
    sum of leader length plus clearance. Returns the mask of capped vehicles.
    """
    capped = np.zeros(len(pos), dtype=bool)
    for ln in np.unique(lane):
        idx = np.flatnonzero(lane == ln)
        idx = idx[np.argsort(-pos[idx], kind="stable")]
        if len(idx) < 2:
            continue
        need = length[idx] + clearance
        S = np.concatenate([[0.0], np.cumsum(need[:-1])])
        want = new_pos[idx]
        front = want + S
        reach = np.minimum.accumulate(front)
        # Compare in the shifted frame so round-off alone never flags a cap,
        # and never move a vehicle backwards.
        hit = reach < front
        got = np.maximum(reach - S, pos[idx])
        new_pos[idx[hit]] = got[hit]
        capped[idx[hit]] = True
    return capped


def _link_lanes(pos, lane, vid):
    order = np.lexsort((-pos, lane))
    lo = lane[order]
    ids = vid[order]
    prec = np.full(len(pos), NO_ID, dtype=np.int64)
    foll = np.full(len(pos), NO_ID, dtype=np.int64)
    same = lo[1:] == lo[:-1]
    p_sorted = np.full(len(pos), NO_ID, dtype=np.int64)
    f_sorted = np.full(len(pos), NO_ID, dtype=np.int64)
    p_sorted[1:][same] = ids[:-1][same]
    f_sorted[:-1][same] = ids[1:][same]
    prec[order] = p_sorted
    foll[order] = f_sorted
    return prec, foll


def compute_space_headways(dataset: TrajectoryDataset) -> dict:
    """Front-to-front distance to the same-lane leader, keyed by (vehicle_id, frame_id).

    Vehicles without a leader are absent from the result. Non-positive
    headways raise :class:`DataIntegrityError` rather than being clamped.
    """
    rows, values = headway_arrays(dataset)
    vid = dataset.vehicle_id[rows].tolist()
    fid = dataset.frame_id[rows].tolist()
    return dict(zip(zip(vid, fid), values.tolist()))


def headway_arrays(dataset: TrajectoryDataset):
    """Vectorised headways: (row indices with a leader, headway values)."""
    cols = dataset.columns
    leader, missing = _leader_rows(cols)
    if missing.any():
        i = int(np.flatnonzero(missing)[0])
        raise DataIntegrityError(
            f"leader {cols['preceding_id'][i]} of vehicle {cols['vehicle_id'][i]} "
            f"not found at frame {cols['frame_id'][i]}"
        )
    rows = np.flatnonzero(leader >= 0)
    if len(rows):
        lane_mismatch = cols["lane_id"][leader[rows]] != cols["lane_id"][rows]
        if lane_mismatch.any():
            i = rows[np.flatnonzero(lane_mismatch)[0]]
            log.debug("vehicle %d leader in a different lane at frame %d", cols["vehicle_id"][i], cols["frame_id"][i])
    h = cols["position_m"][leader[rows]] - cols["position_m"][rows]
    bad = h <= 0
    if bad.any():
        i = rows[np.flatnonzero(bad)[0]]
        raise DataIntegrityError(
            f"non-positive headway for vehicle {cols['vehicle_id'][i]} at frame {cols['frame_id'][i]}"
        )
    return rows, h
