"""Experiment grid orchestration, report emission and the streaming latency harness."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import baselines, evaluation, filters, flowparams, predictors, trajectory
from .errors import ContractError, CvForecastError
from .flowparams import TimeSeries

log = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "quantity", "penetration_pct", "filter", "predictor", "replicate",
    "rmse_norm", "rmse", "mae", "mape_pct", "t_stat", "p_value", "significant",
    "train_ms", "infer_us_per_step", "status",
)
REPORT_SCHEMA_VERSION = 1
PENETRATION_LEVELS = (5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100)
RNN_PREDICTORS = predictors.ARCHS
BASELINE_PREDICTORS = ("linear_regression", "arima_auto", "hes")
LATENCY_BUDGET_US = 1_000_000.0
_MA_WINDOW, _LAG, _Q_RATIO = filters.DEFAULT_MA_WINDOW, filters.DEFAULT_LAG, filters.DEFAULT_Q_RATIO


def derive_seed(root_seed: int, *key) -> int:
    """Stable 32-bit seed for a named grid cell.

    The key is hashed by name (CRC-32 of its ``|``-joined text), so adding or
    reordering cells never changes the seed of an existing one.
    """
    tag = zlib.crc32("|".join(str(k) for k in key).encode("utf-8"))
    return int(np.random.SeedSequence([int(root_seed), tag]).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=lambda: {"synthetic": {}})
    quantities: List[str] = field(default_factory=lambda: ["speed_mps", "headway_m"])
    penetrations: List[float] = field(default_factory=lambda: [5])
    filters: List[str] = field(default_factory=lambda: ["rts", "none"])
    predictors: List[str] = field(default_factory=lambda: ["lstm"])
    split: List[int] = field(default_factory=lambda: [7000, 2800])
    hyperparams: dict = field(default_factory=dict)
    root_seed: int = 0
    replicates: int = 1
    output_dir: str = "out"
    sampling_mode: str = "per_frame"
    ma_window: int = _MA_WINDOW
    lag: int = _LAG
    q_ratio: float = _Q_RATIO
    rmse_mode: str = "standard"
    formats: List[str] = field(default_factory=lambda: ["csv", "svg"])
    record_timing: bool = False
    save_models: bool = False
    workers: int = 1

    def __post_init__(self):
        self.quantities = [flowparams.canonical_quantity(q) for q in self.quantities]
        if not (self.quantities and self.penetrations and self.filters and self.predictors):
            raise ContractError("experiment grid is empty")
        for p in self.penetrations:
            if not 0 < p <= 100:
                raise ContractError(f"penetration {p} outside (0, 100]")
        for f in self.filters:
            if f not in filters.FILTERS:
                raise ContractError(f"unknown filter {f!r}")
        for p in self.predictors:
            if p not in RNN_PREDICTORS:
                baselines.BaselineSpec.parse(p)
        if len(self.split) != 2 or min(self.split) < 1:
            raise ContractError("split must be two positive lengths")
        if self.replicates < 1:
            raise ContractError("replicates must be >= 1")
        if self.workers < 1:
            raise ContractError("workers must be >= 1")
        if self.rmse_mode not in evaluation.RMSE_MODES:
            raise ContractError(f"unknown RMSE mode {self.rmse_mode!r}")
        for f in self.formats:
            if f not in ("csv", "svg"):
                raise ContractError(f"unknown output format {f!r}")
        if "synthetic" not in self.data and "path" not in self.data:
            raise ContractError("data needs either 'synthetic' settings or a 'path'")
        self.hyper()

    def hyper(self) -> predictors.Hyperparams:
        return predictors.Hyperparams(**self.hyperparams)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ContractError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def n_cells(self) -> int:
        return len(self.quantities) * len(self.penetrations) * len(self.filters) * len(self.predictors) * self.replicates


@dataclass
class ReportRow:
    quantity: str
    penetration_pct: float
    filter: str
    predictor: str
    replicate: int
    rmse_norm: float = float("nan")
    rmse: float = float("nan")
    mae: float = float("nan")
    mape_pct: float = float("nan")
    t_stat: float = float("nan")
    p_value: float = float("nan")
    significant: Optional[bool] = None
    train_ms: Optional[float] = None
    infer_us_per_step: Optional[float] = None
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def cells(self) -> list:
        def num(v):
            if v is None:
                return ""
            return repr(float(v))

        return [
            self.quantity,
            f"{self.penetration_pct:g}",
            self.filter,
            self.predictor,
            str(self.replicate),
            num(self.rmse_norm), num(self.rmse), num(self.mae), num(self.mape_pct),
            num(self.t_stat), num(self.p_value),
            "" if self.significant is None else str(int(self.significant)),
            "" if self.train_ms is None else f"{self.train_ms:.3f}",
            "" if self.infer_us_per_step is None else f"{self.infer_us_per_step:.3f}",
            self.status,
        ]

    @classmethod
    def from_cells(cls, rec: dict) -> "ReportRow":
        def num(v):
            return float(v) if v != "" else float("nan")

        def opt(v):
            return float(v) if v != "" else None

        return cls(
            quantity=rec["quantity"],
            penetration_pct=float(rec["penetration_pct"]),
            filter=rec["filter"],
            predictor=rec["predictor"],
            replicate=int(rec["replicate"]),
            rmse_norm=num(rec["rmse_norm"]), rmse=num(rec["rmse"]), mae=num(rec["mae"]),
            mape_pct=num(rec["mape_pct"]), t_stat=num(rec["t_stat"]), p_value=num(rec["p_value"]),
            significant=None if rec["significant"] == "" else rec["significant"] == "1",
            train_ms=opt(rec["train_ms"]),
            infer_us_per_step=opt(rec["infer_us_per_step"]),
            status=rec["status"],
        )


@dataclass
class EvalReport:
    rows: List[ReportRow]
    traces: Dict[str, np.ndarray] = field(default_factory=dict)
    noise: Dict[str, flowparams.NoiseReport] = field(default_factory=dict)

    @property
    def n_errors(self) -> int:
        return sum(not r.ok for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow(r.cells())
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ContractError("report CSV header does not match the schema")
        return cls([ReportRow.from_cells(rec) for rec in reader])

    def select(self, **kw) -> List[ReportRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]


# ---------------------------------------------------------------- data


def load_dataset(config: ExperimentConfig) -> trajectory.TrajectoryDataset:
    data = config.data
    if "path" in data:
        with open(data["path"], "rb") as fh:
            return trajectory.parse_trajectory_file(
                fh,
                layout=data.get("layout", "native"),
                segment_length=data.get("segment_length"),
                frame_rate_hz=data.get("frame_rate_hz", 10.0),
            )
    return trajectory.generate_synthetic(trajectory.SyntheticConfig.from_dict(data["synthetic"]))


def filter_series(series: TimeSeries, name: str, config: ExperimentConfig, params=None) -> TimeSeries:
    """Apply a named filter with noise parameters estimated from ``series`` itself."""
    if name in ("kalman", "rts", "fixed_lag_rts") and params is None:
        try:
            params = filters.fit_noise_params(series, q_ratio=config.q_ratio)
        except CvForecastError:
            return series
    return filters.apply_filter(series, name, params, window=config.ma_window, lag=config.lag)


def _status(exc: BaseException) -> str:
    msg = " ".join(str(exc).split())
    return f"error:{type(exc).__name__}:{msg}"[:300]


# ---------------------------------------------------------------- cells


@dataclass
class CellResult:
    predictions: np.ndarray
    normalization: predictors.Normalization
    train_ms: float
    infer_us_per_step: float
    model: Optional[predictors.RnnModel] = None


def fit_and_predict(filtered: TimeSeries, predictor: str, split, hyper: predictors.Hyperparams) -> CellResult:
    """Train on the filtered training split and forecast every test step one step ahead."""
    train_n, test_n = split
    if predictor in RNN_PREDICTORS:
        sd = predictors.prepare_supervised(filtered, hyper.lookback, split)
        t0 = time.perf_counter()
        model = predictors.train_rnn(sd, predictor, hyper, sd.normalization)
        t1 = time.perf_counter()
        x = filtered.values[: train_n + test_n]
        pred = predictors.predict_series(model, x)[train_n - hyper.lookback:]
        t2 = time.perf_counter()
        return CellResult(pred, sd.normalization, (t1 - t0) * 1e3, (t2 - t1) * 1e6 / len(x), model)
    spec = baselines.BaselineSpec.parse(predictor)
    train = filtered.slice(0, train_n)
    test = filtered.slice(train_n, train_n + test_n)
    t0 = time.perf_counter()
    res = baselines.fit_predict_baseline(train, test, spec)
    t1 = time.perf_counter()
    norm = predictors.Normalization.fit(train.values)
    return CellResult(res.predictions, norm, (t1 - t0) * 1e3, (t1 - t0) * 1e6 / max(test_n, 1))


def score(truth: TimeSeries, predicted: np.ndarray, normalization, rmse_mode="standard"):
    """Metrics and t-test against the full-penetration ground truth."""
    if truth.penetration_pct != 100:
        raise ContractError("predictions must be scored against the 100% penetration series")
    actual = truth.values
    m = evaluation.compute_metrics(actual, predicted, rmse_mode=rmse_mode)
    mn = evaluation.compute_metrics(actual, predicted, normalization, rmse_mode=rmse_mode, with_mape=False)
    tt = evaluation.paired_t_test(actual, predicted)
    return m, mn, tt


def _groups(config: ExperimentConfig):
    """(replicate, quantity, penetration) triples in report order."""
    return [(rep, q, pen) for rep in range(config.replicates) for q in config.quantities for pen in config.penetrations]


def _run_group(config: ExperimentConfig, ds, rep: int, quantity: str, pen: float):
    """Every filter/predictor cell of one sampled series.

    Returns the rows, test-window traces, the noise report and any trained
    models; nothing is written here.
    """
    train_n, test_n = config.split
    base_hyper = config.hyper()
    truth_full = flowparams.aggregate(ds, quantity, 100)
    truth = truth_full.slice(train_n, train_n + test_n)
    traces, noise, models, rows = {}, None, {}, []
    if rep == 0:
        traces[f"truth|{quantity}"] = truth.values
    seed = derive_seed(config.root_seed, "sample", quantity, pen, rep)
    sampled = flowparams.aggregate(ds, quantity, pen, seed, config.sampling_mode)
    if rep == 0 and pen < 100:
        noise = flowparams.noise_series(sampled, truth_full)
    for filt in config.filters:
        try:
            filtered, ferr = filter_series(sampled, filt, config), None
        except CvForecastError as exc:
            filtered, ferr = None, exc
        for pred in config.predictors:
            row = ReportRow(quantity, float(pen), filt, pred, rep)
            try:
                if ferr is not None:
                    raise ferr
                hyper = replace(
                    base_hyper,
                    rng_seed=derive_seed(config.root_seed, "model", quantity, pen, filt, pred, rep),
                )
                res = fit_and_predict(filtered, pred, config.split, hyper)
                m, mn, tt = score(truth, res.predictions, res.normalization, config.rmse_mode)
                row.rmse, row.mae, row.mape_pct = m.rmse, m.mae, m.mape_pct
                row.rmse_norm = mn.rmse
                row.t_stat, row.p_value, row.significant = tt.t_stat, tt.p_value, tt.significant_at_95
                if config.record_timing:
                    row.train_ms, row.infer_us_per_step = res.train_ms, res.infer_us_per_step
                if rep == 0:
                    traces[f"pred|{quantity}|{pen:g}|{filt}|{pred}"] = res.predictions
                if config.save_models and res.model is not None:
                    models[f"{quantity}_{pen:g}_{filt}_{pred}_r{rep}"] = res.model
            except (CvForecastError, FloatingPointError) as exc:
                log.warning("cell %s/%g/%s/%s/%d failed: %s", quantity, pen, filt, pred, rep, exc)
                row.status = _status(exc)
            log.info(
                "%s %g%% %s %s r%d: MAPE %.3f%% RMSE %.4g %s",
                quantity, pen, filt, pred, rep, row.mape_pct, row.rmse, row.status,
            )
            rows.append(row)
    return rows, traces, noise, models


_WORKER_DS = None


def _init_worker(config: ExperimentConfig):
    global _WORKER_DS
    _WORKER_DS = load_dataset(config)


def _worker_group(config, rep, quantity, pen):
    return _run_group(config, _WORKER_DS, rep, quantity, pen)


def run_experiment(config: ExperimentConfig, write: bool = True) -> EvalReport:
    """Run every grid cell and write ``report.csv`` as cells complete.

    Cells sharing a sampled series (same quantity, penetration and
    replicate) form one task; with ``config.workers > 1`` tasks run in
    worker processes. This process is the only writer: rows are appended
    as tasks finish and the file is rewritten in grid order at the end.
    Cell failures are recorded with an ``error:`` status and the run goes on.
    """
    out = Path(config.output_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    ds = load_dataset(config)
    train_n, test_n = config.split
    if train_n + test_n > ds.n_frames:
        raise ContractError(f"split {tuple(config.split)} exceeds the {ds.n_frames} frames available")
    groups = _groups(config)
    done: Dict[int, tuple] = {}
    fh = open(out / "report.csv", "w", newline="", encoding="utf-8") if write else None
    writer = csv.writer(fh, lineterminator="\n") if fh else None

    def collect(i, result):
        done[i] = result
        rows, _, _, models = result
        if writer:
            writer.writerows(r.cells() for r in rows)
            fh.flush()
        if write and models:
            mdir = out / "models"
            mdir.mkdir(exist_ok=True)
            for name, model in models.items():
                predictors.save_model(model, mdir / f"{name}.cvfrnn")

    try:
        if writer:
            writer.writerow(REPORT_COLUMNS)
            fh.flush()
        if config.workers <= 1:
            for i, g in enumerate(groups):
                collect(i, _run_group(config, ds, *g))
        else:
            with ProcessPoolExecutor(config.workers, initializer=_init_worker, initargs=(config,)) as pool:
                futures = {pool.submit(_worker_group, config, *g): i for i, g in enumerate(groups)}
                for fut in as_completed(futures):
                    collect(futures[fut], fut.result())
    finally:
        if fh:
            fh.close()
    report = EvalReport([])
    for i in range(len(groups)):
        rows, traces, noise, _ = done[i]
        report.rows.extend(rows)
        report.traces.update(traces)
        if noise is not None:
            _, q, pen = groups[i]
            report.noise[f"{q}|{pen:g}"] = noise
    if write:
        emit_report(report, out, config.formats)
    return report


# ---------------------------------------------------------------- report


def emit_report(report: EvalReport, output_dir, formats: Sequence[str] = ("csv", "svg")) -> List[Path]:
    """Write ``report.csv`` and, when ``svg`` is requested, the figures."""
    if not report.rows:
        raise ContractError("report has no rows")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    written = []
    if "csv" in formats:
        p = out / "report.csv"
        p.write_text(report.to_csv(), encoding="utf-8")
        written.append(p)
        if report.traces:
            p = out / "traces.npz"
            np.savez(p, **report.traces)
            written.append(p)
    if "svg" in formats:
        from . import plotting

        written += plotting.render_report(report, out)
    return written


# ---------------------------------------------------------------- replay


@dataclass(frozen=True)
class LatencyReport:
    lag: int
    n_steps: int
    min_us: float
    mean_us: float
    max_us: float
    p99_us: float
    budget_us: float = LATENCY_BUDGET_US

    @property
    def passed(self) -> bool:
        return self.max_us < self.budget_us

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def replay_realtime(
    model: Optional[predictors.RnnModel],
    params: filters.FilterParams,
    series,
    lag: int = filters.DEFAULT_LAG,
    frame_rate_hz: Optional[float] = None,
) -> LatencyReport:
    """Stream ``series`` through a fixed-lag smoother and the model, timing each step.

    Each step ingests one measurement, updates the smoother and, once an
    estimate is released, runs one model inference on it. With
    ``frame_rate_hz`` the loop sleeps to the frame clock; otherwise it runs
    as fast as possible.
    """
    if model is None:
        raise ContractError("replay needs a trained model")
    z = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=np.float64)
    if len(z) == 0:
        raise ContractError("replay series is empty")
    smoother = filters.FixedLagSmoother(params, lag)
    stream = predictors.StreamPredictor(model)
    times = np.empty(len(z))
    period_ns = int(1e9 / frame_rate_hz) if frame_rate_hz else 0
    clock = time.perf_counter_ns
    t_next = clock()
    for i, v in enumerate(z.tolist()):
        t0 = clock()
        out = smoother.step(v)
        if out is not None:
            stream.step(out[1])
        times[i] = (clock() - t0) / 1e3
        if period_ns:
            t_next += period_ns
            delay = t_next - clock()
            if delay > 0:
                time.sleep(delay / 1e9)
    return LatencyReport(
        lag=lag,
        n_steps=len(z),
        min_us=float(times.min()),
        mean_us=float(times.mean()),
        max_us=float(times.max()),
        p99_us=float(np.percentile(times, 99)),
    )


def replay_from_config(config: ExperimentConfig, model_path=None, lags=(0, filters.DEFAULT_LAG), frame_rate_hz=None):
    """Latency reports for the first quantity and penetration of ``config``.

    Filter parameters are fitted on the sampled training portion. Without
    ``model_path`` a model is trained on the fixed-lag filtered training
    series first.
    """
    ds = load_dataset(config)
    quantity, pen = config.quantities[0], config.penetrations[0]
    train_n, test_n = config.split
    sampled = flowparams.aggregate(ds, quantity, pen, derive_seed(config.root_seed, "sample", quantity, pen, 0), config.sampling_mode)
    params = filters.fit_noise_params(sampled.slice(0, train_n), q_ratio=config.q_ratio)
    if model_path is not None:
        if not Path(model_path).is_file():
            raise ContractError(f"model file {model_path} not found")
        model = predictors.load_model(model_path)
    else:
        filtered = filters.fixed_lag_smooth(sampled, params, config.lag)
        hyper = replace(config.hyper(), rng_seed=derive_seed(config.root_seed, "replay", quantity, pen))
        model = fit_and_predict(filtered, "lstm", config.split, hyper).model
    test = sampled.slice(train_n, train_n + test_n)
    return [replay_realtime(model, params, test, lag, frame_rate_hz) for lag in lags]


# ---------------------------------------------------------------- sweep


def run_sweep(
    config: ExperimentConfig,
    parameter: str,
    candidates: Sequence,
    trials: int = 30,
    validation_fraction: float = 0.2,
):
    """Validation RMSE (normalised) per trial for each candidate hyperparameter value.

    The first quantity, penetration, filter and RNN predictor of ``config``
    are used. The last ``validation_fraction`` of the training split is held
    out; the test split is never touched.
    """
    if parameter not in predictors.Hyperparams.__dataclass_fields__:
        raise ContractError(f"unknown hyperparameter {parameter!r}")
    if not candidates:
        raise ContractError("sweep needs at least one candidate")
    arch = next((p for p in config.predictors if p in RNN_PREDICTORS), None)
    if arch is None:
        raise ContractError("sweep needs an RNN predictor in the config")
    ds = load_dataset(config)
    quantity, pen, filt = config.quantities[0], config.penetrations[0], config.filters[0]
    train_n = config.split[0]
    n_val = int(round(train_n * validation_fraction))
    split = (train_n - n_val, n_val)
    full = flowparams.aggregate(ds, quantity, 100)
    truth = full.slice(split[0], train_n)
    results = {}
    for cand in candidates:
        vals = []
        for trial in range(trials):
            seed = derive_seed(config.root_seed, "sweep", quantity, pen, filt, trial)
            sampled = flowparams.aggregate(ds, quantity, pen, seed, config.sampling_mode)
            filtered = filter_series(sampled.slice(0, train_n), filt, config)
            hyper = replace(
                config.hyper(),
                **{parameter: type(getattr(config.hyper(), parameter))(cand)},
                rng_seed=derive_seed(config.root_seed, "sweep-model", parameter, cand, trial),
            )
            res = fit_and_predict(filtered, arch, split, hyper)
            _, mn, _ = score(truth, res.predictions, res.normalization)
            vals.append(mn.rmse)
            log.info("sweep %s=%s trial %d: rmse_norm %.5f", parameter, cand, trial, mn.rmse)
        results[cand] = vals
    stats = evaluation.sweep(results)
    return stats, evaluation.select_candidate(stats), results
