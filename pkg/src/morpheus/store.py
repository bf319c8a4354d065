"""Metric and task storage: ingestion, aligned time series, window queries.

Timestamps are integer epoch milliseconds aligned to the scrape grid
(``floor(t / interval) * interval``). A store is built once (ingestion or
synthesis) and is read-only afterwards, which is what makes concurrent reads
from the analysis and prediction paths safe without locking.

The scrape interval defaults to 200 ms and can be overridden through the
``MORPHEUS_SCRAPE_MS`` environment variable or per call.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ENV_SCRAPE_MS = "MORPHEUS_SCRAPE_MS"
DEFAULT_SCRAPE_MS = 200


def scrape_interval_ms(override: int | None = None) -> int:
    """Active scrape interval in ms: explicit override > env var > default."""
    if override is not None:
        value = int(override)
    else:
        raw = os.environ.get(ENV_SCRAPE_MS, "").strip()
        value = int(raw) if raw else DEFAULT_SCRAPE_MS
    if value <= 0:
        raise ValueError(f"scrape interval must be positive, got {value}")
    return value


def align_timestamp(t_ms: int, interval_ms: int) -> int:
    return (int(t_ms) // interval_ms) * interval_ms


class IngestError(ValueError):
    """Malformed ingestion input; message carries file and line context."""


@dataclass(frozen=True)
class MetricSample:
    timestamp: int  # epoch ms, grid-aligned
    value: float


@dataclass
class MetricSeries:
    """One metric's samples, timestamps strictly increasing."""

    metric_id: str
    timestamps: np.ndarray  # int64 ms
    values: np.ndarray  # float64

    def __len__(self) -> int:
        return int(self.timestamps.shape[0])

    def __iter__(self):
        for t, v in zip(self.timestamps, self.values):
            yield MetricSample(int(t), float(v))

    def check(self) -> None:
        if self.timestamps.shape != self.values.shape:
            raise ValueError(f"{self.metric_id}: timestamp/value length mismatch")
        if len(self) > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError(f"{self.metric_id}: timestamps not strictly increasing")
        if len(self) and not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.metric_id}: non-finite values")

    def slice_window(self, window: "QueryWindow") -> "MetricSeries":
        """Samples with start < t <= end where start = end - duration*1000."""
        start = window.end_time - int(round(window.duration * 1000))
        lo = int(np.searchsorted(self.timestamps, start, side="right"))
        hi = int(np.searchsorted(self.timestamps, window.end_time, side="right"))
        return MetricSeries(self.metric_id, self.timestamps[lo:hi], self.values[lo:hi])

    def slice_before(self, t_ms: int, duration_s: float) -> "MetricSeries":
        """Samples with t_ms - duration_s*1000 <= t < t_ms (end-exclusive)."""
        start = t_ms - int(round(duration_s * 1000))
        lo = int(np.searchsorted(self.timestamps, start, side="left"))
        hi = int(np.searchsorted(self.timestamps, t_ms, side="left"))
        return MetricSeries(self.metric_id, self.timestamps[lo:hi], self.values[lo:hi])


@dataclass(frozen=True)
class QueryWindow:
    """Half-open lookback window (end - duration*1000, end]."""

    end_time: int  # epoch ms
    duration: float  # seconds, > 0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"window duration must be positive, got {self.duration}")


@dataclass(frozen=True)
class TaskRecord:
    task_id: str
    app_id: str
    node_id: str
    t_start: int  # epoch ms
    t_end: int  # epoch ms

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise ValueError(
                f"task {self.task_id}: t_end ({self.t_end}) must exceed t_start ({self.t_start})"
            )

    @property
    def rtt(self) -> float:
        """Round-trip time in seconds."""
        return (self.t_end - self.t_start) / 1000.0


@dataclass(frozen=True)
class DelayModel:
    """Prediction-time cost model for state retrieval and feature computation.

    t_state scales with the retrieved volume (k metrics x w seconds of
    samples) on top of a fixed query cost; t_feature scales with the number
    of metrics whose features get computed.
    """

    fixed_cost: float = 0.5  # seconds per state query
    per_metric_cost: float = (0.35 * 60.0 - 0.5) / 6000.0  # seconds per metric-second
    feature_cost_per_metric: float = 0.025  # seconds per metric

    @classmethod
    def calibrated(cls) -> "DelayModel":
        """Defaults anchored to the measured-share targets.

        With these constants, state retrieval for k=100 metrics over w=60 s
        costs 35% of a 60 s RTT, the same k over w=5 s stays below 20%, and
        the stage shares of a full prediction keep state retrieval dominant.
        """
        return cls()


def state_delay(k: int, w: float, model: DelayModel | None = None) -> tuple[float, float]:
    """(t_state, t_feature) in seconds for k metrics over a w-second window."""
    if int(k) < 1:
        raise ValueError(f"metric count k must be >= 1, got {k}")
    if w <= 0:
        raise ValueError(f"window w must be positive, got {w}")
    m = model if model is not None else DelayModel()
    t_state = m.fixed_cost + m.per_metric_cost * int(k) * float(w)
    t_feature = m.feature_cost_per_metric * int(k)
    return t_state, t_feature


# ---------------------------------------------------------------------------
# Synthetic scenario description


@dataclass(frozen=True)
class DriverSpec:
    """Latent load process: mean-reverting AR(1) offset to mean 1.

    tau_s is the correlation time; amplitude the stationary std.
    """

    tau_s: float = 40.0
    amplitude: float = 0.6


@dataclass(frozen=True)
class RttLaw:
    """Driver-to-RTT mapping over the 60 s pre-submission window.

    affine:    rtt = base * (1 + a*meanD + b*stdD)
    quadratic: rtt = base * (1 + a*meanD + b*stdD + c*meanD^2)

    meanD/stdD are the mean and std of driver ``driver`` over the window.
    Multiplicative unit-mean lognormal noise with sigma ``noise`` is applied.
    Optional drift: at drift_at_s the coefficients a, b, c scale by
    drift_factor.
    """

    law_id: str = "affine"
    base: float = 10.0
    a: float = 0.8
    b: float = 0.4
    c: float = 0.0
    noise: float = 0.05
    driver: int = 0
    drift_at_s: float | None = None
    drift_factor: float = 1.0

    def noiseless(self, mean_d: float, std_d: float, t_s: float) -> float:
        a, b, c = self.a, self.b, self.c
        if self.drift_at_s is not None and t_s >= self.drift_at_s:
            a *= self.drift_factor
            b *= self.drift_factor
            c *= self.drift_factor
        out = 1.0 + a * mean_d + b * std_d
        if self.law_id == "quadratic":
            out += c * mean_d * mean_d
        elif self.law_id != "affine":
            raise ValueError(f"unknown rtt law {self.law_id!r}")
        return self.base * out


@dataclass(frozen=True)
class ScenarioSpec:
    duration_s: float = 1800.0
    metric_count: int = 20
    seed: int = 7
    app_id: str = "app"
    node_id: str = "node"
    t_max_wait_s: float = 8.0
    warmup_s: float = 60.0
    metric_noise: float = 0.05
    drivers: tuple[DriverSpec, ...] = (DriverSpec(), DriverSpec(tau_s=25.0, amplitude=0.4))
    mixing: tuple[tuple[float, ...], ...] | None = None  # per metric, per driver
    law: RttLaw = field(default_factory=RttLaw)
    delay_model: DelayModel = field(default_factory=DelayModel)
    scrape_ms: int | None = None

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("scenario duration must be positive")
        if self.metric_count < 1:
            raise ValueError("scenario needs at least one metric")
        if not self.drivers:
            raise ValueError("scenario needs at least one driver")
        if self.law.driver >= len(self.drivers):
            raise ValueError(
                f"rtt law references driver {self.law.driver} "
                f"but only {len(self.drivers)} drivers are defined"
            )
        if self.mixing is not None and len(self.mixing) != self.metric_count:
            raise ValueError("mixing matrix must have one row per metric")


@dataclass
class GroundTruth:
    """Generator internals retained for oracle checks."""

    grid_ms: np.ndarray
    drivers: np.ndarray  # (n_drivers, n_steps)
    mixing: np.ndarray  # (metric_count, n_drivers)
    law: RttLaw
    metric_ids: list[str]

    def driver_window_stats(self, t_start_ms: int, duration_s: float = 60.0) -> tuple[float, float]:
        """Mean/std of the law's driver over the pre-submission window."""
        start = t_start_ms - int(round(duration_s * 1000))
        lo = int(np.searchsorted(self.grid_ms, start, side="left"))
        hi = int(np.searchsorted(self.grid_ms, t_start_ms, side="left"))
        seg = self.drivers[self.law.driver, lo:hi]
        return float(seg.mean()), float(seg.std())

    def true_rtt(self, t_start_ms: int) -> float:
        mean_d, std_d = self.driver_window_stats(t_start_ms)
        return self.law.noiseless(mean_d, std_d, t_start_ms / 1000.0)


# ---------------------------------------------------------------------------
# Store


class MetricsStore:
    def __init__(self, scrape_ms: int | None = None, delay_model: DelayModel | None = None):
        self.scrape_ms = scrape_interval_ms(scrape_ms)
        self.delay_model = delay_model if delay_model is not None else DelayModel()
        self._series: dict[str, MetricSeries] = {}
        self._tasks: list[TaskRecord] = []
        self.ground_truth: GroundTruth | None = None

    # -- construction ------------------------------------------------------

    def add_series(self, metric_id: str, timestamps, values) -> None:
        ts = np.asarray(timestamps, dtype=np.int64)
        vs = np.asarray(values, dtype=np.float64)
        series = MetricSeries(metric_id, ts, vs)
        series.check()
        self._series[metric_id] = series

    def add_task(self, task: TaskRecord) -> None:
        self._tasks.append(task)
        self._tasks.sort(key=lambda t: (t.t_end, t.task_id))

    def ingest_csv(self, path: str | Path) -> "MetricsStore":
        """Load a metrics or tasks CSV (detected by header) into this store.

        Metric rows: metric_id,timestamp_ms,value with timestamps aligned to
        the scrape grid on ingest. Duplicate aligned timestamps for a metric
        keep the last value. Task rows:
        task_id,app_id,node_id,t_start_ms,t_end_ms. An empty file is a no-op.
        """
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                return self  # zero-byte file: empty store
            header = [h.strip() for h in header]
            if header[:3] == ["metric_id", "timestamp_ms", "value"]:
                self._ingest_metric_rows(reader, path)
            elif header[:5] == ["task_id", "app_id", "node_id", "t_start_ms", "t_end_ms"]:
                self._ingest_task_rows(reader, path)
            else:
                raise IngestError(f"{path}: unrecognized header {header!r}")
        return self

    def _ingest_metric_rows(self, reader, path: Path) -> None:
        buf: dict[str, dict[int, float]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 3:
                raise IngestError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            mid = row[0].strip()
            try:
                ts = align_timestamp(int(row[1]), self.scrape_ms)
                val = float(row[2])
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from None
            if not math.isfinite(val):
                raise IngestError(f"{path}:{lineno}: non-finite value {row[2]!r}")
            buf.setdefault(mid, {})[ts] = val
        for mid, points in buf.items():
            merged = dict(points)
            if mid in self._series:
                old = self._series[mid]
                base = {int(t): float(v) for t, v in zip(old.timestamps, old.values)}
                base.update(merged)
                merged = base
            ts_sorted = np.array(sorted(merged), dtype=np.int64)
            vs = np.array([merged[int(t)] for t in ts_sorted], dtype=np.float64)
            self._series[mid] = MetricSeries(mid, ts_sorted, vs)

    def _ingest_task_rows(self, reader, path: Path) -> None:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 5:
                raise IngestError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                task = TaskRecord(
                    task_id=row[0].strip(),
                    app_id=row[1].strip(),
                    node_id=row[2].strip(),
                    t_start=int(row[3]),
                    t_end=int(row[4]),
                )
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: {exc}") from None
            self._tasks.append(task)
        self._tasks.sort(key=lambda t: (t.t_end, t.task_id))

    # -- queries -----------------------------------------------------------

    @property
    def metric_ids(self) -> list[str]:
        return sorted(self._series)

    @property
    def tasks(self) -> list[TaskRecord]:
        return list(self._tasks)

    def series(self, metric_id: str) -> MetricSeries:
        try:
            return self._series[metric_id]
        except KeyError:
            raise KeyError(f"unknown metric {metric_id!r}") from None

    def query_range(self, metric_id: str, window: QueryWindow) -> MetricSeries:
        return self.series(metric_id).slice_window(window)

    def pre_submission_window(self, metric_id: str, t_start_ms: int, duration_s: float) -> MetricSeries:
        return self.series(metric_id).slice_before(t_start_ms, duration_s)

    def covers(self, metric_id: str, t_start_ms: int, duration_s: float) -> bool:
        """True if the metric's samples span the full pre-submission window."""
        s = self._series.get(metric_id)
        if s is None or len(s) == 0:
            return False
        start = t_start_ms - int(round(duration_s * 1000))
        return int(s.timestamps[0]) <= start and int(s.timestamps[-1]) >= t_start_ms - self.scrape_ms

    def latest_common_timestamp(self, metric_ids) -> int | None:
        """Most recent timestamp present in every listed metric, or None."""
        last = []
        for mid in metric_ids:
            s = self._series.get(mid)
            if s is None or len(s) == 0:
                return None
            last.append(int(s.timestamps[-1]))
        return min(last) if last else None

    def list_tasks_since(self, app_id: str, node_id: str, t_ms: int) -> list[TaskRecord]:
        """Tasks for (app, node) with t_end strictly after t_ms, by t_end."""
        return [
            t
            for t in self._tasks
            if t.app_id == app_id and t.node_id == node_id and t.t_end > t_ms
        ]

    # -- export ------------------------------------------------------------

    def write_metrics_csv(self, path: str | Path) -> int:
        path = Path(path)
        n = 0
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric_id", "timestamp_ms", "value"])
            for mid in self.metric_ids:
                s = self._series[mid]
                for t, v in zip(s.timestamps, s.values):
                    w.writerow([mid, int(t), repr(float(v))])
                    n += 1
        return n

    def write_tasks_csv(self, path: str | Path) -> int:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["task_id", "app_id", "node_id", "t_start_ms", "t_end_ms"])
            for t in self._tasks:
                w.writerow([t.task_id, t.app_id, t.node_id, t.t_start, t.t_end])
        return len(self._tasks)


def ingest_csv(path: str | Path, store: MetricsStore | None = None) -> MetricsStore:
    """Module-level convenience: ingest into a new or existing store."""
    st = store if store is not None else MetricsStore()
    return st.ingest_csv(path)


# ---------------------------------------------------------------------------
# Synthetic generation


def _ar1(rng: np.random.Generator, n: int, tau_s: float, amplitude: float, dt_s: float) -> np.ndarray:
    phi = math.exp(-dt_s / tau_s)
    innov_scale = amplitude * math.sqrt(1.0 - phi * phi)
    eps = rng.standard_normal(n)
    out = np.empty(n)
    out[0] = amplitude * eps[0]
    for i in range(1, n):
        out[i] = phi * out[i - 1] + innov_scale * eps[i]
    return 1.0 + out


def generate_synthetic(spec: ScenarioSpec) -> MetricsStore:
    """Build a store with driver-mixture metrics and a law-driven task stream.

    Deterministic for a given spec: equal seeds yield byte-identical exports.
    """
    scrape = scrape_interval_ms(spec.scrape_ms)
    dt_s = scrape / 1000.0
    n_steps = int(round(spec.duration_s * 1000)) // scrape
    grid = np.arange(n_steps, dtype=np.int64) * scrape

    rng = np.random.default_rng(spec.seed)
    drivers = np.vstack(
        [_ar1(rng, n_steps, d.tau_s, d.amplitude, dt_s) for d in spec.drivers]
    )

    if spec.mixing is not None:
        mixing = np.asarray(spec.mixing, dtype=np.float64)
    else:
        mixing = rng.uniform(0.2, 1.0, size=(spec.metric_count, len(spec.drivers)))

    width = max(3, len(str(spec.metric_count - 1)))
    metric_ids = [f"m{idx:0{width}d}" for idx in range(spec.metric_count)]

    store = MetricsStore(scrape_ms=scrape, delay_model=spec.delay_model)
    for j, mid in enumerate(metric_ids):
        values = mixing[j] @ drivers
        if spec.metric_noise > 0:
            values = values + spec.metric_noise * rng.standard_normal(n_steps)
        store.add_series(mid, grid, values)

    law = spec.law
    driver_row = drivers[law.driver]
    horizon_ms = n_steps * scrape
    t = int(round(spec.warmup_s * 1000))
    idx = 0
    window_ms = 60_000
    while t < horizon_ms:
        lo = int(np.searchsorted(grid, t - window_ms, side="left"))
        hi = int(np.searchsorted(grid, t, side="left"))
        seg = driver_row[lo:hi]
        rtt = law.noiseless(float(seg.mean()), float(seg.std()), t / 1000.0)
        if law.noise > 0:
            z = rng.standard_normal()
            rtt *= math.exp(law.noise * z - 0.5 * law.noise * law.noise)
        t_end = t + max(1, int(round(rtt * 1000)))
        if t_end >= horizon_ms:
            break
        store.add_task(
            TaskRecord(
                task_id=f"t{idx:05d}",
                app_id=spec.app_id,
                node_id=spec.node_id,
                t_start=t,
                t_end=t_end,
            )
        )
        idx += 1
        wait = rng.uniform(0.0, spec.t_max_wait_s)
        t = t_end + int(round(wait * 1000))

    store.ground_truth = GroundTruth(
        grid_ms=grid, drivers=drivers, mixing=mixing, law=law, metric_ids=metric_ids
    )
    return store
