"""Balanced training datasets: dynamic binning, capped admission, sufficiency.

The dataset holds task records balanced across RTT bins. Bin edges follow the
Freedman-Diaconis rule recomputed over existing plus offered samples each
admission cycle; per-bin capacity is the largest existing bin count at that
moment, so dominant RTT regions stop growing while sparse regions fill in.
Existing samples are never evicted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .store import MetricSeries, MetricsStore, TaskRecord

FORMAT_DATASET = "morpheus-dataset/1"


@dataclass
class BinLayout:
    """Equal-width RTT bins: edges min_rtt + i*width, i in [0, count]."""

    min_rtt: float
    width: float
    count: int
    counts: np.ndarray  # occupancy per bin

    @property
    def edges(self) -> np.ndarray:
        return self.min_rtt + self.width * np.arange(self.count + 1)

    def bin_index(self, rtt: float) -> int:
        if self.count <= 1 or self.width <= 0:
            return 0
        i = int(math.floor((rtt - self.min_rtt) / self.width))
        return min(max(i, 0), self.count - 1)


def compute_bins(rtts) -> BinLayout:
    """Freedman-Diaconis layout over the given RTT sample.

    h = 2*IQR/N^(1/3) (quartiles by linear interpolation); bin count
    l = ceil((max-min)/h). Degenerate spreads (IQR == 0 or all values equal)
    collapse to a single bin covering the full range.
    """
    arr = np.asarray(sorted(float(r) for r in rtts), dtype=np.float64)
    n = arr.shape[0]
    if n == 0:
        raise ValueError("cannot bin an empty RTT sample")
    lo = float(arr[0])
    hi = float(arr[-1])
    q25, q75 = np.percentile(arr, [25.0, 75.0])
    iqr = float(q75 - q25)
    h = 2.0 * iqr / (n ** (1.0 / 3.0))
    if h <= 0 or hi == lo:
        layout = BinLayout(min_rtt=lo, width=max(hi - lo, 1.0), count=1, counts=np.zeros(1, dtype=np.int64))
    else:
        count = int(math.ceil((hi - lo) / h))
        layout = BinLayout(min_rtt=lo, width=h, count=count, counts=np.zeros(count, dtype=np.int64))
    for r in arr:
        layout.counts[layout.bin_index(float(r))] += 1
    return layout


@dataclass
class DatasetRecord:
    task: TaskRecord
    windows: dict[str, MetricSeries] | None = None
    features: np.ndarray | None = None
    complete: bool = False

    @property
    def rtt(self) -> float:
        return self.task.rtt


@dataclass
class AdmissionEvent:
    """One admission cycle, retained for cap audits."""

    offered: int
    accepted: int
    c_max: int
    bin_count: int
    pre_counts: np.ndarray  # existing occupancy under the cycle's layout
    accepted_per_bin: np.ndarray
    no_capacity: bool


@dataclass
class BalancedDataset:
    records: list[DatasetRecord] = field(default_factory=list)
    layout: BinLayout | None = None
    offered_total: int = 0
    admission_log: list[AdmissionEvent] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def rtts(self) -> np.ndarray:
        return np.array([r.rtt for r in self.records], dtype=np.float64)

    @property
    def task_ids(self) -> set[str]:
        return {r.task.task_id for r in self.records}

    def complete_records(self) -> list[DatasetRecord]:
        return [r for r in self.records if r.complete]


def admit_new_samples(
    existing: BalancedDataset | None,
    new: list[TaskRecord],
    rng: np.random.Generator,
) -> tuple[list[TaskRecord], BinLayout | None]:
    """Admit a batch of new task records into the dataset.

    Empty existing dataset: every offered sample is accepted (layout is still
    computed so downstream callers see the occupancy). Otherwise the layout
    is recomputed over existing+offered RTTs, existing records are recounted
    against it, per-bin capacity is the largest existing count, and each bin
    admits at most its remaining gap (random choice among its candidates).
    If no bin can take any offered sample, exactly one sample is retained at
    random. Existing records are never removed. Returns (accepted, layout).
    """
    ds = existing if existing is not None else BalancedDataset()
    if not new:
        return [], ds.layout
    ds.offered_total += len(new)

    if not ds.records:
        layout = compute_bins([t.rtt for t in new])
        ds.records.extend(DatasetRecord(task=t) for t in new)
        ds.layout = layout
        ds.admission_log.append(
            AdmissionEvent(
                offered=len(new),
                accepted=len(new),
                c_max=0,
                bin_count=layout.count,
                pre_counts=np.zeros(layout.count, dtype=np.int64),
                accepted_per_bin=layout.counts.copy(),
                no_capacity=False,
            )
        )
        return list(new), layout

    existing_rtts = [r.rtt for r in ds.records]
    layout = compute_bins(existing_rtts + [t.rtt for t in new])
    pre_counts = np.zeros(layout.count, dtype=np.int64)
    for r in existing_rtts:
        pre_counts[layout.bin_index(r)] += 1
    c_max = int(pre_counts.max())

    by_bin: dict[int, list[TaskRecord]] = {}
    for t in new:
        by_bin.setdefault(layout.bin_index(t.rtt), []).append(t)

    accepted: list[TaskRecord] = []
    accepted_per_bin = np.zeros(layout.count, dtype=np.int64)
    for b in sorted(by_bin):
        cands = by_bin[b]
        gap = c_max - int(pre_counts[b])
        if gap <= 0:
            continue
        if gap >= len(cands):
            chosen = cands
        else:
            idx = np.sort(rng.choice(len(cands), size=gap, replace=False))
            chosen = [cands[i] for i in idx]
        accepted.extend(chosen)
        accepted_per_bin[b] = len(chosen)

    no_capacity = not accepted
    if no_capacity:
        pick = new[int(rng.integers(len(new)))]
        accepted = [pick]
        accepted_per_bin[layout.bin_index(pick.rtt)] = 1

    ds.records.extend(DatasetRecord(task=t) for t in accepted)
    layout.counts = pre_counts + accepted_per_bin
    ds.layout = layout
    ds.admission_log.append(
        AdmissionEvent(
            offered=len(new),
            accepted=len(accepted),
            c_max=c_max,
            bin_count=layout.count,
            pre_counts=pre_counts,
            accepted_per_bin=accepted_per_bin,
            no_capacity=no_capacity,
        )
    )
    return accepted, layout


def attach_metrics(
    record: DatasetRecord,
    store: MetricsStore,
    metric_ids: list[str] | None = None,
    window_s: float = 60.0,
) -> DatasetRecord:
    """Attach pre-submission metric windows ending at t_start (exclusive).

    A record is complete only if every metric's samples span the whole
    window; incomplete records keep whatever samples exist (gaps are never
    interpolated) and are excluded from training but still count for binning.
    """
    mids = metric_ids if metric_ids is not None else store.metric_ids
    windows: dict[str, MetricSeries] = {}
    complete = bool(mids)
    for mid in mids:
        windows[mid] = store.pre_submission_window(mid, record.task.t_start, window_s)
        if not store.covers(mid, record.task.t_start, window_s):
            complete = False
    record.windows = windows
    record.complete = complete
    return record


# ---------------------------------------------------------------------------
# Sufficiency: distribution-free CI for the median


def _binom_half_logpmf(n: int, k: int) -> float:
    # log of C(n, k) * 0.5^n
    return (
        math.lgamma(n + 1)
        - math.lgamma(k + 1)
        - math.lgamma(n - k + 1)
        - n * math.log(2.0)
    )


def median_ci_ranks(n: int, alpha_pct: float = 95.0) -> tuple[int, int] | None:
    """1-indexed order-statistic ranks (d, n-d+1) bounding the median.

    d is the largest rank with P(X <= d-1) <= (1 - alpha)/2 for
    X ~ Binomial(n, 0.5); None when no valid rank pair exists.
    """
    if n < 1:
        return None
    q = (1.0 - alpha_pct / 100.0) / 2.0
    cum = 0.0
    m = -1
    for i in range(n + 1):
        cum += math.exp(_binom_half_logpmf(n, i))
        if cum <= q + 1e-12:
            m = i
        else:
            break
    d = m + 1
    if d < 1 or n - d + 1 <= d:
        return None
    return d, n - d + 1


@dataclass(frozen=True)
class SufficiencyParams:
    alpha_pct: float = 95.0
    r_pct: float = 5.0
    min_samples: int = 8


def is_sufficient(rtts, params: SufficiencyParams | None = None) -> bool:
    """True when the median CI half-width is within r% of the sample median.

    The CI is the distribution-free order-statistic interval at the given
    confidence; fewer than min_samples observations are never sufficient.
    """
    p = params if params is not None else SufficiencyParams()
    arr = np.sort(np.asarray(list(rtts), dtype=np.float64))
    n = arr.shape[0]
    if n < p.min_samples:
        return False
    ranks = median_ci_ranks(n, p.alpha_pct)
    if ranks is None:
        return False
    lo_rank, hi_rank = ranks
    lo = float(arr[lo_rank - 1])
    hi = float(arr[hi_rank - 1])
    half_width = (hi - lo) / 2.0
    median = float(np.median(arr))
    return half_width <= (p.r_pct / 100.0) * median


def reduction_ratio(offered: int, retained: int) -> float:
    """Percent of offered samples that the balancer filtered out."""
    if offered <= 0:
        raise ValueError(f"offered must be positive, got {offered}")
    if retained < 0 or retained > offered:
        raise ValueError(f"retained {retained} outside [0, {offered}]")
    return 100.0 * (offered - retained) / offered


# ---------------------------------------------------------------------------
# Persistence: index (task_id, rtt, bin) + blob (windows/features per record)


def save_dataset(ds: BalancedDataset, index_path: str | Path, blob_path: str | Path) -> None:
    index_path = Path(index_path)
    blob_path = Path(blob_path)
    with index_path.open("w") as fh:
        fh.write(f"# {FORMAT_DATASET}\n")
        fh.write("task_id,rtt,bin\n")
        for r in ds.records:
            b = ds.layout.bin_index(r.rtt) if ds.layout is not None else -1
            fh.write(f"{r.task.task_id},{r.rtt!r},{b}\n")
    with blob_path.open("w") as fh:
        header = {
            "format": FORMAT_DATASET,
            "offered_total": ds.offered_total,
            "layout": None
            if ds.layout is None
            else {
                "min_rtt": ds.layout.min_rtt,
                "width": ds.layout.width,
                "count": ds.layout.count,
                "counts": ds.layout.counts.tolist(),
            },
        }
        fh.write(json.dumps(header) + "\n")
        for r in ds.records:
            row = {
                "task_id": r.task.task_id,
                "app_id": r.task.app_id,
                "node_id": r.task.node_id,
                "t_start": r.task.t_start,
                "t_end": r.task.t_end,
                "complete": r.complete,
                "windows": None
                if r.windows is None
                else {
                    mid: [s.timestamps.tolist(), s.values.tolist()]
                    for mid, s in r.windows.items()
                },
                "features": None if r.features is None else r.features.tolist(),
            }
            fh.write(json.dumps(row) + "\n")


def load_dataset(index_path: str | Path, blob_path: str | Path) -> BalancedDataset:
    blob_path = Path(blob_path)
    with blob_path.open() as fh:
        header = json.loads(fh.readline())
        if header.get("format") != FORMAT_DATASET:
            raise ValueError(f"{blob_path}: unsupported dataset format {header.get('format')!r}")
        ds = BalancedDataset(offered_total=int(header.get("offered_total", 0)))
        lay = header.get("layout")
        if lay is not None:
            ds.layout = BinLayout(
                min_rtt=float(lay["min_rtt"]),
                width=float(lay["width"]),
                count=int(lay["count"]),
                counts=np.asarray(lay["counts"], dtype=np.int64),
            )
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            rec = DatasetRecord(
                task=TaskRecord(
                    task_id=row["task_id"],
                    app_id=row["app_id"],
                    node_id=row["node_id"],
                    t_start=int(row["t_start"]),
                    t_end=int(row["t_end"]),
                ),
                complete=bool(row["complete"]),
            )
            if row["windows"] is not None:
                rec.windows = {
                    mid: MetricSeries(
                        mid,
                        np.asarray(ts, dtype=np.int64),
                        np.asarray(vs, dtype=np.float64),
                    )
                    for mid, (ts, vs) in row["windows"].items()
                }
            if row["features"] is not None:
                rec.features = np.asarray(row["features"], dtype=np.float64)
            ds.records.append(rec)
    index_path = Path(index_path)
    with index_path.open() as fh:
        first = fh.readline().strip()
        if first != f"# {FORMAT_DATASET}":
            raise ValueError(f"{index_path}: unsupported index format {first!r}")
        fh.readline()  # column header
        ids = [line.split(",", 1)[0] for line in fh if line.strip()]
    if ids != [r.task.task_id for r in ds.records]:
        raise ValueError(f"{index_path}: index order disagrees with blob contents")
    return ds
