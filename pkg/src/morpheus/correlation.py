"""Correlation-driven metric selection.

Five correlation methods relate windowed metric features to task RTTs:
pearson, spearman (average ranks), kendall (tau-b), distance correlation
(double-centered V-statistic), and a grid-search mutual-information score
(equal-frequency start, greedy adjacent column merging, both directions,
normalized by log(min(a, b)), grid bound a*b <= max(4, n^0.6) with axes
capped at 15).

For each (metric, window) the best feature per method is scored, methods are
collapsed to a single representative (max |score|), metrics are ranked and
near-duplicates dropped (|pearson| >= threshold against an already-kept
metric), and the final (window, k) configuration maximizes the sum of
absolute representative scores subject to the preparation-time budget
t_state + t_feature <= tau_prepare * mu_RTT.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .dataset import DatasetRecord
from .features import FEATURE_INDEX, FEATURES, feature_matrix
from .store import DelayModel, state_delay

METHODS: tuple[str, ...] = ("pearson", "spearman", "kendall", "distance", "mic")
WINDOWS: tuple[float, ...] = (1.0, 5.0, 20.0, 60.0)
REDUNDANCY_THRESHOLD = 0.95
TAU_PREPARE = 0.09
K_STEP = 5


class FeatureUndefinedError(ValueError):
    """Every catalog feature was undefined for a metric window."""


def _check_pair(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"correlation needs equal-length vectors, got {x.shape} and {y.shape}")
    if x.shape[0] < 3:
        raise ValueError(f"correlation needs at least 3 points, got {x.shape[0]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("correlation inputs must be finite")


def _is_constant(v: np.ndarray) -> bool:
    return bool(np.all(v == v[0]))


def average_ranks(v: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties assigned the group average."""
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.shape[0], dtype=np.float64)
    i = 0
    n = v.shape[0]
    while i < n:
        j = i
        while j + 1 < n and v[order[j + 1]] == v[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for t in range(i, j + 1):
            ranks[order[t]] = avg
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xd = x - x.mean()
    yd = y - y.mean()
    den = math.sqrt(float(np.dot(xd, xd)) * float(np.dot(yd, yd)))
    if den == 0.0:
        return 0.0
    return float(np.dot(xd, yd)) / den


def _equifreq_labels(v: np.ndarray, nbins: int) -> np.ndarray:
    """Equal-frequency bin labels from stable rank order."""
    n = v.shape[0]
    order = np.argsort(v, kind="stable")
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(n, dtype=np.int64)
    return np.minimum((ranks * nbins) // n, nbins - 1)


def _mic_directional(u: np.ndarray, v: np.ndarray, a: int, b: int) -> float:
    n = u.shape[0]
    f = min(15, 2 * a)
    ul = _equifreq_labels(u, f)
    vl = _equifreq_labels(v, b)
    counts = np.zeros((f, b), dtype=np.float64)
    np.add.at(counts, (ul, vl), 1.0)
    mi = float(K.greedy_merge_mi(counts, a))
    return mi / math.log(min(a, b))


def mic(x: np.ndarray, y: np.ndarray) -> float:
    n = x.shape[0]
    bound = max(4.0, n**0.6)
    best = 0.0
    for a in range(2, 16):
        if a * 2 > bound:
            break
        for b in range(2, 16):
            if a * b > bound:
                break
            best = max(best, _mic_directional(x, y, a, b), _mic_directional(y, x, b, a))
    return min(best, 1.0)


def correlate(x, y, method: str) -> float:
    """Correlation score between two vectors under the named method.

    A constant vector on either side yields 0.0 regardless of method.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_pair(x, y)
    if _is_constant(x) or _is_constant(y):
        return 0.0
    if method == "pearson":
        return _pearson(x, y)
    if method == "spearman":
        return _pearson(average_ranks(x), average_ranks(y))
    if method == "kendall":
        return float(K.kendall_tau_b(x, y))
    if method == "distance":
        return float(K.distance_correlation(x, y))
    if method == "mic":
        return mic(x, y)
    raise ValueError(f"unknown correlation method {method!r}")


# ---------------------------------------------------------------------------
# Per-metric scoring


@dataclass(frozen=True)
class CorrelationScore:
    metric_id: str
    window_s: float
    method: str
    feature: str
    score: float


@dataclass(frozen=True)
class RankedMetric:
    metric_id: str
    feature: str
    method: str
    score: float


def best_feature(fm: np.ndarray, rtts: np.ndarray, method: str) -> tuple[str, float]:
    """(feature, score) with the largest |score| over defined catalog columns.

    Columns containing non-finite entries are skipped; ties keep catalog
    order. Raises FeatureUndefinedError when no column is fully defined.
    """
    if fm.shape[0] != rtts.shape[0]:
        raise ValueError("feature matrix and RTT vector disagree on sample count")
    best_name = None
    best_score = 0.0
    best_abs = -1.0
    for i, name in enumerate(FEATURES):
        col = fm[:, i]
        if not np.all(np.isfinite(col)):
            continue
        score = correlate(col, rtts, method)
        if abs(score) > best_abs:
            best_abs = abs(score)
            best_score = score
            best_name = name
    if best_name is None:
        raise FeatureUndefinedError("no catalog feature is defined for this window")
    return best_name, best_score


def eliminate_redundant(
    ordered: list[tuple[str, np.ndarray]],
    threshold: float = REDUNDANCY_THRESHOLD,
) -> list[str]:
    """Greedy pass in rank order dropping near-duplicates of kept metrics.

    A metric is dropped when |pearson| against any already-kept metric's
    feature vector reaches the threshold.
    """
    kept: list[str] = []
    kept_vecs: list[np.ndarray] = []
    for mid, vec in ordered:
        redundant = False
        for kv in kept_vecs:
            if _is_constant(vec) or _is_constant(kv):
                continue
            if abs(_pearson(vec, kv)) >= threshold:
                redundant = True
                break
        if not redundant:
            kept.append(mid)
            kept_vecs.append(vec)
    return kept


# ---------------------------------------------------------------------------
# Full analysis over windows and methods


@dataclass
class CorrelationReport:
    windows: tuple[float, ...]
    methods: tuple[str, ...]
    scores: list[CorrelationScore]
    ranked: dict[float, list[RankedMetric]]
    eliminated: dict[float, list[str]]
    n_records: int

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w") as fh:
            fh.write("metric_id,window_s,method,feature,score\n")
            for s in self.scores:
                fh.write(f"{s.metric_id},{s.window_s:g},{s.method},{s.feature},{s.score!r}\n")


def analyze_correlations(
    records: list[DatasetRecord],
    windows: tuple[float, ...] = WINDOWS,
    methods: tuple[str, ...] = METHODS,
    threshold: float = REDUNDANCY_THRESHOLD,
) -> CorrelationReport:
    """Score every (metric, window, method), rank, and de-duplicate.

    Records must be complete (full 60 s coverage); at least 8 are required.
    """
    usable = [r for r in records if r.complete and r.windows]
    if len(usable) < 8:
        raise ValueError(f"correlation analysis needs >= 8 complete records, got {len(usable)}")
    rtts = np.array([r.rtt for r in usable], dtype=np.float64)
    metric_ids = sorted(usable[0].windows)

    scores: list[CorrelationScore] = []
    ranked: dict[float, list[RankedMetric]] = {}
    eliminated: dict[float, list[str]] = {}
    for w in windows:
        reps: list[RankedMetric] = []
        rep_vec: dict[str, np.ndarray] = {}
        for mid in metric_ids:
            fm = feature_matrix(
                [r.windows[mid].slice_before(r.task.t_start, w).values for r in usable]
            )
            rep: RankedMetric | None = None
            for method in methods:
                try:
                    feat, score = best_feature(fm, rtts, method)
                except FeatureUndefinedError:
                    continue
                scores.append(CorrelationScore(mid, w, method, feat, score))
                if rep is None or abs(score) > abs(rep.score):
                    rep = RankedMetric(mid, feat, method, score)
            if rep is not None:
                reps.append(rep)
                rep_vec[mid] = fm[:, FEATURE_INDEX[rep.feature]]
        reps.sort(key=lambda r: (-abs(r.score), r.metric_id))
        kept_ids = eliminate_redundant([(r.metric_id, rep_vec[r.metric_id]) for r in reps], threshold)
        kept_set = set(kept_ids)
        ranked[w] = [r for r in reps if r.metric_id in kept_set]
        eliminated[w] = [r.metric_id for r in reps if r.metric_id not in kept_set]
    return CorrelationReport(
        windows=tuple(windows),
        methods=tuple(methods),
        scores=scores,
        ranked=ranked,
        eliminated=eliminated,
        n_records=len(usable),
    )


# ---------------------------------------------------------------------------
# Budget-constrained configuration selection


@dataclass
class SelectionResult:
    window_s: float
    method: str
    k: int
    metrics: list[RankedMetric]
    total_score: float
    t_state: float
    t_feature: float
    budget: float
    mu_rtt: float

    @property
    def schema(self) -> list[tuple[str, str]]:
        return [(m.metric_id, m.feature) for m in self.metrics]

    def to_json(self) -> dict:
        return {
            "window_s": self.window_s,
            "method": self.method,
            "k": self.k,
            "metrics": [
                {
                    "metric_id": m.metric_id,
                    "feature": m.feature,
                    "method": m.method,
                    "score": m.score,
                }
                for m in self.metrics
            ],
            "total_score": self.total_score,
            "t_state": self.t_state,
            "t_feature": self.t_feature,
            "budget": self.budget,
            "mu_rtt": self.mu_rtt,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SelectionResult":
        return cls(
            window_s=float(data["window_s"]),
            method=str(data["method"]),
            k=int(data["k"]),
            metrics=[
                RankedMetric(d["metric_id"], d["feature"], d["method"], float(d["score"]))
                for d in data["metrics"]
            ],
            total_score=float(data["total_score"]),
            t_state=float(data["t_state"]),
            t_feature=float(data["t_feature"]),
            budget=float(data["budget"]),
            mu_rtt=float(data["mu_rtt"]),
        )


def _modal_method(metrics: list[RankedMetric]) -> str:
    votes: dict[str, int] = {}
    for m in metrics:
        votes[m.method] = votes.get(m.method, 0) + 1
    best = max(votes.values())
    for name in METHODS:
        if votes.get(name, 0) == best:
            return name
    return metrics[0].method


def select_configuration(
    report: CorrelationReport,
    mu_rtt: float,
    delay_model: DelayModel | None = None,
    tau_prepare: float = TAU_PREPARE,
    k_step: int = K_STEP,
) -> SelectionResult | None:
    """Pick (window, k) maximizing total |score| within the prepare budget.

    k is stepped {k_step, 2*k_step, ...} up to the metrics available after
    redundancy elimination (a single candidate of all available when fewer
    than k_step survive). Returns None when no pair fits the budget. Ties on
    total score fall to the smaller window, then the smaller k.
    """
    if mu_rtt <= 0:
        raise ValueError(f"mu_rtt must be positive, got {mu_rtt}")
    model = delay_model if delay_model is not None else DelayModel()
    budget = tau_prepare * mu_rtt
    best: SelectionResult | None = None
    for w in report.windows:
        ranked = report.ranked.get(w, [])
        n = len(ranked)
        if n == 0:
            continue
        ks = list(range(k_step, n + 1, k_step))
        if not ks:
            ks = [n]
        for k in ks:
            t_state, t_feature = state_delay(k, w, model)
            if t_state + t_feature > budget:
                continue
            top = ranked[:k]
            total = float(sum(abs(m.score) for m in top))
            if (
                best is None
                or total > best.total_score
                or (total == best.total_score and (w, k) < (best.window_s, best.k))
            ):
                best = SelectionResult(
                    window_s=w,
                    method=_modal_method(top),
                    k=k,
                    metrics=top,
                    total_score=total,
                    t_state=t_state,
                    t_feature=t_feature,
                    budget=budget,
                    mu_rtt=mu_rtt,
                )
    return best
