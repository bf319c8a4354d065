"""Correlation methods vs naive references; ranking, redundancy, selection."""

import numpy as np
import pytest

from morpheus.correlation import (
    METHODS,
    CorrelationReport,
    FeatureUndefinedError,
    RankedMetric,
    SelectionResult,
    analyze_correlations,
    average_ranks,
    best_feature,
    correlate,
    eliminate_redundant,
    mic,
    select_configuration,
)
from morpheus.dataset import DatasetRecord
from morpheus.features import FEATURE_INDEX, FEATURES
from morpheus.store import DelayModel, MetricSeries, TaskRecord, state_delay

from .oracles import (
    DCOR_GOLDEN_X2,
    dcor_ref,
    kendall_ref,
    mic_ref,
    pearson_ref,
    ranks_ref,
    spearman_ref,
)


def _random_pair(rng):
    n = int(rng.integers(3, 51))
    kind = rng.integers(4)
    x = rng.normal(size=n)
    if kind == 0:
        y = rng.normal(size=n)
    elif kind == 1:
        y = np.exp(x) + 0.3 * rng.normal(size=n)
    elif kind == 2:
        x = rng.lognormal(0.5, 0.7, size=n)
        y = 2.0 * x + rng.normal(size=n)
    else:
        x = np.round(rng.normal(size=n), 1)  # heavy ties
        y = np.round(x + 0.5 * rng.normal(size=n), 1)
    return x, y


def test_methods_match_references():
    rng = np.random.default_rng(2024)
    refs = {
        "pearson": (pearson_ref, 1e-9),
        "spearman": (spearman_ref, 1e-9),
        "kendall": (kendall_ref, 1e-9),
        "distance": (dcor_ref, 1e-6),
        "mic": (mic_ref, 1e-6),
    }
    for _ in range(30):
        x, y = _random_pair(rng)
        if np.all(x == x[0]) or np.all(y == y[0]):
            continue
        for method, (ref, tol) in refs.items():
            assert abs(correlate(x, y, method) - ref(list(x), list(y))) <= tol, method


def test_rank_and_monotone_invariance(rng):
    x = rng.normal(size=40)
    y = rng.normal(size=40) + 0.5 * x
    gx = np.exp(2.0 * x)  # strictly increasing map
    for method in ("spearman", "kendall"):
        assert correlate(gx, y, method) == pytest.approx(correlate(x, y, method), abs=1e-12)
    assert average_ranks(x).tolist() == ranks_ref(list(x))
    tied = np.array([3.0, 1.0, 3.0, 2.0, 1.0])
    assert average_ranks(tied).tolist() == ranks_ref(list(tied)) == [4.5, 1.5, 4.5, 3.0, 1.5]


def test_affine_invariance(rng):
    x = rng.normal(size=35)
    y = 1.5 * x + rng.normal(size=35)
    for method in ("pearson", "distance"):
        base = correlate(x, y, method)
        assert correlate(3.0 * x + 11.0, y, method) == pytest.approx(base, abs=1e-9)
    assert correlate(-2.0 * x, y, "pearson") == pytest.approx(-correlate(x, y, "pearson"), abs=1e-12)
    assert correlate(-2.0 * x, y, "distance") == pytest.approx(correlate(x, y, "distance"), abs=1e-9)


def test_parabola_golden_values():
    x = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    y = x**2
    assert correlate(x, y, "pearson") == 0.0
    assert correlate(x, y, "distance") == pytest.approx(DCOR_GOLDEN_X2, abs=1e-12)


def test_constant_input_scores_zero(rng):
    c = np.full(20, 7.0)
    v = rng.normal(size=20)
    for method in METHODS:
        assert correlate(c, v, method) == 0.0
        assert correlate(v, c, method) == 0.0


def test_perfect_line_saturates_mic():
    x = np.linspace(0.0, 1.0, 50)
    assert mic(x, 3.0 * x + 1.0) == pytest.approx(1.0, abs=1e-12)


def test_input_validation(rng):
    with pytest.raises(ValueError):
        correlate([1.0, 2.0], [1.0, 2.0], "pearson")  # too short
    with pytest.raises(ValueError):
        correlate([1.0, 2.0, 3.0], [1.0, 2.0], "pearson")
    with pytest.raises(ValueError):
        correlate([1.0, np.nan, 3.0], [1.0, 2.0, 3.0], "pearson")
    with pytest.raises(ValueError):
        correlate(rng.normal(size=10), rng.normal(size=10), "cosine")


# ---------------------------------------------------------------------------
# Feature picking and redundancy


def _fm(columns: dict[str, np.ndarray], n: int) -> np.ndarray:
    fm = np.full((n, len(FEATURES)), np.nan)
    for name, col in columns.items():
        fm[:, FEATURE_INDEX[name]] = col
    return fm


def test_best_feature_picks_largest_abs(rng):
    rtts = rng.normal(10.0, 2.0, size=30)
    fm = _fm(
        {
            "mean": rtts + 0.01 * rng.normal(size=30),
            "std": rng.normal(size=30),
            "energy": -rtts,  # |score| = 1, beats the noisy mean
        },
        30,
    )
    feat, score = best_feature(fm, rtts, "pearson")
    assert feat == "energy"
    assert score == pytest.approx(-1.0, abs=1e-12)


def test_best_feature_skips_partial_columns(rng):
    rtts = rng.normal(10.0, 2.0, size=20)
    perfect = rtts.copy()
    perfect_with_nan = perfect.copy()
    perfect_with_nan[3] = np.nan
    fm = _fm({"mean": perfect_with_nan, "max": rtts + 0.1 * rng.normal(size=20)}, 20)
    feat, _ = best_feature(fm, rtts, "pearson")
    assert feat == "max"


def test_best_feature_tie_keeps_catalog_order(rng):
    rtts = rng.normal(size=25)
    fm = _fm({"mean": rtts, "median": -rtts}, 25)
    feat, score = best_feature(fm, rtts, "pearson")
    assert feat == "mean" and score == pytest.approx(1.0)


def test_best_feature_error_paths(rng):
    with pytest.raises(FeatureUndefinedError):
        best_feature(np.full((10, len(FEATURES)), np.nan), np.ones(10), "pearson")
    with pytest.raises(ValueError):
        best_feature(np.zeros((10, len(FEATURES))), np.ones(9), "pearson")


def test_redundancy_elimination(rng):
    a = rng.normal(size=40)
    near_dup = 0.999 * a + 1e-4 * rng.normal(size=40)
    other = rng.normal(size=40)
    kept = eliminate_redundant([("a", a), ("dup", near_dup), ("other", other)])
    assert kept == ["a", "other"]


def test_redundancy_ignores_constants(rng):
    a = rng.normal(size=30)
    c = np.full(30, 5.0)
    assert eliminate_redundant([("a", a), ("const", c), ("b", a.copy())]) == ["a", "const"]


# ---------------------------------------------------------------------------
# Full analysis


def _make_records(n_records: int = 12, t0: int = 120_000):
    rng = np.random.default_rng(77)
    records = []
    for i in range(n_records):
        t_start = t0 + 90_000 * i
        rtt_s = 8.0 + 0.8 * i + float(rng.normal(0, 0.05))
        task = TaskRecord(f"t{i:03d}", "app", "node", t_start, t_start + round(rtt_s * 1000))
        ts = t_start - 60_000 + 200 * np.arange(300, dtype=np.int64)
        level = rtt_s + 0.01 * rng.normal(size=300)
        windows = {
            "m000": MetricSeries("m000", ts, level),
            "m001": MetricSeries("m001", ts, 2.0 * level + 3.0),
            "m002": MetricSeries("m002", ts, rng.normal(size=300)),
        }
        records.append(DatasetRecord(task=task, windows=windows, complete=True))
    return records


def test_analysis_ranks_and_eliminates():
    records = _make_records()
    report = analyze_correlations(records, windows=(5.0, 60.0), methods=("pearson", "spearman"))
    assert report.n_records == 12
    for w in (5.0, 60.0):
        ranked = report.ranked[w]
        assert ranked[0].metric_id == "m000"  # tie with the affine copy, id order
        assert "m001" in report.eliminated[w]  # affine copy is redundant
        assert {r.metric_id for r in ranked} | set(report.eliminated[w]) == {"m000", "m001", "m002"}
        assert abs(ranked[0].score) > 0.99
    # every (metric, window, method) combination was scored
    assert len(report.scores) == 3 * 2 * 2


def test_analysis_needs_eight_complete_records():
    records = _make_records(7)
    with pytest.raises(ValueError, match=">= 8"):
        analyze_correlations(records, windows=(60.0,), methods=("pearson",))
    some = _make_records(12)
    for r in some[:5]:
        r.complete = False
    with pytest.raises(ValueError):
        analyze_correlations(some, windows=(60.0,), methods=("pearson",))


def test_report_csv_round(tmp_path):
    records = _make_records(8)
    report = analyze_correlations(records, windows=(60.0,), methods=("pearson",))
    out = tmp_path / "report.csv"
    report.to_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "metric_id,window_s,method,feature,score"
    assert len(lines) == 1 + len(report.scores)
    mid, w, method, feat, score = lines[1].split(",")
    assert mid == "m000" and w == "60" and method == "pearson"
    assert feat in FEATURES
    assert float(score) == report.scores[0].score  # repr round-trips


# ---------------------------------------------------------------------------
# Configuration selection


def _report(windows, per_window):
    ranked = {w: list(per_window[w]) for w in windows}
    return CorrelationReport(
        windows=tuple(windows),
        methods=METHODS,
        scores=[],
        ranked=ranked,
        eliminated={w: [] for w in windows},
        n_records=50,
    )


def _metrics(n, score, method="pearson"):
    return [RankedMetric(f"m{i:03d}", "mean", method, score) for i in range(n)]


def test_selection_prefers_shorter_window_when_budget_blocks_long():
    # budget 2.0 s: at w=60 only k=5 fits, while w=5 admits k=25 whose
    # summed score wins despite weaker per-metric correlation
    report = _report((5.0, 60.0), {5.0: _metrics(25, 0.5), 60.0: _metrics(25, 1.0)})
    mu = 2.0 / 0.09
    model = DelayModel()
    t_state, t_feature = state_delay(10, 60.0, model)
    assert t_state + t_feature > 2.0  # the long window really is blocked
    result = select_configuration(report, mu_rtt=mu, delay_model=model)
    assert result is not None
    assert result.window_s == 5.0 and result.k == 25
    assert result.total_score == pytest.approx(12.5)
    assert result.t_state + result.t_feature <= result.budget
    assert result.budget == pytest.approx(0.09 * mu)
    assert len(result.metrics) == 25


def test_selection_reports_budget_fields():
    report = _report((60.0,), {60.0: _metrics(25, 1.0)})
    result = select_configuration(report, mu_rtt=600.0)
    assert result.k == 25  # generous budget takes everything
    ts, tf = state_delay(25, 60.0, DelayModel())
    assert result.t_state == pytest.approx(ts)
    assert result.t_feature == pytest.approx(tf)


def test_selection_unattainable_returns_none():
    report = _report((1.0, 5.0, 20.0, 60.0), {w: _metrics(25, 1.0) for w in (1.0, 5.0, 20.0, 60.0)})
    assert select_configuration(report, mu_rtt=1.0) is None


def test_selection_small_pool_uses_single_candidate():
    report = _report((5.0,), {5.0: _metrics(3, 0.9)})
    result = select_configuration(report, mu_rtt=60.0)
    assert result.k == 3
    assert [m.metric_id for m in result.metrics] == ["m000", "m001", "m002"]


def test_selection_tie_takes_smaller_window_then_k():
    report = _report((1.0, 5.0), {1.0: _metrics(5, 0.4), 5.0: _metrics(5, 0.4)})
    result = select_configuration(report, mu_rtt=60.0)
    assert result.window_s == 1.0 and result.k == 5


def test_selection_rejects_bad_mu():
    report = _report((5.0,), {5.0: _metrics(5, 0.4)})
    with pytest.raises(ValueError):
        select_configuration(report, mu_rtt=0.0)


def test_selection_modal_method():
    metrics = [
        RankedMetric("m000", "mean", "mic", 0.9),
        RankedMetric("m001", "mean", "spearman", 0.8),
        RankedMetric("m002", "mean", "spearman", 0.7),
        RankedMetric("m003", "mean", "pearson", 0.6),
        RankedMetric("m004", "mean", "pearson", 0.5),
    ]
    report = _report((5.0,), {5.0: metrics})
    result = select_configuration(report, mu_rtt=60.0)
    # two-way vote tie resolves in canonical method order
    assert result.method == "pearson"


def test_selection_result_json_round_trip():
    report = _report((5.0,), {5.0: _metrics(5, 0.4)})
    result = select_configuration(report, mu_rtt=60.0)
    back = SelectionResult.from_json(result.to_json())
    assert back == result
