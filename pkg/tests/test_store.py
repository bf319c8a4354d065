"""Monitoring store: alignment, windows, ingestion, synthetic generation."""

import math
import time

import numpy as np
import pytest

from morpheus.store import (
    DEFAULT_SCRAPE_MS,
    DelayModel,
    DriverSpec,
    IngestError,
    MetricsStore,
    QueryWindow,
    RttLaw,
    ScenarioSpec,
    TaskRecord,
    align_timestamp,
    generate_synthetic,
    ingest_csv,
    scrape_interval_ms,
    state_delay,
)


def test_alignment_rule():
    assert align_timestamp(1001, 200) == 1000
    assert align_timestamp(1000, 200) == 1000
    assert align_timestamp(999, 200) == 800
    assert align_timestamp(0, 200) == 0


def test_scrape_interval_sources(monkeypatch):
    monkeypatch.delenv("MORPHEUS_SCRAPE_MS", raising=False)
    assert scrape_interval_ms() == DEFAULT_SCRAPE_MS
    monkeypatch.setenv("MORPHEUS_SCRAPE_MS", "500")
    assert scrape_interval_ms() == 500
    assert scrape_interval_ms(override=100) == 100  # explicit beats env
    monkeypatch.setenv("MORPHEUS_SCRAPE_MS", "0")
    with pytest.raises(ValueError):
        scrape_interval_ms()


def test_store_honors_scrape_env(monkeypatch, tmp_path):
    monkeypatch.setenv("MORPHEUS_SCRAPE_MS", "1000")
    store = MetricsStore()
    assert store.scrape_ms == 1000
    p = tmp_path / "m.csv"
    p.write_text("metric_id,timestamp_ms,value\na,1499,1.0\na,2500,2.0\n")
    store.ingest_csv(p)
    assert store.series("a").timestamps.tolist() == [1000, 2000]


def test_query_window_bounds():
    ts = np.arange(0, 10_000, 200, dtype=np.int64)
    store = MetricsStore()
    store.add_series("m", ts, np.arange(len(ts), dtype=np.float64))
    got = store.query_range("m", QueryWindow(end_time=5000, duration=1.0))
    # (4000, 5000]: samples 4200..5000
    assert got.timestamps.tolist() == [4200, 4400, 4600, 4800, 5000]
    pre = store.pre_submission_window("m", 5000, 1.0)
    # [4000, 5000): samples 4000..4800
    assert pre.timestamps.tolist() == [4000, 4200, 4400, 4600, 4800]


def test_window_duration_must_be_positive():
    with pytest.raises(ValueError):
        QueryWindow(end_time=1000, duration=0.0)


def test_task_record_validation_and_rtt():
    t = TaskRecord("t0", "a", "n", 1000, 3500)
    assert t.rtt == pytest.approx(2.5)
    with pytest.raises(ValueError):
        TaskRecord("t1", "a", "n", 1000, 1000)


def test_ingest_detects_both_headers(tmp_path):
    m = tmp_path / "metrics.csv"
    m.write_text("metric_id,timestamp_ms,value\nx,0,1.5\nx,200,2.5\n")
    t = tmp_path / "tasks.csv"
    t.write_text("task_id,app_id,node_id,t_start_ms,t_end_ms\nt0,a,n,100,900\n")
    store = ingest_csv(m)
    store.ingest_csv(t)
    assert store.metric_ids == ["x"]
    assert len(store.tasks) == 1
    assert store.tasks[0].rtt == pytest.approx(0.8)


def test_ingest_duplicate_aligned_timestamps_keep_last(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("metric_id,timestamp_ms,value\nx,210,1.0\nx,399,9.0\n")
    store = ingest_csv(p)  # both align to 200
    s = store.series("x")
    assert s.timestamps.tolist() == [200]
    assert s.values.tolist() == [9.0]


def test_ingest_error_carries_file_and_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("metric_id,timestamp_ms,value\nx,notanumber,1.0\n")
    with pytest.raises(IngestError, match=r"bad\.csv:2"):
        ingest_csv(p)
    q = tmp_path / "head.csv"
    q.write_text("who,knows\n1,2\n")
    with pytest.raises(IngestError, match="unrecognized header"):
        ingest_csv(q)


def test_ingest_empty_file_is_noop(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    store = ingest_csv(p)
    assert store.metric_ids == []
    assert store.tasks == []


def test_range_query_scale():
    n = 150_000
    ts = np.arange(n, dtype=np.int64) * 200
    store = MetricsStore()
    store.add_series("big", ts, np.sin(ts / 1e5).astype(np.float64))
    t0 = time.perf_counter()
    got = store.query_range("big", QueryWindow(end_time=int(ts[-1]), duration=60.0))
    elapsed = time.perf_counter() - t0
    assert len(got) == 300  # 60 s at 200 ms
    assert elapsed < 0.05  # binary search, not a scan


def test_list_tasks_since_strictly_after():
    store = MetricsStore()
    store.add_task(TaskRecord("t0", "a", "n", 0, 1000))
    store.add_task(TaskRecord("t1", "a", "n", 1500, 2000))
    store.add_task(TaskRecord("t2", "other", "n", 1500, 3000))
    assert [t.task_id for t in store.list_tasks_since("a", "n", 1000)] == ["t1"]
    assert [t.task_id for t in store.list_tasks_since("a", "n", 999)] == ["t0", "t1"]


def test_covers_requires_full_span():
    store = MetricsStore()
    ts = np.arange(1000, 61_000, 200, dtype=np.int64)
    store.add_series("m", ts, np.ones(len(ts)))
    # window [1000, 61000) has first sample at 1000 and last at 60800
    assert store.covers("m", 61_000, 60.0)
    assert not store.covers("m", 61_000, 61.0)  # needs data from 0
    assert not store.covers("m", 61_400, 60.0)  # stale by one scrape
    assert not store.covers("missing", 61_000, 60.0)


def test_latest_common_timestamp():
    store = MetricsStore()
    store.add_series("a", np.array([0, 200, 400], dtype=np.int64), np.zeros(3))
    store.add_series("b", np.array([0, 200], dtype=np.int64), np.zeros(2))
    assert store.latest_common_timestamp(["a", "b"]) == 200
    assert store.latest_common_timestamp(["a", "missing"]) is None


# ---------------------------------------------------------------------------
# Delay model


def test_delay_model_calibration_shares():
    m = DelayModel.calibrated()
    t_state, t_feature = state_delay(100, 60.0, m)
    # k=100 over w=60 s: state retrieval alone is 35% of a 60 s RTT
    assert t_state == pytest.approx(0.35 * 60.0, rel=1e-9)
    assert t_state > t_feature
    t_state5, t_feature5 = state_delay(100, 5.0, m)
    assert t_state5 / 60.0 <= 0.20
    with pytest.raises(ValueError):
        state_delay(0, 60.0, m)
    with pytest.raises(ValueError):
        state_delay(5, 0.0, m)


# ---------------------------------------------------------------------------
# Synthetic generation


def _small_spec(**kw):
    base = dict(
        duration_s=600.0,
        metric_count=6,
        seed=11,
        drivers=(DriverSpec(tau_s=40.0, amplitude=0.5), DriverSpec(tau_s=25.0, amplitude=0.35)),
        law=RttLaw(base=10.0, a=0.55, b=0.3, noise=0.05),
    )
    base.update(kw)
    return ScenarioSpec(**base)


def test_synthetic_shape_and_rtt_follows_law():
    spec = _small_spec(law=RttLaw(base=10.0, a=0.55, b=0.3, noise=0.0))
    store = generate_synthetic(spec)
    assert store.metric_ids == [f"m{j:03d}" for j in range(6)]
    n_steps = int(600.0 * 1000) // 200
    assert all(len(store.series(m)) == n_steps for m in store.metric_ids)
    gt = store.ground_truth
    for task in store.tasks:
        # t_end gets rounded to whole milliseconds
        assert task.rtt == pytest.approx(gt.true_rtt(task.t_start), abs=6e-4)


def test_synthetic_determinism_byte_identical(tmp_path):
    a = generate_synthetic(_small_spec())
    b = generate_synthetic(_small_spec())
    fa, fb = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_metrics_csv(fa)
    b.write_metrics_csv(fb)
    assert fa.read_bytes() == fb.read_bytes()
    ta, tb = tmp_path / "ta.csv", tmp_path / "tb.csv"
    a.write_tasks_csv(ta)
    b.write_tasks_csv(tb)
    assert ta.read_bytes() == tb.read_bytes()
    c = generate_synthetic(_small_spec(seed=12))
    fc = tmp_path / "c.csv"
    c.write_metrics_csv(fc)
    assert fa.read_bytes() != fc.read_bytes()


def test_synthetic_mixture_recoverable_at_zero_noise():
    spec = _small_spec(metric_noise=0.0)
    store = generate_synthetic(spec)
    gt = store.ground_truth
    D = gt.drivers.T  # (steps, drivers)
    for j, mid in enumerate(store.metric_ids):
        v = store.series(mid).values
        coef, *_ = np.linalg.lstsq(D, v, rcond=None)
        pred = D @ coef
        ss_res = float(((v - pred) ** 2).sum())
        ss_tot = float(((v - v.mean()) ** 2).sum())
        assert 1.0 - ss_res / ss_tot >= 0.99
        assert coef == pytest.approx(gt.mixing[j], rel=1e-6)


def test_synthetic_tasks_respect_wait_bounds():
    spec = _small_spec()
    store = generate_synthetic(spec)
    tasks = store.tasks
    assert len(tasks) > 10
    for prev, cur in zip(tasks, tasks[1:]):
        gap_s = (cur.t_start - prev.t_end) / 1000.0
        assert -0.001 <= gap_s <= spec.t_max_wait_s + 0.001


def test_rtt_law_drift_scales_coefficients():
    law = RttLaw(base=10.0, a=0.5, b=0.2, drift_at_s=100.0, drift_factor=2.0)
    before = law.noiseless(0.5, 0.1, 99.0)
    after = law.noiseless(0.5, 0.1, 100.0)
    assert before == pytest.approx(10.0 * (1 + 0.5 * 0.5 + 0.2 * 0.1))
    assert after == pytest.approx(10.0 * (1 + 1.0 * 0.5 + 0.4 * 0.1))


def test_scenario_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(duration_s=0.0)
    with pytest.raises(ValueError):
        ScenarioSpec(metric_count=0)
    with pytest.raises(ValueError):
        ScenarioSpec(law=RttLaw(driver=5))
    with pytest.raises(ValueError):
        ScenarioSpec(metric_count=3, mixing=((1.0, 0.5),))


def test_quadratic_law():
    law = RttLaw(law_id="quadratic", base=2.0, a=1.0, b=0.0, c=3.0)
    assert law.noiseless(2.0, 0.0, 0.0) == pytest.approx(2.0 * (1 + 2.0 + 12.0))
    with pytest.raises(ValueError):
        RttLaw(law_id="cubic").noiseless(1.0, 0.0, 0.0)
