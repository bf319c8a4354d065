"""Per-(app, node) predictor lifecycle: collection, training, prediction.

A predictor runs through phases: bootstrapping -> collecting -> trained,
with paused (no live instances) and infeasible (budget excludes every
configuration or model) as terminal-until-conditions-change states.

Collection cycles execute a fixed step order: new-data check, RTT
collection, balance admission, metrics attachment, sufficiency check,
correlations-valid check, correlation analysis, state-delay analysis,
configuration selection, feature extraction, training notification. Steps
after a failed guard are skipped and the skip is logged, so every cycle's
report shows the same step list.

Training events run full training (no model yet, or invalidated) or an
incremental/refit retrain. A relative RMSE regression beyond theta
invalidates correlations; the next cycle re-correlates and requests a full
training. Predictions account their cost as
t_prediction = t_state + t_feature + t_inference exactly, each stage being
measured wall time plus the delay model's stand-in for the external
monitoring backend.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .correlation import (
    METHODS,
    WINDOWS,
    CorrelationReport,
    SelectionResult,
    analyze_correlations,
    select_configuration,
)
from .dataset import (
    BalancedDataset,
    SufficiencyParams,
    admit_new_samples,
    attach_metrics,
    is_sufficient,
    load_dataset,
    save_dataset,
)
from .features import FEATURE_INDEX, extract_features
from .models import (
    NoFeasibleModelError,
    TrainedModel,
    TrainReport,
    candidate_set,
    full_train,
    load_model,
    predict,
    preprocess,
    retrain,
    rmse_change,
    save_model,
)
from .store import MetricsStore, state_delay

PHASES = ("bootstrapping", "collecting", "trained", "paused", "infeasible")

CYCLE_STEPS = (
    "new_data_check",
    "rtt_collection",
    "balance_admission",
    "metrics_attachment",
    "sufficiency_check",
    "correlations_check",
    "metric_correlations",
    "state_delay_analysis",
    "configuration_selection",
    "feature_extraction",
    "training_notification",
)


class VirtualClock:
    """Compressed time source; advance() moves milliseconds instantly."""

    def __init__(self, start_ms: int = 0):
        self.now_ms = int(start_ms)

    def advance_s(self, seconds: float) -> None:
        self.now_ms += int(round(seconds * 1000))


class NotificationBus:
    """In-process event channel with an append-only JSON-lines outbox.

    Events carry a monotonically increasing sequence number so handlers can
    deduplicate; delivery via the outbox is therefore at-least-once.
    """

    def __init__(self, outbox_path: str | Path | None = None):
        self.events: list[dict] = []
        self._cursor = 0
        self._seq = 0
        self.outbox_path = Path(outbox_path) if outbox_path else None

    def post(self, kind: str, **payload) -> dict:
        self._seq += 1
        event = {"seq": self._seq, "kind": kind, **payload}
        self.events.append(event)
        if self.outbox_path is not None:
            with self.outbox_path.open("a") as fh:
                fh.write(json.dumps(event) + "\n")
        return event

    def poll(self, kind: str | None = None) -> list[dict]:
        """Consume undelivered events, optionally filtered by kind."""
        pending = self.events[self._cursor :]
        self._cursor = len(self.events)
        if kind is None:
            return pending
        return [e for e in pending if e["kind"] == kind]


@dataclass(frozen=True)
class KnowledgeBaseEntry:
    app_id: str
    node_id: str
    timestamp_ms: int
    predicted_rtt: float
    t_state: float
    t_feature: float
    t_inference: float
    model_trained_at_ms: int
    degraded: bool = False

    @property
    def t_prediction(self) -> float:
        return self.t_state + self.t_feature + self.t_inference

    def to_json(self) -> dict:
        return {
            "app_id": self.app_id,
            "node_id": self.node_id,
            "timestamp_ms": self.timestamp_ms,
            "predicted_rtt": self.predicted_rtt,
            "t_state": self.t_state,
            "t_feature": self.t_feature,
            "t_inference": self.t_inference,
            "t_prediction": self.t_prediction,
            "model_trained_at_ms": self.model_trained_at_ms,
            "degraded": self.degraded,
        }

    @classmethod
    def from_json(cls, d: dict) -> "KnowledgeBaseEntry":
        return cls(
            app_id=d["app_id"],
            node_id=d["node_id"],
            timestamp_ms=int(d["timestamp_ms"]),
            predicted_rtt=float(d["predicted_rtt"]),
            t_state=float(d["t_state"]),
            t_feature=float(d["t_feature"]),
            t_inference=float(d["t_inference"]),
            model_trained_at_ms=int(d["model_trained_at_ms"]),
            degraded=bool(d.get("degraded", False)),
        )


class KnowledgeBase:
    """Append-only JSON-lines store of prediction entries."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.entries: list[KnowledgeBaseEntry] = []
        if self.path is not None and self.path.exists():
            with self.path.open() as fh:
                for line in fh:
                    if line.strip():
                        self.entries.append(KnowledgeBaseEntry.from_json(json.loads(line)))

    def append(self, entry: KnowledgeBaseEntry) -> None:
        self.entries.append(entry)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(entry.to_json()) + "\n")

    def query(self, app_id: str, node_id: str, latest: bool = True):
        matches = [e for e in self.entries if e.app_id == app_id and e.node_id == node_id]
        if latest:
            return matches[-1] if matches else None
        return matches


@dataclass
class RuntimeConfig:
    collection_interval_s: float = 300.0
    prediction_interval_s: float = 5.0
    windows: tuple[float, ...] = WINDOWS
    methods: tuple[str, ...] = METHODS
    sufficiency: SufficiencyParams = field(default_factory=SufficiencyParams)
    tau_prepare: float = 0.09
    tau_inference: float = 0.01
    theta: float = 0.10
    redundancy_threshold: float = 0.95
    k_step: int = 5
    min_train_records: int = 10
    seed: int = 1


@dataclass
class StepResult:
    step: str
    outcome: str
    details: dict = field(default_factory=dict)


@dataclass
class CycleReport:
    cycle: int
    at_ms: int
    steps: list[StepResult]

    def outcome(self, step: str) -> str:
        for s in self.steps:
            if s.step == step:
                return s.outcome
        raise KeyError(step)


class PredictorRuntime:
    """Pipeline state for one (application, node) pair."""

    def __init__(
        self,
        app_id: str,
        node_id: str,
        store: MetricsStore,
        config: RuntimeConfig | None = None,
        clock: VirtualClock | None = None,
        bus: NotificationBus | None = None,
        kb: KnowledgeBase | None = None,
    ):
        self.app_id = app_id
        self.node_id = node_id
        self.store = store
        self.config = config if config is not None else RuntimeConfig()
        self.clock = clock if clock is not None else VirtualClock()
        self.bus = bus if bus is not None else NotificationBus()
        self.kb = kb if kb is not None else KnowledgeBase()
        self.rng = np.random.default_rng(self.config.seed)

        self.phase = "bootstrapping"
        self.dataset = BalancedDataset()
        self.correlation_report: CorrelationReport | None = None
        self.selection: SelectionResult | None = None
        self.model: TrainedModel | None = None
        self.correlations_valid = False
        self.needs_full = True
        self.last_collected_ms = -1
        self.trained_ids: set[str] = set()
        # test rows frozen at full training so retrain RMSE stays comparable
        self.holdout_ids: list[str] = []
        self.cycle_count = 0
        self.log: list[dict] = []

    # -- logging -----------------------------------------------------------

    def _log(self, event: str, **fields) -> dict:
        line = {"event": event, "at_ms": self.clock.now_ms, **fields}
        self.log.append(line)
        return line

    # -- collection cycle ----------------------------------------------------

    def run_collection_cycle(self) -> CycleReport:
        """One scheduled pass over the fixed step order.

        Guard failures (no new data, insufficient dataset) mark the
        remaining steps skipped; the report always lists every step.
        """
        self.cycle_count += 1
        now = self.clock.now_ms
        steps: list[StepResult] = []

        def add(step: str, outcome: str, **details) -> StepResult:
            r = StepResult(step, outcome, details)
            steps.append(r)
            self._log("cycle_step", cycle=self.cycle_count, step=step, outcome=outcome, **details)
            return r

        def skip_rest(from_step: str) -> None:
            start = CYCLE_STEPS.index(from_step)
            for s in CYCLE_STEPS[start:]:
                add(s, "skipped")

        if self.phase == "paused":
            for s in CYCLE_STEPS:
                add(s, "skipped_paused")
            return CycleReport(self.cycle_count, now, steps)
        if self.phase == "bootstrapping":
            self.phase = "collecting"

        new_tasks = [
            t
            for t in self.store.list_tasks_since(self.app_id, self.node_id, self.last_collected_ms)
            if t.t_end <= now
        ]
        if not new_tasks:
            add("new_data_check", "no_new_data")
            skip_rest("rtt_collection")
            return CycleReport(self.cycle_count, now, steps)
        add("new_data_check", "ok", count=len(new_tasks))
        add("rtt_collection", "ok", rtts=len(new_tasks))

        before_ids = self.dataset.task_ids
        accepted, layout = admit_new_samples(self.dataset, new_tasks, self.rng)
        self.last_collected_ms = max(t.t_end for t in new_tasks)
        add(
            "balance_admission",
            "ok",
            offered=len(new_tasks),
            accepted=len(accepted),
            bins=0 if layout is None else layout.count,
            dataset_size=len(self.dataset),
        )

        attached = 0
        complete = 0
        for rec in self.dataset.records:
            if rec.task.task_id in before_ids:
                continue
            attach_metrics(rec, self.store)
            attached += 1
            if rec.complete:
                complete += 1
        add("metrics_attachment", "ok", attached=attached, complete=complete)

        sufficient = is_sufficient(self.dataset.rtts, self.config.sufficiency)
        if not sufficient:
            add("sufficiency_check", "insufficient", n=len(self.dataset))
            skip_rest("correlations_check")
            return CycleReport(self.cycle_count, now, steps)
        add("sufficiency_check", "sufficient", n=len(self.dataset))

        schema_changed = False
        if self.correlations_valid:
            add("correlations_check", "valid")
            add("metric_correlations", "skipped")
            add("state_delay_analysis", "skipped")
            add("configuration_selection", "skipped")
        else:
            add("correlations_check", "invalid")
            usable = self.dataset.complete_records()
            if len(usable) < 8:
                add("metric_correlations", "insufficient_complete_records", complete=len(usable))
                skip_rest("state_delay_analysis")
                return CycleReport(self.cycle_count, now, steps)
            self.correlation_report = analyze_correlations(
                usable,
                windows=self.config.windows,
                methods=self.config.methods,
                threshold=self.config.redundancy_threshold,
            )
            self.correlations_valid = True
            add(
                "metric_correlations",
                "recomputed",
                scores=len(self.correlation_report.scores),
                records=self.correlation_report.n_records,
            )

            mu_rtt = float(self.dataset.rtts.mean())
            add(
                "state_delay_analysis",
                "ok",
                mu_rtt=mu_rtt,
                budget=self.config.tau_prepare * mu_rtt,
            )
            old_schema = None if self.selection is None else self.selection.schema
            self.selection = select_configuration(
                self.correlation_report,
                mu_rtt=mu_rtt,
                delay_model=self.store.delay_model,
                tau_prepare=self.config.tau_prepare,
                k_step=self.config.k_step,
            )
            if self.selection is None:
                self.phase = "infeasible"
                add("configuration_selection", "infeasible")
                skip_rest("feature_extraction")
                return CycleReport(self.cycle_count, now, steps)
            schema_changed = self.selection.schema != old_schema
            self.needs_full = True
            add(
                "configuration_selection",
                "selected",
                window_s=self.selection.window_s,
                k=self.selection.k,
                method=self.selection.method,
                total_score=self.selection.total_score,
            )
            if self.phase == "infeasible":
                self.phase = "collecting" if self.model is None else "trained"

        extracted = self._extract_features(all_records=schema_changed or self.needs_full)
        add("feature_extraction", "ok", extracted=extracted)

        if self.selection is not None:
            reason = "full_training_needed" if self.needs_full else "new_data"
            self.bus.post(
                "training_needed",
                app_id=self.app_id,
                node_id=self.node_id,
                reason=reason,
            )
            add("training_notification", "posted", reason=reason)
        else:
            add("training_notification", "skipped")
        return CycleReport(self.cycle_count, now, steps)

    def _extract_features(self, all_records: bool) -> int:
        if self.selection is None:
            return 0
        w = self.selection.window_s
        count = 0
        for rec in self.dataset.records:
            if not rec.complete or rec.windows is None:
                continue
            if rec.features is not None and not all_records:
                continue
            vec = np.empty(len(self.selection.schema))
            for i, (mid, feat) in enumerate(self.selection.schema):
                values = rec.windows[mid].slice_before(rec.task.t_start, w).values
                vec[i] = extract_features(values)[FEATURE_INDEX[feat]]
            rec.features = vec
            count += 1
        return count

    # -- training -------------------------------------------------------------

    def _training_matrix(self) -> tuple[np.ndarray, np.ndarray, list[str]]:
        rows = []
        ys = []
        ids = []
        for rec in self.dataset.records:
            if rec.complete and rec.features is not None:
                rows.append(rec.features)
                ys.append(rec.rtt)
                ids.append(rec.task.task_id)
        if not rows:
            return np.empty((0, 0)), np.empty(0), []
        return np.vstack(rows), np.asarray(ys), ids

    def run_training_event(self) -> TrainReport | None:
        """Handle one training notification; None when a guard skips it."""
        if self.phase == "paused":
            self._log("training_skipped", reason="paused")
            return None
        if self.selection is None:
            self._log("training_skipped", reason="no_selection")
            return None
        if not is_sufficient(self.dataset.rtts, self.config.sufficiency):
            self._log("training_skipped", reason="insufficient_dataset")
            return None
        X, y, ids = self._training_matrix()
        if X.shape[0] < self.config.min_train_records:
            self._log("training_skipped", reason="too_few_records", n=int(X.shape[0]))
            return None

        mu_rtt = float(self.dataset.rtts.mean())
        prev = self.model
        holdout = set(self.holdout_ids)
        test_rows = [i for i, tid in enumerate(ids) if tid in holdout]
        mode = "full" if (prev is None or self.needs_full or not test_rows) else "retrain"
        try:
            if mode == "full":
                cands = candidate_set(self.selection.method, len(self.dataset))
                split = preprocess(X, y, self.selection.schema, self.rng)
                new_model, report = full_train(
                    cands,
                    split,
                    mu_rtt=mu_rtt,
                    tau_inference=self.config.tau_inference,
                    trained_at_ms=self.clock.now_ms,
                )
                self.holdout_ids = [ids[i] for i in split.idx_test]
                self.needs_full = False
            else:
                new_ids = [i for i, tid in enumerate(ids) if tid not in self.trained_ids]
                pool_rows = [i for i, tid in enumerate(ids) if tid not in holdout]
                new_model, report = retrain(
                    prev,
                    X[new_ids],
                    y[new_ids],
                    X[pool_rows],
                    y[pool_rows],
                    X[test_rows],
                    y[test_rows],
                    mu_rtt=mu_rtt,
                    tau_inference=self.config.tau_inference,
                    trained_at_ms=self.clock.now_ms,
                )
        except NoFeasibleModelError as exc:
            self.phase = "infeasible"
            self._log("training_infeasible", error=str(exc))
            return None

        if prev is not None:
            change = rmse_change(prev.rmse, report.rmse)
            report.rmse_change = change
            # only retrains share the previous holdout; a full training's
            # RMSE is measured on a fresh split and resets the baseline
            if mode == "retrain" and change > self.config.theta:
                self.correlations_valid = False
                self.needs_full = True
                self._log(
                    "correlations_invalidated",
                    rmse_change=change,
                    theta=self.config.theta,
                    prev_rmse=prev.rmse,
                    new_rmse=report.rmse,
                )
        self.model = new_model
        self.trained_ids = set(ids)
        self.phase = "trained"
        self._log(
            "training",
            mode=report.mode,
            winner=report.winner,
            rmse=report.rmse,
            rmse_change=report.rmse_change,
            n_train=report.n_train,
        )
        self.bus.post(
            "model_updated",
            app_id=self.app_id,
            node_id=self.node_id,
            rmse=report.rmse,
            mode=report.mode,
        )
        return report

    # -- prediction -------------------------------------------------------------

    def predict_once(self, at_ms: int | None = None) -> KnowledgeBaseEntry:
        """One prediction with exact per-stage time accounting.

        Stage costs combine measured wall time with the delay model's
        stand-in for the external monitoring backend; the stored total is
        exactly t_state + t_feature + t_inference.
        """
        if self.phase != "trained" or self.model is None or self.selection is None:
            raise RuntimeError(f"predictor is {self.phase}; predictions need a trained model")
        at = self.clock.now_ms if at_ms is None else int(at_ms)
        w = self.selection.window_s
        mids = [mid for mid, _ in self.selection.schema]

        t0 = time.perf_counter()
        windows = {mid: self.store.pre_submission_window(mid, at, w) for mid in mids}
        degraded = any(len(s) == 0 for s in windows.values())
        if degraded:
            anchor = self.store.latest_common_timestamp(mids)
            if anchor is None:
                raise RuntimeError("no samples available for any selected metric")
            at_used = anchor + self.store.scrape_ms
            windows = {mid: self.store.pre_submission_window(mid, at_used, w) for mid in mids}
            if any(len(s) == 0 for s in windows.values()):
                raise RuntimeError("selected metrics have no usable window")
        modeled_state, modeled_feature = state_delay(
            self.selection.k, w, self.store.delay_model
        )
        t_state = (time.perf_counter() - t0) + modeled_state

        t1 = time.perf_counter()
        vec = np.empty(len(self.selection.schema))
        for i, (mid, feat) in enumerate(self.selection.schema):
            vec[i] = extract_features(windows[mid].values)[FEATURE_INDEX[feat]]
        t_feature = (time.perf_counter() - t1) + modeled_feature

        t2 = time.perf_counter()
        value = predict(self.model, vec)
        t_inference = time.perf_counter() - t2

        entry = KnowledgeBaseEntry(
            app_id=self.app_id,
            node_id=self.node_id,
            timestamp_ms=at,
            predicted_rtt=value,
            t_state=t_state,
            t_feature=t_feature,
            t_inference=t_inference,
            model_trained_at_ms=self.model.trained_at_ms,
            degraded=degraded,
        )
        self.kb.append(entry)
        return entry

    def run_periodic_predictions(self, start_ms: int, end_ms: int) -> list[KnowledgeBaseEntry]:
        """Predictions at the configured cadence for (start, end]."""
        step = int(round(self.config.prediction_interval_s * 1000))
        out = []
        t = start_ms + step
        while t <= end_ms:
            out.append(self.predict_once(at_ms=t))
            t += step
        return out

    # -- persistence -------------------------------------------------------------

    def save_state(self, state_dir: str | Path) -> None:
        state_dir = Path(state_dir)
        state_dir.mkdir(parents=True, exist_ok=True)
        save_dataset(
            self.dataset, state_dir / "dataset_index.csv", state_dir / "dataset_blob.jsonl"
        )
        if self.model is not None:
            save_model(self.model, state_dir / "model.json")
        state = {
            "app_id": self.app_id,
            "node_id": self.node_id,
            "phase": self.phase,
            "correlations_valid": self.correlations_valid,
            "needs_full": self.needs_full,
            "last_collected_ms": self.last_collected_ms,
            "trained_ids": sorted(self.trained_ids),
            "holdout_ids": self.holdout_ids,
            "cycle_count": self.cycle_count,
            "selection": None if self.selection is None else self.selection.to_json(),
            "has_model": self.model is not None,
        }
        (state_dir / "state.json").write_text(json.dumps(state, indent=2))

    def restore_state(self, state_dir: str | Path) -> None:
        state_dir = Path(state_dir)
        state = json.loads((state_dir / "state.json").read_text())
        if state["app_id"] != self.app_id or state["node_id"] != self.node_id:
            raise ValueError("state directory belongs to a different predictor")
        self.phase = state["phase"]
        self.correlations_valid = bool(state["correlations_valid"])
        self.needs_full = bool(state["needs_full"])
        self.last_collected_ms = int(state["last_collected_ms"])
        self.trained_ids = set(state["trained_ids"])
        self.holdout_ids = list(state.get("holdout_ids", []))
        self.cycle_count = int(state["cycle_count"])
        self.selection = (
            None if state["selection"] is None else SelectionResult.from_json(state["selection"])
        )
        self.dataset = load_dataset(
            state_dir / "dataset_index.csv", state_dir / "dataset_blob.jsonl"
        )
        if state["has_model"]:
            self.model = load_model(state_dir / "model.json")


class PredictorManager:
    """Deployment-event driven registry of predictor runtimes."""

    def __init__(
        self,
        store: MetricsStore,
        config: RuntimeConfig | None = None,
        clock: VirtualClock | None = None,
        bus: NotificationBus | None = None,
        state_root: str | Path | None = None,
    ):
        self.store = store
        self.config = config if config is not None else RuntimeConfig()
        self.clock = clock if clock is not None else VirtualClock()
        self.bus = bus if bus is not None else NotificationBus()
        self.state_root = Path(state_root) if state_root else None
        self.predictors: dict[tuple[str, str], PredictorRuntime] = {}
        self.instances: dict[tuple[str, str], int] = {}
        self._paused_phase: dict[tuple[str, str], str] = {}

    def _state_dir(self, key: tuple[str, str]) -> Path | None:
        if self.state_root is None:
            return None
        return self.state_root / f"{key[0]}__{key[1]}"

    def manage_predictors(self, event: str, app_id: str, node_id: str) -> PredictorRuntime | None:
        """Apply a deployment event: 'deploy' or 'remove'."""
        key = (app_id, node_id)
        if event == "deploy":
            self.instances[key] = self.instances.get(key, 0) + 1
            if key not in self.predictors:
                rt = PredictorRuntime(
                    app_id, node_id, self.store, self.config, self.clock, self.bus
                )
                sd = self._state_dir(key)
                if sd is not None and (sd / "state.json").exists():
                    rt.restore_state(sd)
                self.predictors[key] = rt
            rt = self.predictors[key]
            if rt.phase == "paused":
                rt.phase = self._paused_phase.pop(key, "collecting")
            return rt
        if event == "remove":
            if key not in self.instances or self.instances[key] == 0:
                raise ValueError(f"no instances recorded for {key}")
            self.instances[key] -= 1
            rt = self.predictors[key]
            if self.instances[key] == 0:
                self._paused_phase[key] = rt.phase
                rt.phase = "paused"
                sd = self._state_dir(key)
                if sd is not None:
                    # persist the pre-pause phase so a redeploy resumes it
                    rt.phase = self._paused_phase[key]
                    rt.save_state(sd)
                    rt.phase = "paused"
            return rt
        raise ValueError(f"unknown deployment event {event!r}")
