"""Command-line interface.

Subcommands: generate (synthetic scenario to CSVs), correlate (correlation
report + configuration selection), balance (streaming dataset admission),
predict-demo (full pipeline on a compressed clock), simulate (strategy
sweeps). Every run writes a manifest.json recording inputs, outputs, and
wall-clock bounds; the manifest is the one output that is not byte-stable
across runs.

Exit codes: 0 success, 2 configuration or input error, 3 infeasible outcome
(no configuration or model fits the budgets), 1 unexpected failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    default_scenario,
    load_experiment,
    load_runtime_config,
    load_scenario,
    write_experiment,
    write_scenario,
)
from .correlation import analyze_correlations, select_configuration
from .dataset import (
    BalancedDataset,
    admit_new_samples,
    attach_metrics,
    reduction_ratio,
)
from .models import NoFeasibleModelError
from .runtime import (
    KnowledgeBase,
    NotificationBus,
    PredictorRuntime,
    VirtualClock,
)
from .sim import DEFAULT_GRIDS, STRATEGIES, _apply_axis, run_experiment, run_trial
from .store import IngestError, MetricsStore, generate_synthetic

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


class InfeasibleOutcome(RuntimeError):
    pass


class _Manifest:
    def __init__(self, out_dir: Path, subcommand: str, args: argparse.Namespace):
        self.path = out_dir / "manifest.json"
        self.data = {
            "format": "morpheus-run/1",
            "version": __version__,
            "subcommand": subcommand,
            "config": getattr(args, "config", None),
            "seed": getattr(args, "seed", None),
            "out": str(out_dir),
            "started_unix": time.time(),
            "finished_unix": None,
            "outputs": [],
        }
        self.write()

    def write(self) -> None:
        self.path.write_text(json.dumps(self.data, indent=2) + "\n")

    def done(self, outputs: list[str]) -> None:
        self.data["outputs"] = sorted(outputs)
        self.data["finished_unix"] = time.time()
        self.write()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_store(store_dir: str) -> MetricsStore:
    root = Path(store_dir)
    if not root.exists():
        raise IngestError(f"store path not found: {root}")
    store = MetricsStore()
    found = False
    for name in ("metrics.csv", "tasks.csv"):
        p = root / name
        if p.exists():
            store.ingest_csv(p)
            found = True
    if not found:
        raise IngestError(f"no metrics.csv or tasks.csv under {root}")
    return store


# ---------------------------------------------------------------------------
# Subcommands


def cmd_generate(args) -> int:
    out = _out_dir(args)
    manifest = _Manifest(out, "generate", args)
    spec = load_scenario(args.config) if args.config else default_scenario()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    store = generate_synthetic(spec)
    n_metrics = store.write_metrics_csv(out / "metrics.csv")
    n_tasks = store.write_tasks_csv(out / "tasks.csv")
    write_scenario(spec, out / "scenario.ini")
    gt = store.ground_truth
    (out / "ground_truth.json").write_text(
        json.dumps(
            {
                "law": {
                    "id": gt.law.law_id,
                    "base": gt.law.base,
                    "mean_coeff": gt.law.a,
                    "std_coeff": gt.law.b,
                    "quad_coeff": gt.law.c,
                    "noise": gt.law.noise,
                    "driver": gt.law.driver,
                    "drift_at_s": gt.law.drift_at_s,
                    "drift_factor": gt.law.drift_factor,
                },
                "mixing": gt.mixing.tolist(),
                "metric_ids": gt.metric_ids,
            },
            indent=2,
        )
        + "\n"
    )
    manifest.done(["metrics.csv", "tasks.csv", "scenario.ini", "ground_truth.json"])
    print(f"generate: {n_metrics} metric samples, {n_tasks} tasks -> {out}")
    return EXIT_OK


def _build_records(store: MetricsStore, seed: int, interval_s: float):
    """Replay admission the way the live pipeline sees it: one batch per
    collection interval, so bin caps constrain later arrivals."""
    ds = BalancedDataset()
    rng = np.random.default_rng(seed)
    interval_ms = max(1, int(round(interval_s * 1000)))
    tasks = sorted(store.tasks, key=lambda t: t.t_end)
    batch = []
    bucket = None
    for task in tasks:
        b = task.t_end // interval_ms
        if bucket is not None and b != bucket and batch:
            admit_new_samples(ds, batch, rng)
            batch = []
        bucket = b
        batch.append(task)
    if batch:
        admit_new_samples(ds, batch, rng)
    for rec in ds.records:
        attach_metrics(rec, store)
    return ds


def cmd_correlate(args) -> int:
    out = _out_dir(args)
    manifest = _Manifest(out, "correlate", args)
    store = _load_store(args.store)
    if args.config:
        spec = load_scenario(args.config)
        store.delay_model = spec.delay_model
    rc = load_runtime_config(args.config)
    seed = args.seed if args.seed is not None else rc.seed
    ds = _build_records(store, seed, rc.collection_interval_s)
    usable = ds.complete_records()
    if len(usable) < 8:
        raise IngestError(
            f"correlation needs >= 8 complete task records, found {len(usable)}"
        )
    report = analyze_correlations(
        usable, windows=rc.windows, methods=rc.methods, threshold=rc.redundancy_threshold
    )
    report.to_csv(out / "correlations.csv")
    mu_rtt = float(ds.rtts.mean())
    selection = select_configuration(
        report,
        mu_rtt=mu_rtt,
        delay_model=store.delay_model,
        tau_prepare=rc.tau_prepare,
        k_step=rc.k_step,
    )
    log_lines = [
        {"event": "correlate", "records": len(usable), "scores": len(report.scores)},
        {"event": "budget", "mu_rtt": mu_rtt, "tau_prepare": rc.tau_prepare},
    ]
    outputs = ["correlations.csv", "run.log"]
    if selection is None:
        log_lines.append({"event": "selection", "outcome": "infeasible"})
        (out / "run.log").write_text("".join(json.dumps(l) + "\n" for l in log_lines))
        manifest.done(outputs)
        raise InfeasibleOutcome(
            f"no (window, k) configuration fits the budget "
            f"{rc.tau_prepare} * {mu_rtt:.3f}s"
        )
    (out / "selection.json").write_text(json.dumps(selection.to_json(), indent=2) + "\n")
    log_lines.append(
        {
            "event": "selection",
            "outcome": "selected",
            "window_s": selection.window_s,
            "k": selection.k,
            "method": selection.method,
            "total_score": selection.total_score,
        }
    )
    (out / "run.log").write_text("".join(json.dumps(l) + "\n" for l in log_lines))
    manifest.done(outputs + ["selection.json"])
    print(
        f"correlate: {len(report.scores)} scores, selected window={selection.window_s:g}s "
        f"k={selection.k} method={selection.method} -> {out}"
    )
    return EXIT_OK


def cmd_balance(args) -> int:
    out = _out_dir(args)
    manifest = _Manifest(out, "balance", args)
    store = _load_store(args.store)
    tasks = store.tasks
    if not tasks:
        raise IngestError(f"no task records under {args.store}")
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    ds = BalancedDataset()
    batch = max(1, args.batch)
    with (out / "admission_log.jsonl").open("w") as logf:
        for i in range(0, len(tasks), batch):
            admit_new_samples(ds, tasks[i : i + batch], rng)
            ev = ds.admission_log[-1]
            logf.write(
                json.dumps(
                    {
                        "batch": i // batch,
                        "offered": ev.offered,
                        "accepted": ev.accepted,
                        "c_max": ev.c_max,
                        "bins": ev.bin_count,
                        "pre_counts": ev.pre_counts.tolist(),
                        "accepted_per_bin": ev.accepted_per_bin.tolist(),
                        "no_capacity": ev.no_capacity,
                    }
                )
                + "\n"
            )
    with (out / "balanced_index.csv").open("w") as fh:
        fh.write("task_id,rtt,bin\n")
        for rec in ds.records:
            fh.write(f"{rec.task.task_id},{rec.rtt!r},{ds.layout.bin_index(rec.rtt)}\n")
    ratio = reduction_ratio(ds.offered_total, len(ds))
    (out / "report.json").write_text(
        json.dumps(
            {
                "offered": ds.offered_total,
                "retained": len(ds),
                "reduction_pct": ratio,
                "bins": ds.layout.count,
                "bin_counts": ds.layout.counts.tolist(),
            },
            indent=2,
        )
        + "\n"
    )
    manifest.done(["balanced_index.csv", "admission_log.jsonl", "report.json"])
    print(
        f"balance: offered={ds.offered_total} retained={len(ds)} "
        f"reduction={ratio:.2f}% -> {out}"
    )
    return EXIT_OK


def cmd_predict_demo(args) -> int:
    out = _out_dir(args)
    manifest = _Manifest(out, "predict-demo", args)
    store = _load_store(args.store)
    if args.config:
        spec = load_scenario(args.config)
        store.delay_model = spec.delay_model
    rc = load_runtime_config(args.config)
    if args.seed is not None:
        rc = replace(rc, seed=args.seed)

    tasks = store.tasks
    if not tasks:
        raise IngestError(f"no task records under {args.store}")
    horizon = max(t.t_end for t in tasks)
    clock = VirtualClock(start_ms=0)
    bus = NotificationBus(out / "notifications.jsonl")
    kb = KnowledgeBase(out / "knowledge_base.jsonl")
    rt = PredictorRuntime(
        tasks[0].app_id, tasks[0].node_id, store, rc, clock=clock, bus=bus, kb=kb
    )

    interval = rc.collection_interval_s
    rows = []
    while clock.now_ms < horizon:
        prev = clock.now_ms
        clock.advance_s(interval)
        if args.clock_compression:
            time.sleep(interval / args.clock_compression)
        rt.run_collection_cycle()
        for _ in bus.poll("training_needed"):
            report = rt.run_training_event()
            if report is not None:
                rows.append(
                    {
                        "cycle": rt.cycle_count,
                        "at_s": clock.now_ms / 1000.0,
                        "mode": report.mode,
                        "winner": report.winner,
                        "rmse": report.rmse,
                        "rmse_change": report.rmse_change,
                    }
                )
        if rt.phase == "trained" and args.mode == "periodic":
            end = min(clock.now_ms, horizon)
            rt.run_periodic_predictions(prev, end)
    if rt.phase == "trained" and args.mode == "on-demand":
        rt.predict_once(at_ms=horizon)

    with (out / "rmse_over_time.csv").open("w") as fh:
        fh.write("cycle,at_s,mode,winner,rmse,rmse_change\n")
        for r in rows:
            change = "" if r["rmse_change"] is None else repr(r["rmse_change"])
            fh.write(
                f"{r['cycle']},{r['at_s']:g},{r['mode']},{r['winner']},{r['rmse']!r},{change}\n"
            )
    with (out / "run.log").open("w") as fh:
        for line in rt.log:
            fh.write(json.dumps(line) + "\n")
    rt.save_state(out / "state")
    manifest.done(
        [
            "rmse_over_time.csv",
            "run.log",
            "knowledge_base.jsonl",
            "notifications.jsonl",
            "state",
        ]
    )
    if rt.phase == "infeasible":
        raise InfeasibleOutcome("pipeline ended infeasible: no configuration or model fit the budgets")
    if rt.model is None:
        raise IngestError("pipeline never reached a trained model; dataset too small?")
    mu = float(rt.dataset.rtts.mean())
    print(
        f"predict-demo: cycles={rt.cycle_count} phase={rt.phase} "
        f"rmse={rt.model.rmse:.4f}s ({100 * rt.model.rmse / mu:.2f}% of mean RTT) "
        f"entries={len(kb.entries)} -> {out}"
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    manifest = _Manifest(out, "simulate", args)
    cfg = load_experiment(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.trials is not None:
        cfg = replace(cfg, trials=args.trials)
    result = run_experiment(cfg, args.sweep)
    csv_name = f"sweep_{args.sweep}.csv"
    result.to_csv(out / csv_name)
    write_experiment(cfg, out / "experiment.ini")
    outputs = [csv_name, "experiment.ini"]
    if args.event_log:
        ev_name = f"events_{args.sweep}.csv"
        with (out / ev_name).open("w") as fh:
            fh.write("sweep_value,strategy,request_id,app_id,arrival_s,assigned_s,replica,completion_s\n")
            for pi, value in enumerate(result.grid):
                point_cfg = _apply_axis(cfg, args.sweep, value)
                trial_seed = cfg.seed * 1_000_003 + pi * 10_007
                for strategy in STRATEGIES:
                    _, events = run_trial(point_cfg, strategy, trial_seed, keep_events=True)
                    for e in events:
                        fh.write(
                            f"{value:g},{strategy},{e.request_id},{e.app_id},"
                            f"{e.arrival_s!r},{e.assigned_s!r},{e.replica},{e.completion_s!r}\n"
                        )
        outputs.append(ev_name)
    manifest.done(outputs)
    print(
        f"simulate: axis={args.sweep} points={len(result.grid)} trials={result.trials} -> {out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morpheus",
        description="RTT predictor pipeline laboratory and load-balancing simulator",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, needs_store=False):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out", required=True, help="output directory")
        if needs_store:
            sp.add_argument(
                "--store", required=True, help="directory holding metrics.csv/tasks.csv"
            )

    sp = sub.add_parser("generate", help="synthesize a metrics/tasks scenario")
    common(sp)
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("correlate", help="correlation analysis and configuration selection")
    common(sp, needs_store=True)
    sp.set_defaults(fn=cmd_correlate)

    sp = sub.add_parser("balance", help="streaming balanced-dataset admission")
    common(sp, needs_store=True)
    sp.add_argument("--batch", type=int, default=100, help="admission batch size")
    sp.set_defaults(fn=cmd_balance)

    sp = sub.add_parser("predict-demo", help="full pipeline on a compressed clock")
    common(sp, needs_store=True)
    sp.add_argument(
        "--mode",
        choices=("on-demand", "periodic"),
        default="periodic",
        help="prediction scheduling mode",
    )
    sp.add_argument(
        "--clock-compression",
        type=float,
        default=0.0,
        help="virtual-to-real time ratio; 0 runs fully compressed",
    )
    sp.set_defaults(fn=cmd_predict_demo)

    sp = sub.add_parser("simulate", help="load-balancing strategy sweeps")
    common(sp)
    sp.add_argument("--sweep", choices=tuple(DEFAULT_GRIDS), required=True)
    sp.add_argument("--trials", type=int, help="trials per sweep point")
    sp.add_argument("--event-log", action="store_true", help="emit first-trial event logs")
    sp.set_defaults(fn=cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, IngestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleOutcome, NoFeasibleModelError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
