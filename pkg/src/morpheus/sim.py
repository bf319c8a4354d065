"""Discrete-event load-balancing simulator with paired strategy trials.

Service times are lognormal with moments matched to each application's mean
RTT and an interference-inflated standard deviation; a node's acceleration
factor multiplies the draw by (1 + alpha). The predictor surrogate returns
actual + N(0, (1-p) * actual) clamped at zero, so p = 1.0 reproduces the
actual value exactly.

Every trial pre-generates all randomness (arrival gaps, per-request
per-replica service draws, prediction-noise z-draws, random-strategy picks)
from the trial seed before any strategy runs. Each strategy then replays the
identical workload, and an ideal router (perfect knowledge, same draws) runs
alongside as the reference, making the comparison fully paired: at p = 1.0
the performance-aware router's trajectory is identical to the ideal one.

Routing happens over idle replicas only; requests finding none wait in a
per-application FIFO queue served on completions. Reported RTTs include
queue wait.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

STRATEGIES: tuple[str, ...] = ("round_robin", "random", "performance_aware")
IDEAL = "ideal"
SWEEP_AXES: tuple[str, ...] = ("accuracy", "replicas", "heterogeneity")


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    cores: int
    memory_gb: float
    alpha: float  # RTT multiplier offset: draws scale by (1 + alpha)


@dataclass(frozen=True)
class AppSpec:
    app_id: str
    mean_rtt: float  # seconds, > 0
    base_cov: float  # coefficient of variation before interference
    cpu_per_request: float  # cores held while a request is in service
    mem_per_request: float  # GB held while a request is in service
    t_max_wait: float  # client think-time upper bound, seconds

    def __post_init__(self):
        if self.mean_rtt <= 0:
            raise ValueError(f"{self.app_id}: mean_rtt must be positive")
        if self.base_cov < 0:
            raise ValueError(f"{self.app_id}: base_cov cannot be negative")
        if self.t_max_wait <= 0:
            raise ValueError(f"{self.app_id}: t_max_wait must be positive")


@dataclass(frozen=True)
class InterferenceMatrix:
    apps: tuple[str, ...]
    values: tuple[tuple[float, ...], ...]

    def get(self, a: str, b: str) -> float:
        return self.values[self.apps.index(a)][self.apps.index(b)]

    @classmethod
    def from_dict(cls, d: dict[str, dict[str, float]]) -> "InterferenceMatrix":
        apps = tuple(sorted(d))
        return cls(apps=apps, values=tuple(tuple(float(d[a][b]) for b in apps) for a in apps))


def build_cluster(
    n_nodes: int,
    core_range: tuple[int, int],
    mem_range: tuple[float, float],
    alpha_range: tuple[float, float],
    seed: int,
) -> list[NodeSpec]:
    """Sample a heterogeneous cluster; deterministic for a given seed."""
    if n_nodes < 1:
        raise ValueError("cluster needs at least one node")
    rng = np.random.default_rng(seed)
    nodes = []
    for i in range(n_nodes):
        cores = int(rng.integers(core_range[0], core_range[1] + 1))
        mem = float(rng.uniform(mem_range[0], mem_range[1]))
        alpha = float(rng.uniform(alpha_range[0], alpha_range[1]))
        nodes.append(NodeSpec(node_id=f"n{i:03d}", cores=cores, memory_gb=mem, alpha=alpha))
    return nodes


def lognormal_params(rbar: float, s: float) -> tuple[float, float]:
    """(mu, sigma) of the lognormal matching mean rbar and std s.

    mu = ln(rbar^2 / sqrt(s^2 + rbar^2)), sigma = sqrt(ln(1 + s^2/rbar^2));
    s = 0 degenerates to a point mass at rbar.
    """
    if rbar <= 0:
        raise ValueError(f"mean must be positive, got {rbar}")
    if s < 0:
        raise ValueError(f"std cannot be negative, got {s}")
    if s == 0.0:
        return math.log(rbar), 0.0
    mu = math.log(rbar * rbar / math.sqrt(s * s + rbar * rbar))
    sigma = math.sqrt(math.log(1.0 + (s * s) / (rbar * rbar)))
    return mu, sigma


def interference_std(app: AppSpec, colocated: list[str], matrix: InterferenceMatrix) -> float:
    """Service-time std for an app replica given colocated replicas' apps.

    s = mean_rtt * base_cov * (1 + sum over colocated instances of
    matrix[app][b]); each colocated replica instance contributes once.
    """
    total = sum(matrix.get(app.app_id, b) for b in colocated)
    return app.mean_rtt * app.base_cov * (1.0 + total)


def sample_actual_rtt(
    app: AppSpec,
    node: NodeSpec,
    colocated: list[str],
    matrix: InterferenceMatrix,
    rng: np.random.Generator,
) -> float:
    mu, sigma = lognormal_params(app.mean_rtt, interference_std(app, colocated, matrix))
    x = float(rng.lognormal(mu, sigma))
    return x * (1.0 + node.alpha)


def predict_rtt(actual: float, p: float, rng: np.random.Generator) -> float:
    """Predictor surrogate: actual + N(0, (1-p)*actual), clamped at zero."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"accuracy p must be in [0, 1], got {p}")
    noise = float(rng.normal(0.0, (1.0 - p) * actual)) if p < 1.0 else 0.0
    return max(0.0, actual + noise)


def route(
    strategy: str,
    candidates: list[tuple[int, float]],
    p: float,
    rng: np.random.Generator,
    rr_state: int = -1,
) -> tuple[int | None, int]:
    """Pick a replica among idle candidates [(replica_index, actual_rtt)].

    Returns (chosen replica index or None to defer, new round-robin state).
    round_robin cycles replica indexes in fixed order starting after
    rr_state; random picks uniformly; performance_aware minimizes the
    predictor surrogate; ideal minimizes the actual values.
    """
    if strategy not in STRATEGIES and strategy != IDEAL:
        raise ValueError(f"unknown strategy {strategy!r}")
    if not candidates:
        return None, rr_state
    if strategy == "round_robin":
        indexes = sorted(i for i, _ in candidates)
        for idx in indexes:
            if idx > rr_state:
                return idx, idx
        return indexes[0], indexes[0]
    if strategy == "random":
        return candidates[int(rng.integers(len(candidates)))][0], rr_state
    if strategy == "performance_aware":
        best = min(candidates, key=lambda c: (predict_rtt(c[1], p, rng), c[0]))
        return best[0], rr_state
    best = min(candidates, key=lambda c: (c[1], c[0]))
    return best[0], rr_state


# ---------------------------------------------------------------------------
# Trial configuration


@dataclass(frozen=True)
class ExperimentConfig:
    nodes: int = 10
    core_range: tuple[int, int] = (4, 16)
    mem_range: tuple[float, float] = (8.0, 64.0)
    alpha_range: tuple[float, float] = (-0.3, 0.3)
    apps: tuple[AppSpec, ...] = ()
    matrix: InterferenceMatrix | None = None
    replicas_per_app: int = 2
    accuracy: float = 0.8
    requests_per_app: int = 60
    predictor_cpu_overhead: float = 0.01  # cores per active node
    predictor_mem_overhead: float = 0.02  # GB per active node
    trials: int = 200
    seed: int = 1

    def __post_init__(self):
        if self.replicas_per_app < 1:
            raise ValueError("replicas_per_app must be >= 1")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy must be in [0, 1], got {self.accuracy}")
        if self.requests_per_app < 1:
            raise ValueError("requests_per_app must be >= 1")


@dataclass
class TrialResult:
    strategy: str
    seed: int
    requests: int
    mean_rtt: float
    ideal_mean_rtt: float
    inefficiency: float
    inefficiency_completion: float
    cov: float
    resource_waste_cpu: float
    resource_waste_mem: float


@dataclass
class AssignmentEvent:
    request_id: int
    app_id: str
    arrival_s: float
    assigned_s: float
    replica: int
    completion_s: float


@dataclass
class _Replica:
    index: int
    app_idx: int
    node_idx: int
    sub_index: int  # position within its app's replica list


@dataclass
class _Draws:
    nodes: list[NodeSpec]
    replicas: list[_Replica]
    app_replicas: list[list[int]]  # app_idx -> global replica indexes
    arrivals: list[list[float]]  # app_idx -> arrival times (seconds)
    service: list[np.ndarray]  # app_idx -> (requests, replicas_of_app)
    z_noise: list[np.ndarray]  # app_idx -> (requests, replicas_of_app)
    u_random: list[np.ndarray]  # app_idx -> (requests,)
    active_nodes: int


def _prepare_draws(cfg: ExperimentConfig, seed: int) -> _Draws:
    ss = np.random.SeedSequence(entropy=(int(seed), int(cfg.seed)))
    s_cluster, s_place, s_arrive, s_service, s_noise, s_random = ss.spawn(6)
    rng_cluster = np.random.default_rng(s_cluster)
    cluster_seed = int(rng_cluster.integers(2**31))
    nodes = build_cluster(cfg.nodes, cfg.core_range, cfg.mem_range, cfg.alpha_range, cluster_seed)

    rng_place = np.random.default_rng(s_place)
    replicas: list[_Replica] = []
    app_replicas: list[list[int]] = []
    for ai, _app in enumerate(cfg.apps):
        ids = []
        for sub in range(cfg.replicas_per_app):
            node_idx = int(rng_place.integers(len(nodes)))
            idx = len(replicas)
            replicas.append(_Replica(index=idx, app_idx=ai, node_idx=node_idx, sub_index=sub))
            ids.append(idx)
        app_replicas.append(ids)

    # per-replica lognormal params from colocation at placement time
    by_node: dict[int, list[int]] = {}
    for r in replicas:
        by_node.setdefault(r.node_idx, []).append(r.index)
    mu_sigma = []
    for r in replicas:
        app = cfg.apps[r.app_idx]
        colocated = [
            cfg.apps[replicas[other].app_idx].app_id
            for other in by_node[r.node_idx]
            if other != r.index
        ]
        mu_sigma.append(lognormal_params(app.mean_rtt, interference_std(app, colocated, cfg.matrix)))

    rng_arrive = np.random.default_rng(s_arrive)
    arrivals = []
    for app in cfg.apps:
        gaps = rng_arrive.uniform(0.0, app.t_max_wait, size=cfg.requests_per_app)
        arrivals.append([float(t) for t in np.cumsum(gaps)])

    rng_service = np.random.default_rng(s_service)
    service = []
    for ai, app in enumerate(cfg.apps):
        cols = []
        for gid in app_replicas[ai]:
            mu, sigma = mu_sigma[gid]
            accel = 1.0 + nodes[replicas[gid].node_idx].alpha
            draws = rng_service.lognormal(mu, sigma, size=cfg.requests_per_app) if sigma > 0 else np.full(cfg.requests_per_app, math.exp(mu))
            cols.append(draws * accel)
        service.append(np.column_stack(cols))

    rng_noise = np.random.default_rng(s_noise)
    z_noise = [
        rng_noise.standard_normal((cfg.requests_per_app, cfg.replicas_per_app))
        for _ in cfg.apps
    ]
    rng_random = np.random.default_rng(s_random)
    u_random = [rng_random.random(cfg.requests_per_app) for _ in cfg.apps]

    return _Draws(
        nodes=nodes,
        replicas=replicas,
        app_replicas=app_replicas,
        arrivals=arrivals,
        service=service,
        z_noise=z_noise,
        u_random=u_random,
        active_nodes=len(by_node),
    )


@dataclass
class _Outcome:
    rtts: np.ndarray
    cpu_seconds: float
    mem_seconds: float
    makespan: float
    events: list[AssignmentEvent]


def _simulate(cfg: ExperimentConfig, draws: _Draws, strategy: str, keep_events: bool) -> _Outcome:
    """Replay the pre-drawn workload under one strategy. No RNG calls."""
    n_rep = len(draws.replicas)
    busy_until = [0.0] * n_rep
    rr_state = [-1] * len(cfg.apps)
    queues: list[list[tuple[int, float]]] = [[] for _ in cfg.apps]  # (req_idx, arrival)
    heap: list[tuple[float, int, int, int, int]] = []  # (t, kind, seq, app, payload)
    seq = 0
    for ai, times in enumerate(draws.arrivals):
        for ri, t in enumerate(times):
            heapq.heappush(heap, (t, 1, seq, ai, ri))
            seq += 1

    rtts: list[float] = []
    cpu = 0.0
    mem = 0.0
    makespan = 0.0
    events: list[AssignmentEvent] = []

    def assign(ai: int, req: int, arrival: float, now: float, replica_gid: int) -> None:
        nonlocal cpu, mem, makespan, seq
        sub = draws.replicas[replica_gid].sub_index
        dur = float(draws.service[ai][req, sub])
        done = now + dur
        busy_until[replica_gid] = done
        app = cfg.apps[ai]
        cpu += app.cpu_per_request * dur
        mem += app.mem_per_request * dur
        makespan = max(makespan, done)
        rtts.append(done - arrival)
        heapq.heappush(heap, (done, 0, seq, ai, replica_gid))
        seq += 1
        if keep_events:
            events.append(
                AssignmentEvent(
                    request_id=req,
                    app_id=app.app_id,
                    arrival_s=arrival,
                    assigned_s=now,
                    replica=replica_gid,
                    completion_s=done,
                )
            )

    def choose(ai: int, req: int, idle: list[int], now: float) -> int:
        sub_of = {gid: draws.replicas[gid].sub_index for gid in idle}
        if strategy == "round_robin":
            after = [g for g in idle if g > rr_state[ai]]
            gid = min(after) if after else min(idle)
            rr_state[ai] = gid
            return gid
        if strategy == "random":
            u = float(draws.u_random[ai][req])
            return sorted(idle)[int(u * len(idle))]
        row = draws.service[ai][req]
        if strategy == "performance_aware":
            p = cfg.accuracy
            zrow = draws.z_noise[ai][req]
            best = min(
                idle,
                key=lambda g: (max(0.0, row[sub_of[g]] * (1.0 + (1.0 - p) * zrow[sub_of[g]])), g),
            )
            return best
        return min(idle, key=lambda g: (row[sub_of[g]], g))  # ideal

    while heap:
        now, kind, _s, ai, payload = heapq.heappop(heap)
        if kind == 0:
            # completion freed replica `payload`; serve this app's queue head
            if queues[ai] and busy_until[payload] <= now:
                req, arrival = queues[ai].pop(0)
                assign(ai, req, arrival, now, payload)
            continue
        req = payload
        arrival = now
        idle = [g for g in draws.app_replicas[ai] if busy_until[g] <= now]
        if not idle:
            queues[ai].append((req, arrival))
            continue
        assign(ai, req, arrival, now, choose(ai, req, idle, now))

    arr = np.asarray(rtts, dtype=np.float64)
    return _Outcome(rtts=arr, cpu_seconds=cpu, mem_seconds=mem, makespan=makespan, events=events)


def _overhead(cfg: ExperimentConfig, draws: _Draws, strategy: str, makespan: float) -> tuple[float, float]:
    if strategy != "performance_aware":
        return 0.0, 0.0
    return (
        cfg.predictor_cpu_overhead * draws.active_nodes * makespan,
        cfg.predictor_mem_overhead * draws.active_nodes * makespan,
    )


def _result(cfg: ExperimentConfig, draws: _Draws, strategy: str, out: _Outcome, ideal: _Outcome, seed: int) -> TrialResult:
    mean = float(out.rtts.mean())
    ideal_mean = float(ideal.rtts.mean())
    oc, om = _overhead(cfg, draws, strategy, out.makespan)
    cpu = out.cpu_seconds + oc
    mem = out.mem_seconds + om
    cov = float(out.rtts.std() / mean) if mean > 0 else 0.0
    return TrialResult(
        strategy=strategy,
        seed=seed,
        requests=int(out.rtts.shape[0]),
        mean_rtt=mean,
        ideal_mean_rtt=ideal_mean,
        inefficiency=(mean - ideal_mean) / ideal_mean,
        inefficiency_completion=(out.makespan - ideal.makespan) / ideal.makespan,
        cov=cov,
        resource_waste_cpu=(cpu - ideal.cpu_seconds) / ideal.cpu_seconds,
        resource_waste_mem=(mem - ideal.mem_seconds) / ideal.mem_seconds,
    )


def run_trial(
    cfg: ExperimentConfig, strategy: str, seed: int, keep_events: bool = False
) -> TrialResult | tuple[TrialResult, list[AssignmentEvent]]:
    """One paired trial of `strategy` against the ideal router."""
    if strategy not in STRATEGIES and strategy != IDEAL:
        raise ValueError(f"unknown strategy {strategy!r}")
    draws = _prepare_draws(cfg, seed)
    out = _simulate(cfg, draws, strategy, keep_events)
    ideal = out if strategy == IDEAL else _simulate(cfg, draws, IDEAL, False)
    result = _result(cfg, draws, strategy, out, ideal, seed)
    if keep_events:
        return result, out.events
    return result


def run_trial_all(cfg: ExperimentConfig, seed: int) -> dict[str, TrialResult]:
    """All strategies plus ideal on one shared workload."""
    draws = _prepare_draws(cfg, seed)
    ideal = _simulate(cfg, draws, IDEAL, False)
    results: dict[str, TrialResult] = {
        IDEAL: _result(cfg, draws, IDEAL, ideal, ideal, seed)
    }
    for strategy in STRATEGIES:
        out = _simulate(cfg, draws, strategy, False)
        results[strategy] = _result(cfg, draws, strategy, out, ideal, seed)
    return results


# ---------------------------------------------------------------------------
# Sweeps


@dataclass
class SweepRow:
    sweep_value: float
    strategy: str
    metric: str
    mean: float
    std: float


@dataclass
class ExperimentResult:
    axis: str
    grid: tuple[float, ...]
    trials: int
    rows: list[SweepRow]

    def lookup(self, sweep_value: float, strategy: str, metric: str) -> SweepRow:
        for r in self.rows:
            if (
                math.isclose(r.sweep_value, sweep_value)
                and r.strategy == strategy
                and r.metric == metric
            ):
                return r
        raise KeyError((sweep_value, strategy, metric))

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sweep_value", "strategy", "metric", "mean", "std"])
            for r in self.rows:
                w.writerow([f"{r.sweep_value:g}", r.strategy, r.metric, repr(r.mean), repr(r.std)])


DEFAULT_GRIDS: dict[str, tuple[float, ...]] = {
    "accuracy": tuple(round(0.1 * i, 1) for i in range(11)),
    "replicas": (1.0, 2.0, 4.0, 8.0),
    "heterogeneity": (0.05, 0.15, 0.3, 0.45),
}

_METRICS = (
    "mean_rtt",
    "inefficiency",
    "inefficiency_completion",
    "cov",
    "resource_waste_cpu",
    "resource_waste_mem",
)


def _apply_axis(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    if axis == "accuracy":
        return replace(cfg, accuracy=float(value))
    if axis == "replicas":
        return replace(cfg, replicas_per_app=int(value))
    if axis == "heterogeneity":
        # width w is the acceleration half-width; the core range widens
        # around its midpoint by the same factor relative to the defaults
        w = float(value)
        mid = (cfg.core_range[0] + cfg.core_range[1]) / 2.0
        base_half = (cfg.core_range[1] - cfg.core_range[0]) / 2.0
        half = max(1, int(round(base_half * w / 0.3)))
        cores = (max(1, int(round(mid - half))), int(round(mid + half)))
        return replace(cfg, alpha_range=(-w, w), core_range=cores)
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def run_experiment(
    cfg: ExperimentConfig,
    axis: str,
    grid: tuple[float, ...] | None = None,
    trials: int | None = None,
    seed: int | None = None,
) -> ExperimentResult:
    """Sweep one axis, running paired trials at every grid point.

    Per point and trial, every strategy replays the same pre-drawn workload;
    rows aggregate mean and std over trials for each (strategy, metric).
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    grid = tuple(grid) if grid is not None else DEFAULT_GRIDS[axis]
    trials = int(trials) if trials is not None else cfg.trials
    seed = int(seed) if seed is not None else cfg.seed
    rows: list[SweepRow] = []
    for pi, value in enumerate(grid):
        point_cfg = _apply_axis(cfg, axis, value)
        samples: dict[tuple[str, str], list[float]] = {}
        for t in range(trials):
            trial_seed = seed * 1_000_003 + pi * 10_007 + t
            results = run_trial_all(point_cfg, trial_seed)
            for strategy, res in results.items():
                for metric in _METRICS:
                    samples.setdefault((strategy, metric), []).append(getattr(res, metric))
        for strategy in (*STRATEGIES, IDEAL):
            for metric in _METRICS:
                vals = np.asarray(samples[(strategy, metric)], dtype=np.float64)
                rows.append(
                    SweepRow(
                        sweep_value=float(value),
                        strategy=strategy,
                        metric=metric,
                        mean=float(vals.mean()),
                        std=float(vals.std()),
                    )
                )
    return ExperimentResult(axis=axis, grid=grid, trials=trials, rows=rows)
