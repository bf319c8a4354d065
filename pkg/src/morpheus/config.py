"""INI-backed configuration for scenarios, runtime, and simulator sweeps.

Malformed values raise ConfigError with section/key context; the CLI maps
those to exit code 2. Every loader has a matching writer so resolved
configurations can be persisted next to run outputs.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .dataset import SufficiencyParams
from .runtime import RuntimeConfig
from .sim import AppSpec, ExperimentConfig, InterferenceMatrix
from .store import DelayModel, DriverSpec, RttLaw, ScenarioSpec


class ConfigError(ValueError):
    pass


def _get(parser, section: str, key: str, cast, default=None, path=""):
    if not parser.has_section(section) or not parser.has_option(section, key):
        if default is not None or (default is None and cast is _maybe_float):
            return default
        raise ConfigError(f"{path}: missing [{section}] {key}")
    raw = parser.get(section, key)
    try:
        return cast(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: bad value for [{section}] {key}: {raw!r}") from None


def _maybe_float(raw: str) -> float | None:
    raw = raw.strip()
    return float(raw) if raw else None


def _pair(cast):
    def parse(raw: str):
        parts = raw.split()
        if len(parts) != 2:
            raise ValueError(f"expected two values, got {raw!r}")
        return (cast(parts[0]), cast(parts[1]))

    return parse


# ---------------------------------------------------------------------------
# Scenario


def default_scenario() -> ScenarioSpec:
    """Demo scenario: two latent drivers, 20 mixture metrics, affine law.

    Two hours of tasks with moderate RTT spread: balancing flattens the RTT
    histogram, which widens the order-statistic median interval, so the
    sufficiency gate needs a few hundred offered tasks at this spread
    before it opens. The delay model here represents a fast local
    monitoring backend so that windows of 20-60 s stay inside the
    preparation budget at 10 s-scale RTTs; the package-default calibration
    targets a heavier backend.
    """
    return ScenarioSpec(
        duration_s=7200.0,
        drivers=(
            DriverSpec(tau_s=40.0, amplitude=0.5),
            DriverSpec(tau_s=25.0, amplitude=0.35),
        ),
        law=RttLaw(base=10.0, a=0.55, b=0.3, noise=0.05),
        delay_model=DelayModel(
            fixed_cost=0.3, per_metric_cost=0.0015, feature_cost_per_metric=0.01
        ),
    )


def load_scenario(path: str | Path) -> ScenarioSpec:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    p = str(path)
    base = default_scenario()

    drivers = []
    for section in sorted(s for s in parser.sections() if s.startswith("driver.")):
        drivers.append(
            DriverSpec(
                tau_s=_get(parser, section, "tau_s", float, 40.0, p),
                amplitude=_get(parser, section, "amplitude", float, 0.6, p),
            )
        )
    if not drivers:
        drivers = list(base.drivers)

    law = RttLaw(
        law_id=_get(parser, "law", "id", str, base.law.law_id, p),
        base=_get(parser, "law", "base", float, base.law.base, p),
        a=_get(parser, "law", "mean_coeff", float, base.law.a, p),
        b=_get(parser, "law", "std_coeff", float, base.law.b, p),
        c=_get(parser, "law", "quad_coeff", float, base.law.c, p),
        noise=_get(parser, "law", "noise", float, base.law.noise, p),
        driver=_get(parser, "law", "driver", int, base.law.driver, p),
        drift_at_s=_get(parser, "law", "drift_at_s", _maybe_float, None, p),
        drift_factor=_get(parser, "law", "drift_factor", float, 1.0, p),
    )

    delay = DelayModel(
        fixed_cost=_get(parser, "delay_model", "fixed_cost", float, base.delay_model.fixed_cost, p),
        per_metric_cost=_get(
            parser, "delay_model", "per_metric_cost", float, base.delay_model.per_metric_cost, p
        ),
        feature_cost_per_metric=_get(
            parser,
            "delay_model",
            "feature_cost_per_metric",
            float,
            base.delay_model.feature_cost_per_metric,
            p,
        ),
    )

    metric_count = _get(parser, "scenario", "metric_count", int, base.metric_count, p)
    mixing = None
    if parser.has_section("mixing"):
        rows = []
        for key in parser.options("mixing"):
            rows.append((key, tuple(float(v) for v in parser.get("mixing", key).split())))
        rows.sort()
        if len(rows) != metric_count:
            raise ConfigError(
                f"{p}: [mixing] has {len(rows)} rows but metric_count is {metric_count}"
            )
        mixing = tuple(r[1] for r in rows)

    try:
        return ScenarioSpec(
            duration_s=_get(parser, "scenario", "duration_s", float, base.duration_s, p),
            metric_count=metric_count,
            seed=_get(parser, "scenario", "seed", int, base.seed, p),
            app_id=_get(parser, "scenario", "app_id", str, base.app_id, p),
            node_id=_get(parser, "scenario", "node_id", str, base.node_id, p),
            t_max_wait_s=_get(parser, "scenario", "t_max_wait_s", float, base.t_max_wait_s, p),
            warmup_s=_get(parser, "scenario", "warmup_s", float, base.warmup_s, p),
            metric_noise=_get(parser, "scenario", "metric_noise", float, base.metric_noise, p),
            drivers=tuple(drivers),
            mixing=mixing,
            law=law,
            delay_model=delay,
        )
    except ValueError as exc:
        raise ConfigError(f"{p}: {exc}") from None


def write_scenario(spec: ScenarioSpec, path: str | Path) -> None:
    parser = configparser.ConfigParser()
    parser["scenario"] = {
        "duration_s": repr(spec.duration_s),
        "metric_count": str(spec.metric_count),
        "seed": str(spec.seed),
        "app_id": spec.app_id,
        "node_id": spec.node_id,
        "t_max_wait_s": repr(spec.t_max_wait_s),
        "warmup_s": repr(spec.warmup_s),
        "metric_noise": repr(spec.metric_noise),
    }
    for i, d in enumerate(spec.drivers):
        parser[f"driver.{i}"] = {"tau_s": repr(d.tau_s), "amplitude": repr(d.amplitude)}
    law = {
        "id": spec.law.law_id,
        "base": repr(spec.law.base),
        "mean_coeff": repr(spec.law.a),
        "std_coeff": repr(spec.law.b),
        "quad_coeff": repr(spec.law.c),
        "noise": repr(spec.law.noise),
        "driver": str(spec.law.driver),
        "drift_factor": repr(spec.law.drift_factor),
    }
    if spec.law.drift_at_s is not None:
        law["drift_at_s"] = repr(spec.law.drift_at_s)
    parser["law"] = law
    parser["delay_model"] = {
        "fixed_cost": repr(spec.delay_model.fixed_cost),
        "per_metric_cost": repr(spec.delay_model.per_metric_cost),
        "feature_cost_per_metric": repr(spec.delay_model.feature_cost_per_metric),
    }
    if spec.mixing is not None:
        parser["mixing"] = {
            f"m{i:03d}": " ".join(repr(v) for v in row) for i, row in enumerate(spec.mixing)
        }
    with Path(path).open("w") as fh:
        parser.write(fh)


# ---------------------------------------------------------------------------
# Runtime


def load_runtime_config(path: str | Path | None) -> RuntimeConfig:
    base = RuntimeConfig()
    if path is None:
        return base
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    p = str(path)
    suff = SufficiencyParams(
        alpha_pct=_get(parser, "runtime", "sufficiency_alpha_pct", float, 95.0, p),
        r_pct=_get(parser, "runtime", "sufficiency_r_pct", float, 5.0, p),
        min_samples=_get(parser, "runtime", "sufficiency_min_samples", int, 8, p),
    )
    return RuntimeConfig(
        collection_interval_s=_get(
            parser, "runtime", "collection_interval_s", float, base.collection_interval_s, p
        ),
        prediction_interval_s=_get(
            parser, "runtime", "prediction_interval_s", float, base.prediction_interval_s, p
        ),
        sufficiency=suff,
        tau_prepare=_get(parser, "runtime", "tau_prepare", float, base.tau_prepare, p),
        tau_inference=_get(parser, "runtime", "tau_inference", float, base.tau_inference, p),
        theta=_get(parser, "runtime", "theta", float, base.theta, p),
        redundancy_threshold=_get(
            parser, "runtime", "redundancy_threshold", float, base.redundancy_threshold, p
        ),
        k_step=_get(parser, "runtime", "k_step", int, base.k_step, p),
        min_train_records=_get(
            parser, "runtime", "min_train_records", int, base.min_train_records, p
        ),
        seed=_get(parser, "runtime", "seed", int, base.seed, p),
    )


# ---------------------------------------------------------------------------
# Experiment


def default_experiment() -> ExperimentConfig:
    """Three synthetic services on a 10-node heterogeneous cluster.

    Node speed (the acceleration range) is the dominant source of service
    -time spread here: per-draw dispersion (base_cov) is kept below it so
    the heterogeneity axis, not sampling noise, drives the strategy gaps.
    """
    apps = (
        AppSpec(
            app_id="checkout",
            mean_rtt=8.0,
            base_cov=0.08,
            cpu_per_request=1.0,
            mem_per_request=2.0,
            t_max_wait=20.0,
        ),
        AppSpec(
            app_id="media",
            mean_rtt=12.0,
            base_cov=0.10,
            cpu_per_request=1.2,
            mem_per_request=3.0,
            t_max_wait=30.0,
        ),
        AppSpec(
            app_id="search",
            mean_rtt=5.0,
            base_cov=0.07,
            cpu_per_request=0.8,
            mem_per_request=1.5,
            t_max_wait=14.0,
        ),
    )
    matrix = InterferenceMatrix.from_dict(
        {
            "checkout": {"checkout": 0.3, "media": 0.5, "search": 0.25},
            "media": {"checkout": 0.45, "media": 0.35, "search": 0.3},
            "search": {"checkout": 0.3, "media": 0.4, "search": 0.2},
        }
    )
    return ExperimentConfig(apps=apps, matrix=matrix, replicas_per_app=2)


def load_experiment(path: str | Path | None) -> ExperimentConfig:
    base = default_experiment()
    if path is None:
        return base
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    p = str(path)

    app_sections = sorted(s for s in parser.sections() if s.startswith("app."))
    if app_sections:
        apps = []
        for section in app_sections:
            app_id = section.split(".", 1)[1]
            try:
                apps.append(
                    AppSpec(
                        app_id=app_id,
                        mean_rtt=_get(parser, section, "mean_rtt", float, None, p),
                        base_cov=_get(parser, section, "base_cov", float, None, p),
                        cpu_per_request=_get(parser, section, "cpu_per_request", float, None, p),
                        mem_per_request=_get(parser, section, "mem_per_request", float, None, p),
                        t_max_wait=_get(parser, section, "t_max_wait", float, None, p),
                    )
                )
            except ValueError as exc:
                raise ConfigError(f"{p}: [{section}] {exc}") from None
        apps = tuple(apps)
    else:
        apps = base.apps

    app_ids = tuple(sorted(a.app_id for a in apps))
    if parser.has_section("interference"):
        grid = {a: {b: 0.0 for b in app_ids} for a in app_ids}
        for key in parser.options("interference"):
            if "." not in key:
                raise ConfigError(f"{p}: [interference] key {key!r} must be app.app")
            a, b = key.split(".", 1)
            if a not in grid or b not in grid[a]:
                raise ConfigError(f"{p}: [interference] references unknown app in {key!r}")
            grid[a][b] = _get(parser, "interference", key, float, None, p)
        matrix = InterferenceMatrix.from_dict(grid)
    elif app_sections:
        matrix = InterferenceMatrix.from_dict({a: {b: 0.0 for b in app_ids} for a in app_ids})
    else:
        matrix = base.matrix

    try:
        return ExperimentConfig(
            nodes=_get(parser, "cluster", "nodes", int, base.nodes, p),
            core_range=_get(parser, "cluster", "core_range", _pair(int), base.core_range, p),
            mem_range=_get(parser, "cluster", "mem_range", _pair(float), base.mem_range, p),
            alpha_range=_get(parser, "cluster", "alpha_range", _pair(float), base.alpha_range, p),
            apps=apps,
            matrix=matrix,
            replicas_per_app=_get(parser, "sim", "replicas_per_app", int, base.replicas_per_app, p),
            accuracy=_get(parser, "sim", "accuracy", float, base.accuracy, p),
            requests_per_app=_get(parser, "sim", "requests_per_app", int, base.requests_per_app, p),
            predictor_cpu_overhead=_get(
                parser, "sim", "predictor_cpu_overhead", float, base.predictor_cpu_overhead, p
            ),
            predictor_mem_overhead=_get(
                parser, "sim", "predictor_mem_overhead", float, base.predictor_mem_overhead, p
            ),
            trials=_get(parser, "sim", "trials", int, base.trials, p),
            seed=_get(parser, "sim", "seed", int, base.seed, p),
        )
    except ValueError as exc:
        raise ConfigError(f"{p}: {exc}") from None


def write_experiment(cfg: ExperimentConfig, path: str | Path) -> None:
    parser = configparser.ConfigParser()
    parser["cluster"] = {
        "nodes": str(cfg.nodes),
        "core_range": f"{cfg.core_range[0]} {cfg.core_range[1]}",
        "mem_range": f"{cfg.mem_range[0]!r} {cfg.mem_range[1]!r}",
        "alpha_range": f"{cfg.alpha_range[0]!r} {cfg.alpha_range[1]!r}",
    }
    parser["sim"] = {
        "replicas_per_app": str(cfg.replicas_per_app),
        "accuracy": repr(cfg.accuracy),
        "requests_per_app": str(cfg.requests_per_app),
        "predictor_cpu_overhead": repr(cfg.predictor_cpu_overhead),
        "predictor_mem_overhead": repr(cfg.predictor_mem_overhead),
        "trials": str(cfg.trials),
        "seed": str(cfg.seed),
    }
    for app in cfg.apps:
        parser[f"app.{app.app_id}"] = {
            "mean_rtt": repr(app.mean_rtt),
            "base_cov": repr(app.base_cov),
            "cpu_per_request": repr(app.cpu_per_request),
            "mem_per_request": repr(app.mem_per_request),
            "t_max_wait": repr(app.t_max_wait),
        }
    if cfg.matrix is not None:
        parser["interference"] = {
            f"{a}.{b}": repr(cfg.matrix.get(a, b))
            for a in cfg.matrix.apps
            for b in cfg.matrix.apps
        }
    with Path(path).open("w") as fh:
        parser.write(fh)
