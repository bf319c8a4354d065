"""Prediction models: preprocessing, training, retraining, inference.

The model zoo holds small from-scratch stand-ins, one per family the
correlation method can recommend: ordinary least squares with a ridge
fallback (linear), k-nearest-neighbors regression (knn), depth-limited
gradient-boosted trees (tree_ensemble), and recursive least squares
(online_linear, the only incremental kind).

Training always follows the same shape: RTT outliers beyond 3 population
z-scores are dropped, the survivors split 80/10/10, min-max scalers are fit
on the train split only, hyperparameters are tuned on the validation split,
and the reported RMSE is measured on the test split in original units
(seconds). Inference latency is the median of 100 single-sample predictions
(after a warmup call) and must fit the inference budget
t_inference <= tau_inference * mu_RTT for a candidate to be eligible.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K

MODEL_KINDS: tuple[str, ...] = ("linear", "knn", "tree_ensemble", "online_linear")
TAU_INFERENCE = 0.01
OUTLIER_Z = 3.0
KNN_GRID = (3, 5, 9)
TREE_GRID = {"n_trees": (50, 100, 200), "max_depth": (2, 3, 4), "learning_rate": (0.05, 0.1)}
FORMAT_MODEL = "morpheus-model/1"


class NoFeasibleModelError(RuntimeError):
    """No candidate model satisfied the inference-latency budget."""


def candidate_set(method: str, n_records: int) -> tuple[str, ...]:
    """Model kinds eligible for a correlation method at a dataset size."""
    if method == "pearson":
        return ("linear", "tree_ensemble")
    if method in ("spearman", "kendall"):
        return ("tree_ensemble", "knn")
    if method in ("distance", "mic"):
        if n_records < 1000:
            return ("tree_ensemble",)
        if n_records <= 10000:
            return ("tree_ensemble", "online_linear")
        return ("tree_ensemble", "online_linear", "knn")
    raise ValueError(f"unknown correlation method {method!r}")


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def rmse_change(prev: float, new: float) -> float:
    """Relative RMSE change (new - prev)/prev; 0 when both are 0."""
    if prev < 0 or new < 0:
        raise ValueError("RMSE values cannot be negative")
    if prev == 0.0:
        return 0.0 if new == 0.0 else math.inf
    return (new - prev) / prev


# ---------------------------------------------------------------------------
# Scaling and splits


@dataclass
class MinMaxScaler:
    lo: np.ndarray
    span: np.ndarray  # max - lo; 0 marks a constant column

    @classmethod
    def fit(cls, X: np.ndarray) -> "MinMaxScaler":
        lo = X.min(axis=0)
        return cls(lo=lo, span=X.max(axis=0) - lo)

    def transform(self, X: np.ndarray) -> np.ndarray:
        safe = np.where(self.span > 0, self.span, 1.0)
        out = (X - self.lo) / safe
        return np.where(self.span > 0, out, 0.0)

    def inverse(self, X: np.ndarray) -> np.ndarray:
        return X * self.span + self.lo


@dataclass
class SplitData:
    schema: list[tuple[str, str]]
    keep_idx: np.ndarray  # schema columns kept after constant-column drop
    x_scaler: MinMaxScaler
    y_scaler: MinMaxScaler
    X_train: np.ndarray  # scaled
    y_train: np.ndarray  # scaled
    X_val: np.ndarray  # scaled
    y_val_seconds: np.ndarray
    X_test: np.ndarray  # scaled
    y_test_seconds: np.ndarray
    X_val_raw: np.ndarray
    X_test_raw: np.ndarray
    n_outliers: int
    # original-input row indices per split, for callers that track identity
    idx_train: np.ndarray = None
    idx_val: np.ndarray = None
    idx_test: np.ndarray = None


def preprocess(
    X_raw: np.ndarray,
    y_seconds: np.ndarray,
    schema: list[tuple[str, str]],
    rng: np.random.Generator,
) -> SplitData:
    """Outlier filter, shuffle, 80/10/10 split, train-fit min-max scaling."""
    X_raw = np.asarray(X_raw, dtype=np.float64)
    y_seconds = np.asarray(y_seconds, dtype=np.float64)
    n = X_raw.shape[0]
    if n < 10:
        raise ValueError(f"training needs >= 10 records, got {n}")
    if not (np.all(np.isfinite(X_raw)) and np.all(np.isfinite(y_seconds))):
        raise ValueError("training data must be finite")

    std = float(y_seconds.std())
    if std > 0:
        z = np.abs(y_seconds - y_seconds.mean()) / std
        keep = z <= OUTLIER_Z
    else:
        keep = np.ones(n, dtype=bool)
    n_outliers = int(n - keep.sum())
    X = X_raw[keep]
    y = y_seconds[keep]
    m = X.shape[0]
    if m == 0:
        raise ValueError("all records were filtered out as outliers")

    survivors = np.where(keep)[0]
    perm = rng.permutation(m)
    X = X[perm]
    y = y[perm]
    orig = survivors[perm]  # original-input row index per shuffled position
    n_val = max(1, int(0.1 * m))
    n_test = max(1, int(0.1 * m))
    n_train = m - n_val - n_test
    if n_train < 1:
        raise ValueError(f"too few records ({m}) to split")

    Xtr_raw = X[:n_train]
    Xv_raw = X[n_train : n_train + n_val]
    Xte_raw = X[n_train + n_val :]
    ytr = y[:n_train]
    yv = y[n_train : n_train + n_val]
    yte = y[n_train + n_val :]

    spans = Xtr_raw.max(axis=0) - Xtr_raw.min(axis=0)
    keep_idx = np.where(spans > 0)[0]

    x_scaler = MinMaxScaler.fit(Xtr_raw[:, keep_idx])
    y_scaler = MinMaxScaler.fit(ytr[:, None])
    return SplitData(
        schema=list(schema),
        keep_idx=keep_idx,
        x_scaler=x_scaler,
        y_scaler=y_scaler,
        X_train=x_scaler.transform(Xtr_raw[:, keep_idx]),
        y_train=y_scaler.transform(ytr[:, None])[:, 0],
        X_val=x_scaler.transform(Xv_raw[:, keep_idx]),
        y_val_seconds=yv,
        X_test=x_scaler.transform(Xte_raw[:, keep_idx]),
        y_test_seconds=yte,
        X_val_raw=Xv_raw,
        X_test_raw=Xte_raw,
        n_outliers=n_outliers,
        idx_train=orig[:n_train],
        idx_val=orig[n_train : n_train + n_val],
        idx_test=orig[n_train + n_val :],
    )


# ---------------------------------------------------------------------------
# Model kinds (operate in scaled space)


class LinearModel:
    kind = "linear"

    def __init__(self):
        self.w: np.ndarray | None = None
        self.used_ridge = False

    def fit(self, X: np.ndarray, y: np.ndarray) -> None:
        A = np.hstack([np.ones((X.shape[0], 1)), X])
        w, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
        if rank < A.shape[1]:
            # rank-deficient design: fall back to a lightly ridged solve
            G = A.T @ A + 1e-6 * np.eye(A.shape[1])
            w = np.linalg.solve(G, A.T @ y)
            self.used_ridge = True
        self.w = w

    def predict_scaled(self, X: np.ndarray) -> np.ndarray:
        return self.w[0] + X @ self.w[1:]

    def params_count(self) -> int:
        return int(self.w.shape[0])

    def to_params(self) -> dict:
        return {"w": self.w.tolist(), "used_ridge": self.used_ridge}

    @classmethod
    def from_params(cls, p: dict) -> "LinearModel":
        m = cls()
        m.w = np.asarray(p["w"], dtype=np.float64)
        m.used_ridge = bool(p["used_ridge"])
        return m


class KnnModel:
    kind = "knn"

    def __init__(self, k: int = 5):
        self.k = int(k)
        self.train_X: np.ndarray | None = None
        self.train_y: np.ndarray | None = None

    def fit(self, X: np.ndarray, y: np.ndarray) -> None:
        self.train_X = np.ascontiguousarray(X)
        self.train_y = np.ascontiguousarray(y)

    def predict_scaled(self, X: np.ndarray) -> np.ndarray:
        k = min(self.k, self.train_X.shape[0])
        return np.asarray(
            K.knn_predict(self.train_X, self.train_y, np.ascontiguousarray(X), k)
        )

    def params_count(self) -> int:
        return int(self.train_X.size + self.train_y.size)

    def to_params(self) -> dict:
        return {"k": self.k, "train_X": self.train_X.tolist(), "train_y": self.train_y.tolist()}

    @classmethod
    def from_params(cls, p: dict) -> "KnnModel":
        m = cls(k=int(p["k"]))
        m.train_X = np.asarray(p["train_X"], dtype=np.float64)
        m.train_y = np.asarray(p["train_y"], dtype=np.float64)
        return m


class _Tree:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(
            K.tree_predict(self.feature, self.threshold, self.left, self.right, self.value, X)
        )


def _build_tree(X: np.ndarray, y: np.ndarray, max_depth: int, min_leaf: int) -> _Tree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def grow(idx: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        if depth >= max_depth or idx.shape[0] < 2 * min_leaf:
            return node
        f, thr, gain = K.best_split(
            np.ascontiguousarray(X[idx]), np.ascontiguousarray(y[idx]), min_leaf
        )
        if f < 0 or gain <= 1e-12:
            return node
        mask = X[idx, f] <= thr
        feature[node] = int(f)
        threshold[node] = float(thr)
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(X.shape[0]), 0)
    return _Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
    )


class TreeEnsembleModel:
    kind = "tree_ensemble"

    def __init__(self, n_trees: int = 100, max_depth: int = 3, learning_rate: float = 0.1):
        self.n_trees = int(n_trees)
        self.max_depth = int(max_depth)
        self.learning_rate = float(learning_rate)
        self.base = 0.0
        self.trees: list[_Tree] = []
        self.min_leaf = 2

    def fit(self, X: np.ndarray, y: np.ndarray) -> None:
        X = np.ascontiguousarray(X)
        self.base = float(y.mean())
        self.trees = []
        residual = y - self.base
        for _ in range(self.n_trees):
            tree = _build_tree(X, residual, self.max_depth, self.min_leaf)
            pred = tree.predict(X)
            residual = residual - self.learning_rate * pred
            self.trees.append(tree)
            if float(np.max(np.abs(residual))) < 1e-12:
                break

    def predict_scaled(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X)
        out = np.full(X.shape[0], self.base)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    def params_count(self) -> int:
        return sum(2 * t.feature.shape[0] for t in self.trees) + 1

    def to_params(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
            "base": self.base,
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": t.value.tolist(),
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_params(cls, p: dict) -> "TreeEnsembleModel":
        m = cls(p["n_trees"], p["max_depth"], p["learning_rate"])
        m.base = float(p["base"])
        m.trees = [
            _Tree(
                np.asarray(t["feature"], dtype=np.int64),
                np.asarray(t["threshold"], dtype=np.float64),
                np.asarray(t["left"], dtype=np.int64),
                np.asarray(t["right"], dtype=np.int64),
                np.asarray(t["value"], dtype=np.float64),
            )
            for t in p["trees"]
        ]
        return m


class OnlineLinearModel:
    """Recursive least squares with mild forgetting.

    Forgetting < 1 lets retraining on post-drift samples actually move the
    weights; 0.99 keeps the estimator stable at desk-scale batch sizes.
    """

    kind = "online_linear"

    def __init__(self, forgetting: float = 0.99):
        self.forgetting = float(forgetting)
        self.w: np.ndarray | None = None
        self.P: np.ndarray | None = None

    def _init(self, d: int) -> None:
        self.w = np.zeros(d + 1)
        self.P = np.eye(d + 1) * 1e3

    def fit(self, X: np.ndarray, y: np.ndarray) -> None:
        self._init(X.shape[1])
        self.partial_fit(X, y)

    def partial_fit(self, X: np.ndarray, y: np.ndarray) -> None:
        if self.w is None:
            self._init(X.shape[1])
        lam = self.forgetting
        for i in range(X.shape[0]):
            x = np.concatenate(([1.0], X[i]))
            Px = self.P @ x
            g = Px / (lam + float(x @ Px))
            err = float(y[i]) - float(self.w @ x)
            self.w = self.w + g * err
            self.P = (self.P - np.outer(g, Px)) / lam

    def predict_scaled(self, X: np.ndarray) -> np.ndarray:
        return self.w[0] + X @ self.w[1:]

    def params_count(self) -> int:
        return int(self.w.shape[0] + self.P.size)

    def to_params(self) -> dict:
        return {"forgetting": self.forgetting, "w": self.w.tolist(), "P": self.P.tolist()}

    @classmethod
    def from_params(cls, p: dict) -> "OnlineLinearModel":
        m = cls(forgetting=float(p["forgetting"]))
        m.w = np.asarray(p["w"], dtype=np.float64)
        m.P = np.asarray(p["P"], dtype=np.float64)
        return m


_MODEL_CLASSES = {
    "linear": LinearModel,
    "knn": KnnModel,
    "tree_ensemble": TreeEnsembleModel,
    "online_linear": OnlineLinearModel,
}


def _hyper_grid(kind: str, n_train: int) -> list[dict]:
    if kind == "knn":
        return [{"k": k} for k in KNN_GRID if k <= n_train]
    if kind == "tree_ensemble":
        return [
            {"n_trees": t, "max_depth": d, "learning_rate": lr}
            for t, d, lr in itertools.product(
                TREE_GRID["n_trees"], TREE_GRID["max_depth"], TREE_GRID["learning_rate"]
            )
        ]
    return [{}]


# ---------------------------------------------------------------------------
# Trained model wrapper


@dataclass
class TrainedModel:
    kind: str
    model: object
    schema: list[tuple[str, str]]
    keep_idx: np.ndarray
    x_scaler: MinMaxScaler
    y_scaler: MinMaxScaler
    hyperparams: dict
    rmse: float
    t_inference: float
    trained_at_ms: int = 0

    def predict_raw_matrix(self, X_raw: np.ndarray) -> np.ndarray:
        Xs = self.x_scaler.transform(np.asarray(X_raw, dtype=np.float64)[:, self.keep_idx])
        ys = self.model.predict_scaled(Xs)
        out = self.y_scaler.inverse(ys[:, None])[:, 0]
        return np.maximum(out, 0.0)


def predict(trained: TrainedModel, x_raw) -> float:
    """Seconds-space prediction for one schema-ordered feature vector."""
    x = np.asarray(x_raw, dtype=np.float64)
    if x.shape != (len(trained.schema),):
        raise ValueError(
            f"feature vector has shape {x.shape}, schema expects ({len(trained.schema)},)"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("feature vector must be finite")
    return float(trained.predict_raw_matrix(x[None, :])[0])


@dataclass
class CandidateReport:
    kind: str
    hyperparams: dict
    rmse_val: float
    rmse_test: float
    t_inference: float
    feasible: bool
    params_count: int


@dataclass
class TrainReport:
    mode: str  # "full" or "retrain"
    candidates: list[CandidateReport]
    winner: str
    rmse: float
    rmse_change: float | None = None
    n_train: int = 0
    n_outliers: int = 0
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "winner": self.winner,
            "rmse": self.rmse,
            "rmse_change": self.rmse_change,
            "n_train": self.n_train,
            "n_outliers": self.n_outliers,
            "notes": self.notes,
            "candidates": [
                {
                    "kind": c.kind,
                    "hyperparams": c.hyperparams,
                    "rmse_val": c.rmse_val,
                    "rmse_test": c.rmse_test,
                    "t_inference": c.t_inference,
                    "feasible": c.feasible,
                    "params_count": c.params_count,
                }
                for c in self.candidates
            ],
        }


def _measure_inference(model, x_row: np.ndarray, reps: int = 100) -> float:
    """Median latency of single-sample predictions, warmup excluded."""
    model.predict_scaled(x_row)
    times = np.empty(reps)
    for i in range(reps):
        t0 = time.perf_counter()
        model.predict_scaled(x_row)
        times[i] = time.perf_counter() - t0
    return float(np.median(times))


def full_train(
    candidates: tuple[str, ...],
    split: SplitData,
    mu_rtt: float,
    tau_inference: float = TAU_INFERENCE,
    trained_at_ms: int = 0,
) -> tuple[TrainedModel, TrainReport]:
    """Tune, fit, and score each candidate kind; keep the best feasible one.

    Winner
    minimizes test RMSE among kinds whose measured inference latency fits
    tau_inference * mu_RTT; exact RMSE ties fall to the smaller parameter
    count, then candidate order. Raises NoFeasibleModelError when the budget
    excludes everything.
    """
    if not candidates:
        raise ValueError("candidate set is empty")
    budget = tau_inference * mu_rtt
    reports: list[CandidateReport] = []
    fitted: dict[str, object] = {}
    for kind in candidates:
        if kind not in _MODEL_CLASSES:
            raise ValueError(f"unknown model kind {kind!r}")
        best_val = math.inf
        best_model = None
        best_hp: dict = {}
        for hp in _hyper_grid(kind, split.X_train.shape[0]):
            model = _MODEL_CLASSES[kind](**hp)
            model.fit(split.X_train, split.y_train)
            pred_v = split.y_scaler.inverse(model.predict_scaled(split.X_val)[:, None])[:, 0]
            rv = rmse(np.maximum(pred_v, 0.0), split.y_val_seconds)
            if rv < best_val:
                best_val = rv
                best_model = model
                best_hp = hp
        pred_t = split.y_scaler.inverse(best_model.predict_scaled(split.X_test)[:, None])[:, 0]
        rt = rmse(np.maximum(pred_t, 0.0), split.y_test_seconds)
        t_inf = _measure_inference(best_model, split.X_test[0:1])
        reports.append(
            CandidateReport(
                kind=kind,
                hyperparams=best_hp,
                rmse_val=best_val,
                rmse_test=rt,
                t_inference=t_inf,
                feasible=t_inf <= budget,
                params_count=best_model.params_count(),
            )
        )
        fitted[kind] = best_model

    feasible = [c for c in reports if c.feasible]
    if not feasible:
        raise NoFeasibleModelError(
            f"no candidate model fits the inference budget {budget:.6f}s "
            f"(tau={tau_inference}, mu_RTT={mu_rtt:.3f}s)"
        )
    order = {k: i for i, k in enumerate(candidates)}
    feasible.sort(key=lambda c: (c.rmse_test, c.params_count, order[c.kind]))
    win = feasible[0]
    trained = TrainedModel(
        kind=win.kind,
        model=fitted[win.kind],
        schema=split.schema,
        keep_idx=split.keep_idx,
        x_scaler=split.x_scaler,
        y_scaler=split.y_scaler,
        hyperparams=win.hyperparams,
        rmse=win.rmse_test,
        t_inference=win.t_inference,
        trained_at_ms=trained_at_ms,
    )
    report = TrainReport(
        mode="full",
        candidates=reports,
        winner=win.kind,
        rmse=win.rmse_test,
        n_train=split.X_train.shape[0],
        n_outliers=split.n_outliers,
    )
    return trained, report


def retrain(
    trained: TrainedModel,
    new_X_raw: np.ndarray,
    new_y_seconds: np.ndarray,
    pool_X_raw: np.ndarray,
    pool_y_seconds: np.ndarray,
    test_X_raw: np.ndarray,
    test_y_seconds: np.ndarray,
    mu_rtt: float,
    tau_inference: float = TAU_INFERENCE,
    trained_at_ms: int = 0,
) -> tuple[TrainedModel, TrainReport]:
    """Incorporate new samples while keeping kind and hyperparameters fixed.

    The test set must be the holdout the previous RMSE was measured on so
    the reported change reflects the model, not a resampled split.
    online_linear updates incrementally on the new samples with frozen
    scalers (refitting them would invalidate the accumulated state); other
    kinds refit scalers and weights on the non-holdout pool. An empty batch
    of new samples leaves the model unchanged.
    """
    new_X_raw = np.asarray(new_X_raw, dtype=np.float64).reshape(-1, len(trained.schema))
    new_y_seconds = np.asarray(new_y_seconds, dtype=np.float64)
    if new_X_raw.shape[0] == 0:
        report = TrainReport(
            mode="retrain",
            candidates=[],
            winner=trained.kind,
            rmse=trained.rmse,
            notes=["no new samples; model unchanged"],
        )
        return trained, report

    test_X_raw = np.asarray(test_X_raw, dtype=np.float64).reshape(-1, len(trained.schema))
    test_y_seconds = np.asarray(test_y_seconds, dtype=np.float64)
    if test_X_raw.shape[0] == 0:
        raise ValueError("retrain needs a non-empty holdout")

    n_train = new_X_raw.shape[0]
    n_outliers = 0
    if trained.kind == "online_linear":
        model = trained.model
        Xs = trained.x_scaler.transform(new_X_raw[:, trained.keep_idx])
        ys = trained.y_scaler.transform(new_y_seconds[:, None])[:, 0]
        model.partial_fit(Xs, ys)
        new_trained = TrainedModel(
            kind=trained.kind,
            model=model,
            schema=trained.schema,
            keep_idx=trained.keep_idx,
            x_scaler=trained.x_scaler,
            y_scaler=trained.y_scaler,
            hyperparams=trained.hyperparams,
            rmse=trained.rmse,
            t_inference=trained.t_inference,
            trained_at_ms=trained_at_ms,
        )
    else:
        pool_X_raw = np.asarray(pool_X_raw, dtype=np.float64).reshape(-1, len(trained.schema))
        pool_y_seconds = np.asarray(pool_y_seconds, dtype=np.float64)
        if pool_X_raw.shape[0] < 2:
            raise ValueError("retrain needs at least 2 pool records")
        std = float(pool_y_seconds.std())
        if std > 0:
            keep = np.abs(pool_y_seconds - pool_y_seconds.mean()) / std <= OUTLIER_Z
        else:
            keep = np.ones(pool_X_raw.shape[0], dtype=bool)
        n_outliers = int(pool_X_raw.shape[0] - keep.sum())
        Xp = pool_X_raw[keep]
        yp = pool_y_seconds[keep]
        spans = Xp.max(axis=0) - Xp.min(axis=0)
        keep_idx = np.where(spans > 0)[0]
        x_scaler = MinMaxScaler.fit(Xp[:, keep_idx])
        y_scaler = MinMaxScaler.fit(yp[:, None])
        model = _MODEL_CLASSES[trained.kind](**trained.hyperparams)
        model.fit(x_scaler.transform(Xp[:, keep_idx]), y_scaler.transform(yp[:, None])[:, 0])
        n_train = Xp.shape[0]
        new_trained = TrainedModel(
            kind=trained.kind,
            model=model,
            schema=trained.schema,
            keep_idx=keep_idx,
            x_scaler=x_scaler,
            y_scaler=y_scaler,
            hyperparams=trained.hyperparams,
            rmse=trained.rmse,
            t_inference=trained.t_inference,
            trained_at_ms=trained_at_ms,
        )

    pred_t = new_trained.predict_raw_matrix(test_X_raw)
    rt = rmse(pred_t, test_y_seconds)
    new_trained.rmse = rt
    x_probe = new_trained.x_scaler.transform(test_X_raw[0:1, new_trained.keep_idx])
    t_inf = _measure_inference(new_trained.model, x_probe)
    new_trained.t_inference = t_inf
    report = TrainReport(
        mode="retrain",
        candidates=[
            CandidateReport(
                kind=new_trained.kind,
                hyperparams=new_trained.hyperparams,
                rmse_val=rt,
                rmse_test=rt,
                t_inference=t_inf,
                feasible=t_inf <= tau_inference * mu_rtt,
                params_count=new_trained.model.params_count(),
            )
        ],
        winner=new_trained.kind,
        rmse=rt,
        rmse_change=rmse_change(trained.rmse, rt),
        n_train=n_train,
        n_outliers=n_outliers,
    )
    return new_trained, report


# ---------------------------------------------------------------------------
# Persistence


def save_model(trained: TrainedModel, path: str | Path) -> None:
    path = Path(path)
    payload = {
        "format": FORMAT_MODEL,
        "kind": trained.kind,
        "schema": trained.schema,
        "keep_idx": trained.keep_idx.tolist(),
        "x_scaler": {"lo": trained.x_scaler.lo.tolist(), "span": trained.x_scaler.span.tolist()},
        "y_scaler": {"lo": trained.y_scaler.lo.tolist(), "span": trained.y_scaler.span.tolist()},
        "hyperparams": trained.hyperparams,
        "rmse": trained.rmse,
        "t_inference": trained.t_inference,
        "trained_at_ms": trained.trained_at_ms,
        "params": trained.model.to_params(),
    }
    path.write_text(json.dumps(payload))


def load_model(path: str | Path) -> TrainedModel:
    path = Path(path)
    payload = json.loads(path.read_text())
    if payload.get("format") != FORMAT_MODEL:
        raise ValueError(f"{path}: unsupported model format {payload.get('format')!r}")
    kind = payload["kind"]
    model = _MODEL_CLASSES[kind].from_params(payload["params"])
    return TrainedModel(
        kind=kind,
        model=model,
        schema=[tuple(s) for s in payload["schema"]],
        keep_idx=np.asarray(payload["keep_idx"], dtype=np.int64),
        x_scaler=MinMaxScaler(
            lo=np.asarray(payload["x_scaler"]["lo"], dtype=np.float64),
            span=np.asarray(payload["x_scaler"]["span"], dtype=np.float64),
        ),
        y_scaler=MinMaxScaler(
            lo=np.asarray(payload["y_scaler"]["lo"], dtype=np.float64),
            span=np.asarray(payload["y_scaler"]["span"], dtype=np.float64),
        ),
        hyperparams=payload["hyperparams"],
        rmse=float(payload["rmse"]),
        t_inference=float(payload["t_inference"]),
        trained_at_ms=int(payload["trained_at_ms"]),
    )
