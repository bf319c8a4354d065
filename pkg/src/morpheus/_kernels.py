"""Hot numeric kernels, JIT-compiled when numba is available.

Every kernel has two implementations: a loop form compiled with
``numba.njit(cache=True)`` and a vectorized pure-numpy fallback. The fallback
is selected when numba cannot be imported or when the environment variable
``MORPHEUS_DISABLE_NUMBA`` is set to ``1``/``true``/``yes``. Both forms agree
to floating-point tolerance (see tests); they are not bitwise identical.

Public dispatch names (``kendall_tau_b``, ``distance_correlation``,
``mi_from_counts``, ``greedy_merge_mi``, ``best_split``, ``knn_predict``,
``tree_predict``) always point at the active path. The ``*_np`` forms remain
importable for benchmarking and cross-checks.
"""

from __future__ import annotations

import math
import os

import numpy as np

ENV_DISABLE = "MORPHEUS_DISABLE_NUMBA"


def _numba_wanted() -> bool:
    return os.environ.get(ENV_DISABLE, "").strip().lower() not in ("1", "true", "yes")


NUMBA_ENABLED = False
if _numba_wanted():
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - exercised via env flag instead
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):  # noqa: D103 - passthrough decorator
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


# ---------------------------------------------------------------------------
# Kendall tau-b


def kendall_tau_b_np(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        return 0.0
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    s = float(np.sum(dx * dy)) / 2.0  # matrix is symmetric; each pair counted twice
    n0 = n * (n - 1) / 2.0
    _, cx = np.unique(x, return_counts=True)
    _, cy = np.unique(y, return_counts=True)
    n1 = float(np.sum(cx * (cx - 1))) / 2.0
    n2 = float(np.sum(cy * (cy - 1))) / 2.0
    denom = math.sqrt((n0 - n1) * (n0 - n2)) if (n0 - n1) > 0 and (n0 - n2) > 0 else 0.0
    if denom == 0.0:
        return 0.0
    return s / denom


@njit(cache=True)
def _kendall_tau_b_jit(x, y):  # pragma: no cover - covered via dispatch
    n = x.shape[0]
    if n < 2:
        return 0.0
    s = 0.0
    tx = 0.0
    ty = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0.0:
                tx += 1.0
            if dy == 0.0:
                ty += 1.0
            if dx != 0.0 and dy != 0.0:
                if (dx > 0.0) == (dy > 0.0):
                    s += 1.0
                else:
                    s -= 1.0
    n0 = n * (n - 1) / 2.0
    a = n0 - tx
    b = n0 - ty
    if a <= 0.0 or b <= 0.0:
        return 0.0
    return s / math.sqrt(a * b)


# ---------------------------------------------------------------------------
# Distance correlation (naive V-statistic, double-centered)


def distance_correlation_np(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a = np.abs(x[:, None] - x[None, :])
    b = np.abs(y[:, None] - y[None, :])
    A = a - a.mean(axis=0)[None, :] - a.mean(axis=1)[:, None] + a.mean()
    B = b - b.mean(axis=0)[None, :] - b.mean(axis=1)[:, None] + b.mean()
    dcov2 = float((A * B).mean())
    dvarx = float((A * A).mean())
    dvary = float((B * B).mean())
    denom = math.sqrt(dvarx * dvary) if dvarx > 0.0 and dvary > 0.0 else 0.0
    if denom == 0.0:
        return 0.0
    r2 = dcov2 / denom
    return math.sqrt(r2) if r2 > 0.0 else 0.0


@njit(cache=True)
def _distance_correlation_jit(x, y):  # pragma: no cover - covered via dispatch
    n = x.shape[0]
    ax = np.zeros(n)
    ay = np.zeros(n)
    ga = 0.0
    gb = 0.0
    for i in range(n):
        sa = 0.0
        sb = 0.0
        for j in range(n):
            sa += abs(x[i] - x[j])
            sb += abs(y[i] - y[j])
        ax[i] = sa / n
        ay[i] = sb / n
        ga += sa
        gb += sb
    ga /= n * n
    gb /= n * n
    dcov2 = 0.0
    dvarx = 0.0
    dvary = 0.0
    for i in range(n):
        for j in range(n):
            A = abs(x[i] - x[j]) - ax[i] - ax[j] + ga
            B = abs(y[i] - y[j]) - ay[i] - ay[j] + gb
            dcov2 += A * B
            dvarx += A * A
            dvary += B * B
    dcov2 /= n * n
    dvarx /= n * n
    dvary /= n * n
    if dvarx <= 0.0 or dvary <= 0.0:
        return 0.0
    r2 = dcov2 / math.sqrt(dvarx * dvary)
    if r2 <= 0.0:
        return 0.0
    return math.sqrt(r2)


# ---------------------------------------------------------------------------
# Mutual information on a labeled grid
#
# MI in nats from joint counts, via MI = (S_joint - S_rows - S_cols + n*ln n)/n
# with S = sum of t*ln t over the respective marginals/cells (0*ln 0 = 0).


def mi_from_counts_np(counts: np.ndarray) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n <= 0:
        return 0.0

    def s(v):
        v = v[v > 0]
        return float(np.sum(v * np.log(v)))

    joint = s(counts.ravel())
    rows = s(counts.sum(axis=1))
    cols = s(counts.sum(axis=0))
    mi = (joint - rows - cols + n * math.log(n)) / n
    return mi if mi > 0.0 else 0.0


@njit(cache=True)
def _mi_from_counts_jit(counts):  # pragma: no cover - covered via dispatch
    a, b = counts.shape
    n = 0.0
    joint = 0.0
    for i in range(a):
        for j in range(b):
            c = counts[i, j]
            n += c
            if c > 0.0:
                joint += c * math.log(c)
    if n <= 0.0:
        return 0.0
    rows = 0.0
    for i in range(a):
        t = 0.0
        for j in range(b):
            t += counts[i, j]
        if t > 0.0:
            rows += t * math.log(t)
    cols = 0.0
    for j in range(b):
        t = 0.0
        for i in range(a):
            t += counts[i, j]
        if t > 0.0:
            cols += t * math.log(t)
    mi = (joint - rows - cols + n * math.log(n)) / n
    if mi > 0.0:
        return mi
    return 0.0


# ---------------------------------------------------------------------------
# Greedy adjacent column merging for the MIC surrogate
#
# Start from `f` fine columns (joint counts f x b), merge adjacent column
# pairs until `target` columns remain, each step keeping the merge that
# maximizes MI against the row variable. Ties resolve to the leftmost pair.
# Returns MI (nats) of the final layout.


def greedy_merge_mi_np(counts: np.ndarray, target: int) -> float:
    cur = np.asarray(counts, dtype=np.float64).copy()
    while cur.shape[0] > target:
        left = cur[:-1]
        right = cur[1:]
        merged = left + right

        def srow(m):
            out = np.where(m > 0, m * np.log(np.where(m > 0, m, 1.0)), 0.0)
            return out.sum(axis=1)

        def stot(v):
            return np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0)), 0.0)

        lt = left.sum(axis=1)
        rt = right.sum(axis=1)
        # change in (S_joint - S_rows) caused by merging rows i and i+1
        delta = (srow(merged) - srow(left) - srow(right)) - (
            stot(lt + rt) - stot(lt) - stot(rt)
        )
        j = int(np.argmax(delta))
        top = cur[:j]
        mid = cur[j] + cur[j + 1]
        bot = cur[j + 2 :]
        cur = np.vstack([top, mid[None, :], bot])
    return mi_from_counts_np(cur)


@njit(cache=True)
def _greedy_merge_mi_jit(counts, target):  # pragma: no cover - dispatch-covered
    f, b = counts.shape
    cur = counts.copy()
    g = f
    while g > target:
        best = -1.0e300
        bestj = 0
        for j in range(g - 1):
            d = 0.0
            lt = 0.0
            rt = 0.0
            for k in range(b):
                lv = cur[j, k]
                rv = cur[j + 1, k]
                m = lv + rv
                if m > 0.0:
                    d += m * math.log(m)
                if lv > 0.0:
                    d -= lv * math.log(lv)
                if rv > 0.0:
                    d -= rv * math.log(rv)
                lt += lv
                rt += rv
            t = lt + rt
            if t > 0.0:
                d -= t * math.log(t)
            if lt > 0.0:
                d += lt * math.log(lt)
            if rt > 0.0:
                d += rt * math.log(rt)
            if d > best:
                best = d
                bestj = j
        for k in range(b):
            cur[bestj, k] += cur[bestj + 1, k]
        for i in range(bestj + 1, g - 1):
            for k in range(b):
                cur[i, k] = cur[i + 1, k]
        g -= 1
    return _mi_from_counts_jit(cur[:g])


# ---------------------------------------------------------------------------
# Regression tree split search (squared loss)
#
# Returns (feature, threshold, gain). gain is the reduction in SSE; a value
# <= 0 means no valid split. Features are scanned in ascending index order and
# only a strictly larger gain replaces the incumbent, so ties are stable.


def best_split_np(X: np.ndarray, y: np.ndarray, min_leaf: int) -> tuple[int, float, float]:
    n, d = X.shape
    total_sum = float(y.sum())
    parent = total_sum * total_sum / n
    best_gain = 0.0
    best_feat = -1
    best_thr = 0.0
    for f in range(d):
        col = X[:, f]
        order = np.argsort(col, kind="stable")
        cs = col[order]
        ys = y[order]
        csum = np.cumsum(ys)
        # candidate split after position i (left size i+1), value change required
        idx = np.arange(n - 1)
        valid = (cs[:-1] < cs[1:]) & (idx + 1 >= min_leaf) & (n - idx - 1 >= min_leaf)
        if not np.any(valid):
            continue
        nl = (idx + 1)[valid].astype(np.float64)
        nr = n - nl
        ls = csum[:-1][valid]
        rs = total_sum - ls
        score = ls * ls / nl + rs * rs / nr - parent
        j = int(np.argmax(score))
        if float(score[j]) > best_gain:
            best_gain = float(score[j])
            pos = idx[valid][j]
            best_thr = 0.5 * (float(cs[pos]) + float(cs[pos + 1]))
            best_feat = f
    return best_feat, best_thr, best_gain


@njit(cache=True)
def _best_split_jit(X, y, min_leaf):  # pragma: no cover - dispatch-covered
    n, d = X.shape
    total_sum = 0.0
    for i in range(n):
        total_sum += y[i]
    parent = total_sum * total_sum / n
    best_gain = 0.0
    best_feat = -1
    best_thr = 0.0
    for f in range(d):
        order = np.argsort(X[:, f], kind="mergesort")
        ls = 0.0
        for p in range(n - 1):
            i = order[p]
            ls += y[i]
            cur = X[order[p], f]
            nxt = X[order[p + 1], f]
            if cur == nxt:
                continue
            nl = p + 1
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            rs = total_sum - ls
            score = ls * ls / nl + rs * rs / nr - parent
            if score > best_gain:
                best_gain = score
                best_feat = f
                best_thr = 0.5 * (cur + nxt)
    return best_feat, best_thr, best_gain


# ---------------------------------------------------------------------------
# Array-form regression tree traversal
#
# Nodes are parallel arrays; feature < 0 marks a leaf whose prediction is
# value[node]. Internal nodes route x[feature] <= threshold to left.


def tree_predict_np(feature, threshold, left, right, value, X) -> np.ndarray:
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    active = feature[node] >= 0
    while np.any(active):
        idx = np.where(active)[0]
        f = feature[node[idx]]
        goes_left = X[idx, f] <= threshold[node[idx]]
        node[idx[goes_left]] = left[node[idx][goes_left]]
        node[idx[~goes_left]] = right[node[idx][~goes_left]]
        active = feature[node] >= 0
    return value[node].astype(np.float64)


@njit(cache=True)
def _tree_predict_jit(feature, threshold, left, right, value, X):  # pragma: no cover
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


# ---------------------------------------------------------------------------
# kNN mean-of-neighbors prediction (Euclidean)


def knn_predict_np(train_X, train_y, query_X, k) -> np.ndarray:
    d2 = ((query_X[:, None, :] - train_X[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return train_y[order].mean(axis=1)


@njit(cache=True)
def _knn_predict_jit(train_X, train_y, query_X, k):  # pragma: no cover
    m = train_X.shape[0]
    q = query_X.shape[0]
    dim = train_X.shape[1]
    out = np.empty(q)
    for i in range(q):
        d2 = np.empty(m)
        for j in range(m):
            s = 0.0
            for c in range(dim):
                diff = query_X[i, c] - train_X[j, c]
                s += diff * diff
            d2[j] = s
        order = np.argsort(d2, kind="mergesort")
        acc = 0.0
        for j in range(k):
            acc += train_y[order[j]]
        out[i] = acc / k
    return out


# ---------------------------------------------------------------------------
# Dispatch

if NUMBA_ENABLED:
    kendall_tau_b = _kendall_tau_b_jit
    distance_correlation = _distance_correlation_jit
    mi_from_counts = _mi_from_counts_jit
    greedy_merge_mi = _greedy_merge_mi_jit
    best_split = _best_split_jit
    tree_predict = _tree_predict_jit
    knn_predict = _knn_predict_jit
else:
    kendall_tau_b = kendall_tau_b_np
    distance_correlation = distance_correlation_np
    mi_from_counts = mi_from_counts_np
    greedy_merge_mi = greedy_merge_mi_np
    best_split = best_split_np
    tree_predict = tree_predict_np
    knn_predict = knn_predict_np

PAIRS = {
    "kendall_tau_b": (kendall_tau_b_np, _kendall_tau_b_jit if NUMBA_ENABLED else None),
    "distance_correlation": (
        distance_correlation_np,
        _distance_correlation_jit if NUMBA_ENABLED else None,
    ),
    "mi_from_counts": (mi_from_counts_np, _mi_from_counts_jit if NUMBA_ENABLED else None),
    "greedy_merge_mi": (greedy_merge_mi_np, _greedy_merge_mi_jit if NUMBA_ENABLED else None),
    "best_split": (best_split_np, _best_split_jit if NUMBA_ENABLED else None),
    "tree_predict": (tree_predict_np, _tree_predict_jit if NUMBA_ENABLED else None),
    "knn_predict": (knn_predict_np, _knn_predict_jit if NUMBA_ENABLED else None),
}
