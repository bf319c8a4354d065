"""Naive reference implementations the test suite checks the package against.

Everything here trades speed for obviousness: plain loops, direct textbook
formulas, exact rational arithmetic where possible. Nothing imports from the
package under test.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


# ---------------------------------------------------------------------------
# Correlation references


def pearson_ref(x, y) -> float:
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    num = sum((x[i] - mx) * (y[i] - my) for i in range(n))
    dx = sum((x[i] - mx) ** 2 for i in range(n))
    dy = sum((y[i] - my) ** 2 for i in range(n))
    if dx == 0 or dy == 0:
        return 0.0
    return num / math.sqrt(dx * dy)


def ranks_ref(v) -> list[float]:
    """1-based average ranks via a sorted copy and per-value positions."""
    order = sorted(range(len(v)), key=lambda i: v[i])
    ranks = [0.0] * len(v)
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        avg = (i + 1 + j + 1) / 2.0
        for t in range(i, j + 1):
            ranks[order[t]] = avg
        i = j + 1
    return ranks


def spearman_ref(x, y) -> float:
    return pearson_ref(ranks_ref(list(x)), ranks_ref(list(y)))


def kendall_ref(x, y) -> float:
    n = len(x)
    concordant = discordant = ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0 and dy == 0:
                ties_x += 1
                ties_y += 1
            elif dx == 0:
                ties_x += 1
            elif dy == 0:
                ties_y += 1
            elif (dx > 0) == (dy > 0):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) / 2
    denom = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denom == 0:
        return 0.0
    return (concordant - discordant) / denom


def dcor_ref(x, y) -> float:
    n = len(x)
    a = [[abs(x[i] - x[j]) for j in range(n)] for i in range(n)]
    b = [[abs(y[i] - y[j]) for j in range(n)] for i in range(n)]

    def center(m):
        row = [sum(r) / n for r in m]
        col = [sum(m[i][j] for i in range(n)) / n for j in range(n)]
        tot = sum(row) / n
        return [[m[i][j] - row[i] - col[j] + tot for j in range(n)] for i in range(n)]

    A = center(a)
    B = center(b)
    dcov2 = sum(A[i][j] * B[i][j] for i in range(n) for j in range(n)) / (n * n)
    dvarx = sum(A[i][j] ** 2 for i in range(n) for j in range(n)) / (n * n)
    dvary = sum(B[i][j] ** 2 for i in range(n) for j in range(n)) / (n * n)
    if dvarx <= 0 or dvary <= 0:
        return 0.0
    r2 = dcov2 / math.sqrt(dvarx * dvary)
    return math.sqrt(r2) if r2 > 0 else 0.0


def mi_ref(rows: list[list[float]]) -> float:
    """MI in nats from a joint count table, direct p*ln(p/(pq)) form."""
    n = sum(sum(r) for r in rows)
    if n <= 0:
        return 0.0
    row_tot = [sum(r) for r in rows]
    col_tot = [sum(rows[i][j] for i in range(len(rows))) for j in range(len(rows[0]))]
    mi = 0.0
    for i, r in enumerate(rows):
        for j, c in enumerate(r):
            if c > 0:
                p = c / n
                mi += p * math.log(p / ((row_tot[i] / n) * (col_tot[j] / n)))
    return mi if mi > 0 else 0.0


def equifreq_ref(v, nbins: int) -> list[int]:
    """Stable-rank equal-frequency labels: label = floor(rank*nbins/n)."""
    order = sorted(range(len(v)), key=lambda i: (v[i], i))
    rank = [0] * len(v)
    for pos, idx in enumerate(order):
        rank[idx] = pos
    return [min((r * nbins) // len(v), nbins - 1) for r in rank]


def mic_dir_ref(u, v, a: int, b: int) -> float:
    f = min(15, 2 * a)
    ul = equifreq_ref(u, f)
    vl = equifreq_ref(v, b)
    rows = [[0.0] * b for _ in range(f)]
    for i in range(len(u)):
        rows[ul[i]][vl[i]] += 1.0
    while len(rows) > a:
        best_mi = -math.inf
        best_j = 0
        for j in range(len(rows) - 1):
            cand = (
                rows[:j]
                + [[rows[j][k] + rows[j + 1][k] for k in range(b)]]
                + rows[j + 2 :]
            )
            m = mi_ref(cand)
            if m > best_mi:
                best_mi = m
                best_j = j
        rows = (
            rows[:best_j]
            + [[rows[best_j][k] + rows[best_j + 1][k] for k in range(b)]]
            + rows[best_j + 2 :]
        )
    return mi_ref(rows) / math.log(min(a, b))


def mic_ref(x, y) -> float:
    n = len(x)
    bound = max(4.0, n**0.6)
    best = 0.0
    for a in range(2, 16):
        if a * 2 > bound:
            break
        for b in range(2, 16):
            if a * b > bound:
                break
            best = max(best, mic_dir_ref(x, y, a, b), mic_dir_ref(y, x, b, a))
    return min(best, 1.0)


# ---------------------------------------------------------------------------
# Model references


def knn_ref(train_X, train_y, query, k: int) -> float:
    """Mean target of the k nearest rows; ties broken by training order."""
    d2 = []
    for j in range(len(train_X)):
        s = 0.0
        for c in range(len(query)):
            s += (query[c] - train_X[j][c]) ** 2
        d2.append((s, j))
    d2.sort()
    return sum(train_y[j] for _, j in d2[:k]) / k


def best_split_ref(X, y, min_leaf: int) -> tuple[int, float, float]:
    """Exhaustive SSE-reduction split search, midpoint thresholds."""
    n = len(y)

    def sse(idx):
        if not idx:
            return 0.0
        m = sum(y[i] for i in idx) / len(idx)
        return sum((y[i] - m) ** 2 for i in idx)

    parent = sse(range(n))
    best = (-1, 0.0, 0.0)
    for f in range(len(X[0])):
        values = sorted(set(X[i][f] for i in range(n)))
        for lo, hi in zip(values, values[1:]):
            thr = 0.5 * (lo + hi)
            left = [i for i in range(n) if X[i][f] <= thr]
            right = [i for i in range(n) if X[i][f] > thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            gain = parent - sse(left) - sse(right)
            if gain > best[2]:
                best = (f, thr, gain)
    return best


def tree_walk_ref(feature, threshold, left, right, value, x) -> float:
    node = 0
    while feature[node] >= 0:
        node = left[node] if x[feature[node]] <= threshold[node] else right[node]
    return float(value[node])


# ---------------------------------------------------------------------------
# Dataset references


def binom_cdf_frac(k: int, n: int) -> Fraction:
    """P(X <= k) for X ~ Binomial(n, 1/2), exact."""
    if k < 0:
        return Fraction(0)
    return Fraction(sum(math.comb(n, i) for i in range(k + 1)), 2**n)


def median_ci_ranks_ref(n: int, alpha_pct: float) -> tuple[int, int] | None:
    half = Fraction(100 - Fraction(alpha_pct).limit_denominator(10**6), 200)
    d = 0
    for cand in range(1, n):
        if binom_cdf_frac(cand - 1, n) <= half:
            d = cand
        else:
            break
    if d == 0 or n - d + 1 <= d:
        return None
    return d, n - d + 1


def fd_layout_ref(values) -> tuple[float, int]:
    """(bin width, bin count) under the 2*IQR/N^(1/3) rule."""
    v = sorted(values)
    n = len(v)

    def quantile(q):
        pos = (n - 1) * q
        lo = math.floor(pos)
        hi = math.ceil(pos)
        return v[lo] * (1 - (pos - lo)) + v[hi] * (pos - lo)

    iqr = quantile(0.75) - quantile(0.25)
    h = 2.0 * iqr / n ** (1.0 / 3.0)
    if h <= 0:
        return 0.0, 1
    span = v[-1] - v[0]
    return h, max(1, math.ceil(span / h))


# ---------------------------------------------------------------------------
# Feature references (independent formulas)


def features_ref(values) -> dict[str, float]:
    v = np.asarray(values, dtype=np.float64)
    n = v.shape[0]
    out = {
        "mean": float(np.mean(v)),
        "min": float(np.min(v)),
        "max": float(np.max(v)),
        "median": float(np.median(v)),
        "last_value": float(v[-1]),
        "energy": float(np.sum(v * v)),
    }
    if n < 2:
        return out
    out["std"] = float(np.std(v))
    out["slope"] = float(np.polyfit(np.arange(n, dtype=np.float64), v, 1)[0])
    out["iqr"] = float(np.percentile(v, 75) - np.percentile(v, 25))
    dev = v - v.mean()
    m2 = float(np.mean(dev**2))
    if m2 > 0:
        out["skewness"] = float(np.mean(dev**3)) / m2**1.5
        out["kurtosis"] = float(np.mean(dev**4)) / m2**2 - 3.0
        out["autocorr_lag1"] = float(np.dot(dev[:-1], dev[1:])) / (n * m2)
    return out


# ---------------------------------------------------------------------------
# Frozen constants computed by the standalone reference script before the
# implementations were written.

DCOR_GOLDEN_X2 = 0.515923456858933  # x = (-2,-1,0,1,2), y = x**2
FD_EXAMPLE_WIDTH = 4.678428381140586  # rtts = [10,12,14,16,100]
FD_EXAMPLE_BINS = 20
MEDIAN_CI_RANKS_100_95 = (40, 61)
SINUSOID_AC1 = math.cos(2 * math.pi / 300)  # 300 samples over one 60 s period
LOGNORMAL_1_1 = (-math.log(2) / 2, math.sqrt(math.log(2)))
COV_10_20 = 1.0 / 3.0
