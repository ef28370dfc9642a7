"""K-means clustering and partition agreement metrics under repeated subsampling."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # (n,) in 0..k-1
    centroids: np.ndarray  # (k, dims)
    inertia: float
    n_iter: int = 0
    inertia_trace: list = field(default_factory=list)


def _sq_dist(X, C):
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def assign_nearest(X, centroids) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row (lowest index on ties) and its squared distance."""
    d = _sq_dist(np.asarray(X, float), np.asarray(centroids, float))
    lab = np.argmin(d, axis=1)  # argmin returns the first minimum
    return lab, d[np.arange(len(lab)), lab]


def kmeans_pp(X, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = _sq_dist(X, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            i = rng.integers(n)
        else:
            i = int(np.searchsorted(np.cumsum(d2), rng.uniform(0, total), side="right"))
            i = min(i, n - 1)
        centers.append(X[i])
        d2 = np.minimum(d2, _sq_dist(X, X[i][None])[:, 0])
    return np.array(centers, dtype=float)


def kmeans(X, k: int = 6, seed: int = 0, max_iters: int = 300, tol: float = 1e-6) -> ClusterAssignment:
    """Lloyd iterations from a k-means++ start.

    Stops when no centroid moves more than ``tol``.  An empty cluster is
    re-seeded with the point farthest from its current centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < k:
        raise ValueError(f"{n} rows cannot form {k} clusters")
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    C = kmeans_pp(X, k, rng)
    lab, d = assign_nearest(X, C)
    trace = [float(d.sum())]
    it = 0
    for it in range(1, max_iters + 1):
        newC = C.copy()
        counts = np.bincount(lab, minlength=k)
        sums = np.zeros_like(C)
        np.add.at(sums, lab, X)
        filled = counts > 0
        newC[filled] = sums[filled] / counts[filled, None]
        for j in np.flatnonzero(~filled):
            far = int(np.argmax(d))
            newC[j] = X[far]
            d[far] = 0.0
        shift = np.sqrt(((newC - C) ** 2).sum(1)).max()
        C = newC
        lab, d = assign_nearest(X, C)
        inertia = float(d.sum())
        if inertia > trace[-1] * (1 + 1e-12) + 1e-12:
            raise AssertionError(f"inertia increased at iteration {it}: {trace[-1]} -> {inertia}")
        trace.append(inertia)
        if shift < tol:
            break
    return ClusterAssignment(lab, C, trace[-1], it, trace)


def contingency(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("partitions differ in length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    m = np.zeros((ai.max() + 1 if ai.size else 0, bi.max() + 1 if bi.size else 0), dtype=np.int64)
    np.add.at(m, (ai, bi), 1)
    return m


def purity(assign, labels) -> float:
    m = contingency(assign, labels)
    return float(m.max(axis=1).sum() / m.sum())


def mutual_information(assign, labels) -> float:
    """Mutual information in nats."""
    m = contingency(assign, labels).astype(np.float64)
    p = m / m.sum()
    pi = p.sum(1, keepdims=True)
    pj = p.sum(0, keepdims=True)
    nz = p > 0
    return float(max(0.0, np.sum(p[nz] * np.log(p[nz] / (pi @ pj)[nz]))))


def adjusted_rand_index(assign, labels) -> float:
    m = contingency(assign, labels)
    n = m.sum()
    sum_ij = comb(m, 2).sum()
    sum_a = comb(m.sum(1), 2).sum()
    sum_b = comb(m.sum(0), 2).sum()
    total = comb(n, 2)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


@dataclass
class MetricsReport:
    purity: np.ndarray  # per run
    ari: np.ndarray
    mi: np.ndarray

    @property
    def mean(self) -> dict:
        return {"purity": float(np.mean(self.purity)), "ari": float(np.mean(self.ari)), "mi": float(np.mean(self.mi))}

    @property
    def runs(self) -> int:
        return len(self.purity)


def run_seed(seed: int, run: int) -> int:
    return int(np.random.SeedSequence([seed, run]).generate_state(1, np.uint64)[0])


def evaluate_protocol(X, labels, runs: int = 100, fraction: float = 0.5, k: int = 6, seed: int = 0) -> MetricsReport:
    """Fit k-means on random subsets and score the assignment of every row."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(X)
    if n < 2 * k:
        raise ValueError(f"need at least {2 * k} rows, got {n}")
    m = int(round(fraction * n))
    if m < k:
        raise ValueError(f"subset of {m} rows is smaller than k={k}")
    pur, ari, mi = [], [], []
    for r in range(runs):
        s = run_seed(seed, r)
        rng = np.random.default_rng(s)
        idx = np.arange(n) if m == n else np.sort(rng.choice(n, size=m, replace=False))
        fit = kmeans(X[idx], k, seed=s)
        lab, _ = assign_nearest(X, fit.centroids)
        pur.append(purity(lab, labels))
        ari.append(adjusted_rand_index(lab, labels))
        mi.append(mutual_information(lab, labels))
    return MetricsReport(np.array(pur), np.array(ari), np.array(mi))


def write_runs_csv(rows, path: str | os.PathLike) -> None:
    """``rows`` of (method, input, MetricsReport) as one CSV line per run."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "input_modalities", "run", "purity", "ari", "mi"])
        for method, inp, rep in rows:
            for r in range(rep.runs):
                w.writerow([method, inp, r, f"{rep.purity[r]:.10f}", f"{rep.ari[r]:.10f}", f"{rep.mi[r]:.10f}"])
