"""Clustering algorithms and validation indices used across the pipeline.

Three algorithms are provided: k-medoids under the l1 metric (BUILD
initialization plus PAM swap phase), Gaussian-mixture EM with diagonal (or,
for model comparison, full) covariance, and complete-linkage agglomerative
clustering under l1.  All three are deterministic given the input order and
the seed.  Validation indices are computed in l1-consistent form: cluster
centers for Calinski-Harabasz and Davies-Bouldin are component-wise medians,
and silhouettes use raw l1 pairwise distances.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import ValidationError


@dataclass(frozen=True)
class ClusteringConfig:
    """Shared knobs; ``restarts``/``max_iter`` default per algorithm when None."""

    k: int
    seed: int = 0
    metric: str = "l1"
    restarts: int | None = None
    max_iter: int | None = None
    tol: float = 1e-6

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.restarts is not None and self.restarts < 1:
            raise ValidationError("restarts must be >= 1")
        if self.tol <= 0:
            raise ValidationError("tol must be > 0")
        if self.metric != "l1":
            raise ValidationError("only the l1 metric is supported")


@dataclass
class ClusterAssignment:
    labels: np.ndarray                 # (n,) ints in [0, k)
    centers: np.ndarray                # (k, d) medoids, means, or medians
    objective: float
    medoid_indices: np.ndarray | None = None       # k-medoids only
    responsibilities: np.ndarray | None = None     # EM only, (n, k)
    log_likelihood_trace: np.ndarray | None = None  # EM only, selected run
    bic: float | None = None                       # EM only

    @property
    def k(self) -> int:
        return len(self.centers)


@dataclass(frozen=True)
class MergeTree:
    """Agglomerative merge history: (id_a, id_b, distance) per step.

    Original items are ids 0..n-1; merge t creates id n+t.  Under complete
    linkage the recorded distances are non-decreasing.
    """

    merges: tuple[tuple[int, int, float], ...]
    leaf_count: int

    def cut(self, k: int) -> np.ndarray:
        """Flat labels for k clusters; cluster ids ordered by smallest member."""
        if not 1 <= k <= self.leaf_count:
            raise ValidationError(f"cannot cut {self.leaf_count} leaves into {k} clusters")
        parent = list(range(self.leaf_count + len(self.merges)))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for t, (a, b, _) in enumerate(self.merges[: self.leaf_count - k]):
            new = self.leaf_count + t
            parent[find(a)] = new
            parent[find(b)] = new
        roots: dict[int, list[int]] = {}
        for leaf in range(self.leaf_count):
            roots.setdefault(find(leaf), []).append(leaf)
        ordered = sorted(roots.values(), key=lambda members: members[0])
        labels = np.empty(self.leaf_count, dtype=np.int64)
        for ci, members in enumerate(ordered):
            labels[members] = ci
        return labels

    def to_json(self) -> str:
        nodes: dict[int, dict] = {i: {"id": i, "leaf": True} for i in range(self.leaf_count)}
        node = None
        for t, (a, b, dist) in enumerate(self.merges):
            node = {
                "id": self.leaf_count + t,
                "distance": dist,
                "children": [nodes[a], nodes[b]],
            }
            nodes[self.leaf_count + t] = node
        root = node if node is not None else nodes[0]
        return json.dumps(root, indent=2)

    def to_dot(self, leaf_names: Sequence[str] | None = None) -> str:
        lines = ["digraph dendrogram {", "  rankdir=BT;"]
        for i in range(self.leaf_count):
            name = leaf_names[i] if leaf_names is not None else str(i)
            lines.append(f'  n{i} [shape=box, label="{name}"];')
        for t, (a, b, dist) in enumerate(self.merges):
            new = self.leaf_count + t
            lines.append(f'  n{new} [shape=point, xlabel="{dist:.4f}"];')
            lines.append(f"  n{a} -> n{new};")
            lines.append(f"  n{b} -> n{new};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def pairwise_l1(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("expected a 2-d array of row vectors")
    if len(X) == 0:
        return np.zeros((0, 0))
    return squareform(pdist(X, metric="cityblock"))


def _nearest_two(D_to_medoids: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per point: nearest medoid position, its distance, and second distance."""
    order = np.argsort(D_to_medoids, axis=1, kind="stable")
    n1 = order[:, 0]
    rows = np.arange(len(D_to_medoids))
    d1 = D_to_medoids[rows, n1]
    if D_to_medoids.shape[1] > 1:
        d2 = D_to_medoids[rows, order[:, 1]]
    else:
        d2 = np.full(len(D_to_medoids), np.inf)
    return n1, d1, d2


def _build_init(D: np.ndarray, k: int, scratch: np.ndarray) -> list[int]:
    first = int(np.argmin(D.sum(axis=0)))
    medoids = [first]
    d1 = D[:, first].copy()
    for _ in range(1, k):
        np.subtract(d1[:, None], D, out=scratch)
        np.maximum(scratch, 0.0, out=scratch)
        gains = scratch.sum(axis=0)
        gains[medoids] = -np.inf
        nxt = int(np.argmax(gains))
        medoids.append(nxt)
        d1 = np.minimum(d1, D[:, nxt])
    return medoids


def _pam_swap(
    D: np.ndarray,
    medoids: list[int],
    max_iter: int,
    removal_gain: np.ndarray,
    addition_gain: np.ndarray,
) -> tuple[list[int], float]:
    """Best-improvement swap phase; the two n x n scratch buffers are reused
    across iterations and restarts to keep allocation pressure down."""
    medoids = list(medoids)
    improvement_floor = 1e-12 if D.dtype == np.float64 else 1e-4
    for _ in range(max_iter):
        n1, d1, d2 = _nearest_two(D[:, medoids])
        # addition_gain[i, x] = min(D[i, x] - d1[i], 0): change for point i if
        # x were added and nothing removed.
        np.subtract(D, d1[:, None], out=addition_gain)
        np.minimum(addition_gain, 0.0, out=addition_gain)
        T = addition_gain.sum(axis=0)
        # removal_gain[i, x] = min(D[i, x], d2[i]) - d1[i]: change for point i
        # if its own medoid were removed and x added.
        np.minimum(D, d2[:, None], out=removal_gain)
        np.subtract(removal_gain, d1[:, None], out=removal_gain)
        # Per-medoid sums over member rows, as one-hot matrix products.
        onehot = np.zeros((len(medoids), len(D)), dtype=D.dtype)
        onehot[n1, np.arange(len(D))] = 1.0
        add_by_medoid = onehot @ addition_gain
        remove_by_medoid = onehot @ removal_gain
        best_delta = 0.0
        best_pair: tuple[int, int] | None = None
        for j in range(len(medoids)):
            delta = T - add_by_medoid[j] + remove_by_medoid[j]
            delta[medoids] = np.inf
            x = int(np.argmin(delta))
            if delta[x] < best_delta - improvement_floor:
                best_delta = float(delta[x])
                best_pair = (j, x)
        if best_pair is None:
            break
        medoids[best_pair[0]] = best_pair[1]
    return medoids


def kmedoids_l1(vectors: np.ndarray, config: ClusteringConfig) -> ClusterAssignment:
    """PAM k-medoids under l1: BUILD start, then best-improvement swaps.

    The first restart uses BUILD; remaining restarts use seeded random
    initializations.  The best final objective wins (earliest on ties), so
    the result is deterministic given (input order, seed).
    """
    X = np.asarray(vectors, dtype=np.float64)
    n = len(X)
    k = config.k
    if n < k:
        raise ValidationError(f"need at least k={k} vectors, got {n}")
    restarts = config.restarts if config.restarts is not None else 5
    max_iter = config.max_iter if config.max_iter is not None else 200

    D = pairwise_l1(X)
    # Swap decisions for large instances run in float32 to halve memory
    # traffic; objectives are always re-evaluated in float64.
    Dw = D.astype(np.float32) if n >= 1024 else D
    rng = np.random.default_rng(config.seed)
    scratch_a = np.empty_like(Dw)
    scratch_b = np.empty_like(Dw)
    best: tuple[float, list[int]] | None = None
    for r in range(restarts):
        init = _build_init(Dw, k, scratch_a) if r == 0 \
            else sorted(rng.choice(n, size=k, replace=False).tolist())
        medoids = _pam_swap(Dw, init, max_iter, scratch_a, scratch_b)
        objective = float(D[:, medoids].min(axis=1).sum())
        if best is None or objective < best[0] - 1e-12:
            best = (objective, medoids)
    objective, medoids = best[0], best[1]
    n1, d1, _ = _nearest_two(D[:, medoids])
    return ClusterAssignment(
        labels=n1.astype(np.int64),
        centers=X[medoids].copy(),
        objective=objective,
        medoid_indices=np.asarray(medoids, dtype=np.int64),
    )


def _kmedoidspp_means(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seed means from data points, weighting by l1 distance to chosen seeds."""
    n = len(X)
    chosen = [int(rng.integers(n))]
    dists = np.abs(X - X[chosen[0]]).sum(axis=1)
    for _ in range(1, k):
        total = dists.sum()
        if total <= 0:
            probs = np.full(n, 1.0 / n)
        else:
            probs = dists / total
        nxt = int(rng.choice(n, p=probs))
        chosen.append(nxt)
        dists = np.minimum(dists, np.abs(X - X[nxt]).sum(axis=1))
    return X[chosen].copy()


def _log_gauss_diag(X: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    n, d = X.shape
    out = np.empty((n, len(means)))
    for j in range(len(means)):
        diff2 = (X - means[j]) ** 2
        out[:, j] = -0.5 * (np.log(2.0 * np.pi * variances[j]).sum()
                            + (diff2 / variances[j]).sum(axis=1))
    return out


def _log_gauss_full(X: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    n, d = X.shape
    out = np.empty((n, len(means)))
    for j in range(len(means)):
        L = np.linalg.cholesky(covs[j])
        diff = X - means[j]
        sol = np.linalg.solve(L, diff.T)  # d x n lower-triangular solve
        out[:, j] = -0.5 * (d * np.log(2.0 * np.pi)
                            + 2.0 * np.log(np.diag(L)).sum()
                            + (sol ** 2).sum(axis=0))
    return out


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def gmm_em(
    vectors: np.ndarray,
    config: ClusteringConfig,
    covariance: str = "diagonal",
    variance_floor: float = 1e-6,
) -> ClusterAssignment:
    """Gaussian-mixture EM; log-likelihood is non-decreasing within a run.

    Means are seeded from data points, weights start uniform and variances
    at the pooled per-dimension sample variance.  The best of the restarts
    by final log-likelihood is returned, with its iteration trace and BIC.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise ValidationError("non-finite values in EM input")
    n, d = X.shape
    k = config.k
    if n < k:
        raise ValidationError(f"need at least k={k} vectors, got {n}")
    if covariance not in ("diagonal", "full"):
        raise ValidationError(f"unknown covariance structure {covariance!r}")
    restarts = config.restarts if config.restarts is not None else 10
    max_iter = config.max_iter if config.max_iter is not None else 500

    pooled_var = np.maximum(X.var(axis=0), variance_floor)
    rng = np.random.default_rng(config.seed)
    best: dict | None = None

    for _ in range(restarts):
        seeds = _kmedoidspp_means(X, k, rng)
        # A short hard-assignment (Lloyd) refinement of the seeds starts EM
        # from cluster moments instead of raw points, which avoids most of
        # the degenerate local optima single-point seeding falls into.
        centers = seeds.copy()
        hard = None
        for _ in range(10):
            dist = np.stack([np.abs(X - c).sum(axis=1) for c in centers], axis=1)
            new_hard = np.argmin(dist, axis=1)
            if hard is not None and np.array_equal(new_hard, hard):
                break
            hard = new_hard
            for j in range(k):
                members = X[hard == j]
                if len(members):
                    centers[j] = members.mean(axis=0)
        means = np.empty_like(seeds)
        weights = np.empty(k)
        if covariance == "diagonal":
            variances = np.empty((k, X.shape[1]))
        else:
            covs = np.empty((k, X.shape[1], X.shape[1]))
        for j in range(k):
            members = X[hard == j]
            weights[j] = max(len(members), 1) / n
            if len(members) == 0:
                members = seeds[j][None, :]
            means[j] = members.mean(axis=0)
            if covariance == "diagonal":
                variances[j] = np.maximum(members.var(axis=0), pooled_var * 0.1)
                variances[j] = np.maximum(variances[j], variance_floor)
            else:
                cov = np.cov(members.T, bias=True) if len(members) > 1 \
                    else np.diag(pooled_var)
                covs[j] = np.atleast_2d(cov) + variance_floor * np.eye(X.shape[1])
        weights = weights / weights.sum()
        trace: list[float] = []
        prev_ll = -np.inf
        resp = None
        for _ in range(max_iter):
            if covariance == "diagonal":
                logp = _log_gauss_diag(X, means, variances)
            else:
                logp = _log_gauss_full(X, means, covs)
            weighted = logp + np.log(weights)[None, :]
            norm = _logsumexp(weighted, axis=1)
            ll = float(norm.sum())
            trace.append(ll)
            resp = np.exp(weighted - norm[:, None])
            if abs(ll - prev_ll) <= config.tol * (abs(prev_ll) + 1e-12):
                break
            prev_ll = ll
            nj = resp.sum(axis=0)
            safe_nj = np.maximum(nj, 1e-300)
            weights = np.maximum(nj / n, 1e-300)
            weights = weights / weights.sum()
            new_means = (resp.T @ X) / safe_nj[:, None]
            keep = nj < 1e-300
            if keep.any():
                new_means[keep] = means[keep]
            means = new_means
            if covariance == "diagonal":
                for j in range(k):
                    diff2 = (X - means[j]) ** 2
                    variances[j] = np.maximum(
                        (resp[:, j] @ diff2) / safe_nj[j], variance_floor
                    )
            else:
                for j in range(k):
                    diff = X - means[j]
                    cov = (resp[:, j][:, None] * diff).T @ diff / safe_nj[j]
                    covs[j] = cov + variance_floor * np.eye(d)
        final_ll = trace[-1]
        if best is None or final_ll > best["ll"] + 1e-12:
            best = {
                "ll": final_ll,
                "trace": np.asarray(trace),
                "resp": resp,
                "means": means.copy(),
                "weights": weights.copy(),
            }

    if covariance == "diagonal":
        n_params = k * (2 * d + 1) - 1
    else:
        n_params = (k - 1) + k * d + k * d * (d + 1) // 2
    bic = -2.0 * best["ll"] + n_params * math.log(n)
    labels = np.argmax(best["resp"], axis=1).astype(np.int64)
    return ClusterAssignment(
        labels=labels,
        centers=best["means"],
        objective=best["ll"],
        responsibilities=best["resp"],
        log_likelihood_trace=best["trace"],
        bic=float(bic),
    )


def gmm_em_diagonal(vectors: np.ndarray, config: ClusteringConfig) -> ClusterAssignment:
    return gmm_em(vectors, config, covariance="diagonal")


def agglomerative_complete_l1(
    vectors: np.ndarray, k: int
) -> tuple[ClusterAssignment, MergeTree]:
    """Complete-linkage agglomerative clustering under l1.

    Ties in the closest pair break toward the smallest (id_a, id_b) pair,
    making the merge order deterministic.  Flat labels come from cutting
    the merge tree at k clusters; centers are component-wise medians.
    """
    X = np.asarray(vectors, dtype=np.float64)
    n = len(X)
    if n < 1:
        raise ValidationError("need at least one vector")
    if not 1 <= k <= n:
        raise ValidationError(f"k={k} out of range for n={n}")

    D = pairwise_l1(X)
    dist: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            dist[(i, j)] = float(D[i, j])
    active = set(range(n))
    merges: list[tuple[int, int, float]] = []
    next_id = n
    while len(active) > 1:
        best_pair = min(dist, key=lambda p: (dist[p], p))
        a, b = best_pair
        d_ab = dist.pop(best_pair)
        merges.append((a, b, d_ab))
        active.discard(a)
        active.discard(b)
        for other in sorted(active):
            da = dist.pop((min(a, other), max(a, other)))
            db = dist.pop((min(b, other), max(b, other)))
            dist[(other, next_id)] = max(da, db)
        active.add(next_id)
        next_id += 1

    tree = MergeTree(tuple(merges), n)
    labels = tree.cut(k)
    centers = np.stack([
        np.median(X[labels == c], axis=0) for c in range(int(labels.max()) + 1)
    ]) if n else np.zeros((0, X.shape[1]))
    # Objective: total l1 deviation from cluster medians.
    objective = float(sum(
        np.abs(X[labels == c] - centers[c]).sum() for c in range(len(centers))
    ))
    return ClusterAssignment(labels=labels, centers=centers, objective=objective), tree


def silhouette_l1(X: np.ndarray, labels: np.ndarray, D: np.ndarray | None = None) -> float | None:
    """Mean silhouette under l1; points in singleton clusters contribute 0."""
    labels = np.asarray(labels)
    ks = np.unique(labels)
    if len(ks) < 2:
        return None
    if D is None:
        D = pairwise_l1(X)
    n = len(labels)
    sums = np.stack([D[:, labels == c].sum(axis=1) for c in ks], axis=1)
    counts = np.array([(labels == c).sum() for c in ks])
    pos = {c: i for i, c in enumerate(ks)}
    s = np.zeros(n)
    for i in range(n):
        ci = pos[labels[i]]
        size = counts[ci]
        if size <= 1:
            continue
        a = sums[i, ci] / (size - 1)
        b = np.inf
        for cj in range(len(ks)):
            if cj != ci:
                b = min(b, sums[i, cj] / counts[cj])
        denom = max(a, b)
        s[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(s.mean())


def _cluster_medians(X: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ks = np.unique(labels)
    med = np.stack([np.median(X[labels == c], axis=0) for c in ks])
    sizes = np.array([(labels == c).sum() for c in ks])
    return med, sizes


def davies_bouldin_l1(X: np.ndarray, labels: np.ndarray) -> float | None:
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        return None
    med, sizes = _cluster_medians(X, labels)
    ks = np.unique(labels)
    scatter = np.array([
        np.abs(X[labels == c] - med[i]).sum(axis=1).mean() for i, c in enumerate(ks)
    ])
    k = len(ks)
    worst = np.zeros(k)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            m = np.abs(med[i] - med[j]).sum()
            if m == 0:
                return None
            worst[i] = max(worst[i], (scatter[i] + scatter[j]) / m)
    return float(worst.mean())


def calinski_harabasz_l1(X: np.ndarray, labels: np.ndarray) -> float | None:
    labels = np.asarray(labels)
    ks = np.unique(labels)
    n, k = len(X), len(ks)
    if k < 2 or n == k:
        return None
    med, sizes = _cluster_medians(X, labels)
    overall = np.median(X, axis=0)
    between = float((sizes * np.abs(med - overall).sum(axis=1)).sum())
    within = float(sum(
        np.abs(X[labels == c] - med[i]).sum() for i, c in enumerate(ks)
    ))
    if within == 0:
        return None
    return (between / (k - 1)) / (within / (n - k))


@dataclass(frozen=True)
class CVIRecord:
    k: int
    silhouette: float | None
    davies_bouldin: float | None
    calinski_harabasz: float | None
    bic: float | None = None


@dataclass(frozen=True)
class CVIReport:
    model_kind: str
    records: tuple[CVIRecord, ...]

    def to_csv(self) -> str:
        def fmt(v):
            return "" if v is None else repr(float(v))

        lines = ["k,silhouette,davies_bouldin,calinski_harabasz,bic"]
        for r in self.records:
            lines.append(
                f"{r.k},{fmt(r.silhouette)},{fmt(r.davies_bouldin)},"
                f"{fmt(r.calinski_harabasz)},{fmt(r.bic)}"
            )
        return "\n".join(lines) + "\n"


def cvi_report(
    vectors: np.ndarray,
    assignments: dict[int, ClusterAssignment],
    model_kind: str = "kmedoids",
) -> CVIReport:
    """Validation indices per candidate k, for the operator to pick from.

    Undefined indices (degenerate geometry, singleton-only clusterings)
    are reported as missing rather than fabricated.  BIC is attached only
    for EM assignments, which carry it.
    """
    X = np.asarray(vectors, dtype=np.float64)
    D = pairwise_l1(X)
    records = []
    for k in sorted(assignments):
        a = assignments[k]
        if len(np.unique(a.labels)) < 2:
            records.append(CVIRecord(k, None, None, None, a.bic))
            continue
        records.append(CVIRecord(
            k,
            silhouette_l1(X, a.labels, D=D),
            davies_bouldin_l1(X, a.labels),
            calinski_harabasz_l1(X, a.labels),
            a.bic if model_kind == "em" else None,
        ))
    return CVIReport(model_kind, tuple(records))


def adjusted_rand_index(labels_a: Sequence[int], labels_b: Sequence[int]) -> float:
    """Partition agreement in [-1, 1]; 1.0 iff identical up to relabeling."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValidationError("label sequences must have equal length")
    n = len(a)
    if n == 0:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_cells = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_rows * sum_cols / total if total else 0.0
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))
