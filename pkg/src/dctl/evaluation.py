"""Downstream evaluation helpers: KNN, k-means with three seedings, ARI.

Everything here is deterministic given the stated seed and breaks ties by
the smallest index, so repeated runs reproduce bit-identical results.
"""

import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "ClusteringResult",
    "knn_classify",
    "nearest_centroid_classify",
    "accuracy",
    "adjusted_rand_index",
    "kmeans",
    "timed",
]

KMEANS_INITS = ("kmeanspp", "random", "pca")


def _check_features(features, name="features"):
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _check_labels(labels, count, name="labels"):
    arr = np.asarray(labels)
    if arr.shape != (count,):
        raise ValueError(f"{name} must be a ({count},) array, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        rounded = np.rint(arr)
        if not np.all(np.abs(arr - rounded) < 1e-9):
            raise ValueError(f"{name} must be integers")
        arr = rounded
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise ValueError(f"{name} must be >= 0")
    return arr


def knn_classify(train_features, train_labels, test_features, k):
    """Euclidean k-nearest-neighbour majority vote.

    Vote ties go to the smallest label index; neighbour ranking uses a
    stable sort so equal distances resolve to the earliest training row.
    """
    train = _check_features(train_features, "train_features")
    labels = _check_labels(train_labels, train.shape[0], "train_labels")
    test = _check_features(test_features, "test_features")
    if test.shape[1] != train.shape[1]:
        raise ValueError("train and test feature dimensions differ")
    k = int(k)
    if not 1 <= k <= train.shape[0]:
        raise ValueError(f"k must be in [1, {train.shape[0]}], got {k}")
    dists = cdist(test, train)
    order = np.argsort(dists, axis=1, kind="stable")[:, :k]
    votes = labels[order]
    out = np.empty(test.shape[0], dtype=np.int64)
    for i in range(test.shape[0]):
        out[i] = np.bincount(votes[i]).argmax()
    return out


def nearest_centroid_classify(train_features, train_labels, test_features):
    """Assign each test row the label of the nearest class mean."""
    train = _check_features(train_features, "train_features")
    labels = _check_labels(train_labels, train.shape[0], "train_labels")
    test = _check_features(test_features, "test_features")
    if test.shape[1] != train.shape[1]:
        raise ValueError("train and test feature dimensions differ")
    classes = np.unique(labels)
    centroids = np.stack([train[labels == c].mean(axis=0) for c in classes])
    nearest = cdist(test, centroids).argmin(axis=1)
    return classes[nearest]


def accuracy(predicted, truth):
    """Fraction of agreeing entries."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape or predicted.ndim != 1 or predicted.size == 0:
        raise ValueError("predicted and truth must be non-empty 1-D arrays of equal length")
    return float(np.mean(predicted == truth))


def _comb2(values):
    values = values.astype(object)  # exact integer arithmetic
    return int(np.sum(values * (values - 1) // 2))


def adjusted_rand_index(labels_a, labels_b):
    """Adjusted Rand index between two labelings of the same items.

    Chance-corrected pair-counting agreement: (RI - E[RI]) / (max RI -
    E[RI]) computed in exact integer arithmetic up to the final division.
    Degenerate case: when both labelings are the same trivial partition
    (all one cluster, or all singletons) the correction denominator is
    zero and the value is 1.0 by convention; a single-class truth against
    any proper split comes out exactly 0.
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise ValueError("labelings must be non-empty 1-D arrays of equal length")
    m = a.size
    _, inv_a = np.unique(a, return_inverse=True)
    _, inv_b = np.unique(b, return_inverse=True)
    contingency = np.zeros((inv_a.max() + 1, inv_b.max() + 1), dtype=np.int64)
    np.add.at(contingency, (inv_a, inv_b), 1)
    sum_cells = _comb2(contingency)
    sum_a = _comb2(contingency.sum(axis=1))
    sum_b = _comb2(contingency.sum(axis=0))
    total = m * (m - 1) // 2
    numerator = 2 * (sum_cells * total - sum_a * sum_b)
    denominator = total * (sum_a + sum_b) - 2 * sum_a * sum_b
    if denominator == 0:
        return 1.0
    return numerator / denominator


@dataclass
class ClusteringResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    elapsed_seconds: float
    inertia_trace: np.ndarray


def _sq_dists(x, centroids):
    d = cdist(x, centroids)
    return d * d


def _seed_kmeanspp(x, n_clusters, rng):
    m = x.shape[0]
    chosen = [int(rng.integers(m))]
    d2 = _sq_dists(x, x[chosen[-1]][None, :])[:, 0]
    for _ in range(1, n_clusters):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(m, p=d2 / total))
        else:  # all remaining points coincide with chosen seeds
            candidates = np.setdiff1d(np.arange(m), np.array(chosen))
            nxt = int(rng.choice(candidates))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(x, x[nxt][None, :])[:, 0])
    return x[chosen].copy()


def _seed_pca(x, n_clusters, rng):
    if n_clusters == 1:
        return _seed_kmeanspp(x, 1, rng)
    mean = x.mean(axis=0)
    centered = x - mean
    _, _, vh = np.linalg.svd(centered, full_matrices=False)
    rank = min(n_clusters - 1, vh.shape[0])
    basis = vh[:rank]
    scores = centered @ basis.T
    seeds = _seed_kmeanspp(scores, n_clusters, rng)
    return mean + seeds @ basis


def kmeans(features, n_clusters, init="kmeanspp", seed=0, max_iters=300, tol=1e-6):
    """Lloyd's algorithm with a choice of seeding strategy.

    init is one of "kmeanspp" (distance-squared weighted seeding),
    "random" (distinct data rows) or "pca" (kmeans++ seeding inside the
    span of the first n_clusters - 1 principal directions, centroids
    lifted back).  A cluster that empties is re-seeded at the point
    farthest from its assigned centroid (deterministic).  Iterates until
    the largest centroid shift drops below ``tol`` or ``max_iters``
    passes; the recorded inertia trace never increases.
    """
    x = _check_features(features)
    m = x.shape[0]
    n_clusters = int(n_clusters)
    if not 1 <= n_clusters <= m:
        raise ValueError(f"n_clusters must be in [1, {m}], got {n_clusters}")
    if init not in KMEANS_INITS:
        raise ValueError(f"init must be one of {KMEANS_INITS}, got {init!r}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    if init == "kmeanspp":
        centroids = _seed_kmeanspp(x, n_clusters, rng)
    elif init == "random":
        centroids = x[rng.choice(m, size=n_clusters, replace=False)].copy()
    else:
        centroids = _seed_pca(x, n_clusters, rng)

    def assign(cents):
        d2 = _sq_dists(x, cents)
        labels = d2.argmin(axis=1)
        for c in range(n_clusters):  # re-seed empty clusters deterministically
            if not np.any(labels == c):
                point_d2 = d2[np.arange(m), labels]
                far = int(point_d2.argmax())
                cents[c] = x[far]
                d2[:, c] = _sq_dists(x, cents[c][None, :])[:, 0]
                labels = d2.argmin(axis=1)
        return labels, float(d2[np.arange(m), labels].sum())

    trace = []
    for _ in range(max_iters):
        labels, inertia = assign(centroids)
        trace.append(inertia)
        updated = centroids.copy()
        for c in range(n_clusters):
            updated[c] = x[labels == c].mean(axis=0)
        shift = float(np.linalg.norm(updated - centroids, axis=1).max())
        centroids = updated
        if shift < tol:
            break
    labels, inertia = assign(centroids)
    trace.append(inertia)
    elapsed = time.perf_counter() - started
    return ClusteringResult(
        assignments=labels,
        centroids=centroids,
        inertia=inertia,
        elapsed_seconds=elapsed,
        inertia_trace=np.asarray(trace),
    )


def timed(operation, *args, **kwargs):
    """Run ``operation(*args, **kwargs)`` and return (result, elapsed_seconds).

    Uses the monotonic high-resolution clock; report timings at millisecond
    precision.
    """
    started = time.perf_counter()
    result = operation(*args, **kwargs)
    return result, time.perf_counter() - started
