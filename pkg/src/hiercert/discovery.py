"""Data-driven equivalence-class generation.

Label partitions come from two sources: clustering embedding vectors and
reading the block structure out of a confusion matrix. Both paths are
deterministic given a seed; the repartition rule is total, so any
clustering whatsoever yields a valid partition.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng
from .core import LabelPartition
from .errors import (
    DegeneratePartitionError,
    UndefinedSeparationError,
    ValidationError,
)


@dataclass(frozen=True)
class EmbeddingSet:
    """Feature vectors with ground-truth labels and layer provenance."""

    vectors: np.ndarray  # (n, d)
    labels: np.ndarray   # (n,)
    layer_tag: str = ""

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        y = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "labels", y)
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError("embeddings must be a nonempty (n, d) matrix")
        if y.shape != (v.shape[0],):
            raise ValidationError("labels must align with embedding rows")
        if y.size and y.min() < 0:
            raise ValidationError("labels must be nonnegative")


@dataclass(frozen=True)
class KmeansResult:
    assignment: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: tuple[float, ...]
    reseeds: int


def _sq_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d2 = (X * X).sum(1)[:, None] + (C * C).sum(1)[None, :] - 2.0 * X @ C.T
    return np.maximum(d2, 0.0)


def _plus_plus_init(X: np.ndarray, k: int, seed: int) -> np.ndarray:
    n = X.shape[0]
    first = int(rng.integers(seed, rng.STREAM_KMEANS, 0, 1, n)[0])
    chosen = [first]
    d2 = _sq_distances(X, X[[first]])[:, 0]
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            # all remaining points coincide with a centroid; take lowest unused
            for idx in range(n):
                if idx not in chosen:
                    chosen.append(idx)
                    break
            else:
                chosen.append(chosen[-1])
        else:
            u = float(rng.uniforms(seed, rng.STREAM_KMEANS, j, 1)[0])
            idx = int(np.searchsorted(np.cumsum(d2), u * total, side="right"))
            chosen.append(min(idx, n - 1))
        d2 = np.minimum(d2, _sq_distances(X, X[[chosen[-1]]])[:, 0])
    return X[chosen].copy()


def kmeans(embeddings: EmbeddingSet | np.ndarray, k: int, seed: int = 0,
           max_iter: int = 100, tol: float = 1e-8) -> KmeansResult:
    """Lloyd's iteration from seeded k-means++ starts.

    Stops when the largest centroid movement drops below tol or after
    max_iter rounds; clusters that empty out are re-seeded to the point
    farthest from its current centroid. The returned assignment is a fixed
    point of the assignment step for the returned centroids.
    """
    X = embeddings.vectors if isinstance(embeddings, EmbeddingSet) else \
        np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"k must lie in 1..{n}, got {k}")

    C = _plus_plus_init(X, k, seed)
    history: list[float] = []
    reseeds = 0
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_distances(X, C)
        assign = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(n), assign].sum()))
        newC = C.copy()
        reseeded = False
        own = d2[np.arange(n), assign]
        taken: set[int] = set()
        for j in range(k):
            members = assign == j
            if members.any():
                newC[j] = X[members].mean(axis=0)
            else:
                order = np.argsort(-own, kind="stable")
                pick = next(int(i) for i in order if int(i) not in taken)
                taken.add(pick)
                newC[j] = X[pick]
                reseeded = True
                reseeds += 1
        move = float(np.sqrt(((newC - C) ** 2).sum(axis=1)).max())
        C = newC
        if move < tol and not reseeded:
            break
    d2 = _sq_distances(X, C)
    assign = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(n), assign].sum())
    return KmeansResult(assignment=assign, centroids=C, inertia=inertia,
                        n_iter=it, inertia_history=tuple(history), reseeds=reseeds)


def derive_partition(assignment, labels, k: int,
                     n_labels: Optional[int] = None) -> LabelPartition:
    """Turn a clustering into disjoint label classes.

    Each observed label goes to the cluster holding the majority of its
    points (ties to the lower cluster index); when the per-cluster label
    sets are already disjoint this reproduces them exactly. Clusters left
    without any label are dropped; labels absent from the data are appended
    to the first class so the partition always covers the label space.
    """
    assign = np.asarray(assignment, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if assign.shape != y.shape or assign.ndim != 1 or assign.size == 0:
        raise ValidationError("assignment and labels must be equal-length 1-D arrays")
    if assign.min() < 0 or assign.max() >= k:
        raise ValidationError(f"cluster ids must lie in 0..{k - 1}")
    m = int(n_labels) if n_labels is not None else int(y.max()) + 1
    if y.max() >= m:
        raise ValidationError("labels exceed the declared label-space size")

    counts = np.zeros((m, k), dtype=np.int64)
    np.add.at(counts, (y, assign), 1)
    observed = counts.sum(axis=1) > 0
    home = np.argmax(counts, axis=1)  # ties resolve to the lower cluster

    classes: list[list[int]] = [[] for _ in range(k)]
    for label in range(m):
        if observed[label]:
            classes[home[label]].append(label)
    nonempty = [c for c in classes if c]
    missing = [label for label in range(m) if not observed[label]]
    nonempty[0].extend(missing)
    return LabelPartition(tuple(tuple(sorted(c)) for c in nonempty), n_labels=m)


@dataclass(frozen=True)
class SeparationReport:
    silhouette: float
    passed: bool
    n_singletons: int


def cluster_separation_check(assignment, embeddings: EmbeddingSet | np.ndarray,
                             threshold: float = 0.1) -> SeparationReport:
    """Mean silhouette coefficient of a clustering; pass iff >= threshold.

    Points in singleton clusters score 0 by convention and trigger a
    warning; a single-cluster assignment has no defined separation.
    """
    X = embeddings.vectors if isinstance(embeddings, EmbeddingSet) else \
        np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    assign = np.asarray(assignment, dtype=np.int64)
    ids = np.unique(assign)
    if ids.size < 2:
        raise UndefinedSeparationError("separation needs at least 2 clusters")

    dist = np.sqrt(_sq_distances(X, X))
    n = X.shape[0]
    scores = np.zeros(n)
    sizes = {int(c): int((assign == c).sum()) for c in ids}
    n_singletons = sum(1 for v in sizes.values() if v == 1)
    if n_singletons:
        warnings.warn(f"{n_singletons} singleton cluster(s); scoring their points 0")
    for i in range(n):
        own = int(assign[i])
        if sizes[own] == 1:
            scores[i] = 0.0
            continue
        same = assign == own
        a = dist[i, same].sum() / (sizes[own] - 1)
        b = min(dist[i, assign == c].mean() for c in ids if c != own)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    sil = float(scores.mean())
    return SeparationReport(silhouette=sil, passed=sil >= threshold,
                            n_singletons=n_singletons)


def partition_from_confusion(counts, k: int) -> LabelPartition:
    """Group labels by greedy agglomeration of symmetrized confusion mass.

    Starting from singletons, repeatedly merge the pair of groups with the
    largest total cross-confusion until k groups remain; ties go to the
    lexicographically first pair of groups (by smallest member label).
    """
    A = np.asarray(counts, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError("confusion matrix must be square")
    if np.any(A < 0):
        raise ValidationError("confusion counts must be nonnegative")
    m = A.shape[0]
    if not 1 <= k <= m:
        raise ValidationError(f"k must lie in 1..{m}")
    S = A + A.T
    np.fill_diagonal(S, 0.0)
    if S.sum() == 0.0 and k < m:
        raise DegeneratePartitionError("no off-diagonal confusion mass to cluster on")

    groups: list[list[int]] = [[i] for i in range(m)]
    while len(groups) > k:
        best = None
        best_mass = -1.0
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                mass = float(S[np.ix_(groups[a], groups[b])].sum())
                if mass > best_mass:
                    best_mass = mass
                    best = (a, b)
        a, b = best
        groups[a] = sorted(groups[a] + groups[b])
        del groups[b]
        groups.sort(key=lambda g: g[0])
    return LabelPartition(tuple(tuple(g) for g in groups), n_labels=m)
