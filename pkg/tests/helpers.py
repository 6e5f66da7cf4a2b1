"""Shared test oracles and synthetic data generators.

Oracles here are deliberately independent of the library's own numerics:
the quantile oracle bisects the erfc-based CDF, the binomial bound oracle
bisects an exact log-space tail sum, and separability is certified by a
linear-programming feasibility check.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linprog

from hiercert import rng


def quantile_oracle(q: float) -> float:
    """Standard-normal quantile by bisection on the erfc-based CDF."""
    if q > 0.5:
        return -quantile_oracle(1.0 - q)
    lo, hi = -9.5, 0.5
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(-mid / math.sqrt(2.0)) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def binom_tail_ge(k: int, n: int, p: float) -> float:
    """P(Binomial(n, p) >= k), exact log-space summation."""
    if k <= 0:
        return 1.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    i = np.arange(k, n + 1, dtype=np.float64)
    log_terms = (
        math.lgamma(n + 1)
        - np.array([math.lgamma(v + 1) for v in i])
        - np.array([math.lgamma(n - v + 1) for v in i])
        + i * math.log(p)
        + (n - i) * math.log1p(-p)
    )
    peak = log_terms.max()
    return float(min(1.0, math.exp(peak) * np.exp(log_terms - peak).sum()))


def cp_lower_oracle(k: int, n: int, alpha: float) -> float:
    """Clopper-Pearson lower bound by bisection on the exact binomial tail."""
    if k == 0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if binom_tail_ge(k, n, mid) < alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def linearly_separable(X: np.ndarray, y: np.ndarray, margin: float = 1e-6) -> bool:
    """LP feasibility: does some (w, b) satisfy s_i (w.x_i + b) >= margin?"""
    X = np.asarray(X, dtype=np.float64)
    signs = np.where(np.asarray(y) == np.asarray(y).max(), 1.0, -1.0)
    n, d = X.shape
    # variables: w (d), b (1); constraints: -s_i*(w.x_i + b) <= -margin
    A_ub = -signs[:, None] * np.hstack([X, np.ones((n, 1))])
    b_ub = -np.full(n, margin)
    res = linprog(c=np.zeros(d + 1), A_ub=A_ub, b_ub=b_ub,
                  bounds=[(-1e3, 1e3)] * (d + 1), method="highs")
    return bool(res.success)


def make_blobs(seed: int, n_per: int, centers, spread: float = 0.3):
    """Gaussian blobs, one label per center, via the package's counter rng."""
    pts, ys = [], []
    for i, c in enumerate(centers):
        z = rng.normals(seed, 600 + i, 0, n_per * 2).reshape(n_per, 2) * spread
        pts.append(z + np.asarray(c, dtype=np.float64))
        ys.append(np.full(n_per, i, dtype=np.int64))
    return np.vstack(pts), np.concatenate(ys)


def synth_prob_dataset(seed: int, n: int, m: int, boost: float = 6.0) -> np.ndarray:
    """Random probability vectors with a boosted top class (Dirichlet-style)."""
    u = rng.uniforms(seed, 800, 0, n * m).reshape(n, m)
    g = -np.log(u)
    tops = rng.integers(seed, 801, 0, n, m)
    g[np.arange(n), tops] *= boost
    return g / g.sum(axis=1, keepdims=True)


def random_subset_containing(seed: int, stream: int, idx: int, m: int,
                             anchor: int) -> tuple[int, ...]:
    """Random label subset of size >= 1 guaranteed to contain `anchor`."""
    u = rng.uniforms(seed, stream, idx * (m + 1), m + 1)
    size = 1 + int(u[m] * m) % m
    order = np.argsort(u[:m], kind="stable")
    subset = set(int(v) for v in order[:size])
    subset.add(int(anchor))
    return tuple(sorted(subset))
