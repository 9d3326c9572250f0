"""Independent reference implementations used as test oracles.

None of these import the code under test's internals; they recompute the
same quantities by the most direct route available (numpy vector ops,
exhaustive enumeration, a dense linear solve).
"""

import itertools
import math
from collections import Counter

import numpy as np


def density_reference(pixels, tau=0.1, block=16):
    """Edge fraction times mean block coherence, vectorised with numpy."""
    px = np.asarray(pixels, dtype=np.float64)
    gy, gx = np.gradient(px)  # central inside, one-sided at the border
    mag2 = gx ** 2 + gy ** 2
    edge = mag2 > tau ** 2
    h, w = px.shape
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(edge, (gx ** 2 - gy ** 2) / mag2, 0.0)
        s = np.where(edge, 2 * gx * gy / mag2, 0.0)
    bh, bw = -(-h // block), -(-w // block)
    pad = ((0, bh * block - h), (0, bw * block - w))

    def blocksum(a):
        return np.pad(a, pad).reshape(bh, block, bw, block).sum(axis=(1, 3))

    n = blocksum(edge.astype(np.float64))
    cs, ss = blocksum(c), blocksum(s)
    with np.errstate(invalid="ignore", divide="ignore"):
        coh = np.where(n > 0, np.hypot(cs, ss) / n, 0.0)
    edge_density = edge.mean()
    coherence = coh.mean()
    return edge_density, coherence, edge_density * coherence


def brute_force_grid(width, height, pairs):
    """Argmin of |ln(m/n) - ln(w/h)|; ties to more patches, then list order."""
    target = math.log(width / height)
    scored = []
    for i, (m, n) in enumerate(pairs):
        d = abs(math.log(m / n) - target)
        scored.append((d, -(m * n + 1), i))
    best = min(scored, key=lambda t: (t[0], t[1], t[2]))
    # treat float near-ties as exact ties
    ties = [t for t in scored if abs(t[0] - best[0]) <= 1e-12]
    return pairs[min(ties, key=lambda t: (t[1], t[2]))[2]]


def gini_reference(labels):
    counts = Counter(labels)
    n = sum(counts.values())
    return 1.0 - sum((c / n) ** 2 for c in counts.values())


def brute_force_root_split(X, y, min_leaf=1):
    """Every (feature, midpoint) split, scored by weighted child Gini.

    Returns (feature, threshold, score) of the best one with ties broken by
    feature index then threshold, or None if nothing beats the parent.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(y)
    parent = gini_reference(y)
    best = None
    for f in range(X.shape[1]):
        values = sorted(set(X[:, f]))
        for a, b in zip(values, values[1:]):
            thr = (a + b) / 2
            left = [y[i] for i in range(n) if X[i, f] < thr]
            right = [y[i] for i in range(n) if X[i, f] >= thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            score = (len(left) * gini_reference(left) + len(right) * gini_reference(right)) / n
            if score >= parent - 1e-12:
                continue
            if best is None or score < best[2] - 1e-9:
                best = (f, thr, score)
    return best


def solve_affine(p1, p2):
    """(a, b) with y = a*x + b through two points, by a dense solve."""
    A = np.array([[p1[0], 1.0], [p2[0], 1.0]])
    return tuple(np.linalg.solve(A, np.array([p1[1], p2[1]])))


def iter_small_datasets(rng, count, max_n=12, n_classes=3):
    """Random small (X, y) fixtures, some with duplicated feature values."""
    for _ in range(count):
        n = int(rng.integers(2, max_n + 1))
        X = rng.integers(0, 6, size=(n, 2)).astype(np.float64)
        if rng.random() < 0.5:
            X = X + rng.random((n, 2))
        y = [f"c{int(v)}" for v in rng.integers(0, n_classes, size=n)]
        yield X, y


def exhaustive_pairs(limit):
    return [(m, n) for m, n in itertools.product(range(1, limit + 1), repeat=2)]
