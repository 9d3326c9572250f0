"""Combined timing + cache attack: a shallow, fully deterministic Gini tree.

The tree works on the two leakage features ``(time_s, llc_misses)``. Splits are
midpoints between consecutive distinct feature values, ``feature < threshold``
goes left, and every tie has a fixed resolution. Refitting on the same data
therefore yields the same tree down to the exported bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import ConfigurationError
from .hwmodel import Observation

FEATURES = ("time_s", "llc_misses")
TIME, LLC = 0, 1
_SCORE_TOL = 1e-9

SCENARIO_LABELS = ("MedicalReport", "ChestXRay", "EncryptedData", "TechSchematic")


@dataclass(frozen=True)
class LabeledSample:
    features: Observation
    label: str


@dataclass(frozen=True)
class Leaf:
    label: str
    histogram: tuple[tuple[str, int], ...]

    @property
    def n_samples(self) -> int:
        return sum(c for _, c in self.histogram)


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]


def _depth(node: Node) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(_depth(node.left), _depth(node.right))


def _leaves(node: Node):
    if isinstance(node, Leaf):
        yield node
    else:
        yield from _leaves(node.left)
        yield from _leaves(node.right)


@dataclass(frozen=True)
class DecisionTree:
    root: Node
    classes: tuple[str, ...]
    max_depth: int
    min_leaf: int

    def depth(self) -> int:
        return _depth(self.root)

    def leaves(self) -> list[Leaf]:
        return list(_leaves(self.root))

    def splits(self) -> list[tuple[int, Split]]:
        """``(depth, node)`` for every internal node, pre-order."""
        out = []
        stack = [(0, self.root)]
        while stack:
            d, node = stack.pop()
            if isinstance(node, Split):
                out.append((d, node))
                stack.append((d + 1, node.right))
                stack.append((d + 1, node.left))
        return out

    def predict_one(self, x: Sequence[float]) -> str:
        node = self.root
        while isinstance(node, Split):
            node = node.left if x[node.feature] < node.threshold else node.right
        return node.label

    def export_text(self, indent: str = "    ") -> str:
        lines = []

        def walk(node, depth):
            pad = indent * depth
            if isinstance(node, Leaf):
                hist = ", ".join(f"{lab}: {cnt}" for lab, cnt in node.histogram)
                lines.append(f"{pad}leaf: {node.label} [{hist}]")
            else:
                lines.append(f"{pad}{FEATURES[node.feature]} < {node.threshold:.10g}")
                walk(node.left, depth + 1)
                walk(node.right, depth + 1)

        walk(self.root, 0)
        return "\n".join(lines) + "\n"


def gini(labels: Iterable) -> float:
    counts = Counter(labels)
    n = sum(counts.values())
    if n == 0:
        raise ConfigurationError("gini impurity of an empty multiset is undefined")
    return 1.0 - sum((c / n) ** 2 for c in counts.values())


def _split_candidates(x: np.ndarray, onehot: np.ndarray, min_leaf: int):
    """Thresholds and purity scores for every admissible split on one feature.

    The score is ``sum(cL^2)/nL + sum(cR^2)/nR``. Weighted child Gini equals
    ``1 - score / n``, so larger is better.
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    n = xs.size
    left = np.cumsum(onehot[order], axis=0)[:-1]  # left counts after i+1 samples
    total = onehot.sum(axis=0)
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    ok = (xs[1:] != xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not ok.any():
        return np.empty(0), np.empty(0)
    left = left[ok]
    right = total[None, :] - left
    nl, nr = n_left[ok], n_right[ok]
    score = (left ** 2).sum(axis=1) / nl + (right ** 2).sum(axis=1) / nr
    lo, hi = xs[:-1][ok], xs[1:][ok]
    thr = (lo + hi) / 2.0
    # adjacent floats: keep the lower value on the left branch
    thr = np.where(thr <= lo, hi, thr)
    return thr, score


def best_split(X: np.ndarray, y: np.ndarray, n_classes: int, min_leaf: int = 1):
    """Best ``(feature, threshold, score)`` by weighted Gini, or None.

    Ties go to the lower feature index, then the smaller threshold.
    """
    onehot = np.eye(n_classes)[y]
    thresholds, scores, feats = [], [], []
    for f in range(X.shape[1]):
        thr, score = _split_candidates(X[:, f], onehot, min_leaf)
        thresholds.append(thr)
        scores.append(score)
        feats.append(np.full(thr.size, f))
    scores = np.concatenate(scores)
    if scores.size == 0:
        return None
    thresholds = np.concatenate(thresholds)
    feats = np.concatenate(feats)
    best = scores.max()
    i = int(np.flatnonzero(scores >= best - _SCORE_TOL)[0])
    return int(feats[i]), float(thresholds[i]), float(scores[i])


def _make_leaf(y: np.ndarray, classes: Sequence[str]) -> Leaf:
    counts = np.bincount(y, minlength=len(classes))
    # argmax keeps the first maximum; classes are sorted, so ties pick the smallest label
    label = classes[int(np.argmax(counts))]
    hist = tuple((classes[k], int(c)) for k, c in enumerate(counts) if c > 0)
    return Leaf(label, hist)


def _grow(X, y, classes, depth, max_depth, min_leaf) -> Node:
    counts = np.bincount(y, minlength=len(classes))
    if depth >= max_depth or np.count_nonzero(counts) <= 1:
        return _make_leaf(y, classes)
    found = best_split(X, y, len(classes), min_leaf)
    parent_score = float((counts.astype(np.float64) ** 2).sum() / y.size)
    if found is None or found[2] <= parent_score + _SCORE_TOL:
        return _make_leaf(y, classes)
    feature, threshold, _ = found
    mask = X[:, feature] < threshold
    return Split(feature, threshold,
                 _grow(X[mask], y[mask], classes, depth + 1, max_depth, min_leaf),
                 _grow(X[~mask], y[~mask], classes, depth + 1, max_depth, min_leaf))


def fit_arrays(X, y, max_depth: int = 3, min_leaf: int = 5) -> DecisionTree:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ConfigurationError("training set must be a non-empty 2-D array")
    if X.shape[0] != y.shape[0]:
        raise ConfigurationError("feature and label counts differ")
    if not np.all(np.isfinite(X)):
        raise ConfigurationError("features must be finite")
    if max_depth < 0 or min_leaf < 1:
        raise ConfigurationError("max_depth must be >= 0 and min_leaf >= 1")
    classes = tuple(sorted({str(v) for v in y}))
    codes = np.searchsorted(np.asarray(classes), np.asarray([str(v) for v in y]))
    root = _grow(X, codes, classes, 0, max_depth, min_leaf)
    return DecisionTree(root, classes, max_depth, min_leaf)


def samples_to_arrays(samples: Sequence[LabeledSample]):
    X = np.array([s.features.as_tuple() for s in samples], dtype=np.float64).reshape(-1, 2)
    y = np.array([s.label for s in samples], dtype=object)
    return X, y


def fit_tree(train: Sequence[LabeledSample], max_depth: int = 3, min_leaf: int = 5) -> DecisionTree:
    if not train:
        raise ConfigurationError("cannot fit a tree on an empty training set")
    if max_depth < 1:
        raise ConfigurationError("max_depth must be >= 1")
    X, y = samples_to_arrays(train)
    return fit_arrays(X, y, max_depth, min_leaf)


def predict(tree: DecisionTree, obs: Observation) -> str:
    return tree.predict_one(obs.as_tuple())


def stratified_split(samples: Sequence, train_fraction: float = 0.7, seed: int = 0):
    """Per-class seeded shuffle; ``round(fraction * class size)`` go to train.

    The train count is clamped to ``[1, size - 1]`` so both sides see every
    class. Both halves keep the input order.
    """
    if not 0 < train_fraction < 1:
        raise ConfigurationError("train_fraction must lie in (0, 1)")
    by_label: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        by_label.setdefault(str(s.label), []).append(i)
    small = sorted(lab for lab, idx in by_label.items() if len(idx) < 2)
    if small:
        raise ConfigurationError(f"classes with fewer than 2 samples: {small}")
    rng = np.random.default_rng(int(seed))
    train_idx, test_idx = [], []
    for label in sorted(by_label):
        idx = np.asarray(by_label[label])
        perm = rng.permutation(idx.size)
        k = int(math.floor(train_fraction * idx.size + 0.5))
        k = min(max(k, 1), idx.size - 1)
        train_idx.extend(idx[perm[:k]].tolist())
        test_idx.extend(idx[perm[k:]].tolist())
    return [samples[i] for i in sorted(train_idx)], [samples[i] for i in sorted(test_idx)]


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple[str, ...]
    counts: np.ndarray = field(compare=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.labels)
        if counts.shape != (k, k):
            raise ConfigurationError(f"confusion matrix must be {k}x{k}")
        if (counts < 0).any():
            raise ConfigurationError("confusion counts must be non-negative")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.counts, other.counts)

    def cell(self, true_label: str, predicted: str) -> int:
        return int(self.counts[self.labels.index(true_label), self.labels.index(predicted)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\predicted", *self.labels])
        for lab, row in zip(self.labels, self.counts):
            w.writerow([lab, *(int(v) for v in row)])
        return buf.getvalue()


@dataclass(frozen=True)
class ClassReport:
    labels: tuple[str, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    support: tuple[int, ...]
    accuracy: float
    confusion: ConfusionMatrix

    @classmethod
    def from_confusion(cls, confusion: ConfusionMatrix) -> "ClassReport":
        c = confusion.counts.astype(np.float64)
        tp = np.diag(c)
        col, row = c.sum(axis=0), c.sum(axis=1)
        precision = np.divide(tp, col, out=np.zeros_like(tp), where=col > 0)
        recall = np.divide(tp, row, out=np.zeros_like(tp), where=row > 0)
        denom = precision + recall
        f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
        total = c.sum()
        accuracy = float(tp.sum() / total) if total > 0 else 0.0
        return cls(confusion.labels, tuple(map(float, precision)), tuple(map(float, recall)),
                   tuple(map(float, f1)), tuple(int(v) for v in row), accuracy, confusion)

    def metric(self, name: str, label: str) -> float:
        return getattr(self, name)[self.labels.index(label)]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "labels": list(self.labels),
            "per_class": {
                lab: {"precision": p, "recall": r, "f1": f, "support": s}
                for lab, p, r, f, s in zip(self.labels, self.precision, self.recall, self.f1,
                                           self.support)
            },
            "confusion": self.confusion.counts.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "precision", "recall", "f1", "support"])
        for lab, p, r, f, s in zip(self.labels, self.precision, self.recall, self.f1, self.support):
            w.writerow([lab, f"{p:.6f}", f"{r:.6f}", f"{f:.6f}", s])
        w.writerow(["accuracy", "", "", f"{self.accuracy:.6f}", sum(self.support)])
        return buf.getvalue()


def evaluate(tree: DecisionTree, test: Sequence[LabeledSample]) -> ClassReport:
    if not test:
        raise ConfigurationError("cannot evaluate on an empty test set")
    labels = tuple(sorted(set(tree.classes) | {s.label for s in test}))
    index = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for s in test:
        counts[index[s.label], index[predict(tree, s.features)]] += 1
    return ClassReport.from_confusion(ConfusionMatrix(labels, counts))


def _relabel(node: Node, names: Sequence[str]) -> Node:
    if isinstance(node, Leaf):
        return Leaf(names[int(node.label)],
                    tuple((names[int(lab)], c) for lab, c in node.histogram))
    return Split(node.feature, node.threshold, _relabel(node.left, names),
                 _relabel(node.right, names))


class ShallowTreeClassifier(ClassifierMixin, BaseEstimator):
    """scikit-learn wrapper around :func:`fit_arrays`.

    Columns are ``(time_s, llc_misses)`` by convention, but any number of
    numeric features works; earlier columns win split ties. Labels of any
    sortable type are accepted and predictions come back in that type.
    """

    def __init__(self, max_depth=3, min_leaf=5):
        self.max_depth = max_depth
        self.min_leaf = min_leaf

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=False)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        # zero-padded codes sort like the classes, so leaf ties resolve the same way
        width = len(str(len(self.classes_)))
        coded = fit_arrays(X, np.asarray([f"{c:0{width}d}" for c in codes]),
                           self.max_depth, self.min_leaf)
        self.coded_tree_ = coded
        names = tuple(str(c) for c in self.classes_)
        self.tree_ = DecisionTree(_relabel(coded.root, names), names, coded.max_depth,
                                  coded.min_leaf)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coded_tree_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ConfigurationError(
                f"X has {X.shape[1]} features, but {type(self).__name__} is expecting "
                f"{self.n_features_in_} features as input")
        idx = [int(self.coded_tree_.predict_one(row)) for row in X]
        return self.classes_[np.asarray(idx, dtype=np.intp)]

    def export_text(self) -> str:
        check_is_fitted(self, "tree_")
        return self.tree_.export_text()
