"""scikit-learn API conformance of the estimator wrappers."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.model_selection import cross_val_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.utils.estimator_checks import parametrize_with_checks

from sidechan.anyres import AnyResPlanner
from sidechan.attack import ShallowTreeClassifier, fit_arrays
from sidechan.hwmodel import LeakageSimulator
from sidechan.imagegen import StructuralDensity


@parametrize_with_checks([ShallowTreeClassifier(min_leaf=1), ShallowTreeClassifier()])
def test_sklearn_compatible_classifier(estimator, check):
    check(estimator)


@pytest.mark.parametrize("est", [AnyResPlanner(mode="static"), StructuralDensity(0.2),
                                 LeakageSimulator(cache="warm", random_state=3),
                                 ShallowTreeClassifier(max_depth=2, min_leaf=4)])
def test_params_round_trip(est):
    params = est.get_params()
    twin = clone(est)
    assert twin.get_params() == params
    assert type(twin)(**params).get_params() == params


def test_classifier_matches_functional_api():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(120, 2))
    y = np.where(X[:, 0] > 0.2, "hi", "lo")
    clf = ShallowTreeClassifier(max_depth=2, min_leaf=3).fit(X, y)
    tree = fit_arrays(X, y, 2, 3)
    assert clf.export_text() == tree.export_text()
    assert list(clf.predict(X)) == [tree.predict_one(row) for row in X]


def test_integer_labels_come_back_as_integers():
    X = np.array([[49.0, 1.0]] * 5 + [[111.0, 1.0]] * 5)
    y = np.array([3] * 5 + [5] * 5)
    pred = ShallowTreeClassifier(min_leaf=1).fit(X, y).predict([[50.0, 1.0], [110.0, 1.0]])
    assert pred.tolist() == [3, 5]


def test_simulated_geometry_pipeline():
    planner = AnyResPlanner()
    sizes = np.array([[336, 672]] * 40 + [[672, 672]] * 40)
    patches = planner.fit_transform(sizes)
    X = LeakageSimulator(random_state=1).fit_transform(np.column_stack([patches, np.zeros(80)]))
    y = np.array(["portrait"] * 40 + ["square"] * 40)
    pipe = make_pipeline(StandardScaler(), ShallowTreeClassifier(max_depth=1, min_leaf=5))
    assert cross_val_score(pipe, X, y, cv=4).mean() == 1.0
