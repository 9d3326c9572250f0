import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from oracles import brute_force_grid
from sidechan.anyres import (PORTRAIT, SQUARE, AnyResPlanner, AspectRatio, GridCandidateSet,
                             GridConfig, PreprocessMode, PreprocessPlan, distortion,
                             plan_preprocess, select_grid, worst_case_grid)
from sidechan.errors import ConfigurationError

DEFAULT_PAIRS = [(1, 1), (1, 2), (2, 1), (2, 2), (1, 3), (3, 1)]
sides = st.integers(min_value=1, max_value=4000)


def test_patch_formula():
    assert GridConfig(1, 2).total_patches() == 3
    assert GridConfig(2, 2).total_patches() == 5
    assert GridConfig(3, 1).total_patches() == 4


def test_aspect_ratio_is_exact_rational():
    assert AspectRatio(336, 672).ratio() == Fraction(1, 2)
    assert AspectRatio(1000, 3000).ratio() == AspectRatio(1, 3).ratio()


@pytest.mark.parametrize("w,h", [(0, 10), (10, 0), (-1, 5)])
def test_aspect_ratio_rejects_nonpositive(w, h):
    with pytest.raises(ConfigurationError):
        AspectRatio(w, h)


def test_aspect_ratio_parse():
    assert AspectRatio.parse("336x672") == PORTRAIT
    with pytest.raises(ConfigurationError):
        AspectRatio.parse("square")


class TestDistortion:
    def test_equal_ratios_square(self):
        assert distortion(SQUARE, GridConfig(2, 2)) == 0.0

    def test_equal_ratios_portrait(self):
        assert distortion(PORTRAIT, GridConfig(1, 2)) == 0.0

    def test_portrait_on_square_grid_is_ln2(self):
        assert distortion(PORTRAIT, GridConfig(2, 2)) == pytest.approx(math.log(2), abs=1e-12)
        assert distortion(PORTRAIT, GridConfig(2, 2)) == pytest.approx(0.6931, abs=1e-4)

    @given(sides, sides, st.integers(1, 4), st.integers(1, 4))
    def test_symmetric_under_joint_inversion(self, w, h, m, n):
        d1 = distortion(AspectRatio(w, h), GridConfig(m, n))
        d2 = distortion(AspectRatio(h, w), GridConfig(n, m))
        assert d1 == pytest.approx(d2, abs=1e-12)
        assert d1 >= 0
        assert (d1 == 0) == (Fraction(m, n) == Fraction(w, h))


class TestSelectGrid:
    def test_portrait_gives_three_patches(self):
        grid = select_grid(PORTRAIT)
        assert grid == GridConfig(1, 2)
        assert grid.total_patches() == 3

    def test_square_gives_five_patches(self):
        grid = select_grid(SQUARE)
        assert grid == GridConfig(2, 2)
        assert grid.total_patches() == 5

    def test_single_candidate(self):
        only = GridCandidateSet((GridConfig(1, 1),), 2)
        assert select_grid(SQUARE, only) == GridConfig(1, 1)
        assert select_grid(SQUARE, only).total_patches() == 2

    def test_landscape_mirror(self):
        assert select_grid(AspectRatio(672, 336)) == GridConfig(2, 1)

    def test_exact_tie_prefers_more_patches_then_list_order(self):
        # 1x1 and 2x2 both have zero distortion for a square image
        cands = GridCandidateSet.from_pairs([(1, 1), (2, 2)], 5)
        assert select_grid(SQUARE, cands) == GridConfig(2, 2)
        cands = GridCandidateSet.from_pairs([(1, 1), (1, 3), (3, 1), (2, 2)], 5)
        assert select_grid(SQUARE, cands) == GridConfig(2, 2)
        # just under sqrt(2) the unit grid is strictly closer than 2x1
        cands = GridCandidateSet.from_pairs([(1, 1), (2, 1), (1, 2)], 3)
        assert select_grid(AspectRatio(1414, 1000), cands) == GridConfig(1, 1)
        assert select_grid(AspectRatio(1415, 1000), cands) == GridConfig(2, 1)

    def test_oracle_equivalence_random_ratios(self):
        rng = np.random.default_rng(20240601)
        for _ in range(1000):
            w, h = (int(v) for v in rng.integers(1, 5000, size=2))
            assert select_grid(AspectRatio(w, h)) == GridConfig(*brute_force_grid(w, h, DEFAULT_PAIRS))

    @settings(max_examples=200)
    @given(sides, sides)
    def test_patch_count_matches_brute_force(self, w, h):
        plan = plan_preprocess(AspectRatio(w, h), PreprocessMode.DYNAMIC)
        m, n = brute_force_grid(w, h, DEFAULT_PAIRS)
        assert plan.patch_count == m * n + 1

    @given(sides, sides)
    def test_transpose_closed_set_gives_transposed_grid(self, w, h):
        grid = select_grid(AspectRatio(w, h))
        if grid.m != grid.n or select_grid(AspectRatio(h, w)).m == select_grid(AspectRatio(h, w)).n:
            assert select_grid(AspectRatio(h, w)) == grid.transposed()


class TestCandidateSet:
    def test_default(self):
        cset = GridCandidateSet.default()
        assert cset.to_pairs() == [list(p) for p in DEFAULT_PAIRS]
        assert cset.max_total_patches == 7

    def test_empty_is_rejected(self):
        with pytest.raises(ConfigurationError):
            GridCandidateSet((), 7)

    def test_requires_unit_grid(self):
        with pytest.raises(ConfigurationError):
            GridCandidateSet.from_pairs([(1, 2), (2, 1)], 3)

    def test_rejects_oversized_candidate(self):
        with pytest.raises(ConfigurationError):
            GridCandidateSet.from_pairs([(1, 1), (3, 3)], 7)

    def test_empty_pairs_rejected_through_planner(self):
        with pytest.raises(ConfigurationError):
            select_grid(SQUARE, GridCandidateSet.from_pairs([]))


class TestPlanPreprocess:
    def test_dynamic_portrait(self):
        plan = plan_preprocess(PORTRAIT, PreprocessMode.DYNAMIC)
        assert (plan.grid, plan.patch_count) == (GridConfig(1, 2), 3)

    def test_constant_pad_portrait(self):
        plan = plan_preprocess(PORTRAIT, PreprocessMode.CONSTANT_PAD,
                               GridCandidateSet.from_pairs([(1, 1), (1, 2), (2, 1), (2, 2)]))
        assert (plan.grid, plan.patch_count) == (GridConfig(2, 2), 5)

    def test_constant_pad_default_set_worst_case(self):
        # 2x2 is the first candidate with the most patches in the default set
        assert worst_case_grid() == GridConfig(2, 2)
        assert plan_preprocess(PORTRAIT, "constant-pad").patch_count == 5

    def test_static_privacy_is_one_patch(self):
        plan = plan_preprocess(PORTRAIT, PreprocessMode.STATIC_PRIVACY)
        assert plan.patch_count == 1
        assert plan.grid == GridConfig(1, 1)

    @given(sides, sides)
    def test_constant_pad_count_is_input_independent(self, w, h):
        assert plan_preprocess(AspectRatio(w, h), PreprocessMode.CONSTANT_PAD).patch_count == 5

    def test_plan_invariants_enforced(self):
        with pytest.raises(ConfigurationError):
            PreprocessPlan(PreprocessMode.DYNAMIC, GridConfig(2, 2), 4, 0.0)
        with pytest.raises(ConfigurationError):
            PreprocessPlan(PreprocessMode.STATIC_PRIVACY, GridConfig(1, 1), 2, 0.0)

    def test_mode_parse_aliases(self):
        assert PreprocessMode.parse("ConstantPad") is PreprocessMode.CONSTANT_PAD
        assert PreprocessMode.parse("privacy") is PreprocessMode.STATIC_PRIVACY
        with pytest.raises(ConfigurationError):
            PreprocessMode.parse("fancy")


class TestPlanner:
    def test_transform(self):
        out = AnyResPlanner().fit_transform([[336, 672], [672, 672], [672, 336]])
        assert out.ravel().tolist() == [3, 5, 3]

    def test_params_and_clone(self):
        planner = AnyResPlanner(mode="constant-pad")
        assert planner.get_params() == {"mode": "constant-pad", "candidates": None}
        twin = clone(planner)
        assert twin.fit_transform([[336, 672]]).ravel().tolist() == [5]

    def test_in_pipeline(self):
        pipe = make_pipeline(AnyResPlanner(mode="static"))
        assert pipe.fit_transform([[336, 672], [672, 672]]).ravel().tolist() == [1, 1]

    def test_bad_columns(self):
        with pytest.raises(ConfigurationError):
            AnyResPlanner().fit_transform([[1, 2, 3]])
