"""Dynamic high-resolution (AnyRes) grid selection and mitigation planning.

An input image is tiled into an ``m x n`` grid of local crops plus one global
downsampled view, so the encoder processes ``m * n + 1`` patches. The grid is
chosen to minimise aspect-ratio distortion, which is what makes the patch count
(and therefore the runtime) a function of the image shape.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .errors import ConfigurationError


@dataclass(frozen=True, order=True)
class AspectRatio:
    width_px: int
    height_px: int

    def __post_init__(self):
        for name in ("width_px", "height_px"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigurationError(f"{name} must be an integer, got {value!r}")
            if value < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {value}")

    def ratio(self) -> Fraction:
        return Fraction(int(self.width_px), int(self.height_px))

    def transposed(self) -> "AspectRatio":
        return AspectRatio(self.height_px, self.width_px)

    def __str__(self):
        return f"{self.width_px}x{self.height_px}"

    @classmethod
    def parse(cls, text: str) -> "AspectRatio":
        """Parse ``"336x672"`` (pixels) into an aspect ratio."""
        try:
            w, h = text.lower().split("x")
            return cls(int(w), int(h))
        except ValueError as exc:
            raise ConfigurationError(f"bad aspect ratio {text!r}, expected WxH") from exc


PORTRAIT = AspectRatio(336, 672)
SQUARE = AspectRatio(672, 672)


@dataclass(frozen=True, order=True)
class GridConfig:
    m: int  # columns
    n: int  # rows

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ConfigurationError(f"grid dimensions must be >= 1, got {self.m}x{self.n}")

    def total_patches(self) -> int:
        # local crops plus the global view
        return self.m * self.n + 1

    def ratio(self) -> Fraction:
        return Fraction(self.m, self.n)

    def transposed(self) -> "GridConfig":
        return GridConfig(self.n, self.m)

    def __str__(self):
        return f"{self.m}x{self.n}"


class PreprocessMode(enum.Enum):
    DYNAMIC = "dynamic"
    CONSTANT_PAD = "constant-pad"
    STATIC_PRIVACY = "static"

    @classmethod
    def parse(cls, text: str) -> "PreprocessMode":
        aliases = {"constantpad": "constant-pad", "constant_pad": "constant-pad",
                   "staticprivacy": "static", "static-privacy": "static", "privacy": "static"}
        key = text.strip().lower()
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            choices = ", ".join(m.value for m in cls)
            raise ConfigurationError(f"unknown mode {text!r} (choose from {choices})") from None


@dataclass(frozen=True)
class PreprocessPlan:
    mode: PreprocessMode
    grid: GridConfig
    patch_count: int
    distortion: float

    def __post_init__(self):
        if self.mode is PreprocessMode.STATIC_PRIVACY:
            expected = 1
        else:
            expected = self.grid.total_patches()
        if self.patch_count != expected:
            raise ConfigurationError(
                f"{self.mode.value} plan for grid {self.grid} must have {expected} patches, "
                f"got {self.patch_count}")
        if not self.distortion >= 0:
            raise ConfigurationError("distortion must be non-negative")


DEFAULT_GRIDS = ((1, 1), (1, 2), (2, 1), (2, 2), (1, 3), (3, 1))
DEFAULT_MAX_PATCHES = 7


@dataclass(frozen=True)
class GridCandidateSet:
    candidates: tuple[GridConfig, ...]
    max_total_patches: int = DEFAULT_MAX_PATCHES

    def __post_init__(self):
        cands = tuple(c if isinstance(c, GridConfig) else GridConfig(*c) for c in self.candidates)
        object.__setattr__(self, "candidates", cands)
        if not cands:
            raise ConfigurationError("grid candidate set is empty")
        if self.max_total_patches < 2:
            raise ConfigurationError("max_total_patches must be >= 2")
        too_big = [str(c) for c in cands if c.total_patches() > self.max_total_patches]
        if too_big:
            raise ConfigurationError(
                f"candidates {too_big} exceed max_total_patches={self.max_total_patches}")
        if GridConfig(1, 1) not in cands:
            raise ConfigurationError("grid candidate set must contain 1x1")

    @classmethod
    def default(cls) -> "GridCandidateSet":
        return cls(tuple(GridConfig(m, n) for m, n in DEFAULT_GRIDS), DEFAULT_MAX_PATCHES)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[int]], max_total_patches=None):
        grids = tuple(GridConfig(int(m), int(n)) for m, n in pairs)
        if max_total_patches is None:
            max_total_patches = max(g.total_patches() for g in grids) if grids else 2
        return cls(grids, int(max_total_patches))

    def to_pairs(self):
        return [[g.m, g.n] for g in self.candidates]

    def __iter__(self):
        return iter(self.candidates)

    def __len__(self):
        return len(self.candidates)


def distortion(image: AspectRatio, grid: GridConfig) -> float:
    """Absolute log-ratio between the grid's and the image's aspect ratios."""
    # exact zero when the ratios agree, without trusting float logs
    if grid.m * image.height_px == grid.n * image.width_px:
        return 0.0
    return abs(math.log(grid.m * image.height_px) - math.log(grid.n * image.width_px))


def _distortion_key(image: AspectRatio, grid: GridConfig) -> Fraction:
    # exp(distortion) as an exact rational; monotone in distortion
    r = Fraction(grid.m * image.height_px, grid.n * image.width_px)
    return r if r >= 1 else 1 / r


def _as_candidate_set(candidates) -> GridCandidateSet:
    if candidates is None:
        return GridCandidateSet.default()
    if isinstance(candidates, GridCandidateSet):
        return candidates
    return GridCandidateSet.from_pairs(candidates)


def select_grid(image: AspectRatio, candidates: GridCandidateSet | None = None) -> GridConfig:
    """Pick the candidate grid with minimal aspect-ratio distortion.

    Exact distortion ties go to the grid with more patches (higher effective
    resolution), then to the earlier candidate in list order. This is what maps
    a square image to 2x2 rather than 1x1.
    """
    cset = _as_candidate_set(candidates)
    best_index = min(
        range(len(cset.candidates)),
        key=lambda i: (_distortion_key(image, cset.candidates[i]),
                       -cset.candidates[i].total_patches(), i),
    )
    return cset.candidates[best_index]


def worst_case_grid(candidates: GridCandidateSet | None = None) -> GridConfig:
    cset = _as_candidate_set(candidates)
    # max() keeps the first maximum, i.e. list order breaks ties
    return max(cset.candidates, key=lambda g: g.total_patches())


def plan_preprocess(image: AspectRatio, mode: PreprocessMode = PreprocessMode.DYNAMIC,
                    candidates: GridCandidateSet | None = None) -> PreprocessPlan:
    cset = _as_candidate_set(candidates)
    mode = PreprocessMode.parse(mode) if isinstance(mode, str) else mode
    if mode is PreprocessMode.DYNAMIC:
        grid = select_grid(image, cset)
        count = grid.total_patches()
    elif mode is PreprocessMode.CONSTANT_PAD:
        grid = worst_case_grid(cset)
        count = grid.total_patches()
    else:
        # single resized view: no local crops, no separate global view
        grid = GridConfig(1, 1)
        count = 1
    return PreprocessPlan(mode, grid, count, distortion(image, grid))


class AnyResPlanner(TransformerMixin, BaseEstimator):
    """Map ``(width, height)`` rows to encoder patch counts.

    Stateless; ``fit`` only validates the configuration so the planner can sit
    at the front of a scikit-learn pipeline.

    Parameters
    ----------
    mode : {"dynamic", "constant-pad", "static"}
    candidates : sequence of (m, n) pairs or None for the default set
    """

    def __init__(self, mode="dynamic", candidates=None):
        self.mode = mode
        self.candidates = candidates

    def fit(self, X=None, y=None):
        self.mode_ = PreprocessMode.parse(self.mode) if isinstance(self.mode, str) else self.mode
        self.candidate_set_ = _as_candidate_set(self.candidates)
        return self

    def transform(self, X):
        if not hasattr(self, "candidate_set_"):
            self.fit()
        X = check_array(X, dtype=np.int64)
        if X.shape[1] != 2:
            raise ConfigurationError(f"expected (width, height) columns, got {X.shape[1]}")
        out = np.empty((X.shape[0], 1), dtype=np.int64)
        for i, (w, h) in enumerate(X):
            plan = plan_preprocess(AspectRatio(int(w), int(h)), self.mode_, self.candidate_set_)
            out[i, 0] = plan.patch_count
        return out
