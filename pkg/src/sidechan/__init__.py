"""Simulation laboratory for the timing and cache side channels of dynamic-resolution
(AnyRes) image preprocessing in local vision-language models."""

__version__ = "0.1.0"

from .anyres import (AnyResPlanner, AspectRatio, GridCandidateSet, GridConfig, PreprocessMode,
                     PreprocessPlan, distortion, plan_preprocess, select_grid)
from .attack import (ClassReport, ConfusionMatrix, DecisionTree, LabeledSample,
                     ShallowTreeClassifier, evaluate, fit_tree, gini, predict, stratified_split)
from .errors import SidechanError
from .experiments import ExperimentConfig, ReportBundle, ScenarioSpec, run
from .hwmodel import (CacheState, HardwareProfile, LeakageSimulator, LoadCondition, Observation,
                      builtin_profiles, get_profile, simulate)
from .imagegen import (ContentClass, DensityReport, ImageSpec, PixelBuffer, StructuralDensity,
                       build_dataset, generate, structural_density)

__all__ = [
    "AnyResPlanner", "AspectRatio", "GridCandidateSet", "GridConfig", "PreprocessMode",
    "PreprocessPlan", "distortion", "plan_preprocess", "select_grid",
    "ClassReport", "ConfusionMatrix", "DecisionTree", "LabeledSample", "ShallowTreeClassifier",
    "evaluate", "fit_tree", "gini", "predict", "stratified_split",
    "SidechanError", "ExperimentConfig", "ReportBundle", "ScenarioSpec", "run",
    "CacheState", "HardwareProfile", "LeakageSimulator", "LoadCondition", "Observation",
    "builtin_profiles", "get_profile", "simulate",
    "ContentClass", "DensityReport", "ImageSpec", "PixelBuffer", "StructuralDensity",
    "build_dataset", "generate", "structural_density",
]
