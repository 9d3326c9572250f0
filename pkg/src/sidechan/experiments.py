"""Seeded experiment runners and report bundles.

Each runner turns an :class:`ExperimentConfig` into a :class:`ReportBundle`:
a raw per-trial table, a summary computed only from that table, named pass/fail
checks, and (where a classifier is involved) the tree and its class report.
Bundles serialise byte-identically for identical configs.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

from .anyres import (PORTRAIT, SQUARE, AspectRatio, GridCandidateSet, PreprocessMode,
                     plan_preprocess)
from .attack import (FEATURES, ClassReport, ConfusionMatrix, DecisionTree, LabeledSample,
                     evaluate, fit_tree, stratified_split)
from .errors import CalibrationError, ConfigurationError, ParseError
from .hwmodel import (INTEL_I7_13700, STRESSED_LLC_OFFSET, CacheState, HardwareProfile,
                      LoadCondition, LoadKind, Observation, get_profile, simulate)
from .imagegen import ContentClass, build_dataset

EXPERIMENTS = ("geometry", "semantic", "combined", "mitigation", "load", "calibrate")

# density rank used for the semantic ordering check
CONTENT_ORDER = (ContentClass.CRYPTO_NOISE, ContentClass.DOCUMENT, ContentClass.NATURE,
                 ContentClass.XRAY)


@dataclass(frozen=True)
class ScenarioSpec:
    label: str
    content: ContentClass
    aspect: AspectRatio

    def __post_init__(self):
        if not self.label or "," in self.label or "\n" in self.label:
            raise ConfigurationError(f"bad scenario label {self.label!r}")
        object.__setattr__(self, "content", ContentClass.parse(self.content))
        if isinstance(self.aspect, str):
            object.__setattr__(self, "aspect", AspectRatio.parse(self.aspect))

    def to_dict(self) -> dict:
        return {"label": self.label, "content": self.content.value, "aspect": str(self.aspect)}


def _scenarios(*rows) -> tuple[ScenarioSpec, ...]:
    return tuple(ScenarioSpec(label, content, aspect) for label, content, aspect in rows)


COMBINED_SCENARIOS = _scenarios(
    ("MedicalReport", ContentClass.DOCUMENT, PORTRAIT),
    ("ChestXRay", ContentClass.XRAY, PORTRAIT),
    ("EncryptedData", ContentClass.CRYPTO_NOISE, SQUARE),
    ("TechSchematic", ContentClass.XRAY, SQUARE),
)
SEMANTIC_SCENARIOS = _scenarios(
    ("CryptoNoise", ContentClass.CRYPTO_NOISE, SQUARE),
    ("Document", ContentClass.DOCUMENT, SQUARE),
    ("Nature", ContentClass.NATURE, SQUARE),
    ("XRay", ContentClass.XRAY, SQUARE),
)
GEOMETRY_SCENARIOS = _scenarios(
    ("portrait", ContentClass.DOCUMENT, PORTRAIT),
    ("square", ContentClass.DOCUMENT, SQUARE),
)
LOAD_SCENARIOS = _scenarios(
    ("CryptoNoise", ContentClass.CRYPTO_NOISE, SQUARE),
    ("XRay", ContentClass.XRAY, SQUARE),
)
DEFAULT_SCENARIOS = {
    "geometry": GEOMETRY_SCENARIOS,
    "semantic": SEMANTIC_SCENARIOS,
    "combined": COMBINED_SCENARIOS,
    "mitigation": GEOMETRY_SCENARIOS,
    "load": LOAD_SCENARIOS,
    "calibrate": COMBINED_SCENARIOS,
}
# the semantic table was measured with a warm cache; everything else defaults to cold
DEFAULT_CACHE = {"semantic": CacheState.WARM}

DEFAULT_SWEEP = tuple(round(0.05 * k, 2) * 1e9 for k in range(1, 13))  # 0.05 .. 0.6 x 1e9


@dataclass(frozen=True)
class Seeds:
    dataset: int = 0
    noise: int = 0
    split: int = 0


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 3
    min_leaf: int = 5

    def __post_init__(self):
        if self.max_depth < 1 or self.min_leaf < 1:
            raise ConfigurationError("max_depth and min_leaf must be >= 1")


@dataclass(frozen=True)
class CalibrationSettings:
    target: float = 0.84
    tolerance: float = 0.05
    sweep: tuple = DEFAULT_SWEEP

    def __post_init__(self):
        object.__setattr__(self, "sweep", tuple(float(s) for s in self.sweep))
        if not self.sweep:
            raise ConfigurationError("calibration sweep is empty")
        if any(s < 0 or not math.isfinite(s) for s in self.sweep):
            raise ConfigurationError("sweep values must be finite and >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on. ``None`` means the experiment's own default."""

    profile: HardwareProfile = field(default_factory=lambda: get_profile(INTEL_I7_13700))
    scenarios: tuple | None = None
    per_class: int = 250
    cache: CacheState | None = None
    load: LoadCondition = field(default_factory=LoadCondition.idle)
    mode: PreprocessMode = PreprocessMode.DYNAMIC
    split_fraction: float = 0.7
    seeds: Seeds = Seeds()
    tree: TreeParams = TreeParams()
    candidates: GridCandidateSet = field(default_factory=GridCandidateSet.default)
    calibration: CalibrationSettings = CalibrationSettings()

    def __post_init__(self):
        if isinstance(self.profile, str):
            object.__setattr__(self, "profile", get_profile(self.profile))
        if self.scenarios is not None:
            scen = tuple(s if isinstance(s, ScenarioSpec) else ScenarioSpec(*s)
                         for s in self.scenarios)
            if not scen:
                raise ConfigurationError("scenario list is empty")
            labels = [s.label for s in scen]
            if len(set(labels)) != len(labels):
                raise ConfigurationError(f"duplicate scenario labels in {labels}")
            object.__setattr__(self, "scenarios", scen)
        if self.per_class < 1:
            raise ConfigurationError("per_class must be >= 1")
        if not 0 < self.split_fraction < 1:
            raise ConfigurationError("split_fraction must lie in (0, 1)")

    def scenarios_for(self, experiment: str) -> tuple[ScenarioSpec, ...]:
        return self.scenarios if self.scenarios is not None else DEFAULT_SCENARIOS[experiment]

    def cache_for(self, experiment: str) -> CacheState:
        if self.cache is not None:
            return self.cache
        return DEFAULT_CACHE.get(experiment, CacheState.COLD)

    def with_noise(self, llc_noise_abs: float) -> "ExperimentConfig":
        return replace(self, profile=self.profile.with_overrides(llc_noise_abs=float(llc_noise_abs)))

    def to_dict(self) -> dict:
        return {
            "profile": self.profile.to_dict(),
            "scenarios": None if self.scenarios is None else [s.to_dict() for s in self.scenarios],
            "per_class": self.per_class,
            "cache": None if self.cache is None else self.cache.value,
            "load": {"kind": self.load.kind.value, "llc_offset": self.load.llc_offset},
            "mode": self.mode.value,
            "split_fraction": self.split_fraction,
            "seeds": {f.name: getattr(self.seeds, f.name) for f in fields(Seeds)},
            "tree": {"max_depth": self.tree.max_depth, "min_leaf": self.tree.min_leaf},
            "candidates": {"grids": self.candidates.to_pairs(),
                           "max_total_patches": self.candidates.max_total_patches},
            "calibration": {"target": self.calibration.target,
                            "tolerance": self.calibration.tolerance,
                            "sweep": list(self.calibration.sweep)},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Inverse of :meth:`to_dict` (used to re-summarise a written bundle)."""
        load = data["load"]
        scen = data.get("scenarios")
        return cls(
            profile=HardwareProfile.from_dict(data["profile"]),
            scenarios=None if scen is None else tuple(
                ScenarioSpec(s["label"], s["content"], s["aspect"]) for s in scen),
            per_class=int(data["per_class"]),
            cache=None if data.get("cache") is None else CacheState.parse(data["cache"]),
            load=LoadCondition(LoadKind(load["kind"]), float(load["llc_offset"])),
            mode=PreprocessMode.parse(data["mode"]),
            split_fraction=float(data["split_fraction"]),
            seeds=Seeds(**data["seeds"]),
            tree=TreeParams(**data["tree"]),
            candidates=GridCandidateSet.from_pairs(data["candidates"]["grids"],
                                                   data["candidates"]["max_total_patches"]),
            calibration=CalibrationSettings(**data["calibration"]),
        )


# raw table -----------------------------------------------------------------

RAW_HEADER = ("trial", "condition", "label", "content", "width", "height", "image_seed",
              "patches", "density", "time_s", "llc_misses", "split", "predicted")


@dataclass(frozen=True)
class RawRow:
    trial: int
    condition: str
    label: str
    content: str
    width: int
    height: int
    image_seed: int
    patches: int
    density: float
    time_s: float
    llc_misses: float
    split: str = ""
    predicted: str = ""

    @property
    def aspect(self) -> str:
        return f"{self.width}x{self.height}"

    def observation(self) -> Observation:
        return Observation(self.time_s, self.llc_misses)


def raw_csv(rows: Sequence[RawRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RAW_HEADER)
    for r in rows:
        w.writerow([r.trial, r.condition, r.label, r.content, r.width, r.height, r.image_seed,
                    r.patches, repr(r.density), repr(r.time_s), repr(r.llc_misses),
                    r.split, r.predicted])
    return buf.getvalue()


def read_raw_csv(text: str, source=None) -> list[RawRow]:
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader, ()))
    if header != RAW_HEADER:
        raise ParseError(f"unexpected raw table header {header}", 1, source)
    types = (int, str, str, str, int, int, int, int, float, float, float, str, str)
    rows = []
    for lineno, fields_ in enumerate(reader, start=2):
        if len(fields_) != len(RAW_HEADER):
            raise ParseError(f"expected {len(RAW_HEADER)} fields", lineno, source)
        try:
            rows.append(RawRow(*(t(v) for t, v in zip(types, fields_))))
        except ValueError as exc:
            raise ParseError(str(exc), lineno, source) from None
    return rows


# small statistics helpers, exact-sum so row order never matters

def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def _stats(values) -> dict:
    values = sorted(values)
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1) if n > 1 else 0.0
    return {"n": n, "mean": mean, "sd": math.sqrt(var), "min": values[0], "max": values[-1]}


def _group(rows, key):
    out: dict = {}
    for r in sorted(rows, key=lambda r: (r.condition, r.trial)):
        out.setdefault(key(r), []).append(r)
    return dict(sorted(out.items()))


def _ratio_and_overlap(groups: dict) -> tuple[float, bool]:
    """Slowest/fastest mean time ratio, and whether adjacent-by-mean groups overlap."""
    ordered = sorted(groups.values(), key=lambda rs: _mean(r.time_s for r in rs))
    means = [_mean(r.time_s for r in rs) for rs in ordered]
    overlap = any(max(r.time_s for r in lo) >= min(r.time_s for r in hi)
                  for lo, hi in zip(ordered, ordered[1:]))
    return means[-1] / means[0], overlap


# bundle --------------------------------------------------------------------

@dataclass
class ReportBundle:
    experiment: str
    config: ExperimentConfig
    raw: list
    summary: dict
    checks: dict
    trees: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    @property
    def report(self) -> ClassReport | None:
        return next(iter(self.reports.values()), None)

    @property
    def tree(self) -> DecisionTree | None:
        return next(iter(self.trees.values()), None)

    def summary_json(self) -> str:
        doc = {
            "experiment": self.experiment,
            "config": self.config.to_dict(),
            "summary": self.summary,
            "checks": self.checks,
            "passed": self.passed,
            "reports": {k: v.to_dict() for k, v in self.reports.items()},
        }
        return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"

    def tree_text(self) -> str:
        if not self.trees:
            return "no classifier in this experiment\n"
        if len(self.trees) == 1:
            return self.tree.export_text() + "\n"
        return "".join(f"# {name}\n{t.export_text()}\n" for name, t in self.trees.items())

    def confusion_csv(self) -> str:
        if not self.reports:
            return ""
        if len(self.reports) == 1:
            return self.report.confusion.to_csv()
        return "".join(f"# {name}\n{r.confusion.to_csv()}" for name, r in self.reports.items())

    def files(self) -> dict[str, str]:
        return {
            "raw.csv": raw_csv(self.raw),
            "summary.json": self.summary_json(),
            "tree.txt": self.tree_text(),
            "confusion.csv": self.confusion_csv(),
            "scatter.svg": scatter_svg(self.raw, title=self.experiment),
        }

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in self.files().items():
            atomic_write(out / name, text)
        return out


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write(path, text: str) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o666 & ~_umask())  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
            "#7f7f7f")


def scatter_svg(rows: Sequence[RawRow], title: str = "", width: int = 640,
                height: int = 440) -> str:
    """Static time-vs-LLC scatter, one colour per label."""
    left, right, top, bottom = 70, 150, 30, 50
    pw, ph = width - left - right, height - top - bottom
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'font-family="sans-serif" font-size="11">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n'
            f'<text x="{left}" y="18" font-size="13">{title}</text>\n')
    if not rows:
        return head + "</svg>\n"
    ts = [r.time_s for r in rows]
    cs = [r.llc_misses / 1e9 for r in rows]
    t0, t1 = min(ts), max(ts)
    c0, c1 = min(cs), max(cs)
    t1 = t1 if t1 > t0 else t0 + 1.0
    c1 = c1 if c1 > c0 else c0 + 1.0

    def sx(t):
        return left + (t - t0) / (t1 - t0) * pw

    def sy(c):
        return top + ph - (c - c0) / (c1 - c0) * ph

    parts = [head,
             f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>\n',
             f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">'
             f'execution time (s)</text>\n',
             f'<text x="16" y="{top + ph / 2:.1f}" transform="rotate(-90 16 {top + ph / 2:.1f})" '
             f'text-anchor="middle">LLC misses (1e9)</text>\n']
    for k in range(5):
        t = t0 + (t1 - t0) * k / 4
        c = c0 + (c1 - c0) * k / 4
        parts.append(f'<text x="{sx(t):.1f}" y="{top + ph + 15}" text-anchor="middle">{t:.1f}</text>\n')
        parts.append(f'<text x="{left - 5}" y="{sy(c) + 4:.1f}" text-anchor="end">{c:.2f}</text>\n')
    labels = sorted({r.label for r in rows})
    colour = {lab: _PALETTE[i % len(_PALETTE)] for i, lab in enumerate(labels)}
    for r in sorted(rows, key=lambda r: (r.condition, r.trial)):
        parts.append(f'<circle cx="{sx(r.time_s):.2f}" cy="{sy(r.llc_misses / 1e9):.2f}" r="2" '
                     f'fill="{colour[r.label]}" fill-opacity="0.6"/>\n')
    for i, lab in enumerate(labels):
        y = top + 10 + 16 * i
        parts.append(f'<circle cx="{left + pw + 15}" cy="{y}" r="4" fill="{colour[lab]}"/>\n')
        parts.append(f'<text x="{left + pw + 24}" y="{y + 4}">{lab}</text>\n')
    parts.append("</svg>\n")
    return "".join(parts)


# simulation ----------------------------------------------------------------

def _simulate_rows(config: ExperimentConfig, scenarios: Sequence[ScenarioSpec], condition: str,
                   *, mode=None, cache=None, load=None, profile=None,
                   zero_density: bool = False) -> list[RawRow]:
    """One row per (scenario, image); trial ``k`` uses noise seed ``seeds.noise + k``."""
    if config.per_class < 2:
        # every experiment needs a spread per scenario, and the classifiers a split
        raise ConfigurationError("experiments need per_class >= 2")
    mode = config.mode if mode is None else mode
    cache = CacheState.COLD if cache is None else cache
    load = config.load if load is None else load
    profile = config.profile if profile is None else profile
    dataset = build_dataset([(s.content, s.aspect) for s in scenarios], config.per_class,
                            config.seeds.dataset)
    rows = []
    for k, (spec, rep) in enumerate(dataset):
        scen = scenarios[k // config.per_class]
        plan = plan_preprocess(spec.aspect, mode, config.candidates)
        density = 0.0 if zero_density else rep.density
        obs = simulate(plan, density, profile, cache, load, config.seeds.noise + k)
        rows.append(RawRow(k, condition, scen.label, spec.content.value, spec.aspect.width_px,
                           spec.aspect.height_px, spec.seed, plan.patch_count, density,
                           obs.time_s, obs.llc_misses))
    return rows


def _classify(rows: list[RawRow], config: ExperimentConfig, label_of=None):
    """Split, fit, evaluate; returns rows annotated with split/prediction, tree, report."""
    label_of = label_of or (lambda r: r.label)
    samples = [LabeledSample(r.observation(), label_of(r)) for r in rows]
    order = {id(s): i for i, s in enumerate(samples)}
    train, test = stratified_split(samples, config.split_fraction, config.seeds.split)
    tree = fit_tree(train, config.tree.max_depth, config.tree.min_leaf)
    report = evaluate(tree, test)
    out = list(rows)
    for s in train:
        i = order[id(s)]
        out[i] = replace(out[i], split="train", predicted="")
    for s in test:
        i = order[id(s)]
        out[i] = replace(out[i], split="test", predicted=tree.predict_one(s.features.as_tuple()))
    return out, tree, report


def _refit(rows: list[RawRow], config: ExperimentConfig, label_of=None):
    """Rebuild the tree and class report from the split/prediction columns alone."""
    label_of = label_of or (lambda r: r.label)
    train = [LabeledSample(r.observation(), label_of(r)) for r in rows if r.split == "train"]
    test = [r for r in rows if r.split == "test"]
    tree = fit_tree(train, config.tree.max_depth, config.tree.min_leaf)
    labels = sorted(set(tree.classes) | {label_of(r) for r in test})
    idx = {lab: i for i, lab in enumerate(labels)}
    counts = [[0] * len(labels) for _ in labels]
    for r in test:
        counts[idx[label_of(r)]][idx[r.predicted]] += 1
    return tree, ClassReport.from_confusion(ConfusionMatrix(tuple(labels), counts))


def _tree_shape(tree: DecisionTree) -> dict:
    splits = tree.splits()
    root = splits[0][1] if splits else None
    return {
        "depth": tree.depth(),
        "n_leaves": len(tree.leaves()),
        "root_feature": None if root is None else FEATURES[root.feature],
        "root_threshold": None if root is None else root.threshold,
        "level2_features": [FEATURES[node.feature] for depth, node in splits if depth == 1],
    }


# summaries (pure functions of the raw table and the config) -----------------

def summarize(experiment: str, rows: Sequence[RawRow], config: ExperimentConfig) -> dict:
    fn = {"geometry": _summarize_geometry, "semantic": _summarize_semantic,
          "combined": _summarize_combined, "mitigation": _summarize_mitigation,
          "load": _summarize_load, "calibrate": _summarize_calibrate}[experiment]
    return fn(list(rows), config)


def _summarize_geometry(rows, config):
    out = {"cache": {}}
    for cache, crow in _group(rows, lambda r: r.condition).items():
        groups = _group(crow, lambda r: r.aspect)
        ratio, overlap = _ratio_and_overlap(groups)
        out["cache"][cache] = {
            "groups": {a: {"patches": rs[0].patches, "time_s": _stats(r.time_s for r in rs)}
                       for a, rs in groups.items()},
            "ratio": ratio,
            "overlap": overlap,
        }
    ratios = [c["ratio"] for c in out["cache"].values()]
    out["ratio_cache_delta"] = max(ratios) - min(ratios)
    return out


def _class_table(rows):
    table = {}
    for label, rs in _group(rows, lambda r: r.label).items():
        table[label] = {
            "content": rs[0].content,
            "density": _stats(r.density for r in rs),
            "time_s": _stats(r.time_s for r in rs),
            "llc_misses": _stats(r.llc_misses for r in rs),
        }
    return table


def _summarize_semantic(rows, config):
    table = _class_table(rows)
    times = [c["time_s"]["mean"] for c in table.values()]
    llcs = [c["llc_misses"]["mean"] for c in table.values()]
    n = min(c["llc_misses"]["n"] for c in table.values())
    pooled_sd = math.sqrt(_mean(c["llc_misses"]["sd"] ** 2 for c in table.values()))
    gap = max(llcs) - min(llcs)
    # a class-mean difference is resolvable if it beats 3 standard errors of a difference
    floor = 3.0 * pooled_sd * math.sqrt(2.0 / n)
    return {
        "classes": table,
        "time_spread": (max(times) - min(times)) / min(times),
        "llc_gap": gap,
        "pooled_llc_sd": pooled_sd,
        "noise_floor": floor,
        "verdict": "observable" if gap > floor else "not observable",
        "llc_order": sorted(table, key=lambda k: table[k]["llc_misses"]["mean"]),
    }


def _geometry_of(config: ExperimentConfig, experiment: str) -> dict:
    return {s.label: str(s.aspect) for s in config.scenarios_for(experiment)}


def _summarize_combined(rows, config, experiment="combined"):
    tree, report = _refit(rows, config)
    geo = _geometry_of(config, experiment)
    test = [r for r in rows if r.split == "test"]
    geo_ok = [r for r in test if geo[r.predicted] == geo[r.label]]
    correct = [r for r in test if r.predicted == r.label]
    return {
        "accuracy": report.accuracy,
        "recall": {lab: report.metric("recall", lab) for lab in report.labels},
        "precision": {lab: report.metric("precision", lab) for lab in report.labels},
        "geometry_accuracy": len(geo_ok) / len(test),
        "within_geometry_accuracy": len(correct) / len(geo_ok) if geo_ok else 0.0,
        "cross_geometry_confusion": len(test) - len(geo_ok),
        "n_train": sum(1 for r in rows if r.split == "train"),
        "n_test": len(test),
        "tree": _tree_shape(tree),
        "classes": _class_table(rows),
    }


def _summarize_mitigation(rows, config):
    by_mode = _group(rows, lambda r: r.condition)
    out: dict = {"modes": {}}
    for mode, mrows in by_mode.items():
        groups = _group(mrows, lambda r: r.aspect)
        ratio, overlap = _ratio_and_overlap(groups)
        _, report = _refit(mrows, config, lambda r: r.aspect)
        out["modes"][mode] = {
            "groups": {a: {"patches": rs[0].patches, "time_s": _stats(r.time_s for r in rs)}
                       for a, rs in groups.items()},
            "ratio": ratio,
            "overlap": overlap,
            "geometry_accuracy": report.accuracy,
        }
    base = out["modes"].get(PreprocessMode.DYNAMIC.value)
    out["overhead_pct"] = {}
    if base is not None:
        for mode, m in out["modes"].items():
            if mode == PreprocessMode.DYNAMIC.value:
                continue
            out["overhead_pct"][mode] = {
                a: (g["time_s"]["mean"] / base["groups"][a]["time_s"]["mean"] - 1.0) * 100.0
                for a, g in m["groups"].items()}
    return out


def _summarize_load(rows, config):
    out: dict = {"conditions": {}}
    for cond, crows in _group(rows, lambda r: r.condition).items():
        table = _class_table(crows)
        dense = max(table, key=lambda k: table[k]["density"]["mean"])
        sparse = min(table, key=lambda k: table[k]["density"]["mean"])
        out["conditions"][cond] = {
            "classes": table,
            "delta": table[dense]["llc_misses"]["mean"] - table[sparse]["llc_misses"]["mean"],
            "dense": dense,
            "sparse": sparse,
        }
    conds = out["conditions"]
    if LoadKind.IDLE.value in conds and LoadKind.STRESSED.value in conds:
        idle, stressed = conds[LoadKind.IDLE.value], conds[LoadKind.STRESSED.value]
        out["delta_change"] = abs(idle["delta"] - stressed["delta"])
        out["shift"] = {lab: stressed["classes"][lab]["llc_misses"]["mean"]
                        - idle["classes"][lab]["llc_misses"]["mean"] for lab in idle["classes"]}
    return out


def _summarize_calibrate(rows, config):
    points = []
    for cond, crows in _group(rows, lambda r: r.condition).items():
        s = _summarize_combined(crows, config, "calibrate")
        points.append({"llc_noise_abs": float(cond.split("=", 1)[1]), "accuracy": s["accuracy"],
                       "recall": s["recall"], "cross_geometry_confusion": s["cross_geometry_confusion"]})
    points.sort(key=lambda p: p["llc_noise_abs"])
    target, tol = config.calibration.target, config.calibration.tolerance
    best = _closest(points, target)
    return {
        "target": target,
        "tolerance": tol,
        "sweep": points,
        "selected": best["llc_noise_abs"],
        "selected_accuracy": best["accuracy"],
        "within_tolerance": abs(best["accuracy"] - target) <= tol,
    }


def _closest(points, target):
    # nearest accuracy; ties go to the smaller noise level
    return min(points, key=lambda p: (abs(p["accuracy"] - target), p["llc_noise_abs"]))


# runners -------------------------------------------------------------------

def _require_distinct_aspects(scenarios, minimum=2):
    if len({s.aspect for s in scenarios}) < minimum:
        raise ConfigurationError("experiment needs scenarios with at least two aspect ratios")


def run_geometry(config: ExperimentConfig | None = None) -> ReportBundle:
    """Timing per geometry at density 0, under both cache states."""
    config = config or ExperimentConfig()
    scen = config.scenarios_for("geometry")
    _require_distinct_aspects(scen)
    rows = []
    for cache in (CacheState.COLD, CacheState.WARM):
        rows += _simulate_rows(config, scen, cache.value, cache=cache, zero_density=True)
    summary = _summarize_geometry(rows, config)
    if config.mode is PreprocessMode.DYNAMIC:
        checks = {f"no_overlap_{c}": not v["overlap"] for c, v in summary["cache"].items()}
        checks["ratio_cache_invariant"] = summary["ratio_cache_delta"] <= 1e-9
    else:
        checks = {f"ratio_unity_{c}": abs(v["ratio"] - 1.0) <= 0.02
                  for c, v in summary["cache"].items()}
    return ReportBundle("geometry", config, rows, summary, checks)


def run_semantic(config: ExperimentConfig | None = None) -> ReportBundle:
    """Per-class means at one geometry: flat time, content-ordered LLC misses."""
    config = config or ExperimentConfig()
    scen = config.scenarios_for("semantic")
    if len({s.aspect for s in scen}) != 1:
        raise ConfigurationError("semantic scenarios must share one aspect ratio")
    cache = config.cache_for("semantic")
    rows = _simulate_rows(config, scen, cache.value, cache=cache)
    summary = _summarize_semantic(rows, config)
    checks = {"time_spread_below_3pct": summary["time_spread"] < 0.03}
    if config.profile.llc_sensitivity > 0:
        rank = {c: i for i, c in enumerate(CONTENT_ORDER)}
        expected = sorted(summary["classes"],
                          key=lambda k: rank[ContentClass.parse(summary["classes"][k]["content"])])
        checks["llc_order_follows_density"] = summary["llc_order"] == expected
    return ReportBundle("semantic", config, rows, summary, checks)


def _combined_rows(config: ExperimentConfig, experiment: str, condition: str):
    scen = config.scenarios_for(experiment)
    cache = config.cache_for(experiment)
    rows = _simulate_rows(config, scen, condition, cache=cache)
    return _classify(rows, config)


def run_combined(config: ExperimentConfig | None = None) -> ReportBundle:
    """The two-feature attack: simulate, split, fit the shallow tree, evaluate."""
    config = config or ExperimentConfig()
    rows, tree, report = _combined_rows(config, "combined", config.cache_for("combined").value)
    summary = _summarize_combined(rows, config)
    checks = {"no_cross_geometry_confusion": summary["cross_geometry_confusion"] == 0}
    return ReportBundle("combined", config, rows, summary, checks,
                        trees={"combined": tree}, reports={"combined": report})


def run_mitigation(config: ExperimentConfig | None = None) -> ReportBundle:
    """Latency overhead and residual geometry leakage of the mitigation modes.

    Uses the density-0 latency benchmark, like the geometry experiment, so the
    overheads are against the published anchor times.
    """
    config = config or ExperimentConfig()
    scen = config.scenarios_for("mitigation")
    _require_distinct_aspects(scen)
    cache = config.cache_for("mitigation")
    modes = [PreprocessMode.DYNAMIC]
    if config.mode is PreprocessMode.DYNAMIC:
        modes += [PreprocessMode.CONSTANT_PAD, PreprocessMode.STATIC_PRIVACY]
    else:
        modes.append(config.mode)
    rows, trees, reports = [], {}, {}
    for mode in modes:
        mrows = _simulate_rows(config, scen, mode.value, mode=mode, cache=cache, zero_density=True)
        mrows, tree, report = _classify(mrows, config, lambda r: r.aspect)
        rows += mrows
        trees[mode.value] = tree
        reports[mode.value] = report
    summary = _summarize_mitigation(rows, config)
    checks = {}
    for mode in modes[1:]:
        m = summary["modes"][mode.value]
        checks[f"{mode.value}_ratio_unity"] = abs(m["ratio"] - 1.0) <= 0.02
        checks[f"{mode.value}_geometry_accuracy_le_0.6"] = m["geometry_accuracy"] <= 0.6
        if mode is PreprocessMode.STATIC_PRIVACY:
            base = summary["modes"][PreprocessMode.DYNAMIC.value]["groups"]
            checks["static_faster_than_dynamic"] = all(
                g["time_s"]["mean"] < base[a]["time_s"]["mean"] for a, g in m["groups"].items())
    return ReportBundle("mitigation", config, rows, summary, checks, trees, reports)


def run_load_robustness(config: ExperimentConfig | None = None) -> ReportBundle:
    """Separation gap under idle and stressed co-runners (same trial seeds)."""
    config = config or ExperimentConfig()
    scen = config.scenarios_for("load")
    contents = {s.content for s in scen}
    if not {ContentClass.CRYPTO_NOISE, ContentClass.XRAY} <= contents:
        raise ConfigurationError("load experiment needs crypto-noise and xray scenarios")
    stressed = (config.load if config.load.kind is LoadKind.STRESSED
                else LoadCondition.stressed(STRESSED_LLC_OFFSET))
    cache = config.cache_for("load")
    rows = []
    for load in (LoadCondition.idle(), stressed):
        rows += _simulate_rows(config, scen, load.kind.value, cache=cache, load=load)
    summary = _summarize_load(rows, config)
    checks = {"delta_stable": summary["delta_change"] <= 0.1e9}
    return ReportBundle("load", config, rows, summary, checks)


@dataclass(frozen=True)
class CalibrationResult:
    llc_noise_abs: float
    accuracy: float
    sweep: tuple


def _sweep_rows(config: ExperimentConfig, sweep) -> list[RawRow]:
    rows = []
    for sigma in sweep:
        cfg = config.with_noise(sigma)
        srows, _, _ = _combined_rows(cfg, "calibrate", f"llc_noise_abs={float(sigma)!r}")
        rows += srows
    return rows


def calibrate_noise(config: ExperimentConfig | None = None, target_accuracy: float | None = None,
                    tolerance: float | None = None, sweep=None) -> CalibrationResult:
    """Pick the LLC noise level whose combined-attack accuracy is nearest the target."""
    config = config or ExperimentConfig()
    cal = config.calibration
    target = cal.target if target_accuracy is None else target_accuracy
    tol = cal.tolerance if tolerance is None else tolerance
    sweep = tuple(cal.sweep if sweep is None else sweep)
    if not sweep:
        raise CalibrationError("empty sweep")
    cfg = replace(config, calibration=CalibrationSettings(target, tol, sweep))
    summary = _summarize_calibrate(_sweep_rows(cfg, sweep), cfg)
    table = tuple((p["llc_noise_abs"], p["accuracy"]) for p in summary["sweep"])
    if not summary["within_tolerance"]:
        lines = ", ".join(f"{s:.3g}->{a:.3f}" for s, a in table)
        raise CalibrationError(f"no noise level within {tol} of accuracy {target}: {lines}", table)
    return CalibrationResult(summary["selected"], summary["selected_accuracy"], table)


def run_calibration(config: ExperimentConfig | None = None) -> ReportBundle:
    """Bundle form of :func:`calibrate_noise`; a miss is a failed check, not an exception."""
    config = config or ExperimentConfig()
    rows = _sweep_rows(config, config.calibration.sweep)
    summary = _summarize_calibrate(rows, config)
    best = [r for r in rows if r.condition == f"llc_noise_abs={summary['selected']!r}"]
    tree, report = _refit(best, config)
    return ReportBundle("calibrate", config, rows, summary,
                        {"accuracy_within_tolerance": summary["within_tolerance"]},
                        trees={"selected": tree}, reports={"selected": report})


RUNNERS = {
    "geometry": run_geometry,
    "semantic": run_semantic,
    "combined": run_combined,
    "mitigation": run_mitigation,
    "load": run_load_robustness,
    "calibrate": run_calibration,
}


def run(experiment: str, config: ExperimentConfig | None = None) -> ReportBundle:
    try:
        runner = RUNNERS[experiment]
    except KeyError:
        raise ConfigurationError(
            f"unknown experiment {experiment!r} (choose from {', '.join(EXPERIMENTS)})") from None
    return runner(config)
