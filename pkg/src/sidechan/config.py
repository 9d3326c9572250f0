"""JSON configuration documents for the command line.

Every key is optional; an empty document ``{}`` gives the built-in defaults.
Unknown keys are rejected at every level so a typo never silently falls back
to a default.

Top-level keys::

    profile              built-in or custom profile name ("intel-i7-13700")
    profiles             list of custom profile objects (all HardwareProfile fields)
    profile_overrides    object of HardwareProfile fields to replace
    scenarios            list of {"label", "content", "aspect": "WxH"}
    per_class            images per scenario (250)
    cache                "cold" | "warm" (experiment default when absent)
    load                 "idle" | "stressed"
    stressed_llc_offset  misses added under load (0.2e9)
    mode                 "dynamic" | "constant-pad" | "static"
    split_fraction       train share of the stratified split (0.7)
    seeds                {"dataset", "noise", "split"} (all 0)
    tree                 {"max_depth": 3, "min_leaf": 5}
    candidates           {"grids": [[m, n], ...], "max_total_patches": 7}
    calibration          {"target": 0.84, "tolerance": 0.05, "sweep": [...]}
    generator            {"write_pgm": false}
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

from .anyres import GridCandidateSet, PreprocessMode
from .errors import ConfigurationError, ProfileLookupError
from .experiments import CalibrationSettings, ExperimentConfig, ScenarioSpec, Seeds, TreeParams
from .hwmodel import (INTEL_I7_13700, STRESSED_LLC_OFFSET, CacheState, HardwareProfile,
                      LoadCondition, builtin_profiles)

ENV_VAR = "SIDECHAN_CONFIG"

TOP_LEVEL_KEYS = frozenset({
    "profile", "profiles", "profile_overrides", "scenarios", "per_class", "cache", "load",
    "stressed_llc_offset", "mode", "split_fraction", "seeds", "tree", "candidates",
    "calibration", "generator",
})
_NESTED_KEYS = {
    "seeds": {"dataset", "noise", "split"},
    "tree": {"max_depth", "min_leaf"},
    "candidates": {"grids", "max_total_patches"},
    "calibration": {"target", "tolerance", "sweep"},
    "generator": {"write_pgm"},
}


@dataclass(frozen=True)
class CliConfig:
    experiment: ExperimentConfig
    write_pgm: bool = False
    source: str | None = None


def _reject_unknown(obj: dict, allowed, where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigurationError(f"{where} must be an object")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _int(value, name) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    return value


def resolve_config_path(explicit=None) -> Path | None:
    """``--config`` wins; otherwise the environment variable; otherwise none."""
    if explicit:
        return Path(explicit)
    env = os.environ.get(ENV_VAR)
    return Path(env) if env else None


def read_document(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    return doc


def _profiles(doc: dict) -> dict[str, HardwareProfile]:
    known = {p.name: p for p in builtin_profiles()}
    for i, raw in enumerate(doc.get("profiles", [])):
        profile = HardwareProfile.from_dict(raw)
        if profile.name in known:
            raise ConfigurationError(f"profiles[{i}] redefines {profile.name!r}")
        known[profile.name] = profile
    return known


def build_config(doc: dict | None = None, **flags) -> CliConfig:
    """Merge a config document with command-line flags (flags win when not None)."""
    doc = dict(doc or {})
    _reject_unknown(doc, TOP_LEVEL_KEYS, "config")
    for key, allowed in _NESTED_KEYS.items():
        if key in doc:
            _reject_unknown(doc[key], allowed, key)

    profiles = _profiles(doc)
    name = flags.get("profile") or doc.get("profile", INTEL_I7_13700)
    try:
        profile = profiles[name]
    except KeyError:
        raise ProfileLookupError(
            f"unknown hardware profile {name!r} (known: {', '.join(sorted(profiles))})") from None
    if "profile_overrides" in doc:
        profile = profile.with_overrides(**doc["profile_overrides"])

    kwargs: dict = {"profile": profile}
    if "scenarios" in doc:
        scen = []
        for i, s in enumerate(doc["scenarios"]):
            _reject_unknown(s, {"label", "content", "aspect"}, f"scenarios[{i}]")
            missing = sorted({"label", "content", "aspect"} - set(s))
            if missing:
                raise ConfigurationError(f"scenarios[{i}] is missing {', '.join(missing)}")
            scen.append(ScenarioSpec(s["label"], s["content"], s["aspect"]))
        kwargs["scenarios"] = tuple(scen)

    per_class = flags.get("per_class")
    kwargs["per_class"] = _int(per_class if per_class is not None else doc.get("per_class", 250),
                               "per_class")
    cache = flags.get("cache") or doc.get("cache")
    if cache is not None:
        kwargs["cache"] = CacheState.parse(cache)
    offset = float(doc.get("stressed_llc_offset", STRESSED_LLC_OFFSET))
    kwargs["load"] = LoadCondition.parse(flags.get("load") or doc.get("load", "idle"), offset)
    kwargs["mode"] = PreprocessMode.parse(flags.get("mode") or doc.get("mode", "dynamic"))
    if "split_fraction" in doc:
        kwargs["split_fraction"] = float(doc["split_fraction"])

    seeds = Seeds(**{k: _int(v, f"seeds.{k}") for k, v in doc.get("seeds", {}).items()})
    if flags.get("seed") is not None:
        # one --seed moves every stream together
        s = _int(flags["seed"], "seed")
        seeds = Seeds(s, s, s)
    kwargs["seeds"] = seeds
    kwargs["tree"] = TreeParams(**{k: _int(v, f"tree.{k}") for k, v in doc.get("tree", {}).items()})
    if "candidates" in doc:
        c = doc["candidates"]
        kwargs["candidates"] = GridCandidateSet.from_pairs(c.get("grids", []),
                                                           c.get("max_total_patches"))
    if "calibration" in doc:
        kwargs["calibration"] = CalibrationSettings(**doc["calibration"])

    write_pgm = doc.get("generator", {}).get("write_pgm", False)
    if not isinstance(write_pgm, bool):
        raise ConfigurationError("generator.write_pgm must be true or false")
    try:
        experiment = ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
    return CliConfig(experiment, bool(flags.get("write_pgm") or write_pgm))


def load_config(path=None, **flags) -> CliConfig:
    resolved = resolve_config_path(path)
    doc = read_document(resolved) if resolved is not None else {}
    cfg = build_config(doc, **flags)
    return replace(cfg, source=None if resolved is None else str(resolved))
