"""Run configuration: YAML file -> validated, frozen sections.

Layout (every key optional; unknown keys are rejected)::

    seed: 0
    corpus:     {root, manifest}
    preprocess: PreprocessConfig fields
    features:   FeatureConfig fields + ScalingConfig fields
    augment:    {enabled} + AugmentPolicy fields
    model:      {kinds, grid} + ModelConfig fields except kind/seed
    experiment: {n_runs, ratios, stratify, group_by_speaker, max_frames}
    explain:    {model, n_repeats, grouped}
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .augment import AugmentPolicy
from .errors import SchemaError, VoicepathError
from .experiments.splits import SplitSpec
from .models import TABLE_KINDS, ModelConfig, ModelKind
from .pipeline import ExtractionConfig
from .preprocess import PreprocessConfig
from .scaling import ScalingConfig
from .spectral import FeatureConfig


@dataclass(frozen=True)
class CorpusSection:
    root: str = "corpus"
    manifest: str = "manifest.csv"


@dataclass(frozen=True)
class AugmentSection:
    enabled: bool = True
    target_ratio: float = 1.0
    tolerance: int = 0
    semitones: tuple = (-2.0, -1.0, 1.0, 2.0)
    stretch: tuple = (0.9, 1.1)
    snr_db: tuple = (20.0, 25.0, 30.0)
    max_semitones: float = 4.0

    def policy(self) -> AugmentPolicy:
        d = asdict(self)
        d.pop("enabled")
        return AugmentPolicy(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


_MODEL_FIELDS = [f.name for f in fields(ModelConfig) if f.name not in ("kind", "seed")]


@dataclass(frozen=True)
class ModelSection:
    kinds: tuple = tuple(k.value for k in TABLE_KINDS)
    grid: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)  # ModelConfig overrides

    def config(self, kind, seed: int = 0) -> ModelConfig:
        return ModelConfig(kind=ModelKind(kind), seed=seed, **self.params)


@dataclass(frozen=True)
class ExperimentSection:
    n_runs: int = 27
    ratios: tuple = (0.7, 0.15, 0.15)
    stratify: bool = True
    group_by_speaker: bool = True
    max_frames: int = 0  # 0: longest clip in the corpus

    def split_spec(self, seed: int) -> SplitSpec:
        return SplitSpec(tuple(self.ratios), seed, self.stratify, self.group_by_speaker)


@dataclass(frozen=True)
class ExplainSection:
    model: str = "SimpleRNN"
    n_repeats: int = 5
    grouped: bool = True


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    corpus: CorpusSection = CorpusSection()
    preprocess: PreprocessConfig = PreprocessConfig()
    features: FeatureConfig = FeatureConfig()
    scaling: ScalingConfig = ScalingConfig()
    augment: AugmentSection = AugmentSection()
    model: ModelSection = ModelSection()
    experiment: ExperimentSection = ExperimentSection()
    explain: ExplainSection = ExplainSection()

    def extraction(self) -> ExtractionConfig:
        return ExtractionConfig(self.preprocess, self.features, self.scaling)

    def to_dict(self) -> dict:
        feats = {**asdict(self.features), **asdict(self.scaling)}
        model = {"kinds": list(self.model.kinds), "grid": dict(self.model.grid), **self.model.params}
        return _plain({
            "seed": self.seed,
            "corpus": asdict(self.corpus),
            "preprocess": asdict(self.preprocess),
            "features": feats,
            "augment": asdict(self.augment),
            "model": model,
            "experiment": asdict(self.experiment),
            "explain": asdict(self.explain),
        })

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


SECTIONS = ("corpus", "preprocess", "features", "augment", "model", "experiment", "explain")


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _names(cls) -> set:
    return {f.name for f in fields(cls)}


def _check(section: str, given: dict, allowed: set):
    if not isinstance(given, dict):
        raise SchemaError(f"section {section!r} must be a mapping")
    unknown = sorted(set(given) - allowed)
    if unknown:
        raise SchemaError(f"unknown key {section}.{unknown[0]}")


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def from_dict(raw: dict) -> RunConfig:
    """Build a :class:`RunConfig`; any unknown key raises :class:`SchemaError`."""
    raw = dict(raw or {})
    unknown = sorted(set(raw) - set(SECTIONS) - {"seed"})
    if unknown:
        raise SchemaError(f"unknown key {unknown[0]}")
    try:
        kw = {"seed": int(raw.get("seed", 0))}
        c = raw.get("corpus", {})
        _check("corpus", c, _names(CorpusSection))
        kw["corpus"] = CorpusSection(**c)
        p = raw.get("preprocess", {})
        _check("preprocess", p, _names(PreprocessConfig))
        kw["preprocess"] = PreprocessConfig(**p)
        f = raw.get("features", {})
        _check("features", f, _names(FeatureConfig) | _names(ScalingConfig))
        kw["features"] = FeatureConfig(**{k: v for k, v in f.items() if k in _names(FeatureConfig)})
        kw["scaling"] = ScalingConfig(**{k: v for k, v in f.items() if k in _names(ScalingConfig)})
        a = raw.get("augment", {})
        _check("augment", a, _names(AugmentSection))
        kw["augment"] = AugmentSection(**_tuples(a))
        kw["augment"].policy()
        m = dict(raw.get("model", {}))
        _check("model", m, {"kinds", "grid"} | set(_MODEL_FIELDS))
        kinds = tuple(ModelKind(k).value for k in m.pop("kinds", ModelSection().kinds))
        grid = dict(m.pop("grid", {}) or {})
        bad = sorted(set(grid) - set(_MODEL_FIELDS))
        if bad:
            raise SchemaError(f"unknown key model.grid.{bad[0]}")
        kw["model"] = ModelSection(kinds, grid, m)
        kw["model"].config(kinds[0] if kinds else ModelKind.SimpleRNN)
        e = raw.get("experiment", {})
        _check("experiment", e, _names(ExperimentSection))
        kw["experiment"] = ExperimentSection(**_tuples(e))
        kw["experiment"].split_spec(0)
        x = raw.get("explain", {})
        _check("explain", x, _names(ExplainSection))
        kw["explain"] = ExplainSection(**x)
        ModelKind(kw["explain"].model)
    except SchemaError:
        raise
    except (VoicepathError, TypeError, ValueError) as exc:
        raise SchemaError(f"invalid config value: {exc}") from None
    return RunConfig(**kw)


def load_config(path=None, overrides=()) -> RunConfig:
    """Read YAML (or defaults when ``path`` is None) and apply
    ``section.key=value`` overrides, values parsed as YAML scalars."""
    raw = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise SchemaError(f"{path}: not valid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise SchemaError(f"{path}: top level must be a mapping")
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise SchemaError(f"override {item!r} is not key=value")
        parts = key.strip().split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise SchemaError(f"override {key!r} descends into a scalar")
        node[parts[-1]] = yaml.safe_load(value)
    return from_dict(raw)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)
