"""Run configuration (one YAML/JSON document) and backend resolution.

Backends are named either ``mock`` or ``"package.module:factory"``; the
factory is called with the section's ``params``, plus ``taxonomy=`` when
its signature accepts it.
"""
from __future__ import annotations

import copy
import dataclasses
import importlib
import inspect
import os
from pathlib import Path
from typing import Any, Mapping

import yaml

from .classifier import TrainConfig
from .errors import ConfigError
from .prompts import DEFAULT_SUB_MATERIALS, DEFAULT_TEMPLATE, MaterialTaxonomy

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "jobs": 0,
    "out": "run",
    "taxonomy": {"classes": None, "sub_materials": None},
    "prompts": {
        "template": DEFAULT_TEMPLATE,
        "generator": "mock",
        "objects_per_class": 4,
        "deny_list": None,
        "triplets": None,
        "params": {},
    },
    "generation": {
        "backend": "mock",
        "images_per_prompt": 5,
        "width": 512,
        "height": 512,
        "retries": 0,
        "params": {},
    },
    "labeling": {
        "segmenter": "mock",
        "min_area_fraction": 0.02,
        "test_per_class": 0,
        "params": {},
    },
    "encoders": {
        "vision": "mock",
        "text": "mock",
        "descriptor": "mock",
        "vlm": "mock",
        "joint": "mock",
        "descriptor_prompt": None,
        "cache_dir": "cache",
        "params": {},
    },
    "train": {
        **{k: v for k, v in dataclasses.asdict(TrainConfig()).items() if k != "seed"},
        "descriptors": {},
    },
    "eval": {
        "class_set": None,
        "mode": "class_bank",
        "area_weighted": False,
        "pca_axis_range": [-40.0, 40.0],
        "fractions": [0.2, 0.4, 0.6, 0.8, 1.0],
        "baseline_scale": 1.0,
    },
}

# Keys whose values are free-form mappings (not checked key by key).
_OPAQUE = {("prompts", "params"), ("generation", "params"), ("labeling", "params"),
           ("encoders", "params"), ("train", "descriptors"), ("taxonomy", "sub_materials")}


def _merge(base: dict, override: Mapping, path=()) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = ".".join((*path, str(key)))
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and (*path, key) not in _OPAQUE:
            if not isinstance(value, Mapping):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], value, (*path, key))
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclasses.dataclass
class RunConfig:
    data: dict
    source: Path | None = None

    @classmethod
    def from_mapping(cls, mapping: Mapping | None = None, source=None) -> "RunConfig":
        cfg = cls(_merge(DEFAULTS, mapping or {}), Path(source) if source else None)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, overrides: Mapping | None = None) -> "RunConfig":
        mapping = {}
        if path is not None:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
            if loaded is not None and not isinstance(loaded, Mapping):
                raise ConfigError(f"{path}: top level must be a mapping")
            mapping = loaded or {}
        merged = _merge(DEFAULTS, mapping)
        if overrides:
            merged = _merge(merged, overrides)
        cfg = cls(merged, Path(path) if path else None)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.data[key]

    def validate(self) -> None:
        self.taxonomy()
        self.train_config()
        if self.data["labeling"]["min_area_fraction"] < 0:
            raise ConfigError("labeling.min_area_fraction must be >= 0")
        if self.data["generation"]["images_per_prompt"] < 1:
            raise ConfigError("generation.images_per_prompt must be >= 1")
        deny = self.data["prompts"]["deny_list"]
        if deny is not None and not self.resolve_path(deny).exists():
            raise ConfigError(f"deny list {deny} not found")

    def resolve_path(self, p) -> Path:
        p = Path(p)
        if p.is_absolute() or self.source is None:
            return p
        return self.source.parent / p

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def jobs(self) -> int:
        return int(self.data["jobs"]) or (os.cpu_count() or 1)

    @property
    def out(self) -> Path:
        return Path(self.data["out"])

    def taxonomy(self) -> MaterialTaxonomy:
        section = self.data["taxonomy"]
        try:
            if section["classes"] is None:
                tax = MaterialTaxonomy.default()
                if section["sub_materials"]:
                    tax = MaterialTaxonomy(tax.classes, section["sub_materials"])
                return tax
            classes = tuple(section["classes"])
            subs = section["sub_materials"]
            if subs is None:
                subs = {c: DEFAULT_SUB_MATERIALS[c] for c in classes if c in DEFAULT_SUB_MATERIALS}
            return MaterialTaxonomy(classes, subs)
        except ValueError as exc:
            raise ConfigError(f"invalid taxonomy: {exc}") from exc

    def train_config(self) -> TrainConfig:
        fields = {k: v for k, v in self.data["train"].items() if k != "descriptors"}
        try:
            return TrainConfig(seed=self.seed, **fields)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid train section: {exc}") from exc

    def class_set(self) -> tuple[str, ...] | None:
        cs = self.data["eval"]["class_set"]
        if cs is None:
            return None
        if isinstance(cs, str):
            from .prompts import FMD_CLASSES, TABLE_ROW_ORDER
            named = {"fmd": FMD_CLASSES, "all": TABLE_ROW_ORDER}
            if cs.lower() not in named:
                raise ConfigError(f"unknown class set {cs!r}")
            return named[cs.lower()]
        return tuple(cs)


def parse_override(text: str) -> dict:
    """``"train.epochs=3"`` -> ``{"train": {"epochs": 3}}`` (value parsed as YAML)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    value = yaml.safe_load(raw) if raw else None
    out: dict = {}
    node = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def deep_update(base: dict, extra: Mapping) -> dict:
    for k, v in extra.items():
        if isinstance(v, Mapping) and isinstance(base.get(k), dict):
            deep_update(base[k], v)
        else:
            base[k] = v
    return base


# ---------------------------------------------------------------- backends

def _mock_factories():
    from .baselines import MockJointEmbedder
    from .encoders import (MockDescriptorGenerator, MockMaterialVLM, MockTextEncoder,
                           MockVisionEncoder)
    from .generation import MockGenerationBackend
    from .labeling import MockSegmentationBackend
    from .prompts import MockCandidateGenerator

    return {
        "candidates": lambda tax, **kw: MockCandidateGenerator(**kw),
        "generation": lambda tax, **kw: MockGenerationBackend(tax.classes, **kw),
        "segmentation": lambda tax, **kw: MockSegmentationBackend(**kw),
        "vision": lambda tax, **kw: MockVisionEncoder(**kw),
        "text": lambda tax, **kw: MockTextEncoder(**kw),
        "descriptor": lambda tax, **kw: MockDescriptorGenerator(**kw),
        "vlm": lambda tax, **kw: MockMaterialVLM(tax.classes, **kw),
        "joint": lambda tax, **kw: MockJointEmbedder(**kw),
    }


def resolve_backend(role: str, name: str, taxonomy: MaterialTaxonomy,
                    params: Mapping | None = None):
    """Instantiate the backend ``name`` for ``role``."""
    params = dict(params or {})
    if name == "mock":
        return _mock_factories()[role](taxonomy, **params)
    if ":" not in name:
        raise ConfigError(f"backend {name!r} for {role} must be 'mock' or 'module:factory'")
    module, attr = name.split(":", 1)
    try:
        factory = getattr(importlib.import_module(module), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot import backend {name!r}: {exc}") from exc
    try:
        sig = inspect.signature(factory).parameters
    except (TypeError, ValueError):
        sig = {}
    if "taxonomy" in sig or any(p.kind is p.VAR_KEYWORD for p in sig.values()):
        params.setdefault("taxonomy", taxonomy)
    return factory(**params)
