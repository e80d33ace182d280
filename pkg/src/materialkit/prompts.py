"""Prompt triplets: proposal, plausibility filtering and prompt rendering.

A triplet is ``(object, material, qualifier)`` where the qualifier is a
sub-material ("stainless-steel") or an appearance adjective ("polished").
"""
from __future__ import annotations

import dataclasses
import logging
import string
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .errors import BackendError, PreconditionError, TemplateError

log = logging.getLogger(__name__)

DEFAULT_CLASSES = (
    "plastic", "metal", "leather", "fabric", "wood", "stone", "ceramic",
    "water", "sponge", "bone", "cardboard", "concrete", "foliage", "fur",
    "gemstone", "glass", "paper", "soil", "wax", "wicker", "rubber",
)

# Row order of the per-class comparison tables (10 FMD classes first).
FMD_CLASSES = (
    "fabric", "foliage", "glass", "leather", "metal",
    "paper", "plastic", "stone", "water", "wood",
)
TABLE_ROW_ORDER = FMD_CLASSES + (
    "rubber", "ceramic", "sponge", "bone", "cardboard", "concrete",
    "fur", "gemstone", "soil", "wax", "wicker",
)

DEFAULT_SUB_MATERIALS = {
    "plastic": ["polypropylene", "polystyrene", "acrylic", "glossy plastic"],
    "metal": ["stainless-steel", "steel", "brass", "polished", "brushed aluminum"],
    "leather": ["deerskin", "vegetable-tanned", "suede", "patent"],
    "fabric": ["woven", "jute", "cotton", "linen", "knitted"],
    "wood": ["mahogany", "oak", "walnut", "pine", "weathered"],
    "stone": ["marble", "granite", "slate", "sandstone"],
    "ceramic": ["porcelain", "terracotta", "glazed", "stoneware"],
    "water": ["clear", "rippling", "murky"],
    "sponge": ["yellow", "sea sponge", "foam"],
    "bone": ["ivory-colored", "bleached", "carved"],
    "cardboard": ["corrugated", "fluted", "kraft"],
    "concrete": ["reinforced", "poured", "precast"],
    "foliage": ["moss", "fern", "leafy"],
    "fur": ["fluffy", "mink", "shaggy"],
    "gemstone": ["faceted", "amethyst", "emerald"],
    "glass": ["blown", "frosted", "stained"],
    "paper": ["towel", "crumpled", "parchment"],
    "soil": ["eroded", "loamy", "clay-rich"],
    "wax": ["smooth", "beeswax", "paraffin"],
    "wicker": ["open-weave", "rattan", "willow"],
    "rubber": ["neoprene", "vulcanized", "latex"],
}

DEFAULT_TEMPLATE = "a photo of a {qualifier} {material} {object}"
_REQUIRED_FIELDS = {"object", "material", "qualifier"}


def normalize(text: str) -> str:
    return text.strip().lower()


@dataclasses.dataclass(frozen=True)
class MaterialTaxonomy:
    """Ordered material classes; position in ``classes`` is the label index."""

    classes: tuple[str, ...] = DEFAULT_CLASSES
    sub_materials: Mapping[str, tuple[str, ...]] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        classes = tuple(self.classes)
        if len(set(classes)) != len(classes):
            raise PreconditionError("taxonomy class names must be unique")
        if not classes:
            raise PreconditionError("taxonomy needs at least one class")
        subs = {k: tuple(v) for k, v in dict(self.sub_materials).items()}
        owner = {}
        for cls, items in subs.items():
            if cls not in classes:
                raise PreconditionError(f"sub-materials given for unknown class {cls!r}")
            for item in items:
                key = normalize(item)
                if key in owner and owner[key] != cls:
                    raise PreconditionError(
                        f"sub-material {item!r} listed under both {owner[key]!r} and {cls!r}")
                owner[key] = cls
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "sub_materials", subs)

    @classmethod
    def default(cls) -> "MaterialTaxonomy":
        return cls(DEFAULT_CLASSES, DEFAULT_SUB_MATERIALS)

    @classmethod
    def subset(cls, names: Sequence[str]) -> "MaterialTaxonomy":
        """Restriction of the default taxonomy to ``names`` (order kept as given)."""
        unknown = [n for n in names if n not in DEFAULT_CLASSES]
        if unknown:
            raise PreconditionError(f"unknown classes: {unknown}")
        return cls(tuple(names), {n: DEFAULT_SUB_MATERIALS[n] for n in names})

    def __len__(self):
        return len(self.classes)

    def __contains__(self, name):
        return name in self.classes

    def index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise PreconditionError(f"{name!r} is not a taxonomy class") from None

    def class_of(self, sub_material: str) -> str | None:
        key = normalize(sub_material)
        for cls, items in self.sub_materials.items():
            if key in (normalize(i) for i in items):
                return cls
        return None

    def to_dict(self) -> dict:
        return {"classes": list(self.classes),
                "sub_materials": {k: list(v) for k, v in self.sub_materials.items()}}


@dataclasses.dataclass(frozen=True)
class PromptTriplet:
    object: str
    material: str
    qualifier: str
    validated: bool = False

    def __post_init__(self):
        if not self.object.strip() or not self.qualifier.strip():
            raise PreconditionError("triplet object and qualifier must be non-empty")
        if not self.material.strip():
            raise PreconditionError("triplet material must be non-empty")

    @property
    def pair(self) -> tuple[str, str]:
        return normalize(self.object), normalize(self.material)

    def as_validated(self) -> "PromptTriplet":
        return dataclasses.replace(self, validated=True)


class DenyList:
    """Set of implausible (object, material) pairs, matched after normalization."""

    def __init__(self, pairs: Iterable[tuple[str, str]] = ()):
        self.pairs = {(normalize(o), normalize(m)) for o, m in pairs}

    def __contains__(self, pair) -> bool:
        obj, mat = pair
        return (normalize(obj), normalize(mat)) in self.pairs

    def __len__(self):
        return len(self.pairs)

    @classmethod
    def load(cls, path) -> "DenyList":
        """Read ``object,material`` lines; ``#`` starts a comment."""
        pairs = []
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2 or not all(parts):
                raise PreconditionError(f"{path}:{lineno}: expected 'object,material', got {raw!r}")
            pairs.append((parts[0], parts[1]))
        return cls(pairs)

    def dump(self, path) -> None:
        lines = [f"{o},{m}" for o, m in sorted(self.pairs)]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


class CandidateGenerator(Protocol):
    """Text backend that proposes candidate triplets for one material class.

    Returns lines formatted ``"object, material, qualifier"``.
    """

    def candidates(self, material: str, count: int, sub_materials: Sequence[str]) -> list[str]: ...


_MOCK_OBJECTS = (
    "vase", "cup", "box", "panel", "bowl", "ball", "tile", "sculpture",
    "bucket", "tray", "block", "chair", "lamp", "bag", "plate", "frame",
)


class MockCandidateGenerator:
    """Deterministic stand-in for an LLM triplet proposer."""

    def __init__(self, objects: Sequence[str] = _MOCK_OBJECTS):
        self.objects = tuple(objects)
        self.calls = 0

    def candidates(self, material, count, sub_materials):
        self.calls += 1
        quals = list(sub_materials) or ["natural"]
        offset = sum(map(ord, material)) % len(self.objects)
        out = []
        for i in range(count):
            obj = self.objects[(offset + i) % len(self.objects)]
            out.append(f"{obj}, {material}, {quals[i % len(quals)]}")
        return out


def parse_candidate(line: str, material: str) -> PromptTriplet | None:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) != 3 or not all(parts):
        return None
    obj, mat, qual = parts
    if normalize(mat) != normalize(material):
        return None
    return PromptTriplet(obj, material, qual)


def propose_triplets(taxonomy: MaterialTaxonomy, objects_per_class: int,
                     generator: CandidateGenerator, jobs: int = 1) -> list[PromptTriplet]:
    """Ask ``generator`` for candidates of every class, in taxonomy order.

    All returned triplets are unvalidated. Raises ``BackendError`` naming the
    class if the backend fails or yields fewer usable lines than requested.
    """
    if objects_per_class < 1:
        raise PreconditionError("objects_per_class must be >= 1")

    def one(material):
        subs = taxonomy.sub_materials.get(material, ())
        try:
            lines = generator.candidates(material, objects_per_class, subs)
        except Exception as exc:
            raise BackendError(f"candidate generation failed: {exc}", material) from exc
        parsed = []
        for line in lines:
            trip = parse_candidate(line, material)
            if trip is None:
                log.warning("dropping malformed candidate %r for %s", line, material)
            else:
                parsed.append(trip)
        if len(parsed) < objects_per_class:
            raise BackendError(
                f"backend returned {len(parsed)} usable candidates, wanted {objects_per_class}",
                material)
        return parsed

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        per_class = list(pool.map(one, taxonomy.classes))
    return [t for group in per_class for t in group]


def filter_triplets(candidates: Iterable[PromptTriplet], deny: DenyList) -> list[PromptTriplet]:
    return [t.as_validated() for t in candidates if t.pair not in deny]


def check_template(template: str) -> None:
    fields = {name for _, name, _, _ in string.Formatter().parse(template) if name is not None}
    missing = _REQUIRED_FIELDS - fields
    extra = fields - _REQUIRED_FIELDS
    if missing:
        raise TemplateError(f"template lacks placeholders: {sorted(missing)}")
    if extra:
        raise TemplateError(f"template has unknown placeholders: {sorted(extra)}")


def render_prompt(triplet: PromptTriplet, template: str = DEFAULT_TEMPLATE) -> str:
    check_template(template)
    if not triplet.validated:
        raise PreconditionError(f"triplet {triplet} has not been validated")
    return template.format(object=triplet.object, material=triplet.material,
                           qualifier=triplet.qualifier)
