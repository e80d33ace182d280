"""Append-only JSONL sample manifest, class statistics and stratified splits."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import queue
import threading
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import jsonschema
import numpy as np

from .errors import ConflictError, InsufficientDataError, LabelMappingError, PreconditionError
from .labeling import SOURCES, SPLITS, MaskedSample
from .prompts import MaterialTaxonomy

log = logging.getLogger(__name__)

_nullable_str = {"type": ["string", "null"]}
MANIFEST_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["id", "image_path", "mask_path", "object", "material", "qualifier",
                 "prompt", "backend_id", "seed", "source", "split"],
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "image_path": {"type": "string", "minLength": 1},
        "mask_path": {"type": "string", "minLength": 1},
        "object": _nullable_str,
        "material": {"type": "string", "minLength": 1},
        "qualifier": _nullable_str,
        "prompt": _nullable_str,
        "backend_id": _nullable_str,
        "seed": {"type": ["integer", "null"]},
        "source": {"enum": list(SOURCES)},
        "split": {"enum": list(SPLITS)},
    },
}


def _dumps(sample: MaskedSample) -> str:
    return json.dumps(sample.to_json(), sort_keys=True, ensure_ascii=False)


class DatasetManifest:
    """Ordered, id-unique collection of ``MaskedSample`` entries.

    ``root`` is the directory relative paths resolve against (normally the
    directory holding the JSONL file).
    """

    def __init__(self, taxonomy: MaterialTaxonomy, entries: Iterable[MaskedSample] = (),
                 root=".", metadata: Mapping | None = None):
        self.taxonomy = taxonomy
        self.root = Path(root)
        self.metadata = dict(metadata or {})
        self.entries: list[MaskedSample] = []
        self._ids: set[str] = set()
        for e in entries:
            self.append(e)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, sample_id):
        return sample_id in self._ids

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def append(self, sample: MaskedSample) -> "DatasetManifest":
        if sample.material not in self.taxonomy:
            raise PreconditionError(f"label {sample.material!r} not in taxonomy")
        if sample.id in self._ids:
            raise ConflictError(f"duplicate sample id {sample.id}")
        self.entries.append(sample)
        self._ids.add(sample.id)
        return self

    def derive(self, entries: Iterable[MaskedSample]) -> "DatasetManifest":
        return DatasetManifest(self.taxonomy, entries, self.root, self.metadata)

    def by_split(self, *splits: str) -> "DatasetManifest":
        return self.derive(e for e in self.entries if e.split in splits)

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def labels(self) -> np.ndarray:
        return np.array([self.taxonomy.index(e.material) for e in self.entries], dtype=np.int64)

    def save(self, path) -> None:
        path = Path(path)
        path.write_text("".join(_dumps(e) + "\n" for e in self.entries), encoding="utf-8")

    @classmethod
    def load(cls, path, taxonomy: MaterialTaxonomy, validate: bool = True) -> "DatasetManifest":
        path = Path(path)
        entries = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            row = json.loads(line)
            if validate:
                try:
                    jsonschema.validate(row, MANIFEST_SCHEMA)
                except jsonschema.ValidationError as exc:
                    raise PreconditionError(f"{path}:{lineno}: {exc.message}") from None
            entries.append(MaskedSample.from_json(row))
        return cls(taxonomy, entries, root=path.parent)

    def check_files(self) -> list[str]:
        """Return the relative paths referenced by entries that do not exist."""
        missing = []
        for e in self.entries:
            for rel in (e.image_path, e.mask_path):
                if not self.resolve(rel).exists():
                    missing.append(rel)
        return missing


def append_sample(manifest: DatasetManifest, sample: MaskedSample) -> DatasetManifest:
    return manifest.append(sample)


def validate_manifest_file(path) -> int:
    """Validate every JSONL line against ``MANIFEST_SCHEMA``; return the line count."""
    n = 0
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            jsonschema.validate(json.loads(line), MANIFEST_SCHEMA)
            n += 1
    return n


class ManifestWriter:
    """Single writer thread fed by many producers.

    Producers call :meth:`submit` from any thread; samples are appended to the
    in-memory manifest and to ``path`` (one flushed line each) in arrival
    order. Conflicts are collected and re-raised by :meth:`close`.
    """

    _STOP = object()

    def __init__(self, manifest: DatasetManifest, path=None):
        self.manifest = manifest
        self.path = Path(path) if path is not None else None
        self.errors: list[Exception] = []
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self):
        fh = self.path.open("a", encoding="utf-8") if self.path else None
        try:
            while True:
                item = self._queue.get()
                if item is self._STOP:
                    break
                try:
                    self.manifest.append(item)
                except Exception as exc:
                    self.errors.append(exc)
                    continue
                if fh:
                    fh.write(_dumps(item) + "\n")
                    fh.flush()
        finally:
            if fh:
                fh.close()

    def submit(self, sample: MaskedSample) -> None:
        self._queue.put(sample)

    def close(self) -> DatasetManifest:
        self._queue.put(self._STOP)
        self._thread.join()
        if self.errors:
            raise self.errors[0]
        return self.manifest

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclasses.dataclass(frozen=True)
class ClassStats:
    counts: dict[str, int]
    total: int

    def as_rows(self):
        return list(self.counts.items())


def class_stats(manifest: DatasetManifest) -> ClassStats:
    counts = {c: 0 for c in manifest.taxonomy.classes}
    for e in manifest.entries:
        counts[e.material] += 1
    return ClassStats(counts, sum(counts.values()))


def round_half_up(x: Fraction) -> int:
    return int((x + Fraction(1, 2)).__floor__())


def _group_by_class(manifest: DatasetManifest) -> dict[str, list[int]]:
    groups = {c: [] for c in manifest.taxonomy.classes}
    for i, e in enumerate(manifest.entries):
        groups[e.material].append(i)
    return groups


def _draw(manifest, want: Mapping[str, int], seed: int) -> list[int]:
    groups = _group_by_class(manifest)
    rng = np.random.default_rng(seed)
    chosen = []
    for cls in manifest.taxonomy.classes:
        k, pool = want.get(cls, 0), groups[cls]
        if k > len(pool):
            raise InsufficientDataError(
                f"class {cls!r} has {len(pool)} samples, {k} requested", cls)
        if k:
            chosen.extend(pool[i] for i in rng.choice(len(pool), size=k, replace=False))
    return sorted(chosen)


def sample_subset(manifest: DatasetManifest, fraction: float | None = None,
                  per_class: int | Mapping[str, int] | None = None,
                  seed: int = 0) -> DatasetManifest:
    """Stratified subset, drawn without replacement.

    With ``fraction`` each class contributes ``round_half_up(fraction * n_class)``
    samples; with ``per_class`` a fixed count (or a class -> count map).
    Entries keep their original relative order.
    """
    if (fraction is None) == (per_class is None):
        raise PreconditionError("give exactly one of fraction or per_class")
    groups = _group_by_class(manifest)
    if fraction is not None:
        if fraction <= 0:
            raise PreconditionError("fraction must be positive")
        f = Fraction(str(fraction))
        want = {c: round_half_up(f * len(idx)) for c, idx in groups.items()}
    elif isinstance(per_class, Mapping):
        want = dict(per_class)
    else:
        if per_class < 0:
            raise PreconditionError("per_class must be >= 0")
        want = {c: per_class for c, idx in groups.items() if idx}
    return manifest.derive(manifest.entries[i] for i in _draw(manifest, want, seed))


def build_test_split(manifest: DatasetManifest, per_class: int, seed: int = 0,
                     classes: Sequence[str] | None = None) -> DatasetManifest:
    """Draw exactly ``per_class`` samples of every class and flag them ``test``.

    ``classes`` defaults to the whole taxonomy; every listed class must have
    enough samples.
    """
    if per_class < 0:
        raise PreconditionError("per_class must be >= 0")
    classes = manifest.taxonomy.classes if classes is None else classes
    want = {c: per_class for c in classes}
    picked = _draw(manifest, want, seed)
    return manifest.derive(dataclasses.replace(manifest.entries[i], split="test") for i in picked)


def train_remainder(manifest: DatasetManifest, test: DatasetManifest) -> DatasetManifest:
    """Everything not in ``test``, flagged ``train``."""
    held = set(test.ids)
    return manifest.derive(dataclasses.replace(e, split="train")
                           for e in manifest.entries if e.id not in held)


def with_splits(manifest: DatasetManifest, test: DatasetManifest) -> DatasetManifest:
    """Full manifest with ``test`` members flagged test and the rest train."""
    held = set(test.ids)
    return manifest.derive(
        dataclasses.replace(e, split="test" if e.id in held else "train")
        for e in manifest.entries)


def import_external(samples: Sequence[tuple[str, str, str]], source_tag: str,
                    taxonomy: MaterialTaxonomy,
                    label_map: Mapping[str, str] | None = None,
                    split: str = "none") -> list[MaskedSample]:
    """Wrap externally labeled ``(image_path, mask_path, label)`` triples.

    Labels go through ``label_map`` (defaults to case-insensitive identity).
    """
    mapping = {k.strip().lower(): v for k, v in (label_map or {}).items()}
    out, offenders = [], []
    for image_path, mask_path, label in samples:
        key = label.strip().lower()
        target = mapping.get(key, key)
        if target not in taxonomy:
            offenders.append(label)
            continue
        digest = hashlib.sha256(f"{source_tag}\x00{image_path}\x00{mask_path}".encode()).hexdigest()
        out.append(MaskedSample(
            id=f"{source_tag}-{digest[:12]}", image_path=str(image_path),
            mask_path=str(mask_path), material=target, source="imported", split=split))
    if offenders:
        raise LabelMappingError(offenders)
    return out
