"""Region-grounded auto-labeling.

The prompt's object phrase is handed to a text-grounded segmenter and the
triplet's material label is attached to the returned region only.
"""
from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import BackendError, DimensionError, PreconditionError
from .generation import ImageRecord, center_box, load_image

log = logging.getLogger(__name__)

DEFAULT_MIN_AREA_FRACTION = 0.02
SOURCES = ("generated", "imported")
SPLITS = ("train", "test", "val", "none")

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclasses.dataclass(frozen=True)
class MaskedSample:
    """One labeled region: image + mask + material label + provenance."""

    id: str
    image_path: str
    mask_path: str
    material: str
    object: str | None = None
    qualifier: str | None = None
    prompt: str | None = None
    backend_id: str | None = None
    seed: int | None = None
    source: str = "generated"
    split: str = "none"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise PreconditionError(f"unknown source {self.source!r}")
        if self.split not in SPLITS:
            raise PreconditionError(f"unknown split {self.split!r}")
        if self.source == "generated" and not (self.object and self.prompt and self.backend_id):
            raise PreconditionError(f"generated sample {self.id} lacks provenance")

    @property
    def label(self) -> str:
        return self.material

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    @classmethod
    def from_json(cls, d: dict) -> "MaskedSample":
        return cls(**d)


@dataclasses.dataclass(frozen=True)
class Rejection:
    record_id: str
    reason: str
    foreground_fraction: float


class SegmentationBackend(Protocol):
    backend_id: str

    def segment(self, image: np.ndarray, phrase: str):
        """Return a boolean ``(H, W)`` mask, or a list of ``(score, mask)`` candidates."""
        ...


class MockSegmentationBackend:
    """Returns the centred box covering ``extent`` of each side."""

    backend_id = "mock-center-box"

    def __init__(self, extent: float = 0.5):
        self.extent = extent
        self.phrases: list[str] = []

    def segment(self, image, phrase):
        self.phrases.append(phrase)
        h, w = image.shape[:2]
        mask = np.zeros((h, w), dtype=bool)
        if self.extent > 0:
            (y0, y1), (x0, x1) = center_box(h, w, self.extent)
            mask[y0:y1, x0:x1] = True
        return mask


def _best_candidate(result):
    if isinstance(result, np.ndarray):
        return result
    candidates = list(result)
    if not candidates:
        return None
    # highest confidence wins; first listed on ties
    best = max(range(len(candidates)), key=lambda i: (candidates[i][0], -i))
    return candidates[best][1]


def segment_object(record: ImageRecord, backend: SegmentationBackend, root=".",
                   image: np.ndarray | None = None) -> np.ndarray:
    """Segment ``record.triplet.object`` in the record's image.

    An empty mask is returned as-is (``assign_label`` rejects it).
    """
    if image is None:
        image = load_image(Path(root) / record.image_path)
    h, w = image.shape[:2]
    try:
        result = backend.segment(image, record.triplet.object)
    except Exception as exc:
        raise BackendError(f"segmentation failed: {exc}", record.id) from exc
    mask = _best_candidate(result)
    if mask is None:
        mask = np.zeros((h, w), dtype=bool)
    mask = np.asarray(mask).astype(bool)
    if mask.shape != (h, w):
        raise DimensionError(f"mask {mask.shape} does not match image {(h, w)}")
    if not mask.any():
        log.info("empty mask for %s (%r)", record.id, record.triplet.object)
    return mask


def foreground_fraction(mask: np.ndarray) -> float:
    return float(np.count_nonzero(mask)) / mask.size


def mask_filename(record_id: str) -> str:
    return f"masks/{record_id}.png"


def assign_label(record: ImageRecord, mask: np.ndarray,
                 min_area_fraction: float = DEFAULT_MIN_AREA_FRACTION,
                 mask_path: str | None = None) -> MaskedSample | Rejection:
    if mask.shape != (record.height, record.width):
        raise DimensionError(
            f"mask {mask.shape} does not match record {(record.height, record.width)}")
    frac = foreground_fraction(mask)
    if frac < min_area_fraction:
        return Rejection(record.id, "below-area", frac)
    t = record.triplet
    return MaskedSample(
        id=record.id, image_path=record.image_path,
        mask_path=mask_path or mask_filename(record.id),
        material=t.material, object=t.object, qualifier=t.qualifier,
        prompt=record.prompt_text, backend_id=record.backend_id, seed=record.seed,
        source="generated", split="none",
    )


def filter_regions(mask: np.ndarray, min_pixels: int) -> list[np.ndarray]:
    """Split ``mask`` into 4-connected components with area > ``min_pixels``.

    Components are returned in scan order of their first pixel.
    """
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=_FOUR_CONNECTED)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    return [labels == k for k in range(1, n + 1) if areas[k] > min_pixels]


def save_mask(path, mask: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def label_records(records: Sequence[ImageRecord], backend: SegmentationBackend, root,
                  min_area_fraction: float = DEFAULT_MIN_AREA_FRACTION,
                  jobs: int = 1) -> tuple[list[MaskedSample], list[Rejection]]:
    """Segment, threshold and store masks for every record (order preserved)."""
    root = Path(root)

    def one(record):
        mask = segment_object(record, backend, root)
        outcome = assign_label(record, mask, min_area_fraction)
        if isinstance(outcome, MaskedSample):
            save_mask(root / outcome.mask_path, mask)
        return outcome

    workers = jobs if getattr(backend, "thread_safe", False) else 1
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(one, records))
    samples = [o for o in outcomes if isinstance(o, MaskedSample)]
    rejections = [o for o in outcomes if isinstance(o, Rejection)]
    return samples, rejections
