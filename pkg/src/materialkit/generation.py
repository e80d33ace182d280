"""Drive a text-to-image backend over validated triplets.

Seeds follow ``base_seed + triplet_index * images_per_prompt + replica``, so a
run is reproducible from its inputs alone.
"""
from __future__ import annotations

import colorsys
import dataclasses
import hashlib
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from PIL import Image

from .errors import BackendError, PreconditionError, RunError
from .prompts import DEFAULT_TEMPLATE, PromptTriplet, render_prompt

log = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 512


@dataclasses.dataclass(frozen=True)
class ImageRecord:
    id: str
    image_path: str
    triplet: PromptTriplet
    prompt_text: str
    backend_id: str
    seed: int
    width: int
    height: int

    def to_json(self) -> dict:
        return {
            "id": self.id, "image_path": self.image_path,
            "object": self.triplet.object, "material": self.triplet.material,
            "qualifier": self.triplet.qualifier, "prompt": self.prompt_text,
            "backend_id": self.backend_id, "seed": self.seed,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ImageRecord":
        trip = PromptTriplet(d["object"], d["material"], d["qualifier"], validated=True)
        return cls(d["id"], d["image_path"], trip, d["prompt"], d["backend_id"],
                   int(d["seed"]), int(d["width"]), int(d["height"]))


class GenerationBackend(Protocol):
    backend_id: str
    deterministic: bool
    thread_safe: bool

    def generate(self, prompt: str, seed: int, width: int, height: int) -> np.ndarray:
        """Return an ``(height, width, 3)`` uint8 RGB image."""
        ...


def _digest_int(*parts) -> int:
    h = hashlib.sha256("\x00".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


def class_appearance(index: int, n_classes: int) -> dict:
    """Colour and stripe parameters the mock backend paints for class ``index``."""
    hue = index / max(n_classes, 1)
    rgb = np.array(colorsys.hsv_to_rgb(hue, 0.75, 0.85))
    return {
        "rgb": rgb,
        "freq": 2.0 + 3.0 * (index % 5),
        "angle": np.pi * (index % 4) / 4.0,
        "amp": 0.05 + 0.05 * (index % 3),
    }


def _paint(h, w, appearance, rng, jitter=0.03, noise=0.03):
    a = appearance["angle"]
    phase = rng.uniform(0, 2 * np.pi)
    k = np.float32(2 * np.pi * appearance["freq"] / 64.0)
    xs = np.arange(w, dtype=np.float32) * np.float32(np.cos(a)) * k
    ys = np.arange(h, dtype=np.float32) * np.float32(np.sin(a)) * k
    stripes = np.float32(appearance["amp"]) * np.sin(ys[:, None] + xs[None, :] + np.float32(phase))
    base = (appearance["rgb"] + rng.uniform(-jitter, jitter, size=3)).astype(np.float32)
    # blocky 8x8 noise: cheap to draw and to PNG-compress
    coarse = rng.standard_normal(size=(-(-h // 8), -(-w // 8), 3), dtype=np.float32)
    img = np.repeat(np.repeat(coarse, 8, axis=0), 8, axis=1)[:h, :w]
    img *= np.float32(noise)
    img += base
    img += stripes[..., None]
    return img


class MockGenerationBackend:
    """Procedural textures keyed by ``hash(prompt, seed)``.

    When a vocabulary of class names is given, the first class word found in
    the prompt fixes the object's colour/stripe pattern, so images of one class
    look alike. The object fills the centred box whose side is
    ``object_extent`` of the image; the background is painted as another
    class to act as a distractor material.
    """

    backend_id = "mock-procedural"
    deterministic = True
    thread_safe = True

    def __init__(self, vocabulary: Sequence[str] = (), object_extent: float = 0.5,
                 fail_on: Sequence[str] = ()):
        self.vocabulary = tuple(vocabulary)
        self.object_extent = object_extent
        self.fail_on = tuple(fail_on)

    def _class_index(self, prompt: str):
        words = prompt.lower().replace(",", " ").split()
        for i, name in enumerate(self.vocabulary):
            if name.lower() in words:
                return i
        return None

    def generate(self, prompt, seed, width, height):
        if any(tok in prompt for tok in self.fail_on):
            raise BackendError("mock failure requested", prompt)
        rng = np.random.default_rng(_digest_int(prompt, seed))
        n = max(len(self.vocabulary), 1)
        idx = self._class_index(prompt)
        if idx is None:
            obj_app = class_appearance(_digest_int(prompt) % 97, 97)
            bg_app = class_appearance((_digest_int(prompt) + 48) % 97, 97)
        else:
            obj_app = class_appearance(idx, n)
            other = (idx + 1 + rng.integers(0, max(n - 1, 1))) % n if n > 1 else idx
            bg_app = class_appearance(int(other), n)
            bg_app["rgb"] = 0.5 * bg_app["rgb"] + 0.25
        img = _paint(height, width, bg_app, rng)
        box = center_box(height, width, self.object_extent)
        (y0, y1), (x0, x1) = box
        img[y0:y1, x0:x1] = _paint(y1 - y0, x1 - x0, obj_app, rng)
        return (np.clip(img, 0.0, 1.0) * 255).round().astype(np.uint8)


def center_box(h: int, w: int, extent: float):
    bh, bw = int(round(h * extent)), int(round(w * extent))
    y0, x0 = (h - bh) // 2, (w - bw) // 2
    return (y0, y0 + bh), (x0, x0 + bw)


def encode_png(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG", compress_level=1)
    return buf.getvalue()


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def seed_for(base_seed: int, triplet_index: int, replica: int, images_per_prompt: int) -> int:
    return base_seed + triplet_index * images_per_prompt + replica


def generate_images(triplets: Sequence[PromptTriplet], images_per_prompt: int,
                    backend: GenerationBackend, base_seed: int, out_dir,
                    template: str = DEFAULT_TEMPLATE, width: int = DEFAULT_RESOLUTION,
                    height: int = DEFAULT_RESOLUTION, retries: int = 0,
                    jobs: int = 1) -> list[ImageRecord]:
    """Render every triplet ``images_per_prompt`` times and save PNGs.

    Images go to ``out_dir/images/<id>.png``; record paths are relative to
    ``out_dir``. Failed prompts are logged and skipped. Raises ``RunError``
    when nothing could be generated.
    """
    if images_per_prompt < 1:
        raise PreconditionError("images_per_prompt must be >= 1")
    if not triplets:
        raise PreconditionError("no triplets to generate")
    unvalidated = [t for t in triplets if not t.validated]
    if unvalidated:
        raise PreconditionError(f"{len(unvalidated)} triplets are not validated")

    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    prompts = [render_prompt(t, template) for t in triplets]
    jobs_list = [(ti, r) for ti in range(len(triplets)) for r in range(images_per_prompt)]

    def one(job):
        ti, r = job
        seed = seed_for(base_seed, ti, r, images_per_prompt)
        prompt = prompts[ti]
        last = None
        for _ in range(retries + 1):
            try:
                img = backend.generate(prompt, seed, width, height)
                break
            except Exception as exc:  # backend errors are not fatal per prompt
                last = exc
        else:
            log.warning("generation failed for %r seed %d: %s", prompt, seed, last)
            return None
        img = np.asarray(img)
        if img.shape != (height, width, 3) or img.dtype != np.uint8:
            log.warning("backend returned %s %s for %r; skipped", img.shape, img.dtype, prompt)
            return None
        data = encode_png(img)
        h = hashlib.sha256()
        for part in (backend.backend_id, prompt, str(seed)):
            h.update(part.encode("utf-8") + b"\x00")
        h.update(data)
        rid = h.hexdigest()[:16]
        rel = f"images/{rid}.png"
        (out_dir / rel).write_bytes(data)
        return ImageRecord(rid, rel, triplets[ti], prompt, backend.backend_id, seed, width, height)

    workers = jobs if getattr(backend, "thread_safe", False) else 1
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(one, jobs_list))
    records = [r for r in results if r is not None]
    failed = len(results) - len(records)
    if failed:
        log.warning("%d of %d generations failed", failed, len(results))
    if not records:
        raise RunError("every generation request failed")
    return records


def write_records(path, records: Sequence[ImageRecord]) -> None:
    lines = [json.dumps(r.to_json(), sort_keys=True, ensure_ascii=False) for r in records]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_records(path) -> list[ImageRecord]:
    text = Path(path).read_text(encoding="utf-8")
    return [ImageRecord.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]
