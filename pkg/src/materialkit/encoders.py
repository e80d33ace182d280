"""Adapter interfaces for the frozen foundation-model roles, plus mocks.

Roles: dense vision encoder (image -> G x G x D patch grid), text encoder
(text -> vector), region descriptor generator and material-naming VLM
(image + mask -> text). Remote text-producing adapters go through
:class:`ResponseCache` so repeated evaluation is reproducible.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Protocol

import numpy as np
from PIL import Image

from .errors import BackendError, DimensionError, PreconditionError

DEFAULT_GRID = 32
DEFAULT_PATCH = 14
DEFAULT_VISION_DIM = 768
DEFAULT_TEXT_DIM = 512
DEFAULT_RESOLUTION = DEFAULT_GRID * DEFAULT_PATCH  # 448

DEFAULT_DESCRIPTOR_PROMPT = (
    "Describe how the material of the non-masked region looks: its surface "
    "texture, reflectance, translucency and finish. Answer in one sentence."
)


class VisionEncoder(Protocol):
    adapter_id: str
    grid_size: int
    dim: int
    resolution: int

    def encode(self, image: np.ndarray) -> np.ndarray: ...


class TextEncoder(Protocol):
    adapter_id: str
    dim: int

    def encode(self, text: str) -> np.ndarray: ...


class DescriptorGenerator(Protocol):
    adapter_id: str

    def describe(self, image: np.ndarray, mask: np.ndarray, prompt: str) -> str: ...


class MaterialVLM(Protocol):
    adapter_id: str

    def respond(self, image: np.ndarray, mask: np.ndarray, prompt: str) -> str: ...


def resize_image(image: np.ndarray, resolution: int) -> np.ndarray:
    if image.shape[:2] == (resolution, resolution):
        return image
    im = Image.fromarray(image).resize((resolution, resolution), Image.BILINEAR)
    return np.asarray(im)


def resize_mask(mask: np.ndarray, resolution: int) -> np.ndarray:
    if mask.shape == (resolution, resolution):
        return mask.astype(bool)
    im = Image.fromarray(np.where(mask, 255, 0).astype(np.uint8))
    return np.asarray(im.resize((resolution, resolution), Image.NEAREST)) > 127


def encode_patches(image: np.ndarray, encoder: VisionEncoder) -> np.ndarray:
    r = encoder.resolution
    if image.ndim != 3 or image.shape[:2] != (r, r):
        raise DimensionError(f"vision encoder expects {r}x{r} input, got {image.shape[:2]}")
    grid = np.asarray(encoder.encode(image))
    g = encoder.grid_size
    if grid.shape != (g, g, encoder.dim):
        raise DimensionError(f"encoder returned {grid.shape}, declared {(g, g, encoder.dim)}")
    return grid


def encode_text(text: str, encoder: TextEncoder) -> np.ndarray:
    if not text or not text.strip():
        raise PreconditionError("cannot embed empty text")
    vec = np.asarray(encoder.encode(text), dtype=np.float64)
    if vec.shape != (encoder.dim,):
        raise DimensionError(f"text encoder returned {vec.shape}, declared ({encoder.dim},)")
    if not np.all(np.isfinite(vec)):
        raise BackendError("text embedding has non-finite entries", text)
    return vec


def describe_region(image: np.ndarray, mask: np.ndarray, generator: DescriptorGenerator,
                    prompt: str = DEFAULT_DESCRIPTOR_PROMPT) -> str:
    if mask.shape != image.shape[:2]:
        raise DimensionError(f"mask {mask.shape} does not match image {image.shape[:2]}")
    try:
        text = generator.describe(image, mask, prompt)
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(f"descriptor generation failed: {exc}", generator.adapter_id) from exc
    if not text or not text.strip():
        raise BackendError("descriptor backend returned empty text", generator.adapter_id)
    return text.strip()


def _seed_from(*parts: bytes | str) -> int:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode("utf-8") if isinstance(p, str) else p)
        h.update(b"\x00")
    return int.from_bytes(h.digest()[:8], "little")


def array_digest(a: np.ndarray) -> str:
    a = np.ascontiguousarray(a)
    h = hashlib.sha256(f"{a.dtype.str}{a.shape}".encode())
    h.update(a.tobytes())
    return h.hexdigest()


class MockVisionEncoder:
    """Per-patch features from a fixed random projection of patch statistics.

    Statistics per patch: mean R, G, B and texture energy (std of luminance).
    Each cell depends on its own patch only.
    """

    def __init__(self, grid_size=DEFAULT_GRID, dim=DEFAULT_VISION_DIM,
                 patch_size=DEFAULT_PATCH, seed=0):
        self.grid_size = grid_size
        self.dim = dim
        self.patch_size = patch_size
        self.resolution = grid_size * patch_size
        self.adapter_id = f"mock-vision-{grid_size}x{dim}-s{seed}"
        rng = np.random.default_rng(seed)
        self.projection = rng.normal(0.0, 1.0, size=(4, dim))

    def patch_stats(self, image):
        g, p = self.grid_size, self.patch_size
        x = image.astype(np.float64) / 255.0
        blocks = x.reshape(g, p, g, p, 3).transpose(0, 2, 1, 3, 4).reshape(g, g, p * p, 3)
        mean = blocks.mean(axis=2) - 0.5
        luma = blocks @ np.array([0.299, 0.587, 0.114])
        energy = 5.0 * luma.std(axis=2)
        return np.concatenate([mean, energy[..., None]], axis=-1)

    def encode(self, image):
        return self.patch_stats(image) @ self.projection


class MockTextEncoder:
    """Unit vector drawn from an RNG seeded by sha256(text)."""

    def __init__(self, dim=DEFAULT_TEXT_DIM):
        self.dim = dim
        self.adapter_id = f"mock-text-{dim}"

    def encode(self, text):
        rng = np.random.default_rng(_seed_from(text))
        v = rng.normal(size=self.dim)
        return v / np.linalg.norm(v)


class MockDescriptorGenerator:
    adapter_id = "mock-descriptor"

    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def describe(self, image, mask, prompt):
        with self._lock:
            self.calls += 1
        digest = hashlib.sha256((array_digest(image) + array_digest(mask)).encode()).hexdigest()
        return f"mock material description {digest[:12]}"


class MockMaterialVLM:
    """Names a material drawn deterministically from ``classes`` per image."""

    adapter_id = "mock-vlm"

    def __init__(self, classes):
        self.classes = tuple(classes)
        self.calls = 0

    def respond(self, image, mask, prompt):
        self.calls += 1
        k = _seed_from(array_digest(image), array_digest(mask)) % (len(self.classes) + 1)
        if k == len(self.classes):
            return "I cannot tell what this is made of."
        return f"This appears to be made of {self.classes[k]}."


class ResponseCache:
    """Content-addressed JSON cache: ``<root>/<adapter_id>/<sha256>.json``.

    Writes go to a temp file in the same directory and are renamed into place.
    """

    def __init__(self, root, adapter_id: str):
        self.dir = Path(root) / adapter_id
        self.dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def digest(request: dict) -> str:
        return hashlib.sha256(json.dumps(request, sort_keys=True).encode("utf-8")).hexdigest()

    def path_for(self, request: dict) -> Path:
        return self.dir / f"{self.digest(request)}.json"

    def get(self, request: dict):
        path = self.path_for(request)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))["response"]

    def put(self, request: dict, response) -> None:
        path = self.path_for(request)
        payload = json.dumps({"request": request, "digest": path.stem, "response": response},
                             sort_keys=True, indent=1)
        fd, tmp = tempfile.mkstemp(dir=self.dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


class CachedRegionAdapter:
    """Wrap a descriptor generator or VLM so each distinct request hits it once.

    The cache key is (model id, image hash, mask hash, prompt).
    """

    def __init__(self, inner, cache_dir, model_id: str | None = None):
        self.inner = inner
        self.model_id = model_id or inner.adapter_id
        self.adapter_id = self.model_id
        self.cache = ResponseCache(cache_dir, self.model_id)

    def _call(self, method, image, mask, prompt):
        request = {"model": self.model_id, "method": method, "image": array_digest(image),
                   "mask": array_digest(np.asarray(mask, dtype=bool)), "prompt": prompt}
        hit = self.cache.get(request)
        if hit is not None:
            return hit
        response = getattr(self.inner, method)(image, mask, prompt)
        self.cache.put(request, response)
        return response

    def describe(self, image, mask, prompt):
        return self._call("describe", image, mask, prompt)

    def respond(self, image, mask, prompt):
        return self._call("respond", image, mask, prompt)
