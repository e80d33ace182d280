"""Comparison protocols: zero-shot joint-embedding NN, VLM prompting, retrieval."""
from __future__ import annotations

import logging
from typing import Protocol, Sequence

import numpy as np

from .errors import BackendError, NumericError, PreconditionError
from .encoders import MaterialVLM, _seed_from, array_digest

log = logging.getLogger(__name__)

VLM_PROMPT = "Please identify the material of the non-masked area."


class JointEmbedder(Protocol):
    adapter_id: str
    dim: int

    def embed_image(self, image: np.ndarray) -> np.ndarray: ...

    def embed_text(self, text: str) -> np.ndarray: ...


class MockJointEmbedder:
    """Hash-seeded unit vectors for both modalities (shared dimension)."""

    def __init__(self, dim: int = 512):
        self.dim = dim
        self.adapter_id = f"mock-joint-{dim}"

    def _vec(self, *key):
        rng = np.random.default_rng(_seed_from(*key))
        v = rng.normal(size=self.dim)
        return v / np.linalg.norm(v)

    def embed_image(self, image):
        return self._vec("image", array_digest(image))

    def embed_text(self, text):
        return self._vec("text", text)


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise NumericError("cannot take cosine similarity of a zero-norm embedding")
    return m / norms


def cosine_nearest(query: np.ndarray, candidates: np.ndarray) -> int:
    """Index of the candidate with the largest cosine similarity (lowest on ties)."""
    sims = _unit_rows(np.atleast_2d(candidates)) @ _unit_rows(np.asarray(query, dtype=float))
    return int(np.argmax(sims))


def zeroshot_nn_classify(image: np.ndarray, class_texts: Sequence[str], embedder: JointEmbedder,
                         text_embeddings: np.ndarray | None = None) -> int:
    """Index of the class text whose embedding is closest to the image's.

    ``text_embeddings`` may be passed to avoid re-encoding the class texts.
    """
    if len(class_texts) < 2:
        raise PreconditionError("need at least two class texts")
    if text_embeddings is None:
        text_embeddings = np.stack([embedder.embed_text(t) for t in class_texts])
    return cosine_nearest(embedder.embed_image(image), text_embeddings)


def match_class_in_response(response: str, classes: Sequence[str]) -> str | None:
    """First class (in ``classes`` order) whose name occurs in ``response``.

    Case-insensitive substring containment, so "wooden" counts as "wood".
    """
    text = response.lower()
    for name in classes:
        if name.lower() in text:
            return name
    return None


def vlm_prompt_classify(image: np.ndarray, mask: np.ndarray, vlm: MaterialVLM,
                        classes: Sequence[str], prompt: str = VLM_PROMPT) -> str | None:
    try:
        response = vlm.respond(image, mask, prompt)
    except Exception as exc:
        raise BackendError(f"VLM request failed: {exc}", getattr(vlm, "adapter_id", None)) from exc
    return match_class_in_response(response, classes)


def retrieval_classify(features: np.ndarray, labels: Sequence[int]) -> np.ndarray:
    """Leave-one-out nearest neighbour by cosine similarity.

    Image i takes the label of its most similar *other* image; ties go to the
    lowest index.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    n = features.shape[0]
    if n < 2:
        raise PreconditionError("retrieval needs at least two images")
    if len(labels) != n:
        raise PreconditionError("features and labels differ in length")
    unit = _unit_rows(features)
    sims = unit @ unit.T
    np.fill_diagonal(sims, -np.inf)
    return labels[np.argmax(sims, axis=1)]


def run_vlm_baseline(pairs, vlm: MaterialVLM, classes: Sequence[str], prompt: str = VLM_PROMPT):
    """Classify ``(image, mask)`` pairs; returns ``(predictions, n_unevaluated)``.

    Predictions are class names, ``None`` when no class is named, or the
    sentinel ``False`` when the backend failed (excluded from scoring).
    """
    preds, failed = [], 0
    for image, mask in pairs:
        try:
            preds.append(vlm_prompt_classify(image, mask, vlm, classes, prompt))
        except BackendError as exc:
            log.warning("unevaluated sample: %s", exc)
            preds.append(False)
            failed += 1
    return preds, failed
