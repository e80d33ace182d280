"""Dual-stream material classifier.

Vision stream: frozen dense encoder -> patch grid -> mask-restricted pooling.
Language stream: frozen text encoder over a material descriptor.
The two vectors are concatenated (vision first) and an MLP head produces
class probabilities. Only the head is trained, with AdamW on cross-entropy.
"""
from __future__ import annotations

import dataclasses
import io
import json
import logging
import zipfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import DimensionError, NumericError, PreconditionError, BackendError
from .encoders import (
    DEFAULT_DESCRIPTOR_PROMPT,
    DescriptorGenerator,
    TextEncoder,
    VisionEncoder,
    describe_region,
    encode_patches,
    encode_text,
    resize_image,
    resize_mask,
)
from .generation import load_image
from .labeling import load_mask
from .prompts import MaterialTaxonomy

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA_VERSION = 1
MODES = ("class_bank", "per_image_descriptor")

# Appearance descriptors used as the default language prior, one per class.
DEFAULT_CLASS_DESCRIPTORS = {
    "plastic": "smooth molded surface with a uniform colour and a soft glossy or satin sheen",
    "metal": "hard surface with bright specular highlights, sharp reflections and brushed or polished finish",
    "leather": "supple hide with fine pores, subtle creases and a low waxy sheen",
    "fabric": "soft woven or knitted textile showing threads, folds and a matte fibrous texture",
    "wood": "fibrous surface with visible grain lines, knots and a warm brown tone",
    "stone": "rigid mineral surface with speckles, veins or rough grain and a cool matte look",
    "ceramic": "fired clay body with a smooth glaze or porous matte finish and crisp edges",
    "water": "transparent liquid with ripples, caustics and mirror-like reflections",
    "sponge": "light porous material full of irregular holes and a springy foam texture",
    "bone": "pale off-white hard tissue with a dry, slightly porous and chalky surface",
    "cardboard": "brown pressed paper board with corrugated flutes and torn fibrous edges",
    "concrete": "grey cast aggregate with pits, pebbles and a rough dusty matte surface",
    "foliage": "green leaves and stems with veins, waxy highlights and dense organic clutter",
    "fur": "dense soft hairs forming fluffy tufts with directional sheen",
    "gemstone": "faceted crystalline material with vivid colour, sparkle and internal refraction",
    "glass": "transparent or translucent rigid surface with refractions, sharp highlights and see-through edges",
    "paper": "thin flat fibrous sheet, matte white or printed, that creases and folds",
    "soil": "loose brown granular earth with clumps, pebbles and a dull moist look",
    "wax": "smooth translucent solid with soft subsurface glow and rounded drips",
    "wicker": "interlaced strands of rattan or willow forming a regular open weave",
    "rubber": "elastic dark material with a matte, slightly tacky surface and molded treads",
}


# ---------------------------------------------------------------- vision stream

def downsample_mask(mask: np.ndarray, grid_size: int = 32, resolution: int | None = None) -> np.ndarray:
    """Patch-level mask: a cell is active iff any foreground pixel falls in it.

    The mask is first resized (nearest) to ``resolution`` (default
    ``grid_size * 14``) when its shape differs.
    """
    resolution = resolution or grid_size * 14
    if resolution % grid_size:
        raise DimensionError(f"resolution {resolution} not divisible by grid {grid_size}")
    m = resize_mask(np.asarray(mask, dtype=bool), resolution)
    p = resolution // grid_size
    return m.reshape(grid_size, p, grid_size, p).any(axis=(1, 3))


def masked_max_pool(grid: np.ndarray, pmask: np.ndarray) -> np.ndarray:
    """Elementwise max over active cells; all cells when none is active."""
    if grid.shape[:2] != pmask.shape:
        raise DimensionError(f"grid {grid.shape[:2]} vs mask {pmask.shape}")
    cells = grid.reshape(-1, grid.shape[-1])
    active = pmask.ravel()
    if active.any():
        cells = cells[active]
    return cells.max(axis=0)


def masked_mean_pool(grid: np.ndarray, pmask: np.ndarray) -> np.ndarray:
    if grid.shape[:2] != pmask.shape:
        raise DimensionError(f"grid {grid.shape[:2]} vs mask {pmask.shape}")
    cells = grid.reshape(-1, grid.shape[-1])
    active = pmask.ravel()
    if active.any():
        cells = cells[active]
    return cells.mean(axis=0)


POOLERS = {"max": masked_max_pool, "mean": masked_mean_pool}


def vision_feature(image: np.ndarray, mask: np.ndarray, encoder: VisionEncoder,
                   pooling: str = "max") -> np.ndarray:
    img = resize_image(image, encoder.resolution)
    grid = encode_patches(img, encoder)
    pmask = downsample_mask(mask, encoder.grid_size, encoder.resolution)
    return POOLERS[pooling](grid, pmask)


def fuse(vision: np.ndarray, text: np.ndarray, vision_dim: int | None = None,
         text_dim: int | None = None) -> np.ndarray:
    vision, text = np.asarray(vision), np.asarray(text)
    if vision_dim is not None and vision.shape[-1] != vision_dim:
        raise DimensionError(f"vision feature has {vision.shape[-1]} dims, expected {vision_dim}")
    if text_dim is not None and text.shape[-1] != text_dim:
        raise DimensionError(f"text embedding has {text.shape[-1]} dims, expected {text_dim}")
    if vision.shape[:-1] != text.shape[:-1]:
        raise DimensionError(f"batch shapes differ: {vision.shape} vs {text.shape}")
    return np.concatenate([vision, text], axis=-1)


def split_fused(fused: np.ndarray, vision_dim: int):
    return fused[..., :vision_dim], fused[..., vision_dim:]


# ---------------------------------------------------------------- MLP head

def _gelu(x):
    return x * ndtr(x)


def _gelu_grad(x):
    return ndtr(x) + x * np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi)


def _relu(x):
    return np.maximum(x, 0)


def _relu_grad(x):
    return (x > 0).astype(x.dtype)


ACTIVATIONS = {"gelu": (_gelu, _gelu_grad), "relu": (_relu, _relu_grad)}
PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclasses.dataclass
class MlpHead:
    """One hidden layer: ``input -> hidden (activation) -> K logits``."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    activation: str = "gelu"

    @classmethod
    def init(cls, in_dim, hidden, n_classes, seed=0, activation="gelu", dtype=np.float32):
        rng = np.random.default_rng(seed)
        # Kaiming-uniform weights, zero biases.
        b_in, b_hid = np.sqrt(6.0 / in_dim), np.sqrt(6.0 / hidden)
        return cls(
            rng.uniform(-b_in, b_in, size=(in_dim, hidden)).astype(dtype),
            np.zeros(hidden, dtype=dtype),
            rng.uniform(-b_hid, b_hid, size=(hidden, n_classes)).astype(dtype),
            np.zeros(n_classes, dtype=dtype),
            activation,
        )

    @classmethod
    def zeros(cls, in_dim, hidden, n_classes, activation="gelu", dtype=np.float64):
        return cls(np.zeros((in_dim, hidden), dtype), np.zeros(hidden, dtype),
                   np.zeros((hidden, n_classes), dtype), np.zeros(n_classes, dtype), activation)

    @property
    def in_dim(self):
        return self.w1.shape[0]

    @property
    def hidden(self):
        return self.w1.shape[1]

    @property
    def n_classes(self):
        return self.w2.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def copy(self) -> "MlpHead":
        return MlpHead(*(p.copy() for p in self.params().values()), activation=self.activation)

    def astype(self, dtype) -> "MlpHead":
        return MlpHead(*(p.astype(dtype) for p in self.params().values()), activation=self.activation)

    def equals(self, other: "MlpHead") -> bool:
        return self.activation == other.activation and all(
            np.array_equal(a, b) for a, b in zip(self.params().values(), other.params().values()))


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def logits(head: MlpHead, f: np.ndarray) -> np.ndarray:
    act = ACTIVATIONS[head.activation][0]
    return act(f @ head.w1 + head.b1) @ head.w2 + head.b2


def forward(head: MlpHead, f: np.ndarray) -> np.ndarray:
    """Class probabilities for one fused feature (or a batch of them)."""
    f = np.asarray(f)
    if f.shape[-1] != head.in_dim:
        raise DimensionError(f"head expects {head.in_dim} inputs, got {f.shape[-1]}")
    if not np.all(np.isfinite(f)):
        raise NumericError("non-finite value in fused feature")
    return np.exp(_log_softmax(logits(head, f)))


def loss_and_grads(head: MlpHead, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch and its gradient w.r.t. every parameter."""
    act, dact = ACTIVATIONS[head.activation]
    n = x.shape[0]
    z1 = x @ head.w1 + head.b1
    a = act(z1)
    z2 = a @ head.w2 + head.b2
    logp = _log_softmax(z2)
    loss = -logp[np.arange(n), y].mean()
    dz2 = np.exp(logp)
    dz2[np.arange(n), y] -= 1.0
    dz2 /= n
    da = dz2 @ head.w2.T
    dz1 = da * dact(z1)
    grads = {"w1": x.T @ dz1, "b1": dz1.sum(axis=0), "w2": a.T @ dz2, "b2": dz2.sum(axis=0)}
    return float(loss), grads, logp


class AdamW:
    """Adam with decoupled weight decay (bias-corrected moments)."""

    def __init__(self, lr=5e-5, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]):
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for name, p in params.items():
            g = grads[name].astype(p.dtype, copy=False)
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            p *= 1 - self.lr * self.weight_decay
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------- language stream

@dataclasses.dataclass
class ClassDescriptorBank:
    classes: tuple[str, ...]
    texts: tuple[str, ...]
    embeddings: np.ndarray  # (K, D_txt)

    def __post_init__(self):
        if not (len(self.classes) == len(self.texts) == len(self.embeddings)):
            raise PreconditionError("descriptor bank needs one text and embedding per class")

    def __len__(self):
        return len(self.classes)

    def __getitem__(self, k):
        return self.embeddings[k]

    @property
    def dim(self):
        return self.embeddings.shape[1]


def build_descriptor_bank(taxonomy: MaterialTaxonomy, text_encoder: TextEncoder,
                          descriptors: Mapping[str, str] | None = None) -> ClassDescriptorBank:
    """One descriptor text and embedding per taxonomy class (in taxonomy order)."""
    descriptors = dict(descriptors or {})
    texts = []
    for cls in taxonomy.classes:
        text = descriptors.get(cls) or DEFAULT_CLASS_DESCRIPTORS.get(cls) or f"{cls} material"
        texts.append(f"{cls}: {text}")
    emb = np.stack([encode_text(t, text_encoder) for t in texts])
    return ClassDescriptorBank(taxonomy.classes, tuple(texts), emb)


# ---------------------------------------------------------------- training

@dataclasses.dataclass
class TrainConfig:
    optimizer: str = "adamw"
    learning_rate: float = 5e-5
    weight_decay: float = 0.01
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    head_mode: str = "head"
    hidden: int = 512
    activation: str = "gelu"
    pooling: str = "max"
    text_mode: str = "class_bank"
    dtype: str = "float32"

    def __post_init__(self):
        if self.optimizer != "adamw":
            raise PreconditionError(f"unsupported optimizer {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise PreconditionError("learning_rate must be > 0")
        if self.epochs < 0:
            raise PreconditionError("epochs must be >= 0")
        if self.batch_size < 1:
            raise PreconditionError("batch_size must be >= 1")
        if self.head_mode not in ("head", "full"):
            raise PreconditionError(f"head_mode must be 'head' or 'full', got {self.head_mode!r}")
        if self.pooling not in POOLERS:
            raise PreconditionError(f"pooling must be one of {sorted(POOLERS)}")
        if self.text_mode not in MODES:
            raise PreconditionError(f"text_mode must be one of {MODES}")
        if self.activation not in ACTIVATIONS:
            raise PreconditionError(f"activation must be one of {sorted(ACTIVATIONS)}")

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass
class Encoders:
    vision: VisionEncoder
    text: TextEncoder
    descriptor: DescriptorGenerator | None = None
    descriptor_prompt: str = DEFAULT_DESCRIPTOR_PROMPT

    def ids(self) -> dict:
        return {
            "vision": self.vision.adapter_id, "vision_dim": self.vision.dim,
            "grid_size": self.vision.grid_size, "resolution": self.vision.resolution,
            "text": self.text.adapter_id, "text_dim": self.text.dim,
            "descriptor": getattr(self.descriptor, "adapter_id", None),
        }


def load_pair(manifest, sample):
    return load_image(manifest.resolve(sample.image_path)), load_mask(manifest.resolve(sample.mask_path))


def extract_features(manifest, encoders: Encoders, pooling: str = "max", jobs: int = 1,
                     empty_masks: bool = False) -> np.ndarray:
    """Pooled vision features for every entry, in manifest order.

    ``empty_masks`` discards the stored masks so every image is pooled over
    all patches (the no-semantics ablation).
    """
    def one(sample):
        image, mask = load_pair(manifest, sample)
        if empty_masks:
            mask = np.zeros_like(mask)
        return vision_feature(image, mask, encoders.vision, pooling)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        feats = list(pool.map(one, manifest.entries))
    if not feats:
        return np.zeros((0, encoders.vision.dim))
    return np.stack(feats)


def describe_and_embed(manifest, encoders: Encoders) -> np.ndarray:
    if encoders.descriptor is None:
        raise PreconditionError("per-image descriptor mode needs a descriptor generator")
    out = []
    for sample in manifest.entries:
        image, mask = load_pair(manifest, sample)
        text = describe_region(image, mask, encoders.descriptor, encoders.descriptor_prompt)
        out.append(encode_text(text, encoders.text))
    return np.stack(out)


@dataclasses.dataclass
class TrainResult:
    head: MlpHead
    log: list[dict]
    config: TrainConfig
    effective_head_mode: str


def class_bank_scores(head: MlpHead, vision: np.ndarray, bank_embeddings: np.ndarray,
                      chunk: int = 256) -> np.ndarray:
    """``s[n, k] = softmax(MLP(vision[n] ++ bank[k]))[k]`` for all n, k.

    Uses the split of the first layer into vision and text blocks so the
    N x K fused matrix is never built.
    """
    vision = np.atleast_2d(vision)
    dv = vision.shape[1]
    if dv + bank_embeddings.shape[1] != head.in_dim:
        raise DimensionError("feature dims do not match head input")
    if not np.all(np.isfinite(vision)):
        raise NumericError("non-finite value in vision feature")
    act = ACTIVATIONS[head.activation][0]
    k = bank_embeddings.shape[0]
    text_part = bank_embeddings @ head.w1[dv:] + head.b1  # (K, H)
    diag = np.arange(k)
    out = np.empty((vision.shape[0], k), dtype=np.result_type(head.w1, vision))
    for s in range(0, vision.shape[0], chunk):
        pre = (vision[s:s + chunk] @ head.w1[:dv])[:, None, :] + text_part[None]
        z = act(pre) @ head.w2 + head.b2  # (n, K_text, K_out)
        logp = _log_softmax(z)
        out[s:s + chunk] = np.exp(logp[:, diag, diag])
    return out


def train_head(vision: np.ndarray, labels: np.ndarray, text: np.ndarray, cfg: TrainConfig,
               bank_embeddings: np.ndarray | None = None, n_classes: int | None = None) -> TrainResult:
    """Fit the MLP head on precomputed features.

    ``text`` is either a ``(K, D_txt)`` class bank (each sample paired with its
    own class row) or a per-sample ``(N, D_txt)`` array of descriptor
    embeddings (``cfg.text_mode == 'per_image_descriptor'``).
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise PreconditionError("empty training set")
    dtype = np.dtype(cfg.dtype)
    if cfg.text_mode == "class_bank":
        n_classes = n_classes or text.shape[0]
        per_sample_text = text[labels]
        bank_embeddings = text if bank_embeddings is None else bank_embeddings
    else:
        if text.shape[0] != n:
            raise DimensionError("per-image text embeddings must align with samples")
        per_sample_text = text
        if n_classes is None:
            if bank_embeddings is None:
                raise PreconditionError("n_classes or bank_embeddings required")
            n_classes = bank_embeddings.shape[0]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise PreconditionError("label index outside taxonomy")

    x = fuse(vision, per_sample_text).astype(dtype)
    seq = np.random.SeedSequence(cfg.seed)
    init_seed, shuffle_seed = (int(s.generate_state(1)[0]) for s in seq.spawn(2))
    head = MlpHead.init(x.shape[1], cfg.hidden, n_classes, init_seed, cfg.activation, dtype)
    opt = AdamW(cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(shuffle_seed)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total, correct = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            with np.errstate(invalid="ignore", over="ignore"):
                loss, grads, logp = loss_and_grads(head, x[idx], labels[idx])
            if not np.isfinite(loss):
                grad_norms = {k: float(np.linalg.norm(g)) for k, g in grads.items()}
                raise NumericError(
                    f"loss became {loss} at epoch {epoch}, batch starting {s}; "
                    f"grad norms {grad_norms}; lr {cfg.learning_rate}")
            total += loss * len(idx)
            correct += int((logp.argmax(axis=1) == labels[idx]).sum())
            opt.step(head.params(), grads)
        entry = {"epoch": epoch, "loss": total / n, "train_accuracy": correct / n}
        if bank_embeddings is not None:
            scores = class_bank_scores(head, vision.astype(dtype), bank_embeddings.astype(dtype))
            entry["train_accuracy_class_bank"] = float((scores.argmax(axis=1) == labels).mean())
        history.append(entry)
        log.info("epoch %d loss %.4f acc %.4f", epoch, entry["loss"], entry["train_accuracy"])
    return TrainResult(head, history, cfg, cfg.head_mode)


def train(train_set, bank: ClassDescriptorBank, encoders: Encoders, cfg: TrainConfig,
          jobs: int = 1, empty_masks: bool = False) -> TrainResult:
    """Extract frozen features for ``train_set`` and fit the head."""
    if len(train_set) == 0:
        raise PreconditionError("empty training set")
    effective = cfg.head_mode
    if cfg.head_mode == "full" and not getattr(encoders.vision, "supports_finetune", False):
        log.warning("vision adapter %s cannot be fine-tuned; training the head only",
                    encoders.vision.adapter_id)
        effective = "head"
    labels = np.array([bank.classes.index(e.material) for e in train_set.entries])
    vision = extract_features(train_set, encoders, cfg.pooling, jobs, empty_masks)
    if cfg.text_mode == "class_bank":
        text = bank.embeddings
    else:
        text = describe_and_embed(train_set, encoders)
    result = train_head(vision, labels, text, cfg, bank_embeddings=bank.embeddings,
                        n_classes=len(bank))
    result.effective_head_mode = effective
    return result


# ---------------------------------------------------------------- inference

def predict_features(head: MlpHead, vision: np.ndarray, bank: ClassDescriptorBank,
                     mode: str = "class_bank", text: np.ndarray | None = None):
    """Predicted class indices and per-class scores for pooled features.

    class_bank: score_k is the probability of class k when the feature is
    fused with class k's descriptor. per_image_descriptor: one forward pass
    per sample with its own descriptor embedding (``text``). Ties go to the
    lowest index.
    """
    vision = np.atleast_2d(vision).astype(head.w1.dtype)
    if mode == "class_bank":
        scores = class_bank_scores(head, vision, bank.embeddings.astype(head.w1.dtype))
    elif mode == "per_image_descriptor":
        if text is None:
            raise PreconditionError("per_image_descriptor mode needs text embeddings")
        scores = forward(head, fuse(vision, np.atleast_2d(text).astype(head.w1.dtype)))
    else:
        raise PreconditionError(f"unknown mode {mode!r}; expected one of {MODES}")
    return scores.argmax(axis=1), scores


def predict(image: np.ndarray, mask: np.ndarray, head: MlpHead, bank: ClassDescriptorBank,
            encoders: Encoders, mode: str = "class_bank", pooling: str = "max"):
    """Classify one masked region; returns ``(class_index, scores)``.

    In per-image descriptor mode a descriptor backend failure falls back to
    class-bank scoring with a warning.
    """
    if mode not in MODES:
        raise PreconditionError(f"unknown mode {mode!r}; expected one of {MODES}")
    v = vision_feature(image, mask, encoders.vision, pooling)
    if mode == "per_image_descriptor":
        try:
            if encoders.descriptor is None:
                raise BackendError("no descriptor generator configured")
            desc = describe_region(image, mask, encoders.descriptor, encoders.descriptor_prompt)
            t = encode_text(desc, encoders.text)
        except BackendError as exc:
            log.warning("descriptor unavailable (%s); falling back to class-bank mode", exc)
            mode = "class_bank"
        else:
            pred, scores = predict_features(head, v, bank, mode, t)
            return int(pred[0]), scores[0]
    pred, scores = predict_features(head, v, bank, "class_bank")
    return int(pred[0]), scores[0]


# ---------------------------------------------------------------- checkpoints

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _zip_write(zf, name, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, head: MlpHead, taxonomy: MaterialTaxonomy, encoders: Encoders,
                    bank: ClassDescriptorBank, cfg: TrainConfig, train_log: Sequence[dict] = (),
                    extra: Mapping | None = None) -> None:
    """Single zip archive: head arrays (.npy), bank embeddings and ``meta.json``.

    Entry timestamps are fixed so equal inputs give byte-identical files.
    """
    meta = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "taxonomy": taxonomy.to_dict(),
        "adapters": encoders.ids(),
        "train_config": cfg.to_dict(),
        "activation": head.activation,
        "bank_texts": list(bank.texts),
        "train_log": list(train_log),
        **dict(extra or {}),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as zf:
        _zip_write(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode("utf-8"))
        arrays = dict(head.params(), bank_embeddings=bank.embeddings)
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            _zip_write(zf, f"{name}.npy", buf.getvalue())


@dataclasses.dataclass
class Checkpoint:
    head: MlpHead
    taxonomy: MaterialTaxonomy
    bank: ClassDescriptorBank
    config: TrainConfig
    meta: dict


def load_checkpoint(path) -> Checkpoint:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
            raise PreconditionError(f"unsupported checkpoint schema {meta.get('schema_version')}")
        arrays = {}
        for name in (*PARAM_NAMES, "bank_embeddings"):
            arrays[name] = np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.npy")),
                                                    allow_pickle=False)
    tax = MaterialTaxonomy(tuple(meta["taxonomy"]["classes"]), meta["taxonomy"]["sub_materials"])
    head = MlpHead(*(arrays[n] for n in PARAM_NAMES), activation=meta["activation"])
    bank = ClassDescriptorBank(tax.classes, tuple(meta["bank_texts"]), arrays["bank_embeddings"])
    return Checkpoint(head, tax, bank, TrainConfig(**meta["train_config"]), meta)
