"""Classifier families.

Two families share one training loop: ``cnn_head`` (a small convolutional
backbone with a trainable fully-connected head sized to the class registry)
and ``contrastive_prompt`` (a frozen pixel-feature extractor and frozen
per-class prompt embeddings, with only the image projection trained;
classification picks the class whose prompt is most similar).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .embeddings import PixelProjectionEmbedding, text_embedding
from .errors import ConfigError
from .nn import Conv2d, GlobalAvgPool, Linear, MaxPool2x2, ReLU

DEFAULT_TEMPERATURE = 0.07
PROMPT_EMBED_DIM = 32


class ClassifierFamily(str, Enum):
    CNN_HEAD = "cnn_head"
    CONTRASTIVE_PROMPT = "contrastive_prompt"


@dataclass(frozen=True)
class ClassifierSpec:
    family: ClassifierFamily
    num_classes: int
    backbone: str = ""
    resolution: int = 32
    pretrained: bool = False
    seed: int = 0
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", ClassifierFamily(self.family))
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.resolution < 4:
            raise ConfigError(f"resolution too small: {self.resolution}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not self.backbone:
            default = "cnn8-16" if self.family is ClassifierFamily.CNN_HEAD else "pixelproj64"
            object.__setattr__(self, "backbone", default)


class SmallCnn:
    """conv-relu-pool twice, global average pool, linear head."""

    def __init__(self, spec: ClassifierSpec, channels: tuple[int, int]):
        if spec.resolution % 4:
            raise ConfigError(f"cnn_head needs resolution divisible by 4, got {spec.resolution}")
        self.spec = spec
        rng = np.random.default_rng([spec.seed, spec.num_classes, channels[0], channels[1]])
        c1, c2 = channels
        self.conv1 = Conv2d(3, c1, rng)
        self.relu1 = ReLU()
        self.pool1 = MaxPool2x2()
        self.conv2 = Conv2d(c1, c2, rng)
        self.relu2 = ReLU()
        self.pool2 = MaxPool2x2()
        self.gap = GlobalAvgPool()
        self.head = Linear(c2, spec.num_classes, rng)
        self._layers = [self.conv1, self.relu1, self.pool1, self.conv2, self.relu2, self.pool2, self.gap, self.head]

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    def prepare_batch(self, images: np.ndarray) -> np.ndarray:
        """(N, H, W, 3) uint8 -> normalized (N, 3, H, W) float32."""
        x = np.asarray(images, dtype=np.float32) / 255.0
        x = (x - 0.5) / 0.5
        return np.ascontiguousarray(x.transpose(0, 3, 1, 2))

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self._layers:
            x = layer.forward(x)
        return x

    def backward(self, dlogits: np.ndarray) -> None:
        d = dlogits
        for layer in reversed(self._layers):
            d = layer.backward(d)

    def params(self):
        out = []
        out += self.conv1.params("conv1")
        out += self.conv2.params("conv2")
        out += self.head.params("head")
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: value.copy() for name, value, _ in self.params()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = {name: value for name, value, _ in self.params()}
        if set(state) != set(own):
            raise ConfigError(
                f"state mismatch: expected {sorted(own)}, got {sorted(state)}"
            )
        for name, value in own.items():
            incoming = np.asarray(state[name], dtype=value.dtype)
            if incoming.shape != value.shape:
                raise ConfigError(f"tensor {name!r}: shape {incoming.shape} != {value.shape}")
            value[...] = incoming


class ContrastivePromptClassifier:
    """Frozen pixel features and prompt embeddings; trainable image projection.

    Logits are cosine similarities between projected image features and the
    class prompt vectors, divided by the temperature.
    """

    def __init__(self, spec: ClassifierSpec, prompt_matrix: np.ndarray, feat_dim: int):
        self.spec = spec
        prompt_matrix = np.asarray(prompt_matrix, dtype=np.float32)
        if prompt_matrix.shape[0] != spec.num_classes:
            raise ConfigError(
                f"prompt matrix has {prompt_matrix.shape[0]} rows for {spec.num_classes} classes"
            )
        self.prompts = prompt_matrix
        self.extractor = PixelProjectionEmbedding(dim=feat_dim, grid=8, seed=0)
        emb_dim = prompt_matrix.shape[1]
        rng = np.random.default_rng([spec.seed, spec.num_classes, feat_dim, emb_dim])
        self.w = (rng.standard_normal((emb_dim, feat_dim)) / np.sqrt(feat_dim)).astype(np.float32)
        self.gw = np.zeros_like(self.w)
        self._cache = None

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    def prepare_batch(self, images: np.ndarray) -> np.ndarray:
        return self.extractor.embed(images)

    def forward(self, feats: np.ndarray) -> np.ndarray:
        e = feats @ self.w.T
        r = np.linalg.norm(e, axis=1, keepdims=True)
        r = np.maximum(r, np.float32(1e-12))
        unit = e / r
        logits = (unit @ self.prompts.T) / np.float32(self.spec.temperature)
        self._cache = (feats, unit, r)
        return logits.astype(np.float32)

    def backward(self, dlogits: np.ndarray) -> None:
        feats, unit, r = self._cache
        d_unit = (dlogits @ self.prompts) / np.float32(self.spec.temperature)
        # through the row normalization: d e = (d_unit - (d_unit . unit) unit) / r
        inner = (d_unit * unit).sum(axis=1, keepdims=True)
        d_e = (d_unit - inner * unit) / r
        self.gw += d_e.T @ feats

    def params(self):
        return [("proj.w", self.w, self.gw)]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"proj.w": self.w.copy(), "prompts": self.prompts.copy()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != {"proj.w", "prompts"}:
            raise ConfigError(f"state mismatch: expected ['proj.w', 'prompts'], got {sorted(state)}")
        w = np.asarray(state["proj.w"], dtype=np.float32)
        prompts = np.asarray(state["prompts"], dtype=np.float32)
        if w.shape != self.w.shape or prompts.shape != self.prompts.shape:
            raise ConfigError("checkpoint tensor shapes do not match this classifier")
        self.w[...] = w
        self.prompts = prompts


def build_classifier(spec: ClassifierSpec, prompt_texts: list[str] | None = None):
    """Instantiate a model for the spec.

    ``prompt_texts`` (one per class, registry order) is required for the
    contrastive family and ignored otherwise.
    """
    if spec.family is ClassifierFamily.CNN_HEAD:
        if spec.pretrained:
            raise ConfigError(
                "pretrained backbones are not bundled at this scale; "
                "load weights from a checkpoint instead"
            )
        m = re.fullmatch(r"cnn(\d+)-(\d+)", spec.backbone)
        if not m:
            raise ConfigError(f"unknown cnn_head backbone {spec.backbone!r} (expected 'cnn<a>-<b>')")
        return SmallCnn(spec, channels=(int(m.group(1)), int(m.group(2))))
    m = re.fullmatch(r"pixelproj(\d+)", spec.backbone)
    if not m:
        raise ConfigError(
            f"unknown contrastive backbone {spec.backbone!r} (expected 'pixelproj<dim>')"
        )
    if prompt_texts is None or len(prompt_texts) != spec.num_classes:
        got = "none" if prompt_texts is None else str(len(prompt_texts))
        raise ConfigError(
            f"contrastive_prompt needs one prompt per class ({spec.num_classes}), got {got}"
        )
    prompt_matrix = np.stack([text_embedding(t, dim=PROMPT_EMBED_DIM) for t in prompt_texts])
    return ContrastivePromptClassifier(spec, prompt_matrix, feat_dim=int(m.group(1)))


# ---------------------------------------------------------------------------
# Prompt-similarity decision rule


@dataclass(frozen=True)
class ContrastiveDecision:
    label: object  # the winning key of the prompt map
    similarities: dict = field(default_factory=dict)
    tied: bool = False


def contrastive_classify(image_embedding: np.ndarray, prompt_embeddings: dict) -> ContrastiveDecision:
    """Cosine-similarity argmax over a class -> vector map.

    Exact ties go to the lowest class (sort order of the keys) and are
    flagged so callers can tell a decisive win from a coin flip.
    """
    if not prompt_embeddings:
        raise ConfigError("prompt embedding map is empty")
    image_embedding = np.asarray(image_embedding, dtype=np.float64)
    norm = np.linalg.norm(image_embedding)
    if norm == 0:
        raise ConfigError("image embedding is the zero vector")
    sims: dict = {}
    for key in sorted(prompt_embeddings):
        vec = np.asarray(prompt_embeddings[key], dtype=np.float64)
        if vec.shape != image_embedding.shape:
            raise ConfigError(
                f"prompt {key!r} has dimension {vec.shape} but image has {image_embedding.shape}"
            )
        vnorm = np.linalg.norm(vec)
        if vnorm == 0:
            raise ConfigError(f"prompt {key!r} embedding is the zero vector")
        sims[key] = float(image_embedding @ vec / (norm * vnorm))
    best = max(sims.values())
    winners = [k for k in sims if sims[k] == best]
    return ContrastiveDecision(label=winners[0], similarities=sims, tied=len(winners) > 1)
