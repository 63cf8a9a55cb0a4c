"""Optimizer configuration, loss weighting, and the train/evaluate loops.

The combined loss controls how real and synthetic samples contribute:

    loss = lambda1 * (n_real/n) * L_real + (1 - lambda1) * (n_synth/n) * L_synth

which is equivalent to per-sample weights lambda1/n (real) and
(1 - lambda1)/n (synthetic). ``standard_ce`` and ``equal_treatment`` both
weight every sample 1/n; the latter name records that synthetic images are
deliberately treated like real ones.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import container
from .classifiers import (
    ClassifierFamily,
    ClassifierSpec,
    ContrastivePromptClassifier,
    build_classifier,
)
from .dataset import (
    AugmentationPolicy,
    DatasetManifest,
    ImageRecord,
    Origin,
    Split,
    SplitAssignment,
    apply_augmentation,
    augmentation_rng,
    load_image,
)
from .errors import ConfigError, DataError
from .metrics import ConfusionMatrix, accuracy, macro_f1
from .nn import AdamW, cross_entropy, softmax


class LossMode(str, Enum):
    STANDARD_CE = "standard_ce"
    WEIGHTED_COMBINED = "weighted_combined"
    EQUAL_TREATMENT = "equal_treatment"


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 1e-4
    lr_min: float = 1e-8
    warmup_epochs: int = 30
    total_epochs: int = 100
    batch_train: int = 64
    batch_eval: int = 1
    weight_decay: float = 1e-8
    lambda1: float = 0.5
    loss_mode: LossMode = LossMode.WEIGHTED_COMBINED
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "loss_mode", LossMode(self.loss_mode))
        if not (0.0 <= self.lambda1 <= 1.0):
            raise ConfigError(f"lambda1 must be in [0, 1], got {self.lambda1}")
        if self.lr_init <= 0 or self.lr_min <= 0:
            raise ConfigError("learning rates must be positive")
        if self.lr_min > self.lr_init:
            raise ConfigError(f"lr_min {self.lr_min} exceeds lr_init {self.lr_init}")
        if self.warmup_epochs < 1 or self.warmup_epochs >= self.total_epochs:
            raise ConfigError(
                f"need 1 <= warmup_epochs < total_epochs, got {self.warmup_epochs} "
                f"and {self.total_epochs}"
            )
        if self.batch_train < 1 or self.batch_eval < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be nonnegative, got {self.weight_decay}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    loss_total: float
    loss_real: float
    loss_synth: float
    val_accuracy: float
    val_macro_f1: float
    masked_classes: tuple[str, ...] = ()


def combined_loss(
    loss_real: float, loss_synth: float, n_real: int, n_synth: int, lambda1: float
) -> float:
    if n_real < 0 or n_synth < 0:
        raise ConfigError("sample counts must be nonnegative")
    n = n_real + n_synth
    if n == 0:
        raise ConfigError("combined loss undefined for an empty batch")
    if loss_real < 0 or loss_synth < 0:
        raise ConfigError("part losses must be nonnegative")
    if not (0.0 <= lambda1 <= 1.0):
        raise ConfigError(f"lambda1 must be in [0, 1], got {lambda1}")
    return lambda1 * (n_real / n) * loss_real + (1.0 - lambda1) * (n_synth / n) * loss_synth


def cosine_warmup_lr(epoch: int, config: TrainConfig) -> float:
    """Linear ramp 0 -> lr_init over the warmup, then cosine decay to lr_min.

    Endpoints are exact: lr(0) = 0, lr(warmup) = lr_init, lr(total) = lr_min.
    """
    if epoch < 0 or epoch > config.total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {config.total_epochs}]")
    if epoch <= config.warmup_epochs:
        return config.lr_init * epoch / config.warmup_epochs
    progress = (epoch - config.warmup_epochs) / (config.total_epochs - config.warmup_epochs)
    return config.lr_min + 0.5 * (config.lr_init - config.lr_min) * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------------------
# Record plumbing


def split_records(
    manifest: DatasetManifest, split: Split, assignment: SplitAssignment | None = None
) -> list[ImageRecord]:
    """Records in a split, via the assignment if given, else baked splits."""
    if assignment is not None:
        return assignment.records_in(manifest, split)
    return [r for r in manifest.records if r.split == split]


def _sample_weights(origins_real: np.ndarray, mode: LossMode, lambda1: float) -> np.ndarray:
    n = origins_real.size
    if mode is LossMode.WEIGHTED_COMBINED:
        w = np.where(origins_real, lambda1 / n, (1.0 - lambda1) / n)
    else:
        w = np.full(n, 1.0 / n)
    return w.astype(np.float32)


class _ImageStore:
    """Caches decoded images so each file is read once per run."""

    def __init__(self, resolution: int):
        self.resolution = resolution
        self._cache: dict[str, np.ndarray] = {}

    def get(self, path: str) -> np.ndarray:
        img = self._cache.get(path)
        if img is None:
            img = load_image(path, resolution=self.resolution)
            self._cache[path] = img
        return img


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class EvalResult:
    y_pred: np.ndarray
    probabilities: np.ndarray
    y_true: np.ndarray
    ties: np.ndarray  # bool per sample: argmax was not unique

    def confusion(self, n_classes: int) -> ConfusionMatrix:
        return ConfusionMatrix.from_predictions(self.y_true, self.y_pred, n_classes)


def evaluate(
    model,
    manifest: DatasetManifest,
    split: Split = Split.TEST,
    assignment: SplitAssignment | None = None,
    batch_size: int = 64,
    store: _ImageStore | None = None,
) -> EvalResult:
    """Forward the split without augmentation; never mutates the model.

    Probability rows are a softmax over all classes, so they sum to 1 even
    when training masked absent classes out of the loss.
    """
    records = split_records(manifest, split, assignment)
    if not records:
        raise DataError(f"split {split.value!r} is empty")
    if store is None:
        store = _ImageStore(model.spec.resolution)
    y_true = np.array([r.label.index for r in records], dtype=np.int64)
    prob_rows = []
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        images = np.stack([store.get(r.path) for r in chunk])
        logits = model.forward(model.prepare_batch(images))
        prob_rows.append(softmax(logits.astype(np.float64), axis=1))
    probs = np.concatenate(prob_rows, axis=0)
    y_pred = probs.argmax(axis=1).astype(np.int64)
    row_max = probs.max(axis=1, keepdims=True)
    ties = (probs == row_max).sum(axis=1) > 1
    return EvalResult(y_pred=y_pred, probabilities=probs, y_true=y_true, ties=ties)


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class TrainOutcome:
    model: object
    stats: list[EpochStats]
    best_epoch: int
    best_val_macro_f1: float


def train_classifier(
    spec: ClassifierSpec,
    manifest: DatasetManifest,
    config: TrainConfig,
    assignment: SplitAssignment | None = None,
    prompt_texts: list[str] | None = None,
    augmentation: AugmentationPolicy | None = None,
) -> TrainOutcome:
    """Train for exactly ``total_epochs`` epochs and keep the checkpoint with
    the best validation macro-F1 (earliest epoch wins ties).

    Classes absent from the train split are masked out of the loss (with a
    warning) but still appear in evaluation probabilities.
    """
    if spec.num_classes != len(manifest.registry):
        raise ConfigError(
            f"spec has {spec.num_classes} classes but registry has {len(manifest.registry)}"
        )
    train_recs = split_records(manifest, Split.TRAIN, assignment)
    if not train_recs:
        raise DataError("train split is empty")
    val_recs = split_records(manifest, Split.VALIDATION, assignment)
    if not val_recs:
        raise DataError("validation split is empty")

    record_pos = {rec: i for i, rec in enumerate(manifest.records)}
    present = {r.label.index for r in train_recs}
    class_mask = np.zeros(spec.num_classes, dtype=bool)
    class_mask[sorted(present)] = True
    masked = tuple(lbl.name for lbl in manifest.registry if lbl.index not in present)
    if masked:
        warnings.warn(
            f"classes absent from the train split are masked from the loss: {masked}",
            RuntimeWarning,
            stacklevel=2,
        )

    model = build_classifier(spec, prompt_texts=prompt_texts)
    opt = AdamW(model.params(), lr=config.lr_init, weight_decay=config.weight_decay)
    store = _ImageStore(spec.resolution)

    labels_all = np.array([r.label.index for r in train_recs], dtype=np.int64)
    real_all = np.array([r.origin is Origin.REAL for r in train_recs], dtype=bool)

    stats: list[EpochStats] = []
    best_state = model.state_dict()
    best_f1 = -1.0
    best_epoch = 0
    for epoch in range(1, config.total_epochs + 1):
        lr = cosine_warmup_lr(epoch, config)
        order = np.random.default_rng([config.seed, 7, epoch]).permutation(len(train_recs))
        real_loss_sum = 0.0
        synth_loss_sum = 0.0
        n_real_seen = 0
        n_synth_seen = 0
        for start in range(0, len(order), config.batch_train):
            take = order[start : start + config.batch_train]
            batch_recs = [train_recs[i] for i in take]
            images = []
            for rec in batch_recs:
                img = store.get(rec.path)
                if augmentation is not None and not augmentation.is_identity:
                    rng = augmentation_rng(config.seed, record_pos[rec], epoch)
                    img = apply_augmentation(img, augmentation, rng)
                images.append(img)
            x = model.prepare_batch(np.stack(images))
            labels = labels_all[take]
            is_real = real_all[take]
            weights = _sample_weights(is_real, config.loss_mode, config.lambda1)
            logits = model.forward(x)
            _, dlogits, per_sample = cross_entropy(logits, labels, weights, class_mask)
            opt.zero_grad()
            model.backward(dlogits)
            opt.step(lr=lr)
            per_sample = np.asarray(per_sample, dtype=np.float64)
            real_loss_sum += float(per_sample[is_real].sum())
            synth_loss_sum += float(per_sample[~is_real].sum())
            n_real_seen += int(is_real.sum())
            n_synth_seen += int((~is_real).sum())

        loss_real = real_loss_sum / n_real_seen if n_real_seen else 0.0
        loss_synth = synth_loss_sum / n_synth_seen if n_synth_seen else 0.0
        if config.loss_mode is LossMode.WEIGHTED_COMBINED:
            loss_total = combined_loss(loss_real, loss_synth, n_real_seen, n_synth_seen, config.lambda1)
        else:
            loss_total = (real_loss_sum + synth_loss_sum) / (n_real_seen + n_synth_seen)

        val = evaluate(
            model, manifest, Split.VALIDATION, assignment, batch_size=config.batch_eval, store=store
        )
        cm = val.confusion(spec.num_classes)
        val_acc = accuracy(cm)
        val_f1 = macro_f1(cm)
        stats.append(
            EpochStats(
                epoch=epoch,
                lr=lr,
                loss_total=loss_total,
                loss_real=loss_real,
                loss_synth=loss_synth,
                val_accuracy=val_acc,
                val_macro_f1=val_f1,
                masked_classes=masked,
            )
        )
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_epoch = epoch
            best_state = model.state_dict()

    model.load_state_dict(best_state)
    return TrainOutcome(model=model, stats=stats, best_epoch=best_epoch, best_val_macro_f1=best_f1)


# ---------------------------------------------------------------------------
# Logs and checkpoints

EPOCH_LOG_COLUMNS = (
    "epoch",
    "lr",
    "loss_total",
    "loss_real",
    "loss_synth",
    "val_accuracy",
    "val_macro_f1",
)


def write_epoch_log(stats: list[EpochStats], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPOCH_LOG_COLUMNS)
        for s in stats:
            writer.writerow(
                [s.epoch, repr(s.lr), repr(s.loss_total), repr(s.loss_real),
                 repr(s.loss_synth), repr(s.val_accuracy), repr(s.val_macro_f1)]
            )


def save_checkpoint(model, path: str | Path) -> None:
    spec = model.spec
    meta = {
        "family": spec.family.value,
        "backbone": spec.backbone,
        "num_classes": spec.num_classes,
        "resolution": spec.resolution,
        "seed": spec.seed,
        "temperature": spec.temperature,
    }
    container.write_tensor_container(path, meta=meta, tensors=model.state_dict())


def load_checkpoint(path: str | Path):
    meta, tensors = container.read_tensor_container(path)
    spec = ClassifierSpec(
        family=ClassifierFamily(meta["family"]),
        num_classes=int(meta["num_classes"]),
        backbone=str(meta["backbone"]),
        resolution=int(meta["resolution"]),
        seed=int(meta["seed"]),
        temperature=float(meta["temperature"]),
    )
    if spec.family is ClassifierFamily.CNN_HEAD:
        model = build_classifier(spec)
    else:
        prompts = np.asarray(tensors["prompts"], dtype=np.float32)
        feat_dim = int(spec.backbone.removeprefix("pixelproj"))
        model = ContrastivePromptClassifier(spec, prompts, feat_dim=feat_dim)
    model.load_state_dict(tensors)
    return model
