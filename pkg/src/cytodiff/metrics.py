"""Classification and distribution metrics.

Conventions fixed here and relied on by the tests:

* macro-F1 averages over every class in the registry; a class with
  precision + recall == 0 contributes an F1 of exactly 0.
* one-vs-rest AUC uses the rank statistic with average ranks, so tied
  scores earn half credit; classes without both positives and negatives
  are excluded from the macro average and reported as skipped.
* Frechet distance goes through an eigendecomposition of the symmetrized
  cross term; small negative eigenvalues (rounding) are clamped to zero,
  large ones are an error.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, DataError

EIGENVALUE_CLAMP_TOL = 1e-6
FID_MIN_COUNT = 1000


# ---------------------------------------------------------------------------
# Confusion matrix and derived scores


@dataclass
class ConfusionMatrix:
    """Counts with true classes along rows and predicted classes along columns."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ConfigError(f"confusion matrix must be square, got shape {self.counts.shape}")
        if (self.counts < 0).any():
            raise ConfigError("confusion matrix has negative counts")

    @classmethod
    def from_predictions(
        cls, y_true: np.ndarray, y_pred: np.ndarray, n_classes: int
    ) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape or y_true.ndim != 1:
            raise ConfigError(
                f"label arrays must be 1-D and equal length, got {y_true.shape} and {y_pred.shape}"
            )
        for name, arr in (("true", y_true), ("predicted", y_pred)):
            if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
                raise DataError(f"{name} labels outside [0, {n_classes})")
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts)

    @classmethod
    def zeros(cls, n_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((n_classes, n_classes), dtype=np.int64))

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.counts.shape != other.counts.shape:
            raise ConfigError("cannot add confusion matrices of different sizes")
        return ConfusionMatrix(self.counts + other.counts)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise DataError("accuracy undefined on an empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    """F1 per class; precision + recall == 0 yields exactly 0."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2.0 * precision * recall / np.where(denom > 0, denom, 1.0), 0.0)
    return f1


def macro_f1(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise DataError("macro-F1 undefined on an empty confusion matrix")
    return float(per_class_f1(cm).mean())


# ---------------------------------------------------------------------------
# One-vs-rest AUC


@dataclass(frozen=True)
class AucResult:
    per_class: dict[int, float]
    macro: float
    skipped: tuple[int, ...] = ()


def auc_ovr(y_true: np.ndarray, scores: np.ndarray) -> AucResult:
    """Mann-Whitney AUC per class from an (N, C) score matrix.

    Ties between a positive and a negative score count half. A class
    missing either positives or negatives is skipped; if every class is
    skipped the AUC is undefined and raising beats returning a number.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or y_true.ndim != 1 or scores.shape[0] != y_true.shape[0]:
        raise ConfigError(
            f"need labels (N,) and scores (N, C), got {y_true.shape} and {scores.shape}"
        )
    n_classes = scores.shape[1]
    if y_true.size and (y_true.min() < 0 or y_true.max() >= n_classes):
        raise DataError(f"labels outside [0, {n_classes})")
    per_class: dict[int, float] = {}
    skipped: list[int] = []
    for c in range(n_classes):
        mask = y_true == c
        n_pos = int(mask.sum())
        n_neg = int((~mask).sum())
        if n_pos == 0 or n_neg == 0:
            skipped.append(c)
            continue
        col = scores[:, c]
        ranks = rankdata(np.concatenate([col[mask], col[~mask]]), method="average")
        u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
        per_class[c] = float(u / (n_pos * n_neg))
    if not per_class:
        raise DataError("AUC undefined: no class has both positive and negative samples")
    macro = float(np.mean(list(per_class.values())))
    return AucResult(per_class=per_class, macro=macro, skipped=tuple(skipped))


# ---------------------------------------------------------------------------
# Feature distributions and Frechet distance


@dataclass(frozen=True)
class FeatureDistribution:
    """Gaussian summary (mean, covariance) of a feature set, float64."""

    mean: np.ndarray
    cov: np.ndarray
    count: int = 0

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ConfigError(
                f"mean shape {mean.shape} and covariance shape {cov.shape} do not agree"
            )
        scale = max(1.0, float(np.abs(cov).max()) if cov.size else 1.0)
        if float(np.abs(cov - cov.T).max()) > 1e-8 * scale:
            raise DataError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", (cov + cov.T) / 2.0)

    @classmethod
    def from_features(cls, features: np.ndarray) -> "FeatureDistribution":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ConfigError(f"expected (N, d) features, got shape {features.shape}")
        if features.shape[0] < 2:
            raise DataError(
                f"need at least 2 samples for an unbiased covariance, got {features.shape[0]}"
            )
        mean = features.mean(axis=0)
        cov = np.atleast_2d(np.cov(features, rowvar=False, ddof=1))
        return cls(mean=mean, cov=cov, count=features.shape[0])


def _psd_sqrt(matrix: np.ndarray, tol: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh((matrix + matrix.T) / 2.0)
    scale = max(1.0, float(np.abs(vals).max()) if vals.size else 1.0)
    if vals.size and vals.min() < -tol * scale:
        raise DataError(
            f"matrix is not positive semidefinite: eigenvalue {vals.min():.6e} "
            f"below tolerance {-tol * scale:.6e}"
        )
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(
    a: FeatureDistribution, b: FeatureDistribution, tol: float = EIGENVALUE_CLAMP_TOL
) -> float:
    """||mu_a - mu_b||^2 + Tr(C_a + C_b - 2 (C_a C_b)^(1/2)).

    The matrix square root of the (generally non-symmetric) product C_a C_b
    is evaluated through the similar symmetric form
    C_a^(1/2) C_b C_a^(1/2), whose eigenvalues match. Rounding can push
    eigenvalues slightly negative; within ``tol`` (relative to the largest)
    they clamp to zero, beyond it the inputs are judged invalid.
    """
    if a.mean.size != b.mean.size:
        raise ConfigError(
            f"distributions have different dimensions: {a.mean.size} vs {b.mean.size}"
        )
    diff = a.mean - b.mean
    sqrt_a = _psd_sqrt(a.cov, tol)
    cross = sqrt_a @ b.cov @ sqrt_a
    vals = np.linalg.eigvalsh((cross + cross.T) / 2.0)
    scale = max(1.0, float(np.abs(vals).max()) if vals.size else 1.0)
    if vals.size and vals.min() < -tol * scale:
        raise DataError(
            f"cross term is not positive semidefinite: eigenvalue {vals.min():.6e} "
            f"below tolerance {-tol * scale:.6e}"
        )
    trace_cross = float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * trace_cross)
    return max(value, 0.0)


def fid(
    real_features: np.ndarray,
    synth_features: np.ndarray,
    min_count: int = FID_MIN_COUNT,
    tol: float = EIGENVALUE_CLAMP_TOL,
) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    Warns (but still answers) when either side has fewer than ``min_count``
    samples, because the covariance estimate gets unstable.
    """
    real_features = np.asarray(real_features, dtype=np.float64)
    synth_features = np.asarray(synth_features, dtype=np.float64)
    for label, feats in (("real", real_features), ("synthetic", synth_features)):
        if feats.ndim == 2 and feats.shape[0] < min_count:
            warnings.warn(
                f"{label} feature set has {feats.shape[0]} samples, fewer than "
                f"{min_count}; the estimate may be unstable",
                RuntimeWarning,
                stacklevel=2,
            )
    a = FeatureDistribution.from_features(real_features)
    b = FeatureDistribution.from_features(synth_features)
    return frechet_distance(a, b, tol=tol)


# ---------------------------------------------------------------------------
# Cross-fold aggregation


@dataclass(frozen=True)
class FoldAggregate:
    """Per-metric mean and population standard deviation across folds."""

    count: int
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)


def aggregate_folds(per_fold: list[dict[str, float]]) -> FoldAggregate:
    if not per_fold:
        raise ConfigError("no fold metrics to aggregate")
    keys = set(per_fold[0])
    for i, row in enumerate(per_fold[1:], start=1):
        if set(row) != keys:
            raise ConfigError(f"fold {i} reports metrics {sorted(row)} but fold 0 has {sorted(keys)}")
    mean = {}
    std = {}
    for key in sorted(keys):
        vals = np.array([row[key] for row in per_fold], dtype=np.float64)
        mean[key] = float(vals.mean())
        std[key] = float(vals.std(ddof=0))
    return FoldAggregate(count=len(per_fold), mean=mean, std=std)


def sum_confusions(cms: list[ConfusionMatrix]) -> ConfusionMatrix:
    if not cms:
        raise ConfigError("no confusion matrices to sum")
    total = cms[0]
    for cm in cms[1:]:
        total = total + cm
    return total
