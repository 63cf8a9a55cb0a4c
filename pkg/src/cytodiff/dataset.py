"""Folder-per-class corpus ingestion, stratified k-fold splits, few-shot
selection, synthetic merging, and the train-only augmentation policy.

A corpus on disk is laid out as ``<root>/<class_name>/<image files>``.
Scanning produces a :class:`DatasetManifest`; split assignment is a
separate, seeded step that never touches the files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from hashlib import sha256
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from PIL import Image

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
DEFAULT_FRACTIONS = (0.60, 0.20, 0.20)
DEFAULT_EXTENSIONS = (".png", ".jpg", ".jpeg", ".tiff", ".bmp")
DEFAULT_RESOLUTION = 224


class Origin(str, Enum):
    REAL = "real"
    SYNTHETIC = "synthetic"


class Split(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"
    UNASSIGNED = "unassigned"


EVAL_SPLITS = (Split.VALIDATION, Split.TEST)


@dataclass(frozen=True, order=True)
class ClassLabel:
    """One class in the registry; indices form a contiguous bijection."""

    name: str
    index: int


def build_registry(names: Sequence[str]) -> tuple[ClassLabel, ...]:
    """Build a class registry from an ordered list of unique class names."""
    if len(names) < 2:
        raise ConfigError(f"class registry needs at least 2 classes, got {len(names)}")
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if list(names).count(n) > 1})
        raise ConfigError(f"duplicate class names in registry: {dupes}")
    return tuple(ClassLabel(name=n, index=i) for i, n in enumerate(names))


def registry_names(registry: Sequence[ClassLabel]) -> tuple[str, ...]:
    return tuple(c.name for c in registry)


@dataclass(frozen=True)
class ImageRecord:
    """One image in a manifest. ``origin`` is fixed at creation; fold/split
    are only populated once an assignment has been baked in."""

    path: str
    label: ClassLabel
    origin: Origin
    fold: int | None = None
    split: Split = Split.UNASSIGNED


@dataclass
class DatasetManifest:
    """The authoritative record of every image in a corpus.

    ``class_counts`` is always recomputed from the records, so it cannot
    drift out of sync.
    """

    registry: tuple[ClassLabel, ...]
    records: tuple[ImageRecord, ...]
    seed: int = 0
    skipped: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        names = set(registry_names(self.registry))
        for rec in self.records:
            if rec.label.name not in names:
                raise DataError(f"record label {rec.label.name!r} not in class registry")
        paths = [r.path for r in self.records]
        if len(set(paths)) != len(paths):
            raise DataError("manifest contains duplicate record paths")

    @property
    def class_counts(self) -> dict[str, tuple[int, int]]:
        """Per class: (n_real, n_synthetic)."""
        counts = {c.name: [0, 0] for c in self.registry}
        for rec in self.records:
            counts[rec.label.name][0 if rec.origin is Origin.REAL else 1] += 1
        return {k: (v[0], v[1]) for k, v in counts.items()}

    def records_for(self, class_name: str, origin: Origin | None = None) -> list[ImageRecord]:
        out = [r for r in self.records if r.label.name == class_name]
        if origin is not None:
            out = [r for r in out if r.origin is origin]
        return out

    @property
    def total(self) -> int:
        return len(self.records)

    def content_digest(self) -> str:
        """Stable digest over registry + records, used in run manifests."""
        h = sha256()
        h.update(json.dumps(registry_names(self.registry)).encode())
        for rec in self.records:
            h.update(f"{rec.path}\t{rec.label.name}\t{rec.origin.value}\n".encode())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# Corpus scanning


def discover_class_names(root_dir: str | Path) -> tuple[str, ...]:
    """Sorted subdirectory names of a corpus root."""
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"corpus root {root} is not a directory")
    names = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not names:
        raise DataError(f"no class directories found under {root}")
    return tuple(names)


def _is_decodable(path: Path) -> bool:
    try:
        with Image.open(path) as img:
            img.verify()
        return True
    except Exception:
        return False


def scan_corpus(
    root_dir: str | Path,
    class_registry: Sequence[ClassLabel],
    origin: Origin,
    seed: int = 0,
    extensions: Sequence[str] = DEFAULT_EXTENSIONS,
    verify: bool = True,
) -> DatasetManifest:
    """Scan a folder-per-class corpus into a manifest.

    Unreadable files are skipped but reported in ``manifest.skipped`` and
    logged; a class directory that is missing, or that yields zero decodable
    images, is a hard error.
    """
    root = Path(root_dir)
    discover_class_names(root)  # raises "no class directories found" on empty roots
    missing = [c.name for c in class_registry if not (root / c.name).is_dir()]
    if missing:
        raise DataError(f"missing class directories under {root}: {missing}")

    exts = tuple(e.lower() for e in extensions)
    records: list[ImageRecord] = []
    skipped: list[str] = []
    for label in class_registry:
        class_dir = root / label.name
        files = sorted(p for p in class_dir.iterdir() if p.is_file() and p.suffix.lower() in exts)
        kept = 0
        for p in files:
            if verify and not _is_decodable(p):
                skipped.append(str(p))
                log.warning("skipping unreadable image %s", p)
                continue
            records.append(ImageRecord(path=str(p), label=label, origin=origin))
            kept += 1
        if kept == 0:
            raise DataError(f"class {label.name!r} has no decodable images under {class_dir}")
    return DatasetManifest(
        registry=tuple(class_registry), records=tuple(records), seed=seed, skipped=tuple(skipped)
    )


# ---------------------------------------------------------------------------
# Stratified k-fold assignment


@dataclass
class SplitAssignment:
    """Per-record split labels for one fold.

    Records not present in ``splits`` (synthetic images appended after
    assignment) are treated as train-only.
    """

    fold_id: int
    fractions: tuple[float, float, float]
    splits: dict[str, Split]

    def split_of(self, record: ImageRecord) -> Split:
        got = self.splits.get(record.path)
        if got is not None:
            return got
        if record.origin is Origin.SYNTHETIC:
            return Split.TRAIN
        raise DataError(f"record {record.path} has no split assignment in fold {self.fold_id}")

    def records_in(self, manifest: DatasetManifest, split: Split) -> list[ImageRecord]:
        return [r for r in manifest.records if self.split_of(r) is split]

    def digest(self) -> str:
        h = sha256()
        h.update(f"fold={self.fold_id};fractions={self.fractions}\n".encode())
        for path in sorted(self.splits):
            h.update(f"{path}\t{self.splits[path].value}\n".encode())
        return h.hexdigest()


def bake_assignment(manifest: DatasetManifest, assignment: SplitAssignment) -> DatasetManifest:
    """Return a manifest whose records carry the given fold/split labels."""
    baked = tuple(
        replace(rec, fold=assignment.fold_id, split=assignment.split_of(rec))
        for rec in manifest.records
    )
    return replace(manifest, records=baked)


def _split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, ...]:
    """Sizes per split for a class of ``n`` records.

    Largest-remainder rounding keeps every size within one sample of
    ``fraction * n``; a fixup pass then makes every split nonempty, taking
    from the most over-target split, which preserves the +-1 guarantee for
    any fractions where both constraints are jointly satisfiable.
    """
    targets = [f * n for f in fractions]
    sizes = [int(np.floor(t)) for t in targets]
    order = sorted(range(len(fractions)), key=lambda i: (-(targets[i] - sizes[i]), i))
    for j in range(n - sum(sizes)):
        sizes[order[j % len(fractions)]] += 1
    while min(sizes) == 0 and max(sizes) >= 2:
        donors = [i for i, s in enumerate(sizes) if s >= 2]
        donor = max(donors, key=lambda i: (sizes[i] - targets[i], -i))
        sizes[donor] -= 1
        sizes[sizes.index(0)] += 1
    return tuple(sizes)


def stratified_kfold(
    manifest: DatasetManifest,
    k: int,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 0,
    include_synthetic: bool = False,
) -> list[SplitAssignment]:
    """Produce ``k`` train/validation/test assignments, stratified per class.

    Each class is shuffled once (seeded), then each fold takes a rotated
    contiguous block as its test set, the next block as validation, and the
    rest as train. Test blocks across folds are as disjoint as the class
    size permits. By default only real records are assigned; synthetic
    records stay train-only. With ``include_synthetic`` every (class, origin)
    stratum is assigned independently, which lets synthetic images reach
    validation/test (the domain-biased evaluation setup).
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    fracs = tuple(float(f) for f in fractions)
    if len(fracs) != 3:
        raise ConfigError("fractions must be a (train, validation, test) triple")
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1.0, got {sum(fracs)!r}")
    if any(f <= 0.0 for f in fracs):
        raise ConfigError(f"all fractions must be positive, got {fracs}")

    strata: list[tuple[ClassLabel, Origin, list[ImageRecord]]] = []
    for label in manifest.registry:
        if include_synthetic:
            for origin in (Origin.REAL, Origin.SYNTHETIC):
                recs = manifest.records_for(label.name, origin)
                if recs:
                    strata.append((label, origin, recs))
        else:
            strata.append((label, Origin.REAL, manifest.records_for(label.name, Origin.REAL)))

    for label, origin, recs in strata:
        if len(recs) < 3:
            raise DataError(
                f"class {label.name!r} has {len(recs)} {origin.value} records; "
                "at least 3 are needed (one per split)"
            )

    assignments = [
        SplitAssignment(fold_id=i, fractions=fracs, splits={}) for i in range(k)
    ]
    for label, origin, recs in strata:
        n = len(recs)
        rng = np.random.default_rng([seed, k, label.index, 0 if origin is Origin.REAL else 1])
        perm = rng.permutation(n)
        n_train, n_val, n_test = _split_sizes(n, fracs)
        for fold in range(k):
            start = (fold * n) // k
            order = np.concatenate([perm[start:], perm[:start]])
            for pos, rec_idx in enumerate(order):
                if pos < n_test:
                    s = Split.TEST
                elif pos < n_test + n_val:
                    s = Split.VALIDATION
                else:
                    s = Split.TRAIN
                assignments[fold].splits[recs[rec_idx].path] = s
    return assignments


# ---------------------------------------------------------------------------
# Few-shot selection


class SelectionMode(str, Enum):
    MANUAL_LIST = "manual_list"
    SEEDED_RANDOM = "seeded_random"


DEFAULT_SHOT_COUNTS = (1, 4, 8, 16)


@dataclass
class FewShotSelection:
    label: ClassLabel
    shot_count: int
    records: tuple[ImageRecord, ...]
    selection_mode: SelectionMode

    def __post_init__(self) -> None:
        if len(self.records) != self.shot_count:
            raise DataError(
                f"selection has {len(self.records)} records, expected {self.shot_count}"
            )
        for rec in self.records:
            if rec.origin is not Origin.REAL:
                raise DataError(f"few-shot selection must be real images: {rec.path}")
            if rec.label != self.label:
                raise DataError(f"record {rec.path} is not class {self.label.name!r}")


def select_few_shot(
    manifest: DatasetManifest,
    class_label: ClassLabel,
    shot_count: int,
    mode: SelectionMode,
    seed_or_list: int | Sequence[str],
    assignment: SplitAssignment | None = None,
    allowed_counts: Sequence[int] | None = DEFAULT_SHOT_COUNTS,
) -> FewShotSelection:
    """Pick ``shot_count`` real exemplars of one class.

    Draws only from the train split when an assignment is given (or when the
    manifest has baked split labels); seeded_random mode is deterministic per
    seed, manual_list reproduces a hand-curated selection.
    """
    if allowed_counts is not None and shot_count not in tuple(allowed_counts):
        raise ConfigError(
            f"shot_count {shot_count} not in allowed counts {tuple(allowed_counts)}"
        )
    eligible = manifest.records_for(class_label.name, Origin.REAL)
    if assignment is not None:
        eligible = [r for r in eligible if assignment.split_of(r) is Split.TRAIN]
    elif any(r.split is not Split.UNASSIGNED for r in manifest.records):
        eligible = [r for r in eligible if r.split is Split.TRAIN]
    if len(eligible) < shot_count:
        raise DataError(f"insufficient real records ({len(eligible)} < {shot_count})")

    if mode is SelectionMode.MANUAL_LIST:
        if isinstance(seed_or_list, int):
            raise ConfigError("manual_list mode needs an explicit list of paths")
        wanted = [str(p) for p in seed_or_list]
        if len(wanted) != shot_count:
            raise ConfigError(f"manual list has {len(wanted)} paths, expected {shot_count}")
        by_path = {r.path: r for r in eligible}
        chosen = []
        for p in wanted:
            if p not in by_path:
                raise DataError(f"manual path not an eligible real {class_label.name!r} record: {p}")
            chosen.append(by_path[p])
    else:
        if not isinstance(seed_or_list, int):
            raise ConfigError("seeded_random mode needs an integer seed")
        ordered = sorted(eligible, key=lambda r: r.path)
        rng = np.random.default_rng([seed_or_list, class_label.index])
        idx = rng.choice(len(ordered), size=shot_count, replace=False)
        chosen = [ordered[i] for i in sorted(idx)]
    return FewShotSelection(
        label=class_label, shot_count=shot_count, records=tuple(chosen), selection_mode=mode
    )


# ---------------------------------------------------------------------------
# Synthetic merging


def merge_synthetic(
    manifest: DatasetManifest,
    synth_root: str | Path,
    per_class_count: int,
    extensions: Sequence[str] = DEFAULT_EXTENSIONS,
    verify: bool = True,
    allow_eval: bool = False,
) -> DatasetManifest:
    """Append ``per_class_count`` synthetic images per class to a manifest.

    Existing records are never removed or relabeled. Appended records are
    pinned to the train split unless ``allow_eval`` leaves them unassigned
    for a later stratification that includes synthetic images.
    """
    if per_class_count < 0:
        raise ConfigError(f"per_class_count must be >= 0, got {per_class_count}")
    if per_class_count == 0:
        return manifest

    root = Path(synth_root)
    exts = tuple(e.lower() for e in extensions)
    new_records: list[ImageRecord] = []
    for label in manifest.registry:
        class_dir = root / label.name
        if not class_dir.is_dir():
            raise DataError(f"synthetic corpus is missing class directory {class_dir}")
        files = sorted(p for p in class_dir.iterdir() if p.is_file() and p.suffix.lower() in exts)
        if verify:
            files = [p for p in files if _is_decodable(p)]
        if len(files) < per_class_count:
            raise DataError(
                f"class {label.name!r} has only {len(files)} synthetic images, "
                f"{per_class_count} requested (short by {per_class_count - len(files)})"
            )
        split = Split.UNASSIGNED if allow_eval else Split.TRAIN
        for p in files[:per_class_count]:
            new_records.append(
                ImageRecord(path=str(p), label=label, origin=Origin.SYNTHETIC, split=split)
            )
    return replace(manifest, records=manifest.records + tuple(new_records))


# ---------------------------------------------------------------------------
# Augmentation


@dataclass(frozen=True)
class AugmentationPolicy:
    """Train-only augmentation parameters; all-zero means identity.

    color_jitter is (brightness, contrast, saturation, hue) maximum deltas;
    hue is in turns of the color wheel.
    """

    rotation_degrees: float = 0.0
    horizontal_flip: float = 0.0
    vertical_flip: float = 0.0
    color_jitter: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    enabled_splits: frozenset[Split] = frozenset({Split.TRAIN})

    def __post_init__(self) -> None:
        if self.enabled_splits != frozenset({Split.TRAIN}):
            raise ConfigError("augmentation may only be enabled for the train split")
        if not (0.0 <= self.horizontal_flip <= 1.0 and 0.0 <= self.vertical_flip <= 1.0):
            raise ConfigError("flip probabilities must be in [0, 1]")

    @classmethod
    def standard(cls) -> "AugmentationPolicy":
        """Rotations, flips, and mild color jitter."""
        return cls(
            rotation_degrees=15.0,
            horizontal_flip=0.5,
            vertical_flip=0.5,
            color_jitter=(0.2, 0.2, 0.2, 0.02),
        )

    @property
    def is_identity(self) -> bool:
        return (
            self.rotation_degrees == 0.0
            and self.horizontal_flip == 0.0
            and self.vertical_flip == 0.0
            and all(c == 0.0 for c in self.color_jitter)
        )


def augmentation_rng(seed: int, record_index: int, epoch: int) -> np.random.Generator:
    """The record -> augmentation randomness mapping, a pure function of
    (global seed, record index, epoch) so parallel loading cannot change
    results."""
    return np.random.default_rng([seed, record_index, epoch])


def apply_augmentation(
    image: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator
) -> np.ndarray:
    """Apply the policy to one HxWx3 uint8 image; dimensions are preserved.

    Random draws happen in a fixed order regardless of which operations end
    up active, so identical rng states always reproduce identical outputs.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ConfigError(f"expected HxWx3 image, got shape {image.shape}")
    if image.shape[0] == 0 or image.shape[1] == 0:
        raise ConfigError("image has a zero dimension")

    angle = float(rng.uniform(-policy.rotation_degrees, policy.rotation_degrees))
    u_h = float(rng.uniform())
    u_v = float(rng.uniform())
    b_max, c_max, s_max, h_max = policy.color_jitter
    d_bright = float(rng.uniform(-b_max, b_max))
    d_contrast = float(rng.uniform(-c_max, c_max))
    d_sat = float(rng.uniform(-s_max, s_max))
    d_hue = float(rng.uniform(-h_max, h_max))

    out = image
    if policy.rotation_degrees > 0.0 and angle != 0.0:
        pil = Image.fromarray(out)
        pil = pil.rotate(angle, resample=Image.BILINEAR, fillcolor=(255, 255, 255))
        out = np.asarray(pil)
    if policy.horizontal_flip > 0.0 and u_h < policy.horizontal_flip:
        out = out[:, ::-1, :]
    if policy.vertical_flip > 0.0 and u_v < policy.vertical_flip:
        out = out[::-1, :, :]
    if any(c > 0.0 for c in policy.color_jitter):
        f = out.astype(np.float32) / 255.0
        if b_max > 0.0:
            f = f * (1.0 + d_bright)
        if c_max > 0.0:
            mean = f.mean()
            f = (f - mean) * (1.0 + d_contrast) + mean
        if s_max > 0.0:
            gray = f @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
            f = gray[..., None] + (f - gray[..., None]) * (1.0 + d_sat)
        if h_max > 0.0:
            hsv = rgb_to_hsv(np.clip(f, 0.0, 1.0))
            hsv[..., 0] = (hsv[..., 0] + d_hue) % 1.0
            f = hsv_to_rgb(hsv).astype(np.float32)
        out = np.clip(np.rint(f * 255.0), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(out)


# ---------------------------------------------------------------------------
# Image decoding


def load_image(path: str | Path, resolution: int = DEFAULT_RESOLUTION) -> np.ndarray:
    """Decode to 8-bit RGB at a square resolution."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            if rgb.size != (resolution, resolution):
                rgb = rgb.resize((resolution, resolution), Image.BILINEAR)
            return np.asarray(rgb, dtype=np.uint8)
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Manifest serialization (line-delimited JSON with a header line)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    header = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "seed": manifest.seed,
        "class_registry": list(registry_names(manifest.registry)),
    }
    lines = [json.dumps(header, sort_keys=True)]
    for rec in manifest.records:
        lines.append(
            json.dumps(
                {
                    "path": rec.path,
                    "label": rec.label.name,
                    "origin": rec.origin.value,
                    "fold": rec.fold,
                    "split": rec.split.value,
                },
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> DatasetManifest:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"manifest file {path} is empty")
    header = json.loads(lines[0])
    version = header.get("schema_version")
    if version != MANIFEST_SCHEMA_VERSION:
        raise DataError(f"unsupported manifest schema version {version!r}")
    registry = build_registry(header["class_registry"])
    by_name = {c.name: c for c in registry}
    records = []
    for ln in lines[1:]:
        d = json.loads(ln)
        records.append(
            ImageRecord(
                path=d["path"],
                label=by_name[d["label"]],
                origin=Origin(d["origin"]),
                fold=d.get("fold"),
                split=Split(d.get("split", "unassigned")),
            )
        )
    return DatasetManifest(registry=registry, records=tuple(records), seed=header.get("seed", 0))
