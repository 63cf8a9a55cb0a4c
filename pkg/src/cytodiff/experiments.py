"""Experiment orchestration: regimes, scaling sweeps, reports, manifests.

A regime trains one classifier family per fold on a particular data
composition (real only, synthetic only, or mixed) and aggregates metrics
across folds. A sweep repeats the mixed regime over a schedule of per-class
synthetic counts while reusing the exact same fold assignments, so curve
differences come from the data and not from re-splitting. Every run writes
a manifest sufficient to re-execute it; with the stub backend a re-run
reproduces the metrics CSVs byte for byte.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .classifiers import ClassifierFamily, ClassifierSpec, DEFAULT_TEMPERATURE
from .dataset import (
    AugmentationPolicy,
    DatasetManifest,
    DEFAULT_EXTENSIONS,
    DEFAULT_FRACTIONS,
    Origin,
    Split,
    SplitAssignment,
    build_registry,
    discover_class_names,
    merge_synthetic,
    scan_corpus,
    stratified_kfold,
)
from .errors import ConfigError, DataError, PartialRunError
from .metrics import (
    ConfusionMatrix,
    FoldAggregate,
    accuracy,
    aggregate_folds,
    auc_ovr,
    macro_f1,
    per_class_f1,
)
from .prompts import library_for_registry
from .training import TrainConfig, evaluate, train_classifier

MANIFEST_SCHEMA_VERSION = 1
MANIFEST_NAME = "run_manifest.json"
FOLD_CSV_NAME = "fold_metrics.csv"
REPORT_COLUMNS = ("Model", "Split", "Dataset", "Accuracy", "F1_macro", "AUC")
_SPLIT_NAMES = ("validation", "test")


class Regime(str, Enum):
    REAL_ONLY = "real_only"
    SYNTHETIC_ONLY = "synthetic_only"
    MIXED = "mixed"


@dataclass(frozen=True)
class ExperimentConfig:
    data_root: str
    out_dir: str
    regime: Regime = Regime.REAL_ONLY
    family: ClassifierFamily = ClassifierFamily.CNN_HEAD
    backbone: str = ""
    resolution: int = 32
    folds: int = 5
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS
    synth_root: str | None = None
    synthetic_per_class: int = 0
    schedule: tuple[int, ...] = ()
    seed: int = 0
    backend_id: str = "stub"
    train: TrainConfig = TrainConfig()
    augment: bool = False
    eval_includes_synthetic: bool = False
    temperature: float = DEFAULT_TEMPERATURE
    jobs: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "regime", Regime(self.regime))
        object.__setattr__(self, "family", ClassifierFamily(self.family))
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        object.__setattr__(self, "schedule", tuple(int(c) for c in self.schedule))
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.synthetic_per_class < 0:
            raise ConfigError(f"synthetic_per_class must be >= 0, got {self.synthetic_per_class}")
        for a, b in zip(self.schedule, self.schedule[1:]):
            if b <= a:
                raise ConfigError(f"schedule must be strictly increasing, got {self.schedule}")
        needs_synth = (
            self.regime is Regime.SYNTHETIC_ONLY
            or (self.regime is Regime.MIXED and self.synthetic_per_class > 0)
            or any(c > 0 for c in self.schedule)
        )
        if self.regime is Regime.SYNTHETIC_ONLY and self.synthetic_per_class < 1:
            raise ConfigError("synthetic_only regime needs synthetic_per_class >= 1")
        if needs_synth and not self.synth_root:
            raise ConfigError("this configuration consumes synthetic images but synth_root is unset")


def config_to_dict(config: ExperimentConfig) -> dict:
    train = config.train
    return {
        "data_root": config.data_root,
        "out_dir": config.out_dir,
        "regime": config.regime.value,
        "family": config.family.value,
        "backbone": config.backbone,
        "resolution": config.resolution,
        "folds": config.folds,
        "fractions": list(config.fractions),
        "synth_root": config.synth_root,
        "synthetic_per_class": config.synthetic_per_class,
        "schedule": list(config.schedule),
        "seed": config.seed,
        "backend_id": config.backend_id,
        "augment": config.augment,
        "eval_includes_synthetic": config.eval_includes_synthetic,
        "temperature": config.temperature,
        "jobs": config.jobs,
        "train": {
            "lr_init": train.lr_init,
            "lr_min": train.lr_min,
            "warmup_epochs": train.warmup_epochs,
            "total_epochs": train.total_epochs,
            "batch_train": train.batch_train,
            "batch_eval": train.batch_eval,
            "weight_decay": train.weight_decay,
            "lambda1": train.lambda1,
            "loss_mode": train.loss_mode.value,
            "seed": train.seed,
        },
    }


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(doc)
    train = TrainConfig(**doc.pop("train"))
    doc["fractions"] = tuple(doc.get("fractions", DEFAULT_FRACTIONS))
    doc["schedule"] = tuple(doc.get("schedule", ()))
    return ExperimentConfig(train=train, **doc)


# ---------------------------------------------------------------------------
# Report table


@dataclass(frozen=True)
class ReportRow:
    model: str
    split: str
    dataset: str
    accuracy_mean: float
    accuracy_std: float
    f1_mean: float
    f1_std: float
    auc_mean: float
    auc_std: float


@dataclass
class ReportTable:
    rows: list[ReportRow] = field(default_factory=list)


def _cell(mean: float, std: float) -> str:
    # repr round-trips floats exactly, which keeps re-runs byte-identical
    return f"{mean!r}±{std!r}"


def _parse_cell(cell: str) -> tuple[float, float]:
    mean_s, std_s = cell.split("±")
    return float(mean_s), float(std_s)


def emit_report(
    table: ReportTable,
    out_dir: str | Path,
    formats: set[str] = frozenset({"csv", "txt"}),
    basename: str = "report",
) -> dict[str, Path]:
    """Write the report as a machine CSV and/or a fixed-width text table."""
    if not table.rows:
        raise ConfigError("report table is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: dict[str, Path] = {}
    if "csv" in formats:
        path = out_dir / f"{basename}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for r in table.rows:
                writer.writerow(
                    [
                        r.model,
                        r.split,
                        r.dataset,
                        _cell(r.accuracy_mean, r.accuracy_std),
                        _cell(r.f1_mean, r.f1_std),
                        _cell(r.auc_mean, r.auc_std),
                    ]
                )
        outputs["csv"] = path
    if "txt" in formats:
        path = out_dir / f"{basename}.txt"
        header = (
            f"{'Model':<20} {'Split':<12} {'Dataset':<28} "
            f"{'Accuracy':<16} {'F1_macro':<16} {'AUC':<16}"
        )
        lines = [header, "-" * len(header)]
        for r in table.rows:
            lines.append(
                f"{r.model:<20} {r.split:<12} {r.dataset:<28} "
                f"{r.accuracy_mean:.4f}±{r.accuracy_std:.4f}   "
                f"{r.f1_mean:.4f}±{r.f1_std:.4f}   "
                f"{r.auc_mean:.4f}±{r.auc_std:.4f}"
            )
        path.write_text("\n".join(lines) + "\n")
        outputs["txt"] = path
    return outputs


def parse_report_csv(path: str | Path) -> ReportTable:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != REPORT_COLUMNS:
            raise DataError(f"unexpected report columns {header}")
        for rec in reader:
            acc = _parse_cell(rec[3])
            f1 = _parse_cell(rec[4])
            auc = _parse_cell(rec[5])
            rows.append(
                ReportRow(
                    model=rec[0],
                    split=rec[1],
                    dataset=rec[2],
                    accuracy_mean=acc[0],
                    accuracy_std=acc[1],
                    f1_mean=f1[0],
                    f1_std=f1[1],
                    auc_mean=auc[0],
                    auc_std=auc[1],
                )
            )
    return ReportTable(rows=rows)


# ---------------------------------------------------------------------------
# Shared fold machinery


class _FoldFailure(Exception):
    """Internal: a fold raised; carries results of the folds that finished."""

    def __init__(self, done: dict, cause: BaseException):
        super().__init__(str(cause))
        self.done = done
        self.cause = cause


def _scan_real(config: ExperimentConfig) -> DatasetManifest:
    names = discover_class_names(config.data_root)
    registry = build_registry(names)
    return scan_corpus(config.data_root, registry, Origin.REAL, seed=config.seed)


def _dataset_label(regime: Regime, synth_count: int) -> str:
    if regime is Regime.REAL_ONLY or synth_count == 0:
        return "real"
    if regime is Regime.SYNTHETIC_ONLY:
        return f"synthetic({synth_count}/class)"
    return f"real+synthetic({synth_count}/class)"


def _git_rev() -> str:
    try:
        proc = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except OSError:
        return "unknown"
    return proc.stdout.strip() if proc.returncode == 0 else "unknown"


def _fold_train_seed(config: ExperimentConfig, fold: int) -> int:
    return config.seed * 1009 + fold


def _regime_records(
    manifest: DatasetManifest, assignment: SplitAssignment, regime: Regime
) -> DatasetManifest:
    """Drop real train records for synthetic_only; otherwise pass through."""
    if regime is not Regime.SYNTHETIC_ONLY:
        return manifest
    kept = tuple(
        r
        for r in manifest.records
        if not (r.origin is Origin.REAL and assignment.split_of(r) is Split.TRAIN)
    )
    return replace(manifest, records=kept)


def _metrics_for_split(model, manifest, assignment, split, registry):
    res = evaluate(model, manifest, split, assignment)
    cm = res.confusion(len(registry))
    metrics = {
        "accuracy": accuracy(cm),
        "macro_f1": macro_f1(cm),
        "auc": auc_ovr(res.y_true, res.probabilities).macro,
    }
    f1s = per_class_f1(cm)
    for lbl in registry:
        metrics[f"f1_{lbl.name}"] = float(f1s[lbl.index])
    return metrics, cm


def _run_one_fold(config, merged, assignments, fold, spec, prompt_texts, policy):
    assignment = assignments[fold]
    fold_manifest = _regime_records(merged, assignment, config.regime)
    train_cfg = replace(config.train, seed=_fold_train_seed(config, fold))
    outcome = train_classifier(
        spec,
        fold_manifest,
        train_cfg,
        assignment=assignment,
        prompt_texts=prompt_texts,
        augmentation=policy,
    )
    metrics_by_split = {}
    cms = {}
    for split, name in ((Split.VALIDATION, "validation"), (Split.TEST, "test")):
        metrics, cm = _metrics_for_split(outcome.model, merged, assignment, split, merged.registry)
        metrics_by_split[name] = metrics
        cms[name] = cm
    return metrics_by_split, cms


def _train_folds(config, merged, assignments):
    """Train/evaluate every fold, optionally ``config.jobs`` at a time.

    Folds are independent jobs; the orchestrating thread only collects
    completions. On any fold failure the remaining completions are still
    drained, then a :class:`_FoldFailure` carrying the finished folds is
    raised so callers can persist partial results.
    """
    registry = merged.registry
    library = library_for_registry(registry)
    prompt_texts = [library.render(lbl.name) for lbl in registry]
    spec = ClassifierSpec(
        family=config.family,
        num_classes=len(registry),
        backbone=config.backbone,
        resolution=config.resolution,
        seed=config.seed,
        temperature=config.temperature,
    )
    policy = AugmentationPolicy.standard() if config.augment else None
    done: dict[int, dict[str, dict[str, float]]] = {}
    confusions: dict[str, ConfusionMatrix] = {}

    def _absorb(fold, metrics_by_split, cms):
        done[fold] = metrics_by_split
        for name, cm in cms.items():
            confusions[name] = cm if name not in confusions else confusions[name] + cm

    if config.jobs == 1:
        for fold in range(config.folds):
            try:
                metrics_by_split, cms = _run_one_fold(
                    config, merged, assignments, fold, spec, prompt_texts, policy
                )
            except Exception as exc:
                raise _FoldFailure(done, exc) from exc
            _absorb(fold, metrics_by_split, cms)
    else:
        first_error: BaseException | None = None
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            futures = {
                pool.submit(
                    _run_one_fold, config, merged, assignments, fold, spec, prompt_texts, policy
                ): fold
                for fold in range(config.folds)
            }
            for fut in as_completed(futures):
                try:
                    metrics_by_split, cms = fut.result()
                except Exception as exc:
                    if first_error is None:
                        first_error = exc
                    continue
                _absorb(futures[fut], metrics_by_split, cms)
        if first_error is not None:
            raise _FoldFailure(done, first_error) from first_error

    fold_rows = {name: [done[f][name] for f in range(config.folds)] for name in _SPLIT_NAMES}
    return fold_rows, confusions, library.version


def _fold_table(done: dict[int, dict[str, dict[str, float]]]) -> list[tuple[int, str, dict]]:
    rows = []
    for name in _SPLIT_NAMES:
        for fold in sorted(done):
            rows.append((fold, name, done[fold][name]))
    return rows


def _write_fold_csv(path: Path, rows: list[tuple[int, str, dict]]) -> None:
    keys = sorted(rows[0][2]) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "split"] + keys)
        for fold, split, metrics in rows:
            writer.writerow([fold, split] + [repr(metrics[k]) for k in keys])


def _build_manifest(
    kind: str,
    config: ExperimentConfig,
    dataset_digest: str,
    assignments: list[SplitAssignment],
    library_version: str,
    outputs: dict[str, Path],
    complete: bool,
    adapter_sha256: str = "",
    telemetry: dict | None = None,
) -> dict:
    return {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "kind": kind,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "git_rev": _git_rev(),
        "config": config_to_dict(config),
        "dataset_digest": dataset_digest,
        "assignment_digests": [a.digest() for a in assignments],
        "prompt_library_version": library_version,
        "adapter_sha256": adapter_sha256,
        "fold_seeds": [_fold_train_seed(config, f) for f in range(config.folds)],
        "outputs": {k: str(v) for k, v in outputs.items()},
        "telemetry": telemetry or {},
        "complete": complete,
    }


def _write_manifest(out_dir: Path, doc: dict) -> Path:
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path


# ---------------------------------------------------------------------------
# Regime runs


@dataclass
class RegimeOutcome:
    table: ReportTable
    fold_metrics: dict[str, list[dict[str, float]]]
    aggregates: dict[str, FoldAggregate]
    confusions: dict[str, ConfusionMatrix]
    run_manifest: dict
    outputs: dict[str, Path]
    wall_time: float


def run_regime(config: ExperimentConfig, adapter_sha256: str = "") -> RegimeOutcome:
    """Train the configured regime across folds and write report artifacts.

    On a fold failure, partial fold metrics and an incomplete manifest are
    written before a :class:`PartialRunError` propagates.
    """
    started = time.perf_counter()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _scan_real(config)
    assignments = stratified_kfold(manifest, config.folds, config.fractions, config.seed)
    synth_count = config.synthetic_per_class if config.regime is not Regime.REAL_ONLY else 0
    if synth_count > 0:
        merged = merge_synthetic(manifest, config.synth_root, synth_count)
    else:
        merged = manifest

    fold_csv = out_dir / FOLD_CSV_NAME
    try:
        fold_rows, confusions, library_version = _train_folds(config, merged, assignments)
    except _FoldFailure as fail:
        _write_fold_csv(fold_csv, _fold_table(fail.done))
        doc = _build_manifest(
            "regime",
            config,
            manifest.content_digest(),
            assignments,
            library_for_registry(manifest.registry).version,
            {"fold_metrics": fold_csv},
            complete=False,
            adapter_sha256=adapter_sha256,
        )
        _write_manifest(out_dir, doc)
        raise PartialRunError(
            f"a fold failed after {len(fail.done)} of {config.folds} folds completed: "
            f"{fail.cause}",
            completed=_fold_table(fail.done),
            outputs={"fold_metrics": fold_csv, "manifest": out_dir / MANIFEST_NAME},
        ) from fail.cause

    _write_fold_csv(
        fold_csv,
        [(f, name, fold_rows[name][f]) for name in _SPLIT_NAMES for f in range(config.folds)],
    )
    aggregates = {split: aggregate_folds(rows) for split, rows in fold_rows.items()}
    dataset_name = _dataset_label(config.regime, synth_count)
    table = ReportTable(
        rows=[
            ReportRow(
                model=config.family.value,
                split=split,
                dataset=dataset_name,
                accuracy_mean=aggregates[split].mean["accuracy"],
                accuracy_std=aggregates[split].std["accuracy"],
                f1_mean=aggregates[split].mean["macro_f1"],
                f1_std=aggregates[split].std["macro_f1"],
                auc_mean=aggregates[split].mean["auc"],
                auc_std=aggregates[split].std["auc"],
            )
            for split in _SPLIT_NAMES
        ]
    )
    outputs = {"fold_metrics": fold_csv}
    outputs.update(emit_report(table, out_dir))
    wall = time.perf_counter() - started
    doc = _build_manifest(
        "regime",
        config,
        manifest.content_digest(),
        assignments,
        library_version,
        outputs,
        complete=True,
        adapter_sha256=adapter_sha256,
        telemetry={"seconds": wall, "records": len(merged.records)},
    )
    outputs["manifest"] = _write_manifest(out_dir, doc)
    return RegimeOutcome(
        table=table,
        fold_metrics=fold_rows,
        aggregates=aggregates,
        confusions=confusions,
        run_manifest=doc,
        outputs=outputs,
        wall_time=wall,
    )


# ---------------------------------------------------------------------------
# Scaling sweep


@dataclass
class SweepPoint:
    synthetic_per_class: int
    validation: FoldAggregate
    test: FoldAggregate
    train_records: int = 0
    wall_time: float = 0.0


@dataclass
class SweepOutcome:
    points: list[SweepPoint]
    run_manifest: dict
    outputs: dict[str, Path]
    wall_time: float


def _check_synth_available(config: ExperimentConfig, manifest: DatasetManifest) -> None:
    need = max(config.schedule)
    if need == 0:
        return
    root = Path(config.synth_root)
    exts = tuple(e.lower() for e in DEFAULT_EXTENSIONS)
    for lbl in manifest.registry:
        class_dir = root / lbl.name
        have = (
            sum(1 for p in class_dir.iterdir() if p.is_file() and p.suffix.lower() in exts)
            if class_dir.is_dir()
            else 0
        )
        if have < need:
            raise DataError(
                f"schedule needs {need} synthetic images for class {lbl.name!r} "
                f"but only {have} are available"
            )


def run_scaling_sweep(config: ExperimentConfig) -> SweepOutcome:
    """One mixed-regime run per schedule point with shared fold assignments.

    Availability of every schedule point is checked before any training
    starts. A count of 0 degenerates to the real-only baseline. All points
    share one stratification and one classifier init seed, so the curve
    isolates the effect of added synthetic data.
    """
    if not config.schedule:
        raise ConfigError("sweep needs a nonempty schedule")
    started = time.perf_counter()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = _scan_real(config)
    assignments = stratified_kfold(manifest, config.folds, config.fractions, config.seed)
    _check_synth_available(config, manifest)

    points: list[SweepPoint] = []
    all_fold_rows: list[tuple[int, dict[str, list[dict[str, float]]]]] = []
    library_version = library_for_registry(manifest.registry).version
    try:
        for count in config.schedule:
            point_started = time.perf_counter()
            point_regime = Regime.REAL_ONLY if count == 0 else Regime.MIXED
            point_config = replace(config, regime=point_regime, synthetic_per_class=count)
            merged = merge_synthetic(manifest, config.synth_root, count) if count else manifest
            fold_rows, _, library_version = _train_folds(point_config, merged, assignments)
            all_fold_rows.append((count, fold_rows))
            points.append(
                SweepPoint(
                    synthetic_per_class=count,
                    validation=aggregate_folds(fold_rows["validation"]),
                    test=aggregate_folds(fold_rows["test"]),
                    train_records=len(merged.records),
                    wall_time=time.perf_counter() - point_started,
                )
            )
    except Exception as exc:
        cause = exc.cause if isinstance(exc, _FoldFailure) else exc
        partial_outputs = _write_sweep_outputs(out_dir, points, all_fold_rows, plot=False)
        doc = _build_manifest(
            "sweep",
            config,
            manifest.content_digest(),
            assignments,
            library_version,
            partial_outputs,
            complete=False,
        )
        _write_manifest(out_dir, doc)
        raise PartialRunError(
            f"sweep stopped after {len(points)} of {len(config.schedule)} points: {cause}",
            completed=points,
            outputs=partial_outputs,
        ) from cause

    outputs = _write_sweep_outputs(out_dir, points, all_fold_rows, plot=True)
    wall = time.perf_counter() - started
    doc = _build_manifest(
        "sweep",
        config,
        manifest.content_digest(),
        assignments,
        library_version,
        outputs,
        complete=True,
        telemetry={
            "seconds": wall,
            "point_seconds": [pt.wall_time for pt in points],
            "point_records": [pt.train_records for pt in points],
        },
    )
    outputs["manifest"] = _write_manifest(out_dir, doc)
    return SweepOutcome(
        points=points,
        run_manifest=doc,
        outputs=outputs,
        wall_time=wall,
    )


def _write_sweep_outputs(
    out_dir: Path,
    points: list[SweepPoint],
    all_fold_rows: list[tuple[int, dict[str, list[dict[str, float]]]]],
    plot: bool,
) -> dict[str, Path]:
    outputs: dict[str, Path] = {}
    sweep_csv = out_dir / "sweep.csv"
    if points:
        keys = sorted(points[0].test.mean)
        with open(sweep_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["synthetic_per_class", "train_records"]
                + [f"{k}_mean" for k in keys]
                + [f"{k}_std" for k in keys]
            )
            for pt in points:
                writer.writerow(
                    [pt.synthetic_per_class, pt.train_records]
                    + [repr(pt.test.mean[k]) for k in keys]
                    + [repr(pt.test.std[k]) for k in keys]
                )
        outputs["sweep"] = sweep_csv

    folds_csv = out_dir / FOLD_CSV_NAME
    with open(folds_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        keys = None
        for count, fold_rows in all_fold_rows:
            for split in _SPLIT_NAMES:
                for fold, row in enumerate(fold_rows[split]):
                    if keys is None:
                        keys = sorted(row)
                        writer.writerow(["point", "fold", "split"] + keys)
                    writer.writerow([count, fold, split] + [repr(row[k]) for k in keys])
        if keys is None:
            writer.writerow(["point", "fold", "split"])
    outputs["fold_metrics"] = folds_csv

    if plot and points:
        counts = [pt.synthetic_per_class for pt in points]
        means = [pt.test.mean["accuracy"] for pt in points]
        stds = [pt.test.std["accuracy"] for pt in points]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.errorbar(counts, means, yerr=stds, fmt="o-", capsize=4)
        ax.set_xlabel("synthetic images per class")
        ax.set_ylabel("test accuracy (mean over folds)")
        ax.set_title("Synthetic scaling sweep")
        ax.grid(True, alpha=0.4)
        fig.tight_layout()
        plot_path = out_dir / "sweep_accuracy.png"
        fig.savefig(plot_path, dpi=120)
        plt.close(fig)
        outputs["plot"] = plot_path
    return outputs


# ---------------------------------------------------------------------------
# Re-execution from a manifest


def read_run_manifest(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise DataError(f"unsupported run manifest schema: {doc.get('schema_version')!r}")
    return doc


def rerun_from_manifest(manifest_path: str | Path, out_dir: str | Path):
    """Re-execute a recorded run with its exact config into a new directory."""
    doc = read_run_manifest(manifest_path)
    config = config_from_dict(doc["config"])
    config = replace(config, out_dir=str(out_dir))
    if doc["kind"] == "sweep":
        return run_scaling_sweep(config)
    return run_regime(config, adapter_sha256=doc.get("adapter_sha256", ""))
