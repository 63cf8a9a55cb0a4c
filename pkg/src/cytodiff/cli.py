"""Command-line front end.

Subcommands: dataset (scan/split/merge-synth), prompts (validate/show),
lora-train, generate, train, evaluate, sweep, report. A JSON file passed
via ``--config`` overrides any flag of the invoked subcommand. ``--seed``
is mandatory wherever randomness is involved.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 backend
error, 5 partial/incomplete run.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import experiments
from .attention import adapter_for_block, make_reference_block, train_adapter
from .classifiers import ClassifierSpec
from .dataset import (
    Origin,
    SelectionMode,
    Split,
    bake_assignment,
    build_registry,
    discover_class_names,
    load_image,
    load_manifest,
    merge_synthetic,
    save_manifest,
    scan_corpus,
    select_few_shot,
    stratified_kfold,
)
from .errors import (
    BackendError,
    ConfigError,
    CytodiffError,
    DataError,
    PartialBatchError,
    PartialRunError,
)
from .generation import (
    GenerationMode,
    GenerationRequest,
    SamplerSettings,
    StubBackend,
    export_images,
    generate_batch,
)
from .lora import load_adapter, save_adapter
from .metrics import accuracy, auc_ovr, macro_f1, per_class_f1
from .prompts import (
    WBC_CLASS_NAMES,
    default_library,
    library_for_registry,
    load_library,
    validate_library,
)
from .service import ServiceBackend
from .training import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train_classifier,
    write_epoch_log,
)

BACKEND_URL_ENV = "CYTODIFF_BACKEND_URL"

_LOSS_MODE_ALIASES = {
    "standard": "standard_ce",
    "standard_ce": "standard_ce",
    "equal": "equal_treatment",
    "equal_treatment": "equal_treatment",
    "weighted": "weighted_combined",
    "weighted_combined": "weighted_combined",
}


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 3:
        raise ConfigError(f"fractions need exactly 3 comma-separated values, got {text!r}")
    try:
        return tuple(float(p) for p in parts)  # type: ignore[return-value]
    except ValueError as exc:
        raise ConfigError(f"bad fractions {text!r}: {exc}") from exc


def _parse_schedule(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    parts = [p for p in str(text).split(",") if p.strip()]
    if not parts:
        raise ConfigError("schedule must list at least one count")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"bad schedule {text!r}: {exc}") from exc


def _apply_config_file(args: argparse.Namespace) -> None:
    """Overlay values from ``--config`` JSON onto parsed flags.

    Per the interface contract the file wins over command-line flags.
    Keys must match the destination names of the invoked subcommand.
    """
    path = getattr(args, "config", None)
    if not path:
        return
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise ConfigError(f"config key {key!r} is not a flag of this command")
        setattr(args, dest, value)


def _registry_from(args: argparse.Namespace):
    classes = getattr(args, "classes", None)
    if classes:
        names = [c for c in str(classes).split(",") if c.strip()]
        return build_registry(names)
    root = getattr(args, "data_root", None)
    if root:
        return build_registry(discover_class_names(root))
    return build_registry(WBC_CLASS_NAMES)


def _backend_for(args: argparse.Namespace):
    name = getattr(args, "backend", "stub")
    if name == "stub":
        return StubBackend()
    url = getattr(args, "backend_url", None) or os.environ.get(BACKEND_URL_ENV, "")
    if not url:
        raise ConfigError(
            f"service backend needs a URL via --backend-url or ${BACKEND_URL_ENV}"
        )
    return ServiceBackend(url)


def _train_config_from(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        lr_init=args.lr,
        lr_min=args.lr_min,
        warmup_epochs=args.warmup,
        total_epochs=args.epochs,
        batch_train=args.batch,
        batch_eval=args.batch_eval,
        weight_decay=args.weight_decay,
        lambda1=args.lambda1,
        loss_mode=_LOSS_MODE_ALIASES.get(args.loss_mode, args.loss_mode),
        seed=args.seed,
    )


def _experiment_config_from(args: argparse.Namespace, **overrides) -> experiments.ExperimentConfig:
    base = dict(
        data_root=args.data_root,
        out_dir=args.out,
        regime=getattr(args, "regime", "real_only"),
        family=args.family,
        backbone=getattr(args, "backbone", ""),
        resolution=args.resolution,
        folds=args.folds,
        fractions=_parse_fractions(args.fractions)
        if isinstance(args.fractions, str)
        else tuple(args.fractions),
        synth_root=getattr(args, "synth_root", None),
        synthetic_per_class=getattr(args, "per_class", 0) or 0,
        seed=args.seed,
        backend_id=getattr(args, "backend", "stub"),
        train=_train_config_from(args),
        augment=getattr(args, "augment", False),
        eval_includes_synthetic=getattr(args, "allow_synthetic_eval", False),
        jobs=getattr(args, "jobs", 1),
    )
    base.update(overrides)
    return experiments.ExperimentConfig(**base)


def _print_metrics(title: str, metrics: dict[str, float]) -> None:
    print(title)
    for key in sorted(metrics):
        print(f"  {key:<24} {metrics[key]:.4f}")


def _evaluate_split(model, manifest, split: Split, registry) -> dict[str, float]:
    res = evaluate(model, manifest, split)
    cm = res.confusion(len(registry))
    out = {
        "accuracy": accuracy(cm),
        "macro_f1": macro_f1(cm),
        "auc": auc_ovr(res.y_true, res.probabilities).macro,
    }
    for lbl, f1 in zip(registry, per_class_f1(cm)):
        out[f"f1_{lbl.name}"] = float(f1)
    return out


# ---------------------------------------------------------------------------
# dataset


def cmd_dataset_scan(args: argparse.Namespace) -> int:
    registry = build_registry(discover_class_names(args.root))
    manifest = scan_corpus(
        args.root, registry, Origin(args.origin), seed=args.seed or 0, verify=not args.no_verify
    )
    save_manifest(manifest, args.out)
    print(f"scanned {manifest.total} images across {len(registry)} classes -> {args.out}")
    for name, (n_real, n_synth) in sorted(manifest.class_counts.items()):
        print(f"  {name:<24} real={n_real} synthetic={n_synth}")
    if manifest.skipped:
        print(f"  skipped {len(manifest.skipped)} unreadable files")
    return 0


def cmd_dataset_split(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    fractions = _parse_fractions(args.fractions) if isinstance(args.fractions, str) else tuple(args.fractions)
    assignments = stratified_kfold(
        manifest, args.k, fractions, args.seed, include_synthetic=args.include_synthetic
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for assignment in assignments:
        baked = bake_assignment(manifest, assignment)
        path = out_dir / f"fold{assignment.fold_id}.jsonl"
        save_manifest(baked, path)
        print(f"fold {assignment.fold_id}: {path}  digest={assignment.digest()[:12]}")
    return 0


def cmd_dataset_merge_synth(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    merged = merge_synthetic(manifest, args.synth_root, args.per_class)
    save_manifest(merged, args.out)
    added = merged.total - manifest.total
    print(f"merged {added} synthetic records ({args.per_class}/class) -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# prompts


def cmd_prompts_validate(args: argparse.Namespace) -> int:
    registry = _registry_from(args)
    library = load_library(args.file, registry) if args.file else default_library(registry)
    report = validate_library(library, registry)
    print(report.describe())
    if not report.ok:
        raise ConfigError("prompt library failed validation")
    return 0


def cmd_prompts_show(args: argparse.Namespace) -> int:
    registry = _registry_from(args)
    library = load_library(args.file, registry) if args.file else default_library(registry)
    template = library.template_for(args.class_name)
    print(library.render(args.class_name))
    for phrase in template.phrases:
        print(f"  - {phrase}")
    return 0


# ---------------------------------------------------------------------------
# lora-train


def cmd_lora_train(args: argparse.Namespace) -> int:
    registry = build_registry(discover_class_names(args.data_root))
    by_name = {lbl.name: lbl for lbl in registry}
    if args.class_name not in by_name:
        raise ConfigError(f"class {args.class_name!r} not found under {args.data_root}")
    label = by_name[args.class_name]
    manifest = scan_corpus(args.data_root, registry, Origin.REAL, seed=args.seed)
    selection = select_few_shot(
        manifest, label, args.shots, SelectionMode.SEEDED_RANDOM, args.seed
    )
    images = [load_image(rec.path, args.resolution) for rec in selection.records]
    prompt = library_for_registry(registry).render(label.name)

    block = make_reference_block(d_model=args.d_model, n_heads=args.heads, seed=args.seed)
    adapter = adapter_for_block(block, rank=args.rank, scale=args.scale, seed=args.seed)
    result = train_adapter(
        block, adapter, images, prompt,
        steps=args.steps, lr=args.lr, seed=args.seed, weight_decay=args.weight_decay,
    )
    save_adapter(result.adapter, args.out)
    print(
        f"trained rank-{args.rank} adapter on {len(images)} images of {label.name!r}: "
        f"loss {result.losses[0]:.5f} -> {result.losses[-1]:.5f}"
    )
    print(f"adapter written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args: argparse.Namespace) -> int:
    backend = _backend_for(args)
    adapter = load_adapter(args.adapter) if args.adapter else None
    if args.data_root:
        registry = build_registry(discover_class_names(args.data_root))
        by_name = {lbl.name: lbl for lbl in registry}
        if args.class_name not in by_name:
            raise ConfigError(f"class {args.class_name!r} not found under {args.data_root}")
        label = by_name[args.class_name]
    else:
        registry = _registry_from(args)
        by_name = {lbl.name: lbl for lbl in registry}
        label = by_name.get(args.class_name)
        if label is None:
            raise ConfigError(
                f"class {args.class_name!r} is not in the registry; pass --data-root or --classes"
            )
    prompt = args.prompt or library_for_registry(registry).render(label.name)

    mode = GenerationMode(args.mode)
    init_images = None
    if mode is GenerationMode.IMAGE_TO_IMAGE:
        if not args.data_root:
            raise ConfigError("image_to_image mode needs --data-root for init images")
        manifest = scan_corpus(args.data_root, registry, Origin.REAL, seed=args.seed)
        init_images = select_few_shot(
            manifest, label, args.shots, SelectionMode.SEEDED_RANDOM, args.seed
        )
    request = GenerationRequest(
        label=label,
        count=args.count,
        seed=args.seed,
        sampler=SamplerSettings(steps=args.steps, guidance_scale=args.guidance),
        mode=mode,
        init_images=init_images,
        resolution=args.resolution,
        strength=args.strength,
    )
    batch = generate_batch(backend, request, prompt, adapter=adapter)
    files = export_images(batch, args.out)
    print(
        f"run {batch.run_id}: {len(files)} images of {label.name!r} "
        f"({batch.backend_id}, {batch.wall_time:.2f}s) -> {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# train / evaluate


def cmd_train(args: argparse.Namespace) -> int:
    if args.fold is None:
        config = _experiment_config_from(args)
        outcome = experiments.run_regime(config)
        for row in outcome.table.rows:
            print(
                f"{row.model} {row.split:<12} {row.dataset:<24} "
                f"acc={row.accuracy_mean:.4f}±{row.accuracy_std:.4f} "
                f"f1={row.f1_mean:.4f}±{row.f1_std:.4f} "
                f"auc={row.auc_mean:.4f}±{row.auc_std:.4f}"
            )
        print(f"outputs in {config.out_dir}")
        return 0

    # single-fold path: train one classifier, write checkpoint + epoch log
    config = _experiment_config_from(args)
    manifest = experiments._scan_real(config)
    assignments = stratified_kfold(manifest, config.folds, config.fractions, config.seed)
    if not (0 <= args.fold < config.folds):
        raise ConfigError(f"fold must be in [0, {config.folds}), got {args.fold}")
    assignment = assignments[args.fold]
    if config.synthetic_per_class > 0 and config.regime != experiments.Regime.REAL_ONLY:
        manifest = merge_synthetic(manifest, config.synth_root, config.synthetic_per_class)
    manifest = experiments._regime_records(manifest, assignment, config.regime)

    spec = ClassifierSpec(
        family=config.family,
        num_classes=len(manifest.registry),
        backbone=config.backbone,
        resolution=config.resolution,
        pretrained=args.pretrained,
        seed=config.seed,
    )
    library = library_for_registry(manifest.registry)
    prompt_texts = [library.render(lbl.name) for lbl in manifest.registry]
    train_cfg = TrainConfig(
        lr_init=config.train.lr_init,
        lr_min=config.train.lr_min,
        warmup_epochs=config.train.warmup_epochs,
        total_epochs=config.train.total_epochs,
        batch_train=config.train.batch_train,
        batch_eval=config.train.batch_eval,
        weight_decay=config.train.weight_decay,
        lambda1=config.train.lambda1,
        loss_mode=config.train.loss_mode,
        seed=experiments._fold_train_seed(config, args.fold),
    )
    outcome = train_classifier(
        spec, manifest, train_cfg, assignment=assignment, prompt_texts=prompt_texts
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / f"fold{args.fold}.ckpt"
    save_checkpoint(outcome.model, ckpt)
    log_path = out_dir / f"fold{args.fold}_epochs.csv"
    write_epoch_log(outcome.stats, log_path)
    print(
        f"fold {args.fold}: best epoch {outcome.best_epoch} "
        f"val macro-F1 {outcome.best_val_macro_f1:.4f}"
    )
    print(f"checkpoint {ckpt}\nepoch log  {log_path}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    split = Split(args.split)
    metrics = _evaluate_split(model, manifest, split, manifest.registry)
    _print_metrics(f"{split.value} metrics ({args.checkpoint})", metrics)
    return 0


# ---------------------------------------------------------------------------
# sweep / report


def cmd_sweep(args: argparse.Namespace) -> int:
    schedule = _parse_schedule(args.schedule)
    config = _experiment_config_from(args, regime="mixed", schedule=schedule)
    outcome = experiments.run_scaling_sweep(config)
    for pt in outcome.points:
        print(
            f"  {pt.synthetic_per_class:>6}/class: "
            f"test acc {pt.test.mean['accuracy']:.4f}±{pt.test.std['accuracy']:.4f}  "
            f"macro-F1 {pt.test.mean['macro_f1']:.4f}±{pt.test.std['macro_f1']:.4f}"
        )
    print(f"outputs in {config.out_dir}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    manifest_path = run_dir / experiments.MANIFEST_NAME
    if not manifest_path.is_file():
        raise DataError(f"no {experiments.MANIFEST_NAME} in {run_dir}")
    doc = experiments.read_run_manifest(manifest_path)
    out_dir = Path(args.out) if args.out else run_dir

    if doc["kind"] == "regime":
        table = experiments.parse_report_csv(run_dir / "report.csv")
        formats = {f for f in args.formats.split(",") if f}
        outputs = experiments.emit_report(table, out_dir, formats)
        for kind, path in outputs.items():
            print(f"{kind}: {path}")
        return 0

    # sweep: print the curve recorded in sweep.csv
    with open(run_dir / "sweep.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            print(
                f"  {row['synthetic_per_class']:>6}/class: "
                f"test acc {float(row['accuracy_mean']):.4f}±{float(row['accuracy_std']):.4f}"
            )
    plot = doc.get("outputs", {}).get("plot")
    if plot:
        print(f"plot: {plot}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def _add_common_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-root", required=True, help="folder-per-class corpus of real images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--family", default="cnn_head", choices=["cnn_head", "contrastive_prompt"])
    p.add_argument("--backbone", default="", help="e.g. cnn8-16 or pixelproj64")
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--fractions", default="0.6,0.2,0.2")
    p.add_argument("--synth-root", default=None, help="folder-per-class synthetic corpus")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--warmup", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lr-min", type=float, default=1e-8)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--batch-eval", type=int, default=1)
    p.add_argument("--weight-decay", type=float, default=1e-8)
    p.add_argument("--lambda1", type=float, default=0.5)
    p.add_argument(
        "--loss-mode", default="weighted", choices=sorted(set(_LOSS_MODE_ALIASES))
    )
    p.add_argument("--augment", action="store_true", help="train-split augmentation")
    p.add_argument(
        "--allow-synthetic-eval",
        action="store_true",
        help="let synthetic images enter validation/test splits",
    )
    p.add_argument("--jobs", type=int, default=1, help="folds trained in parallel")
    p.add_argument("--seed", type=int, required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cytodiff",
        description="Few-shot LoRA image synthesis and imbalanced-classification experiments.",
    )
    parser.add_argument("--version", action="version", version="%(prog)s 0.1.0")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="JSON file whose keys override this command's flags")
        return p

    # dataset
    ds = sub.add_parser("dataset", help="corpus scanning, splitting, synthetic merging")
    ds_sub = ds.add_subparsers(dest="subcommand", required=True)

    p = with_config(ds_sub.add_parser("scan", help="index a folder-per-class corpus"))
    p.add_argument("--root", required=True)
    p.add_argument("--origin", default="real", choices=["real", "synthetic"])
    p.add_argument("--out", required=True, help="manifest JSONL path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-verify", action="store_true", help="skip image decodability checks")
    p.set_defaults(func=cmd_dataset_scan)

    p = with_config(ds_sub.add_parser("split", help="stratified k-fold split of a manifest"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--fractions", default="0.6,0.2,0.2")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--include-synthetic", action="store_true")
    p.add_argument("--out", required=True, help="directory for per-fold baked manifests")
    p.set_defaults(func=cmd_dataset_split)

    p = with_config(ds_sub.add_parser("merge-synth", help="append synthetic records to a manifest"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--synth-root", required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset_merge_synth)

    # prompts
    pr = sub.add_parser("prompts", help="prompt library inspection")
    pr_sub = pr.add_subparsers(dest="subcommand", required=True)

    p = with_config(pr_sub.add_parser("validate", help="check a prompt library against a registry"))
    p.add_argument("--file", default=None, help="prompt library JSON (default: built-in)")
    p.add_argument("--classes", default=None, help="comma-separated class names")
    p.add_argument("--data-root", default=None, help="derive the registry from a corpus")
    p.set_defaults(func=cmd_prompts_validate)

    p = with_config(pr_sub.add_parser("show", help="render one class's prompt"))
    p.add_argument("class_name")
    p.add_argument("--file", default=None)
    p.add_argument("--classes", default=None)
    p.add_argument("--data-root", default=None)
    p.set_defaults(func=cmd_prompts_show)

    # lora-train
    p = with_config(sub.add_parser("lora-train", help="fit a reference-scale adapter on few shots"))
    p.add_argument("--class", dest="class_name", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--shots", type=int, default=8, choices=[1, 4, 8, 16])
    p.add_argument("--out", required=True, help="adapter container path")
    p.add_argument("--rank", type=int, default=16)
    p.add_argument("--scale", type=float, default=16.0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_lora_train)

    # generate
    p = with_config(sub.add_parser("generate", help="render a batch of synthetic images"))
    p.add_argument("--class", dest="class_name", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--backend", default="stub", choices=["stub", "service"])
    p.add_argument("--backend-url", default=None, help=f"service URL (or ${BACKEND_URL_ENV})")
    p.add_argument("--adapter", default=None, help="adapter container to condition on")
    p.add_argument("--out", required=True, help="export root (one folder per class)")
    p.add_argument("--prompt", default=None, help="override the library prompt")
    p.add_argument("--mode", default="text_to_image", choices=["text_to_image", "image_to_image"])
    p.add_argument("--data-root", default=None, help="real corpus (registry and init images)")
    p.add_argument("--classes", default=None, help="registry when no corpus is given")
    p.add_argument("--shots", type=int, default=8, choices=[1, 4, 8, 16])
    p.add_argument("--strength", type=float, default=0.7)
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--guidance", type=float, default=7.5)
    p.add_argument("--resolution", type=int, default=64)
    p.set_defaults(func=cmd_generate)

    # train
    p = with_config(sub.add_parser("train", help="train a classifier regime (or one fold)"))
    _add_common_train_flags(p)
    p.add_argument("--regime", default="real_only", choices=[r.value for r in experiments.Regime])
    p.add_argument("--per-class", type=int, default=0, help="synthetic images per class")
    p.add_argument("--fold", type=int, default=None, help="train only this fold")
    p.add_argument("--pretrained", action="store_true", help="request pretrained backbone weights")
    p.set_defaults(func=cmd_train)

    # evaluate
    p = with_config(sub.add_parser("evaluate", help="score a checkpoint on a baked manifest"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True, help="baked manifest with split labels")
    p.add_argument("--split", default="test", choices=["train", "validation", "test"])
    p.set_defaults(func=cmd_evaluate)

    # sweep
    p = with_config(sub.add_parser("sweep", help="synthetic-count scaling sweep"))
    _add_common_train_flags(p)
    p.add_argument("--schedule", required=True, help="comma-separated per-class counts, e.g. 0,100,300")
    p.set_defaults(func=cmd_sweep)

    # report
    p = with_config(sub.add_parser("report", help="re-emit report files from a finished run"))
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", default=None, help="output directory (default: the run dir)")
    p.add_argument("--formats", default="csv,txt")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (PartialRunError, PartialBatchError) as exc:
        print(f"partial run: {exc}", file=sys.stderr)
        return 5
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except CytodiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
