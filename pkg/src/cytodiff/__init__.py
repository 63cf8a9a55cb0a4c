"""Few-shot LoRA image synthesis and class-imbalanced classification experiments.

The package is organized as a numpy/scipy library:

- ``dataset``: corpus scanning, stratified k-fold splits, few-shot selection,
  synthetic merging, augmentation.
- ``prompts``: per-class descriptor prompts for generation and contrastive
  classification.
- ``lora``: low-rank adapters, merge/unmerge, binary container I/O.
- ``attention``: a self-contained reference attention block with exact
  adapter gradients and a desk-scale denoising trainer.
- ``generation``: pluggable image generation (procedural stub and HTTP
  service client) with deterministic seeds and export sidecars.
- ``training``: classifier training with the combined real/synthetic loss
  and cosine-warmup schedule.
- ``metrics``: confusion-matrix metrics, one-vs-rest AUC, Fréchet distance.
- ``experiments``: fold-averaged regimes, scaling sweeps, reports, manifests.
"""

from .attention import (
    AdapterTrainResult,
    ReferenceAttentionBlock,
    adapter_for_block,
    make_reference_block,
    train_adapter,
)
from .classifiers import ClassifierFamily, ClassifierSpec, build_classifier
from .dataset import (
    AugmentationPolicy,
    ClassLabel,
    DatasetManifest,
    FewShotSelection,
    ImageRecord,
    Origin,
    SelectionMode,
    Split,
    SplitAssignment,
    apply_augmentation,
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
    ContainerError,
    CytodiffError,
    DataError,
    PartialBatchError,
    PartialRunError,
    RetryableBackendError,
)
from .experiments import (
    ExperimentConfig,
    Regime,
    ReportRow,
    ReportTable,
    emit_report,
    parse_report_csv,
    rerun_from_manifest,
    run_regime,
    run_scaling_sweep,
)
from .generation import (
    GenerationBackend,
    GenerationMode,
    GenerationRequest,
    SamplerSettings,
    StubBackend,
    SyntheticBatch,
    export_images,
    generate_batch,
    stub_generate,
)
from .lora import (
    AttentionTargetSpec,
    Component,
    LinearProjection,
    LoraAdapter,
    LoraEntry,
    ProjectionKind,
    adapted_forward,
    base_forward,
    init_adapter,
    load_adapter,
    merge,
    save_adapter,
    unmerge,
)
from .metrics import (
    ConfusionMatrix,
    FeatureDistribution,
    accuracy,
    aggregate_folds,
    auc_ovr,
    fid,
    frechet_distance,
    macro_f1,
    per_class_f1,
)
from .prompts import (
    PromptLibrary,
    PromptTemplate,
    default_library,
    library_for_registry,
    load_library,
    render_prompt,
    save_library,
    validate_library,
)
from .service import ServiceBackend
from .training import (
    LossMode,
    TrainConfig,
    combined_loss,
    cosine_warmup_lr,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train_classifier,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterTrainResult",
    "AttentionTargetSpec",
    "AugmentationPolicy",
    "BackendError",
    "ClassLabel",
    "ClassifierFamily",
    "ClassifierSpec",
    "Component",
    "ConfigError",
    "ConfusionMatrix",
    "ContainerError",
    "CytodiffError",
    "DataError",
    "DatasetManifest",
    "ExperimentConfig",
    "FeatureDistribution",
    "FewShotSelection",
    "GenerationBackend",
    "GenerationMode",
    "GenerationRequest",
    "ImageRecord",
    "LinearProjection",
    "LoraAdapter",
    "LoraEntry",
    "LossMode",
    "Origin",
    "PartialBatchError",
    "PartialRunError",
    "ProjectionKind",
    "PromptLibrary",
    "PromptTemplate",
    "ReferenceAttentionBlock",
    "Regime",
    "ReportRow",
    "ReportTable",
    "RetryableBackendError",
    "SamplerSettings",
    "SelectionMode",
    "ServiceBackend",
    "Split",
    "SplitAssignment",
    "StubBackend",
    "SyntheticBatch",
    "TrainConfig",
    "accuracy",
    "adapted_forward",
    "adapter_for_block",
    "aggregate_folds",
    "apply_augmentation",
    "auc_ovr",
    "bake_assignment",
    "base_forward",
    "build_classifier",
    "build_registry",
    "combined_loss",
    "cosine_warmup_lr",
    "default_library",
    "discover_class_names",
    "emit_report",
    "evaluate",
    "export_images",
    "fid",
    "frechet_distance",
    "generate_batch",
    "init_adapter",
    "library_for_registry",
    "load_adapter",
    "load_checkpoint",
    "load_image",
    "load_library",
    "load_manifest",
    "macro_f1",
    "make_reference_block",
    "merge",
    "merge_synthetic",
    "parse_report_csv",
    "per_class_f1",
    "render_prompt",
    "rerun_from_manifest",
    "run_regime",
    "run_scaling_sweep",
    "save_adapter",
    "save_checkpoint",
    "save_library",
    "save_manifest",
    "scan_corpus",
    "select_few_shot",
    "stratified_kfold",
    "stub_generate",
    "train_adapter",
    "train_classifier",
    "unmerge",
    "validate_library",
]
