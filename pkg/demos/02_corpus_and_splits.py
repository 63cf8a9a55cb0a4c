"""
Corpus scanning, stratified folds, few-shot selection
=====================================================

The dataset layer turns a folder-per-class image tree into a manifest,
then derives leak-free stratified splits and seeded few-shot subsets
from it. Everything downstream consumes manifests, never raw folders.
"""

import shutil
from pathlib import Path

from cytodiff import (
    Origin,
    SelectionMode,
    Split,
    build_registry,
    discover_class_names,
    save_manifest,
    scan_corpus,
    select_few_shot,
    stratified_kfold,
    stub_generate,
)
from PIL import Image

out_dir = Path(__file__).parent / "output" / "corpus_and_splits"
shutil.rmtree(out_dir, ignore_errors=True)
corpus = out_dir / "real"

# Build a small imbalanced corpus from the stub generator: one folder per
# class, as a real smear collection would be organized on disk.
for name, count, seed0 in (("basophil", 40, 0), ("monocyte", 12, 1000), ("myeloblast", 6, 2000)):
    (corpus / name).mkdir(parents=True, exist_ok=True)
    for i in range(count):
        Image.fromarray(stub_generate(name, seed=seed0 + i, resolution=32)).save(
            corpus / name / f"{i:04d}.png"
        )

registry = build_registry(discover_class_names(corpus))
manifest = scan_corpus(corpus, registry, Origin.REAL, seed=0)
print(f"scanned {manifest.total} images, classes:")
for name, (n_real, n_synth) in sorted(manifest.class_counts.items()):
    print(f"  {name:<12} real={n_real}")
save_manifest(manifest, out_dir / "manifest.jsonl")

# Stratified k-fold: every fold splits each class 60/20/20 within one
# image, and each image lands in exactly one split per fold.
assignments = stratified_kfold(manifest, k=5, fractions=(0.6, 0.2, 0.2), seed=7)
for assignment in assignments:
    sizes = {s: len(assignment.records_in(manifest, s)) for s in
             (Split.TRAIN, Split.VALIDATION, Split.TEST)}
    print(
        f"fold {assignment.fold_id}: train={sizes[Split.TRAIN]} "
        f"val={sizes[Split.VALIDATION]} test={sizes[Split.TEST]} "
        f"digest={assignment.digest()[:12]}"
    )

# Seeded few-shot selection is reproducible: the same seed picks the same
# exemplars, which is what makes adapter training repeatable.
label = next(lbl for lbl in registry if lbl.name == "myeloblast")
picked = select_few_shot(manifest, label, 4, SelectionMode.SEEDED_RANDOM, 3)
again = select_few_shot(manifest, label, 4, SelectionMode.SEEDED_RANDOM, 3)
print("few-shot picks:", [Path(r.path).name for r in picked.records])
print("same seed, same picks:", [r.path for r in picked.records] == [r.path for r in again.records])
