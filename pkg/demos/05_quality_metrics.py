"""
Evaluation metrics: macro-F1, one-vs-all AUC, Frechet distance
==============================================================

Imbalanced classification needs metrics that do not reward majority
collapse. Macro-F1 weights every class equally; one-vs-all AUC reads
ranking quality from probabilities; the Frechet distance between
Gaussian feature fits scores how closely synthetic images track real
ones.
"""

import numpy as np

from cytodiff import ConfusionMatrix, auc_ovr, fid, macro_f1, per_class_f1, stub_generate
from cytodiff.embeddings import PixelProjectionEmbedding

# A classifier that predicts the majority class for everything can still
# post high accuracy; macro-F1 exposes it.
collapse = ConfusionMatrix(np.array([
    [50, 0, 0],
    [10, 0, 0],
    [5, 0, 0],
]))
print(f"majority collapse: accuracy {50/65:.3f}, macro-F1 {macro_f1(collapse):.3f}")

balanced = ConfusionMatrix(np.array([
    [48, 1, 1],
    [1, 8, 1],
    [0, 1, 4],
]))
print(f"healthy model:     accuracy {60/65:.3f}, macro-F1 {macro_f1(balanced):.3f}")
print("per-class F1:", np.round(per_class_f1(balanced), 3))

# AUC is computed from scores, not argmax decisions, with ties counting
# half. Degenerate classes (no positives in the split) are skipped, not
# silently scored.
rng = np.random.default_rng(0)
y = np.array([0] * 20 + [1] * 6 + [2] * 3)
scores = rng.normal(size=(29, 3))
scores[np.arange(29), y] += 1.5
result = auc_ovr(y, scores)
for c, value in sorted(result.per_class.items()):
    print(f"AUC class {c}: {value:.3f}")
print(f"macro AUC: {result.macro:.3f}")

# Frechet distance between embedding clouds: same class and nearby seeds
# should sit much closer than different classes.
embed = PixelProjectionEmbedding(dim=16, grid=8, seed=0)
real = embed.embed(np.stack([stub_generate("basophil", seed=s) for s in range(400)]))
synth_same = embed.embed(np.stack([stub_generate("basophil", seed=10_000 + s) for s in range(400)]))
synth_other = embed.embed(np.stack([stub_generate("monocyte", seed=20_000 + s) for s in range(400)]))

# 400 samples is below the default stability threshold, so say so explicitly
print(f"\nFID basophil vs basophil stubs: {fid(real, synth_same, min_count=400):8.3f}")
print(f"FID basophil vs monocyte stubs: {fid(real, synth_other, min_count=400):8.3f}")
