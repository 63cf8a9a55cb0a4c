"""
Low-rank adapters: neutrality, training, merging
================================================

A LoRA adapter adds (scale/rank) * up @ down to a frozen projection
weight. This walks the full life cycle: a fresh adapter changes nothing,
a few training steps on exemplar images move it, merging folds it into
the weights, and the container round-trips bit-exactly.
"""

from pathlib import Path

import numpy as np

from cytodiff import (
    adapter_for_block,
    load_adapter,
    make_reference_block,
    save_adapter,
    stub_generate,
    train_adapter,
)
from cytodiff.lora import adapter_file_digest

out_dir = Path(__file__).parent / "output" / "adapter_algebra"
out_dir.mkdir(parents=True, exist_ok=True)

# A reference attention block stands in for one layer of a diffusion
# backbone: query/key/value/output projections, multi-head softmax.
block = make_reference_block(d_model=32, n_heads=4, seed=0)
adapter = adapter_for_block(block, rank=4, scale=8.0, seed=1)
print("adapter targets:", ", ".join(sorted(adapter.targets)))

# Fresh adapters are exact no-ops: the up matrix starts at zero, so the
# low-rank update is exactly zero and the forward pass is bit-identical.
rng = np.random.default_rng(2)
x = rng.normal(size=(1, 6, 32)).astype(np.float32)
base = block.forward(x)
adapted = block.forward(x, adapter=adapter)
print("zero-init forward identical:", bool(np.array_equal(base, adapted)))

# Train on a handful of stub images of one class. The loss is a denoising
# objective on patch tokens; a few hundred steps is enough to see it move.
shots = [stub_generate("basophil", seed=s, resolution=32) for s in range(4)]
result = train_adapter(
    block, adapter, shots, "Photorealistic basophil under microscope",
    steps=150, lr=5e-3, seed=0,
)
print(f"loss: {result.losses[0]:.5f} -> {result.losses[-1]:.5f}")

# Merging folds the update into the weights; the merged block must agree
# with the adapted forward pass to float32 rounding.
merged = block.merged(result.adapter)
gap = np.max(np.abs(merged.forward(x) - block.forward(x, adapter=result.adapter)))
print(f"merged vs adapted, max abs gap: {gap:.2e}")

# The on-disk container carries a CRC32 trailer; loading verifies it and
# the round trip preserves every byte of every matrix.
path = out_dir / "basophil_rank4.lora"
save_adapter(result.adapter, path)
restored = load_adapter(path)
same = all(
    np.array_equal(result.adapter.targets[n].down, restored.targets[n].down)
    and np.array_equal(result.adapter.targets[n].up, restored.targets[n].up)
    for n in result.adapter.targets
)
print("container round trip bit-exact:", same)
print("container digest:", adapter_file_digest(path)[:16], "->", path)
