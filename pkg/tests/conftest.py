from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from cytodiff.dataset import Origin, build_registry, discover_class_names, scan_corpus
from cytodiff.generation import stub_generate


def make_stub_corpus(
    root: Path,
    sizes: dict[str, int],
    resolution: int = 32,
    seed0: int = 10_000,
    variation: float = 1.0,
) -> Path:
    """Write a folder-per-class corpus of procedural images to disk.

    Per-image seeds start at ``seed0`` so fixture images never collide with
    the seeds used by generation runs in the same test.
    """
    for name, count in sizes.items():
        class_dir = root / name
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            img = stub_generate(name, seed=seed0 + i, resolution=resolution, variation=variation)
            Image.fromarray(img).save(class_dir / f"{name}_{i:04d}.png")
    return root


def scan_stub_corpus(root: Path, seed: int = 0):
    registry = build_registry(discover_class_names(root))
    return scan_corpus(root, registry, Origin.REAL, seed=seed)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory) -> Path:
    """Imbalanced 3-class corpus: 40/12/6 images at 32 px."""
    root = tmp_path_factory.mktemp("corpus") / "real"
    return make_stub_corpus(root, {"alpha": 40, "beta": 12, "gamma": 6})


@pytest.fixture(scope="session")
def synth_pool(tmp_path_factory) -> Path:
    """Synthetic pool for the same 3 classes, 40 per class at 32 px."""
    root = tmp_path_factory.mktemp("synth") / "pool"
    return make_stub_corpus(root, {"alpha": 40, "beta": 40, "gamma": 40}, seed0=50_000)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
