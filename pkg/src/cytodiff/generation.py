"""Synthetic image generation behind a pluggable backend interface.

The stub backend draws procedural cell-like images: class identity fixes the
hue and blob geometry (via a stable hash of the class name), the seed drives
per-image variation, so output is a pure function of (request, prompt,
adapter digest). The service backend (see :mod:`cytodiff.service`) speaks
the same interface against an HTTP diffusion endpoint.
"""

from __future__ import annotations

import hashlib
import json
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from matplotlib.colors import hsv_to_rgb
from PIL import Image

from .dataset import ClassLabel, FewShotSelection, ImageRecord, Origin, Split, load_image
from .errors import ConfigError, DataError, PartialBatchError, RetryableBackendError
from .lora import LoraAdapter, save_adapter

_DOMAIN_STUB = 11

DEFAULT_STEPS = 30
DEFAULT_GUIDANCE = 7.5
DEFAULT_STRENGTH = 0.7
SIDECAR_SCHEMA_VERSION = 1


class GenerationMode(str, Enum):
    TEXT_TO_IMAGE = "text_to_image"
    IMAGE_TO_IMAGE = "image_to_image"


@dataclass(frozen=True)
class SamplerSettings:
    steps: int = DEFAULT_STEPS
    guidance_scale: float = DEFAULT_GUIDANCE

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ConfigError(f"sampler steps must be >= 1, got {self.steps}")
        if self.guidance_scale <= 0:
            raise ConfigError(f"guidance scale must be positive, got {self.guidance_scale}")


@dataclass(frozen=True)
class GenerationRequest:
    label: ClassLabel
    count: int
    seed: int
    sampler: SamplerSettings = SamplerSettings()
    mode: GenerationMode = GenerationMode.TEXT_TO_IMAGE
    init_images: FewShotSelection | None = None
    resolution: int = 64
    strength: float = DEFAULT_STRENGTH

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", GenerationMode(self.mode))
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if self.resolution < 8:
            raise ConfigError(f"resolution must be >= 8, got {self.resolution}")
        if not (0.0 <= self.strength <= 1.0):
            raise ConfigError(f"strength must be in [0, 1], got {self.strength}")
        if self.mode is GenerationMode.IMAGE_TO_IMAGE:
            if self.init_images is None or not self.init_images.records:
                raise ConfigError("image_to_image mode requires init images")


@dataclass
class SyntheticBatch:
    """Generated images plus everything needed to trace them.

    ``records`` stays empty until :func:`export_images` has written files;
    afterwards it holds one synthetic ImageRecord per image.
    """

    request: GenerationRequest
    backend_id: str
    prompt: str
    prompt_sha256: str
    adapter_sha256: str
    run_id: str
    seeds: tuple[int, ...]
    images: list[np.ndarray]
    wall_time: float
    records: list[ImageRecord] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Backend interface and the procedural stub


class GenerationBackend(ABC):
    backend_id: str = "abstract"
    capabilities: frozenset[GenerationMode] = frozenset()

    @abstractmethod
    def prepare_adapter(self, adapter: LoraAdapter | None) -> str:
        """Register the adapter with the backend; returns its digest/reference."""

    @abstractmethod
    def render(
        self,
        prompt: str,
        seed: int,
        request: GenerationRequest,
        adapter_ref: str,
        init_image: np.ndarray | None,
    ) -> np.ndarray:
        """Produce one (resolution, resolution, 3) uint8 image."""


def _class_hash(class_name: str) -> int:
    return int.from_bytes(hashlib.blake2b(class_name.encode("utf-8"), digest_size=8).digest(), "little")


def _disk(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, r: float) -> np.ndarray:
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def stub_generate(
    class_name: str,
    seed: int,
    resolution: int = 64,
    init_image: np.ndarray | None = None,
    strength: float = DEFAULT_STRENGTH,
    variation: float = 1.0,
    extra_entropy: int = 0,
) -> np.ndarray:
    """Deterministic procedural stand-in for a diffusion sample.

    Class name fixes the hue, lobe count, and cell size; the seed varies
    pose, exact shade, and noise. ``variation`` widens or narrows the
    per-seed appearance spread (1.0 = default spread).
    """
    h = _class_hash(class_name)
    rng = np.random.default_rng([_DOMAIN_STUB, h, seed, resolution, extra_entropy])
    hue = (h % 997) / 997.0
    lobes = 1 + (h >> 16) % 3
    base_radius = 0.20 + ((h >> 24) % 5) * 0.015

    v = float(variation)
    hue_j = (hue + rng.normal(0.0, 0.02 * v)) % 1.0
    cx = 0.5 + rng.normal(0.0, 0.05 * v)
    cy = 0.5 + rng.normal(0.0, 0.05 * v)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    radius = base_radius * float(np.clip(1.0 + rng.normal(0.0, 0.10 * v), 0.5, 1.6))
    sat = float(np.clip(0.55 + rng.normal(0.0, 0.06 * v), 0.2, 0.95))
    val = float(np.clip(0.72 + rng.normal(0.0, 0.06 * v), 0.3, 0.95))

    grid = (np.arange(resolution) + 0.5) / resolution
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    img = np.full((resolution, resolution, 3), 0.96, dtype=np.float64)

    # faint background red cells, constant hue across classes
    for _ in range(4):
        bx, by = rng.uniform(0.05, 0.95, 2)
        br = rng.uniform(0.06, 0.10)
        tint = hsv_to_rgb([0.98, 0.25, 0.95])
        mask = _disk(yy, xx, by, bx, br)
        img[mask] = 0.55 * img[mask] + 0.45 * tint

    # cytoplasm disk then nuclear lobes
    cyto = hsv_to_rgb([hue_j, sat * 0.45, min(val + 0.18, 1.0)])
    mask = _disk(yy, xx, cy, cx, radius)
    img[mask] = cyto
    nuc = hsv_to_rgb([hue_j, sat, val * 0.55])
    lobe_r = radius * (0.42 if lobes > 1 else 0.6)
    offset = radius * (0.38 if lobes > 1 else 0.12)
    for k in range(lobes):
        theta = angle + 2.0 * np.pi * k / lobes
        ly = cy + offset * np.sin(theta)
        lx = cx + offset * np.cos(theta)
        mask = _disk(yy, xx, ly, lx, lobe_r)
        img[mask] = nuc

    img = img + rng.normal(0.0, 0.015, img.shape)
    out = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)

    if init_image is not None:
        init = np.asarray(init_image, dtype=np.float64)
        if init.shape != out.shape:
            raise ConfigError(
                f"init image shape {init.shape} does not match output {out.shape}"
            )
        blended = strength * out.astype(np.float64) + (1.0 - strength) * init
        out = np.clip(blended, 0.0, 255.0).round().astype(np.uint8)
    return out


class StubBackend(GenerationBackend):
    """Pure, reentrant procedural backend for desk-scale tests."""

    backend_id = "stub"
    capabilities = frozenset({GenerationMode.TEXT_TO_IMAGE, GenerationMode.IMAGE_TO_IMAGE})

    def __init__(self, variation: float = 1.0):
        self.variation = variation

    def prepare_adapter(self, adapter: LoraAdapter | None) -> str:
        if adapter is None:
            return ""
        return adapter_digest(adapter)

    def render(
        self,
        prompt: str,
        seed: int,
        request: GenerationRequest,
        adapter_ref: str,
        init_image: np.ndarray | None,
    ) -> np.ndarray:
        entropy = _class_hash(adapter_ref) if adapter_ref else 0
        return stub_generate(
            request.label.name,
            seed,
            resolution=request.resolution,
            init_image=init_image,
            strength=request.strength,
            variation=self.variation,
            extra_entropy=entropy,
        )


def adapter_digest(adapter: LoraAdapter) -> str:
    """Content digest of an adapter's parameters (rank, scale, matrices)."""
    h = hashlib.sha256()
    h.update(f"rank={adapter.rank};scale={adapter.scale!r}".encode())
    for name in sorted(adapter.targets):
        entry = adapter.targets[name]
        h.update(name.encode())
        h.update(np.ascontiguousarray(entry.down, dtype=np.float32).tobytes())
        h.update(np.ascontiguousarray(entry.up, dtype=np.float32).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Batch orchestration


def _run_id(request: GenerationRequest, prompt_sha: str, adapter_sha: str) -> str:
    key = "|".join(
        [
            request.label.name,
            str(request.seed),
            str(request.count),
            str(request.resolution),
            str(request.sampler.steps),
            repr(request.sampler.guidance_scale),
            request.mode.value,
            prompt_sha,
            adapter_sha,
        ]
    )
    digest = hashlib.sha256(key.encode()).hexdigest()[:10]
    return f"{request.label.name}-s{request.seed}-{digest}"


def generate_batch(
    backend: GenerationBackend,
    request: GenerationRequest,
    prompt: str,
    adapter: LoraAdapter | None = None,
) -> SyntheticBatch:
    """Render ``request.count`` images; per-image seed is seed + index.

    A retryable backend failure partway through raises
    :class:`PartialBatchError` carrying the completed portion; rerunning is
    safe because each index is rendered identically.
    """
    if request.mode not in backend.capabilities:
        raise ConfigError(
            f"backend {backend.backend_id!r} does not support mode {request.mode.value!r}"
        )
    if not prompt or not prompt.strip():
        raise ConfigError("prompt must be nonempty")
    adapter_sha = backend.prepare_adapter(adapter)
    prompt_sha = hashlib.sha256(prompt.encode("utf-8")).hexdigest()

    inits: list[np.ndarray] = []
    if request.mode is GenerationMode.IMAGE_TO_IMAGE:
        inits = [
            load_image(rec.path, resolution=request.resolution)
            for rec in request.init_images.records
        ]

    start = time.perf_counter()
    images: list[np.ndarray] = []
    seeds: list[int] = []
    for index in range(request.count):
        seed = request.seed + index
        init = inits[index % len(inits)] if inits else None
        try:
            img = backend.render(prompt, seed, request, adapter_sha, init)
        except RetryableBackendError as exc:
            partial = SyntheticBatch(
                request=request,
                backend_id=backend.backend_id,
                prompt=prompt,
                prompt_sha256=prompt_sha,
                adapter_sha256=adapter_sha,
                run_id=_run_id(request, prompt_sha, adapter_sha),
                seeds=tuple(seeds),
                images=images,
                wall_time=time.perf_counter() - start,
            )
            raise PartialBatchError(
                f"batch stopped at index {index} of {request.count}: {exc}",
                partial_batch=partial,
                completed_indices=tuple(range(index)),
            ) from exc
        if img.shape != (request.resolution, request.resolution, 3) or img.dtype != np.uint8:
            raise ConfigError(
                f"backend returned shape {img.shape} dtype {img.dtype}, "
                f"expected ({request.resolution}, {request.resolution}, 3) uint8"
            )
        images.append(img)
        seeds.append(seed)
    return SyntheticBatch(
        request=request,
        backend_id=backend.backend_id,
        prompt=prompt,
        prompt_sha256=prompt_sha,
        adapter_sha256=adapter_sha,
        run_id=_run_id(request, prompt_sha, adapter_sha),
        seeds=tuple(seeds),
        images=images,
        wall_time=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# Export


def export_images(batch: SyntheticBatch, out_root: str | Path) -> list[Path]:
    """Write PNGs as ``<out_root>/<class>/<runid>_<index>.png`` plus a JSON
    sidecar manifest; refuses to overwrite an existing run."""
    out_root = Path(out_root)
    class_dir = out_root / batch.request.label.name
    class_dir.mkdir(parents=True, exist_ok=True)

    sidecar = class_dir / f"{batch.run_id}.json"
    names = [f"{batch.run_id}_{i:05d}.png" for i in range(len(batch.images))]
    for name in [sidecar.name] + names:
        if (class_dir / name).exists():
            raise DataError(f"run {batch.run_id!r} already exported: {class_dir / name} exists")

    paths: list[Path] = []
    records: list[ImageRecord] = []
    for i, (name, img) in enumerate(zip(names, batch.images)):
        path = class_dir / name
        Image.fromarray(img, mode="RGB").save(path)
        paths.append(path)
        records.append(
            ImageRecord(
                path=str(path),
                label=batch.request.label,
                origin=Origin.SYNTHETIC,
                split=Split.UNASSIGNED,
            )
        )
    doc = {
        "schema_version": SIDECAR_SCHEMA_VERSION,
        "run_id": batch.run_id,
        "backend_id": batch.backend_id,
        "class": batch.request.label.name,
        "prompt_sha256": batch.prompt_sha256,
        "adapter_sha256": batch.adapter_sha256,
        "request": {
            "count": batch.request.count,
            "seed": batch.request.seed,
            "steps": batch.request.sampler.steps,
            "guidance_scale": batch.request.sampler.guidance_scale,
            "mode": batch.request.mode.value,
            "resolution": batch.request.resolution,
            "strength": batch.request.strength,
        },
        "wall_time": batch.wall_time,
        "files": [
            {"name": name, "index": i, "seed": batch.seeds[i]} for i, name in enumerate(names)
        ],
    }
    sidecar.write_text(json.dumps(doc, indent=2, sort_keys=True))
    batch.records = records
    return paths


def save_batch_adapter(adapter: LoraAdapter, path: str | Path) -> str:
    """Persist the adapter used for a batch; returns its parameter digest."""
    save_adapter(adapter, path)
    return adapter_digest(adapter)
