"""Low-rank adaptation of linear projections.

An adapter carries, per target projection, a pair of matrices: ``down``
(rank x d_in) and ``up`` (d_out x rank). The effective weight update is
``(scale / rank) * up @ down``; ``up`` starts at zero so a fresh adapter is
an exact no-op. All adapter math is float32.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import container
from .errors import ConfigError

DEFAULT_RANK = 16
DEFAULT_SCALE = 16.0
DEFAULT_INIT_STD = 0.02


def _as_float(a) -> np.ndarray:
    """Float32 unless already float64 (float64 is kept for verification math)."""
    a = np.asarray(a)
    return a if a.dtype == np.float64 else np.asarray(a, dtype=np.float32)


@dataclass
class LinearProjection:
    """A named dense projection ``y = W x + b`` with W of shape (d_out, d_in)."""

    name: str
    weight: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.weight = _as_float(self.weight)
        if self.weight.ndim != 2:
            raise ConfigError(f"projection {self.name!r}: weight must be 2-D")
        if not np.all(np.isfinite(self.weight)):
            raise ConfigError(f"projection {self.name!r}: weight has non-finite entries")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=self.weight.dtype)
            if self.bias.shape != (self.weight.shape[0],):
                raise ConfigError(
                    f"projection {self.name!r}: bias shape {self.bias.shape} "
                    f"does not match d_out {self.weight.shape[0]}"
                )

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]


@dataclass
class LoraEntry:
    """The low-rank pair for one target: down (r, d_in), up (d_out, r)."""

    down: np.ndarray
    up: np.ndarray

    def __post_init__(self) -> None:
        self.down = _as_float(self.down)
        self.up = _as_float(self.up)
        if self.down.ndim != 2 or self.up.ndim != 2 or self.down.shape[0] != self.up.shape[1]:
            raise ConfigError(
                f"inconsistent adapter matrices: down {self.down.shape}, up {self.up.shape}"
            )

    @property
    def rank(self) -> int:
        return self.down.shape[0]

    @property
    def d_in(self) -> int:
        return self.down.shape[1]

    @property
    def d_out(self) -> int:
        return self.up.shape[0]


@dataclass
class LoraAdapter:
    """Rank, scale, and the per-target low-rank pairs."""

    rank: int
    scale: float
    targets: dict[str, LoraEntry] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if self.scale <= 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")
        for name, entry in self.targets.items():
            if entry.rank != self.rank:
                raise ConfigError(f"target {name!r} rank {entry.rank} != adapter rank {self.rank}")
            if self.rank > min(entry.d_out, entry.d_in):
                raise ConfigError(
                    f"target {name!r}: rank {self.rank} exceeds min({entry.d_out}, {entry.d_in})"
                )

    @property
    def scaling(self) -> float:
        return float(self.scale) / float(self.rank)

    def delta(self, name: str) -> np.ndarray:
        """Effective weight update for one target, (scale/rank) * up @ down."""
        entry = self.targets[name]
        return (entry.up @ entry.down) * entry.up.dtype.type(self.scaling)

    def copy(self) -> "LoraAdapter":
        return LoraAdapter(
            rank=self.rank,
            scale=self.scale,
            targets={n: LoraEntry(e.down.copy(), e.up.copy()) for n, e in self.targets.items()},
        )


def init_adapter(
    targets: Sequence[tuple[str, int, int]],
    rank: int = DEFAULT_RANK,
    scale: float = DEFAULT_SCALE,
    seed: int = 0,
    init_std: float = DEFAULT_INIT_STD,
    dtype=np.float32,
) -> LoraAdapter:
    """Create a fresh adapter: down ~ N(0, init_std^2), up = 0.

    With up zero the effective update is exactly zero, so an adapted forward
    pass matches the base model until training moves the matrices.
    """
    if rank < 1:
        raise ConfigError(f"rank must be >= 1, got {rank}")
    for name, d_out, d_in in targets:
        if rank > min(d_out, d_in):
            raise ConfigError(f"target {name!r}: rank {rank} exceeds min({d_out}, {d_in})")
    rng = np.random.default_rng(seed)
    entries = {}
    for name, d_out, d_in in targets:
        down = rng.normal(0.0, init_std, size=(rank, d_in)).astype(dtype)
        up = np.zeros((d_out, rank), dtype=dtype)
        entries[name] = LoraEntry(down=down, up=up)
    return LoraAdapter(rank=rank, scale=scale, targets=entries)


def base_forward(x: np.ndarray, proj: LinearProjection) -> np.ndarray:
    x = np.asarray(x, dtype=proj.weight.dtype)
    if x.shape[-1] != proj.d_in:
        raise ConfigError(
            f"projection {proj.name!r}: input dim {x.shape[-1]} != d_in {proj.d_in}"
        )
    y = x @ proj.weight.T
    if proj.bias is not None:
        y = y + proj.bias
    return y


def adapted_forward(
    x: np.ndarray, proj: LinearProjection, adapter: LoraAdapter | None
) -> np.ndarray:
    """``W x + b + (scale/rank) * up (down x)``; falls back to the base path
    when the adapter has no entry for this projection."""
    y = base_forward(x, proj)
    if adapter is None or proj.name not in adapter.targets:
        return y
    entry = adapter.targets[proj.name]
    if entry.d_in != proj.d_in or entry.d_out != proj.d_out:
        raise ConfigError(
            f"adapter entry {proj.name!r} shaped ({entry.d_out}, {entry.d_in}) does not "
            f"match projection ({proj.d_out}, {proj.d_in})"
        )
    x = np.asarray(x, dtype=entry.down.dtype)
    lora = (x @ entry.down.T) @ entry.up.T
    return y + lora * entry.down.dtype.type(adapter.scaling)


def merge(proj: LinearProjection, adapter: LoraAdapter) -> LinearProjection:
    """Fold the adapter update into the weight: W <- W + (scale/rank) up down."""
    if proj.name not in adapter.targets:
        raise ConfigError(f"adapter has no entry for projection {proj.name!r}")
    entry = adapter.targets[proj.name]
    if entry.d_in != proj.d_in or entry.d_out != proj.d_out:
        raise ConfigError(f"adapter entry {proj.name!r} does not match projection shape")
    merged = proj.weight + adapter.delta(proj.name)
    bias = None if proj.bias is None else proj.bias.copy()
    return LinearProjection(name=proj.name, weight=merged, bias=bias)


def unmerge(proj: LinearProjection, adapter: LoraAdapter) -> LinearProjection:
    """Inverse of :func:`merge`, up to float32 rounding."""
    if proj.name not in adapter.targets:
        raise ConfigError(f"adapter has no entry for projection {proj.name!r}")
    restored = proj.weight - adapter.delta(proj.name)
    bias = None if proj.bias is None else proj.bias.copy()
    return LinearProjection(name=proj.name, weight=restored, bias=bias)


# ---------------------------------------------------------------------------
# Target selection


class Component(str, Enum):
    TEXT_ENCODER = "text_encoder"
    UNET = "unet"


class ProjectionKind(str, Enum):
    QUERY = "query"
    KEY = "key"
    VALUE = "value"
    OUTPUT = "output"


ALL_KINDS = frozenset(ProjectionKind)


@dataclass(frozen=True)
class AttentionTargetSpec:
    """Selects attention projections by component, kind, and layer pattern.

    Projection names follow ``<component>.<layer>.<kind>``, e.g.
    ``unet.attn0.query``; ``layer_pattern`` is an fnmatch glob over the
    layer segment.
    """

    component: Component
    kinds: frozenset[ProjectionKind] = ALL_KINDS
    layer_pattern: str = "*"

    def __post_init__(self) -> None:
        if not self.kinds:
            raise ConfigError("target spec needs at least one projection kind")

    def matches(self, name: str) -> bool:
        parts = name.split(".")
        if len(parts) != 3:
            return False
        comp, layer, kind = parts
        if comp != self.component.value:
            return False
        if kind not in {k.value for k in self.kinds}:
            return False
        return fnmatch.fnmatchcase(layer, self.layer_pattern)


def resolve_targets(
    specs: Iterable[AttentionTargetSpec], available: Iterable[str]
) -> tuple[str, ...]:
    """Projection names selected by any spec, in the order given."""
    specs = tuple(specs)
    return tuple(name for name in available if any(s.matches(name) for s in specs))


# ---------------------------------------------------------------------------
# Serialization


def save_adapter(adapter: LoraAdapter, path: str | Path) -> None:
    container.write_adapter_container(
        path,
        rank=adapter.rank,
        scale=adapter.scale,
        targets={n: (e.down, e.up) for n, e in adapter.targets.items()},
    )


def load_adapter(path: str | Path) -> LoraAdapter:
    rank, scale, targets = container.read_adapter_container(path)
    return LoraAdapter(
        rank=rank,
        scale=scale,
        targets={n: LoraEntry(down=d, up=u) for n, (d, u) in targets.items()},
    )


def adapter_file_digest(path: str | Path) -> str:
    import hashlib

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
