"""Reference attention block and the adapter fine-tuning loop.

A single multi-head attention block built on :class:`LinearProjection` plays
the role of the frozen backbone's attention layers: adapters attach to its
query/key/value/output projections, and gradients with respect to the
adapter matrices are derived by hand (validated against finite differences
in the tests). Base weights are never updated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import patch_tokens, text_token_embeddings
from .errors import ConfigError
from .lora import (
    AttentionTargetSpec,
    Component,
    DEFAULT_INIT_STD,
    DEFAULT_RANK,
    DEFAULT_SCALE,
    LinearProjection,
    LoraAdapter,
    ProjectionKind,
    adapted_forward,
    init_adapter,
    merge,
    resolve_targets,
)
from .nn import AdamW


@dataclass
class AttentionCache:
    """Forward-pass intermediates needed for the backward pass."""

    x: np.ndarray  # (B, Tq, d)
    ctx: np.ndarray  # (B, Tk, d)
    qh: np.ndarray  # (B, H, Tq, dh)
    kh: np.ndarray  # (B, H, Tk, dh)
    vh: np.ndarray  # (B, H, Tk, dh)
    probs: np.ndarray  # (B, H, Tq, Tk), rows sum to 1
    mixed: np.ndarray  # (B, Tq, d), input to the output projection


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _proj_backward(
    dy: np.ndarray,
    x: np.ndarray,
    proj: LinearProjection,
    adapter: LoraAdapter | None,
    grads: dict[str, tuple[np.ndarray, np.ndarray]],
) -> np.ndarray:
    """Backprop through one (possibly adapted) projection.

    Accumulates d(loss)/d(down), d(loss)/d(up) into ``grads`` and returns
    d(loss)/d(input). Base weights are frozen, so no gradient is kept for
    them.
    """
    w_eff = proj.weight
    entry = adapter.targets.get(proj.name) if adapter is not None else None
    if entry is not None:
        s = x.dtype.type(adapter.scaling)
        xf = x.reshape(-1, x.shape[-1])
        dyf = dy.reshape(-1, dy.shape[-1])
        g_up = s * (dyf.T @ (xf @ entry.down.T))
        g_down = s * ((dyf @ entry.up).T @ xf)
        if proj.name in grads:
            old_down, old_up = grads[proj.name]
            grads[proj.name] = (old_down + g_down, old_up + g_up)
        else:
            grads[proj.name] = (g_down, g_up)
        w_eff = proj.weight + s * (entry.up @ entry.down)
    return dy @ w_eff


class ReferenceAttentionBlock:
    """Multi-head attention (self- or cross-) over four named projections."""

    def __init__(
        self,
        query: LinearProjection,
        key: LinearProjection,
        value: LinearProjection,
        output: LinearProjection,
        n_heads: int,
    ):
        dims = {p.d_in for p in (query, key, value, output)} | {
            p.d_out for p in (query, key, value, output)
        }
        if len(dims) != 1:
            raise ConfigError(f"all projections must be square and equal-sized, got dims {sorted(dims)}")
        self.d_model = query.d_in
        if n_heads < 1 or self.d_model % n_heads:
            raise ConfigError(f"n_heads {n_heads} must divide d_model {self.d_model}")
        self.n_heads = n_heads
        self.query, self.key, self.value, self.output = query, key, value, output

    @property
    def projections(self) -> dict[str, LinearProjection]:
        return {p.name: p for p in (self.query, self.key, self.value, self.output)}

    @property
    def projection_names(self) -> tuple[str, ...]:
        return tuple(self.projections)

    def forward(
        self,
        x: np.ndarray,
        context: np.ndarray | None = None,
        adapter: LoraAdapter | None = None,
        want_cache: bool = False,
    ):
        """(B, Tq, d) queries against (B, Tk, d) context (defaults to ``x``)."""
        x = np.asarray(x)
        if x.ndim != 3 or x.shape[-1] != self.d_model:
            raise ConfigError(f"expected (B, T, {self.d_model}) input, got shape {x.shape}")
        ctx = x if context is None else np.asarray(context)
        if ctx.ndim != 3 or ctx.shape[-1] != self.d_model or ctx.shape[0] != x.shape[0]:
            raise ConfigError(f"context shape {ctx.shape} incompatible with input {x.shape}")
        qh = _split_heads(adapted_forward(x, self.query, adapter), self.n_heads)
        kh = _split_heads(adapted_forward(ctx, self.key, adapter), self.n_heads)
        vh = _split_heads(adapted_forward(ctx, self.value, adapter), self.n_heads)
        scale = qh.dtype.type(1.0 / np.sqrt(self.d_model // self.n_heads))
        scores = qh @ kh.swapaxes(-1, -2) * scale
        shifted = scores - scores.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=-1, keepdims=True)
        mixed = _merge_heads(probs @ vh)
        out = adapted_forward(mixed, self.output, adapter)
        if not want_cache:
            return out
        cache = AttentionCache(
            x=np.asarray(x, dtype=qh.dtype),
            ctx=np.asarray(ctx, dtype=qh.dtype),
            qh=qh,
            kh=kh,
            vh=vh,
            probs=probs,
            mixed=mixed,
        )
        return out, cache

    def adapter_gradients(
        self, cache: AttentionCache, d_out: np.ndarray, adapter: LoraAdapter
    ) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Gradients of a scalar loss w.r.t. each adapted target's (down, up).

        ``d_out`` is d(loss)/d(block output), shape (B, Tq, d).
        """
        grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        d_mixed = _proj_backward(d_out, cache.mixed, self.output, adapter, grads)
        dmh = _split_heads(d_mixed, self.n_heads)
        d_probs = dmh @ cache.vh.swapaxes(-1, -2)
        d_vh = cache.probs.swapaxes(-1, -2) @ dmh
        # softmax backward: dS = P * (dP - sum(dP * P))
        inner = (d_probs * cache.probs).sum(axis=-1, keepdims=True)
        d_scores = cache.probs * (d_probs - inner)
        scale = cache.qh.dtype.type(1.0 / np.sqrt(self.d_model // self.n_heads))
        d_qh = d_scores @ cache.kh * scale
        d_kh = d_scores.swapaxes(-1, -2) @ cache.qh * scale
        _proj_backward(_merge_heads(d_qh), cache.x, self.query, adapter, grads)
        _proj_backward(_merge_heads(d_kh), cache.ctx, self.key, adapter, grads)
        _proj_backward(_merge_heads(d_vh), cache.ctx, self.value, adapter, grads)
        return grads

    def merged(self, adapter: LoraAdapter) -> "ReferenceAttentionBlock":
        """A copy with the adapter folded into the weights of its targets."""
        merged_projs = []
        for proj in (self.query, self.key, self.value, self.output):
            if proj.name in adapter.targets:
                merged_projs.append(merge(proj, adapter))
            else:
                merged_projs.append(
                    LinearProjection(proj.name, proj.weight.copy(),
                                     None if proj.bias is None else proj.bias.copy())
                )
        return ReferenceAttentionBlock(*merged_projs, n_heads=self.n_heads)


def make_reference_block(
    component: Component = Component.UNET,
    layer: str = "attn0",
    d_model: int = 64,
    n_heads: int = 4,
    seed: int = 0,
    dtype=np.float32,
) -> ReferenceAttentionBlock:
    """A block with seeded random weights; output projection carries a bias."""
    if d_model % n_heads:
        raise ConfigError(f"n_heads {n_heads} must divide d_model {d_model}")
    rng = np.random.default_rng([seed, d_model, n_heads])
    std = 1.0 / np.sqrt(d_model)

    def make(kind: ProjectionKind, with_bias: bool = False) -> LinearProjection:
        w = rng.normal(0.0, std, size=(d_model, d_model)).astype(dtype)
        b = np.zeros(d_model, dtype=dtype) if with_bias else None
        return LinearProjection(f"{component.value}.{layer}.{kind.value}", w, b)

    return ReferenceAttentionBlock(
        make(ProjectionKind.QUERY),
        make(ProjectionKind.KEY),
        make(ProjectionKind.VALUE),
        make(ProjectionKind.OUTPUT, with_bias=True),
        n_heads=n_heads,
    )


def adapter_for_block(
    block: ReferenceAttentionBlock,
    specs: tuple[AttentionTargetSpec, ...] | None = None,
    rank: int = DEFAULT_RANK,
    scale: float = DEFAULT_SCALE,
    seed: int = 0,
    init_std: float = DEFAULT_INIT_STD,
    dtype=np.float32,
) -> LoraAdapter:
    """Fresh adapter over the block projections selected by ``specs``.

    With no specs, every projection of the block is adapted.
    """
    if specs is None:
        names = block.projection_names
    else:
        names = resolve_targets(specs, block.projection_names)
    if not names:
        raise ConfigError("no trainable targets: the specs match none of the block's projections")
    projs = block.projections
    shapes = [(n, projs[n].d_out, projs[n].d_in) for n in names]
    return init_adapter(shapes, rank=rank, scale=scale, seed=seed, init_std=init_std, dtype=dtype)


# ---------------------------------------------------------------------------
# Denoising-surrogate training


@dataclass
class AdapterTrainResult:
    adapter: LoraAdapter
    losses: list[float]  # one mean-squared error per optimization step


def train_adapter(
    block: ReferenceAttentionBlock,
    adapter: LoraAdapter,
    images: list[np.ndarray],
    prompt: str,
    steps: int = 200,
    lr: float = 1e-3,
    seed: int = 0,
    noise_scale: float = 0.5,
    grid: int = 4,
    weight_decay: float = 0.0,
) -> AdapterTrainResult:
    """Fit the adapter to denoise image tokens conditioned on a prompt.

    Each step noises the patch tokens of one training image, runs the block
    with queries from the noised tokens and context from the noised tokens
    concatenated with the prompt tokens, and regresses the block output onto
    the injected noise. Only adapter matrices receive updates; the input
    adapter is not mutated.
    """
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if noise_scale <= 0:
        raise ConfigError(f"noise_scale must be positive, got {noise_scale}")
    if not images:
        raise ConfigError("no training images supplied")
    trainable = [n for n in adapter.targets if n in block.projections]
    if not trainable:
        raise ConfigError(
            "adapter adapts none of the block's projections; "
            f"block has {list(block.projection_names)}"
        )
    tokens = [patch_tokens(img, block.d_model, grid=grid) for img in images]
    prompt_tokens = text_token_embeddings(prompt, dim=block.d_model)

    work = adapter.copy()
    params = []
    for name in trainable:
        entry = work.targets[name]
        params.append((f"{name}.down", entry.down, np.zeros_like(entry.down)))
        params.append((f"{name}.up", entry.up, np.zeros_like(entry.up)))
    opt = AdamW(params, lr=lr, weight_decay=weight_decay)
    grad_of = {name: grad for name, _, grad in params}

    rng = np.random.default_rng(seed)
    losses: list[float] = []
    for _ in range(steps):
        idx = int(rng.integers(len(tokens)))
        x0 = tokens[idx]
        eps = rng.standard_normal(x0.shape).astype(np.float32)
        xt = x0 + np.float32(noise_scale) * eps
        ctx = np.concatenate([xt, prompt_tokens], axis=0)
        pred, cache = block.forward(xt[None], ctx[None], adapter=work, want_cache=True)
        resid = pred - eps[None]
        loss = float(np.mean(resid * resid))
        d_out = (2.0 / resid.size) * resid
        opt.zero_grad()
        for name, (g_down, g_up) in block.adapter_gradients(cache, d_out, work).items():
            grad_of[f"{name}.down"] += g_down
            grad_of[f"{name}.up"] += g_up
        opt.step()
        losses.append(loss)
    return AdapterTrainResult(adapter=work, losses=losses)
