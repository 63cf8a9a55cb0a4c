"""Deterministic embeddings for text and images.

Tokens and image patches are mapped through fixed, seeded random projections
(hash-derived, never Python's per-process ``hash``), so every embedding is a
pure function of its inputs. That stands in for the frozen encoders of a
full-scale diffusion stack while keeping desk-scale runs reproducible.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

from .errors import ConfigError

# Domain separators keep the seeded streams for unrelated purposes disjoint.
_DOMAIN_TOKEN = 1
_DOMAIN_PIXEL = 2
_DOMAIN_PATCH = 3


def _hash64(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def _tokenize(text: str, max_tokens: int) -> list[str]:
    words = [w for w in re.split(r"[^0-9a-z]+", text.lower()) if w]
    return words[:max_tokens]


def text_token_embeddings(text: str, dim: int = 64, max_tokens: int = 16) -> np.ndarray:
    """Per-token unit vectors, shape (n_tokens, dim)."""
    words = _tokenize(text, max_tokens)
    if not words:
        raise ConfigError("text has no tokens to embed")
    vecs = np.empty((len(words), dim), dtype=np.float32)
    for i, word in enumerate(words):
        rng = np.random.default_rng([_DOMAIN_TOKEN, _hash64(word), dim])
        v = rng.standard_normal(dim)
        vecs[i] = v / np.linalg.norm(v)
    return vecs


def text_embedding(text: str, dim: int = 64, max_tokens: int = 16) -> np.ndarray:
    """Single unit vector for a whole prompt (mean of token vectors, renormalized)."""
    mean = text_token_embeddings(text, dim=dim, max_tokens=max_tokens).mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise ConfigError("text embedding collapsed to zero")
    return (mean / norm).astype(np.float32)


def block_mean_downsample(images: np.ndarray, grid: int) -> np.ndarray:
    """Mean-pool (N, H, W, 3) uint8 images onto a grid x grid cell layout."""
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ConfigError(f"expected (N, H, W, 3) images, got shape {images.shape}")
    n, h, w, _ = images.shape
    if grid < 1 or grid > min(h, w):
        raise ConfigError(f"grid {grid} invalid for {h}x{w} images")
    ys = np.linspace(0, h, grid + 1).astype(int)
    xs = np.linspace(0, w, grid + 1).astype(int)
    out = np.empty((n, grid, grid, 3), dtype=np.float32)
    for i in range(grid):
        for j in range(grid):
            block = images[:, ys[i] : ys[i + 1], xs[j] : xs[j + 1], :]
            out[:, i, j, :] = block.mean(axis=(1, 2))
    return out


class PixelProjectionEmbedding:
    """Fixed random projection of block-mean pixel statistics.

    Serves as the frozen feature extractor behind distribution metrics and
    the contrastive image branch; the projection matrix depends only on
    (seed, grid, dim).
    """

    def __init__(self, dim: int = 64, grid: int = 8, seed: int = 0):
        if dim < 1:
            raise ConfigError(f"embedding dim must be >= 1, got {dim}")
        self.dim = dim
        self.grid = grid
        self.seed = seed
        rng = np.random.default_rng([_DOMAIN_PIXEL, seed, grid, dim])
        d_in = grid * grid * 3
        self._proj = (rng.standard_normal((dim, d_in)) / np.sqrt(d_in)).astype(np.float32)

    def embed(self, images: np.ndarray) -> np.ndarray:
        """(N, H, W, 3) uint8 -> (N, dim) float32 features."""
        cells = block_mean_downsample(images, self.grid)
        flat = (cells / 255.0 - 0.5).reshape(cells.shape[0], -1)
        return (flat @ self._proj.T).astype(np.float32)


def patch_tokens(image: np.ndarray, d_model: int, grid: int = 4, seed: int = 0) -> np.ndarray:
    """Lift one image to (grid*grid, d_model) tokens.

    Per-patch mean colors are scaled to [-1, 1], sent through a fixed lift,
    and offset by fixed positional vectors so tokens carry location.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ConfigError(f"expected one (H, W, 3) image, got shape {image.shape}")
    means = block_mean_downsample(image[None], grid)[0].reshape(-1, 3)
    z = means / 127.5 - 1.0
    rng = np.random.default_rng([_DOMAIN_PATCH, seed, d_model, grid])
    lift = rng.standard_normal((d_model, 3)) / np.sqrt(3.0)
    pos = rng.standard_normal((grid * grid, d_model)) * 0.1
    return (z @ lift.T + pos).astype(np.float32)
