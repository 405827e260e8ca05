"""Dual-stream feature extraction behind a pluggable backend interface.

A visual backend turns a (3, S, S) image tensor into one global token plus a
grid of patch tokens; a text backend turns a description string into padded
word tokens plus a sentence token. The bundled "toy" backends are fully
deterministic (seeded fixed weights, no pretrained data) so the rest of the
pipeline is testable on any machine; real pretrained encoders can be plugged
in through the same registry.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, replace

import torch
from torch import Tensor, nn

from .dataset import PLACEHOLDER_DESCRIPTION


@dataclass(frozen=True)
class VisualEncoding:
    """Per-image tokens: one global vector plus a (g_h*g_w, D) patch matrix."""

    cls_token: Tensor        # (D,)
    patch_tokens: Tensor     # (N, D)
    grid: tuple[int, int]    # (g_h, g_w) with g_h * g_w == N

    def __post_init__(self) -> None:
        n = self.patch_tokens.shape[0]
        if self.grid[0] * self.grid[1] != n:
            raise ValueError(f"grid {self.grid} inconsistent with {n} patch tokens")
        if not torch.isfinite(self.patch_tokens).all() or not torch.isfinite(self.cls_token).all():
            raise ValueError("non-finite values in visual encoding")


@dataclass(frozen=True)
class TextEncoding:
    """Per-text tokens: padded (L, D) word matrix, sentence vector, and the
    mask of non-padding rows."""

    word_tokens: Tensor      # (L, D)
    sentence_token: Tensor   # (D,)
    valid_mask: Tensor       # (L,) bool

    def __post_init__(self) -> None:
        if not bool(self.valid_mask.any()):
            raise ValueError("text encoding has no valid token positions")


class ShapeMismatch(ValueError):
    pass


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric word tokens."""
    return _TOKEN_RE.findall(text.lower())


class ToyVisualBackend:
    """Patchify + fixed seeded linear map. Deterministic, never trainable.

    Each non-overlapping patch is flattened and projected by a frozen random
    matrix; the global token is the mean of the patch tokens.
    """

    trainable = False

    def __init__(self, image_size: int = 64, patch_size: int = 16, embed_dim: int = 64, seed: int = 0):
        if image_size % patch_size != 0:
            raise ValueError(f"image size {image_size} not divisible by patch size {patch_size}")
        self.image_size = image_size
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        side = image_size // patch_size
        self.patch_grid = (side, side)
        gen = torch.Generator().manual_seed(seed)
        fan_in = 3 * patch_size * patch_size
        self.weight = torch.randn(fan_in, embed_dim, generator=gen) / fan_in ** 0.5

    def encode(self, image: Tensor) -> VisualEncoding:
        expected = (3, self.image_size, self.image_size)
        if tuple(image.shape) != expected:
            raise ShapeMismatch(f"expected image shape {expected}, got {tuple(image.shape)}")
        g = self.patch_grid[0]
        p = self.patch_size
        # (3, g, p, g, p) -> (g, g, 3, p, p) -> (N, 3*p*p), row-major over the grid
        patches = (
            image.reshape(3, g, p, g, p)
            .permute(1, 3, 0, 2, 4)
            .reshape(g * g, 3 * p * p)
        )
        tokens = patches @ self.weight
        return VisualEncoding(cls_token=tokens.mean(dim=0), patch_tokens=tokens, grid=self.patch_grid)


class ToyTextBackend:
    """Hash each token into a seeded embedding table; the sentence token is
    the mean of the valid word tokens. Deterministic, never trainable."""

    trainable = False

    def __init__(self, embed_dim: int = 64, token_length: int = 77, seed: int = 0, table_size: int = 8192):
        self.embed_dim = embed_dim
        self.token_length = token_length
        self.table_size = table_size
        self._hash_key = seed.to_bytes(8, "little", signed=True)
        gen = torch.Generator().manual_seed(seed)
        self.table = torch.randn(table_size, embed_dim, generator=gen)

    def _token_index(self, token: str) -> int:
        digest = hashlib.blake2s(token.encode("utf-8"), key=self._hash_key).digest()
        return int.from_bytes(digest[:8], "little") % self.table_size

    def encode(self, text: str) -> TextEncoding:
        tokens = tokenize(text)
        if not tokens:
            tokens = tokenize(PLACEHOLDER_DESCRIPTION)
        tokens = tokens[: self.token_length]
        words = torch.zeros(self.token_length, self.embed_dim)
        for i, tok in enumerate(tokens):
            words[i] = self.table[self._token_index(tok)]
        mask = torch.zeros(self.token_length, dtype=torch.bool)
        mask[: len(tokens)] = True
        sentence = words[mask].mean(dim=0)
        return TextEncoding(word_tokens=words, sentence_token=sentence, valid_mask=mask)


VISUAL_BACKENDS: dict[str, type] = {"toy": ToyVisualBackend}
TEXT_BACKENDS: dict[str, type] = {"toy": ToyTextBackend}


def register_visual_backend(name: str, factory: type) -> None:
    VISUAL_BACKENDS[name] = factory


def register_text_backend(name: str, factory: type) -> None:
    TEXT_BACKENDS[name] = factory


def create_visual_backend(name: str, **kwargs) -> ToyVisualBackend:
    if name not in VISUAL_BACKENDS:
        raise ValueError(f"unknown visual backend {name!r}, have {sorted(VISUAL_BACKENDS)}")
    return VISUAL_BACKENDS[name](**kwargs)


def create_text_backend(name: str, **kwargs) -> ToyTextBackend:
    if name not in TEXT_BACKENDS:
        raise ValueError(f"unknown text backend {name!r}, have {sorted(TEXT_BACKENDS)}")
    return TEXT_BACKENDS[name](**kwargs)


def project_visual(encoding: VisualEncoding, projection: nn.Linear) -> VisualEncoding:
    """Map both the global and the patch tokens into the shared dimension."""
    if projection.in_features != encoding.patch_tokens.shape[1]:
        raise ShapeMismatch(
            f"projection expects dim {projection.in_features}, "
            f"encoding has {encoding.patch_tokens.shape[1]}"
        )
    return replace(
        encoding,
        cls_token=projection(encoding.cls_token),
        patch_tokens=projection(encoding.patch_tokens),
    )


def project_text(encoding: TextEncoding, projection: nn.Linear) -> TextEncoding:
    """Map word and sentence tokens into the shared dimension. Padded rows
    stay excluded from downstream maxima via the untouched valid mask."""
    if projection.in_features != encoding.word_tokens.shape[1]:
        raise ShapeMismatch(
            f"projection expects dim {projection.in_features}, "
            f"encoding has {encoding.word_tokens.shape[1]}"
        )
    return replace(
        encoding,
        word_tokens=projection(encoding.word_tokens),
        sentence_token=projection(encoding.sentence_token),
    )
