"""Text-guided fusion of patch and word tokens.

Two granularities: a global path that mixes the image-level and sentence-level
tokens through a small MLP, and a local path that scores every patch by its
best cosine match among the valid word tokens, keeps the top share of patches,
and residually enhances only those with their matching word.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn


class FusionParams(nn.Module):
    """Trainable fusion state: the 2D->D mixing MLP (one hidden layer of
    width 2D), the injection scale (starts at 0 so training begins from the
    identity), and the patch keep ratio."""

    def __init__(self, dim: int, rho: float = 0.25, alpha_init: float = 0.0):
        super().__init__()
        if not 0.0 < rho <= 1.0:
            raise ValueError(f"keep ratio must be in (0, 1], got {rho}")
        self.dim = dim
        self.rho = rho
        self.mlp = nn.Sequential(
            nn.Linear(2 * dim, 2 * dim),
            nn.GELU(),
            nn.Linear(2 * dim, dim),
        )
        self.alpha = nn.Parameter(torch.tensor(float(alpha_init)))


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of ratio-based patch selection."""

    scores: Tensor                    # (N,) relevance per patch
    indices: Tensor                   # (k,) selected patch indices, ascending
    word_indices: Tensor | None = None  # (k,) best word per selected patch


def global_fusion(cls_token: Tensor, sentence_token: Tensor, params: FusionParams) -> Tensor:
    """Mix the global visual and textual tokens: MLP(concat(v, t))."""
    if cls_token.shape != sentence_token.shape:
        raise ValueError(
            f"global tokens disagree: {tuple(cls_token.shape)} vs {tuple(sentence_token.shape)}"
        )
    if cls_token.shape[-1] != params.dim:
        raise ValueError(f"expected dim {params.dim}, got {cls_token.shape[-1]}")
    return params.mlp(torch.cat([cls_token, sentence_token], dim=-1))


def _cosine_table(patch_tokens: Tensor, word_tokens: Tensor, valid_mask: Tensor) -> Tensor:
    """(N, L) cosine similarities; zero-norm vectors contribute 0, padded
    word columns are -inf so they never win a maximum."""
    eps = torch.finfo(patch_tokens.dtype).tiny
    pn = patch_tokens.norm(dim=1, keepdim=True)
    wn = word_tokens.norm(dim=1, keepdim=True)
    cos = (patch_tokens @ word_tokens.T) / (pn * wn.T).clamp_min(eps)
    cos = cos.clamp(-1.0, 1.0)
    return cos.masked_fill(~valid_mask[None, :], float("-inf"))


def relevance_scores(patch_tokens: Tensor, word_tokens: Tensor, valid_mask: Tensor) -> Tensor:
    """Per-patch maximum cosine similarity against the valid word tokens."""
    if not bool(valid_mask.any()):
        raise ValueError("relevance needs at least one valid word token")
    return _cosine_table(patch_tokens, word_tokens, valid_mask).max(dim=1).values


def best_word_indices(patch_tokens: Tensor, word_tokens: Tensor, valid_mask: Tensor) -> Tensor:
    """Index of the most similar valid word for every patch."""
    if not bool(valid_mask.any()):
        raise ValueError("relevance needs at least one valid word token")
    return _cosine_table(patch_tokens, word_tokens, valid_mask).max(dim=1).indices


def score_and_match(
    patch_tokens: Tensor, word_tokens: Tensor, valid_mask: Tensor
) -> tuple[Tensor, Tensor]:
    """Relevance scores and best-word indices from one similarity table."""
    if not bool(valid_mask.any()):
        raise ValueError("relevance needs at least one valid word token")
    best = _cosine_table(patch_tokens, word_tokens, valid_mask).max(dim=1)
    return best.values, best.indices


def selection_count(n_patches: int, rho: float) -> int:
    """floor(rho * N), with a floor of one so selection is never empty. The
    small epsilon absorbs float representation error in rho (0.29 * 100 must
    count as 29)."""
    return max(1, math.floor(rho * n_patches + 1e-9))


def select_topk(scores: Tensor, rho: float, word_indices: Tensor | None = None) -> SelectionResult:
    """Keep the floor(rho*N) highest-scoring patches (at least one). Ties are
    broken toward the lower patch index; the selected set is invariant to any
    strictly increasing rescaling of the scores."""
    n = scores.shape[0]
    if n < 1:
        raise ValueError("no patches to select from")
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"keep ratio must be in (0, 1], got {rho}")
    k = selection_count(n, rho)
    order = torch.argsort(scores.detach(), descending=True, stable=True)
    chosen = order[:k].sort().values
    selected_words = None
    if word_indices is not None:
        selected_words = word_indices[chosen]
    return SelectionResult(scores=scores, indices=chosen, word_indices=selected_words)


def semantic_inject(
    patch_tokens: Tensor,
    word_tokens: Tensor,
    selection: SelectionResult,
    alpha: Tensor | float,
) -> Tensor:
    """Residually enhance the selected patches with their best word:
    v <- v + alpha * (v * w), element-wise. Unselected rows pass through
    bitwise-unchanged."""
    if selection.word_indices is None:
        raise ValueError("selection carries no word indices; score with best_word_indices first")
    if int(selection.indices.max()) >= patch_tokens.shape[0]:
        raise ValueError("selection indices exceed patch count")
    out = patch_tokens.clone()
    chosen = selection.indices
    words = word_tokens[selection.word_indices]
    out[chosen] = patch_tokens[chosen] + alpha * (patch_tokens[chosen] * words)
    return out
