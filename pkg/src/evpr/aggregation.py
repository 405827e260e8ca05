"""Spatial-pyramid descriptor construction.

Patch tokens are reshaped into their 2D grid, pooled with generalized-mean
(GeM) pooling over the cells of a 2x2 and a 3x3 partition, and concatenated
behind the global anchor vector into one L2-normalized place descriptor of
dimension (1 + 4 + 9) * D.
"""

from __future__ import annotations

import torch
from torch import Tensor
from torch.nn import functional as F

GEM_EPS = 1e-6

# anchor + 2x2 cells + 3x3 cells
PYRAMID_BLOCKS = 1 + 4 + 9


def gem_pool(region: Tensor, p: Tensor | float, eps: float = GEM_EPS) -> Tensor:
    """Generalized mean over a (n, D) region: (mean max(x, eps)^p)^(1/p).

    p=1 reduces to the arithmetic mean of the clamped inputs; large p
    approaches the per-channel maximum. Inputs are clamped at eps because
    fractional powers need positive arguments. The per-channel peak is
    factored out before exponentiation so large p cannot overflow.
    """
    if region.ndim != 2 or region.shape[0] == 0:
        raise ValueError(f"region must be a non-empty (n, D) matrix, got {tuple(region.shape)}")
    clamped = region.clamp_min(eps)
    if isinstance(p, float) and p == 1.0:
        return clamped.mean(dim=0)
    p = p if torch.is_tensor(p) else torch.as_tensor(float(p))
    peak = clamped.max(dim=0).values
    return peak * (clamped / peak).pow(p).mean(dim=0).pow(1.0 / p)


def tokens_to_map(patch_tokens: Tensor, grid: tuple[int, int]) -> Tensor:
    """Row-major reshape of (N, D) tokens into a (g_h, g_w, D) feature map."""
    g_h, g_w = grid
    if patch_tokens.shape[0] != g_h * g_w:
        raise ValueError(f"{patch_tokens.shape[0]} tokens do not fill a {g_h}x{g_w} grid")
    return patch_tokens.reshape(g_h, g_w, patch_tokens.shape[1])


def partition_grid(grid_h: int, grid_w: int, k: int) -> list[tuple[int, int, int, int]]:
    """k*k contiguous rectangles (r0, r1, c0, c1) tiling the grid exactly,
    with boundaries at floor(i*g/k) so cell sizes differ by at most one."""
    if grid_h < k or grid_w < k:
        raise ValueError(f"grid {grid_h}x{grid_w} too small for a {k}x{k} partition")
    row_bounds = [i * grid_h // k for i in range(k + 1)]
    col_bounds = [i * grid_w // k for i in range(k + 1)]
    return [
        (row_bounds[r], row_bounds[r + 1], col_bounds[c], col_bounds[c + 1])
        for r in range(k)
        for c in range(k)
    ]


def pyramid_aggregate(
    feature_map: Tensor,
    anchor: Tensor,
    p: Tensor | float = 3.0,
    eps: float = GEM_EPS,
) -> Tensor:
    """Concatenate [anchor, GeM over the 4 cells of the 2x2 partition, GeM
    over the 9 cells of the 3x3 partition] in row-major cell order, then
    L2-normalize. Output dimension is 14 * D."""
    g_h, g_w, dim = feature_map.shape
    if anchor.shape != (dim,):
        raise ValueError(f"anchor dim {tuple(anchor.shape)} does not match channels {dim}")
    blocks = [anchor]
    for k in (2, 3):
        for r0, r1, c0, c1 in partition_grid(g_h, g_w, k):
            blocks.append(gem_pool(feature_map[r0:r1, c0:c1].reshape(-1, dim), p, eps))
    return F.normalize(torch.cat(blocks), dim=0)
