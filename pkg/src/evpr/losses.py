"""Training objectives.

The retrieval objective is a multi-similarity loss over unit descriptors:
per anchor, a softplus-style log-sum-exp over positive-pair similarities
(scaled by alpha) plus one over negative-pair similarities (scaled by beta),
both offset by a similarity threshold. Cross-modal alignment uses a symmetric
temperature-scaled InfoNCE between the global visual and text tokens. The
total objective is their weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import torch
from torch import Tensor
from torch.nn import functional as F


@dataclass(frozen=True)
class MSParams:
    """Multi-similarity weights: positive scale, negative scale, similarity
    threshold."""

    alpha: float = 1.0
    beta: float = 50.0
    thresh: float = 1.0

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.thresh) <= 0:
            raise ValueError(f"multi-similarity parameters must be positive, got {self}")


@dataclass(frozen=True)
class ContrastiveParams:
    """Contrastive alignment: softmax temperature and total-loss weight."""

    temperature: float = 0.07
    weight: float = 0.15

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.weight < 0:
            raise ValueError(f"contrastive weight must be non-negative, got {self.weight}")


def _log1p_exp_sum(exponents: Tensor) -> Tensor:
    """log(1 + sum(exp(e_k))) via log-sum-exp with an implicit zero term,
    stable for large positive exponents."""
    zero = exponents.new_zeros(1)
    return torch.logsumexp(torch.cat([zero, exponents]), dim=0)


def ms_loss(descriptors: Tensor, labels: Tensor, params: MSParams = MSParams()) -> Tensor:
    """Multi-similarity loss over a batch of unit-norm descriptors.

    For each anchor i with cosine similarities S_ik:
        (1/alpha) log[1 + sum_{k in positives} exp(-alpha (S_ik - thresh))]
      + (1/beta)  log[1 + sum_{k in negatives} exp( beta  (S_ik - thresh))]
    averaged over the batch. Self-pairs are excluded; an empty positive or
    negative set contributes log(1) = 0.
    """
    if descriptors.ndim != 2 or descriptors.shape[0] != labels.shape[0]:
        raise ValueError(
            f"expected (B, d) descriptors with B labels, got {tuple(descriptors.shape)} "
            f"and {tuple(labels.shape)}"
        )
    off = float((descriptors.detach().norm(dim=1) - 1.0).abs().max())
    if off > 1e-4:
        raise ValueError(f"descriptors must be unit-norm (max deviation {off:.3g})")
    b = descriptors.shape[0]
    sims = descriptors @ descriptors.T
    same = labels[:, None] == labels[None, :]
    eye = torch.eye(b, dtype=torch.bool, device=descriptors.device)
    total = descriptors.new_zeros(())
    for i in range(b):
        pos = sims[i][same[i] & ~eye[i]]
        neg = sims[i][~same[i]]
        term = descriptors.new_zeros(())
        if pos.numel():
            term = term + _log1p_exp_sum(-params.alpha * (pos - params.thresh)) / params.alpha
        if neg.numel():
            term = term + _log1p_exp_sum(params.beta * (neg - params.thresh)) / params.beta
        total = total + term
    return total / b


def infonce_loss(visual: Tensor, text: Tensor, temperature: float = 0.07) -> Tensor:
    """Symmetric InfoNCE between row-aligned visual/text batches.

    Rows are L2-normalized, similarities scaled by 1/temperature, and the
    matched (diagonal) pairs serve as positives in both softmax directions.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if visual.shape != text.shape or visual.ndim != 2:
        raise ValueError(
            f"expected matching (B, D) batches, got {tuple(visual.shape)} and {tuple(text.shape)}"
        )
    v = F.normalize(visual, dim=1)
    t = F.normalize(text, dim=1)
    logits = v @ t.T / temperature
    # log_softmax applies the max-shift internally.
    v_to_t = torch.diagonal(F.log_softmax(logits, dim=1))
    t_to_v = torch.diagonal(F.log_softmax(logits.T, dim=1))
    return -0.5 * (v_to_t.mean() + t_to_v.mean())


def total_loss(metric: Tensor, contrastive: Tensor, weight: float) -> Tensor:
    """Weighted joint objective: metric + weight * contrastive."""
    return metric + weight * contrastive


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    n_checked: int

    def ok(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance


def grad_check(
    fn: Callable[..., Tensor],
    point: Sequence[Tensor],
    step: float = 1e-4,
) -> GradCheckReport:
    """Compare autograd gradients of a scalar function against central finite
    differences at `point`.

    The relative error per entry is |analytic - numeric| divided by the
    largest gradient magnitude (floored at 1), so flat regions do not inflate
    the report.
    """
    tensors = [t.detach().double().requires_grad_(True) for t in point]
    value = fn(*tensors)
    analytic = torch.autograd.grad(value, tensors)
    max_rel = 0.0
    max_abs = 0.0
    n = 0
    for t, grad in zip(tensors, analytic):
        flat = t.detach().reshape(-1)
        gflat = grad.reshape(-1)
        scale = max(1.0, float(gflat.abs().max())) if gflat.numel() else 1.0
        for j in range(flat.numel()):
            orig = float(flat[j])
            flat[j] = orig + step
            hi = float(fn(*tensors).detach())
            flat[j] = orig - step
            lo = float(fn(*tensors).detach())
            flat[j] = orig
            numeric = (hi - lo) / (2 * step)
            err = abs(float(gflat[j]) - numeric)
            max_abs = max(max_abs, err)
            max_rel = max(max_rel, err / max(scale, abs(numeric)))
            n += 1
    return GradCheckReport(max_rel_error=max_rel, max_abs_error=max_abs, n_checked=n)
