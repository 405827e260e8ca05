"""End-to-end descriptor pipeline.

Composes the frozen backends with the trainable parts (shared-space
projections, fusion MLP, injection scale, optionally the pooling exponent)
into one module. A frame descriptor is encode -> project -> fuse -> pyramid;
a sample descriptor is the re-normalized mean of its five unit frame
descriptors. Fusion modes:

  vision_only  projected global token as anchor, no text anywhere
  global       MLP-fused anchor, no patch injection
  local        projected global token as anchor, patch injection on
  full         MLP-fused anchor and patch injection
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import torch
from torch import Tensor, nn
from torch.nn import functional as F

from .aggregation import pyramid_aggregate, tokens_to_map
from .config import FUSION_MODES, Config
from .encoders import (
    TextEncoding,
    VisualEncoding,
    create_text_backend,
    create_visual_backend,
    project_text,
    project_visual,
)
from .fusion import FusionParams, global_fusion, score_and_match, select_topk, semantic_inject


class SampleOutput(NamedTuple):
    descriptor: Tensor      # (14*D,) unit norm
    visual_global: Tensor   # (D,) mean projected global token over frames
    text_global: Tensor | None  # (D,) projected sentence token


class PlaceModel(nn.Module):
    def __init__(
        self,
        visual_backend,
        text_backend,
        shared_dim: int = 64,
        rho: float = 0.25,
        alpha_init: float = 0.0,
        gem_p: float = 3.0,
        learnable_p: bool = False,
        mode: str = "full",
    ):
        super().__init__()
        if mode not in FUSION_MODES:
            raise ValueError(f"mode must be one of {FUSION_MODES}, got {mode!r}")
        self.visual_backend = visual_backend
        self.text_backend = text_backend
        # Non-trainable backends must receive zero gradient under any loss;
        # plug-in backends that are nn.Modules get frozen here (the toy
        # backends hold plain tensors and have nothing to freeze).
        for backend in (visual_backend, text_backend):
            if isinstance(backend, nn.Module) and not getattr(backend, "trainable", False):
                for param in backend.parameters():
                    param.requires_grad_(False)
        self.mode = mode
        self.visual_proj = nn.Linear(visual_backend.embed_dim, shared_dim)
        self.text_proj = nn.Linear(text_backend.embed_dim, shared_dim)
        self.fusion = FusionParams(shared_dim, rho=rho, alpha_init=alpha_init)
        if learnable_p:
            self.gem_p: Tensor | float = nn.Parameter(torch.tensor(float(gem_p)))
        else:
            self.gem_p = float(gem_p)

    @property
    def uses_text(self) -> bool:
        return self.mode != "vision_only"

    @property
    def uses_global_fusion(self) -> bool:
        return self.mode in ("global", "full")

    @property
    def uses_injection(self) -> bool:
        return self.mode in ("local", "full")

    def frame_forward(
        self, visual: VisualEncoding, text: TextEncoding | None
    ) -> tuple[Tensor, Tensor]:
        """Descriptor and projected global token for one frame."""
        tenc = self._project_text(text)
        return self._frame_from_projected(visual, tenc)

    def _project_text(self, text: TextEncoding | None) -> TextEncoding | None:
        if not self.uses_text:
            return None
        if text is None:
            raise ValueError(f"mode {self.mode!r} needs a text encoding")
        return project_text(text, self.text_proj)

    def _frame_from_projected(
        self, visual: VisualEncoding, tenc: TextEncoding | None
    ) -> tuple[Tensor, Tensor]:
        venc = project_visual(visual, self.visual_proj)
        if self.uses_global_fusion:
            anchor = global_fusion(venc.cls_token, tenc.sentence_token, self.fusion)
        else:
            anchor = venc.cls_token
        patches = venc.patch_tokens
        if self.uses_injection:
            scores, words = score_and_match(patches, tenc.word_tokens, tenc.valid_mask)
            selection = select_topk(scores, self.fusion.rho, word_indices=words)
            patches = semantic_inject(patches, tenc.word_tokens, selection, self.fusion.alpha)
        descriptor = pyramid_aggregate(tokens_to_map(patches, venc.grid), anchor, self.gem_p)
        return descriptor, venc.cls_token

    def sample_forward(
        self, frames: Sequence[VisualEncoding], text: TextEncoding | None
    ) -> SampleOutput:
        """Combine per-frame descriptors: normalized mean of the unit frame
        descriptors; the cross-modal global token is the frame mean."""
        if not frames:
            raise ValueError("sample has no frames")
        tenc = self._project_text(text)
        descriptors, globals_ = zip(*(self._frame_from_projected(f, tenc) for f in frames))
        descriptor = F.normalize(torch.stack(descriptors).mean(dim=0), dim=0)
        visual_global = torch.stack(globals_).mean(dim=0)
        text_global = tenc.sentence_token if tenc is not None else None
        return SampleOutput(descriptor, visual_global, text_global)

    def encode_sample(self, images: Sequence[Tensor], text: str) -> tuple[list[VisualEncoding], TextEncoding | None]:
        frames = [self.visual_backend.encode(img) for img in images]
        tenc = self.text_backend.encode(text) if self.uses_text else None
        return frames, tenc

    def describe_sample(self, images: Sequence[Tensor], text: str = "") -> Tensor:
        """Full pipeline from raw image tensors and a description string."""
        frames, tenc = self.encode_sample(images, text)
        return self.sample_forward(frames, tenc).descriptor


def build_model(config: Config) -> PlaceModel:
    """Instantiate backends and model per the backend/fusion/aggregation
    sections."""
    b = config.backend
    visual = create_visual_backend(
        b.visual,
        image_size=b.image_size,
        patch_size=b.patch_size,
        embed_dim=b.visual_dim,
        seed=b.seed,
    )
    text = create_text_backend(
        b.text,
        embed_dim=b.text_dim,
        token_length=b.token_length,
        seed=b.seed,
    )
    return PlaceModel(
        visual,
        text,
        shared_dim=b.shared_dim,
        rho=config.fusion.rho,
        alpha_init=config.fusion.alpha_init,
        gem_p=config.aggregation.gem_p,
        learnable_p=config.aggregation.learnable_p,
        mode=config.fusion.mode,
    )
