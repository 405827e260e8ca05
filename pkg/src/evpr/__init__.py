"""Event-stream visual place recognition with text-guided descriptors."""

from .aggregation import gem_pool, partition_grid, pyramid_aggregate, tokens_to_map
from .config import Config, load_config
from .dataset import (
    BatchSpec,
    DatasetSplit,
    PlaceSample,
    load_dataset,
    sample_batches,
    split_dataset,
    synthesize_toy_dataset,
)
from .encoders import TextEncoding, VisualEncoding, create_text_backend, create_visual_backend
from .errors import DataError, NumericalError
from .events import (
    EventFrame,
    EventStream,
    accumulate_frame,
    frame_to_image,
    load_events,
    slice_stream,
)
from .fusion import FusionParams, SelectionResult, global_fusion, relevance_scores, select_topk, semantic_inject
from .losses import ContrastiveParams, MSParams, grad_check, infonce_loss, ms_loss, total_loss
from .model import PlaceModel, build_model
from .retrieval import DescriptorIndex, RecallReport, build_index, load_index, query_topn, recall_at_n, save_index
from .trainer import Checkpoint, ablate, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BatchSpec",
    "Checkpoint",
    "Config",
    "ContrastiveParams",
    "DataError",
    "DatasetSplit",
    "DescriptorIndex",
    "EventFrame",
    "EventStream",
    "FusionParams",
    "MSParams",
    "NumericalError",
    "PlaceModel",
    "PlaceSample",
    "RecallReport",
    "SelectionResult",
    "TextEncoding",
    "VisualEncoding",
    "ablate",
    "accumulate_frame",
    "build_index",
    "build_model",
    "create_text_backend",
    "create_visual_backend",
    "evaluate",
    "frame_to_image",
    "gem_pool",
    "global_fusion",
    "grad_check",
    "infonce_loss",
    "load_config",
    "load_dataset",
    "load_events",
    "load_index",
    "ms_loss",
    "partition_grid",
    "pyramid_aggregate",
    "query_topn",
    "recall_at_n",
    "relevance_scores",
    "sample_batches",
    "save_index",
    "select_topk",
    "semantic_inject",
    "slice_stream",
    "split_dataset",
    "synthesize_toy_dataset",
    "tokens_to_map",
    "total_loss",
    "train",
]
