"""Joint-objective training loop and evaluation protocols.

Backbones stay frozen, so every sample's native encodings are computed once
and cached; each step then runs only the trainable projection/fusion/pooling
path. Per batch the loss is the multi-similarity term over sample descriptors
plus the weighted cross-modal InfoNCE term (skipped in vision-only mode).
Adam drives the trainable parameters with the learning rate halved on a fixed
epoch schedule, and the checkpoint with the best validation recall@1 is kept.
"""

from __future__ import annotations

import copy
import dataclasses
import io
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .config import Config, config_to_ini, model_hash
from .dataset import BatchSpec, DatasetSplit, PlaceSample, sample_batches, split_dataset
from .encoders import TextEncoding, VisualEncoding
from .errors import DataError, NumericalError
from .events import frame_to_image, load_frame
from .losses import ContrastiveParams, MSParams, infonce_loss, ms_loss, total_loss
from .model import PlaceModel, build_model
from .retrieval import RecallReport, build_index, recall_at_n

log = logging.getLogger(__name__)

EncodingCache = dict[str, tuple[list[VisualEncoding], TextEncoding | None]]


@dataclass
class Checkpoint:
    """Snapshot of the trainable parameters plus enough context to reload
    them consistently."""

    state: dict[str, torch.Tensor]
    epoch: int
    best_val_recall1: float
    model_hash: str
    config_text: str

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        # Serialize through a buffer so the archive's internal name does not
        # depend on the destination path; identical checkpoints then produce
        # identical bytes wherever they are written.
        buffer = io.BytesIO()
        torch.save(dataclasses.asdict(self), buffer)
        path.write_bytes(buffer.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"checkpoint {path} not found")
        payload = torch.load(path, map_location="cpu", weights_only=False)
        return cls(**payload)


def lr_at_epoch(base_lr: float, epoch: int, step: int, gamma: float) -> float:
    """Step schedule: base_lr * gamma^floor(epoch / step)."""
    return base_lr * gamma ** (epoch // step)


def split_from_config(samples: Sequence[PlaceSample], config: Config) -> DatasetSplit:
    d = config.dataset
    return split_dataset(
        samples,
        ratios=(d.train_ratio, d.val_ratio, d.test_ratio),
        seed=d.split_seed,
        by=d.split_by,
    )


def build_encoding_cache(
    model: PlaceModel, samples: Sequence[PlaceSample], image_size: int
) -> EncodingCache:
    """Run the frozen backbones once per sample (five frames + description).

    Text is always encoded so one cache serves every fusion mode; vision-only
    forwards simply ignore it.
    """
    cache: EncodingCache = {}
    with torch.no_grad():
        for sample in samples:
            frames = []
            for path in sample.frames:
                frame = load_frame(path)
                frames.append(model.visual_backend.encode(frame_to_image(frame, image_size)))
            text = model.text_backend.encode(sample.description)
            cache[sample.sample_id] = (frames, text)
    return cache


def compute_descriptors(
    model: PlaceModel, cache: EncodingCache, ids: Sequence[str]
) -> np.ndarray:
    """Sample descriptors as a (len(ids), 14*D) float32 matrix."""
    with torch.no_grad():
        rows = [
            model.sample_forward(*cache[sid]).descriptor.numpy().astype(np.float32)
            for sid in ids
        ]
    return np.stack(rows)


def _index_for(model: PlaceModel, cache: EncodingCache, by_id: Mapping[str, PlaceSample], ids: Sequence[str]):
    descriptors = compute_descriptors(model, cache, ids)
    return build_index(
        (sid, by_id[sid].location_label, descriptors[i]) for i, sid in enumerate(ids)
    )


def _validation_recall1(
    model: PlaceModel,
    cache: EncodingCache,
    by_id: Mapping[str, PlaceSample],
    db_ids: Sequence[str],
    query_ids: Sequence[str],
) -> float:
    index = _index_for(model, cache, by_id, db_ids)
    queries = compute_descriptors(model, cache, query_ids)
    labels = [by_id[sid].location_label for sid in query_ids]
    report = recall_at_n(index, labels, queries, ns=(1,), query_ids=query_ids)
    return report.recall_at[1]


def train(
    samples: Sequence[PlaceSample],
    split: DatasetSplit,
    config: Config,
    checkpoint_path: str | Path | None = None,
    cache: EncodingCache | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Train the model on the train split, validating per epoch on the val
    split, and return the best checkpoint plus the per-epoch history."""
    tc = config.train
    torch.manual_seed(tc.seed)
    model = build_model(config)
    by_id = {s.sample_id: s for s in samples}
    train_ids = sorted(split.train)
    val_ids = sorted(split.val)
    labels = {sid: by_id[sid].location_label for sid in by_id}
    if cache is None:
        needed = [by_id[sid] for sid in train_ids + val_ids]
        cache = build_encoding_cache(model, needed, config.backend.image_size)
    spec = BatchSpec(labels_per_batch=tc.batch_p, samples_per_label=tc.batch_k)
    contrastive = ContrastiveParams(temperature=config.loss.tau, weight=config.loss.gamma)
    ms_params = MSParams(alpha=config.loss.ms_alpha, beta=config.loss.ms_beta, thresh=config.loss.ms_lambda)
    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=tc.lr, weight_decay=tc.weight_decay)

    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    best_recall = -1.0
    best_epoch = -1
    history: list[dict] = []
    started = time.monotonic()
    for epoch in range(tc.epochs):
        lr = lr_at_epoch(tc.lr, epoch, tc.sched_step, tc.sched_gamma)
        for group in optimizer.param_groups:
            group["lr"] = lr
        epoch_losses = []
        for batch_ids in sample_batches(train_ids, labels, spec, seed=tc.seed * 1_000_003 + epoch):
            outputs = [model.sample_forward(*cache[sid]) for sid in batch_ids]
            descriptors = torch.stack([o.descriptor for o in outputs])
            batch_labels = torch.tensor([labels[sid] for sid in batch_ids])
            metric = ms_loss(descriptors, batch_labels, ms_params)
            if model.uses_text:
                visual = torch.stack([o.visual_global for o in outputs])
                text = torch.stack([o.text_global for o in outputs])
                con = infonce_loss(visual, text, contrastive.temperature)
            else:
                con = descriptors.new_zeros(())
            loss = total_loss(metric, con, contrastive.weight)
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} on batch {batch_ids}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        val_recall = (
            _validation_recall1(model, cache, by_id, train_ids, val_ids) if val_ids else float("nan")
        )
        if not val_ids or val_recall > best_recall:
            best_recall = val_recall if val_ids else float("nan")
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        mean_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        history.append({"epoch": epoch, "lr": lr, "loss": mean_loss, "val_recall1": val_recall})
        log.info("epoch %d lr %.2e loss %.4f val R@1 %.3f", epoch, lr, mean_loss, val_recall)
    log.info("training took %.1fs, best epoch %d", time.monotonic() - started, best_epoch)
    checkpoint = Checkpoint(
        state=best_state,
        epoch=best_epoch,
        best_val_recall1=best_recall,
        model_hash=model_hash(config),
        config_text=config_to_ini(config),
    )
    if checkpoint_path is not None:
        checkpoint.save(checkpoint_path)
    return checkpoint, history


def load_model(config: Config, checkpoint: Checkpoint) -> PlaceModel:
    """Rebuild the model for a checkpoint, refusing configs whose
    descriptor-defining sections disagree with it."""
    if checkpoint.model_hash != model_hash(config):
        raise DataError(
            "checkpoint was written by a different model configuration "
            f"({checkpoint.model_hash} != {model_hash(config)})"
        )
    model = build_model(config)
    model.load_state_dict(checkpoint.state)
    return model


def evaluate(
    samples: Sequence[PlaceSample],
    split: DatasetSplit,
    config: Config,
    checkpoint: Checkpoint,
    cache: EncodingCache | None = None,
) -> RecallReport:
    """Recall@N under the configured protocol: the database split indexes
    its descriptors, the query split searches them, and a query's own id is
    excluded from candidates when eval.exclude_self is set."""
    model = load_model(config, checkpoint)
    by_id = {s.sample_id: s for s in samples}
    db_ids = sorted(split.subset(config.eval.database))
    query_ids = sorted(split.subset(config.eval.queries))
    if not db_ids or not query_ids:
        raise DataError(
            f"empty evaluation split (database={config.eval.database!r}, "
            f"queries={config.eval.queries!r})"
        )
    if cache is None:
        needed = [by_id[sid] for sid in sorted(set(db_ids) | set(query_ids))]
        cache = build_encoding_cache(model, needed, config.backend.image_size)
    index = _index_for(model, cache, by_id, db_ids)
    queries = compute_descriptors(model, cache, query_ids)
    return recall_at_n(
        index,
        [by_id[sid].location_label for sid in query_ids],
        queries,
        ns=config.eval.n_values(),
        query_ids=query_ids if config.eval.exclude_self else None,
        query_categories=[by_id[sid].category for sid in query_ids],
    )


ABLATION_AXES = {
    "rho": ("fusion", "rho", float),
    "gamma": ("loss", "gamma", float),
    "fusion_mode": ("fusion", "mode", str),
}


def ablate(
    samples: Sequence[PlaceSample],
    split: DatasetSplit,
    config: Config,
    axis: str,
    values: Sequence,
) -> list[dict]:
    """Train and evaluate once per value of one hyperparameter axis, with a
    shared seed, returning one row per value with the recall table."""
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis {axis!r}, have {sorted(ABLATION_AXES)}")
    section, key, caster = ABLATION_AXES[axis]
    # The backends are identical across runs, so one encoding cache serves
    # every value of the axis.
    cache = build_encoding_cache(build_model(config), samples, config.backend.image_size)
    rows = []
    for value in values:
        run_config = copy.deepcopy(config)
        setattr(getattr(run_config, section), key, caster(value))
        run_config.validate()
        checkpoint, _ = train(samples, split, run_config, cache=cache)
        report = evaluate(samples, split, run_config, checkpoint, cache=cache)
        rows.append({"axis": axis, "value": caster(value), "recall_at": report.recall_at})
        log.info("ablation %s=%s -> %s", axis, value, report.recall_at)
    return rows
