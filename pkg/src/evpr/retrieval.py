"""Descriptor index, exact cosine nearest-neighbor search, and label-based
Recall@N evaluation.

The index is a dense matrix of L2-normalized descriptors searched
exhaustively; a query is a hit at N when any of its top-N neighbors carries
the query's location label. Indexes serialize to a small binary format
(magic 'DSC0') that round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

_DSC_MAGIC = b"DSC0"
_DSC_HEADER = struct.Struct("<4sII")  # magic, entry count, dimension


@dataclass(frozen=True)
class DescriptorIndex:
    """Unit-norm descriptor rows with aligned ids and location labels."""

    ids: tuple[str, ...]
    labels: np.ndarray   # (M,) int64
    matrix: np.ndarray   # (M, d) float32, unit rows

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])


@dataclass(frozen=True)
class RecallReport:
    """Recall@N fractions overall and per category."""

    recall_at: dict[int, float]
    per_category: dict[str, dict[int, float]] = field(default_factory=dict)
    query_count: int = 0

    def to_json(self) -> str:
        payload = {
            "query_count": self.query_count,
            "recall_at": {str(n): v for n, v in sorted(self.recall_at.items())},
            "per_category": {
                cat: {str(n): v for n, v in sorted(vals.items())}
                for cat, vals in sorted(self.per_category.items())
            },
        }
        return json.dumps(payload, indent=2)


def build_index(entries: Iterable[tuple[str, int, np.ndarray]]) -> DescriptorIndex:
    """Assemble an index from (id, label, descriptor) triples, preserving
    order. Descriptors are L2-normalized; duplicate ids and mixed dimensions
    are rejected."""
    ids: list[str] = []
    labels: list[int] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    dim: int | None = None
    for sid, label, desc in entries:
        if sid in seen:
            raise DataError(f"duplicate descriptor id {sid!r}")
        seen.add(sid)
        vec = np.asarray(desc, dtype=np.float32).reshape(-1)
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise DataError(
                f"descriptor {sid!r} has dimension {vec.shape[0]}, expected {dim}"
            )
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise DataError(f"descriptor {sid!r} is all-zero")
        ids.append(sid)
        labels.append(int(label))
        rows.append(vec / norm)
    if not rows:
        raise DataError("cannot build an empty index")
    return DescriptorIndex(
        ids=tuple(ids),
        labels=np.asarray(labels, dtype=np.int64),
        matrix=np.stack(rows).astype(np.float32),
    )


def save_index(index: DescriptorIndex, path: str | Path) -> None:
    """Write the binary descriptor file: 'DSC0' header (u32 count, u32 dim),
    then per entry a u32-length-prefixed UTF-8 id, an i64 label, and dim
    little-endian float32 values."""
    with Path(path).open("wb") as fh:
        fh.write(_DSC_HEADER.pack(_DSC_MAGIC, len(index), index.dim))
        for sid, label, row in zip(index.ids, index.labels, index.matrix):
            raw = sid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<q", int(label)))
            fh.write(row.astype("<f4").tobytes())


def load_index(path: str | Path) -> DescriptorIndex:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _DSC_HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, count, dim = _DSC_HEADER.unpack_from(raw, 0)
    if magic != _DSC_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    offset = _DSC_HEADER.size
    ids, labels, rows = [], [], []
    try:
        for _ in range(count):
            (id_len,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            ids.append(raw[offset:offset + id_len].decode("utf-8"))
            offset += id_len
            (label,) = struct.unpack_from("<q", raw, offset)
            offset += 8
            row = np.frombuffer(raw, dtype="<f4", count=dim, offset=offset).copy()
            offset += 4 * dim
            labels.append(label)
            rows.append(row)
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated record data") from exc
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes")
    if not ids:
        raise DataError(f"{path}: empty index file")
    return DescriptorIndex(
        ids=tuple(ids),
        labels=np.asarray(labels, dtype=np.int64),
        matrix=np.stack(rows),
    )


def query_topn(index: DescriptorIndex, query: np.ndarray, n: int) -> list[tuple[str, float]]:
    """Top min(n, M) entries by cosine similarity, best first; equal scores
    keep index insertion order."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if len(index) == 0:
        raise DataError("cannot query an empty index")
    q = np.asarray(query, dtype=np.float32).reshape(-1)
    if q.shape[0] != index.dim:
        raise DataError(f"query dimension {q.shape[0]} does not match index {index.dim}")
    norm = float(np.linalg.norm(q))
    if norm > 0:
        q = q / norm
    scores = index.matrix @ q
    order = np.argsort(-scores, kind="stable")[:n]
    return [(index.ids[i], float(scores[i])) for i in order]


def recall_at_n(
    index: DescriptorIndex,
    query_labels: Sequence[int],
    query_descriptors: np.ndarray,
    ns: Sequence[int] = (1, 5, 10),
    query_ids: Sequence[str] | None = None,
    query_categories: Sequence[str] | None = None,
) -> RecallReport:
    """Fraction of queries whose top-N neighbors contain the query label.

    When `query_ids` is given, a query's own index entry (matched by id) is
    excluded from its candidates. Per-category recalls are reported when
    `query_categories` is given.
    """
    if len(query_labels) == 0:
        raise ValueError("no queries given")
    qmat = np.asarray(query_descriptors, dtype=np.float32)
    if qmat.ndim != 2 or qmat.shape[0] != len(query_labels):
        raise ValueError(f"expected ({len(query_labels)}, d) query matrix, got {qmat.shape}")
    norms = np.linalg.norm(qmat, axis=1, keepdims=True)
    qmat = qmat / np.where(norms > 0, norms, 1.0)
    scores = qmat @ index.matrix.T  # (Q, M)
    if query_ids is not None:
        position = {sid: i for i, sid in enumerate(index.ids)}
        for qi, sid in enumerate(query_ids):
            if sid in position:
                scores[qi, position[sid]] = -np.inf
    ns = sorted(set(int(n) for n in ns))
    max_n = min(max(ns), len(index))
    hits = {n: np.zeros(len(query_labels), dtype=bool) for n in ns}
    for qi in range(len(query_labels)):
        order = np.argsort(-scores[qi], kind="stable")[:max_n]
        ranked_labels = index.labels[order]
        matches = ranked_labels == int(query_labels[qi])
        for n in ns:
            hits[n][qi] = bool(matches[: min(n, max_n)].any())
    recall = {n: float(hits[n].mean()) for n in ns}
    per_category: dict[str, dict[int, float]] = {}
    if query_categories is not None:
        cats = np.asarray(query_categories)
        for cat in sorted(set(query_categories)):
            mask = cats == cat
            per_category[cat] = {n: float(hits[n][mask].mean()) for n in ns}
    return RecallReport(recall_at=recall, per_category=per_category, query_count=len(query_labels))
