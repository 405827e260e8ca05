"""Place-recognition dataset handling.

A dataset lives in a root directory with a `manifest.csv` describing one
sample per row (`sample_id,location_label,category,frame_0..frame_4,
description_file`), frame files in the event formats of `evpr.events` (or
pre-rendered 16-bit grayscale PNGs), and UTF-8 description text files.
Also provides the train/val/test split, the label-balanced batch sampler
used for metric learning, and a synthetic desk-scale dataset generator.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError
from .events import EventStream, save_events_evt

CATEGORIES = ("Campus", "Park", "Road")

FRAMES_PER_SAMPLE = 5

MANIFEST_NAME = "manifest.csv"

MANIFEST_COLUMNS = (
    "sample_id",
    "location_label",
    "category",
    "frame_0",
    "frame_1",
    "frame_2",
    "frame_3",
    "frame_4",
    "description_file",
)

# Substituted for missing/empty scene descriptions so text-conditioned code
# paths always have at least one token to work with.
PLACEHOLDER_DESCRIPTION = "an unlabeled place with no distinctive landmarks"


@dataclass(frozen=True)
class PlaceSample:
    """One labeled scene: five frame files plus a text description."""

    sample_id: str
    location_label: int
    category: str
    frames: tuple[Path, ...]
    description: str = ""

    def __post_init__(self) -> None:
        if len(self.frames) != FRAMES_PER_SAMPLE:
            raise DataError(
                f"sample {self.sample_id!r} has {len(self.frames)} frames, "
                f"expected {FRAMES_PER_SAMPLE}"
            )
        if self.category not in CATEGORIES:
            raise DataError(
                f"sample {self.sample_id!r} has category {self.category!r}, "
                f"expected one of {CATEGORIES}"
            )


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint, jointly exhaustive train/val/test id sets."""

    train: frozenset[str]
    val: frozenset[str]
    test: frozenset[str]

    def subset(self, names: str) -> frozenset[str]:
        """Resolve a split selector like 'train', 'test' or 'train+val'."""
        out: set[str] = set()
        for name in names.split("+"):
            name = name.strip()
            if name == "all":
                return frozenset(self.train | self.val | self.test)
            if name not in ("train", "val", "test"):
                raise ValueError(f"unknown split name {name!r}")
            out |= getattr(self, name)
        return frozenset(out)


@dataclass(frozen=True)
class BatchSpec:
    """Label-balanced batch shape: every batch holds `labels_per_batch`
    distinct labels with `samples_per_label` instances each."""

    labels_per_batch: int = 4
    samples_per_label: int = 6

    def __post_init__(self) -> None:
        if self.labels_per_batch < 2 or self.samples_per_label < 2:
            raise ValueError(
                "need >= 2 labels per batch and >= 2 samples per label so every "
                f"anchor has positives and negatives, got {self}"
            )

    @property
    def batch_size(self) -> int:
        return self.labels_per_batch * self.samples_per_label


def load_dataset(root: str | Path) -> list[PlaceSample]:
    """Load every manifest row as a PlaceSample, in manifest order.

    All problems are collected before raising: malformed rows are reported
    with their line numbers and missing frame/description files are listed
    rather than silently dropped.
    """
    root = Path(root)
    manifest = root / MANIFEST_NAME
    if not manifest.is_file():
        raise DataError(f"no {MANIFEST_NAME} under {root}")
    samples: list[PlaceSample] = []
    problems: list[str] = []
    seen_ids: set[str] = set()
    with manifest.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
            raise DataError(
                f"{manifest}: bad header {header}, expected {list(MANIFEST_COLUMNS)}"
            )
        for lineno, cells in enumerate(reader, start=2):
            if not any(c.strip() for c in cells):
                continue
            sid = cells[0].strip() if cells else ""
            if len(cells) != len(MANIFEST_COLUMNS):
                problems.append(
                    f"line {lineno}: sample {sid!r} has {len(cells)} columns, "
                    f"expected {len(MANIFEST_COLUMNS)}"
                )
                continue
            row = dict(zip(MANIFEST_COLUMNS, (c.strip() for c in cells)))
            if not sid:
                problems.append(f"line {lineno}: empty sample_id")
                continue
            if sid in seen_ids:
                problems.append(f"line {lineno}: duplicate sample_id {sid!r}")
                continue
            try:
                label = int(row["location_label"])
            except ValueError:
                problems.append(f"line {lineno}: bad location_label {row['location_label']!r}")
                continue
            category = row["category"]
            if category not in CATEGORIES:
                problems.append(f"line {lineno}: bad category {category!r}")
                continue
            frame_cells = [row[f"frame_{i}"] for i in range(FRAMES_PER_SAMPLE)]
            n_given = sum(1 for c in frame_cells if c)
            if n_given != FRAMES_PER_SAMPLE:
                problems.append(
                    f"line {lineno}: sample {sid!r} lists {n_given} frames, "
                    f"expected {FRAMES_PER_SAMPLE}"
                )
                continue
            frames = tuple(root / c for c in frame_cells)
            for f in frames:
                if not f.is_file():
                    problems.append(f"line {lineno}: sample {sid!r} missing frame file {f}")
            desc_cell = row["description_file"]
            description = ""
            if desc_cell:
                desc_path = root / desc_cell
                if not desc_path.is_file():
                    problems.append(f"line {lineno}: sample {sid!r} missing description file {desc_path}")
                else:
                    description = desc_path.read_text(encoding="utf-8").strip()
            seen_ids.add(sid)
            samples.append(
                PlaceSample(
                    sample_id=sid,
                    location_label=label,
                    category=category,
                    frames=frames,
                    description=description,
                )
            )
    if problems:
        raise DataError(f"{manifest}: {len(problems)} problem(s):\n" + "\n".join(problems))
    return samples


def write_manifest(root: str | Path, rows: Sequence[Mapping[str, str]]) -> Path:
    """Write manifest.csv under root; row values are manifest-relative paths."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = root / MANIFEST_NAME
    with manifest.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(MANIFEST_COLUMNS))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return manifest


def split_dataset(
    samples: Sequence[PlaceSample],
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
    by: str = "sample",
) -> DatasetSplit:
    """Randomly partition samples into train/val/test.

    Sample-level splitting rounds each split size to the nearest integer, so
    sizes land within +/-1 of the exact ratios. Scene-level splitting
    (`by='scene'`) keeps all samples of a location label together and only
    approximates the ratios.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    if len(samples) < 3:
        raise ValueError(f"need at least 3 samples to split, got {len(samples)}")
    rng = random.Random(seed)
    if by == "sample":
        ids = sorted(s.sample_id for s in samples)
        rng.shuffle(ids)
        n = len(ids)
        n_train = round(n * ratios[0])
        n_val = round(n * ratios[1])
        train = ids[:n_train]
        val = ids[n_train:n_train + n_val]
        test = ids[n_train + n_val:]
    elif by == "scene":
        groups: dict[int, list[str]] = {}
        for s in samples:
            groups.setdefault(s.location_label, []).append(s.sample_id)
        labels = sorted(groups)
        rng.shuffle(labels)
        n = len(samples)
        targets = (n * ratios[0], n * ratios[0] + n * ratios[1])
        train, val, test = [], [], []
        count = 0
        for lab in labels:
            bucket = train if count < targets[0] else val if count < targets[1] else test
            bucket.extend(sorted(groups[lab]))
            count += len(groups[lab])
    else:
        raise ValueError(f"unknown split granularity {by!r}")
    return DatasetSplit(train=frozenset(train), val=frozenset(val), test=frozenset(test))


def sample_batches(
    ids: Sequence[str],
    labels: Mapping[str, int],
    spec: BatchSpec,
    seed: int = 0,
) -> Iterator[list[str]]:
    """Yield one epoch of id-batches with exactly `labels_per_batch` distinct
    labels x `samples_per_label` instances each.

    Labels with fewer instances than requested are sampled with replacement.
    Label groups left over after chunking by `labels_per_batch` are dropped,
    so every emitted batch is full.
    """
    by_label: dict[int, list[str]] = {}
    for sid in ids:
        by_label.setdefault(labels[sid], []).append(sid)
    label_list = sorted(by_label)
    if len(label_list) < 2:
        raise ValueError(f"need at least 2 labels to form batches, got {len(label_list)}")
    if len(label_list) < spec.labels_per_batch:
        raise ValueError(
            f"need at least {spec.labels_per_batch} labels for the requested "
            f"batch shape, got {len(label_list)}"
        )
    rng = random.Random(seed)
    rng.shuffle(label_list)
    k = spec.samples_per_label
    for start in range(0, len(label_list) - spec.labels_per_batch + 1, spec.labels_per_batch):
        batch: list[str] = []
        for lab in label_list[start:start + spec.labels_per_batch]:
            pool = sorted(by_label[lab])
            if len(pool) >= k:
                batch.extend(rng.sample(pool, k))
            else:
                batch.extend(rng.choices(pool, k=k))
        yield batch


# ---------------------------------------------------------------------------
# Synthetic desk-scale dataset
# ---------------------------------------------------------------------------

_VIEW_PHRASES = (
    "seen head on",
    "seen from slightly left",
    "seen from slightly right",
    "seen from a low angle",
    "seen from a high angle",
)

_COUNT_WORDS = {2: "two", 3: "three", 4: "four"}

_ORIENT_WORDS = ("upright", "leaning", "flat", "diagonal")

_POSITION_WORDS = ("upper left", "upper right", "lower left", "lower right", "central")


@dataclass(frozen=True)
class _Bar:
    """One thick oriented stroke: center, direction angle, length, thickness,
    polarity of its events."""

    center: np.ndarray
    angle: float
    length: float
    thickness: float
    sign: int


def _label_bars(rng: np.random.Generator, width: int, height: int) -> list[_Bar]:
    """Label-specific geometry: a few thick strokes well inside the sensor.
    Solid single-polarity strokes survive the per-sample viewpoint jitter,
    unlike hairline edges whose accumulations barely overlap after a shift.
    """
    n = int(rng.integers(2, 5))
    margin = max(6, width // 6)
    bars = []
    for i in range(n):
        bars.append(
            _Bar(
                center=rng.uniform([margin, margin], [width - margin, height - margin]),
                angle=float(rng.uniform(0.0, math.pi)),
                length=float(rng.uniform(width * 0.35, width * 0.6)),
                thickness=float(rng.uniform(width * 0.08, width * 0.16)),
                sign=1 if i % 2 == 0 else -1,
            )
        )
    return bars


def _describe_pattern(bars: list[_Bar], category: str, width: int, height: int) -> str:
    count = _COUNT_WORDS.get(len(bars), str(len(bars)))
    angle = math.degrees(bars[0].angle) % 180
    orient = _ORIENT_WORDS[int(angle // 45) % 4]
    centroid = np.mean([b.center for b in bars], axis=0)
    col = "left" if centroid[0] < width / 2 else "right"
    row = "upper" if centroid[1] < height / 2 else "lower"
    pos = f"{row} {col}"
    if abs(centroid[0] - width / 2) < width / 8 and abs(centroid[1] - height / 2) < height / 8:
        pos = "central"
    return f"a {category.lower()} scene with {count} {orient} strokes in the {pos} region"


def _jittered_stream(
    bars: list[_Bar],
    rng: np.random.Generator,
    width: int,
    height: int,
    t_start: int,
    t_end: int,
    shift: np.ndarray,
    rotation: float,
    events_per_bar: int = 500,
) -> EventStream:
    """Render jittered strokes into an event stream over [t_start, t_end)."""
    center = np.array([width / 2.0, height / 2.0])
    xs, ys, ps = [], [], []
    for bar in bars:
        direction = np.array([math.cos(bar.angle), math.sin(bar.angle)])
        perp = np.array([-direction[1], direction[0]])
        u = rng.uniform(-bar.length / 2, bar.length / 2, size=events_per_bar)
        v = rng.uniform(-bar.thickness / 2, bar.thickness / 2, size=events_per_bar)
        pts = bar.center[None, :] + u[:, None] * direction[None, :] + v[:, None] * perp[None, :]
        pts = _rotate(pts + shift, center, rotation)
        x = np.rint(pts[:, 0]).astype(np.int64)
        y = np.rint(pts[:, 1]).astype(np.int64)
        keep = (x >= 0) & (x < width) & (y >= 0) & (y < height)
        xs.append(x[keep])
        ys.append(y[keep])
        ps.append(np.full(int(keep.sum()), bar.sign))
    # A light sprinkle of sensor noise over the whole array.
    n_noise = events_per_bar // 10
    xs.append(rng.integers(0, width, size=n_noise))
    ys.append(rng.integers(0, height, size=n_noise))
    ps.append(rng.choice([-1, 1], size=n_noise))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    p = np.concatenate(ps)
    t = rng.integers(t_start, t_end, size=x.shape[0])
    order = np.argsort(t, kind="stable")
    return EventStream(
        width=width,
        height=height,
        t=t[order].astype(np.int64),
        x=x[order].astype(np.int32),
        y=y[order].astype(np.int32),
        p=p[order].astype(np.int8),
    )


def _rotate(points: np.ndarray, center: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return (points - center) @ rot.T + center


def synthesize_toy_dataset(
    root: str | Path,
    n_labels: int = 8,
    samples_per_label: int = 10,
    resolution: tuple[int, int] = (64, 64),
    seed: int = 0,
    force: bool = False,
    frame_window_us: int = 33_000,
) -> list[PlaceSample]:
    """Generate a small on-disk dataset with per-label edge patterns.

    Each label gets a distinctive set of line segments; each sample applies a
    viewpoint jitter (shift + rotation) and renders five consecutive frames
    with a slow drift between them. Descriptions are templated from the
    pattern geometry. Deterministic for a fixed seed.
    """
    if n_labels < 2:
        raise ValueError(f"need at least 2 labels, got {n_labels}")
    root = Path(root)
    if root.exists() and any(root.iterdir()) and not force:
        raise DataError(f"refusing to write into non-empty directory {root} (use force)")
    width, height = resolution
    (root / "events").mkdir(parents=True, exist_ok=True)
    (root / "text").mkdir(parents=True, exist_ok=True)
    rows: list[dict[str, str]] = []
    samples: list[PlaceSample] = []
    for label in range(n_labels):
        label_rng = np.random.default_rng([seed, label])
        bars = _label_bars(label_rng, width, height)
        category = CATEGORIES[label % len(CATEGORIES)]
        base_text = _describe_pattern(bars, category, width, height)
        for idx in range(samples_per_label):
            sid = f"{category.lower()}-{label:03d}-{idx:03d}"
            rng = np.random.default_rng([seed, label, idx])
            shift = rng.uniform(-2.5, 2.5, size=2)
            angle = float(rng.uniform(-0.06, 0.06))
            drift = rng.uniform(-0.5, 0.5, size=2)
            frame_cells = []
            for j in range(FRAMES_PER_SAMPLE):
                stream = _jittered_stream(
                    bars, rng, width, height,
                    t_start=j * frame_window_us, t_end=(j + 1) * frame_window_us,
                    shift=shift + j * drift, rotation=angle,
                )
                rel = f"events/{sid}_f{j}.evt"
                save_events_evt(stream, root / rel)
                frame_cells.append(rel)
            text = f"{base_text}, {_VIEW_PHRASES[idx % len(_VIEW_PHRASES)]}"
            desc_rel = f"text/{sid}.txt"
            (root / desc_rel).write_text(text + "\n", encoding="utf-8")
            rows.append(
                {
                    "sample_id": sid,
                    "location_label": str(label),
                    "category": category,
                    **{f"frame_{j}": frame_cells[j] for j in range(FRAMES_PER_SAMPLE)},
                    "description_file": desc_rel,
                }
            )
            samples.append(
                PlaceSample(
                    sample_id=sid,
                    location_label=label,
                    category=category,
                    frames=tuple(root / c for c in frame_cells),
                    description=text,
                )
            )
    write_manifest(root, rows)
    return samples
