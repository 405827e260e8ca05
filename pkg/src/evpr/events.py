"""Event stream handling: containers, time slicing, polarity accumulation,
frame normalization, and the on-disk event/frame file formats.

An event stream is a time-sorted set of (t, x, y, p) records from a sensor of
declared resolution. Accumulating a stream over a time window yields a signed
2D count grid ("event frame") which is then normalized and resized into the
3-channel image tensor consumed by the vision backends.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch
from PIL import Image

from .errors import DataError


class Event(NamedTuple):
    """A single sensor event: timestamp (microseconds), pixel, polarity."""

    t: int
    x: int
    y: int
    p: int


# Record layout of the binary event format: little-endian, packed.
_EVT_MAGIC = b"EVT0"
_EVT_HEADER = struct.Struct("<4sHHQ")  # magic, width, height, count
_EVT_RECORD_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])

# Offset-binary encoding for 16-bit grayscale frame PNGs: a signed count c is
# stored as c + 32768, so a zero-accumulation pixel reads back as 0.
_PNG_ZERO = 32768


@dataclass(frozen=True)
class EventStream:
    """Time-sorted events from one sensor, stored as parallel arrays."""

    width: int
    height: int
    t: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    x: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int32))
    y: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int32))
    p: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int8))

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.width, self.height)

    def event(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def validate(self) -> "EventStream":
        """Check the container invariants, raising DataError on the first
        violation (sorted timestamps, in-bounds coordinates, +/-1 polarity)."""
        if self.width <= 0 or self.height <= 0:
            raise DataError(f"invalid resolution {self.width}x{self.height}")
        n = len(self)
        lengths = {n, len(self.x), len(self.y), len(self.p)}
        if len(lengths) != 1:
            raise DataError("event field arrays have mismatched lengths")
        if n == 0:
            return self
        if np.any(np.diff(self.t) < 0):
            i = int(np.argmax(np.diff(self.t) < 0))
            raise DataError(f"timestamps not sorted at event {i + 1}")
        bad = (self.x < 0) | (self.x >= self.width) | (self.y < 0) | (self.y >= self.height)
        if np.any(bad):
            i = int(np.argmax(bad))
            raise DataError(
                f"event {i} at ({int(self.x[i])},{int(self.y[i])}) outside "
                f"{self.width}x{self.height}"
            )
        if np.any(np.abs(self.p) != 1):
            i = int(np.argmax(np.abs(self.p) != 1))
            raise DataError(f"event {i} has polarity {int(self.p[i])}, expected +1/-1")
        return self


def make_stream(
    resolution: tuple[int, int],
    events: Sequence[tuple[int, int, int, int]],
) -> EventStream:
    """Build a validated stream from (t, x, y, p) tuples."""
    arr = np.asarray(events, dtype=np.int64).reshape(-1, 4)
    return EventStream(
        width=int(resolution[0]),
        height=int(resolution[1]),
        t=arr[:, 0].astype(np.int64),
        x=arr[:, 1].astype(np.int32),
        y=arr[:, 2].astype(np.int32),
        p=arr[:, 3].astype(np.int8),
    ).validate()


@dataclass(frozen=True)
class EventFrame:
    """Signed per-pixel event counts accumulated over one time window."""

    width: int
    height: int
    values: np.ndarray  # (height, width) float32

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.width, self.height)


def slice_stream(stream: EventStream, window_us: int) -> list[EventStream]:
    """Partition a stream into sub-streams over the absolute half-open
    windows [k*window_us, (k+1)*window_us).

    Every window between the first and last event is emitted, including empty
    ones, so concatenating the slices reproduces the input.
    """
    if window_us <= 0:
        raise ValueError(f"window must be positive, got {window_us}")
    if len(stream) == 0:
        return []
    k = stream.t // window_us
    k_first, k_last = int(k[0]), int(k[-1])
    # Events are time-sorted, so each window is a contiguous run.
    bounds = np.searchsorted(k, np.arange(k_first, k_last + 2))
    out = []
    for i in range(k_last - k_first + 1):
        lo, hi = bounds[i], bounds[i + 1]
        out.append(
            EventStream(
                width=stream.width,
                height=stream.height,
                t=stream.t[lo:hi],
                x=stream.x[lo:hi],
                y=stream.y[lo:hi],
                p=stream.p[lo:hi],
            )
        )
    return out


def accumulate_frame(stream: EventStream) -> EventFrame:
    """Sum polarities per pixel into a signed (H, W) grid."""
    bad = (stream.x < 0) | (stream.x >= stream.width) | (stream.y < 0) | (stream.y >= stream.height)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DataError(
            f"event {i} at ({int(stream.x[i])},{int(stream.y[i])}) outside "
            f"{stream.width}x{stream.height}"
        )
    grid = np.zeros((stream.height, stream.width), dtype=np.int64)
    np.add.at(grid, (stream.y, stream.x), stream.p.astype(np.int64))
    return EventFrame(stream.width, stream.height, grid.astype(np.float32))


def frame_to_image(
    frame: EventFrame, side: int = 224, clip_percentile: float = 99.0
) -> torch.Tensor:
    """Turn a signed count grid into a (3, side, side) tensor in [0, 1].

    Counts are clipped symmetrically at the given percentile of the nonzero
    magnitudes (suppresses hot pixels), mapped affinely so zero accumulation
    lands at 0.5, bilinearly resized, and replicated to three channels. An
    all-zero frame yields a constant 0.5 tensor.
    """
    if side <= 0:
        raise ValueError(f"side must be positive, got {side}")
    values = frame.values.astype(np.float32)
    magnitudes = np.abs(values[values != 0])
    cap = float(np.percentile(magnitudes, clip_percentile)) if magnitudes.size else 0.0
    if cap <= 0.0:
        plane = torch.full((side, side), 0.5)
    else:
        scaled = np.clip(values, -cap, cap) / (2.0 * cap) + 0.5
        plane = torch.from_numpy(scaled.astype(np.float32))
        if plane.shape != (side, side):
            plane = torch.nn.functional.interpolate(
                plane[None, None], size=(side, side), mode="bilinear", align_corners=False
            )[0, 0]
        plane = plane.clamp(0.0, 1.0)
    return plane.expand(3, side, side).contiguous()


def resize_frame(frame: EventFrame, side: int) -> EventFrame:
    """Bilinearly resample the signed count grid to side x side."""
    if side <= 0:
        raise ValueError(f"side must be positive, got {side}")
    if frame.values.shape == (side, side):
        return frame
    values = torch.from_numpy(frame.values.astype(np.float32))[None, None]
    out = torch.nn.functional.interpolate(
        values, size=(side, side), mode="bilinear", align_corners=False
    )[0, 0]
    return EventFrame(side, side, out.numpy())


# ---------------------------------------------------------------------------
# Event file IO
# ---------------------------------------------------------------------------


def load_events_csv(
    path: str | Path, resolution: tuple[int, int] | None = None
) -> EventStream:
    """Read a `t,x,y,p` CSV. Polarity may be coded {1,-1} or {1,0}; the 0
    form is mapped to -1. Without an explicit resolution the tight bounding
    box (max coordinate + 1) is assumed."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["t", "x", "y", "p"]:
            raise DataError(f"{path}: expected CSV header 't,x,y,p', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                rows.append((int(row[0]), int(row[1]), int(row[2]), int(row[3])))
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: malformed event row {row}") from exc
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    p = arr[:, 3]
    if arr.shape[0] and set(np.unique(p).tolist()) <= {0, 1}:
        p = np.where(p == 0, -1, 1)
    if resolution is None:
        if arr.shape[0] == 0:
            resolution = (1, 1)
        else:
            resolution = (int(arr[:, 1].max()) + 1, int(arr[:, 2].max()) + 1)
    return EventStream(
        width=int(resolution[0]),
        height=int(resolution[1]),
        t=arr[:, 0].astype(np.int64),
        x=arr[:, 1].astype(np.int32),
        y=arr[:, 2].astype(np.int32),
        p=p.astype(np.int8),
    ).validate()


def save_events_csv(stream: EventStream, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "p"])
        for i in range(len(stream)):
            writer.writerow([int(stream.t[i]), int(stream.x[i]), int(stream.y[i]), int(stream.p[i])])


def load_events_evt(path: str | Path) -> EventStream:
    """Read the packed little-endian binary format (16-byte header:
    magic 'EVT0', u16 width, u16 height, u64 count; 13-byte records:
    u64 t, u16 x, u16 y, i8 p)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _EVT_HEADER.size:
        raise DataError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, width, height, count = _EVT_HEADER.unpack_from(raw, 0)
    if magic != _EVT_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    body = raw[_EVT_HEADER.size:]
    expected = count * _EVT_RECORD_DTYPE.itemsize
    if len(body) != expected:
        raise DataError(f"{path}: expected {expected} record bytes, found {len(body)}")
    rec = np.frombuffer(body, dtype=_EVT_RECORD_DTYPE)
    return EventStream(
        width=int(width),
        height=int(height),
        t=rec["t"].astype(np.int64),
        x=rec["x"].astype(np.int32),
        y=rec["y"].astype(np.int32),
        p=rec["p"].astype(np.int8),
    ).validate()


def save_events_evt(stream: EventStream, path: str | Path) -> None:
    rec = np.empty(len(stream), dtype=_EVT_RECORD_DTYPE)
    rec["t"] = stream.t.astype(np.uint64)
    rec["x"] = stream.x.astype(np.uint16)
    rec["y"] = stream.y.astype(np.uint16)
    rec["p"] = stream.p.astype(np.int8)
    with Path(path).open("wb") as fh:
        fh.write(_EVT_HEADER.pack(_EVT_MAGIC, stream.width, stream.height, len(stream)))
        fh.write(rec.tobytes())


def load_events(path: str | Path, resolution: tuple[int, int] | None = None) -> EventStream:
    """Dispatch on extension: .csv -> text loader, anything else -> binary."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_events_csv(path, resolution=resolution)
    return load_events_evt(path)


# ---------------------------------------------------------------------------
# Frame PNG IO (16-bit grayscale, offset-binary signed counts)
# ---------------------------------------------------------------------------


def save_frame_png(frame: EventFrame, path: str | Path) -> None:
    """Store signed counts as 16-bit grayscale, offset so 0 maps to 32768.
    Counts beyond +/-32767 saturate."""
    encoded = np.clip(np.rint(frame.values) + _PNG_ZERO, 0, 65535).astype(np.uint16)
    Image.fromarray(encoded).save(Path(path))


def load_frame_png(path: str | Path) -> EventFrame:
    with Image.open(Path(path)) as img:
        arr = np.asarray(img)
    if arr.ndim != 2:
        raise DataError(f"{path}: expected single-channel frame PNG, got shape {arr.shape}")
    values = arr.astype(np.float32) - _PNG_ZERO
    return EventFrame(width=arr.shape[1], height=arr.shape[0], values=values)


def load_frame(path: str | Path) -> EventFrame:
    """Load a frame file: PNGs are read directly, event files are accumulated."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        return load_frame_png(path)
    return accumulate_frame(load_events(path))
