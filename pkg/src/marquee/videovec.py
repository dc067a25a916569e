"""Per-frame trailer features and mean pooling into fixed-length video vectors.

Frame features arrive pre-extracted, either in the binary ``.mrlf`` container
or as a CSV fallback (one frame per row, movie id taken from the filename).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ShapeError

MAGIC = b"MRLF"
VERSION = 1
DEFAULT_MAX_FRAMES = 100
DEFAULT_FRAME_DIM = 1024


@dataclass
class FrameFeatureSet:
    """Ordered per-second frame vectors for one movie, frames x dim.

    Shape is validated on construction; finiteness is the loader's job so
    that tests can plant sentinel values past the pooled prefix.
    """

    movie_id: str
    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ShapeError(f"frames must be 2-D, got ndim={self.frames.ndim}")
        if self.frames.shape[0] < 1:
            raise ShapeError(f"movie {self.movie_id!r} has no frames")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class VideoVector:
    movie_id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ShapeError("video vector must be 1-D")


def pool_frames(features: FrameFeatureSet, max_frames: int = DEFAULT_MAX_FRAMES) -> VideoVector:
    """Arithmetic mean of the first min(max_frames, available) frames.

    Accumulates sequentially in file order so the result is reproducible
    against a naive per-coordinate mean. Frames past the prefix are never read.
    """
    if max_frames < 1:
        raise ValueError(f"max_frames must be >= 1, got {max_frames}")
    n = features.n_frames
    if n < 1:
        raise ShapeError(f"movie {features.movie_id!r} has no frames")
    k = min(max_frames, n)
    acc = features.frames[0].copy()
    for t in range(1, k):
        acc += features.frames[t]
    return VideoVector(features.movie_id, acc / k)


def write_frame_features(path, features: FrameFeatureSet) -> None:
    """Write the binary container (payload stored as little-endian f32)."""
    movie_bytes = features.movie_id.encode("utf-8")
    if len(movie_bytes) > 0xFFFF:
        raise DataFormatError("movie_id too long for the container format")
    payload = np.ascontiguousarray(features.frames, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<H", len(movie_bytes)))
        fh.write(movie_bytes)
        fh.write(struct.pack("<II", features.n_frames, features.frame_dim))
        fh.write(payload)


def _read_exact(buf: bytes, offset: int, size: int, what: str) -> tuple[bytes, int]:
    if offset + size > len(buf):
        raise DataFormatError(
            f"truncated frame-feature file: needed {size} bytes for {what} at byte {offset}"
        )
    return buf[offset : offset + size], offset + size


def load_frame_features(path) -> FrameFeatureSet:
    """Load one movie's frame features from .mrlf binary or .csv fallback."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _load_frames_csv(path)
    buf = path.read_bytes()
    if len(buf) == 0:
        raise DataFormatError(f"{path}: empty file at byte 0")
    magic, off = _read_exact(buf, 0, 4, "magic")
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r} at byte 0")
    raw, off = _read_exact(buf, off, 2, "version")
    (version,) = struct.unpack("<H", raw)
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported version {version} at byte 4")
    raw, off = _read_exact(buf, off, 2, "movie_id length")
    (id_len,) = struct.unpack("<H", raw)
    raw, off = _read_exact(buf, off, id_len, "movie_id")
    movie_id = raw.decode("utf-8")
    raw, off = _read_exact(buf, off, 8, "frame count/dim")
    n_frames, frame_dim = struct.unpack("<II", raw)
    if n_frames < 1 or frame_dim < 1:
        raise DataFormatError(f"{path}: invalid frame count {n_frames} x dim {frame_dim} at byte {off - 8}")
    expected = n_frames * frame_dim * 4
    if len(buf) - off != expected:
        raise DataFormatError(
            f"{path}: payload size mismatch at byte {off}: expected {expected} bytes, found {len(buf) - off}"
        )
    frames = np.frombuffer(buf, dtype="<f4", count=n_frames * frame_dim, offset=off)
    frames = frames.astype(np.float64).reshape(n_frames, frame_dim)
    if not np.all(np.isfinite(frames)):
        raise DataFormatError(f"{path}: non-finite frame values")
    return FrameFeatureSet(movie_id, frames)


def _load_frames_csv(path: Path) -> FrameFeatureSet:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: no frames")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataFormatError(f"{path}: inconsistent frame widths {sorted(widths)}")
    frames = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(frames)):
        raise DataFormatError(f"{path}: non-finite frame values")
    return FrameFeatureSet(path.stem, frames)


def write_video_vectors(path, vectors: list[VideoVector]) -> None:
    """Pooled vectors as CSV: movie_id, then one column per component."""
    vectors = sorted(vectors, key=lambda v: v.movie_id)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for vec in vectors:
            writer.writerow([vec.movie_id] + [format(x, ".17g") for x in vec.values])


def load_video_vectors(path) -> dict[str, np.ndarray]:
    """Read the pooled-vector CSV back into movie_id -> vector."""
    out: dict[str, np.ndarray] = {}
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) < 2:
                raise DataFormatError(f"{path}: line {lineno}: expected movie_id plus values")
            try:
                vec = np.array([float(v) for v in row[1:]], dtype=np.float64)
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
            if width is None:
                width = vec.shape[0]
            elif vec.shape[0] != width:
                raise DataFormatError(f"{path}: line {lineno}: inconsistent vector width")
            out[row[0]] = vec
    if not out:
        raise DataFormatError(f"{path}: no video vectors")
    return out
