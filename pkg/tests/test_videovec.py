"""Frame feature containers, pooling, and the vector CSV round trip."""

from __future__ import annotations

import numpy as np
import pytest

from marquee.errors import DataFormatError, ShapeError
from marquee.videovec import (
    DEFAULT_MAX_FRAMES,
    FrameFeatureSet,
    VideoVector,
    load_frame_features,
    load_video_vectors,
    pool_frames,
    write_frame_features,
    write_video_vectors,
)

rng = np.random.default_rng(2024)


def naive_mean(frames: np.ndarray, cap: int) -> np.ndarray:
    """Independent oracle: plain per-coordinate mean of the first rows."""
    k = min(cap, frames.shape[0])
    out = np.zeros(frames.shape[1])
    for j in range(frames.shape[1]):
        out[j] = sum(frames[t, j] for t in range(k)) / k
    return out


def test_pooling_matches_naive_mean_short_and_long():
    for n in (1, 3, 99, 100, 101, 250):
        frames = rng.normal(size=(n, 7))
        got = pool_frames(FrameFeatureSet("m", frames)).values
        assert np.array_equal(got, naive_mean(frames, DEFAULT_MAX_FRAMES))


def test_pooling_ignores_frames_past_the_cap():
    frames = rng.normal(size=(150, 4))
    poisoned = frames.copy()
    poisoned[DEFAULT_MAX_FRAMES:] = 1e18  # must never be read
    a = pool_frames(FrameFeatureSet("m", frames)).values
    b = pool_frames(FrameFeatureSet("m", poisoned)).values
    assert np.array_equal(a, b)


def test_pooling_custom_cap():
    frames = rng.normal(size=(10, 3))
    got = pool_frames(FrameFeatureSet("m", frames), max_frames=4).values
    assert np.allclose(got, frames[:4].mean(axis=0), atol=1e-15)
    with pytest.raises(ValueError):
        pool_frames(FrameFeatureSet("m", frames), max_frames=0)


def test_frame_set_validation():
    with pytest.raises(ShapeError):
        FrameFeatureSet("m", np.zeros(5))
    with pytest.raises(ShapeError):
        FrameFeatureSet("m", np.zeros((0, 5)))
    with pytest.raises(ShapeError):
        VideoVector("m", np.zeros((2, 2)))


def test_binary_round_trip(tmp_path):
    frames = rng.normal(size=(17, 9)).astype(np.float32).astype(np.float64)
    path = tmp_path / "clip.mrlf"
    write_frame_features(path, FrameFeatureSet("clip", frames))
    back = load_frame_features(path)
    assert back.movie_id == "clip"
    assert np.array_equal(back.frames, frames)


def test_binary_rejects_corruption(tmp_path):
    frames = rng.normal(size=(5, 3))
    path = tmp_path / "clip.mrlf"
    write_frame_features(path, FrameFeatureSet("clip", frames))
    data = path.read_bytes()

    (tmp_path / "bad_magic.mrlf").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(DataFormatError, match="magic"):
        load_frame_features(tmp_path / "bad_magic.mrlf")

    (tmp_path / "truncated.mrlf").write_bytes(data[:-7])
    with pytest.raises(DataFormatError):
        load_frame_features(tmp_path / "truncated.mrlf")

    (tmp_path / "empty.mrlf").write_bytes(b"")
    with pytest.raises(DataFormatError):
        load_frame_features(tmp_path / "empty.mrlf")


def test_csv_fallback_uses_filename_as_id(tmp_path):
    path = tmp_path / "m042.csv"
    path.write_text("1.0,2.0\n3.0,4.0\n", encoding="utf-8")
    back = load_frame_features(path)
    assert back.movie_id == "m042"
    assert np.array_equal(back.frames, [[1.0, 2.0], [3.0, 4.0]])


def test_csv_fallback_rejects_ragged_rows(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("1.0,2.0\n3.0\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match="widths"):
        load_frame_features(path)


def test_vector_csv_round_trip(tmp_path):
    vectors = [
        VideoVector("m2", rng.normal(size=6)),
        VideoVector("m1", rng.normal(size=6)),
    ]
    path = tmp_path / "vectors.mrlf"
    write_video_vectors(path, vectors)
    back = load_video_vectors(path)
    assert sorted(back) == ["m1", "m2"]
    for vec in vectors:
        assert np.array_equal(back[vec.movie_id], vec.values)


def test_vector_csv_rejects_width_mismatch(tmp_path):
    path = tmp_path / "vectors.mrlf"
    path.write_text("m1,1.0,2.0\nm2,1.0\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match="width"):
        load_video_vectors(path)
