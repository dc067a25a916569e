"""Shared fixtures: a hand-built record set for exact-value tests and a
small simulated dataset with a trained model for the pipeline-level ones.

The simulated fixtures are session-scoped because training even the small
model costs a few seconds; tests must treat them as read-only.
"""

from __future__ import annotations

from datetime import date as Date

import pytest

from marquee.data import AttendanceRecord, DemographicsSchema, UserProfile, split_dataset
from marquee.model import TrainConfig, build_featurizer, train
from marquee.rng import child_generator
from marquee.synth import (
    SynthConfig,
    attendance_records,
    build_world,
    demographics_schema,
    gen_frame_features,
)
from marquee.videovec import pool_frames

# synth.py uses this tag for the per-movie frame streams; regenerating
# frames with the same child stream must reproduce simulate()'s files
TAG_FRAMES = 35


@pytest.fixture
def tiny_records():
    """Ten records, three users, four movies; dates chosen so that
    frequency/recency and history answers are easy to compute by hand.
    """
    d = Date
    return [
        AttendanceRecord(d(2021, 1, 5), "ann", "m1"),
        AttendanceRecord(d(2021, 1, 20), "ann", "m2"),
        AttendanceRecord(d(2021, 3, 1), "ann", "m3"),
        AttendanceRecord(d(2021, 6, 10), "ann", "m4"),
        AttendanceRecord(d(2021, 1, 5), "bob", "m1"),
        AttendanceRecord(d(2021, 2, 14), "bob", "m3"),
        AttendanceRecord(d(2022, 2, 14), "bob", "m4"),
        AttendanceRecord(d(2021, 5, 2), "cat", "m2"),
        AttendanceRecord(d(2021, 5, 9), "cat", "m3"),
        AttendanceRecord(d(2021, 5, 16), "cat", "m4"),
    ]


@pytest.fixture
def tiny_schema():
    return DemographicsSchema((("segment", ("a", "b")), ("cadence", ("frequent", "occasional"))))


@pytest.fixture
def tiny_profiles(tiny_schema):
    return {
        "ann": UserProfile("ann", {"segment": "a", "cadence": "frequent"}),
        "bob": UserProfile("bob", {"segment": "b"}),
        "cat": UserProfile("cat", {}),
    }


SMALL_CONFIG = SynthConfig(
    n_users=300,
    n_movies=40,
    latent_dim=6,
    frame_dim=24,
    frames_per_movie=30,
    heavy_base_rate=3.4,
    casual_base_rate=1.3,
    seed=11,
)


def world_vectors(world):
    """Pooled video vectors regenerated exactly as simulate() writes them."""
    cfg = world.config
    out = {}
    for i, movie in enumerate(world.movies):
        feats = gen_frame_features(movie, cfg, child_generator(cfg.seed, TAG_FRAMES, i))
        out[movie.movie_id] = pool_frames(feats).values
    return out


@pytest.fixture(scope="session")
def small_world():
    world = build_world(SMALL_CONFIG)
    records = attendance_records(world)
    split = split_dataset(records, 8, 0.1, 0.1, seed=SMALL_CONFIG.seed)
    return {
        "world": world,
        "records": records,
        "split": split,
        "vectors": world_vectors(world),
        "profiles": {u.user_id: u.profile for u in world.users},
        "schema": demographics_schema(SMALL_CONFIG),
    }


SMALL_TRAIN = TrainConfig(
    batch_size=64,
    max_epochs=6,
    patience=3,
    embedding_dim=8,
    hidden_dims=(32,),
    steps_per_epoch=10,
    seed=11,
)


@pytest.fixture(scope="session")
def small_model(small_world):
    """A trained hybrid model plus its featurizer, shared read-only."""
    sw = small_world
    result = train(sw["split"], sw["vectors"], sw["profiles"], sw["schema"], SMALL_TRAIN)
    _, featurizer = build_featurizer(
        sw["split"], sw["vectors"], sw["profiles"], sw["schema"], SMALL_TRAIN.window_days
    )
    return {"result": result, "params": result.params, "featurizer": featurizer}
