"""Ground-truth properties of the simulated world."""

from __future__ import annotations

from collections import Counter
from datetime import timedelta

import numpy as np
import pytest
from scipy.special import expit

from marquee.data import load_attendance, load_demographics, load_schema
from marquee.errors import ConfigError
from marquee.synth import (
    AFFINITY_GAIN,
    SynthConfig,
    SyntheticMovie,
    SyntheticUser,
    attendance_probability,
    attendance_records,
    build_world,
    decide_attendance,
    demographics_schema,
    frame_projection,
    gen_frame_features,
    load_manifest,
    make_movies,
    make_users,
    simulate,
    write_manifest,
)
from tests.conftest import SMALL_CONFIG

rng = np.random.default_rng(55)


# -- utility rule


def test_decide_attendance_matches_expected_utility_sign():
    # oracle: attend iff expected utility p*U + (1-p)*D is positive
    for _ in range(2000):
        p = float(rng.random())
        upside = float(rng.uniform(0.1, 5.0))
        downside = -float(rng.uniform(0.0, 5.0))
        expected = p * upside + (1.0 - p) * downside > 0
        assert decide_attendance(p, upside, downside) == expected


def test_decide_attendance_validates_signs():
    with pytest.raises(ValueError):
        decide_attendance(0.5, 0.0, -1.0)
    with pytest.raises(ValueError):
        decide_attendance(0.5, 1.0, 0.5)


def test_attendance_probability_is_sigmoid_of_cosine():
    user = SyntheticUser("u", np.array([1.0, 0.0]), 1.0, -1.0, 5.0, 0, None)
    movie = SyntheticMovie("m", np.array([0.6, 0.8]), None, 10)
    assert attendance_probability(user, movie) == pytest.approx(float(expit(AFFINITY_GAIN * 0.6)))
    bad = SyntheticMovie("m", np.array([1.0, 0.0, 0.0]), None, 10)
    with pytest.raises(ConfigError):
        attendance_probability(user, bad)


# -- config validation


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_users": 0},
        {"latent_dim": 12, "frame_dim": 8},
        {"heavy_fraction": 0.0},
        {"heavy_fraction": 1.0},
        {"upside": 0.0},
        {"frame_noise": -0.1},
        {"horizon_days": 90, "release_margin_days": 90},
    ],
)
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(ConfigError):
        SynthConfig(**kwargs)


# -- population structure


def test_users_unit_tastes_and_cohorts():
    cfg = SynthConfig(n_users=100, seed=3)
    users = make_users(cfg)
    assert len(users) == 100
    for u in users:
        assert np.linalg.norm(u.taste) == pytest.approx(1.0, abs=1e-9)
        assert u.downside < 0 and u.upside == cfg.upside
    n_heavy = sum(1 for u in users if u.base_rate == cfg.heavy_base_rate)
    assert n_heavy == round(cfg.heavy_fraction * 100)
    # heavy users have the smaller |D| range
    heavy_d = [abs(u.downside) for u in users if u.base_rate == cfg.heavy_base_rate]
    casual_d = [abs(u.downside) for u in users if u.base_rate == cfg.casual_base_rate]
    assert max(heavy_d) <= cfg.heavy_downside[1]
    assert min(casual_d) >= cfg.casual_downside[0]


def test_movies_come_in_close_twin_pairs():
    cfg = SynthConfig(n_movies=30, seed=3)
    movies = make_movies(cfg)
    assert len(movies) == 30
    assert [m.movie_id for m in movies] == sorted(m.movie_id for m in movies)
    for base in range(0, 30, 2):
        a, b = movies[base], movies[base + 1]
        twin_cos = float(a.latent @ b.latent)
        others = [
            float(a.latent @ c.latent)
            for c in movies
            if c.movie_id not in (a.movie_id, b.movie_id)
        ]
        assert twin_cos > max(others)
        # twins open the same week
        assert abs((a.release_date - b.release_date).days) <= 7


def test_release_dates_leave_room_for_the_margin():
    cfg = SynthConfig(seed=9)
    world = build_world(cfg)
    records = attendance_records(world)
    releases = {m.movie_id: m.release_date for m in world.movies}
    for rec in records:
        delta = (rec.date - releases[rec.movie_id]).days
        assert 0 <= delta <= cfg.release_margin_days


def test_demographics_mostly_match_ground_truth():
    cfg = SynthConfig(n_users=1000, seed=7)
    users = make_users(cfg)
    seg_match = cad_match = seg_total = cad_total = 0
    for u in users:
        heavy = u.base_rate == cfg.heavy_base_rate
        if "segment" in u.profile.values:
            seg_total += 1
            seg_match += u.profile.values["segment"] == f"seg{u.cluster}"
        if "cadence" in u.profile.values:
            cad_total += 1
            cad_match += u.profile.values["cadence"] == ("frequent" if heavy else "occasional")
    # noise rate 0.05 plus the 1/n_clusters chance a scramble lands back home
    assert seg_match / seg_total > 0.9
    assert cad_match / cad_total > 0.9
    missing = sum(1 for u in users for f in ("segment", "cadence") if f not in u.profile.values)
    assert 0 < missing / (2 * len(users)) < 0.06


# -- world assembly and decisions


def test_world_is_deterministic_per_seed():
    a = attendance_records(build_world(SMALL_CONFIG))
    b = attendance_records(build_world(SMALL_CONFIG))
    c = attendance_records(build_world(SynthConfig(**{**SMALL_CONFIG.__dict__, "seed": 12})))
    assert a == b
    assert a != c


def test_decisions_respect_the_threshold_rule():
    world = build_world(SMALL_CONFIG)
    attend = world.decisions()
    # spot-check: wherever attendance happened, the user was aware and liked
    # the movie past her threshold
    ui, mi = np.nonzero(attend)
    for i, j in list(zip(ui, mi))[:200]:
        user = world.users[i]
        thr = abs(user.downside) / (user.upside + abs(user.downside))
        assert world.like_probability[i, j] > thr
        assert world.aware_draws[i, j] < world.aware_probability[i, j]


def test_decisions_override_replays_same_awareness():
    world = build_world(SMALL_CONFIG)
    base = world.decisions()
    # larger |D| for one user shrinks (never grows) her attendance set
    target = world.users[0].user_id
    harsher = world.decisions({target: (world.users[0].upside, world.users[0].downside - 2.0)})
    assert not np.any(harsher[0] & ~base[0])
    # everyone else is untouched
    assert np.array_equal(harsher[1:], base[1:])


def test_threshold_override_one_kills_all_attendance():
    cfg = SynthConfig(**{**SMALL_CONFIG.__dict__, "attend_threshold_override": 1.0})
    assert len(attendance_records(build_world(cfg))) == 0


def test_heavy_cohort_attends_more():
    world = build_world(SMALL_CONFIG)
    per_user = Counter(r.user_id for r in attendance_records(world))
    heavy = [per_user.get(u.user_id, 0) for u in world.users if u.base_rate == SMALL_CONFIG.heavy_base_rate]
    casual = [per_user.get(u.user_id, 0) for u in world.users if u.base_rate == SMALL_CONFIG.casual_base_rate]
    assert np.mean(heavy) >= 3.0 * np.mean(casual)


def test_awareness_targets_taste():
    world = build_world(SMALL_CONFIG)
    # within one user, awareness probability increases with like probability
    for i in (0, 5, 50):
        like = world.like_probability[i]
        aware = world.aware_probability[i]
        order = np.argsort(like)
        lo = aware[order[:10]].mean()
        hi = aware[order[-10:]].mean()
        assert hi > lo


# -- frames


def test_pooled_frames_approach_the_embedded_latent():
    cfg = SynthConfig(seed=21, frame_noise=0.3)
    movie = make_movies(cfg)[0]
    big = SyntheticMovie(movie.movie_id, movie.latent, movie.release_date, 4000)
    feats = gen_frame_features(big, cfg, np.random.default_rng(0))
    clean = frame_projection(cfg) @ movie.latent
    pooled = feats.frames.mean(axis=0)
    # mean of n frames has noise ~ frame_noise/sqrt(n) per coordinate
    assert np.max(np.abs(pooled - clean)) < 5 * cfg.frame_noise / np.sqrt(4000)


def test_frame_count_respects_movie_metadata():
    cfg = SynthConfig(seed=2)
    for movie in make_movies(cfg)[:6]:
        feats = gen_frame_features(movie, cfg, np.random.default_rng(1))
        assert feats.frames.shape == (movie.frame_count, cfg.frame_dim)


# -- manifest and simulate


def test_manifest_round_trip(tmp_path):
    world = build_world(SMALL_CONFIG)
    path = tmp_path / "manifest.csv"
    write_manifest(path, world)
    movies, users = load_manifest(path)
    assert len(movies) == SMALL_CONFIG.n_movies
    assert len(users) == SMALL_CONFIG.n_users
    for m in world.movies[:5]:
        latent, release = movies[m.movie_id]
        assert np.array_equal(latent, m.latent)
        assert release == m.release_date
    for u in world.users[:5]:
        upside, downside, taste = users[u.user_id]
        assert (upside, downside) == (u.upside, u.downside)
        assert np.array_equal(taste, u.taste)


def test_simulate_writes_a_loadable_corpus(tmp_path):
    cfg = SynthConfig(
        n_users=60, n_movies=10, latent_dim=4, frame_dim=12, frames_per_movie=25,
        heavy_base_rate=3.0, casual_base_rate=1.2, seed=5,
    )
    paths = simulate(cfg, tmp_path)
    records = load_attendance(paths["attendance"])
    assert records == attendance_records(build_world(cfg))
    schema = load_schema(paths["schema"])
    assert schema == demographics_schema(cfg)
    profiles = load_demographics(paths["demographics"], schema)
    assert len(profiles) == 60
    frame_files = sorted(paths["frames"].iterdir())
    assert len(frame_files) == 10
    movies, users = load_manifest(paths["manifest"])
    assert len(movies) == 10 and len(users) == 60
