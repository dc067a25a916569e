"""Synthetic moviegoer world with known ground truth.

Each user carries a latent taste vector plus an expected utility profile:
upside U > 0 if she likes the movie, downside D < 0 if not. With like
probability p she attends exactly when p*U + (1-p)*D > 0, i.e. when
p > |D| / (U + |D|). Heavy moviegoers (small |D|) therefore clear the bar
for far more movies than casual ones (large |D|), which induces the
frequency/recency signal the scoring models rely on.

Movies come in planted pairs: every even-indexed movie has a "twin" whose
latent is a small perturbation of its own, giving each movie a known nearest
neighbor for comp-table recovery checks. Frame features are a fixed random
embedding of the movie latent plus per-frame noise, so mean-pooling them
approximately recovers the embedded latent.

Everything is a pure function of the config (seed included); reruns are
bit-identical.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from datetime import date as Date, timedelta
from pathlib import Path

import numpy as np
from scipy.special import expit

from .data import (
    AttendanceRecord,
    DemographicsSchema,
    UserProfile,
    write_attendance,
    write_demographics,
    write_schema,
)
from .errors import ConfigError, DataFormatError
from .rng import child_generator
from .videovec import FrameFeatureSet, write_frame_features

logger = logging.getLogger(__name__)

AFFINITY_GAIN = 4.0  # p = sigmoid(gain * cosine + shift)
AFFINITY_SHIFT = 0.0

_TAG_CENTERS = 31
_TAG_MOVIES = 32
_TAG_USERS = 33
_TAG_PROJ = 34
_TAG_FRAMES = 35
_TAG_AWARE = 36
_TAG_DATES = 37
_TAG_DEMO = 38

EPOCH_DATE = Date(2020, 1, 1)


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 2000
    n_movies: int = 200
    latent_dim: int = 8
    frame_dim: int = 64
    frames_per_movie: int = 100
    frame_noise: float = 0.3
    taste_noise: float = 1.0
    movie_noise: float = 1.2
    heavy_fraction: float = 0.5
    seed: int = 0
    n_clusters: int = 4
    horizon_days: int = 1095
    release_margin_days: int = 90
    heavy_base_rate: float = 20.2
    casual_base_rate: float = 5.5
    heavy_downside: tuple[float, float] = (1.6, 2.6)
    casual_downside: tuple[float, float] = (2.8, 4.5)
    upside: float = 1.0
    demographic_noise: float = 0.05
    missing_rate: float = 0.02
    twin_noise: float = 0.05
    awareness_sharpness: float = 2.0
    attend_threshold_override: float | None = None

    def __post_init__(self):
        for name in ("n_users", "n_movies", "latent_dim", "frame_dim", "frames_per_movie", "n_clusters"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("frame_noise", "taste_noise", "movie_noise", "twin_noise", "awareness_sharpness"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.frame_dim < self.latent_dim:
            raise ConfigError("frame_dim must be >= latent_dim")
        if not 0.0 < self.heavy_fraction < 1.0:
            raise ConfigError("heavy_fraction must lie in (0, 1)")
        if self.upside <= 0:
            raise ConfigError("upside must be > 0")
        if self.horizon_days <= self.release_margin_days:
            raise ConfigError("horizon_days must exceed release_margin_days")


@dataclass(frozen=True, eq=False)
class SyntheticMovie:
    movie_id: str
    latent: np.ndarray  # unit norm
    release_date: Date
    frame_count: int


@dataclass(frozen=True, eq=False)
class SyntheticUser:
    user_id: str
    taste: np.ndarray  # unit norm
    upside: float
    downside: float  # negative
    base_rate: float  # expected movies per year
    cluster: int
    profile: UserProfile


def _unit_rows(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=-1, keepdims=True)
    return a / np.maximum(norms, 1e-12)


def attendance_probability(user: SyntheticUser, movie: SyntheticMovie) -> float:
    """Like probability: sigmoid of scaled taste/content cosine."""
    if user.taste.shape != movie.latent.shape:
        raise ConfigError("taste and latent dims differ")
    cos = float(user.taste @ movie.latent)
    return float(expit(AFFINITY_GAIN * cos + AFFINITY_SHIFT))


def decide_attendance(p: float, upside: float, downside: float) -> bool:
    """Expected-utility rule: attend iff p > |D| / (U + |D|)."""
    if upside <= 0:
        raise ValueError(f"upside must be > 0, got {upside}")
    if downside > 0:
        raise ValueError(f"downside must be <= 0, got {downside}")
    return p > abs(downside) / (upside + abs(downside))


def demographics_schema(config: SynthConfig) -> DemographicsSchema:
    segments = tuple(f"seg{c}" for c in range(config.n_clusters))
    return DemographicsSchema((("segment", segments), ("cadence", ("frequent", "occasional"))))


def make_movies(config: SynthConfig) -> list[SyntheticMovie]:
    """Movies in planted twin pairs sharing a release week."""
    rng = child_generator(config.seed, _TAG_MOVIES)
    centers = _unit_rows(
        child_generator(config.seed, _TAG_CENTERS).normal(size=(config.n_clusters, config.latent_dim))
    )
    width = len(str(max(config.n_movies - 1, 1)))
    latest_release = config.horizon_days - config.release_margin_days - 8
    movies: list[SyntheticMovie] = []
    for base in range(0, config.n_movies, 2):
        cluster = int(rng.integers(config.n_clusters))
        first = _unit_rows(centers[cluster] + config.movie_noise * rng.normal(size=config.latent_dim))
        release_day = int(rng.integers(0, max(latest_release, 1)))
        pair = [first]
        if base + 1 < config.n_movies:
            twin = _unit_rows(first + config.twin_noise * rng.normal(size=config.latent_dim))
            pair.append(twin)
        for j, latent in enumerate(pair):
            day = release_day + int(rng.integers(0, 8))
            count = int(config.frames_per_movie + rng.integers(-20, 21))
            movies.append(
                SyntheticMovie(
                    movie_id=f"m{base + j:0{width}d}",
                    latent=latent,
                    release_date=EPOCH_DATE + timedelta(days=day),
                    frame_count=max(count, 1),
                )
            )
    return movies


def make_users(config: SynthConfig) -> list[SyntheticUser]:
    rng = child_generator(config.seed, _TAG_USERS)
    demo_rng = child_generator(config.seed, _TAG_DEMO)
    centers = _unit_rows(
        child_generator(config.seed, _TAG_CENTERS).normal(size=(config.n_clusters, config.latent_dim))
    )
    width = len(str(max(config.n_users - 1, 1)))
    n_heavy = int(round(config.heavy_fraction * config.n_users))
    users: list[SyntheticUser] = []
    for i in range(config.n_users):
        cluster = int(rng.integers(config.n_clusters))
        taste = _unit_rows(centers[cluster] + config.taste_noise * rng.normal(size=config.latent_dim))
        heavy = i < n_heavy
        lo, hi = config.heavy_downside if heavy else config.casual_downside
        downside = -float(rng.uniform(lo, hi))
        base_rate = config.heavy_base_rate if heavy else config.casual_base_rate

        seg_cluster = cluster
        if demo_rng.random() < config.demographic_noise:
            seg_cluster = int(demo_rng.integers(config.n_clusters))
        cadence = "frequent" if heavy else "occasional"
        if demo_rng.random() < config.demographic_noise:
            cadence = "occasional" if cadence == "frequent" else "frequent"
        values = {"segment": f"seg{seg_cluster}", "cadence": cadence}
        for name in list(values):
            if demo_rng.random() < config.missing_rate:
                del values[name]
        user_id = f"u{i:0{width}d}"
        users.append(
            SyntheticUser(
                user_id=user_id,
                taste=taste,
                upside=config.upside,
                downside=downside,
                base_rate=base_rate,
                cluster=cluster,
                profile=UserProfile(user_id, values),
            )
        )
    return users


def frame_projection(config: SynthConfig) -> np.ndarray:
    """The fixed latent -> frame-space embedding, scaled so embedded latents
    have roughly unit-scale coordinates regardless of dims.
    """
    rng = child_generator(config.seed, _TAG_PROJ)
    return rng.normal(size=(config.frame_dim, config.latent_dim)) / math.sqrt(config.latent_dim)


def gen_frame_features(movie: SyntheticMovie, config: SynthConfig, rng) -> FrameFeatureSet:
    """Per-frame features: embedded latent plus white noise."""
    projection = frame_projection(config)
    clean = projection @ movie.latent
    noise = rng.normal(size=(movie.frame_count, config.frame_dim))
    return FrameFeatureSet(movie.movie_id, clean[None, :] + config.frame_noise * noise)


@dataclass
class SynthWorld:
    """Users, movies and the pre-drawn randomness behind every decision.

    ``aware_draws`` and ``date_draws`` are uniforms indexed [user, movie];
    exposing them lets invariance tests replay decisions with altered
    utilities against identical draws.
    """

    config: SynthConfig
    users: list[SyntheticUser]
    movies: list[SyntheticMovie]
    like_probability: np.ndarray  # [user, movie]
    aware_probability: np.ndarray  # [user, movie]
    aware_draws: np.ndarray
    date_draws: np.ndarray

    def awareness_base(self, user: SyntheticUser) -> float:
        """Mean awareness for this user before taste weighting."""
        years = self.config.horizon_days / 365.0
        return min(1.0, user.base_rate * years / self.config.n_movies)

    def decisions(self, overrides: dict[str, tuple[float, float]] | None = None) -> np.ndarray:
        """Boolean attend matrix; ``overrides`` maps user_id -> (U, D).

        Awareness draws do not depend on utilities, so replays under altered
        (U, D) face the exact same awareness outcomes.
        """
        overrides = overrides or {}
        attend = np.zeros(self.like_probability.shape, dtype=bool)
        for i, user in enumerate(self.users):
            upside, downside = overrides.get(user.user_id, (user.upside, user.downside))
            if self.config.attend_threshold_override is not None:
                threshold = self.config.attend_threshold_override
            else:
                threshold = abs(downside) / (upside + abs(downside))
            aware = self.aware_draws[i] < self.aware_probability[i]
            attend[i] = aware & (self.like_probability[i] > threshold)
        return attend


def build_world(config: SynthConfig) -> SynthWorld:
    users = make_users(config)
    movies = make_movies(config)
    tastes = np.stack([u.taste for u in users])
    latents = np.stack([m.latent for m in movies])
    like = expit(AFFINITY_GAIN * tastes @ latents.T + AFFINITY_SHIFT)
    # Awareness is taste-targeted: promotion reaches people who liked similar
    # titles. like^s, normalized to world mean 1, reweights each user's base
    # rate without changing the expected record volume. sharpness 0 falls
    # back to a uniform coin.
    weight = like ** config.awareness_sharpness
    weight = weight / weight.mean()
    years = config.horizon_days / 365.0
    base = np.array(
        [min(1.0, u.base_rate * years / config.n_movies) for u in users]
    )
    aware_prob = np.minimum(1.0, base[:, None] * weight)
    aware = child_generator(config.seed, _TAG_AWARE).random((config.n_users, config.n_movies))
    dates = child_generator(config.seed, _TAG_DATES).random((config.n_users, config.n_movies))
    return SynthWorld(config, users, movies, like, aware_prob, aware, dates)


def attendance_records(world: SynthWorld) -> list[AttendanceRecord]:
    attend = world.decisions()
    margin = world.config.release_margin_days
    records: list[AttendanceRecord] = []
    for i, j in zip(*np.nonzero(attend)):
        movie = world.movies[j]
        offset = int(world.date_draws[i, j] * (margin + 1))
        records.append(
            AttendanceRecord(
                movie.release_date + timedelta(days=min(offset, margin)),
                world.users[i].user_id,
                movie.movie_id,
            )
        )
    return sorted(records)


MANIFEST_HEADER_PREFIX = ["kind", "id", "U", "D", "release_date"]


def write_manifest(path, world: SynthWorld) -> None:
    """Ground truth for oracle checks: every movie latent, every user's
    (U, D, taste).
    """
    dim = world.config.latent_dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER_PREFIX + [f"v{i}" for i in range(dim)])
        for movie in sorted(world.movies, key=lambda m: m.movie_id):
            writer.writerow(
                ["movie", movie.movie_id, "", "", movie.release_date.isoformat()]
                + [f"{x:.17g}" for x in movie.latent]
            )
        for user in sorted(world.users, key=lambda u: u.user_id):
            writer.writerow(
                ["user", user.user_id, f"{user.upside:.17g}", f"{user.downside:.17g}", ""]
                + [f"{x:.17g}" for x in user.taste]
            )


def load_manifest(path):
    """Returns (movies, users): id -> (latent, release_date) and
    id -> (U, D, taste).
    """
    path = Path(path)
    movies: dict[str, tuple[np.ndarray, Date]] = {}
    users: dict[str, tuple[float, float, np.ndarray]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[: len(MANIFEST_HEADER_PREFIX)] != MANIFEST_HEADER_PREFIX:
            raise DataFormatError(f"{path}: not a manifest file")
        for row in reader:
            kind, ident = row[0], row[1]
            vec = np.array([float(x) for x in row[5:]])
            if kind == "movie":
                movies[ident] = (vec, Date.fromisoformat(row[4]))
            elif kind == "user":
                users[ident] = (float(row[2]), float(row[3]), vec)
            else:
                raise DataFormatError(f"{path}: unknown manifest row kind {kind!r}")
    return movies, users


def simulate(config: SynthConfig, out_dir) -> dict[str, Path]:
    """Generate the full corpus on disk.

    Writes attendance.csv, demographics.csv, schema.csv, manifest.csv and a
    frames/ directory with one binary frame-feature file per movie. Returns
    the path of each artifact.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = build_world(config)
    records = attendance_records(world)
    logger.info(
        "simulated %d attendance records for %d users x %d movies",
        len(records), config.n_users, config.n_movies,
    )

    schema = demographics_schema(config)
    paths = {
        "attendance": out / "attendance.csv",
        "demographics": out / "demographics.csv",
        "schema": out / "schema.csv",
        "manifest": out / "manifest.csv",
        "frames": out / "frames",
    }
    write_attendance(paths["attendance"], records)
    write_demographics(paths["demographics"], {u.user_id: u.profile for u in world.users}, schema)
    write_schema(paths["schema"], schema)
    write_manifest(paths["manifest"], world)
    paths["frames"].mkdir(exist_ok=True)
    for index, movie in enumerate(world.movies):
        rng = child_generator(config.seed, _TAG_FRAMES, index)
        features = gen_frame_features(movie, config, rng)
        write_frame_features(paths["frames"] / f"{movie.movie_id}.mrlf", features)
    return paths
