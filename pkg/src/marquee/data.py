"""Attendance ingestion, chronological splitting, demographics encoding and
the positive/negative samplers used for training and evaluation.

File formats (all CSV, UTF-8, LF):
  attendance:   header ``user_id,movie_id,date`` with ISO ``YYYY-MM-DD`` dates
  demographics: header ``user_id,<field1>,<field2>,...``; empty cell = missing
  schema:       rows ``field,value`` enumerating category values in order
"""

from __future__ import annotations

import csv
import logging
from bisect import bisect_left
from dataclasses import dataclass, field
from datetime import date as Date
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DataFormatError,
    EvaluationError,
    SamplingError,
    SchemaError,
)
from .rng import as_generator

logger = logging.getLogger(__name__)

ATTENDANCE_HEADER = ["user_id", "movie_id", "date"]
DEFAULT_COLDSTART_MOVIES = 50
DEFAULT_VAL_FRAC = 0.1
DEFAULT_TEST_FRAC = 0.1
DEFAULT_NEG_PER_POS = 9
DEFAULT_WINDOW_DAYS = 365
MAX_NEGATIVE_REJECTIONS = 100


@dataclass(frozen=True, order=True)
class AttendanceRecord:
    """One (user, movie, date) implicit-feedback event; day resolution."""

    date: Date
    user_id: str
    movie_id: str


@dataclass(frozen=True)
class LabeledPair:
    user_id: str
    movie_id: str
    label: int
    as_of: Date


@dataclass(frozen=True)
class DemographicsSchema:
    """Ordered categorical fields, each with its ordered category values."""

    fields: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        for name, values in self.fields:
            if len(set(values)) != len(values):
                raise SchemaError(f"field {name!r} has duplicate category values")

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.fields)

    @property
    def one_hot_width(self) -> int:
        return sum(len(values) for _, values in self.fields)


@dataclass(frozen=True)
class UserProfile:
    """One category value per schema field; a missing field is simply absent."""

    user_id: str
    values: dict[str, str] = field(default_factory=dict)


def dedupe_records(records: list[AttendanceRecord]) -> tuple[list[AttendanceRecord], int]:
    """Drop exact duplicate triples; returns (sorted unique records, n dropped)."""
    unique = sorted(set(records))
    return unique, len(records) - len(unique)


def load_attendance(path, allow_empty: bool = False) -> list[AttendanceRecord]:
    """Load and validate an attendance CSV.

    Records come back sorted by date, then user_id, then movie_id; exact
    duplicate rows are collapsed (count logged). A file with no data rows is
    an error unless ``allow_empty`` (split partitions may legitimately be
    empty).
    """
    path = Path(path)
    records: list[AttendanceRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty attendance file") from None
        if header != ATTENDANCE_HEADER:
            raise DataFormatError(
                f"{path}: bad header {header!r}, expected {ATTENDANCE_HEADER!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataFormatError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            user_id, movie_id, date_str = row
            if not user_id or not movie_id or not date_str:
                raise DataFormatError(f"{path}: line {lineno}: empty field")
            try:
                when = Date.fromisoformat(date_str)
            except ValueError:
                raise DataFormatError(
                    f"{path}: line {lineno}: unparseable date {date_str!r}"
                ) from None
            records.append(AttendanceRecord(when, user_id, movie_id))
    if not records:
        if allow_empty:
            return []
        raise DataFormatError(f"{path}: no attendance records")
    unique, dropped = dedupe_records(records)
    if dropped:
        logger.info("%s: dropped %d duplicate attendance rows", path, dropped)
    return unique


def write_attendance(path, records: list[AttendanceRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ATTENDANCE_HEADER)
        for rec in sorted(records):
            writer.writerow([rec.user_id, rec.movie_id, rec.date.isoformat()])


def load_schema(path) -> DemographicsSchema:
    """Schema CSV: ``field,value`` rows, categories in file order."""
    path = Path(path)
    fields: dict[str, list[str]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise DataFormatError(f"{path}: line {lineno}: expected 'field,value'")
            name, value = row
            fields.setdefault(name, [])
            if value in fields[name]:
                raise SchemaError(f"{path}: line {lineno}: duplicate value {value!r} for {name!r}")
            fields[name].append(value)
    if not fields:
        raise DataFormatError(f"{path}: empty schema")
    return DemographicsSchema(tuple((n, tuple(v)) for n, v in fields.items()))


def write_schema(path, schema: DemographicsSchema) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for name, values in schema.fields:
            for value in values:
                writer.writerow([name, value])


def load_demographics(path, schema: DemographicsSchema) -> dict[str, UserProfile]:
    """Demographics CSV keyed by user_id; values validated against the schema."""
    path = Path(path)
    lookup = {name: set(values) for name, values in schema.fields}
    profiles: dict[str, UserProfile] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty demographics file") from None
        if not header or header[0] != "user_id":
            raise DataFormatError(f"{path}: header must start with 'user_id'")
        for name in header[1:]:
            if name not in lookup:
                raise SchemaError(f"{path}: unknown demographics field {name!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}: line {lineno}: expected {len(header)} fields")
            user_id = row[0]
            values: dict[str, str] = {}
            for name, value in zip(header[1:], row[1:]):
                if value == "":
                    continue
                if value not in lookup[name]:
                    raise SchemaError(
                        f"{path}: line {lineno}: value {value!r} not in schema field {name!r}"
                    )
                values[name] = value
            profiles[user_id] = UserProfile(user_id, values)
    return profiles


def write_demographics(path, profiles: dict[str, UserProfile], schema: DemographicsSchema) -> None:
    names = schema.field_names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", *names])
        for user_id in sorted(profiles):
            profile = profiles[user_id]
            writer.writerow([user_id] + [profile.values.get(n, "") for n in names])


def encode_demographics(profile: UserProfile, schema: DemographicsSchema) -> np.ndarray:
    """One-hot encode; a missing field contributes an all-zero block."""
    out = np.zeros(schema.one_hot_width)
    base = 0
    for name, values in schema.fields:
        value = profile.values.get(name)
        if value is not None:
            try:
                out[base + values.index(value)] = 1.0
            except ValueError:
                raise SchemaError(
                    f"user {profile.user_id!r}: value {value!r} not in schema field {name!r}"
                ) from None
        base += len(values)
    return out


@dataclass
class DatasetSplit:
    """Chronological holdout plus shuffled train/validation/test partitions.

    ``movie_as_of`` is the per-movie reference date (earliest observed
    attendance within the movie's own side of the cold-start divide) used to
    anchor frequency/recency computation without future leakage.
    """

    train: list[AttendanceRecord]
    validation: list[AttendanceRecord]
    test: list[AttendanceRecord]
    coldstart: list[AttendanceRecord]
    coldstart_movie_ids: frozenset[str]
    movie_as_of: dict[str, Date]

    @property
    def non_coldstart(self) -> list[AttendanceRecord]:
        return self.train + self.validation + self.test


def first_attendance_dates(records: list[AttendanceRecord]) -> dict[str, Date]:
    first: dict[str, Date] = {}
    for rec in records:
        prev = first.get(rec.movie_id)
        if prev is None or rec.date < prev:
            first[rec.movie_id] = rec.date
    return first


def split_dataset(
    records: list[AttendanceRecord],
    n_coldstart: int = DEFAULT_COLDSTART_MOVIES,
    val_frac: float = DEFAULT_VAL_FRAC,
    test_frac: float = DEFAULT_TEST_FRAC,
    seed: int = 0,
) -> DatasetSplit:
    """Isolate the ``n_coldstart`` movies with the latest first-attendance
    dates, then shuffle the remaining records into train/validation/test.
    """
    if not 0.0 < val_frac < 0.5 or not 0.0 < test_frac < 0.5:
        raise ConfigError(f"val/test fractions must lie in (0, 0.5), got {val_frac}/{test_frac}")
    first = first_attendance_dates(records)
    if n_coldstart < 0:
        raise ConfigError("n_coldstart must be >= 0")
    if n_coldstart >= len(first):
        raise ConfigError(
            f"n_coldstart={n_coldstart} but only {len(first)} distinct movies present"
        )
    by_recency = sorted(first, key=lambda m: (-first[m].toordinal(), m))
    cold_ids = frozenset(by_recency[:n_coldstart])
    cold = [r for r in records if r.movie_id in cold_ids]
    rest = [r for r in records if r.movie_id not in cold_ids]

    rng = as_generator(seed)
    order = rng.permutation(len(rest))
    shuffled = [rest[i] for i in order]
    n_val = int(round(val_frac * len(rest)))
    n_test = int(round(test_frac * len(rest)))
    validation = sorted(shuffled[:n_val])
    test = sorted(shuffled[n_val : n_val + n_test])
    train = sorted(shuffled[n_val + n_test :])

    as_of = first_attendance_dates(rest)
    as_of.update(first_attendance_dates(cold))
    return DatasetSplit(train, validation, test, sorted(cold), cold_ids, as_of)


SPLIT_FILES = ("train.csv", "validation.csv", "test.csv", "coldstart.csv")


def save_split(directory, split: DatasetSplit) -> None:
    """Write the four partitions of ``split`` as attendance CSVs under
    ``directory`` (created if needed)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    parts = (split.train, split.validation, split.test, split.coldstart)
    for name, records in zip(SPLIT_FILES, parts):
        write_attendance(directory / name, records)


def load_split(directory) -> DatasetSplit:
    """Reload a split written by :func:`save_split`.

    Reference dates are rebuilt from the partitions themselves: cold-start
    movies take their earliest cold-side date, everything else its earliest
    date across train/validation/test. This matches what
    :func:`split_dataset` produced, so a save/load round trip is lossless.
    """
    directory = Path(directory)
    parts = []
    for name in SPLIT_FILES:
        allow_empty = name == "coldstart.csv"
        parts.append(load_attendance(directory / name, allow_empty=allow_empty))
    train, validation, test, cold = parts
    cold_ids = frozenset(r.movie_id for r in cold)
    overlap = cold_ids & {r.movie_id for r in train + validation + test}
    if overlap:
        raise DataFormatError(
            f"{directory}: cold-start movies also appear outside the holdout: "
            f"{sorted(overlap)[:5]}"
        )
    as_of = first_attendance_dates(train + validation + test)
    as_of.update(first_attendance_dates(cold))
    return DatasetSplit(train, validation, test, cold, cold_ids, as_of)


class AttendanceIndex:
    """Read-optimized view of a record set: per-user chronologies, the
    (user, movie) membership set, and per-movie attendee sets.
    """

    def __init__(self, records: list[AttendanceRecord], movie_as_of: dict[str, Date] | None = None):
        self.records = sorted(records)
        self.users = sorted({r.user_id for r in self.records})
        self.movies = sorted({r.movie_id for r in self.records})
        self.user_pos = {u: i for i, u in enumerate(self.users)}
        self.movie_pos = {m: i for i, m in enumerate(self.movies)}
        self.pairs = sorted({(r.user_id, r.movie_id) for r in self.records})
        self.pair_set = set(self.pairs)
        self.movie_attendees: dict[str, set[str]] = {m: set() for m in self.movies}
        per_user: dict[str, list[tuple[int, str]]] = {u: [] for u in self.users}
        for rec in self.records:
            per_user[rec.user_id].append((rec.date.toordinal(), rec.movie_id))
            self.movie_attendees[rec.movie_id].add(rec.user_id)
        self._user_dates: dict[str, np.ndarray] = {}
        self._user_movies: dict[str, list[str]] = {}
        for user_id, events in per_user.items():
            events.sort()
            self._user_dates[user_id] = np.array([d for d, _ in events], dtype=np.int64)
            self._user_movies[user_id] = [m for _, m in events]
        if movie_as_of is None:
            movie_as_of = first_attendance_dates(self.records)
        self.movie_as_of = dict(movie_as_of)

    def frequency_recency(self, user_id: str, as_of: Date, window_days: int = DEFAULT_WINDOW_DAYS) -> tuple[int, int]:
        """Attendance count strictly before ``as_of`` within the window, and
        days since the latest such attendance (capped at the window).
        """
        dates = self._user_dates.get(user_id)
        if dates is None or dates.size == 0:
            return 0, window_days
        as_of_ord = as_of.toordinal()
        lo = bisect_left(dates, as_of_ord - window_days)
        hi = bisect_left(dates, as_of_ord)
        if hi <= lo:
            return 0, window_days
        return hi - lo, as_of_ord - int(dates[hi - 1])

    def user_events_before(self, user_id: str, as_of: Date) -> tuple[np.ndarray, list[str]]:
        """(date ordinals, movie ids) of the user's attendances strictly before as_of."""
        dates = self._user_dates.get(user_id)
        if dates is None or dates.size == 0:
            return np.empty(0, dtype=np.int64), []
        hi = bisect_left(dates, as_of.toordinal())
        return dates[:hi], self._user_movies[user_id][:hi]


def compute_frequency_recency(
    records: list[AttendanceRecord],
    user_id: str,
    as_of: Date,
    window_days: int = DEFAULT_WINDOW_DAYS,
) -> tuple[int, int]:
    """Convenience wrapper over AttendanceIndex for one-off queries."""
    return AttendanceIndex(records).frequency_recency(user_id, as_of, window_days)


def sample_training_batch(
    index: AttendanceIndex,
    batch_size: int,
    seed,
) -> list[LabeledPair]:
    """Half positives drawn uniformly from the distinct (user, movie) pairs,
    half rejection-sampled negatives absent from the same pair set.
    """
    if batch_size < 2 or batch_size % 2 != 0:
        raise ValueError(f"batch_size must be even and >= 2, got {batch_size}")
    if not index.pairs:
        raise SamplingError("no positive pairs to sample from")
    rng = as_generator(seed)
    half = batch_size // 2
    out: list[LabeledPair] = []
    pos_idx = rng.integers(0, len(index.pairs), size=half)
    for i in pos_idx:
        user_id, movie_id = index.pairs[int(i)]
        out.append(LabeledPair(user_id, movie_id, 1, index.movie_as_of[movie_id]))
    n_users, n_movies = len(index.users), len(index.movies)
    for _ in range(half):
        for _attempt in range(MAX_NEGATIVE_REJECTIONS):
            user_id = index.users[int(rng.integers(0, n_users))]
            movie_id = index.movies[int(rng.integers(0, n_movies))]
            if (user_id, movie_id) not in index.pair_set:
                out.append(LabeledPair(user_id, movie_id, 0, index.movie_as_of[movie_id]))
                break
        else:
            raise SamplingError(
                f"no negative pair found in {MAX_NEGATIVE_REJECTIONS} rejections; matrix too dense"
            )
    return out


def sample_eval_set(
    eval_index: AttendanceIndex,
    full_index: AttendanceIndex,
    neg_per_pos: int = DEFAULT_NEG_PER_POS,
    seed=0,
    candidate_users: list[str] | None = None,
) -> list[LabeledPair]:
    """For each distinct positive pair in the evaluation partition, pair the
    movie with ``neg_per_pos`` distinct users that never attended it anywhere.

    Negatives default to the full user population; ``candidate_users``
    narrows the pool (e.g. to users every model under comparison can score).
    """
    if neg_per_pos < 1:
        raise ValueError(f"neg_per_pos must be >= 1, got {neg_per_pos}")
    rng = as_generator(seed)
    pool = sorted(candidate_users) if candidate_users is not None else full_index.users
    all_users = np.array(pool)
    eligible_cache: dict[str, np.ndarray] = {}
    out: list[LabeledPair] = []
    for user_id, movie_id in eval_index.pairs:
        as_of = eval_index.movie_as_of.get(movie_id) or full_index.movie_as_of[movie_id]
        out.append(LabeledPair(user_id, movie_id, 1, as_of))
        eligible = eligible_cache.get(movie_id)
        if eligible is None:
            attendees = full_index.movie_attendees.get(movie_id, set())
            mask = np.array([u not in attendees for u in pool], dtype=bool)
            eligible = all_users[mask]
            eligible_cache[movie_id] = eligible
        if eligible.size < neg_per_pos:
            raise EvaluationError(
                f"movie {movie_id!r}: only {eligible.size} users without an attendance record, "
                f"need {neg_per_pos} negatives"
            )
        picks = rng.choice(eligible.size, size=neg_per_pos, replace=False)
        for j in np.sort(picks):
            out.append(LabeledPair(str(eligible[int(j)]), movie_id, 0, as_of))
    return out
