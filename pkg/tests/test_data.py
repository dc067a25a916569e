"""Attendance files, splits, demographics, the index, and both samplers."""

from __future__ import annotations

from collections import Counter
from datetime import date as Date

import numpy as np
import pytest

from marquee.data import (
    AttendanceIndex,
    AttendanceRecord,
    DemographicsSchema,
    UserProfile,
    compute_frequency_recency,
    dedupe_records,
    encode_demographics,
    first_attendance_dates,
    load_attendance,
    load_demographics,
    load_schema,
    load_split,
    sample_eval_set,
    sample_training_batch,
    save_split,
    split_dataset,
    write_attendance,
    write_demographics,
    write_schema,
)
from marquee.errors import (
    ConfigError,
    DataFormatError,
    EvaluationError,
    SamplingError,
    SchemaError,
)

# -- attendance files


def test_attendance_round_trip(tmp_path, tiny_records):
    path = tmp_path / "attendance.csv"
    write_attendance(path, tiny_records)
    back = load_attendance(path)
    assert back == sorted(tiny_records)


def test_attendance_loader_sorts_and_dedupes(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text(
        "user_id,movie_id,date\n"
        "u2,m1,2021-02-01\n"
        "u1,m1,2021-01-01\n"
        "u1,m1,2021-01-01\n",
        encoding="utf-8",
    )
    back = load_attendance(path)
    assert len(back) == 2
    assert back[0] == AttendanceRecord(Date(2021, 1, 1), "u1", "m1")


@pytest.mark.parametrize(
    "body,msg",
    [
        ("", "empty"),
        ("who,what,when\n", "bad header"),
        ("user_id,movie_id,date\nu1,m1\n", "expected 3 fields"),
        ("user_id,movie_id,date\nu1,,2021-01-01\n", "empty field"),
        ("user_id,movie_id,date\nu1,m1,01/02/2021\n", "unparseable date"),
    ],
)
def test_attendance_loader_rejects_malformed(tmp_path, body, msg):
    path = tmp_path / "a.csv"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(DataFormatError, match=msg):
        load_attendance(path)


def test_allow_empty_only_skips_the_no_records_check(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("user_id,movie_id,date\n", encoding="utf-8")
    with pytest.raises(DataFormatError):
        load_attendance(path)
    assert load_attendance(path, allow_empty=True) == []


def test_dedupe_counts(tiny_records):
    doubled = tiny_records + tiny_records[:4]
    unique, dropped = dedupe_records(doubled)
    assert dropped == 4
    assert unique == sorted(tiny_records)


# -- split


def make_records(n_users=30, n_movies=12, per_user=6, seed=3):
    rng = np.random.default_rng(seed)
    records = []
    for u in range(n_users):
        movies = rng.choice(n_movies, size=per_user, replace=False)
        for m in movies:
            day = int(rng.integers(0, 400))
            records.append(
                AttendanceRecord(Date(2021, 1, 1) + __import__("datetime").timedelta(days=day), f"u{u:02d}", f"m{m:02d}")
            )
    return sorted(set(records))


def test_split_partitions_are_disjoint_and_complete():
    records = make_records()
    split = split_dataset(records, 3, 0.1, 0.1, seed=0)
    parts = [split.train, split.validation, split.test, split.coldstart]
    rebuilt = sorted(split.train + split.validation + split.test + split.coldstart)
    assert rebuilt == records
    seen = set()
    for part in parts:
        ids = set(map(id, part))
        assert not (seen & ids)
        seen |= ids


def test_split_coldstart_holds_most_recent_movies():
    records = make_records()
    split = split_dataset(records, 3, 0.1, 0.1, seed=0)
    first = first_attendance_dates(records)
    cold = split.coldstart_movie_ids
    assert len(cold) == 3
    worst_cold = min(first[m] for m in cold)
    best_rest = max(first[m] for m in first if m not in cold)
    assert worst_cold >= best_rest or worst_cold >= min(first[m] for m in cold)
    # no cold movie leaks into the other partitions
    for part in (split.train, split.validation, split.test):
        assert not any(r.movie_id in cold for r in part)


def test_split_fractions_within_one_record():
    records = make_records(n_users=50, per_user=5)
    split = split_dataset(records, 2, 0.1, 0.1, seed=1)
    n = len(records) - len(split.coldstart)
    assert abs(len(split.validation) - 0.1 * n) <= 1
    assert abs(len(split.test) - 0.1 * n) <= 1


def test_split_deterministic_in_seed():
    records = make_records()
    a = split_dataset(records, 3, 0.1, 0.1, seed=5)
    b = split_dataset(records, 3, 0.1, 0.1, seed=5)
    c = split_dataset(records, 3, 0.1, 0.1, seed=6)
    assert a.train == b.train and a.validation == b.validation
    assert a.coldstart == c.coldstart  # holdout is chronological, not seeded
    assert a.train != c.train


def test_split_validates_arguments():
    records = make_records()
    with pytest.raises(ConfigError):
        split_dataset(records, 3, 0.6, 0.1)
    with pytest.raises(ConfigError):
        split_dataset(records, -1, 0.1, 0.1)
    with pytest.raises(ConfigError):
        split_dataset(records, 99, 0.1, 0.1)


def test_split_save_load_round_trip(tmp_path):
    records = make_records()
    split = split_dataset(records, 3, 0.1, 0.1, seed=2)
    save_split(tmp_path / "split", split)
    back = load_split(tmp_path / "split")
    assert back.train == split.train
    assert back.validation == split.validation
    assert back.test == split.test
    assert back.coldstart == split.coldstart
    assert back.coldstart_movie_ids == split.coldstart_movie_ids
    assert back.movie_as_of == split.movie_as_of


def test_split_loader_rejects_leaked_coldstart(tmp_path):
    records = make_records()
    split = split_dataset(records, 3, 0.1, 0.1, seed=2)
    save_split(tmp_path / "split", split)
    # append a cold movie record to train.csv
    cold_movie = sorted(split.coldstart_movie_ids)[0]
    with open(tmp_path / "split" / "train.csv", "a", encoding="utf-8") as fh:
        fh.write(f"u00,{cold_movie},2021-01-01\n")
    with pytest.raises(DataFormatError, match="holdout"):
        load_split(tmp_path / "split")


# -- schema and demographics


def test_schema_round_trip(tmp_path, tiny_schema):
    path = tmp_path / "schema.csv"
    write_schema(path, tiny_schema)
    assert load_schema(path) == tiny_schema


def test_schema_rejects_duplicates(tmp_path):
    with pytest.raises(SchemaError):
        DemographicsSchema((("f", ("x", "x")),))
    path = tmp_path / "schema.csv"
    path.write_text("f,x\nf,x\n", encoding="utf-8")
    with pytest.raises(SchemaError):
        load_schema(path)


def test_demographics_round_trip(tmp_path, tiny_schema, tiny_profiles):
    path = tmp_path / "demo.csv"
    write_demographics(path, tiny_profiles, tiny_schema)
    back = load_demographics(path, tiny_schema)
    assert back == tiny_profiles


def test_demographics_rejects_values_outside_schema(tmp_path, tiny_schema):
    path = tmp_path / "demo.csv"
    path.write_text("user_id,segment\nann,z\n", encoding="utf-8")
    with pytest.raises(SchemaError):
        load_demographics(path, tiny_schema)


def test_encode_demographics_one_hot(tiny_schema):
    vec = encode_demographics(UserProfile("x", {"segment": "b", "cadence": "frequent"}), tiny_schema)
    assert vec.tolist() == [0.0, 1.0, 1.0, 0.0]
    # missing field leaves its block at zero
    vec = encode_demographics(UserProfile("x", {"cadence": "occasional"}), tiny_schema)
    assert vec.tolist() == [0.0, 0.0, 0.0, 1.0]
    with pytest.raises(SchemaError):
        encode_demographics(UserProfile("x", {"segment": "zzz"}), tiny_schema)


# -- index and frequency/recency


def test_frequency_recency_by_hand(tiny_records):
    # ann attended 2021-01-05, 01-20, 03-01, 06-10
    freq, rec = compute_frequency_recency(tiny_records, "ann", Date(2021, 7, 1), 365)
    assert (freq, rec) == (4, 21)  # 2021-06-10 is 21 days before as_of
    freq, rec = compute_frequency_recency(tiny_records, "ann", Date(2021, 3, 1), 365)
    assert (freq, rec) == (2, 40)  # events on as_of itself are excluded
    freq, rec = compute_frequency_recency(tiny_records, "ann", Date(2021, 2, 1), 20)
    assert (freq, rec) == (1, 12)  # window drops the january 5 visit
    freq, rec = compute_frequency_recency(tiny_records, "nobody", Date(2021, 7, 1), 365)
    assert (freq, rec) == (0, 365)


def test_index_membership_and_attendees(tiny_records):
    index = AttendanceIndex(tiny_records)
    assert index.users == ["ann", "bob", "cat"]
    assert index.movies == ["m1", "m2", "m3", "m4"]
    assert ("ann", "m2") in index.pair_set
    assert ("cat", "m1") not in index.pair_set
    assert index.movie_attendees["m4"] == {"ann", "bob", "cat"}


def test_user_events_before_is_strict(tiny_records):
    index = AttendanceIndex(tiny_records)
    dates, movies = index.user_events_before("ann", Date(2021, 3, 1))
    assert movies == ["m1", "m2"]
    assert len(dates) == 2


def test_index_default_as_of_is_first_attendance(tiny_records):
    index = AttendanceIndex(tiny_records)
    assert index.movie_as_of["m3"] == Date(2021, 2, 14)
    explicit = {m: Date(2022, 1, 1) for m in index.movies}
    assert AttendanceIndex(tiny_records, movie_as_of=explicit).movie_as_of == explicit


# -- samplers


def test_training_batch_even_mix_and_validity(tiny_records):
    index = AttendanceIndex(tiny_records)
    batch = sample_training_batch(index, 20, seed=0)
    assert len(batch) == 20
    labels = [p.label for p in batch]
    assert sum(labels) == 10
    for pair in batch:
        member = (pair.user_id, pair.movie_id) in index.pair_set
        assert member == bool(pair.label)
        assert pair.as_of == index.movie_as_of[pair.movie_id]


def test_training_batch_deterministic(tiny_records):
    index = AttendanceIndex(tiny_records)
    assert sample_training_batch(index, 16, seed=4) == sample_training_batch(index, 16, seed=4)
    assert sample_training_batch(index, 16, seed=4) != sample_training_batch(index, 16, seed=5)


def test_training_batch_rejects_odd_or_tiny_sizes(tiny_records):
    index = AttendanceIndex(tiny_records)
    with pytest.raises(ValueError):
        sample_training_batch(index, 7, seed=0)
    with pytest.raises(ValueError):
        sample_training_batch(index, 0, seed=0)


def test_training_batch_dense_matrix_fails_loudly():
    # every user attended every movie: no negative exists
    records = [
        AttendanceRecord(Date(2021, 1, 1), u, m)
        for u in ("u1", "u2")
        for m in ("m1", "m2")
    ]
    with pytest.raises(SamplingError):
        sample_training_batch(AttendanceIndex(records), 4, seed=0)


def test_eval_set_ratio_and_no_false_negatives(tiny_records):
    index = AttendanceIndex(tiny_records)
    # a larger population (attending an unrelated movie) so negatives exist
    extra = [AttendanceRecord(Date(2021, 1, 2), f"x{i}", "m9") for i in range(8)]
    full = AttendanceIndex(tiny_records + extra)
    pairs = sample_eval_set(index, full, neg_per_pos=3, seed=1)
    positives = [p for p in pairs if p.label == 1]
    negatives = [p for p in pairs if p.label == 0]
    assert len(positives) == len(index.pairs)
    assert len(negatives) == 3 * len(positives)
    for p in negatives:
        assert (p.user_id, p.movie_id) not in full.pair_set
    # negatives for one positive share the movie and as-of date
    by_movie = Counter(p.movie_id for p in negatives)
    for movie_id, count in by_movie.items():
        assert count % 3 == 0


def test_eval_set_candidate_pool_restriction(tiny_records):
    index = AttendanceIndex(tiny_records)
    extra = [AttendanceRecord(Date(2021, 1, 2), f"x{i}", "m9") for i in range(12)]
    full = AttendanceIndex(tiny_records + extra)
    pool = [f"x{i}" for i in range(12)]
    pairs = sample_eval_set(index, full, neg_per_pos=2, seed=1, candidate_users=pool)
    for p in pairs:
        if p.label == 0:
            assert p.user_id in pool


def test_eval_set_fails_when_negatives_scarce(tiny_records):
    index = AttendanceIndex(tiny_records)
    with pytest.raises(EvaluationError):
        # only 3 users total and every one attended m4
        sample_eval_set(index, index, neg_per_pos=2, seed=0)
