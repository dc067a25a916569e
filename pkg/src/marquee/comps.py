"""Comp tables: which movies were attended by a target movie's predicted
top audience.

The target is scored content-only (the use case is positioning an unreleased
film from its trailer), the top-k users by probability are collected, and
every other movie is ranked by the share of those users who attended it. An
"actual" table swaps the predicted audience for the movie's real attendees,
which makes predicted and actual tables directly comparable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date as Date

from .data import AttendanceIndex
from .errors import EvaluationError
from .model import MODE_COLD_START

DEFAULT_K_USERS = 10_000
DEFAULT_TABLE_SIZE = 20


@dataclass(frozen=True)
class CompTable:
    target_movie_id: str
    mode: str
    k_users: int
    entries: tuple[tuple[str, float], ...]  # (movie_id, attendee share), share desc

    @property
    def movie_ids(self) -> tuple[str, ...]:
        return tuple(m for m, _ in self.entries)


def default_k_users(population: int) -> int:
    """10,000 audience members, or 10% of the population when that is less."""
    return max(1, min(DEFAULT_K_USERS, population // 10 or 1))


def top_attendees(
    scorer,
    target_movie_id: str,
    as_of: Date,
    candidate_users: list[str],
    k: int,
) -> list[str]:
    """The k users most likely to attend, scored from the trailer alone;
    ties broken by user_id so the ranking is reproducible.
    """
    if not candidate_users:
        raise EvaluationError("no candidate users to rank")
    users = sorted(candidate_users)
    if k < 1 or k > len(users):
        raise EvaluationError(f"k must be in [1, {len(users)}], got {k}")
    scores = scorer.score([(u, target_movie_id, as_of) for u in users], MODE_COLD_START)
    order = sorted(range(len(users)), key=lambda i: (-scores[i], users[i]))
    return [users[i] for i in order[:k]]


def comp_table_from_users(
    target_movie_id: str,
    users: list[str],
    index: AttendanceIndex,
    n_movies: int,
    mode: str,
    k_users: int | None = None,
) -> CompTable:
    """Share of the given users attending each other movie, best n_movies."""
    if not users:
        raise EvaluationError("cannot build a comp table from zero users")
    user_set = set(users)
    counts: dict[str, int] = {}
    for movie_id, attendees in index.movie_attendees.items():
        if movie_id == target_movie_id:
            continue
        n = len(attendees & user_set)
        if n:
            counts[movie_id] = n
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))[:n_movies]
    entries = tuple((m, c / len(users)) for m, c in ranked)
    return CompTable(target_movie_id, mode, k_users if k_users is not None else len(users), entries)


def comp_table(
    scorer,
    target_movie_id: str,
    as_of: Date,
    index: AttendanceIndex,
    k_users: int | None = None,
    n_movies: int = DEFAULT_TABLE_SIZE,
    candidate_users: list[str] | None = None,
) -> CompTable:
    """Predicted comp table for a target movie.

    ``index`` supplies both the candidate audience (unless one is given) and
    the attendance used for shares.
    """
    candidates = candidate_users if candidate_users is not None else index.users
    k = k_users if k_users is not None else default_k_users(len(candidates))
    top = top_attendees(scorer, target_movie_id, as_of, candidates, k)
    return comp_table_from_users(target_movie_id, top, index, n_movies, MODE_COLD_START, k)


def actual_comp_table(
    target_movie_id: str,
    index: AttendanceIndex,
    n_movies: int = DEFAULT_TABLE_SIZE,
) -> CompTable:
    """Same ranking computed from the movie's real attendees."""
    attendees = sorted(index.movie_attendees.get(target_movie_id, set()))
    if not attendees:
        raise EvaluationError(f"movie {target_movie_id!r} has no attendees on record")
    return comp_table_from_users(target_movie_id, attendees, index, n_movies, "actual", len(attendees))


def comp_overlap(predicted: CompTable, actual: CompTable, n: int) -> int:
    """How many of the top-n movies the two tables share."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n > len(predicted.entries) or n > len(actual.entries):
        raise ValueError(
            f"n={n} exceeds table lengths {len(predicted.entries)}/{len(actual.entries)}"
        )
    return len(set(predicted.movie_ids[:n]) & set(actual.movie_ids[:n]))


def write_comp_table(path, table: CompTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "movie_id", "share"])
        for rank, (movie_id, share) in enumerate(table.entries, start=1):
            writer.writerow([rank, movie_id, f"{share:.6f}"])


COMPS_CSV_HEADER = ["target_movie_id", "mode", "rank", "movie_id", "share"]


def write_comp_tables(path, tables: list[CompTable]) -> None:
    """All tables in one CSV, one row per (target, rank)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COMPS_CSV_HEADER)
        for table in tables:
            for rank, (movie_id, share) in enumerate(table.entries, start=1):
                writer.writerow([table.target_movie_id, table.mode, rank, movie_id, f"{share:.6f}"])


def comp_text(predicted: CompTable, actual: CompTable | None = None) -> str:
    """Side-by-side predicted/actual listing."""
    lines = [f"target: {predicted.target_movie_id}  (audience: top {predicted.k_users} predicted)"]
    if actual is None:
        lines.append(f"{'rank':>4}  {'movie':<16} {'share':>7}")
        for i, (m, s) in enumerate(predicted.entries, start=1):
            lines.append(f"{i:>4}  {m:<16} {s:>7.3f}")
        return "\n".join(lines) + "\n"
    lines.append(f"{'rank':>4}  {'predicted':<16} {'share':>7}   {'actual':<16} {'share':>7}")
    n = max(len(predicted.entries), len(actual.entries))
    for i in range(n):
        left = predicted.entries[i] if i < len(predicted.entries) else ("-", float("nan"))
        right = actual.entries[i] if i < len(actual.entries) else ("-", float("nan"))
        lines.append(
            f"{i + 1:>4}  {left[0]:<16} {left[1]:>7.3f}   {right[0]:<16} {right[1]:>7.3f}"
        )
    return "\n".join(lines) + "\n"
