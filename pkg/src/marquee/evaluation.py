"""AUC and the two evaluation protocols.

In-matrix evaluation scores held-out pairs for movies the model saw during
training; cold-start evaluation scores the chronological movie holdout with
the content-only path. Both build a 1:`neg_per_pos` eval set with the shared
sampler so every model is measured on the same pairs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    DEFAULT_NEG_PER_POS,
    AttendanceIndex,
    DatasetSplit,
    LabeledPair,
    sample_eval_set,
)
from .errors import ColdStartUnsupportedError, EvaluationError, MetricError, ShapeError
from .rng import child_generator

PROTOCOL_IN_MATRIX = "in_matrix"
PROTOCOL_COLD_START = "cold_start"

_TAG_EVAL_IN = 21
_TAG_EVAL_COLD = 22

EVAL_CSV_HEADER = ["protocol", "model", "auc", "n_pos", "n_neg", "seed"]


def auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative; ties 0.5.

    Rank-sum formulation with tie-averaged ranks, O(n log n).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or y.ndim != 1:
        raise ShapeError("scores and labels must be 1-D")
    if s.shape[0] != y.shape[0]:
        raise ShapeError(f"length mismatch: {s.shape[0]} scores vs {y.shape[0]} labels")
    if not np.all(np.isfinite(s)):
        raise MetricError("scores contain non-finite values")
    if not np.isin(y, (0, 1)).all():
        raise MetricError("labels must be 0 or 1")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"AUC undefined: {n_pos} positives, {n_neg} negatives")
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    avg_ranks = starts + (counts + 1) / 2.0  # mean rank within each tie group
    ranks = avg_ranks[inverse]
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class EvalReport:
    protocol: str
    model: str
    auc: float
    n_pos: int
    n_neg: int
    seed: int


def _full_index(split: DatasetSplit) -> AttendanceIndex:
    return AttendanceIndex(split.non_coldstart + split.coldstart)


def build_eval_pairs(
    split: DatasetSplit,
    protocol: str,
    neg_per_pos: int = DEFAULT_NEG_PER_POS,
    seed: int = 0,
) -> list[LabeledPair]:
    """Model-independent eval set for a protocol.

    Positives are restricted to users with train-partition attendance (so
    factor models can score them); for in_matrix, movies without a train
    record are dropped too. Negatives are drawn from train-known users that
    never attended the movie.
    """
    train_index = AttendanceIndex(split.train, movie_as_of=split.movie_as_of)
    if protocol == PROTOCOL_IN_MATRIX:
        source = split.test
        tag = _TAG_EVAL_IN
        keep_movie = lambda m: m in train_index.movie_pos  # noqa: E731
    elif protocol == PROTOCOL_COLD_START:
        source = split.coldstart
        tag = _TAG_EVAL_COLD
        keep_movie = lambda m: True  # noqa: E731
    else:
        raise EvaluationError(f"unknown protocol {protocol!r}")
    if not source:
        raise EvaluationError(f"no records available for the {protocol} protocol")
    kept = [
        r
        for r in source
        if r.user_id in train_index.user_pos and keep_movie(r.movie_id)
    ]
    if not kept:
        raise EvaluationError(f"no scoreable positives for the {protocol} protocol")
    eval_index = AttendanceIndex(kept, movie_as_of=split.movie_as_of)
    return sample_eval_set(
        eval_index,
        _full_index(split),
        neg_per_pos=neg_per_pos,
        seed=child_generator(seed, tag),
        candidate_users=train_index.users,
    )


def _evaluate(scorer, split, protocol, mode, seed, neg_per_pos) -> EvalReport:
    pairs = build_eval_pairs(split, protocol, neg_per_pos, seed)
    triples = [(p.user_id, p.movie_id, p.as_of) for p in pairs]
    labels = np.array([p.label for p in pairs])
    scores = scorer.score(triples, mode)
    return EvalReport(
        protocol=protocol,
        model=scorer.name,
        auc=auc(scores, labels),
        n_pos=int(labels.sum()),
        n_neg=int(len(labels) - labels.sum()),
        seed=seed,
    )


def evaluate_in_matrix(scorer, split: DatasetSplit, seed: int = 0, neg_per_pos: int = DEFAULT_NEG_PER_POS) -> EvalReport:
    from .model import MODE_IN_MATRIX

    return _evaluate(scorer, split, PROTOCOL_IN_MATRIX, MODE_IN_MATRIX, seed, neg_per_pos)


def evaluate_coldstart(scorer, split: DatasetSplit, seed: int = 0, neg_per_pos: int = DEFAULT_NEG_PER_POS) -> EvalReport:
    """Cold-start protocol; models without a content pathway raise
    ColdStartUnsupportedError (reported as NA upstream).
    """
    from .model import MODE_COLD_START

    if not getattr(scorer, "supports_coldstart", True):
        raise ColdStartUnsupportedError(f"cold-start unsupported for model {scorer.name!r}")
    return _evaluate(scorer, split, PROTOCOL_COLD_START, MODE_COLD_START, seed, neg_per_pos)


def write_eval_reports(path, reports: list[EvalReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EVAL_CSV_HEADER)
        for r in reports:
            writer.writerow([r.protocol, r.model, f"{r.auc:.6f}", r.n_pos, r.n_neg, r.seed])


def load_eval_reports(path) -> list[EvalReport]:
    path = Path(path)
    out: list[EvalReport] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != EVAL_CSV_HEADER:
            raise EvaluationError(f"{path}: unexpected eval report header {header!r}")
        for row in reader:
            out.append(EvalReport(row[0], row[1], float(row[2]), int(row[3]), int(row[4]), int(row[5])))
    return out


def report_text(reports: list[EvalReport]) -> str:
    """Aligned human-readable table; cold-start rows that are unsupported
    should be appended by the caller as auc NA before formatting.
    """
    rows = [("protocol", "model", "auc", "n_pos", "n_neg", "seed")]
    for r in reports:
        rows.append((r.protocol, r.model, f"{r.auc:.4f}", str(r.n_pos), str(r.n_neg), str(r.seed)))
    widths = [max(len(row[i]) for row in rows) for i in range(6)]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    return "\n".join(lines) + "\n"
