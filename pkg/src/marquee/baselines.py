"""Comparison models: a frequency/recency logistic regression and a logistic
matrix factorization for implicit feedback.

Both train with the same even-mix batch sampler as the hybrid model and stop
early on validation AUC. The factorization model has no content pathway, so
it cannot score movies outside its table; that is surfaced as an explicit
cold-start-unsupported error rather than a fallback.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import date as Date

import numpy as np
from scipy.special import expit

from . import nn
from .data import AttendanceIndex, DatasetSplit, LabeledPair, sample_training_batch
from .errors import (
    ColdStartUnsupportedError,
    ConfigError,
    EvaluationError,
    TrainingError,
)
from .model import (
    MODE_COLD_START,
    Featurizer,
    TrainConfig,
    validation_pairs,
)
from .rng import child_generator

logger = logging.getLogger(__name__)

DEFAULT_PMF_K = 32
DEFAULT_PMF_L2 = 1e-3

_TAG_RF_STATS = 41
_TAG_RF_BATCH = 42
_TAG_PMF_INIT = 43
_TAG_PMF_BATCH = 44


def _softplus(x):
    return np.logaddexp(0.0, x)


def _bce_and_dlogit(logits, labels):
    loss = float(np.mean(labels * _softplus(-logits) + (1.0 - labels) * _softplus(logits)))
    dlogit = (expit(logits) - labels) / len(labels)
    return loss, dlogit


def _fit_loop(config: TrainConfig, steps_per_epoch: int, step_fn, val_fn, snapshot_fn):
    """Shared epoch loop: run steps, score validation, keep the best state,
    stop after `patience` epochs without improvement.

    Returns (best snapshot, history rows, best epoch, best AUC).
    """
    best = snapshot_fn()
    best_auc = -math.inf
    best_epoch = 0
    stale = 0
    history: list[dict] = []
    for epoch in range(1, config.max_epochs + 1):
        losses = [step_fn(epoch, s) for s in range(steps_per_epoch)]
        val_auc = val_fn()
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_auc": val_auc})
        if val_auc > best_auc:
            best_auc, best_epoch, stale = val_auc, epoch, 0
            best = snapshot_fn()
        else:
            stale += 1
        if stale >= config.patience:
            break
    return best, history, best_epoch, best_auc


@dataclass(eq=False)
class RfParams:
    """Logistic regression over [log(1+freq), -recency/window]."""

    weights: np.ndarray  # (w_freq, w_rec, bias)
    feature_stats: np.ndarray  # row 0 means, row 1 stds
    window_days: int

    def validate(self) -> None:
        if self.weights.shape != (3,) or self.feature_stats.shape != (2, 2):
            raise ConfigError("RF parameter shapes are (3,) weights and (2, 2) stats")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.feature_stats))):
            raise ConfigError("RF parameters contain non-finite values")


def rf_raw_features(freq, rec, window_days: int) -> np.ndarray:
    return np.stack(
        [np.log1p(np.asarray(freq, dtype=np.float64)), -np.asarray(rec, dtype=np.float64) / window_days],
        axis=1,
    )


def rf_score(params: RfParams, freq, rec) -> np.ndarray:
    raw = rf_raw_features(freq, rec, params.window_days)
    z = (raw - params.feature_stats[0]) / params.feature_stats[1]
    return expit(z @ params.weights[:2] + params.weights[2])


def _pair_freq_rec(featurizer: Featurizer, pairs) -> tuple[np.ndarray, np.ndarray]:
    freq = np.zeros(len(pairs))
    rec = np.zeros(len(pairs))
    for i, pair in enumerate(pairs):
        _, freq[i], rec[i] = featurizer.indexed_history(pair.user_id, pair.movie_id, pair.as_of)
    return freq, rec


def train_rf(
    split: DatasetSplit,
    featurizer: Featurizer,
    config: TrainConfig,
) -> tuple[RfParams, list[dict]]:
    """Gradient-descent fit of the two-feature logistic regression."""
    from .evaluation import auc

    index = featurizer.train_index
    if not index.records:
        raise ConfigError("training requires a non-empty train partition")
    stats_pairs = sample_training_batch(
        index, min(2048, 2 * max(1, len(index.pairs))), child_generator(config.seed, _TAG_RF_STATS)
    )
    raw = rf_raw_features(*_pair_freq_rec(featurizer, stats_pairs), config.window_days)
    stats = np.stack([raw.mean(axis=0), np.maximum(raw.std(axis=0), 1e-8)])

    params = RfParams(np.zeros(3), stats, config.window_days)
    optimizer = nn.OptimizerState(kind=config.optimizer, learning_rate=config.learning_rate)

    val_pairs = validation_pairs(split, index, config)
    val_freq, val_rec = _pair_freq_rec(featurizer, val_pairs)
    val_labels = np.array([p.label for p in val_pairs])
    if val_labels.min() == val_labels.max():
        raise TrainingError("validation labels are single-class; cannot monitor AUC")

    def step(epoch, s):
        pairs = sample_training_batch(
            index, config.batch_size, child_generator(config.seed, _TAG_RF_BATCH, epoch, s)
        )
        freq, rec = _pair_freq_rec(featurizer, pairs)
        z = (rf_raw_features(freq, rec, config.window_days) - stats[0]) / stats[1]
        labels = np.array([float(p.label) for p in pairs])
        logits = z @ params.weights[:2] + params.weights[2]
        loss, dlogit = _bce_and_dlogit(logits, labels)
        grad = np.concatenate([z.T @ dlogit, [dlogit.sum()]])
        params.weights = nn.optimizer_step(optimizer, [params.weights], [grad])[0]
        return loss

    def val_auc():
        return auc(rf_score(params, val_freq, val_rec), val_labels)

    steps = config.steps_per_epoch or max(1, -(-len(index.pairs) // config.batch_size))
    best, history, _, _ = _fit_loop(
        config, steps, step, val_auc, lambda: RfParams(params.weights.copy(), stats.copy(), config.window_days)
    )
    best.validate()
    return best, history


@dataclass(eq=False)
class PmfParams:
    """Factor tables for logistic matrix factorization; ids sorted."""

    k: int
    user_ids: tuple[str, ...]
    user_table: np.ndarray
    movie_ids: tuple[str, ...]
    movie_table: np.ndarray
    bias: float
    _user_pos: dict[str, int] = field(init=False, repr=False)
    _movie_pos: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.user_table.shape != (len(self.user_ids), self.k):
            raise ConfigError("user table shape does not match ids x k")
        if self.movie_table.shape != (len(self.movie_ids), self.k):
            raise ConfigError("movie table shape does not match ids x k")
        self._user_pos = {u: i for i, u in enumerate(self.user_ids)}
        self._movie_pos = {m: i for i, m in enumerate(self.movie_ids)}

    def user_row(self, user_id: str) -> int:
        try:
            return self._user_pos[user_id]
        except KeyError:
            raise EvaluationError(f"user {user_id!r} not in the factor table") from None

    def movie_row(self, movie_id: str) -> int:
        try:
            return self._movie_pos[movie_id]
        except KeyError:
            raise ColdStartUnsupportedError(
                f"cold-start unsupported: movie {movie_id!r} not in the factor table"
            ) from None

    def validate(self) -> None:
        for name, arr in (("user_table", self.user_table), ("movie_table", self.movie_table)):
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} contains non-finite values")
        if not math.isfinite(self.bias):
            raise ConfigError("bias is non-finite")


def pmf_predict(params: PmfParams, user_id: str, movie_id: str) -> float:
    u = params.user_table[params.user_row(user_id)]
    m = params.movie_table[params.movie_row(movie_id)]
    return float(expit(u @ m + params.bias))


def train_pmf(
    split: DatasetSplit,
    featurizer: Featurizer,
    config: TrainConfig,
    k: int = DEFAULT_PMF_K,
    l2: float = DEFAULT_PMF_L2,
) -> tuple[PmfParams, list[dict]]:
    """Logistic MF on the implicit matrix: sigmoid(u·m + bias), mean
    cross-entropy plus per-interaction L2 on the referenced factor rows.
    """
    from .evaluation import auc

    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    index = featurizer.train_index
    if not index.records:
        raise ConfigError("training requires a non-empty train partition")
    rng = child_generator(config.seed, _TAG_PMF_INIT)
    scale = 0.1 / math.sqrt(k)
    user_ids = tuple(index.users)
    movie_ids = tuple(index.movies)
    P = rng.normal(0.0, scale, size=(len(user_ids), k))
    Q = rng.normal(0.0, scale, size=(len(movie_ids), k))
    bias = np.zeros(1)
    optimizer = nn.OptimizerState(kind=config.optimizer, learning_rate=config.learning_rate)

    val_pairs = validation_pairs(split, index, config)
    val_u = np.array([index.user_pos[p.user_id] for p in val_pairs], dtype=np.int64)
    val_m = np.array([index.movie_pos[p.movie_id] for p in val_pairs], dtype=np.int64)
    val_labels = np.array([p.label for p in val_pairs])

    state = {"P": P, "Q": Q, "b": bias}

    def step(epoch, s):
        pairs = sample_training_batch(
            index, config.batch_size, child_generator(config.seed, _TAG_PMF_BATCH, epoch, s)
        )
        ui = np.array([index.user_pos[p.user_id] for p in pairs], dtype=np.int64)
        mi = np.array([index.movie_pos[p.movie_id] for p in pairs], dtype=np.int64)
        labels = np.array([float(p.label) for p in pairs])
        pu = state["P"][ui]
        qm = state["Q"][mi]
        logits = np.einsum("ij,ij->i", pu, qm) + state["b"][0]
        loss, dlogit = _bce_and_dlogit(logits, labels)
        # Per-interaction penalty inside the batch mean, the usual MF
        # objective. Penalizing whole tables at full strength against a
        # mean-scaled data term lets the reg pull dominate and collapses
        # both factors to the zero saddle.
        n = labels.size
        dP = np.zeros_like(state["P"])
        dQ = np.zeros_like(state["Q"])
        np.add.at(dP, ui, dlogit[:, None] * qm + (2.0 * l2 / n) * pu)
        np.add.at(dQ, mi, dlogit[:, None] * pu + (2.0 * l2 / n) * qm)
        db = np.array([dlogit.sum()])
        reg = l2 * float(np.sum(pu * pu) + np.sum(qm * qm)) / n
        new = nn.optimizer_step(optimizer, [state["P"], state["Q"], state["b"]], [dP, dQ, db])
        state["P"], state["Q"], state["b"] = new
        return loss + reg

    def val_auc():
        logits = (
            np.einsum("ij,ij->i", state["P"][val_u], state["Q"][val_m]) + state["b"][0]
        )
        return auc(expit(logits), val_labels)

    def snapshot():
        return PmfParams(
            k, user_ids, state["P"].copy(), movie_ids, state["Q"].copy(), float(state["b"][0])
        )

    steps = config.steps_per_epoch or max(1, -(-len(index.pairs) // config.batch_size))
    best, history, _, _ = _fit_loop(config, steps, step, val_auc, snapshot)
    best.validate()
    return best, history


@dataclass
class RfScorer:
    """Frequency/recency model adapter; mode-agnostic, so cold-start works."""

    params: RfParams
    featurizer: Featurizer
    name: str = "rf"
    supports_coldstart: bool = True

    def in_matrix_movies(self):
        return None  # scores any movie

    def score(self, pairs: list[tuple[str, str, Date]], mode: str) -> np.ndarray:
        as_pairs = [LabeledPair(u, m, 0, d) for u, m, d in pairs]
        freq, rec = _pair_freq_rec(self.featurizer, as_pairs)
        return rf_score(self.params, freq, rec)


@dataclass
class PmfScorer:
    params: PmfParams
    name: str = "pmf"
    supports_coldstart: bool = False

    def in_matrix_movies(self) -> set[str]:
        return set(self.params.movie_ids)

    def score(self, pairs: list[tuple[str, str, Date]], mode: str) -> np.ndarray:
        if mode == MODE_COLD_START:
            raise ColdStartUnsupportedError("cold-start unsupported: no content pathway")
        ui = np.array([self.params.user_row(u) for u, _, _ in pairs], dtype=np.int64)
        mi = np.array([self.params.movie_row(m) for _, m, _ in pairs], dtype=np.int64)
        logits = (
            np.einsum("ij,ij->i", self.params.user_table[ui], self.params.movie_table[mi])
            + self.params.bias
        )
        return expit(logits)
