"""Hybrid attendance model.

A movie is embedded as a content projection f(pooled trailer frames) plus a
learned per-movie offset; a user as the mean of her attended movies' vectors
plus a demographics projection g. Euclidean distance between the two encodes
propensity, and a small logistic head turns (distance, attendance frequency,
attendance recency) into a probability. Training backpropagates one binary
cross-entropy loss end to end through the head, both MLPs and the offset
table.

Two scoring modes exist. ``in_matrix`` adds stored offsets to every movie
vector involved. ``cold_start`` scores entirely from content projections:
neither the target vector nor the history means read offset values, so cold
scores are bitwise independent of the offset table.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date as Date
from datetime import timedelta

import numpy as np
from scipy.special import expit

from . import kernels, nn
from .data import (
    DEFAULT_NEG_PER_POS,
    DEFAULT_WINDOW_DAYS,
    AttendanceIndex,
    AttendanceRecord,
    DatasetSplit,
    DemographicsSchema,
    LabeledPair,
    UserProfile,
    encode_demographics,
    sample_eval_set,
    sample_training_batch,
)
from .errors import (
    ConfigError,
    DataFormatError,
    MissingOffsetError,
    StateError,
    TrainingError,
)
from .rng import as_generator, child_generator

logger = logging.getLogger(__name__)

MODE_IN_MATRIX = "in_matrix"
MODE_COLD_START = "cold_start"
MODES = (MODE_IN_MATRIX, MODE_COLD_START)

DEFAULT_EMBEDDING_DIM = 32
DEFAULT_HIDDEN_DIMS = (256, 64)
DEFAULT_DROPOUT_P = 0.5
DEFAULT_OFFSET_L2 = 1e-3
STATS_SAMPLE_SIZE = 2048

# rng stream tags (children of the run seed)
_TAG_INIT_F = 11
_TAG_INIT_G = 12
_TAG_STATS = 13
_TAG_BATCH = 14
_TAG_DROPOUT = 15
_TAG_VAL = 16


def _softplus(x):
    return np.logaddexp(0.0, x)


@dataclass(eq=False)
class HybridParams:
    """Everything needed to score: both MLPs, the offset table, the logistic
    head and the frozen standardization stats for its three inputs.

    ``offset_ids`` is sorted and row-aligned with ``offset_table``; every
    train-partition movie gets a row, cold movies never do.
    """

    embedding_dim: int
    f_spec: nn.MlpSpec
    f_state: nn.MlpState
    g_spec: nn.MlpSpec
    g_state: nn.MlpState
    offset_ids: tuple[str, ...]
    offset_table: np.ndarray
    head: np.ndarray
    feature_stats: np.ndarray | None
    window_days: int = DEFAULT_WINDOW_DAYS
    dropout_p: float = DEFAULT_DROPOUT_P
    offset_l2: float = DEFAULT_OFFSET_L2
    _offset_pos: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(sorted(self.offset_ids)) != tuple(self.offset_ids):
            raise ConfigError("offset_ids must be sorted")
        if self.offset_table.shape != (len(self.offset_ids), self.embedding_dim):
            raise ConfigError(
                f"offset table shape {self.offset_table.shape} does not match "
                f"{len(self.offset_ids)} ids x dim {self.embedding_dim}"
            )
        self._offset_pos = {m: i for i, m in enumerate(self.offset_ids)}

    def has_offset(self, movie_id: str) -> bool:
        return movie_id in self._offset_pos

    def offset(self, movie_id: str) -> np.ndarray:
        try:
            return self.offset_table[self._offset_pos[movie_id]].copy()
        except KeyError:
            raise MissingOffsetError(f"movie {movie_id!r} has no stored offset") from None

    def require_stats(self) -> np.ndarray:
        if self.feature_stats is None:
            raise StateError("head feature stats not fitted")
        return self.feature_stats

    def copy(self) -> "HybridParams":
        return replace(
            self,
            f_state=self.f_state.copy(),
            g_state=self.g_state.copy(),
            offset_table=self.offset_table.copy(),
            head=self.head.copy(),
            feature_stats=None if self.feature_stats is None else self.feature_stats.copy(),
        )

    def validate(self) -> None:
        self.f_state.check_shapes(self.f_spec)
        self.g_state.check_shapes(self.g_spec)
        if self.f_spec.out_dim != self.embedding_dim or self.g_spec.out_dim != self.embedding_dim:
            raise ConfigError("f and g output dims must equal embedding_dim")
        for name, arr in (("offset_table", self.offset_table), ("head", self.head)):
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} contains non-finite values")
        if self.head.shape != (4,):
            raise ConfigError("head must hold (w_dist, w_freq, w_rec, bias)")


@dataclass(frozen=True)
class ScoreBreakdown:
    distance: float
    freq_feature: float
    rec_feature: float
    logit: float
    probability: float


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    max_epochs: int = 40
    patience: int = 5
    learning_rate: float = 3e-3
    offset_l2: float = DEFAULT_OFFSET_L2
    dropout_p: float = DEFAULT_DROPOUT_P
    seed: int = 0
    embedding_dim: int = DEFAULT_EMBEDDING_DIM
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN_DIMS
    activation: str = "relu"
    optimizer: str = "adam"
    window_days: int = DEFAULT_WINDOW_DAYS
    neg_per_pos: int = DEFAULT_NEG_PER_POS
    val_positives_cap: int = 2000
    steps_per_epoch: int | None = None

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.offset_l2 < 0:
            raise ConfigError("offset_l2 must be >= 0")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")


class Featurizer:
    """Binds a trained-on attendance index with video vectors, demographics
    and the recency window; computes every per-pair input the model needs.

    History and frequency/recency always come from the bound (train) index,
    so evaluation pairs never see their own partition's records.
    """

    def __init__(
        self,
        train_index: AttendanceIndex,
        video_vectors: dict[str, np.ndarray],
        profiles: dict[str, UserProfile],
        schema: DemographicsSchema,
        window_days: int = DEFAULT_WINDOW_DAYS,
    ):
        self.train_index = train_index
        self.video_vectors = video_vectors
        self.profiles = profiles
        self.schema = schema
        self.window_days = int(window_days)
        missing = [m for m in train_index.movies if m not in video_vectors]
        if missing:
            raise DataFormatError(
                f"{len(missing)} train movies have no video vector (first: {missing[0]!r})"
            )
        self.train_movie_ids = list(train_index.movies)
        self.frame_pool_dim = (
            len(next(iter(video_vectors.values()))) if video_vectors else 0
        )
        self._train_x: np.ndarray | None = None
        self._dem_cache: dict[str, np.ndarray] = {}
        self._pair_cache: dict[tuple[str, str], tuple[np.ndarray, int, int]] = {}

    @property
    def train_x(self) -> np.ndarray:
        if self._train_x is None:
            self._train_x = np.ascontiguousarray(
                np.stack([self.video_vectors[m] for m in self.train_movie_ids])
                if self.train_movie_ids
                else np.zeros((0, self.frame_pool_dim))
            )
        return self._train_x

    def video_vector(self, movie_id: str) -> np.ndarray:
        try:
            return self.video_vectors[movie_id]
        except KeyError:
            raise DataFormatError(f"no video vector for movie {movie_id!r}") from None

    def demographics_vector(self, user_id: str) -> np.ndarray:
        vec = self._dem_cache.get(user_id)
        if vec is None:
            profile = self.profiles.get(user_id) or UserProfile(user_id)
            vec = encode_demographics(profile, self.schema)
            self._dem_cache[user_id] = vec
        return vec

    def indexed_history(self, user_id: str, movie_id: str, as_of: Date):
        """(train-table row positions of the user's distinct prior movies with
        the target excluded, frequency, recency). Cached per (user, movie);
        valid because each movie has a single as-of date.
        """
        key = (user_id, movie_id)
        hit = self._pair_cache.get(key)
        if hit is not None:
            return hit
        _, movies = self.train_index.user_events_before(user_id, as_of)
        pos = sorted(
            {
                self.train_index.movie_pos[m]
                for m in movies
                if m != movie_id and m in self.train_index.movie_pos
            }
        )
        freq, rec = self.train_index.frequency_recency(user_id, as_of, self.window_days)
        entry = (np.asarray(pos, dtype=np.int64), freq, rec)
        self._pair_cache[key] = entry
        return entry

    def history_ids(self, user_id: str, movie_id: str, as_of: Date) -> list[str]:
        pos, _, _ = self.indexed_history(user_id, movie_id, as_of)
        return [self.train_movie_ids[i] for i in pos]


def movie_vector(params: HybridParams, x, movie_id: str | None, mode: str) -> np.ndarray:
    """f(x) plus the stored offset in in_matrix mode; bare f(x) in cold_start
    mode, which never reads the offset table.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    x = nn.as_vector(x, params.f_spec.in_dim)
    proj, _ = nn.mlp_forward(params.f_spec, params.f_state, x)
    if mode == MODE_COLD_START:
        return proj
    if movie_id is None:
        raise MissingOffsetError("in_matrix mode needs a movie_id with a stored offset")
    return proj + params.offset(movie_id)


def user_vector(
    params: HybridParams,
    history,
    demographics,
    exclude_movie_id: str | None = None,
    mode: str = MODE_IN_MATRIX,
) -> np.ndarray:
    """Mean of the history movies' vectors plus g(demographics).

    ``history`` is an iterable of (movie_id, pooled frame vector). Movies
    equal to ``exclude_movie_id`` or absent from the offset table are
    skipped; an empty effective history contributes a zero mean. ``mode``
    selects whether the history vectors include offsets, keeping the whole
    cold_start scoring path independent of stored offset values.
    """
    kept = sorted(
        ((mid, x) for mid, x in history if mid != exclude_movie_id and params.has_offset(mid)),
        key=lambda item: item[0],
    )
    if kept:
        vecs = np.stack([movie_vector(params, x, mid, mode) for mid, x in kept])
        h = vecs.sum(axis=0) / len(kept)
    else:
        h = np.zeros(params.embedding_dim)
    dem = nn.as_vector(demographics, params.g_spec.in_dim)
    g, _ = nn.mlp_forward(params.g_spec, params.g_state, dem)
    return h + g


def propensity_distance(u, v) -> float:
    u = nn.as_vector(u)
    v = nn.as_vector(v, len(u))
    return float(np.sqrt(kernels.squared_distances(u[None, :], v[None, :])[0]))


def head_features(distance: float, frequency: float, recency: float, window_days: int) -> np.ndarray:
    """The three raw head inputs before standardization."""
    return np.array([-(distance**2), math.log1p(frequency), -recency / window_days])


def predict_probability(
    params: HybridParams,
    distance: float,
    frequency: float,
    recency: float,
    mode: str = "eval",
    seed=0,
) -> ScoreBreakdown:
    """Standardize the head features, optionally apply train-mode dropout,
    and run the logistic head.
    """
    stats = params.require_stats()
    raw = head_features(distance, frequency, recency, params.window_days)
    z = (raw - stats[0]) / stats[1]
    zt = nn.apply_dropout(z, params.dropout_p, mode, seed)
    logit = float(zt @ params.head[:3] + params.head[3])
    return ScoreBreakdown(
        distance=float(distance),
        freq_feature=float(z[1]),
        rec_feature=float(z[2]),
        logit=logit,
        probability=float(expit(logit)),
    )


def score_pair(
    params: HybridParams,
    featurizer: Featurizer,
    user_id: str,
    movie_id: str,
    as_of: Date,
    mode: str = MODE_IN_MATRIX,
) -> ScoreBreakdown:
    """Readable single-pair composition of the scoring pipeline (eval mode,
    no dropout). The batched scorer must agree with this to float precision.
    """
    hist_ids = featurizer.history_ids(user_id, movie_id, as_of)
    _, freq, rec = featurizer.indexed_history(user_id, movie_id, as_of)
    x = featurizer.video_vector(movie_id)
    v = movie_vector(params, x, movie_id if mode == MODE_IN_MATRIX else None, mode)
    history = [(mid, featurizer.video_vector(mid)) for mid in hist_ids]
    u = user_vector(params, history, featurizer.demographics_vector(user_id), movie_id, mode)
    dist = propensity_distance(u, v)
    return predict_probability(params, dist, freq, rec, "eval")


def _standardized_features(params: HybridParams, dist2, freq, rec) -> np.ndarray:
    stats = params.require_stats()
    raw = np.stack(
        [-dist2, np.log1p(np.asarray(freq, dtype=np.float64)), -np.asarray(rec, dtype=np.float64) / params.window_days],
        axis=1,
    )
    return (raw - stats[0]) / stats[1]


def _theta_rows_for(params: HybridParams, movie_ids: list[str]) -> np.ndarray:
    """Offset-table row index per movie id, -1 where absent."""
    return np.array([params._offset_pos.get(m, -1) for m in movie_ids], dtype=np.int64)


def score_pairs_batch(
    params: HybridParams,
    featurizer: Featurizer,
    pairs: list[tuple[str, str, Date]],
    mode: str = MODE_IN_MATRIX,
) -> np.ndarray:
    """Probabilities for many (user_id, movie_id, as_of) triples at once.

    One f pass over the train movie table serves every history mean; targets
    get their own pass so cold movies stay out of the table.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if not pairs:
        return np.zeros(0)
    params.require_stats()

    # shared history base: f over the bound train movie table
    F_train, _ = nn.mlp_forward_batch(params.f_spec, params.f_state, featurizer.train_x)
    theta_rows = _theta_rows_for(params, featurizer.train_movie_ids)
    in_table = theta_rows >= 0
    V_hist = F_train.copy()
    if mode == MODE_IN_MATRIX and in_table.any():
        V_hist[in_table] += params.offset_table[theta_rows[in_table]]

    users = sorted({u for u, _, _ in pairs})
    user_row = {u: i for i, u in enumerate(users)}
    dem = np.stack([featurizer.demographics_vector(u) for u in users])
    G, _ = nn.mlp_forward_batch(params.g_spec, params.g_state, dem)

    targets = sorted({m for _, m, _ in pairs})
    target_row = {m: i for i, m in enumerate(targets)}
    X_t = np.stack([featurizer.video_vector(m) for m in targets])
    T, _ = nn.mlp_forward_batch(params.f_spec, params.f_state, X_t)
    if mode == MODE_IN_MATRIX:
        for m in targets:
            if not params.has_offset(m):
                raise MissingOffsetError(f"movie {m!r} has no stored offset")
        T = T + params.offset_table[_theta_rows_for(params, targets)]

    idx_parts: list[np.ndarray] = []
    offsets = np.zeros(len(pairs) + 1, dtype=np.int64)
    freq = np.zeros(len(pairs))
    rec = np.zeros(len(pairs))
    u_rows = np.zeros(len(pairs), dtype=np.int64)
    t_rows = np.zeros(len(pairs), dtype=np.int64)
    total = 0
    for i, (user_id, movie_id, as_of) in enumerate(pairs):
        pos, f_i, r_i = featurizer.indexed_history(user_id, movie_id, as_of)
        if not in_table.all():
            pos = pos[in_table[pos]]
        idx_parts.append(pos)
        total += pos.size
        offsets[i + 1] = total
        freq[i], rec[i] = f_i, r_i
        u_rows[i] = user_row[user_id]
        t_rows[i] = target_row[movie_id]
    idx = np.concatenate(idx_parts) if idx_parts else np.zeros(0, dtype=np.int64)

    H = kernels.segment_mean(V_hist, idx, offsets)
    U = H + G[u_rows]
    dist2 = kernels.squared_distances(U, np.ascontiguousarray(T[t_rows]))
    z = _standardized_features(params, dist2, freq, rec)
    logits = z @ params.head[:3] + params.head[3]
    return expit(logits)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_auc: float


@dataclass
class TrainResult:
    params: HybridParams
    history: list[EpochStats]
    best_epoch: int
    best_val_auc: float


class _EarlyStopper:
    """Tracks the best validation AUC; fires after `patience` stale epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, value: float) -> bool:
        """Returns True when this epoch set a new best."""
        if value > self.best:
            self.best = value
            self.best_epoch = epoch
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


class Trainer:
    """Owns mutable HybridParams plus the optimizer and batch plumbing.

    Single-writer: step() must not run concurrently. Scoring a snapshot of
    the params is read-only and safe from other threads.
    """

    def __init__(self, train_index: AttendanceIndex, featurizer: Featurizer, config: TrainConfig):
        if not train_index.records:
            raise ConfigError("training requires a non-empty train partition")
        self.index = train_index
        self.featurizer = featurizer
        self.config = config
        d = config.embedding_dim
        f_spec = nn.MlpSpec((featurizer.frame_pool_dim, *config.hidden_dims, d), config.activation)
        g_spec = nn.MlpSpec((featurizer.schema.one_hot_width, *config.hidden_dims, d), config.activation)
        self.params = HybridParams(
            embedding_dim=d,
            f_spec=f_spec,
            f_state=nn.init_mlp_state(f_spec, child_generator(config.seed, _TAG_INIT_F)),
            g_spec=g_spec,
            g_state=nn.init_mlp_state(g_spec, child_generator(config.seed, _TAG_INIT_G)),
            offset_ids=tuple(featurizer.train_movie_ids),
            offset_table=np.zeros((len(featurizer.train_movie_ids), d)),
            head=np.zeros(4),
            feature_stats=None,
            window_days=config.window_days,
            dropout_p=config.dropout_p,
            offset_l2=config.offset_l2,
        )
        self.optimizer = nn.OptimizerState(kind=config.optimizer, learning_rate=config.learning_rate)
        self.fit_feature_stats()

    # -- parameter flattening (fixed order: f layers, g layers, offsets, head)

    def params_list(self, params: HybridParams | None = None) -> list[np.ndarray]:
        p = params or self.params
        out: list[np.ndarray] = []
        for state in (p.f_state, p.g_state):
            for w, b in zip(state.weights, state.biases):
                out.extend((w, b))
        out.extend((p.offset_table, p.head))
        return out

    def _write_params(self, arrays: list[np.ndarray]) -> None:
        p = self.params
        it = iter(arrays)
        for state in (p.f_state, p.g_state):
            for layer in range(len(state.weights)):
                state.weights[layer] = next(it)
                state.biases[layer] = next(it)
        p.offset_table = next(it)
        p.head = next(it)

    def _params_view(self, arrays: list[np.ndarray]) -> HybridParams:
        """A HybridParams sharing the given arrays (for grad-check closures)."""
        p = self.params
        it = iter(arrays)
        f_state = nn.MlpState(*self._take_state(it, p.f_state))
        g_state = nn.MlpState(*self._take_state(it, p.g_state))
        return replace(p, f_state=f_state, g_state=g_state, offset_table=next(it), head=next(it))

    @staticmethod
    def _take_state(it, state):
        weights, biases = [], []
        for _ in range(len(state.weights)):
            weights.append(next(it))
            biases.append(next(it))
        return weights, biases

    # -- feature statistics

    def fit_feature_stats(self) -> None:
        """Standardization stats from a seeded pair sample scored with the
        initial parameters; frozen for the rest of training.
        """
        size = min(STATS_SAMPLE_SIZE, 2 * max(1, len(self.index.pairs)))
        pairs = sample_training_batch(self.index, size, child_generator(self.config.seed, _TAG_STATS))
        batch = self._assemble(pairs)
        stats = np.stack([np.zeros(3), np.ones(3)])
        self.params.feature_stats = stats  # identity stats while measuring
        raw = self._raw_features(batch)
        mean = raw.mean(axis=0)
        std = np.maximum(raw.std(axis=0), 1e-8)
        self.params.feature_stats = np.stack([mean, std])

    def _raw_features(self, batch) -> np.ndarray:
        loss_unused, cache = self._forward(self.params_list(), batch, mask=None, want_cache=True)
        return cache["raw"]

    # -- batch assembly

    def _assemble(self, pairs: list[LabeledPair]):
        n = len(pairs)
        labels = np.zeros(n)
        freq = np.zeros(n)
        rec = np.zeros(n)
        t_pos = np.zeros(n, dtype=np.int64)
        users = sorted({p.user_id for p in pairs})
        user_row = {u: i for i, u in enumerate(users)}
        u_rows = np.zeros(n, dtype=np.int64)
        idx_parts: list[np.ndarray] = []
        offsets = np.zeros(n + 1, dtype=np.int64)
        total = 0
        for i, pair in enumerate(pairs):
            labels[i] = pair.label
            pos, f_i, r_i = self.featurizer.indexed_history(pair.user_id, pair.movie_id, pair.as_of)
            idx_parts.append(pos)
            total += pos.size
            offsets[i + 1] = total
            freq[i], rec[i] = f_i, r_i
            t_pos[i] = self.index.movie_pos[pair.movie_id]
            u_rows[i] = user_row[pair.user_id]
        return {
            "pairs": pairs,
            "labels": labels,
            "freq": freq,
            "rec": rec,
            "target_pos": t_pos,
            "user_rows": u_rows,
            "dem": np.stack([self.featurizer.demographics_vector(u) for u in users]),
            "hist_idx": np.concatenate(idx_parts) if idx_parts else np.zeros(0, dtype=np.int64),
            "hist_offsets": offsets,
        }

    # -- forward/backward

    def _forward(self, arrays: list[np.ndarray], batch, mask, want_cache=False):
        """Loss (BCE + offset L2) for explicit parameter arrays; caches the
        intermediates needed by _backward when requested.
        """
        p = self._params_view(arrays)
        X = self.featurizer.train_x
        F, f_cache = nn.mlp_forward_batch(p.f_spec, p.f_state, X)
        V = F + p.offset_table
        G, g_cache = nn.mlp_forward_batch(p.g_spec, p.g_state, batch["dem"])
        H = kernels.segment_mean(V, batch["hist_idx"], batch["hist_offsets"])
        U = H + G[batch["user_rows"]]
        T = np.ascontiguousarray(V[batch["target_pos"]])
        dist2 = kernels.squared_distances(U, T)
        stats = p.require_stats()
        raw = np.stack(
            [-dist2, np.log1p(batch["freq"]), -batch["rec"] / p.window_days], axis=1
        )
        z = (raw - stats[0]) / stats[1]
        zt = z * mask if mask is not None else z
        logits = zt @ p.head[:3] + p.head[3]
        y = batch["labels"]
        bce = float(np.mean(y * _softplus(-logits) + (1.0 - y) * _softplus(logits)))
        loss = bce + p.offset_l2 * float(np.sum(p.offset_table * p.offset_table))
        if not want_cache:
            return loss, None
        cache = {
            "view": p,
            "f_cache": f_cache,
            "g_cache": g_cache,
            "U": U,
            "T": T,
            "zt": zt,
            "z": z,
            "raw": raw,
            "logits": logits,
            "stats": stats,
        }
        return loss, cache

    def _backward(self, batch, mask, cache) -> list[np.ndarray]:
        p = cache["view"]
        y = batch["labels"]
        n = len(y)
        probs = expit(cache["logits"])
        dlogit = (probs - y) / n
        dw_head = np.zeros(4)
        dw_head[:3] = cache["zt"].T @ dlogit
        dw_head[3] = dlogit.sum()
        dzt = np.outer(dlogit, p.head[:3])
        dz = dzt * mask if mask is not None else dzt
        draw = dz / cache["stats"][1]
        ddist2 = -draw[:, 0]
        diff = cache["U"] - cache["T"]
        dU = 2.0 * diff * ddist2[:, None]
        dG = np.zeros((batch["dem"].shape[0], p.embedding_dim))
        np.add.at(dG, batch["user_rows"], dU)
        _, g_weights, g_biases = nn.mlp_backward_batch(p.g_spec, p.g_state, cache["g_cache"], dG)
        n_movies = self.featurizer.train_x.shape[0]
        dV = kernels.segment_mean_backward(dU, batch["hist_idx"], batch["hist_offsets"], n_movies)
        np.add.at(dV, batch["target_pos"], -dU)
        d_theta = dV + 2.0 * p.offset_l2 * p.offset_table
        _, f_weights, f_biases = nn.mlp_backward_batch(p.f_spec, p.f_state, cache["f_cache"], dV)
        grads: list[np.ndarray] = []
        for gw, gb in ((f_weights, f_biases), (g_weights, g_biases)):
            for w, b in zip(gw, gb):
                grads.extend((w, b))
        grads.extend((d_theta, dw_head))
        return grads

    def loss_and_grads(self, arrays: list[np.ndarray], batch, mask=None):
        loss, cache = self._forward(arrays, batch, mask, want_cache=True)
        return loss, self._backward(batch, mask, cache)

    def make_grad_check_fns(self, pairs: list[LabeledPair]):
        """(loss_fn, loss_only) closures over a fixed batch with dropout off,
        shaped for nn.grad_check.
        """
        batch = self._assemble(pairs)
        def loss_fn(arrays):
            return self.loss_and_grads(arrays, batch, mask=None)
        def loss_only(arrays):
            return self._forward(arrays, batch, mask=None)[0]
        return loss_fn, loss_only

    # -- optimization

    def step(self, epoch: int, step_no: int) -> float:
        """Sample a batch, backpropagate, apply one optimizer update."""
        cfg = self.config
        pairs = sample_training_batch(
            self.index, cfg.batch_size, child_generator(cfg.seed, _TAG_BATCH, epoch, step_no)
        )
        batch = self._assemble(pairs)
        mask = None
        if cfg.dropout_p > 0.0:
            drop_rng = child_generator(cfg.seed, _TAG_DROPOUT, epoch, step_no)
            keep = drop_rng.random((len(pairs), 3)) >= cfg.dropout_p
            mask = keep / (1.0 - cfg.dropout_p)
        arrays = self.params_list()
        loss, grads = self.loss_and_grads(arrays, batch, mask)
        if not math.isfinite(loss):
            ids = sorted({p.movie_id for p in pairs})
            raise TrainingError(f"non-finite loss {loss!r}; batch movies: {', '.join(ids)}")
        self._write_params(nn.optimizer_step(self.optimizer, arrays, grads))
        return loss


def build_featurizer(
    split: DatasetSplit,
    video_vectors: dict[str, np.ndarray],
    profiles: dict[str, UserProfile],
    schema: DemographicsSchema,
    window_days: int = DEFAULT_WINDOW_DAYS,
) -> tuple[AttendanceIndex, Featurizer]:
    train_index = AttendanceIndex(split.train, movie_as_of=split.movie_as_of)
    return train_index, Featurizer(train_index, video_vectors, profiles, schema, window_days)


def validation_pairs(
    split: DatasetSplit,
    train_index: AttendanceIndex,
    config: TrainConfig,
) -> list[LabeledPair]:
    """Seeded 1:neg_per_pos validation eval set, capped for speed; positives
    restricted to train-known users and movies so every model can score them.
    """
    val_index = AttendanceIndex(split.validation, movie_as_of=split.movie_as_of)
    known = [
        (u, m)
        for u, m in val_index.pairs
        if u in train_index.user_pos and m in train_index.movie_pos
    ]
    rng = child_generator(config.seed, _TAG_VAL)
    if len(known) > config.val_positives_cap:
        picks = rng.choice(len(known), size=config.val_positives_cap, replace=False)
        known = [known[i] for i in np.sort(picks)]
    known_set = set(known)
    subset = AttendanceIndex(
        [r for r in split.validation if (r.user_id, r.movie_id) in known_set],
        movie_as_of=split.movie_as_of,
    )
    full_index = AttendanceIndex(split.non_coldstart + split.coldstart)
    return sample_eval_set(
        subset,
        full_index,
        neg_per_pos=config.neg_per_pos,
        seed=rng,
        candidate_users=train_index.users,
    )


def train(
    split: DatasetSplit,
    video_vectors: dict[str, np.ndarray],
    profiles: dict[str, UserProfile],
    schema: DemographicsSchema,
    config: TrainConfig,
) -> TrainResult:
    """Full training loop with validation-AUC early stopping.

    Deterministic given the config seed; returns the parameters of the best
    validation epoch.
    """
    from .evaluation import auc  # local import to avoid a cycle

    train_index, featurizer = build_featurizer(
        split, video_vectors, profiles, schema, config.window_days
    )
    trainer = Trainer(train_index, featurizer, config)
    val_pairs = validation_pairs(split, train_index, config)
    if not val_pairs:
        raise ConfigError("validation partition has no scoreable positives")
    val_triples = [(p.user_id, p.movie_id, p.as_of) for p in val_pairs]
    val_labels = np.array([p.label for p in val_pairs])

    steps = config.steps_per_epoch or max(1, -(-len(train_index.pairs) // config.batch_size))
    stopper = _EarlyStopper(config.patience)
    best = trainer.params.copy()
    history: list[EpochStats] = []
    for epoch in range(1, config.max_epochs + 1):
        losses = [trainer.step(epoch, s) for s in range(steps)]
        scores = score_pairs_batch(trainer.params, featurizer, val_triples, MODE_IN_MATRIX)
        val_auc = auc(scores, val_labels)
        history.append(EpochStats(epoch, float(np.mean(losses)), val_auc))
        logger.info("epoch %d: train loss %.4f, val auc %.4f", epoch, history[-1].train_loss, val_auc)
        if stopper.update(epoch, val_auc):
            best = trainer.params.copy()
        if stopper.should_stop:
            break
    best.validate()
    return TrainResult(best, history, stopper.best_epoch, float(stopper.best))


@dataclass
class HybridScorer:
    """Duck-typed scoring adapter used by the evaluation and comp modules."""

    params: HybridParams
    featurizer: Featurizer
    name: str = "hybrid"
    supports_coldstart: bool = True

    def in_matrix_movies(self) -> set[str]:
        return set(self.params.offset_ids)

    def score(self, pairs: list[tuple[str, str, Date]], mode: str) -> np.ndarray:
        return score_pairs_batch(self.params, self.featurizer, pairs, mode)


# -- gradient verification

_TAG_GRADCHECK = 17


def gradcheck_instance(seed: int) -> tuple[Trainer, list[LabeledPair]]:
    """A tiny randomized training problem for finite-difference checks.

    All dimensions stay small (at most 8) so the check finishes quickly.
    tanh activation keeps the loss twice differentiable everywhere; relu
    kinks would poison central differences. Head and offsets are nudged off
    their zero init so gradient flows through every path, not just the head.
    """
    rng = child_generator(seed, _TAG_GRADCHECK)
    frame_pool_dim = int(rng.integers(3, 9))
    embedding_dim = int(rng.integers(2, 7))
    hidden = int(rng.integers(2, 7))
    n_users = int(rng.integers(4, 7))
    n_movies = int(rng.integers(5, 9))
    base = Date(2024, 1, 7)

    schema = DemographicsSchema((("segment", ("a", "b", "c")),))
    users = [f"u{i}" for i in range(n_users)]
    movies = [f"m{i}" for i in range(n_movies)]
    records = []
    for ui, user in enumerate(users):
        picks = rng.choice(n_movies, size=int(rng.integers(2, min(5, n_movies))), replace=False)
        for mi in sorted(int(m) for m in picks):
            when = base + timedelta(days=int(rng.integers(0, 60)))
            records.append(AttendanceRecord(when, user, movies[mi]))
    profiles = {}
    for ui, user in enumerate(users):
        if ui % 4 == 3:
            profiles[user] = UserProfile(user, {})  # exercise the zero block
        else:
            profiles[user] = UserProfile(user, {"segment": "abc"[int(rng.integers(0, 3))]})
    video_vectors = {m: rng.normal(size=frame_pool_dim) for m in movies}

    config = TrainConfig(
        batch_size=8,
        embedding_dim=embedding_dim,
        hidden_dims=(hidden,),
        activation="tanh",
        window_days=90,
        seed=seed,
    )
    index = AttendanceIndex(sorted(records))
    featurizer = Featurizer(index, video_vectors, profiles, schema, config.window_days)
    trainer = Trainer(index, featurizer, config)
    trainer.params.head = rng.normal(size=4)
    trainer.params.offset_table = trainer.params.offset_table + 0.1 * rng.normal(
        size=trainer.params.offset_table.shape
    )
    pairs = sample_training_batch(index, config.batch_size, child_generator(seed, _TAG_GRADCHECK, 1))
    return trainer, pairs


def run_gradcheck(trials: int = 100, seed: int = 0, eps: float = 1e-5) -> np.ndarray:
    """Worst relative gradient error for each of ``trials`` random instances."""
    worst = np.zeros(trials)
    for t in range(trials):
        trainer, pairs = gradcheck_instance(seed + t)
        loss_fn, loss_only = trainer.make_grad_check_fns(pairs)
        worst[t] = nn.grad_check(loss_fn, trainer.params_list(), eps=eps, loss_only=loss_only)
    return worst
