"""Flat key=value run configuration.

One namespace covers every tunable in the package: synthetic-world shape,
split fractions, model and optimizer settings, comp-table sizing. Files are
UTF-8 text, one ``key = value`` per line, ``#`` comments. Precedence is
command-line override > config file > built-in default. Unknown keys are
rejected so typos fail loudly instead of silently running defaults.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .errors import ConfigError
from .model import (
    DEFAULT_DROPOUT_P,
    DEFAULT_EMBEDDING_DIM,
    DEFAULT_HIDDEN_DIMS,
    DEFAULT_OFFSET_L2,
    TrainConfig,
)
from .baselines import DEFAULT_PMF_K, DEFAULT_PMF_L2
from .comps import DEFAULT_TABLE_SIZE
from .data import (
    DEFAULT_COLDSTART_MOVIES,
    DEFAULT_NEG_PER_POS,
    DEFAULT_TEST_FRAC,
    DEFAULT_VAL_FRAC,
    DEFAULT_WINDOW_DAYS,
)
from .synth import SynthConfig


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _parse_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None
    if value != value:
        raise ConfigError("nan is not a usable config value")
    return value


def _parse_str(text: str) -> str:
    return text.strip()


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    return tuple(_parse_int(p) for p in parts)


def _choice(*allowed: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        value = text.strip()
        if value not in allowed:
            raise ConfigError(f"expected one of {allowed}, got {value!r}")
        return value

    return parse


@dataclass(frozen=True)
class Option:
    name: str
    default: object
    parse: Callable[[str], object]
    help: str


_OPTIONS = [
    Option("seed", 0, _parse_int, "master seed; every stage derives child streams from it"),
    Option("threads", 1, _parse_int, "parallelism cap for read-only scoring paths"),
    Option("out_dir", "out", _parse_str, "artifact directory"),
    Option("data_dir", ".", _parse_str, "directory holding input data files"),
    # synthetic world
    Option("n_users", 2000, _parse_int, "synthetic population size"),
    Option("n_movies", 200, _parse_int, "synthetic catalog size"),
    Option("latent_dim", 8, _parse_int, "dimension of hidden taste space"),
    Option("frame_dim", 64, _parse_int, "dimension of per-frame features"),
    Option("frames_per_movie", 100, _parse_int, "mean trailer frame count"),
    Option("frame_noise", 0.3, _parse_float, "frame feature noise scale"),
    Option("taste_noise", 1.0, _parse_float, "user taste spread around cluster centers"),
    Option("movie_noise", 1.2, _parse_float, "movie latent spread around cluster centers"),
    Option("heavy_fraction", 0.5, _parse_float, "fraction of heavy attenders"),
    Option("n_clusters", 4, _parse_int, "taste cluster count"),
    Option("horizon_days", 1095, _parse_int, "length of the simulated window in days"),
    Option("release_margin_days", 90, _parse_int, "attendance window after each release"),
    Option("heavy_base_rate", 20.2, _parse_float, "heavy cohort awareness rate per year"),
    Option("casual_base_rate", 5.5, _parse_float, "casual cohort awareness rate per year"),
    Option("heavy_downside_min", 1.6, _parse_float, "heavy cohort |D| lower bound"),
    Option("heavy_downside_max", 2.6, _parse_float, "heavy cohort |D| upper bound"),
    Option("casual_downside_min", 2.8, _parse_float, "casual cohort |D| lower bound"),
    Option("casual_downside_max", 4.5, _parse_float, "casual cohort |D| upper bound"),
    Option("upside", 1.0, _parse_float, "utility of a liked movie"),
    Option("demographic_noise", 0.05, _parse_float, "chance a demographic field is scrambled"),
    Option("missing_rate", 0.02, _parse_float, "chance a demographic field is dropped"),
    Option("twin_noise", 0.05, _parse_float, "latent perturbation between planted twins"),
    Option("awareness_sharpness", 2.0, _parse_float, "taste targeting of awareness; 0 = uniform"),
    # split
    Option("n_coldstart", DEFAULT_COLDSTART_MOVIES, _parse_int, "movies held out by recency"),
    Option("val_frac", DEFAULT_VAL_FRAC, _parse_float, "validation share of non-cold records"),
    Option("test_frac", DEFAULT_TEST_FRAC, _parse_float, "test share of non-cold records"),
    # training
    Option("batch_size", 512, _parse_int, "training batch size (half positives)"),
    Option("max_epochs", 40, _parse_int, "epoch cap"),
    Option("patience", 5, _parse_int, "epochs without validation AUC improvement before stopping"),
    Option("learning_rate", 3e-3, _parse_float, "optimizer step size"),
    Option("offset_l2", DEFAULT_OFFSET_L2, _parse_float, "L2 penalty on the offset table"),
    Option("dropout_p", DEFAULT_DROPOUT_P, _parse_float, "dropout rate on standardized head features"),
    Option("embedding_dim", DEFAULT_EMBEDDING_DIM, _parse_int, "movie/user vector dimension"),
    Option("hidden_dims", DEFAULT_HIDDEN_DIMS, _parse_int_tuple, "MLP hidden widths, comma separated"),
    Option("activation", "relu", _choice("relu", "tanh"), "MLP hidden activation"),
    Option("optimizer", "adam", _choice("adam", "sgd"), "optimizer kind"),
    Option("window_days", DEFAULT_WINDOW_DAYS, _parse_int, "frequency/recency lookback window"),
    Option("neg_per_pos", DEFAULT_NEG_PER_POS, _parse_int, "sampled negatives per eval positive"),
    Option("val_positives_cap", 2000, _parse_int, "max validation positives scored per epoch"),
    # pmf baseline
    Option("pmf_k", DEFAULT_PMF_K, _parse_int, "PMF factor count"),
    Option("pmf_l2", DEFAULT_PMF_L2, _parse_float, "PMF L2 penalty"),
    # comp tables
    Option("k_users", 0, _parse_int, "predicted-attendee pool size; 0 picks population/10"),
    Option("comp_movies", DEFAULT_TABLE_SIZE, _parse_int, "rows per comp table"),
]

CONFIG_SPEC: dict[str, Option] = {opt.name: opt for opt in _OPTIONS}


def format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig:
    """Resolved settings; attribute access by option name."""

    def __init__(self, values: dict[str, object] | None = None):
        merged = {name: opt.default for name, opt in CONFIG_SPEC.items()}
        if values:
            for key in values:
                if key not in CONFIG_SPEC:
                    raise ConfigError(f"unknown config key {key!r}")
            merged.update(values)
        object.__setattr__(self, "_values", merged)

    def __getattr__(self, name: str):
        try:
            return self._values[name]
        except KeyError:
            raise AttributeError(name) from None

    def __setattr__(self, name, value):
        raise AttributeError("RunConfig is immutable; build a new one")

    def get(self, name: str):
        if name not in CONFIG_SPEC:
            raise ConfigError(f"unknown config key {name!r}")
        return self._values[name]

    def updated(self, overrides: dict[str, object]) -> "RunConfig":
        values = dict(self._values)
        for key, value in overrides.items():
            if key not in CONFIG_SPEC:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = value
        return RunConfig(values)

    def to_lines(self) -> list[str]:
        return [f"{name} = {format_value(self._values[name])}" for name in sorted(self._values)]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self._values == other._values


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """Parse ``key = value`` lines into typed values. Unknown keys and bad
    literals raise ConfigError with the offending line number."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        opt = CONFIG_SPEC.get(key)
        if opt is None:
            raise ConfigError(f"{source}: line {lineno}: unknown config key {key!r}")
        try:
            values[key] = opt.parse(value.strip())
        except ConfigError as exc:
            raise ConfigError(f"{source}: line {lineno}: {key}: {exc}") from None
    return values


def load_config_file(path) -> dict[str, object]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), source=str(path))


def parse_override(text: str) -> tuple[str, object]:
    """Parse one ``key=value`` override as given on the command line."""
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, _, value = text.partition("=")
    key = key.strip()
    opt = CONFIG_SPEC.get(key)
    if opt is None:
        raise ConfigError(f"unknown config key {key!r}")
    return key, opt.parse(value.strip())


def resolve_config(
    config_path=None,
    overrides: list[str] | None = None,
    flag_values: dict[str, object] | None = None,
) -> RunConfig:
    """Layer defaults, an optional config file, ``key=value`` overrides, and
    dedicated flag values (highest precedence), in that order."""
    values: dict[str, object] = {}
    if config_path is not None:
        values.update(load_config_file(config_path))
    for item in overrides or []:
        key, parsed = parse_override(item)
        values[key] = parsed
    for key, value in (flag_values or {}).items():
        if value is None:
            continue
        if key not in CONFIG_SPEC:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    return RunConfig(values)


def train_config(rc: RunConfig) -> TrainConfig:
    return TrainConfig(
        batch_size=rc.batch_size,
        max_epochs=rc.max_epochs,
        patience=rc.patience,
        learning_rate=rc.learning_rate,
        offset_l2=rc.offset_l2,
        dropout_p=rc.dropout_p,
        seed=rc.seed,
        embedding_dim=rc.embedding_dim,
        hidden_dims=tuple(rc.hidden_dims),
        activation=rc.activation,
        optimizer=rc.optimizer,
        window_days=rc.window_days,
        neg_per_pos=rc.neg_per_pos,
        val_positives_cap=rc.val_positives_cap,
    )


def synth_config(rc: RunConfig) -> SynthConfig:
    return SynthConfig(
        n_users=rc.n_users,
        n_movies=rc.n_movies,
        latent_dim=rc.latent_dim,
        frame_dim=rc.frame_dim,
        frames_per_movie=rc.frames_per_movie,
        frame_noise=rc.frame_noise,
        taste_noise=rc.taste_noise,
        movie_noise=rc.movie_noise,
        heavy_fraction=rc.heavy_fraction,
        seed=rc.seed,
        n_clusters=rc.n_clusters,
        horizon_days=rc.horizon_days,
        release_margin_days=rc.release_margin_days,
        heavy_base_rate=rc.heavy_base_rate,
        casual_base_rate=rc.casual_base_rate,
        heavy_downside=(rc.heavy_downside_min, rc.heavy_downside_max),
        casual_downside=(rc.casual_downside_min, rc.casual_downside_max),
        upside=rc.upside,
        demographic_noise=rc.demographic_noise,
        missing_rate=rc.missing_rate,
        twin_noise=rc.twin_noise,
        awareness_sharpness=rc.awareness_sharpness,
    )
