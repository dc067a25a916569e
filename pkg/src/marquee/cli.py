"""Command-line workflow: synth -> pool -> split -> train -> eval -> comps.

Every subcommand resolves one flat config (defaults, then config file, then
``--set key=value`` overrides, then dedicated flags), validates its input
paths, writes ``run.log`` into the output directory, and only then does
work. Artifacts use fixed names inside ``--out``: ``model.mrlc``,
``eval.csv``, ``comps.csv``, ``vectors.mrlf``, ``split/``.

Exit codes: 0 success, 1 runtime fault (one-line ``error: ...`` on stderr),
2 usage or configuration problems.
"""

from __future__ import annotations

import argparse
import logging
import shlex
import sys
from datetime import timedelta
from pathlib import Path

from .baselines import PmfScorer, RfScorer, train_pmf, train_rf
from .checkpoint import checkpoint_model_name, load_checkpoint, save_checkpoint
from .comps import (
    actual_comp_table,
    comp_overlap,
    comp_table,
    comp_text,
    default_k_users,
    write_comp_tables,
)
from .config import RunConfig, parse_override, resolve_config, synth_config, train_config
from .data import (
    AttendanceIndex,
    load_attendance,
    load_demographics,
    load_schema,
    load_split,
    save_split,
    split_dataset,
)
from .errors import ColdStartUnsupportedError, ConfigError, DataFormatError, MarqueeError
from .evaluation import (
    PROTOCOL_COLD_START,
    PROTOCOL_IN_MATRIX,
    evaluate_coldstart,
    evaluate_in_matrix,
    report_text,
    write_eval_reports,
)
from .model import HybridScorer, build_featurizer, run_gradcheck, train
from .synth import simulate
from .videovec import load_frame_features, load_video_vectors, pool_frames, write_video_vectors

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4

CHECKPOINT_NAME = "model.mrlc"
EVAL_NAME = "eval.csv"
COMPS_NAME = "comps.csv"
VECTORS_NAME = "vectors.mrlf"
SPLIT_DIR_NAME = "split"
RUN_LOG_NAME = "run.log"


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataFormatError(f"{what} not found: {path}")
    return path


def _prepare_out(rc: RunConfig, command: str, argv: list[str]) -> Path:
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"command = {command}", f"argv = {shlex.join(argv)}", ""]
    lines.extend(rc.to_lines())
    (out / RUN_LOG_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def _load_dataset(rc: RunConfig):
    """Split, schema and demographics from the data directory."""
    data = Path(rc.data_dir)
    split = load_split(_require(data / SPLIT_DIR_NAME, "split directory"))
    schema = load_schema(_require(data / "schema.csv", "demographics schema"))
    profiles = load_demographics(_require(data / "demographics.csv", "demographics file"), schema)
    return split, schema, profiles


def _load_vectors(rc: RunConfig) -> dict:
    return load_video_vectors(_require(Path(rc.data_dir) / VECTORS_NAME, "video vector file"))


def _build_scorer(checkpoint_path: Path, rc: RunConfig, requested: str | None, dataset):
    """Scorer for whatever model the checkpoint actually holds.

    The ``--model`` flag is advisory; the file's magic decides, and a
    mismatch only logs a warning. ``dataset`` is the (split, schema,
    profiles) triple; PMF ignores it, the others build a featurizer with the
    lookback window stored in the checkpoint.
    """
    name = checkpoint_model_name(checkpoint_path)
    if requested and requested != name:
        logger.warning("checkpoint holds a %s model; ignoring --model %s", name, requested)
    params = load_checkpoint(checkpoint_path)
    if name == "pmf":
        return PmfScorer(params)
    split, schema, profiles = dataset
    vectors = _load_vectors(rc)
    _, featurizer = build_featurizer(split, vectors, profiles, schema, params.window_days)
    if name == "rf":
        return RfScorer(params, featurizer)
    return HybridScorer(params, featurizer)


# -- subcommand handlers


def cmd_synth(args, rc: RunConfig, argv: list[str]) -> int:
    out = _prepare_out(rc, "synth", argv)
    paths = simulate(synth_config(rc), out)
    records = sum(1 for _ in open(paths["attendance"], encoding="utf-8")) - 1
    print(f"synth: {rc.n_users} users, {rc.n_movies} movies, {records} attendance records -> {out}")
    return 0


def cmd_pool(args, rc: RunConfig, argv: list[str]) -> int:
    frames_dir = Path(args.frames) if args.frames else Path(rc.data_dir) / "frames"
    _require(frames_dir, "frame feature directory")
    files = sorted(p for p in frames_dir.iterdir() if p.suffix in (".mrlf", ".csv"))
    if not files:
        raise DataFormatError(f"no frame feature files under {frames_dir}")
    out = _prepare_out(rc, "pool", argv)
    vectors = [pool_frames(load_frame_features(p)) for p in files]
    target = out / VECTORS_NAME
    write_video_vectors(target, vectors)
    print(f"pool: {len(vectors)} movies -> {target}")
    return 0


def cmd_split(args, rc: RunConfig, argv: list[str]) -> int:
    source = _require(Path(rc.data_dir) / "attendance.csv", "attendance file")
    records = load_attendance(source)
    out = _prepare_out(rc, "split", argv)
    split = split_dataset(records, rc.n_coldstart, rc.val_frac, rc.test_frac, rc.seed)
    save_split(out / SPLIT_DIR_NAME, split)
    print(
        f"split: train {len(split.train)}, validation {len(split.validation)}, "
        f"test {len(split.test)}, coldstart {len(split.coldstart)} "
        f"({len(split.coldstart_movie_ids)} movies) -> {out / SPLIT_DIR_NAME}"
    )
    return 0


def cmd_train(args, rc: RunConfig, argv: list[str]) -> int:
    split, schema, profiles = _load_dataset(rc)
    vectors = _load_vectors(rc)
    out = _prepare_out(rc, "train", argv)
    cfg = train_config(rc)
    target = out / CHECKPOINT_NAME
    echo = {"seed": str(rc.seed), "model": args.model}

    if args.model == "hybrid":
        result = train(split, vectors, profiles, schema, cfg)
        save_checkpoint(target, result.params, echo)
        best = result.best_val_auc
        epochs = len(result.history)
    else:
        _, featurizer = build_featurizer(split, vectors, profiles, schema, cfg.window_days)
        if args.model == "rf":
            params, history = train_rf(split, featurizer, cfg)
        else:
            params, history = train_pmf(split, featurizer, cfg, k=rc.pmf_k, l2=rc.pmf_l2)
        save_checkpoint(target, params, echo)
        best = max(h["val_auc"] for h in history)
        epochs = len(history)
    print(f"train[{args.model}]: {epochs} epochs, best val auc {best:.4f} -> {target}")
    return 0


def cmd_eval(args, rc: RunConfig, argv: list[str]) -> int:
    checkpoint = _require(
        Path(args.checkpoint) if args.checkpoint else Path(rc.data_dir) / CHECKPOINT_NAME,
        "checkpoint",
    )
    dataset = _load_dataset(rc)
    scorer = _build_scorer(checkpoint, rc, args.model, dataset)
    split = dataset[0]
    out = _prepare_out(rc, "eval", argv)

    reports = []
    if args.protocol in (PROTOCOL_IN_MATRIX, "both"):
        reports.append(evaluate_in_matrix(scorer, split, seed=rc.seed, neg_per_pos=rc.neg_per_pos))
    if args.protocol in (PROTOCOL_COLD_START, "both"):
        try:
            reports.append(
                evaluate_coldstart(scorer, split, seed=rc.seed, neg_per_pos=rc.neg_per_pos)
            )
        except ColdStartUnsupportedError:
            if args.protocol == PROTOCOL_COLD_START:
                raise
            print(f"note: {scorer.name} cannot score cold-start; protocol skipped")
    write_eval_reports(out / EVAL_NAME, reports)
    print(report_text(reports), end="")
    return 0


def cmd_comps(args, rc: RunConfig, argv: list[str]) -> int:
    checkpoint = _require(
        Path(args.checkpoint) if args.checkpoint else Path(rc.data_dir) / CHECKPOINT_NAME,
        "checkpoint",
    )
    dataset = _load_dataset(rc)
    scorer = _build_scorer(checkpoint, rc, None, dataset)
    split = dataset[0]
    out = _prepare_out(rc, "comps", argv)

    targets = args.movie or sorted(split.coldstart_movie_ids)
    if not targets:
        raise ConfigError("no target movies: pass --movie or split with a cold-start holdout")
    index = AttendanceIndex(
        split.non_coldstart + split.coldstart, movie_as_of=split.movie_as_of
    )
    k_users = rc.k_users or default_k_users(len(index.users))
    # Rank audiences with the full history on the books: one analysis date
    # just past the last recorded visit, rather than each target's release
    # week, so early releases are not judged on a starved window.
    as_of = index.records[-1].date + timedelta(days=1)

    tables = []
    for movie_id in targets:
        if movie_id not in split.movie_as_of:
            raise ConfigError(f"unknown movie id {movie_id!r}")
        predicted = comp_table(
            scorer, movie_id, as_of, index, k_users=k_users, n_movies=rc.comp_movies
        )
        tables.append(predicted)
        if args.actual:
            actual = actual_comp_table(movie_id, index, rc.comp_movies)
            tables.append(actual)
            n = min(10, len(predicted.entries), len(actual.entries))
            print(comp_text(predicted, actual), end="")
            print(f"overlap@{n}: {comp_overlap(predicted, actual, n)}\n")
        else:
            print(comp_text(predicted), end="")
    write_comp_tables(out / COMPS_NAME, tables)
    print(f"comps: {len(targets)} targets -> {out / COMPS_NAME}")
    return 0


def cmd_gradcheck(args, rc: RunConfig, argv: list[str]) -> int:
    out = _prepare_out(rc, "gradcheck", argv)
    del out
    errors = run_gradcheck(trials=args.trials, seed=rc.seed)
    worst = float(errors.max())
    print(f"gradcheck: {args.trials} instances, worst relative error {worst:.3e}")
    if worst > GRADCHECK_TOLERANCE:
        print(f"error: gradient check failed ({worst:.3e} > {GRADCHECK_TOLERANCE:g})", file=sys.stderr)
        return 1
    return 0


# -- wiring


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="key = value config file")
    common.add_argument(
        "--set",
        metavar="KEY=VALUE",
        action="append",
        default=[],
        help="override one config key (repeatable)",
    )
    common.add_argument("--out", metavar="DIR", help="output directory (config key out_dir)")
    common.add_argument("--data", metavar="DIR", help="input directory (config key data_dir)")
    common.add_argument("--seed", type=int, help="master seed (config key seed)")
    common.add_argument("--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="marquee",
        description="Movie attendance modeling: synthesize, pool, split, train, evaluate, comps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("pool", parents=[common], help="pool frame features into video vectors")
    p.add_argument("--frames", metavar="DIR", help="frame feature directory (default DATA/frames)")
    p.set_defaults(handler=cmd_pool)

    p = sub.add_parser("split", parents=[common], help="hold out recent movies, partition the rest")
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("train", parents=[common], help="fit a model and write model.mrlc")
    p.add_argument("--model", choices=("hybrid", "rf", "pmf"), default="hybrid")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score held-out sets and write eval.csv")
    p.add_argument("--checkpoint", metavar="FILE", help="checkpoint path (default DATA/model.mrlc)")
    p.add_argument("--model", choices=("hybrid", "rf", "pmf"), help="advisory; file magic decides")
    p.add_argument(
        "--protocol",
        choices=(PROTOCOL_IN_MATRIX, PROTOCOL_COLD_START, "both"),
        default="both",
    )
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("comps", parents=[common], help="emit comparable-movie tables")
    p.add_argument("--checkpoint", metavar="FILE", help="checkpoint path (default DATA/model.mrlc)")
    p.add_argument("--movie", action="append", metavar="ID", help="target movie (repeatable)")
    p.add_argument("--actual", action="store_true", help="also rank by real attendees and compare")
    p.set_defaults(handler=cmd_comps)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient audit")
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(handler=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        for item in args.set:
            parse_override(item)  # surface bad overrides as usage errors
        flag_values = {"seed": args.seed, "out_dir": args.out, "data_dir": args.data}
        rc = resolve_config(args.config, args.set, flag_values)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.handler(args, rc, argv)
    except MarqueeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
