"""Command line interface: generate, train, eval, query, inspect-weights.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .boosting import BoostConfig, WeightTable
from .checkpoint import Checkpoint
from .dataset import GenerateConfig, Manifest, generate_dataset
from .errors import BoostMatchError, ConfigurationError, DataError
from .evaluation import DEFAULT_KS
from .pipeline import CHECKPOINT_NAME, PROFILES, RunConfig, TrainingSession, evaluate, model_from_checkpoint, query_image
from .training import TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
REPORT_JSON = "report.json"
REPORT_TABLE = "report.txt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="boostmatch", description="Boosted siamese matching of video frames to slides.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-round progress")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    gen = sub.add_parser("generate", help="render procedural slides and synthetic query frames")
    gen.add_argument("--out", required=True, type=Path)
    gen.add_argument("--slides", type=_positive_int, default=20)
    gen.add_argument("--queries-per-slide", type=_positive_int, default=5)
    gen.add_argument("--test-queries-per-slide", type=_positive_int, default=0,
                     help="extra held-out queries per slide, noise levels cycling 1..10")
    gen.add_argument("--seed", type=int, default=7)

    train = sub.add_parser("train", help="run boosting rounds and write checkpoints")
    train.add_argument("--manifest", required=True, type=Path)
    train.add_argument("--out", required=True, type=Path)
    train.add_argument("--resume", type=Path, help="checkpoint to continue from; its stored settings are used")
    train.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--rounds", type=_positive_int, default=10)
    train.add_argument("--epochs-per-round", type=int, default=3)
    train.add_argument("--round-size", type=int, default=256, help="pairs per round (m)")
    train.add_argument("--batch", type=int, default=32)
    train.add_argument("--lr", type=float, default=2e-4)
    train.add_argument("--beta1", type=float, default=0.5)
    train.add_argument("--weight-decay", type=float, default=5e-4)
    train.add_argument("--delta", type=float, default=2.0)
    train.add_argument("--mu", type=float, default=0.2)
    train.add_argument("--candidates", type=int, default=None, help="candidate pairs per draw (k, default 16m)")
    train.add_argument("--alpha", type=float, default=None, help="positives per query (default: from manifest)")
    train.add_argument("--no-prefetch", action="store_true")

    ev = sub.add_parser("eval", help="rank slides for every evaluated query and report hit rates")
    ev.add_argument("--manifest", required=True, type=Path)
    ev.add_argument("--checkpoint", required=True, type=Path)
    ev.add_argument("--out", type=Path)
    ev.add_argument("--k", type=int, nargs="+", default=list(DEFAULT_KS))
    ev.add_argument("--split", choices=["test", "train", "all"], default=None,
                    help="queries to evaluate (default: test if present, else all)")
    ev.add_argument("--workers", type=int, default=1)

    q = sub.add_parser("query", help="print the top-k slides for one image")
    q.add_argument("image", type=Path)
    q.add_argument("--checkpoint", required=True, type=Path)
    q.add_argument("--manifest", required=True, type=Path)
    q.add_argument("--k", type=int, default=5)

    iw = sub.add_parser("inspect-weights", help="list the heaviest pairs of a weight table")
    iw.add_argument("table", type=Path)
    iw.add_argument("--top", type=_positive_int, default=20)
    return parser


# -- commands -------------------------------------------------------------------


def cmd_generate(args) -> int:
    manifest = generate_dataset(args.out, GenerateConfig(
        slides=args.slides,
        queries_per_slide=args.queries_per_slide,
        test_queries_per_slide=args.test_queries_per_slide,
        seed=args.seed,
    ))
    n_q = len(manifest.queries())
    print(f"wrote {len(manifest.targets())} targets and {n_q} queries ({n_q} positive pairs) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = Manifest.load(args.manifest)
    if args.resume:
        session = TrainingSession.resume(manifest, Checkpoint.load(args.resume), prefetch=not args.no_prefetch)
        append = True
    else:
        config = RunConfig(
            profile=args.profile,
            seed=args.seed,
            # the round total is a run argument, kept out of the stored config
            boost=BoostConfig(
                epochs_per_round=args.epochs_per_round,
                round_set_size=args.round_size,
                mini_batch=args.batch,
                delta=args.delta,
            ),
            train=TrainConfig(lr=args.lr, beta1=args.beta1, weight_decay=args.weight_decay, delta=args.delta),
            mu=args.mu,
            candidates=args.candidates,
            alpha=args.alpha,
        )
        session = TrainingSession(manifest, config, prefetch=not args.no_prefetch)
        append = False
    reports = session.run(args.rounds, args.out, append_log=append)
    for rep in reports:
        print(f"round {rep.round}: epsilon={rep.epsilon:.6f} beta={rep.beta:.6f} loss={rep.epoch_losses[-1]:.6f}")
    print(f"checkpoint: {args.out / CHECKPOINT_NAME} ({session.rounds_completed} rounds)")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = Manifest.load(args.manifest)
    model = model_from_checkpoint(Checkpoint.load(args.checkpoint))
    report = evaluate(manifest, model, split=args.split, ks=args.k, workers=args.workers)
    table = report.to_table()
    print(table)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / REPORT_JSON).write_text(report.to_json())
        (args.out / REPORT_TABLE).write_text(table)
    return EXIT_OK


def cmd_query(args) -> int:
    manifest = Manifest.load(args.manifest)
    model = model_from_checkpoint(Checkpoint.load(args.checkpoint))
    n_targets = len(manifest.targets())
    k = args.k
    if k > n_targets:
        print(f"warning: k={k} exceeds {n_targets} targets, showing all", file=sys.stderr)
        k = n_targets
    for tid, score in query_image(args.image, manifest, model, k):
        print(f"{tid}\t{score:.6f}")
    return EXIT_OK


def cmd_inspect_weights(args) -> int:
    table = WeightTable.load(args.table)
    print(f"# universe_size {table.universe_size}, {len(table)} stored, default weight {table.default_weight!r}")
    for key, w in table.heaviest(args.top):
        print(f"{key.query_id}\t{key.target_id}\t{w!r}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "query": cmd_query,
    "inspect-weights": cmd_inspect_weights,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (BoostMatchError, OSError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
