"""Command line entry point: ``mrftrees {generate,corrupt,run,diagnose}``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 when
the computation itself fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from ..model import ModelError, PartitionError
from .config import EXPERIMENTS, RUN_SCHEMES, TIME_UNITS, ConfigError, load_config
from .data import corrupt_flip, generate_patch_image, read_pgm, write_pgm

log = logging.getLogger("mrftrees")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for runtime failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _size(text: str) -> tuple[int, int]:
    try:
        r, c = text.lower().split("x")
        rows, cols = int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 2x3, got {text!r}") from None
    if rows <= 0 or cols <= 0:
        raise argparse.ArgumentTypeError("size must be positive")
    return rows, cols


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mrftrees", description="Tree-partition samplers for grid MRFs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic patch image as PGM")
    g.add_argument("--rows", type=int, required=True)
    g.add_argument("--cols", type=int, required=True)
    g.add_argument("--states", type=int, required=True)
    g.add_argument("--rects", type=int, default=6)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--binary", action="store_true", help="P5 instead of P2")
    g.add_argument("--out", required=True)

    c = sub.add_parser("corrupt", help="flip labels of a PGM image")
    c.add_argument("--in", dest="src", required=True)
    c.add_argument("--p", type=float, required=True)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--states", type=int, help="defaults to maxval + 1 of the input")
    c.add_argument("--binary", action="store_true")
    c.add_argument("--out", required=True)

    r = sub.add_parser("run", help="run an experiment from a config file")
    r.add_argument("--config")
    r.add_argument("--experiment", choices=EXPERIMENTS)
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--rows", type=int)
    r.add_argument("--cols", type=int)
    r.add_argument("--states", dest="n_states", type=int)
    r.add_argument("--beta", type=float)
    r.add_argument("--alpha", type=float)
    r.add_argument("--schemes", help=f"comma separated subset of {','.join(RUN_SCHEMES)}")
    r.add_argument("--trials", dest="n_trials", type=int)
    r.add_argument("--iters", dest="n_iters", type=int)
    r.add_argument("--burn-in", dest="burn_in", type=int)
    r.add_argument("--flip-prob", dest="flip_prob", type=float)
    r.add_argument("--rects", dest="n_rects", type=int)
    r.add_argument("--model-seed", dest="model_seed", type=int)
    r.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    r.add_argument("--pg-rb", dest="pg_rb", action="store_const", const=True)
    r.add_argument("--time-units", dest="time_units", choices=TIME_UNITS)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--out")

    d = sub.add_parser("diagnose", help="exact property checks on random enumerable models")
    d.add_argument("--seeds", type=int, default=100, help="number of random models")
    d.add_argument("--size", type=_size, default=(2, 2))
    d.add_argument("--states", type=int, default=2)
    d.add_argument("--family", choices=("potts", "random_table"), default="potts")
    d.add_argument("--horizon", type=int, default=60, help="steps for the convergence-rate fit")
    d.add_argument("--seed", type=int, required=True)
    d.add_argument("--out", default="diagnostics.csv")
    return p


def _run_overrides(args) -> dict:
    keys = ("experiment", "seed", "rows", "cols", "n_states", "n_trials", "n_iters", "burn_in", "flip_prob",
            "n_rects", "model_seed", "checkpoint_every", "pg_rb", "time_units", "out")
    over = {k: getattr(args, k) for k in keys}
    if args.schemes is not None:
        over["schemes"] = [s for s in args.schemes.split(",") if s]
    pot = {k: v for k, v in (("beta", args.beta), ("alpha", args.alpha)) if v is not None}
    if pot:
        over["potential"] = pot
    return over


def _cmd_generate(args) -> None:
    if args.rows <= 0 or args.cols <= 0 or args.states < 2 or args.rects < 0:
        raise ConfigError("need positive rows/cols, states >= 2 and rects >= 0")
    img = generate_patch_image(args.rows, args.cols, args.states, args.rects, args.seed)
    write_pgm(args.out, img, args.states, binary=args.binary)


def _cmd_corrupt(args) -> None:
    try:
        img, maxval = read_pgm(args.src)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {args.src}: {exc}") from exc
    if not 0.0 <= args.p < 1.0:
        raise ConfigError("--p must lie in [0, 1)")
    k = args.states if args.states is not None else maxval + 1
    if k < 2 or img.max() >= k:
        raise ConfigError("--states must exceed every label in the image")
    write_pgm(args.out, corrupt_flip(img, args.p, args.seed, n_states=k), k, binary=args.binary)


def _cmd_run(args) -> None:
    from .experiments import run_experiment

    cfg = load_config(args.config, _run_overrides(args))
    if args.jobs < 1:
        raise ConfigError("--jobs must be positive")
    log.info("running %s experiment into %s", cfg.experiment, cfg.out)
    run_experiment(cfg, jobs=args.jobs)


def _cmd_diagnose(args) -> None:
    from .experiments import DIAGNOSE_FLAGS, run_diagnostics

    rows, cols = args.size
    if args.seeds <= 0 or args.states < 2 or args.horizon < 2:
        raise ConfigError("need --seeds > 0, --states >= 2 and --horizon >= 2")
    report = run_diagnostics(args.seeds, rows, cols, args.states, args.family, args.seed, args.out, args.horizon)
    counts = {f: sum(bool(r[f]) for r in report) for f in DIAGNOSE_FLAGS}
    print(json.dumps({"n_models": len(report), "passes": counts}, sort_keys=True))


COMMANDS = {"generate": _cmd_generate, "corrupt": _cmd_corrupt, "run": _cmd_run, "diagnose": _cmd_diagnose}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"mrftrees: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, PartitionError, ValueError, OSError, ArithmeticError) as exc:
        print(f"mrftrees: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
