"""Command-line entry point: ``suppressor-lab <subcommand> ...``.

Machine-readable output goes to stdout or ``--out``; logs go to stderr.
Exit codes: 0 success, 1 verification failure, 2 usage or parameter
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from . import analytic as an
from . import empirical as em
from . import figures as fg
from .acceptance import run_acceptance, summary_table
from .errors import NumericalError, ParameterError
from .harness import SweepGrid, run_sweep
from .model import GenParams, sample_dataset

log = logging.getLogger("suppressor_lab")

SEED_ENV = "SUPPRESSOR_LAB_SEED"
EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


def parse_seed(text: str) -> int:
    """Decimal or 0x-prefixed seed in ``[0, 2**64)``."""
    try:
        value = int(text.strip(), 0)
    except ValueError:
        raise ParameterError(f"seed must be an integer (decimal or 0x-hex), got {text!r}")
    if not 0 <= value < 2**64:
        raise ParameterError(f"seed must lie in [0, 2**64), got {value}")
    return value


def _seed(text: str) -> int:
    try:
        return parse_seed(text)
    except ParameterError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def default_seed() -> int:
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return em.DEFAULT_SEED
    return parse_seed(env)


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _add_params(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--c", type=float, required=required, help="noise correlation in [-1, 1]")
    p.add_argument("--s1sq", type=float, required=required, help="noise variance of feature 1")
    p.add_argument("--s2sq", type=float, required=required, help="noise variance of feature 2")
    p.add_argument("--epsilon", type=float, default=0.0, help="signal leakage into feature 2 (default 0)")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=_seed, default=None, help=f"RNG seed (default ${SEED_ENV} or 0xC0FFEE)")
    p.add_argument("--out", default=None, help="output file (default stdout)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="suppressor-lab", description="Suppressor-variable attribution lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw a labeled dataset as x1,x2,y CSV")
    _add_params(p)
    p.add_argument("--n", type=int, required=True, help="number of records")
    _add_common(p)

    p = sub.add_parser("eval", help="closed-form attribution at one parameter point")
    p.add_argument("--method", required=True, choices=an.METHODS)
    _add_params(p)
    p.add_argument("--x1", type=float, default=None)
    p.add_argument("--x2", type=float, default=None)
    p.add_argument("--baseline", type=float, nargs=2, default=(0.0, 0.0), metavar=("B1", "B2"))
    _add_common(p)

    p = sub.add_parser("sweep", help="analytic vs empirical comparison over a grid")
    p.add_argument("--grid", default="default", choices=("default", "zero-c", "single"))
    p.add_argument("--format", default="json", choices=("json", "csv"))
    p.add_argument("--quick", action="store_true", help="10x fewer samples, tolerances widened by sqrt(10)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timestamp", default=None, help="copied into the report metadata when given")
    _add_common(p)

    p = sub.add_parser("figure", help="emit the long-format table behind a figure")
    p.add_argument("--id", dest="figure_id", required=True, choices=fg.FIGURE_IDS)
    p.add_argument("--s1sq-family", type=_float_list, default=list(fg.S1SQ_FAMILY),
                   help="comma-separated s1sq values for the curve figures")
    p.add_argument("--xi", type=float, nargs=2, default=fg.DEFAULT_XI, metavar=("X1", "X2"))
    p.add_argument("--n", type=int, default=fg.N_SCATTER, help="scatter points per panel")
    _add_common(p)

    p = sub.add_parser("verify", help="run the acceptance suite")
    p.add_argument("--quick", action="store_true", help="10x fewer samples, tolerances widened by sqrt(10)")
    p.add_argument("--workers", type=int, default=1)
    _add_common(p)
    return parser


def _write(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        log.info("wrote %s", out)


def _params(args) -> GenParams:
    return GenParams.from_variances(args.c, args.s1sq, args.s2sq, args.epsilon)


def cmd_sample(args) -> int:
    ds = sample_dataset(_params(args), args.n, args.seed)
    _write(ds.to_csv(), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    params = _params(args)
    x = None
    if args.x1 is not None or args.x2 is not None:
        if args.x1 is None or args.x2 is None:
            raise ParameterError("give both --x1 and --x2")
        x = (args.x1, args.x2)
    attr = an.attribute(args.method, params, x, tuple(args.baseline))
    payload = {
        "method": attr.method,
        "scope": attr.scope,
        "locus": list(attr.locus) if attr.locus is not None else None,
        "e1": attr.e1,
        "e2": attr.e2,
        "params": params.as_variances(),
    }
    if args.method == an.INTEGRATED_GRADIENTS:
        payload["baseline"] = list(args.baseline)
    _write(json.dumps(payload, indent=1) + "\n", args.out)
    return EXIT_OK


def _config(args) -> em.EstimatorConfig:
    return em.EstimatorConfig.quick(args.seed) if args.quick else em.EstimatorConfig(seed=args.seed)


def cmd_sweep(args) -> int:
    grid = SweepGrid.named(args.grid, args.seed)
    report = run_sweep(grid, _config(args), workers=args.workers, timestamp=args.timestamp)
    _write(report.to_json() if args.format == "json" else report.to_csv(), args.out)
    return EXIT_OK


def cmd_figure(args) -> int:
    table = fg.emit_figure_data(
        args.figure_id, seed=args.seed, s1sq_family=args.s1sq_family, xi=tuple(args.xi), n_points=args.n
    )
    _write(table.to_csv(), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    outcome = run_acceptance(_config(args), quick=args.quick, workers=args.workers)
    lines = [outcome.report(), "criterion  verdict"]
    lines += [f"{n:>9}  {'PASS' if ok else 'FAIL'}" for n, ok in summary_table(outcome)]
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK if outcome.passed else EXIT_VERIFY


COMMANDS = {"sample": cmd_sample, "eval": cmd_eval, "sweep": cmd_sweep, "figure": cmd_figure, "verify": cmd_verify}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.seed is None:
            args.seed = default_seed()
        return COMMANDS[args.command](args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
