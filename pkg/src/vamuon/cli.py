"""Command line entry points.

    bench run    --config PATH [--seed N] [--out DIR] [--resume CKPT]
    bench sweep  --config PATH --param gamma --values 0.1,1,10,100 [--seed N] [--out DIR]
    bench verify [--filter NAME] [--seed N]
    verify       [--filter NAME] [--seed N]

Exit codes: 0 success, 1 config error, 2 numerical failure, 3 verification failure.
Set VAMUON_MAX_WORKERS to cap parallel workers.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from .errors import ConfigError, NumericalFailure

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_VERIFY = 3


def _json_default(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _dump(obj) -> str:
    return json.dumps(obj, default=_json_default, sort_keys=True)


def parse_value(text: str):
    text = text.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def cmd_run(args) -> int:
    from .harness import load_config, run_and_emit

    cfg = load_config(args.config, seed=args.seed)
    out = Path(args.out or cfg.out_dir or "runs/latest")
    result = run_and_emit(cfg, out, resume_from=args.resume)
    print(_dump({"out": str(out), **result.summary}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .harness import load_config, run_sweep

    cfg = load_config(args.config, seed=args.seed)
    values = [parse_value(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values is empty")
    out = Path(args.out or cfg.out_dir or "runs/sweep")
    result = run_sweep(cfg, args.param, values, out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(json.dumps(result, default=_json_default, indent=2, sort_keys=True) + "\n")
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([args.param, "final_loss", "best_loss", "steps_to_threshold"])
        for v, run in zip(values, result["runs"]):
            w.writerow(
                [v, format(run["final_loss"], ".17g"), format(run["best_loss"], ".17g"), run.get("steps_to_threshold")]
            )
    print(_dump({"out": str(out), **{k: v for k, v in result.items() if k != "runs"}}))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite

    reports = run_suite(filter=args.filter, seed=args.seed)
    if not reports:
        print(f"no checks match {args.filter!r}", file=sys.stderr)
        return EXIT_CONFIG
    for r in reports:
        print(_dump(r.to_dict()))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VERIFY


def _add_verify_args(p):
    p.add_argument("--filter", default=None, help="run only checks whose name contains this text")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description="Variance-adaptive Muon benchmark harness")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--resume", default=None, help="checkpoint to continue from")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run one experiment per parameter value")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--param", required=True, help="key to vary, e.g. gamma or optimizer.beta")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--seed", type=int, default=None)
    sweep.add_argument("--out", default=None)
    sweep.set_defaults(func=cmd_sweep)

    _add_verify_args(sub.add_parser("verify", help="run the numerical check suite"))
    return parser


def _dispatch(parser, argv) -> int:
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main(argv=None) -> int:
    return _dispatch(build_parser(), argv)


def verify_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="verify", description="Run the numerical check suite")
    _add_verify_args(parser)
    return _dispatch(parser, argv)


if __name__ == "__main__":
    sys.exit(main())
