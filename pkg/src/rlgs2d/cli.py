"""Command-line entry point: ``rlgs2d <subcommand> [--config FILE] [--seed N] [--section.key VALUE ...]``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import runs
from .config import ConfigError, RunConfig, default_config_path

COMMANDS = {
    "synth": "generate a dataset and write its views",
    "fit": "plain training with the configured hyperparameters",
    "tune-rlgs": "training with online policy control",
    "tune-rs": "offline random search",
    "tune-tpe": "offline TPE search",
    "ablate": "full method, its ablations and plain training",
    "report": "aggregate run summaries below a directory",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rlgs2d", description="Hyperparameter control for 2D Gaussian splat fitting.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name, text in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text)
        if name == "report":
            p.add_argument("directory", type=Path)
            p.add_argument("--out", type=Path, default=None, help="CSV file for the aggregated table")
            continue
        p.add_argument("--config", type=Path, default=None, help="JSON file of dotted keys (default: shipped defaults)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides output_dir)")
    return parser


def parse_overrides(extra: list[str]) -> dict:
    """``--section.key value`` / ``--section.key=value`` pairs from leftover arguments."""
    out, i = {}, 0
    while i < len(extra):
        arg = extra[i]
        if not arg.startswith("--") or len(arg) == 2:
            raise UsageError(f"unexpected argument {arg!r}")
        key = arg[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"missing value for {arg}")
            value = extra[i + 1]
            i += 2
        out[key] = value
    return out


def resolve_config(args, extra: list[str]) -> RunConfig:
    overrides = parse_overrides(extra)
    rc = RunConfig.load(args.config or default_config_path())
    unknown = [k for k in overrides if k not in rc.values]
    if unknown:
        raise UsageError(f"unrecognized arguments: {' '.join('--' + k for k in unknown)}")
    rc.update(overrides)
    if args.seed is not None:
        rc.update({"seed": args.seed})
    if args.out is not None:
        rc.update({"output_dir": str(args.out)})
    return rc.validate()


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip() + "\nrlgs2d: error: a command is required")
        if args.command == "report":
            if extra:
                raise UsageError(f"unexpected arguments {extra}")
            return _report(args)
        rc = resolve_config(args, extra)
    except UsageError as exc:
        text = str(exc)
        if not text.startswith("usage:"):
            text = f"{parser.format_usage()}rlgs2d: error: {text}"
        print(text, file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"rlgs2d: config error: {exc}", file=sys.stderr)
        return 1

    out = Path(rc["output_dir"])
    try:
        if args.command == "synth":
            out.mkdir(parents=True, exist_ok=True)
            runs.write_dataset(runs.build_dataset(rc), out)
            rc.save(out / "config.resolved.json")
            print(f"wrote {rc['data.views']} views to {out}")
            return 0
        if args.command == "fit":
            summary = runs.run_fit(rc, out)
        elif args.command == "tune-rlgs":
            summary = runs.run_rlgs(rc, out)
        elif args.command == "tune-rs":
            summary = runs.run_search(rc, out, "rs")
        elif args.command == "tune-tpe":
            summary = runs.run_search(rc, out, "tpe")
        else:
            rows = runs.run_ablation(rc, out)
            print(runs.format_table([{**r, "run": r["method"]} for r in rows]))
            return 0
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"rlgs2d: {args.command} failed: {exc}", file=sys.stderr)
        return 2
    print(f"{summary['method']}: test PSNR {summary['test_psnr']:.3f} dB, SSIM {summary['test_ssim']:.4f}, {summary['train_steps']} training steps -> {out}")
    return 0


def _report(args) -> int:
    if not args.directory.is_dir():
        print(f"rlgs2d: report: no such directory {args.directory}", file=sys.stderr)
        return 2
    rows = runs.collect(args.directory)
    if not rows:
        print(f"rlgs2d: report: no run summaries under {args.directory}", file=sys.stderr)
        return 2
    print(runs.format_table(rows))
    if args.out is not None:
        runs.write_csv(args.out, rows, ["run"] + runs.SUMMARY_COLUMNS)
    return 0


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
