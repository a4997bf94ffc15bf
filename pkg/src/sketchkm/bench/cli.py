"""Command-line entry point: ``bench run | report | sketch-diag``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..data import DataFormatError
from .config import ConfigError, load_config
from .report import FORMATS, ReportError, report
from .runner import run_experiment, sketch_diag, write_record

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def _parser():
    ap = argparse.ArgumentParser(prog="bench", description="Sketched kernel machine benchmarks.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("--config", required=True)
    run.add_argument("--output", help="output directory (overrides the config)")
    rep = sub.add_parser("report", help="summarize run records")
    rep.add_argument("--format", choices=FORMATS, default="markdown")
    rep.add_argument("--out", help="write to file instead of stdout")
    rep.add_argument("records", nargs="+")
    diag = sub.add_parser("sketch-diag", help="K-satisfiability diagnostics")
    diag.add_argument("--config", required=True)
    return ap


def _cmd_run(args):
    cfg = load_config(args.config)
    out = args.output or cfg.output or "bench_out/" + cfg.name
    record = run_experiment(cfg)
    write_record(record, out)
    n_fail = sum(r["error"] is not None for r in record["rows"])
    print(f"{len(record['rows']) - n_fail}/{len(record['rows'])} replicate fits succeeded; "
          f"record written to {out}")
    if n_fail == len(record["rows"]):
        return EXIT_SOLVER
    return EXIT_OK


def _cmd_diag(args):
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text()) if path.suffix != ".toml" else None
        if raw is None:
            from .config import tomllib
            raw = tomllib.loads(path.read_text())
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from None
    print(json.dumps(sketch_diag(raw), indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "report":
            text = report(args.records, args.format)
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        return _cmd_diag(args)
    except (ConfigError, ReportError, DataFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
