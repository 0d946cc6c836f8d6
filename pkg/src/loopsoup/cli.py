"""Command line: ``loopsoup {verify,estimate,sample,radial} --config FILE``.

Exit codes: 0 success, 1 a check failed, 2 the configuration was rejected.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import checks
from .config import Config, load_config
from .engine import stream_for
from .errors import ConfigError, NegativeRate, SingularGenerator, UnsupportedDimension
from .loops import sample_loop_soup, soups_to_text

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
PASS_FRACTION = 0.95
REPORT_VERSION = 1

_CONFIG_ERRORS = (ConfigError, SingularGenerator, NegativeRate, UnsupportedDimension)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON config file")
    common.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
    common.add_argument("--out", help="output path (report, soup file or radial summary)")
    common.add_argument("--threads", type=int, help="worker threads for Monte Carlo shards")
    common.add_argument("--timings", action="store_true", help="record wall times in the report")
    p = argparse.ArgumentParser(prog="loopsoup", description="Loop soup moment and chaos checks.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("verify", parents=[common], help="exact identity checks")
    sub.add_parser("estimate", parents=[common], help="Monte Carlo comparison checks")
    s = sub.add_parser("sample", parents=[common], help="write sampled loop soups as text")
    s.add_argument("--count", type=int, help="number of soups (default: config sample_count)")
    sub.add_parser("radial", parents=[common], help="radial convolution asymptotics")
    return p


def _prepare(args) -> Config:
    config = load_config(args.config)
    update = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        update["seed"] = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        update["threads"] = args.threads
    if args.timings:
        update["output"] = config.output.model_copy(update={"timings": True})
    return config.model_copy(update=update)


def _json_default(v):
    if isinstance(v, (np.generic, np.ndarray)):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _report(command: str, config: Config, rows, notes=(), extra=None) -> str:
    out_rows = []
    for r in rows:
        d = r.to_dict()
        if not config.output.timings:
            d["seconds"] = None
        out_rows.append(d)
    doc = {
        "report_version": REPORT_VERSION,
        "command": command,
        "seed": config.seed,
        "config_sha256": hashlib.sha256(config.fingerprint().encode()).hexdigest(),
        "summary": checks.summarize(rows),
        "rows": out_rows,
    }
    if notes:
        doc["notes"] = list(notes)
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, default=_json_default) + "\n"


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def cmd_verify(args) -> int:
    config = _prepare(args)
    rows = checks.run_suite(config, checks.EXACT)
    _emit(_report("verify", config, rows), args.out or config.output.report)
    return EXIT_OK if all(r.passed for r in rows) else EXIT_FAIL


def cmd_estimate(args) -> int:
    config = _prepare(args)
    rows = checks.run_suite(config, checks.MONTE_CARLO)
    _emit(_report("estimate", config, rows, extra={"required_pass_fraction": PASS_FRACTION}),
          args.out or config.output.report)
    if any(r.kind == "error" for r in rows):
        return EXIT_FAIL
    return EXIT_OK if checks.pass_fraction(rows) >= PASS_FRACTION else EXIT_FAIL


def cmd_sample(args) -> int:
    config = _prepare(args)
    count = config.sample_count if args.count is None else args.count
    if count < 0:
        raise ConfigError("--count must be nonnegative")
    ctx = checks.Context(config, config.seed, 1)
    measure = ctx.loop_measure()
    soups = []
    for i in range(count):
        seed_i = int(stream_for(config.seed, f"sample/{i}").generate_state(1, np.uint64)[0])
        soups.append(sample_loop_soup(measure, config.alpha[0], seed_i))
    text = soups_to_text(soups)
    path = args.out or config.output.soups
    if path is None:
        sys.stdout.write(text)
    else:
        _emit(text, path)
    return EXIT_OK


def cmd_radial(args) -> int:
    config = _prepare(args)
    out = args.out or config.output.report
    csv_dir = config.output.csv_dir
    if csv_dir is None and out is not None:
        csv_dir = str(Path(out).with_suffix("")) + "_tables"
    rows, notes = checks.run_radial(config, csv_dir)
    _emit(_report("radial", config, rows, notes, {"csv_dir": csv_dir}), out)
    return EXIT_OK if all(r.passed for r in rows) else EXIT_FAIL


COMMANDS = {"verify": cmd_verify, "estimate": cmd_estimate, "sample": cmd_sample, "radial": cmd_radial}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except _CONFIG_ERRORS as exc:
        print(f"loopsoup: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
