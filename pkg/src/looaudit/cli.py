"""Command-line entry point: ``looaudit <subcommand> ...``.

Exit codes: 0 success, 1 a claim or audit failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import parse_config
from .errors import ConfigurationError, LooAuditError
from .harness import run_audit, run_scenario, write_rasters
from .metrics import dp_luf_bound
from .scenarios import SCENARIOS

log = logging.getLogger("looaudit")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 already; keep the message terse
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(2)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="output directory (default: the config's output_dir)")
    p.add_argument("--parallelism", type=int, help="worker processes for training")
    p.add_argument("--cache", help="model cache directory (default: <out>/cache)")
    p.add_argument("--no-cache", action="store_true", help="train everything from scratch")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="looaudit", description="Leave-one-out unfairness audits.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("audit", help="run the audit described by a config file")
    p.add_argument("config")
    _add_run_flags(p)

    p = sub.add_parser("boundary", help="decision-boundary rasters for 2-feature data")
    p.add_argument("config")
    _add_run_flags(p)

    p = sub.add_parser("scenario", help="run a built-in self-checking scenario")
    p.add_argument("name", choices=sorted(SCENARIOS))
    p.add_argument("--out", default=None, help="write report.json (and rasters) here")

    p = sub.add_parser("bound", help="print the LUF upper bound e^eps - 1 + delta")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, default=0.0)

    p = sub.add_parser("validate", help="parse and validate a config without running it")
    p.add_argument("config")
    return parser


def _print_claims(result) -> None:
    for c in result.claims:
        mark = "PASS" if c.passed else "FAIL"
        print(f"[{mark}] {c.description}: observed {c.observed!r}, expected {c.expected!r}")


def _run_config(args, force_mode: str | None = None) -> int:
    cfg = parse_config(args.config)
    if force_mode is not None and cfg.mode != force_mode:
        cfg = replace(cfg, mode=force_mode)
    if args.parallelism is not None and args.parallelism < 1:
        raise ConfigurationError("must be at least 1", key="--parallelism")
    manifest, passed = run_audit(
        cfg, args.out, parallelism=args.parallelism, cache_dir=args.cache, use_cache=not args.no_cache
    )
    out = args.out or cfg.output_dir
    print(f"{cfg.mode}: wrote {out} (retrained {manifest.retrained}, cache hits {manifest.cache_hits})")
    return 0 if passed else 1


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        if args.command == "bound":
            print(repr(dp_luf_bound(args.epsilon, args.delta)))
            return 0
        if args.command == "validate":
            cfg = parse_config(args.config)
            print(f"ok: mode={cfg.mode} config_hash={cfg.config_hash()}")
            return 0
        if args.command == "scenario":
            result = run_scenario(args.name)
            _print_claims(result)
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                (out / "report.json").write_text(result.to_json())
                write_rasters(result, out)
            return 0 if result.passed else 1
        if args.command == "boundary":
            return _run_config(args, force_mode="boundary")
        return _run_config(args)
    except ConfigurationError as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return 2
    except LooAuditError as exc:
        sys.stderr.write(f"audit failed: {exc}\n")
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
