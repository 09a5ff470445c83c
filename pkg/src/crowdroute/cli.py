"""Command-line entry point: `crowdroute <subcommand> [flags]`.

Exit codes: 0 pass (or plain data output), 1 failed check, 2 inconclusive
Monte-Carlo check, 3 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, parse_config_text, resolve_config
from .experiments import COMMANDS, run_command
from .model import ModelError
from .traces import TraceError, UnidentifiableError

EXIT_USAGE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crowdroute", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        doc = (COMMANDS[name].__doc__ or "").strip()
        p = sub.add_parser(name, help=doc.splitlines()[0] if doc else None, description=doc or None)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--target", help="preset: fig2, fig3a, fig3b, fig5, shanghai or none")
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--out", help="output directory (default: print to stdout)")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override one configuration key (repeatable)",
        )
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def write_outputs(result, cfg, out: str | None) -> None:
    body = result.to_json() if cfg.format == "json" else result.to_csv()
    if not out:
        sys.stdout.write(body)
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / f"{result.command}.{cfg.format}").write_text(body)
    if cfg.format == "csv":
        (d / f"{result.command}_report.json").write_text(result.to_json())
    (d / f"{result.command}.config").write_text(cfg.to_text())


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = parse_config_text("\n".join(args.set), "--set")
        flags = dict(seed=args.seed, trials=args.trials, horizon=args.horizon, out=args.out, format=args.format)
        overrides.update({k: v for k, v in flags.items() if v is not None})
        cfg = resolve_config(args.target, args.config, overrides)
        result = run_command(args.command, cfg)
        write_outputs(result, cfg, cfg.out or None)
    except (ConfigError, ModelError, TraceError, UnidentifiableError, OSError) as exc:
        print(f"crowdroute {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if result.status.value != "ok":
        print(f"crowdroute {args.command}: {result.status.value}", file=sys.stderr)
    return result.status.exit_code


if __name__ == "__main__":
    sys.exit(main())
