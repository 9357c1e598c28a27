"""``groundtrace`` command line.

Precedence: built-in defaults, then ``--config FILE``, then explicit flags.
Environment variables are never read.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import typing

from groundtrace.config import RunConfig
from groundtrace.pipeline import COMMANDS, SYNTH_KINDS, PipelineError
from groundtrace.trace_model import TraceFormatError

_HELP = {
    "score": "segment, classify termination, match answers and derive the signals table from trace files",
    "layers": "per-layer evidence AUROC on calibration traces and the selected grounding block",
    "analyze": "entropy, decay and per-position trajectory tables from signals tables",
    "transfer": "cross-dataset probe transfer for each ladder level",
    "veto": "entropy-only deferral against the vision veto on every transfer pair",
    "quadrants": "confident/uncertain x grounded/blind error rates on each transfer test set",
    "synth": "write a seeded synthetic corpus, feature table, mixture or calibration set",
    "report": "analyze + transfer + veto + quadrants + interaction, sign and length diagnostics",
}


def _key_value(text: str) -> tuple[str, typing.Any]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _layer_map(text: str) -> tuple[str, list[int]]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected MODEL=L1,L2,..., got {text!r}")
    model, raw = text.split("=", 1)
    try:
        return model, [int(x) for x in raw.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad layer list {raw!r}") from None


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    hints = typing.get_type_hints(RunConfig)
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        hint = hints[f.name]
        if f.name == "inputs":
            p.add_argument("inputs", nargs="*", default=argparse.SUPPRESS, help="input files")
        elif f.name == "grounding_layers":
            p.add_argument(flag, type=_layer_map, action="append", default=argparse.SUPPRESS, metavar="MODEL=L1,L2")
        elif f.name == "synth":
            p.add_argument(flag, type=_key_value, action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE")
        elif f.name == "synth_kind":
            p.add_argument(flag, choices=SYNTH_KINDS, default=argparse.SUPPRESS)
        elif hint is bool:
            p.add_argument(flag, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
        elif hint in (int, float, str):
            p.add_argument(flag, type=hint, default=argparse.SUPPRESS)
        else:
            args = [a for a in typing.get_args(hint) if a is not type(None)]
            inner = typing.get_args(args[0])[0] if args and typing.get_args(args[0]) else str
            p.add_argument(flag, type=inner, nargs="+", default=argparse.SUPPRESS)
    p.add_argument("--config", help="JSON file supplying defaults (for example a config.resolved.json echo)")
    p.add_argument("--workers", type=int, default=1, help="worker threads; results do not depend on it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groundtrace", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        _add_config_flags(sub.add_parser(name, help=_HELP[name]))
    return parser


def resolve_config(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(ns.config) if ns.config else RunConfig()
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "config", "workers")}
    if "grounding_layers" in given:
        given["grounding_layers"] = {**cfg.grounding_layers, **dict(given["grounding_layers"])}
    if "synth" in given:
        given["synth"] = {**cfg.synth, **dict(given["synth"])}
    return dataclasses.replace(cfg, **given)


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(ns)
        if ns.workers < 1:
            raise ValueError("--workers must be >= 1")
        COMMANDS[ns.command](cfg, ns.workers)
    except (PipelineError, TraceFormatError, ValueError, OSError) as exc:
        print(f"groundtrace {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
