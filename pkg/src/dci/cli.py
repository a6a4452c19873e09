"""Command-line front end: run, fuzz, replay, validate, bound."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from dataclasses import fields
from pathlib import Path
from typing import Any

from .errors import DCIError, ParseError
from .fuzz import POPULATIONS, FuzzRanges, fuzz_termination
from .grammar import parse_move
from .packet import validate_completeness
from .replay import replay
from .scenario import run_scenario
from .session import effective_bound, per_depth_caps, termination_bound

log = logging.getLogger("dci")


def _load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _print(doc: Any) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def cmd_run(args: argparse.Namespace, config: dict[str, Any]) -> int:
    packet, log_path, report = run_scenario(args.scenario, log_path=args.log, allow_remote=args.allow_remote)
    _print({"packet": packet.to_document(), "log": str(log_path), "expectations": report})
    return 0


def cmd_fuzz(args: argparse.Namespace, config: dict[str, Any]) -> int:
    ranges_doc = dict(config.get("ranges", {}))
    known = {f.name for f in fields(FuzzRanges)}
    unknown = set(ranges_doc) - known
    if unknown:
        raise SystemExit(f"unknown fuzz ranges: {sorted(unknown)}")
    ranges = FuzzRanges(**{k: tuple(v) for k, v in ranges_doc.items()})
    report = fuzz_termination(args.seed, args.runs, ranges, args.population)
    _print(report.to_dict())
    return 0 if report.passed else 1


def cmd_replay(args: argparse.Namespace, config: dict[str, Any]) -> int:
    result = replay(args.log)
    _print(result.packet.to_document())
    return 0


def cmd_validate(args: argparse.Namespace, config: dict[str, Any]) -> int:
    doc = json.loads(Path(args.document).read_text(encoding="utf-8"))
    if isinstance(doc, dict) and "act" in doc:
        try:
            parse_move(doc)
        except ParseError as exc:
            _print({"kind": "move", "valid": False, "reason": exc.code, "field": exc.field, "message": exc.message})
            return 1
        _print({"kind": "move", "valid": True})
        return 0
    missing = validate_completeness(doc if isinstance(doc, dict) else {})
    _print({"kind": "packet", "valid": not missing, "missing": missing})
    return 0 if not missing else 1


def cmd_bound(args: argparse.Namespace, config: dict[str, Any]) -> int:
    def pick(name: str, default: int) -> int:
        value = getattr(args, name)
        return int(value if value is not None else config.get(name, default))

    max_rounds = pick("max_rounds", 2)
    max_depth = pick("max_depth", 2)
    max_children = pick("max_children", 2)
    ceiling = pick("tree_ceiling", 50)
    caps = per_depth_caps(max_depth, max_children)
    _print(
        {
            "max_rounds": max_rounds,
            "per_depth_caps": caps,
            "t_max": termination_bound(max_rounds, caps),
            "tree_ceiling": ceiling,
            "effective_bound": effective_bound(max_rounds, caps, ceiling),
        }
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dci", description=__doc__)
    parser.add_argument("--config", help="JSON file with defaults (fuzz 'ranges', bound parameters)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file, write its event log, check expectations")
    p.add_argument("scenario")
    p.add_argument("--log", help="event log path (default: temp dir)")
    p.add_argument("--allow-remote", action="store_true", help="permit remote delegates in the scenario")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("fuzz", help="fuzz termination with seeded random councils")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--runs", type=int, default=1000)
    p.add_argument("--population", choices=POPULATIONS, default="mixed")
    p.set_defaults(handler=cmd_fuzz)

    p = sub.add_parser("replay", help="replay an event log and verify it reproduces the packet")
    p.add_argument("log")
    p.set_defaults(handler=cmd_replay)

    p = sub.add_parser("validate", help="validate a move document or a decision packet")
    p.add_argument("document")
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("bound", help="print the worst-case round bound for a configuration")
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--max-children", type=int)
    p.add_argument("--tree-ceiling", type=int)
    p.set_defaults(handler=cmd_bound)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = _load_config(args.config)
        return args.handler(args, config)
    except (DCIError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
