"""Scripted scenario files: load, run, and check expected outcomes."""

from __future__ import annotations

import json
import tempfile
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .delegate import ArchetypeKind, Delegate, RemoteDelegate, ScriptedDelegate
from .errors import ExpectationMismatch, InvalidEnvelope, ScenarioParseError
from .events import EventLog
from .flow import SessionRunner
from .packet import DecisionPacket
from .session import SessionEnvelope, validate_envelope

SCENARIO_DIR = Path(__file__).with_name("scenarios")


def bundled_scenarios() -> list[Path]:
    return sorted(SCENARIO_DIR.glob("*.json"))


@dataclass
class Scenario:
    name: str
    envelope: SessionEnvelope
    delegates: list[Delegate]
    expected: dict[str, Any] = field(default_factory=dict)


def load_scenario(path: str | Path, allow_remote: bool = False) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioParseError(f"{path}: {exc}") from exc
    return parse_scenario(doc, base_dir=path.parent, allow_remote=allow_remote, name=path.stem)


def parse_scenario(
    doc: Mapping[str, Any], base_dir: Path | None = None, allow_remote: bool = False, name: str = "scenario"
) -> Scenario:
    if not isinstance(doc, Mapping) or "session" not in doc or "delegates" not in doc:
        raise ScenarioParseError("a scenario needs 'session' and 'delegates'")
    session = dict(doc["session"])
    roster = []
    delegates: list[Delegate] = []
    for entry in doc["delegates"]:
        try:
            did, kind = entry["id"], ArchetypeKind(entry["archetype"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ScenarioParseError(f"bad delegate entry {entry!r}: {exc}") from exc
        roster.append({"id": did, "archetype": kind.value})
        if "remote" in entry:
            if not allow_remote:
                raise ScenarioParseError(f"{did} is a remote delegate; pass allow_remote to run it")
            remote = entry["remote"] or {}
            delegates.append(RemoteDelegate(did, kind, endpoint=remote.get("endpoint")))
            continue
        script = entry.get("script")
        if script is None and "script_path" in entry:
            script_path = Path(base_dir or ".") / entry["script_path"]
            try:
                script = json.loads(script_path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ScenarioParseError(f"{script_path}: {exc}") from exc
        if not isinstance(script, Mapping) or "proposal" not in script:
            raise ScenarioParseError(f"{did} has no script covering its proposal")
        delegates.append(ScriptedDelegate(did, kind, script))
    session["delegates"] = roster
    try:
        envelope = SessionEnvelope.from_dict(session)
        validate_envelope(envelope)
    except (InvalidEnvelope, TypeError) as exc:
        raise ScenarioParseError(f"bad session block: {exc}") from exc
    return Scenario(doc.get("name", name), envelope, delegates, dict(doc.get("expected", {})))


def observed_outcome(packet: DecisionPacket, log: EventLog) -> dict[str, Any]:
    """Everything an expectation block may pin, measured from a finished run."""
    root = packet.session_id
    return {
        "decision_label": packet.decision["label"],
        "verdict": packet.verdict,
        "rounds": packet.rounds,
        "forced_fallback": packet.forced_fallback,
        "fallback_method": packet.fallback_method,
        "minority_report_size": len(packet.minority_report),
        "minority_labels": [m["preferred_label"] for m in packet.minority_report],
        "reopen_conditions": len(packet.reopen_conditions),
        "reopen_includes": list(packet.reopen_conditions),
        "move_count": len(log.of_type("move_accepted", root)),
        "open_tensions": len(packet.carried_tensions),
        "subsessions": len({e["session_id"] for e in log.of_type("session_started")}) - 1,
    }


def check_expectations(expected: Mapping[str, Any], observed: Mapping[str, Any]) -> dict[str, dict[str, Any]]:
    """Compare field by field. ``reopen_includes`` is a subset check; every other key is exact."""
    report = {}
    for key, want in expected.items():
        if key not in observed:
            raise ScenarioParseError(f"unknown expectation {key!r}")
        got = observed[key]
        if key == "reopen_includes":
            ok = all(w in got for w in want)
        else:
            ok = got == want
        report[key] = {"expected": want, "actual": got, "ok": ok}
    return report


def run_scenario(
    path: str | Path, log_path: str | Path | None = None, allow_remote: bool = False
) -> tuple[DecisionPacket, Path, dict[str, dict[str, Any]]]:
    """Run a scenario end to end, write its event log, and check its expectations.

    Raises ExpectationMismatch on the first failing field, after the log is written.
    """
    path = Path(path)
    scenario = load_scenario(path, allow_remote=allow_remote)
    log = EventLog()
    packet = SessionRunner(scenario.envelope, scenario.delegates, log=log).run()
    if log_path is None:
        log_path = Path(tempfile.gettempdir()) / f"{path.stem}.events.jsonl"
    log_path = log.write(log_path)
    report = check_expectations(scenario.expected, observed_outcome(packet, log))
    for key, row in report.items():
        if not row["ok"]:
            raise ExpectationMismatch(key, row["expected"], row["actual"])
    return packet, log_path, report
