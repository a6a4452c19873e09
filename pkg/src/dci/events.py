"""Append-only event log, one JSON document per line."""

from __future__ import annotations

import json
from collections.abc import Iterable, Iterator
from pathlib import Path
from typing import Any

from .errors import LogCorruption

REQUIRED = ("seq", "type", "session_id", "round")


def _plain(value: Any) -> Any:
    return json.loads(json.dumps(value))


class EventLog:
    """Events carry session_id, round and a log-wide monotonic ``seq`` starting at 1."""

    def __init__(self, events: Iterable[dict[str, Any]] = ()) -> None:
        self.events: list[dict[str, Any]] = list(events)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[dict[str, Any]]:
        return iter(self.events)

    def emit(self, type: str, session_id: str, round: int = 0, **data: Any) -> dict[str, Any]:
        event = {"seq": len(self.events) + 1, "type": type, "session_id": session_id, "round": round}
        event.update(_plain(data))
        self.events.append(event)
        return event

    def of_type(self, type: str, session_id: str | None = None) -> list[dict[str, Any]]:
        return [
            e for e in self.events
            if e["type"] == type and (session_id is None or e["session_id"] == session_id)
        ]

    def lines(self) -> list[str]:
        return [json.dumps(e, sort_keys=True) for e in self.events]

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.dumps(), encoding="utf-8")
        return path

    @classmethod
    def loads(cls, text: str) -> EventLog:
        events = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                event = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogCorruption(f"line {lineno} is not valid JSON: {exc}") from exc
            if not isinstance(event, dict) or any(k not in event for k in REQUIRED):
                raise LogCorruption(f"line {lineno} lacks one of {REQUIRED}")
            expected = len(events) + 1
            if event["seq"] != expected:
                raise LogCorruption(f"sequence gap at line {lineno}: expected seq {expected}, got {event['seq']}")
            events.append(event)
        if not events:
            raise LogCorruption("empty event log")
        return cls(events)

    @classmethod
    def read(cls, path: str | Path) -> EventLog:
        return cls.loads(Path(path).read_text(encoding="utf-8"))
