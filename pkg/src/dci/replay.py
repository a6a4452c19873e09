"""Rebuild a session from its event log and check it reproduces the logged run.

Delegates are the only source of nondeterminism, and every delegate response
is logged before the engine acts on it. Replay feeds those responses back in
order through the same reducers and then demands an identical event stream.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .convergence import CandidateOption
from .delegate import Delegate, Proposal, ScoreSheet, Turn
from .errors import IncompleteScoreSheet, LogCorruption, ProviderFailure, ScenarioExhausted
from .events import EventLog
from .flow import SessionRunner
from .grammar import Rejection
from .packet import DecisionPacket
from .session import SessionEnvelope
from .workspace import Workspace

_ERRORS = {e.__name__: e for e in (ScenarioExhausted, ProviderFailure, IncompleteScoreSheet)}

Calls = dict[tuple[str, str], deque]


class ReplayDelegate(Delegate):
    """Answers each call with the next logged response for (session, delegate)."""

    def __init__(self, delegate_id: str, archetype: Any, session_id: str, calls: Calls) -> None:
        super().__init__(delegate_id, archetype)
        self.session_id = session_id
        self._calls = calls

    def _next(self, call: str) -> Any:
        queue = self._calls.get((self.session_id, self.delegate_id))
        if not queue:
            raise LogCorruption(f"log has no further {call} call for {self.delegate_id} in {self.session_id}")
        event = queue.popleft()
        if event["call"] != call:
            raise LogCorruption(
                f"seq {event['seq']}: engine asked {self.delegate_id} for {call}, log recorded {event['call']}"
            )
        if "error" in event:
            err = event["error"]
            raise _ERRORS.get(err["type"], ProviderFailure)(err["message"])
        return event["response"]

    def _decode(self, call: str, build: Callable[[Any], Any]) -> Any:
        response = self._next(call)
        try:
            return build(response)
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise LogCorruption(f"logged {call} response for {self.delegate_id} is malformed: {exc}") from exc

    def generate_proposal(self, problem: str) -> Proposal:
        return self._decode("proposal", lambda doc: Proposal.from_dict(doc, author=self.delegate_id))

    def contribute(self, option: CandidateOption, round: int, context: Mapping[str, Any]) -> Turn:
        return self._decode("contribute", Turn.from_dict)

    def score(self, finalists: Sequence[CandidateOption], criteria: Mapping[str, float]) -> ScoreSheet:
        return self._decode("score", ScoreSheet.from_dict)

    def integrator_pick(self, top2: Sequence[CandidateOption]) -> str:
        return self._next("integrator_pick")

    def revise(self, document: Mapping[str, Any], rejection: Rejection) -> Mapping[str, Any]:
        return self._next("revise")

    def spawn_child(self, session_id: str, subproblem: str, spawn_move_id: str) -> Delegate:
        return ReplayDelegate(self.delegate_id, self.archetype, session_id, self._calls)


@dataclass
class ReplayResult:
    packet: DecisionPacket
    workspace: Workspace
    log: EventLog


def _first_divergence(logged: EventLog, replayed: EventLog) -> str | None:
    for a, b in zip(logged, replayed):
        if a != b:
            return f"seq {a['seq']}: logged {a['type']} differs from replayed {b['type']}"
    if len(logged) != len(replayed):
        return f"logged {len(logged)} events, replay produced {len(replayed)}"
    return None


def replay_log(log: EventLog) -> ReplayResult:
    starts = log.of_type("session_started")
    if not starts or starts[0]["seq"] != 1:
        raise LogCorruption("log does not open with session_started")
    root = starts[0]
    calls: Calls = {}
    for e in log.of_type("delegate_call"):
        for key in ("delegate", "call"):
            if key not in e:
                raise LogCorruption(f"seq {e['seq']}: delegate_call lacks {key!r}")
        if "response" not in e and "error" not in e:
            raise LogCorruption(f"seq {e['seq']}: delegate_call has neither response nor error")
        calls.setdefault((e["session_id"], e["delegate"]), deque()).append(e)
    try:
        envelope = SessionEnvelope.from_dict(root["envelope"])
    except (KeyError, TypeError) as exc:
        raise LogCorruption(f"session_started carries no usable envelope: {exc}") from exc
    delegates = [
        ReplayDelegate(m.delegate_id, m.archetype, envelope.session_id, calls) for m in envelope.delegates
    ]
    fresh = EventLog()
    runner = SessionRunner(envelope, delegates, log=fresh)
    packet = runner.run()
    problem = _first_divergence(log, fresh)
    if problem:
        raise LogCorruption(f"replay diverged from the log at {problem}")
    return ReplayResult(packet, runner.state.workspace, fresh)


def replay(path: str | Path) -> ReplayResult:
    return replay_log(EventLog.read(path))
