"""The decision packet every session ends with."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

from .convergence import CandidateOption, FallbackMethod, VerdictKind
from .delegate import DelegateState, ScoreSheet, canonical_key

GENERIC_REOPEN = "new material evidence on the selected option"

REQUIRED_KEYS = (
    "decision",
    "rationale",
    "supporting_evidence",
    "residual_objections",
    "minority_report",
    "action_plan",
    "assumptions",
    "risks",
    "reopen_conditions",
    "confidence",
    "forced_fallback",
)


@dataclass
class DecisionPacket:
    session_id: str
    decision: dict[str, str]
    rationale: str
    supporting_evidence: list[str]
    residual_objections: list[dict[str, Any]]
    minority_report: list[dict[str, Any]]
    next_actions: list[str]
    assumptions: list[str]
    risks: list[str]
    reopen_conditions: list[str]
    confidence: float
    forced_fallback: bool
    fallback_method: str | None = None
    verdict: str = VerdictKind.NONE.value
    rounds: int = 0
    carried_tensions: list[dict[str, Any]] = field(default_factory=list)

    def to_document(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "decision": dict(self.decision),
            "rationale": self.rationale,
            "supporting_evidence": list(self.supporting_evidence),
            "residual_objections": [dict(o) for o in self.residual_objections],
            "minority_report": [dict(m) for m in self.minority_report],
            "action_plan": list(self.next_actions),
            "assumptions": list(self.assumptions),
            "risks": list(self.risks),
            "reopen_conditions": list(self.reopen_conditions),
            "confidence": self.confidence,
            "forced_fallback": self.forced_fallback,
            "fallback_method": self.fallback_method,
            "convergence": self.verdict,
            "rounds": self.rounds,
            "carried_tensions": [dict(t) for t in self.carried_tensions],
        }

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> DecisionPacket:
        return cls(
            session_id=doc["session_id"],
            decision=dict(doc["decision"]),
            rationale=doc["rationale"],
            supporting_evidence=list(doc["supporting_evidence"]),
            residual_objections=[dict(o) for o in doc["residual_objections"]],
            minority_report=[dict(m) for m in doc["minority_report"]],
            next_actions=list(doc["action_plan"]),
            assumptions=list(doc["assumptions"]),
            risks=list(doc["risks"]),
            reopen_conditions=list(doc["reopen_conditions"]),
            confidence=doc["confidence"],
            forced_fallback=doc["forced_fallback"],
            fallback_method=doc.get("fallback_method"),
            verdict=doc.get("convergence", VerdictKind.NONE.value),
            rounds=doc.get("rounds", 0),
            carried_tensions=[dict(t) for t in doc.get("carried_tensions", ())],
        )


def validate_completeness(packet: DecisionPacket | Mapping[str, Any]) -> list[str]:
    """Names of missing or malformed packet fields; an empty list means complete."""
    doc = packet.to_document() if isinstance(packet, DecisionPacket) else packet
    missing = []
    for key in REQUIRED_KEYS:
        if doc.get(key) is None:
            missing.append(key)
    decision = doc.get("decision")
    if decision is not None and (
        not isinstance(decision, Mapping) or not decision.get("option_id") or not decision.get("label")
    ):
        missing.append("decision")
    if doc.get("rationale") is not None and not str(doc["rationale"]).strip():
        missing.append("rationale")
    for key in ("supporting_evidence", "residual_objections", "minority_report", "action_plan",
                "assumptions", "risks"):
        if doc.get(key) is not None and not isinstance(doc[key], list):
            missing.append(key)
    reopen = doc.get("reopen_conditions")
    if reopen is not None and (not isinstance(reopen, list) or not reopen) and "reopen_conditions" not in missing:
        missing.append("reopen_conditions")
    conf = doc.get("confidence")
    if conf is not None and (isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0 <= conf <= 1):
        missing.append("confidence")
    forced = doc.get("forced_fallback")
    if forced is not None and not isinstance(forced, bool):
        missing.append("forced_fallback")
    if forced is True and doc.get("fallback_method") not in {m.value for m in FallbackMethod}:
        missing.append("fallback_method")
    return sorted(set(missing), key=missing.index)


def _label_of(option_id: str, finalists: Sequence[CandidateOption]) -> str:
    for o in finalists:
        if o.option_id == option_id:
            return o.canonical_label
    return option_id


def build_minority_report(
    finalists: Sequence[CandidateOption],
    sheets: Sequence[ScoreSheet],
    winner: CandidateOption,
    delegate_states: Mapping[str, DelegateState] | None = None,
    council: Sequence[str] | None = None,
) -> list[dict[str, Any]]:
    """One entry per dissenting delegate, in council order.

    A delegate dissents when its final top choice is not the winner, or when it
    still holds an unwithdrawn objection against the winner.
    """
    states = delegate_states or {}
    by_delegate = {s.delegate: s for s in sheets}
    objectors: dict[str, list[str]] = {}
    for o in winner.record.standing_objections():
        objectors.setdefault(o.author, []).append(o.content)
    order = list(council) if council is not None else [s.delegate for s in sheets]
    for d in list(by_delegate) + list(objectors):
        if d not in order:
            order.append(d)

    report = []
    for d in order:
        sheet = by_delegate.get(d)
        diverges = sheet is not None and sheet.top_choice != winner.option_id
        objects = d in objectors
        if not (diverges or objects):
            continue
        state = states.get(d)
        preferred = sheet.top_choice if sheet is not None else winner.option_id
        reasoning = sheet.rationale.get(preferred, "") if sheet is not None else ""
        if not reasoning and objects:
            reasoning = "; ".join(objectors[d])
        if not reasoning:
            reasoning = f"rates {_label_of(preferred, finalists)} above {winner.canonical_label}"
        report.append(
            {
                "delegate": d,
                "position": (state.view if state and state.view else _label_of(preferred, finalists)),
                "preferred_option": preferred,
                "preferred_label": _label_of(preferred, finalists),
                "reasoning": reasoning,
                "objections": list(objectors.get(d, [])),
                "confidence": sheet.confidence if sheet is not None else (state.confidence if state else 0.0),
                "trigger": "top_choice" if diverges else "objection",
            }
        )
    return report


def derive_reopen_conditions(winner: CandidateOption) -> list[str]:
    """Assumptions, fatal residual objections and hard recommend suggestions, deduplicated.

    Never empty: with nothing to go on, a generic evidence trigger is used.
    """
    record = winner.record
    conditions: list[str] = []
    seen: set[str] = set()

    def add(text: str) -> None:
        key = canonical_key(text)
        if key and key not in seen:
            seen.add(key)
            conditions.append(text)

    for a in record.assumptions:
        add(f"assumption no longer holds: {a.text}")
    for o in record.blocking_objections():
        add(f"evidence substantiates objection: {o.content}")
    for s in record.reopen_suggestions:
        add(s.text)
    if not conditions:
        conditions.append(GENERIC_REOPEN)
    return conditions


def compute_confidence(
    winner_id: str, sheets: Sequence[ScoreSheet], delegate_states: Mapping[str, DelegateState] | None = None
) -> float:
    """Mean confidence of the winner's backers, else the lowest confidence on the council."""
    backers = [s.confidence for s in sheets if s.top_choice == winner_id]
    if backers:
        return sum(backers) / len(backers)
    if sheets:
        return min(s.confidence for s in sheets)
    states = [s.confidence for s in (delegate_states or {}).values()]
    return min(states) if states else 0.0


def _rationale(
    winner: CandidateOption, forced: bool, method: str | None, verdict: str, rounds: int,
    ranking: Sequence[Any], backers: int, council: int,
) -> str:
    if forced:
        head = (
            f"No convergence after {rounds} round(s); {winner.canonical_label} is the procedural "
            f"winner of the forced-decision cascade ({method})."
        )
    else:
        head = f"Converged on {winner.canonical_label} in round {rounds} via {verdict}."
    scores = [r for r in ranking if r.option_id == winner.option_id]
    if scores:
        head += f" Normalized score {scores[0].normalized:.3f}"
        if len(ranking) > 1:
            runner = ranking[1] if ranking[0].option_id == winner.option_id else ranking[0]
            head += f" against {runner.normalized:.3f} for the next option"
        head += "."
    return f"{head} Top choice of {backers} of {council} delegates."


def finalize_decision(
    winner: CandidateOption,
    finalists: Sequence[CandidateOption],
    sheets: Sequence[ScoreSheet],
    forced: bool = False,
    method: FallbackMethod | str | None = None,
    *,
    session_id: str = "",
    verdict: VerdictKind | str = VerdictKind.NONE,
    rounds: int = 0,
    ranking: Sequence[Any] = (),
    delegate_states: Mapping[str, DelegateState] | None = None,
    council: Sequence[str] | None = None,
    carried_tensions: Sequence[Mapping[str, Any]] = (),
) -> DecisionPacket:
    if winner.option_id not in {f.option_id for f in finalists}:
        raise ValueError(f"winner {winner.option_id} is not a finalist")
    method_value = FallbackMethod(method).value if method is not None else None
    verdict_value = VerdictKind(verdict).value
    record = winner.record
    council_ids = list(council) if council is not None else [s.delegate for s in sheets]
    actions = [a.text for a in record.actions] or [f"adopt {winner.canonical_label}: {winner.description}"]
    packet = DecisionPacket(
        session_id=session_id,
        decision={
            "option_id": winner.option_id,
            "label": winner.canonical_label,
            "content": winner.description,
        },
        rationale=_rationale(
            winner, forced, method_value, verdict_value, rounds, ranking,
            sum(1 for s in sheets if s.top_choice == winner.option_id), len(council_ids),
        ),
        supporting_evidence=[e.text for e in record.evidence] + [p.text for p in record.pros],
        residual_objections=[
            {"author": o.author, "round": o.round, "content": o.content, "fatal": o.fatal, "move_id": o.move_id}
            for o in record.standing_objections()
        ],
        minority_report=build_minority_report(finalists, sheets, winner, delegate_states, council_ids),
        next_actions=actions,
        assumptions=[a.text for a in record.assumptions],
        risks=[r.text for r in record.risks],
        reopen_conditions=derive_reopen_conditions(winner),
        confidence=compute_confidence(winner.option_id, sheets, delegate_states),
        forced_fallback=forced,
        fallback_method=method_value,
        verdict=verdict_value,
        rounds=rounds,
        carried_tensions=[dict(t) for t in carried_tensions],
    )
    assert not validate_completeness(packet), validate_completeness(packet)
    return packet
