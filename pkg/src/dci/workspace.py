"""The shared six-section workspace and the reducer that applies moves to it.

Sections: problem_view, key_frames, emerging_ideas, tensions, synthesis,
next_actions. Each act writes to a fixed set of sections (``SECTIONS_BY_ACT``);
nothing else mutates a workspace. Tensions are never deleted, only moved from
open to resolved or carried_forward.
"""

from __future__ import annotations

import copy
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .errors import PhaseMismatch
from .grammar import ActType, Move, Phase

SECTIONS = ("problem_view", "key_frames", "emerging_ideas", "tensions", "synthesis", "next_actions")

# Upper bound on what each act may touch. Some moves touch a subset, e.g. a soft
# challenge against an unsupported idea leaves the tensions alone.
SECTIONS_BY_ACT: dict[ActType, frozenset[str]] = {
    ActType.FRAME: frozenset({"problem_view", "key_frames"}),
    ActType.REFRAME: frozenset({"problem_view", "key_frames"}),
    ActType.CLARIFY: frozenset({"problem_view"}),
    ActType.PROPOSE: frozenset({"emerging_ideas"}),
    ActType.EXTEND: frozenset({"emerging_ideas"}),
    ActType.SPAWN: frozenset({"emerging_ideas"}),
    ActType.ASK: frozenset({"tensions"}),
    ActType.CHALLENGE: frozenset({"tensions"}),
    ActType.BRIDGE: frozenset({"synthesis", "tensions"}),
    ActType.SYNTHESIZE: frozenset({"synthesis"}),
    ActType.RECALL: frozenset({"synthesis"}),
    ActType.GROUND: frozenset({"emerging_ideas", "tensions"}),
    ActType.UPDATE: frozenset({"emerging_ideas", "tensions"}),
    ActType.RECOMMEND: frozenset({"next_actions"}),
}


class TensionStatus(str, Enum):
    OPEN = "open"
    RESOLVED = "resolved"
    CARRIED_FORWARD = "carried_forward"


@dataclass
class Revision:
    text: str
    move_id: str | None


@dataclass
class Frame:
    frame_id: str
    description: str
    author: str


@dataclass
class Idea:
    idea_id: str
    description: str
    author: str
    move_ids: list[str]
    supporters: list[str] = field(default_factory=list)
    evidence: list[str] = field(default_factory=list)
    extensions: list[str] = field(default_factory=list)
    kind: str = "idea"
    origin_session: str | None = None

    @property
    def ref(self) -> str:
        return f"contribution:{self.idea_id}"


@dataclass
class Tension:
    tension_id: str
    conflicting_positions: list[str]
    evidence_per_side: dict[str, list[str]]
    resolution_condition: str
    status: TensionStatus = TensionStatus.OPEN
    move_ids: list[str] = field(default_factory=list)
    questions: list[str] = field(default_factory=list)
    resolved_by: str | None = None
    origin_session: str | None = None

    def __post_init__(self) -> None:
        if len(self.conflicting_positions) < 2:
            raise ValueError("a tension needs at least two conflicting positions")

    def resolve(self, move_id: str) -> None:
        if self.status is not TensionStatus.OPEN:
            raise ValueError(f"tension {self.tension_id} is {self.status.value}, not open")
        self.status = TensionStatus.RESOLVED
        self.resolved_by = move_id

    def carry_forward(self) -> None:
        if self.status is not TensionStatus.OPEN:
            raise ValueError(f"tension {self.tension_id} is {self.status.value}, not open")
        self.status = TensionStatus.CARRIED_FORWARD

    def to_dict(self) -> dict[str, Any]:
        return {
            "tension_id": self.tension_id,
            "conflicting_positions": list(self.conflicting_positions),
            "evidence_per_side": {k: list(v) for k, v in self.evidence_per_side.items()},
            "resolution_condition": self.resolution_condition,
            "status": self.status.value,
            "move_ids": list(self.move_ids),
            "questions": list(self.questions),
            "resolved_by": self.resolved_by,
            "origin_session": self.origin_session,
        }


@dataclass
class Workspace:
    problem_view: str
    problem_history: list[Revision] = field(default_factory=list)
    key_frames: list[Frame] = field(default_factory=list)
    emerging_ideas: list[Idea] = field(default_factory=list)
    tensions: list[Tension] = field(default_factory=list)
    synthesis: str = ""
    synthesis_history: list[Revision] = field(default_factory=list)
    next_actions: list[str] = field(default_factory=list)
    provenance: list[dict[str, Any]] = field(default_factory=list)

    def idea_for(self, move_id: str | None) -> Idea | None:
        if move_id is None:
            return None
        for idea in self.emerging_ideas:
            if move_id in idea.move_ids:
                return idea
        return None

    def tension_for(self, ref: str) -> Tension | None:
        """First open tension that holds ``ref`` as a position or contains the cited move."""
        cited = ref.split(":", 1)[1] if ref.startswith("contribution:") else None
        for t in self.tensions:
            if t.status is not TensionStatus.OPEN:
                continue
            if ref in t.conflicting_positions or (cited is not None and cited in t.move_ids):
                return t
        return None

    def _next_tension_id(self) -> str:
        return f"T{len(self.tensions) + 1:03d}"

    def snapshot(self) -> dict[str, Any]:
        """Export keyed by the six section names."""
        return {
            "problem_view": {
                "text": self.problem_view,
                "history": [vars(r).copy() for r in self.problem_history],
            },
            "key_frames": [vars(f).copy() for f in self.key_frames],
            "emerging_ideas": [copy.deepcopy(vars(i)) for i in self.emerging_ideas],
            "tensions": [t.to_dict() for t in self.tensions],
            "synthesis": {
                "text": self.synthesis,
                "history": [vars(r).copy() for r in self.synthesis_history],
            },
            "next_actions": list(self.next_actions),
        }


def init_workspace(problem: str) -> Workspace:
    return Workspace(problem_view=problem, problem_history=[Revision(problem, None)])


def open_tensions(w: Workspace) -> list[Tension]:
    return sorted((t for t in w.tensions if t.status is TensionStatus.OPEN), key=lambda t: t.tension_id)


def _position_ref(w: Workspace, m: Move) -> str:
    """Targets that land on an idea are normalised to that idea's originating move."""
    idea = w.idea_for(m.target_move_id)
    return idea.ref if idea is not None else m.target


def _supported_by_others(idea: Idea, challenger: str) -> bool:
    return any(s not in (idea.author, challenger) for s in idea.supporters)


def _apply_challenge(w: Workspace, m: Move) -> set[str]:
    target_ref = _position_ref(w, m)
    own_ref = f"contribution:{m.move_id}"
    existing = w.tension_for(target_ref) or w.tension_for(m.target)
    if existing is not None:
        if own_ref not in existing.conflicting_positions:
            existing.conflicting_positions.append(own_ref)
        existing.evidence_per_side.setdefault(own_ref, []).append(m.content)
        existing.move_ids.append(m.move_id)
        return {"tensions"}

    if not m.is_hard:
        idea = w.idea_for(m.target_move_id)
        if idea is None or not _supported_by_others(idea, m.actor):
            return set()
    w.tensions.append(
        Tension(
            tension_id=w._next_tension_id(),
            conflicting_positions=[target_ref, own_ref],
            evidence_per_side={target_ref: [], own_ref: [m.content]},
            resolution_condition=str(m.extras.get("resolution_condition") or m.intent),
            move_ids=[m.move_id],
        )
    )
    return {"tensions"}


def _apply_ask(w: Workspace, m: Move) -> set[str]:
    target_ref = _position_ref(w, m)
    existing = w.tension_for(target_ref) or w.tension_for(m.target)
    if existing is not None:
        existing.questions.append(m.content)
        existing.move_ids.append(m.move_id)
        return {"tensions"}
    own_ref = f"contribution:{m.move_id}"
    w.tensions.append(
        Tension(
            tension_id=w._next_tension_id(),
            conflicting_positions=[target_ref, own_ref],
            evidence_per_side={target_ref: [], own_ref: []},
            resolution_condition=str(m.extras.get("resolution_condition") or f"answer: {m.content}"),
            move_ids=[m.move_id],
            questions=[m.content],
        )
    )
    return {"tensions"}


def _apply_evidence(w: Workspace, m: Move) -> set[str]:
    idea = w.idea_for(m.target_move_id)
    if idea is not None:
        idea.evidence.append(m.content)
        if m.act is ActType.GROUND and m.actor not in idea.supporters:
            idea.supporters.append(m.actor)
        if m.move_id not in idea.move_ids:
            idea.move_ids.append(m.move_id)
        return {"emerging_ideas"}
    tension = w.tension_for(m.target)
    if tension is not None and m.target in tension.conflicting_positions:
        tension.evidence_per_side.setdefault(m.target, []).append(m.content)
        tension.move_ids.append(m.move_id)
        return {"tensions"}
    return set()


def apply_move(w: Workspace, m: Move) -> Workspace:
    """Return a new workspace with ``m`` applied; ``w`` is left untouched."""
    w = copy.deepcopy(w)
    act = m.act
    touched: set[str]

    if act in (ActType.FRAME, ActType.REFRAME):
        w.problem_view = m.content
        w.problem_history.append(Revision(m.content, m.move_id))
        w.key_frames.append(Frame(m.move_id, m.content, m.actor))
        touched = {"problem_view", "key_frames"}
    elif act is ActType.CLARIFY:
        w.problem_view = m.content
        w.problem_history.append(Revision(m.content, m.move_id))
        touched = {"problem_view"}
    elif act is ActType.EXTEND and w.idea_for(m.target_move_id) is not None:
        idea = w.idea_for(m.target_move_id)
        idea.extensions.append(m.content)
        idea.move_ids.append(m.move_id)
        if m.actor not in idea.supporters:
            idea.supporters.append(m.actor)
        touched = {"emerging_ideas"}
    elif act in (ActType.PROPOSE, ActType.EXTEND, ActType.SPAWN):
        w.emerging_ideas.append(
            Idea(
                idea_id=m.move_id,
                description=m.content,
                author=m.actor,
                move_ids=[m.move_id],
                supporters=[m.actor],
                kind="subsession" if act is ActType.SPAWN else "idea",
            )
        )
        touched = {"emerging_ideas"}
    elif act is ActType.ASK:
        touched = _apply_ask(w, m)
    elif act is ActType.CHALLENGE:
        touched = _apply_challenge(w, m)
    elif act is ActType.SYNTHESIZE:
        w.synthesis = m.content
        w.synthesis_history.append(Revision(m.content, m.move_id))
        touched = {"synthesis"}
    elif act in (ActType.BRIDGE, ActType.RECALL):
        w.synthesis = f"{w.synthesis}\n{m.content}" if w.synthesis else m.content
        w.synthesis_history.append(Revision(w.synthesis, m.move_id))
        touched = {"synthesis"}
        if act is ActType.BRIDGE and m.target_move_id is not None:
            tension = w.tension_for(m.target)
            if tension is not None:
                tension.resolve(m.move_id)
                touched.add("tensions")
    elif act in (ActType.GROUND, ActType.UPDATE):
        touched = _apply_evidence(w, m)
    elif act is ActType.RECOMMEND:
        w.next_actions.append(m.content)
        touched = {"next_actions"}
    else:  # pragma: no cover - the enumeration is closed
        raise AssertionError(act)

    assert touched <= SECTIONS_BY_ACT[act]
    w.provenance.append({"move_id": m.move_id, "act": act.value, "sections": sorted(touched)})
    return w


def merge_subsession(
    w: Workspace, recall: Move, child_session_id: str, child_packet: Mapping[str, Any]
) -> Workspace:
    """Fold a finished sub-session into the parent after its recall move.

    The child's decision becomes an idea, each dissent becomes an open tension,
    and tensions the child carried forward arrive already carried forward.
    """
    w = copy.deepcopy(w)
    decision = child_packet["decision"]
    decision_ref = f"subsession:{child_session_id}#decision"
    w.emerging_ideas.append(
        Idea(
            idea_id=f"{child_session_id}#decision",
            description=f"{decision['label']}: {decision['content']}",
            author=recall.actor,
            move_ids=[recall.move_id],
            supporters=[recall.actor],
            kind="subsession_result",
            origin_session=child_session_id,
        )
    )
    for entry in child_packet.get("minority_report", ()):
        dissent_ref = f"subsession:{child_session_id}#minority:{entry['delegate']}"
        w.tensions.append(
            Tension(
                tension_id=w._next_tension_id(),
                conflicting_positions=[decision_ref, dissent_ref],
                evidence_per_side={
                    decision_ref: [child_packet.get("rationale", "")],
                    dissent_ref: [entry.get("reasoning", "")],
                },
                resolution_condition=f"sub-session dissent from {entry['delegate']} is answered",
                move_ids=[recall.move_id],
                origin_session=child_session_id,
            )
        )
    for carried in child_packet.get("carried_tensions", ()):
        w.tensions.append(
            Tension(
                tension_id=w._next_tension_id(),
                conflicting_positions=[
                    f"subsession:{child_session_id}#{p}" for p in carried["conflicting_positions"]
                ],
                evidence_per_side={
                    f"subsession:{child_session_id}#{k}": list(v)
                    for k, v in carried["evidence_per_side"].items()
                },
                resolution_condition=carried["resolution_condition"],
                status=TensionStatus.CARRIED_FORWARD,
                move_ids=[recall.move_id],
                origin_session=child_session_id,
            )
        )
    w.provenance.append(
        {
            "move_id": recall.move_id,
            "act": "recall",
            "sections": ["emerging_ideas", "tensions"],
            "child_session": child_session_id,
        }
    )
    return w


def carry_forward(w: Workspace, phase: Phase) -> tuple[Workspace, dict[str, Any]]:
    """Close the workspace: open tensions become carried_forward.

    Returns the updated workspace and the carry-forward record.
    """
    if phase is not Phase.CLOSURE:
        raise PhaseMismatch(f"carry_forward needs the closure phase, session is in {phase.value}")
    w = copy.deepcopy(w)
    carried = open_tensions(w)
    for t in carried:
        t.carry_forward()
    record = {
        "open_tensions": [t.to_dict() for t in carried],
        "synthesis": w.synthesis,
        "next_actions": list(w.next_actions),
    }
    return w, record
