"""Typed epistemic moves: vocabulary, parsing, serialization and validation.

A move is one (mode, act, intent) triple aimed at the problem, the shared
workspace, or an earlier contribution. Documents use these exact keys::

    move_id, session_id, round, phase, actor, mode, act, intent,
    target, content, confidence, move_force, meta_level

Any other keys are carried through untouched in ``Move.extras``.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .errors import (
    InvalidField,
    MissingField,
    OutOfRangeConfidence,
    UnknownAct,
    UnknownMode,
)

MOVE_FIELDS = (
    "move_id",
    "session_id",
    "round",
    "phase",
    "actor",
    "mode",
    "act",
    "intent",
    "target",
    "content",
    "confidence",
    "move_force",
    "meta_level",
)


class SpeechMode(str, Enum):
    EXPLORATORY = "exploratory"
    ANALYTICAL = "analytical"
    CRITICAL = "critical"
    INTEGRATIVE = "integrative"
    REFLECTIVE = "reflective"
    DECISIONAL = "decisional"


class Family(str, Enum):
    ORIENTING = "Orienting"
    GENERATIVE = "Generative"
    CRITICAL = "Critical"
    INTEGRATIVE = "Integrative"
    EPISTEMIC = "Epistemic"
    DECISIONAL = "Decisional"


class ActType(str, Enum):
    FRAME = "frame"
    PROPOSE = "propose"
    CLARIFY = "clarify"
    ASK = "ask"
    CHALLENGE = "challenge"
    EXTEND = "extend"
    REFRAME = "reframe"
    BRIDGE = "bridge"
    SYNTHESIZE = "synthesize"
    GROUND = "ground"
    UPDATE = "update"
    RECOMMEND = "recommend"
    SPAWN = "spawn"
    RECALL = "recall"

    @property
    def family(self) -> Family:
        return ACT_FAMILIES[self]


ACT_FAMILIES: dict[ActType, Family] = {
    ActType.FRAME: Family.ORIENTING,
    ActType.PROPOSE: Family.GENERATIVE,
    ActType.CLARIFY: Family.ORIENTING,
    ActType.ASK: Family.CRITICAL,
    ActType.CHALLENGE: Family.CRITICAL,
    ActType.EXTEND: Family.GENERATIVE,
    ActType.REFRAME: Family.ORIENTING,
    ActType.BRIDGE: Family.INTEGRATIVE,
    ActType.SYNTHESIZE: Family.INTEGRATIVE,
    ActType.GROUND: Family.EPISTEMIC,
    ActType.UPDATE: Family.EPISTEMIC,
    ActType.RECOMMEND: Family.DECISIONAL,
    ActType.SPAWN: Family.GENERATIVE,
    ActType.RECALL: Family.INTEGRATIVE,
}

# Only these two response grammars are defined; every other act invites nothing in particular.
RESPONSE_GRAMMAR: dict[ActType, frozenset[str]] = {
    ActType.CHALLENGE: frozenset({"defend", "refine", "update", "concede"}),
    ActType.SYNTHESIZE: frozenset({"affirm", "sharpen", "surface-omission", "recommend"}),
}


class MoveForce(str, Enum):
    SOFT = "soft"
    HARD = "hard"


class Phase(str, Enum):
    ARRIVAL = "arrival"
    INDEPENDENT_FIRST_THOUGHT = "independent_first_thought"
    MUTUAL_ENGAGEMENT = "mutual_engagement"
    COLLECTIVE_SHAPING = "collective_shaping"
    CLOSURE = "closure"


def act_family(act: ActType | str) -> Family:
    return ACT_FAMILIES[ActType(act)]


def expected_responses(act: ActType | str) -> frozenset[str]:
    return RESPONSE_GRAMMAR.get(ActType(act), frozenset())


@dataclass(frozen=True)
class Move:
    move_id: str
    session_id: str
    round: int
    phase: Phase
    actor: str
    mode: SpeechMode
    act: ActType
    intent: str
    target: str
    content: str
    confidence: float
    move_force: MoveForce
    meta_level: bool
    extras: Mapping[str, Any] = field(default_factory=dict, compare=True)

    @property
    def family(self) -> Family:
        return self.act.family

    @property
    def target_move_id(self) -> str | None:
        """The cited move id for ``contribution:<id>`` targets, else None."""
        if self.target.startswith("contribution:"):
            return self.target.split(":", 1)[1]
        return None

    @property
    def is_hard(self) -> bool:
        return self.move_force is MoveForce.HARD


def _text(raw: Mapping[str, Any], key: str) -> str:
    value = raw[key]
    if not isinstance(value, str) or not value.strip():
        raise InvalidField(key, f"InvalidField: {key} must be non-empty text")
    return value


def _check_target(target: str) -> None:
    if target in ("problem", "workspace"):
        return
    if target.startswith("contribution:") and target.split(":", 1)[1].strip():
        return
    raise InvalidField(
        "target", "InvalidField: target must be 'problem', 'workspace' or 'contribution:<move_id>'"
    )


def parse_move(raw: Mapping[str, Any]) -> Move:
    """Build a Move from a decoded document.

    Raises a ParseError subclass naming the first offending field, checked
    in document field order.
    """
    if not isinstance(raw, Mapping):
        raise InvalidField("document", "InvalidField: move document must be a mapping")
    for key in MOVE_FIELDS:
        if key not in raw:
            raise MissingField(key)

    move_id = _text(raw, "move_id")
    session_id = _text(raw, "session_id")

    rnd = raw["round"]
    if isinstance(rnd, bool) or not isinstance(rnd, int) or rnd < 1:
        raise InvalidField("round", "InvalidField: round must be an integer >= 1")

    try:
        phase = Phase(raw["phase"])
    except ValueError:
        raise InvalidField("phase", f"InvalidField: unknown phase {raw['phase']!r}") from None

    actor = _text(raw, "actor")

    try:
        mode = SpeechMode(raw["mode"])
    except ValueError:
        raise UnknownMode("mode", f"UnknownMode: {raw['mode']!r}") from None
    try:
        act = ActType(raw["act"])
    except ValueError:
        raise UnknownAct("act", f"UnknownAct: {raw['act']!r}") from None

    intent = _text(raw, "intent")
    target = _text(raw, "target")
    _check_target(target)
    content = _text(raw, "content")

    conf = raw["confidence"]
    if isinstance(conf, bool) or not isinstance(conf, (int, float)) or math.isnan(conf):
        raise InvalidField("confidence", "InvalidField: confidence must be a number")
    if not 0.0 <= conf <= 1.0:
        raise OutOfRangeConfidence("confidence", f"OutOfRangeConfidence: {conf} not in [0, 1]")

    try:
        force = MoveForce(raw["move_force"])
    except ValueError:
        raise InvalidField("move_force", "InvalidField: move_force must be soft or hard") from None

    meta = raw["meta_level"]
    if not isinstance(meta, bool):
        raise InvalidField("meta_level", "InvalidField: meta_level must be a boolean")

    extras = {k: v for k, v in raw.items() if k not in MOVE_FIELDS}
    return Move(
        move_id=move_id,
        session_id=session_id,
        round=rnd,
        phase=phase,
        actor=actor,
        mode=mode,
        act=act,
        intent=intent,
        target=target,
        content=content,
        confidence=float(conf),
        move_force=force,
        meta_level=meta,
        extras=extras,
    )


def move_to_document(move: Move) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "move_id": move.move_id,
        "session_id": move.session_id,
        "round": move.round,
        "phase": move.phase.value,
        "actor": move.actor,
        "mode": move.mode.value,
        "act": move.act.value,
        "intent": move.intent,
        "target": move.target,
        "content": move.content,
        "confidence": move.confidence,
        "move_force": move.move_force.value,
        "meta_level": move.meta_level,
    }
    doc.update(move.extras)
    return doc


@dataclass(frozen=True)
class MoveContext:
    """What the validator needs to know about the session a move claims to belong to."""

    session_id: str
    round: int
    phase: Phase
    known_move_ids: frozenset[str] = frozenset()
    depth: int = 0
    max_depth: int = 2
    completed_spawns: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Rejection:
    reason: str
    field: str
    message: str

    def prompt_text(self) -> str:
        return f"Your move was rejected ({self.reason} on field '{self.field}'): {self.message}"


def validate_move(move: Move, ctx: MoveContext) -> Rejection | None:
    """Check a parsed move against its session. Returns None when accepted."""
    if move.session_id != ctx.session_id:
        return Rejection(
            "SessionMismatch", "session_id", f"expected session {ctx.session_id}, got {move.session_id}"
        )
    if move.round != ctx.round:
        return Rejection("RoundMismatch", "round", f"expected round {ctx.round}, got {move.round}")
    if move.phase is not ctx.phase:
        return Rejection(
            "PhaseMismatch", "phase", f"expected phase {ctx.phase.value}, got {move.phase.value}"
        )
    if move.move_id in ctx.known_move_ids:
        return Rejection("DuplicateMoveId", "move_id", f"move id {move.move_id} already used")

    cited = move.target_move_id
    if cited is not None and cited not in ctx.known_move_ids:
        return Rejection("DanglingTarget", "target", f"no move {cited} in this session")

    if move.act is ActType.SPAWN and ctx.depth >= ctx.max_depth:
        return Rejection(
            "DepthExhausted", "act", f"sub-sessions unavailable at depth {ctx.depth} (max {ctx.max_depth})"
        )
    if move.act is ActType.RECALL and (cited is None or cited not in ctx.completed_spawns):
        return Rejection("DanglingTarget", "target", "recall must cite a spawn whose sub-session has finished")
    return None
