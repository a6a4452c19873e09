"""Delegates: archetypes, evolving epistemic state, and the behaviour contract.

The session runner is the only caller of a delegate. Delegates never touch
engine state directly; everything they say comes back as return values
(proposals, contributions, raw move documents, score sheets, picks).
"""

from __future__ import annotations

import json
import os
import re
import urllib.error
import urllib.request
from abc import ABC, abstractmethod
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Any

from .errors import (
    IncompleteScoreSheet,
    OutOfRangeConfidence,
    ProviderFailure,
    ScenarioExhausted,
    ScenarioParseError,
)
from .grammar import MOVE_FIELDS, ActType, Rejection, SpeechMode

if TYPE_CHECKING:
    from .convergence import CandidateOption

REMOTE_ENDPOINT_ENV = "DCI_REMOTE_ENDPOINT"


def canonical_key(label: str) -> str:
    """Clustering key: lowercase with whitespace runs collapsed."""
    return " ".join(label.lower().split())


def _check_confidence(value: float, name: str = "confidence") -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
        raise OutOfRangeConfidence(name, f"OutOfRangeConfidence: {name}={value!r} not in [0, 1]")
    return float(value)


# --------------------------------------------------------------------------
# Archetypes
# --------------------------------------------------------------------------


class ArchetypeKind(str, Enum):
    FRAMER = "Framer"
    EXPLORER = "Explorer"
    CHALLENGER = "Challenger"
    INTEGRATOR = "Integrator"


_PREFERRED_ACTS: dict[ArchetypeKind, dict[ActType, float]] = {
    ArchetypeKind.FRAMER: {ActType.FRAME: 0.25, ActType.CLARIFY: 0.20, ActType.REFRAME: 0.15},
    ArchetypeKind.EXPLORER: {ActType.PROPOSE: 0.30, ActType.EXTEND: 0.20, ActType.SPAWN: 0.10},
    ArchetypeKind.CHALLENGER: {ActType.CHALLENGE: 0.35, ActType.ASK: 0.20},
    ArchetypeKind.INTEGRATOR: {ActType.BRIDGE: 0.20, ActType.SYNTHESIZE: 0.25, ActType.RECALL: 0.10},
}

ARCHETYPE_ORIENTATION: dict[ArchetypeKind, str] = {
    ArchetypeKind.FRAMER: (
        "You are the Framer. Define the real problem: clarify ambiguity, identify hidden "
        "dimensions, decompose mixed issues, decide which questions need answering."
    ),
    ArchetypeKind.EXPLORER: (
        "You are the Explorer. Generate novel possibilities: unconventional paths, fresh "
        "structures, analogies. Open the solution space before the group narrows it."
    ),
    ArchetypeKind.CHALLENGER: (
        "You are the Challenger. Pressure-test everything: hidden assumptions, weak logic, "
        "risks, blind spots and overconfidence."
    ),
    ArchetypeKind.INTEGRATOR: (
        "You are the Integrator. Combine the group's thinking into a coherent direction: "
        "find common patterns, synthesize positions, keep the session coherent."
    ),
}


def default_archetype_bias(kind: ArchetypeKind | str) -> dict[ActType, float]:
    kind = ArchetypeKind(kind)
    preferred = _PREFERRED_ACTS[kind]
    rest = [a for a in ActType if a not in preferred]
    share = (1.0 - sum(preferred.values())) / len(rest)
    return {a: preferred.get(a, share) for a in ActType}


@dataclass(frozen=True)
class Archetype:
    kind: ArchetypeKind
    act_bias: Mapping[ActType, float]

    def __post_init__(self) -> None:
        if set(self.act_bias) != set(ActType):
            raise ValueError("act_bias must weight all 14 acts")
        if any(w <= 0 for w in self.act_bias.values()):
            raise ValueError("archetypes bias tendency, every act keeps positive weight")
        if abs(sum(self.act_bias.values()) - 1.0) > 1e-9:
            raise ValueError("act_bias weights must sum to 1")

    @classmethod
    def default(cls, kind: ArchetypeKind | str) -> Archetype:
        kind = ArchetypeKind(kind)
        return cls(kind, default_archetype_bias(kind))


# --------------------------------------------------------------------------
# Delegate state
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PositionShift:
    round: int
    prior_view: str
    new_view: str
    prior_confidence: float
    new_confidence: float
    trigger_move_id: str


@dataclass(frozen=True)
class DelegateState:
    view: str = ""
    confidence: float = 0.5
    open_questions: frozenset[str] = frozenset()
    concerns: frozenset[str] = frozenset()
    shift_history: tuple[PositionShift, ...] = ()

    def __post_init__(self) -> None:
        _check_confidence(self.confidence)

    def to_dict(self) -> dict[str, Any]:
        return {
            "view": self.view,
            "confidence": self.confidence,
            "open_questions": sorted(self.open_questions),
            "concerns": sorted(self.concerns),
            "shift_history": [vars(s).copy() for s in self.shift_history],
        }


def record_position_shift(
    state: DelegateState, new_view: str, new_confidence: float, trigger: str, round: int
) -> DelegateState:
    """Replace view and confidence, appending one audit record.

    Appends even when nothing changed: a re-affirmation is still history.
    """
    new_confidence = _check_confidence(new_confidence, "new_confidence")
    shift = PositionShift(
        round=round,
        prior_view=state.view,
        new_view=new_view,
        prior_confidence=state.confidence,
        new_confidence=new_confidence,
        trigger_move_id=trigger,
    )
    return replace(
        state,
        view=new_view,
        confidence=new_confidence,
        shift_history=state.shift_history + (shift,),
    )


# --------------------------------------------------------------------------
# Stage payloads
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Hypothesis:
    label: str
    description: str
    assumptions: tuple[str, ...] = ()
    risks: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.label or not self.label.strip():
            raise ValueError("hypothesis label must be non-empty")

    @property
    def key(self) -> str:
        return canonical_key(self.label)

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "description": self.description,
            "assumptions": list(self.assumptions),
            "risks": list(self.risks),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> Hypothesis:
        return cls(
            label=doc["label"],
            description=doc.get("description", doc["label"]),
            assumptions=tuple(doc.get("assumptions", ())),
            risks=tuple(doc.get("risks", ())),
        )


@dataclass(frozen=True)
class Proposal:
    author: str
    framing: str
    hypotheses: tuple[Hypothesis, ...]
    concerns: tuple[str, ...] = ()
    confidence: float = 0.5
    suggested_criteria: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.hypotheses:
            raise ValueError("a proposal needs at least one hypothesis")
        _check_confidence(self.confidence)

    def to_dict(self) -> dict[str, Any]:
        return {
            "author": self.author,
            "framing": self.framing,
            "hypotheses": [h.to_dict() for h in self.hypotheses],
            "concerns": list(self.concerns),
            "confidence": self.confidence,
            "suggested_criteria": list(self.suggested_criteria),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], author: str | None = None) -> Proposal:
        return cls(
            author=author or doc["author"],
            framing=doc.get("framing", ""),
            hypotheses=tuple(Hypothesis.from_dict(h) for h in doc.get("hypotheses", ())),
            concerns=tuple(doc.get("concerns", ())),
            confidence=doc.get("confidence", 0.5),
            suggested_criteria=tuple(doc.get("suggested_criteria", ())),
        )


class ContributionKind(str, Enum):
    SUPPORT = "support"
    CHALLENGE = "challenge"
    EVIDENCE = "evidence"
    COUNTEREXAMPLE = "counterexample"
    REVISION_SUGGESTION = "revision_suggestion"
    UNCERTAINTY_NOTE = "uncertainty_note"


@dataclass(frozen=True)
class NewHypothesis:
    """A hypothesis proposed mid-deliberation; ``superior_to`` names the option it claims to beat."""

    label: str
    description: str
    evidence: str = ""
    superior_to: str = ""
    assumptions: tuple[str, ...] = ()
    risks: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "description": self.description,
            "evidence": self.evidence,
            "superior_to": self.superior_to,
            "assumptions": list(self.assumptions),
            "risks": list(self.risks),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> NewHypothesis:
        return cls(
            label=doc["label"],
            description=doc.get("description", doc["label"]),
            evidence=doc.get("evidence", "") or "",
            superior_to=doc.get("superior_to", "") or "",
            assumptions=tuple(doc.get("assumptions", ())),
            risks=tuple(doc.get("risks", ())),
        )


@dataclass(frozen=True)
class ChallengeContribution:
    author: str
    option_id: str
    kind: ContributionKind
    content: str
    fatal: bool = False
    linked_evidence: str | None = None
    proposed_new_hypothesis: NewHypothesis | None = None
    move_id: str | None = None

    def __post_init__(self) -> None:
        if self.fatal and self.kind is not ContributionKind.CHALLENGE:
            raise ValueError("only a challenge can be flagged fatal")

    def to_dict(self) -> dict[str, Any]:
        return {
            "author": self.author,
            "option_id": self.option_id,
            "kind": self.kind.value,
            "content": self.content,
            "fatal": self.fatal,
            "linked_evidence": self.linked_evidence,
            "proposed_new_hypothesis": (
                self.proposed_new_hypothesis.to_dict() if self.proposed_new_hypothesis else None
            ),
            "move_id": self.move_id,
        }

    @classmethod
    def from_dict(
        cls, doc: Mapping[str, Any], author: str | None = None, option_id: str | None = None
    ) -> ChallengeContribution:
        nh = doc.get("proposed_new_hypothesis")
        return cls(
            author=author or doc["author"],
            option_id=option_id or doc["option_id"],
            kind=ContributionKind(doc["kind"]),
            content=doc.get("content", ""),
            fatal=bool(doc.get("fatal", False)),
            linked_evidence=doc.get("linked_evidence"),
            proposed_new_hypothesis=NewHypothesis.from_dict(nh) if nh else None,
            move_id=doc.get("move_id"),
        )


@dataclass(frozen=True)
class ScoreSheet:
    delegate: str
    scores: Mapping[tuple[str, str], float]
    confidence: float
    evidence_strength: float
    rationale: Mapping[str, str]
    top_choice: str

    def __post_init__(self) -> None:
        _check_confidence(self.confidence)
        _check_confidence(self.evidence_strength, "evidence_strength")
        for key, s in self.scores.items():
            if isinstance(s, bool) or not isinstance(s, (int, float)) or not 0.0 <= s <= 10.0:
                raise ValueError(f"score {key} = {s!r} outside [0, 10]")

    def to_dict(self) -> dict[str, Any]:
        nested: dict[str, dict[str, float]] = {}
        for (o, c), s in sorted(self.scores.items()):
            nested.setdefault(o, {})[c] = s
        return {
            "delegate": self.delegate,
            "scores": nested,
            "confidence": self.confidence,
            "evidence_strength": self.evidence_strength,
            "rationale": dict(sorted(self.rationale.items())),
            "top_choice": self.top_choice,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> ScoreSheet:
        return cls(
            delegate=doc["delegate"],
            scores={(o, c): s for o, row in doc["scores"].items() for c, s in row.items()},
            confidence=doc["confidence"],
            evidence_strength=doc["evidence_strength"],
            rationale=dict(doc.get("rationale", {})),
            top_choice=doc["top_choice"],
        )


def _option_order(option_id: str) -> tuple[int, str]:
    digits = re.sub(r"\D", "", option_id)
    return (int(digits) if digits else 0, option_id)


def own_top_choice(
    scores: Mapping[tuple[str, str], float],
    option_ids: Sequence[str],
    weights: Mapping[str, float],
) -> str:
    """A delegate's argmax over its own weighted scores; ties go to the lowest option id."""
    best_id, best = None, None
    for o in sorted(option_ids, key=_option_order):
        agg = sum(w * scores[(o, c)] for c, w in weights.items())
        if best is None or agg > best:
            best_id, best = o, agg
    assert best_id is not None
    return best_id


def check_sheet_complete(
    sheet: ScoreSheet, option_ids: Sequence[str], criteria: Sequence[str]
) -> None:
    missing = [(o, c) for o in option_ids for c in criteria if (o, c) not in sheet.scores]
    if missing:
        raise IncompleteScoreSheet(f"{sheet.delegate} left {missing} unscored")


@dataclass
class Turn:
    """One delegate's Stage 3 output for one option: contributions plus raw move documents."""

    contributions: list[ChallengeContribution] = field(default_factory=list)
    moves: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "contributions": [c.to_dict() for c in self.contributions],
            "moves": [dict(m) for m in self.moves],
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> Turn:
        return cls(
            contributions=[ChallengeContribution.from_dict(c) for c in doc.get("contributions", ())],
            moves=[dict(m) for m in doc.get("moves", ())],
        )


# --------------------------------------------------------------------------
# Behaviour contract
# --------------------------------------------------------------------------


class Delegate(ABC):
    """One council member as seen by the session runner."""

    def __init__(self, delegate_id: str, archetype: ArchetypeKind | str) -> None:
        self.delegate_id = delegate_id
        self.archetype = ArchetypeKind(archetype)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.delegate_id!r}, {self.archetype.value})"

    @abstractmethod
    def generate_proposal(self, problem: str) -> Proposal: ...

    @abstractmethod
    def contribute(self, option: CandidateOption, round: int, context: Mapping[str, Any]) -> Turn: ...

    @abstractmethod
    def score(
        self, finalists: Sequence[CandidateOption], criteria: Mapping[str, float]
    ) -> ScoreSheet: ...

    def integrator_pick(self, top2: Sequence[CandidateOption]) -> str:
        raise ScenarioExhausted(f"{self.delegate_id} has no integrator pick")

    def revise(self, document: Mapping[str, Any], rejection: Rejection) -> Mapping[str, Any]:
        """Answer a re-prompt for a rejected move."""
        raise ScenarioExhausted(f"{self.delegate_id} has no revision for {rejection.reason}")

    def spawn_child(self, session_id: str, subproblem: str, spawn_move_id: str) -> Delegate:
        """The delegate that represents this member inside a sub-session."""
        return self


def _round_key(mapping: Mapping[str, Any], round: int) -> Any:
    if str(round) in mapping:
        return mapping[str(round)]
    if "*" in mapping:
        return mapping["*"]
    raise KeyError(round)


class ScriptedDelegate(Delegate):
    """Replays a scenario script. Everything is keyed by option label, never by engine ids.

    Script keys (all optional)::

        proposal          Proposal document
        rounds            {"<round>": [turn, ...]}; a turn is
                          {"option": label | null, "contributions": [...], "moves": [...]}
                          turns with a null option are emitted on the round's first call
        scores            {"<round>" | "*": {"confidence", "evidence_strength",
                                            "scores": {label: {criterion: s}},
                                            "rationale": {label: text}}}
        integrator_pick   label, or a list of labels consumed in order
        revisions         {"<move_id>": [document, ...]} answers to re-prompts
        subsessions       {"<spawn move_id>": script}
    """

    def __init__(
        self, delegate_id: str, archetype: ArchetypeKind | str, script: Mapping[str, Any] | None = None
    ) -> None:
        super().__init__(delegate_id, archetype)
        self.script = dict(script or {})
        self._opened_rounds: set[int] = set()
        self._score_calls = 0
        self._revisions = {k: list(v) for k, v in self.script.get("revisions", {}).items()}
        picks = self.script.get("integrator_pick")
        self._picks = [picks] if isinstance(picks, str) else list(picks or [])

    def generate_proposal(self, problem: str) -> Proposal:
        doc = self.script.get("proposal")
        if not doc:
            raise ScenarioExhausted(f"{self.delegate_id} has no scripted proposal")
        try:
            return Proposal.from_dict(doc, author=self.delegate_id)
        except (KeyError, ValueError, TypeError) as exc:
            raise ScenarioParseError(f"{self.delegate_id} proposal: {exc}") from exc

    def _fill(self, doc: Mapping[str, Any], round: int, context: Mapping[str, Any]) -> dict[str, Any]:
        out = dict(doc)
        out.setdefault("session_id", context.get("session_id"))
        out.setdefault("round", round)
        out.setdefault("phase", context.get("phase"))
        out.setdefault("actor", self.delegate_id)
        return out

    def contribute(self, option: CandidateOption, round: int, context: Mapping[str, Any]) -> Turn:
        try:
            turns = _round_key(self.script.get("rounds", {}), round)
        except KeyError:
            raise ScenarioExhausted(f"{self.delegate_id} has no script for round {round}") from None
        first_call = round not in self._opened_rounds
        self._opened_rounds.add(round)
        out = Turn()
        for turn in turns:
            label = turn.get("option")
            if label is None:
                if not first_call:
                    continue
            elif canonical_key(label) != option.key:
                continue
            for c in turn.get("contributions", ()):
                try:
                    out.contributions.append(
                        ChallengeContribution.from_dict(c, author=self.delegate_id, option_id=option.option_id)
                    )
                except (KeyError, ValueError, TypeError) as exc:
                    raise ScenarioParseError(f"{self.delegate_id} contribution: {exc}") from exc
            out.moves.extend(self._fill(m, round, context) for m in turn.get("moves", ()))
        return out

    def score(self, finalists: Sequence[CandidateOption], criteria: Mapping[str, float]) -> ScoreSheet:
        self._score_calls += 1
        round = self._score_calls
        try:
            doc = _round_key(self.script.get("scores", {}), round)
        except KeyError:
            raise ScenarioExhausted(f"{self.delegate_id} has no score sheet for call {round}") from None
        by_key = {canonical_key(k): v for k, v in doc.get("scores", {}).items()}
        rationale_by_key = {canonical_key(k): v for k, v in doc.get("rationale", {}).items()}
        scores: dict[tuple[str, str], float] = {}
        rationale: dict[str, str] = {}
        for opt in finalists:
            row = by_key.get(opt.key, {})
            for c in criteria:
                if c in row:
                    scores[(opt.option_id, c)] = row[c]
            if opt.key in rationale_by_key:
                rationale[opt.option_id] = rationale_by_key[opt.key]
        ids = [o.option_id for o in finalists]
        missing = [(o, c) for o in ids for c in criteria if (o, c) not in scores]
        if missing:
            raise IncompleteScoreSheet(f"{self.delegate_id} script leaves {missing} unscored")
        top = own_top_choice(scores, ids, criteria)
        declared = doc.get("top_choice")
        if declared is not None:
            by_label = {o.key: o.option_id for o in finalists}
            if by_label.get(canonical_key(declared)) != top:
                raise ScenarioParseError(
                    f"{self.delegate_id} declares top_choice {declared!r} but its scores favour {top}"
                )
        return ScoreSheet(
            delegate=self.delegate_id,
            scores=scores,
            confidence=doc.get("confidence", 1.0),
            evidence_strength=doc.get("evidence_strength", 1.0),
            rationale=rationale,
            top_choice=top,
        )

    def integrator_pick(self, top2: Sequence[CandidateOption]) -> str:
        if not self._picks:
            raise ScenarioExhausted(f"{self.delegate_id} has no integrator pick")
        label = canonical_key(self._picks.pop(0))
        for opt in top2:
            if opt.key == label:
                return opt.option_id
        return label

    def revise(self, document: Mapping[str, Any], rejection: Rejection) -> Mapping[str, Any]:
        queue = self._revisions.get(str(document.get("move_id")))
        if not queue:
            raise ScenarioExhausted(f"{self.delegate_id} has no revision for {document.get('move_id')}")
        revised = dict(document)
        revised.update(queue.pop(0))
        return revised

    def spawn_child(self, session_id: str, subproblem: str, spawn_move_id: str) -> Delegate:
        child_script = self.script.get("subsessions", {}).get(spawn_move_id, {})
        return ScriptedDelegate(self.delegate_id, self.archetype, child_script)


# --------------------------------------------------------------------------
# Remote adapter
# --------------------------------------------------------------------------

GRAMMAR_INSTRUCTIONS = (
    "Reply with JSON documents only. Each interaction move is one JSON object with exactly "
    f"these keys: {', '.join(MOVE_FIELDS)}. "
    f"mode is one of: {', '.join(m.value for m in SpeechMode)}. "
    f"act is one of: {', '.join(a.value for a in ActType)}. "
    "target is 'problem', 'workspace' or 'contribution:<move_id>'. confidence is in [0, 1]; "
    "move_force is 'soft' or 'hard'; meta_level is a boolean."
)

Completion = Callable[[str, str], str]


def http_completion(endpoint: str, timeout: float = 60.0) -> Completion:
    """A text-in/text-out client for ``POST <endpoint>`` with body {"system", "prompt"}.

    The reply may be plain text or a JSON object carrying the text under "text".
    """

    def complete(system: str, prompt: str) -> str:
        body = json.dumps({"system": system, "prompt": prompt}).encode()
        req = urllib.request.Request(
            endpoint, data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                raw = resp.read().decode("utf-8")
        except (urllib.error.URLError, OSError) as exc:
            raise ProviderFailure(f"remote endpoint {endpoint} failed: {exc}") from exc
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError:
            return raw
        if isinstance(doc, dict) and isinstance(doc.get("text"), str):
            return doc["text"]
        return raw

    return complete


def extract_documents(text: str) -> list[Any]:
    """Every top-level JSON object embedded in free text, in order."""
    decoder = json.JSONDecoder()
    docs, i = [], 0
    while True:
        i = text.find("{", i)
        if i < 0:
            return docs
        try:
            doc, end = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            i += 1
            continue
        docs.append(doc)
        i = end


class RemoteDelegate(Delegate):
    """Delegate backed by a completion endpoint.

    The system text carries the archetype orientation and the move grammar;
    each stage sends its own prompt and parses JSON documents out of the reply.
    """

    def __init__(
        self,
        delegate_id: str,
        archetype: ArchetypeKind | str,
        complete: Completion | None = None,
        endpoint: str | None = None,
    ) -> None:
        super().__init__(delegate_id, archetype)
        if complete is None:
            endpoint = endpoint or os.environ.get(REMOTE_ENDPOINT_ENV)
            if not endpoint:
                raise ProviderFailure(f"no endpoint given and {REMOTE_ENDPOINT_ENV} is unset")
            complete = http_completion(endpoint)
        self._complete = complete

    @property
    def system_text(self) -> str:
        return f"{ARCHETYPE_ORIENTATION[self.archetype]}\n\n{GRAMMAR_INSTRUCTIONS}"

    def _ask(self, prompt: str) -> list[Any]:
        text = self._complete(self.system_text, prompt)
        docs = extract_documents(text)
        if not docs:
            raise ProviderFailure(f"{self.delegate_id} replied without any JSON document")
        return docs

    def generate_proposal(self, problem: str) -> Proposal:
        docs = self._ask(
            "Stage 1, independent proposal. Before seeing anyone else's view, reply with one JSON "
            'object {"framing", "hypotheses": [{"label", "description", "assumptions", "risks"}], '
            '"concerns", "confidence", "suggested_criteria"}. Reuse short labels for equivalent '
            f"ideas.\n\nProblem: {problem}"
        )
        try:
            return Proposal.from_dict(docs[0], author=self.delegate_id)
        except (KeyError, ValueError, TypeError, AttributeError) as exc:
            raise ProviderFailure(f"{self.delegate_id} sent a malformed proposal: {exc}") from exc

    def contribute(self, option: CandidateOption, round: int, context: Mapping[str, Any]) -> Turn:
        docs = self._ask(
            f"Stage 3, round {round}, session {context.get('session_id')}, phase {context.get('phase')}. "
            f"Option {option.option_id} ({option.canonical_label}).\n"
            f"Current record: {json.dumps(option.record.to_dict())}\n"
            f"Workspace: {json.dumps(context.get('workspace', {}))}\n"
            "Reply with contribution objects {\"kind\", \"content\", \"fatal\", \"linked_evidence\", "
            "\"move_id\"} where kind is one of support, challenge, evidence, counterexample, "
            "revision_suggestion, uncertainty_note, and with interaction moves."
        )
        turn = Turn()
        for doc in docs:
            if not isinstance(doc, dict):
                continue
            if "act" in doc:
                turn.moves.append(doc)
            elif "kind" in doc:
                try:
                    turn.contributions.append(
                        ChallengeContribution.from_dict(doc, author=self.delegate_id, option_id=option.option_id)
                    )
                except (KeyError, ValueError, TypeError):
                    continue
        return turn

    def score(self, finalists: Sequence[CandidateOption], criteria: Mapping[str, float]) -> ScoreSheet:
        listing = ", ".join(f"{o.option_id}: {o.canonical_label}" for o in finalists)
        docs = self._ask(
            "Stage 5, scoring. Score every option on every criterion from 0 to 10. Reply with one "
            'JSON object {"scores": {option_id: {criterion: score}}, "confidence", '
            '"evidence_strength", "rationale": {option_id: text}}.\n'
            f"Options: {listing}\nCriteria: {', '.join(criteria)}"
        )
        doc = docs[0]
        try:
            scores = {(o, c): float(s) for o, row in doc["scores"].items() for c, s in row.items()}
            ids = [o.option_id for o in finalists]
            scores = {k: v for k, v in scores.items() if k[0] in ids and k[1] in criteria}
            check_sheet_complete(
                ScoreSheet(self.delegate_id, scores, 1.0, 1.0, {}, ids[0]), ids, list(criteria)
            )
            return ScoreSheet(
                delegate=self.delegate_id,
                scores=scores,
                confidence=doc.get("confidence", 0.5),
                evidence_strength=doc.get("evidence_strength", 0.5),
                rationale={k: str(v) for k, v in doc.get("rationale", {}).items() if k in ids},
                top_choice=own_top_choice(scores, ids, criteria),
            )
        except (KeyError, ValueError, TypeError, AttributeError, IncompleteScoreSheet) as exc:
            raise ProviderFailure(f"{self.delegate_id} sent a malformed score sheet: {exc}") from exc

    def integrator_pick(self, top2: Sequence[CandidateOption]) -> str:
        listing = ", ".join(f"{o.option_id}: {o.canonical_label}" for o in top2)
        docs = self._ask(
            "Stage 7, the council could not converge. Pick one of the two leading options and reply "
            f'with {{"pick": option_id}}.\nOptions: {listing}'
        )
        pick = docs[0].get("pick") if isinstance(docs[0], dict) else None
        if not isinstance(pick, str):
            raise ProviderFailure(f"{self.delegate_id} did not name a pick")
        return pick

    def revise(self, document: Mapping[str, Any], rejection: Rejection) -> Mapping[str, Any]:
        docs = self._ask(
            f"{rejection.prompt_text()}\nRejected move: {json.dumps(dict(document))}\n"
            "Reply with one corrected move document."
        )
        if not isinstance(docs[0], dict):
            raise ProviderFailure(f"{self.delegate_id} sent a non-object revision")
        return docs[0]
