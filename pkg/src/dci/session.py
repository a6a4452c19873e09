"""Session envelope, phase progression, round budgets and bounded sub-sessions."""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import Any

from .delegate import ArchetypeKind, DelegateState, Proposal
from .errors import InvalidEnvelope, MissingExitArtifact
from .grammar import Move, Phase
from .workspace import Workspace, apply_move, init_workspace, merge_subsession

FALLBACK_RULES = ("outranking", "outranking_then_minimax")

PHASE_ORDER = (
    Phase.ARRIVAL,
    Phase.INDEPENDENT_FIRST_THOUGHT,
    Phase.MUTUAL_ENGAGEMENT,
    Phase.COLLECTIVE_SHAPING,
    Phase.CLOSURE,
)


@dataclass(frozen=True)
class Criterion:
    criterion_id: str
    weight: float


@dataclass(frozen=True)
class CouncilMember:
    delegate_id: str
    archetype: ArchetypeKind


@dataclass
class RoundLedger:
    """Round counter shared by reference across a whole session tree."""

    ceiling: int = 50
    used: int = 0

    @property
    def remaining(self) -> int:
        return self.ceiling - self.used

    def take(self) -> int:
        if self.used >= self.ceiling:
            raise RuntimeError("tree round ceiling exhausted")
        self.used += 1
        return self.used


@dataclass
class SessionEnvelope:
    problem: str
    delegates: Sequence[CouncilMember]
    criteria: Sequence[Criterion]
    max_rounds: int = 2
    max_options: int = 5
    finalist_count: int = 3
    convergence_margin: float = 0.15
    majority_threshold: float = 0.5
    fallback_rule: str = "outranking"
    depth: int = 0
    max_depth: int = 2
    tree_ceiling: int = 50
    max_children: int = 2
    domain_fit: Mapping[str, Any] = field(default_factory=dict)
    session_id: str = "DCI-S-001"

    @property
    def weights(self) -> dict[str, float]:
        return {c.criterion_id: c.weight for c in self.criteria}

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "problem": self.problem,
            "delegates": [
                {"id": m.delegate_id, "archetype": m.archetype.value} for m in self.delegates
            ],
            "criteria": [{"id": c.criterion_id, "weight": c.weight} for c in self.criteria],
            "max_rounds": self.max_rounds,
            "max_options": self.max_options,
            "finalist_count": self.finalist_count,
            "convergence_margin": self.convergence_margin,
            "majority_threshold": self.majority_threshold,
            "fallback_rule": self.fallback_rule,
            "depth": self.depth,
            "max_depth": self.max_depth,
            "tree_ceiling": self.tree_ceiling,
            "max_children": self.max_children,
            "domain_fit": dict(self.domain_fit),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> SessionEnvelope:
        """Build from a config document using the envelope parameter names."""
        try:
            members = [
                CouncilMember(d["id"], ArchetypeKind(d["archetype"])) for d in doc["delegates"]
            ]
            criteria = [Criterion(c["id"], float(c["weight"])) for c in doc["criteria"]]
        except (KeyError, ValueError, TypeError) as exc:
            raise InvalidEnvelope(f"malformed roster or criteria: {exc}") from exc
        known = {
            "max_rounds", "max_options", "finalist_count", "convergence_margin",
            "majority_threshold", "fallback_rule", "depth", "max_depth", "tree_ceiling",
            "max_children", "domain_fit", "session_id",
        }
        kwargs = {k: v for k, v in doc.items() if k in known}
        if "problem" not in doc:
            raise InvalidEnvelope("problem statement is required")
        return cls(problem=doc["problem"], delegates=members, criteria=criteria, **kwargs)


def validate_envelope(env: SessionEnvelope) -> SessionEnvelope:
    """Check every envelope invariant; return a copy with criterion weights summing to 1."""
    if not isinstance(env.problem, str) or not env.problem.strip():
        raise InvalidEnvelope("problem statement must be non-empty")
    if len(env.delegates) < 2:
        raise InvalidEnvelope("council needs n >= 2 delegates")
    ids = [m.delegate_id for m in env.delegates]
    if len(set(ids)) != len(ids):
        raise InvalidEnvelope("delegate ids must be unique")
    if env.max_rounds < 1:
        raise InvalidEnvelope("max_rounds >= 1")
    if not 1 <= env.finalist_count <= env.max_options:
        raise InvalidEnvelope("1 <= finalist_count <= max_options")
    if not env.convergence_margin > 0:
        raise InvalidEnvelope("convergence_margin > 0")
    if not 0.0 <= env.majority_threshold < 1.0:
        raise InvalidEnvelope("majority_threshold in [0, 1)")
    if env.fallback_rule not in FALLBACK_RULES:
        raise InvalidEnvelope(f"fallback_rule must be one of {FALLBACK_RULES}")
    if not 0 <= env.depth <= env.max_depth:
        raise InvalidEnvelope("0 <= depth <= max_depth")
    if env.tree_ceiling < 1:
        raise InvalidEnvelope("tree_ceiling >= 1")
    if env.max_children < 0:
        raise InvalidEnvelope("max_children >= 0")
    if not env.criteria:
        raise InvalidEnvelope("at least one evaluation criterion")
    cids = [c.criterion_id for c in env.criteria]
    if len(set(cids)) != len(cids):
        raise InvalidEnvelope("criterion ids must be unique")
    if any(not (c.weight > 0 and math.isfinite(c.weight)) for c in env.criteria):
        raise InvalidEnvelope("criterion weights must be positive and finite")
    total = sum(c.weight for c in env.criteria)
    if total != 1.0:
        criteria = [Criterion(c.criterion_id, c.weight / total) for c in env.criteria]
        env = replace(env, criteria=criteria)
    return env


@dataclass
class SessionState:
    envelope: SessionEnvelope
    ledger: RoundLedger
    workspace: Workspace
    phase: Phase = Phase.ARRIVAL
    phase_history: list[Phase] = field(default_factory=list)
    rounds_used: int = 0
    proposals: dict[str, Proposal | None] = field(default_factory=dict)
    delegate_states: dict[str, DelegateState] = field(default_factory=dict)
    options_ready: bool = False
    round_contributed: bool = False
    round_scored: bool = False
    children: list[str] = field(default_factory=list)
    completed_spawns: dict[str, str] = field(default_factory=dict)
    weights_renormalized: bool = False

    @property
    def session_id(self) -> str:
        return self.envelope.session_id

    @property
    def remaining_rounds(self) -> int:
        return self.envelope.max_rounds - self.rounds_used


def init_session(envelope: SessionEnvelope, ledger: RoundLedger | None = None) -> SessionState:
    raw_total = sum(c.weight for c in envelope.criteria) if envelope.criteria else 0.0
    env = validate_envelope(envelope)
    if ledger is None:
        ledger = RoundLedger(ceiling=env.tree_ceiling)
    state = SessionState(
        envelope=env,
        ledger=ledger,
        workspace=init_workspace(env.problem),
        phase_history=[Phase.ARRIVAL],
        delegate_states={m.delegate_id: DelegateState() for m in env.delegates},
        weights_renormalized=raw_total != 1.0,
    )
    return state


def _exit_artifact_missing(state: SessionState) -> str | None:
    phase = state.phase
    if phase is Phase.ARRIVAL:
        return None if state.workspace.problem_view.strip() else "shared problem statement"
    if phase is Phase.INDEPENDENT_FIRST_THOUGHT:
        missing = [m.delegate_id for m in state.envelope.delegates if m.delegate_id not in state.proposals]
        return f"proposals from {missing}" if missing else None
    if phase is Phase.MUTUAL_ENGAGEMENT:
        if not state.options_ready:
            return "candidate options"
        return None if state.round_contributed else "challenge round"
    if phase is Phase.COLLECTIVE_SHAPING:
        return None if state.round_scored else "score table"
    return "nothing follows closure"


def advance_phase(state: SessionState, target: Phase | None = None) -> SessionState:
    """Step the session forward one phase.

    The only backward step allowed is collective_shaping -> mutual_engagement,
    which starts another challenge round while rounds remain.
    """
    current = state.phase
    idx = PHASE_ORDER.index(current)
    if target is None:
        if current is Phase.CLOSURE:
            raise MissingExitArtifact(current.value, "nothing follows closure")
        target = PHASE_ORDER[idx + 1]

    if current is Phase.COLLECTIVE_SHAPING and target is Phase.MUTUAL_ENGAGEMENT:
        if state.remaining_rounds <= 0 or state.ledger.remaining <= 0:
            raise MissingExitArtifact(current.value, "rounds remaining for another challenge round")
        missing = _exit_artifact_missing(state)
        if missing:
            raise MissingExitArtifact(current.value, missing)
        state.round_contributed = False
        state.round_scored = False
    elif target is Phase.CLOSURE and current in (Phase.MUTUAL_ENGAGEMENT, Phase.COLLECTIVE_SHAPING):
        # Closure is reachable once a round has been scored or the budget is spent.
        if not state.round_scored and state.remaining_rounds > 0 and state.ledger.remaining > 0:
            raise MissingExitArtifact(current.value, "convergence verdict or exhausted rounds")
    elif PHASE_ORDER.index(target) != idx + 1:
        raise MissingExitArtifact(current.value, f"legal transition to {target.value}")
    else:
        missing = _exit_artifact_missing(state)
        if missing:
            raise MissingExitArtifact(current.value, missing)

    state.phase = target
    state.phase_history.append(target)
    return state


# --------------------------------------------------------------------------
# Sub-sessions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Refusal:
    reason: str
    detail: str


def spawn_subsession(
    parent: SessionState, subproblem: str, requested_rounds: int, child_session_id: str | None = None
) -> SessionEnvelope | Refusal:
    """Carve a child envelope out of the parent's budget, or refuse.

    The child gets min(requested, parent's remaining rounds - 1, rounds left
    under the tree ceiling); the parent's remaining count includes the round
    in progress.
    """
    env = parent.envelope
    if env.depth >= env.max_depth:
        return Refusal("DepthExhausted", f"depth {env.depth} is already max_depth {env.max_depth}")
    if len(parent.children) >= env.max_children:
        return Refusal("SpawnCapReached", f"session already spawned {len(parent.children)} children")
    if parent.ledger.remaining <= 0:
        return Refusal("CeilingExhausted", f"tree used all {parent.ledger.ceiling} rounds")
    parent_remaining = env.max_rounds - parent.rounds_used + 1
    rounds = min(requested_rounds, parent_remaining - 1, parent.ledger.remaining)
    if rounds < 1:
        if parent.ledger.remaining < 1:
            return Refusal("CeilingExhausted", "no rounds left under the tree ceiling")
        return Refusal("BudgetExhausted", f"parent has {parent_remaining} rounds left, cannot carve one")
    sid = child_session_id or f"{env.session_id}.{len(parent.children) + 1}"
    parent.children.append(sid)
    return replace(
        env,
        problem=subproblem,
        max_rounds=rounds,
        depth=env.depth + 1,
        session_id=sid,
    )


def recall_result(
    parent: SessionState, recall: Move, child_session_id: str, child_packet: Mapping[str, Any]
) -> SessionState:
    """Apply a recall move and merge the finished child's packet into the parent workspace."""
    w = apply_move(parent.workspace, recall)
    parent.workspace = merge_subsession(w, recall, child_session_id, child_packet)
    return parent


def per_depth_caps(max_depth: int, max_children: int) -> list[int]:
    """B_d: at most max_children**d sessions can exist at depth d."""
    return [max_children**d for d in range(max_depth + 1)]


def termination_bound(max_rounds: int, caps: Sequence[int]) -> int:
    if any(b < 0 for b in caps):
        raise ValueError("per-depth session caps must be non-negative")
    return max_rounds * sum(caps)


def effective_bound(max_rounds: int, caps: Sequence[int], tree_ceiling: int = 50) -> int:
    return min(termination_bound(max_rounds, caps), tree_ceiling)
