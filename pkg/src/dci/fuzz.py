"""Seeded random councils for checking termination, round bounds and packet completeness."""

from __future__ import annotations

import random
import traceback
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any

from .convergence import CandidateOption
from .delegate import (
    Archetype,
    ArchetypeKind,
    ChallengeContribution,
    ContributionKind,
    Delegate,
    Hypothesis,
    NewHypothesis,
    Proposal,
    ScoreSheet,
    Turn,
    canonical_key,
    own_top_choice,
)
from .errors import ScenarioExhausted
from .events import EventLog
from .flow import SessionRunner
from .grammar import ActType, Family, MoveForce, Rejection
from .packet import validate_completeness
from .session import (
    CouncilMember,
    Criterion,
    RoundLedger,
    SessionEnvelope,
    effective_bound,
    per_depth_caps,
)


class Persona(str, Enum):
    COOPERATIVE = "cooperative"
    ADVERSARIAL = "adversarial"
    SPAWN_HAPPY = "spawn_happy"
    ERRATIC = "erratic"
    RANDOM = "random"


MODE_BY_FAMILY = {
    Family.ORIENTING: "analytical",
    Family.GENERATIVE: "exploratory",
    Family.CRITICAL: "critical",
    Family.INTEGRATIVE: "integrative",
    Family.EPISTEMIC: "reflective",
    Family.DECISIONAL: "decisional",
}

# Acts whose natural target is an earlier contribution.
CITING_ACTS = {
    ActType.ASK, ActType.CHALLENGE, ActType.EXTEND, ActType.BRIDGE,
    ActType.GROUND, ActType.UPDATE, ActType.RECALL,
}

SHARED_LABEL = "shared plan"


def _corrupt(doc: dict[str, Any], rng: random.Random) -> dict[str, Any]:
    bad = dict(doc)
    how = rng.choice(["act", "mode", "confidence", "target", "phase", "missing", "round"])
    if how == "act":
        bad["act"] = "shout"
    elif how == "mode":
        bad["mode"] = "loud"
    elif how == "confidence":
        bad["confidence"] = rng.choice([1.7, -0.2])
    elif how == "target":
        bad["target"] = "contribution:nowhere"
    elif how == "phase":
        bad["phase"] = "closure"
    elif how == "round":
        bad["round"] = doc["round"] + 5
    else:
        bad.pop(rng.choice(["intent", "content", "actor", "meta_level"]), None)
    return bad


class RandomDelegate(Delegate):
    """Scripted behaviour drawn from one seeded generator.

    cooperative  proposes the shared label and rates it far above everything else
    adversarial  proposes its own label, rates it 10 and every rival 9.5, raises
                 fatal objections against every rival and never withdraws them
    spawn_happy  asks for a sub-session every time it speaks
    erratic      sends malformed moves and half-hearted revisions
    random       acts from its archetype bias table, scores uniformly
    """

    def __init__(
        self,
        delegate_id: str,
        archetype: ArchetypeKind | str,
        persona: Persona,
        rng: random.Random,
        session_id: str,
    ) -> None:
        super().__init__(delegate_id, archetype)
        self.persona = Persona(persona)
        self.rng = rng
        self.session_id = session_id
        self.bias = Archetype.default(self.archetype).act_bias
        self._counter = 0
        self.own_label = f"{delegate_id} plan"

    # -- helpers

    def _draw_act(self) -> ActType:
        if self.persona is Persona.SPAWN_HAPPY:
            return ActType.SPAWN
        if self.persona is Persona.ADVERSARIAL:
            return self.rng.choice([ActType.CHALLENGE, ActType.ASK])
        acts = list(self.bias)
        return self.rng.choices(acts, weights=[self.bias[a] for a in acts])[0]

    def _move(self, round: int, context: Mapping[str, Any]) -> dict[str, Any]:
        self._counter += 1
        act = self._draw_act()
        known = list(context.get("known_move_ids", ()))
        target = "problem"
        if act in CITING_ACTS and known:
            target = f"contribution:{self.rng.choice(known)}"
        elif self.rng.random() < 0.3:
            target = "workspace"
        doc = {
            "move_id": f"{self.session_id}/{self.delegate_id}/{round}/{self._counter}",
            "session_id": context["session_id"],
            "round": round,
            "phase": context["phase"],
            "actor": self.delegate_id,
            "mode": MODE_BY_FAMILY[act.family],
            "act": act.value,
            "intent": f"{act.value} move",
            "target": target,
            "content": f"{self.delegate_id} {act.value} in round {round}",
            "confidence": round_to(self.rng.random()),
            "move_force": self.rng.choice([f.value for f in MoveForce]),
            "meta_level": self.rng.random() < 0.1,
        }
        if act is ActType.SPAWN:
            doc["rounds"] = self.rng.randint(1, 4)
        if self.persona is Persona.ERRATIC and self.rng.random() < 0.5:
            return _corrupt(doc, self.rng)
        return doc

    # -- stages

    def generate_proposal(self, problem: str) -> Proposal:
        if self.persona is Persona.ERRATIC and self.rng.random() < 0.1:
            raise ScenarioExhausted(f"{self.delegate_id} has no proposal")
        if self.persona is Persona.COOPERATIVE:
            labels = [SHARED_LABEL]
        elif self.persona is Persona.ADVERSARIAL:
            labels = [self.own_label]
        else:
            pool = [SHARED_LABEL, self.own_label, "option a", "option b", "option c"]
            labels = self.rng.sample(pool, self.rng.randint(1, 2))
            self.own_label = labels[0]
        hyps = tuple(
            Hypothesis(
                label,
                f"{label} as seen by {self.delegate_id}",
                assumptions=(f"{label} stays affordable",) if self.rng.random() < 0.5 else (),
                risks=(f"{label} may slip",) if self.rng.random() < 0.5 else (),
            )
            for label in labels
        )
        self.own_label = labels[0]
        return Proposal(
            author=self.delegate_id,
            framing=f"{self.delegate_id} favours {labels[0]}",
            hypotheses=hyps,
            confidence=round_to(self.rng.uniform(0.3, 1.0)),
        )

    def contribute(self, option: CandidateOption, round: int, context: Mapping[str, Any]) -> Turn:
        turn = Turn()
        own = option.key == canonical_key(self.own_label)
        if self.persona is Persona.ADVERSARIAL:
            if not own:
                turn.contributions.append(
                    ChallengeContribution(
                        self.delegate_id, option.option_id, ContributionKind.CHALLENGE,
                        f"{self.delegate_id} rejects {option.canonical_label}", fatal=True,
                    )
                )
            if self.rng.random() < 0.5:
                turn.moves.append(self._move(round, context))
            return turn
        if self.persona is Persona.COOPERATIVE:
            if own:
                turn.contributions.append(
                    ChallengeContribution(self.delegate_id, option.option_id, ContributionKind.SUPPORT, "agreed")
                )
            if self.rng.random() < 0.3:
                turn.moves.append(self._move(round, context))
            return turn

        for _ in range(self.rng.randint(0, 2)):
            turn.moves.append(self._move(round, context))
        if self.rng.random() < 0.5:
            kind = self.rng.choice(list(ContributionKind))
            fatal = kind is ContributionKind.CHALLENGE and self.rng.random() < 0.3
            nh = None
            if self.rng.random() < 0.2:
                nh = NewHypothesis(
                    label=f"late idea {self.rng.randint(1, 9)}",
                    description="raised mid-deliberation",
                    evidence="pilot data" if self.rng.random() < 0.7 else "",
                    superior_to=option.canonical_label if self.rng.random() < 0.8 else "",
                )
            turn.contributions.append(
                ChallengeContribution(
                    self.delegate_id, option.option_id, kind, f"{kind.value} by {self.delegate_id}",
                    fatal=fatal,
                    linked_evidence="trace" if self.rng.random() < 0.3 else None,
                    proposed_new_hypothesis=nh,
                )
            )
        return turn

    def score(self, finalists: Sequence[CandidateOption], criteria: Mapping[str, float]) -> ScoreSheet:
        ids = [o.option_id for o in finalists]
        scores: dict[tuple[str, str], float] = {}
        for o in finalists:
            own = o.key == canonical_key(self.own_label)
            for c in criteria:
                if self.persona is Persona.ADVERSARIAL:
                    s = 10.0 if own else 9.5
                elif self.persona is Persona.COOPERATIVE:
                    s = 9.0 if o.key == SHARED_LABEL else round_to(self.rng.uniform(0, 3))
                else:
                    s = round_to(self.rng.uniform(0, 10))
                scores[(o.option_id, c)] = s
        top = own_top_choice(scores, ids, criteria)
        if self.persona is Persona.ERRATIC and self.rng.random() < 0.2:
            del scores[self.rng.choice(sorted(scores))]
        steady = self.persona in (Persona.ADVERSARIAL, Persona.COOPERATIVE)
        return ScoreSheet(
            delegate=self.delegate_id,
            scores=scores,
            confidence=1.0 if steady else round_to(self.rng.uniform(0.2, 1.0)),
            evidence_strength=1.0 if steady else round_to(self.rng.uniform(0.2, 1.0)),
            rationale={o: f"{self.delegate_id} on {o}" for o in ids},
            top_choice=top,
        )

    def integrator_pick(self, top2: Sequence[CandidateOption]) -> str:
        if self.persona is Persona.ERRATIC and self.rng.random() < 0.3:
            return "not-an-option"
        return self.rng.choice(top2).option_id

    def revise(self, document: Mapping[str, Any], rejection: Rejection) -> Mapping[str, Any]:
        if self.persona is Persona.ERRATIC and self.rng.random() < 0.4:
            return _corrupt(dict(document), self.rng)
        if self.persona is Persona.ERRATIC and self.rng.random() < 0.2:
            raise ScenarioExhausted(f"{self.delegate_id} has no revision")
        fixed = dict(document)
        fixed.update(
            {
                "mode": "integrative",
                "act": "synthesize",
                "target": "workspace",
                "intent": "restate after rejection",
                "content": f"{self.delegate_id} restates its view",
                "actor": self.delegate_id,
                "meta_level": False,
                "move_force": "soft",
                "confidence": 0.5,
            }
        )
        return fixed

    def spawn_child(self, session_id: str, subproblem: str, spawn_move_id: str) -> Delegate:
        return RandomDelegate(self.delegate_id, self.archetype, self.persona, self.rng, session_id)


def round_to(x: float, digits: int = 3) -> float:
    return round(x, digits)


@dataclass(frozen=True)
class FuzzRanges:
    council: tuple[int, int] = (2, 5)
    max_rounds: tuple[int, int] = (1, 4)
    max_options: tuple[int, int] = (2, 6)
    finalist_count: tuple[int, int] = (1, 4)
    convergence_margin: tuple[float, float] = (0.05, 0.3)
    max_depth: tuple[int, int] = (0, 2)
    max_children: tuple[int, int] = (0, 3)
    tree_ceiling: tuple[int, int] = (10, 50)
    criteria: tuple[int, int] = (1, 4)

    def __post_init__(self) -> None:
        for name, (lo, hi) in asdict(self).items():
            if lo > hi:
                raise ValueError(f"range {name} is empty: {lo} > {hi}")
        if self.council[0] < 2 or self.max_rounds[0] < 1 or self.max_options[0] < 1:
            raise ValueError("ranges must stay within envelope invariants")
        if self.finalist_count[0] < 1 or self.convergence_margin[0] <= 0 or self.tree_ceiling[0] < 1:
            raise ValueError("ranges must stay within envelope invariants")


@dataclass
class FuzzReport:
    runs: int = 0
    terminations: int = 0
    max_rounds: int = 0
    fallbacks: int = 0
    bound_violations: int = 0
    completeness_failures: int = 0
    exceptions: list[str] = field(default_factory=list)

    @property
    def fallback_rate(self) -> float:
        return self.fallbacks / self.runs if self.runs else 0.0

    @property
    def passed(self) -> bool:
        return (
            self.terminations == self.runs
            and self.bound_violations == 0
            and self.completeness_failures == 0
            and not self.exceptions
        )

    def merge(self, other: FuzzReport) -> FuzzReport:
        return FuzzReport(
            runs=self.runs + other.runs,
            terminations=self.terminations + other.terminations,
            max_rounds=max(self.max_rounds, other.max_rounds),
            fallbacks=self.fallbacks + other.fallbacks,
            bound_violations=self.bound_violations + other.bound_violations,
            completeness_failures=self.completeness_failures + other.completeness_failures,
            exceptions=self.exceptions + other.exceptions,
        )

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["fallback_rate"] = self.fallback_rate
        doc["passed"] = self.passed
        return doc


POPULATIONS = ("mixed", "adversarial", "cooperative", "spawn_happy", "erratic")


def random_session(
    rng: random.Random, ranges: FuzzRanges, population: str, session_id: str
) -> tuple[SessionEnvelope, list[RandomDelegate]]:
    n = rng.randint(*ranges.council)
    kinds = list(ArchetypeKind)
    members = [CouncilMember(f"d{i + 1}", kinds[i % 4] if i < 4 else rng.choice(kinds)) for i in range(n)]
    criteria = [Criterion(f"c{j + 1}", round_to(rng.uniform(0.1, 2.0))) for j in range(rng.randint(*ranges.criteria))]
    max_options = rng.randint(*ranges.max_options)
    finalist_count = min(rng.randint(*ranges.finalist_count), max_options)
    if population == "adversarial":
        # Every adversary's own option must reach the final, or ties would hand someone a majority.
        max_options = max(max_options, n)
        finalist_count = max_options
    max_depth = rng.randint(*ranges.max_depth)
    env = SessionEnvelope(
        problem=f"fuzz problem {session_id}",
        delegates=members,
        criteria=criteria,
        max_rounds=rng.randint(*ranges.max_rounds),
        max_options=max_options,
        finalist_count=finalist_count,
        convergence_margin=round_to(rng.uniform(*ranges.convergence_margin)),
        max_depth=max_depth,
        tree_ceiling=rng.randint(*ranges.tree_ceiling),
        max_children=rng.randint(*ranges.max_children),
        session_id=session_id,
    )
    if population == "mixed":
        personas = [rng.choice(list(Persona)) for _ in members]
    else:
        personas = [Persona(population)] * n
    delegates = [
        RandomDelegate(m.delegate_id, m.archetype, p, rng, session_id) for m, p in zip(members, personas)
    ]
    return env, delegates


def run_one(seed: int, index: int, ranges: FuzzRanges, population: str) -> FuzzReport:
    rng = random.Random(f"{seed}:{index}:{population}")
    report = FuzzReport(runs=1)
    sid = f"F{index}"
    env, delegates = random_session(rng, ranges, population, sid)
    ledger = RoundLedger(ceiling=env.tree_ceiling)
    log = EventLog()
    try:
        packet = SessionRunner(env, delegates, log=log, ledger=ledger).run()
    except Exception:  # noqa: BLE001 - every failure is a report entry
        report.exceptions.append(f"run {index}: {traceback.format_exc(limit=3)}")
        return report
    report.terminations = 1
    report.max_rounds = ledger.used
    report.fallbacks = int(packet.forced_fallback)
    bound = effective_bound(env.max_rounds, per_depth_caps(env.max_depth, env.max_children), env.tree_ceiling)
    if ledger.used > bound:
        report.bound_violations = 1
    packets = [e["packet"] for e in log.of_type("packet_emitted")]
    if any(validate_completeness(p) for p in packets) or validate_completeness(packet):
        report.completeness_failures = 1
    return report


def fuzz_termination(
    seed: int, n_runs: int, ranges: FuzzRanges | None = None, population: str = "mixed"
) -> FuzzReport:
    """Run ``n_runs`` random sessions; the report depends only on the arguments."""
    if population not in POPULATIONS:
        raise ValueError(f"population must be one of {POPULATIONS}")
    ranges = ranges or FuzzRanges()
    report = FuzzReport()
    for i in range(n_runs):
        report = report.merge(run_one(seed, i, ranges, population))
    return report
