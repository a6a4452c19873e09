"""Convergent-flow machinery for Stages 1-7.

Everything here is deterministic arithmetic over plain data. Ties are broken
by ascending option index (``opt-1`` before ``opt-2``) and then by delegate
order, never by dict or set iteration order.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, NamedTuple

from .delegate import (
    ChallengeContribution,
    ContributionKind,
    Hypothesis,
    Proposal,
    ScoreSheet,
    canonical_key,
)
from .errors import EmptyPool, IncompleteTable

logger = logging.getLogger(__name__)

MAX_SCORE = 10.0


# --------------------------------------------------------------------------
# Hypotheses, options, records
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PoolEntry:
    author: str
    hypothesis: Hypothesis
    order: int
    evidence_link: str | None = None
    round: int = 0

    @property
    def key(self) -> str:
        return self.hypothesis.key

    def to_dict(self) -> dict[str, Any]:
        return {
            "author": self.author,
            "hypothesis": self.hypothesis.to_dict(),
            "order": self.order,
            "evidence_link": self.evidence_link,
            "round": self.round,
        }


@dataclass
class HypothesisPool:
    entries: list[PoolEntry] = field(default_factory=list)

    @classmethod
    def from_proposals(cls, proposals: Iterable[Proposal]) -> HypothesisPool:
        pool = cls()
        for p in proposals:
            for h in p.hypotheses:
                pool.add(p.author, h)
        return pool

    def add(self, author: str, hypothesis: Hypothesis, evidence_link: str | None = None, round: int = 0) -> PoolEntry:
        entry = PoolEntry(author, hypothesis, len(self.entries), evidence_link, round)
        self.entries.append(entry)
        return entry

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class Entry:
    author: str
    round: int
    text: str


@dataclass
class Objection:
    author: str
    round: int
    content: str
    fatal: bool
    withdrawn: bool = False
    move_id: str | None = None


def _entries(items: Sequence[Entry]) -> list[dict[str, Any]]:
    return [vars(e).copy() for e in items]


@dataclass
class OptionRecord:
    pros: list[Entry] = field(default_factory=list)
    cons: list[Entry] = field(default_factory=list)
    assumptions: list[Entry] = field(default_factory=list)
    evidence: list[Entry] = field(default_factory=list)
    risks: list[Entry] = field(default_factory=list)
    revisions: list[Entry] = field(default_factory=list)
    objections: list[Objection] = field(default_factory=list)
    actions: list[Entry] = field(default_factory=list)
    reopen_suggestions: list[Entry] = field(default_factory=list)

    @property
    def supports(self) -> int:
        return len(self.pros)

    def standing_objections(self) -> list[Objection]:
        return [o for o in self.objections if not o.withdrawn]

    def blocking_objections(self) -> list[Objection]:
        return [o for o in self.objections if o.fatal and not o.withdrawn]

    def absorb(self, other: OptionRecord) -> None:
        for name in ("pros", "cons", "assumptions", "evidence", "risks", "revisions",
                     "objections", "actions", "reopen_suggestions"):
            getattr(self, name).extend(getattr(other, name))

    def to_dict(self) -> dict[str, Any]:
        return {
            "pros": _entries(self.pros),
            "cons": _entries(self.cons),
            "assumptions": _entries(self.assumptions),
            "evidence": _entries(self.evidence),
            "risks": _entries(self.risks),
            "revisions": _entries(self.revisions),
            "objections": [vars(o).copy() for o in self.objections],
            "actions": _entries(self.actions),
            "reopen_suggestions": _entries(self.reopen_suggestions),
        }


@dataclass
class CandidateOption:
    option_id: str
    index: int
    canonical_label: str
    members: list[PoolEntry]
    record: OptionRecord = field(default_factory=OptionRecord)

    @property
    def key(self) -> str:
        return canonical_key(self.canonical_label)

    @property
    def description(self) -> str:
        return self.members[0].hypothesis.description if self.members else self.canonical_label

    @property
    def authors(self) -> list[str]:
        seen: list[str] = []
        for m in self.members:
            if m.author not in seen:
                seen.append(m.author)
        return seen

    def summary(self) -> dict[str, Any]:
        return {"option_id": self.option_id, "label": self.canonical_label}


def option_id_for(index: int) -> str:
    return f"opt-{index}"


def _seed_record(option: CandidateOption, entry: PoolEntry) -> None:
    seen_a = {canonical_key(e.text) for e in option.record.assumptions}
    for a in entry.hypothesis.assumptions:
        if canonical_key(a) not in seen_a:
            option.record.assumptions.append(Entry(entry.author, entry.round, a))
            seen_a.add(canonical_key(a))
    seen_r = {canonical_key(e.text) for e in option.record.risks}
    for r in entry.hypothesis.risks:
        if canonical_key(r) not in seen_r:
            option.record.risks.append(Entry(entry.author, entry.round, r))
            seen_r.add(canonical_key(r))
    if entry.evidence_link:
        option.record.evidence.append(Entry(entry.author, entry.round, entry.evidence_link))


def _new_option(index: int, members: list[PoolEntry]) -> CandidateOption:
    opt = CandidateOption(option_id_for(index), index, canonical_key(members[0].hypothesis.label), list(members))
    for m in members:
        _seed_record(opt, m)
    return opt


class Clustering(NamedTuple):
    options: list[CandidateOption]
    dropped: list[str]


def canonicalize_and_cluster(pool: HypothesisPool, max_options: int) -> Clustering:
    """Group pool entries by canonical label and keep at most ``max_options`` clusters.

    Over capacity, the largest clusters survive; equal sizes go to the cluster
    authored first. Survivors are numbered in authorship order.
    """
    if not pool.entries:
        raise EmptyPool("no hypotheses to cluster")
    clusters: dict[str, list[PoolEntry]] = {}
    for entry in pool.entries:
        clusters.setdefault(entry.key, []).append(entry)
    ordered = list(clusters.values())  # insertion order == first authorship
    if len(ordered) > max_options:
        ranked = sorted(ordered, key=lambda members: (-len(members), members[0].order))
        keep = {id(m) for m in ranked[:max_options]}
        dropped = [m[0].key for m in ordered if id(m) not in keep]
        ordered = [m for m in ordered if id(m) in keep]
        for key in dropped:
            logger.info("cluster %r dropped: over max_options=%d", key, max_options)
    else:
        dropped = []
    options = [_new_option(i + 1, members) for i, members in enumerate(ordered)]
    return Clustering(options, dropped)


def placeholder_option(problem: str) -> CandidateOption:
    """Stand-in when nobody proposed anything: defer, keeping the problem open."""
    h = Hypothesis("defer decision", f"No proposals were submitted for: {problem}")
    return _new_option(1, [PoolEntry("engine", h, 0)])


# --------------------------------------------------------------------------
# Stage 3: contributions and admission
# --------------------------------------------------------------------------


def record_contribution(record: OptionRecord, c: ChallengeContribution, round: int) -> None:
    entry = Entry(c.author, round, c.content)
    kind = c.kind
    if kind is ContributionKind.SUPPORT:
        record.pros.append(entry)
    elif kind is ContributionKind.CHALLENGE:
        record.cons.append(entry)
        record.objections.append(Objection(c.author, round, c.content, c.fatal, move_id=c.move_id))
    elif kind is ContributionKind.EVIDENCE:
        record.evidence.append(entry)
    elif kind is ContributionKind.COUNTEREXAMPLE:
        record.cons.append(entry)
    elif kind is ContributionKind.REVISION_SUGGESTION:
        record.revisions.append(entry)
    elif kind is ContributionKind.UNCERTAINTY_NOTE:
        record.risks.append(entry)
    if c.linked_evidence and kind is not ContributionKind.EVIDENCE:
        record.evidence.append(Entry(c.author, round, c.linked_evidence))


def withdraw_objections(options: Iterable[CandidateOption], author: str, cited_move_id: str | None) -> list[str]:
    """An update by an objection's own author that cites the objection's move withdraws it."""
    withdrawn = []
    if cited_move_id is None:
        return withdrawn
    for opt in options:
        for o in opt.record.objections:
            if o.move_id == cited_move_id and o.author == author and not o.withdrawn:
                o.withdrawn = True
                withdrawn.append(opt.option_id)
    return withdrawn


@dataclass(frozen=True)
class AdmissionOutcome:
    author: str
    label: str
    admitted: bool
    reason: str
    option_id: str | None = None


def admit_new_hypotheses(
    contributions: Sequence[ChallengeContribution],
    round: int,
    max_rounds: int,
    options: Sequence[CandidateOption],
    max_options: int,
    pool: HypothesisPool | None = None,
) -> tuple[list[CandidateOption], list[AdmissionOutcome]]:
    """Admit mid-deliberation hypotheses that pass every gate.

    Gates, in order: before the cutoff round, evidence-linked, materially
    distinct from every live option, claimed superior to a named live option,
    and a free slot under ``max_options``. Superiority is recorded as the
    author's claim; it is not checked.
    """
    if round < 1:
        raise ValueError("round must be >= 1")
    pool = pool if pool is not None else HypothesisPool()
    live_keys = {o.key for o in options}
    named = live_keys | {o.option_id for o in options}
    next_index = max((o.index for o in options), default=0) + 1
    count = len(options)
    admitted: list[CandidateOption] = []
    outcomes: list[AdmissionOutcome] = []
    for c in contributions:
        nh = c.proposed_new_hypothesis
        if nh is None:
            continue
        key = canonical_key(nh.label)
        if round >= max_rounds:
            reason = "cutoff"
        elif not nh.evidence.strip():
            reason = "no evidence link"
        elif key in live_keys:
            reason = "not materially distinct"
        elif not nh.superior_to or (
            canonical_key(nh.superior_to) not in named and nh.superior_to not in named
        ):
            reason = "no superiority claim over a live option"
        elif count >= max_options:
            reason = "option set full"
        else:
            reason = ""
        if reason:
            outcomes.append(AdmissionOutcome(c.author, nh.label, False, reason))
            continue
        h = Hypothesis(nh.label, nh.description, nh.assumptions, nh.risks)
        entry = pool.add(c.author, h, evidence_link=nh.evidence, round=round)
        opt = _new_option(next_index, [entry])
        admitted.append(opt)
        outcomes.append(AdmissionOutcome(c.author, nh.label, True, "admitted", opt.option_id))
        live_keys.add(key)
        named |= {key, opt.option_id}
        next_index += 1
        count += 1
    return admitted, outcomes


# --------------------------------------------------------------------------
# Stage 4: compression
# --------------------------------------------------------------------------


def dominates(a: CandidateOption, b: CandidateOption, interim_tops: Iterable[str] = ()) -> bool:
    """Strict dominance: a is at least as good on supports, fatal objections and evidence,
    strictly better on one, and no interim score sheet names b as its top choice."""
    if b.option_id in set(interim_tops):
        return False
    ra, rb = a.record, b.record
    sa, sb = ra.supports, rb.supports
    fa, fb = len(ra.blocking_objections()), len(rb.blocking_objections())
    ea, eb = len(ra.evidence), len(rb.evidence)
    if not (sa >= sb and fa <= fb and ea >= eb):
        return False
    return sa > sb or fa < fb or ea > eb


def merge_options(options: Sequence[CandidateOption], pairs: Iterable[tuple[str, str]]) -> list[CandidateOption]:
    """Merge option pairs declared compatible; the lower index absorbs the higher."""
    live = {o.option_id: o for o in options}
    by_name = {}
    for o in options:
        by_name[o.option_id] = o.option_id
        by_name[o.key] = o.option_id
    for x, y in pairs:
        ida = by_name.get(x) or by_name.get(canonical_key(x))
        idb = by_name.get(y) or by_name.get(canonical_key(y))
        if ida is None or idb is None or ida == idb or ida not in live or idb not in live:
            continue
        keep, gone = sorted((live[ida], live[idb]), key=lambda o: o.index)
        keep.members.extend(gone.members)
        keep.record.absorb(gone.record)
        del live[gone.option_id]
        for name, target in list(by_name.items()):
            if target == gone.option_id:
                by_name[name] = keep.option_id
    return sorted(live.values(), key=lambda o: o.index)


def remove_dominated(options: Sequence[CandidateOption], interim_tops: Iterable[str] = ()) -> list[CandidateOption]:
    tops = list(interim_tops)
    kept = [b for b in options if not any(dominates(a, b, tops) for a in options if a is not b)]
    return kept or list(options[:1])


def select_finalists(options: Sequence[CandidateOption], finalist_count: int) -> list[CandidateOption]:
    """The ``finalist_count`` options with the most support, returned in index order."""
    best = sorted(options, key=lambda o: (-o.record.supports, o.index))[:finalist_count]
    return sorted(best, key=lambda o: o.index)


def compress_options(
    options: Sequence[CandidateOption],
    interim_sheets: Sequence[ScoreSheet] = (),
    merges: Iterable[tuple[str, str]] = (),
) -> list[CandidateOption]:
    merged = merge_options(options, merges)
    return remove_dominated(merged, [s.top_choice for s in interim_sheets])


def revise_and_compress(
    options: Sequence[CandidateOption],
    finalist_count: int,
    interim_sheets: Sequence[ScoreSheet] = (),
    merges: Iterable[tuple[str, str]] = (),
) -> list[CandidateOption]:
    return select_finalists(compress_options(options, interim_sheets, merges), finalist_count)


# --------------------------------------------------------------------------
# Stage 5: scoring
# --------------------------------------------------------------------------


def domain_fit_table(
    config: Mapping[str, Any], delegates: Sequence[str], criteria: Sequence[str]
) -> dict[tuple[str, str], float]:
    """Per-(delegate, criterion) fit factors.

    Accepts either reading of the fit factor: ``{delegate: x}`` applies x to
    every criterion, ``{delegate: {criterion: x}}`` sets cells individually.
    Anything unspecified is 1.
    """
    table = {}
    for d in delegates:
        spec = config.get(d, 1.0)
        for c in criteria:
            value = spec.get(c, 1.0) if isinstance(spec, Mapping) else spec
            value = float(value)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"domain fit for {d}/{c} must be in [0, 1]")
            table[(d, c)] = value
    return table


@dataclass
class ScoreTable:
    delegates: list[str]
    options: list[str]
    weights: dict[str, float]
    scores: dict[tuple[str, str, str], float]
    confidence: dict[str, float]
    evidence: dict[str, float]
    fit: dict[tuple[str, str], float] = field(default_factory=dict)
    council_size: int | None = None

    @property
    def n(self) -> int:
        return self.council_size if self.council_size is not None else len(self.delegates)

    def factor(self, d: str, c: str) -> float:
        return self.confidence[d] * self.evidence[d] * self.fit.get((d, c), 1.0)

    def agg(self, o: str, c: str) -> float:
        """Per-criterion aggregate: sum over delegates of s * c_d * e_d * fit."""
        total = 0.0
        for d in self.delegates:
            key = (d, o, c)
            if key not in self.scores:
                raise IncompleteTable(f"no score for delegate {d}, option {o}, criterion {c}")
            total += self.scores[key] * self.factor(d, c)
        return total

    @classmethod
    def from_sheets(
        cls,
        sheets: Sequence[ScoreSheet],
        option_ids: Sequence[str],
        weights: Mapping[str, float],
        fit: Mapping[tuple[str, str], float] | None = None,
        council_size: int | None = None,
    ) -> ScoreTable:
        scores = {}
        for sh in sheets:
            for o in option_ids:
                for c in weights:
                    if (o, c) in sh.scores:
                        scores[(sh.delegate, o, c)] = float(sh.scores[(o, c)])
        return cls(
            delegates=[sh.delegate for sh in sheets],
            options=list(option_ids),
            weights=dict(weights),
            scores=scores,
            confidence={sh.delegate: sh.confidence for sh in sheets},
            evidence={sh.delegate: sh.evidence_strength for sh in sheets},
            fit=dict(fit or {}),
            council_size=council_size,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "delegates": list(self.delegates),
            "options": list(self.options),
            "weights": dict(self.weights),
            "scores": [[d, o, c, s] for (d, o, c), s in sorted(self.scores.items())],
            "confidence": dict(self.confidence),
            "evidence": dict(self.evidence),
            "fit": [[d, c, v] for (d, c), v in sorted(self.fit.items())],
            "council_size": self.council_size,
        }


class Score(NamedTuple):
    total: float
    normalized: float


def total_score(o: str, table: ScoreTable) -> Score:
    """Weighted total over criteria of the per-criterion delegate aggregate.

    ``normalized`` divides by the best attainable total, 10 * council size.
    """
    total = 0.0
    for c, w in table.weights.items():
        total += w * table.agg(o, c)
    n = table.n
    return Score(total, total / (MAX_SCORE * n) if n else 0.0)


class Ranked(NamedTuple):
    option_id: str
    total: float
    normalized: float


def _index_of(option_id: str) -> int:
    tail = option_id.rsplit("-", 1)[-1]
    return int(tail) if tail.isdigit() else 0


def rank_options(table: ScoreTable) -> list[Ranked]:
    rows = [Ranked(o, *total_score(o, table)) for o in table.options]
    return sorted(rows, key=lambda r: (-r.normalized, _index_of(r.option_id), r.option_id))


# --------------------------------------------------------------------------
# Stage 6: convergence tests
# --------------------------------------------------------------------------


class VerdictKind(str, Enum):
    SCORE_DOMINANCE = "score_dominance"
    MAJORITY_BACKING = "majority_backing"
    NO_BLOCKING_OBJECTION = "no_blocking_objection"
    NONE = "none"


@dataclass(frozen=True)
class ConvergenceVerdict:
    kind: VerdictKind
    winner: str | None = None

    def __post_init__(self) -> None:
        if (self.winner is None) != (self.kind is VerdictKind.NONE):
            raise ValueError("a verdict names a winner exactly when it is not 'none'")

    @property
    def converged(self) -> bool:
        return self.kind is not VerdictKind.NONE


def test_convergence(
    ranking: Sequence[Ranked],
    records: Mapping[str, OptionRecord],
    epsilon: float,
    majority_threshold: float,
    sheets: Sequence[ScoreSheet],
    council_size: int | None = None,
) -> ConvergenceVerdict:
    """Score dominance, then majority backing, then absence of blocking objections.

    The first condition that holds decides the verdict kind.
    """
    if not ranking:
        return ConvergenceVerdict(VerdictKind.NONE)
    top = ranking[0]
    if len(ranking) == 1 or top.normalized - ranking[1].normalized > epsilon:
        return ConvergenceVerdict(VerdictKind.SCORE_DOMINANCE, top.option_id)
    n = council_size if council_size is not None else len(sheets)
    if n:
        backers = sum(1 for s in sheets if s.top_choice == top.option_id)
        if backers / n > majority_threshold:
            return ConvergenceVerdict(VerdictKind.MAJORITY_BACKING, top.option_id)
    if all(not r.blocking_objections() for r in records.values()):
        return ConvergenceVerdict(VerdictKind.NO_BLOCKING_OBJECTION, top.option_id)
    return ConvergenceVerdict(VerdictKind.NONE)


test_convergence.__test__ = False  # keep pytest from collecting the import


# --------------------------------------------------------------------------
# Stage 7: forced-decision fallback
# --------------------------------------------------------------------------


class FallbackMethod(str, Enum):
    OUTRANKING = "outranking"
    MINIMAX_REGRET = "minimax_regret"
    ROBUST_SATISFICING = "robust_satisficing"
    INTEGRATOR = "integrator"


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def pairwise_outranks(a: str, b: str, table: ScoreTable) -> bool:
    """a beats b when the criterion weights of the criteria it wins outweigh those it loses."""
    margin = 0.0
    for c, w in table.weights.items():
        margin += w * _sign(table.agg(a, c) - table.agg(b, c))
    return margin > 0


def _argbest(candidates: Sequence[str], value: Callable[[str], float], maximize: bool) -> list[str]:
    values = {o: value(o) for o in candidates}
    best = max(values.values()) if maximize else min(values.values())
    return [o for o in candidates if values[o] == best]


def outranking(candidates: Sequence[str], table: ScoreTable) -> list[str]:
    """Options with the most pairwise wins (Copeland count). One entry means a unique winner."""
    def wins(a: str) -> float:
        return sum(1 for b in candidates if b != a and pairwise_outranks(a, b, table))

    return _argbest(candidates, wins, maximize=True)


def minimax_regret(
    candidates: Sequence[str], table: ScoreTable, reference: Sequence[str] | None = None
) -> list[str]:
    """Options whose worst weighted shortfall from the per-criterion best is smallest."""
    reference = list(reference or candidates)
    best = {c: max(table.agg(o, c) for o in reference) for c in table.weights}

    def regret(o: str) -> float:
        return max(w * (best[c] - table.agg(o, c)) for c, w in table.weights.items())

    return _argbest(candidates, regret, maximize=False)


def robust_satisficing(candidates: Sequence[str], table: ScoreTable) -> list[str]:
    """Options whose weakest normalised criterion aggregate is highest."""
    n = table.n

    def floor(o: str) -> float:
        if not n:
            return 0.0
        return min(table.agg(o, c) / (MAX_SCORE * n) for c in table.weights)

    return _argbest(candidates, floor, maximize=True)


@dataclass(frozen=True)
class FallbackResult:
    winner: str
    method: FallbackMethod
    trail: tuple[tuple[str, tuple[str, ...]], ...]


def fallback_select(
    finalists: Sequence[str],
    table: ScoreTable,
    integrator_pick: Callable[[list[str]], str | None] | None = None,
) -> FallbackResult:
    """Run the cascade until one level leaves a single option.

    Each level narrows the field to the options it could not separate. The
    last level asks the Integrator to choose between the two best-ranked
    survivors; without a usable answer the better-ranked one wins.
    """
    if not finalists:
        raise ValueError("fallback needs at least one finalist")
    ordered = sorted(finalists, key=lambda o: (_index_of(o), o))
    trail: list[tuple[str, tuple[str, ...]]] = []
    levels: list[tuple[FallbackMethod, Callable[[list[str]], list[str]]]] = [
        (FallbackMethod.OUTRANKING, lambda cs: outranking(cs, table)),
        (FallbackMethod.MINIMAX_REGRET, lambda cs: minimax_regret(cs, table, reference=ordered)),
        (FallbackMethod.ROBUST_SATISFICING, lambda cs: robust_satisficing(cs, table)),
    ]
    candidates = ordered
    for method, level in levels:
        candidates = level(candidates)
        trail.append((method.value, tuple(candidates)))
        if len(candidates) == 1:
            return FallbackResult(candidates[0], method, tuple(trail))

    totals = {o: total_score(o, table).normalized for o in candidates}
    top2 = sorted(candidates, key=lambda o: (-totals[o], _index_of(o), o))[:2]
    pick = integrator_pick(list(top2)) if integrator_pick is not None else None
    winner = pick if pick in top2 else top2[0]
    trail.append((FallbackMethod.INTEGRATOR.value, tuple(top2)))
    return FallbackResult(winner, FallbackMethod.INTEGRATOR, tuple(trail))
