"""The session runner: Stages 0-8 of the convergent flow.

Control flow: proposals, clustering, then up to ``max_rounds`` iterations of
challenge, admission, compression, scoring and the convergence test. If
nothing converged the forced-decision cascade picks a winner, and a decision
packet always closes the session.

Every delegate response is written to the event log before the engine acts
on it, so a log can be replayed through the same runner (see ``replay``).
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import replace
from typing import Any

from .convergence import (
    CandidateOption,
    ConvergenceVerdict,
    Entry,
    FallbackResult,
    HypothesisPool,
    Ranked,
    ScoreTable,
    VerdictKind,
    admit_new_hypotheses,
    canonicalize_and_cluster,
    compress_options,
    domain_fit_table,
    fallback_select,
    placeholder_option,
    rank_options,
    record_contribution,
    select_finalists,
    test_convergence,
    withdraw_objections,
)
from .delegate import (
    ArchetypeKind,
    ChallengeContribution,
    Delegate,
    DelegateState,
    Proposal,
    ScoreSheet,
    Turn,
    check_sheet_complete,
    own_top_choice,
    record_position_shift,
)
from .errors import (
    IncompleteScoreSheet,
    InvalidEnvelope,
    ParseError,
    ProviderFailure,
    ScenarioExhausted,
)
from .events import EventLog
from .grammar import (
    ActType,
    Move,
    MoveContext,
    Phase,
    Rejection,
    move_to_document,
    parse_move,
    validate_move,
)
from .packet import DecisionPacket, finalize_decision
from .session import (
    Refusal,
    RoundLedger,
    SessionEnvelope,
    SessionState,
    advance_phase,
    init_session,
    recall_result,
    spawn_subsession,
)
from .workspace import apply_move, carry_forward

logger = logging.getLogger(__name__)

MAX_RETRIES = 2

# Errors that turn a delegate call into a skipped turn instead of a crash.
SOFT_FAILURES = (ScenarioExhausted, ProviderFailure, IncompleteScoreSheet)


def _serialize(call: str, value: Any) -> Any:
    if call in ("proposal", "contribute", "score"):
        return value.to_dict()
    if call == "revise":
        return dict(value)
    return value


class SessionRunner:
    def __init__(
        self,
        envelope: SessionEnvelope,
        delegates: Sequence[Delegate],
        log: EventLog | None = None,
        ledger: RoundLedger | None = None,
        max_retries: int = MAX_RETRIES,
    ) -> None:
        self.raw_envelope = envelope.to_dict()
        self.state: SessionState = init_session(envelope, ledger)
        self.env = self.state.envelope
        roster = [m.delegate_id for m in self.env.delegates]
        if [d.delegate_id for d in delegates] != roster:
            raise InvalidEnvelope(f"delegates {[d.delegate_id for d in delegates]} do not match roster {roster}")
        self.delegates = list(delegates)
        self.log = log if log is not None else EventLog()
        self.max_retries = max_retries

        self.pool = HypothesisPool()
        self.options: list[CandidateOption] = []
        self.finalists: list[CandidateOption] = []
        self.sheets: list[ScoreSheet] = []
        self.interim_sheets: list[ScoreSheet] = []
        self.ranking: list[Ranked] = []
        self.table: ScoreTable | None = None
        self.verdict = ConvergenceVerdict(VerdictKind.NONE)
        self.fallback: FallbackResult | None = None
        self.accepted: list[str] = []
        self.round = 0
        self._new_hypotheses: list[ChallengeContribution] = []
        self._merges: list[tuple[str, str]] = []
        self._spawns: list[tuple[Move, int]] = []
        self.packet: DecisionPacket | None = None

    # ------------------------------------------------------------------ utils

    @property
    def sid(self) -> str:
        return self.state.session_id

    def emit(self, type: str, **data: Any) -> None:
        self.log.emit(type, self.sid, self.round, **data)

    def _advance(self, target: Phase | None = None) -> None:
        advance_phase(self.state, target)
        self.emit("phase_entered", phase=self.state.phase.value, workspace=self.state.workspace.snapshot())

    def _call(self, d: Delegate, call: str, fn: Callable[[], Any], **args: Any) -> Any:
        try:
            value = fn()
        except SOFT_FAILURES as exc:
            self.emit(
                "delegate_call", delegate=d.delegate_id, call=call, args=args,
                error={"type": type(exc).__name__, "message": str(exc)},
            )
            return None
        self.emit("delegate_call", delegate=d.delegate_id, call=call, args=args, response=_serialize(call, value))
        return value

    def _context(self) -> dict[str, Any]:
        return {
            "session_id": self.sid,
            "round": self.round,
            "phase": self.state.phase.value,
            "depth": self.env.depth,
            "max_depth": self.env.max_depth,
            "known_move_ids": list(self.accepted),
            "workspace": self.state.workspace.snapshot(),
        }

    def _move_context(self) -> MoveContext:
        return MoveContext(
            session_id=self.sid,
            round=self.round,
            phase=self.state.phase,
            known_move_ids=frozenset(self.accepted),
            depth=self.env.depth,
            max_depth=self.env.max_depth,
            completed_spawns=frozenset(self.state.completed_spawns),
        )

    # ------------------------------------------------------------------ run

    def run(self) -> DecisionPacket:
        self.emit("session_started", envelope=self.raw_envelope, depth=self.env.depth, tree_rounds=self.state.ledger.used)
        if self.state.weights_renormalized:
            self.emit("criteria_normalized", weights=self.env.weights)
        self.emit("stage_entered", stage=0)

        self._advance()  # independent first thought
        self._stage1_proposals()
        self._advance()  # mutual engagement
        self._stage2_cluster()

        for round_idx in range(1, self.env.max_rounds + 1):
            if self.state.ledger.remaining <= 0:
                self.emit("ceiling_reached", tree_rounds=self.state.ledger.used)
                break
            if round_idx > 1:
                self.round = round_idx
                self._advance(Phase.MUTUAL_ENGAGEMENT)
            self.round = round_idx
            self.state.ledger.take()
            self.state.rounds_used += 1
            self.emit("round_started", tree_rounds=self.state.ledger.used)

            self.emit("stage_entered", stage=3)
            self._stage3_challenge()
            self._run_subsessions()
            self._admit_hypotheses()
            self.state.round_contributed = True
            self._advance()  # collective shaping

            self.emit("stage_entered", stage=4)
            self._stage4_compress()
            self.emit("stage_entered", stage=5)
            self._stage5_score()
            self.state.round_scored = True
            self.emit("stage_entered", stage=6)
            self.verdict = test_convergence(
                self.ranking,
                {f.option_id: f.record for f in self.finalists},
                self.env.convergence_margin,
                self.env.majority_threshold,
                self.sheets,
                council_size=len(self.delegates),
            )
            self.emit("verdict", kind=self.verdict.kind.value, winner=self.verdict.winner)
            if self.verdict.converged:
                break
            self.interim_sheets = list(self.sheets)

        if self.verdict.converged:
            winner_id = self.verdict.winner
        else:
            winner_id = self._stage7_fallback()

        self._advance(Phase.CLOSURE)
        self.emit("stage_entered", stage=8)
        self.state.workspace, record = carry_forward(self.state.workspace, self.state.phase)
        self.emit("carry_forward", record=record)
        winner = next(f for f in self.finalists if f.option_id == winner_id)
        self.packet = finalize_decision(
            winner,
            self.finalists,
            self.sheets,
            forced=self.fallback is not None,
            method=self.fallback.method if self.fallback else None,
            session_id=self.sid,
            verdict=self.verdict.kind,
            rounds=self.state.rounds_used,
            ranking=self.ranking,
            delegate_states=self.state.delegate_states,
            council=[d.delegate_id for d in self.delegates],
            carried_tensions=record["open_tensions"],
        )
        self.emit("packet_emitted", packet=self.packet.to_document())
        return self.packet

    # ------------------------------------------------------------------ stages

    def _stage1_proposals(self) -> None:
        self.emit("stage_entered", stage=1)
        problem = self.env.problem
        for d in self.delegates:
            proposal: Proposal | None = self._call(d, "proposal", lambda: d.generate_proposal(problem))
            if proposal is not None and proposal.author != d.delegate_id:
                proposal = replace(proposal, author=d.delegate_id)
            self.state.proposals[d.delegate_id] = proposal
            if proposal is None:
                self.emit("proposal_skipped", delegate=d.delegate_id)
                continue
            self.state.delegate_states[d.delegate_id] = DelegateState(
                view=proposal.framing or proposal.hypotheses[0].description,
                confidence=proposal.confidence,
                concerns=frozenset(proposal.concerns),
            )
            for h in proposal.hypotheses:
                self.pool.add(d.delegate_id, h)

    def _stage2_cluster(self) -> None:
        self.emit("stage_entered", stage=2)
        if not self.pool.entries:
            self.options = [placeholder_option(self.env.problem)]
            self.emit("pool_empty")
        else:
            clustering = canonicalize_and_cluster(self.pool, self.env.max_options)
            self.options = clustering.options
            for key in clustering.dropped:
                self.emit("option_dropped", label=key, reason="max_options")
        for o in self.options:
            self.emit("option_created", option=o.summary(), authors=o.authors)
        self.state.options_ready = True

    def _stage3_challenge(self) -> None:
        self._new_hypotheses = []
        self._merges = []
        self._spawns = []
        for option in list(self.options):
            for i, d in enumerate(self.delegates):
                turn: Turn | None = self._call(
                    d, "contribute",
                    lambda: d.contribute(option, self.round, self._context()),
                    option=option.option_id,
                )
                if turn is None:
                    continue
                retries = self.max_retries
                for k, doc in enumerate(turn.moves):
                    move, retries, why = self._accept_move(d, doc, retries)
                    if move is None:
                        self.emit(
                            "turn_skipped", delegate=d.delegate_id, option=option.option_id,
                            reason=why, dropped_moves=len(turn.moves) - k,
                        )
                        break
                    self._after_move(move, option, d, i)
                for c in turn.contributions:
                    self._record(option, replace(c, author=d.delegate_id, option_id=option.option_id))

    def _record(self, option: CandidateOption, c: ChallengeContribution) -> None:
        record_contribution(option.record, c, self.round)
        self.emit("contribution_recorded", contribution=c.to_dict())
        if c.proposed_new_hypothesis is not None:
            self._new_hypotheses.append(c)

    def _accept_move(
        self, d: Delegate, doc: Mapping[str, Any], retries: int
    ) -> tuple[Move | None, int, str]:
        """Validate one move, re-prompting while the turn's retry budget lasts.

        Returns the accepted move (or None), the budget left, and why the move failed.
        """
        while True:
            rejection: Rejection | None
            move: Move | None = None
            try:
                move = parse_move(doc)
            except ParseError as exc:
                rejection = Rejection(exc.code, exc.field, exc.message)
            else:
                if move.actor not in (d.delegate_id, d.archetype.value):
                    rejection = Rejection("ActorMismatch", "actor", f"{d.delegate_id} cannot speak as {move.actor}")
                else:
                    rejection = validate_move(move, self._move_context())
            if rejection is None:
                assert move is not None
                self.accepted.append(move.move_id)
                self.state.workspace = apply_move(self.state.workspace, move)
                self.emit("move_accepted", delegate=d.delegate_id, move=move_to_document(move))
                return move, retries, ""
            self.emit(
                "move_rejected", delegate=d.delegate_id, retries_left=retries, document=dict(doc),
                reason=rejection.reason, field=rejection.field, message=rejection.message,
            )
            if retries <= 0:
                return None, 0, "retry bound reached"
            retries -= 1
            revised = self._call(d, "revise", lambda: d.revise(doc, rejection), rejection=rejection.reason)
            if revised is None:
                return None, retries, "no revision"
            doc = revised

    def _after_move(self, move: Move, option: CandidateOption, d: Delegate, index: int) -> None:
        did = d.delegate_id
        states = self.state.delegate_states
        if move.act is ActType.UPDATE:
            states[did] = record_position_shift(states[did], move.content, move.confidence, move.move_id, self.round)
            for option_id in withdraw_objections(self.options, did, move.target_move_id):
                self.emit("objection_withdrawn", option_id=option_id, move_id=move.target_move_id, by=did)
        elif move.act is ActType.ASK:
            states[did] = replace(states[did], open_questions=states[did].open_questions | {move.content})
        elif move.act is ActType.RECOMMEND:
            entry = Entry(did, self.round, move.content)
            if move.is_hard:
                option.record.reopen_suggestions.append(entry)
            else:
                option.record.actions.append(entry)
        elif move.act is ActType.BRIDGE:
            pair = move.extras.get("bridges")
            if isinstance(pair, (list, tuple)) and len(pair) == 2 and all(isinstance(p, str) for p in pair):
                self._merges.append((pair[0], pair[1]))
        elif move.act is ActType.SPAWN:
            self._spawns.append((move, index))

    def _run_subsessions(self) -> None:
        for move, index in self._spawns:
            requested = move.extras.get("rounds", self.env.max_rounds)
            if isinstance(requested, bool) or not isinstance(requested, int):
                requested = self.env.max_rounds
            child_env = spawn_subsession(self.state, move.content, requested)
            if isinstance(child_env, Refusal):
                self.emit("spawn_refused", move_id=move.move_id, reason=child_env.reason, detail=child_env.detail)
                continue
            csid = child_env.session_id
            self.emit("subsession_started", move_id=move.move_id, child_session=csid, max_rounds=child_env.max_rounds)
            children = [d.spawn_child(csid, move.content, move.move_id) for d in self.delegates]
            child = SessionRunner(child_env, children, log=self.log, ledger=self.state.ledger, max_retries=self.max_retries)
            packet = child.run().to_document()
            self.state.completed_spawns[move.move_id] = csid
            spawner = self.delegates[index]
            recall = parse_move({
                "move_id": f"{move.move_id}/recall",
                "session_id": self.sid,
                "round": self.round,
                "phase": self.state.phase.value,
                "actor": spawner.delegate_id,
                "mode": "integrative",
                "act": "recall",
                "intent": "incorporate sub-session result",
                "target": f"contribution:{move.move_id}",
                "content": f"{packet['decision']['label']}: {packet['decision']['content']}",
                "confidence": packet["confidence"],
                "move_force": "soft",
                "meta_level": False,
                "child_session": csid,
            })
            rejection = validate_move(recall, self._move_context())
            if rejection is not None:  # pragma: no cover - engine-built move
                raise AssertionError(rejection)
            self.accepted.append(recall.move_id)
            recall_result(self.state, recall, csid, packet)
            self.emit("move_accepted", delegate=spawner.delegate_id, move=move_to_document(recall))
            self.emit("subsession_recalled", child_session=csid, decision=packet["decision"])

    def _admit_hypotheses(self) -> None:
        admitted, outcomes = admit_new_hypotheses(
            self._new_hypotheses, self.round, self.env.max_rounds, self.options,
            self.env.max_options, self.pool,
        )
        for out in outcomes:
            if out.admitted:
                self.emit("option_admitted", author=out.author, label=out.label, option_id=out.option_id)
            else:
                self.emit("option_refused", author=out.author, label=out.label, reason=out.reason)
        self.options = sorted(self.options + admitted, key=lambda o: o.index)

    def _stage4_compress(self) -> None:
        before = [o.option_id for o in self.options]
        self.options = compress_options(self.options, self.interim_sheets, self._merges)
        after = {o.option_id for o in self.options}
        for option_id in before:
            if option_id not in after:
                self.emit("option_removed", option_id=option_id)
        self.finalists = select_finalists(self.options, self.env.finalist_count)
        self.emit("finalists", options=[f.summary() for f in self.finalists])

    def _stage5_score(self) -> None:
        weights = self.env.weights
        ids = [f.option_id for f in self.finalists]
        sheets = []
        for d in self.delegates:
            sheet: ScoreSheet | None = self._call(
                d, "score", lambda: d.score(self.finalists, weights), options=ids
            )
            if sheet is None:
                continue
            try:
                check_sheet_complete(sheet, ids, list(weights))
            except IncompleteScoreSheet as exc:
                self.emit("score_skipped", delegate=d.delegate_id, reason=str(exc))
                continue
            scores = {k: v for k, v in sheet.scores.items() if k[0] in ids and k[1] in weights}
            top = own_top_choice(scores, ids, weights)
            sheets.append(replace(sheet, delegate=d.delegate_id, scores=scores, top_choice=top))
        self.sheets = sheets
        fit = domain_fit_table(self.env.domain_fit, [s.delegate for s in sheets], list(weights))
        self.table = ScoreTable.from_sheets(sheets, ids, weights, fit, council_size=len(self.delegates))
        self.ranking = rank_options(self.table)
        self.emit(
            "scores_recorded",
            table=self.table.to_dict(),
            ranking=[r._asdict() for r in self.ranking],
            top_choices={s.delegate: s.top_choice for s in sheets},
        )

    def _stage7_fallback(self) -> str:
        self.emit("stage_entered", stage=7)
        if not self.finalists:
            self.finalists = select_finalists(self.options, self.env.finalist_count)
            ids = [f.option_id for f in self.finalists]
            self.table = ScoreTable.from_sheets([], ids, self.env.weights, council_size=len(self.delegates))
            self.ranking = rank_options(self.table)
        assert self.table is not None
        integrator = next((d for d in self.delegates if d.archetype is ArchetypeKind.INTEGRATOR), None)
        by_id = {f.option_id: f for f in self.finalists}

        def pick(top2: list[str]) -> str | None:
            if integrator is None:
                return None
            return self._call(
                integrator, "integrator_pick",
                lambda: integrator.integrator_pick([by_id[o] for o in top2]),
                options=top2,
            )

        self.fallback = fallback_select([f.option_id for f in self.finalists], self.table, pick)
        self.emit(
            "fallback",
            winner=self.fallback.winner,
            method=self.fallback.method.value,
            trail=[list(step) for step in self.fallback.trail],
        )
        return self.fallback.winner


def run_session(
    envelope: SessionEnvelope,
    delegates: Sequence[Delegate],
    log: EventLog | None = None,
    ledger: RoundLedger | None = None,
) -> DecisionPacket:
    return SessionRunner(envelope, delegates, log=log, ledger=ledger).run()
