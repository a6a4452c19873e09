from __future__ import annotations

import json

import pytest

from conftest import REFERENCE_MOVE, make_options
from dci.delegate import (
    Archetype,
    ArchetypeKind,
    ChallengeContribution,
    ContributionKind,
    DelegateState,
    Hypothesis,
    Proposal,
    RemoteDelegate,
    ScoreSheet,
    ScriptedDelegate,
    Turn,
    canonical_key,
    default_archetype_bias,
    extract_documents,
    own_top_choice,
    record_position_shift,
)
from dci.errors import (
    IncompleteScoreSheet,
    OutOfRangeConfidence,
    ProviderFailure,
    ScenarioExhausted,
    ScenarioParseError,
)
from dci.grammar import ActType, Rejection


def test_canonical_key():
    assert canonical_key("  Exactly-Once   Processing ") == "exactly-once processing"


@pytest.mark.parametrize("kind", list(ArchetypeKind))
def test_bias_tables_are_distributions(kind):
    bias = default_archetype_bias(kind)
    assert set(bias) == set(ActType)
    assert abs(sum(bias.values()) - 1) < 1e-12
    assert min(bias.values()) > 0
    Archetype.default(kind)


def test_bias_prefers_signature_acts():
    assert max(default_archetype_bias("Challenger"), key=default_archetype_bias("Challenger").get) is ActType.CHALLENGE
    assert max(default_archetype_bias("Explorer"), key=default_archetype_bias("Explorer").get) is ActType.PROPOSE


def test_archetype_rejects_zero_weight():
    bias = default_archetype_bias("Framer")
    bias[ActType.SPAWN] = 0.0
    with pytest.raises(ValueError):
        Archetype(ArchetypeKind.FRAMER, bias)


def test_position_shift_always_appends():
    s = DelegateState("a", 0.4)
    s1 = record_position_shift(s, "b", 0.6, "m1", 1)
    s2 = record_position_shift(s1, "b", 0.6, "m2", 2)
    assert [h.trigger_move_id for h in s2.shift_history] == ["m1", "m2"]
    assert s2.shift_history[0].prior_view == "a" and s2.view == "b"
    with pytest.raises(OutOfRangeConfidence):
        record_position_shift(s, "c", 1.2, "m3", 1)


def test_proposal_needs_a_hypothesis():
    with pytest.raises(ValueError):
        Proposal("a", "f", ())
    p = Proposal("a", "f", (Hypothesis("x", "y", ("z",)),), ("c",), 0.4)
    assert Proposal.from_dict(p.to_dict()) == p


def test_only_challenges_are_fatal():
    with pytest.raises(ValueError):
        ChallengeContribution("a", "opt-1", ContributionKind.SUPPORT, "x", fatal=True)


def test_sheet_round_trip_and_top_choice():
    scores = {("opt-1", "c"): 5.0, ("opt-2", "c"): 5.0, ("opt-3", "c"): 4.0}
    assert own_top_choice(scores, ["opt-2", "opt-1", "opt-3"], {"c": 1.0}) == "opt-1"
    sheet = ScoreSheet("d", scores, 0.5, 0.5, {"opt-1": "why"}, "opt-1")
    assert ScoreSheet.from_dict(json.loads(json.dumps(sheet.to_dict()))) == sheet
    with pytest.raises(ValueError):
        ScoreSheet("d", {("opt-1", "c"): 11}, 0.5, 0.5, {}, "opt-1")


def test_turn_round_trip():
    turn = Turn([ChallengeContribution("a", "opt-1", ContributionKind.CHALLENGE, "no", fatal=True, move_id="m")],
                [dict(REFERENCE_MOVE)])
    assert Turn.from_dict(json.loads(json.dumps(turn.to_dict()))) == turn


SCRIPT = {
    "proposal": {"framing": "f", "hypotheses": [{"label": "Alpha"}, {"label": "beta"}]},
    "rounds": {
        "1": [
            {"option": None, "moves": [{"move_id": "x1", "act": "frame"}]},
            {"option": "alpha", "contributions": [{"kind": "support", "content": "good"}]},
        ]
    },
    "scores": {"*": {"scores": {"alpha": {"c": 7}, "beta": {"c": 3}}, "confidence": 0.9}},
    "integrator_pick": ["beta"],
    "revisions": {"x1": [{"act": "clarify"}]},
    "subsessions": {"sp": {"proposal": {"hypotheses": [{"label": "child"}]}}},
}


def test_scripted_delegate_plays_its_script():
    d = ScriptedDelegate("ann", "Framer", SCRIPT)
    assert [h.label for h in d.generate_proposal("p").hypotheses] == ["Alpha", "beta"]
    alpha, beta = make_options("alpha", "beta")
    ctx = {"session_id": "S", "phase": "mutual_engagement"}
    first = d.contribute(alpha, 1, ctx)
    assert first.moves[0]["actor"] == "ann" and first.moves[0]["session_id"] == "S"
    assert first.contributions[0].option_id == alpha.option_id
    second = d.contribute(beta, 1, ctx)
    assert second.moves == [] and second.contributions == []
    with pytest.raises(ScenarioExhausted):
        d.contribute(alpha, 2, ctx)
    sheet = d.score([alpha, beta], {"c": 1.0})
    assert sheet.top_choice == alpha.option_id and sheet.confidence == 0.9
    assert d.integrator_pick([alpha, beta]) == beta.option_id
    with pytest.raises(ScenarioExhausted):
        d.integrator_pick([alpha, beta])
    rej = Rejection("UnknownAct", "act", "bad")
    assert d.revise({"move_id": "x1", "act": "nope"}, rej)["act"] == "clarify"
    with pytest.raises(ScenarioExhausted):
        d.revise({"move_id": "x1"}, rej)
    child = d.spawn_child("S.1", "sub", "sp")
    assert child.generate_proposal("sub").hypotheses[0].label == "child"


def test_scripted_score_sheet_must_cover_finalists():
    d = ScriptedDelegate("ann", "Framer", {**SCRIPT, "scores": {"1": {"scores": {"alpha": {"c": 1}}}}})
    with pytest.raises(IncompleteScoreSheet):
        d.score(make_options("alpha", "beta"), {"c": 1.0})


def test_scripted_declared_top_choice_must_match():
    scores = {"1": {"scores": {"alpha": {"c": 1}, "beta": {"c": 2}}, "top_choice": "alpha"}}
    with pytest.raises(ScenarioParseError):
        ScriptedDelegate("ann", "Framer", {**SCRIPT, "scores": scores}).score(make_options("alpha", "beta"), {"c": 1})


def test_extract_documents_from_chatter():
    text = 'Sure! {"a": 1} and then {"b": {"c": 2}} trailing {broken'
    assert extract_documents(text) == [{"a": 1}, {"b": {"c": 2}}]


def test_remote_delegate_with_fake_completion():
    calls = []

    def complete(system, prompt):
        calls.append((system, prompt))
        if "Stage 1" in prompt:
            return 'Here: {"framing": "f", "hypotheses": [{"label": "alpha"}], "confidence": 0.7}'
        if "Stage 3" in prompt:
            return json.dumps({"kind": "support", "content": "yes"}) + json.dumps(REFERENCE_MOVE)
        if "Stage 5" in prompt:
            return json.dumps({"scores": {"opt-1": {"c": 6}, "opt-2": {"c": 8}}, "confidence": 0.6})
        return "no json here"

    d = RemoteDelegate("r", "Challenger", complete=complete)
    assert d.generate_proposal("p").hypotheses[0].label == "alpha"
    assert "Challenger" in calls[0][0] and "move_force" in calls[0][0]
    opts = make_options("alpha", "beta")
    turn = d.contribute(opts[0], 1, {"session_id": "S"})
    assert len(turn.contributions) == 1 and turn.moves == [REFERENCE_MOVE]
    assert d.score(opts, {"c": 1.0}).top_choice == "opt-2"
    with pytest.raises(ProviderFailure):
        d.integrator_pick(opts)


def test_remote_delegate_needs_endpoint(monkeypatch):
    monkeypatch.delenv("DCI_REMOTE_ENDPOINT", raising=False)
    with pytest.raises(ProviderFailure):
        RemoteDelegate("r", "Framer")


def test_remote_unreachable_endpoint_is_provider_failure():
    d = RemoteDelegate("r", "Framer", endpoint="http://127.0.0.1:9/none")
    with pytest.raises(ProviderFailure):
        d.generate_proposal("p")
