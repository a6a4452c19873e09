from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dci.convergence import (
    ConvergenceVerdict,
    FallbackMethod,
    HypothesisPool,
    Objection,
    OptionRecord,
    Ranked,
    ScoreTable,
    VerdictKind,
    admit_new_hypotheses,
    canonicalize_and_cluster,
    domain_fit_table,
    dominates,
    fallback_select,
    merge_options,
    minimax_regret,
    outranking,
    placeholder_option,
    rank_options,
    record_contribution,
    remove_dominated,
    revise_and_compress,
    robust_satisficing,
    select_finalists,
    test_convergence as convergence_test,
    total_score,
    withdraw_objections,
)
from dci.delegate import ChallengeContribution, ContributionKind, Hypothesis, NewHypothesis, ScoreSheet
from dci.errors import EmptyPool, IncompleteTable

from conftest import make_options
from oracles import brute_force_clusters, copeland_winners, naive_aggregate, naive_total, random_table


def contrib(author, option_id, kind="support", content="x", **kw):
    return ChallengeContribution(author, option_id, ContributionKind(kind), content, **kw)


def sheet(delegate, scores, top, confidence=1.0, evidence=1.0):
    return ScoreSheet(delegate, scores, confidence, evidence, {}, top)


# --------------------------------------------------------------------------
# clustering


class TestClustering:
    def test_labels_differing_in_case_and_spacing_share_a_cluster(self):
        pool = HypothesisPool()
        pool.add("a", Hypothesis("Use  Postgres", "x"))
        pool.add("b", Hypothesis("use postgres", "y"))
        pool.add("c", Hypothesis("use sqlite", "z"))
        options, dropped = canonicalize_and_cluster(pool, 5)
        assert [o.canonical_label for o in options] == ["use postgres", "use sqlite"]
        assert [o.option_id for o in options] == ["opt-1", "opt-2"]
        assert options[0].authors == ["a", "b"]
        assert dropped == []

    def test_over_capacity_keeps_largest_then_earliest(self):
        pool = HypothesisPool()
        for author, label in [("a", "x"), ("b", "y"), ("c", "y"), ("d", "z"), ("e", "w"), ("f", "w")]:
            pool.add(author, Hypothesis(label, label))
        options, dropped = canonicalize_and_cluster(pool, 2)
        assert [o.canonical_label for o in options] == ["y", "w"]
        assert dropped == ["x", "z"]

    @settings(max_examples=200, deadline=None)
    @given(
        labels=st.lists(st.sampled_from(["a", "A", "b", "b ", "c", "d", "E", "e", "f"]), min_size=1, max_size=12),
        k=st.integers(1, 6),
    )
    def test_matches_brute_force(self, labels, k):
        pool = HypothesisPool()
        for i, label in enumerate(labels):
            pool.add(f"p{i}", Hypothesis(label, label))
        options, dropped = canonicalize_and_cluster(pool, k)
        assert [o.key for o in options] == brute_force_clusters(labels, k)
        assert len(options) <= k
        assert len(options) + len(dropped) == len({" ".join(x.lower().split()) for x in labels})

    def test_empty_pool_raises(self):
        with pytest.raises(EmptyPool):
            canonicalize_and_cluster(HypothesisPool(), 3)

    def test_placeholder_defers(self):
        opt = placeholder_option("pick a database")
        assert opt.option_id == "opt-1"
        assert opt.canonical_label == "defer decision"
        assert "pick a database" in opt.description

    def test_assumptions_and_risks_seed_the_record_once(self):
        pool = HypothesisPool()
        pool.add("a", Hypothesis("x", "d", assumptions=("Cheap",), risks=("slow",)))
        pool.add("b", Hypothesis("X", "d", assumptions=("cheap",), risks=("lock-in",)))
        (opt,), _ = canonicalize_and_cluster(pool, 3)
        assert [e.text for e in opt.record.assumptions] == ["Cheap"]
        assert [e.text for e in opt.record.risks] == ["slow", "lock-in"]


# --------------------------------------------------------------------------
# contributions and admission


class TestContributions:
    def test_each_kind_lands_in_its_section(self):
        rec = OptionRecord()
        for kind in ContributionKind:
            record_contribution(rec, contrib("a", "opt-1", kind.value, kind.value), 1)
        assert [e.text for e in rec.pros] == ["support"]
        assert [e.text for e in rec.cons] == ["challenge", "counterexample"]
        assert [e.text for e in rec.evidence] == ["evidence"]
        assert [e.text for e in rec.revisions] == ["revision_suggestion"]
        assert [e.text for e in rec.risks] == ["uncertainty_note"]
        assert len(rec.objections) == 1 and not rec.objections[0].fatal

    def test_linked_evidence_is_recorded(self):
        rec = OptionRecord()
        record_contribution(rec, contrib("a", "opt-1", "support", linked_evidence="bench.csv"), 1)
        assert [e.text for e in rec.evidence] == ["bench.csv"]

    def test_only_challenges_may_be_fatal(self):
        with pytest.raises(ValueError):
            contrib("a", "opt-1", "support", fatal=True)

    def test_withdrawal_needs_same_author_and_cited_move(self):
        (opt,) = make_options("x")
        record_contribution(opt.record, contrib("q", opt.option_id, "challenge", fatal=True, move_id="m9"), 1)
        assert withdraw_objections([opt], "someone else", "m9") == []
        assert withdraw_objections([opt], "q", None) == []
        assert withdraw_objections([opt], "q", "m9") == [opt.option_id]
        assert opt.record.blocking_objections() == []
        assert withdraw_objections([opt], "q", "m9") == []


def new_hyp(label="fresh idea", evidence="trial.md", superior_to="opt-1"):
    return NewHypothesis(label, "desc", evidence=evidence, superior_to=superior_to)


class TestAdmission:
    def _run(self, nh, round=1, max_rounds=3, max_options=4):
        options = make_options("alpha", "beta")
        c = contrib("z", "opt-1", "revision_suggestion", proposed_new_hypothesis=nh)
        return admit_new_hypotheses([c], round, max_rounds, options, max_options)

    def test_admitted_gets_next_index(self):
        admitted, (out,) = self._run(new_hyp())
        assert out.admitted and out.option_id == "opt-3"
        assert admitted[0].record.evidence[0].text == "trial.md"

    @pytest.mark.parametrize(
        "nh, kwargs, reason",
        [
            (new_hyp(), {"round": 3}, "cutoff"),
            (new_hyp(evidence="  "), {}, "no evidence link"),
            (new_hyp(label="Alpha"), {}, "not materially distinct"),
            (new_hyp(superior_to=""), {}, "no superiority claim over a live option"),
            (new_hyp(superior_to="opt-99"), {}, "no superiority claim over a live option"),
            (new_hyp(), {"max_options": 2}, "option set full"),
        ],
    )
    def test_gates(self, nh, kwargs, reason):
        admitted, (out,) = self._run(nh, **kwargs)
        assert admitted == [] and not out.admitted and out.reason == reason

    def test_superiority_by_label(self):
        _, (out,) = self._run(new_hyp(superior_to="BETA"))
        assert out.admitted

    def test_second_identical_admission_is_not_distinct(self):
        options = make_options("alpha")
        cs = [contrib(a, "opt-1", "revision_suggestion", proposed_new_hypothesis=new_hyp()) for a in "xy"]
        admitted, outs = admit_new_hypotheses(cs, 1, 3, options, 5)
        assert len(admitted) == 1
        assert [o.reason for o in outs] == ["admitted", "not materially distinct"]

    @settings(max_examples=200, deadline=None)
    @given(max_rounds=st.integers(1, 8), data=st.data())
    def test_nothing_admitted_at_or_after_the_last_round(self, max_rounds, data):
        round = data.draw(st.integers(max_rounds, max_rounds + 5))
        labels = data.draw(st.lists(st.text(min_size=1, max_size=8).filter(str.strip), min_size=1, max_size=5))
        options = make_options("alpha", "beta")
        cs = [contrib("z", "opt-1", "revision_suggestion", proposed_new_hypothesis=new_hyp(label=lb))
              for lb in labels]
        admitted, outs = admit_new_hypotheses(cs, round, max_rounds, options, 50)
        assert admitted == []
        assert all(o.reason == "cutoff" for o in outs)


# --------------------------------------------------------------------------
# compression


def with_record(opt, supports=0, fatal=0, evidence=0):
    for i in range(supports):
        record_contribution(opt.record, contrib(f"s{i}", opt.option_id), 1)
    for i in range(fatal):
        record_contribution(opt.record, contrib(f"f{i}", opt.option_id, "challenge", fatal=True), 1)
    for i in range(evidence):
        record_contribution(opt.record, contrib(f"e{i}", opt.option_id, "evidence"), 1)
    return opt


class TestCompression:
    def test_strict_dominance(self):
        a, b = make_options("a", "b")
        with_record(a, supports=2, evidence=1)
        with_record(b, supports=1, evidence=1)
        assert dominates(a, b) and not dominates(b, a)

    def test_equal_records_do_not_dominate(self):
        a, b = make_options("a", "b")
        with_record(a, supports=1)
        with_record(b, supports=1)
        assert not dominates(a, b) and not dominates(b, a)

    def test_trade_off_is_not_dominance(self):
        a, b = make_options("a", "b")
        with_record(a, supports=3, fatal=1)
        with_record(b, supports=1)
        assert not dominates(a, b) and not dominates(b, a)

    def test_interim_top_choice_protects(self):
        a, b = make_options("a", "b")
        with_record(a, supports=2)
        assert dominates(a, b)
        assert not dominates(a, b, ["opt-2"])

    def test_non_transitive_trade_offs_remove_nothing(self):
        # Each option wins on one dimension and loses on another: no pair is comparable.
        a, b, c = make_options("a", "b", "c")
        with_record(a, supports=2, evidence=0, fatal=1)
        with_record(b, supports=1, evidence=2, fatal=1)
        with_record(c, supports=0, evidence=1, fatal=0)
        assert remove_dominated([a, b, c]) == [a, b, c]

    def test_removal_never_empties_the_field(self):
        a, b = make_options("a", "b")
        with_record(a, supports=2)
        assert remove_dominated([a, b]) == [a]

    def test_merge_lower_index_absorbs(self):
        a, b, c = make_options("a", "b", "c")
        with_record(c, supports=2)
        merged = merge_options([a, b, c], [("C", "opt-1")])
        assert [o.option_id for o in merged] == ["opt-1", "opt-2"]
        assert merged[0].record.supports == 2
        assert merged[0].authors == ["author0", "author2"]

    def test_merge_ignores_unknown_and_self_pairs(self):
        opts = make_options("a", "b")
        assert merge_options(opts, [("a", "zzz"), ("a", "opt-1")]) == opts

    def test_chained_merges_follow_the_survivor(self):
        a, b, c = make_options("a", "b", "c")
        merged = merge_options([a, b, c], [("b", "c"), ("c", "a")])
        assert [o.option_id for o in merged] == ["opt-1"]

    def test_finalists_by_support_in_index_order(self):
        a, b, c = make_options("a", "b", "c")
        with_record(b, supports=1)
        with_record(c, supports=3)
        assert [o.option_id for o in select_finalists([a, b, c], 2)] == ["opt-2", "opt-3"]

    def test_revise_and_compress_pipeline(self):
        a, b, c = make_options("a", "b", "c")
        with_record(a, supports=1)
        with_record(b, supports=1)
        with_record(c, supports=1, fatal=1)
        sheets = [sheet("d", {}, "opt-3")]
        finals = revise_and_compress([a, b, c], 3, sheets)
        assert [o.option_id for o in finals] == ["opt-1", "opt-2", "opt-3"]
        finals = revise_and_compress([a, b, c], 3)
        assert [o.option_id for o in finals] == ["opt-1", "opt-2"]


# --------------------------------------------------------------------------
# scoring


class TestScoring:
    def test_hand_computed_total(self):
        table = ScoreTable(
            delegates=["x", "y"],
            options=["opt-1"],
            weights={"cost": 0.25, "risk": 0.75},
            scores={("x", "opt-1", "cost"): 8, ("x", "opt-1", "risk"): 4,
                    ("y", "opt-1", "cost"): 6, ("y", "opt-1", "risk"): 10},
            confidence={"x": 0.5, "y": 1.0},
            evidence={"x": 1.0, "y": 0.5},
            fit={("y", "risk"): 0.4},
        )
        # cost: 8*.5 + 6*.5 = 7; risk: 4*.5 + 10*.5*.4 = 4; total = .25*7 + .75*4 = 4.75
        total, normalized = total_score("opt-1", table)
        assert total == pytest.approx(4.75, abs=1e-12)
        assert normalized == pytest.approx(4.75 / 20, abs=1e-12)

    def test_matches_naive_loops_on_random_tables(self):
        rng = random.Random(11)
        for _ in range(300):
            table = random_table(rng)
            for o in table.options:
                want = naive_total(table, o)
                got = total_score(o, table).total
                assert math.isclose(got, want, rel_tol=1e-9, abs_tol=1e-12)

    def test_missing_cell_raises(self):
        table = random_table(random.Random(3), 2, 2, 2)
        del table.scores[("d0", "opt-1", "c0")]
        with pytest.raises(IncompleteTable):
            total_score("opt-1", table)

    def test_normalisation_uses_council_size(self):
        table = random_table(random.Random(4), 2, 1, 1)
        table.council_size = 4
        total, normalized = total_score("opt-1", table)
        assert normalized == pytest.approx(total / 40)

    def test_ranking_ties_break_by_index(self):
        table = ScoreTable(["d"], ["opt-2", "opt-10", "opt-1"], {"c": 1.0},
                           {("d", o, "c"): 5 for o in ["opt-2", "opt-10", "opt-1"]}, {"d": 1}, {"d": 1})
        assert [r.option_id for r in rank_options(table)] == ["opt-1", "opt-2", "opt-10"]

    def test_from_sheets_skips_missing_cells(self):
        s = sheet("d", {("opt-1", "c"): 7}, "opt-1", confidence=0.5)
        table = ScoreTable.from_sheets([s], ["opt-1", "opt-2"], {"c": 1.0}, council_size=3)
        assert table.scores == {("d", "opt-1", "c"): 7.0}
        assert table.n == 3 and table.confidence == {"d": 0.5}

    def test_domain_fit_both_readings(self):
        table = domain_fit_table({"a": 0.5, "b": {"cost": 0.2}}, ["a", "b", "c"], ["cost", "risk"])
        assert table == {("a", "cost"): 0.5, ("a", "risk"): 0.5, ("b", "cost"): 0.2,
                         ("b", "risk"): 1.0, ("c", "cost"): 1.0, ("c", "risk"): 1.0}
        with pytest.raises(ValueError):
            domain_fit_table({"a": 2}, ["a"], ["c"])


# --------------------------------------------------------------------------
# verdicts


def blocked():
    rec = OptionRecord()
    rec.objections.append(Objection("q", 1, "no", fatal=True))
    return rec


class TestVerdict:
    RANK = [Ranked("opt-1", 0, 0.60), Ranked("opt-2", 0, 0.55)]

    def test_margin_above_epsilon(self):
        v = convergence_test(self.RANK, {"opt-1": blocked()}, 0.04, 0.5, [])
        assert v == ConvergenceVerdict(VerdictKind.SCORE_DOMINANCE, "opt-1")

    def test_single_finalist_dominates(self):
        v = convergence_test(self.RANK[:1], {}, 0.5, 0.5, [])
        assert v.kind is VerdictKind.SCORE_DOMINANCE

    def test_majority_when_margin_too_small(self):
        sheets = [sheet(d, {}, "opt-1") for d in "abc"] + [sheet("z", {}, "opt-2")]
        v = convergence_test(self.RANK, {"opt-1": blocked()}, 0.1, 0.5, sheets)
        assert v == ConvergenceVerdict(VerdictKind.MAJORITY_BACKING, "opt-1")

    def test_majority_is_strictly_greater(self):
        sheets = [sheet("a", {}, "opt-1"), sheet("b", {}, "opt-2")]
        v = convergence_test(self.RANK, {"opt-1": blocked()}, 0.1, 0.5, sheets)
        assert v.kind is VerdictKind.NONE

    def test_majority_counts_abstainers_in_the_denominator(self):
        sheets = [sheet(d, {}, "opt-1") for d in "ab"]
        v = convergence_test(self.RANK, {"opt-1": blocked()}, 0.1, 0.5, sheets, council_size=4)
        assert v.kind is VerdictKind.NONE

    def test_no_blocking_objection(self):
        v = convergence_test(self.RANK, {"opt-1": OptionRecord()}, 0.1, 0.9, [])
        assert v == ConvergenceVerdict(VerdictKind.NO_BLOCKING_OBJECTION, "opt-1")

    def test_none(self):
        assert not convergence_test(self.RANK, {"opt-2": blocked()}, 0.1, 0.9, []).converged
        assert not convergence_test([], {}, 0.1, 0.9, []).converged

    def test_verdict_invariant(self):
        with pytest.raises(ValueError):
            ConvergenceVerdict(VerdictKind.NONE, "opt-1")
        with pytest.raises(ValueError):
            ConvergenceVerdict(VerdictKind.MAJORITY_BACKING)


# --------------------------------------------------------------------------
# fallback


def uniform_table(options, rows):
    """rows: {option: [score per criterion]} from a single fully confident delegate."""
    crit = [f"c{i}" for i in range(len(next(iter(rows.values()))))]
    scores = {("d", o, c): s for o, vals in rows.items() for c, s in zip(crit, vals)}
    return ScoreTable(["d"], list(options), {c: 1 / len(crit) for c in crit}, scores, {"d": 1.0}, {"d": 1.0})


class TestFallback:
    def test_outranking_matches_copeland_oracle(self):
        rng = random.Random(5)
        for _ in range(300):
            table = random_table(rng, integer_scores=True)
            assert outranking(table.options, table) == copeland_winners(table.options, table)

    def test_outranking_decides(self):
        table = uniform_table(["opt-1", "opt-2", "opt-3"],
                              {"opt-1": [5, 5, 5], "opt-2": [6, 6, 1], "opt-3": [1, 1, 9]})
        res = fallback_select(["opt-3", "opt-1", "opt-2"], table)
        assert res.winner == "opt-2" and res.method is FallbackMethod.OUTRANKING

    def test_minimax_regret_breaks_a_copeland_tie(self):
        table = uniform_table(["opt-1", "opt-2"], {"opt-1": [9, 1], "opt-2": [7, 4]})
        assert outranking(["opt-1", "opt-2"], table) == ["opt-1", "opt-2"]
        assert minimax_regret(["opt-1", "opt-2"], table) == ["opt-2"]
        res = fallback_select(["opt-1", "opt-2"], table)
        assert (res.winner, res.method) == ("opt-2", FallbackMethod.MINIMAX_REGRET)

    def test_robust_satisficing_breaks_a_regret_tie(self):
        # One criterion each, equal weighted regret (1.5), floors 4 against 7.
        table = uniform_table(["opt-1", "opt-2"], {"opt-1": [10, 4], "opt-2": [7, 7]})
        assert minimax_regret(["opt-1", "opt-2"], table) == ["opt-1", "opt-2"]
        assert robust_satisficing(["opt-1", "opt-2"], table) == ["opt-2"]
        res = fallback_select(["opt-1", "opt-2"], table)
        assert (res.winner, res.method) == ("opt-2", FallbackMethod.ROBUST_SATISFICING)
        assert [level for level, _ in res.trail] == ["outranking", "minimax_regret", "robust_satisficing"]

    def test_symmetric_options_reach_the_integrator(self):
        table = uniform_table(["opt-1", "opt-2"], {"opt-1": [8, 2], "opt-2": [2, 8]})
        asked = []

        def pick(top2):
            asked.append(top2)
            return "opt-2"

        res = fallback_select(["opt-1", "opt-2"], table, pick)
        assert asked == [["opt-1", "opt-2"]]
        assert (res.winner, res.method) == ("opt-2", FallbackMethod.INTEGRATOR)

    @pytest.mark.parametrize("answer", [None, "opt-9", ""])
    def test_unusable_integrator_pick_falls_to_the_better_ranked(self, answer):
        table = uniform_table(["opt-1", "opt-2"], {"opt-1": [8, 2], "opt-2": [2, 8]})
        assert fallback_select(["opt-2", "opt-1"], table, lambda _: answer).winner == "opt-1"

    def test_single_finalist(self):
        table = uniform_table(["opt-4"], {"opt-4": [1]})
        res = fallback_select(["opt-4"], table)
        assert (res.winner, res.method) == ("opt-4", FallbackMethod.OUTRANKING)

    def test_empty_finalists_rejected(self):
        with pytest.raises(ValueError):
            fallback_select([], uniform_table([], {"x": [1]}))

    def test_order_of_finalists_does_not_matter(self):
        rng = random.Random(8)
        for _ in range(200):
            table = random_table(rng, integer_scores=True)
            shuffled = list(table.options)
            rng.shuffle(shuffled)
            a = fallback_select(table.options, table, lambda t: t[-1])
            b = fallback_select(shuffled, table, lambda t: t[-1])
            assert a == b
            assert a.winner in table.options

    def test_aggregate_oracle(self):
        table = random_table(random.Random(9))
        for o in table.options:
            for c in table.weights:
                assert math.isclose(table.agg(o, c), naive_aggregate(table, o, c), rel_tol=1e-12, abs_tol=1e-12)
