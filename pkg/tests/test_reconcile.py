from __future__ import annotations

import json
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from evisynth.core import ProvenanceRef
from evisynth.providers import ScriptedProvider, Transcript, text_response
from evisynth.reconcile import (
    Claim,
    DebateConfig,
    ExtractionError,
    SourceText,
    Stance,
    check_consensus,
    cluster_claims,
    debate_round,
    extract_claims,
    reconcile_section,
)

SRC = SourceText(ProvenanceRef("PMID", "37277454"), "ATM loss sensitizes tumors to ATR inhibition in screens.")
SRC2 = SourceText(ProvenanceRef("NCT", "NCT04497116"), "Camonsertib trial enrolls DDR-altered tumors.")


def jtext(obj) -> str:
    return json.dumps(obj)


def make_claim(idx, draft, text, polarity="asserts", confidence=0.8):
    return Claim(
        claim_id=f"{draft}-c{idx}",
        draft_id=draft,
        text=text,
        support_quote="ATM loss",
        source=SRC.ref,
        confidence=confidence,
        polarity=polarity,
    )


class TestExtractClaims:
    def test_two_valid_claims_pass_quote_check(self, transcript):
        payload = [
            {"text": "ATM loss sensitizes to ATR inhibition", "quote": "ATM loss", "source": str(SRC.ref), "confidence": 0.9, "polarity": "asserts"},
            {"text": "Camonsertib study enrolls DDR tumors", "quote": "Camonsertib", "source": str(SRC2.ref), "confidence": 0.7, "polarity": "asserts"},
        ]
        extractor = ScriptedProvider("x", script=[text_response(jtext(payload))])
        claims = extract_claims("d1", "some draft", [SRC, SRC2], extractor, transcript)
        assert len(claims) == 2
        assert claims[0].source == SRC.ref

    def test_quote_missing_from_source_dropped(self, transcript):
        payload = [
            {"text": "good", "quote": "ATM loss", "source": str(SRC.ref), "confidence": 0.9},
            {"text": "bad", "quote": "NOT IN SOURCE", "source": str(SRC.ref), "confidence": 0.9},
        ]
        extractor = ScriptedProvider("x", script=[text_response(jtext(payload))])
        claims = extract_claims("d1", "draft", [SRC], extractor, transcript)
        assert [c.text for c in claims] == ["good"]

    def test_empty_draft_empty_claims_no_call(self, transcript):
        extractor = ScriptedProvider("x", script=[])
        assert extract_claims("d1", "   ", [SRC], extractor, transcript) == []
        assert len(transcript.entries()) == 0

    def test_decode_failure_retries_once_then_raises(self, transcript):
        extractor = ScriptedProvider("x", script=[text_response("not json"), text_response("still not json")])
        with pytest.raises(ExtractionError):
            extract_claims("d1", "draft", [SRC], extractor, transcript)
        assert len(transcript.entries()) == 2

    def test_decode_recovers_on_retry(self, transcript):
        good = jtext([{"text": "t", "quote": "ATM loss", "source": str(SRC.ref), "confidence": 0.5}])
        extractor = ScriptedProvider("x", script=[text_response("garbage"), text_response(good)])
        claims = extract_claims("d1", "draft", [SRC], extractor, transcript)
        assert len(claims) == 1


class TestClusterClaims:
    def test_identical_claims_one_full_group(self):
        claims = [make_claim(1, "d1", "ATM loss sensitizes tumors"), make_claim(1, "d2", "ATM loss sensitizes tumors")]
        groups = cluster_claims(claims, 2)
        assert len(groups) == 1
        assert groups[0].label == "full"

    def test_negated_polarity_conflict(self):
        claims = [
            make_claim(1, "d1", "ATM loss sensitizes tumors to ATR inhibition", polarity="asserts"),
            make_claim(1, "d2", "ATM loss sensitizes tumors to ATR inhibition", polarity="negates"),
        ]
        groups = cluster_claims(claims, 2)
        assert len(groups) == 1
        assert groups[0].label == "conflict"

    def test_singleton_coverage_partial(self):
        claims = [
            make_claim(1, "d1", "ATM loss sensitizes tumors to ATR inhibition"),
            make_claim(2, "d1", "completely different topic about patents and assignees"),
            make_claim(1, "d2", "ATM loss sensitizes tumors to ATR inhibition"),
            make_claim(1, "d3", "ATM loss sensitizes tumors to ATR inhibition"),
        ]
        groups = cluster_claims(claims, 3)
        labels = {g.group_id: g.label for g in groups}
        assert labels == {"g1": "full", "g2": "partial"}

    def test_partition_property(self):
        claims = [
            make_claim(i, f"d{d}", text)
            for d in (1, 2)
            for i, text in enumerate(
                ["ATM loss sensitizes", "TP53 loss activates pathway", "APC loss in colorectal"], start=1
            )
        ]
        groups = cluster_claims(claims, 2)
        seen = [c.claim_id for g in groups for c in g.claims]
        assert sorted(seen) == sorted(c.claim_id for c in claims)
        assert len(seen) == len(set(seen))

    def test_order_independent_similarity(self):
        claims = [
            make_claim(1, "d1", "ATM loss sensitizes tumors"),
            make_claim(2, "d1", "TP53 loss marks activation"),
            make_claim(1, "d2", "ATM loss sensitizes tumors"),
        ]
        forward = cluster_claims(claims, 2)
        backward = cluster_claims(list(reversed(claims)), 2)
        forward_sets = {frozenset(c.claim_id for c in g.claims) for g in forward}
        backward_sets = {frozenset(c.claim_id for c in g.claims) for g in backward}
        assert forward_sets == backward_sets


def stance_script(confidence, agrees=True, claim="the claim"):
    return text_response(jtext({"revised_claim": claim, "explanation": "e", "confidence": confidence, "agrees": agrees}))


class TestDebateRound:
    def test_cardinality_two_models_three_groups(self, transcript):
        groups = cluster_claims(
            [
                make_claim(1, "d1", "alpha raises beta strongly"),
                make_claim(2, "d1", "gamma lowers delta badly"),
                make_claim(3, "d1", "epsilon binds zeta tightly"),
            ],
            1,
        )
        assert len(groups) == 3
        models = [
            ScriptedProvider("m1", script=[stance_script(0.9)] * 3),
            ScriptedProvider("m2", script=[stance_script(0.8)] * 3),
        ]
        stances = debate_round(groups, [], models, 1, transcript)
        assert len(stances) == 6
        assert {(s.model_id, s.group_id) for s in stances} == {
            (m, g.group_id) for m in ("m1", "m2") for g in groups
        }

    def test_round2_prompts_contain_other_models_round1_stances(self, transcript):
        groups = cluster_claims([make_claim(1, "d1", "alpha raises beta")], 1)
        m1 = ScriptedProvider("m1", script=[stance_script(0.9, claim="m1-position"), stance_script(0.9)])
        m2 = ScriptedProvider("m2", script=[stance_script(0.8, claim="m2-position"), stance_script(0.8)])
        round1 = debate_round(groups, [], [m1, m2], 1, transcript)
        debate_round(groups, round1, [m1, m2], 2, transcript)
        # m1's round-2 request mentions m2's round-1 revised claim, not its own
        round2_requests = [e[2] for e in transcript.entries()[2:]]
        m1_round2 = round2_requests[0].messages[-1].content
        assert "m2-position" in m1_round2
        assert "m1-position" not in m1_round2

    def test_model_failure_records_abstain(self, transcript):
        groups = cluster_claims([make_claim(1, "d1", "alpha raises beta")], 1)
        broken = ScriptedProvider("broken", script=[text_response("not json"), text_response("nope")])
        stances = debate_round(groups, [], [broken], 1, transcript)
        assert len(stances) == 1
        assert stances[0].agrees is False
        assert stances[0].confidence == 0.0


def make_stance(model, group, agrees, confidence, round_no=1):
    return Stance(model, group, round_no, "claim", "e", confidence, agrees)


class TestCheckConsensus:
    def test_clear_pass(self):
        stances = [make_stance("m1", "g1", True, 0.9), make_stance("m2", "g1", True, 0.9)]
        verdict = check_consensus(stances, 0.8)
        assert verdict.reached and verdict.mean_confidence == pytest.approx(0.9)

    def test_mean_below_threshold(self):
        # hand-computed: (0.9 + 0.6) / 2 = 0.75 < 0.8
        stances = [make_stance("m1", "g1", True, 0.9), make_stance("m2", "g1", True, 0.6)]
        verdict = check_consensus(stances, 0.8)
        assert not verdict.reached
        assert verdict.mean_confidence == pytest.approx(0.75)

    def test_one_disagreement_blocks_despite_confidence(self):
        stances = [make_stance("m1", "g1", True, 1.0), make_stance("m2", "g1", False, 1.0)]
        assert not check_consensus(stances, 0.5).reached

    def test_exact_boundary_passes(self):
        stances = [make_stance("m1", "g1", True, 0.8)]
        assert check_consensus(stances, 0.8).reached

    @given(
        st.lists(st.tuples(st.booleans(), st.floats(min_value=0, max_value=1)), min_size=1, max_size=8),
        st.sampled_from([0.5, 0.8, 0.95]),
    )
    def test_raising_tau_never_flips_false_to_true(self, raw, tau):
        stances = [make_stance(f"m{i}", "g1", agrees, conf) for i, (agrees, conf) in enumerate(raw)]
        low = check_consensus(stances, tau)
        for higher in (tau, min(1.0, tau + 0.1), 1.0):
            high = check_consensus(stances, higher)
            if high.reached:
                assert low.reached


def reconcile_fixture(schedule, m=2, r=3, tau=0.8, transcript=None):
    """Drive reconcile_section with scripted stances per (round, model, group)."""
    transcript = transcript or Transcript()
    config = DebateConfig(tau=tau, max_rounds=r, drafters=m)
    drafts = ["ATM loss sensitizes tumors." for _ in range(m)]
    extract_payload = jtext(
        [{"text": "ATM loss sensitizes tumors", "quote": "ATM loss", "source": str(SRC.ref), "confidence": 0.9}]
    )
    extractor = ScriptedProvider("ex", script=[text_response(extract_payload)] * m)
    models = []
    for model_index in range(m):
        script = []
        for round_schedule in schedule:
            agrees, confidence = round_schedule[model_index]
            script.append(stance_script(confidence, agrees))
        models.append(ScriptedProvider(f"m{model_index + 1}", script=script))
    synthesizer = ScriptedProvider(
        "synth", script=[text_response(jtext({"text": "final text", "citations": [str(SRC.ref)]}))]
    )
    return reconcile_section(drafts, "q", config, [SRC], extractor, models, synthesizer, transcript)


class TestReconcileSection:
    def test_degenerate_single_draft_consensus_round_one(self, transcript):
        result = reconcile_fixture([[(True, 0.9)]], m=1, r=3, transcript=transcript)
        assert result.record.rounds_executed == 1
        assert all(g.label == "full" for g in result.record.groups)

    def test_persistent_conflict_runs_all_rounds(self):
        schedule = [[(True, 0.9), (False, 0.9)]] * 3
        result = reconcile_fixture(schedule, m=2, r=3)
        assert result.record.rounds_executed == 3
        assert not result.record.rounds[-1][1].reached
        assert result.unresolved_groups  # the disputed group is flagged

    def test_consensus_at_round_two_of_five(self):
        schedule = [
            [(True, 0.9), (False, 0.9)],
            [(True, 0.9), (True, 0.9)],
            [(True, 0.9), (True, 0.9)],
            [(True, 0.9), (True, 0.9)],
            [(True, 0.9), (True, 0.9)],
        ]
        result = reconcile_fixture(schedule, m=2, r=5)
        assert result.record.rounds_executed == 2

    def test_citations_restricted_to_allocated_sources(self, transcript):
        config = DebateConfig(tau=0.8, max_rounds=1, drafters=1)
        extractor = ScriptedProvider(
            "ex",
            script=[
                text_response(
                    jtext([{"text": "t", "quote": "ATM loss", "source": str(SRC.ref), "confidence": 0.9}])
                )
            ],
        )
        model = ScriptedProvider("m1", script=[stance_script(0.9)])
        synth = ScriptedProvider(
            "synth",
            script=[
                text_response(
                    jtext({"text": "x", "citations": [str(SRC.ref), "PMID:99999999", "NCT:NCT00000000"]})
                )
            ],
        )
        result = reconcile_section(["draft"], "q", config, [SRC], extractor, [model], synth, transcript)
        assert result.citations == (SRC.ref,)
        assert set(result.record.stripped_citations) == {"PMID:99999999", "NCT:NCT00000000"}

    @settings(max_examples=60, deadline=None)
    @given(
        st.integers(min_value=1, max_value=3),
        st.integers(min_value=1, max_value=5),
        st.sampled_from([0.5, 0.8, 0.95]),
        st.data(),
    )
    def test_termination_and_early_exit_exactness(self, m, r, tau, data):
        schedule = []
        for _ in range(r):
            schedule.append(
                [
                    (
                        data.draw(st.booleans()),
                        data.draw(st.sampled_from([0.0, 0.25, 0.5, 0.75, 0.8, 0.9, 1.0])),
                    )
                    for _ in range(m)
                ]
            )
        result = reconcile_fixture(schedule, m=m, r=r, tau=tau)
        # independent brute-force evaluation of the consensus predicate
        expected = r
        for round_no, round_schedule in enumerate(schedule, start=1):
            agrees_all = all(agrees for agrees, _ in round_schedule)
            mean = sum(Fraction(confidence) for _, confidence in round_schedule) / m
            if agrees_all and mean >= Fraction(tau):
                expected = round_no
                break
        assert result.record.rounds_executed == expected
        assert result.record.rounds_executed <= r
