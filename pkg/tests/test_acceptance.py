"""Acceptance gate: one test per criterion, each printing a PASS line at its stated tolerance.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
The whole gate runs offline against the in-process stub worker; the
out-of-process worker build has its own suite.
"""

from __future__ import annotations

import itertools
import json
import random
import re
import statistics
import time
from fractions import Fraction
import numpy as np
import pytest

from evisynth.corpus import CorpusIndex, ExtractionConfig, extract_metadata, metadata_matches
from evisynth.core import ProvenanceRef
from evisynth.evalharness import (
    BenchmarkItem,
    CaseResult,
    aggregate_single_step,
    extract_lead_symbol,
    judge,
    score_psr_nsr,
    score_trichotomous,
    three_band_metric,
)
from evisynth.evalharness import TestCase as SuiteCase
from evisynth.providers import ScriptedProvider, Transcript, text_response
from evisynth.reconcile import DebateConfig, SourceText, reconcile_section
from evisynth.sandbox.supervisor import SandboxLimits, TRUNCATION_MARKER
from evisynth.toolkit.entities import data_dir
from evisynth.toolkit.queries import build_patent_query, patents_tool, pubmed_tool, trials_tool
from evisynth.toolkit.registry import ToolValidationError, validate_call


def report(number: int, summary: str) -> None:
    print(f"ACCEPTANCE {number}: PASS - {summary}")


# ---------------------------------------------------------------------------
# Criterion 1: reconciliation conformance over 1,000 randomized schedules
# ---------------------------------------------------------------------------

SRC = SourceText(ProvenanceRef("PMID", "37277454"), "ATM loss sensitizes tumors to ATR inhibition.")

GROUP_TEXTS = ["alpha raises beta sharply", "gamma dampens delta pathway"]


def run_scheduled_reconcile(m: int, r: int, tau: float, groups: int, schedule) -> int:
    """schedule[round][model][group] = (agrees, confidence); returns rounds executed."""
    transcript = Transcript()
    config = DebateConfig(tau=tau, max_rounds=r, drafters=m)
    drafts = ["draft text" for _ in range(m)]
    claims = [
        {"text": GROUP_TEXTS[g], "quote": "ATM loss", "source": str(SRC.ref), "confidence": 0.9}
        for g in range(groups)
    ]
    extractor = ScriptedProvider("ex", script=[text_response(json.dumps(claims))] * m)
    models = []
    for model_index in range(m):
        script = []
        for round_schedule in schedule:
            for group_index in range(groups):
                agrees, confidence = round_schedule[model_index][group_index]
                script.append(
                    text_response(
                        json.dumps(
                            {
                                "revised_claim": GROUP_TEXTS[group_index],
                                "explanation": "",
                                "confidence": confidence,
                                "agrees": agrees,
                            }
                        )
                    )
                )
        models.append(ScriptedProvider(f"m{model_index}", script=script))
    synthesizer = ScriptedProvider(
        "synth", script=[text_response(json.dumps({"text": "t", "citations": [str(SRC.ref)]}))]
    )
    result = reconcile_section(drafts, "q", config, [SRC], extractor, models, synthesizer, transcript)
    return result.record.rounds_executed


def brute_force_rounds(m: int, r: int, tau: float, groups: int, schedule) -> int:
    """Independent evaluation of the consensus predicate, straight from its definition."""
    for round_no, round_schedule in enumerate(schedule, start=1):
        stances = [round_schedule[model][group] for model in range(m) for group in range(groups)]
        all_agree = all(agrees for agrees, _ in stances)
        mean = sum(Fraction(confidence) for _, confidence in stances) / len(stances)
        if all_agree and mean >= Fraction(tau):
            return round_no
    return r


def test_acceptance_1_reconciliation_conformance():
    rng = random.Random(20260808)
    confidence_grid = [0.0, 0.2, 0.4, 0.5, 0.6, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0]
    started = time.monotonic()
    mismatches = 0
    for _ in range(1000):
        m = rng.choice([1, 2, 3])
        r = rng.randint(1, 5)
        tau = rng.choice([0.5, 0.8, 0.95])
        groups = rng.choice([1, 2])
        schedule = [
            [
                [(rng.random() < 0.75, rng.choice(confidence_grid)) for _ in range(groups)]
                for _ in range(m)
            ]
            for _ in range(r)
        ]
        executed = run_scheduled_reconcile(m, r, tau, groups, schedule)
        expected = brute_force_rounds(m, r, tau, groups, schedule)
        if executed != expected:
            mismatches += 1
    elapsed = time.monotonic() - started
    assert mismatches == 0
    assert elapsed < 10.0, f"took {elapsed:.1f}s"
    report(1, f"1000 randomized debate schedules, 0 mismatches, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# Criterion 2: sandbox contract via the in-process stub worker
# ---------------------------------------------------------------------------

def test_acceptance_2_sandbox_contract(stub_supervisor):
    rng = random.Random(42)
    lengths = [rng.randint(0, 20000) for _ in range(50)]

    # exact truncation on both streams for every generated n
    out_session = stub_supervisor.open_session(limits=SandboxLimits(max_blocks=50))
    err_session = stub_supervisor.open_session(limits=SandboxLimits(max_blocks=50))
    for n in lengths:
        out_result = stub_supervisor.execute_block(out_session, f"print('x' * {n}, end='')")
        expected_out = "x" * min(n, 8000) + (TRUNCATION_MARKER.format(cap=8000) if n > 8000 else "")
        assert out_result.stdout == expected_out
        err_result = stub_supervisor.execute_block(err_session, f"printerr('e' * {n})")
        expected_err = "e" * min(n, 4000) + (TRUNCATION_MARKER.format(cap=4000) if n > 4000 else "")
        assert err_result.stderr == expected_err
    stub_supervisor.close_session(out_session)
    stub_supervisor.close_session(err_session)

    # block 13 refused on a 12-cap session
    cap_session = stub_supervisor.open_session()
    for i in range(12):
        assert stub_supervisor.execute_block(cap_session, f"v{i} = {i}").status == "ok"
    refused = stub_supervisor.execute_block(cap_session, "v12 = 12")
    assert refused.status == "refused"
    assert cap_session.blocks_used == 12
    stub_supervisor.close_session(cap_session)

    # 2s-sleep block under a 1s timeout returns status=timeout within 6s
    timeout_session = stub_supervisor.open_session(limits=SandboxLimits(block_timeout=1.0))
    started = time.monotonic()
    result = stub_supervisor.execute_block(timeout_session, "sleep(2)")
    elapsed = time.monotonic() - started
    assert result.status == "timeout"
    assert elapsed < 6.0
    stub_supervisor.close_session(timeout_session)
    report(2, f"50 truncation lengths exact, cap refusal at block 13, timeout in {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# Criterion 4: scoring arithmetic against brute-force oracles
# ---------------------------------------------------------------------------

def _synthetic_items() -> list[BenchmarkItem]:
    tiers = [t for t, count in enumerate([4, 4, 4, 4, 5, 5, 4], start=1) for _ in range(count)]
    ref = ProvenanceRef("NCT", "NCT01245062")
    return [
        BenchmarkItem(i + 1, tier, None, "T", "I", f"POS{i + 1}", f"NEG{i + 1}", ref, "NCT01245062")
        for i, tier in enumerate(tiers)
    ]


def test_acceptance_4_scoring_arithmetic(store):
    rng = random.Random(7)
    items = _synthetic_items()
    normalizer = store.normalize_symbol

    for _ in range(100):
        lists = []
        for item in items:
            entries = []
            if rng.random() < 0.7:
                entries.append(item.positive)
            if rng.random() < 0.25:
                entries.append(item.negative)
            entries.extend(f"FILL{rng.randint(1, 99)}" for _ in range(rng.randint(0, 8)))
            rng.shuffle(entries)
            lists.append(entries[:10])
        result = score_psr_nsr(items, [lists], normalizer)
        # brute-force oracle with exact rationals
        hits = sum(
            1
            for item, ranked in zip(items, lists)
            if normalizer(extract_lead_symbol(item.positive)) in {normalizer(extract_lead_symbol(e)) for e in ranked}
        )
        clears = sum(
            1
            for item, ranked in zip(items, lists)
            if normalizer(extract_lead_symbol(item.negative)) not in {normalizer(extract_lead_symbol(e)) for e in ranked}
        )
        assert result.psr == Fraction(hits, 30)
        assert result.nsr == Fraction(clears, 30)
        # tier recombination identity in exact arithmetic
        sizes = {t: sum(1 for i in items if i.tier == t) for t in result.tier_psr}
        assert sum(result.tier_psr[t] * sizes[t] for t in sizes) / 30 == result.psr
        assert sum(result.tier_nsr[t] * sizes[t] for t in sizes) / 30 == result.nsr

    # trichotomous scoring vs exhaustive subset enumeration (<= 4 options)
    options = ("A", "B", "C", "D")
    checked = 0
    for key_size in range(1, 5):
        for key in itertools.combinations(options, key_size):
            key_set = set(key)
            for selected_size in range(0, 5):
                for selected in itertools.combinations(options, selected_size):
                    selected_set = set(selected)
                    for multi in (True, False):
                        got = score_trichotomous(selected_set, key_set, multi)
                        if not multi:
                            want = 1.0 if selected_set == key_set else 0.0
                        elif any(s not in key_set for s in selected_set):
                            want = 0.0
                        elif selected_set == key_set:
                            want = 1.0
                        elif selected_set:
                            want = 0.5
                        else:
                            want = 0.0
                        assert got == want
                        checked += 1

    # aggregation mean +/- std vs an independent oracle, 1e-12
    for _ in range(20):
        runs = rng.randint(1, 5)
        cases = rng.randint(3, 30)
        layers = [rng.choice(["L1", "L2", "L3"]) for _ in range(cases)]
        matrix = [
            [CaseResult(i, layers[i], rng.random(), rng.random() < 0.5) for i in range(cases)]
            for _ in range(runs)
        ]
        aggregate = aggregate_single_step(matrix)
        totals = [100.0 * sum(r.passed for r in run) / cases for run in matrix]
        scores = [sum(r.score for r in run) / cases for run in matrix]
        assert abs(aggregate.total_pass_rate[0] - statistics.fmean(totals)) < 1e-12
        assert abs(aggregate.total_pass_rate[1] - statistics.pstdev(totals)) < 1e-12
        assert abs(aggregate.average_score[0] - statistics.fmean(scores)) < 1e-12
        assert abs(aggregate.average_score[1] - statistics.pstdev(scores)) < 1e-12
    report(4, f"100 PSR/NSR configs exact, {checked} trichotomous cases, aggregation within 1e-12")


# ---------------------------------------------------------------------------
# Criterion 5: rubric judging truth table
# ---------------------------------------------------------------------------

JUDGE_TRUTH_TABLE = [
    # (raw score, snapped, band index, passed)
    (0.0, 0.0, 0, False),
    (0.15, 0.15, 0, False),
    (0.2, 0.2, 0, False),
    (0.3, 0.2, 0, False),   # gap, equidistant, ties to the lower bound
    (0.35, 0.4, 1, False),  # gap, nearer the middle band
    (0.45, 0.45, 1, False),
    (0.6, 0.6, 1, False),
    (0.7, 0.6, 1, False),   # gap, equidistant, ties low
    (0.75, 0.8, 2, True),   # gap, snaps up into the top band
    (0.8, 0.8, 2, True),
    (0.95, 0.95, 2, True),
    (1.0, 1.0, 2, True),
]


def test_acceptance_5_rubric_judging(transcript):
    metric = three_band_metric("identifier agreement")
    case = SuiteCase("q", "expected", "L1", metric)
    assert metric.threshold == 0.8
    for raw, snapped, band_index, passed in JUDGE_TRUTH_TABLE:
        provider = ScriptedProvider(
            "judge", script=[text_response(json.dumps({"score": raw, "justification": "x"}))]
        )
        result = judge(case, "actual", provider, transcript)
        assert result.score == pytest.approx(snapped), f"raw={raw}"
        assert result.band_index == band_index, f"raw={raw}"
        assert result.passed is passed, f"raw={raw}"
    report(5, f"{len(JUDGE_TRUTH_TABLE)}-row truth table over all bands and gaps, pass iff score >= 0.8")


# ---------------------------------------------------------------------------
# Criterion 6: entity grounding fixtures (exact string equality)
# ---------------------------------------------------------------------------

def test_acceptance_6_entity_grounding(store):
    top1 = store.resolve("TOP1", "gene_target")
    assert top1.id_for("CHEMBL_TARGET") == "CHEMBL1781"
    assert top1.id_for("ENSEMBL") == "ENSG00000198900"
    cd340 = store.resolve("CD340", "gene_target")
    assert cd340.id_for("ENSEMBL") == "ENSG00000141736"
    assert cd340.id_for("CHEMBL_TARGET") == "CHEMBL1824"
    nsclc = store.resolve("NSCLC", "disease")
    assert nsclc.id_for("EFO") == "EFO_0003060"
    drugs = store.target_to_drugs(top1)
    assert len(drugs) == 24
    molecule_ids = {molecule for _, molecule, _ in drugs}
    assert {"CHEMBL481", "CHEMBL84", "CHEMBL4297564"} <= molecule_ids
    report(6, "TOP1/CD340/NSCLC ids exact; target_to_drugs(TOP1) has 24 rows incl. the 3 named molecules")


# ---------------------------------------------------------------------------
# Criterion 7: end-to-end determinism of the scripted scenario run
# ---------------------------------------------------------------------------

ATR_QUERY = (
    "Generate synthetic-lethality biomarker hypotheses for ATR inhibition across solid tumors, "
    "prioritizing loss-of-function signals."
)


def test_acceptance_7_end_to_end_determinism(tmp_path):
    from evisynth.cli import main

    started = time.monotonic()
    snapshots = []
    for run_index in range(3):
        out = tmp_path / f"run{run_index}"
        code = main(
            [
                "run",
                "query",
                ATR_QUERY,
                "--mode",
                "scripted",
                "--scripts",
                str(data_dir() / "scripts" / "atr_scripted.json"),
                "--out",
                str(out),
            ]
        )
        assert code == 0
        snapshots.append(
            {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
        )
    elapsed = time.monotonic() - started
    assert snapshots[0] == snapshots[1] == snapshots[2]
    assert {"dossier.txt", "transcript.txt"} <= set(snapshots[0])
    assert any(name.startswith("debate/") for name in snapshots[0])
    assert elapsed < 60.0
    report(7, f"3 invocations byte-identical ({len(snapshots[0])} files), {elapsed:.1f}s total")


# ---------------------------------------------------------------------------
# Criterion 8: tool schema truth table + patent query goldens
# ---------------------------------------------------------------------------

OK = "ok"

SCHEMA_TABLE = [
    # (tool factory, args, OK | offending field)
    (patents_tool, {"text_terms": [{"value": "ADC"}]}, OK),
    (patents_tool, {"text_terms": [{"value": "ADC"}], "limit": 10}, OK),
    (patents_tool, {"text_terms": [{"value": "ADC"}], "limit": 100}, OK),
    (patents_tool, {"text_terms": [{"value": "ADC"}], "limit": 9}, "limit"),
    (patents_tool, {"text_terms": [{"value": "ADC"}], "limit": 101}, "limit"),
    (patents_tool, {}, "text_terms"),
    (patents_tool, {"text_terms": [{"value": "x", "where": "TITLE"}]}, OK),
    (patents_tool, {"text_terms": [{"value": "x", "where": "SIDEBAR"}]}, "text_terms[0].where"),
    (patents_tool, {"text_terms": [{"value": "x", "match": "FUZZY"}]}, "text_terms[0].match"),
    (patents_tool, {"text_terms": [{"value": "x"}], "text_connector": "XOR"}, "text_connector"),
    (patents_tool, {"text_terms": [{"value": "x"}], "status": "GRANT"}, OK),
    (patents_tool, {"text_terms": [{"value": "x"}], "status": "PENDING"}, "status"),
    (patents_tool, {"text_terms": [{"value": "x"}], "start_date": "2020/01/01", "end_date": "2021/12/31"}, OK),
    (patents_tool, {"text_terms": [{"value": "x"}], "start_date": "01/01/2020"}, "start_date"),
    (patents_tool, {"text_terms": [{"value": "x"}], "start_date": "2022/01/01", "end_date": "2020/01/01"}, "start_date"),
    (patents_tool, {"chemical_terms": [{"value": "BSYNRYMUTXBXSQ-UHFFFAOYSA-N", "molecule_type": "INCHI_KEY"}]}, OK),
    (patents_tool, {"chemical_terms": [{"value": "BADKEY", "molecule_type": "INCHI_KEY"}]}, "chemical_terms[0].value"),
    (patents_tool, {"chemical_terms": [{"value": "CCO", "molecule_type": "SMILES", "chemical_search_type": "SUBSTRUCTURE"}]}, OK),
    (patents_tool, {"chemical_terms": [{"value": "CCO", "molecule_type": "GRAPH"}]}, "chemical_terms[0].molecule_type"),
    (patents_tool, {"text_terms": [{"value": "x"}], "frobnicate": 1}, "frobnicate"),
    (trials_tool, {"condition": "NSCLC"}, OK),
    (trials_tool, {"condition": "NSCLC", "limit": 1000}, OK),
    (trials_tool, {"condition": "NSCLC", "limit": 1001}, "limit"),
    (trials_tool, {"condition": "NSCLC", "limit": 0}, "limit"),
    (trials_tool, {}, "condition"),
    (trials_tool, {"intervention": "Osimertinib"}, OK),
    (trials_tool, {"term": "ATR"}, OK),
    (trials_tool, {"condition": "((NSCLC) OR (lung cancer)) AND (EGFR)"}, OK),
    (trials_tool, {"condition": "(NSCLC OR"}, "condition"),
    (trials_tool, {"condition": "x", "status": ["RECRUITING", "COMPLETED", "ACTIVE_NOT_RECRUITING"]}, OK),
    (trials_tool, {"condition": "x", "status": ["ONGOING"]}, "status[0]"),
    (trials_tool, {"condition": "x", "date_range": "2020-01-01..2023-12-31"}, OK),
    (trials_tool, {"condition": "x", "date_range": "2020-01-01"}, "date_range"),
    (trials_tool, {"condition": "x", "date_range": "2020/01/01..2023/12/31"}, "date_range"),
    (pubmed_tool, {"query": "TOP1[Gene] AND NSCLC"}, OK),
    (pubmed_tool, {}, "query"),
    (pubmed_tool, {"query": "(TOP1"}, "query"),
    (pubmed_tool, {"query": 'TOP1 "unclosed'}, "query"),
    (pubmed_tool, {"query": "x", "sort": "date"}, OK),
    (pubmed_tool, {"query": "x", "sort": "citations"}, "sort"),
    (pubmed_tool, {"query": "x", "max_results": 0}, "max_results"),
    (pubmed_tool, {"query": "x", "min_date": "2020/01/01", "max_date": "2024/12/31"}, OK),
]


def test_acceptance_8_tool_schemas():
    defaults_checked = {
        "patents": validate_call(patents_tool(), {"text_terms": [{"value": "x"}]})["limit"],
        "trials": validate_call(trials_tool(), {"condition": "x"})["limit"],
        "pubmed": validate_call(pubmed_tool(), {"query": "x"})["max_results"],
    }
    assert defaults_checked == {"patents": 10, "trials": 50, "pubmed": 80}

    passed = 0
    for factory, args, expect in SCHEMA_TABLE:
        tool = factory()
        if expect == OK:
            normalized = validate_call(tool, args)
            assert validate_call(tool, normalized) == normalized  # idempotence
        else:
            with pytest.raises(ToolValidationError) as excinfo:
                validate_call(tool, args)
            assert excinfo.value.field_name == expect, f"{args} -> {excinfo.value.field_name}"
        passed += 1
    assert passed == len(SCHEMA_TABLE) >= 40

    # golden query strings
    exact_title = validate_call(
        patents_tool(), {"text_terms": [{"value": "antibody", "where": "TITLE", "match": "EXACT"}]}
    )
    assert build_patent_query(exact_title) == 'TI="antibody"'
    substructure = validate_call(
        patents_tool(),
        {
            "chemical_terms": [
                {"value": "C1=CC=CC=C1", "molecule_type": "SMILES", "chemical_search_type": "SUBSTRUCTURE"}
            ]
        },
    )
    assert build_patent_query(substructure) == "SSS=(C1=CC=CC=C1)"
    both = validate_call(
        patents_tool(),
        {
            "text_terms": [{"value": "antibody", "where": "TITLE", "match": "EXACT"}],
            "chemical_terms": [
                {"value": "C1=CC=CC=C1", "molecule_type": "SMILES", "chemical_search_type": "SUBSTRUCTURE"}
            ],
        },
    )
    assert build_patent_query(both) == 'TI="antibody" AND SSS=(C1=CC=CC=C1)'
    report(8, f"{passed} table-driven schema cases (defaults 10/50/80, caps 100/1000) + golden TI=/SSS= strings")


# ---------------------------------------------------------------------------
# Criterion 9: corpus extraction + filtered retrieval vs brute force
# ---------------------------------------------------------------------------

def _synthetic_corpus() -> list[str]:
    rng = random.Random(13)
    genes = ["KRAS", "EGFR", "BRAF", "TOP1", "BRCA1", "BRCA2", "ATM", "ATR", "TP53"]
    diseases = ["NSCLC", "colorectal cancer", "melanoma", "breast cancer"]
    kinds = ["late-breaking", "oral presentation", "poster session", "plain report"]
    chunks = []
    for index in range(30):
        gene = genes[index % len(genes)]
        disease = diseases[index % len(diseases)]
        kind = kinds[index % len(kinds)]
        nct = f"NCT{rng.randint(0, 99999999):08d}" if index % 3 == 0 else ""
        phase = f"Phase {rng.choice(['1', '2', '1/2', 'III'])}" if index % 4 == 0 else ""
        chunks.append(f"{kind} abstract {index}: {gene} activity in {disease}. {nct} {phase} enrollment ongoing.")
    return chunks


def test_acceptance_9_corpus_extraction_and_retrieval():
    config = ExtractionConfig.load_default()
    chunks = _synthetic_corpus()
    index = CorpusIndex()
    for order, text in enumerate(chunks):
        metadata = extract_metadata(text, "SYN", 2025, order + 1, config)
        # independent regex oracle, straight off the raw string
        assert list(metadata.nct_ids) == re.findall(r"NCT\d{8}", text)
        oracle_genes = [g for g in config.genes if re.search(rf"\b{g}\b", text)]
        assert sorted(metadata.genes) == sorted(oracle_genes)
        if re.search(r"late[\s-]?breaking", text, re.IGNORECASE):
            assert metadata.abstract_type == "late_breaking"
        index.add_chunk(text, metadata)
    assert len(index) == 30

    embedder = index.embedder
    filters = [
        {},
        {"genes": "TOP1"},
        {"disease_type": "nsclc"},
        {"abstract_type": "late_breaking"},
        {"genes": "KRAS", "disease_type": "nsclc"},
    ]
    for metadata_filter in filters:
        for query_text in ("TOP1 NSCLC response", "KRAS colorectal", "late breaking melanoma"):
            hits = index.query(query_text, metadata_filter)
            # brute force: filter predicate + full cosine + stable tie-break
            qv = embedder.embed(query_text)
            expected = []
            for chunk in index.chunks():
                if metadata_matches(chunk.metadata, metadata_filter):
                    expected.append((chunk.order, float(np.dot(chunk.embedding, qv))))
            expected.sort(key=lambda pair: (-pair[1], pair[0]))
            assert [(c.order, s) for c, s in hits] == expected
    report(9, "30-chunk synthetic corpus: regex suite and filter+cosine oracle agree everywhere")
