"""Three evaluation protocols: rubric-band judging, Top-10 PSR/NSR scoring, trichotomous discovery scoring.

All arithmetic that feeds pass/fail decisions is exact: band bounds are
compared directly, PSR/NSR run on Fractions, and the aggregation layer only
converts to floats at the reporting boundary.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

from .core import ProvenanceRef
from .providers import Message, ModelRequest, ScriptedProvider, Transcript, complete

log = logging.getLogger(__name__)

LAYERS = ("L1", "L2", "L3")
TIER_COUNTS = (4, 4, 4, 4, 5, 5, 4)


class HarnessError(Exception):
    pass


class AggregationError(HarnessError):
    pass


# ---------------------------------------------------------------------------
# Rubric metrics and judging
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RubricMetric:
    criteria: str
    bands: tuple[tuple[float, float, str], ...]
    threshold: float

    def __post_init__(self) -> None:
        previous_high = None
        for low, high, _ in self.bands:
            if low > high:
                raise HarnessError(f"band [{low}, {high}] is inverted")
            if previous_high is not None and low <= previous_high:
                raise HarnessError("bands must be disjoint and ascending")
            previous_high = high
        if self.threshold != self.bands[-1][0]:
            raise HarnessError("threshold must equal the lower bound of the top band")


THREE_BAND = ((0.0, 0.2, "wrong or missing"), (0.4, 0.6, "partially correct"), (0.8, 1.0, "correct"))


def three_band_metric(criteria: str) -> RubricMetric:
    return RubricMetric(criteria=criteria, bands=THREE_BAND, threshold=0.8)


@dataclass(frozen=True)
class TestCase:
    question: str
    expected: str
    layer: str
    metric: RubricMetric

    def __post_init__(self) -> None:
        if self.layer not in LAYERS:
            raise HarnessError(f"layer must be one of {LAYERS}")


@dataclass(frozen=True)
class JudgeResult:
    score: float
    justification: str
    band_index: int
    passed: bool
    note: str = ""


def assign_band(metric: RubricMetric, score: float) -> tuple[float, int, str]:
    """Map a raw score to (snapped score, band index, note); gaps snap to the nearest bound, ties low."""
    for index, (low, high, _) in enumerate(metric.bands):
        if low <= score <= high:
            return score, index, ""
    bounds: list[tuple[float, int]] = []
    for index, (low, high, _) in enumerate(metric.bands):
        bounds.append((low, index))
        bounds.append((high, index))
    # nearest bound; ties resolve to the lower bound value
    snapped, band_index = min(bounds, key=lambda pair: (abs(pair[0] - score), pair[0]))
    return snapped, band_index, f"score {score} outside all bands; snapped to {snapped}"


def judge(
    case: TestCase,
    actual: str,
    provider: ScriptedProvider,
    transcript: Transcript,
) -> JudgeResult:
    """LLM-as-judge call constrained to the metric's bands; decode failure scores 0 after one retry."""
    if not actual:
        raise HarnessError("actual output must be non-empty")
    bands_block = "\n".join(f"[{low}, {high}] {desc}" for low, high, desc in case.metric.bands)
    request = ModelRequest(
        (
            Message("system", "Score the answer against the rubric; reply with JSON."),
            Message(
                "user",
                f"Criteria:\n{case.metric.criteria}\nBands:\n{bands_block}\n"
                f"Question: {case.question}\nExpected:\n{case.expected}\nActual:\n{actual}\n"
                'Reply {"score": <number in exactly one band>, "justification": "..."}.',
            ),
        ),
        decode_hint="structured",
    )
    obj = None
    for _ in range(2):
        response = complete(provider, request, transcript)
        if response.kind != "text":
            continue
        try:
            obj = json.loads(response.text or "")
            break
        except json.JSONDecodeError:
            obj = None
    if not isinstance(obj, dict) or "score" not in obj:
        return JudgeResult(0.0, "", 0, False, "judge decode failure; scored 0")
    score = float(obj["score"])
    snapped, band_index, note = assign_band(case.metric, score)
    if note:
        log.warning("judge %s", note)
    passed = snapped >= case.metric.threshold
    return JudgeResult(snapped, str(obj.get("justification", "")), band_index, passed, note)


# ---------------------------------------------------------------------------
# Single-step aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CaseResult:
    case_index: int
    layer: str
    score: float
    passed: bool


@dataclass(frozen=True)
class SingleStepAggregate:
    layer_pass_rate: dict[str, tuple[float, float]]  # percent mean, std
    total_pass_rate: tuple[float, float]
    average_score: tuple[float, float]
    runs: int


def _population_std(values: Sequence[float]) -> float:
    n = len(values)
    mean = sum(values) / n
    return (sum((v - mean) ** 2 for v in values) / n) ** 0.5


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    return sum(values) / len(values), _population_std(values)


def aggregate_single_step(results_per_run: Sequence[Sequence[CaseResult]]) -> SingleStepAggregate:
    """Per-layer and total pass rates plus the average judge score, mean +/- population std over runs."""
    if not results_per_run:
        raise AggregationError("no runs to aggregate")
    length = len(results_per_run[0])
    for run in results_per_run:
        if len(run) != length:
            raise AggregationError("run-length mismatch: every run must score every case")
    layer_rates: dict[str, list[float]] = {layer: [] for layer in LAYERS}
    total_rates: list[float] = []
    average_scores: list[float] = []
    for run in results_per_run:
        for layer in LAYERS:
            subset = [r for r in run if r.layer == layer]
            if subset:
                layer_rates[layer].append(100.0 * sum(r.passed for r in subset) / len(subset))
        total_rates.append(100.0 * sum(r.passed for r in run) / len(run))
        average_scores.append(sum(r.score for r in run) / len(run))
    return SingleStepAggregate(
        layer_pass_rate={layer: _mean_std(rates) for layer, rates in layer_rates.items() if rates},
        total_pass_rate=_mean_std(total_rates),
        average_score=_mean_std(average_scores),
        runs=len(results_per_run),
    )


# ---------------------------------------------------------------------------
# Top-10 parsing and PSR / NSR
# ---------------------------------------------------------------------------

RANKED_LIST_MARKER = "RANKED_BIOMARKERS:"
_RANK_LINE_RE = re.compile(r"^\s*\d+[.)]\s*(.+?)\s*$")

Normalizer = Callable[[str], str]


def extract_lead_symbol(text: str) -> str:
    """Leading gene symbol of a biomarker description: first token, first '/'-component."""
    match = re.match(r"\s*([^\s,;(]+)", text)
    token = match.group(1) if match else text
    return token.split("/")[0].strip()


def parse_top10(output: str, normalizer: Normalizer) -> tuple[list[str], bool]:
    """Ranked list under the RANKED_BIOMARKERS: marker; normalized, deduplicated, truncated to 10.

    Returns (symbols, parse_failed); unparseable documents yield an empty list.
    """
    marker_at = output.find(RANKED_LIST_MARKER)
    if marker_at < 0:
        return [], True
    symbols: list[str] = []
    started = False
    for line in output[marker_at + len(RANKED_LIST_MARKER) :].splitlines():
        match = _RANK_LINE_RE.match(line)
        if match:
            started = True
            symbols.append(normalizer(extract_lead_symbol(match.group(1))))
        elif started and line.strip():
            break
    if not symbols:
        return [], True
    deduped = list(dict.fromkeys(symbols))
    return deduped[:10], False


@dataclass(frozen=True)
class BenchmarkItem:
    number: int
    tier: int
    drug: str | None
    target_moa: str | None
    indication: str
    positive: str
    negative: str
    reference: ProvenanceRef
    reference_text: str

    def __post_init__(self) -> None:
        if not 1 <= self.tier <= 7:
            raise HarnessError(f"tier {self.tier} outside 1..7")
        if self.positive == self.negative:
            raise HarnessError(f"item {self.number}: positive equals negative")


def _parse_reference(raw: str) -> ProvenanceRef:
    nct = re.search(r"NCT\d{8}", raw)
    if nct:
        return ProvenanceRef("NCT", nct.group(0))
    pmid = re.search(r"PMID:?\s*(\d{1,8})", raw)
    if pmid:
        return ProvenanceRef("PMID", pmid.group(1))
    raise HarnessError(f"reference {raw!r} carries no NCT/PMID id")


def load_benchmark_items(path: Path) -> list[BenchmarkItem]:
    items: list[BenchmarkItem] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        number, tier, drug, target, indication, positive, negative, reference = line.split("\t")
        items.append(
            BenchmarkItem(
                number=int(number),
                tier=int(tier.lstrip("T")),
                drug=drug or None,
                target_moa=target or None,
                indication=indication,
                positive=positive,
                negative=negative,
                reference=_parse_reference(reference),
                reference_text=reference,
            )
        )
    counts = tuple(sum(1 for item in items if item.tier == t) for t in range(1, 8))
    if counts != TIER_COUNTS:
        raise HarnessError(f"tier counts {counts} != expected {TIER_COUNTS}")
    return items


@dataclass(frozen=True)
class PsrNsrResult:
    psr: Fraction
    nsr: Fraction
    tier_psr: dict[int, Fraction]
    tier_nsr: dict[int, Fraction]
    runs: int

    def psr_percent(self) -> float:
        return float(self.psr * 100)

    def nsr_percent(self) -> float:
        return float(self.nsr * 100)


def score_psr_nsr(
    items: Sequence[BenchmarkItem],
    lists_per_run: Sequence[Sequence[Sequence[str]]],
    normalizer: Normalizer,
) -> PsrNsrResult:
    """PSR = fraction of items whose positive appears in the Top-10 list; NSR = fraction whose
    negative control is excluded. Computed per run in exact rationals, then averaged over runs."""
    if not lists_per_run:
        raise AggregationError("no runs to score")
    for run in lists_per_run:
        if len(run) != len(items):
            raise AggregationError(f"expected {len(items)} lists per run, got {len(run)}")
    n = len(items)
    tiers = sorted({item.tier for item in items})
    psr_runs: list[Fraction] = []
    nsr_runs: list[Fraction] = []
    tier_psr_runs: dict[int, list[Fraction]] = {t: [] for t in tiers}
    tier_nsr_runs: dict[int, list[Fraction]] = {t: [] for t in tiers}
    for run in lists_per_run:
        hits = {t: 0 for t in tiers}
        clears = {t: 0 for t in tiers}
        for item, ranked in zip(items, run):
            normalized = {normalizer(extract_lead_symbol(entry)) for entry in ranked}
            if normalizer(extract_lead_symbol(item.positive)) in normalized:
                hits[item.tier] += 1
            if normalizer(extract_lead_symbol(item.negative)) not in normalized:
                clears[item.tier] += 1
        psr_runs.append(Fraction(sum(hits.values()), n))
        nsr_runs.append(Fraction(sum(clears.values()), n))
        for t in tiers:
            size = sum(1 for item in items if item.tier == t)
            tier_psr_runs[t].append(Fraction(hits[t], size))
            tier_nsr_runs[t].append(Fraction(clears[t], size))

    def fr_mean(values: list[Fraction]) -> Fraction:
        return sum(values, Fraction(0)) / len(values)

    return PsrNsrResult(
        psr=fr_mean(psr_runs),
        nsr=fr_mean(nsr_runs),
        tier_psr={t: fr_mean(v) for t, v in tier_psr_runs.items()},
        tier_nsr={t: fr_mean(v) for t, v in tier_nsr_runs.items()},
        runs=len(lists_per_run),
    )


# ---------------------------------------------------------------------------
# Trichotomous discovery scoring
# ---------------------------------------------------------------------------

def score_trichotomous(selected: set[str], key: set[str], multi: bool) -> float:
    """0 / 0.5 / 1 discovery scoring.

    Single-answer: exact match or nothing. Multi-answer: 1 for the full key
    with no wrong options, 0.5 for a non-empty proper subset of the key, 0
    whenever any selected option is outside the key.
    """
    if not key:
        raise HarnessError("answer key must be non-empty")
    if not multi:
        return 1.0 if selected == key else 0.0
    if selected == key:
        return 1.0
    if selected and selected < key:
        return 0.5
    return 0.0


# ---------------------------------------------------------------------------
# Benchmark query rendering
# ---------------------------------------------------------------------------

def render_benchmark_query(item: BenchmarkItem, template: str) -> str:
    """Substitute the two placeholders verbatim; the definitions block is part of the template."""
    return template.replace("[Target (MoA)]", item.target_moa or "").replace(
        "[Indication]", item.indication
    )


# ---------------------------------------------------------------------------
# Suite file loading (one case per record)
# ---------------------------------------------------------------------------

def load_test_suite(path: Path) -> list[TestCase]:
    payload = json.loads(path.read_text(encoding="utf-8"))
    cases = []
    for entry in payload["cases"]:
        metric = three_band_metric(entry.get("criteria", "Identifier and fact agreement with the expected output."))
        cases.append(
            TestCase(question=entry["question"], expected=entry["expected"], layer=entry["layer"], metric=metric)
        )
    return cases
