"""Claim-level section reconciliation: extraction, clustering, bounded debate, synthesis.

The debate loop runs at most R rounds and exits at the first round where no
model disagrees on any group and the round's mean stance confidence reaches
the agreement threshold; the comparison is exact (Fraction arithmetic, no
rounding). Synthesis is restricted to the section's allocated sources: any
citation outside that set is stripped and logged.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .core import ProvenanceRef
from .providers import Message, ModelRequest, ProviderError, ScriptedProvider, Transcript, complete

log = logging.getLogger(__name__)

JACCARD_LINK_THRESHOLD = 0.5


class ReconcileError(Exception):
    pass


class ExtractionError(ReconcileError):
    pass


@dataclass(frozen=True)
class SourceText:
    """One allocated source: the provenance ref plus the text quotes must come from."""

    ref: ProvenanceRef
    text: str


@dataclass(frozen=True)
class Claim:
    claim_id: str
    draft_id: str
    text: str
    support_quote: str
    source: ProvenanceRef
    confidence: float
    polarity: str = "asserts"  # asserts | negates

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ReconcileError(f"claim confidence {self.confidence} outside [0, 1]")
        if not self.support_quote:
            raise ReconcileError("support_quote must be non-empty")
        if self.polarity not in ("asserts", "negates"):
            raise ReconcileError(f"unknown polarity {self.polarity!r}")


@dataclass(frozen=True)
class ClaimGroup:
    group_id: str
    claims: tuple[Claim, ...]
    label: str  # full | partial | conflict

    def draft_ids(self) -> frozenset[str]:
        return frozenset(c.draft_id for c in self.claims)


@dataclass(frozen=True)
class Stance:
    model_id: str
    group_id: str
    round: int
    revised_claim: str
    explanation: str
    confidence: float
    agrees: bool

    def __post_init__(self) -> None:
        if self.round < 1:
            raise ReconcileError("round numbering starts at 1")
        if not 0.0 <= self.confidence <= 1.0:
            raise ReconcileError(f"stance confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class DebateConfig:
    tau: float = 0.8
    max_rounds: int = 3
    drafters: int = 3

    def __post_init__(self) -> None:
        if not 0.0 < self.tau <= 1.0:
            raise ReconcileError("tau must lie in (0, 1]")
        if self.max_rounds < 1:
            raise ReconcileError("max_rounds must be >= 1")
        if self.drafters < 1:
            raise ReconcileError("at least one drafting model is required")


@dataclass(frozen=True)
class ConsensusVerdict:
    reached: bool
    mean_confidence: float


@dataclass
class DebateRecord:
    claims: list[Claim] = field(default_factory=list)
    groups: list[ClaimGroup] = field(default_factory=list)
    rounds: list[tuple[list[Stance], ConsensusVerdict]] = field(default_factory=list)
    dropped_claims: list[str] = field(default_factory=list)
    stripped_citations: list[str] = field(default_factory=list)

    @property
    def rounds_executed(self) -> int:
        return len(self.rounds)

    def final_positions(self) -> list[tuple[ClaimGroup, str, float, tuple[ProvenanceRef, ...]]]:
        """Per group: consensus-candidate claim text, mean final-round confidence, member sources."""
        if not self.rounds:
            return [
                (g, g.claims[0].text, max(c.confidence for c in g.claims), tuple({c.source.key(): c.source for c in g.claims}.values()))
                for g in self.groups
            ]
        final_stances, _ = self.rounds[-1]
        positions = []
        for group in self.groups:
            stances = [s for s in final_stances if s.group_id == group.group_id]
            if stances:
                top = max(stances, key=lambda s: s.confidence)
                mean = sum(s.confidence for s in stances) / len(stances)
                text = top.revised_claim
            else:
                mean = max(c.confidence for c in group.claims)
                text = group.claims[0].text
            sources = tuple({c.source.key(): c.source for c in group.claims}.values())
            positions.append((group, text, mean, sources))
        return positions

    def render(self) -> str:
        lines = ["debate-record:"]
        for claim in self.claims:
            lines.append(
                f"  claim {claim.claim_id} [{claim.draft_id}, {claim.polarity}, {claim.confidence:.2f}] "
                f"{claim.text} <= {claim.source}"
            )
        for group in self.groups:
            members = ",".join(c.claim_id for c in group.claims)
            lines.append(f"  group {group.group_id} label={group.label} members={members}")
        for round_no, (stances, verdict) in enumerate(self.rounds, start=1):
            lines.append(
                f"  round {round_no}: consensus={'yes' if verdict.reached else 'no'} "
                f"mean={verdict.mean_confidence:.4f}"
            )
            for stance in stances:
                lines.append(
                    f"    stance {stance.model_id}/{stance.group_id}: agrees={stance.agrees} "
                    f"conf={stance.confidence:.2f} claim={stance.revised_claim}"
                )
        if self.dropped_claims:
            lines.append("  dropped-claims: " + "; ".join(self.dropped_claims))
        if self.stripped_citations:
            lines.append("  stripped-citations: " + "; ".join(self.stripped_citations))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ReconcileResult:
    section_text: str
    citations: tuple[ProvenanceRef, ...]
    record: DebateRecord
    unresolved_groups: tuple[str, ...]


# ---------------------------------------------------------------------------
# Line 1: extraction
# ---------------------------------------------------------------------------

def _structured_json(provider: ScriptedProvider, request: ModelRequest, transcript: Transcript):
    """One retry on malformed structured output, then the error surfaces."""
    last_error: Exception | None = None
    for _ in range(2):
        response = complete(provider, request, transcript)
        if response.kind != "text":
            last_error = ProviderError("expected structured text output")
            continue
        try:
            return json.loads(response.text or "")
        except json.JSONDecodeError as exc:
            last_error = exc
    raise ExtractionError(f"structured output failed after retry: {last_error}")


def extract_claims(
    draft_id: str,
    draft: str,
    sources: Sequence[SourceText],
    extractor: ScriptedProvider,
    transcript: Transcript,
    record: DebateRecord | None = None,
) -> list[Claim]:
    """Extract atomic claims with a verbatim support quote from an allocated source.

    Claims whose quote is not a substring of the named source's text are
    dropped with a log entry, never silently kept.
    """
    if not draft.strip():
        return []
    source_block = "\n".join(f"[{s.ref}] {s.text}" for s in sources)
    request = ModelRequest(
        (
            Message("system", "Extract atomic claims as JSON."),
            Message(
                "user",
                "Extract atomic claims from the draft. Reply with a JSON list of objects "
                '{"text", "quote", "source", "confidence", "polarity"}.\n'
                f"Draft:\n{draft}\nAllocated sources:\n{source_block}",
            ),
        ),
        decode_hint="structured",
    )
    raw = _structured_json(extractor, request, transcript)
    if not isinstance(raw, list):
        raise ExtractionError("extractor must return a JSON list")
    by_ref = {str(s.ref): s for s in sources}
    claims: list[Claim] = []
    for index, item in enumerate(raw, start=1):
        source = by_ref.get(str(item.get("source", "")))
        quote = item.get("quote", "")
        if source is None or quote not in source.text:
            reason = "unknown source" if source is None else "quote not found in source"
            message = f"{draft_id}#{index}: dropped ({reason})"
            log.warning("claim %s", message)
            if record is not None:
                record.dropped_claims.append(message)
            continue
        claims.append(
            Claim(
                claim_id=f"{draft_id}-c{index}",
                draft_id=draft_id,
                text=str(item["text"]),
                support_quote=quote,
                source=source.ref,
                confidence=float(item.get("confidence", 0.5)),
                polarity=str(item.get("polarity", "asserts")),
            )
        )
    return claims


# ---------------------------------------------------------------------------
# Line 2: clustering
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> frozenset[str]:
    return frozenset(_TOKEN_RE.findall(text.casefold()))


def _jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def cluster_claims(claims: Sequence[Claim], m_drafts: int) -> list[ClaimGroup]:
    """Union-find over token-Jaccard links; labels follow coverage and contradiction rules."""
    n = len(claims)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i: int, j: int) -> None:
        parent[find(i)] = find(j)

    token_sets = [_tokens(c.text) for c in claims]
    for i in range(n):
        for j in range(i + 1, n):
            if _jaccard(token_sets[i], token_sets[j]) >= JACCARD_LINK_THRESHOLD:
                union(i, j)

    buckets: dict[int, list[int]] = {}
    for i in range(n):
        buckets.setdefault(find(i), []).append(i)

    groups: list[ClaimGroup] = []
    for order, indices in enumerate(sorted(buckets.values(), key=min), start=1):
        members = tuple(claims[i] for i in indices)
        polarities = {c.polarity for c in members}
        drafts_present = {c.draft_id for c in members}
        if len(polarities) > 1:
            label = "conflict"
        elif len(drafts_present) >= m_drafts:
            label = "full"
        else:
            label = "partial"
        groups.append(ClaimGroup(group_id=f"g{order}", claims=members, label=label))
    return groups


# ---------------------------------------------------------------------------
# Lines 3-8: debate rounds and consensus
# ---------------------------------------------------------------------------

def debate_round(
    groups: Sequence[ClaimGroup],
    prior_stances: Sequence[Stance],
    models: Sequence[ScriptedProvider],
    round_no: int,
    transcript: Transcript,
) -> list[Stance]:
    """Every model issues exactly one stance per group, conditioned on the others' prior positions."""
    stances: list[Stance] = []
    for model in models:
        for group in groups:
            others = [
                s
                for s in prior_stances
                if s.group_id == group.group_id and s.model_id != model.provider_id
            ]
            others_block = "\n".join(
                f"{s.model_id}: agrees={s.agrees} conf={s.confidence:.2f} {s.revised_claim} ({s.explanation})"
                for s in others
            )
            member_block = "\n".join(f"[{c.draft_id}] {c.text}" for c in group.claims)
            request = ModelRequest(
                (
                    Message("system", "Debate one claim group; reply with JSON."),
                    Message(
                        "user",
                        f"Round {round_no}, group {group.group_id} ({group.label}).\n"
                        f"Claims:\n{member_block}\n"
                        f"Other models' prior positions:\n{others_block or '(none)'}\n"
                        'Reply {"revised_claim", "explanation", "confidence", "agrees"}.',
                    ),
                ),
                decode_hint="structured",
            )
            try:
                obj = _structured_json(model, request, transcript)
                stance = Stance(
                    model_id=model.provider_id,
                    group_id=group.group_id,
                    round=round_no,
                    revised_claim=str(obj["revised_claim"]),
                    explanation=str(obj.get("explanation", "")),
                    confidence=float(obj["confidence"]),
                    agrees=bool(obj["agrees"]),
                )
            except (ExtractionError, ProviderError, KeyError, TypeError, ValueError) as exc:
                log.warning("model %s abstains on %s: %s", model.provider_id, group.group_id, exc)
                stance = Stance(
                    model_id=model.provider_id,
                    group_id=group.group_id,
                    round=round_no,
                    revised_claim=group.claims[0].text,
                    explanation=f"abstain: {exc}",
                    confidence=0.0,
                    agrees=False,
                )
            stances.append(stance)
    return stances


def check_consensus(stances: Sequence[Stance], tau: float) -> ConsensusVerdict:
    """True iff every stance agrees and the exact mean confidence reaches tau."""
    if not stances:
        return ConsensusVerdict(False, 0.0)
    total = sum(Fraction(s.confidence) for s in stances)
    mean = total / len(stances)
    reached = all(s.agrees for s in stances) and mean >= Fraction(tau)
    return ConsensusVerdict(reached, float(mean))


# ---------------------------------------------------------------------------
# Line 9: synthesis, and the full loop
# ---------------------------------------------------------------------------

def _parse_ref(token: str) -> tuple[str, str] | None:
    if ":" not in token:
        return None
    kind, value = token.split(":", 1)
    return (kind, value)


def reconcile_section(
    drafts: Sequence[str],
    question: str,
    config: DebateConfig,
    sources: Sequence[SourceText],
    extractor: ScriptedProvider,
    models: Sequence[ScriptedProvider],
    synthesizer: ScriptedProvider,
    transcript: Transcript,
) -> ReconcileResult:
    """Run the full reconciliation: extract, cluster, debate (<= R rounds), synthesize."""
    if len(drafts) != config.drafters:
        raise ReconcileError(f"expected {config.drafters} drafts, got {len(drafts)}")
    record = DebateRecord()
    for index, draft in enumerate(drafts, start=1):
        record.claims.extend(
            extract_claims(f"d{index}", draft, sources, extractor, transcript, record)
        )
    record.groups = cluster_claims(record.claims, config.drafters)

    prior: list[Stance] = []
    if record.groups:
        for round_no in range(1, config.max_rounds + 1):
            stances = debate_round(record.groups, prior, models, round_no, transcript)
            verdict = check_consensus(stances, config.tau)
            record.rounds.append((stances, verdict))
            prior = stances
            if verdict.reached:
                break

    positions = record.final_positions()
    position_block = "\n".join(
        f"{group.group_id} [{group.label}] conf={conf:.2f}: {text}" for group, text, conf, _ in positions
    )
    allowed = {str(s.ref) for s in sources}
    request = ModelRequest(
        (
            Message("system", "Synthesize the reconciled section as JSON."),
            Message(
                "user",
                f"Question: {question}\n"
                + "Drafts:\n"
                + "\n---\n".join(drafts)
                + f"\nFinal positions:\n{position_block}\n"
                + f"Allowed sources: {sorted(allowed)}\n"
                + 'Reply {"text", "citations": ["KIND:value", ...]}.',
            ),
        ),
        decode_hint="structured",
    )
    obj = _structured_json(synthesizer, request, transcript)
    text = str(obj.get("text", ""))
    citations: list[ProvenanceRef] = []
    by_token = {str(s.ref): s.ref for s in sources}
    for token in obj.get("citations", []):
        token = str(token)
        if token in by_token:
            if by_token[token] not in citations:
                citations.append(by_token[token])
        else:
            log.warning("stripped citation outside allocated sources: %s", token)
            record.stripped_citations.append(token)

    unresolved: tuple[str, ...] = ()
    if record.rounds and not record.rounds[-1][1].reached:
        final_stances, _ = record.rounds[-1]
        disagreeing = {s.group_id for s in final_stances if not s.agrees}
        unresolved = tuple(
            group.group_id
            for group, *_ in positions
            if group.group_id in disagreeing or group.label == "conflict"
        )
    return ReconcileResult(
        section_text=text,
        citations=tuple(citations),
        record=record,
        unresolved_groups=unresolved,
    )
