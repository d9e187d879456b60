"""Shared domain types: entities, provenance, documents, the evidence bus, playbooks, dossiers.

Everything here is an immutable value object; the only stateful thing is the
EvidenceBus, which serializes mints behind a lock so sequence numbers stay
gap-free under concurrent producers.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass

ENTITY_KINDS = frozenset({"gene_target", "molecule", "disease", "cell_line"})

# Identifier syntax per namespace. ENSEMBL / CHEMBL / EFO come from the cited
# example values; the rest follow the upstream registries' formats.
ID_PATTERNS: dict[str, re.Pattern[str]] = {
    "CHEMBL_TARGET": re.compile(r"CHEMBL\d+"),
    "CHEMBL_MOLECULE": re.compile(r"CHEMBL\d+"),
    "ENSEMBL": re.compile(r"ENSG\d{11}"),
    "EFO": re.compile(r"EFO_\d{7}"),
    "PUBCHEM": re.compile(r"\d+"),
    "UNIPROT": re.compile(r"[OPQ][0-9][A-Z0-9]{3}[0-9]|[A-NR-Z][0-9](?:[A-Z][A-Z0-9]{2}[0-9]){1,2}"),
}

PROVENANCE_KINDS = frozenset({"PMID", "NCT", "PATENT", "DATASET", "URL", "INTERNAL"})

_PMID_RE = re.compile(r"\d{1,8}")
_NCT_RE = re.compile(r"NCT\d{8}")
_PATENT_RE = re.compile(r"[A-Z]{2}\d{4,}(?:[A-Z]\d?)?")
_URL_RE = re.compile(r"https?://\S+")


class CoreError(Exception):
    """Base for domain-model violations."""


class EmptyPayloadError(CoreError):
    pass


@dataclass(frozen=True)
class Verdict:
    valid: bool
    reason: str

    def __bool__(self) -> bool:
        return self.valid


@dataclass(frozen=True)
class ProvenanceRef:
    """Resolvable pointer to a source: PMID, NCT id, patent number, dataset, URL or internal store."""

    kind: str
    value: str
    locator: str | None = None

    def key(self) -> tuple[str, str]:
        return (self.kind, self.value)

    def __str__(self) -> str:
        if self.locator:
            return f"{self.kind}:{self.value}#{self.locator}"
        return f"{self.kind}:{self.value}"


def validate_provenance(ref: ProvenanceRef) -> Verdict:
    """Total, deterministic syntax check. Never raises; the verdict carries the reason."""
    kind, value = ref.kind, ref.value
    if kind not in PROVENANCE_KINDS:
        return Verdict(False, f"unknown provenance kind {kind!r}")
    if not value:
        return Verdict(False, "empty value")
    if kind == "NCT":
        if not _NCT_RE.fullmatch(value):
            return Verdict(False, "expected 8 digits after the NCT prefix")
        return Verdict(True, "ok")
    if kind == "PMID":
        if not _PMID_RE.fullmatch(value):
            return Verdict(False, "expected a 1-8 digit decimal string")
        return Verdict(True, "ok")
    if kind == "PATENT":
        if not _PATENT_RE.fullmatch(value):
            return Verdict(False, "expected country code + digits + optional kind code")
        return Verdict(True, "ok")
    if kind == "URL":
        if not _URL_RE.fullmatch(value):
            return Verdict(False, "expected an http(s) URL")
        return Verdict(True, "ok")
    # DATASET / INTERNAL: any non-empty value
    return Verdict(True, "ok")


@dataclass(frozen=True)
class CanonicalEntity:
    """A grounded mention: canonical name plus every namespace identifier the store knows."""

    mention: str
    kind: str
    canonical_name: str
    ids: tuple[tuple[str, str], ...]  # sorted (namespace, identifier) pairs

    def __post_init__(self) -> None:
        if self.kind not in ENTITY_KINDS:
            raise CoreError(f"unknown entity kind {self.kind!r}")
        if not self.canonical_name:
            raise CoreError("canonical_name must be non-empty")
        if not self.ids:
            raise CoreError(f"entity {self.canonical_name!r} has no identifiers")
        for namespace, ident in self.ids:
            pattern = ID_PATTERNS.get(namespace)
            if pattern is None:
                raise CoreError(f"unknown id namespace {namespace!r}")
            if not pattern.fullmatch(ident):
                raise CoreError(f"identifier {ident!r} does not match {namespace} syntax")
        object.__setattr__(self, "ids", tuple(sorted(self.ids)))

    def id_map(self) -> dict[str, str]:
        return dict(self.ids)

    def id_for(self, namespace: str) -> str | None:
        return self.id_map().get(namespace)


# ---------------------------------------------------------------------------
# Structured documents (artifact payloads)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TableRow:
    cells: tuple[str, ...]
    sources: tuple[ProvenanceRef, ...]

    def __post_init__(self) -> None:
        if not self.sources:
            raise CoreError("every factual table row carries at least one source")


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[str, ...]
    rows: tuple[TableRow, ...]

    def __post_init__(self) -> None:
        for row in self.rows:
            if len(row.cells) != len(self.columns):
                raise CoreError(f"table {self.name!r}: row width {len(row.cells)} != {len(self.columns)} columns")


@dataclass(frozen=True)
class Section:
    name: str
    text: str


@dataclass(frozen=True)
class Document:
    """Payload of an artifact: named text sections plus provenanced tables."""

    sections: tuple[Section, ...] = ()
    tables: tuple[Table, ...] = ()

    def is_empty(self) -> bool:
        return not self.sections and not self.tables

    def section_text(self, name: str) -> str | None:
        for section in self.sections:
            if section.name == name:
                return section.text
        return None

    def table(self, name: str) -> Table | None:
        for table in self.tables:
            if table.name == name:
                return table
        return None


def text_document(name: str, text: str) -> Document:
    return Document(sections=(Section(name, text),))


@dataclass(frozen=True)
class EvidenceArtifact:
    """Immutable, provenanced output of one subagent task; the unit on the evidence bus."""

    artifact_id: str
    producer: str
    task_id: str
    payload: Document
    sources: tuple[ProvenanceRef, ...]
    created_at: int

    def all_sources(self) -> tuple[ProvenanceRef, ...]:
        seen: dict[tuple[str, str], ProvenanceRef] = {}
        for ref in self.sources:
            seen.setdefault(ref.key(), ref)
        for table in self.payload.tables:
            for row in table.rows:
                for ref in row.sources:
                    seen.setdefault(ref.key(), ref)
        return tuple(seen.values())


class EvidenceBus:
    """Append-only artifact store with producer and provenance indexes.

    Mints are serialized; created_at is a per-bus logical counter so runs are
    reproducible regardless of wall-clock time.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._artifacts: list[EvidenceArtifact] = []
        self._by_producer: dict[str, list[EvidenceArtifact]] = {}
        self._by_ref: dict[tuple[str, str], list[EvidenceArtifact]] = {}

    def mint(
        self,
        producer: str,
        task_id: str,
        payload: Document,
        sources: tuple[ProvenanceRef, ...] | list[ProvenanceRef] = (),
    ) -> EvidenceArtifact:
        """Publish a new immutable artifact with the next sequence number."""
        if not producer:
            raise CoreError("producer must be non-empty")
        if not task_id:
            raise CoreError("task_id must be non-empty")
        if payload.is_empty():
            raise EmptyPayloadError(f"producer {producer!r} attempted to mint an empty payload")
        refs = tuple(sources)
        for ref in refs:
            verdict = validate_provenance(ref)
            if not verdict:
                raise CoreError(f"producer {producer!r}: bad source {ref}: {verdict.reason}")
        with self._lock:
            seq = len(self._artifacts) + 1
            artifact = EvidenceArtifact(
                artifact_id=f"art-{seq:04d}",
                producer=producer,
                task_id=task_id,
                payload=payload,
                sources=refs,
                created_at=seq,
            )
            self._artifacts.append(artifact)
            self._by_producer.setdefault(producer, []).append(artifact)
            for ref in artifact.all_sources():
                self._by_ref.setdefault(ref.key(), []).append(artifact)
        return artifact

    def snapshot(self) -> tuple[EvidenceArtifact, ...]:
        with self._lock:
            return tuple(self._artifacts)

    def by_producer(self, producer: str) -> tuple[EvidenceArtifact, ...]:
        with self._lock:
            return tuple(self._by_producer.get(producer, ()))

    def resolve(self, ref: ProvenanceRef) -> tuple[EvidenceArtifact, ...]:
        with self._lock:
            return tuple(self._by_ref.get(ref.key(), ()))

    def __len__(self) -> int:
        with self._lock:
            return len(self._artifacts)


# ---------------------------------------------------------------------------
# Playbooks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SubtaskTemplate:
    subagent: str
    template: str
    requires: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for kind in self.requires:
            if kind not in ENTITY_KINDS:
                raise CoreError(f"template for {self.subagent!r} requires unknown kind {kind!r}")


@dataclass(frozen=True)
class SectionAllocation:
    name: str
    producers: tuple[str, ...]


@dataclass(frozen=True)
class ScenarioPlaybook:
    """Versioned methodology: ordered subtask templates plus per-section source allocations."""

    playbook_id: str
    version: int
    subtask_templates: tuple[SubtaskTemplate, ...]
    section_allocations: tuple[SectionAllocation, ...]

    def __post_init__(self) -> None:
        if not self.subtask_templates:
            raise CoreError(f"playbook {self.playbook_id!r} has no subtask templates")
        declared = {t.subagent for t in self.subtask_templates}
        for allocation in self.section_allocations:
            unknown = set(allocation.producers) - declared
            if unknown:
                raise CoreError(
                    f"playbook {self.playbook_id!r} section {allocation.name!r} "
                    f"allocates undeclared subagents {sorted(unknown)}"
                )

    def subagents(self) -> tuple[str, ...]:
        seen: list[str] = []
        for template in self.subtask_templates:
            if template.subagent not in seen:
                seen.append(template.subagent)
        return tuple(seen)


class PlaybookRegistry:
    """(playbook_id, version)-unique registry."""

    def __init__(self) -> None:
        self._books: dict[tuple[str, int], ScenarioPlaybook] = {}

    def register(self, playbook: ScenarioPlaybook) -> None:
        key = (playbook.playbook_id, playbook.version)
        if key in self._books:
            raise CoreError(f"duplicate playbook {key}")
        self._books[key] = playbook

    def get(self, playbook_id: str, version: int | None = None) -> ScenarioPlaybook:
        if version is not None:
            return self._books[(playbook_id, version)]
        candidates = [pb for (pid, _), pb in self._books.items() if pid == playbook_id]
        if not candidates:
            raise KeyError(playbook_id)
        return max(candidates, key=lambda pb: pb.version)

    def ids(self) -> tuple[str, ...]:
        return tuple(sorted({pid for pid, _ in self._books}))

    def __len__(self) -> int:
        return len(self._books)


# ---------------------------------------------------------------------------
# Dossier
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DossierSection:
    name: str
    text: str
    citations: tuple[ProvenanceRef, ...]


@dataclass(frozen=True)
class Hypothesis:
    claim: str
    confidence: float
    sources: tuple[ProvenanceRef, ...]

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise CoreError(f"hypothesis confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class Dossier:
    question: str
    entity_table: tuple[CanonicalEntity, ...]
    sections: tuple[DossierSection, ...]
    ranked_hypotheses: tuple[Hypothesis, ...]

    def __post_init__(self) -> None:
        confidences = [h.confidence for h in self.ranked_hypotheses]
        if any(a < b for a, b in zip(confidences, confidences[1:])):
            raise CoreError("ranked_hypotheses must be ordered by non-increasing confidence")


# ---------------------------------------------------------------------------
# Stable structured-text serialization (golden-file friendly; fixed field order)
# ---------------------------------------------------------------------------

def render_document(doc: Document, indent: str = "") -> str:
    lines: list[str] = []
    for section in doc.sections:
        lines.append(f"{indent}section: {section.name}")
        for line in section.text.splitlines() or [""]:
            lines.append(f"{indent}  {line}")
    for table in doc.tables:
        lines.append(f"{indent}table: {table.name}")
        lines.append(f"{indent}  columns: {' | '.join(table.columns)}")
        for row in table.rows:
            lines.append(f"{indent}  row: {' | '.join(row.cells)}")
            lines.append(f"{indent}    sources: {'; '.join(str(s) for s in row.sources)}")
    return "\n".join(lines)


def render_artifact(artifact: EvidenceArtifact) -> str:
    lines = [
        f"artifact: {artifact.artifact_id}",
        f"producer: {artifact.producer}",
        f"task: {artifact.task_id}",
        f"created-at: {artifact.created_at}",
        "sources: " + ("; ".join(str(s) for s in artifact.sources) if artifact.sources else "(none)"),
    ]
    body = render_document(artifact.payload)
    if body:
        lines.append(body)
    return "\n".join(lines) + "\n"


def render_entity(entity: CanonicalEntity) -> str:
    ids = ";".join(f"{ns}={ident}" for ns, ident in entity.ids)
    return f"{entity.mention} | {entity.kind} | {entity.canonical_name} | {ids}"


def render_dossier(dossier: Dossier) -> str:
    lines = [f"question: {dossier.question}", "entities:"]
    for entity in dossier.entity_table:
        lines.append(f"  - {render_entity(entity)}")
    for section in dossier.sections:
        lines.append(f"section: {section.name}")
        for line in section.text.splitlines() or [""]:
            lines.append(f"  {line}")
        lines.append(
            "  citations: "
            + ("; ".join(str(c) for c in section.citations) if section.citations else "(none)")
        )
    lines.append("hypotheses:")
    for hyp in dossier.ranked_hypotheses:
        refs = "; ".join(str(s) for s in hyp.sources) if hyp.sources else "(none)"
        lines.append(f"  - [{hyp.confidence:.3f}] {hyp.claim} ({refs})")
    return "\n".join(lines) + "\n"
