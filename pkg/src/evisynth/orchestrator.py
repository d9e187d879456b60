"""Top-level control: scenario classification, decomposition, delegation, assembly.

Subagents are state-isolated: each one talks to its own provider(s) and sees
only its subtask text, never another subagent's transcript. Everything they
produce lands on the append-only evidence bus; reconciliation and the final
editorial pass consume the bus, never the subagents directly.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .core import (
    CanonicalEntity,
    CoreError,
    Document,
    Dossier,
    DossierSection,
    EvidenceArtifact,
    EvidenceBus,
    Hypothesis,
    PlaybookRegistry,
    ScenarioPlaybook,
    Section,
    SectionAllocation,
    SubtaskTemplate,
    render_artifact,
)
from .patterns import (
    PatternConfig,
    PatternError,
    run_code_act,
    run_iterative_synthesis,
    run_provider_fanout,
    run_tool_loop,
)
from .providers import Message, ModelRequest, ProviderError, ScriptedProvider, Transcript, complete
from .reconcile import DebateConfig, ReconcileResult, SourceText, reconcile_section
from .sandbox.supervisor import SandboxSupervisor
from .toolkit.backends import ToolExecutor

log = logging.getLogger(__name__)

_KIND_PLACEHOLDERS = {
    "gene_target": "{target}",
    "molecule": "{molecule}",
    "disease": "{disease}",
    "cell_line": "{cell_line}",
}

_CITATION_TOKEN_RE = re.compile(r"NCT\d{8}|PMID:?\s*\d{1,8}|\b[A-Z]{2}\d{6,}[A-Z]\d?\b")


class OrchestratorError(Exception):
    pass


@dataclass(frozen=True)
class SubagentRegistration:
    name: str
    pattern_config: PatternConfig
    fanout_width: int = 2


@dataclass(frozen=True)
class Subtask:
    task_id: str
    subagent: str
    text: str
    skipped: bool = False
    skip_reason: str = ""


@dataclass
class RunSettings:
    providers: dict[str, ScriptedProvider]
    executor: ToolExecutor
    playbooks: PlaybookRegistry
    subagents: dict[str, SubagentRegistration]
    supervisor: SandboxSupervisor | None = None
    sandbox_manifest: tuple[dict, ...] = ()
    debate: DebateConfig = field(default_factory=DebateConfig)
    default_playbook: str | None = None

    def provider(self, name: str) -> ScriptedProvider:
        if name not in self.providers:
            raise OrchestratorError(f"no provider scripted under the name {name!r}")
        return self.providers[name]


def default_subagents(executor: ToolExecutor) -> dict[str, SubagentRegistration]:
    return {
        "translation": SubagentRegistration(
            "translation",
            PatternConfig("tool_loop", max_steps=16, tool_allowlist=("resolve_entity", "target_to_drugs")),
        ),
        "insights_and_signals": SubagentRegistration(
            "insights_and_signals", PatternConfig("code_act", max_steps=13)
        ),
        "literature": SubagentRegistration("literature", PatternConfig("provider_fanout", max_steps=1)),
        "literature_review": SubagentRegistration(
            "literature_review", PatternConfig("iterative_synthesis", max_steps=3)
        ),
        "trials": SubagentRegistration(
            "trials", PatternConfig("tool_loop", max_steps=16, tool_allowlist=("search_clinical_trials",))
        ),
        "patents": SubagentRegistration(
            "patents", PatternConfig("tool_loop", max_steps=16, tool_allowlist=("search_patents",))
        ),
    }


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

def classify_scenario(
    query: str,
    classifier: ScriptedProvider,
    registry: PlaybookRegistry,
    transcript: Transcript,
    default_playbook: str | None = None,
) -> tuple[str, int]:
    """Pick a registered playbook; falls back to the default on any decode failure."""
    ids = registry.ids()
    if not ids:
        raise OrchestratorError("playbook registry is empty")
    fallback = default_playbook or ids[0]
    request = ModelRequest(
        (
            Message("system", "Route the query to one scenario playbook."),
            Message("user", f"Query: {query}\nChoose exactly one of: {', '.join(ids)}"),
        ),
        decode_hint="structured",
    )
    chosen = fallback
    try:
        response = complete(classifier, request, transcript)
        if response.kind == "text":
            text = (response.text or "").strip()
            try:
                obj = json.loads(text)
                text = str(obj.get("playbook_id", "")) if isinstance(obj, dict) else text
            except json.JSONDecodeError:
                pass
            if text in ids:
                chosen = text
            else:
                log.warning("classifier chose unknown playbook %r; falling back to %r", text, fallback)
        else:
            log.warning("classifier returned a tool call; falling back to %r", fallback)
    except ProviderError as exc:
        log.warning("classifier failed (%s); falling back to %r", exc, fallback)
    playbook = registry.get(chosen)
    return playbook.playbook_id, playbook.version


# ---------------------------------------------------------------------------
# Decomposition
# ---------------------------------------------------------------------------

def _render_template(template: SubtaskTemplate, query: str, entities: list[CanonicalEntity]) -> tuple[str, str]:
    """Returns (rendered text, missing-kind) where missing-kind is empty on success."""
    text = template.template.replace("{question}", query)
    for kind in template.requires:
        entity = next((e for e in entities if e.kind == kind), None)
        if entity is None:
            return "", kind
        text = text.replace(_KIND_PLACEHOLDERS[kind], entity.canonical_name)
    return text, ""


def decompose(playbook: ScenarioPlaybook, query: str, entities: list[CanonicalEntity]) -> list[Subtask]:
    """Instantiate each subtask template; templates missing a required entity kind become skip records."""
    subtasks: list[Subtask] = []
    for index, template in enumerate(playbook.subtask_templates, start=1):
        task_id = f"t-{index:03d}"
        text, missing = _render_template(template, query, entities)
        if missing:
            subtasks.append(
                Subtask(
                    task_id,
                    template.subagent,
                    "",
                    skipped=True,
                    skip_reason=f"no resolved entity of kind {missing!r}",
                )
            )
        else:
            subtasks.append(Subtask(task_id, template.subagent, text))
    return subtasks


# ---------------------------------------------------------------------------
# Delegation
# ---------------------------------------------------------------------------

def delegate(
    subtask: Subtask,
    registration: SubagentRegistration,
    settings: RunSettings,
    bus: EvidenceBus,
    transcript: Transcript,
) -> EvidenceArtifact:
    """Run the subagent's pattern on its subtask; failures degrade to a failure artifact."""
    name = registration.name
    config = registration.pattern_config
    try:
        if config.pattern == "tool_loop":
            artifact, _ = run_tool_loop(
                config, subtask.text, settings.provider(name), settings.executor, bus, name, subtask.task_id, transcript
            )
        elif config.pattern == "iterative_synthesis":
            artifact, _ = run_iterative_synthesis(
                config, subtask.text, settings.provider(name), bus, name, subtask.task_id, transcript
            )
        elif config.pattern == "provider_fanout":
            fans = [settings.provider(f"{name}.fan{i}") for i in range(1, registration.fanout_width + 1)]
            composer = settings.provider(f"{name}.compose")
            artifact, _ = run_provider_fanout(
                config, subtask.text, fans, composer, bus, name, subtask.task_id, transcript
            )
        elif config.pattern == "code_act":
            if settings.supervisor is None:
                raise OrchestratorError(f"subagent {name!r} needs a sandbox supervisor")
            session = settings.supervisor.open_session(manifest=settings.sandbox_manifest)
            try:
                artifact, _ = run_code_act(
                    config,
                    subtask.text,
                    settings.provider(name),
                    settings.supervisor,
                    session,
                    bus,
                    name,
                    subtask.task_id,
                    transcript,
                )
            finally:
                settings.supervisor.close_session(session)
        else:
            raise OrchestratorError(f"unhandled pattern {config.pattern!r}")
    except (PatternError, ProviderError, OrchestratorError) as exc:
        log.warning("subagent %s failed on %s: %s", name, subtask.task_id, exc)
        payload = Document(
            sections=(Section("status", "failed"), Section("error", f"{type(exc).__name__}: {exc}"))
        )
        artifact = bus.mint(name, subtask.task_id, payload)
    return artifact


# ---------------------------------------------------------------------------
# Entity table round-trip through the translation artifact
# ---------------------------------------------------------------------------

def parse_entity_table(artifact: EvidenceArtifact) -> list[CanonicalEntity]:
    entities: list[CanonicalEntity] = []
    for table in artifact.payload.tables:
        if table.name != "entities":
            continue
        for row in table.rows:
            mention, kind, canonical, ids_cell = row.cells
            ids = tuple(tuple(pair.split("=", 1)) for pair in ids_cell.split(";") if "=" in pair)
            try:
                entities.append(CanonicalEntity(mention=mention, kind=kind, canonical_name=canonical, ids=ids))
            except CoreError as exc:
                log.warning("skipping malformed entity row %r: %s", row.cells, exc)
    return entities


# ---------------------------------------------------------------------------
# Section drafting + reconciliation + assembly
# ---------------------------------------------------------------------------

def _section_sources(bus: EvidenceBus, producers: tuple[str, ...]) -> list[SourceText]:
    sources: dict[tuple[str, str], SourceText] = {}
    for producer in producers:
        for artifact in bus.by_producer(producer):
            text = render_artifact(artifact)
            for ref in artifact.all_sources():
                sources.setdefault(ref.key(), SourceText(ref, text))
    return list(sources.values())


def draft_section(
    allocation: SectionAllocation,
    question: str,
    bus: EvidenceBus,
    models: list[ScriptedProvider],
    transcript: Transcript,
) -> list[str]:
    artifacts_text = "\n".join(
        render_artifact(a) for producer in allocation.producers for a in bus.by_producer(producer)
    )
    drafts = []
    for model in models:
        request = ModelRequest(
            (
                Message("system", "Draft one dossier section from the allocated evidence."),
                Message(
                    "user",
                    f"Question: {question}\nSection: {allocation.name}\nEvidence:\n{artifacts_text}",
                ),
            )
        )
        response = complete(model, request, transcript)
        drafts.append(response.text or "")
    return drafts


def _mentioned_citations(text: str) -> frozenset[str]:
    return frozenset(match.replace(" ", "") for match in _CITATION_TOKEN_RE.findall(text))


def assemble_dossier(
    bus: EvidenceBus,
    playbook: ScenarioPlaybook,
    reconciled: dict[str, ReconcileResult],
    entity_table: list[CanonicalEntity],
    question: str,
    editor: ScriptedProvider,
    transcript: Transcript,
) -> Dossier:
    """Order sections per playbook, enforce producer allocations, editorial pass last.

    The editorial call may reword section text but never add citations; a
    section whose edit introduces new citation tokens keeps its pre-editorial
    text.
    """
    sections: list[DossierSection] = []
    hypotheses: list[Hypothesis] = []
    for allocation in playbook.section_allocations:
        result = reconciled.get(allocation.name)
        if result is None:
            sections.append(DossierSection(allocation.name, "section failed: no reconciled output", ()))
            continue
        allowed = {s.ref.key() for s in _section_sources(bus, allocation.producers)}
        citations = tuple(ref for ref in result.citations if ref.key() in allowed)
        for dropped in set(result.citations) - set(citations):
            log.warning("section %s: citation %s outside allocation; stripped", allocation.name, dropped)
        sections.append(DossierSection(allocation.name, result.section_text, citations))
        for group, text, confidence, sources in result.record.final_positions():
            hypotheses.append(Hypothesis(claim=text, confidence=confidence, sources=sources))

    # Editorial pass: one provider call across all sections.
    payload = {s.name: s.text for s in sections}
    request = ModelRequest(
        (
            Message("system", "Light editorial pass; reword only, never add citations."),
            Message("user", json.dumps({"question": question, "sections": payload}, sort_keys=True)),
        ),
        decode_hint="structured",
    )
    try:
        response = complete(editor, request, transcript)
        edited = json.loads(response.text or "") if response.kind == "text" else {}
        edited_sections = edited.get("sections", {}) if isinstance(edited, dict) else {}
    except (ProviderError, json.JSONDecodeError):
        log.warning("editorial pass failed; keeping pre-editorial text")
        edited_sections = {}
    final_sections: list[DossierSection] = []
    for section in sections:
        new_text = edited_sections.get(section.name)
        if isinstance(new_text, str) and new_text.strip():
            before = _mentioned_citations(section.text) | {str(c).replace(" ", "") for c in section.citations}
            added = _mentioned_citations(new_text) - before
            if added:
                log.warning(
                    "editorial pass on %s introduced citations %s; rejected, keeping original",
                    section.name,
                    sorted(added),
                )
            else:
                section = DossierSection(section.name, new_text, section.citations)
        final_sections.append(section)

    hypotheses.sort(key=lambda h: (-h.confidence, h.claim))
    return Dossier(
        question=question,
        entity_table=tuple(entity_table),
        sections=tuple(final_sections),
        ranked_hypotheses=tuple(hypotheses),
    )


# ---------------------------------------------------------------------------
# Full run
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    dossier: Dossier
    bus: EvidenceBus
    transcript: Transcript
    records: dict[str, ReconcileResult]
    playbook: ScenarioPlaybook
    skipped: list[Subtask]


def run_query(query: str, settings: RunSettings) -> RunResult:
    """End-to-end: classify, translate, decompose, delegate, reconcile, assemble."""
    bus = EvidenceBus()
    transcript = Transcript()
    playbook_id, version = classify_scenario(
        query, settings.provider("classifier"), settings.playbooks, transcript, settings.default_playbook
    )
    playbook = settings.playbooks.get(playbook_id, version)

    # Translation always runs first; its entity table is the only shared input.
    first = playbook.subtask_templates[0]
    first_text, missing = _render_template(first, query, [])
    if missing:
        raise OrchestratorError("the first (translation) template must not require entities")
    first_task = Subtask("t-001", first.subagent, first_text)
    registration = settings.subagents.get(first.subagent)
    if registration is None:
        raise OrchestratorError(f"subagent {first.subagent!r} is not registered")
    translation_artifact = delegate(first_task, registration, settings, bus, transcript)
    entity_table = parse_entity_table(translation_artifact)

    subtasks = decompose(playbook, query, entity_table)
    skipped = [s for s in subtasks if s.skipped]
    for subtask in subtasks[1:]:
        if subtask.skipped:
            log.warning("subtask %s skipped: %s", subtask.task_id, subtask.skip_reason)
            continue
        registration = settings.subagents.get(subtask.subagent)
        if registration is None:
            raise OrchestratorError(f"subagent {subtask.subagent!r} is not registered")
        delegate(subtask, registration, settings, bus, transcript)

    models = [settings.provider(f"reconcile.model{i}") for i in range(1, settings.debate.drafters + 1)]
    extractor = settings.provider("reconcile.extract")
    synthesizer = settings.provider("reconcile.synth")
    records: dict[str, ReconcileResult] = {}
    for allocation in playbook.section_allocations:
        sources = _section_sources(bus, allocation.producers)
        drafts = draft_section(allocation, query, bus, models, transcript)
        records[allocation.name] = reconcile_section(
            drafts, query, settings.debate, sources, extractor, models, synthesizer, transcript
        )

    dossier = assemble_dossier(
        bus, playbook, records, entity_table, query, settings.provider("editor"), transcript
    )
    return RunResult(dossier, bus, transcript, records, playbook, skipped)


# ---------------------------------------------------------------------------
# Playbook files
# ---------------------------------------------------------------------------

def load_playbook_file(path: Path) -> ScenarioPlaybook:
    obj = json.loads(path.read_text(encoding="utf-8"))
    return ScenarioPlaybook(
        playbook_id=obj["playbook_id"],
        version=int(obj["version"]),
        subtask_templates=tuple(
            SubtaskTemplate(t["subagent"], t["template"], tuple(t.get("requires", ())))
            for t in obj["subtasks"]
        ),
        section_allocations=tuple(
            SectionAllocation(s["name"], tuple(s["producers"])) for s in obj["sections"]
        ),
    )


def load_playbook_dir(directory: Path) -> PlaybookRegistry:
    registry = PlaybookRegistry()
    for path in sorted(directory.glob("*.json")):
        registry.register(load_playbook_file(path))
    return registry
