"""The four reusable execution patterns: tool loop, iterative synthesis, provider fan-out, code act.

Each engine is parameterized by providers, tools and termination limits, holds
no global state, and mints exactly one artifact on the bus it is given. Tool
validation failures are fed back to the model as observations rather than
raised, so a scripted (or live) model can self-correct.
"""

from __future__ import annotations

import hashlib
import re
import time
from dataclasses import dataclass, field

from .core import Document, EvidenceArtifact, EvidenceBus, ProvenanceRef, Section, Table, TableRow, render_document
from .providers import (
    FanOutResult,
    Message,
    ModelRequest,
    ScriptedProvider,
    Transcript,
    complete,
    fan_out,
)
from .sandbox.supervisor import SandboxSession, SandboxSupervisor
from .toolkit.backends import ToolExecutor
from .toolkit.registry import ToolValidationError

PATTERN_KINDS = frozenset({"tool_loop", "iterative_synthesis", "provider_fanout", "code_act"})


class PatternError(Exception):
    pass


@dataclass(frozen=True)
class PatternConfig:
    pattern: str
    max_steps: int = 16
    system_prompt: str = "You are a focused research subagent."
    tool_allowlist: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.pattern not in PATTERN_KINDS:
            raise PatternError(f"unknown pattern {self.pattern!r}")
        if self.max_steps < 1:
            raise PatternError("max_steps must be >= 1")


@dataclass(frozen=True)
class Step:
    kind: str  # model | tool | sandbox | compose
    input_digest: str
    output_digest: str
    duration: float


@dataclass
class StepTrace:
    pattern: str
    steps: list[Step] = field(default_factory=list)

    def add(self, kind: str, input_text: str, output_text: str, duration: float) -> None:
        self.steps.append(Step(kind, _digest(input_text), _digest(output_text), duration))

    def render(self) -> str:
        # Durations stay in memory only; the export is golden-file stable.
        lines = [f"trace: {self.pattern}"]
        for index, step in enumerate(self.steps, start=1):
            lines.append(f"  step {index}: {step.kind} in={step.input_digest} out={step.output_digest}")
        return "\n".join(lines) + "\n"


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


_CODE_FENCE_RE = re.compile(r"```(?:[a-zA-Z0-9_+-]*)\n(.*?)```", re.DOTALL)


def extract_code_block(text: str) -> str | None:
    match = _CODE_FENCE_RE.search(text)
    return match.group(1) if match else None


def _merge_tool_tables(tool_docs: list[Document]) -> tuple[Table, ...]:
    tables: list[Table] = []
    for doc in tool_docs:
        tables.extend(doc.tables)
    return tuple(tables)


def run_tool_loop(
    config: PatternConfig,
    task: str,
    provider: ScriptedProvider,
    executor: ToolExecutor,
    bus: EvidenceBus,
    producer: str,
    task_id: str,
    transcript: Transcript,
) -> tuple[EvidenceArtifact, StepTrace]:
    """Alternate model and tool calls until the model emits a final text or the step budget runs out."""
    if config.pattern != "tool_loop":
        raise PatternError("config.pattern must be tool_loop")
    unknown = [name for name in config.tool_allowlist if name not in executor.registry]
    if unknown:
        raise PatternError(f"allowlist names unregistered tools: {unknown}")
    trace = StepTrace("tool_loop")
    messages = [Message("system", config.system_prompt), Message("user", task)]
    sources: dict[tuple[str, str], ProvenanceRef] = {}
    tool_docs: list[Document] = []
    final_text: str | None = None

    for _ in range(config.max_steps):
        request = ModelRequest(tuple(messages), tool_schemas=config.tool_allowlist)
        started = time.monotonic()
        response = complete(provider, request, transcript)
        trace.add("model", messages[-1].content, response.text or str(response.tool_call), time.monotonic() - started)
        if response.kind == "text":
            final_text = response.text or ""
            break
        call = response.tool_call
        assert call is not None
        started = time.monotonic()
        if call.tool not in config.tool_allowlist:
            observation = f"tool-error: {call.tool}: not on this subagent's allowlist"
        else:
            try:
                doc, diagnostics = executor.call(call.tool, call.arg_map())
            except ToolValidationError as exc:
                observation = f"tool-error: {call.tool}: {exc}"
            except Exception as exc:  # backend faults also become observations
                observation = f"tool-error: {call.tool}: {exc}"
            else:
                tool_docs.append(doc)
                for table in doc.tables:
                    for row in table.rows:
                        for ref in row.sources:
                            sources.setdefault(ref.key(), ref)
                observation = render_document(doc)
                if diagnostics:
                    observation += "\n" + "\n".join(f"diagnostic: {d}" for d in diagnostics)
        trace.add("tool", str(call), observation, time.monotonic() - started)
        messages.append(Message("assistant", f"tool_call: {call.tool}"))
        messages.append(Message("user", observation))

    status = "complete" if final_text is not None else "incomplete"
    body = final_text if final_text is not None else "step budget exhausted before a final answer"
    payload = Document(
        sections=(Section("status", status), Section("result", body)),
        tables=_merge_tool_tables(tool_docs),
    )
    artifact = bus.mint(producer, task_id, payload, tuple(sources.values()))
    return artifact, trace


def run_iterative_synthesis(
    config: PatternConfig,
    task: str,
    provider: ScriptedProvider,
    bus: EvidenceBus,
    producer: str,
    task_id: str,
    transcript: Transcript,
) -> tuple[EvidenceArtifact, StepTrace]:
    """Exactly three model phases, in order: plan, write, summarize."""
    if config.pattern != "iterative_synthesis":
        raise PatternError("config.pattern must be iterative_synthesis")
    trace = StepTrace("iterative_synthesis")
    outputs: dict[str, str] = {}
    prompts = {
        "plan": f"Plan the research output for this task:\n{task}",
        "write": "Write the full output following the plan:\n{plan}",
        "summarize": "Summarize the written output:\n{body}",
    }
    for phase in ("plan", "write", "summarize"):
        prompt = prompts[phase].format(plan=outputs.get("plan", ""), body=outputs.get("write", ""))
        request = ModelRequest((Message("system", config.system_prompt), Message("user", prompt)))
        started = time.monotonic()
        response = complete(provider, request, transcript)
        trace.add("model", prompt, response.text or "", time.monotonic() - started)
        if response.kind != "text" or not (response.text or "").strip():
            raise PatternError(f"{phase} phase empty")
        outputs[phase] = response.text or ""
    payload = Document(
        sections=(
            Section("plan", outputs["plan"]),
            Section("body", outputs["write"]),
            Section("summary", outputs["summarize"]),
        )
    )
    artifact = bus.mint(producer, task_id, payload)
    return artifact, trace


def run_provider_fanout(
    config: PatternConfig,
    task: str,
    providers: list[ScriptedProvider],
    composer: ScriptedProvider,
    bus: EvidenceBus,
    producer: str,
    task_id: str,
    transcript: Transcript,
) -> tuple[EvidenceArtifact, StepTrace]:
    """Same task to heterogeneous models; the composer folds their summaries into one."""
    if config.pattern != "provider_fanout":
        raise PatternError("config.pattern must be provider_fanout")
    trace = StepTrace("provider_fanout")
    request = ModelRequest((Message("system", config.system_prompt), Message("user", task)))
    started = time.monotonic()
    result: FanOutResult = fan_out(request, providers, composer, transcript)
    trace.add("compose", task, result.composed, time.monotonic() - started)
    sections = [Section("summary", result.composed)]
    for provider_id, summary in result.summaries:
        sections.append(Section(f"summary:{provider_id}", summary))
    if result.failures:
        failure_text = "\n".join(f"{pid}: {cause}" for pid, cause in result.failures)
        sections.append(Section("failures", failure_text))
    payload = Document(sections=tuple(sections))
    sources = [ProvenanceRef("INTERNAL", f"provider:{pid}") for pid in result.provider_ids()]
    # failed providers stay visible in the artifact's provenance
    sources.extend(ProvenanceRef("INTERNAL", f"provider-failure:{pid}") for pid, _ in result.failures)
    artifact = bus.mint(producer, task_id, payload, tuple(sources))
    return artifact, trace


def run_code_act(
    config: PatternConfig,
    task: str,
    provider: ScriptedProvider,
    supervisor: SandboxSupervisor,
    session: SandboxSession,
    bus: EvidenceBus,
    producer: str,
    task_id: str,
    transcript: Transcript,
) -> tuple[EvidenceArtifact, StepTrace]:
    """Alternate model and sandbox execution; fenced code blocks run, plain text finalizes.

    A refused block (round cap) finalizes the run immediately with the
    incomplete flag; the refusal is still recorded as the last observation.
    """
    if config.pattern != "code_act":
        raise PatternError("config.pattern must be code_act")
    trace = StepTrace("code_act")
    messages = [Message("system", config.system_prompt), Message("user", task)]
    block_rows: list[TableRow] = []
    session_ref = ProvenanceRef("INTERNAL", f"sandbox:{session.session_id}")
    final_text: str | None = None
    incomplete_reason: str | None = None
    model_budget = config.max_steps

    for _ in range(model_budget):
        request = ModelRequest(tuple(messages))
        started = time.monotonic()
        response = complete(provider, request, transcript)
        trace.add("model", messages[-1].content, response.text or "", time.monotonic() - started)
        if response.kind != "text":
            raise PatternError("code_act models speak text (with fenced code blocks)")
        text = response.text or ""
        code = extract_code_block(text)
        if code is None:
            final_text = text
            break
        started = time.monotonic()
        result = supervisor.execute_block(session, code)
        observation = (
            f"status: {result.status}\nstdout:\n{result.stdout}\nstderr:\n{result.stderr}\n"
            f"vars: {sorted(result.vars_snapshot)}"
        )
        trace.add("sandbox", code, observation, time.monotonic() - started)
        messages.append(Message("assistant", text))
        messages.append(Message("user", observation))
        if result.status != "refused":
            block_rows.append(
                TableRow(
                    (str(len(block_rows) + 1), result.status, _digest(result.stdout)),
                    (session_ref,),
                )
            )
        if result.status == "refused":
            incomplete_reason = "session round cap reached"
            break
    else:
        incomplete_reason = "model step budget exhausted"

    status = "complete" if final_text is not None else "incomplete"
    body = final_text if final_text is not None else f"finalized early: {incomplete_reason}"
    tables = ()
    if block_rows:
        tables = (Table("blocks", ("block", "status", "stdout_digest"), tuple(block_rows)),)
    payload = Document(sections=(Section("status", status), Section("result", body)), tables=tables)
    artifact = bus.mint(producer, task_id, payload, (session_ref,))
    return artifact, trace
