"""Chat-model backend abstraction with deterministic scripted providers and fan-out.

Live adapters plug in behind the same ``complete`` surface; nothing in the test
path ever touches a network. Scripted providers replay canned responses or run
a deterministic responder function, so full-run transcripts are byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

MESSAGE_ROLES = frozenset({"system", "user", "assistant"})


class ProviderError(Exception):
    pass


class ScriptUnderrunError(ProviderError):
    """The scripted provider ran out of canned responses."""


class FanOutError(ProviderError):
    pass


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in MESSAGE_ROLES:
            raise ProviderError(f"unknown message role {self.role!r}")


@dataclass(frozen=True)
class ModelRequest:
    messages: tuple[Message, ...]
    tool_schemas: tuple[str, ...] = ()  # names of tools offered for this call
    decode_hint: str = "plain"  # plain | structured

    def __post_init__(self) -> None:
        if not self.messages:
            raise ProviderError("request must carry at least one message")
        if self.messages[0].role not in ("system", "user"):
            raise ProviderError("first message must be system or user")
        if self.decode_hint not in ("plain", "structured"):
            raise ProviderError(f"unknown decode hint {self.decode_hint!r}")

    def digest(self) -> str:
        payload = json.dumps(
            {
                "messages": [[m.role, m.content] for m in self.messages],
                "tools": list(self.tool_schemas),
                "decode": self.decode_hint,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ToolCall:
    tool: str
    args: tuple[tuple[str, object], ...]

    def arg_map(self) -> dict[str, object]:
        return dict(self.args)


@dataclass(frozen=True)
class ModelResponse:
    kind: str  # text | tool_call
    text: str | None = None
    tool_call: ToolCall | None = None
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.kind == "text":
            if self.text is None or self.tool_call is not None:
                raise ProviderError("text response must carry text and no tool call")
        elif self.kind == "tool_call":
            if self.tool_call is None or self.text is not None:
                raise ProviderError("tool_call response must carry a tool call and no text")
        else:
            raise ProviderError(f"unknown response kind {self.kind!r}")
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ProviderError("token usage must be non-negative")


def text_response(text: str) -> ModelResponse:
    return ModelResponse(kind="text", text=text)


def tool_response(tool: str, args: dict[str, object]) -> ModelResponse:
    return ModelResponse(kind="tool_call", tool_call=ToolCall(tool, tuple(sorted(args.items()))))


def _word_count(text: str) -> int:
    return len(text.split())


class Transcript:
    """Per-run record of every completion: (provider, request digest, response, usage)."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._entries: list[tuple[str, str, ModelRequest, ModelResponse]] = []

    def record(self, provider_id: str, request: ModelRequest, response: ModelResponse) -> None:
        with self._lock:
            self._entries.append((provider_id, request.digest(), request, response))

    def entries(self) -> tuple[tuple[str, str, ModelRequest, ModelResponse], ...]:
        with self._lock:
            return tuple(self._entries)

    def total_usage(self) -> tuple[int, int]:
        prompt = completion = 0
        for _, _, _, response in self.entries():
            prompt += response.prompt_tokens
            completion += response.completion_tokens
        return prompt, completion

    def messages_for(self, provider_id: str) -> tuple[str, ...]:
        """Flat set of message contents sent to one provider (for isolation checks)."""
        out: list[str] = []
        for pid, _, request, _ in self.entries():
            if pid == provider_id:
                out.extend(m.content for m in request.messages)
        return tuple(out)

    def render(self) -> str:
        lines: list[str] = []
        for index, (pid, digest, request, response) in enumerate(self.entries(), start=1):
            lines.append(f"call: {index}")
            lines.append(f"  provider: {pid}")
            lines.append(f"  request-digest: {digest}")
            if response.kind == "text":
                lines.append("  response-kind: text")
                for line in (response.text or "").splitlines() or [""]:
                    lines.append(f"    {line}")
            else:
                call = response.tool_call
                assert call is not None
                lines.append("  response-kind: tool_call")
                lines.append(f"    tool: {call.tool}")
                lines.append(
                    "    args: "
                    + json.dumps(call.arg_map(), sort_keys=True, separators=(",", ":"), default=str)
                )
            lines.append(f"  usage: prompt={response.prompt_tokens} completion={response.completion_tokens}")
        prompt, completion = self.total_usage()
        lines.append(f"total-usage: prompt={prompt} completion={completion}")
        return "\n".join(lines) + "\n"


Responder = Callable[[ModelRequest], ModelResponse]


class ScriptedProvider:
    """Deterministic test double: canned response list or responder function.

    Replaying the same request sequence yields identical responses; token usage
    is derived from word counts so it is reproducible too.
    """

    def __init__(
        self,
        provider_id: str,
        script: Sequence[ModelResponse] | None = None,
        responder: Responder | None = None,
    ) -> None:
        if (script is None) == (responder is None):
            raise ProviderError(f"provider {provider_id!r}: exactly one of script/responder required")
        self.provider_id = provider_id
        self._script = list(script) if script is not None else None
        self._responder = responder
        self._cursor = 0

    def _next(self, request: ModelRequest) -> ModelResponse:
        if self._responder is not None:
            return self._responder(request)
        assert self._script is not None
        if self._cursor >= len(self._script):
            raise ScriptUnderrunError(
                f"script underrun: provider {self.provider_id!r} exhausted at call {self._cursor + 1}"
            )
        response = self._script[self._cursor]
        self._cursor += 1
        return response

    def complete(self, request: ModelRequest) -> ModelResponse:
        response = self._next(request)
        if response.prompt_tokens == 0 and response.completion_tokens == 0:
            prompt = sum(_word_count(m.content) for m in request.messages)
            if response.kind == "text":
                completion = _word_count(response.text or "")
            else:
                assert response.tool_call is not None
                completion = 1 + len(response.tool_call.args)
            response = ModelResponse(
                kind=response.kind,
                text=response.text,
                tool_call=response.tool_call,
                prompt_tokens=prompt,
                completion_tokens=completion,
            )
        return response

    def calls_remaining(self) -> int | None:
        if self._script is None:
            return None
        return len(self._script) - self._cursor


def complete(provider: ScriptedProvider, request: ModelRequest, transcript: Transcript) -> ModelResponse:
    """Run one completion and record it on the run transcript."""
    response = provider.complete(request)
    transcript.record(provider.provider_id, request, response)
    return response


@dataclass(frozen=True)
class FanOutResult:
    composed: str
    summaries: tuple[tuple[str, str], ...]  # (provider_id, summary) in dispatch order
    failures: tuple[tuple[str, str], ...]  # (provider_id, cause)

    def provider_ids(self) -> tuple[str, ...]:
        return tuple(pid for pid, _ in self.summaries)


def fan_out(
    task: ModelRequest,
    providers: Sequence[ScriptedProvider],
    composer: ScriptedProvider,
    transcript: Transcript,
) -> FanOutResult:
    """Dispatch one task to several providers, then compose their summaries.

    Exactly one completion is issued per provider. Failures are tolerated as
    long as at least one provider succeeds; they are reported alongside the
    composition so downstream artifacts can record them as provenance gaps.
    """
    if len(providers) < 2:
        raise FanOutError("fan-out needs at least two providers")
    ids = [p.provider_id for p in providers]
    if len(set(ids)) != len(ids):
        raise FanOutError("fan-out providers must be distinct")

    summaries: list[tuple[str, str]] = []
    failures: list[tuple[str, str]] = []
    for provider in providers:
        try:
            response = complete(provider, task, transcript)
        except ProviderError as exc:
            failures.append((provider.provider_id, str(exc)))
            continue
        if response.kind != "text" or not (response.text or "").strip():
            failures.append((provider.provider_id, "non-text or empty summary"))
            continue
        summaries.append((provider.provider_id, response.text or ""))

    if not summaries:
        causes = "; ".join(f"{pid}: {cause}" for pid, cause in failures)
        raise FanOutError(f"all fan-out providers failed ({causes})")

    parts = [f"[{pid}] {summary}" for pid, summary in summaries]
    compose_request = ModelRequest(
        messages=task.messages
        + (Message("user", "Compose a final summary from these provider summaries:\n" + "\n".join(parts)),)
    )
    composed = complete(composer, compose_request, transcript)
    if composed.kind != "text":
        raise FanOutError("composer must return text")
    return FanOutResult(
        composed=composed.text or "",
        summaries=tuple(summaries),
        failures=tuple(failures),
    )


# ---------------------------------------------------------------------------
# Script files: {"providers": {name: {"script": [...]} | {"mode": ..., ...}}}
# ---------------------------------------------------------------------------

def _response_from_json(obj: dict) -> ModelResponse:
    kind = obj.get("kind", "text")
    if kind == "tool_call":
        return tool_response(obj["tool"], obj.get("args", {}))
    return text_response(obj["text"])


def _digest_responder(seed: int) -> Responder:
    def respond(request: ModelRequest) -> ModelResponse:
        digest = hashlib.sha256(f"{seed}:{request.digest()}".encode()).hexdigest()
        return text_response(f"digest-reply-{digest[:12]}")

    return respond


def load_provider_book(raw: dict, *, extra_modes: dict[str, Callable[[dict], Responder]] | None = None) -> dict[str, ScriptedProvider]:
    """Build the run's providers from a parsed script file."""
    providers: dict[str, ScriptedProvider] = {}
    modes = dict(extra_modes or {})
    for name, spec in raw.get("providers", {}).items():
        if "script" in spec:
            script = [_response_from_json(entry) for entry in spec["script"]]
            providers[name] = ScriptedProvider(name, script=script)
        elif spec.get("mode") == "digest":
            providers[name] = ScriptedProvider(name, responder=_digest_responder(int(spec.get("seed", 0))))
        elif spec.get("mode") in modes:
            providers[name] = ScriptedProvider(name, responder=modes[spec["mode"]](spec))
        else:
            raise ProviderError(f"provider {name!r}: unknown script spec {spec!r}")
    return providers
