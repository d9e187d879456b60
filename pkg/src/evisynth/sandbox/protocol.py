"""Supervisor <-> worker wire protocol.

Frames are canonical JSON (sorted keys, compact separators, ASCII-escaped)
prefixed with a 4-byte big-endian length. Every frame carries a schema
version ``v`` and a ``kind``:

    init         {v, kind, manifest: [{name, path}], thresholds: {str: num}, vars: {}}
    ready        {v, kind, tables: [str], thresholds: {str: num}}
    init_failure {v, kind, error: str}
    exec         {v, kind, code: str}
    exec_result  {v, kind, status: ok|error, stdout: str, stderr: str,
                  vars: {}, duration: num}
    shutdown     {v, kind}

Variable persistence carries only the six primitive kinds (text, integer,
real, boolean, list, map with text keys); everything else is dropped before
framing. Conformance vectors for both sides of this protocol live in
``data/conformance/wire_vectors.json``.
"""

from __future__ import annotations

import json
import struct
from typing import Any, BinaryIO

PROTOCOL_VERSION = 1

FRAME_KINDS = frozenset({"init", "ready", "init_failure", "exec", "exec_result", "shutdown"})

_REQUIRED_FIELDS = {
    "init": ("manifest", "thresholds"),
    "ready": ("tables", "thresholds"),
    "init_failure": ("error",),
    "exec": ("code",),
    "exec_result": ("status", "stdout", "stderr", "vars", "duration"),
    "shutdown": (),
}


class FrameError(Exception):
    pass


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def encode_frame(frame: dict) -> bytes:
    validate_frame(frame)
    body = canonical_json(frame).encode("utf-8")
    return struct.pack(">I", len(body)) + body


def decode_frame(data: bytes) -> tuple[dict, bytes]:
    """Decode one frame from a byte buffer; returns (frame, remaining bytes)."""
    if len(data) < 4:
        raise FrameError("short buffer: missing length prefix")
    (length,) = struct.unpack(">I", data[:4])
    if len(data) < 4 + length:
        raise FrameError(f"short buffer: need {length} body bytes, have {len(data) - 4}")
    frame = json.loads(data[4 : 4 + length].decode("utf-8"))
    validate_frame(frame)
    return frame, data[4 + length :]


def read_frame(stream: BinaryIO) -> dict | None:
    """Blocking read of one frame from a byte stream; None on clean EOF."""
    header = stream.read(4)
    if not header:
        return None
    if len(header) < 4:
        raise FrameError("truncated length prefix")
    (length,) = struct.unpack(">I", header)
    body = stream.read(length)
    if len(body) < length:
        raise FrameError("truncated frame body")
    frame = json.loads(body.decode("utf-8"))
    validate_frame(frame)
    return frame


def validate_frame(frame: dict) -> None:
    if not isinstance(frame, dict):
        raise FrameError("frame must be a map")
    if frame.get("v") != PROTOCOL_VERSION:
        raise FrameError(f"unsupported protocol version {frame.get('v')!r}")
    kind = frame.get("kind")
    if kind not in FRAME_KINDS:
        raise FrameError(f"unknown frame kind {kind!r}")
    for field_name in _REQUIRED_FIELDS[kind]:
        if field_name not in frame:
            raise FrameError(f"{kind} frame missing field {field_name!r}")


def make_frame(kind: str, **fields: Any) -> dict:
    frame = {"v": PROTOCOL_VERSION, "kind": kind, **fields}
    validate_frame(frame)
    return frame


# ---------------------------------------------------------------------------
# Primitive persistence filter
# ---------------------------------------------------------------------------

def is_primitive(value: Any) -> bool:
    """True iff the value is one of the six persistable kinds, recursively."""
    if isinstance(value, bool) or value is None:
        return isinstance(value, bool)
    if isinstance(value, (str, int)):
        return True
    if isinstance(value, float):
        return value == value and value not in (float("inf"), float("-inf"))
    if isinstance(value, list):
        return all(is_primitive(v) for v in value)
    if isinstance(value, dict):
        return all(isinstance(k, str) and is_primitive(v) for k, v in value.items())
    return False


def filter_primitives(variables: dict[str, Any]) -> dict[str, Any]:
    """Keep only names bound to persistable primitives; everything else is dropped silently."""
    return {name: value for name, value in variables.items() if is_primitive(value)}
