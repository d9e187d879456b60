from .protocol import (
    FrameError,
    canonical_json,
    decode_frame,
    encode_frame,
    filter_primitives,
    is_primitive,
    validate_frame,
)
from .supervisor import (
    DEFAULT_THRESHOLDS,
    TRUNCATION_MARKER,
    BlockResult,
    SandboxLimits,
    SandboxSession,
    SandboxSupervisor,
    SessionError,
    truncate_stream,
)
from .stubworker import StubTransport, StubWorker

__all__ = [
    "FrameError",
    "canonical_json",
    "decode_frame",
    "encode_frame",
    "filter_primitives",
    "is_primitive",
    "validate_frame",
    "DEFAULT_THRESHOLDS",
    "TRUNCATION_MARKER",
    "BlockResult",
    "SandboxLimits",
    "SandboxSession",
    "SandboxSupervisor",
    "SessionError",
    "truncate_stream",
    "StubTransport",
    "StubWorker",
]
