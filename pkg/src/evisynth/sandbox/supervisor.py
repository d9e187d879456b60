"""Sandbox session lifecycle and resource contract.

The supervisor owns every limit: per-block wall-clock timeout (default 600 s),
a 12-block round cap per session, stream truncation at 8,000/4,000 chars with
a diagnostic marker, and primitive-only variable persistence. A timed-out
block is killed, persisted variables revert to the pre-block snapshot, and the
worker is restarted with those variables re-injected so the session survives a
single runaway block.
"""

from __future__ import annotations

import os
import subprocess
import threading
import time
import queue as queue_mod
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

from .protocol import encode_frame, filter_primitives, make_frame, read_frame

WORKER_ENV_VAR = "EVISYNTH_WORKER"
TIMEOUT_GRACE_SECONDS = 5.0

DEFAULT_THRESHOLDS: dict[str, float] = {
    "crispr_likely_dependent": -0.5,
    "crispr_strongly_dependent": -1.0,
    "dep_prob_dependent": 0.6,
    "dep_prob_resistant": 0.4,
    "cn_gain": 1.5,
    "cn_amplification": 1.9,
    "cn_loss": 0.6,
    "fdr": 0.1,
    "min_samples": 3,
}


class SessionError(Exception):
    pass


@dataclass(frozen=True)
class SandboxLimits:
    block_timeout: float = 600.0
    max_blocks: int = 12
    stdout_cap: int = 8000
    stderr_cap: int = 4000

    def __post_init__(self) -> None:
        for name in ("block_timeout", "max_blocks", "stdout_cap", "stderr_cap"):
            if getattr(self, name) <= 0:
                raise SessionError(f"limit {name} must be positive")


TRUNCATION_MARKER = "[truncated at {cap} chars]"


def truncate_stream(raw: str, cap: int) -> tuple[str, bool]:
    """min(n, cap) chars, plus a fixed-size marker iff the raw stream exceeded the cap."""
    if len(raw) <= cap:
        return raw, False
    return raw[:cap] + TRUNCATION_MARKER.format(cap=cap), True


@dataclass(frozen=True)
class BlockResult:
    status: str  # ok | error | timeout | refused
    stdout: str
    stderr: str
    stdout_truncated: bool
    stderr_truncated: bool
    duration: float
    vars_snapshot: dict[str, Any]


class Transport(Protocol):
    def send(self, frame: dict) -> None: ...

    def recv(self, timeout: float) -> dict: ...

    def kill(self) -> None: ...

    @property
    def alive(self) -> bool: ...


class SubprocessTransport:
    """Length-prefixed frames over the worker process's stdio pipes."""

    def __init__(self, argv: list[str]) -> None:
        self._proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            start_new_session=True,
        )
        self._queue: queue_mod.Queue[dict] = queue_mod.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        assert self._proc.stdout is not None
        try:
            while True:
                frame = read_frame(self._proc.stdout)
                if frame is None:
                    return
                self._queue.put(frame)
        except Exception:
            return

    def send(self, frame: dict) -> None:
        if self._proc.poll() is not None:
            raise ConnectionError("worker process exited")
        assert self._proc.stdin is not None
        self._proc.stdin.write(encode_frame(frame))
        self._proc.stdin.flush()

    def recv(self, timeout: float) -> dict:
        try:
            return self._queue.get(timeout=timeout)
        except queue_mod.Empty:
            raise TimeoutError(f"no frame within {timeout}s") from None

    def kill(self) -> None:
        if self._proc.poll() is None:
            try:
                os.killpg(os.getpgid(self._proc.pid), 9)
            except (ProcessLookupError, PermissionError):
                self._proc.kill()
            self._proc.wait(timeout=5)

    @property
    def alive(self) -> bool:
        return self._proc.poll() is None


def subprocess_worker_factory(argv: list[str] | None = None) -> Callable[[], Transport]:
    """Factory for the out-of-process worker named by EVISYNTH_WORKER (or explicit argv)."""

    def factory() -> Transport:
        command = argv
        if command is None:
            executable = os.environ.get(WORKER_ENV_VAR)
            if not executable:
                raise SessionError(f"set {WORKER_ENV_VAR} to the worker executable path")
            command = executable.split()
        return SubprocessTransport(command)

    return factory


@dataclass
class SandboxSession:
    session_id: str
    limits: SandboxLimits
    manifest: tuple[dict, ...]
    thresholds: dict[str, float]
    transport: Transport
    blocks_used: int = 0
    persisted_vars: dict[str, Any] = field(default_factory=dict)
    dead: bool = False
    closed: bool = False
    total_duration: float = 0.0
    last_status: str = ""
    tables: tuple[str, ...] = ()


class SandboxSupervisor:
    """Opens, drives and closes sandbox sessions over any Transport implementation."""

    def __init__(self, worker_factory: Callable[[], Transport], handshake_timeout: float = 30.0) -> None:
        self._factory = worker_factory
        self._handshake_timeout = handshake_timeout
        self._counter = 0
        self._lock = threading.Lock()

    def _init_worker(
        self,
        transport: Transport,
        manifest: tuple[dict, ...],
        thresholds: dict[str, float],
        variables: dict[str, Any],
    ) -> tuple[str, ...]:
        transport.send(
            make_frame("init", manifest=list(manifest), thresholds=thresholds, vars=variables)
        )
        try:
            reply = transport.recv(timeout=self._handshake_timeout)
        except TimeoutError as exc:
            transport.kill()
            raise SessionError(f"worker handshake timed out: {exc}") from exc
        if reply["kind"] == "init_failure":
            transport.kill()
            raise SessionError(f"worker init failed: {reply['error']}")
        if reply["kind"] != "ready":
            transport.kill()
            raise SessionError(f"unexpected handshake frame {reply['kind']!r}")
        return tuple(reply["tables"])

    def open_session(
        self,
        limits: SandboxLimits | None = None,
        manifest: tuple[dict, ...] | list[dict] = (),
        thresholds: dict[str, float] | None = None,
    ) -> SandboxSession:
        limits = limits or SandboxLimits()
        thresholds = dict(DEFAULT_THRESHOLDS if thresholds is None else thresholds)
        manifest = tuple(manifest)
        try:
            transport = self._factory()
        except Exception as exc:
            raise SessionError(f"cannot start worker: {exc}") from exc
        tables = self._init_worker(transport, manifest, thresholds, {})
        with self._lock:
            self._counter += 1
            session_id = f"sbx-{self._counter:04d}"
        session = SandboxSession(
            session_id=session_id,
            limits=limits,
            manifest=manifest,
            thresholds=thresholds,
            transport=transport,
            tables=tables,
        )
        return session

    def execute_block(self, session: SandboxSession, code: str) -> BlockResult:
        """Run one code block under the session's limits.

        Attempts that reach the worker (including errors and timeouts) count
        against the round cap; refusals do not, and never contact the worker.
        """
        if session.closed or session.dead:
            raise SessionError(f"session {session.session_id} is not serviceable")
        if session.blocks_used >= session.limits.max_blocks:
            result = BlockResult(
                status="refused",
                stdout="",
                stderr=f"round cap reached: {session.limits.max_blocks} blocks per session",
                stdout_truncated=False,
                stderr_truncated=False,
                duration=0.0,
                vars_snapshot=dict(session.persisted_vars),
            )
            session.last_status = "refused"
            return result

        session.blocks_used += 1
        pre_block_vars = dict(session.persisted_vars)
        started = time.monotonic()
        try:
            session.transport.send(make_frame("exec", code=code))
            frame = session.transport.recv(timeout=session.limits.block_timeout)
        except TimeoutError:
            return self._handle_timeout(session, pre_block_vars, started)
        except (ConnectionError, OSError) as exc:
            session.dead = True
            raise SessionError(f"worker transport lost mid-block: {exc}") from exc

        if frame["kind"] != "exec_result":
            session.dead = True
            raise SessionError(f"unexpected frame {frame['kind']!r} during exec")

        stdout, out_truncated = truncate_stream(frame["stdout"], session.limits.stdout_cap)
        stderr, err_truncated = truncate_stream(frame["stderr"], session.limits.stderr_cap)
        snapshot = filter_primitives(frame["vars"])
        session.persisted_vars = dict(snapshot)
        duration = float(frame["duration"])
        session.total_duration += duration
        session.last_status = frame["status"]
        return BlockResult(
            status=frame["status"],
            stdout=stdout,
            stderr=stderr,
            stdout_truncated=out_truncated,
            stderr_truncated=err_truncated,
            duration=duration,
            vars_snapshot=snapshot,
        )

    def _handle_timeout(
        self, session: SandboxSession, pre_block_vars: dict[str, Any], started: float
    ) -> BlockResult:
        # Kill the in-flight evaluation, then restart the worker with the
        # pre-block variables, so the session survives one runaway block.
        session.transport.kill()
        elapsed = time.monotonic() - started
        duration = max(elapsed, session.limits.block_timeout)
        try:
            transport = self._factory()
            self._init_worker(transport, session.manifest, session.thresholds, pre_block_vars)
            session.transport = transport
        except Exception:
            session.dead = True
        session.persisted_vars = dict(pre_block_vars)
        session.total_duration += duration
        session.last_status = "timeout"
        return BlockResult(
            status="timeout",
            stdout="",
            stderr=f"block killed after {session.limits.block_timeout}s timeout",
            stdout_truncated=False,
            stderr_truncated=False,
            duration=duration,
            vars_snapshot=dict(pre_block_vars),
        )

    def close_session(self, session: SandboxSession) -> dict[str, Any]:
        """Terminate the worker; idempotent. Returns the final usage report."""
        if not session.closed:
            session.closed = True
            try:
                if session.transport.alive:
                    session.transport.send(make_frame("shutdown"))
            except Exception:
                pass
            session.transport.kill()
        return {
            "session_id": session.session_id,
            "blocks_used": session.blocks_used,
            "total_duration": session.total_duration,
            "last_status": session.last_status,
        }
