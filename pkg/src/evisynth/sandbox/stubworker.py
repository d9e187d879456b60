"""In-process stub worker: speaks the frame protocol end-to-end without a subprocess.

It executes Python blocks in a restricted namespace (blocked builtins stripped,
stdout/stderr captured raw, primitive-only persistence), which keeps the
supervisor's test suite and the scripted end-to-end runs independent of the
out-of-process worker build.
"""

from __future__ import annotations

import io
import queue
import threading
import time
import traceback
from pathlib import Path
from typing import Any

from .protocol import filter_primitives, make_frame, validate_frame

BLOCKED_BUILTINS = ("exec", "eval", "compile", "__import__", "open", "input", "breakpoint")


def restricted_builtins() -> dict[str, Any]:
    import builtins

    table = {name: getattr(builtins, name) for name in dir(builtins) if not name.startswith("_")}
    table["__build_class__"] = builtins.__build_class__
    table["__name__"] = "sandbox"
    for blocked in BLOCKED_BUILTINS:
        table.pop(blocked, None)
    return table


def load_table(path: str | Path) -> dict[str, Any]:
    """Column-oriented (gene x cell-line) table: first column is the row label."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split("\t")
    columns: dict[str, list[float]] = {name: [] for name in header[1:]}
    labels: list[str] = []
    for line in lines[1:]:
        if not line.strip():
            continue
        cells = line.split("\t")
        labels.append(cells[0])
        for name, cell in zip(header[1:], cells[1:]):
            columns[name].append(float(cell))
    return {"labels": labels, "columns": columns}


class StubWorker:
    """Frame-in, frame-out worker with the Table-7-style execution policy."""

    def __init__(self) -> None:
        self._namespace: dict[str, Any] = {}
        self._baseline: frozenset[str] = frozenset()
        self._initialized = False

    def handle(self, frame: dict) -> dict | None:
        validate_frame(frame)
        kind = frame["kind"]
        if kind == "init":
            return self._handle_init(frame)
        if kind == "exec":
            return self._handle_exec(frame)
        if kind == "shutdown":
            return None
        return make_frame("init_failure", error=f"stub cannot handle {kind!r} frames")

    def _handle_init(self, frame: dict) -> dict:
        namespace: dict[str, Any] = {"__builtins__": restricted_builtins()}
        tables: list[str] = []
        for entry in frame["manifest"]:
            try:
                namespace[entry["name"]] = load_table(entry["path"])
            except OSError as exc:
                return make_frame("init_failure", error=f"cannot load table {entry['path']!r}: {exc}")
            tables.append(entry["name"])
        thresholds = dict(frame["thresholds"])
        namespace["THRESHOLDS"] = thresholds
        namespace["sleep"] = time.sleep
        namespace["printerr"] = lambda text: None  # rebound per block
        self._namespace = namespace
        self._baseline = frozenset(namespace)
        for name, value in frame.get("vars", {}).items():
            self._namespace[name] = value
        self._initialized = True
        return make_frame("ready", tables=tables, thresholds=thresholds)

    def _user_vars(self) -> dict[str, Any]:
        # Baseline names (tables, THRESHOLDS, helpers) never persist across
        # sessions, so a reassigned THRESHOLDS cannot leak into the next one.
        return {name: value for name, value in self._namespace.items() if name not in self._baseline}

    def _handle_exec(self, frame: dict) -> dict:
        if not self._initialized:
            return make_frame("init_failure", error="exec before init")
        out, err = io.StringIO(), io.StringIO()

        # Output capture must be namespace-local, not process-global: a
        # redirect of sys.stdout would leak into every other thread while a
        # block runs (or sleeps).
        def block_print(*args: Any, sep: str = " ", end: str = "\n", **_ignored: Any) -> None:
            out.write(sep.join(str(a) for a in args) + end)

        self._namespace["__builtins__"]["print"] = block_print
        self._namespace["printerr"] = lambda text: err.write(str(text))

        status = "ok"
        started = time.monotonic()
        try:
            exec(compile(frame["code"], "<block>", "exec"), self._namespace)  # noqa: S102
        except BaseException:
            status = "error"
            err.write(traceback.format_exc(limit=2))
        duration = time.monotonic() - started
        user = self._user_vars()
        return make_frame(
            "exec_result",
            status=status,
            stdout=out.getvalue(),
            stderr=err.getvalue(),
            vars=filter_primitives(user),
            duration=duration,
        )


class StubTransport:
    """Runs a StubWorker on a daemon thread behind the supervisor's transport surface.

    kill() abandons the thread (a runaway block keeps sleeping harmlessly) and
    the supervisor restarts with a fresh transport, mirroring the process-kill
    semantics of the subprocess transport.
    """

    def __init__(self) -> None:
        self._worker = StubWorker()
        self._inbox: queue.Queue[dict] = queue.Queue()
        self._outbox: queue.Queue[dict] = queue.Queue()
        self._alive = True
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _loop(self) -> None:
        while self._alive:
            try:
                frame = self._inbox.get(timeout=0.1)
            except queue.Empty:
                continue
            reply = self._worker.handle(frame)
            if reply is None:
                self._alive = False
                return
            self._outbox.put(reply)

    def send(self, frame: dict) -> None:
        if not self._alive:
            raise ConnectionError("stub transport is dead")
        self._inbox.put(frame)

    def recv(self, timeout: float) -> dict:
        try:
            return self._outbox.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError(f"no frame within {timeout}s") from None

    def kill(self) -> None:
        self._alive = False

    @property
    def alive(self) -> bool:
        return self._alive
