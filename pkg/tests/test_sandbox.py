from __future__ import annotations

import json
import time

import pytest
from hypothesis import given, strategies as st

from evisynth.sandbox.protocol import (
    FrameError,
    canonical_json,
    decode_frame,
    encode_frame,
    filter_primitives,
    is_primitive,
    make_frame,
    validate_frame,
)
from evisynth.sandbox.stubworker import BLOCKED_BUILTINS, StubWorker
from evisynth.sandbox.supervisor import (
    DEFAULT_THRESHOLDS,
    SandboxLimits,
    SessionError,
    TRUNCATION_MARKER,
    truncate_stream,
)
from evisynth.toolkit.entities import data_dir


class TestProtocol:
    def test_frame_round_trip(self):
        frame = make_frame("exec", code="print(1)")
        decoded, rest = decode_frame(encode_frame(frame))
        assert decoded == frame
        assert rest == b""

    def test_unknown_kind_rejected(self):
        with pytest.raises(FrameError):
            validate_frame({"v": 1, "kind": "wat"})

    def test_missing_field_rejected(self):
        with pytest.raises(FrameError, match="code"):
            validate_frame({"v": 1, "kind": "exec"})

    def test_version_checked(self):
        with pytest.raises(FrameError, match="version"):
            validate_frame({"v": 2, "kind": "shutdown"})

    def test_canonical_json_sorted_compact(self):
        assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'

    def test_conformance_framing_vectors(self):
        vectors = json.loads((data_dir() / "conformance" / "wire_vectors.json").read_text())
        for entry in vectors["framing"]:
            assert encode_frame(entry["frame"]).hex() == entry["hex"]
            decoded, _ = decode_frame(bytes.fromhex(entry["hex"]))
            assert decoded == entry["frame"]

    @given(
        st.recursive(
            st.one_of(
                st.text(max_size=10),
                st.integers(),
                st.booleans(),
                st.floats(allow_nan=False, allow_infinity=False),
            ),
            lambda children: st.one_of(
                st.lists(children, max_size=4),
                st.dictionaries(st.text(max_size=5), children, max_size=4),
            ),
            max_leaves=12,
        )
    )
    def test_primitive_filter_accepts_all_primitives(self, value):
        assert is_primitive(value)
        assert filter_primitives({"v": value}) == {"v": value}

    def test_primitive_filter_drops_non_primitives(self):
        class Thing:
            pass

        variables = {"ok": 1, "obj": Thing(), "fn": len, "none": None, "nested": [1, {"a": Thing()}]}
        assert filter_primitives(variables) == {"ok": 1}


class TestStubWorkerConformance:
    def test_session_vectors(self):
        vectors = json.loads((data_dir() / "conformance" / "wire_vectors.json").read_text())
        worker = StubWorker()
        for step in vectors["session"]:
            reply = worker.handle(step["send"])
            expect = step["expect"]
            if expect is None:
                assert reply is None
                continue
            assert reply["kind"] == expect["kind"]
            if "status" in expect:
                assert reply["status"] == expect["status"]
            if "stdout" in expect:
                assert reply["stdout"] == expect["stdout"]
            if "tables" in expect:
                assert reply["tables"] == expect["tables"]
            if "thresholds" in expect:
                assert reply["thresholds"] == expect["thresholds"]
            if "vars_contain" in expect:
                for name, value in expect["vars_contain"].items():
                    assert reply["vars"][name] == value
            if "error_contains" in expect:
                assert expect["error_contains"] in reply["stderr"]

    def test_all_blocked_builtins_raise_name_errors(self):
        worker = StubWorker()
        worker.handle(make_frame("init", manifest=[], thresholds={}, vars={}))
        for name in BLOCKED_BUILTINS:
            reply = worker.handle(make_frame("exec", code=f"{name}()"))
            assert reply["status"] == "error"
            assert name in reply["stderr"]
            assert "NameError" in reply["stderr"] or "not defined" in reply["stderr"]

    def test_bad_manifest_path_init_failure(self):
        worker = StubWorker()
        reply = worker.handle(
            make_frame("init", manifest=[{"name": "t", "path": "/nonexistent/table.tsv"}], thresholds={}, vars={})
        )
        assert reply["kind"] == "init_failure"
        assert "/nonexistent/table.tsv" in reply["error"]

    def test_worker_survives_crashing_exec(self):
        worker = StubWorker()
        worker.handle(make_frame("init", manifest=[], thresholds={}, vars={}))
        crash = worker.handle(make_frame("exec", code="raise RuntimeError('boom')"))
        assert crash["status"] == "error"
        after = worker.handle(make_frame("exec", code="z = 5"))
        assert after["status"] == "ok"
        assert after["vars"]["z"] == 5


class TestLimits:
    def test_defaults_match_contract(self):
        limits = SandboxLimits()
        assert (limits.block_timeout, limits.max_blocks, limits.stdout_cap, limits.stderr_cap) == (
            600.0,
            12,
            8000,
            4000,
        )

    def test_nonpositive_limit_rejected(self):
        with pytest.raises(SessionError):
            SandboxLimits(block_timeout=0)

    def test_default_thresholds_nine_constants(self):
        assert DEFAULT_THRESHOLDS == {
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

    @given(st.integers(min_value=0, max_value=20000), st.sampled_from([8000, 4000, 100]))
    def test_truncation_cap_exactness(self, n, cap):
        raw = "x" * n
        emitted, truncated = truncate_stream(raw, cap)
        if n <= cap:
            assert emitted == raw and not truncated
        else:
            marker = TRUNCATION_MARKER.format(cap=cap)
            assert truncated
            assert emitted == raw[:cap] + marker
            assert len(emitted) == cap + len(marker)


class TestSupervisorSessions:
    def test_open_session_defaults(self, stub_supervisor):
        session = stub_supervisor.open_session()
        assert session.limits == SandboxLimits()
        assert session.thresholds == DEFAULT_THRESHOLDS
        assert session.blocks_used == 0
        stub_supervisor.close_session(session)

    def test_open_session_with_manifest(self, stub_supervisor):
        tables_dir = data_dir() / "tables"
        manifest = [{"name": p.stem, "path": str(p)} for p in sorted(tables_dir.glob("*.tsv"))]
        session = stub_supervisor.open_session(manifest=manifest)
        assert "crispr_gene_effect" in session.tables
        result = stub_supervisor.execute_block(session, "print(len(crispr_gene_effect['labels']))")
        assert result.stdout.strip() == "8"
        stub_supervisor.close_session(session)

    def test_empty_manifest_valid(self, stub_supervisor):
        session = stub_supervisor.open_session(manifest=())
        assert session.tables == ()
        stub_supervisor.close_session(session)

    def test_stdout_truncated_at_cap(self, stub_supervisor):
        session = stub_supervisor.open_session()
        result = stub_supervisor.execute_block(session, "print('x' * 10000, end='')")
        marker = TRUNCATION_MARKER.format(cap=8000)
        assert result.stdout == "x" * 8000 + marker
        assert result.stdout_truncated
        stub_supervisor.close_session(session)

    def test_thirteenth_block_refused(self, stub_supervisor):
        session = stub_supervisor.open_session()
        for i in range(12):
            assert stub_supervisor.execute_block(session, f"a{i} = {i}").status == "ok"
        result = stub_supervisor.execute_block(session, "a12 = 12")
        assert result.status == "refused"
        assert session.blocks_used == 12
        stub_supervisor.close_session(session)

    def test_vars_persist_between_blocks(self, stub_supervisor):
        session = stub_supervisor.open_session()
        first = stub_supervisor.execute_block(session, "x = 3")
        assert first.vars_snapshot.get("x") == 3
        second = stub_supervisor.execute_block(session, "print(x)")
        assert second.stdout == "3\n"
        assert second.vars_snapshot.get("x") == 3
        stub_supervisor.close_session(session)

    def test_non_primitive_assignment_dropped(self, stub_supervisor):
        session = stub_supervisor.open_session()
        result = stub_supervisor.execute_block(session, "f = lambda: 1\nkeep = 'yes'")
        assert result.status == "ok"
        assert "f" not in result.vars_snapshot
        assert result.vars_snapshot.get("keep") == "yes"
        stub_supervisor.close_session(session)

    def test_timeout_kills_restarts_and_reverts_vars(self, stub_supervisor):
        limits = SandboxLimits(block_timeout=1.0)
        session = stub_supervisor.open_session(limits=limits)
        stub_supervisor.execute_block(session, "x = 7")
        started = time.monotonic()
        result = stub_supervisor.execute_block(session, "x = 8\nsleep(2)")
        elapsed = time.monotonic() - started
        assert result.status == "timeout"
        assert result.duration >= limits.block_timeout
        assert elapsed < 6.0
        assert session.persisted_vars.get("x") == 7  # pre-block snapshot restored
        follow_up = stub_supervisor.execute_block(session, "print(x)")
        assert follow_up.stdout == "7\n"
        assert session.blocks_used == 3
        stub_supervisor.close_session(session)

    def test_close_idempotent_and_reports_usage(self, stub_supervisor):
        session = stub_supervisor.open_session()
        stub_supervisor.execute_block(session, "a = 1")
        stub_supervisor.execute_block(session, "b = 2")
        report = stub_supervisor.close_session(session)
        assert report["blocks_used"] == 2
        again = stub_supervisor.close_session(session)
        assert again["blocks_used"] == 2

    def test_close_after_timeout_reports_last_status(self, stub_supervisor):
        session = stub_supervisor.open_session(limits=SandboxLimits(block_timeout=1.0))
        stub_supervisor.execute_block(session, "sleep(2)")
        report = stub_supervisor.close_session(session)
        assert report["last_status"] == "timeout"

    def test_execute_on_closed_session_rejected(self, stub_supervisor):
        session = stub_supervisor.open_session()
        stub_supervisor.close_session(session)
        with pytest.raises(SessionError):
            stub_supervisor.execute_block(session, "x = 1")
