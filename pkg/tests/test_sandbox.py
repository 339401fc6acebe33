"""Tests for output comparison, the table-driven stub, and the process
client. Process tests drive a tiny scripted runner living in tmp_path, so
they exercise the real pipe protocol without the external runner."""

import sys
import textwrap

import pytest

from stepprm.sandbox import (
    OUTPUT_CAP_BYTES,
    ProcessSandbox,
    SandboxProtocolError,
    SandboxRequest,
    SandboxUnavailableError,
    StubRule,
    StubSandbox,
    TestCase,
    TestResult,
    encode_request,
    normalize_output,
    outputs_match,
    truncate_output,
)


def _request(program: str, tests, comparison: str = "normalized") -> SandboxRequest:
    return SandboxRequest(solution_source=program, tests=tuple(tests), comparison=comparison)


def test_normalize_strips_trailing_space_and_newlines() -> None:
    assert normalize_output("5 \n") == "5"
    assert normalize_output("a\nb\n\n\n") == "a\nb"
    assert normalize_output("a  \n  b\t\n") == "a\n  b"
    assert normalize_output("") == ""


def test_normalize_preserves_interior_blank_lines() -> None:
    assert normalize_output("a\n\nb\n") == "a\n\nb"


def test_outputs_match_exact_vs_normalized() -> None:
    assert outputs_match("5 \n", "5", "normalized")
    assert not outputs_match("5 \n", "5", "exact")
    assert outputs_match("5", "5", "exact")
    with pytest.raises(ValueError):
        outputs_match("a", "a", "fuzzy")


def test_truncate_output_caps_at_8kib() -> None:
    text = truncate_output("x" * (OUTPUT_CAP_BYTES + 100))
    assert len(text.encode("utf-8")) == OUTPUT_CAP_BYTES
    assert truncate_output("short") == "short"


def test_truncate_output_never_splits_code_points() -> None:
    # Snowman is 3 UTF-8 bytes; the cap lands mid-character.
    text = truncate_output("☃" * (OUTPUT_CAP_BYTES // 3 + 10))
    assert text.encode("utf-8").decode("utf-8") == text
    assert len(text.encode("utf-8")) <= OUTPUT_CAP_BYTES


def test_testcase_validation() -> None:
    with pytest.raises(ValueError):
        TestCase(test_id="t", mode="fuzzy")
    with pytest.raises(ValueError):
        TestCase(test_id="t", mode="assertion")  # missing assertion source
    with pytest.raises(ValueError):
        TestCase(test_id="t", mode="assertion", input="assert f()", expected_output="1")
    with pytest.raises(ValueError):
        TestCase(test_id="t", time_limit_ms=50)
    TestCase(test_id="t", time_limit_ms=100)
    TestCase(test_id="t", mode="assertion", input="assert add(1, 1) == 2")


def test_request_validation_and_limit_fallback() -> None:
    with pytest.raises(ValueError):
        SandboxRequest(solution_source="x", tests=())
    with pytest.raises(ValueError):
        SandboxRequest(solution_source="x", tests=(TestCase(test_id="t"),), time_limit_ms=99)
    with pytest.raises(ValueError):
        SandboxRequest(solution_source="x", tests=(TestCase(test_id="t"),), comparison="fuzzy")
    req = SandboxRequest(
        solution_source="x",
        tests=(TestCase(test_id="a"), TestCase(test_id="b", time_limit_ms=500)),
        time_limit_ms=3000,
    )
    assert req.limit_for(req.tests[0]) == 3000
    assert req.limit_for(req.tests[1]) == 500


def test_testresult_validates_status() -> None:
    with pytest.raises(ValueError):
        TestResult(test_id="t", status="malformed")


def test_encode_request_resolves_per_test_limits() -> None:
    req = _request("prog", [TestCase(test_id="a"), TestCase(test_id="b", time_limit_ms=150)])
    wire = encode_request(req)
    assert wire["solution_source"] == "prog"
    assert [t["time_limit_ms"] for t in wire["tests"]] == [2000, 150]
    assert wire["comparison"] == "normalized"


def test_stub_first_matching_rule_wins() -> None:
    stub = StubSandbox(rules=[StubRule("alpha", "pass"), StubRule("beta", "error")])
    tests = [TestCase(test_id="t1", expected_output="1\n")]
    assert stub.run(_request("alpha beta", tests)).results[0].status == "pass"
    assert stub.run(_request("only beta", tests)).results[0].status == "error"
    assert stub.run(_request("neither", tests)).results[0].status == "fail"


def test_stub_never_executes_program_text() -> None:
    stub = StubSandbox(rules=[StubRule("MARK", "pass")])
    program = "MARK\nraise SystemExit(99)\n"
    result = stub.run(_request(program, [TestCase(test_id="t1", expected_output="ok")])).results[0]
    assert result.status == "pass"
    assert result.stdout == "ok"


def test_stub_scripted_stdout_uses_comparison() -> None:
    stub = StubSandbox(
        rules=[StubRule("MARK", "pass")],
        scripted={("MARK", "t1"): "5 \n", ("MARK", "t2"): "6\n"},
    )
    tests = [
        TestCase(test_id="t1", expected_output="5"),
        TestCase(test_id="t2", expected_output="5"),
        TestCase(test_id="t3", expected_output="7"),
    ]
    results = stub.run(_request("has MARK", tests)).results
    assert [r.status for r in results] == ["pass", "fail", "pass"]
    assert results[0].stdout == "5 \n"


def test_stub_scripted_exact_comparison_diverges() -> None:
    stub = StubSandbox(rules=[StubRule("MARK", "pass")], scripted={("MARK", "t1"): "5 "})
    tests = [TestCase(test_id="t1", expected_output="5")]
    assert stub.run(_request("MARK", tests, comparison="exact")).results[0].status == "fail"
    assert stub.run(_request("MARK", tests, comparison="normalized")).results[0].status == "pass"


def test_stub_truncates_scripted_output() -> None:
    stub = StubSandbox(
        rules=[StubRule("MARK", "pass")],
        scripted={("MARK", "t1"): "y" * (OUTPUT_CAP_BYTES * 2)},
    )
    result = stub.run(_request("MARK", [TestCase(test_id="t1", expected_output="n")])).results[0]
    assert len(result.stdout.encode("utf-8")) == OUTPUT_CAP_BYTES


ECHO_RUNNER = textwrap.dedent(
    """
    import json, sys
    print(json.dumps({"runner_version": "fake-echo", "protocol_version": 1}), flush=True)
    for line in sys.stdin:
        req = json.loads(line)
        results = []
        for test in req["tests"]:
            results.append({
                "test_id": test["id"],
                "status": "pass" if test["input"].strip() == "ok" else "fail",
                "stdout": test["expected_output"],
                "stderr": "",
                "duration_ms": 3,
            })
        print(json.dumps({"results": results, "runner_version": "fake-echo"}), flush=True)
    """
)


def _write_runner(tmp_path, body: str) -> list[str]:
    path = tmp_path / "runner.py"
    path.write_text(body)
    return [sys.executable, str(path)]


def test_process_sandbox_round_trip(tmp_path) -> None:
    with ProcessSandbox(_write_runner(tmp_path, ECHO_RUNNER)) as box:
        assert box.runner_version == "fake-echo"
        response = box.run(
            _request(
                "print(1)",
                [
                    TestCase(test_id="a", input="ok", expected_output="1\n"),
                    TestCase(test_id="b", input="nope", expected_output=""),
                ],
            )
        )
    assert [r.status for r in response.results] == ["pass", "fail"]
    assert response.results[0].stdout == "1\n"
    assert response.results[0].duration_ms == 3
    assert response.runner_version == "fake-echo"


def test_process_sandbox_rejects_bad_handshake(tmp_path) -> None:
    body = 'print(\'{"protocol_version": 99}\', flush=True)\nimport time; time.sleep(5)\n'
    with pytest.raises(SandboxUnavailableError):
        ProcessSandbox(_write_runner(tmp_path, body))


def test_process_sandbox_detects_immediate_exit(tmp_path) -> None:
    with pytest.raises(SandboxUnavailableError):
        ProcessSandbox(_write_runner(tmp_path, "import sys; sys.exit(7)\n"))


def test_process_sandbox_times_out_on_silent_runner(tmp_path) -> None:
    body = textwrap.dedent(
        """
        import json, sys, time
        print(json.dumps({"runner_version": "mute", "protocol_version": 1}), flush=True)
        sys.stdin.readline()
        time.sleep(60)
        """
    )
    box = ProcessSandbox(_write_runner(tmp_path, body), response_grace_s=0.3)
    with pytest.raises(SandboxUnavailableError):
        box.run(_request("x", [TestCase(test_id="t", time_limit_ms=100)]))


def test_process_sandbox_raises_on_mismatched_id(tmp_path) -> None:
    body = textwrap.dedent(
        """
        import json, sys
        print(json.dumps({"runner_version": "liar", "protocol_version": 1}), flush=True)
        for line in sys.stdin:
            print(json.dumps({"results": [{"test_id": "WRONG", "status": "pass", "stdout": ""}]}), flush=True)
        """
    )
    with ProcessSandbox(_write_runner(tmp_path, body)) as box:
        with pytest.raises(SandboxProtocolError):
            box.run(_request("x", [TestCase(test_id="t")]))


def test_process_sandbox_surfaces_malformed_rejection(tmp_path) -> None:
    body = textwrap.dedent(
        """
        import json, sys
        print(json.dumps({"runner_version": "strict", "protocol_version": 1}), flush=True)
        for line in sys.stdin:
            print(json.dumps({"error": "malformed_request", "detail": "nope"}), flush=True)
        """
    )
    with ProcessSandbox(_write_runner(tmp_path, body)) as box:
        with pytest.raises(SandboxProtocolError):
            box.run(_request("x", [TestCase(test_id="t")]))


def test_process_sandbox_rejects_wrong_result_count(tmp_path) -> None:
    body = textwrap.dedent(
        """
        import json, sys
        print(json.dumps({"runner_version": "short", "protocol_version": 1}), flush=True)
        for line in sys.stdin:
            print(json.dumps({"results": []}), flush=True)
        """
    )
    with ProcessSandbox(_write_runner(tmp_path, body)) as box:
        with pytest.raises(SandboxProtocolError):
            box.run(_request("x", [TestCase(test_id="t")]))
