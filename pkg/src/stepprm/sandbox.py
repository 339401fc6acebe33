"""Sandboxed test execution interfaces.

Two implementations of one contract, run(SandboxRequest) -> SandboxResponse:

  StubSandbox     table-driven, never executes code; rules map a marker
                  substring of the program to a status, optionally with a
                  scripted stdout per (marker, test id) that is compared
                  against the expected output.
  ProcessSandbox  client for an external runner child process speaking
                  JSON lines over stdin/stdout: a handshake line at startup,
                  then one response line per request line, in order.

A test case either feeds stdin and compares stdout (exact, or normalized by
stripping trailing whitespace per line and trailing newlines) or runs
assertion source after the program and passes iff nothing raises. stdout and
stderr payloads are capped at 8 KiB of UTF-8.
"""

from __future__ import annotations

import json
import os
import select
import subprocess
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

PROTOCOL_VERSION = 1
STATUSES = ("pass", "fail", "error", "timeout")
MODES = ("stdin_stdout", "assertion")
COMPARISONS = ("normalized", "exact")
OUTPUT_CAP_BYTES = 8192
MIN_TIME_LIMIT_MS = 100
MAX_TIME_LIMIT_MS = 60000


class SandboxUnavailableError(RuntimeError):
    """The runner process could not be started or stopped responding."""


class SandboxProtocolError(RuntimeError):
    """The runner rejected a request or sent a response violating the protocol."""


def _check_time_limit(ms: int) -> None:
    if not MIN_TIME_LIMIT_MS <= ms <= MAX_TIME_LIMIT_MS:
        raise ValueError(f"time_limit_ms {ms} outside [{MIN_TIME_LIMIT_MS}, {MAX_TIME_LIMIT_MS}]")


@dataclass(frozen=True)
class TestCase:
    """One test: stdin_stdout feeds input and checks stdout; assertion runs
    the input as assertion source after the program."""

    __test__ = False  # not a pytest class despite the name

    test_id: str
    mode: str = "stdin_stdout"
    input: str = ""
    expected_output: str = ""
    time_limit_ms: int | None = None  # falls back to the request default

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "assertion":
            if not self.input.strip():
                raise ValueError("assertion mode requires assertion source in input")
            if self.expected_output:
                raise ValueError("assertion mode takes no expected_output")
        if self.time_limit_ms is not None:
            _check_time_limit(self.time_limit_ms)


@dataclass(frozen=True)
class SandboxRequest:
    solution_source: str
    tests: tuple[TestCase, ...]
    time_limit_ms: int = 2000
    comparison: str = "normalized"

    def __post_init__(self) -> None:
        if not self.tests:
            raise ValueError("at least one test is required")
        _check_time_limit(self.time_limit_ms)
        if self.comparison not in COMPARISONS:
            raise ValueError(f"comparison must be one of {COMPARISONS}")

    def limit_for(self, test: TestCase) -> int:
        return test.time_limit_ms if test.time_limit_ms is not None else self.time_limit_ms


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest class despite the name

    test_id: str
    status: str
    stdout: str = ""
    stderr: str = ""
    duration_ms: int = 0

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise ValueError(f"status must be one of {STATUSES}")


@dataclass(frozen=True)
class SandboxResponse:
    results: tuple[TestResult, ...]
    runner_version: str = ""


def normalize_output(text: str) -> str:
    """Strip trailing whitespace from each line and trailing newlines."""
    lines = [line.rstrip() for line in text.split("\n")]
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines)


def outputs_match(actual: str, expected: str, comparison: str) -> bool:
    if comparison == "exact":
        return actual == expected
    if comparison == "normalized":
        return normalize_output(actual) == normalize_output(expected)
    raise ValueError(f"comparison must be one of {COMPARISONS}")


def truncate_output(text: str) -> str:
    """Cap at OUTPUT_CAP_BYTES of UTF-8, never splitting a code point."""
    data = text.encode("utf-8")
    if len(data) <= OUTPUT_CAP_BYTES:
        return text
    return data[:OUTPUT_CAP_BYTES].decode("utf-8", errors="ignore")


class Sandbox(Protocol):
    def run(self, request: SandboxRequest) -> SandboxResponse: ...


@dataclass(frozen=True)
class StubRule:
    marker: str
    status: str

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise ValueError(f"status must be one of {STATUSES}")
        if not self.marker:
            raise ValueError("marker must be non-empty")


@dataclass
class StubSandbox:
    """Deterministic fake: the first rule whose marker appears in the program
    decides every test's status; a scripted stdout keyed (marker, test id)
    overrides the status with a real output comparison. No code is ever
    executed, so candidate programs are inert text."""

    rules: list[StubRule] = field(default_factory=list)
    scripted: dict[tuple[str, str], str] = field(default_factory=dict)
    default_status: str = "fail"
    call_count: int = 0

    def __post_init__(self) -> None:
        if self.default_status not in STATUSES:
            raise ValueError(f"default_status must be one of {STATUSES}")

    def run(self, request: SandboxRequest) -> SandboxResponse:
        self.call_count += 1
        matched = next((r for r in self.rules if r.marker in request.solution_source), None)
        results = []
        for test in request.tests:
            if matched is not None and (matched.marker, test.test_id) in self.scripted:
                raw_out = self.scripted[(matched.marker, test.test_id)]
                status = "pass" if outputs_match(raw_out, test.expected_output, request.comparison) else "fail"
            else:
                status = matched.status if matched is not None else self.default_status
                raw_out = test.expected_output if status == "pass" else ""
            results.append(TestResult(test_id=test.test_id, status=status, stdout=truncate_output(raw_out)))
        return SandboxResponse(results=tuple(results), runner_version="stub")


def encode_request(request: SandboxRequest) -> dict:
    return {
        "solution_source": request.solution_source,
        "tests": [
            {
                "id": t.test_id,
                "mode": t.mode,
                "input": t.input,
                "expected_output": t.expected_output,
                "time_limit_ms": request.limit_for(t),
            }
            for t in request.tests
        ],
        "time_limit_ms": request.time_limit_ms,
        "comparison": request.comparison,
    }


class _LineReader:
    """Line reader over a pipe fd with a deadline; avoids blocking readline."""

    def __init__(self, fd: int) -> None:
        self._fd = fd
        self._buf = b""

    def read_line(self, timeout_s: float) -> bytes | None:
        """One line without its newline, None on EOF before a full line."""
        deadline = time.monotonic() + timeout_s
        while True:
            newline = self._buf.find(b"\n")
            if newline >= 0:
                line, self._buf = self._buf[:newline], self._buf[newline + 1 :]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError("no line before deadline")
            ready, _, _ = select.select([self._fd], [], [], remaining)
            if not ready:
                raise TimeoutError("no line before deadline")
            chunk = os.read(self._fd, 65536)
            if not chunk:
                return None
            self._buf += chunk


class ProcessSandbox:
    """Spawns the runner command and drives it over the line protocol."""

    def __init__(
        self,
        command: Sequence[str],
        startup_timeout_s: float = 10.0,
        response_grace_s: float = 10.0,
    ) -> None:
        self._grace = response_grace_s
        try:
            self._proc = subprocess.Popen(
                list(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as exc:
            raise SandboxUnavailableError(f"cannot start runner: {exc}") from exc
        self._reader = _LineReader(self._proc.stdout.fileno())
        try:
            line = self._reader.read_line(startup_timeout_s)
        except TimeoutError:
            self.close()
            raise SandboxUnavailableError("runner sent no handshake before the deadline")
        if line is None:
            self.close()
            raise SandboxUnavailableError("runner exited before the handshake")
        try:
            handshake = json.loads(line)
        except json.JSONDecodeError as exc:
            self.close()
            raise SandboxUnavailableError(f"handshake is not JSON: {exc}") from exc
        if not isinstance(handshake, dict) or handshake.get("protocol_version") != PROTOCOL_VERSION:
            self.close()
            raise SandboxUnavailableError(f"unsupported handshake: {handshake!r}")
        self.runner_version = str(handshake.get("runner_version", ""))

    def run(self, request: SandboxRequest) -> SandboxResponse:
        if self._proc.poll() is not None:
            raise SandboxUnavailableError(f"runner exited with code {self._proc.returncode}")
        try:
            self._proc.stdin.write(json.dumps(encode_request(request)).encode("utf-8") + b"\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise SandboxUnavailableError(f"runner pipe closed: {exc}") from exc

        budget_ms = sum(request.limit_for(t) for t in request.tests)
        try:
            line = self._reader.read_line(budget_ms / 1000.0 + self._grace)
        except TimeoutError:
            self.close()
            raise SandboxUnavailableError("runner sent no response before the deadline")
        if line is None:
            raise SandboxUnavailableError("runner exited mid-run")
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SandboxProtocolError(f"response is not JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise SandboxProtocolError(f"response is not an object: {payload!r}")
        if payload.get("error") == "malformed_request":
            raise SandboxProtocolError(f"runner rejected the request: {payload.get('detail', '')}")
        raw_results = payload.get("results")
        if not isinstance(raw_results, list) or len(raw_results) != len(request.tests):
            raise SandboxProtocolError("results missing or wrong length")
        results = []
        for test, raw in zip(request.tests, raw_results):
            if not isinstance(raw, dict) or raw.get("test_id") != test.test_id:
                raise SandboxProtocolError(f"result id mismatch for test {test.test_id!r}")
            status = raw.get("status")
            if status not in STATUSES:
                raise SandboxProtocolError(f"unknown status {status!r}")
            results.append(
                TestResult(
                    test_id=test.test_id,
                    status=status,
                    stdout=str(raw.get("stdout", "")),
                    stderr=str(raw.get("stderr", "")),
                    duration_ms=int(raw.get("duration_ms", 0)),
                )
            )
        return SandboxResponse(results=tuple(results), runner_version=str(payload.get("runner_version", "")))

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        if self._proc.stdin:
            self._proc.stdin.close()
        if self._proc.stdout:
            self._proc.stdout.close()

    def __enter__(self) -> "ProcessSandbox":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
