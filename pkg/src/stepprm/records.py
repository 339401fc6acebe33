"""Problem records and line-delimited JSON persistence.

Every artifact file is JSONL with deterministic serialization (sorted keys,
compact separators) so identical inputs produce byte-identical files. Writes
go through a temp file and an atomic rename.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .sandbox import TestCase

SCHEMA_VERSION = 1

PROVENANCES = ("llm", "mock", "fixture")


class JsonLineError(ValueError):
    """A JSONL line failed to parse or validate; carries the line number."""

    def __init__(self, path: str | Path, lineno: int, message: str) -> None:
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno
        self.reason = message


@dataclass(frozen=True)
class Problem:
    problem_id: str
    statement: str
    tests: tuple[TestCase, ...]
    difficulty: str = ""

    def __post_init__(self) -> None:
        if not self.problem_id:
            raise ValueError("problem_id must be non-empty")
        if not self.statement:
            raise ValueError("statement must be non-empty")
        if not self.tests:
            raise ValueError("tests must be non-empty")


def encode_test_case(test: TestCase) -> dict:
    record = {"id": test.test_id, "mode": test.mode, "input": test.input}
    if test.mode == "stdin_stdout":
        record["expected_output"] = test.expected_output
    if test.time_limit_ms is not None:
        record["time_limit_ms"] = test.time_limit_ms
    return record


def decode_test_case(record: dict) -> TestCase:
    if not isinstance(record, dict):
        raise ValueError("test case must be an object")
    missing = {"id", "mode"} - set(record)
    if missing:
        raise ValueError(f"test case missing fields: {sorted(missing)}")
    return TestCase(
        test_id=str(record["id"]),
        mode=str(record["mode"]),
        input=str(record.get("input", "")),
        expected_output=str(record.get("expected_output", "")),
        time_limit_ms=int(record["time_limit_ms"]) if "time_limit_ms" in record else None,
    )


def problem_to_record(problem: Problem) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "problem_id": problem.problem_id,
        "statement": problem.statement,
        "difficulty": problem.difficulty,
        "tests": [encode_test_case(t) for t in problem.tests],
    }


def problem_from_record(record: dict) -> Problem:
    missing = {"problem_id", "statement", "tests"} - set(record)
    if missing:
        raise ValueError(f"problem missing fields: {sorted(missing)}")
    tests = record["tests"]
    if not isinstance(tests, list) or not tests:
        raise ValueError("tests must be a non-empty list")
    return Problem(
        problem_id=str(record["problem_id"]),
        statement=str(record["statement"]),
        difficulty=str(record.get("difficulty", "")),
        tests=tuple(decode_test_case(t) for t in tests),
    )


def dumps_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yields (lineno, object) per non-blank line; JsonLineError on bad lines."""
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise JsonLineError(path, lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise JsonLineError(path, lineno, "line is not a JSON object")
            yield lineno, obj


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see a
    partial file and reruns replace atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    atomic_write_text(path, "".join(dumps_record(r) + "\n" for r in records))


def load_problems(path: str | Path) -> list[Problem]:
    problems = []
    for lineno, record in read_jsonl(path):
        try:
            problems.append(problem_from_record(record))
        except ValueError as exc:
            raise JsonLineError(path, lineno, str(exc)) from exc
    return problems
