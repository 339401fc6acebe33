"""Tests for problem parsing and JSONL persistence."""

import json

import pytest

from stepprm.records import (
    JsonLineError,
    Problem,
    atomic_write_text,
    dumps_record,
    load_problems,
    problem_from_record,
    problem_to_record,
    read_jsonl,
    decode_test_case,
    write_jsonl,
)
from stepprm.sandbox import TestCase


def _problem_record(pid: str = "p1") -> dict:
    return {
        "problem_id": pid,
        "statement": "Print the sum of two integers.",
        "difficulty": "easy",
        "tests": [
            {"id": "t1", "mode": "stdin_stdout", "input": "1 2\n", "expected_output": "3\n"},
            {"id": "t2", "mode": "assertion", "input": "assert solve(1, 2) == 3"},
        ],
    }


def test_problem_round_trip() -> None:
    problem = problem_from_record(_problem_record())
    assert problem.problem_id == "p1"
    assert problem.tests[0].mode == "stdin_stdout"
    assert problem.tests[1].mode == "assertion"
    again = problem_from_record(problem_to_record(problem))
    assert again == problem


def test_problem_missing_fields() -> None:
    record = _problem_record()
    del record["tests"]
    with pytest.raises(ValueError, match="tests"):
        problem_from_record(record)
    with pytest.raises(ValueError):
        problem_from_record({"problem_id": "p", "statement": "s", "tests": []})


def test_problem_requires_nonempty_ids() -> None:
    with pytest.raises(ValueError):
        Problem(problem_id="", statement="s", tests=(TestCase(test_id="t"),))
    with pytest.raises(ValueError):
        Problem(problem_id="p", statement="", tests=(TestCase(test_id="t"),))


def test_test_case_record_validation() -> None:
    with pytest.raises(ValueError, match="missing"):
        decode_test_case({"id": "t"})
    with pytest.raises(ValueError):
        decode_test_case("not an object")
    case = decode_test_case({"id": "t", "mode": "stdin_stdout", "time_limit_ms": 500})
    assert case.time_limit_ms == 500


def test_dumps_record_is_deterministic() -> None:
    a = dumps_record({"b": 1, "a": [2, 3]})
    b = dumps_record({"a": [2, 3], "b": 1})
    assert a == b == '{"a":[2,3],"b":1}'


def test_read_jsonl_reports_line_numbers(tmp_path) -> None:
    path = tmp_path / "rows.jsonl"
    path.write_text('{"ok": 1}\n\nnot json\n')
    with pytest.raises(JsonLineError) as err:
        list(read_jsonl(path))
    assert err.value.lineno == 3


def test_read_jsonl_rejects_non_objects(tmp_path) -> None:
    path = tmp_path / "rows.jsonl"
    path.write_text("[1, 2]\n")
    with pytest.raises(JsonLineError):
        list(read_jsonl(path))


def test_write_jsonl_round_trip_and_rerun_byte_identical(tmp_path) -> None:
    path = tmp_path / "out.jsonl"
    rows = [{"z": 1, "a": "x"}, {"n": [1, 2]}]
    write_jsonl(path, rows)
    first = path.read_bytes()
    assert [obj for _, obj in read_jsonl(path)] == rows
    write_jsonl(path, rows)
    assert path.read_bytes() == first


def test_atomic_write_leaves_no_temp_files(tmp_path) -> None:
    path = tmp_path / "sub" / "file.txt"
    atomic_write_text(path, "hello")
    assert path.read_text() == "hello"
    assert [p.name for p in path.parent.iterdir()] == ["file.txt"]


def test_load_problems_wraps_validation_with_line_numbers(tmp_path) -> None:
    path = tmp_path / "problems.jsonl"
    good = json.dumps(_problem_record("a"))
    bad = json.dumps({"problem_id": "b", "statement": "s"})
    path.write_text(good + "\n" + bad + "\n")
    with pytest.raises(JsonLineError) as err:
        load_problems(path)
    assert err.value.lineno == 2
    assert "tests" in str(err.value)
