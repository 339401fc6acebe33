"""Decompose candidate programs into function-level steps.

Candidates follow the modular-code prompt: top-level function definitions (or
methods of a single wrapper class), high-level entry function first, a
docstring per function. Decomposition is an indentation-aware line scanner,
deliberately not a full grammar; candidates must still compile as Python,
which is checked up front with compile().

Spans are half-open byte ranges into the program text. The preamble, the
steps, and the trailer partition the text, so every non-whitespace byte
belongs to exactly one component. Top-level statements that appear between
two definitions are absorbed into the preceding step's span; decorators
attach to the definition that follows them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

SCHEMA_VERSION = 1

# Name given to the single pseudo-step when a candidate cannot be decomposed
# and the whole program is kept as one step.
WHOLE_PROGRAM_STEP = "__program__"

DEFAULT_ENTRY_NAMES = ("main", "solve")

_DEF_RE = re.compile(r"^(?:async[ \t]+)?def[ \t]+([A-Za-z_]\w*)")
_CLASS_RE = re.compile(r"^class[ \t]+([A-Za-z_]\w*)")
_DOCSTRING_OPEN_RE = re.compile(r"^[rRbBuUfF]{0,2}(\"\"\"|'''|\"|')")


class NoFunctionsError(Exception):
    """The candidate contains no function definitions to use as steps."""


@dataclass(frozen=True)
class SourceProgram:
    """A candidate program as emitted by a policy backend."""

    problem_id: str
    text: str
    provenance: str = "fixture"  # llm | mock | fixture


@dataclass(frozen=True)
class FunctionStep:
    """One function-level step. index is 1-based; source_span is a half-open
    byte range into the owning program's UTF-8 text."""

    index: int
    name: str
    docstring: str | None
    source_span: tuple[int, int]


@dataclass(frozen=True)
class StepSequence:
    program: SourceProgram
    preamble_span: tuple[int, int]
    steps: tuple[FunctionStep, ...]
    trailer_span: tuple[int, int]
    class_name: str | None = None

    @property
    def step_count(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class PartialSolution:
    """Prefix of a candidate through step_count steps, as runnable text."""

    problem_id: str
    step_count: int
    text: str


@dataclass(frozen=True)
class StepFlags:
    has_docstring: bool
    is_top_level: bool


@dataclass(frozen=True)
class Violation:
    step_index: int
    rule: str
    message: str


@dataclass(frozen=True)
class CofReport:
    """Structure-check result for one step sequence."""

    step_flags: tuple[StepFlags, ...]
    ordering_ok: bool
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class _Line:
    start: int  # byte offset of line start
    end: int  # byte offset one past the trailing newline
    text: str  # decoded line without the trailing newline
    indent: int
    clean: bool  # line starts outside strings, brackets, continuations
    kind: str  # blank | comment | decorator | def | class | stmt | cont
    name: str | None  # def/class name when kind is def/class


def _skip_short_string(line: str, i: int) -> int:
    quote = line[i]
    j = i + 1
    n = len(line)
    while j < n:
        ch = line[j]
        if ch == "\\":
            j += 2
            continue
        if ch == quote:
            return j + 1
        j += 1
    return n


def _advance(line: str, in_triple: str | None, depth: int) -> tuple[str | None, int, bool]:
    """Advance the scanner state across one physical line.

    Returns (in_triple, bracket_depth, backslash_continuation) after the line.
    """
    i = 0
    n = len(line)
    while i < n:
        if in_triple is not None:
            j = line.find(in_triple, i)
            if j < 0:
                return in_triple, depth, False
            i = j + 3
            in_triple = None
            continue
        ch = line[i]
        if ch == "#":
            return None, depth, False
        if ch in "'\"":
            if line[i : i + 3] == ch * 3:
                in_triple = ch * 3
                i += 3
                continue
            i = _skip_short_string(line, i)
            continue
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth = max(0, depth - 1)
        i += 1
    continued = line.endswith("\\") and depth == 0
    return in_triple, depth, continued


def _scan_lines(data: bytes) -> list[_Line]:
    rows: list[_Line] = []
    pos = 0
    in_triple: str | None = None
    depth = 0
    continued = False
    for raw in data.splitlines(keepends=True):
        start, end = pos, pos + len(raw)
        pos = end
        text = raw.decode("utf-8").rstrip("\r\n")
        clean = in_triple is None and depth == 0 and not continued
        stripped = text.strip()
        indent = len(text) - len(text.lstrip(" \t"))
        if not clean:
            kind, name = "cont", None
        elif not stripped:
            kind, name = "blank", None
        elif stripped.startswith("#"):
            kind, name = "comment", None
        elif stripped.startswith("@"):
            kind, name = "decorator", None
        else:
            m = _DEF_RE.match(stripped)
            if m:
                kind, name = "def", m.group(1)
            else:
                m = _CLASS_RE.match(stripped)
                if m:
                    kind, name = "class", m.group(1)
                else:
                    kind, name = "stmt", None
        in_triple, depth, continued = _advance(text, in_triple, depth)
        rows.append(_Line(start, end, text, indent, clean, kind, name))
    return rows


def _signature_end(lines: list[_Line], def_idx: int) -> int:
    """Index of the line on which the def signature's brackets close."""
    in_triple: str | None = None
    depth = 0
    for j in range(def_idx, len(lines)):
        in_triple, depth, continued = _advance(lines[j].text, in_triple, depth)
        if in_triple is None and depth == 0 and not continued:
            return j
    return len(lines) - 1


def _extract_docstring(text: str) -> str | None:
    """Docstring of a region that starts at the first statement of a body."""
    stripped = text.lstrip()
    m = _DOCSTRING_OPEN_RE.match(stripped)
    if not m:
        return None
    delim = m.group(1)
    rest = stripped[m.end() :]
    close = rest.find(delim)
    if close < 0:
        return None
    if len(delim) == 1 and "\n" in rest[:close]:
        return None  # a short string cannot span lines
    return rest[:close].strip()


def _docstring_for(lines: list[_Line], def_idx: int, end_line: int, data: bytes) -> str | None:
    sig_end = _signature_end(lines, def_idx)
    for j in range(sig_end + 1, end_line):
        line = lines[j]
        if line.kind in ("blank", "comment"):
            continue
        if not line.clean:
            return None
        region = data[line.start : lines[end_line - 1].end]
        return _extract_docstring(region.decode("utf-8"))
    return None


def _line_index_limit(lines: list[_Line], byte_limit: int) -> int:
    for j, line in enumerate(lines):
        if line.start >= byte_limit:
            return j
    return len(lines)


def _sequence_from_defs(
    program: SourceProgram,
    data: bytes,
    lines: list[_Line],
    def_idxs: list[int],
    member_indent: int,
    class_name: str | None,
) -> StepSequence:
    starts = []
    for d in def_idxs:
        s = d
        while s - 1 >= 0 and lines[s - 1].clean and lines[s - 1].indent == member_indent and lines[s - 1].kind == "decorator":
            s -= 1
        starts.append(s)

    def is_boundary(line: _Line) -> bool:
        if not line.clean or line.kind not in ("stmt", "class", "def"):
            return False
        if member_indent == 0:
            return line.indent == 0
        return line.indent < member_indent

    trailer_start = len(data)
    for j in range(def_idxs[-1] + 1, len(lines)):
        if is_boundary(lines[j]):
            trailer_start = lines[j].start
            break

    bounds = [lines[s].start for s in starts] + [trailer_start]
    steps = []
    for i, d in enumerate(def_idxs):
        end_line = _line_index_limit(lines, bounds[i + 1])
        doc = _docstring_for(lines, d, end_line, data)
        steps.append(FunctionStep(i + 1, lines[d].name or "", doc, (bounds[i], bounds[i + 1])))
    return StepSequence(
        program=program,
        preamble_span=(0, bounds[0]),
        steps=tuple(steps),
        trailer_span=(trailer_start, len(data)),
        class_name=class_name,
    )


def decompose(program: SourceProgram) -> StepSequence:
    """Split a candidate into function-level steps.

    Raises SyntaxError if the text does not compile and NoFunctionsError if
    there is nothing to use as a step; callers that must accept arbitrary
    candidates fall back to whole_program_sequence().
    """
    compile(program.text, f"<{program.problem_id}>", "exec")
    data = program.text.encode("utf-8")
    lines = _scan_lines(data)

    top_defs = [j for j, ln in enumerate(lines) if ln.clean and ln.indent == 0 and ln.kind == "def"]
    if top_defs:
        return _sequence_from_defs(program, data, lines, top_defs, 0, None)

    for j, ln in enumerate(lines):
        if not (ln.clean and ln.indent == 0 and ln.kind == "class"):
            continue
        block_end = len(lines)
        for j2 in range(j + 1, len(lines)):
            nxt = lines[j2]
            if nxt.clean and nxt.indent == 0 and nxt.kind in ("stmt", "class", "def"):
                block_end = j2
                break
        body_indent = None
        for j2 in range(j + 1, block_end):
            nxt = lines[j2]
            if nxt.clean and nxt.kind not in ("blank", "comment") and nxt.indent > 0:
                body_indent = nxt.indent
                break
        if body_indent is None:
            continue
        methods = [
            j2
            for j2 in range(j + 1, block_end)
            if lines[j2].clean and lines[j2].indent == body_indent and lines[j2].kind == "def"
        ]
        if methods:
            return _sequence_from_defs(program, data, lines, methods, body_indent, ln.name)

    raise NoFunctionsError(f"no function definitions in candidate for {program.problem_id}")


def whole_program_sequence(program: SourceProgram) -> StepSequence:
    """Fallback for unparseable or function-free candidates: one step, T=1."""
    n = len(program.text.encode("utf-8"))
    step = FunctionStep(1, WHOLE_PROGRAM_STEP, None, (0, n))
    return StepSequence(program, (0, 0), (step,), (n, n), class_name=None)


def _segment(seq: StepSequence, span: tuple[int, int]) -> str:
    data = seq.program.text.encode("utf-8")
    return data[span[0] : span[1]].decode("utf-8")


def preamble_source(seq: StepSequence) -> str:
    return _segment(seq, seq.preamble_span)


def step_source(seq: StepSequence, step: FunctionStep) -> str:
    return _segment(seq, step.source_span)


def trailer_source(seq: StepSequence) -> str:
    return _segment(seq, seq.trailer_span)


def _normalize_chunk(text: str) -> str:
    return text.lstrip("\n").rstrip()


def _join_chunks(chunks: list[str]) -> str:
    parts = [c for c in (_normalize_chunk(ch) for ch in chunks) if c]
    if not parts:
        return ""
    return "\n\n".join(parts) + "\n"


def prefix(seq: StepSequence, t: int) -> PartialSolution:
    """Runnable prefix through step t (1-based). t == step_count additionally
    carries the trailer and equals the reassembled program."""
    if not 1 <= t <= seq.step_count:
        raise IndexError(f"step index {t} out of range 1..{seq.step_count}")
    chunks = [preamble_source(seq)]
    chunks.extend(step_source(seq, s) for s in seq.steps[:t])
    if t == seq.step_count:
        chunks.append(trailer_source(seq))
    return PartialSolution(seq.program.problem_id, t, _join_chunks(chunks))


def reassemble(seq: StepSequence) -> SourceProgram:
    """Reconstruct the program text with blank-line runs between components
    collapsed to one. Feeding the result back through decompose() yields the
    same step names and docstrings."""
    return SourceProgram(
        problem_id=seq.program.problem_id,
        text=prefix(seq, seq.step_count).text,
        provenance=seq.program.provenance,
    )


def validate_cof(seq: StepSequence, entry_names: tuple[str, ...] = DEFAULT_ENTRY_NAMES) -> CofReport:
    """Check the modular-code conventions: docstring per step, steps are real
    top-level definitions, entry function first (any first method counts for
    class-wrapped candidates)."""
    flags = []
    violations = []
    for step in seq.steps:
        src = step_source(seq, step)
        is_def = _leads_with_def(src)
        has_doc = step.docstring is not None
        flags.append(StepFlags(has_docstring=has_doc, is_top_level=is_def))
        if not has_doc:
            violations.append(Violation(step.index, "missing_docstring", f"function '{step.name}' has no docstring"))
        if not is_def:
            violations.append(Violation(step.index, "not_top_level", f"step {step.index} is not a function definition"))
    ordering_ok = seq.class_name is not None or (seq.steps and seq.steps[0].name in set(entry_names))
    ordering_ok = bool(ordering_ok)
    if not ordering_ok:
        first = seq.steps[0].name if seq.steps else "<none>"
        violations.append(Violation(1, "entry_not_first", f"first step '{first}' is not an entry function"))
    return CofReport(tuple(flags), ordering_ok, tuple(violations))


def _leads_with_def(source: str) -> bool:
    for line in source.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#") or stripped.startswith("@"):
            continue
        return bool(_DEF_RE.match(stripped))
    return False


def to_record(seq: StepSequence, trajectory_id: str, report: CofReport | None = None) -> dict:
    """Serializable trajectory record; chunk texts are normalized so a record
    round-trips to the reassembled program."""
    record = {
        "schema_version": SCHEMA_VERSION,
        "problem_id": seq.program.problem_id,
        "trajectory_id": trajectory_id,
        "provenance": seq.program.provenance,
        "preamble": _normalize_chunk(preamble_source(seq)),
        "steps": [
            {
                "name": s.name,
                "docstring": s.docstring,
                "source": _normalize_chunk(step_source(seq, s)),
            }
            for s in seq.steps
        ],
        "trailer": _normalize_chunk(trailer_source(seq)),
    }
    if report is not None:
        record["cof"] = {
            "ordering_ok": report.ordering_ok,
            "step_flags": [
                {"has_docstring": f.has_docstring, "is_top_level": f.is_top_level} for f in report.step_flags
            ],
            "violations": [
                {"step_index": v.step_index, "rule": v.rule, "message": v.message} for v in report.violations
            ],
        }
    return record


def from_record(record: dict) -> StepSequence:
    """Rebuild a StepSequence from a trajectory record. Spans are computed on
    the normalized reassembled text."""
    preamble = record.get("preamble", "")
    steps_in = record["steps"]
    trailer = record.get("trailer", "")

    chunks = [preamble] + [s["source"] for s in steps_in] + [trailer]
    norm = [_normalize_chunk(c) for c in chunks]
    text = _join_chunks(chunks)
    data_len = len(text.encode("utf-8"))

    # Walk the joined text assigning each present chunk its span; a chunk's
    # span includes the separator that follows it so spans partition the text.
    spans: list[tuple[int, int]] = []
    pos = 0
    present = [bool(c) for c in norm]
    remaining = sum(present)
    for c, here in zip(norm, present):
        if not here:
            spans.append((pos, pos))
            continue
        nbytes = len(c.encode("utf-8"))
        remaining -= 1
        end = pos + nbytes + (2 if remaining else 1)
        end = min(end, data_len)
        spans.append((pos, end))
        pos = end

    program = SourceProgram(
        problem_id=record["problem_id"],
        text=text,
        provenance=record.get("provenance", "fixture"),
    )
    steps = tuple(
        FunctionStep(i + 1, s["name"], s.get("docstring"), spans[1 + i]) for i, s in enumerate(steps_in)
    )
    # Class-wrapped sequences keep the class header in the preamble (possibly
    # followed by class-level statements) and carry indented method chunks.
    class_name = None
    if steps_in and norm[1] and norm[1][:1] in (" ", "\t"):
        for line in norm[0].splitlines():
            if line[:1] not in (" ", "\t"):
                m = _CLASS_RE.match(line.strip())
                if m:
                    class_name = m.group(1)
    if not norm[0] and not steps:
        raise ValueError("record has no content")
    return StepSequence(program, spans[0], steps, spans[-1], class_name=class_name)
