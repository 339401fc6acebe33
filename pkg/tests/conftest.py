from __future__ import annotations

from pathlib import Path

from stepprm.steps import SourceProgram

FIXTURES = Path(__file__).parent / "fixtures"


def load_fixture(relpath: str) -> SourceProgram:
    path = FIXTURES / relpath
    return SourceProgram(problem_id=path.stem, text=path.read_text(), provenance="fixture")


def corpus_paths(group: str) -> list[Path]:
    return sorted((FIXTURES / group).glob("*.py"))


def load_corpus(group: str) -> list[SourceProgram]:
    return [SourceProgram(p.stem, p.read_text(), "fixture") for p in corpus_paths(group)]
