"""Best-of-N selection and pass@1 evaluation.

prm mode scores every prefix of a candidate and averages; orm mode scores
only the complete program. The argmax breaks ties toward the lowest
candidate index. A scoring failure marks that problem failed (with the
diagnostic recorded) rather than silently dropping the candidate, so pass@1
denominators never shrink.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

from .labeling import evaluate_final
from .records import Problem
from .sandbox import Sandbox
from .scoring import DEFAULT_DIM, PrmParams, aggregate_scores, featurize, generative_score, score
from .steps import SourceProgram, StepSequence, prefix

SCHEMA_VERSION = 1

SELECTION_MODES = ("prm", "orm")


class StepScorer(Protocol):
    def step_score(self, problem: Problem, partial_text: str) -> float: ...


@dataclass(frozen=True)
class LinearScorer:
    """Trained scorer: logistic-linear over hashed features."""

    params: PrmParams

    def step_score(self, problem: Problem, partial_text: str) -> float:
        return score(self.params, featurize(problem.statement, partial_text, self.params.dim))


@dataclass(frozen=True)
class GenerativeScorer:
    """Scoring-only backend: verification-token probabilities from a policy
    that exposes verification_pair."""

    policy: object

    def step_score(self, problem: Problem, partial_text: str) -> float:
        return generative_score(self.policy.verification_pair(problem, partial_text))


@dataclass(frozen=True)
class ConstantScorer:
    value: float = 0.0

    def step_score(self, problem: Problem, partial_text: str) -> float:
        return self.value


@dataclass(frozen=True)
class OracleScorer:
    """Upper-bound scorer that peeks at the tests: 1 for a program that
    passes them all, else 0. Meaningful in orm mode."""

    sandbox: Sandbox
    comparison: str = "normalized"

    def step_score(self, problem: Problem, partial_text: str) -> float:
        solution = SourceProgram(problem.problem_id, partial_text, "fixture")
        _, reward = evaluate_final(solution, problem.tests, self.sandbox, self.comparison)
        return reward.value


@dataclass(frozen=True)
class CandidateSet:
    problem: Problem
    candidates: tuple[StepSequence, ...]

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ValueError("a candidate set needs at least one candidate")
        for seq in self.candidates:
            if seq.program.problem_id != self.problem.problem_id:
                raise ValueError(
                    f"candidate for {seq.program.problem_id!r} in set for {self.problem.problem_id!r}"
                )


@dataclass(frozen=True)
class SelectionResult:
    problem_id: str
    mode: str
    chosen_index: int
    scores: tuple[float, ...]


def _candidate_score(problem: Problem, seq: StepSequence, scorer: StepScorer, mode: str) -> float:
    total = seq.step_count
    if mode == "orm":
        return scorer.step_score(problem, prefix(seq, total).text)
    steps = [scorer.step_score(problem, prefix(seq, t).text) for t in range(1, total + 1)]
    return aggregate_scores(steps)


def best_of_n(candidate_set: CandidateSet, scorer: StepScorer, mode: str) -> SelectionResult:
    if mode not in SELECTION_MODES:
        raise ValueError(f"mode must be one of {SELECTION_MODES}")
    scores = [
        _candidate_score(candidate_set.problem, seq, scorer, mode)
        for seq in candidate_set.candidates
    ]
    chosen = 0
    for index, value in enumerate(scores):
        if value > scores[chosen]:
            chosen = index
    return SelectionResult(
        problem_id=candidate_set.problem.problem_id,
        mode=mode,
        chosen_index=chosen,
        scores=tuple(scores),
    )


@dataclass
class PassAtOneReport:
    rows: list[dict]
    summary: dict


def evaluate_pass_at_1(
    candidate_sets: Sequence[CandidateSet],
    scorer: StepScorer,
    mode: str,
    sandbox: Sandbox,
    comparison: str = "normalized",
) -> PassAtOneReport:
    """Select per problem, run the chosen program against the tests, report
    the fraction of problems whose selection passes everything."""
    rows = []
    passed_count = 0
    by_difficulty: dict[str, list[bool]] = {}
    for candidate_set in candidate_sets:
        problem = candidate_set.problem
        row: dict = {"schema_version": SCHEMA_VERSION, "problem_id": problem.problem_id, "mode": mode}
        try:
            result = best_of_n(candidate_set, scorer, mode)
            chosen_seq = candidate_set.candidates[result.chosen_index]
            solution = SourceProgram(
                problem.problem_id, prefix(chosen_seq, chosen_seq.step_count).text, chosen_seq.program.provenance
            )
            _, reward = evaluate_final(solution, problem.tests, sandbox, comparison)
            passed = reward.value == 1.0
            row.update(
                {"chosen_index": result.chosen_index, "scores": list(result.scores), "passed": passed}
            )
        except Exception as exc:  # scoring failure fails this problem, run continues
            passed = False
            row.update({"chosen_index": None, "scores": [], "passed": False, "error": str(exc)})
        passed_count += int(passed)
        if problem.difficulty:
            by_difficulty.setdefault(problem.difficulty, []).append(passed)
        rows.append(row)

    n_values = {len(s.candidates) for s in candidate_sets}
    summary = {
        "schema_version": SCHEMA_VERSION,
        "mode": mode,
        "problems": len(rows),
        "n": n_values.pop() if len(n_values) == 1 else None,
        "pass_at_1": passed_count / len(rows) if rows else 0.0,
        "per_difficulty": {
            label: sum(flags) / len(flags) for label, flags in sorted(by_difficulty.items())
        },
    }
    return PassAtOneReport(rows=rows, summary=summary)
