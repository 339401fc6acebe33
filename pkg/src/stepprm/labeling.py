"""Reward labeling: clean final rewards from unit tests, noisy partial
rewards from Monte Carlo completion sampling.

Final rewards are binary, 1 only when every test passes. Partial rewards are
passes/k over k policy completions of the prefix, each evaluated like a
final solution. Sample seeds follow the layout
base_seed * 1e6 + trajectory_slot * 1e3 + sample_index, so every completion
is reproducible and no two samples in a run share a seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .correction import MetaDataset, MetaRow, NoisyDataset, NoisyRow
from .policy import PolicyAdapter, PolicyError, extends_prefix
from .records import Problem
from .sandbox import Sandbox, SandboxRequest, TestCase, TestResult
from .scoring import DEFAULT_DIM, featurize
from .steps import PartialSolution, SourceProgram, StepSequence, prefix

SCHEMA_VERSION = 1

SEED_SLOT = 1000
SEED_BASE_STRIDE = SEED_SLOT * SEED_SLOT

AuditSink = Callable[[dict], None]


@dataclass(frozen=True)
class FinalReward:
    value: float

    def __post_init__(self) -> None:
        if self.value not in (0.0, 1.0):
            raise ValueError("final reward must be 0 or 1")


@dataclass(frozen=True)
class EvalOutcome:
    results: tuple[TestResult, ...]

    @property
    def all_passed(self) -> bool:
        return all(r.status == "pass" for r in self.results)


@dataclass(frozen=True)
class NoisyReward:
    value: float
    k: int
    passes: int

    def __post_init__(self) -> None:
        if self.k < 1 or not 0 <= self.passes <= self.k:
            raise ValueError(f"invalid counts passes={self.passes} k={self.k}")
        if self.value != self.passes / self.k:
            raise ValueError("value must equal passes / k exactly")


def evaluate_final(
    solution: SourceProgram,
    tests: Sequence[TestCase],
    sandbox: Sandbox,
    comparison: str = "normalized",
    time_limit_ms: int = 2000,
) -> tuple[EvalOutcome, FinalReward]:
    """Run every test; candidate failures are data, never exceptions."""
    request = SandboxRequest(
        solution_source=solution.text,
        tests=tuple(tests),
        time_limit_ms=time_limit_ms,
        comparison=comparison,
    )
    response = sandbox.run(request)
    outcome = EvalOutcome(results=response.results)
    return outcome, FinalReward(1.0 if outcome.all_passed else 0.0)


def mc_seed(base_seed: int, trajectory_slot: int, sample_index: int) -> int:
    if not 0 <= trajectory_slot < SEED_SLOT:
        raise ValueError(f"trajectory_slot {trajectory_slot} outside [0, {SEED_SLOT})")
    if not 0 <= sample_index < SEED_SLOT:
        raise ValueError(f"sample_index {sample_index} outside [0, {SEED_SLOT})")
    return base_seed * SEED_BASE_STRIDE + trajectory_slot * SEED_SLOT + sample_index


def mc_estimate(
    problem: Problem,
    partial: PartialSolution,
    policy: PolicyAdapter,
    k: int,
    tests: Sequence[TestCase],
    sandbox: Sandbox,
    base_seed: int = 0,
    trajectory_slot: int = 0,
    temperature: float = 0.8,
    comparison: str = "normalized",
    audit: AuditSink | None = None,
) -> NoisyReward:
    """passes/k over k seeded completions of the partial program."""
    if k < 1:
        raise ValueError("k must be >= 1")
    passes = 0
    for i in range(k):
        seed = mc_seed(base_seed, trajectory_slot, i)
        program = policy.complete(problem, partial.text, temperature, seed)
        if not extends_prefix(partial.text, program.text):
            raise PolicyError(
                f"policy completion for {problem.problem_id!r} does not extend the partial program"
            )
        _, reward = evaluate_final(program, tests, sandbox, comparison)
        passed = reward.value == 1.0
        passes += int(passed)
        if audit is not None:
            audit(
                {
                    "schema_version": SCHEMA_VERSION,
                    "problem_id": problem.problem_id,
                    "trajectory_slot": trajectory_slot,
                    "step_count": partial.step_count,
                    "sample_index": i,
                    "seed": seed,
                    "passed": passed,
                    "completion_text": program.text,
                }
            )
    return NoisyReward(value=passes / k, k=k, passes=passes)


@dataclass(frozen=True)
class Trajectory:
    """A decomposed candidate plus its slot in the run's seed layout."""

    problem_id: str
    trajectory_id: str
    slot: int
    seq: StepSequence


@dataclass
class BuiltDatasets:
    noisy: NoisyDataset
    meta: MetaDataset
    texts: dict[str, str]
    audit: list[dict]


def text_ref(problem_id: str, trajectory_id: str, step_index: int) -> str:
    return f"{problem_id}/{trajectory_id}/{step_index}"


def build_datasets(
    trajectories: Sequence[Trajectory],
    problems_by_id: Mapping[str, Problem],
    policy: PolicyAdapter,
    k: int,
    sandbox: Sandbox,
    base_seed: int = 0,
    dim: int = DEFAULT_DIM,
    temperature: float = 0.8,
    comparison: str = "normalized",
) -> BuiltDatasets:
    """Meta rows from final solutions (t = T, clean), noisy rows from MC
    estimates of every proper prefix (t < T). Key sets are disjoint by
    construction since the meta key reuses the final step index."""
    noisy_rows: list[NoisyRow] = []
    meta_rows: list[MetaRow] = []
    texts: dict[str, str] = {}
    audit: list[dict] = []

    for trajectory in trajectories:
        problem = problems_by_id.get(trajectory.problem_id)
        if problem is None:
            raise ValueError(f"no problem record for trajectory {trajectory.trajectory_id!r}")
        seq = trajectory.seq
        total = seq.step_count

        final_text = prefix(seq, total).text
        solution = SourceProgram(problem.problem_id, final_text, seq.program.provenance)
        _, final_reward = evaluate_final(solution, problem.tests, sandbox, comparison)
        final_ref = text_ref(problem.problem_id, trajectory.trajectory_id, total)
        texts[final_ref] = final_text
        meta_rows.append(
            MetaRow(
                key=(problem.problem_id, trajectory.trajectory_id, total),
                features=featurize(problem.statement, final_text, dim),
                value=final_reward.value,
                text_ref=final_ref,
            )
        )

        for t in range(1, total):
            partial = prefix(seq, t)
            estimate = mc_estimate(
                problem,
                partial,
                policy,
                k,
                problem.tests,
                sandbox,
                base_seed=base_seed,
                trajectory_slot=trajectory.slot,
                temperature=temperature,
                comparison=comparison,
                audit=audit.append,
            )
            ref = text_ref(problem.problem_id, trajectory.trajectory_id, t)
            texts[ref] = partial.text
            noisy_rows.append(
                NoisyRow(
                    key=(problem.problem_id, trajectory.trajectory_id, t),
                    features=featurize(problem.statement, partial.text, dim),
                    base=estimate.value,
                    k=estimate.k,
                    passes=estimate.passes,
                    text_ref=ref,
                )
            )

    return BuiltDatasets(
        noisy=NoisyDataset(noisy_rows), meta=MetaDataset(meta_rows), texts=texts, audit=audit
    )


def noisy_row_records(rows: Sequence[NoisyRow]) -> list[dict]:
    return [
        {
            "schema_version": SCHEMA_VERSION,
            "problem_id": row.key[0],
            "trajectory_id": row.key[1],
            "step_index": row.key[2],
            "partial_text_ref": row.text_ref,
            "value": row.base,
            "k": row.k,
            "passes": row.passes,
        }
        for row in rows
    ]


def meta_row_records(rows: Sequence[MetaRow]) -> list[dict]:
    return [
        {
            "schema_version": SCHEMA_VERSION,
            "problem_id": row.key[0],
            "trajectory_id": row.key[1],
            "step_index": row.key[2],
            "final_text_ref": row.text_ref,
            "value": row.value,
        }
        for row in rows
    ]
