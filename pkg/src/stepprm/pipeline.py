"""Pipeline stages over a run directory.

Each stage reads its inputs from the run directory and writes its outputs
there, so stages compose through files: ingest -> generate -> label ->
train -> select -> report. All data files are deterministic given config
and seed; wall-clock timestamps live only in log.txt.
"""

from __future__ import annotations

import datetime
import json
from pathlib import Path
from typing import Sequence

from .config import ConfigError, RunConfig, config_hash
from .correction import (
    MetaDataset,
    MetaRow,
    NoisyDataset,
    NoisyRow,
    table_records,
    train,
)
from .labeling import (
    SEED_SLOT,
    Trajectory,
    build_datasets,
    mc_seed,
    meta_row_records,
    noisy_row_records,
)
from .policy import HttpChatPolicy, MockPolicy, PolicyAdapter, PolicyError
from .records import (
    JsonLineError,
    Problem,
    atomic_write_text,
    dumps_record,
    problem_from_record,
    problem_to_record,
    read_jsonl,
    write_jsonl,
)
from .sandbox import ProcessSandbox, Sandbox, StubRule, StubSandbox
from .scoring import featurize, load_params, save_params
from .selection import CandidateSet, LinearScorer, evaluate_pass_at_1
from .steps import (
    NoFunctionsError,
    decompose,
    from_record,
    to_record,
    validate_cof,
    whole_program_sequence,
)

SCHEMA_VERSION = 1

PROBLEMS_FILE = "problems.jsonl"
TRAJECTORIES_FILE = "trajectories.jsonl"
SKIPPED_FILE = "skipped.jsonl"
NOISY_FILE = "noisy.jsonl"
META_FILE = "meta.jsonl"
TEXTS_FILE = "texts.jsonl"
COMPLETIONS_FILE = "completions.jsonl"
PARAMS_FILE = "params.bin"
TABLE_FILE = "table.jsonl"
TRACE_FILE = "trace.jsonl"
LOG_FILE = "log.txt"


class DataError(ValueError):
    """Input data is missing, malformed, or inconsistent with the run state."""


class DuplicateIdError(DataError):
    """Two problem records share a problem_id."""


def _log(config: RunConfig, message: str) -> None:
    config.run_dir.mkdir(parents=True, exist_ok=True)
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    with open(config.run_dir / LOG_FILE, "a", encoding="utf-8") as handle:
        handle.write(f"{stamp} {message}\n")


def ingest(problems_path: str | Path) -> list[Problem]:
    """Parse and validate the problems file; duplicate ids name both lines."""
    problems: list[Problem] = []
    seen: dict[str, int] = {}
    for lineno, record in read_jsonl(problems_path):
        try:
            problem = problem_from_record(record)
        except ValueError as exc:
            raise JsonLineError(problems_path, lineno, str(exc)) from exc
        if problem.problem_id in seen:
            raise DuplicateIdError(
                f"duplicate problem_id {problem.problem_id!r} on lines "
                f"{seen[problem.problem_id]} and {lineno}"
            )
        seen[problem.problem_id] = lineno
        problems.append(problem)
    if not problems:
        raise DataError(f"problems file {problems_path} has no records")
    return problems


def run_ingest(config: RunConfig) -> dict:
    problems = ingest(config.problems_path)
    write_jsonl(config.run_dir / PROBLEMS_FILE, (problem_to_record(p) for p in problems))
    _log(config, f"ingest: {len(problems)} problems")
    return {"stage": "ingest", "problems": len(problems)}


def _load_problems(config: RunConfig) -> list[Problem]:
    path = config.run_dir / PROBLEMS_FILE
    if not path.exists():
        raise DataError(f"{path} not found; run ingest first")
    return [problem_from_record(record) for _, record in read_jsonl(path)]


def make_policy(config: RunConfig) -> PolicyAdapter:
    if config.mock_script_path is not None:
        return MockPolicy.from_file(config.mock_script_path)
    backend = config.backend
    return HttpChatPolicy(
        endpoint_url=backend.endpoint_url,
        model=backend.model,
        api_key_env=backend.api_key_env,
    )


def _stub_from_script(path: Path) -> StubSandbox:
    try:
        section = json.loads(path.read_text(encoding="utf-8")).get("sandbox") or {}
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read sandbox section of {path}: {exc}") from exc
    rules = [StubRule(r["marker"], r["status"]) for r in section.get("rules", [])]
    scripted = {
        (marker, test_id): text
        for marker, per_test in (section.get("scripted") or {}).items()
        for test_id, text in per_test.items()
    }
    return StubSandbox(
        rules=rules, scripted=scripted, default_status=section.get("default_status", "fail")
    )


def make_sandbox(config: RunConfig) -> Sandbox:
    if config.runner_command is not None:
        return ProcessSandbox(config.runner_command)
    if config.mock_script_path is not None:
        return _stub_from_script(config.mock_script_path)
    raise ConfigError("a live backend requires sandbox.runner_command")


def generate_trajectories(
    problems: Sequence[Problem],
    policy: PolicyAdapter,
    n: int,
    base_seed: int,
    temperature: float,
) -> tuple[list[Trajectory], list[dict], list[dict]]:
    """n candidates per problem, decomposed into steps. Unparseable
    candidates fall back to a single whole-program step with the violation
    recorded; a policy failure skips that problem and the run continues."""
    if len(problems) * n > SEED_SLOT:
        raise DataError(
            f"{len(problems)} problems x {n} candidates exceeds the {SEED_SLOT} trajectory slots"
        )
    trajectories: list[Trajectory] = []
    records: list[dict] = []
    skipped: list[dict] = []
    for p_index, problem in enumerate(problems):
        try:
            programs = [
                policy.complete(problem, "", temperature, mc_seed(base_seed, p_index, j))
                for j in range(n)
            ]
        except PolicyError as exc:
            skipped.append(
                {"schema_version": SCHEMA_VERSION, "problem_id": problem.problem_id, "error": str(exc)}
            )
            continue
        for j, program in enumerate(programs):
            fallback = None
            try:
                seq = decompose(program)
            except SyntaxError:
                seq = whole_program_sequence(program)
                fallback = "syntax_error"
            except NoFunctionsError:
                seq = whole_program_sequence(program)
                fallback = "no_functions"
            report = validate_cof(seq)
            trajectory_id = f"{problem.problem_id}-c{j}"
            slot = p_index * n + j
            record = to_record(seq, trajectory_id, report)
            record["slot"] = slot
            if fallback is not None:
                record["fallback"] = fallback
            records.append(record)
            trajectories.append(
                Trajectory(
                    problem_id=problem.problem_id,
                    trajectory_id=trajectory_id,
                    slot=slot,
                    seq=seq,
                )
            )
    return trajectories, records, skipped


def run_generate(config: RunConfig) -> dict:
    problems = _load_problems(config)
    policy = make_policy(config)
    trajectories, records, skipped = generate_trajectories(
        problems, policy, config.n, config.seed, config.generation_temperature
    )
    write_jsonl(config.run_dir / TRAJECTORIES_FILE, records)
    write_jsonl(config.run_dir / SKIPPED_FILE, skipped)
    _log(config, f"generate: {len(records)} trajectories, {len(skipped)} problems skipped")
    return {"stage": "generate", "trajectories": len(records), "skipped": len(skipped)}


def _load_trajectories(config: RunConfig) -> list[Trajectory]:
    path = config.run_dir / TRAJECTORIES_FILE
    if not path.exists():
        raise DataError(f"{path} not found; run generate first")
    trajectories = []
    for lineno, record in read_jsonl(path):
        try:
            seq = from_record(record)
            trajectories.append(
                Trajectory(
                    problem_id=record["problem_id"],
                    trajectory_id=record["trajectory_id"],
                    slot=int(record["slot"]),
                    seq=seq,
                )
            )
        except (KeyError, ValueError) as exc:
            raise JsonLineError(path, lineno, f"bad trajectory record: {exc}") from exc
    if not trajectories:
        raise DataError("no trajectories to process")
    return trajectories


def run_label(config: RunConfig) -> dict:
    problems = {p.problem_id: p for p in _load_problems(config)}
    trajectories = _load_trajectories(config)
    policy = make_policy(config)
    sandbox = make_sandbox(config)
    built = build_datasets(
        trajectories,
        problems,
        policy,
        config.k,
        sandbox,
        base_seed=config.seed,
        dim=config.dim,
        temperature=config.generation_temperature,
        comparison=config.comparison,
    )
    write_jsonl(config.run_dir / NOISY_FILE, noisy_row_records(built.noisy.rows))
    write_jsonl(config.run_dir / META_FILE, meta_row_records(built.meta.rows))
    write_jsonl(
        config.run_dir / TEXTS_FILE,
        (
            {"schema_version": SCHEMA_VERSION, "ref": ref, "text": text}
            for ref, text in sorted(built.texts.items())
        ),
    )
    write_jsonl(config.run_dir / COMPLETIONS_FILE, built.audit)
    _log(config, f"label: {len(built.noisy.rows)} noisy rows, {len(built.meta.rows)} meta rows")
    return {
        "stage": "label",
        "noisy_rows": len(built.noisy.rows),
        "meta_rows": len(built.meta.rows),
        "completions": len(built.audit),
    }


def train_dir(config: RunConfig) -> Path:
    return config.run_dir / "train" / f"{config_hash(config)}-{config.seed}"


def _load_texts(config: RunConfig) -> dict[str, str]:
    path = config.run_dir / TEXTS_FILE
    if not path.exists():
        raise DataError(f"{path} not found; run label first")
    return {record["ref"]: record["text"] for _, record in read_jsonl(path)}


def _load_datasets(config: RunConfig, statements: dict[str, str]) -> tuple[NoisyDataset, MetaDataset]:
    texts = _load_texts(config)
    noisy_path = config.run_dir / NOISY_FILE
    meta_path = config.run_dir / META_FILE
    if not noisy_path.exists() or not meta_path.exists():
        raise DataError("noisy/meta datasets not found; run label first")

    def _features(problem_id: str, ref: str):
        if problem_id not in statements:
            raise DataError(f"dataset row references unknown problem {problem_id!r}")
        if ref not in texts:
            raise DataError(f"dataset row references unknown text {ref!r}")
        return featurize(statements[problem_id], texts[ref], config.dim)

    noisy_rows = []
    for _, rec in read_jsonl(noisy_path):
        key = (rec["problem_id"], rec["trajectory_id"], int(rec["step_index"]))
        noisy_rows.append(
            NoisyRow(
                key=key,
                features=_features(rec["problem_id"], rec["partial_text_ref"]),
                base=float(rec["value"]),
                k=int(rec["k"]),
                passes=int(rec["passes"]),
                text_ref=rec["partial_text_ref"],
            )
        )
    meta_rows = []
    for _, rec in read_jsonl(meta_path):
        key = (rec["problem_id"], rec["trajectory_id"], int(rec["step_index"]))
        meta_rows.append(
            MetaRow(
                key=key,
                features=_features(rec["problem_id"], rec["final_text_ref"]),
                value=float(rec["value"]),
                text_ref=rec["final_text_ref"],
            )
        )
    if not noisy_rows or not meta_rows:
        raise DataError("training needs at least one noisy row and one meta row")
    return NoisyDataset(noisy_rows), MetaDataset(meta_rows)


def run_train(config: RunConfig) -> dict:
    problems = {p.problem_id: p.statement for p in _load_problems(config)}
    noisy, meta = _load_datasets(config, problems)
    result = train(noisy, meta, config.train)
    out_dir = train_dir(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_params(
        out_dir / PARAMS_FILE,
        result.params,
        featurizer={"kind": "hashed_bag_of_tokens", "dim": config.dim},
    )
    write_jsonl(out_dir / TABLE_FILE, table_records(result.table))
    write_jsonl(out_dir / TRACE_FILE, result.trace)
    _log(config, f"train: {config.train.iterations} iterations into {out_dir.name}")
    first_meta = result.trace[0]["meta_loss"] if result.trace else None
    last_meta = result.trace[-1]["meta_loss"] if result.trace else None
    return {
        "stage": "train",
        "out_dir": str(out_dir),
        "iterations": config.train.iterations,
        "meta_loss_first": first_meta,
        "meta_loss_last": last_meta,
    }


def _candidate_sets(config: RunConfig) -> list[CandidateSet]:
    problems = {p.problem_id: p for p in _load_problems(config)}
    by_problem: dict[str, list[Trajectory]] = {}
    for trajectory in _load_trajectories(config):
        by_problem.setdefault(trajectory.problem_id, []).append(trajectory)
    sets = []
    for problem_id, group in by_problem.items():
        problem = problems.get(problem_id)
        if problem is None:
            raise DataError(f"trajectories reference unknown problem {problem_id!r}")
        group.sort(key=lambda t: t.slot)
        sets.append(CandidateSet(problem, tuple(t.seq for t in group)))
    if not sets:
        raise DataError("no candidate sets to select over")
    return sets


def run_select(config: RunConfig, mode: str) -> dict:
    params_path = train_dir(config) / PARAMS_FILE
    if not params_path.exists():
        raise DataError(f"{params_path} not found; run train first")
    params = load_params(params_path)
    scorer = LinearScorer(params)
    sandbox = make_sandbox(config)
    report = evaluate_pass_at_1(
        _candidate_sets(config), scorer, mode, sandbox, comparison=config.comparison
    )
    write_jsonl(config.run_dir / f"report-{mode}.jsonl", report.rows)
    atomic_write_text(
        config.run_dir / f"summary-{mode}.json", dumps_record(report.summary) + "\n"
    )
    _log(config, f"select[{mode}]: pass@1 {report.summary['pass_at_1']:.4f}")
    return {"stage": "select", "mode": mode, **{k: v for k, v in report.summary.items() if k != "schema_version"}}


def run_report(config: RunConfig, mode: str) -> str:
    summary_path = config.run_dir / f"summary-{mode}.json"
    if not summary_path.exists():
        raise DataError(f"{summary_path} not found; run select --mode {mode} first")
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    lines = [
        f"mode: {summary['mode']}",
        f"problems: {summary['problems']}",
        f"candidates per problem: {summary['n']}",
        f"pass@1: {summary['pass_at_1']:.4f}",
    ]
    for label, rate in (summary.get("per_difficulty") or {}).items():
        lines.append(f"pass@1[{label}]: {rate:.4f}")
    return "\n".join(lines)
