"""Meta-learned correction of noisy step rewards.

A RewardTable holds one trainable residual per (problem, trajectory, step)
key on top of the sampled base reward; the corrected target is
clamp(base + residual, 0, 1). Training alternates a meta step on the
residuals with an inner step on the scorer:

  inner:  params_hat = params - eta * grad_mse(params, corrected targets)
  meta:   residuals descend the meta loss, the scorer's clean-reward MSE
          after the inner step, via a finite-difference directional
          derivative (perturb params along the meta-loss gradient).

meta_gradient_bruteforce re-derives the same quantity by perturbing one
residual at a time straight through inner_update and meta_loss; it exists as
an independent check on the estimator, not as a training path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .scoring import FeatureVector, PrmParams, grad_mse_matrix, zero_params

SCHEMA_VERSION = 1

Key = tuple[str, str, int]  # (problem_id, trajectory_id, step_index)


class UnknownKeyError(KeyError):
    """A reward-table lookup or update used a key that was never registered."""


@dataclass(frozen=True)
class NoisyRow:
    """One sampled partial-solution reward."""

    key: Key
    features: FeatureVector
    base: float
    k: int = 0
    passes: int = 0
    text_ref: str = ""


@dataclass(frozen=True)
class MetaRow:
    """One clean final-solution reward (from unit tests, 0 or 1)."""

    key: Key
    features: FeatureVector
    value: float
    text_ref: str = ""


def _feature_matrix(rows: Sequence[NoisyRow] | Sequence[MetaRow]) -> np.ndarray:
    return np.stack([r.features.values for r in rows])


@dataclass
class NoisyDataset:
    rows: list[NoisyRow]

    def __post_init__(self) -> None:
        seen = set()
        for row in self.rows:
            if row.key in seen:
                raise ValueError(f"duplicate noisy key {row.key}")
            seen.add(row.key)
            if not 0.0 <= row.base <= 1.0:
                raise ValueError(f"base reward {row.base} outside [0, 1] for {row.key}")

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class MetaDataset:
    rows: list[MetaRow]

    def __post_init__(self) -> None:
        for row in self.rows:
            if row.value not in (0.0, 1.0):
                raise ValueError(f"meta reward {row.value} is not binary for {row.key}")

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class RewardTable:
    """Base rewards plus trainable residuals, same key set."""

    base: dict[Key, float]
    residuals: dict[Key, float]

    def __post_init__(self) -> None:
        if set(self.base) != set(self.residuals):
            raise ValueError("base and residual key sets differ")


def reward_table_from(noisy: NoisyDataset) -> RewardTable:
    base = {row.key: float(row.base) for row in noisy.rows}
    return RewardTable(base=base, residuals={key: 0.0 for key in base})


def corrected(table: RewardTable, key: Key) -> float:
    """Clamped corrected reward for one key."""
    if key not in table.base:
        raise UnknownKeyError(key)
    return float(min(1.0, max(0.0, table.base[key] + table.residuals[key])))


def raw_corrected(table: RewardTable, key: Key) -> float:
    if key not in table.base:
        raise UnknownKeyError(key)
    return table.base[key] + table.residuals[key]


def _clamp_gate(raw: float) -> float:
    """Subgradient of the clamp: pass-through strictly inside (0, 1), zero
    outside and at the exact boundaries."""
    return 1.0 if 0.0 < raw < 1.0 else 0.0


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 1e-4
    eta_meta: float = 1e-3
    weight_decay: float = 1e-3
    batch_size: int = 16
    iterations: int = 2000
    fd_alpha_scale: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.eta <= 0 or self.eta_meta <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")
        if self.fd_alpha_scale <= 0:
            raise ValueError("fd_alpha_scale must be positive")


def inner_update(
    params: PrmParams,
    table: RewardTable,
    batch: Sequence[NoisyRow],
    eta: float,
    weight_decay: float = 0.0,
) -> PrmParams:
    """One scorer step toward the corrected targets; input params unchanged."""
    if not batch:
        raise ValueError("empty inner batch")
    matrix = _feature_matrix(batch)
    targets = np.array([corrected(table, row.key) for row in batch])
    grad = grad_mse_matrix(params.weights, matrix, targets)
    if weight_decay:
        decay = weight_decay * params.weights
        decay[0] = 0.0
        grad = grad + decay
    return PrmParams(params.weights - eta * grad)


def meta_loss(params: PrmParams, meta_batch: Sequence[MetaRow]) -> float:
    if not meta_batch:
        raise ValueError("empty meta batch")
    matrix = _feature_matrix(meta_batch)
    targets = np.array([row.value for row in meta_batch])
    s = _scores(params, matrix)
    return float(np.mean((s - targets) ** 2))


def _scores(params: PrmParams, matrix: np.ndarray) -> np.ndarray:
    z = np.clip(matrix @ params.weights, -35.0, 35.0)
    return 1.0 / (1.0 + np.exp(-z))


def _meta_grad_wrt_params(params: PrmParams, meta_batch: Sequence[MetaRow]) -> np.ndarray:
    matrix = _feature_matrix(meta_batch)
    targets = np.array([row.value for row in meta_batch])
    return grad_mse_matrix(params.weights, matrix, targets)


@dataclass(frozen=True)
class MetaGradient:
    grad: dict[Key, float]
    meta_loss: float
    v_norm: float
    alpha: float
    degenerate: bool


def meta_gradient_fd(
    params: PrmParams,
    table: RewardTable,
    noisy_batch: Sequence[NoisyRow],
    meta_batch: Sequence[MetaRow],
    config: TrainConfig,
) -> MetaGradient:
    """Finite-difference estimate of d(meta loss)/d(residual) per batch key.

    v is the meta-loss gradient at the inner-updated params; params are
    perturbed +-alpha*v with alpha = fd_alpha_scale / ||v||; each key's
    component is -eta times the centered difference of its target-gradient,
    gated to zero where the clamp is active. A zero v yields a degenerate
    (all-zero) gradient rather than an error."""
    params_hat = inner_update(params, table, noisy_batch, config.eta, config.weight_decay)
    loss_m = meta_loss(params_hat, meta_batch)
    v = _meta_grad_wrt_params(params_hat, meta_batch)
    v_norm = float(np.linalg.norm(v))
    if v_norm == 0.0:
        return MetaGradient({row.key: 0.0 for row in noisy_batch}, loss_m, 0.0, 0.0, True)

    alpha = config.fd_alpha_scale / v_norm
    matrix = _feature_matrix(noisy_batch)
    targets = np.array([corrected(table, row.key) for row in noisy_batch])
    gates = np.array([_clamp_gate(raw_corrected(table, row.key)) for row in noisy_batch])
    b = len(noisy_batch)

    up = PrmParams(params.weights + alpha * v)
    down = PrmParams(params.weights - alpha * v)
    # d(inner loss)/d(residual_k) at the perturbed params, clamp-gated.
    g_up = -(2.0 / b) * (_scores(up, matrix) - targets) * gates
    g_down = -(2.0 / b) * (_scores(down, matrix) - targets) * gates
    per_key = -config.eta * (g_up - g_down) / (2.0 * alpha)
    grad = {row.key: float(per_key[i]) for i, row in enumerate(noisy_batch)}
    return MetaGradient(grad, loss_m, v_norm, alpha, False)


def meta_gradient_bruteforce(
    params: PrmParams,
    table: RewardTable,
    noisy_batch: Sequence[NoisyRow],
    meta_batch: Sequence[MetaRow],
    config: TrainConfig,
    eps: float = 1e-5,
) -> dict[Key, float]:
    """Independent oracle: numerically differentiate meta_loss(inner_update)
    with respect to each residual by central differences."""
    grad: dict[Key, float] = {}
    for row in noisy_batch:
        losses = []
        for sign in (1.0, -1.0):
            residuals = dict(table.residuals)
            residuals[row.key] += sign * eps
            shifted = RewardTable(base=dict(table.base), residuals=residuals)
            params_hat = inner_update(params, shifted, noisy_batch, config.eta, config.weight_decay)
            losses.append(meta_loss(params_hat, meta_batch))
        grad[row.key] = (losses[0] - losses[1]) / (2.0 * eps)
    return grad


def meta_update(table: RewardTable, gradient: Mapping[Key, float], eta_meta: float) -> RewardTable:
    """Plain descent step on the residuals named in the gradient."""
    residuals = dict(table.residuals)
    for key, g in gradient.items():
        if key not in residuals:
            raise UnknownKeyError(key)
        residuals[key] = residuals[key] - eta_meta * g
    return RewardTable(base=dict(table.base), residuals=residuals)


class _EpochSampler:
    """Uniform epoch-wise shuffling: every row once per epoch, reshuffled
    between epochs, deterministic for a given generator."""

    def __init__(self, count: int, batch_size: int, rng: np.random.Generator) -> None:
        self._count = count
        self._batch = min(batch_size, count)
        self._rng = rng
        self._order: list[int] = []

    def next_batch(self) -> list[int]:
        while len(self._order) < self._batch:
            self._order.extend(self._rng.permutation(self._count).tolist())
        batch, self._order = self._order[: self._batch], self._order[self._batch :]
        return batch


@dataclass
class TrainResult:
    params: PrmParams
    table: RewardTable
    trace: list[dict]


def train(
    noisy: NoisyDataset,
    meta: MetaDataset,
    config: TrainConfig,
    params0: PrmParams | None = None,
) -> TrainResult:
    """Alternating loop: meta step on the residual table first, then the
    committed inner step on the scorer. The trace records, per iteration,
    the losses, gradient norms, and each batch key's raw/corrected target,
    gate state, and meta-gradient component."""
    if not noisy.rows or not meta.rows:
        raise ValueError("both datasets must be non-empty")
    dim = noisy.rows[0].features.dim
    params = params0 if params0 is not None else zero_params(dim)
    table = reward_table_from(noisy)

    seed_seq = np.random.SeedSequence(config.seed)
    noisy_ss, meta_ss = seed_seq.spawn(2)
    noisy_sampler = _EpochSampler(len(noisy.rows), config.batch_size, np.random.default_rng(noisy_ss))
    meta_sampler = _EpochSampler(len(meta.rows), config.batch_size, np.random.default_rng(meta_ss))

    trace: list[dict] = []
    for it in range(config.iterations):
        noisy_batch = [noisy.rows[i] for i in noisy_sampler.next_batch()]
        meta_batch = [meta.rows[i] for i in meta_sampler.next_batch()]

        raw_before = {row.key: raw_corrected(table, row.key) for row in noisy_batch}
        estimate = meta_gradient_fd(params, table, noisy_batch, meta_batch, config)
        table = meta_update(table, estimate.grad, config.eta_meta)

        matrix = _feature_matrix(noisy_batch)
        targets = np.array([corrected(table, row.key) for row in noisy_batch])
        scores = _scores(params, matrix)
        inner_loss = float(np.mean((scores - targets) ** 2))
        inner_grad = grad_mse_matrix(params.weights, matrix, targets)
        if config.weight_decay:
            decay = config.weight_decay * params.weights
            decay[0] = 0.0
            inner_grad = inner_grad + decay
        params = inner_update(params, table, noisy_batch, config.eta, config.weight_decay)

        meta_grad_norm = math.sqrt(math.fsum(g * g for g in estimate.grad.values()))
        record = {
            "schema_version": SCHEMA_VERSION,
            "iter": it,
            "inner_loss": inner_loss,
            "meta_loss": estimate.meta_loss,
            "inner_grad_norm": float(np.linalg.norm(inner_grad)),
            "meta_grad_norm": meta_grad_norm,
            "v_norm": estimate.v_norm,
            "degenerate": estimate.degenerate,
            "batch": [
                {
                    "key": list(row.key),
                    "raw": raw_before[row.key],
                    "grad": estimate.grad[row.key],
                    "corrected": corrected(table, row.key),
                }
                for row in noisy_batch
            ],
        }
        trace.append(record)

    return TrainResult(params=params, table=table, trace=trace)


def table_records(table: RewardTable) -> list[dict]:
    """RewardTable as serializable rows, one per key, insertion order."""
    rows = []
    for key in table.base:
        problem_id, trajectory_id, step_index = key
        rows.append(
            {
                "schema_version": SCHEMA_VERSION,
                "problem_id": problem_id,
                "trajectory_id": trajectory_id,
                "step_index": step_index,
                "base": table.base[key],
                "residual": table.residuals[key],
                "corrected": corrected(table, key),
            }
        )
    return rows


def table_from_records(records: Iterable[dict]) -> RewardTable:
    base: dict[Key, float] = {}
    residuals: dict[Key, float] = {}
    for rec in records:
        key = (rec["problem_id"], rec["trajectory_id"], int(rec["step_index"]))
        base[key] = float(rec["base"])
        residuals[key] = float(rec["residual"])
    return RewardTable(base=base, residuals=residuals)
