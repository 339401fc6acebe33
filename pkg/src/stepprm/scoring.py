"""Hashed-feature linear-sigmoid scorer over (problem, code) pairs.

Features are a bag of tokens hashed into a fixed number of buckets with
FNV-1a, scaled by 1/sqrt(total tokens); component 0 is a constant bias. The
scorer is sigmoid(w . x). Also provides the exact MSE gradient used by both
training loops, the two-token generative score transform, and the binary
parameter file format.
"""

from __future__ import annotations

import json
import math
from fractions import Fraction
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_DIM = 4096
PARAMS_MAGIC = b"FPRM"
PARAMS_VERSION = 1
_HEADER = struct.Struct("<4sIII")

_TOKEN_RE = re.compile(r"\w+")
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_SIGMOID_CLIP = 35.0


class DimensionMismatchError(ValueError):
    """Feature vector and parameter dimensions disagree."""


class DegeneratePairError(ValueError):
    """Both verification-token probabilities are zero."""


class ParamsFormatError(ValueError):
    """Parameter file is missing the magic, or header fields disagree."""


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray  # float64, shape (dim,)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True, eq=False)
class PrmParams:
    weights: np.ndarray  # float64, shape (dim,); index 0 is the bias weight

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])


@dataclass(frozen=True)
class TokenProbPair:
    """Probabilities of the positive and negative verification tokens."""

    p_plus: float
    p_minus: float

    def __post_init__(self) -> None:
        if self.p_plus < 0 or self.p_minus < 0:
            raise ValueError("token probabilities must be non-negative")


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def featurize(statement: str, text: str, dim: int = DEFAULT_DIM) -> FeatureVector:
    """Hash both texts' tokens into buckets 1..dim-1 and scale counts by
    1/sqrt(total tokens); bucket 0 is fixed to 1 as the bias input."""
    if dim < 2:
        raise ValueError("dim must be at least 2")
    values = np.zeros(dim, dtype=np.float64)
    tokens = tokenize(statement) + tokenize(text)
    for token in tokens:
        values[fnv1a64(token.encode("utf-8")) % (dim - 1) + 1] += 1.0
    if tokens:
        values /= math.sqrt(len(tokens))
    values[0] = 1.0
    return FeatureVector(values)


def zero_params(dim: int = DEFAULT_DIM) -> PrmParams:
    return PrmParams(np.zeros(dim, dtype=np.float64))


def _sigmoid(z: np.ndarray | float) -> np.ndarray | float:
    z = np.clip(z, -_SIGMOID_CLIP, _SIGMOID_CLIP)
    return 1.0 / (1.0 + np.exp(-z))


def _check_dim(params: PrmParams, features: FeatureVector) -> None:
    if params.dim != features.dim:
        raise DimensionMismatchError(f"params dim {params.dim} != features dim {features.dim}")


def score(params: PrmParams, features: FeatureVector) -> float:
    """Partial-solution score, strictly inside (0, 1)."""
    _check_dim(params, features)
    return float(_sigmoid(float(params.weights @ features.values)))


def score_matrix(params: PrmParams, matrix: np.ndarray) -> np.ndarray:
    """Vectorized score over rows of a feature matrix."""
    return _sigmoid(matrix @ params.weights)


def score_trajectory(params: PrmParams, seq, statement: str, dim: int | None = None) -> float:
    """Trajectory score: mean of the per-prefix scores over all steps."""
    from .steps import prefix  # local import keeps module deps one-way

    d = params.dim if dim is None else dim
    per_step = [
        score(params, featurize(statement, prefix(seq, t).text, d))
        for t in range(1, seq.step_count + 1)
    ]
    return aggregate_scores(per_step)


def aggregate_scores(step_scores: Sequence[float]) -> float:
    """Mean of per-step scores; the trajectory-level score. fsum keeps the
    mean exact under reordering of the steps."""
    if not step_scores:
        raise ValueError("no step scores to aggregate")
    return math.fsum(step_scores) / len(step_scores)


def generative_score(pair: TokenProbPair) -> float:
    """Two-token verdict turned into a scalar: p+ / (p+ + p-).

    Computed as an exact rational and rounded once; summing then dividing in
    floats rounds twice and misses clean ratios like 0.6/(0.6+0.2)."""
    if pair.p_plus + pair.p_minus <= 0.0:
        raise DegeneratePairError("both verification-token probabilities are zero")
    ratio = Fraction(pair.p_plus) / (Fraction(pair.p_plus) + Fraction(pair.p_minus))
    return float(ratio)


def mse_loss(
    params: PrmParams,
    batch: Sequence[tuple[FeatureVector, float]],
    weight_decay: float = 0.0,
) -> float:
    """Mean squared error of sigmoid scores against targets, plus an optional
    0.5 * weight_decay * ||w||^2 term that excludes the bias weight."""
    if not batch:
        raise ValueError("empty batch")
    matrix = np.stack([f.values for f, _ in batch])
    targets = np.array([t for _, t in batch], dtype=np.float64)
    s = score_matrix(params, matrix)
    loss = float(np.mean((s - targets) ** 2))
    if weight_decay:
        loss += 0.5 * weight_decay * float(params.weights[1:] @ params.weights[1:])
    return loss


def grad_mse(
    params: PrmParams,
    batch: Sequence[tuple[FeatureVector, float]],
    weight_decay: float = 0.0,
) -> np.ndarray:
    """Exact gradient of mse_loss: per sample 2(s - g) s (1 - s) x, averaged
    over the batch, plus weight_decay * w with the bias excluded."""
    if not batch:
        raise ValueError("empty batch")
    matrix = np.stack([f.values for f, _ in batch])
    targets = np.array([t for _, t in batch], dtype=np.float64)
    for f, _ in batch:
        _check_dim(params, f)
    grad = grad_mse_matrix(params.weights, matrix, targets)
    if weight_decay:
        decay = weight_decay * params.weights
        decay[0] = 0.0
        grad = grad + decay
    return grad


def grad_mse_matrix(weights: np.ndarray, matrix: np.ndarray, targets: np.ndarray) -> np.ndarray:
    s = _sigmoid(matrix @ weights)
    coeff = 2.0 * (s - targets) * s * (1.0 - s)
    return (coeff @ matrix) / matrix.shape[0]


def save_params(path: str | Path, params: PrmParams, featurizer: dict | None = None) -> None:
    """Write the binary weight file and its JSON sidecar (featurizer config)."""
    path = Path(path)
    header = _HEADER.pack(PARAMS_MAGIC, PARAMS_VERSION, params.dim, 0)
    payload = params.weights.astype("<f8").tobytes()
    path.write_bytes(header + payload)
    sidecar = {"schema_version": 1, "dim": params.dim, "featurizer": featurizer or {"dim": params.dim}}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")


def load_params(path: str | Path) -> PrmParams:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ParamsFormatError("file too short for header")
    magic, version, dim, _reserved = _HEADER.unpack_from(raw)
    if magic != PARAMS_MAGIC:
        raise ParamsFormatError(f"bad magic {magic!r}")
    if version != PARAMS_VERSION:
        raise ParamsFormatError(f"unsupported version {version}")
    body = raw[_HEADER.size :]
    if len(body) != 8 * dim:
        raise ParamsFormatError(f"expected {8 * dim} weight bytes, found {len(body)}")
    weights = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return PrmParams(weights)
