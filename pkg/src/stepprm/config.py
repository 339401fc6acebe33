"""Run configuration: YAML file, flag overrides, validation, config hash.

Exactly one policy backend is configured per run (a mock script path or an
HTTP backend). API keys are named environment variables only; the config
file holds the variable's name, never the key. The config hash (first 12 hex
of sha256 over the canonical config, seed excluded) names train run
directories together with the seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .correction import TrainConfig
from .scoring import DEFAULT_DIM

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """The run configuration is missing, contradictory, or unresolvable."""


@dataclass(frozen=True)
class BackendConfig:
    endpoint_url: str
    model: str
    api_key_env: str
    temperature: float = 0.8

    def __post_init__(self) -> None:
        if not self.endpoint_url or not self.model or not self.api_key_env:
            raise ConfigError("backend needs endpoint_url, model, and api_key_env")


@dataclass(frozen=True)
class RunConfig:
    problems_path: Path
    run_dir: Path
    mock_script_path: Path | None = None
    backend: BackendConfig | None = None
    runner_command: tuple[str, ...] | None = None
    k: int = 8
    n: int = 8
    dim: int = DEFAULT_DIM
    seed: int = 0
    comparison: str = "normalized"
    generation_temperature: float = 0.8
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        if (self.mock_script_path is None) == (self.backend is None):
            raise ConfigError("configure exactly one policy backend: mock_script or backend")
        if self.k < 1 or self.n < 1 or self.dim < 2:
            raise ConfigError("k and n must be >= 1 and dim >= 2")
        if self.comparison not in ("normalized", "exact"):
            raise ConfigError("comparison must be 'normalized' or 'exact'")

    @property
    def mock_mode(self) -> bool:
        return self.mock_script_path is not None


def _require(mapping: dict, key: str, context: str) -> object:
    if key not in mapping:
        raise ConfigError(f"{context} is missing required key {key!r}")
    return mapping[key]


def _train_config(raw: dict, seed: int) -> TrainConfig:
    known = {"eta", "eta_meta", "weight_decay", "batch_size", "iterations", "fd_alpha_scale"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown train keys: {sorted(unknown)}")
    try:
        return TrainConfig(seed=seed, **{k: v for k, v in raw.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train config: {exc}") from exc


def parse_config(raw: dict, base_dir: Path, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from a parsed YAML mapping plus CLI overrides.

    Relative paths resolve against the config file's directory."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    merged = dict(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value

    def _path(value: object) -> Path:
        p = Path(str(value))
        return p if p.is_absolute() else base_dir / p

    problems_path = _path(_require(merged, "problems", "config"))
    run_dir = _path(_require(merged, "run_dir", "config"))

    policy_raw = merged.get("policy") or {}
    if not isinstance(policy_raw, dict):
        raise ConfigError("policy section must be a mapping")
    mock_script = policy_raw.get("mock_script")
    backend_raw = policy_raw.get("backend")
    backend = None
    if backend_raw is not None:
        if not isinstance(backend_raw, dict):
            raise ConfigError("policy.backend must be a mapping")
        if "api_key" in backend_raw:
            raise ConfigError("api keys never live in config files; set api_key_env instead")
        backend = BackendConfig(
            endpoint_url=str(_require(backend_raw, "endpoint_url", "policy.backend")),
            model=str(_require(backend_raw, "model", "policy.backend")),
            api_key_env=str(_require(backend_raw, "api_key_env", "policy.backend")),
            temperature=float(backend_raw.get("temperature", 0.8)),
        )

    sandbox_raw = merged.get("sandbox") or {}
    runner_command = sandbox_raw.get("runner_command")
    if runner_command is not None:
        if not isinstance(runner_command, list) or not all(isinstance(x, str) for x in runner_command):
            raise ConfigError("sandbox.runner_command must be a list of strings")
        runner_command = tuple(runner_command)

    seed = int(merged.get("seed", 0))
    try:
        return RunConfig(
            problems_path=problems_path,
            run_dir=run_dir,
            mock_script_path=_path(mock_script) if mock_script is not None else None,
            backend=backend,
            runner_command=runner_command,
            k=int(merged.get("k", 8)),
            n=int(merged.get("n", 8)),
            dim=int(merged.get("dim", DEFAULT_DIM)),
            seed=seed,
            comparison=str(merged.get("comparison", "normalized")),
            generation_temperature=float(merged.get("generation_temperature", 0.8)),
            train=_train_config(merged.get("train") or {}, seed),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    config = parse_config(raw or {}, path.parent.resolve(), overrides)
    if not config.problems_path.exists():
        raise ConfigError(f"problems file not found: {config.problems_path}")
    if config.mock_script_path is not None and not config.mock_script_path.exists():
        raise ConfigError(f"mock script not found: {config.mock_script_path}")
    return config


def config_hash(config: RunConfig) -> str:
    """12 hex chars naming the configuration. The seed stays out so runs
    differing only by seed share a hash prefix, and file locations stay out
    so moving a run tree does not rename it."""
    canonical = {
        "schema_version": SCHEMA_VERSION,
        "mock_mode": config.mock_mode,
        "backend": {
            "endpoint_url": config.backend.endpoint_url,
            "model": config.backend.model,
            "api_key_env": config.backend.api_key_env,
            "temperature": config.backend.temperature,
        }
        if config.backend
        else None,
        "runner_command": list(config.runner_command) if config.runner_command else None,
        "k": config.k,
        "n": config.n,
        "dim": config.dim,
        "comparison": config.comparison,
        "generation_temperature": config.generation_temperature,
        "train": {
            "eta": config.train.eta,
            "eta_meta": config.train.eta_meta,
            "weight_decay": config.train.weight_decay,
            "batch_size": config.train.batch_size,
            "iterations": config.train.iterations,
            "fd_alpha_scale": config.train.fd_alpha_scale,
        },
    }
    digest = hashlib.sha256(json.dumps(canonical, sort_keys=True).encode("utf-8")).hexdigest()
    return digest[:12]
