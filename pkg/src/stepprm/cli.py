"""Command line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 policy
backend error, 4 sandbox error. Failures print a single JSON record to
stderr so callers can parse the reason.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from .config import ConfigError, load_config
from .pipeline import (
    DataError,
    run_generate,
    run_ingest,
    run_label,
    run_report,
    run_select,
    run_train,
)
from .policy import MissingApiKeyError, PolicyError
from .records import JsonLineError, dumps_record
from .sandbox import SandboxProtocolError, SandboxUnavailableError

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_POLICY = 3
EXIT_SANDBOX = 4

_MODES = ("prm", "orm")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepprm",
        description="Function-level reward modeling pipeline over a run directory.",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in ("ingest", "generate", "label", "train", "select", "report"):
        stage_parser = sub.add_parser(stage, help=f"run the {stage} stage")
        stage_parser.add_argument("--config", required=True, help="path to the YAML run config")
        stage_parser.add_argument("--seed", type=int, default=None, help="override config seed")
        stage_parser.add_argument("--k", type=int, default=None, help="override rollouts per step")
        stage_parser.add_argument("--n", type=int, default=None, help="override candidates per problem")
        stage_parser.add_argument("--problems", default=None, help="override problems file path")
        stage_parser.add_argument("--run-dir", default=None, help="override run directory")
        if stage in ("select", "report"):
            stage_parser.add_argument(
                "--mode", choices=_MODES, default="prm", help="scoring mode for selection"
            )
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.k is not None:
        overrides["k"] = args.k
    if args.n is not None:
        overrides["n"] = args.n
    # Path overrides resolve against the caller's cwd, not the config dir.
    if args.problems is not None:
        overrides["problems"] = str(Path(args.problems).absolute())
    if args.run_dir is not None:
        overrides["run_dir"] = str(Path(args.run_dir).absolute())
    return overrides


def _fail(code: int, kind: str, detail: str) -> int:
    sys.stderr.write(dumps_record({"error": kind, "detail": detail}) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, overrides=_overrides(args))
        if args.stage == "ingest":
            result = run_ingest(config)
        elif args.stage == "generate":
            result = run_generate(config)
        elif args.stage == "label":
            result = run_label(config)
        elif args.stage == "train":
            result = run_train(config)
        elif args.stage == "select":
            result = run_select(config, args.mode)
        else:
            print(run_report(config, args.mode))
            return 0
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config_error", str(exc))
    except (JsonLineError, DataError) as exc:
        return _fail(EXIT_DATA, "data_error", str(exc))
    except MissingApiKeyError as exc:
        return _fail(EXIT_POLICY, "missing_api_key", str(exc))
    except PolicyError as exc:
        return _fail(EXIT_POLICY, "policy_error", str(exc))
    except (SandboxUnavailableError, SandboxProtocolError) as exc:
        return _fail(EXIT_SANDBOX, "sandbox_error", str(exc))
    print(dumps_record(result))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
