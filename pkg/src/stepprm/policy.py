"""Policy adapters: scripted mock and chat-completion HTTP client.

Both satisfy one contract: complete(problem, partial_text, temperature,
seed) returns a SourceProgram whose text extends partial_text (an empty
partial asks for a full candidate program). Mock runs are deterministic
given the seed and never touch the network.

The HTTP client reads its API key from a named environment variable only;
keys never live in config files, and logged request/response bodies pass
through redaction before they reach the log.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import requests

from .prompts import (
    CofPrompt,
    completion_messages,
    generation_messages,
    verifier_messages,
)
from .records import Problem
from .scoring import TokenProbPair
from .steps import SourceProgram

logger = logging.getLogger("stepprm.policy")

MOCK_SEED_SLOTS = 1000  # completions per trajectory slot in the seed layout


class PolicyError(RuntimeError):
    """The policy adapter failed to produce a usable program."""


class MissingApiKeyError(PolicyError):
    """The configured API key environment variable is absent or empty."""


class PolicyAdapter(Protocol):
    def complete(
        self, problem: Problem, partial_text: str, temperature: float, seed: int
    ) -> SourceProgram: ...


def normalize_code(text: str) -> str:
    """Trailing whitespace per line stripped, trailing blank lines dropped."""
    lines = [line.rstrip() for line in text.split("\n")]
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines)


def extends_prefix(partial_text: str, full_text: str) -> bool:
    """Adapter contract: the completion contains the partial program as a
    prefix after whitespace normalization."""
    if not partial_text:
        return True
    return normalize_code(full_text).startswith(normalize_code(partial_text))


def splice_completion(partial_text: str, continuation: str) -> str:
    text = partial_text.rstrip() + "\n\n" + continuation.lstrip("\n")
    return text if text.endswith("\n") else text + "\n"


def strip_code_fences(text: str) -> str:
    """Unwrap a single markdown code fence (with or without a language tag)."""
    stripped = text.strip()
    if not stripped.startswith("```"):
        return text
    lines = stripped.split("\n")
    if lines[-1].strip() == "```":
        lines = lines[1:-1]
    else:
        lines = lines[1:]
    return "\n".join(lines) + "\n"


@dataclass
class MockPolicy:
    """Scripted adapter. The script maps each problem id to candidate
    programs (picked by seed) and a completion recipe: a pass suffix, a fail
    suffix, and a 0/1 pattern choosing between them per sample index. The
    sample index is the low seed digits, matching the seed layout
    base*1e6 + slot*1e3 + i."""

    script: dict
    provenance: str = "mock"

    def __post_init__(self) -> None:
        problems = self.script.get("problems")
        if not isinstance(problems, dict) or not problems:
            raise PolicyError("mock script needs a non-empty 'problems' map")
        for pid, entry in problems.items():
            if not isinstance(entry, dict):
                raise PolicyError(f"mock script entry for {pid!r} must be an object")
            candidates = entry.get("candidates")
            if candidates is not None and (
                not isinstance(candidates, list) or not all(isinstance(c, str) for c in candidates) or not candidates
            ):
                raise PolicyError(f"mock candidates for {pid!r} must be a non-empty list of strings")
            completions = entry.get("completions")
            if completions is not None:
                missing = {"pass_suffix", "fail_suffix", "pass_pattern"} - set(completions)
                if missing:
                    raise PolicyError(f"mock completions for {pid!r} missing {sorted(missing)}")
                pattern = completions["pass_pattern"]
                if not isinstance(pattern, list) or not pattern or any(p not in (0, 1) for p in pattern):
                    raise PolicyError(f"mock pass_pattern for {pid!r} must be a non-empty 0/1 list")

    @classmethod
    def from_file(cls, path: str | Path) -> "MockPolicy":
        try:
            script = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise PolicyError(f"cannot load mock script {path}: {exc}") from exc
        return cls(script=script)

    def _entry(self, problem_id: str) -> dict:
        entry = self.script["problems"].get(problem_id)
        if entry is None:
            raise PolicyError(f"mock script has no entry for problem {problem_id!r}")
        return entry

    def complete(
        self, problem: Problem, partial_text: str, temperature: float, seed: int
    ) -> SourceProgram:
        entry = self._entry(problem.problem_id)
        index = seed % MOCK_SEED_SLOTS
        if not partial_text:
            candidates = entry.get("candidates")
            if not candidates:
                raise PolicyError(f"mock script has no candidates for {problem.problem_id!r}")
            text = candidates[index % len(candidates)]
            if not text.endswith("\n"):
                text += "\n"
            return SourceProgram(problem.problem_id, text, provenance=self.provenance)
        completions = entry.get("completions")
        if not completions:
            raise PolicyError(f"mock script has no completions for {problem.problem_id!r}")
        pattern = completions["pass_pattern"]
        suffix = completions["pass_suffix"] if pattern[index % len(pattern)] else completions["fail_suffix"]
        return SourceProgram(
            problem.problem_id, splice_completion(partial_text, suffix), provenance=self.provenance
        )

    def verification_pair(self, problem: Problem, partial_text: str) -> TokenProbPair:
        entry = self._entry(problem.problem_id)
        pair = entry.get("verification", [1.0, 1.0])
        return TokenProbPair(float(pair[0]), float(pair[1]))


@dataclass
class HttpChatPolicy:
    """Minimal chat-completions client. Retries transport failures twice,
    unwraps code fences, and splices the partial program back in when the
    model returns only the continuation."""

    endpoint_url: str
    model: str
    api_key_env: str
    prompt: CofPrompt = field(default_factory=CofPrompt)
    timeout_s: float = 60.0
    max_retries: int = 2
    provenance: str = "llm"

    def __post_init__(self) -> None:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise MissingApiKeyError(
                f"environment variable {self.api_key_env} is not set; refusing to start a live backend"
            )
        self._api_key = key
        self._session = requests.Session()

    def _redact(self, text: str) -> str:
        return text.replace(self._api_key, "***")

    def _post(self, body: dict) -> dict:
        logger.debug("request %s", self._redact(json.dumps(body, sort_keys=True)))
        last_error = "no attempt made"
        for attempt in range(self.max_retries + 1):
            try:
                response = self._session.post(
                    self.endpoint_url,
                    json=body,
                    headers={"Authorization": f"Bearer {self._api_key}"},
                    timeout=self.timeout_s,
                )
            except requests.RequestException as exc:
                last_error = f"transport error: {exc}"
                continue
            if response.status_code >= 500:
                last_error = f"server error {response.status_code}"
                continue
            if response.status_code >= 400:
                raise PolicyError(f"backend rejected the request: {response.status_code} {self._redact(response.text)}")
            try:
                payload = response.json()
            except ValueError as exc:
                raise PolicyError(f"backend response is not JSON: {exc}") from exc
            logger.debug("response %s", self._redact(json.dumps(payload, sort_keys=True)))
            return payload
        raise PolicyError(f"backend unreachable after {self.max_retries} retries: {last_error}")

    @staticmethod
    def _content(payload: dict) -> str:
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise PolicyError(f"malformed backend response: {exc!r}") from exc

    def complete(
        self, problem: Problem, partial_text: str, temperature: float, seed: int
    ) -> SourceProgram:
        if partial_text:
            messages = completion_messages(self.prompt, problem.statement, partial_text)
        else:
            messages = generation_messages(self.prompt, problem.statement)
        payload = self._post(
            {"model": self.model, "messages": messages, "temperature": temperature, "seed": seed}
        )
        text = strip_code_fences(self._content(payload))
        if partial_text and not extends_prefix(partial_text, text):
            text = splice_completion(partial_text, text)
        if not text.endswith("\n"):
            text += "\n"
        return SourceProgram(problem.problem_id, text, provenance=self.provenance)

    def verification_pair(self, problem: Problem, partial_text: str) -> TokenProbPair:
        payload = self._post(
            {
                "model": self.model,
                "messages": verifier_messages(problem.statement, partial_text),
                "temperature": 0.0,
                "max_tokens": 1,
                "logprobs": True,
                "top_logprobs": 8,
            }
        )
        p_plus, p_minus = 0.0, 0.0
        try:
            top = payload["choices"][0]["logprobs"]["content"][0]["top_logprobs"]
        except (KeyError, IndexError, TypeError):
            top = []
        for item in top:
            token = str(item.get("token", "")).strip()
            prob = math.exp(float(item["logprob"]))
            if token == "+":
                p_plus += prob
            elif token == "-":
                p_minus += prob
        if p_plus == 0.0 and p_minus == 0.0:
            content = self._content(payload).strip()
            if content == "+":
                return TokenProbPair(1.0, 0.0)
            if content == "-":
                return TokenProbPair(0.0, 1.0)
            raise PolicyError(f"verifier reply carries no usable verdict: {content!r}")
        return TokenProbPair(p_plus, p_minus)
