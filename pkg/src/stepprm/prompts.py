"""Prompt assembly for candidate generation and verification scoring.

The generation system prompt is built from four named sections whose headers
are configuration (defaults below) and must appear verbatim in the assembled
text; the body wording under each header is ours. The verifier prompt ends
with a fixed directive restricting the reply to the two verification tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

DEFAULT_SECTION_HEADERS = (
    "Logic decomposition",
    "Function organization",
    "Docstrings in each function",
    "Example demonstration",
)

VERIFIER_DIRECTIVE = "Only respond with + or -"

DEFAULT_GENERATION_TEMPERATURE = 0.8
DEFAULT_SCORING_TEMPERATURE = 0.0

# Bundled few-shot example: structure and docstring style only.
DEFAULT_FEW_SHOT = '''def main():
    """Count how many distinct pair sums a list of integers produces.

    Read n and the list from stdin, collect the sum of every unordered
    index pair into a set, and print the set's size.
    """
    n = int(input())
    numbers = list(map(int, input().split()))
    print(count_distinct_pair_sums(numbers))


def count_distinct_pair_sums(numbers):
    """Return the number of distinct values numbers[i] + numbers[j], i < j."""
    sums = set()
    for i in range(len(numbers)):
        for j in range(i + 1, len(numbers)):
            sums.add(numbers[i] + numbers[j])
    return len(sums)


main()
'''

_SECTION_BODIES = (
    "Split the solution into logically independent operations and give each "
    "one its own function. One function handles one concern.",
    "Put the highest-level function first (for example main()), then the "
    "helper functions it calls, in call order where possible. Every function "
    "stays at the top level of the file; do not nest function definitions.",
    "Start every function with a triple-quoted docstring. For the top "
    "function, state the overall approach, the algorithm chosen, and the key "
    "stages; for helpers, state what the helper computes and how.",
    "The example below shows the expected layout and docstring style only. "
    "Solve the problem you are given, not the example's problem.",
)

_INTRO = (
    "You will receive a programming problem. Write a complete, correct "
    "Python program that satisfies the problem and passes its tests. Follow "
    "these code organization rules:"
)


@dataclass(frozen=True)
class CofPrompt:
    """Generation system prompt: four configured section headers plus a
    few-shot example filling the last section."""

    section_headers: tuple[str, str, str, str] = DEFAULT_SECTION_HEADERS
    few_shot: str = DEFAULT_FEW_SHOT

    def __post_init__(self) -> None:
        if len(self.section_headers) != 4:
            raise ValueError("exactly four section headers are required")
        if any(not h for h in self.section_headers):
            raise ValueError("section headers must be non-empty")

    def system_text(self) -> str:
        h1, h2, h3, h4 = self.section_headers
        b1, b2, b3, b4 = _SECTION_BODIES
        parts = [
            _INTRO,
            f"{h1}: {b1}",
            f"{h2}: {b2}",
            f"{h3}: {b3}",
            f"{h4}: {b4}",
            self.few_shot.rstrip() + "\n",
        ]
        return "\n\n".join(parts)


def generation_messages(prompt: CofPrompt, statement: str) -> list[dict]:
    return [
        {"role": "system", "content": prompt.system_text()},
        {"role": "user", "content": statement},
    ]


def completion_messages(prompt: CofPrompt, statement: str, partial_text: str) -> list[dict]:
    """Continuation sampling: the partial program rides as an assistant
    prefix for the model to extend."""
    return generation_messages(prompt, statement) + [
        {"role": "assistant", "content": partial_text}
    ]


def verifier_system_text() -> str:
    return (
        "You judge partially written Python programs. Given a problem and a "
        "program prefix inside <code>...</code> tags, reply + when everything "
        "written so far is on a correct path to a working solution, and reply "
        "- when you see any mistake, broken logic, or a dead end in what is "
        f"written so far. {VERIFIER_DIRECTIVE}."
    )


def verifier_messages(statement: str, partial_text: str) -> list[dict]:
    return [
        {"role": "system", "content": verifier_system_text()},
        {"role": "user", "content": f"{statement}\n\n<code>\n{partial_text}\n</code>"},
    ]
