"""Benchmark prompt templates (hint line, question line, optional choices)."""

from __future__ import annotations

from typing import Sequence

DATASETS = ("MathVista", "HallusionBench", "MMMU_Pro")

_NUMERIC = {
    "integer": ("an integer", "1, 2, 3"),
    "float1": ("a floating-point number with one decimal place", "1.2, 1.3, 1.4"),
    "float2": ("a floating-point number with two decimal places", "1.23, 1.34, 1.45"),
}
_MCQ_HINT = "Hint: Please answer the question and provide the correct option letter, e.g., {}, at the end."


def _choices_block(choices: Sequence[str]) -> str:
    if not choices:
        raise ValueError("multiple-choice prompt needs at least one choice")
    if len(choices) > 4:
        raise ValueError("option letters are limited to A-D")
    return "Choices: " + " ".join(f"({'ABCD'[i]}) {c}" for i, c in enumerate(choices))


def build_prompt(
    dataset_tag: str,
    question: str,
    choices: Sequence[str] = (),
    hint_variant: str | None = None,
) -> str:
    """Render the fixed prompt for one benchmark item.

    ``hint_variant`` is only meaningful for MathVista: one of ``integer``,
    ``float1``, ``float2`` or ``mcq``.  By default MathVista uses ``mcq`` when
    choices are given and ``integer`` otherwise.
    """
    if dataset_tag not in DATASETS:
        raise ValueError(f"unknown dataset {dataset_tag!r}; expected one of {DATASETS}")

    if dataset_tag == "HallusionBench":
        choices = tuple(choices) or ("Yes", "No")
        hint = _MCQ_HINT.format("A, B")
        return f"{hint}\nQuestion: {question}\n{_choices_block(choices)}"

    if dataset_tag == "MMMU_Pro":
        return f"{_MCQ_HINT.format('A, B, C, D')}\nQuestion: {question}\n{_choices_block(choices)}"

    variant = hint_variant or ("mcq" if choices else "integer")
    if variant == "mcq":
        return f"{_MCQ_HINT.format('A, B, C, D')}\nQuestion: {question}\n{_choices_block(choices)}"
    if variant not in _NUMERIC:
        raise ValueError(f"unknown MathVista hint variant {variant!r}")
    kind, example = _NUMERIC[variant]
    hint = (
        f"Hint: Please answer the question requiring {kind} answer and provide the final value, "
        f"e.g., {example}, at the end."
    )
    return f"{hint}\nQuestion: {question}"
