"""Deterministic answer extraction and correctness matching."""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from typing import Sequence

TAIL_CHARS = 300
LETTERS = "ABCD"
MATCH_PATHS = ("integer", "letter", "latest_substring", "normalized_equality", "empty_prediction")

# An integer not embedded in a decimal number ("42.0" and "3.14" do not match).
_INT_RE = re.compile(r"(?<![\w.])-?\d+(?![\d])(?!\.\d)")
_WS_RE = re.compile(r"\s+")
_EDGE_PUNCT = string.punctuation + "…“”‘’"


@dataclass(frozen=True)
class MatchOutcome:
    correct: bool
    matched_via: str
    extracted: str


def normalize_text(s: str) -> str:
    s = _WS_RE.sub(" ", s.lower()).strip()
    return s.strip(_EDGE_PUNCT).strip()


def _last_int(text: str) -> int | None:
    found = _INT_RE.findall(text)
    return int(found[-1]) if found else None


def extract_last_integer(text: str) -> int | None:
    """Last integer on the last non-empty line, else within the final 300 chars."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if lines:
        value = _last_int(lines[-1])
        if value is not None:
            return value
    return _last_int(text[-TAIL_CHARS:])


def _letter_pattern(num_choices: int) -> re.Pattern:
    cls = "[" + LETTERS[:num_choices] + "]"
    return re.compile(
        rf"\(({cls})\)"  # (B)
        rf"|(?<![A-Za-z0-9])({cls})[.):](?![A-Za-z0-9])"  # B.  B)  B:
        rf"|(?<![A-Za-z0-9])({cls})[ \t]*$",  # bare letter closing a line
        re.MULTILINE,
    )


def extract_option_letter(text: str, num_choices: int) -> str | None:
    if not 2 <= num_choices <= len(LETTERS):
        raise ValueError(f"num_choices must be in [2, {len(LETTERS)}], got {num_choices}")
    pattern = _letter_pattern(num_choices)
    for window in (text[-TAIL_CHARS:], text):
        matches = list(pattern.finditer(window))
        if matches:
            last = matches[-1]
            return next(g for g in last.groups() if g)
    return None


def _ground_truth_index(ground_truth: str, choices: Sequence[str]) -> int | None:
    gt = ground_truth.strip().strip("()").strip()
    if len(gt) == 1 and gt in LETTERS[: len(choices)]:
        return LETTERS.index(gt)
    norm = normalize_text(ground_truth)
    for i, choice in enumerate(choices):
        if normalize_text(choice) == norm:
            return i
    return None


def _latest_option(pred_norm: str, choices: Sequence[str]) -> int | None:
    best: tuple[int, int, int] | None = None  # (end index, option length, -index)
    for i, choice in enumerate(choices):
        opt = normalize_text(choice)
        if not opt:
            continue
        start = pred_norm.rfind(opt)
        if start < 0:
            continue
        key = (start + len(opt), len(opt), -i)
        if best is None or key > best:
            best = key
    return None if best is None else -best[2]


def match_correctness(eval_text: str, choices: Sequence[str], ground_truth: str) -> MatchOutcome:
    if not eval_text.strip():
        return MatchOutcome(False, "empty_prediction", "")

    if not choices:
        pred, gold = extract_last_integer(eval_text), extract_last_integer(ground_truth)
        if pred is not None and gold is not None:
            return MatchOutcome(pred == gold, "integer", str(pred))
        pred_norm = normalize_text(eval_text)
        return MatchOutcome(pred_norm == normalize_text(ground_truth), "normalized_equality", pred_norm)

    gold_idx = _ground_truth_index(ground_truth, choices)
    letter = None
    if len(choices) >= 2:
        letter = extract_option_letter(eval_text, min(len(choices), len(LETTERS)))
    if letter is not None:
        return MatchOutcome(gold_idx is not None and LETTERS.index(letter) == gold_idx, "letter", letter)

    pred_norm = normalize_text(eval_text)
    idx = _latest_option(pred_norm, choices)
    if idx is not None:
        return MatchOutcome(idx == gold_idx, "latest_substring", choices[idx])

    return MatchOutcome(pred_norm == normalize_text(ground_truth), "normalized_equality", pred_norm)
