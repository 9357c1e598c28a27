"""Response segmentation, loop heuristics and termination classification."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Sequence

from groundtrace.config import ZLIB_LEVEL

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"


@dataclass(frozen=True)
class SegmentedResponse:
    full_text: str
    reasoning_text: str
    answer_text: str
    think_end_found: bool
    parser_mode: str
    degraded: bool = False


def segment_response(
    raw_content: str,
    raw_reasoning: str | None = None,
    parser_mode: str = "inline_think_tags",
    token_think_end: bool = False,
) -> SegmentedResponse:
    """Split a raw assistant message into full / reasoning / answer text.

    ``token_think_end`` reports whether a think-close token was located at the
    token level; it can only switch ``think_end_found`` on.
    """
    if parser_mode == "separate_reasoning_field":
        if raw_reasoning is None:
            raise ValueError("separate_reasoning_field requires raw_reasoning")
        full = raw_reasoning + raw_content
        # A non-empty content field means the server closed the reasoning block.
        ended = token_think_end or bool(raw_content.strip()) or THINK_CLOSE in full
        return SegmentedResponse(full, raw_reasoning, raw_content, ended, parser_mode)

    if raw_reasoning is not None:
        raise ValueError(f"raw_reasoning is only accepted in separate_reasoning_field mode, not {parser_mode}")

    if parser_mode == "content_only":
        ended = token_think_end or THINK_CLOSE in raw_content
        return SegmentedResponse(raw_content, "", raw_content, ended, parser_mode)

    if parser_mode != "inline_think_tags":
        raise ValueError(f"unknown parser mode {parser_mode!r}")

    open_at = raw_content.find(THINK_OPEN)
    search_from = open_at + len(THINK_OPEN) if open_at >= 0 else 0
    close_at = raw_content.find(THINK_CLOSE, search_from)
    if close_at >= 0:
        # The opening tag is often part of the chat template rather than the
        # generation, so a lone closing tag still delimits the reasoning.
        reasoning = raw_content[search_from:close_at]
        answer = raw_content[close_at + len(THINK_CLOSE) :]
        return SegmentedResponse(raw_content, reasoning.strip(), answer.strip(), True, parser_mode)
    if open_at >= 0:
        # Truncated inside the reasoning block.
        reasoning = raw_content[search_from:]
        return SegmentedResponse(raw_content, reasoning.strip(), "", token_think_end, parser_mode)
    # No tags at all: behave like content_only and flag it.
    return SegmentedResponse(raw_content, "", raw_content.strip(), token_think_end, parser_mode, degraded=True)


def unique_ngram_ratio(tokens: Sequence[str], n: int = 4, tail_fraction: float = 0.25) -> float:
    """Distinct / total token n-grams over the trailing ``tail_fraction`` of tokens."""
    if n < 1:
        raise ValueError("n must be >= 1")
    tail_len = math.ceil(tail_fraction * len(tokens)) if tokens else 0
    tail = list(tokens[len(tokens) - tail_len :]) if tail_len else []
    if len(tail) < n:
        return 1.0
    grams = [tuple(tail[i : i + n]) for i in range(len(tail) - n + 1)]
    return len(set(grams)) / len(grams)


def compression_ratio(text: str, level: int = ZLIB_LEVEL) -> float:
    raw = text.encode("utf-8")
    if not raw:
        return 1.0
    return len(zlib.compress(raw, level)) / len(raw)


def classify_termination(
    tokens: Sequence,
    full_text: str,
    reached_max_tokens: bool,
    *,
    n: int = 4,
    tail_fraction: float = 0.25,
    unique_ngram_threshold: float = 0.5,
    compression_threshold: float = 0.15,
    zlib_level: int = ZLIB_LEVEL,
) -> str:
    """Priority rules: loop, then plain budget exhaustion, then normal stop.

    ``tokens`` may be strings or objects with a ``token_text`` attribute.
    """
    if not reached_max_tokens:
        return "normal_stop"
    texts = [t if isinstance(t, str) else t.token_text for t in tokens]
    looping = (
        unique_ngram_ratio(texts, n, tail_fraction) < unique_ngram_threshold
        and compression_ratio(full_text, zlib_level) < compression_threshold
    )
    return "max_tokens_loop" if looping else "max_tokens"


def select_evaluation_text(seg: SegmentedResponse, termination: str) -> str:
    if termination in ("max_tokens", "max_tokens_loop") and not seg.think_end_found:
        return ""
    if seg.parser_mode == "separate_reasoning_field":
        return seg.answer_text
    return seg.answer_text if seg.answer_text else seg.full_text
