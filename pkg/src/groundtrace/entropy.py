"""Token entropy from stored top-k log-probabilities.

Log-probabilities arrive in nats; entropies are always reported in bits.
Only the stored top-k mass is used, renormalised to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from groundtrace.trace_types import SpanBoundaries


def normalize_topk(logprobs) -> np.ndarray:
    """Softmax over the top-k log-probabilities (last axis)."""
    lp = np.asarray(logprobs, dtype=float)
    if lp.shape[-1] == 0:
        raise ValueError("need at least one log-probability")
    if not np.all(np.isfinite(lp)):
        raise ValueError("log-probabilities must be finite")
    shifted = np.exp(lp - lp.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def token_entropy(p) -> float:
    """Shannon entropy of one probability vector, in bits."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"probabilities sum to {p.sum():.9g}, expected 1")
    nz = p[p > 0]
    return float(max(0.0, -np.sum(nz * np.log2(nz))))


def entropy_rows(logprobs) -> np.ndarray:
    """Vectorised entropy (bits) for an ``(L, k)`` array of log-probabilities."""
    p = normalize_topk(logprobs)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return np.maximum(0.0, -terms.sum(axis=-1))


@dataclass(frozen=True)
class EntropySeries:
    H: np.ndarray
    spans: SpanBoundaries

    @classmethod
    def from_logprobs(cls, logprobs, spans: SpanBoundaries) -> "EntropySeries":
        return cls(entropy_rows(logprobs), spans)


def span_entropy(series: EntropySeries, span: str) -> float:
    """Mean token entropy over ``"full"`` (all generated tokens) or ``"answer"``."""
    if span == "full":
        values = series.H
    elif span == "answer":
        values = series.H[series.spans.ans_start : series.spans.ans_end + 1]
    else:
        raise ValueError(f"unknown span {span!r}")
    if len(values) == 0:
        raise ValueError(f"empty {span} span: sample is degenerate and should be filtered")
    return float(np.mean(values))
