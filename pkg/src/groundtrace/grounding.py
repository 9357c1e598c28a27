"""Grounding-layer selection, attention mass, trajectory sampling and decay metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from groundtrace.trace_types import POSITIONS, AttentionSnapshot, SpanBoundaries

_PROGRESS = (Fraction(0), Fraction(2, 5), Fraction(3, 5), Fraction(4, 5))


def auroc(scores, labels) -> float:
    """Probability a random positive outscores a random negative; ties count 1/2.

    Counts, for each positive, the negatives strictly below and equal to it via
    binary search on the sorted negatives.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    pos, neg = scores[labels], np.sort(scores[~labels])
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUROC needs at least one positive and one negative")
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    return float((below.sum() + 0.5 * (upto - below).sum()) / (len(pos) * len(neg)))


def bbox_indicator(m: int, bbox_mask: Iterable[int]) -> np.ndarray:
    y = np.zeros(m, dtype=bool)
    y[list(bbox_mask)] = True
    return y


def _layer_auroc(calibration, layer) -> tuple[float, int, int]:
    values, skipped = [], 0
    for weights, mask in calibration:
        vec = weights[layer] if isinstance(weights, Mapping) else weights
        y = np.asarray(mask).astype(bool)
        if y.all() or not y.any():
            skipped += 1
            continue
        values.append(auroc(vec, y))
    if not values:
        raise ValueError(f"layer {layer}: every calibration sample has a one-class mask")
    return float(np.mean(values)), len(values), skipped


def layer_auroc(calibration: Sequence[tuple], layer: int) -> float:
    """Mean per-sample AUROC of attention weights against the evidence mask.

    Each calibration item is ``(weights, mask)`` where ``weights`` is either the
    attention vector for ``layer`` or a mapping ``layer -> vector`` and ``mask``
    is a binary vector over visual tokens.  One-class masks are skipped.
    """
    return _layer_auroc(calibration, layer)[0]


@dataclass(frozen=True)
class LayerAurocProfile:
    auroc: dict[int, float]
    peak_layer: int
    selected_block: tuple[int, ...]
    n_used: int
    n_skipped: int


def select_grounding_layers(profile, k_layers: int = 6) -> list[int]:
    """Contiguous block of ``k_layers`` centred on the peak-AUROC layer.

    ``profile`` maps layer -> AUROC (or is a sequence indexed by layer).  The
    block is shifted, never truncated, to stay inside the valid layer range.
    The earliest layer wins ties for the peak.
    """
    if not isinstance(profile, Mapping):
        profile = dict(enumerate(profile))
    layers = sorted(profile)
    lo, hi = layers[0], layers[-1]
    if k_layers < 1 or k_layers > hi - lo + 1:
        raise ValueError(f"k_layers={k_layers} does not fit layers {lo}..{hi}")
    peak = max(layers, key=lambda l: (profile[l], -l))
    start = peak - k_layers // 2
    start = min(max(start, lo), hi - k_layers + 1)
    return list(range(start, start + k_layers))


def build_layer_profile(calibration: Sequence[tuple], layers: Iterable[int], k_layers: int = 6) -> LayerAurocProfile:
    scores, used, skipped = {}, 0, 0
    for layer in layers:
        scores[layer], used, skipped = _layer_auroc(calibration, layer)
    block = select_grounding_layers(scores, k_layers)
    peak = max(scores, key=lambda l: (scores[l], -l))
    return LayerAurocProfile(scores, peak, tuple(block), used, skipped)


def _layer_mean(snapshot: AttentionSnapshot, layers: Sequence[int], select=None) -> float:
    if len(layers) == 0:
        raise ValueError("empty grounding layer set")
    total = 0.0
    for layer in layers:
        try:
            w = snapshot.layer_weights[layer]
        except KeyError:
            raise KeyError(f"snapshot {snapshot.position_label} has no layer {layer}") from None
        total += float(np.sum(w if select is None else w[select]))
    return total / len(layers)


def visual_mass(snapshot: AttentionSnapshot, layers: Sequence[int]) -> float:
    """Layer-averaged total attention onto all visual tokens."""
    return _layer_mean(snapshot, layers)


def evidence_mass(snapshot: AttentionSnapshot, layers: Sequence[int], bbox_mask, has_valid_bbox: bool = True) -> float:
    """Visual mass restricted to evidence-region tokens (absolute, not renormalised)."""
    if not has_valid_bbox:
        raise ValueError("no valid bounding box for this sample")
    idx = np.asarray(sorted(bbox_mask), dtype=int)
    return _layer_mean(snapshot, layers, idx)


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def probe_positions(spans: SpanBoundaries) -> list[int]:
    """Token indices of the seven canonical positions."""
    t0, t_think = spans.t0, spans.t_think
    delta = t_think - t0
    reasoning = [min(max(_round_half_up(t0 + f * delta), t0), t_think) for f in _PROGRESS]
    return reasoning + [t_think, spans.ans_start, spans.ans_end]  # 4 + 1 + 2


def thinking_auc(values: Sequence[float]) -> float:
    """Trapezoidal area over the five thinking positions at unit spacing."""
    v = [float(x) for x in values]
    if len(v) != 5:
        raise ValueError(f"expected 5 thinking-phase values, got {len(v)}")
    return 0.5 * sum(v[i] + v[i + 1] for i in range(4))


@dataclass(frozen=True)
class Trajectory:
    positions: tuple[int, ...]
    V: tuple[float, ...]
    A_bbox: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(self.V) != len(POSITIONS) or (self.A_bbox is not None and len(self.A_bbox) != len(POSITIONS)):
            raise ValueError("trajectory needs one value per canonical position")

    @property
    def thinking_V(self) -> tuple[float, ...]:
        return self.V[:5]


@dataclass(frozen=True)
class DecayMetrics:
    delta_V: float
    delta_A_bbox: float | None
    relative_V_loss: float | None
    relative_A_bbox_loss: float | None
    rvar_start: float | None
    rvar_ans_end: float | None
    delta_rvar: float | None
    V_reengagement: float


def _ratio(num, den):
    return None if num is None or den == 0 else num / den


def decay_metrics(traj: Trajectory) -> DecayMetrics:
    V = traj.V
    delta_V = V[0] - V[6]
    A = traj.A_bbox
    delta_A = None if A is None else A[0] - A[6]
    rvar_start = None if A is None else _ratio(A[0], V[0])
    rvar_end = None if A is None else _ratio(A[6], V[6])
    delta_rvar = None if rvar_start is None or rvar_end is None else rvar_start - rvar_end
    return DecayMetrics(
        delta_V=delta_V,
        delta_A_bbox=delta_A,
        relative_V_loss=_ratio(delta_V, V[0]),
        relative_A_bbox_loss=None if A is None else _ratio(delta_A, A[0]),
        rvar_start=rvar_start,
        rvar_ans_end=rvar_end,
        delta_rvar=delta_rvar,
        V_reengagement=V[5] - V[4],
    )
