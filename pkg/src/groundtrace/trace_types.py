"""Core data types shared by every analysis module."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

POSITIONS = ("Start", "Early", "Mid", "Late", "EndThink", "AnsStart", "AnsEnd")
THINKING_POSITIONS = POSITIONS[:5]

TERMINATION_TYPES = ("normal_stop", "max_tokens", "max_tokens_loop")
PARSER_MODES = ("inline_think_tags", "separate_reasoning_field", "content_only")

TerminationType = Literal["normal_stop", "max_tokens", "max_tokens_loop"]
ParserMode = Literal["inline_think_tags", "separate_reasoning_field", "content_only"]


@dataclass(frozen=True)
class TokenRecord:
    token_text: str
    topk: tuple[tuple[str, float], ...]

    @property
    def logprobs(self) -> np.ndarray:
        return np.array([lp for _, lp in self.topk], dtype=float)


@dataclass(frozen=True)
class SpanBoundaries:
    """Inclusive token indices of the reasoning and answer spans."""

    t0: int
    t_think: int
    ans_start: int
    ans_end: int
    think_end_found: bool


@dataclass(frozen=True, eq=False)
class AttentionSnapshot:
    position_label: str
    token_index: int
    layer_weights: dict[int, np.ndarray]

    def __eq__(self, other):
        if not isinstance(other, AttentionSnapshot):
            return NotImplemented
        return (
            self.position_label == other.position_label
            and self.token_index == other.token_index
            and self.layer_weights.keys() == other.layer_weights.keys()
            and all(np.array_equal(v, other.layer_weights[k]) for k, v in self.layer_weights.items())
        )


@dataclass(frozen=True)
class VisualTokenMap:
    m: int
    bbox_mask: tuple[int, ...]
    has_valid_bbox: bool


@dataclass(frozen=True)
class GenerationTrace:
    id: str
    model_tag: str
    dataset_tag: str
    tokens: tuple[TokenRecord, ...]
    spans: SpanBoundaries
    termination: TerminationType
    parser_mode: ParserMode
    full_text: str
    reasoning_text: str
    answer_text: str
    snapshots: tuple[AttentionSnapshot, ...]
    visual: VisualTokenMap
    question: str = ""
    choices: tuple[str, ...] = ()
    ground_truth: str = ""
    reached_max_tokens: bool | None = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def length(self) -> int:
        return len(self.tokens)

    def snapshot(self, label: str) -> AttentionSnapshot:
        for snap in self.snapshots:
            if snap.position_label == label:
                return snap
        raise KeyError(f"trace {self.id}: no snapshot at position {label}")

    def logprob_matrix(self) -> np.ndarray:
        return np.array([[lp for _, lp in tok.topk] for tok in self.tokens], dtype=float)


@dataclass(frozen=True)
class SignalRecord:
    id: str
    model_tag: str
    dataset_tag: str
    correct: bool
    H_full: float
    H_ans: float | None
    V: tuple[float, ...] | None
    A_bbox: tuple[float, ...] | None
    V_thinking_auc: float
    A_bbox_thinking_auc: float | None
    delta_V: float | None
    delta_A_bbox: float | None
    rvar_start: float | None
    rvar_ans_end: float | None
    delta_rvar: float | None
    V_reengagement: float | None
    length_L: int
    termination: str
    matched_via: str = ""

    # Named views used by the probe feature sets.
    @property
    def V_start(self) -> float | None:
        return None if self.V is None else self.V[0]

    @property
    def V_ans_end(self) -> float | None:
        return None if self.V is None else self.V[6]

    @property
    def A_bbox_ans_end(self) -> float | None:
        return None if self.A_bbox is None else self.A_bbox[6]
