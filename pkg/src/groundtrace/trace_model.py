"""On-disk trace format, validation, and SignalRecord assembly.

A trace file is UTF-8 JSON lines.  The optional first line is a header object
with ``schema_version`` and defaults (``k``, ``model_tag``, ``dataset_tag``,
``grounding_layers``); every following line is one generation record.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from groundtrace import grounding
from groundtrace.answer_matching import match_correctness
from groundtrace.config import SCHEMA_VERSION
from groundtrace.entropy import EntropySeries, span_entropy
from groundtrace.prompts import build_prompt  # noqa: F401  (part of the trace-model surface)
from groundtrace.segmentation import SegmentedResponse, select_evaluation_text
from groundtrace.trace_types import (
    PARSER_MODES,
    POSITIONS,
    TERMINATION_TYPES,
    AttentionSnapshot,
    GenerationTrace,
    SignalRecord,
    SpanBoundaries,
    TokenRecord,
    VisualTokenMap,
)

HEADER_DEFAULT_KEYS = ("k", "model_tag", "dataset_tag", "grounding_layers")


class TraceFormatError(ValueError):
    def __init__(self, line: int, field: str, message: str):
        self.line, self.field = line, field
        super().__init__(f"line {line}: field '{field}': {message}")


# --- parsing ----------------------------------------------------------------

def _need(obj: dict, key: str, line: int, prefix: str = ""):
    if key not in obj:
        raise TraceFormatError(line, prefix + key, "missing")
    return obj[key]


def _parse_tokens(raw, k: int | None, line: int) -> tuple[tuple[TokenRecord, ...], int]:
    if not isinstance(raw, list):
        raise TraceFormatError(line, "tokens", "must be a list")
    out = []
    for i, tok in enumerate(raw):
        where = f"tokens[{i}]"
        text = _need(tok, "token_text", line, where + ".")
        topk = _need(tok, "topk", line, where + ".")
        if not topk:
            raise TraceFormatError(line, where + ".topk", "empty top-k list")
        pairs = []
        for label, lp in topk:
            lp = float(lp)
            if not math.isfinite(lp):
                raise TraceFormatError(line, where + ".topk", f"non-finite logprob {lp}")
            pairs.append((str(label), lp))
        if k is None:
            k = len(pairs)
        if len(pairs) != k:
            raise TraceFormatError(line, where + ".topk", f"has {len(pairs)} entries, header k={k}")
        if k > 20:
            raise TraceFormatError(line, where + ".topk", f"k={k} exceeds 20")
        out.append(TokenRecord(str(text), tuple(pairs)))
    return tuple(out), k or 0


def _parse_spans(raw: dict, L: int, line: int) -> SpanBoundaries:
    vals = {key: _need(raw, key, line, "spans.") for key in ("t0", "t_think", "ans_start", "ans_end", "think_end_found")}
    spans = SpanBoundaries(int(vals["t0"]), int(vals["t_think"]), int(vals["ans_start"]), int(vals["ans_end"]), bool(vals["think_end_found"]))
    for key in ("t0", "t_think", "ans_start", "ans_end"):
        v = getattr(spans, key)
        if not 0 <= v < L:
            raise TraceFormatError(line, "spans." + key, f"{v} outside token range [0, {L})")
    if spans.t0 > spans.t_think:
        raise TraceFormatError(line, "spans.t_think", "t_think precedes t0")
    if spans.ans_start > spans.ans_end:
        raise TraceFormatError(line, "spans.ans_end", "ans_end precedes ans_start")
    if spans.think_end_found and not spans.t_think < spans.ans_start:
        raise TraceFormatError(line, "spans.ans_start", "answer must start after t_think when think end was found")
    return spans


def _parse_visual(raw: dict, line: int) -> VisualTokenMap:
    m = int(_need(raw, "m", line, "visual."))
    mask = tuple(int(i) for i in _need(raw, "bbox_mask", line, "visual."))
    valid = bool(_need(raw, "has_valid_bbox", line, "visual."))
    if m < 1:
        raise TraceFormatError(line, "visual.m", "need at least one visual token")
    bad = [i for i in mask if not 0 <= i < m]
    if bad:
        raise TraceFormatError(line, "visual.bbox_mask", f"indices {bad[:5]} outside [0, {m})")
    if len(set(mask)) != len(mask):
        raise TraceFormatError(line, "visual.bbox_mask", "duplicate indices")
    return VisualTokenMap(m, tuple(sorted(mask)), valid)


def _parse_snapshots(raw, m: int, L: int, line: int) -> tuple[AttentionSnapshot, ...]:
    if not isinstance(raw, list):
        raise TraceFormatError(line, "snapshots", "must be a list")
    snaps = {}
    for i, s in enumerate(raw):
        where = f"snapshots[{i}]."
        label = _need(s, "position_label", line, where)
        if label not in POSITIONS:
            raise TraceFormatError(line, where + "position_label", f"unknown label {label!r}")
        if label in snaps:
            raise TraceFormatError(line, where + "position_label", f"duplicate label {label}")
        idx = int(_need(s, "token_index", line, where))
        if not 0 <= idx < L:
            raise TraceFormatError(line, where + "token_index", f"{idx} outside [0, {L})")
        layers = {}
        for key, vec in _need(s, "layer_weights", line, where).items():
            w = np.asarray(vec, dtype=float)
            if w.shape != (m,):
                raise TraceFormatError(line, f"{where}layer_weights.{key}", f"length {w.size}, expected m={m}")
            if not np.all(np.isfinite(w)) or w.min() < 0 or w.max() > 1:
                raise TraceFormatError(line, f"{where}layer_weights.{key}", "weights must lie in [0, 1]")
            layers[int(key)] = w
        snaps[label] = AttentionSnapshot(label, idx, dict(sorted(layers.items())))
    missing = [p for p in POSITIONS if p not in snaps]
    if missing:
        raise TraceFormatError(line, "snapshots", f"missing positions {missing}")
    return tuple(snaps[p] for p in POSITIONS)


def parse_record(obj: dict, line: int, defaults: dict | None = None) -> GenerationTrace:
    defaults = defaults or {}
    if not isinstance(obj, dict):
        raise TraceFormatError(line, "<record>", "not a JSON object")
    tokens, _ = _parse_tokens(_need(obj, "tokens", line), defaults.get("k"), line)
    if not tokens:
        raise TraceFormatError(line, "tokens", "empty generation")
    L = len(tokens)
    termination = _need(obj, "termination", line)
    if termination not in TERMINATION_TYPES:
        raise TraceFormatError(line, "termination", f"unknown value {termination!r}")
    parser_mode = _need(obj, "parser_mode", line)
    if parser_mode not in PARSER_MODES:
        raise TraceFormatError(line, "parser_mode", f"unknown value {parser_mode!r}")
    visual = _parse_visual(_need(obj, "visual", line), line)
    model_tag = obj.get("model_tag", defaults.get("model_tag"))
    dataset_tag = obj.get("dataset_tag", defaults.get("dataset_tag"))
    if model_tag is None or dataset_tag is None:
        raise TraceFormatError(line, "model_tag" if model_tag is None else "dataset_tag", "missing and no header default")
    reached = obj.get("reached_max_tokens")
    return GenerationTrace(
        id=str(_need(obj, "id", line)),
        model_tag=str(model_tag),
        dataset_tag=str(dataset_tag),
        tokens=tokens,
        spans=_parse_spans(_need(obj, "spans", line), L, line),
        termination=termination,
        parser_mode=parser_mode,
        full_text=str(_need(obj, "full_text", line)),
        reasoning_text=str(_need(obj, "reasoning_text", line)),
        answer_text=str(_need(obj, "answer_text", line)),
        snapshots=_parse_snapshots(_need(obj, "snapshots", line), visual.m, L, line),
        visual=visual,
        question=str(obj.get("question", "")),
        choices=tuple(str(c) for c in obj.get("choices", ())),
        ground_truth=str(obj.get("ground_truth", "")),
        reached_max_tokens=None if reached is None else bool(reached),
        meta=dict(obj.get("meta", {})),
    )


def read_trace_file(path: str | Path) -> tuple[dict, list[GenerationTrace]]:
    """Return ``(header, traces)``; the header is ``{}`` when absent."""
    header: dict = {}
    traces: list[GenerationTrace] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(lineno, "<json>", str(exc)) from None
            if not traces and not header and isinstance(obj, dict) and "schema_version" in obj:
                if obj["schema_version"] != SCHEMA_VERSION:
                    raise TraceFormatError(lineno, "schema_version", f"unsupported version {obj['schema_version']!r}")
                header = obj
                continue
            trace = parse_record(obj, lineno, header)
            if trace.id in seen:
                raise TraceFormatError(lineno, "id", f"duplicate id {trace.id!r} (first on line {seen[trace.id]})")
            seen[trace.id] = lineno
            traces.append(trace)
    return header, traces


def load_traces(path: str | Path) -> list[GenerationTrace]:
    return read_trace_file(path)[1]


# --- serialisation ------------------------------------------------------------

def trace_to_dict(trace: GenerationTrace) -> dict[str, Any]:
    d: dict[str, Any] = {
        "id": trace.id,
        "model_tag": trace.model_tag,
        "dataset_tag": trace.dataset_tag,
        "tokens": [{"token_text": t.token_text, "topk": [[lab, lp] for lab, lp in t.topk]} for t in trace.tokens],
        "spans": {
            "t0": trace.spans.t0,
            "t_think": trace.spans.t_think,
            "ans_start": trace.spans.ans_start,
            "ans_end": trace.spans.ans_end,
            "think_end_found": trace.spans.think_end_found,
        },
        "termination": trace.termination,
        "parser_mode": trace.parser_mode,
        "full_text": trace.full_text,
        "reasoning_text": trace.reasoning_text,
        "answer_text": trace.answer_text,
        "snapshots": [
            {
                "position_label": s.position_label,
                "token_index": s.token_index,
                "layer_weights": {str(k): v.tolist() for k, v in s.layer_weights.items()},
            }
            for s in trace.snapshots
        ],
        "visual": {"m": trace.visual.m, "bbox_mask": list(trace.visual.bbox_mask), "has_valid_bbox": trace.visual.has_valid_bbox},
        "question": trace.question,
        "choices": list(trace.choices),
        "ground_truth": trace.ground_truth,
    }
    if trace.reached_max_tokens is not None:
        d["reached_max_tokens"] = trace.reached_max_tokens
    if trace.meta:
        d["meta"] = trace.meta
    return d


def dumps_traces(traces: Iterable[GenerationTrace], header: dict | None = None) -> str:
    buf = io.StringIO()
    if header is not None:
        buf.write(json.dumps({"schema_version": SCHEMA_VERSION, **header}, sort_keys=True) + "\n")
    for t in traces:
        buf.write(json.dumps(trace_to_dict(t), ensure_ascii=False) + "\n")
    return buf.getvalue()


def write_traces(path: str | Path, traces: Iterable[GenerationTrace], header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_traces(traces, header))


# --- signal derivation ----------------------------------------------------------

def stored_segmentation(trace: GenerationTrace) -> SegmentedResponse:
    return SegmentedResponse(
        trace.full_text, trace.reasoning_text, trace.answer_text, trace.spans.think_end_found, trace.parser_mode
    )


def trajectory(trace: GenerationTrace, layers: Sequence[int]) -> grounding.Trajectory:
    snaps = [trace.snapshot(p) for p in POSITIONS]
    V = tuple(grounding.visual_mass(s, layers) for s in snaps)
    A = None
    if trace.visual.has_valid_bbox:
        A = tuple(grounding.evidence_mass(s, layers, trace.visual.bbox_mask) for s in snaps)
    return grounding.Trajectory(tuple(s.token_index for s in snaps), V, A)


def derive_signal_record(trace: GenerationTrace, layers: Sequence[int]) -> SignalRecord:
    """Per-sample feature vector from a validated trace and a grounding layer set."""
    series = EntropySeries.from_logprobs(trace.logprob_matrix(), trace.spans)
    traj = trajectory(trace, layers)
    decay = grounding.decay_metrics(traj)
    outcome = match_correctness(
        select_evaluation_text(stored_segmentation(trace), trace.termination), trace.choices, trace.ground_truth
    )
    return SignalRecord(
        id=trace.id,
        model_tag=trace.model_tag,
        dataset_tag=trace.dataset_tag,
        correct=outcome.correct,
        H_full=span_entropy(series, "full"),
        H_ans=span_entropy(series, "answer"),
        V=traj.V,
        A_bbox=traj.A_bbox,
        V_thinking_auc=grounding.thinking_auc(traj.V[:5]),
        A_bbox_thinking_auc=None if traj.A_bbox is None else grounding.thinking_auc(traj.A_bbox[:5]),
        delta_V=decay.delta_V,
        delta_A_bbox=decay.delta_A_bbox,
        rvar_start=decay.rvar_start,
        rvar_ans_end=decay.rvar_ans_end,
        delta_rvar=decay.delta_rvar,
        V_reengagement=decay.V_reengagement,
        length_L=trace.length,
        termination=trace.termination,
        matched_via=outcome.matched_via,
    )


# --- signals CSV ----------------------------------------------------------------

SIGNAL_COLUMNS = (
    ["id", "model_tag", "dataset_tag", "correct", "H_full", "H_ans"]
    + [f"V_{p}" for p in POSITIONS]
    + [f"A_bbox_{p}" for p in POSITIONS]
    + [
        "V_thinking_auc",
        "A_bbox_thinking_auc",
        "delta_V",
        "delta_A_bbox",
        "rvar_start",
        "rvar_ans_end",
        "delta_rvar",
        "V_reengagement",
        "length_L",
        "termination",
        "matched_via",
    ]
)


def fmt_float(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if x == 0:
        return "0"
    return f"{x:.12g}"


def signal_row(r: SignalRecord) -> list[str]:
    V = r.V if r.V is not None else (None,) * 7
    A = r.A_bbox if r.A_bbox is not None else (None,) * 7
    return (
        [r.id, r.model_tag, r.dataset_tag, "1" if r.correct else "0", fmt_float(r.H_full), fmt_float(r.H_ans)]
        + [fmt_float(v) for v in V]
        + [fmt_float(a) for a in A]
        + [
            fmt_float(r.V_thinking_auc),
            fmt_float(r.A_bbox_thinking_auc),
            fmt_float(r.delta_V),
            fmt_float(r.delta_A_bbox),
            fmt_float(r.rvar_start),
            fmt_float(r.rvar_ans_end),
            fmt_float(r.delta_rvar),
            fmt_float(r.V_reengagement),
            str(r.length_L),
            r.termination,
            r.matched_via,
        ]
    )


def write_signals(path: str | Path, records: Iterable[SignalRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SIGNAL_COLUMNS)
        for r in records:
            w.writerow(signal_row(r))


def _opt(row: dict, key: str) -> float | None:
    v = row.get(key, "")
    return None if v in ("", None) else float(v)


def _series(row: dict, prefix: str) -> tuple[float, ...] | None:
    vals = [_opt(row, f"{prefix}_{p}") for p in POSITIONS]
    return None if any(v is None for v in vals) else tuple(vals)


def read_signals(path: str | Path) -> list[SignalRecord]:
    """Read a signals CSV; columns other than id/tags/correct/H_full/V_thinking_auc/length_L may be absent."""
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                SignalRecord(
                    id=row["id"],
                    model_tag=row["model_tag"],
                    dataset_tag=row["dataset_tag"],
                    correct=row["correct"] in ("1", "True", "true"),
                    H_full=float(row["H_full"]),
                    H_ans=_opt(row, "H_ans"),
                    V=_series(row, "V"),
                    A_bbox=_series(row, "A_bbox"),
                    V_thinking_auc=float(row["V_thinking_auc"]),
                    A_bbox_thinking_auc=_opt(row, "A_bbox_thinking_auc"),
                    delta_V=_opt(row, "delta_V"),
                    delta_A_bbox=_opt(row, "delta_A_bbox"),
                    rvar_start=_opt(row, "rvar_start"),
                    rvar_ans_end=_opt(row, "rvar_ans_end"),
                    delta_rvar=_opt(row, "delta_rvar"),
                    V_reengagement=_opt(row, "V_reengagement"),
                    length_L=int(float(row["length_L"])),
                    termination=row.get("termination") or "normal_stop",
                    matched_via=row.get("matched_via", ""),
                )
            )
    return out
