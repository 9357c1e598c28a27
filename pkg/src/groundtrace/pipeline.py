"""Command implementations: each reads inputs named in a RunConfig and writes CSV tables.

Every table gets a JSON sidecar with the seeds and thresholds used, and every
command writes ``config.resolved.json`` so the run can be replayed.  Worker
counts only change scheduling, never results, so they are not echoed.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import sys
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from groundtrace import __version__
from groundtrace import probes, selective, stats, synth
from groundtrace.answer_matching import MATCH_PATHS
from groundtrace.config import RunConfig
from groundtrace.grounding import bbox_indicator, build_layer_profile
from groundtrace.segmentation import THINK_CLOSE, classify_termination, segment_response
from groundtrace.trace_model import (
    TraceFormatError,
    derive_signal_record,
    fmt_float,
    read_signals,
    read_trace_file,
    write_signals,
    write_traces,
)
from groundtrace.trace_types import POSITIONS, TERMINATION_TYPES, GenerationTrace, SignalRecord

ECHO_NAME = "config.resolved.json"


class PipelineError(RuntimeError):
    """Fail-fast error; the CLI turns it into a nonzero exit code."""


# --- output helpers -------------------------------------------------------

class Outputs:
    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.dir = Path(cfg.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.notices: list[str] = []
        self.written: list[Path] = []

    def notice(self, msg: str) -> None:
        self.notices.append(msg)
        print(f"notice: {msg}", file=sys.stderr)

    def table(self, name: str, header: Sequence[str], rows: Iterable[Sequence], extra: dict | None = None) -> Path:
        rows = [[_cell(v) for v in row] for row in rows]
        path = self.dir / f"{name}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        self.sidecar(name, {"columns": list(header), "rows": len(rows), **(extra or {})})
        self.written.append(path)
        return path

    def sidecar(self, name: str, meta: dict) -> None:
        c = self.cfg
        body = {
            "table": name,
            "command": self.command,
            "version": __version__,
            "seed": c.seed,
            "thresholds": {
                "alpha": c.alpha,
                "veto_rate": c.veto_rate,
                "q": c.q,
                "ece_bins": c.ece_bins,
                "c_grid": c.c_grid,
                "folds": c.folds,
                "repeats": c.repeats,
                "train_fraction": c.train_fraction,
                "interaction_C": c.interaction_C,
                "interaction_bootstrap": c.interaction_bootstrap,
                "normal_stop_only": c.normal_stop_only,
            },
            "notices": list(self.notices),
            **meta,
        }
        (self.dir / f"{name}.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def echo(self, cfg: RunConfig | None = None) -> None:
        (self.dir / ECHO_NAME).write_text((cfg or self.cfg).to_json(), encoding="utf-8")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v) if np.isfinite(v) else ""
    return str(v)


def _count_cell(k: int, n: int) -> str:
    return f"{k}/{n} ({100.0 * k / n:.1f}%)" if n else "0/0 (--)"


# --- record selection -------------------------------------------------------

def _keep_cell(cfg: RunConfig, model: str, dataset: str) -> bool:
    return (cfg.model_tags is None or model in cfg.model_tags) and (cfg.dataset_tags is None or dataset in cfg.dataset_tags)


def load_signal_inputs(cfg: RunConfig) -> list[SignalRecord]:
    if not cfg.inputs:
        raise PipelineError("no input files given")
    records: list[SignalRecord] = []
    for path in cfg.inputs:
        try:
            records.extend(read_signals(path))
        except (OSError, KeyError, ValueError) as exc:
            raise PipelineError(f"{path}: cannot read signals table ({exc})") from None
    seen = set()
    for r in records:
        key = (r.model_tag, r.dataset_tag, r.id)
        if key in seen:
            raise PipelineError(f"duplicate sample id {r.id} in cell {r.model_tag}/{r.dataset_tag}")
        seen.add(key)
    return [r for r in records if _keep_cell(cfg, r.model_tag, r.dataset_tag)]


def analysis_records(cfg: RunConfig, records: Sequence[SignalRecord]) -> list[SignalRecord]:
    if cfg.normal_stop_only:
        return [r for r in records if r.termination == "normal_stop"]
    return list(records)


def cells(records: Sequence) -> dict[tuple[str, str], list]:
    out: dict[tuple[str, str], list] = defaultdict(list)
    for r in records:
        out[(r.model_tag, r.dataset_tag)].append(r)
    return dict(sorted(out.items()))


# --- score ------------------------------------------------------------------

def rescore_trace(trace: GenerationTrace, cfg: RunConfig) -> GenerationTrace:
    """Re-run segmentation and termination classification on the stored raw fields."""
    if trace.parser_mode == "separate_reasoning_field":
        seg = segment_response(trace.answer_text, trace.reasoning_text, trace.parser_mode)
    else:
        token_end = any(t.token_text.strip() == THINK_CLOSE for t in trace.tokens)
        seg = segment_response(trace.full_text, None, trace.parser_mode, token_think_end=token_end)
    reached = trace.reached_max_tokens if trace.reached_max_tokens is not None else trace.length >= cfg.max_tokens
    termination = classify_termination(
        trace.tokens,
        seg.full_text,
        reached,
        n=cfg.ngram_n,
        tail_fraction=cfg.tail_fraction,
        unique_ngram_threshold=cfg.unique_ngram_threshold,
        compression_threshold=cfg.compression_threshold,
        zlib_level=cfg.zlib_level,
    )
    spans = trace.spans
    if seg.think_end_found != spans.think_end_found:
        spans = dataclasses.replace(spans, think_end_found=seg.think_end_found and spans.t_think < spans.ans_start)
    return dataclasses.replace(
        trace,
        termination=termination,
        full_text=seg.full_text,
        reasoning_text=seg.reasoning_text,
        answer_text=seg.answer_text,
        spans=spans,
    )


def resolve_layers(cfg: RunConfig, model_tag: str, header: dict) -> list[int]:
    if cfg.layers:
        return list(cfg.layers)
    if model_tag in cfg.grounding_layers:
        return list(cfg.grounding_layers[model_tag])
    if header.get("grounding_layers"):
        return [int(x) for x in header["grounding_layers"]]
    raise PipelineError(f"no grounding layers for model {model_tag!r}: pass --layers, set grounding_layers, or run `layers`")


def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def cmd_score(cfg: RunConfig, workers: int = 1) -> Outputs:
    out = Outputs(cfg, "score")
    if not cfg.inputs:
        raise PipelineError("no trace files given")
    records: list[SignalRecord] = []
    resolved = dict(cfg.grounding_layers)
    for path in cfg.inputs:
        try:
            header, traces = read_trace_file(path)
        except TraceFormatError as exc:
            raise PipelineError(f"{path}: {exc}") from None
        traces = [t for t in traces if _keep_cell(cfg, t.model_tag, t.dataset_tag)]
        layer_sets = {}
        for t in traces:
            if t.model_tag not in layer_sets:
                layer_sets[t.model_tag] = resolve_layers(cfg, t.model_tag, header)
                if not cfg.layers:
                    resolved.setdefault(t.model_tag, layer_sets[t.model_tag])

        def one(t: GenerationTrace) -> SignalRecord:
            try:
                return derive_signal_record(rescore_trace(t, cfg), layer_sets[t.model_tag])
            except (KeyError, ValueError) as exc:
                raise PipelineError(f"{path}: sample {t.id}: {exc}") from None

        records.extend(_pmap(one, traces, workers))

    filtered = [r for r in records if r.termination == "normal_stop"]
    for name, rows in (("signals_all", records), ("signals", filtered if cfg.normal_stop_only else records)):
        path = out.dir / f"{name}.csv"
        write_signals(path, rows)
        out.sidecar(name, {"rows": len(rows), "grounding_layers": {k: resolved[k] for k in sorted(resolved)} if not cfg.layers else cfg.layers})
        out.written.append(path)

    term_rows, count_rows = [], []
    for (model, dataset), group in cells(records).items():
        counts = {t: sum(r.termination == t for r in group) for t in TERMINATION_TYPES}
        term_rows.append([model, dataset, len(group)] + [counts[t] for t in TERMINATION_TYPES])
        normal = [r for r in group if r.termination == "normal_stop"]
        count_rows.append([model, dataset, len(group), len(normal), sum(r.correct for r in normal), sum(not r.correct for r in normal)])
    out.table("termination", ["Model", "Dataset", "Total", *TERMINATION_TYPES], term_rows)
    out.table(
        "sample_counts",
        ["Model", "Dataset", "Total Samples", "Normal-Stop Samples", "Correct (normal-stop)", "Incorrect (normal-stop)"],
        count_rows,
    )
    # Non-integer numeric answers (e.g. one-decimal floats) fall through to
    # normalised string equality; the per-cell path counts make that visible.
    path_rows = []
    for (model, dataset), group in cells(records).items():
        path_rows.append([model, dataset] + [sum(r.matched_via == p for r in group) for p in MATCH_PATHS])
        n_eq = path_rows[-1][2 + MATCH_PATHS.index("normalized_equality")]
        if n_eq:
            out.notice(f"{model}/{dataset}: {n_eq} answers judged by normalized string equality")
    out.table("match_paths", ["Model", "Dataset", *MATCH_PATHS], path_rows)
    out.echo(dataclasses.replace(cfg, grounding_layers=resolved) if not cfg.layers else cfg)
    return out


# --- layers -------------------------------------------------------------------

def cmd_layers(cfg: RunConfig, workers: int = 1) -> Outputs:
    """Per-layer evidence-localisation AUROC from the Start snapshot of calibration traces."""
    out = Outputs(cfg, "layers")
    by_model: dict[str, list[GenerationTrace]] = defaultdict(list)
    for path in cfg.inputs:
        try:
            _, traces = read_trace_file(path)
        except TraceFormatError as exc:
            raise PipelineError(f"{path}: {exc}") from None
        for t in traces:
            if cfg.model_tags is None or t.model_tag in cfg.model_tags:
                by_model[t.model_tag].append(t)
    if not by_model:
        raise PipelineError("no calibration traces")
    rows, selected = [], {}
    for model in sorted(by_model):
        calib, layer_sets = [], []
        for t in by_model[model]:
            if not t.visual.has_valid_bbox:
                continue
            snap = t.snapshot("Start")
            calib.append((snap.layer_weights, bbox_indicator(t.visual.m, t.visual.bbox_mask)))
            layer_sets.append(set(snap.layer_weights))
        if not calib:
            out.notice(f"model {model}: no calibration traces with a valid bbox; skipped")
            continue
        layers = sorted(set.intersection(*layer_sets))
        try:
            profile = build_layer_profile(calib, layers, cfg.k_layers)
        except ValueError as exc:
            out.notice(f"model {model}: {exc}; skipped")
            continue
        selected[model] = list(profile.selected_block)
        for layer in layers:
            rows.append([model, layer, profile.auroc[layer], layer in profile.selected_block, layer == profile.peak_layer])
        if profile.n_skipped:
            out.notice(f"model {model}: {profile.n_skipped} one-class masks skipped")
    out.table("layer_profile", ["Model", "Layer", "AUROC", "Selected", "Peak"], rows, {"grounding_layers": selected})
    out.table("layer_selection", ["Model", "Layers"], [[m, " ".join(map(str, v))] for m, v in selected.items()])
    out.echo()
    return out


# --- analyze --------------------------------------------------------------------

def _entropy_rows(groups, attr: str, out: Outputs):
    rows = []
    for (model, dataset), group in groups.items():
        vals = [(getattr(r, attr), r.correct) for r in group if getattr(r, attr) is not None]
        right = [v for v, c in vals if c]
        wrong = [v for v, c in vals if not c]
        try:
            rep = stats.effect_report(right, wrong, "correct-incorrect")
            rows.append([model, dataset, len(vals), rep.mean_a, rep.mean_b, rep.cohens_d, rep.welch_p, ""])
        except ValueError as exc:
            out.notice(f"{attr} {model}/{dataset}: degenerate ({exc})")
            rows.append([model, dataset, len(vals), _mean(right), _mean(wrong), None, None, "degenerate"])
    return rows


def _mean(xs):
    return float(np.mean(xs)) if len(xs) else None


def _decay_rows(groups, kind: str):
    rows = []
    for (model, dataset), group in groups.items():
        if kind == "V":
            use = [r for r in group if r.V is not None]
            start = [r.V[0] for r in use]
            end = [r.V[6] for r in use]
            delta = [r.delta_V for r in use]
        else:
            use = [r for r in group if r.A_bbox is not None]
            start = [r.A_bbox[0] for r in use]
            end = [r.A_bbox[6] for r in use]
            delta = [r.delta_A_bbox for r in use]
        mean_start, mean_delta = _mean(start), _mean(delta)
        pct = None if not use or mean_start == 0 else 100.0 * mean_delta / mean_start
        rows.append(
            [model, dataset, len(group), mean_start, _mean(end), mean_delta, pct, _count_cell(sum(d > 0 for d in delta), len(use))]
        )
    return rows


def _trajectory_tables(groups, feature: str, out: Outputs):
    d_rows, p_rows = [], []
    auc_name = f"{feature}_thinking_auc"
    for (model, dataset), group in groups.items():
        use = [r for r in group if getattr(r, feature) is not None]
        try:
            res = stats.per_position_discrimination(use, feature)
            d_rows.append([model, dataset, len(use)] + [res[k].cohens_d for k in (*POSITIONS, auc_name)] + [""])
            p_rows.append([model, dataset, len(use)] + [res[k].welch_p for k in (*POSITIONS, auc_name)] + [""])
        except ValueError as exc:
            out.notice(f"trajectory {feature} {model}/{dataset}: degenerate ({exc})")
            d_rows.append([model, dataset, len(use)] + [None] * 8 + ["degenerate"])
            p_rows.append([model, dataset, len(use)] + [None] * 8 + ["degenerate"])
    return d_rows, p_rows


def cmd_analyze(cfg: RunConfig, workers: int = 1) -> Outputs:
    out = Outputs(cfg, "analyze")
    records = analysis_records(cfg, load_signal_inputs(cfg))
    if not records:
        raise PipelineError("no records left after filtering")
    groups = cells(records)
    n_label = "N (normal-stop)" if cfg.normal_stop_only else "N"
    for attr, label, name in (("H_full", "H_full", "entropy_full"), ("H_ans", "H_ans", "entropy_answer")):
        out.table(
            name,
            ["Model", "Dataset", "N", f"Mean {label} (correct)", f"Mean {label} (incorrect)", "Cohen's d", "p-value", "Note"],
            _entropy_rows(groups, attr, out),
            {"direction": "correct-incorrect"},
        )
    out.table(
        "decay_V",
        ["Model", "Dataset", n_label, "V_start", "V_ans_end", "ΔV (absolute)", "ΔV (%)", "Samples with ΔV>0"],
        _decay_rows(groups, "V"),
    )
    out.table(
        "decay_A_bbox",
        ["Model", "Dataset", n_label, "A_bbox_start", "A_bbox_ans_end", "ΔA_bbox (absolute)", "ΔA_bbox (%)", "Samples with ΔA_bbox>0"],
        _decay_rows(groups, "A_bbox"),
        {"denominator": "valid bbox samples"},
    )
    for feature in ("V", "A_bbox"):
        d_rows, p_rows = _trajectory_tables(groups, feature, out)
        header = ["Model", "Dataset", "n", *POSITIONS, f"{feature}_thinking_auc", "Note"]
        out.table(f"trajectory_{feature}_d", header, d_rows, {"statistic": "Cohen's d", "direction": "incorrect-correct"})
        out.table(f"trajectory_{feature}_p", header, p_rows, {"statistic": "Welch p-value"})
    mean_rows = []
    for (model, dataset), group in groups.items():
        for cls_name, flag in (("correct", True), ("incorrect", False)):
            sub = [r for r in group if r.correct == flag]
            for i, pos in enumerate(POSITIONS):
                V = [r.V[i] for r in sub if r.V is not None]
                A = [r.A_bbox[i] for r in sub if r.A_bbox is not None]
                mean_rows.append([model, dataset, cls_name, pos, len(V), _mean(V), len(A), _mean(A)])
    out.table("trajectory_means", ["Model", "Dataset", "Class", "Position", "n_V", "Mean V", "n_A_bbox", "Mean A_bbox"], mean_rows)
    out.echo()
    return out


# --- transfer / veto / quadrants ---------------------------------------------------

def _transfer_plan(cfg: RunConfig, records, out: Outputs):
    by_model: dict[str, dict[str, list]] = defaultdict(lambda: defaultdict(list))
    for r in records:
        by_model[r.model_tag][r.dataset_tag].append(r)
    plan = []
    for model in sorted(by_model):
        datasets = by_model[model]
        if len(datasets) < 2:
            out.notice(f"model {model}: only {len(datasets)} dataset(s); no transfer pairs")
            continue
        for train, test in selective.transfer_pairs(list(datasets)):
            plan.append((model, train, test, datasets[train], datasets[test]))
    return plan


def _run_pairs(cfg: RunConfig, plan, level: str, out: Outputs, workers: int, veto_rate=None):
    results = []
    for model, train, test, tr, te in plan:
        try:
            res = selective.run_transfer(
                tr, te, level, cfg.repeats, cfg.seed,
                train_fraction=cfg.train_fraction, grid=cfg.c_grid, folds=cfg.folds,
                alpha=cfg.alpha, ece_bins=cfg.ece_bins, veto_rate=veto_rate, workers=workers,
                tags=(train, test),
            )
        except (ValueError, probes.ConvergenceError) as exc:
            out.notice(f"{level} {model}: {train} -> {test} skipped ({exc})")
            continue
        results.append((model, res))
    return results


def _transfer_tables(cfg, out: Outputs, level: str, results):
    rows, split_rows, curve_rows = [], [], []
    for model, res in results:
        s = res.summary()
        rows.append([model, res.train_tag, res.test_tag, len(res.splits)] + [v for k in ("auc", "aurc", "risk_at_alpha", "ece_at_alpha") for v in s[k]])
        for sp in res.splits:
            r = sp.report
            split_rows.append([model, res.train_tag, res.test_tag, sp.split, sp.seed, sp.model.C, r.auc, r.aurc, r.risk_at_alpha, r.ece_at_alpha]
                              + [sp.model.coef(c) for c in sp.model.spec.columns])
        curves = np.array([sp.report.risk for sp in res.splits])
        for a, risk in zip(selective.COVERAGE_GRID, curves.mean(axis=0)):
            curve_rows.append([model, res.train_tag, res.test_tag, a, risk])
    spec = probes.FeatureSpec.for_level(level)
    out.table(
        f"transfer_{level}",
        ["Model", "Train", "Test", "Splits", "AUC mean", "AUC sd", "AURC mean", "AURC sd",
         f"Risk@{cfg.alpha:g} mean", f"Risk@{cfg.alpha:g} sd", f"ECE@{cfg.alpha:g} mean", f"ECE@{cfg.alpha:g} sd"],
        rows, {"level": level, "features": list(spec.base)},
    )
    out.table(
        f"transfer_{level}_splits",
        ["Model", "Train", "Test", "Split", "Seed", "C", "AUC", "AURC", f"Risk@{cfg.alpha:g}", f"ECE@{cfg.alpha:g}", *spec.columns],
        split_rows, {"level": level},
    )
    out.table(f"risk_coverage_{level}", ["Model", "Train", "Test", "Coverage", "Mean selective risk"], curve_rows, {"level": level})


def _fusion_table(out: Outputs, by_level: dict):
    if "entropy_only" not in by_level or "entropy_plus_vision" not in by_level:
        return
    ev = {(m, r.train_tag, r.test_tag): r for m, r in by_level["entropy_plus_vision"]}
    rows = []
    for m, r in by_level["entropy_only"]:
        other = ev.get((m, r.train_tag, r.test_tag))
        if other is None:
            continue
        a, b = r.summary()["auc"][0], other.summary()["auc"][0]
        rows.append([m, r.train_tag, r.test_tag, a, b, b - a])
    out.table("transfer_fusion", ["Model", "Train", "Test", "AUC (Entropy)", "AUC (Entropy+Vision)", "ΔAUC"], rows)


def cmd_transfer(cfg: RunConfig, workers: int = 1, _out: Outputs | None = None) -> dict:
    out = _out or Outputs(cfg, "transfer")
    plan = _transfer_plan(cfg, analysis_records(cfg, load_signal_inputs(cfg)), out)
    by_level = {}
    for level in cfg.levels:
        probes.FeatureSpec.for_level(level)
        by_level[level] = _run_pairs(cfg, plan, level, out, workers)
        _transfer_tables(cfg, out, level, by_level[level])
    _fusion_table(out, by_level)
    if _out is None:
        out.echo()
    return by_level


def cmd_veto(cfg: RunConfig, workers: int = 1, _out: Outputs | None = None) -> list:
    out = _out or Outputs(cfg, "veto")
    plan = _transfer_plan(cfg, analysis_records(cfg, load_signal_inputs(cfg)), out)
    results = _run_pairs(cfg, plan, "entropy_only", out, workers, veto_rate=cfg.veto_rate)
    rows, split_rows = [], []
    by_target = defaultdict(list)
    for model, res in results:
        deltas = [sp.veto.delta_risk_pp for sp in res.splits]
        risk_e = float(np.mean([sp.veto.risk_entropy for sp in res.splits]))
        risk_v = float(np.mean([sp.veto.risk_veto for sp in res.splits]))
        rows.append([model, res.train_tag, res.test_tag, risk_e, risk_v, float(np.mean(deltas)), f"{res.veto_wins()}/{len(res.splits)}"])
        by_target[(res.test_tag, model)].append(res)
        for sp in res.splits:
            v = sp.veto
            split_rows.append([model, res.train_tag, res.test_tag, sp.split, sp.seed, v.risk_entropy, v.risk_veto, v.delta_risk_pp, len(v.vetoed), len(v.restored), v.coverage])
    meta = {"policy": "entropy_only probe, veto lowest V_thinking_auc accepts, restore coverage", "coverage": cfg.alpha}
    out.table("veto", ["Model", "Train", "Test", "Risk (entropy)", "Risk (veto)", "Δrisk (pp)", "Wins"], rows, meta)
    out.table("veto_splits", ["Model", "Train", "Test", "Split", "Seed", "Risk (entropy)", "Risk (veto)", "Δrisk (pp)", "Vetoed", "Restored", "Coverage"], split_rows, meta)
    target_rows = []
    for (target, model), group in sorted(by_target.items()):
        deltas = [sp.veto.delta_risk_pp for r in group for sp in r.splits]
        target_rows.append([target, model, float(np.mean(deltas)), f"{sum(r.veto_wins() for r in group)}/{len(deltas)}"])
    out.table("veto_by_target", ["Transfer target", "Model", "Δrisk (pp)", "Wins"], target_rows, meta)
    if _out is None:
        out.echo()
    return results


def _quadrant_cell(err, n) -> str:
    return "-- (0)" if err is None else f"{err:.3f} ({n})"


def cmd_quadrants(cfg: RunConfig, workers: int = 1, _out: Outputs | None = None) -> list:
    """Quadrant error rates on each transfer test set.

    Thresholds are quantiles of the test set itself, so every split of a pair
    sees the same partition; the split count is reported for completeness.
    """
    out = _out or Outputs(cfg, "quadrants")
    plan = _transfer_plan(cfg, analysis_records(cfg, load_signal_inputs(cfg)), out)
    rows, full_rows, reports = [], [], []
    for model, train, test, _, te in plan:
        try:
            rep = selective.quadrant_report(te, cfg.q)
        except ValueError as exc:
            out.notice(f"quadrants {model}: {train} -> {test} skipped ({exc})")
            continue
        K = cfg.repeats
        positive = K if rep.gap is not None and rep.gap > 0 else 0
        gap = "--" if rep.gap is None else f"{rep.gap:+.3f}"
        rows.append([model, train, test, _quadrant_cell(rep.error["Q1"], rep.n["Q1"]), _quadrant_cell(rep.error["Q2"], rep.n["Q2"]), gap, f"{positive}/{K}"])
        full_rows.append([model, train, test] + [v for k in ("Q1", "Q2", "Q3", "Q4") for v in (rep.error[k], rep.n[k])] + [rep.n_mid, rep.gap]
                         + [rep.thresholds[k] for k in ("entropy_lo", "entropy_hi", "vision_lo", "vision_hi")])
        reports.append((model, train, test, rep))
    out.table("quadrants", ["Model", "Train", "Test", "Q1 Error (n)", "Q2 Error (n)", "Q2−Q1", "Δ>0 Splits"], rows, {"q": cfg.q})
    out.table(
        "quadrants_full",
        ["Model", "Train", "Test", "Q1 error", "Q1 n", "Q2 error", "Q2 n", "Q3 error", "Q3 n", "Q4 error", "Q4 n", "Middle n", "Q2-Q1",
         "entropy_lo", "entropy_hi", "vision_lo", "vision_hi"],
        full_rows, {"q": cfg.q},
    )
    if _out is None:
        out.echo()
    return reports


# --- report ---------------------------------------------------------------------

def _interaction_table(cfg: RunConfig, records, out: Outputs):
    rows = []
    for (model, dataset), group in cells(records).items():
        try:
            rep = probes.fit_interaction(group, cfg.interaction_C, cfg.interaction_bootstrap, 0.95, cfg.seed, (model, dataset))
        except (ValueError, probes.ConvergenceError) as exc:
            out.notice(f"interaction {model}/{dataset}: degenerate ({exc})")
            rows.append([model, dataset, len(group), None, None, None, None, None, None, None, "degenerate"])
            continue
        m = rep.model
        rows.append([model, dataset, rep.n, m.coef("E_z"), m.coef("V_z"), rep.beta_EV, m.coef("L_z"), rep.ci[0], rep.ci[1], rep.significant, ""])
    out.table(
        "interaction",
        ["Model", "Dataset", "n", "β_E", "β_V", "β_EV", "β_L", "β_EV CI low", "β_EV CI high", "Significant", "Note"],
        rows, {"ci_level": 0.95, "C": cfg.interaction_C, "bootstrap": cfg.interaction_bootstrap},
    )


def _sign_table(out: Outputs, by_level: dict):
    rows = []
    for level, results in by_level.items():
        spec = probes.FeatureSpec.for_level(level)
        models = sorted({m for m, _ in results})
        for feature in spec.columns:
            for model in models:
                fits = [sp.model for m, r in results if m == model for sp in r.splits]
                pos, neg, zero = probes.sign_consistency(fits, feature)
                rows.append([feature, level, model, pos, neg, zero, len(fits)])
    out.table("sign_consistency", ["Feature", "Level", "Model", "Positive", "Negative", "Zero", "Fits"], rows)


def _length_confound(cfg: RunConfig, records, plan, out: Outputs, workers: int):
    rows = []
    V = [r.V_thinking_auc for r in records]
    L = [r.length_L for r in records]
    try:
        rows.append(["r_overall", stats.pearson_r(V, L), len(records)])
    except ValueError as exc:
        out.notice(f"length confound overall: {exc}")
    for model in sorted({r.model_tag for r in records}):
        sub = [r for r in records if r.model_tag == model]
        try:
            rows.append([f"r_{model}", stats.pearson_r([r.V_thinking_auc for r in sub], [r.length_L for r in sub]), len(sub)])
        except ValueError as exc:
            out.notice(f"length confound {model}: {exc}")
    results = _run_pairs(cfg, plan, "joint_length_vision", out, workers)
    tests = {(model, train, test): te for model, train, test, _, te in plan}
    dominated = beta_pos = n_split = 0
    for model, res in results:
        test = tests[(model, res.train_tag, res.test_tag)]
        first = res.splits[0].model
        raw = probes.raw_matrix(test, first.spec.base)
        y = probes.labels(test)
        pi_L = probes.permutation_importance(first, raw, y, "length_L", cfg.permutations, cfg.seed)
        pi_V = probes.permutation_importance(first, raw, y, "V_thinking_auc", cfg.permutations, cfg.seed)
        dominated += pi_L > pi_V
        for sp in res.splits:
            beta_pos += sp.model.coef("V_thinking_auc") > 0
            n_split += 1
    rows.append(["N_PI-dom/N_transfer", f"{dominated}/{len(results)}", len(results)])
    rows.append(["N_beta>0/N_split", f"{beta_pos}/{n_split}", n_split])
    out.table("length_confound", ["Metric", "Value", "n"], rows, {"probe": "joint_length_vision", "permutations": cfg.permutations})


def cmd_report(cfg: RunConfig, workers: int = 1) -> Outputs:
    records = analysis_records(cfg, load_signal_inputs(cfg))
    out = Outputs(cfg, "report")
    cmd_analyze(cfg, workers)
    by_level = cmd_transfer(cfg, workers, out)
    cmd_veto(cfg, workers, out)
    cmd_quadrants(cfg, workers, out)
    _interaction_table(cfg, records, out)
    _sign_table(out, by_level)
    _length_confound(cfg, records, _transfer_plan(cfg, records, out), out, workers)
    out.echo()
    return out


# --- synth -----------------------------------------------------------------------

SYNTH_KINDS = ("corpus", "features", "mixture", "calibration", "fixture")


def cmd_synth(cfg: RunConfig, workers: int = 1) -> Outputs:
    out = Outputs(cfg, "synth")
    kind = cfg.synth_kind
    if kind not in SYNTH_KINDS:
        raise PipelineError(f"unknown synth kind {kind!r}; choose from {SYNTH_KINDS}")
    params = dict(cfg.synth)
    params.setdefault("seed", cfg.seed)
    if kind == "fixture":
        sc = synth.FIXTURE_CONFIG
        write_traces(out.dir / "traces.jsonl", synth.generate_corpus(sc), synth.corpus_header(sc))
        resolved, echoed = sc.to_dict(), {}
    elif kind == "calibration":
        traces = synth.generate_calibration(**params)
        write_traces(out.dir / "calibration.jsonl", traces, {"k": len(traces[0].tokens[0].topk), "model_tag": traces[0].model_tag})
        resolved = params
        echoed = params
    elif kind == "mixture":
        n = params.pop("n", 2000)
        seed = params.pop("seed")
        if params:
            raise PipelineError(f"mixture accepts only n and seed, got {sorted(params)}")
        visual, symbolic = synth.two_task_mixture(n, seed, model_tag=cfg.model_tags[0] if cfg.model_tags else "synth")
        rows = synth.generate_feature_table(visual) + synth.generate_feature_table(symbolic)
        write_signals(out.dir / "signals.csv", rows)
        resolved = {"n": n, "seed": seed, "visual": visual.to_dict(), "symbolic": symbolic.to_dict()}
        echoed = {"n": n, "seed": seed}
    else:
        try:
            sc = synth.SynthConfig.from_dict(params)
        except (TypeError, ValueError) as exc:
            raise PipelineError(str(exc)) from None
        if kind == "corpus":
            write_traces(out.dir / "traces.jsonl", synth.generate_corpus(sc), synth.corpus_header(sc))
        else:
            write_signals(out.dir / "signals.csv", synth.generate_feature_table(sc))
        resolved = echoed = sc.to_dict()
    out.sidecar("synth", {"kind": kind, "synth_config": resolved})
    out.echo(dataclasses.replace(cfg, synth=echoed))
    return out


COMMANDS: dict[str, Callable[..., object]] = {
    "score": cmd_score,
    "layers": cmd_layers,
    "analyze": cmd_analyze,
    "transfer": cmd_transfer,
    "veto": cmd_veto,
    "quadrants": cmd_quadrants,
    "synth": cmd_synth,
    "report": cmd_report,
}
