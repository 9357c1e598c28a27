import copy
import json
import math

import pytest

from groundtrace import fixture_path
from groundtrace.trace_model import (
    SIGNAL_COLUMNS,
    TraceFormatError,
    derive_signal_record,
    dumps_traces,
    load_traces,
    parse_record,
    read_signals,
    read_trace_file,
    write_signals,
)

POSITIONS = ("Start", "Early", "Mid", "Late", "EndThink", "AnsStart", "AnsEnd")


def make_record(rid="r0", m=4, mass=0.3, bbox=(1, 2), layers=(0, 1), answer="(B)", gt="B"):
    """A tiny 12-token trace: 8 reasoning tokens, a think-end tag, 3 answer tokens."""
    texts = [f" t{i}" for i in range(8)] + ["</think>", " The", " answer", " " + answer]
    tokens = [{"token_text": t, "topk": [[t, -0.1], ["x", -2.5], ["y", -3.0]]} for t in texts]
    idx = [0, 3, 4, 6, 7, 9, 11]
    snaps = [
        {"position_label": p, "token_index": i, "layer_weights": {str(l): [mass / m] * m for l in layers}}
        for p, i in zip(POSITIONS, idx)
    ]
    return {
        "id": rid,
        "model_tag": "toy",
        "dataset_tag": "toyset",
        "tokens": tokens,
        "spans": {"t0": 0, "t_think": 7, "ans_start": 9, "ans_end": 11, "think_end_found": True},
        "termination": "normal_stop",
        "parser_mode": "inline_think_tags",
        "full_text": "<think>" + "".join(texts[:8]) + "</think>" + "".join(texts[9:]),
        "reasoning_text": "".join(texts[:8]).strip(),
        "answer_text": "".join(texts[9:]).strip(),
        "snapshots": snaps,
        "visual": {"m": m, "bbox_mask": list(bbox), "has_valid_bbox": True},
        "question": "q",
        "choices": ["a", "b"],
        "ground_truth": gt,
    }


def _write(tmp_path, lines, name="t.jsonl"):
    p = tmp_path / name
    p.write_text("".join(json.dumps(x) + "\n" for x in lines))
    return p


def test_round_trip_three_records(tmp_path):
    recs = [make_record(f"r{i}") for i in range(3)]
    header = {"k": 3, "model_tag": "toy", "dataset_tag": "toyset", "grounding_layers": [0, 1]}
    p = _write(tmp_path, [{"schema_version": 1, **header}] + recs)
    h, traces = read_trace_file(p)
    assert [t.id for t in traces] == ["r0", "r1", "r2"]
    text = dumps_traces(traces, header)
    (tmp_path / "again.jsonl").write_text(text)
    h2, again = read_trace_file(tmp_path / "again.jsonl")
    assert again == traces and h2 == h
    assert dumps_traces(again, header) == text


def test_fixture_round_trip_is_byte_exact():
    raw = open(fixture_path(), encoding="utf-8").read()
    header, traces = read_trace_file(fixture_path())
    header = {k: v for k, v in header.items() if k != "schema_version"}
    assert dumps_traces(traces, header) == raw


def test_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert load_traces(p) == []


def test_bbox_index_out_of_range_names_line_and_field(tmp_path):
    bad = make_record("r1", m=4, bbox=(1, 4))
    p = _write(tmp_path, [make_record("r0"), bad])
    with pytest.raises(TraceFormatError) as exc:
        load_traces(p)
    assert exc.value.line == 2 and exc.value.field == "visual.bbox_mask"
    assert "line 2" in str(exc.value) and "visual.bbox_mask" in str(exc.value)


def test_duplicate_id(tmp_path):
    p = _write(tmp_path, [make_record("same"), make_record("same")])
    with pytest.raises(TraceFormatError, match="duplicate"):
        load_traces(p)


@pytest.mark.parametrize(
    "mutate,field",
    [
        (lambda r: r["tokens"][2]["topk"].pop(), "tokens[2].topk"),
        (lambda r: r["tokens"][0]["topk"][0].__setitem__(1, float("inf")), "tokens[0].topk"),
        (lambda r: r["spans"].__setitem__("ans_end", 12), "spans.ans_end"),
        (lambda r: r["spans"].__setitem__("ans_start", 7), "spans.ans_start"),
        (lambda r: r["snapshots"].pop(), "snapshots"),
        (lambda r: r["snapshots"][0]["layer_weights"]["0"].append(0.1), "snapshots[0].layer_weights.0"),
        (lambda r: r["snapshots"][1]["layer_weights"]["1"].__setitem__(0, 1.5), "snapshots[1].layer_weights.1"),
        (lambda r: r.__setitem__("termination", "eos"), "termination"),
        (lambda r: r.pop("full_text"), "full_text"),
    ],
)
def test_malformed_fields(mutate, field):
    rec = make_record()
    mutate(rec)
    with pytest.raises(TraceFormatError) as exc:
        parse_record(rec, 7)
    assert exc.value.field == field and exc.value.line == 7


def test_bad_schema_version(tmp_path):
    p = _write(tmp_path, [{"schema_version": 2}, make_record()])
    with pytest.raises(TraceFormatError, match="schema_version"):
        load_traces(p)


def test_k_above_twenty_rejected():
    rec = make_record()
    for tok in rec["tokens"]:
        tok["topk"] = [[f"c{j}", -float(j)] for j in range(21)]
    with pytest.raises(TraceFormatError, match="exceeds 20"):
        parse_record(rec, 1)


def test_constant_mass_gives_zero_decay():
    rec = derive_signal_record(parse_record(make_record(mass=0.3), 1), [0, 1])
    assert rec.delta_V == pytest.approx(0.0, abs=1e-15)
    assert all(v == pytest.approx(0.3, abs=1e-15) for v in rec.V)
    assert rec.V_thinking_auc == pytest.approx(1.2, abs=1e-14)


def test_full_mask_evidence_equals_visual():
    rec = derive_signal_record(parse_record(make_record(bbox=(0, 1, 2, 3)), 1), [0, 1])
    assert rec.A_bbox == rec.V
    assert rec.rvar_start == pytest.approx(1.0) and rec.delta_rvar == pytest.approx(0.0, abs=1e-15)


def test_signal_record_correctness_and_entropy():
    trace = parse_record(make_record(answer="(B)", gt="B"), 1)
    rec = derive_signal_record(trace, [0, 1])
    assert rec.correct and rec.matched_via == "letter"
    wrong = derive_signal_record(parse_record(make_record(answer="(A)", gt="B"), 1), [0])
    assert not wrong.correct
    lp = [-0.1, -2.5, -3.0]
    p = [math.exp(x) for x in lp]
    z = sum(p)
    h = -sum(q / z * math.log2(q / z) for q in p)
    assert rec.H_full == pytest.approx(h, abs=1e-12) and rec.H_ans == pytest.approx(h, abs=1e-12)
    assert rec.length_L == 12


def test_derivation_is_pure():
    raw = make_record()
    frozen = copy.deepcopy(raw)
    trace = parse_record(raw, 1)
    a = derive_signal_record(trace, [0, 1])
    b = derive_signal_record(trace, [0, 1])
    assert a == b and raw == frozen


def _independent_masses(rec_json, layers):
    """Sum the raw JSON weights directly, one position at a time."""
    V, A = [], []
    bbox = rec_json["visual"]["bbox_mask"]
    snaps = {s["position_label"]: s for s in rec_json["snapshots"]}
    for p in POSITIONS:
        w = snaps[p]["layer_weights"]
        V.append(sum(sum(w[str(l)]) for l in layers) / len(layers))
        A.append(sum(sum(w[str(l)][j] for j in bbox) for l in layers) / len(layers))
    return V, A


def test_fixture_decay_matches_independent_summation(tmp_path):
    lines = open(fixture_path(), encoding="utf-8").read().splitlines()
    header = json.loads(lines[0])
    layers = header["grounding_layers"]
    traces = load_traces(fixture_path())
    recs = [derive_signal_record(t, layers) for t in traces]
    write_signals(tmp_path / "s.csv", recs)
    from_csv = {r.id: r for r in read_signals(tmp_path / "s.csv")}
    for line in lines[1:]:
        obj = json.loads(line)
        V, A = _independent_masses(obj, layers)
        r = from_csv[obj["id"]]
        assert r.delta_V == pytest.approx(V[0] - V[6], abs=1e-9)
        assert r.delta_A_bbox == pytest.approx(A[0] - A[6], abs=1e-9)
        assert all(a <= v + 1e-12 for a, v in zip(r.A_bbox, r.V))


def test_signals_csv_round_trip(tmp_path):
    recs = [derive_signal_record(t, [0, 1]) for t in [parse_record(make_record(f"r{i}", mass=0.1 * (i + 1)), 1) for i in range(3)]]
    write_signals(tmp_path / "s.csv", recs)
    header = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert header.split(",") == list(SIGNAL_COLUMNS)
    back = read_signals(tmp_path / "s.csv")
    assert [r.id for r in back] == ["r0", "r1", "r2"]
    for a, b in zip(recs, back):
        assert b.H_full == pytest.approx(a.H_full, rel=1e-8) and b.V == pytest.approx(a.V, rel=1e-8)
        assert b.correct == a.correct and b.length_L == a.length_L


def test_minimal_signals_csv(tmp_path):
    p = tmp_path / "min.csv"
    p.write_text("id,model_tag,dataset_tag,correct,H_full,V_thinking_auc,length_L\nx,m,d,1,0.5,1.2,40\n")
    (r,) = read_signals(p)
    assert r.correct and r.V is None and r.H_ans is None and r.termination == "normal_stop"
