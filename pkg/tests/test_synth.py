import numpy as np
import pytest

from groundtrace import fixture_path, synth
from groundtrace.trace_model import derive_signal_record, dumps_traces, read_trace_file, write_traces


def test_same_seed_is_byte_identical():
    cfg = synth.SynthConfig(seed=5, n=12, max_tokens=120, loop_rate=0.25)
    a = dumps_traces(synth.generate_corpus(cfg), synth.corpus_header(cfg))
    b = dumps_traces(synth.generate_corpus(cfg), synth.corpus_header(cfg))
    assert a == b
    other = synth.SynthConfig(seed=6, n=12, max_tokens=120, loop_rate=0.25)
    assert dumps_traces(synth.generate_corpus(other), synth.corpus_header(other)) != a


@pytest.mark.parametrize(
    "kw",
    [
        {"base_accuracy": 1.0},
        {"base_accuracy": 0.0},
        {"entropy_sd": 0.0},
        {"loop_rate": 1.5},
        {"pattern": "spiral"},
        {"pattern": "sustained_deficit", "beta_V": 0.0},
        {"k_layers": 40},
    ],
)
def test_infeasible_configs_fail(kw):
    with pytest.raises(ValueError, match="infeasible"):
        synth.SynthConfig(seed=0, **kw)


def test_seed_is_mandatory():
    with pytest.raises(TypeError):
        synth.SynthConfig()


def test_config_dict_round_trip():
    cfg = synth.SynthConfig(seed=3, pattern="crossover", loop_rate=0.1)
    assert synth.SynthConfig.from_dict(cfg.to_dict()) == cfg


def _class_means(rows):
    V = np.array([r.V for r in rows])
    y = np.array([r.correct for r in rows])
    return V[y].mean(axis=0), V[~y].mean(axis=0)


def test_sustained_deficit_pattern():
    rows = synth.generate_feature_table(synth.SynthConfig(seed=1, n=3000, pattern="sustained_deficit"))
    good, bad = _class_means(rows)
    assert np.all(bad < good)


def test_crossover_pattern():
    rows = synth.generate_feature_table(synth.SynthConfig(seed=1, n=3000, pattern="crossover", beta_V=0.0))
    good, bad = _class_means(rows)
    assert bad[0] > good[0] and bad[3] < good[3]


def test_class_balance_tracks_base_accuracy():
    for acc in (0.3, 0.6, 0.85):
        cfg = synth.SynthConfig(seed=2, n=4000, base_accuracy=acc, beta_E=0, beta_V=0, beta_EV=0, beta_L=0, pattern="flat")
        rows = synth.generate_feature_table(cfg)
        assert np.mean([r.correct for r in rows]) == pytest.approx(acc, abs=0.025)


def test_planted_logit_matches_formula():
    cfg = synth.SynthConfig(seed=0, pattern="moderate")
    rng = np.random.default_rng(0)
    E, V, L = rng.random(50), rng.random(50), rng.integers(20, 80, 50).astype(float)
    z = lambda x: (x - x.mean()) / x.std(ddof=1)
    expected = (
        np.log(cfg.base_accuracy / (1 - cfg.base_accuracy))
        + cfg.beta_E * z(E)
        + cfg.beta_V * z(V)
        + cfg.beta_EV * z(E) * z(V)
        + cfg.beta_L * z(L)
    )
    assert np.allclose(synth.planted_logit(cfg, E, V, L), expected, atol=1e-12)


def test_loop_injection_count():
    cfg = synth.SynthConfig(seed=8, n=500, loop_rate=0.2, max_tokens=160, length_mean=40, length_sd=10, k=5, m=8)
    traces = synth.generate_corpus(cfg)
    loops = [t for t in traces if t.termination == "max_tokens_loop"]
    assert len(loops) == 100
    assert {t.id for t in loops} == {t.id for t in traces if t.meta["injected_loop"]}
    assert all(not t.spans.think_end_found and t.answer_text == "" for t in loops)


def test_truncation_without_loop_is_plain_max_tokens():
    cfg = synth.SynthConfig(seed=9, n=40, truncation_rate=0.25, max_tokens=120, k=5, m=8)
    traces = synth.generate_corpus(cfg)
    trunc = [t for t in traces if t.meta["injected_truncation"]]
    assert len(trunc) == 10 and all(t.termination == "max_tokens" for t in trunc)


def test_corpus_labels_follow_answer_text(tmp_path):
    cfg = synth.SynthConfig(seed=4, n=60, loop_rate=0.1, max_tokens=140, k=6, m=10)
    traces = synth.generate_corpus(cfg)
    path = tmp_path / "c.jsonl"
    write_traces(path, traces, synth.corpus_header(cfg))
    header, loaded = read_trace_file(path)
    assert loaded == traces and header["grounding_layers"] == cfg.grounding_layers
    for t in loaded:
        rec = derive_signal_record(t, cfg.grounding_layers)
        assert rec.correct == t.meta["planted_correct"]
        if t.termination == "normal_stop":
            assert rec.V_thinking_auc == pytest.approx(t.meta["planted_V_thinking_auc"], rel=0.1)


def test_corpus_entropy_level():
    cfg = synth.SynthConfig(seed=4, n=200, max_tokens=200, k=20, m=8, entropy_mean=0.6, entropy_sd=0.05)
    recs = [derive_signal_record(t, cfg.grounding_layers) for t in synth.generate_corpus(cfg)]
    assert np.mean([r.H_full for r in recs]) == pytest.approx(0.6, abs=0.03)


def test_two_task_mixture_configs():
    visual, symbolic = synth.two_task_mixture(n=100, seed=3)
    assert (visual.beta_EV, symbolic.beta_EV) == (-0.6, 0.1)
    assert visual.dataset_tag != symbolic.dataset_tag and visual.seed != symbolic.seed


def test_calibration_traces_have_all_layers():
    traces = synth.generate_calibration(n=4, n_layers=10, m=16, seed=1)
    assert all(set(s.layer_weights) == set(range(10)) for t in traces for s in t.snapshots)
    assert all(t.visual.has_valid_bbox and 0 < len(t.visual.bbox_mask) < 16 for t in traces)


def test_fixture_matches_generator():
    header, traces = read_trace_file(fixture_path())
    regenerated = synth.generate_corpus(synth.FIXTURE_CONFIG)
    assert traces == regenerated
    assert header == {"schema_version": 1, **synth.corpus_header(synth.FIXTURE_CONFIG)}
    assert len(traces) == synth.FIXTURE_CONFIG.n
