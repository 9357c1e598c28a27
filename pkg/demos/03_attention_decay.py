"""
Visual attention decay and per-position discrimination
======================================================

Derives the seven-position visual-mass trajectory for each fixture trace, then
compares correct and incorrect samples position by position on a larger
synthetic feature table.
"""

import numpy as np

from groundtrace import fixture_path, synth
from groundtrace.stats import POSITIONS, per_position_discrimination
from groundtrace.trace_model import derive_signal_record, read_trace_file

header, traces = read_trace_file(fixture_path())
records = [derive_signal_record(t, header["grounding_layers"]) for t in traces if t.termination == "normal_stop"]

V = np.array([r.V for r in records])
dV = np.array([r.delta_V for r in records])
print("mean V by position:", "  ".join(f"{p} {v:.4f}" for p, v in zip(POSITIONS, V.mean(axis=0))))
print(f"mean dV = {dV.mean():.4f} ({100 * dV.mean() / V[:, 0].mean():.1f}% of V_start), dV > 0 in {(dV > 0).sum()}/{len(dV)}")
print(f"mean RVAR at answer end = {np.mean([r.rvar_ans_end for r in records]):.3f}")

# Cohen's d (correct - incorrect) at every position, for the three planted shapes
for pattern in ("sustained_deficit", "crossover", "flat"):
    rows = synth.generate_feature_table(synth.SynthConfig(seed=1, n=2000, pattern=pattern, beta_V=0.8 if pattern == "sustained_deficit" else 0.0))
    res = per_position_discrimination(rows, "V")
    print(f"{pattern:18s}", " ".join(f"{res[p].cohens_d:+.2f}" for p in POSITIONS))
