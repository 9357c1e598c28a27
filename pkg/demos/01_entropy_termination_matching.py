"""
Token entropy, termination classes and answer matching
=======================================================

Reads the bundled synthetic fixture, re-derives the per-trace signals and shows
how loop detection feeds the forced-empty evaluation rule.
"""

import numpy as np

from groundtrace import fixture_path
from groundtrace.answer_matching import match_correctness
from groundtrace.entropy import EntropySeries, span_entropy
from groundtrace.segmentation import compression_ratio, select_evaluation_text, unique_ngram_ratio
from groundtrace.trace_model import load_traces, stored_segmentation

traces = load_traces(fixture_path())
print(f"{len(traces)} traces, k = {len(traces[0].tokens[0].topk)} logprobs per token")

# Mean top-k entropy over the whole generation and over the answer span only
for t in traces[:3]:
    series = EntropySeries.from_logprobs(t.logprob_matrix(), t.spans)
    print(f"{t.id}: H_full = {span_entropy(series, 'full'):.3f} bits, H_ans = {span_entropy(series, 'answer'):.3f} bits")

# The two loop heuristics on a normal and on a looping trace
for t in (traces[0], next(t for t in traces if t.termination == "max_tokens_loop")):
    texts = [tok.token_text for tok in t.tokens]
    print(
        f"{t.id} [{t.termination}]: unique 4-gram ratio {unique_ngram_ratio(texts):.3f}, "
        f"compression ratio {compression_ratio(t.full_text):.3f}"
    )

# A looping trace never reached </think>, so it is scored on an empty prediction
for t in traces:
    text = select_evaluation_text(stored_segmentation(t), t.termination)
    outcome = match_correctness(text, t.choices, t.ground_truth)
    if t.termination != "normal_stop":
        print(f"{t.id}: evaluation text {text!r} -> {outcome.matched_via}, correct={outcome.correct}")

counts = {k: sum(t.termination == k for t in traces) for k in ("normal_stop", "max_tokens", "max_tokens_loop")}
print("termination counts:", counts)
print("entropy of a uniform top-20 vector:", np.log2(20))
