import random
import string

import pytest

from groundtrace.segmentation import (
    SegmentedResponse,
    classify_termination,
    compression_ratio,
    segment_response,
    select_evaluation_text,
    unique_ngram_ratio,
)


def test_inline_split():
    seg = segment_response("<think>abc</think>xyz", parser_mode="inline_think_tags")
    assert (seg.reasoning_text, seg.answer_text, seg.think_end_found) == ("abc", "xyz", True)


def test_separate_field_concatenates():
    seg = segment_response("ans", "r", "separate_reasoning_field")
    assert seg.full_text == "rans"
    assert seg.answer_text == "ans" and seg.think_end_found


def test_inline_truncated():
    seg = segment_response("<think>abc", parser_mode="inline_think_tags")
    assert seg.answer_text == "" and not seg.think_end_found


def test_inline_lone_close_tag_still_splits():
    seg = segment_response("reasoning here</think> B", parser_mode="inline_think_tags")
    assert seg.reasoning_text == "reasoning here" and seg.answer_text == "B" and seg.think_end_found


def test_inline_without_tags_degrades():
    seg = segment_response("just an answer", parser_mode="inline_think_tags")
    assert seg.degraded and seg.answer_text == "just an answer" and not seg.think_end_found


def test_raw_reasoning_only_in_separate_mode():
    with pytest.raises(ValueError):
        segment_response("x", "y", "inline_think_tags")
    with pytest.raises(ValueError):
        segment_response("x", None, "separate_reasoning_field")


def test_ngram_ratio_examples():
    assert unique_ngram_ratio([f"t{i}" for i in range(100)]) == 1.0
    tail = "a b c d".split() * 10
    # 40-token tail of a 160-token sequence.
    tokens = [f"x{i}" for i in range(120)] + tail
    assert unique_ngram_ratio(tokens) == pytest.approx(4 / 37, abs=1e-15)
    assert unique_ngram_ratio(["a", "b", "c"], n=4) == 1.0


def test_ngram_ratio_tail_uses_ceiling():
    # 5 tokens give a ceil(1.25) = 2 token tail: exactly one 2-gram.
    assert unique_ngram_ratio(list("abcde"), n=2) == 1.0
    # 9 tokens: ceil(2.25) = 3 tail tokens, two identical bigrams (a floor would leave one).
    assert unique_ngram_ratio(["a"] * 9, n=2) == 0.5
    assert unique_ngram_ratio([], n=4) == 1.0


def test_compression_examples():
    assert compression_ratio("a" * 10000) < 0.01
    assert compression_ratio("") == 1.0
    rnd = random.Random(0)
    noisy = "".join(rnd.choice(string.ascii_letters + string.digits) for _ in range(2000))
    periodic = ("abcdefghij" * 200)[:2000]
    assert compression_ratio(periodic) < compression_ratio(noisy)


def _loop_tokens(n=400):
    return [f" w{i}" for i in range(20)] + [" and", " so", " on", " again"] * ((n - 20) // 4)


def test_classify_rules():
    loop = _loop_tokens()
    assert classify_termination(loop, "".join(loop), True) == "max_tokens_loop"
    assert classify_termination(loop, "".join(loop), False) == "normal_stop"
    rnd = random.Random(1)
    diverse = [" " + "".join(rnd.choice(string.ascii_lowercase) for _ in range(6)) for _ in range(400)]
    assert classify_termination(diverse, "".join(diverse), True) == "max_tokens"


def test_classify_appending_tail_copy_keeps_loop_verdict():
    loop = _loop_tokens()
    assert classify_termination(loop, "".join(loop), True) == "max_tokens_loop"
    tail = loop[-len(loop) // 4 :]
    longer = loop + tail
    assert classify_termination(longer, "".join(longer), True) == "max_tokens_loop"


def test_select_evaluation_text():
    seg = SegmentedResponse("<think>x", "x", "", False, "inline_think_tags")
    assert select_evaluation_text(seg, "max_tokens_loop") == ""
    ok = SegmentedResponse("<think>r</think>B", "r", "B", True, "inline_think_tags")
    assert select_evaluation_text(ok, "normal_stop") == "B"
    empty = SegmentedResponse("f", "", "", True, "inline_think_tags")
    assert select_evaluation_text(empty, "normal_stop") == "f"
