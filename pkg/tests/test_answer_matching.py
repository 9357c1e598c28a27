import pytest

from groundtrace.answer_matching import (
    extract_last_integer,
    extract_option_letter,
    match_correctness,
    normalize_text,
)


@pytest.mark.parametrize("raw,expected", [("  The CAT. ", "the cat"), ("", ""), ("A  B", "a b")])
def test_normalize(raw, expected):
    assert normalize_text(raw) == expected


def test_extract_last_integer():
    assert extract_last_integer("steps...\nThe answer is 42.") == 42
    assert extract_last_integer("no digits here") is None
    assert extract_last_integer("work\nso x = -7\n\n") == -7
    assert extract_last_integer("value 42.0") is None


def test_last_line_takes_priority_over_tail():
    assert extract_last_integer("12 apples\nanswer: 5") == 5
    # Last line has no integer, so the tail window decides.
    assert extract_last_integer("first 3 then 9\ndone") == 9


def test_extract_option_letter():
    assert extract_option_letter("...the correct option is (B).", 4) == "B"
    assert extract_option_letter("A banana", 2) is None
    assert extract_option_letter("A... no wait, C", 4) == "C"
    assert extract_option_letter("Answer: D.", 3) is None


def test_letter_count_guard():
    with pytest.raises(ValueError):
        extract_option_letter("A", 1)


def test_match_paths():
    assert match_correctness("The answer is 42", [], "42").matched_via == "integer"
    assert match_correctness("The answer is 42", [], "42").correct
    out = match_correctness("I considered cat but it is dog", ["cat", "dog"], "dog")
    assert out.correct and out.matched_via == "latest_substring"
    out = match_correctness("", ["Yes", "No"], "Yes")
    assert not out.correct and out.matched_via == "empty_prediction"


def test_integer_equality_is_exact():
    out = match_correctness("42.0", [], "42")
    assert out.matched_via == "normalized_equality" and not out.correct


def test_letter_dominates_substring():
    out = match_correctness("dog, so the answer is (A)", ["cat", "dog"], "dog")
    assert out.matched_via == "letter" and not out.correct


def test_latest_substring_tie_prefers_longer_option():
    out = match_correctness("it is a red apple", ["apple", "red apple"], "red apple")
    assert out.correct and out.extracted == "red apple"


def test_deterministic():
    args = ("hmm (C)", ["x", "y", "z"], "C")
    assert match_correctness(*args) == match_correctness(*args)
