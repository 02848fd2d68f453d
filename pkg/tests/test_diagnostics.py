import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selectdp.diagnostics import (
    FUNCTION_WORDS,
    diagnostic_report,
    exclusion_hash,
    overlap_count,
    top_k_terms,
)


def test_top_k_example():
    top = top_k_terms(["b b a"], 2, exclusion=())
    assert top.terms == ["b", "a"]
    assert not top.truncated


def test_ties_broken_lexicographically():
    assert top_k_terms(["z y x"], 2, exclusion=()).terms == ["x", "y"]


def test_short_vocabulary_is_flagged():
    top = top_k_terms(["a b"], 5, exclusion=())
    assert top.terms == ["a", "b"]
    assert top.truncated
    count, flag = overlap_count(["a b"], ["a c d e f g"], 5, exclusion=())
    assert count == 1
    assert flag


def test_bad_k_and_empty_corpus():
    with pytest.raises(ValueError):
        top_k_terms(["a"], 0)
    with pytest.raises(ValueError):
        overlap_count([], ["a"], 3)


def test_function_words_do_not_change_overlap():
    a = ["alpha beta gamma alpha", "beta delta"]
    b = ["beta gamma epsilon", "zeta gamma"]
    base = overlap_count(a, b, 3)
    padded_a = [t + " the of and the" for t in a]
    padded_b = ["a an the " + t for t in b]
    assert overlap_count(padded_a, padded_b, 3) == base
    assert "the" in FUNCTION_WORDS


def test_identical_and_disjoint():
    texts = [f"w{i} " * (i + 1) for i in range(50)]
    assert overlap_count(texts, list(texts), 20) == (20, False)
    other = [t.replace("w", "v") for t in texts]
    assert overlap_count(texts, other, 20) == (0, False)


words = st.lists(st.sampled_from([f"t{i}" for i in range(30)] + ["the", "of"]), min_size=1, max_size=20)
corpora = st.lists(words.map(" ".join), min_size=1, max_size=6)


@settings(max_examples=100)
@given(a=corpora, b=corpora, k=st.integers(1, 40))
def test_overlap_symmetric_and_bounded(a, b, k):
    ab, flag_ab = overlap_count(a, b, k)
    ba, flag_ba = overlap_count(b, a, k)
    assert ab == ba and flag_ab == flag_ba
    assert 0 <= ab <= k


def test_report_structure():
    rep = diagnostic_report(["x y z"], ["x x q r"], ["x y"], k=2, random_selected=["q r"])
    assert rep["k"] == 2
    assert rep["exclusion_hash"] == exclusion_hash(FUNCTION_WORDS)
    assert set(rep["top_k"]) == {"target", "source", "selected", "random"}
    assert rep["overlap"] == {"target_source": 1, "target_selected": 2, "target_random": 0}
    assert exclusion_hash(["b", "a"]) == exclusion_hash(["a", "b", "a"])
    assert exclusion_hash(["a"]) != exclusion_hash(["b"])
