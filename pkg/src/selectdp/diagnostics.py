"""Top-k frequent-term overlap between corpora.

Content words are approximated by dropping a fixed list of English function
words instead of part-of-speech tagging.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

from .corpus import tokenize

FUNCTION_WORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because been
    before being below between both but by can could did do does doing down during
    each few for from further had has have having he her here hers herself him
    himself his how i if in into is it its itself just me might more most must my
    myself no nor not now of off on once only or other ought our ours ourselves out
    over own same shall she should so some such than that the their theirs them
    themselves then there these they this those through to too under until up upon
    us very was we were what when where which while who whom why will with would
    you your yours yourself yourselves 's 're 've 'll 'd n't
    """.split()
)


@dataclass(frozen=True)
class TopTerms:
    terms: list[str]
    truncated: bool  # fewer than k distinct terms were available


def exclusion_hash(exclusion: Iterable[str]) -> str:
    joined = "\n".join(sorted(set(exclusion)))
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:16]


def term_frequencies(texts: Iterable[str], exclusion: Iterable[str] = FUNCTION_WORDS) -> Counter:
    excluded = set(exclusion)
    counts: Counter = Counter()
    for text in texts:
        counts.update(t for t in tokenize(text) if t not in excluded)
    return counts


def top_k_terms(texts: Iterable[str], k: int, exclusion: Iterable[str] = FUNCTION_WORDS) -> TopTerms:
    """The k most frequent non-excluded terms; ties broken lexicographically."""
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = term_frequencies(texts, exclusion)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return TopTerms([t for t, _ in ranked[:k]], truncated=len(ranked) < k)


def overlap_count(texts_a, texts_b, k: int, exclusion: Iterable[str] = FUNCTION_WORDS) -> tuple[int, bool]:
    """|top_k(A) & top_k(B)| and whether either list came up short."""
    texts_a, texts_b = list(texts_a), list(texts_b)
    if not texts_a or not texts_b:
        raise ValueError("both corpora must be non-empty")
    exclusion = frozenset(exclusion)
    a = top_k_terms(texts_a, k, exclusion)
    b = top_k_terms(texts_b, k, exclusion)
    return len(set(a.terms) & set(b.terms)), a.truncated or b.truncated


def diagnostic_report(
    target: list[str],
    source: list[str],
    selected: list[str],
    k: int = 100,
    exclusion: Iterable[str] = FUNCTION_WORDS,
    random_selected: list[str] | None = None,
) -> dict:
    exclusion = frozenset(exclusion)
    tops = {
        "target": top_k_terms(target, k, exclusion),
        "source": top_k_terms(source, k, exclusion),
        "selected": top_k_terms(selected, k, exclusion),
    }
    if random_selected is not None:
        tops["random"] = top_k_terms(random_selected, k, exclusion)
    target_set = set(tops["target"].terms)
    overlaps = {
        f"target_{name}": len(target_set & set(t.terms)) for name, t in tops.items() if name != "target"
    }
    return {
        "k": k,
        "exclusion_hash": exclusion_hash(exclusion),
        "top_k": {name: t.terms for name, t in tops.items()},
        "truncated": {name: t.truncated for name, t in tops.items()},
        "overlap": overlaps,
    }
