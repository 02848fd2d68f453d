"""Rank source sequences by classifier confidence and keep the best ones
until a token budget is reached."""

from __future__ import annotations

import heapq
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence as Seq

import numpy as np

from .classifier import ClassifierModel, HashingConfig, confidence, featurize
from .corpus import Sequence

THREADS_ENV = "SELECTDP_NUM_THREADS"


def worker_count(requested: int | None = None) -> int:
    cap = int(os.environ.get(THREADS_ENV, "0") or 0)
    n = requested or cap or 1
    return max(1, min(n, cap) if cap else n)


@dataclass(frozen=True)
class ScoredSequence:
    sequence_id: int
    score: float
    token_count: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass
class SelectionResult:
    selected_ids: list[int]
    total_tokens: int
    budget: int
    cutoff_score: float | None
    scores: list[float] = field(default_factory=list)
    budget_exceeds_corpus: bool = False

    def to_jsonl(self) -> str:
        lines = []
        for i, sid in enumerate(self.selected_ids):
            rec = {"id": sid}
            if self.scores:
                rec["score"] = self.scores[i]
            lines.append(json.dumps(rec, sort_keys=True))
        return "".join(line + "\n" for line in lines)

    def summary(self) -> dict:
        return {
            "selected": len(self.selected_ids),
            "total_tokens": self.total_tokens,
            "budget": self.budget,
            "cutoff_score": self.cutoff_score,
            "budget_exceeds_corpus": self.budget_exceeds_corpus,
        }


def score_sequence(model: ClassifierModel, seq: Sequence, hashing: HashingConfig) -> ScoredSequence:
    """Maximum sentence confidence (one sentence for unsplit sequences)."""
    best = max(confidence(model, featurize(s, hashing)) for s in seq.sentences)
    return ScoredSequence(seq.id, best, seq.token_count)


def score_corpus(
    model: ClassifierModel,
    sequences: Seq[Sequence],
    hashing: HashingConfig,
    workers: int | None = None,
) -> list[ScoredSequence]:
    """Score in input order; the thread pool only changes wall time."""
    n = worker_count(workers)
    if n == 1 or len(sequences) < 2:
        return [score_sequence(model, s, hashing) for s in sequences]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(lambda s: score_sequence(model, s, hashing), sequences, chunksize=64))


def _check_budget(token_budget: int) -> int:
    if int(token_budget) != token_budget or token_budget < 1:
        raise ValueError(f"token budget must be a positive integer, got {token_budget}")
    return int(token_budget)


def _best_prefix(scored: Iterable[ScoredSequence], budget: int) -> tuple[list[ScoredSequence], int]:
    """Shortest (score desc, id asc) prefix reaching ``budget``, plus the corpus token total.

    Streams the input through a min-heap holding only the current best prefix:
    the worst held item is dropped as soon as the others already reach the
    budget, since it can then never be part of the answer.
    """
    heap: list[tuple[float, int, ScoredSequence]] = []  # heap[0] is the worst held item
    held = 0
    corpus_tokens = 0
    for item in scored:
        corpus_tokens += item.token_count
        heapq.heappush(heap, (item.score, -item.sequence_id, item))
        held += item.token_count
        while held - heap[0][2].token_count >= budget:
            held -= heapq.heappop(heap)[2].token_count
    ranked = [e[2] for e in sorted(heap, key=lambda e: (-e[0], -e[1]))]
    return ranked, corpus_tokens


def _result(ranked: list[ScoredSequence], budget: int, corpus_tokens: int) -> SelectionResult:
    return SelectionResult(
        selected_ids=[s.sequence_id for s in ranked],
        total_tokens=sum(s.token_count for s in ranked),
        budget=budget,
        cutoff_score=ranked[-1].score if ranked else None,
        scores=[s.score for s in ranked],
        budget_exceeds_corpus=corpus_tokens < budget,
    )


def select_top(scored: Iterable[ScoredSequence], token_budget: int) -> SelectionResult:
    """Take sequences by (score desc, id asc) until the budget is reached or crossed.

    The sequence that crosses the budget is included. If the corpus holds
    fewer tokens than the budget, everything is returned and
    ``budget_exceeds_corpus`` is set.
    """
    budget = _check_budget(token_budget)
    ranked, corpus_tokens = _best_prefix(scored, budget)
    return _result(ranked, budget, corpus_tokens)


def select_top_sharded(
    shards: Seq[Iterable[ScoredSequence]], token_budget: int, workers: int | None = None
) -> SelectionResult:
    """Per-shard candidate heaps merged into one result.

    A shard's local best prefix contains every one of its items that can make
    the global cut, so reselecting over the union is exact and independent of
    the shard schedule.
    """
    budget = _check_budget(token_budget)
    n = worker_count(workers)
    if n == 1:
        local = [_best_prefix(s, budget) for s in shards]
    else:
        with ThreadPoolExecutor(n) as pool:
            local = list(pool.map(lambda s: _best_prefix(s, budget), shards))
    candidates = [item for ranked, _ in local for item in ranked]
    ranked, _ = _best_prefix(candidates, budget)
    return _result(ranked, budget, sum(tokens for _, tokens in local))


def random_baseline(corpus: Iterable, token_budget: int, seed: int) -> SelectionResult:
    """Uniformly shuffled prefix under the same stopping rule as :func:`select_top`.

    ``corpus`` yields :class:`Sequence` objects or ``(id, token_count)`` pairs.
    """
    budget = _check_budget(token_budget)
    items = []
    for s in corpus:
        if isinstance(s, Sequence):
            items.append((s.id, s.token_count))
        else:
            items.append((int(s[0]), int(s[1])))
    items.sort()
    order = np.random.default_rng(seed).permutation(len(items))
    chosen, total = [], 0
    for i in order.tolist():
        if total >= budget:
            break
        sid, tok = items[i]
        chosen.append(sid)
        total += tok
    return SelectionResult(
        selected_ids=chosen,
        total_tokens=total,
        budget=budget,
        cutoff_score=None,
        budget_exceeds_corpus=sum(t for _, t in items) < budget,
    )


def mean_score(result: SelectionResult, scores: dict[int, float]) -> float:
    if not result.selected_ids:
        return math.nan
    return float(np.mean([scores[i] for i in result.selected_ids]))
