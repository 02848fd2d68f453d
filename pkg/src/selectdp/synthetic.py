"""Synthetic target/source corpora for desk-scale experiments.

Two first-order Markov "languages" share a vocabulary of function words,
general words and domain words. The background language rarely uses domain
words. The target language shifts its unigram mass towards them and gives
them their own successor sets. Otherwise it keeps the background's transitions,
so background text is useful for modelling the target, and target-like
text more so. The source corpus mixes a fraction of target-like sequences
into background ones.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

_FUNCTION = (
    "the of and to in is that for it with as was on be at by this from or an "
    "are which but not have has had were they we"
).split()
_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _pseudo_words(count: int, offset: int) -> list[str]:
    syllables = [c + v for c, v in itertools.product(_CONSONANTS, _VOWELS)]
    words = ("".join(p) for p in itertools.product(syllables, repeat=2))
    return list(itertools.islice(words, offset, offset + count))


@dataclass(frozen=True)
class MixtureSpec:
    n_general: int = 300
    n_domain: int = 200
    sequence_length: int = 32
    n_target: int = 1000
    n_source: int = 6000
    target_fraction: float = 0.1
    successors: int = 4
    successor_weight: float = 0.6
    background_domain_mass: float = 0.05
    target_domain_mass: float = 0.5
    zipf: float = 1.1


class MarkovLanguage:
    def __init__(self, vocab: list[str], transitions: np.ndarray, start: np.ndarray):
        self.vocab = vocab
        self.cum = np.cumsum(transitions, axis=1)
        self.cum[:, -1] = 1.0
        self.start_cum = np.cumsum(start)
        self.start_cum[-1] = 1.0

    def sample(self, length: int, rng: np.random.Generator) -> str:
        u = rng.random(length)
        tok = int(np.searchsorted(self.start_cum, u[0], side="right"))
        out = [tok]
        for i in range(1, length):
            tok = int(np.searchsorted(self.cum[tok], u[i], side="right"))
            out.append(tok)
        return " ".join(self.vocab[t] for t in out)


def _zipf(n: int, s: float, rng: np.random.Generator) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return rng.permutation(w / w.sum())


def build_languages(spec: MixtureSpec, seed: int) -> tuple[MarkovLanguage, MarkovLanguage]:
    """(background, target) languages over one shared vocabulary."""
    rng = np.random.default_rng([seed, 101])
    general = _pseudo_words(spec.n_general, 0)
    domain = _pseudo_words(spec.n_domain, spec.n_general)
    vocab = _FUNCTION + general + domain
    nf, ng, nd = len(_FUNCTION), len(general), len(domain)
    v = len(vocab)
    f_sl, g_sl, d_sl = slice(0, nf), slice(nf, nf + ng), slice(nf + ng, v)

    def unigram(domain_mass: float) -> np.ndarray:
        u = np.zeros(v)
        rest = 1.0 - domain_mass
        u[f_sl] = 0.4 * rest * _zipf(nf, spec.zipf, rng)
        u[g_sl] = 0.6 * rest * _zipf(ng, spec.zipf, rng)
        u[d_sl] = domain_mass * _zipf(nd, spec.zipf, rng)
        return u

    u_bg = unigram(spec.background_domain_mass)
    u_tg = unigram(spec.target_domain_mass)

    def successor_rows(pool: np.ndarray) -> np.ndarray:
        rows = np.zeros((v, v))
        for t in range(v):
            nxt = rng.choice(v, size=spec.successors, replace=False, p=pool)
            rows[t, nxt] = rng.dirichlet(np.ones(spec.successors))
        return rows

    shared = successor_rows(u_bg)
    domain_rows = successor_rows(u_tg)
    lam = spec.successor_weight
    bg = lam * shared + (1 - lam) * u_bg
    tg = lam * shared + (1 - lam) * u_tg
    # domain words (and half of the other contexts) follow target-specific successors
    switch = np.zeros(v, dtype=bool)
    switch[d_sl] = True
    switch[: nf + ng] = rng.random(nf + ng) < 0.5
    tg[switch] = lam * domain_rows[switch] + (1 - lam) * u_tg
    return MarkovLanguage(vocab, bg, u_bg), MarkovLanguage(vocab, tg, u_tg)


@dataclass
class MixtureCorpora:
    target: list[dict]
    source: list[dict]
    target_like_ids: set[int]


def make_mixture(spec: MixtureSpec, seed: int) -> MixtureCorpora:
    """JSONL-ready records: target sequences and a shuffled source mixture."""
    background, target = build_languages(spec, seed)
    rng = np.random.default_rng([seed, 202])
    tgt = [
        {"id": i, "text": target.sample(spec.sequence_length, rng)} for i in range(spec.n_target)
    ]
    n_like = int(round(spec.target_fraction * spec.n_source))
    kinds = np.zeros(spec.n_source, dtype=bool)
    kinds[:n_like] = True
    kinds = rng.permutation(kinds)
    src, like = [], set()
    for i, is_like in enumerate(kinds.tolist()):
        lang = target if is_like else background
        sid = 1_000_000 + i
        src.append({"id": sid, "text": lang.sample(spec.sequence_length, rng)})
        if is_like:
            like.add(sid)
    return MixtureCorpora(tgt, src, like)
