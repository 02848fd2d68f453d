"""Fixed-window feedforward next-token model in numpy.

embedding (V x d) -> concat of the previous ``window`` tokens -> tanh layer
(window*d -> hidden) -> softmax over V. Contexts are left-padded with the
padding id, so the first token of a sequence is context only.
"""

from __future__ import annotations

import json
import math
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence as Seq

import numpy as np

from . import dp_optimizer as dpo
from .accounting import MechanismSpec, PrivacyBudget, prv_epsilon, steps_for_epochs
from .corpus import tokenize, write_text_atomic

PAD, UNK = 0, 1
RESERVED = ("<pad>", "<unk>")
_MAGIC = b"STLM"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


class Vocabulary:
    def __init__(self, tokens: Seq[str]):
        if tuple(tokens[:2]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate vocabulary entries")

    @classmethod
    def build(cls, texts: Iterable[str], min_count: int = 1, max_size: int = 8192) -> "Vocabulary":
        counts = Counter()
        for text in texts:
            counts.update(tokenize(text))
        ranked = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        return cls(list(RESERVED) + ranked[: max(0, max_size - len(RESERVED))])

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> np.ndarray:
        return np.array([self.index.get(t, UNK) for t in tokenize(text)], dtype=np.int64)

    def to_json(self) -> str:
        return json.dumps(self.tokens)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        return cls(json.loads(text))


@dataclass(frozen=True)
class LmShape:
    vocab: int
    dim: int = 32
    window: int = 8
    hidden: int = 128

    def blocks(self) -> list[tuple[str, tuple[int, ...]]]:
        v, d, w, h = self.vocab, self.dim, self.window, self.hidden
        return [("emb", (v, d)), ("w1", (w * d, h)), ("b1", (h,)), ("w2", (h, v)), ("b2", (v,))]

    @property
    def size(self) -> int:
        return sum(math.prod(s) for _, s in self.blocks())


class ToyLM:
    def __init__(self, shape: LmShape, params: np.ndarray):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (shape.size,):
            raise ValueError(f"expected {shape.size} parameters, got {params.shape}")
        self.shape = shape
        self.params = params

    @classmethod
    def initialize(cls, shape: LmShape, seed: int) -> "ToyLM":
        rng = np.random.default_rng(seed)
        model = cls(shape, np.zeros(shape.size))
        b = model.blocks()
        b["emb"][:] = rng.normal(0.0, 0.1, b["emb"].shape)
        b["w1"][:] = rng.normal(0.0, 1.0 / math.sqrt(shape.window * shape.dim), b["w1"].shape)
        b["w2"][:] = rng.normal(0.0, 1.0 / math.sqrt(shape.hidden), b["w2"].shape)
        return model

    def copy(self) -> "ToyLM":
        return ToyLM(self.shape, self.params.copy())

    def blocks(self, flat: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """Named views into ``flat`` (the parameters by default)."""
        flat = self.params if flat is None else flat
        out, start = {}, 0
        for name, shp in self.shape.blocks():
            n = math.prod(shp)
            out[name] = flat[start : start + n].reshape(shp)
            start += n
        return out

    # persistence -------------------------------------------------------

    def save(self, path, vocab: Vocabulary | None = None, metadata: dict | None = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        s = self.shape
        header = _HEADER.pack(_MAGIC, _VERSION, s.vocab, s.dim, s.window, s.hidden)
        path.write_bytes(header + self.params.astype("<f8").tobytes())
        side = dict(metadata or {})
        if vocab is not None:
            side["vocabulary"] = vocab.tokens
        if side:
            write_text_atomic(path.with_suffix(path.suffix + ".json"), json.dumps(side, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ToyLM":
        raw = Path(path).read_bytes()
        magic, version, v, d, w, h = _HEADER.unpack_from(raw)
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a toy LM checkpoint")
        if version != _VERSION:
            raise ValueError(f"unsupported toy LM checkpoint version {version}")
        params = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
        return cls(LmShape(v, d, w, h), params)


# data -------------------------------------------------------------------


@dataclass(frozen=True)
class Windows:
    """Next-token prediction positions of one sequence."""

    context: np.ndarray  # (P, window) ids
    target: np.ndarray  # (P,) ids


def make_windows(ids: np.ndarray, window: int) -> Windows:
    ids = np.asarray(ids, dtype=np.int64)
    padded = np.concatenate([np.full(window, PAD, dtype=np.int64), ids])
    n = ids.size
    if n < 2:
        return Windows(np.zeros((0, window), np.int64), np.zeros(0, np.int64))
    idx = np.arange(1, n)[:, None] + np.arange(window)[None, :]
    return Windows(padded[idx], ids[1:])


def encode_corpus(texts: Iterable[str], vocab: Vocabulary, window: int) -> list[Windows]:
    """Encode texts, dropping those with fewer than two tokens."""
    out = []
    for t in texts:
        w = make_windows(vocab.encode(t), window)
        if w.target.size:
            out.append(w)
    return out


def _stack(examples: Seq[Windows]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ctx = np.concatenate([e.context for e in examples])
    tgt = np.concatenate([e.target for e in examples])
    bounds = np.cumsum([0] + [e.target.size for e in examples])
    return ctx, tgt, bounds


# forward / backward --------------------------------------------------------


def _forward(model: ToyLM, ctx: np.ndarray):
    b = model.blocks()
    n = ctx.shape[0]
    a0 = b["emb"][ctx].reshape(n, -1)
    hid = np.tanh(a0 @ b["w1"] + b["b1"])
    logits = hid @ b["w2"] + b["b2"]
    logits -= logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(logits).sum(axis=1, keepdims=True))
    logp = logits - logz
    return a0, hid, logp


def _backward(model: ToyLM, ctx, tgt, a0, hid, logp, weights) -> np.ndarray:
    """Gradient of sum_n weights[n] * NLL_n as a flat vector."""
    b = model.blocks()
    grad = np.zeros_like(model.params)
    g = model.blocks(grad)
    dlog = np.exp(logp)
    dlog[np.arange(tgt.size), tgt] -= 1.0
    dlog *= weights[:, None]
    g["w2"][:] = hid.T @ dlog
    g["b2"][:] = dlog.sum(axis=0)
    dz = (dlog @ b["w2"].T) * (1.0 - hid * hid)
    g["w1"][:] = a0.T @ dz
    g["b1"][:] = dz.sum(axis=0)
    da0 = (dz @ b["w1"].T).reshape(ctx.shape[0], ctx.shape[1], -1)
    np.add.at(g["emb"], ctx, da0)
    return grad


def batch_loss_and_grad(model: ToyLM, examples: Seq[Windows], weights: np.ndarray | None = None):
    """Weighted NLL sum and its gradient; default weights give the mean over positions."""
    ctx, tgt, _ = _stack(examples)
    if weights is None:
        weights = np.full(tgt.size, 1.0 / tgt.size)
    a0, hid, logp = _forward(model, ctx)
    loss = float(-(weights * logp[np.arange(tgt.size), tgt]).sum())
    return loss, _backward(model, ctx, tgt, a0, hid, logp, weights)


def per_example_grads(model: ToyLM, examples: Seq[Windows]) -> np.ndarray:
    """(B, n_params) gradients of each sequence's mean token NLL."""
    ctx, tgt, bounds = _stack(examples)
    a0, hid, logp = _forward(model, ctx)
    out = np.empty((len(examples), model.params.size))
    for i in range(len(examples)):
        s, e = bounds[i], bounds[i + 1]
        w = np.full(e - s, 1.0 / (e - s))
        out[i] = _backward(model, ctx[s:e], tgt[s:e], a0[s:e], hid[s:e], logp[s:e], w)
    return out


def sequence_weights(examples: Seq[Windows], denominator: float) -> np.ndarray:
    """Position weights making the weighted sum equal sum_b mean_NLL_b / denominator."""
    return np.concatenate([np.full(e.target.size, 1.0 / (e.target.size * denominator)) for e in examples])


def predict_proba(model: ToyLM, context: np.ndarray) -> np.ndarray:
    _, _, logp = _forward(model, np.atleast_2d(context))
    return np.exp(logp)


# training -----------------------------------------------------------------


@dataclass(frozen=True)
class PretrainSchedule:
    iterations: int = 1500
    batch_size: int = 32
    learning_rate: float = 3e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999


def pretrain(model: ToyLM, corpus: Seq[Windows], schedule: PretrainSchedule, seed: int) -> ToyLM:
    """Non-private Adam with linearly decaying learning rate; returns a new model."""
    if not corpus:
        raise ValueError("cannot pre-train on an empty corpus")
    model = model.copy()
    state = dpo.AdamState.zeros(
        model.params.size,
        learning_rate=schedule.learning_rate,
        beta1=schedule.beta1,
        beta2=schedule.beta2,
        weight_decay=schedule.weight_decay,
    )
    rng = np.random.default_rng(seed)
    batch = min(schedule.batch_size, len(corpus))
    for it in range(schedule.iterations):
        picks = rng.choice(len(corpus), size=batch, replace=False)
        _, grad = batch_loss_and_grad(model, [corpus[i] for i in picks])
        lr = schedule.learning_rate * (1.0 - it / schedule.iterations)
        state, delta = dpo.adam_step(state, grad, model.params, learning_rate=lr)
        model.params += delta
    return model


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: float = 30.0
    batch_fraction: float = 0.03
    clip_norm: float = 1.0
    noise_multiplier: float = 1.0
    learning_rate: float = 1e-3
    weight_decay: float = 0.0


def finetune_mechanism(n_examples: int, config: FinetuneConfig) -> tuple[int, float, int]:
    """(expected batch size, sampling rate, steps) for ``n_examples`` private sequences."""
    batch = max(1, math.floor(config.batch_fraction * n_examples))
    q = batch / n_examples
    return batch, q, steps_for_epochs(config.epochs, q)


def _finetune(model, corpus, config, seed, private: bool, max_steps: int | None):
    if not corpus:
        raise ValueError("cannot fine-tune on an empty corpus")
    batch, q, steps = finetune_mechanism(len(corpus), config)
    if max_steps is not None:
        steps = min(steps, max_steps)
    model = model.copy()
    dp_config = dpo.DpSgdConfig(config.clip_norm, config.noise_multiplier, batch)
    state = dpo.AdamState.zeros(
        model.params.size, learning_rate=config.learning_rate, weight_decay=config.weight_decay
    )
    sampler = np.random.default_rng([seed, 2])
    for step in range(steps):
        picked = dpo.poisson_batch(len(corpus), q, sampler)
        examples = [corpus[i] for i in picked.tolist()]
        if private:
            if examples:
                per_example = dpo.GradientBatch(per_example_grads(model, examples))
                summed = dpo.tree_sum(dpo.clip_per_example(per_example, config.clip_norm).per_example)
            else:
                summed = np.zeros_like(model.params)
            grad = dpo.noisy_average(summed, dp_config, seed, step)
        else:
            if not examples:
                grad = np.zeros_like(model.params)
            else:
                _, grad = batch_loss_and_grad(model, examples, sequence_weights(examples, batch))
        state, delta = dpo.adam_step(state, grad, model.params)
        model.params += delta
    return model, MechanismSpec(config.noise_multiplier, q, steps) if config.noise_multiplier > 0 else None


@dataclass
class FinetuneResult:
    model: ToyLM
    budget: PrivacyBudget | None
    mechanism: MechanismSpec | None


def finetune_dp(
    model: ToyLM,
    corpus: Seq[Windows],
    config: FinetuneConfig,
    seed: int,
    delta: float | None = None,
    max_steps: int | None = None,
) -> FinetuneResult:
    """DP-Adam fine-tuning: Poisson batches, per-sequence clipping, Gaussian noise.

    The stage budget is the PLD accountant's epsilon at ``delta`` for the
    mechanism actually run. ``max_steps`` truncates the run (testing only;
    the accounted steps shrink with it).
    """
    tuned, mech = _finetune(model, corpus, config, seed, True, max_steps)
    budget = None
    if mech is not None and delta is not None:
        budget = PrivacyBudget(prv_epsilon(mech, delta), delta)
    return FinetuneResult(tuned, budget, mech)


def finetune_nonprivate(
    model: ToyLM, corpus: Seq[Windows], config: FinetuneConfig, seed: int, max_steps: int | None = None
) -> ToyLM:
    """Same sampler and loss scaling as :func:`finetune_dp`, without clipping or noise."""
    return _finetune(model, corpus, config, seed, False, max_steps)[0]


# evaluation ---------------------------------------------------------------


@dataclass(frozen=True)
class Evaluation:
    perplexity: float
    top1_accuracy: float
    positions: int

    def to_dict(self) -> dict:
        return {"perplexity": self.perplexity, "top1_accuracy": self.top1_accuracy, "positions": self.positions}


def evaluate(model: ToyLM, corpus: Seq[Windows], chunk: int = 4096) -> Evaluation:
    """Perplexity exp(mean NLL) and top-1 accuracy over every position.

    The NLL sum uses exact (fsum) accumulation, so the result does not depend
    on example order.
    """
    if not corpus:
        raise ValueError("cannot evaluate on an empty corpus")
    ctx, tgt, _ = _stack(corpus)
    nll_parts = []
    hits = 0
    for s in range(0, tgt.size, chunk):
        _, _, logp = _forward(model, ctx[s : s + chunk])
        t = tgt[s : s + chunk]
        nll_parts.extend((-logp[np.arange(t.size), t]).tolist())
        hits += int(np.sum(logp.argmax(axis=1) == t))
    mean_nll = math.fsum(nll_parts) / tgt.size
    return Evaluation(math.exp(mean_nll), hits / tgt.size, int(tgt.size))
