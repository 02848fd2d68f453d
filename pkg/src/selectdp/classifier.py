"""Domain classifier: hashed word n-grams into a (optionally one-hidden-layer)
logistic model, trained with DP-Adam.

Parameters are kept in one flat vector. Linear layout: ``[w (2^b) | bias]``.
With a hidden layer of width h:
``[W1 (h x 2^b, row-major) | b1 (h) | w2 (h) | bias]``.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence as Seq

import numpy as np
from scipy.special import expit

from . import dp_optimizer as dpo
from .accounting import MechanismSpec, PrivacyBudget, calibrate_noise, prv_epsilon, steps_for_epochs
from .corpus import tokenize, write_text_atomic

NEGATIVE_RATIO = 5
_MAGIC = b"SDPC"
_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@lru_cache(maxsize=1 << 20)
def _bucket(feature: str, bits: int) -> int:
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & ((1 << bits) - 1)


@dataclass(frozen=True)
class HashingConfig:
    bits: int = 18
    ngram_max: int = 2
    l2_normalize: bool = False

    def __post_init__(self):
        if not 1 <= self.bits <= 30:
            raise ValueError("bits must lie in [1, 30]")
        if self.ngram_max < 1:
            raise ValueError("ngram_max must be >= 1")

    @property
    def dim(self) -> int:
        return 1 << self.bits


@dataclass(frozen=True)
class FeatureVector:
    indices: np.ndarray
    values: np.ndarray
    bits: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be matching 1-D arrays")
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= 1 << self.bits):
            raise ValueError("indices must be strictly increasing and inside the hash range")
        if np.any(val <= 0):
            raise ValueError("feature values must be positive")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @property
    def sq_norm(self) -> float:
        return float(self.values @ self.values)


def featurize(text: str, config: HashingConfig = HashingConfig()) -> FeatureVector:
    """Lowercased whitespace tokens; n-grams up to ``ngram_max`` hashed into 2^bits buckets."""
    tokens = tokenize(text)
    counts: dict[int, float] = {}
    for n in range(1, config.ngram_max + 1):
        for i in range(len(tokens) - n + 1):
            b = _bucket(" ".join(tokens[i : i + n]), config.bits)
            counts[b] = counts.get(b, 0.0) + 1.0
    if not counts:
        return FeatureVector(np.zeros(0, np.int64), np.zeros(0), config.bits)
    idx = np.fromiter(sorted(counts), dtype=np.int64, count=len(counts))
    val = np.array([counts[i] for i in idx.tolist()])
    if config.l2_normalize:
        val = val / np.linalg.norm(val)
    return FeatureVector(idx, val, config.bits)


@dataclass
class ClassifierModel:
    params: np.ndarray
    bits: int
    hidden: int = 0

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.size != self.param_count(self.bits, self.hidden):
            raise ValueError("parameter vector has the wrong length for (bits, hidden)")
        if not np.all(np.isfinite(self.params)):
            raise ValueError("classifier parameters must be finite")

    @staticmethod
    def param_count(bits: int, hidden: int) -> int:
        d = 1 << bits
        return d + 1 if hidden == 0 else hidden * d + 2 * hidden + 1

    @classmethod
    def initialize(cls, bits: int, hidden: int = 0, seed: int = 0) -> "ClassifierModel":
        params = np.zeros(cls.param_count(bits, hidden))
        if hidden:
            rng = np.random.default_rng(seed)
            d = 1 << bits
            # small random first layer; zero output layer keeps the initial score at 0
            params[: hidden * d] = rng.normal(0.0, 0.01, hidden * d)
        return cls(params, bits, hidden)

    @property
    def dim(self) -> int:
        return 1 << self.bits

    @property
    def bias(self) -> float:
        return float(self.params[-1])

    def _hidden_blocks(self):
        d, h = self.dim, self.hidden
        w1 = self.params[: h * d].reshape(h, d)
        b1 = self.params[h * d : h * d + h]
        w2 = self.params[h * d + h : h * d + 2 * h]
        return w1, b1, w2

    def score(self, fv: FeatureVector) -> float:
        if self.hidden == 0:
            return float(self.params[fv.indices] @ fv.values + self.params[-1])
        w1, b1, w2 = self._hidden_blocks()
        z = np.tanh(w1[:, fv.indices] @ fv.values + b1)
        return float(w2 @ z + self.params[-1])

    def example_gradient(self, fv: FeatureVector, label: float) -> tuple[np.ndarray, np.ndarray]:
        """Sparse gradient of the logistic loss for one example: (flat indices, values)."""
        d = self.dim
        if self.hidden == 0:
            resid = expit(self.score(fv)) - label
            idx = np.concatenate([fv.indices, [d]])
            val = resid * np.concatenate([fv.values, [1.0]])
            return idx, val
        h = self.hidden
        w1, b1, w2 = self._hidden_blocks()
        z = np.tanh(w1[:, fv.indices] @ fv.values + b1)
        resid = expit(float(w2 @ z + self.params[-1])) - label
        a = resid * w2 * (1.0 - z * z)
        rows = np.arange(h)[:, None] * d + fv.indices[None, :]
        base = h * d
        idx = np.concatenate([rows.ravel(), base + np.arange(h), base + h + np.arange(h), [base + 2 * h]])
        val = np.concatenate([np.outer(a, fv.values).ravel(), a, resid * z, [resid]])
        return idx, val

    def loss(self, features: Seq[FeatureVector], labels: Seq[float]) -> float:
        total = 0.0
        for fv, y in zip(features, labels):
            s = self.score(fv)
            # log(1 + e^-s) for y=1, log(1 + e^s) for y=0
            total += np.logaddexp(0.0, -s if y else s)
        return float(total / len(features))

    def gradient(self, features: Seq[FeatureVector], labels: Seq[float]) -> np.ndarray:
        g = np.zeros_like(self.params)
        for fv, y in zip(features, labels):
            idx, val = self.example_gradient(fv, y)
            np.add.at(g, idx, val)
        return g / len(features)

    # persistence -------------------------------------------------------

    def save(self, path, metadata: dict | None = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = _HEADER.pack(_MAGIC, _VERSION, self.bits, self.hidden)
        path.write_bytes(header + self.params.astype("<f8").tobytes())
        if metadata is not None:
            write_text_atomic(path.with_suffix(path.suffix + ".json"), json.dumps(metadata, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        raw = Path(path).read_bytes()
        magic, version, bits, hidden = _HEADER.unpack_from(raw)
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a classifier checkpoint")
        if version != _VERSION:
            raise ValueError(f"unsupported classifier checkpoint version {version}")
        params = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
        return cls(params, bits, hidden)


def confidence(model: ClassifierModel, fv: FeatureVector) -> float:
    """Uncalibrated probability that ``fv`` comes from the target distribution."""
    return float(expit(model.score(fv)))


@dataclass
class ClassifierTrainSet:
    positives: list[FeatureVector]
    negatives: list[FeatureVector]
    negative_ids: list[int] = field(default_factory=list)
    allow_any_ratio: bool = False

    def __post_init__(self):
        if not self.positives:
            raise ValueError("need at least one positive example")
        if not self.allow_any_ratio and len(self.negatives) != NEGATIVE_RATIO * len(self.positives):
            raise ValueError(
                f"expected {NEGATIVE_RATIO} negatives per positive, got "
                f"{len(self.negatives)} for {len(self.positives)}"
            )

    def __len__(self) -> int:
        return len(self.positives) + len(self.negatives)

    def examples(self) -> tuple[list[FeatureVector], np.ndarray]:
        feats = list(self.positives) + list(self.negatives)
        labels = np.concatenate([np.ones(len(self.positives)), np.zeros(len(self.negatives))])
        return feats, labels


def build_train_set(
    target_texts: Seq[str],
    source: Seq[tuple[int, str]],
    seed: int,
    hashing: HashingConfig = HashingConfig(),
) -> ClassifierTrainSet:
    """All target texts as positives, 5N source items sampled without replacement as negatives.

    ``source`` is a sequence of ``(id, text)`` pairs. The sample is a seeded
    permutation, so equal seeds give equal negatives.
    """
    n = len(target_texts)
    need = NEGATIVE_RATIO * n
    if len(source) < need:
        raise ValueError(f"source has {len(source)} sequences; need at least {need}")
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.permutation(len(source))[:need])
    negatives = [featurize(source[i][1], hashing) for i in picks.tolist()]
    positives = [featurize(t, hashing) for t in target_texts]
    return ClassifierTrainSet(positives, negatives, [int(source[i][0]) for i in picks.tolist()])


@dataclass(frozen=True)
class ClassifierTrainConfig:
    epochs: float = 3.0
    batch_fraction: float = 0.03
    clip_norm: float = 1.0
    noise_multiplier: float | None = None
    learning_rate: float = 0.05
    weight_decay: float = 0.0
    hidden: int = 0


@dataclass
class ClassifierTrainResult:
    model: ClassifierModel
    budget: PrivacyBudget | None
    mechanism: MechanismSpec | None


def classifier_mechanism(n_positive: int, n_total: int, config: ClassifierTrainConfig) -> tuple[float, float, int]:
    """(expected batch size, sampling rate, steps).

    The batch is sized off the number of *target* examples, so drawing it from
    the 6N-sized training set lowers each target example's sampling rate
    six-fold.
    """
    batch = max(1, math.floor(config.batch_fraction * n_positive))
    q = min(1.0, batch / n_total)
    return batch, q, steps_for_epochs(config.epochs, q)


def train_dp(
    train_set: ClassifierTrainSet,
    config: ClassifierTrainConfig,
    bits: int,
    seed: int,
    target: PrivacyBudget | None = None,
) -> ClassifierTrainResult:
    """DP-Adam on the logistic loss.

    The noise multiplier is taken from ``config`` or, if unset, calibrated to
    ``target``. The returned budget is the accountant's value for the
    mechanism actually run (evaluated at ``target.delta``).
    """
    feats, labels = train_set.examples()
    n = len(feats)
    batch, q, steps = classifier_mechanism(len(train_set.positives), n, config)
    sigma = config.noise_multiplier
    if sigma is None:
        if target is None:
            raise ValueError("either a noise multiplier or a target budget is required")
        sigma = calibrate_noise(target, q, steps)

    mechanism = MechanismSpec(sigma, q, steps) if sigma > 0 else None
    budget = None
    if mechanism is not None and target is not None:
        budget = PrivacyBudget(prv_epsilon(mechanism, target.delta), target.delta)

    dp_config = dpo.DpSgdConfig(config.clip_norm, sigma, batch)
    model = ClassifierModel.initialize(bits, config.hidden, seed)
    state = dpo.AdamState.zeros(model.params.size, learning_rate=config.learning_rate,
                                weight_decay=config.weight_decay)
    sampler = np.random.default_rng([seed, 1])
    for step in range(steps):
        picked = dpo.poisson_batch(n, q, sampler)
        clipped_sum = np.zeros_like(model.params)
        for i in picked.tolist():
            idx, val = model.example_gradient(feats[i], labels[i])
            factor = dpo.clip_factors(np.array([np.linalg.norm(val)]), config.clip_norm)[0]
            np.add.at(clipped_sum, idx, val * factor)
        grad = dpo.noisy_average(clipped_sum, dp_config, seed, step)
        state, delta = dpo.adam_step(state, grad, model.params)
        model.params = model.params + delta
    return ClassifierTrainResult(model, budget, mechanism)


def f1_score(model: ClassifierModel, features: Seq[FeatureVector], labels: Seq[float], threshold: float = 0.5) -> float:
    pred = np.array([confidence(model, fv) >= threshold for fv in features])
    truth = np.asarray(labels) > 0.5
    tp = np.sum(pred & truth)
    fp = np.sum(pred & ~truth)
    fn = np.sum(~pred & truth)
    return float(2 * tp / (2 * tp + fp + fn)) if tp else 0.0
