"""End-to-end runs: budget split, DP classifier, selection, pre-training,
DP fine-tuning, diagnostics and a composed privacy report."""

from __future__ import annotations

import configparser
import dataclasses
import functools
import hashlib
import json
import logging
import math
import os
import time
import typing
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import toy_lm
from .accounting import (
    CalibrationError,
    CompositionInput,
    MechanismSpec,
    PrivacyBudget,
    advanced_compose_detail,
    calibrate_noise,
    joint_prv_epsilon,
    max_second_epsilon,
    prv_epsilon,
    rdp_epsilon,
)
from .classifier import (
    NEGATIVE_RATIO,
    ClassifierTrainConfig,
    HashingConfig,
    build_train_set,
    classifier_mechanism,
    f1_score,
    train_dp,
)
from .corpus import Sequence, read_jsonl, write_text_atomic
from .diagnostics import diagnostic_report
from .selection import random_baseline, score_corpus, select_top

log = logging.getLogger(__name__)

MODES = ("selective", "random", "full-source", "no-pretrain")
REPORT_NAME = "report.json"
LOCK_NAME = ".selectdp.lock"


class ConfigError(ValueError):
    pass


class BudgetExceededError(RuntimeError):
    """The planned mechanisms would spend more than the configured total."""


class OutputLockedError(RuntimeError):
    pass


# configuration ------------------------------------------------------------


@dataclass
class PathsConfig:
    target: str = ""
    source: str = ""
    output: str = ""


@dataclass
class BudgetConfig:
    epsilon: float = 7.3
    delta: float = 1e-7
    split: float = 0.1  # share of epsilon given to the classifier
    delta1: float = 1e-8
    delta2: float = 4e-8
    delta_slack: float = 5e-8


@dataclass
class SelectionConfig:
    token_budget: typing.Optional[int] = None
    token_fraction: float = 0.1  # of source tokens, used when token_budget is unset
    sentence_split: bool = False
    diagnostics_k: int = 100
    workers: typing.Optional[int] = None


@dataclass
class ClassifierConfig:
    bits: int = 18
    ngram_max: int = 2
    epochs: float = 3.0
    batch_fraction: float = 0.03
    clip_norm: float = 1.0
    learning_rate: float = 0.05
    hidden: int = 0
    noise_multiplier: typing.Optional[float] = None  # calibrated when unset


@dataclass
class LmConfig:
    dim: int = 32
    window: int = 8
    hidden: int = 128
    min_count: int = 1
    max_vocab: int = 8192
    pretrain_iterations: int = 1500
    pretrain_batch_size: int = 32
    pretrain_learning_rate: float = 3e-3
    pretrain_weight_decay: float = 0.01
    finetune_epochs: float = 30.0
    finetune_batch_fraction: float = 0.03
    finetune_clip_norm: float = 1.0
    finetune_learning_rate: float = 1e-3
    noise_multiplier: typing.Optional[float] = None  # calibrated when unset


@dataclass
class RunConfig:
    seed: int = 0
    modes: list = field(default_factory=lambda: ["selective"])


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    lm: LmConfig = field(default_factory=LmConfig)
    run: RunConfig = field(default_factory=RunConfig)
    unknown_keys: list = field(default_factory=list, compare=False)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("unknown_keys")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for section, values in self.to_dict().items():
            parser[section] = {
                k: _format_value(v) for k, v in values.items() if v is not None
            }
        lines = []
        for section in parser.sections():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in parser[section].items()]
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_ini(cls, path) -> "PipelineConfig":
        """Read a config file; relative paths resolve against its directory."""
        path = Path(path)
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        config = cls.from_mapping({s: dict(parser[s]) for s in parser.sections()})
        base = path.resolve().parent
        for name in ("target", "source", "output"):
            value = getattr(config.paths, name)
            if value and not Path(value).is_absolute():
                setattr(config.paths, name, str(base / value))
        return config

    @classmethod
    def from_mapping(cls, sections: dict) -> "PipelineConfig":
        config = cls()
        for section, values in sections.items():
            if section not in _SECTIONS:
                config.unknown_keys.append(section)
                continue
            target = getattr(config, section)
            hints = typing.get_type_hints(type(target))
            names = {f.name for f in dataclasses.fields(target)}
            for key, raw in values.items():
                if key not in names:
                    config.unknown_keys.append(f"{section}.{key}")
                    continue
                try:
                    setattr(target, key, _parse_value(str(raw), hints[key]))
                except ValueError as exc:
                    raise ConfigError(f"{section}.{key}: {exc}") from exc
        return config


_SECTIONS = ("paths", "budget", "selection", "classifier", "lm", "run")


def _format_value(v) -> str:
    if isinstance(v, list):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v).lower() if isinstance(v, bool) else str(v)


def _parse_value(raw: str, hint):
    raw = raw.strip()
    if typing.get_origin(hint) is typing.Union:
        if raw.lower() in ("", "none"):
            return None
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    if hint is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    if hint is list:
        return [p.strip() for p in raw.split(",") if p.strip()]
    return raw


# validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Finding:
    level: str  # "error" or "warning"
    key: str
    message: str

    def __str__(self) -> str:
        return f"{self.level}: {self.key}: {self.message}"


def has_errors(findings) -> bool:
    return any(f.level == "error" for f in findings)


def validate(config: PipelineConfig) -> list[Finding]:
    """Schema, path and budget-arithmetic checks. Touches nothing on disk."""
    out: list[Finding] = []

    def err(key, msg):
        out.append(Finding("error", key, msg))

    def warn(key, msg):
        out.append(Finding("warning", key, msg))

    for key in config.unknown_keys:
        warn(key, "unknown key ignored")

    b = config.budget
    if not (math.isfinite(b.epsilon) and b.epsilon > 0):
        err("budget.epsilon", f"must be positive, got {b.epsilon}")
    if not 0 < b.delta < 1:
        err("budget.delta", f"must lie in (0, 1), got {b.delta}")
    if not 0 < b.split < 1:
        err("budget.split", f"must lie in (0, 1), got {b.split}")
    for name in ("delta1", "delta2", "delta_slack"):
        value = getattr(b, name)
        if not value > 0:
            err(f"budget.{name}", f"must be positive, got {value}")
    spent = b.delta1 + b.delta2 + b.delta_slack
    if spent > b.delta:
        err("budget", f"delta1 + delta2 + delta_slack = {spent:.6g} exceeds total delta {b.delta:.6g}")

    modes = config.run.modes
    if not modes:
        err("run.modes", "at least one mode is required")
    for m in modes:
        if m not in MODES:
            err("run.modes", f"unknown mode {m!r}; expected one of {', '.join(MODES)}")
    if len(set(modes)) != len(modes):
        err("run.modes", "modes must not repeat")

    s = config.selection
    if s.token_budget is not None and s.token_budget < 1:
        err("selection.token_budget", "must be a positive integer")
    if s.token_budget is None and not 0 < s.token_fraction <= 1:
        err("selection.token_fraction", f"must lie in (0, 1], got {s.token_fraction}")
    if s.diagnostics_k < 1:
        err("selection.diagnostics_k", "must be >= 1")

    c = config.classifier
    if not 1 <= c.bits <= 26:
        err("classifier.bits", "must lie in [1, 26]")
    if c.noise_multiplier is not None and not c.noise_multiplier > 0:
        err("classifier.noise_multiplier", "must be positive when set")
    for name in ("epochs", "batch_fraction", "clip_norm", "learning_rate"):
        if not getattr(c, name) > 0:
            err(f"classifier.{name}", "must be positive")

    lm = config.lm
    for name in ("dim", "window", "hidden", "pretrain_batch_size", "max_vocab"):
        if getattr(lm, name) < 1:
            err(f"lm.{name}", "must be >= 1")
    if lm.max_vocab < 3:
        err("lm.max_vocab", "must leave room for the reserved tokens")
    for name in ("finetune_epochs", "finetune_batch_fraction", "finetune_clip_norm", "finetune_learning_rate"):
        if not getattr(lm, name) > 0:
            err(f"lm.{name}", "must be positive")
    if lm.noise_multiplier is not None and not lm.noise_multiplier > 0:
        err("lm.noise_multiplier", "must be positive when set")

    p = config.paths
    for name in ("target", "source"):
        value = getattr(p, name)
        if not value:
            err(f"paths.{name}", "missing")
        elif not Path(value).is_file():
            err(f"paths.{name}", f"no such file: {value}")
    if not p.output:
        err("paths.output", "missing")
    else:
        outdir = Path(p.output)
        if outdir.exists() and not outdir.is_dir():
            err("paths.output", f"not a directory: {outdir}")
        elif (outdir / REPORT_NAME).exists():
            warn("paths.output", f"{outdir / REPORT_NAME} will be overwritten")
        if (outdir / LOCK_NAME).exists():
            warn("paths.output", "lock file present; another run may be active")
    return out


# seeds --------------------------------------------------------------------

SEED_LABELS = (
    "target-split",
    "classifier-negatives",
    "classifier-train",
    "random-selection",
    "lm-init",
    "pretrain",
    "finetune",
)


def sub_seed(master: int, label: str) -> int:
    """63-bit seed derived from the master seed and a stage label."""
    digest = hashlib.blake2b(f"{int(master)}/{label}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


# budget planning ----------------------------------------------------------


@functools.lru_cache(maxsize=256)
def _calibrated(epsilon: float, delta: float, q: float, steps: int) -> float:
    return calibrate_noise(PrivacyBudget(epsilon, delta), q, steps)


@dataclass
class BudgetPlan:
    """Mechanisms and accountant outputs for one family of modes.

    ``selective`` plans pay for the classifier in stage 1. The other modes
    touch private data only during fine-tuning, so stage 1 is (0, 0) and the
    fine-tuning stage inherits delta1 + delta2.
    """

    selective: bool
    classifier: MechanismSpec | None
    finetune: MechanismSpec
    stage1: PrivacyBudget
    stage2: PrivacyBudget
    delta_slack: float
    total: PrivacyBudget
    branch: str
    joint_prv: PrivacyBudget
    rdp: dict

    def to_dict(self) -> dict:
        tighter = "joint_prv" if self.joint_prv.epsilon < self.total.epsilon else "two_stage"
        return {
            "selective": self.selective,
            "mechanisms": {
                "classifier": self.classifier.to_dict() if self.classifier else None,
                "finetune": self.finetune.to_dict(),
            },
            "stage1": self.stage1.to_dict(),
            "stage2": self.stage2.to_dict(),
            "delta_slack": self.delta_slack,
            "total": self.total.to_dict(),
            "total_branch": self.branch,
            "joint_prv": self.joint_prv.to_dict(),
            "tighter": tighter,
            "rdp_check": self.rdp,
        }


def _fits(budget: PrivacyBudget, cap: BudgetConfig) -> bool:
    return budget.epsilon <= cap.epsilon and budget.delta <= cap.delta


def plan_budget(
    config: PipelineConfig, n_private: int, selective: bool
) -> BudgetPlan:
    """Noise multipliers and composed budget, computed before any training.

    Raises :class:`BudgetExceededError` if the composed total would exceed
    the configured cap.
    """
    b = config.budget
    lm = config.lm
    ft_cfg = finetune_config(config, 1.0)
    _, q2, steps2 = toy_lm.finetune_mechanism(n_private, ft_cfg)

    clf_mech = None
    if selective:
        clf_cfg = classifier_train_config(config)
        _, q1, steps1 = classifier_mechanism(n_private, (1 + NEGATIVE_RATIO) * n_private, clf_cfg)
        sigma1 = config.classifier.noise_multiplier
        if sigma1 is None:
            sigma1 = _calibrate(b.split * b.epsilon, b.delta1, q1, steps1, "classifier")
        clf_mech = MechanismSpec(sigma1, q1, steps1)
        stage1 = PrivacyBudget(_stage_epsilon(clf_mech, b.delta1, "classifier"), b.delta1)
        delta2 = b.delta2
    else:
        stage1 = PrivacyBudget(0.0, 0.0)
        delta2 = b.delta1 + b.delta2

    if stage1.epsilon >= b.epsilon:
        raise BudgetExceededError(
            f"classifier stage alone spends epsilon {stage1.epsilon:.4f} of {b.epsilon}"
        )
    sigma2 = lm.noise_multiplier
    if sigma2 is None:
        eps2 = max_second_epsilon(stage1.epsilon, b.epsilon, b.delta_slack)
        sigma2 = _calibrate(eps2, delta2, q2, steps2, "fine-tuning")
    ft_mech = MechanismSpec(sigma2, q2, steps2)
    stage2 = PrivacyBudget(_stage_epsilon(ft_mech, delta2, "fine-tuning"), delta2)

    total, branch = advanced_compose_detail(CompositionInput(stage1, stage2, b.delta_slack))
    if not _fits(total, b):
        raise BudgetExceededError(
            f"planned total ({total.epsilon:.6g}, {total.delta:.3g}) exceeds the configured "
            f"({b.epsilon}, {b.delta})"
        )
    mechs = [m for m in (clf_mech, ft_mech) if m is not None]
    joint = PrivacyBudget(joint_prv_epsilon(mechs, total.delta), total.delta)
    rdp = {"finetune": rdp_epsilon(ft_mech, delta2)}
    if clf_mech is not None:
        rdp["classifier"] = rdp_epsilon(clf_mech, b.delta1)
    return BudgetPlan(selective, clf_mech, ft_mech, stage1, stage2, b.delta_slack, total, branch, joint, rdp)


def _stage_epsilon(mech: MechanismSpec, delta: float, what: str) -> float:
    eps = prv_epsilon(mech, delta)
    if not math.isfinite(eps):
        raise BudgetExceededError(
            f"{what}: {mech} exceeds any budget: epsilon beyond the accountant's range at delta {delta:g}"
        )
    return eps


def _calibrate(epsilon, delta, q, steps, what) -> float:
    try:
        return _calibrated(float(epsilon), float(delta), float(q), int(steps))
    except CalibrationError as exc:
        raise BudgetExceededError(f"{what}: {exc}") from exc


def classifier_train_config(config: PipelineConfig) -> ClassifierTrainConfig:
    c = config.classifier
    return ClassifierTrainConfig(
        epochs=c.epochs,
        batch_fraction=c.batch_fraction,
        clip_norm=c.clip_norm,
        noise_multiplier=c.noise_multiplier,
        learning_rate=c.learning_rate,
        hidden=c.hidden,
    )


def finetune_config(config: PipelineConfig, noise_multiplier: float) -> toy_lm.FinetuneConfig:
    lm = config.lm
    return toy_lm.FinetuneConfig(
        epochs=lm.finetune_epochs,
        batch_fraction=lm.finetune_batch_fraction,
        clip_norm=lm.finetune_clip_norm,
        noise_multiplier=noise_multiplier,
        learning_rate=lm.finetune_learning_rate,
    )


def hashing_config(config: PipelineConfig) -> HashingConfig:
    return HashingConfig(bits=config.classifier.bits, ngram_max=config.classifier.ngram_max)


# run ----------------------------------------------------------------------


@dataclass
class RunReport:
    config_hash: str
    seeds: dict
    modes: list
    status: str = "running"
    error: str | None = None
    data: dict = field(default_factory=dict)
    privacy: dict = field(default_factory=dict)
    classifier: dict = field(default_factory=dict)
    selection: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    started: float = 0.0
    finished: float | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def write(self, outdir: Path) -> Path:
        path = Path(outdir) / REPORT_NAME
        write_text_atomic(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


@contextmanager
def output_lock(outdir: Path):
    """Single run per output directory, enforced with an exclusive-create lock file."""
    outdir.mkdir(parents=True, exist_ok=True)
    lock = outdir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
    except FileExistsError:
        raise OutputLockedError(f"{lock} exists; is another run using {outdir}?") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def split_target(target: list[Sequence], seed: int) -> tuple[list[Sequence], list[Sequence], list[Sequence]]:
    """80/10/10 train/validation/test split of the id-sorted target."""
    items = sorted(target, key=lambda s: s.id)
    order = np.random.default_rng(seed).permutation(len(items))
    n_train = int(0.8 * len(items))
    n_val = int(0.1 * len(items))
    pick = [items[i] for i in order.tolist()]
    return pick[:n_train], pick[n_train : n_train + n_val], pick[n_train + n_val :]


def token_budget(config: PipelineConfig, source: list[Sequence]) -> int:
    if config.selection.token_budget is not None:
        return config.selection.token_budget
    total = sum(s.token_count for s in source)
    return max(1, int(config.selection.token_fraction * total))


def run(config: PipelineConfig) -> RunReport:
    """Run every configured mode and write ``report.json`` to the output directory.

    Modes share the vocabulary, target split, initialization and evaluation
    sets, so their metrics differ only through the pre-training data.
    On failure a partial report with ``status = "failed"`` is written and the
    exception is re-raised.
    """
    findings = validate(config)
    if has_errors(findings):
        raise ConfigError("; ".join(str(f) for f in findings if f.level == "error"))
    master = config.run.seed
    seeds = {"master": master, **{label: sub_seed(master, label) for label in SEED_LABELS}}
    outdir = Path(config.paths.output)
    report = RunReport(config.config_hash(), seeds, list(config.run.modes), started=time.time())
    with output_lock(outdir):
        try:
            _execute(config, report, outdir)
        except BaseException as exc:
            report.status = "failed"
            report.error = f"{type(exc).__name__}: {exc}"
            report.finished = time.time()
            report.write(outdir)
            raise
        report.status = "ok"
        report.finished = time.time()
        report.write(outdir)
    return report


def _execute(config: PipelineConfig, report: RunReport, outdir: Path) -> None:
    seeds = report.seeds
    modes = list(config.run.modes)
    sel_cfg = config.selection

    target = list(read_jsonl(config.paths.target))
    source = list(read_jsonl(config.paths.source, sentence_split=sel_cfg.sentence_split))
    if not target or not source:
        raise ValueError("target and source corpora must be non-empty")
    train, val, test = split_target(target, seeds["target-split"])
    if not train or not test:
        raise ValueError(f"target corpus of {len(target)} sequences is too small to split")
    budget_tokens = token_budget(config, source)
    report.data = {
        "target_sequences": len(target),
        "train": len(train),
        "validation": len(val),
        "test": len(test),
        "source_sequences": len(source),
        "source_tokens": sum(s.token_count for s in source),
        "token_budget": budget_tokens,
    }

    # every private mechanism is planned (and checked) before any of them runs
    plans: dict[str, BudgetPlan] = {}
    if "selective" in modes:
        plans["selective"] = plan_budget(config, len(train), selective=True)
    if any(m != "selective" for m in modes):
        plans["standard"] = plan_budget(config, len(train), selective=False)
    report.privacy = {name: plan.to_dict() for name, plan in plans.items()}
    report.privacy["cap"] = {"epsilon": config.budget.epsilon, "delta": config.budget.delta}
    report.write(outdir)

    by_id = {s.id: s for s in source}
    train_texts = [s.text for s in train]
    pretrain_sets: dict[str, list[str] | None] = {}
    random_ids = None

    if "selective" in modes or "random" in modes:
        rnd = random_baseline(source, budget_tokens, seeds["random-selection"])
        random_ids = rnd.selected_ids
        report.selection["random"] = rnd.summary()

    if "selective" in modes:
        plan = plans["selective"]
        hashing = hashing_config(config)
        train_set = build_train_set(
            train_texts, [(s.id, s.text) for s in source], seeds["classifier-negatives"], hashing
        )
        clf_cfg = dataclasses.replace(
            classifier_train_config(config), noise_multiplier=plan.classifier.noise_multiplier
        )
        result = train_dp(train_set, clf_cfg, hashing.bits, seeds["classifier-train"])
        feats, labels = train_set.examples()
        report.classifier = {
            "mechanism": plan.classifier.to_dict(),
            "train_f1": f1_score(result.model, feats, labels),
            "train_examples": len(train_set),
        }
        result.model.save(
            outdir / "classifier.bin",
            metadata={
                "bits": hashing.bits,
                "ngram_max": hashing.ngram_max,
                "l2_normalize": hashing.l2_normalize,
                "hidden": result.model.hidden,
                "sentence_split": sel_cfg.sentence_split,
            },
        )
        scored = score_corpus(result.model, source, hashing, sel_cfg.workers)
        chosen = select_top(scored, budget_tokens)
        write_text_atomic(outdir / "selected.jsonl", chosen.to_jsonl())
        report.selection["selective"] = chosen.summary()
        selected_texts = [by_id[i].text for i in chosen.selected_ids]
        pretrain_sets["selective"] = selected_texts
        report.diagnostics = diagnostic_report(
            train_texts,
            [s.text for s in source],
            selected_texts,
            k=sel_cfg.diagnostics_k,
            random_selected=[by_id[i].text for i in random_ids],
        )
    if "random" in modes:
        pretrain_sets["random"] = [by_id[i].text for i in random_ids]
    if "full-source" in modes:
        pretrain_sets["full-source"] = [s.text for s in source]
    if "no-pretrain" in modes:
        pretrain_sets["no-pretrain"] = None
    report.write(outdir)

    # shared language-model pieces; the vocabulary comes from public data only
    lm = config.lm
    vocab = toy_lm.Vocabulary.build((s.text for s in source), lm.min_count, lm.max_vocab)
    shape = toy_lm.LmShape(len(vocab), lm.dim, lm.window, lm.hidden)
    encode = functools.partial(toy_lm.encode_corpus, vocab=vocab, window=lm.window)
    train_w, val_w, test_w = encode(train_texts), encode([s.text for s in val]), encode([s.text for s in test])
    init = toy_lm.ToyLM.initialize(shape, seeds["lm-init"])
    schedule = toy_lm.PretrainSchedule(
        iterations=lm.pretrain_iterations,
        batch_size=lm.pretrain_batch_size,
        learning_rate=lm.pretrain_learning_rate,
        weight_decay=lm.pretrain_weight_decay,
    )
    report.data.update({"vocabulary": len(vocab), "lm_parameters": shape.size})

    for mode in modes:
        t0 = time.time()
        plan = plans["selective" if mode == "selective" else "standard"]
        texts = pretrain_sets[mode]
        model = init
        if texts is not None:
            model = toy_lm.pretrain(init, encode(texts), schedule, seeds["pretrain"])
        before = toy_lm.evaluate(model, test_w)
        tuned = toy_lm.finetune_dp(
            model,
            train_w,
            finetune_config(config, plan.finetune.noise_multiplier),
            seeds["finetune"],
            delta=plan.stage2.delta,
        )
        if tuned.mechanism != plan.finetune:
            raise RuntimeError(f"fine-tuning ran {tuned.mechanism}, planned {plan.finetune}")
        entry = {
            "pretrain_sequences": 0 if texts is None else len(texts),
            "pretrained_test": before.to_dict(),
            "test": toy_lm.evaluate(tuned.model, test_w).to_dict(),
        }
        if val_w:
            entry["validation"] = toy_lm.evaluate(tuned.model, val_w).to_dict()
        report.evaluation[mode] = entry
        report.timings[mode] = round(time.time() - t0, 3)
        log.info("%s: test perplexity %.3f", mode, entry["test"]["perplexity"])
        report.write(outdir)
