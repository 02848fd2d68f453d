"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""

import copy
import itertools
import math
import time

import numpy as np
import pytest

from acceptance_log import record
from oracles import central_difference, gaussian_epsilon, sort_prefix
from selectdp import cli, pipeline
from selectdp import dp_optimizer as dpo
from selectdp.accounting import (
    CompositionInput,
    MechanismSpec,
    PrivacyBudget,
    advanced_compose,
    calibrate_noise,
    calibrate_noise_joint,
    compose_pld,
    epsilon_at_delta,
    pld_for_gaussian,
    prv_epsilon,
    rdp_epsilon,
)
from selectdp.classifier import (
    ClassifierModel,
    ClassifierTrainConfig,
    HashingConfig,
    build_train_set,
    classifier_mechanism,
    featurize,
    train_dp,
)
from selectdp.corpus import make_sequence, write_jsonl
from selectdp.diagnostics import overlap_count
from selectdp.selection import ScoredSequence, random_baseline, score_corpus, select_top
from selectdp.synthetic import MixtureSpec, make_mixture
from selectdp.toy_lm import (
    FinetuneConfig,
    LmShape,
    ToyLM,
    batch_loss_and_grad,
    finetune_dp,
    finetune_mechanism,
    make_windows,
    sequence_weights,
)


def test_criterion_01_gaussian_oracle():
    start = time.time()
    worst = 0.0
    for sigma, delta in itertools.product([0.5, 1.0, 2.0, 4.0], [1e-5, 1e-7]):
        ours = prv_epsilon(MechanismSpec(sigma, 1.0, 1), delta)
        exact = gaussian_epsilon(delta, sigma)
        worst = max(worst, abs(ours - exact) / exact)
    elapsed = time.time() - start
    ok = worst < 0.01 and elapsed < 10
    record(1, ok, f"max relative error {worst:.2e} (< 1e-2), {elapsed:.1f}s (< 10s)")
    assert ok


def test_criterion_02_noise_multipliers():
    start = time.time()
    standard = calibrate_noise(PrivacyBudget(7.3, 1e-7), 0.03, 1000)
    # selection stage: 3 epochs over 6N examples at q = 0.005, paid from split * epsilon
    cap = pipeline.BudgetConfig()
    _, q1, steps1 = classifier_mechanism(1000, 6000, ClassifierTrainConfig())
    sigma1 = calibrate_noise(PrivacyBudget(cap.split * cap.epsilon, cap.delta1), q1, steps1)
    selective = calibrate_noise_joint(
        PrivacyBudget(cap.epsilon, cap.delta), [MechanismSpec(sigma1, q1, steps1)], 0.03, 1000
    )
    elapsed = time.time() - start
    ok = 0.95 <= standard <= 1.05 and abs(selective - 1.03) <= 0.05 and elapsed < 60
    record(
        2,
        ok,
        f"standard sigma {standard:.4f} in [0.95, 1.05], selective sigma {selective:.4f} "
        f"(1.03 +/- 0.05; stage-1 sigma {sigma1:.4f} at q={q1}, T={steps1}), {elapsed:.1f}s (< 60s)",
    )
    assert ok


def test_criterion_03_prv_below_rdp():
    grid = itertools.product([1.0, 1.5, 2.0, 4.0], [0.001, 0.01, 0.03, 0.06], [1, 30, 300, 1000], [1e-5, 1e-7])
    violations = []
    count = 0
    for sigma, q, steps, delta in grid:
        spec = MechanismSpec(sigma, q, steps)
        prv, rdp = prv_epsilon(spec, delta), rdp_epsilon(spec, delta)
        count += 1
        if not prv <= rdp:
            violations.append((sigma, q, steps, delta, prv, rdp))
    ok = count >= 100 and not violations
    record(3, ok, f"{count} (sigma, q, T, delta) tuples, {len(violations)} violations of PRV <= RDP")
    assert ok, violations[:5]


def test_criterion_04_composition_identity():
    worst = 0.0
    sigma = 4.0
    for k in (2, 4, 16):
        composed = epsilon_at_delta(compose_pld(pld_for_gaussian(sigma), k), 1e-5)
        single = epsilon_at_delta(pld_for_gaussian(sigma / math.sqrt(k)), 1e-5)
        worst = max(worst, abs(composed - single) / single)
    ok = worst < 0.02
    record(4, ok, f"k in {{2, 4, 16}}: max relative gap {worst:.2e} (< 2e-2)")
    assert ok


def _vanilla_adam(params, grads_fn, steps, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    for t in range(1, steps + 1):
        g = grads_fn(params, t - 1)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        params = params - lr * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)
    return params


def test_criterion_05_disabled_dp_equals_adam():
    shape = LmShape(vocab=20, dim=4, window=3, hidden=8)
    rng = np.random.default_rng(0)
    corpus = [make_windows(rng.integers(2, 20, rng.integers(3, 12)), 3) for _ in range(100)]
    init = ToyLM.initialize(shape, seed=1)
    batch, q, _ = finetune_mechanism(len(corpus), FinetuneConfig())
    # enough epochs for at least 200 steps, then stop at 200
    cfg = FinetuneConfig(epochs=10, clip_norm=1e9, noise_multiplier=0.0, learning_rate=1e-3)
    dp = finetune_dp(init, corpus, cfg, seed=7, max_steps=200).model

    sampler = np.random.default_rng([7, 2])
    batches = [dpo.poisson_batch(len(corpus), q, sampler) for _ in range(200)]

    def grads(params, step):
        picked = [corpus[i] for i in batches[step].tolist()]
        if not picked:
            return np.zeros_like(params)
        model = ToyLM(shape, params)
        return batch_loss_and_grad(model, picked, sequence_weights(picked, batch))[1]

    reference = _vanilla_adam(init.params.copy(), grads, 200, 1e-3)
    rel = np.max(np.abs(dp.params - reference)) / np.max(np.abs(reference))
    moved = np.max(np.abs(reference - init.params))
    ok = rel <= 1e-9 and moved > 1e-3
    record(5, ok, f"200 steps, sigma=0, C=1e9: relative parameter gap {rel:.2e} (<= 1e-9)")
    assert ok


def test_criterion_06_clipping():
    rng = np.random.default_rng(0)
    failures = 0
    for _ in range(10_000):
        b, d = rng.integers(1, 9), rng.integers(1, 17)
        g = rng.normal(size=(b, d)) * 10.0 ** rng.uniform(-4, 4, size=(b, 1))
        g[rng.random(b) < 0.1] = 0.0
        clip = 10.0 ** rng.uniform(-2, 2)
        out = dpo.clip_per_example(dpo.GradientBatch(g), clip).per_example
        norms_in = np.linalg.norm(g, axis=1)
        norms_out = np.linalg.norm(out, axis=1)
        bad = np.any(norms_out > clip * (1 + 1e-12)) or not np.all(np.isfinite(out))
        zero = norms_in == 0
        bad |= bool(np.any(out[zero] != 0))
        big = norms_in > clip
        # direction preserved: out is a positive multiple of g
        cos = np.sum(out[big] * g[big], axis=1) / (norms_out[big] * norms_in[big])
        bad |= bool(np.any(cos < 1 - 1e-12))
        bad |= not np.array_equal(out[~big], g[~big])
        failures += bool(bad)
    ok = failures == 0
    record(6, ok, f"10000 random batches, {failures} failures (norm <= C, direction kept, zero-safe)")
    assert ok


def test_criterion_07_gradient_checks():
    rng = np.random.default_rng(0)
    worst = 0.0
    shape = LmShape(vocab=10, dim=3, window=3, hidden=4)
    for _ in range(20):
        model = ToyLM.initialize(shape, seed=int(rng.integers(1 << 30)))
        model.params += rng.normal(0, 0.3, model.params.size)
        corpus = [make_windows(rng.integers(0, 10, rng.integers(2, 8)), 3) for _ in range(3)]
        grad = batch_loss_and_grad(model, corpus)[1]
        idx = rng.choice(np.flatnonzero(np.abs(grad) > 1e-6), 30, replace=False)
        num = central_difference(lambda: batch_loss_and_grad(model, corpus)[0], model.params, idx)
        worst = max(worst, float(np.max(np.abs(grad[idx] - num) / np.abs(num))))
    lm_worst = worst
    worst = 0.0
    words = [f"v{i}" for i in range(30)]
    for k in range(20):
        hidden = 0 if k % 2 == 0 else 3
        model = ClassifierModel.initialize(6, hidden, seed=k)
        model.params = rng.normal(0, 0.5, model.params.size)
        feats = [featurize(" ".join(rng.choice(words, rng.integers(1, 8))), HashingConfig(bits=6)) for _ in range(5)]
        labels = rng.integers(0, 2, 5).astype(float)
        grad = model.gradient(feats, labels)
        idx = np.flatnonzero(np.abs(grad) > 1e-6)
        idx = idx if idx.size <= 40 else rng.choice(idx, 40, replace=False)
        num = central_difference(lambda: model.loss(feats, labels), model.params, idx)
        worst = max(worst, float(np.max(np.abs(grad[idx] - num) / np.abs(num))))
    ok = lm_worst < 1e-4 and worst < 1e-4
    record(7, ok, f"20 toy-LM + 20 classifier instances, max relative error {lm_worst:.1e} / {worst:.1e} (< 1e-4)")
    assert ok


def _oracle_jsonl(items, budget):
    import json

    chosen = sort_prefix(items, budget)
    return "".join(json.dumps({"id": s.sequence_id, "score": s.score}, sort_keys=True) + "\n" for s in chosen)


def test_criterion_08_selection_oracle():
    rng = np.random.default_rng(0)
    mismatches = 0
    for trial in range(100):
        n = int(rng.integers(1, 10_001))
        scores = rng.integers(0, 20, n) / 19 if trial % 3 == 0 else rng.random(n)
        ids = rng.choice(1 << 48, n, replace=False)
        tokens = rng.integers(1, 500, n)
        items = [ScoredSequence(int(i), float(s), int(t)) for i, s, t in zip(ids, scores, tokens)]
        budget = int(max(1, rng.uniform(0.001, 1.1) * tokens.sum()))
        mismatches += select_top(iter(items), budget).to_jsonl() != _oracle_jsonl(items, budget)
    ok = mismatches == 0
    record(8, ok, f"100 random corpora (<= 1e4 sequences), {mismatches} non-identical outputs")
    assert ok


@pytest.fixture(scope="module")
def benchmark_runs(tmp_path_factory):
    start = time.time()
    reports = []
    for seed in range(10):
        root = tmp_path_factory.mktemp(f"bench{seed}")
        mix = make_mixture(MixtureSpec(), seed)
        write_jsonl(root / "target.jsonl", mix.target)
        write_jsonl(root / "source.jsonl", mix.source)
        config = cli.benchmark_config(root / "target.jsonl", root / "source.jsonl", root / "run", seed)
        reports.append((config, pipeline.run(config)))
    return reports, time.time() - start


def test_criterion_09_framework_benefit(benchmark_runs):
    reports, elapsed = benchmark_runs
    ppl = [{m: r.evaluation[m]["test"]["perplexity"] for m in r.evaluation} for _, r in reports]
    sel_wins = sum(p["selective"] < p["random"] for p in ppl)
    both_beat = sum(p["selective"] < p["no-pretrain"] and p["random"] < p["no-pretrain"] for p in ppl)
    ok = sel_wins >= 9 and both_beat == 10 and elapsed < 15 * 60
    med = {m: float(np.median([p[m] for p in ppl])) for m in ppl[0]}
    record(
        9,
        ok,
        f"selective < random in {sel_wins}/10 (>= 9), both < no-pretrain in {both_beat}/10 (= 10); "
        f"median perplexity selective {med['selective']:.2f}, random {med['random']:.2f}, "
        f"no-pretrain {med['no-pretrain']:.2f}; {elapsed / 60:.1f} min (< 15)",
    )
    assert ok


def test_criterion_10_diagnostics_direction():
    spec_budget = pipeline.BudgetConfig()
    hashing = HashingConfig(bits=14)
    mixture = MixtureSpec(n_target=200, n_source=1200, target_fraction=0.1)
    _, q, steps = classifier_mechanism(mixture.n_target, 6 * mixture.n_target, ClassifierTrainConfig())
    sigma = calibrate_noise(PrivacyBudget(spec_budget.split * spec_budget.epsilon, spec_budget.delta1), q, steps)
    cfg = ClassifierTrainConfig(noise_multiplier=sigma)
    wins = 0
    for seed in range(100):
        mix = make_mixture(mixture, seed)
        source = [make_sequence(r["id"], r["text"]) for r in mix.source]
        target = [r["text"] for r in mix.target]
        train_set = build_train_set(target, [(s.id, s.text) for s in source], seed, hashing)
        model = train_dp(train_set, cfg, hashing.bits, seed).model
        budget = sum(s.token_count for s in source) // 10
        by_id = {s.id: s.text for s in source}
        top = select_top(score_corpus(model, source, hashing), budget)
        rnd = random_baseline(source, budget, seed + 10_000)
        sel_overlap, _ = overlap_count(target, [by_id[i] for i in top.selected_ids], 100)
        rnd_overlap, _ = overlap_count(target, [by_id[i] for i in rnd.selected_ids], 100)
        wins += sel_overlap >= rnd_overlap
    ok = wins >= 95
    record(10, ok, f"overlap(target, selected) >= overlap(target, random) in {wins}/100 trials (>= 95), k=100")
    assert ok


def test_criterion_11_bookkeeping(benchmark_runs, tmp_path):
    reports, _ = benchmark_runs
    exact = 0
    checked = 0
    for config, report in reports:
        for name in ("selective", "standard"):
            plan = report.privacy[name]
            comp = advanced_compose(
                CompositionInput(
                    PrivacyBudget(**plan["stage1"]), PrivacyBudget(**plan["stage2"]), plan["delta_slack"]
                )
            )
            checked += 1
            exact += plan["total"] == comp.to_dict()
    config = reports[0][0]
    rejected = []
    for d1, d2 in [(5e-8, 5e-8), (6e-8, 5e-8), (1e-7, 1e-8)]:
        bad = copy.deepcopy(config)
        bad.budget.delta1, bad.budget.delta2 = d1, d2
        rejected.append(any(f.level == "error" and f.key == "budget" for f in pipeline.validate(bad)))
    consistent = not pipeline.has_errors(pipeline.validate(config))
    ok = exact == checked and all(rejected) and consistent
    record(
        11,
        ok,
        f"report total == advanced_compose(stages) in {exact}/{checked} plans; "
        f"validate rejects delta1 + delta2 >= delta in {sum(rejected)}/{len(rejected)} configs",
    )
    assert ok
