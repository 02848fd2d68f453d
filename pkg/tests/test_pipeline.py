import json

import pytest

from selectdp import cli, pipeline
from selectdp.accounting import CompositionInput, advanced_compose, prv_epsilon
from selectdp.corpus import write_jsonl
from selectdp.synthetic import MixtureSpec, make_mixture


@pytest.fixture(scope="module")
def corpora(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    mix = make_mixture(MixtureSpec(n_target=300, n_source=1800, sequence_length=16), seed=0)
    write_jsonl(root / "target.jsonl", mix.target)
    write_jsonl(root / "source.jsonl", mix.source)
    return root


def small_config(corpora, output, seed=0, modes=("selective", "random", "no-pretrain")):
    config = cli.benchmark_config(corpora / "target.jsonl", corpora / "source.jsonl", output, seed)
    config.classifier.bits = 12
    config.lm = pipeline.LmConfig(dim=8, window=3, hidden=16, pretrain_iterations=30, finetune_epochs=1.0)
    config.run.modes = list(modes)
    return config


# config -------------------------------------------------------------------


def test_defaults_are_consistent(corpora, tmp_path):
    assert pipeline.validate(small_config(corpora, tmp_path / "out")) == []


def test_zero_slack_is_an_error(corpora, tmp_path):
    config = small_config(corpora, tmp_path / "out")
    config.budget.delta_slack = 0.0
    findings = pipeline.validate(config)
    assert pipeline.has_errors(findings)
    assert any(f.key == "budget.delta_slack" for f in findings)


def test_delta_overspend_is_an_error(corpora, tmp_path):
    config = small_config(corpora, tmp_path / "out")
    config.budget.delta2 = 1e-7
    assert any(f.key == "budget" and f.level == "error" for f in pipeline.validate(config))


@pytest.mark.parametrize(
    "section, key, value",
    [
        ("budget", "epsilon", 0.0),
        ("budget", "split", 1.0),
        ("paths", "source", "/nonexistent/source.jsonl"),
        ("run", "modes", ["selective", "bogus"]),
        ("run", "modes", ["random", "random"]),
        ("lm", "dim", 0),
    ],
)
def test_invalid_settings(corpora, tmp_path, section, key, value):
    config = small_config(corpora, tmp_path / "out")
    setattr(getattr(config, section), key, value)
    assert pipeline.has_errors(pipeline.validate(config))


def test_ini_roundtrip(corpora, tmp_path):
    config = small_config(corpora, tmp_path / "out")
    config.selection.token_budget = 1234
    path = tmp_path / "c.ini"
    path.write_text(config.to_ini())
    back = pipeline.PipelineConfig.from_ini(path)
    assert back == config
    assert back.config_hash() == config.config_hash()


def test_ini_relative_paths_and_unknown_keys(tmp_path):
    path = tmp_path / "sub" / "c.ini"
    path.parent.mkdir()
    path.write_text("[paths]\ntarget = t.jsonl\n[budget]\nepsilon = 3  # inline note\nbogus = 1\n[extra]\nx = 1\n")
    config = pipeline.PipelineConfig.from_ini(path)
    assert config.paths.target == str(path.parent.resolve() / "t.jsonl")
    assert config.budget.epsilon == 3.0
    assert set(config.unknown_keys) == {"budget.bogus", "extra"}
    assert any(f.level == "warning" and f.key == "extra" for f in pipeline.validate(config))


def test_ini_bad_value(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[budget]\nepsilon = lots\n")
    with pytest.raises(pipeline.ConfigError):
        pipeline.PipelineConfig.from_ini(path)


def test_sub_seeds_distinct_and_stable():
    seeds = [pipeline.sub_seed(7, label) for label in pipeline.SEED_LABELS]
    assert len(set(seeds)) == len(seeds)
    assert seeds == [pipeline.sub_seed(7, label) for label in pipeline.SEED_LABELS]
    assert pipeline.sub_seed(8, "pretrain") != pipeline.sub_seed(7, "pretrain")
    assert all(0 <= s < 2**63 for s in seeds)


# budget planning ------------------------------------------------------------


def test_plan_total_is_the_composition(corpora, tmp_path):
    config = small_config(corpora, tmp_path / "out")
    for selective in (True, False):
        plan = pipeline.plan_budget(config, 240, selective)
        comp = CompositionInput(plan.stage1, plan.stage2, config.budget.delta_slack)
        assert plan.total == advanced_compose(comp)
        assert plan.total.epsilon <= config.budget.epsilon
        assert plan.total.delta <= config.budget.delta
        assert plan.stage2.epsilon == prv_epsilon(plan.finetune, plan.stage2.delta)
    sel = pipeline.plan_budget(config, 240, True)
    assert sel.stage1.epsilon == prv_epsilon(sel.classifier, config.budget.delta1)
    assert sel.stage1.epsilon <= config.budget.split * config.budget.epsilon


def test_overspend_fails_before_training(corpora, tmp_path):
    out = tmp_path / "out"
    config = small_config(corpora, out)
    config.lm.noise_multiplier = 0.3
    with pytest.raises(pipeline.BudgetExceededError):
        pipeline.run(config)
    report = json.loads((out / pipeline.REPORT_NAME).read_text())
    assert report["status"] == "failed"
    assert "BudgetExceededError" in report["error"]
    assert report["evaluation"] == {}
    assert not (out / "classifier.bin").exists()
    assert not (out / pipeline.LOCK_NAME).exists()


def test_lock_conflict(corpora, tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / pipeline.LOCK_NAME).write_text("123\n")
    config = small_config(corpora, out)
    assert any(f.level == "warning" for f in pipeline.validate(config))
    with pytest.raises(pipeline.OutputLockedError):
        pipeline.run(config)
    assert (out / pipeline.LOCK_NAME).read_text() == "123\n"


def test_invalid_config_does_not_run(corpora, tmp_path):
    config = small_config(corpora, tmp_path / "out")
    config.budget.delta_slack = 0.0
    with pytest.raises(pipeline.ConfigError):
        pipeline.run(config)
    assert not (tmp_path / "out").exists()


# end to end -------------------------------------------------------------------


@pytest.fixture(scope="module")
def two_runs(corpora, tmp_path_factory):
    outs = [tmp_path_factory.mktemp(f"run{i}") for i in range(2)]
    reports = [pipeline.run(small_config(corpora, out)) for out in outs]
    return outs, reports


def test_end_to_end_report(two_runs):
    outs, (report, _) = two_runs
    assert report.status == "ok"
    assert set(report.evaluation) == {"selective", "random", "no-pretrain"}
    on_disk = json.loads((outs[0] / pipeline.REPORT_NAME).read_text())
    assert on_disk["status"] == "ok"
    sel = on_disk["privacy"]["selective"]
    comp = advanced_compose(
        CompositionInput(
            pipeline.PrivacyBudget(**sel["stage1"]), pipeline.PrivacyBudget(**sel["stage2"]), sel["delta_slack"]
        )
    )
    assert sel["total"] == comp.to_dict()
    for name in ("selective", "standard"):
        assert on_disk["privacy"][name]["total"]["epsilon"] <= on_disk["privacy"]["cap"]["epsilon"]
    assert (outs[0] / "classifier.bin").exists()
    assert (outs[0] / "selected.jsonl").exists()
    assert not (outs[0] / pipeline.LOCK_NAME).exists()
    assert set(on_disk["diagnostics"]["overlap"]) == {"target_source", "target_selected", "target_random"}


def test_end_to_end_deterministic(two_runs):
    outs, (a, b) = two_runs
    for part in ("seeds", "data", "privacy", "classifier", "selection", "diagnostics", "evaluation"):
        assert getattr(a, part) == getattr(b, part), part
    assert (outs[0] / "selected.jsonl").read_bytes() == (outs[1] / "selected.jsonl").read_bytes()
    assert (outs[0] / "classifier.bin").read_bytes() == (outs[1] / "classifier.bin").read_bytes()


# CLI ------------------------------------------------------------------------


def test_cli_account(capsys):
    assert cli.main(["account", "--sigma", "1.0", "--q", "0.03", "--steps", "100", "--delta", "1e-6"]) == 0
    eps = float(capsys.readouterr().out)
    assert eps > 0
    assert cli.main(["account", "--epsilon", f"{eps}", "--q", "0.03", "--steps", "100", "--delta", "1e-6"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(1.0, rel=1e-3)
    assert cli.main(["account", "--rdp", "--sigma", "1.0", "--q", "0.03", "--steps", "100", "--delta", "1e-6"]) == 0
    assert float(capsys.readouterr().out) >= eps


def test_cli_validate_exit_codes(corpora, tmp_path, capsys):
    good = tmp_path / "good.ini"
    good.write_text(small_config(corpora, tmp_path / "out").to_ini())
    assert cli.main(["validate", str(good)]) == 0
    assert "ok" in capsys.readouterr().out
    config = small_config(corpora, tmp_path / "out")
    config.budget.delta_slack = 0.0
    bad = tmp_path / "bad.ini"
    bad.write_text(config.to_ini())
    assert cli.main(["validate", str(bad)]) == 1
    assert "delta_slack" in capsys.readouterr().out


def test_cli_run_overspend_exit_code(corpora, tmp_path, capsys):
    config = small_config(corpora, tmp_path / "out")
    config.lm.noise_multiplier = 0.3
    path = tmp_path / "c.ini"
    path.write_text(config.to_ini())
    assert cli.main(["run", str(path)]) == 2
    assert "exceeds" in capsys.readouterr().err


def test_cli_synth_score_select(two_runs, tmp_path, capsys):
    outs, _ = two_runs
    assert cli.main(["synth", "--output", str(tmp_path / "syn"), "--n-target", "50", "--n-source", "300"]) == 0
    for name in ("target.jsonl", "source.jsonl", "target_like_ids.jsonl", "config.ini"):
        assert (tmp_path / "syn" / name).exists()
    assert pipeline.PipelineConfig.from_ini(tmp_path / "syn" / "config.ini").run.modes == [
        "selective",
        "random",
        "no-pretrain",
    ]
    scores = tmp_path / "scores.jsonl"
    args = ["score", "--model", str(outs[0] / "classifier.bin"), "--input", str(tmp_path / "syn" / "source.jsonl")]
    assert cli.main(args + ["--output", str(scores)]) == 0
    assert cli.main(args + ["--output", str(tmp_path / "again.jsonl"), "--workers", "3"]) == 0
    assert scores.read_bytes() == (tmp_path / "again.jsonl").read_bytes()
    sel = tmp_path / "sel.jsonl"
    capsys.readouterr()
    assert cli.main(["select", "--scores", str(scores), "--budget", "500", "--output", str(sel)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["total_tokens"] >= 500
    assert len(sel.read_text().splitlines()) == summary["selected"]
