"""Command-line entry point: ``selectdp <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .accounting import MechanismSpec, PrivacyBudget, calibrate_noise, prv_epsilon, rdp_epsilon
from .classifier import ClassifierModel, HashingConfig
from .corpus import read_jsonl, write_jsonl, write_text_atomic
from .selection import ScoredSequence, score_corpus, select_top
from .synthetic import MixtureSpec, make_mixture


def _load_config(path) -> pipeline.PipelineConfig:
    try:
        return pipeline.PipelineConfig.from_ini(path)
    except FileNotFoundError:
        raise SystemExit(f"error: config file not found: {path}")
    except pipeline.ConfigError as exc:
        raise SystemExit(f"error: {exc}")


def _apply_overrides(config: pipeline.PipelineConfig, args) -> None:
    if getattr(args, "seed", None) is not None:
        config.run.seed = args.seed
    if getattr(args, "modes", None):
        config.run.modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    if getattr(args, "output", None):
        config.paths.output = str(Path(args.output).resolve())


def cmd_validate(args) -> int:
    config = _load_config(args.config)
    _apply_overrides(config, args)
    findings = pipeline.validate(config)
    for f in findings:
        print(f)
    if not findings:
        print("ok")
    return 1 if pipeline.has_errors(findings) else 0


def cmd_run(args) -> int:
    config = _load_config(args.config)
    _apply_overrides(config, args)
    findings = pipeline.validate(config)
    for f in findings:
        print(f, file=sys.stderr)
    if pipeline.has_errors(findings):
        return 1
    try:
        report = pipeline.run(config)
    except (pipeline.BudgetExceededError, pipeline.OutputLockedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for mode, entry in report.evaluation.items():
        test = entry["test"]
        print(f"{mode:12s} perplexity {test['perplexity']:.3f}  top-1 {test['top1_accuracy']:.4f}")
    for name, plan in report.privacy.items():
        if name == "cap":
            continue
        total, joint = plan["total"], plan["joint_prv"]
        print(
            f"{name:12s} budget ({total['epsilon']:.4f}, {total['delta']:.3g}) "
            f"[joint PLD {joint['epsilon']:.4f}]"
        )
    print(f"report: {Path(config.paths.output) / pipeline.REPORT_NAME}")
    return 0


def _classifier_hashing(model_path: Path, args) -> tuple[HashingConfig, bool]:
    side = model_path.with_suffix(model_path.suffix + ".json")
    meta = json.loads(side.read_text(encoding="utf-8")) if side.exists() else {}
    bits = meta.get("bits", args.bits)
    if bits is None:
        raise SystemExit("error: hashing bits unknown; pass --bits or keep the model's .json sidecar")
    hashing = HashingConfig(
        bits=bits,
        ngram_max=meta.get("ngram_max", args.ngram_max),
        l2_normalize=meta.get("l2_normalize", False),
    )
    split = meta.get("sentence_split", False) if args.sentence_split is None else args.sentence_split
    return hashing, split


def cmd_score(args) -> int:
    model_path = Path(args.model)
    model = ClassifierModel.load(model_path)
    hashing, split = _classifier_hashing(model_path, args)
    if hashing.bits != model.bits:
        raise SystemExit(f"error: model has {model.bits} hash bits, hashing config says {hashing.bits}")
    sequences = list(read_jsonl(args.input, sentence_split=split))
    scored = score_corpus(model, sequences, hashing, args.workers)
    write_jsonl(
        args.output,
        ({"id": s.sequence_id, "score": s.score, "token_count": s.token_count} for s in scored),
    )
    print(f"scored {len(scored)} sequences -> {args.output}")
    return 0


def _read_scores(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                yield ScoredSequence(int(rec["id"]), float(rec["score"]), int(rec["token_count"]))
            except KeyError as exc:
                raise SystemExit(f"error: {path}:{lineno}: missing field {exc}")


def cmd_select(args) -> int:
    result = select_top(_read_scores(args.scores), args.budget)
    write_text_atomic(args.output, result.to_jsonl())
    print(json.dumps(result.summary(), sort_keys=True))
    return 0


def cmd_account(args) -> int:
    if args.epsilon is not None:
        sigma = calibrate_noise(PrivacyBudget(args.epsilon, args.delta), args.q, args.steps)
        print(f"{sigma:.6f}")
        return 0
    if args.sigma is None:
        raise SystemExit("error: pass --sigma (to get epsilon) or --epsilon (to get sigma)")
    spec = MechanismSpec(args.sigma, args.q, args.steps)
    eps = rdp_epsilon(spec, args.delta) if args.rdp else prv_epsilon(spec, args.delta)
    print(f"{eps:.6f}")
    return 0


def cmd_synth(args) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    spec = MixtureSpec(n_target=args.n_target, n_source=args.n_source, target_fraction=args.target_fraction)
    mix = make_mixture(spec, args.seed)
    write_jsonl(out / "target.jsonl", mix.target)
    write_jsonl(out / "source.jsonl", mix.source)
    write_jsonl(out / "target_like_ids.jsonl", ({"id": i} for i in sorted(mix.target_like_ids)))
    config = benchmark_config("target.jsonl", "source.jsonl", "run", seed=args.seed)
    write_text_atomic(out / "config.ini", config.to_ini())
    print(f"wrote {len(mix.target)} target and {len(mix.source)} source sequences to {out}")
    return 0


def benchmark_config(target, source, output, seed: int = 0) -> pipeline.PipelineConfig:
    """Desk-scale settings used for the synthetic mixture benchmark."""
    config = pipeline.PipelineConfig()
    config.paths = pipeline.PathsConfig(str(target), str(source), str(output))
    config.classifier.bits = 16
    config.lm = pipeline.LmConfig(
        dim=16,
        window=4,
        hidden=64,
        pretrain_iterations=400,
        finetune_epochs=10.0,
        finetune_learning_rate=2e-3,
    )
    config.run = pipeline.RunConfig(seed=seed, modes=["selective", "random", "no-pretrain"])
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selectdp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a config file without running anything")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run the configured modes and write report.json")
    p.add_argument("config")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--modes", help="comma-separated override of run.modes")
    p.add_argument("--output", help="override paths.output")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("score", help="score a JSONL corpus with a trained classifier")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--bits", type=int, help="hash bits when the model has no sidecar")
    p.add_argument("--ngram-max", type=int, default=2)
    p.add_argument("--sentence-split", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("select", help="keep the top-scoring sequences up to a token budget")
    p.add_argument("--scores", required=True, help="JSONL with id, score, token_count")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("account", help="epsilon of a subsampled Gaussian mechanism (or sigma for a target)")
    p.add_argument("--sigma", type=float)
    p.add_argument("--epsilon", type=float, help="calibrate sigma for this epsilon instead")
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--rdp", action="store_true", help="use the RDP accountant")
    p.set_defaults(func=cmd_account)

    p = sub.add_parser("synth", help="write a synthetic target/source mixture and a config")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-target", type=int, default=1000)
    p.add_argument("--n-source", type=int, default=6000)
    p.add_argument("--target-fraction", type=float, default=0.1)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
