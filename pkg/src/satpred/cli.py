"""Command-line surface: corpus generation, training, evaluation, inference,
gradient checking and offline A/B comparison.

Machine-readable output goes to stdout, diagnostics to stderr. Exit codes:
0 success, 1 contract violation / undefined metric, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import nn
from .checkpoint import CheckpointError, load_checkpoint, model_card, save_checkpoint
from .configfile import (
    ConfigFileError,
    generator_config,
    model_config,
    parse_config_file,
    train_settings,
)
from .corpus import ConfigError, GeneratorConfig, write_corpus
from .data import example_from_line, read_examples
from .metrics import UndefinedMetricError, ab_compare_cus, evaluate_cla, slice_report
from .model import AbmConfig, featurize_batch, forward_batch, init_parameters, main_loss
from .serving import infer_monolithic, infer_staged
from .training import TrainConfig, score_examples, train
from . import aux_tasks

GRADCHECK_TOLERANCE = 1e-4


def _load_corpus_meta(corpus_dir: str) -> dict:
    with open(os.path.join(corpus_dir, "meta.json"), "r", encoding="utf-8") as fh:
        return json.load(fh)


def _load_split(corpus_dir: str, split: str):
    return read_examples(os.path.join(corpus_dir, f"{split}.jsonl"))


def cmd_gen(args) -> int:
    kv = parse_config_file(args.config)
    cfg = generator_config(kv)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    splits = write_corpus(cfg, args.out)
    summary = {split: len(exs) for split, exs in splits.items()}
    print(json.dumps({"out": args.out, "examples": summary}, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    kv = parse_config_file(args.config)
    meta = _load_corpus_meta(args.corpus)
    abm = model_config(kv, meta)
    settings = train_settings(kv)
    if args.ablate:
        settings["ablation"] = args.ablate
    tcfg = TrainConfig(abm=abm, **settings)
    train_examples = _load_split(args.corpus, "train")
    valid_examples = _load_split(args.corpus, "valid")
    result = train(tcfg, train_examples, valid_examples,
                   history_path=args.out + ".history.jsonl")
    save_checkpoint(result.params, abm, args.out)
    with open(args.out + ".card.txt", "w", encoding="utf-8") as fh:
        fh.write(model_card(result.params, abm))
    print(json.dumps({
        "checkpoint": args.out,
        "ablation": tcfg.ablation,
        "steps": len(result.history),
        "final_loss": result.history[-1].loss if result.history else None,
        "best_valid_auc": result.best_valid_auc,
        "aborted": result.aborted,
    }, sort_keys=True))
    return 1 if result.aborted else 0


def cmd_eval(args) -> int:
    params, abm = load_checkpoint(args.ckpt)
    valid_examples = _load_split(args.corpus, "valid")
    test_examples = _load_split(args.corpus, "test")
    valid_scores = score_examples(params, abm, valid_examples)
    _, theta = evaluate_cla(valid_scores, [ex.label for ex in valid_examples], args.floor)
    test_scores = score_examples(params, abm, test_examples)
    report = slice_report(
        test_scores, test_examples, theta, args.floor,
        model_id=os.path.basename(args.ckpt), corpus_id=os.path.basename(args.corpus),
    )
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    print(report.to_table())
    return 0


def cmd_infer(args) -> int:
    params, abm = load_checkpoint(args.ckpt)
    model_id = os.path.basename(args.ckpt)
    infer = infer_staged if args.staged else infer_monolithic
    for i, line in enumerate(sys.stdin):
        line = line.strip()
        if not line:
            continue
        example = example_from_line(line)
        decision = infer(example, params, abm, args.threshold)
        request_id = f"{example.session_id}:{i}"
        print(f"{request_id}\t{decision.p:.9f}\t{decision.kind}"
              f"\t{args.threshold}\t{model_id}")
    return 0


def cmd_gradcheck(args) -> int:
    kv = parse_config_file(args.config)
    abm = model_config(kv)
    gen = generator_config(kv)
    gen = dataclasses.replace(
        gen,
        vocab_size=abm.vocab_size, num_domains=abm.num_domains,
        num_intents=abm.num_intents, num_slots=abm.num_slots,
        max_slots=abm.max_slots, k_best=abm.k_best,
        max_query_len=abm.max_query_len, max_title_len=abm.max_title_len,
        sessions_train=2, sessions_valid=1, sessions_test=1,
        window_turns=abm.turns, seed=args.seed,
    )
    from .corpus import generate_split

    examples = generate_split(gen, "train")[: args.batch]
    params = init_parameters(abm, seed=args.seed, dtype=np.float64)
    feats = featurize_batch(examples, abm)
    weights = aux_tasks.LossWeights(1e-2, 1e-1)

    def loss_fn():
        rng = np.random.default_rng([args.seed, 1])
        trace = forward_batch(feats, params, abm, training=True, rng=rng)
        l_main = main_loss(trace.p, feats.labels)
        views = aux_tasks.contrastive_views(
            examples, params, abm,
            np.random.default_rng([args.seed, 2]),
            np.random.default_rng([args.seed, 3]),
        )
        l_self = aux_tasks.simcse_loss(views)
        logits = aux_tasks.domain_intent_logits(trace.sep_current, params)
        l_cl = aux_tasks.domain_intent_loss(logits, feats.domain_intent)
        return aux_tasks.total_loss(l_main, l_self, l_cl, weights)

    max_rel = nn.grad_check(loss_fn, params, num_coords=args.coords,
                            rng=np.random.default_rng(args.seed))
    print(json.dumps({"max_rel_err": max_rel, "tolerance": GRADCHECK_TOLERANCE},
                     sort_keys=True))
    return 0 if max_rel < GRADCHECK_TOLERANCE else 1


def cmd_ab(args) -> int:
    params_a, abm_a = load_checkpoint(args.ckpt_a)
    params_b, abm_b = load_checkpoint(args.ckpt_b)
    valid_examples = _load_split(args.corpus, "valid")
    test_examples = _load_split(args.corpus, "test")
    valid_labels = [ex.label for ex in valid_examples]

    def theta_for(params, abm):
        scores = score_examples(params, abm, valid_examples)
        _, theta = evaluate_cla(scores, valid_labels, args.floor)
        return theta

    theta_a = theta_for(params_a, abm_a)
    theta_b = theta_for(params_b, abm_b)
    scores_a = score_examples(params_a, abm_a, test_examples)
    scores_b = score_examples(params_b, abm_b, test_examples)
    cus_a, cus_b = ab_compare_cus(scores_a, theta_a, scores_b, theta_b, test_examples)
    print(json.dumps({
        "cus_a": cus_a, "cus_b": cus_b,
        "theta_a": theta_a, "theta_b": theta_b,
    }, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="satpred",
        description="User-satisfaction prediction: corpus generation, "
                    "training, evaluation and threshold-gated inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ablate", choices=("TBM2", "ABM_S", "ABM_C", "ABM"), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with slice reports")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--floor", type=float, default=0.85)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="read example records on stdin, emit decisions")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--staged", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    p.add_argument("--config", default=None)
    p.add_argument("--coords", type=int, default=200)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ab", help="offline A/B comparison with the session metric")
    p.add_argument("--ckpt-a", required=True)
    p.add_argument("--ckpt-b", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--floor", type=float, default=0.85)
    p.set_defaults(func=cmd_ab)

    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UndefinedMetricError, CheckpointError, ConfigError, ConfigFileError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
