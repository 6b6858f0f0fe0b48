"""Command-line entry point.

Subcommands: synth (demo corpus), prepare, train, eval, ablate, predict.
Config precedence is flags > config file > defaults; every command is
deterministic under --seed. Set WET_LOG=DEBUG for chatty logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import load_run_config
from .dataprep import ingest, split_train_test, write_jsonl
from .ensemble import load_checkpoint, save_checkpoint, train, wet_forward, WetModel
from .evaluation import ablate, ablation_csv, ablation_plot, ablation_table, evaluate_model
from .pipeline import PipelineError, load_prepared, make_embedder, run_prepare
from .synthetic import synthetic_corpus, write_corpus

log = logging.getLogger("wet")


def _setup_logging():
    level = os.environ.get("WET_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _add_override_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, dest="seed")
    p.add_argument("--dropout", type=float)
    p.add_argument("--activation")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--fc-width", type=int, dest="fc_width")
    p.add_argument("--optimizer")
    p.add_argument("--loss")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--weights-mode", choices=("uniform", "valderived", "learned"),
                   dest="weights_mode")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--provider", choices=("pseudo", "file"))
    p.add_argument("--embeddings", dest="embeddings_path")
    p.add_argument("--no-grid-guard", action="store_false", dest="grid_guard",
                   default=None)


_OVERRIDE_KEYS = (
    "seed", "dropout", "activation", "batch_size", "fc_width", "optimizer",
    "loss", "learning_rate", "weights_mode", "max_epochs", "patience",
    "threshold", "provider", "embeddings_path", "grid_guard",
    "input_path", "keywords_path", "lexicon_path", "out_dir",
)


def _run_config(args):
    overrides = {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}
    cfg = load_run_config(getattr(args, "config", None), overrides)
    errs = cfg.validate()
    if errs:
        for e in errs:
            print(f"config error: {e}", file=sys.stderr)
        raise SystemExit(2)
    return cfg


def _train_val_split(prepared, embedder, cfg, val_fraction=0.1):
    by_id = {r.id: r for r in prepared.records}
    train_records = [by_id[rid] for rid in prepared.train_ids]
    import numpy as np

    val_seed = int(np.random.SeedSequence([cfg.seed, 17]).generate_state(1)[0])
    tr, val = split_train_test(train_records, 1.0 - val_fraction, val_seed)
    return (
        prepared.examples([r.id for r in tr], embedder, cfg),
        prepared.examples([r.id for r in val], embedder, cfg),
    )


# ---- subcommands --------------------------------------------------------------


def cmd_synth(args) -> int:
    records = synthetic_corpus(n=args.n, seed=args.seed or 0)
    write_corpus(args.out_file, records)
    print(f"wrote {len(records)} synthetic records to {args.out_file}")
    return 0


def cmd_prepare(args) -> int:
    cfg = _run_config(args)
    if not cfg.input_path:
        print("prepare requires --input", file=sys.stderr)
        return 2
    try:
        counts = run_prepare(cfg)
    except PipelineError as exc:
        print(f"prepare failed: {exc}", file=sys.stderr)
        return 1
    for stage, count in counts.items():
        print(f"{stage}: {count}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    prepared = load_prepared(cfg.out_dir)
    embedder = make_embedder(cfg)
    train_set, val_set = _train_val_split(prepared, embedder, cfg.model)

    model = WetModel(cfg.model)
    log.info("training on %d records (%d validation)", len(train_set), len(val_set))
    report = train(model, train_set, val_set, cfg.model)

    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.json")
    save_checkpoint(model, ckpt_path)
    report_path = os.path.join(cfg.out_dir, "training_report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1)
        fh.write("\n")

    print(f"epochs run: {report.epochs_run} (early stop: {report.stopped_early})")
    print(f"final val accuracy: {report.val_accuracies[-1]:.4f}")
    print(f"ensemble weights ({report.weights_mode}): "
          + ", ".join(f"{w:.4f}" for w in report.final_weights))
    print(f"checkpoint: {ckpt_path}")
    print(f"report: {report_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    model = load_checkpoint(args.checkpoint)
    prepared = load_prepared(cfg.out_dir)
    embedder = make_embedder(cfg)
    ids = prepared.train_ids if args.split == "train" else prepared.test_ids
    examples = prepared.examples(ids, embedder, model.cfg)
    report = evaluate_model(model, examples, model.cfg.threshold)

    print(f"evaluated {report.matrix.total} records ({args.split} split)")
    print(f"accuracy:  {report.accuracy:.4f}")
    print(f"precision: {report.precision:.4f}")
    print(f"recall:    {report.recall:.4f}")
    print(f"f1:        {report.f1:.4f}")
    cm = report.matrix
    print(f"confusion: tp={cm.tp} fp={cm.fp} tn={cm.tn} fn={cm.fn}")
    out_path = os.path.join(cfg.out_dir, f"eval_report_{args.split}.json")
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1)
        fh.write("\n")
    print(f"report: {out_path}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    prepared = load_prepared(cfg.out_dir)
    embedder = make_embedder(cfg)
    train_set, val_set = _train_val_split(prepared, embedder, cfg.model)
    test_set = prepared.examples(prepared.test_ids, embedder, cfg.model)

    cells = ablate(cfg.model, (train_set, val_set, test_set), seed=cfg.model.seed)
    csv_path = os.path.join(cfg.out_dir, "ablation.csv")
    ablation_csv(cells, csv_path)
    table = ablation_table(cells)
    with open(os.path.join(cfg.out_dir, "ablation.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)
    if args.plot:
        plot_path = os.path.join(cfg.out_dir, "ablation.png")
        ablation_plot(cells, plot_path)
        print(f"plot: {plot_path}")
    print(f"csv: {csv_path}")
    return 0


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = _run_config(args)
    threshold = args.threshold if args.threshold is not None else model.cfg.threshold
    result = ingest(args.input_path)
    embedder = make_embedder(cfg)

    from .dataprep import extract_features, load_lexicon, StandardizationStats

    lexicon = load_lexicon(cfg.lexicon_path or None)
    stats_path = os.path.join(cfg.out_dir, "prepared", "standardization.json")
    if not os.path.exists(stats_path):
        print(f"missing standardization stats at {stats_path}; run prepare first",
              file=sys.stderr)
        return 1
    with open(stats_path, "r", encoding="utf-8") as fh:
        stats = StandardizationStats.from_dict(json.load(fh))

    n = 0
    with open(args.out_file, "w", encoding="utf-8") as fh:
        for record in result.records:
            features = extract_features(record, lexicon, stats).as_array(
                model.cfg.feature_mask
            )
            seq = embedder.embed_record(record, model.cfg.max_seq_len)
            prob = wet_forward(model, seq, features)
            fh.write(json.dumps({
                "id": record.id,
                "probability": prob,
                "label": "positive" if prob >= threshold else "negative",
            }) + "\n")
            n += 1
    print(f"wrote {n} predictions to {args.out_file}")
    if result.rejects:
        print(f"skipped {len(result.rejects)} malformed input lines", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wet", description="weighted ensemble transformer classifier"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--out", dest="out_file", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("prepare", help="ingest, filter, featurize, split")
    p.add_argument("--input", dest="input_path", required=True)
    p.add_argument("--keywords", dest="keywords_path")
    p.add_argument("--lexicon", dest="lexicon_path")
    p.add_argument("--out", dest="out_dir")
    _add_override_flags(p)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="train on a prepared dataset")
    p.add_argument("--out", dest="out_dir")
    _add_override_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a prepared split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--split", choices=("train", "test"), default="test")
    _add_override_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the one-axis ablation sweep")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--plot", action="store_true")
    _add_override_flags(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("predict", help="score unlabeled records")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", dest="input_path", required=True)
    p.add_argument("--out-file", dest="out_file", required=True)
    p.add_argument("--out", dest="out_dir")
    _add_override_flags(p)
    p.set_defaults(fn=cmd_predict)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
