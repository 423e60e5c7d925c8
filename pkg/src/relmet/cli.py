"""Command-line front end: synth, train, pipeline, eval, encode.

Exit codes: 0 success, 1 validation/usage error, 2 runtime or divergence
error.  Every train/pipeline run writes a manifest with the fully resolved
configuration; outputs contain no timestamps so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    build_encoder_config,
    build_train_config,
    load_config_file,
    resolve_config,
    resolve_split,
)
from .clustering import estimate_bandwidth, kmeans, mean_shift
from .data import (
    CorpusError,
    Dataset,
    Vocabulary,
    build_vocab,
    encode_inputs,
    insert_entity_markers,
    load_jsonl,
    save_jsonl,
    synth_generate,
)
from .encoder import forward, init_params, load_checkpoint
from .evaluation import b3_scores
from .trainer import DivergenceError, train


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_history_csv(path, history):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,rll_loss,vat_loss,total_loss\n")
        for rec in history:
            fh.write(f"{rec.step},{rec.rll_loss!r},{rec.vat_loss!r},{rec.total_loss!r}\n")


def _write_assignment_csv(path, assignment):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("instance_index,cluster_id\n")
        for i, c in enumerate(assignment.cluster_ids):
            fh.write(f"{i},{int(c)}\n")


def _write_reps_csv(path, reps):
    dims = reps.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("instance_index," + ",".join(f"dim_{j}" for j in range(dims)) + "\n")
        for i, row in enumerate(reps):
            fh.write(f"{i}," + ",".join(repr(v) for v in row.tolist()) + "\n")


def _read_assignment_csv(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "instance_index,cluster_id":
            raise ValueError(f"assignment file {path}: unexpected header {header!r}")
        ids = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                idx_s, cid_s = line.strip().split(",")
                idx, cid = int(idx_s), int(cid_s)
            except ValueError as exc:
                raise ValueError(f"assignment file {path} line {lineno}: malformed row") from exc
            if idx != len(ids):
                raise ValueError(
                    f"assignment file {path} line {lineno}: instance_index {idx} out of order"
                )
            ids.append(cid)
    return np.asarray(ids, dtype=np.int64)


def _report_scores(scores, n_items, n_clusters, n_classes):
    lines = [
        f"B-cubed evaluation ({n_items} items, {n_clusters} predicted clusters, {n_classes} gold classes)",
        f"  b3_precision  {scores.precision:.6f}",
        f"  b3_recall     {scores.recall:.6f}",
        f"  b3_f1         {scores.f1:.6f}",
    ]
    return "\n".join(lines)


def _apply_markers(dataset: Dataset) -> Dataset:
    return Dataset([insert_entity_markers(inst) for inst in dataset.instances])


def _metrics_record(scores, assignment, gold_labels):
    return {
        **scores.as_dict(),
        "num_items": int(len(assignment.cluster_ids)),
        "num_clusters": int(assignment.num_clusters),
        "num_gold_classes": len(set(gold_labels)),
    }


def _cluster(reps, resolved):
    cl = resolved["clustering"]
    if cl["algorithm"] == "kmeans":
        rng = np.random.default_rng(cl["seed"])
        return kmeans(reps, cl["k"], max_iter=cl["max_iter"], restarts=cl["restarts"], rng=rng)
    bandwidth = estimate_bandwidth(reps, cl["quantile"])
    return mean_shift(reps, bandwidth, max_iter=cl["max_iter"])


def _require(resolved, key, command):
    if resolved[key] is None:
        raise ConfigError(f"{key}: required for '{command}'")


def _load_and_split(resolved, command):
    _require(resolved, "corpus", command)
    dataset = load_jsonl(resolved["corpus"])
    train_labels, novel_labels = resolve_split(resolved, dataset.label_set)
    if resolved["markers"]:
        dataset = _apply_markers(dataset)
    train_ds = Dataset([i for i in dataset.instances if i.label in set(train_labels)])
    novel_ds = Dataset([i for i in dataset.instances if i.label in set(novel_labels)])
    # Open-set contract: the trainer never sees a novel-labeled instance.
    assert not (train_ds.label_set & set(novel_labels)), "split leaked novel labels"
    return dataset, train_ds, novel_ds, train_labels, novel_labels


def _manifest(command, resolved, train_labels, novel_labels, vocab_size):
    manifest = {
        "command": command,
        "version": __version__,
        "config": resolved,
        "resolved_split": {"train_labels": train_labels, "novel_labels": novel_labels},
        "vocab_size": vocab_size,
    }
    return manifest


def _prepare_run(resolved, command):
    """Shared front half of train/pipeline: corpus, split, vocab, encoder."""
    _require(resolved, "out_dir", command)
    dataset, train_ds, novel_ds, train_labels, novel_labels = _load_and_split(resolved, command)
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    if resolved["vocab_in"] is not None:
        vocab = Vocabulary.load(resolved["vocab_in"])
    else:
        # Vocabulary covers the full corpus (the stand-in for pretrained
        # word-vector coverage); labels of novel instances are never used.
        vocab = build_vocab(dataset, resolved["min_freq"])
    vocab.save(out_dir / "vocab.txt")
    enc_cfg = build_encoder_config(resolved, vocab_size=len(vocab))
    return dataset, train_ds, novel_ds, train_labels, novel_labels, out_dir, vocab, enc_cfg


def _train_params(resolved, train_ds, enc_cfg, vocab, out_dir):
    train_cfg = build_train_config(resolved)
    if resolved["checkpoint_in"] is not None:
        ckpt_cfg, params = load_checkpoint(resolved["checkpoint_in"])
        if ckpt_cfg != enc_cfg:
            raise ConfigError("checkpoint_in: checkpoint config does not match run config")
        return params, []
    params, history = train(
        train_ds, enc_cfg, train_cfg, vocab, checkpoint_path=out_dir / "encoder.ckpt"
    )
    _write_history_csv(out_dir / "history.csv", history)
    return params, history


def cmd_synth(args) -> int:
    if args.classes < 2:
        raise ConfigError("--classes: must be >= 2")
    if args.per_class < 2:
        raise ConfigError("--per-class: must be >= 2")
    rng = np.random.default_rng(args.seed)
    try:
        dataset = synth_generate(
            args.classes, args.per_class, args.vocab_size, args.noise, rng,
            context_pool=args.context_pool,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    save_jsonl(dataset, args.out)
    print(f"wrote {len(dataset)} instances over {len(dataset.label_set)} classes to {args.out}")
    return 0


def cmd_train(args) -> int:
    resolved = resolve_config(load_config_file(args.config), _overrides(args))
    dataset, train_ds, novel_ds, train_labels, novel_labels, out_dir, vocab, enc_cfg = _prepare_run(
        resolved, "train"
    )
    _write_json(out_dir / "manifest.json", _manifest("train", resolved, train_labels, novel_labels, len(vocab)))
    params, history = _train_params(resolved, train_ds, enc_cfg, vocab, out_dir)
    print(f"trained {len(history)} steps on {len(train_ds)} instances "
          f"({len(train_labels)} classes); outputs in {out_dir}")
    return 0


def cmd_pipeline(args) -> int:
    resolved = resolve_config(load_config_file(args.config), _overrides(args))
    dataset, train_ds, novel_ds, train_labels, novel_labels, out_dir, vocab, enc_cfg = _prepare_run(
        resolved, "pipeline"
    )
    if len(novel_ds) == 0:
        raise ConfigError("split: novel split contains no instances")
    _write_json(out_dir / "manifest.json", _manifest("pipeline", resolved, train_labels, novel_labels, len(vocab)))
    params, history = _train_params(resolved, train_ds, enc_cfg, vocab, out_dir)
    batch = encode_inputs(novel_ds.instances, vocab, enc_cfg.max_len, enc_cfg.max_offset)
    reps, _ = forward(params, batch)
    assignment = _cluster(reps, resolved)
    gold = [inst.label for inst in novel_ds.instances]
    scores = b3_scores(assignment, gold)
    save_jsonl(novel_ds, out_dir / "novel.jsonl")
    _write_assignment_csv(out_dir / "assignment.csv", assignment)
    _write_reps_csv(out_dir / "representations.csv", reps)
    _write_json(out_dir / "metrics.json", _metrics_record(scores, assignment, gold))
    print(_report_scores(scores, len(gold), assignment.num_clusters, len(set(gold))))
    return 0


def cmd_eval(args) -> int:
    pred_ids = _read_assignment_csv(args.pred)
    gold_ds = load_jsonl(args.gold)
    if len(gold_ds) != len(pred_ids):
        raise ValueError(
            f"alignment error: {len(pred_ids)} predictions vs {len(gold_ds)} gold instances"
        )
    gold = [inst.label for inst in gold_ds.instances]
    from .clustering import ClusterAssignment

    assignment = ClusterAssignment.from_labels(pred_ids)
    scores = b3_scores(assignment, gold)
    print(_report_scores(scores, len(gold), assignment.num_clusters, len(set(gold))))
    if args.out:
        _write_json(args.out, _metrics_record(scores, assignment, gold))
    return 0


def cmd_encode(args) -> int:
    enc_cfg, params = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    if enc_cfg.vocab_size != len(vocab):
        raise ValueError(
            f"vocabulary size {len(vocab)} does not match checkpoint vocab_size {enc_cfg.vocab_size}"
        )
    dataset = load_jsonl(args.corpus)
    if args.markers:
        dataset = _apply_markers(dataset)
    batch = encode_inputs(dataset.instances, vocab, enc_cfg.max_len, enc_cfg.max_offset)
    reps, _ = forward(params, batch)
    _write_reps_csv(args.out, reps)
    print(f"encoded {len(dataset)} instances into {args.out}")
    return 0


def _overrides(args) -> dict:
    overrides = {}
    if getattr(args, "corpus", None) is not None:
        overrides["corpus"] = args.corpus
    if getattr(args, "out_dir", None) is not None:
        overrides["out_dir"] = args.out_dir
    if getattr(args, "steps", None) is not None:
        overrides["train.num_steps"] = args.steps
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = args.seed
    if getattr(args, "no_vat", False):
        overrides["train.vat"] = None
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relmet",
        description="Metric-learning embeddings and open-set clustering evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--vocab-size", type=int, default=2000)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--context-pool", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    for name, fn, doc in (
        ("train", cmd_train, "train an encoder on the train split"),
        ("pipeline", cmd_pipeline, "train, encode the novel split, cluster, and score"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--corpus", help="override corpus path")
        p.add_argument("--out-dir", help="override output directory")
        p.add_argument("--steps", type=int, help="override train.num_steps")
        p.add_argument("--seed", type=int, help="override train.seed")
        p.add_argument("--no-vat", action="store_true", help="disable virtual adversarial training")
        p.set_defaults(func=fn)

    p = sub.add_parser("eval", help="score an assignment CSV against a gold corpus")
    p.add_argument("--pred", required=True, help="assignment CSV (instance_index,cluster_id)")
    p.add_argument("--gold", required=True, help="gold corpus JSONL aligned by instance index")
    p.add_argument("--out", help="write the metrics record to this path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("encode", help="dump representations for a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-markers", dest="markers", action="store_false")
    p.set_defaults(func=cmd_encode)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage errors; those are validation errors here.
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (ConfigError, CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
