"""Command-line entry point: ``noisy-sei <subcommand> ...`` (or ``python -m noisy_sei``)."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from . import engine as E
from . import io
from .config import MODES, PipelineConfig, dump_config, load_config
from .knn_filter import Partition, filter_bank
from .label_noise import SPLIT_NAMES, TEST, TRAIN, VAL, inject_noise, stratified_split
from .moco import extract_features, pretrain
from .pipeline import (accuracy, accuracy_table, format_report, load_classifier, load_encoder,
                       run_baseline_ce, run_pipeline, train_cvnn)
from .rescue import run_rescue_rounds
from .sim import default_spec, synth_dataset

log = logging.getLogger("noisy_sei")
_SPLITS = {v: k for k, v in SPLIT_NAMES.items()}


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    for item in args.set or []:
        key, _, raw = item.partition("=")
        section, _, field = key.partition(".")
        if not field:
            cfg = cfg.replace(**{section: yaml.safe_load(raw)})
        else:
            cfg = cfg.replace(**{section: {field: yaml.safe_load(raw)}})
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _add_config(p):
    p.add_argument("--config", default="desk", help="YAML file or shipped name (desk, fullscale)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value, e.g. --set moco.epochs=10")
    p.add_argument("--seed", type=int, default=None)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# --- subcommands -----------------------------------------------------------------

def cmd_synth(args):
    spec = default_spec(args.classes, args.per_class, args.length, args.seed, args.fading, args.snr)
    data = synth_dataset(spec)
    split = stratified_split(data.labels, tuple(args.ratios), args.seed) if not args.no_split else None
    io.write_seis(args.out, data.signals, data.labels, data.num_classes, split)
    print(f"wrote {len(data)} signals ({args.classes} emitters, L={args.length}) to {args.out}")


def cmd_inject_noise(args):
    data = io.read_seis(args.data)
    if data.split is None:
        data = data.with_split(stratified_split(data.labels, seed=args.seed))
    noisy = inject_noise(data, args.eta, args.seed)
    io.write_noisy(args.out, noisy)
    flipped = int(noisy.ground_truth().corrupted.sum())
    print(f"flipped {flipped} of {len(noisy.indices(TRAIN))} training labels; flags in {args.out}.flags.csv")


def cmd_pretrain(args):
    cfg = _config(args)
    ds = io.read_noisy(args.data)
    tr = ds.indices(TRAIN)
    res = pretrain(ds.signals[tr], cfg.augment, cfg.encoder, cfg.moco, cfg.seed)
    arch = {"kind": "encoder", "encoder": asdict(cfg.encoder), "signal_length": int(ds.signals.shape[-1])}
    E.save_checkpoint(args.out_checkpoint, res.encoder.state_dict(), arch)
    _write_rows(f"{args.out_checkpoint}.losses.csv", ["epoch", "loss"],
                [[i + 1, repr(l)] for i, l in enumerate(res.epoch_losses)])
    print(f"pre-trained {cfg.moco.epochs} epochs in {res.seconds:.1f}s; final loss {res.epoch_losses[-1]:.4f}")


def cmd_extract(args):
    state, arch = E.load_checkpoint(args.checkpoint)
    ds = io.read_seis(args.data)
    idx = np.arange(len(ds)) if ds.split is None or args.split == "all" else \
        np.flatnonzero(ds.split == _SPLITS[args.split])
    bank = extract_features(load_encoder(state, arch), ds.signals[idx], idx)
    io.write_bank(args.out, bank)
    print(f"wrote {len(bank)} x {bank.features.shape[1]} features to {args.out}")


def cmd_filter(args):
    bank = io.read_bank(args.bank)
    index, label = io.read_labels(args.labels)
    lookup = dict(zip(index.tolist(), label.tolist()))
    labels = np.array([lookup[int(i)] for i in bank.indices])
    part, rep = filter_bank(bank.features, labels, args.k, args.theta_knn, args.n_min)
    mask = part.clean_mask()
    io.write_partition(args.out, bank.indices, rep.scores, mask, 0)
    summary = {"clean": int(mask.sum()), "discard": int((~mask).sum()),
               "per_class": {str(c): {"clean": int(np.sum(mask & (labels == c))),
                                      "discard": int(np.sum(~mask & (labels == c)))}
                             for c in np.unique(labels)}}
    io.write_json(f"{args.out}.summary.json", summary)
    print(json.dumps(summary))


def cmd_rescue(args):
    cfg = _config(args)
    bank = io.read_bank(args.bank)
    index, label = io.read_labels(args.labels)
    lookup = dict(zip(index.tolist(), label.tolist()))
    idx, scores, clean, _ = io.read_partition(args.partition)
    if not np.array_equal(idx, bank.indices):
        raise SystemExit("partition rows do not align with the feature bank")
    labels = np.array([lookup[int(i)] for i in idx])
    num_classes = args.classes or int(labels.max()) + 1
    res = run_rescue_rounds(bank.features, labels, Partition.from_mask(clean, 0), num_classes,
                            cfg.rescue, cfg.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for p in res.rounds:
        io.write_partition(out / f"partition_r{p.round}.csv", idx, scores, p.clean_mask(), p.round)
    io.write_json(out / "rescue_audit.json", {"rounds": res.audit()})
    for r in res.audit():
        print(f"round {r['round']}: rescued {r['rescued']} -> clean {r['clean_size']}")


def _train(args, partition: str | None):
    cfg = _config(args)
    ds = io.read_noisy(args.data)
    if partition:
        idx, _, clean, _ = io.read_partition(partition)
        train_idx = idx[clean]
    else:
        train_idx = ds.indices(TRAIN)
    enc_state = E.load_checkpoint(args.init_from_moco)[0] if getattr(args, "init_from_moco", None) else None
    model, history, selected = train_cvnn(ds.signals, ds.observed_labels, train_idx, ds.indices(VAL),
                                          ds.num_classes, cfg, cfg.seed, enc_state)
    E.save_checkpoint(args.out_checkpoint, model.state_dict(), model.arch)
    _write_rows(f"{args.out_checkpoint}.history.csv", ["epoch", "loss", "val_accuracy", "selected"],
                [[h["epoch"], repr(h["loss"]), repr(h["val_accuracy"]), int(h["epoch"] == selected)]
                 for h in history])
    print(f"trained on {len(train_idx)} samples; selected epoch {selected} "
          f"(val accuracy {history[selected - 1]['val_accuracy']:.4f})")


def cmd_train(args):
    _train(args, args.partition)


def cmd_baseline(args):
    _train(args, None)


def cmd_eval(args):
    state, arch = E.load_checkpoint(args.checkpoint)
    model = load_classifier(state, arch)
    ds = io.read_seis(args.data)
    idx = np.arange(len(ds)) if ds.split is None or args.split == "all" else \
        np.flatnonzero(ds.split == _SPLITS[args.split])
    acc, per_class = accuracy(model, ds.signals[idx], ds.labels[idx], ds.num_classes)
    result = {"split": args.split, "n": int(len(idx)), "accuracy": acc, "per_class_accuracy": per_class}
    if args.out:
        io.write_json(args.out, result)
    print(json.dumps(result))


def cmd_pipeline(args):
    cfg = _config(args)
    if args.mode:
        cfg = cfg.replace(mode=args.mode)
    if args.eta is not None:
        cfg = cfg.replace(data={"eta": args.eta})
    if args.data:
        cfg = cfg.replace(data={"path": str(args.data)})
    rep = run_baseline_ce(cfg, args.out_dir) if cfg.mode == "baseline" else run_pipeline(cfg, args.out_dir)
    print(format_report(rep), end="")


def cmd_report(args):
    paths = []
    for p in args.runs:
        p = Path(p)
        paths += sorted(p.rglob("report.json")) if p.is_dir() else [p]
    reports = [io.read_json(p) for p in paths]
    if not reports:
        raise SystemExit("no report.json files found")
    text = accuracy_table(reports)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


def cmd_config(args):
    print(dump_config(_config(args)), end="")


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="noisy-sei", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="simulate a labelled emitter dataset")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--length", type=int, default=128)
    p.add_argument("--snr", type=float, default=25.0)
    p.add_argument("--fading", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratios", type=float, nargs=3, default=(0.6, 0.2, 0.2))
    p.add_argument("--no-split", action="store_true", help="leave the split column empty")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("inject-noise", help="flip a fraction of training labels")
    p.add_argument("--data", required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_inject_noise)

    p = sub.add_parser("pretrain", help="contrastive pre-training on the training split")
    p.add_argument("--data", required=True)
    p.add_argument("--out-checkpoint", required=True)
    _add_config(p)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("extract", help="export backbone embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("filter", help="KNN label-consistency partition")
    p.add_argument("--bank", required=True)
    p.add_argument("--labels", required=True, help="labels CSV, or the SEIS file carrying one")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--theta-knn", type=float, default=0.4)
    p.add_argument("--n-min", type=int, default=35)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_filter)

    p = sub.add_parser("rescue", help="iterative rescue of discarded samples")
    p.add_argument("--bank", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    _add_config(p)
    p.set_defaults(fn=cmd_rescue)

    for name, fn, help_ in (("train", cmd_train, "train the CVNN classifier on a clean partition"),
                            ("baseline", cmd_baseline, "cross-entropy training on every training label")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--data", required=True)
        if name == "train":
            p.add_argument("--partition", help="partition CSV; omit to use the whole training split")
            p.add_argument("--init-from-moco", metavar="CKPT", help="warm-start the encoder")
        p.add_argument("--out-checkpoint", required=True)
        _add_config(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("eval", help="accuracy of a classifier checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("pipeline", help="run every stage into one directory (resumable)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--eta", type=float)
    p.add_argument("--data", help="split SEIS file to use instead of simulating")
    _add_config(p)
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("report", help="method x noise-rate accuracy table over run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("config", help="print the resolved config")
    _add_config(p)
    p.set_defaults(fn=cmd_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
