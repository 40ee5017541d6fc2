"""``medgrad`` command line: data generation, training, evaluation, explanations.

Exit status is 0 on success, 1 on a runtime error (bad data, corrupt
checkpoint, I/O failure) and 2 on a usage error. Set ``MEDGRAD_LOG_LEVEL``
(DEBUG, INFO, WARNING, ...) to control logging; the default is WARNING.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from medgrad import checkpoint, config as run_config
from medgrad.errors import MedGradError
from medgrad.eval import evaluate
from medgrad.explain.render import overlay, png_bytes, render_grid, render_panel
from medgrad.explain.saliency import METHODS, explain
from medgrad.model import ClipModel, TrainConfig, train
from medgrad.numerics import Rng
from medgrad.synthdata.dataset import (
    Dataset,
    generate_dataset,
    ingest_external,
    load_image,
    save_dataset,
    split_dataset,
)
from medgrad.synthdata.templates import parse_caption
from medgrad.synthdata.vocab import Vocabulary, tokenize

log = logging.getLogger("medgrad")
LOG_ENV = "MEDGRAD_LOG_LEVEL"


class UsageError(Exception):
    pass


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _config(args, **sections) -> run_config.RunConfig:
    overrides = {name: values for name, values in sections.items()}
    overrides.setdefault("train", {})["seed"] = args.seed
    return run_config.load(args.config, overrides)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    cfg = _config(args, data={"n_pairs": args.n_pairs, "k_classes": args.k_classes, "image_size": args.image_size})
    ds = generate_dataset(cfg.data.n_pairs, cfg.data.k_classes, cfg.train.seed, cfg.data.image_size)
    save_dataset(ds, args.out)
    counts = np.bincount([p.class_id for p in ds.pairs], minlength=len(ds.class_names))
    print(f"wrote {len(ds)} pairs to {args.out}")
    for name, n in zip(ds.class_names, counts):
        print(f"  {name}: {n}")
    return 0


def _load_run(ck: checkpoint.Checkpoint, data_dir) -> tuple[Dataset, list, list]:
    meta = ck.meta
    vocab = Vocabulary(meta["vocab"])
    ds = ingest_external(
        data_dir,
        image_size=ck.model.config.image_size,
        vocab=vocab,
        context_length=ck.model.config.context_length,
        class_names=meta.get("class_names"),
    )
    if meta.get("class_prompts"):
        ds.class_prompts = list(meta["class_prompts"])
    train_pairs, test_pairs = split_dataset(ds.pairs, meta.get("split_fraction", 0.75), meta.get("seed", 0))
    return ds, train_pairs, test_pairs


def cmd_train(args) -> int:
    cfg = _config(
        args,
        train={"epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr, "split_fraction": args.split_fraction},
    )
    t = cfg.train
    ds = ingest_external(args.data, image_size=cfg.data.image_size)
    train_pairs, test_pairs = split_dataset(ds.pairs, t.split_fraction, t.seed)
    model_cfg = cfg.model_config(len(ds.vocab))
    model = ClipModel(model_cfg, seed=t.seed)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(out.suffix + ".log.jsonl")
    lines = []

    def on_epoch(record):
        lines.append(json.dumps(record, sort_keys=True))
        print(f"epoch {record['epoch']}: loss {record['loss']:.4f} train_acc {record['train_acc']:.3f}")

    train(model, ds.subset(train_pairs), TrainConfig(t.epochs, t.batch_size, t.lr, t.seed), on_epoch)
    meta = {
        "vocab": ds.vocab.tokens,
        "class_names": ds.class_names,
        "class_prompts": ds.class_prompts,
        "seed": t.seed,
        "split_fraction": t.split_fraction,
        "run": cfg.to_dict(),
    }
    checkpoint.save(out, model, meta)
    log_path.write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")
    print(f"trained on {len(train_pairs)} pairs ({len(test_pairs)} held out); checkpoint {out}; log {log_path}")
    return 0


def cmd_eval(args) -> int:
    ck = checkpoint.load(args.checkpoint)
    ds, train_pairs, test_pairs = _load_run(ck, args.data)
    pairs = train_pairs if args.split == "train" else test_pairs
    report = evaluate(ck.model, ds.subset(pairs), args.batch_size)
    text = json.dumps(report.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _parse_methods(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise UsageError(f"unknown method(s) {', '.join(bad) or '(none)'}; valid methods: {', '.join(METHODS)}")
    return methods


def _explain_config(args):
    return _config(args).explain


def cmd_explain(args) -> int:
    methods = _parse_methods(args.methods)
    ck = checkpoint.load(args.checkpoint)
    model = ck.model
    vocab = Vocabulary(ck.meta["vocab"])
    image = load_image(args.image, model.config.image_size)
    tokens = tokenize(vocab, args.caption, model.config.context_length)
    ecfg = _explain_config(args)
    maps = [explain(model, image, tokens, m, ecfg, args.caption) for m in methods]
    out = Path(args.out)
    out.write_bytes(render_panel(image, maps, ["original", *methods], ecfg.overlay_alpha))
    for m in maps:
        out.with_name(f"{out.stem}.{m.method}.json").write_text(m.to_json() + "\n", encoding="utf-8")
    print(f"wrote {out} ({len(maps) + 1} panels)")
    return 0


def compare_captions(caption: str) -> list[str]:
    """Columns of a comparison grid: the class name alone, then each criterion term."""
    name, criteria = parse_caption(caption)
    return [name, *criteria]


def cmd_compare(args) -> int:
    methods = _parse_methods(args.methods)
    ck = checkpoint.load(args.checkpoint)
    model = ck.model
    ds, _, _ = _load_run(ck, args.data)
    ecfg = _explain_config(args)
    n = args.n
    if n > len(ds):
        warnings.warn(f"requested {n} images but the dataset has {len(ds)}; using {len(ds)}")
        log.warning("clamping --n from %d to %d", n, len(ds))
        n = len(ds)
    seed = ck.meta.get("seed", 0) if args.seed is None else args.seed
    picks = sorted(Rng(seed, "compare").permutation(len(ds))[:n].tolist())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = model.config.context_length
    for i in picks:
        pair = ds.pairs[i]
        captions = compare_captions(pair.caption)
        cells = [[pair.image] * len(captions)]
        labels = [captions]
        for m in methods:
            row = [explain(model, pair.image, tokenize(ds.vocab, c, ctx), m, ecfg, c) for c in captions]
            cells.append([overlay(pair.image, s, ecfg.overlay_alpha) for s in row])
            labels.append([m] * len(captions))
        path = out / f"{pair.id}.png"
        path.write_bytes(png_bytes(render_grid(cells, labels)))
        print(f"wrote {path} ({len(methods) + 1}x{len(captions)})")
    return 0


def cmd_inspect(args) -> int:
    ck = checkpoint.load(args.checkpoint)
    model = ck.model
    info = {
        "format_version": checkpoint.FORMAT_VERSION,
        "model": model.config.to_dict(),
        "parameters": int(sum(p.size for p in model.parameters())),
        "logit_scale": model.logit_scale,
        "fingerprint": model.fingerprint(),
        "tensors": {k: list(v.shape) for k, v in model.params.items()},
        "meta": {k: v for k, v in ck.meta.items() if k != "vocab"},
        "vocab_size": len(ck.meta.get("vocab", [])),
    }
    print(json.dumps(info, indent=2))
    return 0


# ---------------------------------------------------------------------------
# parser


def _global_flags(default) -> argparse.ArgumentParser:
    # accepted before or after the subcommand; subcommands must not reset them
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=default, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=default, help="seed for data, split and training")
    common.add_argument("--threads", type=int, default=default, help="cap on BLAS/OpenMP threads")
    return common


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="medgrad", description=__doc__.splitlines()[0], parents=[_global_flags(None)])
    common = _global_flags(argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n-pairs", type=int)
    g.add_argument("--k-classes", type=int)
    g.add_argument("--image-size", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="per-epoch JSON-lines log (default: <out>.log.jsonl)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--split-fraction", type=float)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="metrics report for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("test", "train"), default="test")
    e.add_argument("--batch-size", type=int, default=64)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("explain", parents=[common], help="saliency panel for one image and caption")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--image", required=True)
    x.add_argument("--caption", required=True)
    x.add_argument("--methods", default=",".join(METHODS), help=f"comma-separated subset of {', '.join(METHODS)}")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_explain)

    c = sub.add_parser("compare", parents=[common], help="method x caption grids for sampled images")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--n", type=int, default=4)
    c.add_argument("--methods", default=",".join(METHODS))
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    i = sub.add_parser("inspect-checkpoint", parents=[common], help="print checkpoint summary")
    i.add_argument("checkpoint")
    i.set_defaults(func=cmd_inspect)
    return p


def _thread_limit(n):
    if n is None:
        return contextlib.nullcontext()
    if n < 1:
        raise UsageError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (MedGradError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
