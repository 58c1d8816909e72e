"""``neurodecode`` command line: gen-data, train, eval, export-embeddings, export-topomap.

Exit codes: 0 ok, 2 configuration/usage error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from .analysis import class_mean_topomap, embeddings_csv, extract_embeddings, ring_layout, topomap_csv, topomap_svg
from .config import ConfigError, RunConfig, load_config
from .data import DataError, build_windows, split_grouped, validate_recordings
from .eegb import load_eegb, save_eegb
from .evaluate import build_report, per_class_csv, report_json, vote_recordings
from .model import CheckpointError, EegDecoder, load_checkpoint, save_checkpoint
from .synth import synth_generate
from .train import TrainingAborted, evaluate_windows, fit

log = logging.getLogger("neurodecode")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _write(path: str, data: bytes | str) -> int:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(path, mode) as fh:
        fh.write(data)
    return len(data)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


# ------------------------------------------------------------------ pipeline
def load_dataset(cfg: RunConfig, path: str | None = None):
    path = path or cfg.path("dataset")
    if not os.path.exists(path):
        raise DataError(f"dataset not found: {path}")
    recs = load_eegb(path)
    if not recs:
        raise DataError(f"dataset {path} holds no recordings")
    d = cfg.data()
    validate_recordings(recs, cfg.n_classes, d["n_channels"], d["n_samples"])
    return recs


def split_windows(cfg: RunConfig, recs) -> dict:
    d = cfg.data()
    split = split_grouped(recs, tuple(d["fractions"]), seed=cfg.seed)
    return {
        name: build_windows([recs[i] for i in split.part(name)], d["win_len"], d["overlap"])
        for name in ("train", "val", "test")
    }


def load_model(cfg: RunConfig, path: str) -> EegDecoder:
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    model, _ = load_checkpoint(path)
    if model.config.n_classes != cfg.n_classes:
        raise ConfigError(
            f"checkpoint was trained for K={model.config.n_classes} classes, config says K={cfg.n_classes}"
        )
    if model.config.head != cfg.head:
        raise ConfigError(f"checkpoint head is {model.config.head!r}, config asks for {cfg.head!r}")
    return model


# ------------------------------------------------------------------ commands
def cmd_gen_data(cfg: RunConfig, out: str | None = None) -> int:
    spec = cfg.synthetic()
    try:
        recs = synth_generate(spec)
    except ValueError as exc:
        raise ConfigError(f"invalid synthetic section: {exc}") from exc
    path = cfg.path("dataset", out)
    try:
        n = save_eegb(_prepare(path), recs)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    print(f"wrote {len(recs)} recordings, {n} bytes -> {path}")
    return EXIT_OK


def _prepare(path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    return path


def cmd_train(cfg: RunConfig, out: str | None = None) -> int:
    recs = load_dataset(cfg)
    tc, mc = cfg.train(), cfg.model()
    windows = split_windows(cfg, recs)
    model, state = fit(windows["train"], windows["val"], tc, mc)
    ckpt = cfg.path("checkpoint", out)
    echo = cfg.echo()
    save_checkpoint(_prepare(ckpt), model, {"config": echo})
    history = {
        "config": echo,
        "iterations": state.iteration,
        "epochs": state.epochs,
        "batches": state.batches,
        "converged": state.converged,
        "timed_out": state.timed_out,
        "best_iteration": state.best_iteration,
        "best_val_acc": state.best_val_acc,
        "history": state.history,
    }
    _write(ckpt + ".history.json", json.dumps(_json_safe(history), sort_keys=True, indent=2) + "\n")
    print(
        f"trained {cfg.head} for {state.iteration} {tc.iteration_unit}(s) "
        f"({state.batches} batches, converged={state.converged}); best val window acc "
        f"{state.best_val_acc:.4f} at iteration {state.best_iteration} -> {ckpt}"
    )
    return EXIT_OK


def cmd_eval(cfg: RunConfig, checkpoint: str | None = None, out: str | None = None, split: str = "test") -> int:
    model = load_model(cfg, cfg.path("checkpoint", checkpoint))
    recs = load_dataset(cfg)
    ws = split_windows(cfg, recs)[split]
    ev = evaluate_windows(model, ws)
    preds = vote_recordings(ws, ev.probs)
    report = build_report(cfg.echo(), split, ws, ev.accuracy, preds, cfg.n_classes)
    outdir = cfg.path("reports", out)
    _write(os.path.join(outdir, f"report_{split}.json"), report_json(_json_safe(report)))
    _write(os.path.join(outdir, f"per_class_{split}.csv"), per_class_csv(report))
    s = report["signal"]
    print(
        f"{split}: window accuracy {ev.accuracy:.4f} | voted signal accuracy {s['accuracy']:.4f} "
        f"precision {s['precision']:.4f} recall {s['recall']:.4f} f1 {s['f1']:.4f} -> {outdir}"
    )
    return EXIT_OK


def cmd_export(cfg: RunConfig, kind: str, checkpoint: str | None = None, out: str | None = None) -> int:
    if kind not in ("embeddings", "topomap"):
        raise ConfigError(f"unknown export kind {kind!r}; expected 'embeddings' or 'topomap'")
    opts = cfg.export()
    recs = load_dataset(cfg)
    outdir = cfg.path("reports", out) if kind == "topomap" else None
    if kind == "embeddings":
        model = load_model(cfg, cfg.path("checkpoint", checkpoint))
        ws = split_windows(cfg, recs)[opts["split"]]
        records = extract_embeddings(model, ws, opts["sample_per_class"], seed=cfg.seed)
        path = out or os.path.join(cfg.path("reports"), "embeddings.csv")
        _write(path, embeddings_csv(records))
        print(f"wrote {len(records)} embeddings -> {path}")
        return EXIT_OK

    n_show = min(opts["n_topomap_classes"], cfg.n_classes)
    classes = list(range(n_show))
    ckpt = checkpoint or cfg.paths.get("checkpoint")
    if ckpt and os.path.exists(ckpt):
        # rank classes by voted test accuracy, as for the paper's top-10 figure
        model = load_model(cfg, ckpt)
        ws = split_windows(cfg, recs)[opts["split"]]
        preds = vote_recordings(ws, evaluate_windows(model, ws).probs)
        hits = np.zeros(cfg.n_classes)
        seen = np.zeros(cfg.n_classes)
        for p in preds:
            seen[p.true] += 1
            hits[p.true] += p.predicted == p.true
        acc = np.divide(hits, seen, out=np.full(cfg.n_classes, -1.0), where=seen > 0)
        classes = sorted(np.argsort(-acc, kind="stable")[:n_show].tolist())
    by_class = {c: [r for r in recs if r.class_id == c] for c in classes}
    layout = ring_layout()
    if len(layout.xy) != cfg.data()["n_channels"]:
        raise ConfigError("topomap layout has 128 electrodes; data.n_channels must be 128")
    maps = class_mean_topomap(by_class, layout, opts["grid_size"], opts["idw_power"])
    for tm in maps:
        _write(os.path.join(outdir, f"topomap_class{tm.class_id:02d}.svg"), topomap_svg(tm, layout))
        _write(os.path.join(outdir, f"topomap_class{tm.class_id:02d}.csv"), topomap_csv(tm))
    print(f"wrote {len(maps)} topomaps -> {outdir}")
    return EXIT_OK


# ------------------------------------------------------------------ argparse
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neurodecode", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint=False):
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", help="output path (file or directory, per command)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--head", choices=["bilstm", "transformer"], help="override the config head")
        if checkpoint:
            sp.add_argument("--checkpoint", help="model checkpoint (default: paths.checkpoint)")
        return sp

    common(sub.add_parser("gen-data", help="write a synthetic EEGB dataset"))
    common(sub.add_parser("train", help="split, window and train; writes checkpoint + history JSON"))
    ev = common(sub.add_parser("eval", help="window and voted signal metrics as JSON + per-class CSV"), True)
    ev.add_argument("--split", choices=["train", "val", "test"], default="test")
    common(sub.add_parser("export-embeddings", help="head embeddings as CSV"), True)
    common(sub.add_parser("export-topomap", help="per-class mean-amplitude topomaps (SVG + CSV)"), True)
    ex = common(sub.add_parser("export", help="export analysis artifacts by kind"), True)
    ex.add_argument("--kind", required=True, choices=["embeddings", "topomap"])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, head=args.head)
        if args.command == "gen-data":
            return cmd_gen_data(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.out)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.out, args.split)
        kind = args.kind if args.command == "export" else args.command.split("-", 1)[1]
        kind = "embeddings" if kind == "embeddings" else "topomap"
        return cmd_export(cfg, kind, args.checkpoint, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingAborted as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
