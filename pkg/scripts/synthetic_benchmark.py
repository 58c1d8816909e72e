"""Train and score one head on a synthetic benchmark config, logging every epoch.

    python3 scripts/synthetic_benchmark.py configs/synthetic_k4.json
    python3 scripts/synthetic_benchmark.py configs/synthetic_k4.json --noise 1.2 --epochs 10
"""

import argparse
import json
import logging
import time

from neurodecode.config import parse_config
from neurodecode.data import build_windows, split_grouped
from neurodecode.evaluate import compute_metrics, vote_recordings
from neurodecode.synth import probe_accuracy_over_splits, synth_generate
from neurodecode.train import evaluate_windows, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--head", choices=["bilstm", "transformer"])
    ap.add_argument("--seed", type=int)
    ap.add_argument("--noise", type=float, help="override synthetic.noise_std")
    ap.add_argument("--lr", type=float)
    ap.add_argument("--batch-size", type=int)
    ap.add_argument("--epochs", type=int, help="override train.max_iterations")
    ap.add_argument("--max-seconds", type=float)
    ap.add_argument("--no-probe", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    with open(args.config) as fh:
        raw = json.load(fh)
    for key, section, field in (("noise", "synthetic", "noise_std"), ("lr", "train", "lr"),
                                ("batch_size", "train", "batch_size"), ("epochs", "train", "max_iterations"),
                                ("max_seconds", "train", "max_seconds")):
        if getattr(args, key) is not None:
            raw.setdefault(section, {})[field] = getattr(args, key)
    cfg = parse_config(raw, seed=args.seed, head=args.head)

    t0 = time.perf_counter()
    spec = cfg.synthetic()
    recs = synth_generate(spec)
    split = split_grouped(recs, seed=cfg.seed)
    ws = {p: build_windows([recs[i] for i in split.part(p)]) for p in ("train", "val", "test")}
    print(f"windows: train {len(ws['train'])} val {len(ws['val'])} test {len(ws['test'])}")
    if not args.no_probe:
        m, sd = probe_accuracy_over_splits(spec)
        print(f"energy probe accuracy {m:.3f} +- {sd:.3f} at noise_std {spec.noise_std}")
    model, state = fit(ws["train"], ws["val"], cfg.train(), cfg.model())
    for part in ("val", "test"):
        ev = evaluate_windows(model, ws[part])
        voted = compute_metrics(vote_recordings(ws[part], ev.probs), cfg.n_classes).accuracy
        print(f"{part}: window {ev.accuracy:.3f} voted {voted:.3f}")
    print(f"{cfg.head}: {state.epochs} epochs, converged={state.converged}, timed_out={state.timed_out}, "
          f"best epoch {state.best_iteration}, {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
