"""Acceptance suite: one verdict line per criterion, printed in the terminal summary.

The two learnability benchmarks train full-size models on the K=4 synthetic
benchmark and take tens of minutes; they are marked ``slow``.
"""

import json
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurodecode.analysis import extract_embeddings
from neurodecode.cli import main
from neurodecode.config import load_config
from neurodecode.data import EegRecording, build_windows, make_windows, split_grouped, window_starts
from neurodecode.eegb import decode_eegb, encode_eegb
from neurodecode.evaluate import SignalPrediction, compute_metrics, vote_gain_study, vote_recordings
from neurodecode.extractor import fe_forward, fe_init
from neurodecode.model import EegDecoder, ModelConfig, decode_checkpoint, encode_checkpoint
from neurodecode.params import check_gradients, rng_stream
from neurodecode.synth import probe_accuracy_over_splits, synth_generate
from neurodecode.train import TrainConfig, evaluate_windows, fit

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

# tolerances and budgets
SHAPE_BUDGET_S = 1.0
WINDOW_BUDGET_S = 1.0
GRAD_REL_TOL = 1e-4
GRAD_STEP = 1e-5
GRAD_MIN_COORDS = 64
GRAD_BUDGET_S = 120.0
BILSTM_MIN_VOTED = 0.90
BILSTM_MAX_EPOCHS = 60
BILSTM_BUDGET_S = 15 * 60
TRANSFORMER_MIN_VOTED = 0.75
TRANSFORMER_MAX_EPOCHS = 120
TRANSFORMER_BUDGET_S = 30 * 60
PROBE_TARGET = 0.85
PROBE_BAND = 0.05
VOTE_MIN_ACC = 0.9
VOTE_MAX_HALF_WIDTH = 0.01
VOTE_TRIALS = 100_000
VOTE_MAX_DROP = 0.02
VOTE_BUDGET_S = 60.0
METRIC_SETS = 1000
METRIC_BUDGET_S = 60.0
DETERMINISM_BUDGET_S = 120.0
CLUSTER_BUDGET_S = 60.0
CONVERGENCE_EPS = 1e-4
CONVERGENCE_BUDGET_S = 120.0

SURROGATE = dict(n_channels=8, win_len=60, n_filters=4, kernel_w=7, lstm_hidden=6, d_model=16, n_heads=8,
                 d_ff=32, dense_hidden=10)


# -- 1. shapes ----------------------------------------------------------------
def test_c1_extractor_shapes(verdict):
    params = fe_init(rng_stream(0, "c1"))
    window = np.random.default_rng(0).standard_normal((128, 220))
    trace = {}
    t0 = time.perf_counter()
    seq = fe_forward(window, params, trace=trace)
    elapsed = time.perf_counter() - t0
    widths = (trace["layer1"].shape[2], trace["layer2"].shape[2])
    ok = seq.shape == (30, 25) and widths == (93, 30) and trace["layer3"].shape[1:] == (1, 30, 25)
    ok = verdict(1, ok and elapsed < SHAPE_BUDGET_S,
                 f"fe_forward -> {seq.shape}, widths {widths}, {elapsed:.3f} s")
    assert ok


# -- 2. windows ---------------------------------------------------------------
@settings(max_examples=300, deadline=None)
@given(length=st.integers(220, 5000))
def test_c2_window_count_property(length):
    starts = window_starts(length)
    assert len(starts) == (length - 220) // 22 + 1
    assert all(b - a == 22 for a, b in zip(starts, starts[1:]))
    assert starts[-1] + 220 <= length < starts[-1] + 220 + 22


def test_c2_windowing(verdict):
    t0 = time.perf_counter()
    x = np.arange(128 * 440, dtype=np.float64).reshape(128, 440)
    ws = make_windows(EegRecording(x, 0, 0, 0))
    starts = [int(w.samples[0, 0]) for w in ws]
    test_c2_window_count_property()
    elapsed = time.perf_counter() - t0
    ok = (len(ws) == 11 and all(w.samples.shape == (128, 220) for w in ws)
          and starts == list(range(0, 221, 22)))
    ok = verdict(2, ok and elapsed < WINDOW_BUDGET_S,
                 f"{len(ws)} windows of 220, starts {starts[0]}..{starts[-1]} step 22, "
                 f"count formula over random lengths, {elapsed:.2f} s")
    assert ok


# -- 3. gradient oracle -------------------------------------------------------
@pytest.mark.parametrize("head", ["bilstm", "transformer"])
def test_c3_end_to_end_gradients(head, verdict):
    model = EegDecoder(ModelConfig(head=head, n_classes=4, **SURROGATE), seed=0)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 8, 60))
    y = np.array([0, 1, 3])
    t0 = time.perf_counter()
    rep = check_gradients(model.params, lambda: model.loss(x, y)[0], h=GRAD_STEP, tol=GRAD_REL_TOL,
                          n_coords=GRAD_MIN_COORDS)
    elapsed = time.perf_counter() - t0
    enough = min(min(rep.n_checked[k], GRAD_MIN_COORDS) == min(model.params[k].size, GRAD_MIN_COORDS)
                 for k in rep.n_checked)
    worst = max(rep.max_rel_err, key=rep.max_rel_err.get)
    ok = verdict(3, rep.passed and enough and elapsed < GRAD_BUDGET_S,
                 f"{head}: max rel err {rep.worst:.2e} ({worst}) over {len(rep.n_checked)} tensors, "
                 f"h={GRAD_STEP:g}, {elapsed:.1f} s")
    assert ok, rep.failures()


# -- 4, 5, 6b, 9. learnability on the synthetic benchmark ---------------------
LEARN = {
    "bilstm": ("synthetic_k4.json", BILSTM_MAX_EPOCHS, BILSTM_BUDGET_S, BILSTM_MIN_VOTED),
    "transformer": ("synthetic_k4_transformer.json", TRANSFORMER_MAX_EPOCHS, TRANSFORMER_BUDGET_S,
                    TRANSFORMER_MIN_VOTED),
}
_runs: dict = {}


def learnability_run(head):
    """Generate, split, train and score one head once per session."""
    if head in _runs:
        return _runs[head]
    name, max_epochs, budget, _ = LEARN[head]
    cfg = load_config(str(CONFIGS / name))
    t0 = time.perf_counter()
    recs = synth_generate(cfg.synthetic())
    split = split_grouped(recs, seed=cfg.seed)
    ws = {part: build_windows([recs[i] for i in split.part(part)]) for part in ("train", "val", "test")}
    tc = cfg.train()
    assert tc.iteration_unit == "epoch" and tc.iterations <= max_epochs
    model, state = fit(ws["train"], ws["val"], tc, cfg.model())
    ev = evaluate_windows(model, ws["test"])
    preds = vote_recordings(ws["test"], ev.probs)
    voted = compute_metrics(preds, cfg.n_classes).accuracy
    elapsed = time.perf_counter() - t0
    _runs[head] = dict(cfg=cfg, recs=recs, ws=ws, model=model, state=state, window_acc=ev.accuracy,
                       voted=voted, elapsed=elapsed, budget=budget)
    return _runs[head]


@pytest.mark.slow
def test_c4_bilstm_learnability(verdict):
    r = learnability_run("bilstm")
    probe, probe_sd = probe_accuracy_over_splits(r["cfg"].synthetic())
    ok = (r["voted"] >= BILSTM_MIN_VOTED and r["state"].epochs <= BILSTM_MAX_EPOCHS
          and r["elapsed"] < BILSTM_BUDGET_S and abs(probe - PROBE_TARGET) <= PROBE_BAND)
    ok = verdict(4, ok, f"bilstm voted test acc {r['voted']:.3f} (window {r['window_acc']:.3f}) after "
                        f"{r['state'].epochs} epochs, {r['elapsed'] / 60:.1f} min; "
                        f"energy probe {probe:.3f} +- {probe_sd:.3f}")
    assert ok


@pytest.mark.slow
def test_c5_transformer_learnability(verdict):
    r = learnability_run("transformer")
    ok = (r["voted"] >= TRANSFORMER_MIN_VOTED and r["state"].epochs <= TRANSFORMER_MAX_EPOCHS
          and r["elapsed"] < TRANSFORMER_BUDGET_S)
    ok = verdict(5, ok, f"transformer voted test acc {r['voted']:.3f} (window {r['window_acc']:.3f}) "
                        f"after {r['state'].epochs} epochs, {r['elapsed'] / 60:.1f} min")
    assert ok


# -- 6. vote gain -------------------------------------------------------------
def test_c6_vote_gain_monte_carlo(verdict):
    t0 = time.perf_counter()
    acc, hw = vote_gain_study(0.5, 11, 39, trials=VOTE_TRIALS, seed=0)
    elapsed = time.perf_counter() - t0
    ok = verdict(6, acc > VOTE_MIN_ACC and hw < VOTE_MAX_HALF_WIDTH and elapsed < VOTE_BUDGET_S,
                 f"p=0.5 n=11 K=39: voted acc {acc:.4f} +- {hw:.4f} over {VOTE_TRIALS} trials, {elapsed:.1f} s")
    assert ok


def voting_drop(model, windows, k):
    ev = evaluate_windows(model, windows)
    signal = compute_metrics(vote_recordings(windows, ev.probs), k).accuracy
    return ev.accuracy, signal


def test_c6_voting_never_hurts_tiny_models(verdict):
    # quick trained models on a reduced synthetic set; the full-size ones follow under `slow`
    recs = synth_generate(load_config(str(CONFIGS / "tiny_k4.json")).synthetic())
    split = split_grouped(recs, seed=0)
    ws = {p: build_windows([recs[i] for i in split.part(p)], 60, 0.9) for p in ("train", "test")}
    lines = []
    ok = True
    for head in ("bilstm", "transformer"):
        tc = TrainConfig(head=head, n_classes=4, lr=1e-2, batch_size=16, max_iterations=4, seed=0)
        mc = ModelConfig(head=head, n_classes=4, **SURROGATE)
        model, _ = fit(ws["train"], None, tc, mc)
        for part in ("train", "test"):
            w, s = voting_drop(model, ws[part], 4)
            ok &= s >= w - VOTE_MAX_DROP
            lines.append(f"{head}/{part} window {w:.3f} -> voted {s:.3f}")
    ok = verdict(6, ok, "tiny models: " + "; ".join(lines))
    assert ok


@pytest.mark.slow
@pytest.mark.parametrize("head", ["bilstm", "transformer"])
def test_c6_voting_never_hurts_trained_models(head, verdict):
    r = learnability_run(head)
    lines, ok = [], True
    for part in ("train", "val", "test"):
        w, s = voting_drop(r["model"], r["ws"][part], r["cfg"].n_classes)
        ok &= s >= w - VOTE_MAX_DROP
        lines.append(f"{part} window {w:.3f} -> voted {s:.3f}")
    ok = verdict(6, ok, f"{head} benchmark model: " + "; ".join(lines))
    assert ok


# -- 7. metrics ---------------------------------------------------------------
def exact_metrics(true, predicted, k):
    cm = [[0] * k for _ in range(k)]
    for t, p in zip(true, predicted):
        cm[t][p] += 1
    prec, rec, f1 = [], [], []
    for c in range(k):
        support = sum(cm[c])
        if not support:
            continue
        npred = sum(cm[r][c] for r in range(k))
        p = Fraction(cm[c][c], npred) if npred else Fraction(0)
        r = Fraction(cm[c][c], support)
        prec.append(p)
        rec.append(r)
        f1.append(2 * p * r / (p + r) if p + r else Fraction(0))
    mean = lambda xs: sum(xs, Fraction(0)) / len(xs)
    acc = Fraction(sum(cm[c][c] for c in range(k)), len(true))
    return cm, acc, mean(prec), mean(rec), mean(f1)


def test_c7_metrics_match_brute_force(verdict):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst, cm_ok = 0.0, True
    for _ in range(METRIC_SETS):
        k = int(rng.integers(2, 12))
        n = int(rng.integers(1, 60))
        true = rng.integers(0, k, n).tolist()
        predicted = [t if rng.random() < 0.5 else int(rng.integers(0, k)) for t in true]
        preds = [SignalPrediction("r", np.zeros((1, k)), np.zeros(k), p, t) for t, p in zip(true, predicted)]
        m = compute_metrics(preds, k)
        cm, acc, p, r, f = exact_metrics(true, predicted, k)
        cm_ok &= m.confusion.tolist() == cm and m.accuracy == float(acc)
        for got, want in ((m.precision, p), (m.recall, r), (m.f1, f)):
            worst = max(worst, abs(Fraction(got) - want) / max(want, Fraction(1, 10**9)))
    elapsed = time.perf_counter() - t0
    ok = verdict(7, cm_ok and worst < 1e-14 and elapsed < METRIC_BUDGET_S,
                 f"{METRIC_SETS} random sets: confusion matrices and accuracy identical, "
                 f"macro P/R/F1 within {float(worst):.1e} relative of exact rationals, {elapsed:.1f} s")
    assert ok


# -- 8. determinism and persistence -------------------------------------------
def test_c8_determinism_and_round_trips(tmp_path, verdict):
    t0 = time.perf_counter()
    raw = json.loads((CONFIGS / "tiny_k4.json").read_text())
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        (d / "run.json").write_text(json.dumps(raw))
        cfg = str(d / "run.json")
        for cmd in ("gen-data", "train", "eval", "export-embeddings"):
            assert main([cmd, "--config", cfg]) == 0
        files = sorted(p for p in d.rglob("*") if p.is_file() and p.name != "run.json")
        outputs.append({str(p.relative_to(d)): p.read_bytes() for p in files})
    same = outputs[0] == outputs[1]

    data = outputs[0]["data.eegb"]
    recs = decode_eegb(data)
    eegb_exact = encode_eegb(recs) == data
    ckpt = outputs[0]["model.ndmd"]
    model, extra = decode_checkpoint(ckpt)
    ckpt_exact = encode_checkpoint(model, extra) == ckpt
    elapsed = time.perf_counter() - t0
    ok = verdict(8, same and eegb_exact and ckpt_exact and elapsed < DETERMINISM_BUDGET_S,
                 f"two CLI runs byte-identical over {len(outputs[0])} artifacts "
                 f"({', '.join(sorted(outputs[0]))}); EEGB and checkpoint re-encode bit-exact, {elapsed:.1f} s")
    assert ok


# -- 9. cluster separation ----------------------------------------------------
@pytest.mark.slow
def test_c9_embedding_cluster_separation(verdict):
    r = learnability_run("bilstm")
    t0 = time.perf_counter()
    records = extract_embeddings(r["model"], r["ws"]["test"], sample_per_class=100, seed=r["cfg"].seed)
    emb = np.stack([e.vector for e in records])
    labels = np.array([e.class_id for e in records])
    d = np.sqrt(((emb[:, None, :] - emb[None, :, :]) ** 2).sum(axis=2))
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(emb), dtype=bool)
    within = d[same & off].mean()
    between = d[~same].mean()
    elapsed = time.perf_counter() - t0
    ok = verdict(9, within < between and elapsed < CLUSTER_BUDGET_S,
                 f"{len(emb)} test embeddings: mean within-class distance {within:.4f} vs between {between:.4f}")
    assert ok


# -- 10. convergence rule -----------------------------------------------------
def frozen_windows():
    """Tiny separable problem: class c carries a sinusoid on channel c."""
    rng = np.random.default_rng(10)
    y = np.arange(30) % 3
    t = np.arange(60)
    x = 0.3 * rng.standard_normal((30, 8, 60))
    for i, c in enumerate(y):
        x[i, c] += np.sin(2 * np.pi * t / 12 + rng.uniform(0, 2 * np.pi))
    from neurodecode.data import WindowSet
    return WindowSet(x, y, np.arange(30), np.zeros(30, dtype=np.int64), [str(i) for i in range(30)])


def test_c10_convergence_rule(verdict):
    ws = frozen_windows()
    t0 = time.perf_counter()
    cfg = TrainConfig(head="bilstm", n_classes=3, lr=1e-2, batch_size=10, max_iterations=400,
                      convergence_eps=CONVERGENCE_EPS, seed=0)
    _, state = fit(ws, None, cfg, ModelConfig(head="bilstm", n_classes=3, **SURROGATE))
    elapsed = time.perf_counter() - t0
    deltas = [h["loss_delta"] for h in state.history]
    halted_on_rule = state.converged and state.iteration < cfg.iterations and deltas[-1] < CONVERGENCE_EPS
    none_earlier = all(dl >= CONVERGENCE_EPS for dl in deltas[:-1])
    ok = verdict(10, halted_on_rule and none_earlier and elapsed < CONVERGENCE_BUDGET_S,
                 f"halted after epoch {state.iteration} with |dloss| {deltas[-1]:.2e} < {CONVERGENCE_EPS:g}; "
                 f"all {len(deltas) - 1} earlier deltas >= eps, {elapsed:.1f} s")
    assert ok
