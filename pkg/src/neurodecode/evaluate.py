"""Majority voting from window predictions to recording labels, and classification metrics."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .data import WindowSet

log = logging.getLogger(__name__)


@dataclass
class SignalPrediction:
    rec_id: str
    window_probs: np.ndarray  # windows x K
    tally: np.ndarray  # K
    predicted: int
    true: int
    tie_break: str = "none"


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class_accuracy: np.ndarray  # NaN for classes without support
    confusion: np.ndarray  # rows: true, cols: predicted

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_class_accuracy": [None if math.isnan(v) else float(v) for v in self.per_class_accuracy],
            "confusion": self.confusion.astype(int).tolist(),
        }


def majority_vote(window_probs, soft: bool = False) -> tuple[int, np.ndarray, str]:
    """Plurality of per-window argmax labels.

    Ties go to the tied class with the largest summed probability, then to
    the lowest index. Returns (class, tally, tie-break path). With
    ``soft=True`` the class with the largest summed probability wins outright.
    """
    p = np.atleast_2d(np.asarray(window_probs, dtype=np.float64))
    if p.shape[0] < 1:
        raise ValueError("need at least one window")
    k = p.shape[1]
    tally = np.bincount(p.argmax(axis=1), minlength=k)
    summed = p.sum(axis=0)
    if soft:
        return int(np.argmax(summed)), tally, "soft"
    tied = np.flatnonzero(tally == tally.max())
    if len(tied) == 1:
        return int(tied[0]), tally, "none"
    best = summed[tied].max()
    by_prob = tied[summed[tied] == best]
    path = "probability" if len(by_prob) == 1 else "lowest-index"
    log.debug("vote tie among %s resolved by %s", tied.tolist(), path)
    return int(by_prob[0]), tally, path


def vote_recordings(windows: WindowSet, probs: np.ndarray, soft: bool = False) -> list[SignalPrediction]:
    out = []
    for r in np.unique(windows.rec):
        sel = np.flatnonzero(windows.rec == r)
        sel = sel[np.argsort(windows.window[sel], kind="stable")]
        cls, tally, path = majority_vote(probs[sel], soft)
        rec_id = windows.rec_ids[r] if windows.rec_ids else str(r)
        out.append(SignalPrediction(rec_id, probs[sel], tally, cls, int(windows.y[sel[0]]), path))
    return out


def confusion_matrix(true, pred, k: int) -> np.ndarray:
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(true, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray) -> MetricsReport:
    """Macro precision/recall/F1 over classes with nonzero support.

    A class never predicted has precision 0. Macro F1 averages per-class F1.
    """
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise ValueError("no predictions")
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    present = support > 0
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    per_class = np.full(len(tp), np.nan)
    per_class[present] = recall[present]
    return MetricsReport(
        accuracy=float(tp.sum() / total),
        precision=float(precision[present].mean()),
        recall=float(recall[present].mean()),
        f1=float(f1[present].mean()),
        per_class_accuracy=per_class,
        confusion=cm,
    )


def compute_metrics(preds: list[SignalPrediction], k: int) -> MetricsReport:
    if not preds:
        raise ValueError("no predictions to score")
    return metrics_from_confusion(confusion_matrix([p.true for p in preds], [p.predicted for p in preds], k))


def vote_gain_study(p: float, n: int, k: int, trials: int = 100_000, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo accuracy of majority voting over ``n`` iid windows.

    Each window is right with probability ``p``; wrong windows pick one of the
    ``k - 1`` other classes uniformly. Tally ties are broken uniformly at
    random (no probabilities exist in this model). Returns (accuracy, 95% CI
    half-width).
    """
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    if n < 1 or k < 2 or trials < 1:
        raise ValueError("need n >= 1, k >= 2, trials >= 1")
    rng = np.random.default_rng(seed)
    hits = 0
    for start in range(0, trials, 20_000):
        m = min(20_000, trials - start)
        right = rng.random((m, n)) < p
        labels = np.where(right, 0, rng.integers(1, k, size=(m, n)))
        counts = np.zeros((m, k))
        np.add.at(counts, (np.repeat(np.arange(m), n), labels.ravel()), 1)
        counts += rng.random((m, k)) * 0.5  # random tie-break, never reorders distinct counts
        hits += int(np.sum(counts.argmax(axis=1) == 0))
    acc = hits / trials
    return acc, 1.96 * math.sqrt(max(acc * (1 - acc), 1e-12) / trials)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["config", "split", "n_windows", "n_recordings", "window_accuracy", "signal", "per_class"],
    "properties": {
        "config": {"type": "object"},
        "split": {"type": "string"},
        "n_windows": {"type": "integer", "minimum": 0},
        "n_recordings": {"type": "integer", "minimum": 0},
        "window_accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "signal": {
            "type": "object",
            "required": ["accuracy", "precision", "recall", "f1", "per_class_accuracy", "confusion"],
            "properties": {
                "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
                "precision": {"type": "number", "minimum": 0, "maximum": 1},
                "recall": {"type": "number", "minimum": 0, "maximum": 1},
                "f1": {"type": "number", "minimum": 0, "maximum": 1},
                "per_class_accuracy": {"type": "array", "items": {"type": ["number", "null"]}},
                "confusion": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
            },
        },
        "per_class": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["class", "support", "accuracy"],
                "properties": {
                    "class": {"type": "integer"},
                    "support": {"type": "integer"},
                    "accuracy": {"type": ["number", "null"]},
                },
            },
        },
    },
}


def build_report(config: dict, split: str, windows: WindowSet, window_acc: float,
                 preds: list[SignalPrediction], k: int) -> dict:
    m = compute_metrics(preds, k)
    support = m.confusion.sum(axis=1)
    return {
        "config": config,
        "split": split,
        "n_windows": int(len(windows)),
        "n_recordings": len(preds),
        "window_accuracy": float(window_acc),
        "signal": m.to_dict(),
        "per_class": [
            {"class": c, "support": int(support[c]),
             "accuracy": None if math.isnan(m.per_class_accuracy[c]) else float(m.per_class_accuracy[c])}
            for c in range(k)
        ],
    }


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def per_class_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "support", "signal_accuracy"])
    for row in report["per_class"]:
        acc = "" if row["accuracy"] is None else f"{row['accuracy']:.6f}"
        w.writerow([row["class"], row["support"], acc])
    return buf.getvalue()
