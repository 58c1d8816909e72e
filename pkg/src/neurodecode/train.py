"""Window-level training with Adam, loss-delta convergence and best-validation snapshots."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import WindowSet
from .model import EegDecoder, ModelConfig
from .params import AdamState, adam_step, rng_stream
from .tensor import NonFiniteError, conv_precision

log = logging.getLogger(__name__)

DEFAULT_MAX_ITERATIONS = {"bilstm": 400, "transformer": 760}


class TrainingAborted(RuntimeError):
    """Training hit a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    head: str = "bilstm"
    lr: float = 1e-3
    batch_size: int = 64
    max_iterations: int | None = None  # None -> 400 (bilstm) / 760 (transformer)
    convergence_eps: float = 1e-4
    iteration_unit: str = "epoch"  # or "batch"
    seed: int = 0
    n_classes: int = 39
    max_seconds: float | None = None  # wall-clock cap; no iteration starts that would overrun it
    conv_dtype: str = "float64"  # "float32" halves extractor cost; gradients stay float64 elsewhere

    def __post_init__(self):
        if not self.convergence_eps > 0:
            raise ValueError("convergence_eps must be > 0")
        if self.iteration_unit not in ("epoch", "batch"):
            raise ValueError("iteration_unit must be 'epoch' or 'batch'")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.conv_dtype not in ("float64", "float32"):
            raise ValueError("conv_dtype must be 'float64' or 'float32'")
        if self.max_seconds is not None and not self.max_seconds > 0:
            raise ValueError("max_seconds must be > 0")

    @property
    def iterations(self) -> int:
        if self.max_iterations is not None:
            return self.max_iterations
        return DEFAULT_MAX_ITERATIONS[self.head]


@dataclass
class TrainState:
    iteration: int = 0
    batches: int = 0
    epochs: int = 0
    last_loss: float = math.nan
    converged: bool = False
    timed_out: bool = False
    best_iteration: int = 0
    best_val_acc: float = -1.0
    optimizer: AdamState = field(default_factory=AdamState)
    history: list[dict] = field(default_factory=list)


@dataclass
class WindowEval:
    pred: np.ndarray
    probs: np.ndarray
    accuracy: float
    loss: float


def evaluate_windows(model: EegDecoder, windows: WindowSet, batch_size: int = 64) -> WindowEval:
    probs = model.predict_proba(windows.x, batch_size)
    pred = probs.argmax(axis=1) if len(probs) else np.zeros(0, dtype=np.int64)
    if len(windows) == 0:
        return WindowEval(pred, probs, math.nan, math.nan)
    acc = float(np.mean(pred == windows.y))
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(len(probs)), windows.y], 1e-300))))
    return WindowEval(pred, probs, acc, loss)


def fit(
    train: WindowSet,
    val: WindowSet | None,
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    model: EegDecoder | None = None,
) -> tuple[EegDecoder, TrainState]:
    """Mini-batch Adam on window cross-entropy.

    Stops when two successive iteration losses differ by less than
    ``convergence_eps``, after ``config.iterations`` iterations, or when one
    more iteration of average length would overrun ``max_seconds``. An
    iteration is an epoch (mean loss over its batches) or a single batch,
    per ``iteration_unit``. In epoch mode the loss preceding the first
    epoch is the untrained model's loss on the first batch. Returns the snapshot with the
    best validation window accuracy (earliest on ties).
    """
    if len(train) == 0:
        raise ValueError("empty training split")
    if train.y.max() >= config.n_classes or train.y.min() < 0:
        raise ValueError(f"training labels must lie in [0, {config.n_classes})")
    if model is None:
        mc = model_config or ModelConfig(head=config.head, n_classes=config.n_classes)
        if mc.head != config.head or mc.n_classes != config.n_classes:
            raise ValueError("model config disagrees with training config on head or n_classes")
        model = EegDecoder(mc, seed=config.seed)

    state = TrainState()
    shuffle = rng_stream(config.seed, "shuffle")
    by_batch = config.iteration_unit == "batch"
    limit = config.iterations
    best = model.params.flatten()
    prev = None
    n = len(train)
    started = time.perf_counter()

    def out_of_time() -> bool:
        # stop when another iteration of average length would overrun the budget
        if config.max_seconds is None:
            return False
        spent = time.perf_counter() - started
        if spent + spent / max(state.iteration, 1) <= config.max_seconds:
            return False
        state.timed_out = True
        log.warning("wall-clock budget of %.0f s spent after %d iteration(s)", config.max_seconds, state.iteration)
        return True

    def record(loss: float, extra: dict) -> bool:
        nonlocal prev, best
        delta = abs(loss - prev) if prev is not None else math.inf
        entry = {"iteration": state.iteration, "epoch": state.epochs, "batches": state.batches,
                 "train_loss": loss, "loss_delta": delta, **extra}
        if extra.get("val_acc") is not None and extra["val_acc"] > state.best_val_acc:
            state.best_val_acc = extra["val_acc"]
            state.best_iteration = state.iteration
            best = model.params.flatten()
        state.history.append(entry)
        state.last_loss = loss
        prev = loss
        log.info("iter %d epoch %d loss %.6f delta %.3g val_acc %s", state.iteration, state.epochs,
                 loss, delta, extra.get("val_acc"))
        return delta < config.convergence_eps

    def validate() -> dict:
        if val is None or len(val) == 0:
            return {"val_loss": None, "val_acc": None}
        ev = evaluate_windows(model, val, config.batch_size)
        return {"val_loss": ev.loss, "val_acc": ev.accuracy}

    try:
        with conv_precision(config.conv_dtype):
            done = False
            while not done:
                order = shuffle.permutation(n)
                total, correct = 0.0, 0
                for s in range(0, n, config.batch_size):
                    idx = order[s : s + config.batch_size]
                    xb, yb = train.x[idx], train.y[idx]
                    model.params.zero_grad()
                    loss_t, probs = model.loss(xb, yb)
                    loss = loss_t.item()
                    if prev is None and not by_batch:
                        prev = loss
                    loss_t.backward()
                    for name, t in model.params.items():
                        if t.grad is not None and not np.isfinite(t.grad).all():
                            raise NonFiniteError(f"non-finite gradient for {name}")
                    adam_step(model.params, state.optimizer, config.lr)
                    state.batches += 1
                    total += loss * len(idx)
                    correct += int(np.sum(probs.argmax(axis=1) == yb))
                    if by_batch:
                        state.iteration += 1
                        last_of_epoch = s + config.batch_size >= n
                        if last_of_epoch:
                            state.epochs += 1
                        if last_of_epoch or state.iteration >= limit:
                            extra = validate()
                        else:
                            extra = {"val_loss": None, "val_acc": None}
                        extra["train_acc"] = float(np.mean(probs.argmax(axis=1) == yb))
                        if record(loss, extra) or state.iteration >= limit or out_of_time():
                            state.converged = state.history[-1]["loss_delta"] < config.convergence_eps
                            done = True
                            break
                if not by_batch:
                    state.epochs += 1
                    state.iteration += 1
                    extra = validate()
                    extra["train_acc"] = correct / n
                    state.converged = record(total / n, extra)
                    done = state.converged or state.iteration >= limit or out_of_time()
    except NonFiniteError as exc:
        raise TrainingAborted(
            f"non-finite value at iteration {state.iteration + 1} (batch {state.batches + 1}): {exc}"
        ) from exc

    if state.best_val_acc >= 0:
        model.params.unflatten(best)
    return model, state
