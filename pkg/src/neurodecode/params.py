"""Parameter storage, seeded random streams, initializers, Adam and a gradient checker."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .tensor import Tensor, no_grad


def rng_stream(seed: int, *keys) -> np.random.Generator:
    """Counter-based (Philox) generator for ``seed`` and a tuple of stream keys.

    String keys are hashed with CRC32 so stream identity never depends on
    Python's randomized ``hash``.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class ParamStore:
    """Ordered collection of named leaf tensors."""

    def __init__(self, items=None):
        self._params: dict[str, Tensor] = {}
        for name, value in (items or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    @property
    def n_scalars(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def flatten(self) -> np.ndarray:
        if not self._params:
            return np.zeros(0)
        return np.concatenate([t.data.ravel() for t in self._params.values()])

    def unflatten(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_scalars,):
            raise ValueError(f"expected {self.n_scalars} values, got {vec.shape}")
        i = 0
        for t in self._params.values():
            t.data = vec[i : i + t.size].reshape(t.shape).copy()
            i += t.size

    def flat_grad(self) -> np.ndarray:
        parts = []
        for name, t in self._params.items():
            parts.append(np.zeros(t.size) if t.grad is None else t.grad.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def copy(self) -> "ParamStore":
        return ParamStore({k: t.data.copy() for k, t in self._params.items()})

    def subset(self, prefix: str) -> "ParamStore":
        """View sharing tensors whose names start with ``prefix``."""
        view = ParamStore()
        view._params = {k: t for k, t in self._params.items() if k.startswith(prefix)}
        return view


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: ParamStore,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update in place, using each parameter's ``.grad``."""
    missing = [name for name, t in params.items() if t.grad is None]
    if missing:
        raise ValueError(f"missing gradients for {missing[:5]}")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, t in params.items():
        g = t.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        t.data = t.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


@dataclass
class GradCheckReport:
    max_rel_err: dict[str, float]
    n_checked: dict[str, int]
    tol: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tol

    def failures(self) -> list[str]:
        return [k for k, v in self.max_rel_err.items() if not v < self.tol]


def check_gradients(
    params: ParamStore,
    loss_fn: Callable[[], Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    n_coords: int = 64,
    seed: int = 0,
    grads: dict[str, np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare autodiff gradients with central finite differences.

    Tensors with more than ``n_coords`` entries are checked on a seeded
    random subset of ``n_coords`` coordinates (at least 64). Passing ``grads``
    compares those arrays instead of running backward.
    """
    n_coords = max(64, n_coords)
    if grads is None:
        params.zero_grad()
        loss_fn().backward()
        grads = {k: (np.zeros(t.shape) if t.grad is None else t.grad.copy()) for k, t in params.items()}
        params.zero_grad()

    rng = np.random.default_rng(seed)
    errs, counts = {}, {}
    with no_grad():
        for name, t in params.items():
            flat = t.data.flat
            idx = np.arange(t.size)
            if t.size > n_coords:
                idx = np.sort(rng.choice(t.size, n_coords, replace=False))
            g_ad = grads[name].reshape(-1)[idx]
            g_fd = np.empty(len(idx))
            for j, i in enumerate(idx):
                old = flat[i]
                flat[i] = old + h
                up = loss_fn().item()
                flat[i] = old - h
                down = loss_fn().item()
                flat[i] = old
                g_fd[j] = (up - down) / (2 * h)
            rel = np.abs(g_ad - g_fd) / np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))
            errs[name] = float(rel.max()) if rel.size else 0.0
            counts[name] = len(idx)
    return GradCheckReport(errs, counts, tol)
