"""Recordings, per-channel normalization, overlapping windows and grouped splits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .params import rng_stream

N_CHANNELS = 128
N_SAMPLES = 440
WIN_LEN = 220
OVERLAP = 0.9


class DataError(ValueError):
    """Malformed recordings or datasets."""


@dataclass(eq=False)
class EegRecording:
    samples: np.ndarray  # channels x time
    subject_id: int
    class_id: int
    image_id: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 2:
            raise DataError(f"samples must be channels x time, got shape {self.samples.shape}")
        if self.class_id < 0:
            raise DataError("class_id must be non-negative")

    @property
    def rec_id(self) -> str:
        return f"{self.subject_id}:{self.image_id}"

    def same_as(self, other: "EegRecording") -> bool:
        return (
            (self.subject_id, self.class_id, self.image_id)
            == (other.subject_id, other.class_id, other.image_id)
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
        )


def validate_recordings(
    recs: Sequence[EegRecording], n_classes: int, n_channels: int = N_CHANNELS, n_samples: int = N_SAMPLES
) -> None:
    for r in recs:
        if r.samples.shape != (n_channels, n_samples):
            raise DataError(
                f"recording {r.rec_id}: expected {n_channels}x{n_samples}, got {r.samples.shape}"
            )
        if r.class_id >= n_classes:
            raise DataError(f"recording {r.rec_id}: class {r.class_id} >= K={n_classes}")


@dataclass(eq=False)
class WindowSample:
    samples: np.ndarray
    class_id: int
    parent: tuple[int, int]  # (subject_id, image_id)
    window_index: int


@dataclass
class DatasetSplit:
    train: list[int]
    validation: list[int]
    test: list[int]
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def part(self, name: str) -> list[int]:
        return {"train": self.train, "val": self.validation, "validation": self.validation, "test": self.test}[name]


def zscore(rec: EegRecording) -> EegRecording:
    """Per-channel zero mean, unit population std."""
    x = np.asarray(rec.samples, dtype=np.float64)
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    flat = np.flatnonzero(sd[:, 0] < 1e-12)
    if flat.size:
        raise DataError(f"recording {rec.rec_id}: constant channel(s) {flat[:8].tolist()}")
    return EegRecording((x - mu) / sd, rec.subject_id, rec.class_id, rec.image_id)


def window_stride(win_len: int = WIN_LEN, overlap: float = OVERLAP) -> int:
    stride = int(round(win_len * (1.0 - overlap)))
    if stride < 1:
        raise ValueError(f"overlap {overlap} leaves no forward step for window length {win_len}")
    return stride


def window_starts(length: int, win_len: int = WIN_LEN, overlap: float = OVERLAP) -> list[int]:
    if win_len > length:
        raise DataError(f"window length {win_len} exceeds signal length {length}")
    stride = window_stride(win_len, overlap)
    count = (length - win_len) // stride + 1
    return [i * stride for i in range(count)]


def make_windows(rec: EegRecording, win_len: int = WIN_LEN, overlap: float = OVERLAP) -> list[WindowSample]:
    """Slice a recording into overlapping windows; a trailing partial window is dropped."""
    starts = window_starts(rec.samples.shape[1], win_len, overlap)
    return [
        WindowSample(rec.samples[:, s : s + win_len], rec.class_id, (rec.subject_id, rec.image_id), i)
        for i, s in enumerate(starts)
    ]


@dataclass
class WindowSet:
    """Stacked windows ready for batched forward passes."""

    x: np.ndarray  # n x channels x win_len
    y: np.ndarray  # n
    rec: np.ndarray  # n, index of the parent recording
    window: np.ndarray  # n
    rec_ids: list[str] = field(default_factory=list)  # rec index -> "subject:image"

    def __len__(self) -> int:
        return len(self.y)

    def take(self, idx) -> "WindowSet":
        return WindowSet(self.x[idx], self.y[idx], self.rec[idx], self.window[idx], self.rec_ids)


def build_windows(
    recs: Sequence[EegRecording], win_len: int = WIN_LEN, overlap: float = OVERLAP, normalize: bool = True
) -> WindowSet:
    xs, ys, rs, ws = [], [], [], []
    for i, r in enumerate(recs):
        r = zscore(r) if normalize else r
        for w in make_windows(r, win_len, overlap):
            xs.append(np.asarray(w.samples, dtype=np.float64))
            ys.append(w.class_id)
            rs.append(i)
            ws.append(w.window_index)
    n_ch = recs[0].samples.shape[0] if recs else 0
    return WindowSet(
        np.stack(xs) if xs else np.zeros((0, n_ch, win_len)),
        np.array(ys, dtype=np.int64),
        np.array(rs, dtype=np.int64),
        np.array(ws, dtype=np.int64),
        [r.rec_id for r in recs],
    )


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    raw = [n * f for f in fractions]
    counts = [int(np.floor(v)) for v in raw]
    rest = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:rest]:
        counts[i] += 1
    # every split keeps at least one group
    for i in range(len(counts)):
        if counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_grouped(
    recs: Sequence[EegRecording], fractions=(0.8, 0.1, 0.1), seed: int = 0
) -> DatasetSplit:
    """Partition recordings by image so all subjects' trials of one image share a split.

    Within each class the image groups are shuffled with ``seed`` and allotted
    by largest-remainder rounding; every class lands in all three splits.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three values summing to 1, got {fractions}")
    by_class: dict[int, dict[int, list[int]]] = {}
    for i, r in enumerate(recs):
        by_class.setdefault(r.class_id, {}).setdefault(r.image_id, []).append(i)

    parts: tuple[list[int], list[int], list[int]] = ([], [], [])
    for cls in sorted(by_class):
        images = sorted(by_class[cls])
        if len(images) < 3:
            raise DataError(f"class {cls} has {len(images)} distinct images; need at least 3")
        order = rng_stream(seed, "split", cls).permutation(len(images))
        counts = _allocate(len(images), fractions)
        pos = 0
        for part, c in zip(parts, counts):
            for k in order[pos : pos + c]:
                part.extend(by_class[cls][images[k]])
            pos += c
    return DatasetSplit(*(sorted(p) for p in parts), fractions=tuple(fractions))
