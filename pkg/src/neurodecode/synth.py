"""Class-conditional synthetic EEG: band-limited carriers on channel groups plus band-limited noise."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import EegRecording, split_grouped
from .params import rng_stream


@dataclass(frozen=True)
class SignatureTerm:
    channels: tuple[int, ...]
    freq: float  # Hz
    amplitude: float


@dataclass
class SyntheticSpec:
    n_classes: int
    images_per_class: int
    n_subjects: int
    noise_std: float = 1.0
    seed: int = 0
    n_channels: int = 128
    n_samples: int = 440
    sample_rate: float = 1000.0
    band: tuple[float, float] = (5.0, 95.0)
    group_size: int = 8
    terms_per_class: int = 2
    amplitude: float = 1.0
    disjoint_groups: bool = True
    signatures: list[list[SignatureTerm]] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if min(self.images_per_class, self.n_subjects) < 1:
            raise ValueError("images_per_class and n_subjects must be positive")
        lo, hi = self.band
        if not 0 < lo < hi < self.sample_rate / 2:
            raise ValueError(f"band {self.band} must lie inside (0, Nyquist)")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.signatures is not None:
            self.signatures = [[SignatureTerm(tuple(t.channels), float(t.freq), float(t.amplitude))
                                if isinstance(t, SignatureTerm) else SignatureTerm(tuple(t[0]), float(t[1]), float(t[2]))
                                for t in terms] for terms in self.signatures]
            for terms in self.signatures:
                for t in terms:
                    if not lo <= t.freq <= hi:
                        raise ValueError(f"carrier {t.freq} Hz outside band {self.band}")

    def band_bins(self) -> np.ndarray:
        """DFT bin indices of the recording length whose frequency lies in the band."""
        freqs = np.fft.rfftfreq(self.n_samples, 1.0 / self.sample_rate)
        lo, hi = self.band
        return np.flatnonzero((freqs >= lo) & (freqs <= hi))


def class_signatures(spec: SyntheticSpec) -> list[list[SignatureTerm]]:
    """Per-class carrier terms; carriers sit on exact DFT bins so they never leak out of band."""
    if spec.signatures is not None:
        if len(spec.signatures) != spec.n_classes:
            raise ValueError("explicit signatures must list one entry per class")
        return spec.signatures
    rng = rng_stream(spec.seed, "signatures")
    bins = spec.band_bins()
    step = spec.sample_rate / spec.n_samples
    needed = spec.n_classes * spec.terms_per_class * spec.group_size
    if spec.disjoint_groups and needed > spec.n_channels:
        raise ValueError(f"disjoint groups need {needed} channels, only {spec.n_channels} available")
    order = rng.permutation(spec.n_channels)
    out = []
    for c in range(spec.n_classes):
        terms = []
        for k in range(spec.terms_per_class):
            if spec.disjoint_groups:
                g = (c * spec.terms_per_class + k) * spec.group_size
                chans = np.sort(order[g : g + spec.group_size])
            else:
                chans = np.sort(rng.choice(spec.n_channels, spec.group_size, replace=False))
            freq = float(rng.choice(bins) * step)
            terms.append(SignatureTerm(tuple(int(i) for i in chans), freq, spec.amplitude))
        out.append(terms)
    return out


def band_noise(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise with all spectral content outside the band removed, scaled to ``noise_std``."""
    n = spec.n_samples
    white = rng.standard_normal((spec.n_channels, n))
    spec_f = np.fft.rfft(white, axis=1)
    keep = np.zeros(spec_f.shape[1], dtype=bool)
    keep[spec.band_bins()] = True
    spec_f[:, ~keep] = 0.0
    # band excludes DC and Nyquist, so each kept bin carries 2/n of the variance
    scale = np.sqrt(n / (2.0 * keep.sum()))
    return np.fft.irfft(spec_f, n=n, axis=1) * scale * spec.noise_std


def synth_generate(spec: SyntheticSpec) -> list[EegRecording]:
    """Recordings ordered by class, then image, then subject; samples rounded to float32."""
    sigs = class_signatures(spec)
    t = np.arange(spec.n_samples) / spec.sample_rate
    phase_rng = rng_stream(spec.seed, "phases")
    phases = phase_rng.uniform(0, 2 * np.pi, size=(spec.n_subjects, spec.n_classes, max(len(s) for s in sigs)))

    templates = {}
    for s in range(spec.n_subjects):
        for c, terms in enumerate(sigs):
            x = np.zeros((spec.n_channels, spec.n_samples))
            for k, term in enumerate(terms):
                x[list(term.channels)] += term.amplitude * np.sin(2 * np.pi * term.freq * t + phases[s, c, k])
            templates[s, c] = x

    recs = []
    for c in range(spec.n_classes):
        for j in range(spec.images_per_class):
            image_id = c * spec.images_per_class + j
            for s in range(spec.n_subjects):
                x = templates[s, c]
                if spec.noise_std > 0:
                    x = x + band_noise(spec, rng_stream(spec.seed, "noise", s, image_id))
                recs.append(EegRecording(x.astype(np.float32), s, c, image_id))
    return recs


def channel_energy(recs) -> np.ndarray:
    """Mean squared amplitude per channel, one row per recording."""
    return np.stack([np.mean(np.asarray(r.samples, dtype=np.float64) ** 2, axis=1) for r in recs])


def energy_probe_accuracy(train_recs, test_recs, n_classes: int, ridge: float = 1.0) -> float:
    """Accuracy of a ridge-regression linear probe on per-channel energies.

    Features are standardized on the training set and the penalty is
    ``ridge * n_train``. A weak penalty overfits badly when the number of
    training recordings is close to the channel count.
    """
    def feats(recs):
        e = channel_energy(recs)
        return np.hstack([e, np.ones((len(e), 1))])

    xtr = feats(train_recs)
    y = np.eye(n_classes)[[r.class_id for r in train_recs]]
    mu = xtr[:, :-1].mean(axis=0)
    sd = xtr[:, :-1].std(axis=0) + 1e-12
    xtr[:, :-1] = (xtr[:, :-1] - mu) / sd
    w = np.linalg.solve(xtr.T @ xtr + ridge * len(xtr) * np.eye(xtr.shape[1]), xtr.T @ y)
    xte = feats(test_recs)
    xte[:, :-1] = (xte[:, :-1] - mu) / sd
    pred = np.argmax(xte @ w, axis=1)
    return float(np.mean(pred == np.array([r.class_id for r in test_recs])))


def probe_accuracy_over_splits(spec: SyntheticSpec, fractions=(0.8, 0.1, 0.1), split_seeds=range(8),
                               ridge: float = 1.0) -> tuple[float, float]:
    """Energy-probe accuracy averaged over grouped splits of one generated dataset.

    The probe trains on the training part and scores the validation and test
    parts together. Returns (mean, standard deviation) across split seeds.
    """
    recs = synth_generate(spec)
    accs = []
    for s in split_seeds:
        sp = split_grouped(recs, fractions, seed=s)
        held = sp.validation + sp.test
        accs.append(energy_probe_accuracy([recs[i] for i in sp.train], [recs[i] for i in held],
                                          spec.n_classes, ridge))
    return float(np.mean(accs)), float(np.std(accs))
