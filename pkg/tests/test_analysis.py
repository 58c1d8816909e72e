import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurodecode.analysis import (
    ElectrodeLayout,
    class_channel_means,
    class_mean_topomap,
    embeddings_csv,
    extract_embeddings,
    idw_grid,
    nearest_cell,
    pca_2d,
    ring_layout,
    topomap_csv,
    topomap_svg,
)
from neurodecode.data import EegRecording, WindowSet
from neurodecode.model import EegDecoder, ModelConfig
from neurodecode.synth import SyntheticSpec, class_signatures, synth_generate

TINY = dict(n_channels=8, win_len=60, n_filters=4, kernel_w=7, lstm_hidden=6, dense_hidden=10)


def window_set(n_per_class, k, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(k), n_per_class)
    n = len(y)
    return WindowSet(rng.standard_normal((n, 8, 60)), y, np.arange(n) // 11, np.arange(n) % 11,
                     [f"0:{i}" for i in range((n + 10) // 11)])


# -- layout -------------------------------------------------------------------
def test_ring_layout():
    lay = ring_layout()
    assert lay.xy.shape == (128, 2)
    r = np.round(np.hypot(lay.xy[:, 0], lay.xy[:, 1]), 12)
    assert [int(np.sum(r == v)) for v in (0.25, 0.5, 0.75, 0.95)] == [16, 32, 48, 32]


def test_layout_outside_disk_rejected():
    with pytest.raises(ValueError):
        ElectrodeLayout([[0.9, 0.9]])


# -- embeddings ----------------------------------------------------------------
def test_extract_embeddings_counts_and_determinism():
    m = EegDecoder(ModelConfig(head="bilstm", n_classes=10, **TINY), seed=0)
    ws = window_set(120, 10)
    a = extract_embeddings(m, ws, 100, seed=3)
    assert len(a) == 1000
    assert {r.vector.shape for r in a} == {(12,)}
    b = extract_embeddings(m, ws, 100, seed=3)
    assert [(r.rec_id, r.window) for r in a] == [(r.rec_id, r.window) for r in b]
    assert extract_embeddings(m, ws, 0) == []


def test_extract_embeddings_short_class_takes_all(caplog):
    m = EegDecoder(ModelConfig(head="bilstm", n_classes=2, **TINY), seed=0)
    ws = window_set(5, 2)
    recs = extract_embeddings(m, ws, 100)
    assert len(recs) == 10
    assert "taking all" in caplog.text


def test_embeddings_csv_header():
    m = EegDecoder(ModelConfig(head="transformer", n_classes=2, d_model=8, n_heads=2, d_ff=8, **TINY), seed=0)
    recs = extract_embeddings(m, window_set(3, 2), 2)
    lines = embeddings_csv(recs).splitlines()
    d = m.config.embed_dim
    assert lines[0].split(",") == ["rec_id", "window", "class"] + [f"e{i}" for i in range(d)]
    assert len(lines) == 5 and all(len(l.split(",")) == d + 3 for l in lines)
    row = lines[1].split(",")
    assert float(row[3]) == recs[0].vector[0]


# -- PCA ---------------------------------------------------------------------
def test_pca_plane_exact():
    rng = np.random.default_rng(0)
    basis = np.linalg.qr(rng.standard_normal((10, 2)))[0].T
    coef = rng.standard_normal((50, 2)) * [3.0, 1.0]
    x = coef @ basis + 5.0
    p = pca_2d(x)
    recon = p.coords @ p.components + x.mean(axis=0)
    np.testing.assert_allclose(recon, x, atol=1e-9)
    np.testing.assert_allclose(p.components @ p.components.T, np.eye(2), atol=1e-8)
    assert p.explained_ratio == pytest.approx(1.0)


def test_pca_matches_full_eigendecomposition():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((400, 6)) * np.array([5, 3, 1, 1, 0.5, 0.2])
    p = pca_2d(x)
    xc = x - x.mean(axis=0)
    w, v = np.linalg.eigh(xc.T @ xc / len(x))
    np.testing.assert_allclose(p.explained, w[::-1][:2], rtol=1e-9)
    for j in range(2):
        assert abs(abs(p.components[j] @ v[:, -1 - j]) - 1) < 1e-8


def test_pca_isotropic_ratio():
    d = 8
    x = np.random.default_rng(2).standard_normal((20000, d))
    p = pca_2d(x)
    xc = x - x.mean(axis=0)
    w = np.linalg.eigvalsh(xc.T @ xc / len(x))
    assert p.explained_ratio == pytest.approx(w[-2:].sum() / w.sum(), rel=1e-8)
    assert p.explained_ratio == pytest.approx(2 / d, abs=0.03)


def test_pca_duplicates_and_rank_one():
    x = np.array([[1.0, 2.0, 3.0]] * 3 + [[2.0, 4.0, 6.0]] * 2)
    p = pca_2d(x)
    np.testing.assert_array_equal(p.coords[0], p.coords[1])
    np.testing.assert_array_equal(p.components[1], 0)
    assert p.explained_ratio == pytest.approx(1.0)


def test_pca_order_invariant_up_to_sign():
    x = np.random.default_rng(3).standard_normal((30, 5)) * [4, 2, 1, 1, 1]
    perm = np.random.default_rng(4).permutation(30)
    a, b = pca_2d(x), pca_2d(x[perm])
    np.testing.assert_allclose(np.abs(b.coords), np.abs(a.coords[perm]), atol=1e-8)


def test_pca_needs_three_records():
    with pytest.raises(ValueError):
        pca_2d(np.zeros((2, 3)))


# -- topomaps ------------------------------------------------------------------
def rec_from_levels(levels, n_samples=10):
    x = np.repeat(np.asarray(levels, dtype=np.float64)[:, None], n_samples, axis=1)
    x[:, ::2] *= -1  # sign flips must not matter for |amplitude|
    return EegRecording(x, 0, 0, 0)


def test_single_active_channel_peaks_at_its_cell():
    lay = ring_layout()
    for ch in (0, 20, 70, 127):
        levels = np.zeros(128)
        levels[ch] = 1.0
        (tm,) = class_mean_topomap({0: [rec_from_levels(levels)]}, lay)
        peak = np.unravel_index(np.nanargmax(tm.values), tm.values.shape)
        # an electrode on a cell border is equally near two centres
        c = -1 + (np.arange(64) + 0.5) / 32
        d = np.hypot(c[peak[1]] - lay.xy[ch, 0], c[peak[0]] - lay.xy[ch, 1])
        r, k = nearest_cell(lay.xy[ch], 64)
        assert d == pytest.approx(np.hypot(c[k] - lay.xy[ch, 0], c[r] - lay.xy[ch, 1]), abs=1e-12)
        assert abs(peak[0] - r) <= 1 and abs(peak[1] - k) <= 1


def test_constant_amplitude_flat():
    (tm,) = class_mean_topomap({0: [rec_from_levels(np.full(128, 2.5))]}, ring_layout())
    vals = tm.values[tm.mask]
    assert np.max(np.abs(vals - 2.5)) < 1e-6
    assert np.isnan(tm.values[~tm.mask]).all()


def test_mask_is_unit_disk():
    _, mask = idw_grid(np.ones(128), ring_layout(), 64)
    c = -1 + (np.arange(64) + 0.5) / 32
    gx, gy = np.meshgrid(c, c)
    assert np.array_equal(mask, np.hypot(gx, gy) <= 1)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(0.01, 100), seed=st.integers(0, 1000))
def test_topomap_linear_in_scale(a, seed):
    levels = np.random.default_rng(seed).uniform(0, 1, 128)
    lay = ring_layout()
    (t1,) = class_mean_topomap({0: [rec_from_levels(levels)]}, lay, grid=16)
    (t2,) = class_mean_topomap({0: [rec_from_levels(a * levels)]}, lay, grid=16)
    np.testing.assert_allclose(t2.values[t2.mask], a * t1.values[t1.mask], rtol=1e-9)


def test_disjoint_signatures_have_different_peaks():
    spec = SyntheticSpec(2, 3, 1, noise_std=0.1, seed=0)
    recs = synth_generate(spec)
    maps = class_mean_topomap({c: [r for r in recs if r.class_id == c] for c in (0, 1)}, ring_layout())
    peaks = [np.unravel_index(np.nanargmax(m.values), m.values.shape) for m in maps]
    assert peaks[0] != peaks[1]
    sigs = class_signatures(spec)
    for c, m in enumerate(maps):
        top = int(np.argmax(m.electrode_values))
        assert top in {ch for t in sigs[c] for ch in t.channels}


def test_channel_means_empty_class():
    with pytest.raises(ValueError):
        class_channel_means([])


def test_svg_and_csv_outputs():
    (tm,) = class_mean_topomap({3: [rec_from_levels(np.linspace(0, 1, 128))]}, ring_layout(), grid=8)
    svg = topomap_svg(tm, ring_layout())
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert "min 0" in svg and "max " in svg and "class 3" in svg
    rows = topomap_csv(tm).splitlines()
    assert len(rows) == 8 and all(len(r.split(",")) == 8 for r in rows)
