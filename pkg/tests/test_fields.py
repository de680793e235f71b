import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vfrecon.errors import GridMismatchError, ValidationError
from vfrecon.fields import (FieldSamples, FourierSystem, GaussianSpotSystem, Grid2D, PixelSystem,
                            SensorSamples, VectorFieldSamples, eval_basis, gram_matrix, inner_product)


def test_grid_cell_centres():
    g = Grid2D.unit(4)
    assert np.allclose(g.x, [-0.375, -0.125, 0.125, 0.375])
    assert g.cell_area == pytest.approx(1 / 16)
    with pytest.raises(ValidationError):
        Grid2D(0.5, -0.5, -0.5, 0.5, 4, 4)


def test_field_rejects_nonfinite():
    g = Grid2D.unit(2)
    with pytest.raises(ValidationError):
        FieldSamples(g, [1, 2, np.nan, 4])
    with pytest.raises(ValidationError):
        FieldSamples(g, [1, 2, 3])


def test_vector_field_grid_mismatch():
    with pytest.raises(ValidationError):
        VectorFieldSamples(FieldSamples.zeros(Grid2D.unit(2)), FieldSamples.zeros(Grid2D.unit(3)))


def test_sensor_samples_invariants():
    pts = np.array([[0.0, 0.0], [0.1, 0.0]])
    s = SensorSamples(pts, np.arange(4), npol=2)
    assert np.allclose(s.h, [0, 2]) and np.allclose(s.v, [1, 3])
    with pytest.raises(ValidationError):
        SensorSamples(pts, np.arange(3), npol=2)
    with pytest.raises(ValidationError):
        SensorSamples(np.array([[0.0, 0.0], [0.0, 0.0]]), np.arange(2), npol=1)


def test_fourier_dc_is_ones():
    g = Grid2D.unit(8, 6)
    fs = FourierSystem(16)
    dc = fs.index_pairs().tolist().index([0, 0])
    assert np.allclose(eval_basis(fs, dc, g).values, 1.0)


def test_fourier_k10_at_quarter():
    g = Grid2D(0.0, 0.5, -0.5, 0.5, 1, 3)  # single column at x = 0.25
    fs = FourierSystem(16, (-0.5, 0.5, -0.5, 0.5))
    idx = fs.index_pairs().tolist().index([1, 0])
    assert np.allclose(eval_basis(fs, idx, g).values, 1j)


def test_fourier_invalid_K():
    for K in (0, 9, 15, 17):
        with pytest.raises(ValidationError):
            FourierSystem(K)
    with pytest.raises(ValidationError):
        eval_basis(FourierSystem(4), 4, Grid2D.unit(4))


def test_gaussian_spot_peak_matches_direct_sum():
    g = Grid2D.unit(64)
    spot = GaussianSpotSystem([[0.0, 0.0]], 0.1)
    vals = eval_basis(spot, 0, g).values.real
    # independent summation over cell centres
    total = 0.0
    for yi in range(64):
        for xi in range(64):
            x = -0.5 + (xi + 0.5) / 64
            y = -0.5 + (yi + 0.5) / 64
            total += np.exp(-(x * x + y * y) / (2 * 0.01)) ** 2
    norm = np.sqrt(total / 64**2)
    # grid has no cell exactly at the origin; the four central cells share the peak
    peak_raw = np.exp(-(2 * (0.5 / 64) ** 2) / (2 * 0.01))
    assert vals.max() == pytest.approx(peak_raw / norm, rel=1e-12)
    assert np.sum(vals**2) * g.cell_area == pytest.approx(1.0, rel=1e-12)


def test_inner_product_examples():
    for n in (1, 3, 17):
        g = Grid2D.unit(n)
        one = FieldSamples(g, np.ones(g.size))
        assert inner_product(one, one) == 1.0
        assert inner_product(FieldSamples.zeros(g), one) == 0
    g = Grid2D.unit(64)
    fs = FourierSystem(36)
    pairs = fs.index_pairs().tolist()
    a = eval_basis(fs, pairs.index([1, 0]), g)
    b = eval_basis(fs, pairs.index([2, 0]), g)
    assert abs(inner_product(a, b)) < 1e-12
    with pytest.raises(GridMismatchError):
        inner_product(a, FieldSamples.zeros(Grid2D.unit(8)))


def test_gram_fourier_identity():
    G = gram_matrix(FourierSystem(16), Grid2D.unit(64))
    assert np.max(np.abs(G - np.eye(16))) < 1e-10


def test_gram_repeated_spot_singular():
    G = gram_matrix(GaussianSpotSystem([[0.1, 0.0], [0.1, 0.0], [-0.2, 0.1]], 0.05), Grid2D.unit(32))
    assert np.linalg.eigvalsh(G)[0] < 1e-12


def test_gram_spot_overlap_closed_form():
    # 2x2 lattice of pitch 0.5; spots far from the border so the domain is effectively infinite
    c = np.array([[-0.25, -0.25], [0.25, -0.25], [-0.25, 0.25], [0.25, 0.25]])
    w = 0.05
    G = gram_matrix(GaussianSpotSystem(c, w), Grid2D.unit(64))
    for i in range(4):
        for j in range(4):
            d2 = np.sum((c[i] - c[j]) ** 2)
            assert G[i, j].real == pytest.approx(np.exp(-d2 / (4 * w * w)), abs=1e-9)


def test_pixel_system_orthonormal():
    G = gram_matrix(PixelSystem(4, 2), Grid2D.unit(16))
    assert np.allclose(G, np.eye(8), atol=1e-12)


def test_gram_hermitian_and_psd():
    rng = np.random.default_rng(3)
    sp = GaussianSpotSystem(rng.uniform(-0.4, 0.4, (12, 2)), 0.07)
    G = gram_matrix(sp, Grid2D.unit(24))
    assert np.max(np.abs(G - G.conj().T)) <= 1e-14
    assert np.linalg.eigvalsh(G)[0] > -1e-12


@pytest.mark.parametrize("K", [4, 16, 36, 64])
def test_fourier_orthonormality(K):
    s = int(np.sqrt(K))
    g = Grid2D.unit(4 * s, 4 * s + 2)
    G = gram_matrix(FourierSystem(K), g)
    assert np.max(np.abs(G - np.eye(K))) <= 1e-10


def test_fourier_orthonormal_on_offset_domain():
    dom = (1.0, 3.0, -1.0, 0.5)
    g = Grid2D(*dom, 32, 24)
    G = gram_matrix(FourierSystem(16, dom), g)
    assert np.max(np.abs(G - np.eye(16))) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([4, 16, 36, 64]))
def test_parseval(seed, K):
    rng = np.random.default_rng(seed)
    g = Grid2D.unit(32)
    fs = FourierSystem(K)
    c = rng.standard_normal(K) + 1j * rng.standard_normal(K)
    f = FieldSamples(g, fs.synthesize(c, g))
    assert abs(inner_product(f, f) - np.sum(np.abs(c) ** 2)) <= 1e-10 * max(1.0, np.sum(np.abs(c) ** 2))
    assert np.allclose(fs.analyse(f.values, g), c, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 9), st.integers(1, 9))
def test_inner_product_positive(seed, nx, ny):
    rng = np.random.default_rng(seed)
    g = Grid2D.unit(nx, ny)
    f = FieldSamples(g, rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size))
    ip = inner_product(f, f)
    assert ip.imag == 0 and ip.real > 0
    h = FieldSamples(g, rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size))
    assert inner_product(f, h) == pytest.approx(np.conj(inner_product(h, f)), rel=1e-12, abs=1e-15)
