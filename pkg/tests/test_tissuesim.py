import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import correlate1d

from vfrecon.errors import ValidationError
from vfrecon.fields import Grid2D
from vfrecon.tissuesim import (TissueParams, category_ladder, gaussian_kernel, gen_1d_example, gen_amplitude,
                               gen_phase, gen_tissue, image_manifest, image_seeds, rescale, smoothed_noise,
                               tau_ladder_1d)


def small(tau=1.0, rho=3.0, seed=0):
    return TissueParams(tau, rho, seed, gen_size=96, crop_margin=8)


def test_params_validation():
    with pytest.raises(ValidationError):
        TissueParams(-0.1, 1.0)
    with pytest.raises(ValidationError):
        TissueParams(4.0, 1.0)
    with pytest.raises(ValidationError):
        TissueParams(1.0, 0.0)
    with pytest.raises(ValidationError):
        TissueParams(1.0, 1.0, gen_size=10, crop_margin=5)
    p = TissueParams(1.0, 2.0)
    assert p.out_size == 700


def test_at_scale():
    p = TissueParams.at_scale(1.0, 14.0, 3, 128)
    assert p.out_size == 128
    assert p.rho == pytest.approx(14.0 * 128 / 700)


def test_1d_examples():
    taus = []
    for j in range(1, 9):
        x, R, P, tau = gen_1d_example(j)
        assert len(x) == 1024
        assert np.all(np.abs(np.diff(x) - 1 / 1024) < 1e-12)
        taus.append(tau)
        # no sample sits at 0; evaluate the formulas there directly
        assert np.allclose(R, np.exp(-x**2)) and np.allclose(P, tau * np.sin(20 * x))
    taus = np.array(taus)
    assert np.all(np.diff(taus) > 0) and taus[0] > 0 and taus[-1] < 2 * np.pi
    assert np.allclose(np.diff(np.log(taus)), np.log(taus[1] / taus[0]))
    with pytest.raises(ValidationError):
        gen_1d_example(9)
    with pytest.raises(ValidationError):
        tau_ladder_1d(8, 1.0, 7.0)


def test_1d_centre_and_common_zeros():
    x = np.array([0.0, np.pi / 20, -np.pi / 20])
    for j in range(1, 9):
        _, _, _, tau = gen_1d_example(j)
        P = tau * np.sin(20 * x)
        assert abs(P[0]) == 0 and np.all(np.abs(P) < 1e-14)
    _, R, _, _ = gen_1d_example(1, n_points=3)
    assert R[1] == 1.0  # middle sample at x = 0


def test_phase_zero_tau():
    assert np.all(gen_phase(small(tau=0.0)).values == 0)


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, np.pi), st.floats(0.5, 6.0), st.integers(0, 2**32))
def test_phase_range_exact(tau, rho, seed):
    P = gen_phase(small(tau, rho, seed)).values.real
    assert P.max() == tau and P.min() == -tau


def test_phase_shape_and_determinism():
    a = gen_phase(small(seed=5))
    b = gen_phase(small(seed=5))
    c = gen_phase(small(seed=6))
    assert a.grid == Grid2D.unit(80)
    assert np.array_equal(a.values, b.values) and not np.array_equal(a.values, c.values)


def test_smoothing_reduces_gradient():
    means = []
    for rho in (2, 8, 32):
        img = smoothed_noise(TissueParams(1.0, rho, 11, gen_size=256, crop_margin=10))
        gx, gy = np.diff(img, axis=1), np.diff(img, axis=0)
        means.append(np.mean(np.abs(gx)) + np.mean(np.abs(gy)))
    assert means[0] > means[1] > means[2]


@pytest.mark.parametrize("rho", [0.5, 1.0, 2.7, 8.0, 40.0])
def test_kernel_unit_mass(rho):
    k = gaussian_kernel(rho)
    assert abs(k.sum() - 1.0) <= 1e-12
    assert len(k) == 2 * (2 * int(np.ceil(2 * rho))) + 1
    assert np.allclose(k, k[::-1])


def test_filter_preserves_mean_periodic():
    rng = np.random.default_rng(0)
    img = rng.uniform(-1, 1, (64, 64))
    k = gaussian_kernel(3.0)
    out = correlate1d(correlate1d(img, k, axis=0, mode="wrap"), k, axis=1, mode="wrap")
    assert abs(out.mean() - img.mean()) <= 1e-12


def test_rescale_edge_cases():
    assert np.all(rescale(np.arange(4.0), 0.0) == 0)
    with pytest.raises(ValidationError):
        rescale(np.ones(4), 1.0)


def test_amplitude_positive_and_centre():
    g = Grid2D.unit(65)
    A = gen_amplitude(3, g)
    assert np.all(A.values.real > 0)
    centre = A.image[32, 32].real
    assert centre >= 1 / 1000


def test_amplitude_without_bumps_formula():
    g = Grid2D.unit(50)
    A = gen_amplitude(0, g, bumps=False).image.real
    rng = np.random.default_rng(1)
    for _ in range(10):
        i, j = rng.integers(0, 50, 2)
        x, y = g.x[j], g.y[i]
        assert A[i, j] == pytest.approx(np.exp(-50 * (x * x + y * y)) / 1000, rel=1e-14)


def test_amplitude_bump_parameters_in_range():
    g = Grid2D.unit(40)
    base = gen_amplitude(0, g, bumps=False).values
    extra = gen_amplitude(9, g).values - base
    assert np.all(extra.real > 0)
    assert extra.real.max() <= 5 / 2000 + 1e-15


def test_tissue_modulus_and_tau_zero():
    p = small(tau=1.2)
    F = gen_tissue(p, 4)
    R = gen_amplitude(4, F.grid).values
    assert np.allclose(np.abs(F.h.values), R.real, rtol=1e-14)
    assert np.allclose(np.abs(F.v.values), R.real, rtol=1e-14)
    assert not np.allclose(F.h.values, F.v.values)
    shared = gen_tissue(p, 4, shared_phase=True)
    assert np.array_equal(shared.h.values, shared.v.values)
    F0 = gen_tissue(small(tau=0.0), 4)
    assert np.all(F0.h.values.imag == 0) and np.all(F0.h.values.real > 0)


def test_category_ladder():
    lad = category_ladder()
    taus = np.array([t for t, _ in lad])
    inv = np.array([1 / r for _, r in lad])
    assert len(lad) == 6
    assert taus[-1] == pytest.approx(np.pi) and taus[0] > 0
    assert inv[-1] == pytest.approx(0.125) and inv[0] > 0.025
    assert np.allclose(np.diff(np.log(taus)), np.log(5) / 6)
    assert np.allclose(np.diff(np.log(inv)), np.log(5) / 6)
    rhos = 1 / inv
    assert rhos.min() >= 8 - 1e-9 and rhos.max() <= 40


def test_seeds_and_manifest():
    a = image_seeds(7, 2, 3)
    assert a == image_seeds(7, 2, 3) and a != image_seeds(7, 3, 2) and a[0] != a[1]
    m = image_manifest(small(seed=a[0]), 2, 3, a[1])
    assert m["generator"] == "numpy.PCG64" and m["v_phase_seed"] == a[0] + 1
