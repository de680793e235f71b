import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vfrecon.errors import GridMismatchError, ValidationError
from vfrecon.fibersim import (NoiseModel, adjoint, forward, identity_operator, make_operator, propagate,
                              sensor_lattice)
from vfrecon.fields import FieldSamples, Grid2D, VectorFieldSamples


def random_field(rng, grid):
    def one():
        return FieldSamples(grid, rng.standard_normal(grid.size) + 1j * rng.standard_normal(grid.size))
    return VectorFieldSamples(one(), one())


@pytest.fixture(scope="module")
def op():
    return make_operator(5, Grid2D.unit(8), 60, 80, decay_rate=3.0, coupling=0.3)


def test_singular_values_formula():
    op = make_operator(1, Grid2D.unit(4), 16, 16, decay_rate=4.0)
    assert op.s[15] / op.s[0] == pytest.approx(np.exp(-4 * 15 / 16), rel=1e-14)
    assert op.s[15] / op.s[0] == pytest.approx(0.0235, abs=5e-5)
    assert np.all(np.diff(op.s) <= 0) and op.s[0] > 0


def test_decay_zero_gives_unit_spectrum():
    op = make_operator(2, Grid2D.unit(4), 20, 24, decay_rate=0.0)
    assert np.all(op.s == 1.0)
    sv = np.linalg.svd(op.dense(), compute_uv=False)
    assert np.allclose(sv[:24], 1.0, atol=1e-12)
    assert np.allclose(sv[24:], 0.0, atol=1e-12)


def test_no_coupling_keeps_polarisations_apart():
    g = Grid2D.unit(6)
    op = make_operator(3, g, 30, 40, decay_rate=1.0, coupling=0.0)
    rng = np.random.default_rng(0)
    f = random_field(rng, g)
    only_h = VectorFieldSamples(f.h, FieldSamples.zeros(g))
    y = forward(op, only_h)
    assert np.max(np.abs(y[1::2])) == 0.0
    assert np.max(np.abs(y[0::2])) > 0


def test_coupling_mixes_polarisations():
    g = Grid2D.unit(6)
    op = make_operator(3, g, 30, 40, decay_rate=1.0, coupling=1.0)
    f = random_field(np.random.default_rng(0), g)
    y = forward(op, VectorFieldSamples(f.h, FieldSamples.zeros(g)))
    assert np.linalg.norm(y[1::2]) > 0.1 * np.linalg.norm(y[0::2])


def test_dimension_checks():
    g = Grid2D.unit(4)
    with pytest.raises(ValidationError):
        make_operator(0, g, 4, 9)
    with pytest.raises(ValidationError):
        make_operator(0, g, 10, 4, decay_rate=-1)
    with pytest.raises(ValidationError):
        make_operator(0, g, 10, 4, coupling=1.5)
    with pytest.raises(ValidationError):
        NoiseModel(-0.1)


def test_deterministic():
    a = make_operator(9, Grid2D.unit(5), 12, 10, 2.0, 0.5)
    b = make_operator(9, Grid2D.unit(5), 12, 10, 2.0, 0.5)
    c = make_operator(10, Grid2D.unit(5), 12, 10, 2.0, 0.5)
    assert np.array_equal(a.U, b.U) and np.array_equal(a.V, b.V)
    assert not np.array_equal(a.U, c.U)
    f = random_field(np.random.default_rng(1), a.in_grid)
    n = NoiseModel(0.1, 4)
    assert np.array_equal(propagate(a, f, n).values, propagate(b, f, n).values)


def test_zero_input(op):
    y = propagate(op, VectorFieldSamples.zeros(op.in_grid))
    assert y.npol == 2 and np.all(y.values == 0)


def test_linearity(op):
    rng = np.random.default_rng(7)
    f1, f2 = random_field(rng, op.in_grid), random_field(rng, op.in_grid)
    al = 2 - 3j
    lhs = propagate(op, f1 * al + f2).values
    rhs = al * propagate(op, f1).values + propagate(op, f2).values
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)


def test_identity_embedding():
    g = Grid2D.unit(5, 3)
    op = identity_operator(g)
    f = random_field(np.random.default_rng(2), g)
    y = propagate(op, f)
    assert np.allclose(y.h, f.h.values * g.cell_area, rtol=0, atol=1e-15)
    assert np.allclose(y.v, f.v.values * g.cell_area, rtol=0, atol=1e-15)
    assert np.array_equal(y.points, g.points())


def test_grid_mismatch(op):
    with pytest.raises(GridMismatchError):
        propagate(op, VectorFieldSamples.zeros(Grid2D.unit(3)))


def test_noise_scale():
    g = Grid2D.unit(16)
    op = make_operator(1, g, 400, 200, 0.0)
    f = random_field(np.random.default_rng(3), g)
    clean = forward(op, f)
    noisy = propagate(op, f, NoiseModel(0.2, 11)).values
    rms = np.sqrt(np.mean(np.abs(clean) ** 2))
    assert np.std(noisy - clean) / rms == pytest.approx(0.2, rel=0.1)


def test_sensor_lattice_distinct():
    p = sensor_lattice(37)
    assert len(p) == 37 and len(np.unique(p, axis=0)) == 37


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_adjoint_identity(seed, coupling):
    g = Grid2D.unit(5, 4)
    op = make_operator(seed, g, 17, 20, decay_rate=2.0, coupling=coupling)
    rng = np.random.default_rng(seed)
    f = random_field(rng, g)
    y = rng.standard_normal(34) + 1j * rng.standard_normal(34)
    lhs = np.vdot(y, forward(op, f))
    Ty = adjoint(op, y)
    rhs = np.vdot(Ty.interleaved(), f.interleaved()) * g.cell_area
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1e-300) + 1e-14


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_norm_bound(seed):
    g = Grid2D.unit(4)
    op = make_operator(seed, g, 10, 12, decay_rate=1.0, coupling=0.7)
    f = random_field(np.random.default_rng(seed), g)
    assert np.linalg.norm(forward(op, f)) <= op.s[0] * np.linalg.norm(f.interleaved()) * g.cell_area * (1 + 1e-12)
