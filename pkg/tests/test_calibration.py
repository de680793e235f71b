import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vfrecon.calibration import (PhaseShiftScheme, assemble_scalar, assemble_vector, change_of_basis,
                                 load_calibration, make_spot_calibration, polarisation_blocks,
                                 run_calibration, save_calibration, spot_lattice)
from vfrecon.errors import IllConditionedError, SchemeError, ValidationError
from vfrecon.fibersim import NoiseModel, forward, make_operator, propagate
from vfrecon.fields import FieldSamples, FourierSystem, Grid2D, SensorSamples, VectorFieldSamples, eval_basis
from vfrecon.solvers import SolverConfig, solve

GRID = Grid2D.unit(16)


@pytest.fixture(scope="module")
def op():
    return make_operator(21, GRID, 200, 300, decay_rate=2.0, coupling=0.5)


@pytest.fixture(scope="module")
def spots():
    return make_spot_calibration(25, GRID, 0.06)


def test_scheme_constants():
    two = PhaseShiftScheme.two()
    assert two.b == pytest.approx(-1)
    assert two.a == pytest.approx(0.5)
    three = PhaseShiftScheme.three()
    assert three.b + three.c == pytest.approx(-1)
    assert three.a == pytest.approx(2 / 3)
    w_h, w_v = two.weights()
    assert np.allclose(w_h, [0.5, 0.5]) and np.allclose(w_v, [0.5, -0.5])


def test_scheme_constraints():
    for beta in (0.0, 2 * np.pi, -1.0):
        with pytest.raises(SchemeError):
            PhaseShiftScheme.two(beta)
    with pytest.raises(SchemeError):
        PhaseShiftScheme.three(0.0, 0.0)  # b + c = 2
    with pytest.raises(SchemeError):
        PhaseShiftScheme.three(1.0, 1.0)  # c = b
    s = PhaseShiftScheme.three(1.0, 2.5)
    assert PhaseShiftScheme.from_description(s.describe()) == s


def test_spot_lattice_examples():
    assert np.allclose(spot_lattice(1), [[0.0, 0.0]])
    assert np.allclose(sorted(map(tuple, spot_lattice(4))),
                       sorted([(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)]))
    assert len(spot_lattice(936)) == 936
    assert len(np.unique(spot_lattice(936), axis=0)) == 936


def test_spot_calibration_properties():
    cal = make_spot_calibration(9, GRID, 0.08, layout_seed=4, jitter=0.3)
    assert len(cal) == 9
    for h, v in cal:
        assert h is v
        assert np.sum(np.abs(h.values) ** 2) * GRID.cell_area == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValidationError):
        make_spot_calibration(400, GRID, 0.5)
    with pytest.raises(ValidationError):
        make_spot_calibration(0, GRID, 0.1)


def test_record_structure(op, spots):
    two = run_calibration(op, spots, PhaseShiftScheme.two())
    three = run_calibration(op, spots, PhaseShiftScheme.three())
    assert sorted(two.outputs) == ["A", "B"] and sorted(three.outputs) == ["A", "B", "C"]
    assert two.outputs["A"].shape == (2 * op.n_sensors, 25)


def test_b_negates_v_input(op, spots):
    # the B_m input is [E; bE]; with b=-1 its response is forward([E; -E])
    cal = run_calibration(op, spots, PhaseShiftScheme.two(np.pi))
    E = spots[3][0]
    direct = forward(op, VectorFieldSamples(E, E * -1))
    assert np.allclose(cal.outputs["B"][:, 3], direct, rtol=0, atol=1e-14)


def test_block_diagonal_h_channel_unchanged(spots):
    op = make_operator(2, GRID, 100, 120, 1.0, coupling=0.0)
    cal = run_calibration(op, spots, PhaseShiftScheme.two())
    assert np.array_equal(cal.outputs["A"][0::2], cal.outputs["B"][0::2])


@pytest.mark.parametrize("scheme", [PhaseShiftScheme.two(), PhaseShiftScheme.two(2.0),
                                    PhaseShiftScheme.three(), PhaseShiftScheme.three(0.7, 3.9)])
def test_decomposition_identity(op, spots, scheme):
    cal = run_calibration(op, spots, scheme)
    E_h, E_v = polarisation_blocks(cal)
    zero = FieldSamples.zeros(GRID)
    for m, (eh, ev) in enumerate(spots):
        ref_h = forward(op, VectorFieldSamples(eh, zero))
        ref_v = forward(op, VectorFieldSamples(zero, ev))
        assert np.linalg.norm(E_h[:, m] - ref_h) <= 1e-12 * np.linalg.norm(ref_h)
        assert np.linalg.norm(E_v[:, m] - ref_v) <= 1e-12 * np.linalg.norm(ref_v)
    if scheme.variant == "two":
        diff = cal.outputs["A"] - cal.outputs["B"]
        for m, (_, ev) in enumerate(spots):
            ref = (1 - scheme.b) * forward(op, VectorFieldSamples(zero, ev))
            assert np.linalg.norm(diff[:, m] - ref) <= 1e-12 * np.linalg.norm(ref)


def _column_noise(op, spots, scheme, seeds):
    clean = polarisation_blocks(run_calibration(op, spots, scheme))
    dev = []
    for s in seeds:
        noisy = polarisation_blocks(run_calibration(op, spots, scheme, NoiseModel(0.1, s)))
        dev.append(np.concatenate([(noisy[0] - clean[0]).ravel(), (noisy[1] - clean[1]).ravel()]))
    return np.std(np.concatenate(dev))


def test_three_shift_reduces_column_noise(spots):
    # equal noise per record; three-shift wins when |1 - (b + c)/2|^2 > 3, which the
    # default cube-root angles do not satisfy
    op = make_operator(8, GRID, 60, 80, 1.0, coupling=0.0)
    sub = spots[:4]
    two = PhaseShiftScheme.two()
    three = PhaseShiftScheme.three(0.9 * np.pi, 1.1 * np.pi)
    seeds = range(100)
    s2 = _column_noise(op, sub, two, seeds)
    s3 = _column_noise(op, sub, three, seeds)
    assert s3 <= s2
    gain2 = sum(two.noise_gain()) / 2
    gain3 = sum(three.noise_gain()) / 2
    assert (s3 / s2) ** 2 == pytest.approx(gain3 / gain2, rel=0.05)


def test_change_of_basis_identity(spots):
    bc = change_of_basis([p[0] for p in spots], [p[0] for p in spots], GRID)
    assert np.max(np.abs(bc.H - np.eye(25))) < 1e-10
    assert np.max(bc.residuals) < 1e-10


def test_change_of_basis_sum_target(spots):
    E = [p[0] for p in spots]
    bc = change_of_basis(E, [E[0] + E[1]], GRID)
    expected = np.zeros(25)
    expected[:2] = 1
    assert np.max(np.abs(bc.H[:, 0] - expected)) < 1e-10


def test_change_of_basis_fourier_against_lstsq():
    grid = Grid2D.unit(64)
    cal = make_spot_calibration(100, grid, 0.05)
    E = [p[0] for p in cal]
    fs = FourierSystem(64)
    targets = [eval_basis(fs, k, grid) for k in range(64)]
    bc = change_of_basis(E, targets, grid)
    # oracle: least squares on the sampled functions with quadrature weights
    B = np.array([e.values for e in E]).T * np.sqrt(grid.cell_area)
    T = np.array([t.values for t in targets]).T * np.sqrt(grid.cell_area)
    H_ref = np.linalg.lstsq(B, T, rcond=None)[0]
    assert np.max(np.abs(bc.H - H_ref)) < 1e-8 * np.max(np.abs(H_ref))
    assert np.allclose(bc.residuals, np.linalg.norm(T - B @ H_ref, axis=0), atol=1e-10)


@pytest.mark.xfail(strict=True, reason="spots confined to the domain leave edge residuals of 0.1-0.5; "
                                       "see decisions ledger")
def test_change_of_basis_fourier_residual_threshold():
    grid = Grid2D.unit(64)
    E = [p[0] for p in make_spot_calibration(100, grid, 0.05)]
    fs = FourierSystem(64)
    bc = change_of_basis(E, [eval_basis(fs, k, grid) for k in range(64)], grid)
    assert np.max(bc.residuals) < 0.05


def test_change_of_basis_singular_gram():
    E = make_spot_calibration(4, GRID, 0.1)
    inputs = [E[0][0], E[1][0], E[0][0]]
    with pytest.raises(IllConditionedError) as info:
        change_of_basis(inputs, inputs, GRID)
    assert "singular value" in str(info.value)


def test_scaling_invariance(op, spots):
    s = 0.3 - 1.7j
    fs = FourierSystem(16)
    targets = [eval_basis(fs, k, GRID) for k in range(16)]
    cal1 = run_calibration(op, spots, PhaseShiftScheme.two())
    scaled = [(h * s, v * s) for h, v in spots]
    cal2 = run_calibration(op, scaled, PhaseShiftScheme.two())
    H1 = change_of_basis([p[0] for p in spots], targets, GRID).H
    H2 = change_of_basis([p[0] for p in scaled], targets, GRID).H
    A1 = polarisation_blocks(cal1)[0] @ H1
    A2 = polarisation_blocks(cal2)[0] @ H2
    assert np.max(np.abs(A1 - A2)) <= 1e-10 * np.max(np.abs(A1))


def test_assemble_scalar():
    rng = np.random.default_rng(0)
    E = rng.standard_normal((30, 5)) + 1j * rng.standard_normal((30, 5))
    g = rng.standard_normal(30) + 1j * rng.standard_normal(30)
    sys_ = assemble_scalar(E, np.eye(5), g)
    assert np.array_equal(sys_.matrix, E)
    one = assemble_scalar(E, np.eye(5)[:, :1], g)
    f = solve(one, SolverConfig("least_squares")).coefficients
    assert f[0] == pytest.approx(np.vdot(E[:, 0], g) / np.vdot(E[:, 0], E[:, 0]), rel=1e-12)
    zero = assemble_scalar(E, np.eye(5), np.zeros(30))
    for method, lam in (("tikhonov", 0.1), ("l1", 0.1)):
        assert np.all(solve(zero, SolverConfig(method, lam)).coefficients == 0)
    with pytest.raises(ValidationError):
        assemble_scalar(E, np.eye(4), g)


def test_assemble_vector_roundtrip(op, spots):
    cal = run_calibration(op, spots, PhaseShiftScheme.three())
    rng = np.random.default_rng(5)
    coef = rng.standard_normal(50) + 1j * rng.standard_normal(50)
    B = np.array([p[0].values for p in spots])
    truth = VectorFieldSamples(FieldSamples(GRID, coef[:25] @ B), FieldSamples(GRID, coef[25:] @ B))
    g = propagate(op, truth)
    I = np.eye(25)
    sys_ = assemble_vector(cal, I, I, g)
    assert sys_.shape == (2 * op.n_sensors, 50)
    rep = solve(sys_, SolverConfig("least_squares"))
    assert np.linalg.norm(rep.coefficients - coef) <= 1e-8 * np.linalg.norm(coef)
    bad = SensorSamples(g.points + 0.001, g.values, npol=2)
    with pytest.raises(ValidationError):
        assemble_vector(cal, I, I, bad)
    with pytest.raises(ValidationError):
        assemble_vector(cal, I[:3], I, g)


def test_calibration_persistence(tmp_path, op, spots):
    cal = run_calibration(op, spots[:5], PhaseShiftScheme.three(), NoiseModel(0.01, 3))
    save_calibration(cal, tmp_path / "cal", {"note": 1})
    back = load_calibration(tmp_path / "cal")
    assert back.scheme == cal.scheme and back.M == 5
    for k in cal.outputs:
        assert np.array_equal(back.outputs[k], cal.outputs[k])
    assert np.array_equal(back.sensor_points, cal.sensor_points)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 2 * np.pi - 0.1), st.integers(0, 2**31))
def test_two_shift_identity_any_beta(beta, seed):
    g = Grid2D.unit(6)
    op = make_operator(seed, g, 20, 24, 1.0, 0.8)
    spots = make_spot_calibration(4, g, 0.1)
    E_h, E_v = polarisation_blocks(run_calibration(op, spots, PhaseShiftScheme.two(beta)))
    zero = FieldSamples.zeros(g)
    ref = forward(op, VectorFieldSamples(zero, spots[0][0]))
    assert np.linalg.norm(E_v[:, 0] - ref) <= 1e-11 * np.linalg.norm(ref)
