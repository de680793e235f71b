"""Calibration inputs, phase-shift schemes and linear-system assembly.

A vector-field calibration records, for every scalar calibration pattern
``E_m``, the outputs of the inputs ``A_m = [E_m; E_m]``, ``B_m = [E_m; b E_m]``
and (three-shift only) ``C_m = [E_m; c E_m]``.  Linear combinations of the
recorded outputs then isolate the response to ``[E_m; 0]`` and ``[0; E_m]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IllConditionedError, SchemeError, ValidationError
from .fibersim import NoiseModel, TransmissionOperator, add_noise
from .fields import (FieldSamples, GaussianSpotSystem, Grid2D,
                     SensorSamples, VectorFieldSamples, basis_matrix, gram_from_samples)
from .rng import make_rng

log = logging.getLogger(__name__)

_RECORDS = ("A", "B", "C")


@dataclass(frozen=True)
class PhaseShiftScheme:
    """Two- or three-shift polarisation scheme.

    ``PhaseShiftScheme.two(beta)`` uses ``b = exp(i beta)``;
    ``PhaseShiftScheme.three(beta, gamma)`` adds ``c = exp(i gamma)``.
    """

    variant: str
    beta: float
    gamma: float | None = None

    def __post_init__(self):
        if self.variant == "two":
            if not 0.0 < self.beta < 2.0 * np.pi:
                raise SchemeError(f"two-shift needs beta in (0, 2pi), got {self.beta}")
        elif self.variant == "three":
            if self.gamma is None:
                raise SchemeError("three-shift needs gamma")
            if abs(self.c - self.b) < 1e-9:
                raise SchemeError("three-shift needs c != b")
            if abs(self.b + self.c - 2.0) < 1e-9:
                raise SchemeError(f"three-shift needs b + c != 2 (beta={self.beta}, gamma={self.gamma})")
        else:
            raise SchemeError(f"unknown scheme variant {self.variant!r}")

    @classmethod
    def two(cls, beta=np.pi):
        return cls("two", float(beta))

    @classmethod
    def three(cls, beta=2 * np.pi / 3, gamma=4 * np.pi / 3):
        return cls("three", float(beta), float(gamma))

    @property
    def n_records(self):
        return 2 if self.variant == "two" else 3

    @property
    def b(self):
        return complex(np.exp(1j * self.beta))

    @property
    def c(self):
        return None if self.gamma is None else complex(np.exp(1j * self.gamma))

    @property
    def a(self):
        if self.variant == "two":
            return 1.0 / (1.0 - self.b)
        return 1.0 / (1.0 - self.b / 2 - self.c / 2)

    def input_factors(self):
        """Factor applied to the v-component of each recorded input."""
        return (1.0, self.b) if self.variant == "two" else (1.0, self.b, self.c)

    def weights(self):
        """``(w_h, w_v)``: combination weights over the records (A, B[, C]).

        ``sum_r w_h[r] * out_r`` is the response to ``[E; 0]`` and
        ``sum_r w_v[r] * out_r`` the response to ``[0; E]``.
        """
        a, b = self.a, self.b
        ac = np.conj(a)
        if self.variant == "two":
            w_h = np.array([ac, -ac * np.conj(b)])
            w_v = np.array([a, -a])
        else:
            c = self.c
            w_h = np.array([ac, -ac * np.conj(b) / 2, -ac * np.conj(c) / 2])
            w_v = np.array([a, -a / 2, -a / 2])
        return w_h, w_v

    def noise_gain(self):
        """Variance amplification of i.i.d. record noise in the (h, v) columns."""
        w_h, w_v = self.weights()
        return float(np.sum(np.abs(w_h) ** 2)), float(np.sum(np.abs(w_v) ** 2))

    def describe(self):
        d = {"variant": self.variant, "beta": self.beta, "b": [self.b.real, self.b.imag],
             "a": [self.a.real, self.a.imag]}
        if self.gamma is not None:
            d.update(gamma=self.gamma, c=[self.c.real, self.c.imag])
        return d

    @classmethod
    def from_description(cls, d):
        if d["variant"] == "two":
            return cls.two(d["beta"])
        return cls.three(d["beta"], d["gamma"])


@dataclass(frozen=True, eq=False)
class CalibrationSet:
    """Calibration inputs and their recorded outputs.

    ``outputs`` maps ``"A"``, ``"B"`` (and ``"C"``) to ``(2N, M)`` arrays
    whose columns are interleaved ``(h, v)`` sensor vectors.
    """

    scheme: PhaseShiftScheme
    inputs: list
    sensor_points: np.ndarray
    outputs: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        M = len(self.inputs)
        if M < 1:
            raise ValidationError("calibration needs at least one input")
        expected = set(_RECORDS[: self.scheme.n_records])
        if set(self.outputs) != expected:
            raise ValidationError(f"outputs {sorted(self.outputs)} do not match scheme records {sorted(expected)}")
        n2 = 2 * len(self.sensor_points)
        for k, v in self.outputs.items():
            if v.shape != (n2, M):
                raise ValidationError(f"output block {k} has shape {v.shape}, expected {(n2, M)}")

    @property
    def M(self):
        return len(self.inputs)

    @property
    def N(self):
        return len(self.sensor_points)

    @property
    def grid(self):
        return self.inputs[0][0].grid

    def record(self, name, m):
        return SensorSamples(self.sensor_points, self.outputs[name][:, m], npol=2)

    def scalar_inputs(self, pol="h"):
        return [pair[0 if pol == "h" else 1] for pair in self.inputs]


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        A = np.asarray(self.matrix, dtype=np.complex128)
        g = np.asarray(self.rhs, dtype=np.complex128)
        if A.ndim != 2 or A.shape[0] != g.shape[0]:
            raise ValidationError(f"matrix {A.shape} and rhs {g.shape} disagree")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(g))):
            raise ValidationError("assembled system has non-finite entries")
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "rhs", g)

    @property
    def shape(self):
        return self.matrix.shape

    def with_rhs(self, rhs):
        return AssembledSystem(self.matrix, rhs, self.meta)


@dataclass(frozen=True, eq=False)
class BasisChange:
    """Change-of-basis matrix with diagnostics.

    ``H`` has shape ``(M, K)``; ``residuals[k]`` is the L2 norm of
    ``H_k - sum_m H[m, k] E_m``.
    """

    H: np.ndarray
    residuals: np.ndarray
    gram_eigenvalues: np.ndarray


# ---------------------------------------------------------------------------
# calibration inputs


def spot_lattice(M, extent=(-0.5, 0.5, -0.5, 0.5)):
    """Centres of ``M`` spots on a near-uniform row lattice over ``extent``.

    The number of rows follows the aspect ratio; rows hold ``M // rows`` or
    one more spots, the longer rows spread evenly.  Within a row the spots
    sit at cell centres.
    """
    M = int(M)
    if M < 1:
        raise ValidationError("need M >= 1 spots")
    x0, x1, y0, y1 = extent
    W, H = x1 - x0, y1 - y0
    rows = int(min(M, max(1, round(np.sqrt(M * H / W)))))
    base, extra = divmod(M, rows)
    centres = []
    for i in range(rows):
        n = base + (1 if (i + 1) * extra // rows > i * extra // rows else 0)
        y = y0 + (i + 0.5) * H / rows
        for q in range(n):
            centres.append((x0 + (q + 0.5) * W / n, y))
    return np.array(centres)


def _min_distance(c):
    if len(c) < 2:
        return np.inf
    d2 = np.sum((c[:, None, :] - c[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(d2.min()))


def spot_system(M, grid, spot_width, layout_seed=None, jitter=0.0, truncation_radius=None):
    """The calibration spots as a :class:`GaussianSpotSystem`.

    ``jitter`` displaces each centre uniformly by up to ``jitter`` times half
    the row pitch, drawn from ``layout_seed``.
    """
    if not spot_width > 0:
        raise ValidationError(f"spot_width must be positive, got {spot_width}")
    centres = spot_lattice(M, grid.extent)
    if jitter and layout_seed is not None:
        pitch = _min_distance(centres) if M > 1 else min(grid.x_max - grid.x_min, grid.y_max - grid.y_min)
        rng = make_rng(layout_seed)
        centres = centres + rng.uniform(-1, 1, centres.shape) * (0.5 * jitter * pitch)
    d = _min_distance(centres)
    overlap = np.exp(-(d**2) / (4 * spot_width**2)) if np.isfinite(d) else 0.0
    if overlap > 0.99:
        raise ValidationError(
            f"{M} spots of width {spot_width} overlap {overlap:.4f} > 0.99 between neighbours"
        )
    return GaussianSpotSystem(centres, float(spot_width), truncation_radius)


def make_spot_calibration(M, grid, spot_width, layout_seed=None, jitter=0.0,
                          truncation_radius=None):
    """``M`` L2-normalised Gaussian spots, each feeding both polarisations.

    Returns a list of ``(E_h, E_v)`` pairs with ``E_h`` and ``E_v`` the same
    scalar pattern.
    """
    system = spot_system(M, grid, spot_width, layout_seed, jitter, truncation_radius)
    B = system.matrix(grid)
    out = []
    for row in B:
        f = FieldSamples(grid, row)
        out.append((f, f))
    return out


# ---------------------------------------------------------------------------
# measurement


def _input_block(inputs, factor):
    h = basis_matrix([p[0] for p in inputs], inputs[0][0].grid)
    v = basis_matrix([p[1] for p in inputs], inputs[0][0].grid)
    X = np.empty((2 * h.shape[1], h.shape[0]), dtype=np.complex128)
    X[0::2] = h.T
    X[1::2] = factor * v.T
    return X


def run_calibration(op: TransmissionOperator, inputs, scheme: PhaseShiftScheme,
                    noise: NoiseModel = NoiseModel()) -> CalibrationSet:
    """Propagate the A, B (and C) inputs of every calibration pattern.

    Each recorded output gets its own noise stream derived from
    ``(noise.seed, record, m)`` with record 0/1/2 for A/B/C.
    """
    if not inputs:
        raise ValidationError("no calibration inputs")
    grid = inputs[0][0].grid
    if grid != op.in_grid:
        raise ValidationError(f"calibration grid {grid} does not match operator grid {op.in_grid}")
    outputs = {}
    for r, (name, factor) in enumerate(zip(_RECORDS, scheme.input_factors())):
        clean = op.matvec(_input_block(inputs, factor)) * grid.cell_area
        if noise.sigma > 0:
            cols = [add_noise(clean[:, m], noise, make_rng(noise.seed, r, m)) for m in range(clean.shape[1])]
            clean = np.column_stack(cols)
        outputs[name] = clean
    meta = {"noise_sigma": noise.sigma, "noise_seed": noise.seed, "operator_seed": op.seed}
    return CalibrationSet(scheme, list(inputs), op.sensor_points, outputs, meta)


# ---------------------------------------------------------------------------
# change of basis and assembly


def change_of_basis(cal_inputs, targets, grid: Grid2D, floor: float = 1e-10) -> BasisChange:
    """Express each target function in terms of the calibration inputs.

    Solves the Gram system ``G h_k = [<H_k, E_1>, ..., <H_k, E_M>]^T`` with a
    Hermitian eigendecomposition.  Raises :class:`IllConditionedError` when
    the Gram spectrum falls below ``floor`` times its largest value.
    """
    E = basis_matrix(cal_inputs, grid)
    T = basis_matrix(targets, grid)
    dA = grid.cell_area
    G = gram_from_samples(E, dA)
    w, Q = np.linalg.eigh(G)
    if w[0] <= floor * w[-1]:
        raise IllConditionedError(
            f"Gram matrix of calibration inputs is singular: smallest singular value "
            f"{max(w[0], 0.0):.3e} <= {floor:g} x largest {w[-1]:.3e}",
            singular_value=float(max(w[0], 0.0)),
        )
    cross = (E.conj() @ T.T) * dA  # [m', k] = <H_k, E_m'>
    H = Q @ ((Q.conj().T @ cross) / w[:, None])
    delta = T.T - E.T @ H
    residuals = np.sqrt(np.sum(np.abs(delta) ** 2, axis=0) * dA)
    log.info("change of basis: M=%d K=%d, residual norm max %.3e mean %.3e",
             E.shape[0], T.shape[0], residuals.max(), residuals.mean())
    for k, r in enumerate(residuals):
        log.debug("delta_%d = %.3e", k, r)
    return BasisChange(H, residuals, w)


def _as_output_matrix(outputs):
    if isinstance(outputs, np.ndarray):
        return outputs.astype(np.complex128)
    return np.column_stack([o.values for o in outputs])


def assemble_scalar(outputs, H, g) -> AssembledSystem:
    """Scalar system ``g = E H f`` with ``E[n, m] = E~_m(y_n)``.

    ``outputs`` is an ``(N, M)`` array or a list of single-polarisation
    :class:`SensorSamples`; ``g`` an array or :class:`SensorSamples`.
    """
    E = _as_output_matrix(outputs)
    H = np.atleast_2d(np.asarray(H, dtype=np.complex128))
    g = g.values if isinstance(g, SensorSamples) else np.asarray(g, dtype=np.complex128)
    if E.shape[1] != H.shape[0]:
        raise ValidationError(f"E has {E.shape[1]} columns but H has {H.shape[0]} rows")
    if g.shape[0] != E.shape[0]:
        raise ValidationError(f"rhs length {g.shape[0]} != number of sensor samples {E.shape[0]}")
    return AssembledSystem(E @ H, g, {"K": H.shape[1], "M": E.shape[1], "N": E.shape[0]})


def polarisation_blocks(cal: CalibrationSet):
    """``(E_h, E_v)``: sensor responses to ``[E_m; 0]`` and ``[0; E_m]``."""
    w_h, w_v = cal.scheme.weights()
    recs = [cal.outputs[n] for n in _RECORDS[: cal.scheme.n_records]]
    E_h = sum(w * R for w, R in zip(w_h, recs))
    E_v = sum(w * R for w, R in zip(w_v, recs))
    return E_h, E_v


def assemble_vector(cal: CalibrationSet, H_h, H_v, g) -> AssembledSystem:
    """Vector-field system ``g = [E_h H_h, E_v H_v] f``.

    ``g`` is a two-polarisation :class:`SensorSamples` (or an interleaved
    array) on the calibration sensor points.  The unknown ``f`` stacks the h
    coefficients above the v coefficients.
    """
    if isinstance(g, SensorSamples):
        if g.npol != 2:
            raise ValidationError("vector assembly needs two-polarisation measurements")
        if g.points.shape != cal.sensor_points.shape or not np.array_equal(g.points, cal.sensor_points):
            raise ValidationError("measurement sensor points differ from calibration sensor points")
        g = g.values
    g = np.asarray(g, dtype=np.complex128)
    H_h = np.asarray(H_h, dtype=np.complex128)
    H_v = np.asarray(H_v, dtype=np.complex128)
    if H_h.shape[0] != cal.M or H_v.shape[0] != cal.M:
        raise ValidationError(f"H blocks need {cal.M} rows, got {H_h.shape[0]} and {H_v.shape[0]}")
    if g.shape[0] != 2 * cal.N:
        raise ValidationError(f"rhs length {g.shape[0]} != 2N = {2 * cal.N}")
    E_h, E_v = polarisation_blocks(cal)
    A = np.hstack([E_h @ H_h, E_v @ H_v])
    meta = {"K": H_h.shape[1], "M": cal.M, "N": cal.N, "scheme": cal.scheme.describe()}
    return AssembledSystem(A, g, meta)


# ---------------------------------------------------------------------------
# persistence


def save_calibration(cal: CalibrationSet, directory, extra_meta=None):
    from .formats import write_css, write_cvf, write_manifest

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for m, (eh, ev) in enumerate(cal.inputs):
        write_cvf(d / f"input_{m:04d}.cvf", VectorFieldSamples(eh, ev))
    for name, block in cal.outputs.items():
        for m in range(cal.M):
            write_css(d / f"{name}_{m:04d}.css", cal.record(name, m))
    meta = {"format": "calibration-set/1", "M": cal.M, "N": cal.N,
            "scheme": cal.scheme.describe(), "records": sorted(cal.outputs)}
    meta.update(cal.meta)
    if extra_meta:
        meta.update(extra_meta)
    write_manifest(d / "meta.json", meta)


def load_calibration(directory) -> CalibrationSet:
    from .formats import read_css, read_cvf, read_manifest

    d = Path(directory)
    meta = read_manifest(d / "meta.json")
    scheme = PhaseShiftScheme.from_description(meta["scheme"])
    M = meta["M"]
    inputs = []
    for m in range(M):
        vf = read_cvf(d / f"input_{m:04d}.cvf")
        inputs.append((vf.h, vf.v))
    outputs, points = {}, None
    for name in meta["records"]:
        cols = []
        for m in range(M):
            rec = read_css(d / f"{name}_{m:04d}.css")
            if points is None:
                points = rec.points
            elif not np.array_equal(points, rec.points):
                raise ValidationError(f"{name}_{m:04d}.css: sensor points differ from other records")
            cols.append(rec.values)
        outputs[name] = np.column_stack(cols)
    return CalibrationSet(scheme, inputs, points, outputs, meta)
