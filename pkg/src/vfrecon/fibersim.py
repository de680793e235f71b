"""Synthetic transmission operator standing in for the fibre.

The operator is a low-rank complex matrix ``T = U diag(s) V^*`` acting on
interleaved ``(h, v)`` pixel vectors of the input grid and producing
interleaved ``(h, v)`` sensor vectors.  Propagation applies midpoint
quadrature, ``T vec(F) * cell_area``, so it discretises an integral operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, ValidationError
from .fields import Grid2D, SensorSamples, VectorFieldSamples
from .rng import make_rng


@dataclass(frozen=True, eq=False)
class TransmissionOperator:
    in_grid: Grid2D
    sensor_points: np.ndarray
    U: np.ndarray
    s: np.ndarray
    V: np.ndarray
    seed: int | None = None
    decay_rate: float | None = None
    coupling: float | None = None

    def __post_init__(self):
        pts = np.asarray(self.sensor_points, dtype=np.float64).reshape(-1, 2)
        s = np.asarray(self.s, dtype=np.float64).ravel()
        U = np.asarray(self.U, dtype=np.complex128)
        V = np.asarray(self.V, dtype=np.complex128)
        N, P, r = len(pts), self.in_grid.size, len(s)
        if U.shape != (2 * N, r) or V.shape != (2 * P, r):
            raise ValidationError(
                f"factor shapes U{U.shape}, V{V.shape} inconsistent with N={N}, P={P}, modes={r}"
            )
        if r < 1 or s[0] <= 0 or np.any(np.diff(s) > 0) or np.any(s <= 0):
            raise ValidationError("singular values must be positive and non-increasing")
        object.__setattr__(self, "sensor_points", pts)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @property
    def n_sensors(self):
        return len(self.sensor_points)

    @property
    def n_modes(self):
        return len(self.s)

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    def matvec(self, x):
        """``T x`` for a pixel vector (or a ``(2P, B)`` block of them)."""
        s = self.s if np.ndim(x) == 1 else self.s[:, None]
        return self.U @ (s * (self.V.conj().T @ x))

    def rmatvec(self, y):
        """``T^* y``."""
        s = self.s if np.ndim(y) == 1 else self.s[:, None]
        return self.V @ (s * (self.U.conj().T @ y))

    def dense(self):
        return (self.U * self.s) @ self.V.conj().T


@dataclass(frozen=True)
class NoiseModel:
    """Additive complex Gaussian noise, std relative to the clean RMS."""

    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValidationError(f"noise sigma must be >= 0, got {self.sigma}")


def sensor_lattice(n_sensors, extent=(-0.5, 0.5, -0.5, 0.5)):
    """``n_sensors`` distinct points on a near-square lattice over ``extent``.

    The lattice has ``ceil(sqrt(n))`` columns; points are taken row-major, so
    the final row may be partial.
    """
    n = int(n_sensors)
    if n < 1:
        raise ValidationError("need at least one sensor")
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    g = Grid2D(*extent, cols, rows)
    return g.points()[:n]


def _orthonormal(rng, n, k):
    """Haar-distributed ``n x k`` matrix with orthonormal columns."""
    Z = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
    Q, R = np.linalg.qr(Z)
    # fix the phase ambiguity of QR so the distribution is Haar
    d = np.diagonal(R)
    return Q * (d / np.abs(d))


def make_operator(seed, in_grid, n_sensors, n_modes, decay_rate=0.0, coupling=0.0,
                  sensor_extent=(-0.5, 0.5, -0.5, 0.5)):
    """Random transmission operator with exponentially decaying spectrum.

    Modes alternate between the two polarisations (even modes carry h, odd
    modes v).  ``U`` is block-structured: each mode's output lives in one
    polarisation.  ``V`` is block-structured at ``coupling=0``, fully
    unstructured at ``coupling=1`` and an orthonormalised blend in between.

    Parameters
    ----------
    seed : int
        Seed of the PCG64 stream that draws ``U`` then ``V``.
    in_grid : Grid2D
        Input plane discretisation (``P = nx*ny`` pixels).
    n_sensors : int
        Number of output points ``N``; laid out by :func:`sensor_lattice`.
    n_modes : int
        Rank of the operator; at most ``min(2N, 2P)``.
    decay_rate : float
        Singular values are ``exp(-decay_rate * j / n_modes)``, ``j = 0..n_modes-1``.
    coupling : float in [0, 1]
        Polarisation mixing of the input side.
    """
    N, P, r = int(n_sensors), in_grid.size, int(n_modes)
    if N < 1 or r < 1 or r > min(2 * N, 2 * P):
        raise ValidationError(f"n_modes={r} must be in [1, min(2N, 2P)] = [1, {min(2 * N, 2 * P)}]")
    if decay_rate < 0:
        raise ValidationError(f"decay_rate must be >= 0, got {decay_rate}")
    if not 0.0 <= coupling <= 1.0:
        raise ValidationError(f"coupling must be in [0, 1], got {coupling}")

    rng = make_rng(seed)
    h_modes = np.arange(0, r, 2)
    v_modes = np.arange(1, r, 2)

    U = np.zeros((2 * N, r), dtype=np.complex128)
    U[0::2, h_modes] = _orthonormal(rng, N, len(h_modes))
    if len(v_modes):
        U[1::2, v_modes] = _orthonormal(rng, N, len(v_modes))

    V_block = np.zeros((2 * P, r), dtype=np.complex128)
    V_block[0::2, h_modes] = _orthonormal(rng, P, len(h_modes))
    if len(v_modes):
        V_block[1::2, v_modes] = _orthonormal(rng, P, len(v_modes))
    V_full = _orthonormal(rng, 2 * P, r)
    if coupling == 0.0:
        V = V_block
    elif coupling == 1.0:
        V = V_full
    else:
        Z = np.sqrt(1.0 - coupling) * V_block + np.sqrt(coupling) * V_full
        Q, R = np.linalg.qr(Z)
        d = np.diagonal(R)
        V = Q * (d / np.abs(d))

    s = np.exp(-decay_rate * np.arange(r) / r)
    return TransmissionOperator(in_grid, sensor_lattice(N, sensor_extent), U, s, V,
                                seed=int(seed), decay_rate=float(decay_rate),
                                coupling=float(coupling))


def add_noise(clean, noise, rng=None):
    """Add complex Gaussian noise with std ``sigma * RMS(clean)``.

    ``clean`` may be a vector or a ``(2N, B)`` block, in which case each
    column gets its own RMS scaling.
    """
    if noise.sigma == 0:
        return clean.copy()
    rng = make_rng(noise.seed) if rng is None else rng
    rms = np.sqrt(np.mean(np.abs(clean) ** 2, axis=0))
    eta = rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
    return clean + eta * (noise.sigma * rms / np.sqrt(2.0))


def forward(op, field):
    """Noise-free ``T vec(F) * cell_area`` as an interleaved sensor vector."""
    if field.grid != op.in_grid:
        raise GridMismatchError(f"field grid {field.grid} does not match operator grid {op.in_grid}")
    return op.matvec(field.interleaved()) * op.in_grid.cell_area


def propagate(op: TransmissionOperator, input: VectorFieldSamples,
              noise: NoiseModel = NoiseModel()) -> SensorSamples:
    """Propagate a vector field through the operator and add sensor noise."""
    y = add_noise(forward(op, input), noise)
    return SensorSamples(op.sensor_points, y, npol=2)


def adjoint(op, samples):
    """``T^* g`` as a vector field, the adjoint of :func:`forward`.

    With the plain sum on the sensor side and midpoint quadrature on the grid,
    ``sum(forward(f) * conj(g)) == <f, adjoint(g)>``.
    """
    vals = samples.values if isinstance(samples, SensorSamples) else np.asarray(samples)
    return VectorFieldSamples.from_interleaved(op.in_grid, op.rmatvec(vals))


def identity_operator(grid):
    """Canonical embedding with unit singular values and sensors at grid points."""
    P = grid.size
    eye = np.eye(2 * P, dtype=np.complex128)
    return TransmissionOperator(grid, grid.points(), eye, np.ones(2 * P), eye)
