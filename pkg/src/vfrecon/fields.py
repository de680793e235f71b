"""Sampling grids, complex field containers and representation systems.

All scalar fields live on a :class:`Grid2D` whose samples are the cell
centres of a regular ``ny x nx`` partition of a rectangle.  Values are stored
row-major, i.e. ``values.reshape(ny, nx)[j, i]`` is the sample at
``(x[i], y[j])``.  Inner products use the midpoint rule on those cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, ValidationError

UNIT_SQUARE = (-0.5, 0.5, -0.5, 0.5)


@dataclass(frozen=True)
class Grid2D:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(f"empty grid extent {self.extent}")
        if int(self.nx) < 1 or int(self.ny) < 1:
            raise ValidationError(f"grid needs nx, ny >= 1, got {self.nx}x{self.ny}")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        for name in ("x_min", "x_max", "y_min", "y_max"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @classmethod
    def unit(cls, nx, ny=None):
        """Grid on ``[-1/2, 1/2]^2``."""
        return cls(*UNIT_SQUARE, nx, nx if ny is None else ny)

    @property
    def extent(self):
        return (self.x_min, self.x_max, self.y_min, self.y_max)

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def size(self):
        return self.nx * self.ny

    @property
    def dx(self):
        return (self.x_max - self.x_min) / self.nx

    @property
    def dy(self):
        return (self.y_max - self.y_min) / self.ny

    @property
    def cell_area(self):
        return self.dx * self.dy

    @property
    def area(self):
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def x(self):
        return self.x_min + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def y(self):
        return self.y_min + (np.arange(self.ny) + 0.5) * self.dy

    def mesh(self):
        """Return ``(X, Y)`` arrays of shape ``(ny, nx)``."""
        return np.meshgrid(self.x, self.y, indexing="xy")

    def points(self):
        """Cell centres as an ``(nx*ny, 2)`` array in row-major order."""
        X, Y = self.mesh()
        return np.column_stack([X.ravel(), Y.ravel()])


def _check_values(values, n, what="values"):
    values = np.ascontiguousarray(values, dtype=np.complex128).ravel()
    if values.size != n:
        raise ValidationError(f"{what} has {values.size} entries, expected {n}")
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"{what} contains NaN or Inf")
    return values


@dataclass(frozen=True, eq=False)
class FieldSamples:
    """Complex samples of a scalar field on a grid."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.values, self.grid.size))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.size, dtype=np.complex128))

    @classmethod
    def from_image(cls, grid, image):
        image = np.asarray(image)
        if image.shape != grid.shape:
            raise ValidationError(f"image shape {image.shape} does not match grid {grid.shape}")
        return cls(grid, image.ravel())

    @property
    def image(self):
        return self.values.reshape(self.grid.shape)

    def __add__(self, other):
        _same_grid(self.grid, other.grid)
        return FieldSamples(self.grid, self.values + other.values)

    def __sub__(self, other):
        _same_grid(self.grid, other.grid)
        return FieldSamples(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return FieldSamples(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def norm(self):
        return float(np.sqrt(inner_product(self, self).real))


@dataclass(frozen=True, eq=False)
class VectorFieldSamples:
    """Horizontal (``h``) and vertical (``v``) polarisation components."""

    h: FieldSamples
    v: FieldSamples

    def __post_init__(self):
        _same_grid(self.h.grid, self.v.grid)

    @property
    def grid(self):
        return self.h.grid

    @classmethod
    def zeros(cls, grid):
        return cls(FieldSamples.zeros(grid), FieldSamples.zeros(grid))

    def interleaved(self):
        """Pixel vector ``[h_0, v_0, h_1, v_1, ...]``."""
        out = np.empty(2 * self.grid.size, dtype=np.complex128)
        out[0::2] = self.h.values
        out[1::2] = self.v.values
        return out

    @classmethod
    def from_interleaved(cls, grid, vec):
        vec = np.asarray(vec)
        return cls(FieldSamples(grid, vec[0::2]), FieldSamples(grid, vec[1::2]))

    def __add__(self, other):
        return VectorFieldSamples(self.h + other.h, self.v + other.v)

    def __mul__(self, scalar):
        return VectorFieldSamples(self.h * scalar, self.v * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class SensorSamples:
    """Point samples on the output plane.

    With ``npol == 2`` the values are interleaved ``(h, v)`` per point.
    """

    points: np.ndarray
    values: np.ndarray
    npol: int = 2

    def __post_init__(self):
        points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 2)
        if self.npol not in (1, 2):
            raise ValidationError(f"npol must be 1 or 2, got {self.npol}")
        if len(np.unique(points, axis=0)) != len(points):
            raise ValidationError("sensor points are not distinct")
        object.__setattr__(self, "points", points)
        object.__setattr__(
            self, "values", _check_values(self.values, self.npol * len(points), "sensor values")
        )

    @property
    def n_points(self):
        return len(self.points)

    @property
    def h(self):
        return self.values[0 :: self.npol]

    @property
    def v(self):
        if self.npol != 2:
            raise ValidationError("single-polarisation samples have no v component")
        return self.values[1::2]


def _same_grid(a, b):
    if a != b:
        raise GridMismatchError(f"grid mismatch: {a} vs {b}")


# ---------------------------------------------------------------------------
# representation systems


class RepresentationSystem:
    """An indexed family of scalar functions that can be sampled on a grid.

    Subclasses implement :meth:`matrix`, returning all ``K`` functions sampled
    on a grid as a ``(K, nx*ny)`` array.
    """

    kind = "abstract"

    @property
    def size(self) -> int:
        raise NotImplementedError

    def matrix(self, grid: Grid2D) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, index: int, grid: Grid2D) -> np.ndarray:
        return self.matrix(grid)[self._check_index(index)]

    def _check_index(self, index):
        index = int(index)
        if not 0 <= index < self.size:
            raise ValidationError(f"basis index {index} out of range [0, {self.size})")
        return index

    def describe(self) -> dict:
        return {"kind": self.kind, "K": self.size}


def fourier_side(K):
    """Return ``sqrt(K)`` if ``K`` is a perfect square with even root."""
    K = int(K)
    side = int(round(np.sqrt(K)))
    if K < 1 or side * side != K or side % 2:
        raise ValidationError(f"Fourier system needs K = s^2 with s even, got K={K}")
    return side


@dataclass(frozen=True)
class FourierSystem(RepresentationSystem):
    """Exponentials ``exp(2 pi i (k1 u + k2 v))`` on a rectangular domain.

    ``(u, v)`` are the domain coordinates shifted and scaled onto the unit
    square; the functions are divided by ``sqrt(area)`` so they are
    orthonormal on the domain.  Index ``n`` maps to
    ``k1 = n // s - s/2``, ``k2 = n % s - s/2`` with ``s = sqrt(K)``.
    """

    K: int
    domain: tuple = UNIT_SQUARE
    kind = "fourier"

    def __post_init__(self):
        fourier_side(self.K)
        x0, x1, y0, y1 = self.domain
        if not (x0 < x1 and y0 < y1):
            raise ValidationError(f"empty Fourier domain {self.domain}")

    @property
    def size(self):
        return self.K

    @property
    def side(self):
        return fourier_side(self.K)

    @property
    def frequencies(self):
        """Per-axis index range ``-s/2 .. s/2-1``."""
        s = self.side
        return np.arange(-s // 2, s // 2)

    def index_pairs(self):
        k = self.frequencies
        K1, K2 = np.meshgrid(k, k, indexing="ij")
        return np.column_stack([K1.ravel(), K2.ravel()])

    def _unit_coords(self, grid):
        x0, x1, y0, y1 = self.domain
        u = (grid.x - 0.5 * (x0 + x1)) / (x1 - x0)
        v = (grid.y - 0.5 * (y0 + y1)) / (y1 - y0)
        return u, v

    def _norm(self):
        x0, x1, y0, y1 = self.domain
        return 1.0 / np.sqrt((x1 - x0) * (y1 - y0))

    def axis_factors(self, grid):
        """``(Ex, Ey)`` with ``Ex[k1, i] = exp(2 pi i k1 u_i)``, likewise ``Ey``."""
        u, v = self._unit_coords(grid)
        k = self.frequencies
        Ex = np.exp(2j * np.pi * np.outer(k, u))
        Ey = np.exp(2j * np.pi * np.outer(k, v))
        return Ex, Ey

    def matrix(self, grid):
        Ex, Ey = self.axis_factors(grid)
        s = self.side
        # rows (k1, k2) row-major; columns (j, i) row-major
        M = Ex[:, None, None, :] * Ey[None, :, :, None]
        return (self._norm() * M).reshape(s * s, grid.size)

    def evaluate(self, index, grid):
        index = self._check_index(index)
        s = self.side
        k1, k2 = index // s - s // 2, index % s - s // 2
        u, v = self._unit_coords(grid)
        U, V = np.meshgrid(u, v, indexing="xy")
        return (self._norm() * np.exp(2j * np.pi * (k1 * U + k2 * V))).ravel()

    def synthesize(self, coeffs, grid):
        """``sum_k c_k H_k`` on ``grid`` without forming the full basis."""
        s = self.side
        C = np.asarray(coeffs, dtype=np.complex128).reshape(s, s)
        Ex, Ey = self.axis_factors(grid)
        # F[j, i] = sum_{k1,k2} C[k1,k2] Ey[k2,j] Ex[k1,i]
        return (self._norm() * (Ey.T @ C.T @ Ex)).ravel()

    def analyse(self, values, grid):
        """``<F, H_k>`` for all ``k`` by separable midpoint quadrature."""
        s = self.side
        F = np.asarray(values, dtype=np.complex128).reshape(grid.shape)
        Ex, Ey = self.axis_factors(grid)
        C = Ex.conj() @ F.T @ Ey.conj().T
        return (self._norm() * grid.cell_area * C).reshape(s * s)

    def describe(self):
        return {"kind": self.kind, "K": self.K, "domain": list(self.domain)}


@dataclass(frozen=True)
class PixelSystem(RepresentationSystem):
    """Indicators of a ``tiles_x x tiles_y`` tiling of a rectangle.

    Each indicator is scaled to unit L2 norm on the evaluation grid.  Tiles
    are indexed row-major (y slow, x fast).  Cell centres on a tile boundary
    belong to the tile on the upper side.
    """

    tiles_x: int
    tiles_y: int
    extent: tuple = UNIT_SQUARE
    kind = "pixel"

    def __post_init__(self):
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise ValidationError("pixel system needs at least one tile per axis")

    @property
    def size(self):
        return self.tiles_x * self.tiles_y

    def _tile_of(self, grid):
        x0, x1, y0, y1 = self.extent
        X, Y = grid.mesh()
        ix = np.floor((X - x0) / (x1 - x0) * self.tiles_x).astype(int).ravel()
        iy = np.floor((Y - y0) / (y1 - y0) * self.tiles_y).astype(int).ravel()
        inside = (ix >= 0) & (ix < self.tiles_x) & (iy >= 0) & (iy < self.tiles_y)
        return np.where(inside, iy * self.tiles_x + ix, -1)

    def matrix(self, grid):
        tile = self._tile_of(grid)
        M = (tile[None, :] == np.arange(self.size)[:, None]).astype(np.complex128)
        counts = M.real.sum(axis=1)
        if np.any(counts == 0):
            empty = int(np.flatnonzero(counts == 0)[0])
            raise ValidationError(f"pixel tile {empty} contains no grid cells")
        return M / np.sqrt(counts * grid.cell_area)[:, None]

    def describe(self):
        return {"kind": self.kind, "K": self.size, "tiles": [self.tiles_x, self.tiles_y],
                "extent": list(self.extent)}


@dataclass(frozen=True, eq=False)
class GaussianSpotSystem(RepresentationSystem):
    """Gaussian spots ``exp(-|x - c|^2 / (2 w^2))`` at the given centres.

    Each spot is normalised to unit L2 norm on the evaluation grid.  An
    optional ``truncation_radius`` zeroes each spot outside a disc around its
    centre.
    """

    centres: np.ndarray
    width: float
    truncation_radius: float | None = None
    kind = "gaussian_spot"

    def __post_init__(self):
        centres = np.asarray(self.centres, dtype=np.float64).reshape(-1, 2)
        if len(centres) < 1:
            raise ValidationError("need at least one spot centre")
        if not self.width > 0:
            raise ValidationError(f"spot width must be positive, got {self.width}")
        object.__setattr__(self, "centres", centres)

    @property
    def size(self):
        return len(self.centres)

    def _raw(self, grid, centres):
        X, Y = grid.mesh()
        d2 = (X.ravel()[None, :] - centres[:, 0:1]) ** 2 + (Y.ravel()[None, :] - centres[:, 1:2]) ** 2
        g = np.exp(-d2 / (2.0 * self.width**2))
        if self.truncation_radius is not None:
            g[d2 > self.truncation_radius**2] = 0.0
        return g

    def matrix(self, grid):
        g = self._raw(grid, self.centres)
        norms = np.sqrt(np.sum(g * g, axis=1) * grid.cell_area)
        if np.any(norms == 0):
            raise ValidationError("a Gaussian spot has no support on the grid")
        return (g / norms[:, None]).astype(np.complex128)

    def evaluate(self, index, grid):
        index = self._check_index(index)
        g = self._raw(grid, self.centres[index : index + 1])[0]
        norm = np.sqrt(np.sum(g * g) * grid.cell_area)
        if norm == 0:
            raise ValidationError("a Gaussian spot has no support on the grid")
        return (g / norm).astype(np.complex128)

    def describe(self):
        return {"kind": self.kind, "K": self.size, "width": self.width,
                "truncation_radius": self.truncation_radius,
                "centres": self.centres.tolist()}


# ---------------------------------------------------------------------------
# operations


def eval_basis(system: RepresentationSystem, index: int, grid: Grid2D) -> FieldSamples:
    """Sample basis function ``index`` of ``system`` on ``grid``."""
    return FieldSamples(grid, system.evaluate(index, grid))


def inner_product(f: FieldSamples, g: FieldSamples) -> complex:
    """Midpoint-rule approximation of ``int f conj(g) dx``."""
    _same_grid(f.grid, g.grid)
    return complex(np.vdot(g.values, f.values) * f.grid.cell_area)


def gram_from_samples(B, cell_area):
    """Hermitian Gram matrix of the rows of ``B``: ``G[m', m] = <B_m, B_m'>``."""
    G = (B.conj() @ B.T) * cell_area
    return 0.5 * (G + G.conj().T)


def gram_matrix(system: RepresentationSystem, grid: Grid2D) -> np.ndarray:
    """Gram matrix of ``system`` sampled on ``grid``."""
    return gram_from_samples(system.matrix(grid), grid.cell_area)


def basis_matrix(items, grid):
    """Stack fields (or a system) into a ``(K, nx*ny)`` array."""
    if isinstance(items, RepresentationSystem):
        return items.matrix(grid)
    rows = []
    for f in items:
        _same_grid(f.grid, grid)
        rows.append(f.values)
    return np.array(rows, dtype=np.complex128).reshape(len(rows), grid.size)
