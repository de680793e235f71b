"""Binary file formats and text manifests.

All binary formats are little-endian.

CVF1 (complex vector field)::

    b"CVF1", u32 version=1, u32 npol, u32 ny, u32 nx,
    f64 x_min, x_max, y_min, y_max,
    complex128[npol*ny*nx]   row-major, h block first

CSS1 (complex sensor samples)::

    b"CSS1", u32 version=1, u32 npol, u32 N,
    f64[N, 2] point coordinates, complex128[npol*N] interleaved per point

CTO1 (transmission operator, stored as SVD factors)::

    b"CTO1", u32 version=1, u32 N, u32 P, u32 n_modes, u32 nx, u32 ny,
    f64[n_modes] singular values,
    complex128[2N, n_modes] U (column-major), complex128[2P, n_modes] V (column-major),
    f64 x_min, x_max, y_min, y_max, f64[N, 2] sensor coordinates
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .fields import FieldSamples, Grid2D, SensorSamples, VectorFieldSamples

VERSION = 1
_C128 = np.dtype("<c16")
_F64 = np.dtype("<f8")


def _read_exact(fh, n, path):
    data = fh.read(n)
    if len(data) != n:
        raise ValidationError(f"{path}: truncated file")
    return data


def _check_magic(fh, magic, path):
    got = fh.read(4)
    if got != magic:
        raise ValidationError(f"{path}: bad magic {got!r}, expected {magic!r}")


def _read_array(fh, dtype, count, path):
    return np.frombuffer(_read_exact(fh, dtype.itemsize * count, path), dtype=dtype).copy()


# --- CVF1 -------------------------------------------------------------------


def write_cvf(path, field):
    """Write a :class:`FieldSamples` or :class:`VectorFieldSamples`."""
    if isinstance(field, VectorFieldSamples):
        comps = [field.h, field.v]
    else:
        comps = [field]
    grid = comps[0].grid
    with open(path, "wb") as fh:
        fh.write(b"CVF1")
        fh.write(struct.pack("<4I", VERSION, len(comps), grid.ny, grid.nx))
        fh.write(struct.pack("<4d", *grid.extent))
        for c in comps:
            fh.write(np.ascontiguousarray(c.values, dtype=_C128).tobytes())


def read_cvf(path):
    """Read a CVF1 file; returns a scalar or vector field depending on npol."""
    with open(path, "rb") as fh:
        _check_magic(fh, b"CVF1", path)
        version, npol, ny, nx = struct.unpack("<4I", _read_exact(fh, 16, path))
        if version != VERSION or npol not in (1, 2):
            raise ValidationError(f"{path}: unsupported version {version} / npol {npol}")
        extent = struct.unpack("<4d", _read_exact(fh, 32, path))
        grid = Grid2D(*extent, nx, ny)
        vals = _read_array(fh, _C128, npol * nx * ny, path).reshape(npol, -1)
    if npol == 1:
        return FieldSamples(grid, vals[0])
    return VectorFieldSamples(FieldSamples(grid, vals[0]), FieldSamples(grid, vals[1]))


def write_coefficients(path, coeffs):
    """Coefficient vectors are stored as a 1 x K CVF1 record."""
    coeffs = np.asarray(coeffs, dtype=np.complex128).ravel()
    grid = Grid2D(0.0, float(coeffs.size), 0.0, 1.0, coeffs.size, 1)
    write_cvf(path, FieldSamples(grid, coeffs))


def read_coefficients(path):
    f = read_cvf(path)
    if not isinstance(f, FieldSamples) or f.grid.ny != 1:
        raise ValidationError(f"{path}: not a 1 x K coefficient record")
    return f.values.copy()


# --- CSS1 -------------------------------------------------------------------


def write_css(path, samples):
    with open(path, "wb") as fh:
        fh.write(b"CSS1")
        fh.write(struct.pack("<3I", VERSION, samples.npol, samples.n_points))
        fh.write(np.ascontiguousarray(samples.points, dtype=_F64).tobytes())
        fh.write(np.ascontiguousarray(samples.values, dtype=_C128).tobytes())


def read_css(path):
    with open(path, "rb") as fh:
        _check_magic(fh, b"CSS1", path)
        version, npol, n = struct.unpack("<3I", _read_exact(fh, 12, path))
        if version != VERSION:
            raise ValidationError(f"{path}: unsupported version {version}")
        pts = _read_array(fh, _F64, 2 * n, path).reshape(n, 2)
        vals = _read_array(fh, _C128, npol * n, path)
    return SensorSamples(pts, vals, npol)


# --- CTO1 -------------------------------------------------------------------


def write_cto(path, op):
    N, P, r = op.n_sensors, op.in_grid.size, op.n_modes
    with open(path, "wb") as fh:
        fh.write(b"CTO1")
        fh.write(struct.pack("<6I", VERSION, N, P, r, op.in_grid.nx, op.in_grid.ny))
        fh.write(np.ascontiguousarray(op.s, dtype=_F64).tobytes())
        fh.write(np.asfortranarray(op.U, dtype=_C128).tobytes(order="F"))
        fh.write(np.asfortranarray(op.V, dtype=_C128).tobytes(order="F"))
        fh.write(struct.pack("<4d", *op.in_grid.extent))
        fh.write(np.ascontiguousarray(op.sensor_points, dtype=_F64).tobytes())


def read_cto(path, **meta):
    """Read a CTO1 file into a :class:`~vfrecon.fibersim.TransmissionOperator`.

    ``meta`` (seed, decay_rate, coupling) is not part of the binary record and
    is normally taken from the accompanying manifest.
    """
    from .fibersim import TransmissionOperator

    with open(path, "rb") as fh:
        _check_magic(fh, b"CTO1", path)
        version, N, P, r, nx, ny = struct.unpack("<6I", _read_exact(fh, 24, path))
        if version != VERSION or nx * ny != P:
            raise ValidationError(f"{path}: inconsistent header")
        s = _read_array(fh, _F64, r, path)
        U = _read_array(fh, _C128, 2 * N * r, path).reshape((2 * N, r), order="F")
        V = _read_array(fh, _C128, 2 * P * r, path).reshape((2 * P, r), order="F")
        extent = struct.unpack("<4d", _read_exact(fh, 32, path))
        pts = _read_array(fh, _F64, 2 * N, path).reshape(N, 2)
    return TransmissionOperator(Grid2D(*extent, nx, ny), pts, U, s, V, **meta)


# --- manifests --------------------------------------------------------------


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, data):
    """Write a JSON manifest with sorted keys (stable bytes across reruns)."""
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def read_manifest(path):
    return json.loads(Path(path).read_text())


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")
