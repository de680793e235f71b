"""8-bit portable graymap output with min/max sidecar files."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def to_uint8(img):
    """Linear min/max map onto 0..255; returns ``(bytes_array, lo, hi)``."""
    a = np.asarray(img, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    if hi > lo:
        q = np.round(255.0 * (a - lo) / (hi - lo))
    else:
        q = np.zeros_like(a)
    return q.astype(np.uint8), lo, hi


def write_pgm(path, img, label=""):
    """Write a binary PGM (P5) and ``<path>.txt`` holding the value range."""
    q, lo, hi = to_uint8(img)
    h, w = q.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())
    side = [f"min: {lo!r}", f"max: {hi!r}"]
    if label:
        side.insert(0, f"label: {label}")
    Path(str(path) + ".txt").write_text("\n".join(side) + "\n")
    return path


def read_pgm(path):
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit graymaps are supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def wrapped_phase(values):
    """Phase in ``(-pi, pi]``."""
    ph = np.angle(values)
    return np.where(ph <= -np.pi, ph + 2 * np.pi, ph)


def write_field_images(prefix, field, label=""):
    """Amplitude and wrapped phase graymaps of both polarisations."""
    out = []
    for pol, comp in (("h", field.h), ("v", field.v)):
        img = comp.image
        out.append(write_pgm(f"{prefix}_{pol}_amplitude.pgm", np.abs(img), f"{label} |F_{pol}|"))
        out.append(write_pgm(f"{prefix}_{pol}_phase.pgm", wrapped_phase(img), f"{label} arg F_{pol}"))
    return out
