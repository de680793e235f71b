"""Command line driver.

Verbs: ``simulate-fibre``, ``calibrate``, ``acquire``, ``reconstruct``,
``features`` and ``experiment``.  Each accepts ``--config <file>`` and one
override flag per config field (``--fibre-n-sensors 1024``).  Exit codes: 0
on success, 2 on invalid input, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import load_calibration, save_calibration
from .config import (STAGE_CAL_NOISE, STAGE_FIBRE, STAGE_LAYOUT, STAGE_MEASUREMENT, STAGE_TISSUE,
                     load_config, override_fields, paper_scale)
from .errors import NumericalError, ValidationError
from .features import (FeatureRecord, FourierCoeffs, fourier_coefficients, gaussian_image, spectrum_fit,
                       write_features_csv, write_ttest_report)
from .fields import FieldSamples, RepresentationSystem, SensorSamples, VectorFieldSamples
from .formats import (file_digest, read_css, read_cto, read_cvf, read_manifest,
                      write_coefficients, write_css, write_cto, write_cvf, write_manifest)
from .images import write_field_images, write_pgm
from .pipeline import (acquire, build_calibration, build_operator, reconstruct, reconstruction_system,
                       run_study, solver_config)
from .rng import GENERATOR_NAME

log = logging.getLogger("vfrecon")

FORMATS = {"CVF1": 1, "CSS1": 1, "CTO1": 1, "calibration-set": 1}


class SampledSystem(RepresentationSystem):
    """A representation system given by its samples on one grid."""

    kind = "sampled"

    def __init__(self, samples, grid):
        self.B = np.asarray(samples, dtype=np.complex128)
        self.grid = grid

    @property
    def size(self):
        return self.B.shape[0]

    def matrix(self, grid):
        if grid != self.grid:
            raise ValidationError("sampled system evaluated on a different grid")
        return self.B

    def evaluate(self, index, grid):
        return self.matrix(grid)[self._check_index(index)]


# ---------------------------------------------------------------------------
# helpers


def _manifest(cmd, cfg, outputs, extra=None):
    data = {
        "command": cmd,
        "package_version": __version__,
        "config": cfg.as_dict(),
        "config_sha256": cfg.digest(),
        "rng": GENERATOR_NAME,
        "seeds": {
            "master": cfg.general.seed,
            "fibre": cfg.seed_for(STAGE_FIBRE),
            "calibration_noise": cfg.seed_for(STAGE_CAL_NOISE),
            "spot_layout": cfg.seed_for(STAGE_LAYOUT),
            "tissue": cfg.seed_for(STAGE_TISSUE),
            "measurement": cfg.seed_for(STAGE_MEASUREMENT),
        },
        "formats": FORMATS,
        "outputs": {str(Path(p).name): file_digest(p) for p in outputs},
    }
    if extra:
        data.update(extra)
    return data


def system_dims(cfg):
    """``"2Mx2N"``: the vector system ``[E_h H_h, E_v H_v]`` read with the calibration index first."""
    return f"{2 * cfg.calibration.M}x{2 * cfg.fibre.n_sensors}"


def _out_dir(path):
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_operator(path):
    p = Path(path)
    meta_path = p.with_suffix(".json")
    meta = {}
    if meta_path.exists():
        m = read_manifest(meta_path)
        meta = {k: m.get(k) for k in ("seed", "decay_rate", "coupling") if k in m}
    return read_cto(p, **meta)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate_fibre(cfg, out):
    op = build_operator(cfg)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_cto(out, op)
    extra = {
        "seed": op.seed, "decay_rate": op.decay_rate, "coupling": op.coupling,
        "operator_shape": list(op.shape), "n_modes": op.n_modes,
        "system_matrix_2Mx2N": system_dims(cfg),
        "input_pixels": op.in_grid.size,
    }
    write_manifest(out.with_suffix(".json"), _manifest("simulate-fibre", cfg, [out], extra))
    return out


def cmd_calibrate(cfg, operator, out):
    op = _load_operator(operator)
    if op.in_grid.nx != cfg.fibre.grid:
        log.info("using operator grid %dx%d", op.in_grid.nx, op.in_grid.ny)
    cal = build_calibration(op, cfg)
    d = _out_dir(out)
    c = cfg.calibration
    extra = {"spot_width": c.spot_width, "jitter": c.jitter, "layout_seed": cfg.seed_for(STAGE_LAYOUT),
             "scheme_b": [cal.scheme.b.real, cal.scheme.b.imag],
             "scheme_a": [cal.scheme.a.real, cal.scheme.a.imag],
             "operator_digest": file_digest(operator)}
    if cal.scheme.variant == "three":
        extra["scheme_c"] = [cal.scheme.c.real, cal.scheme.c.imag]
    # Gram diagnostics of the calibration patterns against the default Fourier system
    if cfg.reconstruction.system == "fourier":
        rs = reconstruction_system(cal, "fourier", cfg.reconstruction.K)
        extra["gram_residuals"] = {"max": float(rs.residuals.max()), "mean": float(rs.residuals.mean()),
                                   "per_function": rs.residuals}
        log.info("Gram residuals of %d Fourier functions: max %.4g, mean %.4g",
                 rs.residuals.size, rs.residuals.max(), rs.residuals.mean())
        for k, (k1, k2) in enumerate(rs.system.index_pairs()):
            log.info("residual k=(%d,%d): %.6g", k1, k2, rs.residuals[k])
    save_calibration(cal, d, extra)
    write_manifest(d / "manifest.json", _manifest("calibrate", cfg, [d / "meta.json"]))
    return d


def cmd_acquire(cfg, operator, field_path, out):
    op = _load_operator(operator)
    f = read_cvf(field_path)
    if not isinstance(f, VectorFieldSamples):
        raise ValidationError("acquire needs a two-polarisation field")
    seed = cfg.seed_for(STAGE_MEASUREMENT, 0, 0)
    y = acquire(op, f, cfg.fibre.sigma, seed)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_css(out, SensorSamples(op.sensor_points, y, npol=2))
    write_manifest(out.with_suffix(".json"),
                   _manifest("acquire", cfg, [out], {"noise_sigma": cfg.fibre.sigma, "noise_seed": seed}))
    return out


def _system_for(cfg, cal):
    kind = cfg.reconstruction.system
    if kind == "spots":
        grid = cal.grid
        B = np.array([e.values for e in cal.scalar_inputs("h")])
        rs = reconstruction_system(cal, "spots")
        rs.system = SampledSystem(B, grid)
        return rs
    return reconstruction_system(cal, "fourier", cfg.reconstruction.K)


def cmd_reconstruct(cfg, calibration, measurement, out):
    cal = load_calibration(calibration)
    g = read_css(measurement)
    if g.npol != 2 or g.n_points != cal.N or not np.array_equal(g.points, cal.sensor_points):
        raise ValidationError("measurement does not match the calibration sensors")
    rs = _system_for(cfg, cal)
    rep, field_ = reconstruct(rs, g, solver_config(cfg))
    d = _out_dir(out)
    outputs = [d / "coefficients.cvf", d / "field.cvf"]
    write_coefficients(outputs[0], rep.coefficients)
    write_cvf(outputs[1], field_)
    outputs += write_field_images(str(d / "recon"), field_, "reconstruction")
    report = rep.manifest()
    report["system"] = rs.meta
    write_manifest(d / "report.json", report)
    outputs.append(d / "report.json")
    write_manifest(d / "manifest.json", _manifest("reconstruct", cfg, outputs))
    if not rep.converged:
        raise NumericalError(f"{rep.method} solver did not converge in {rep.iterations} iterations")
    return d


def _features_of(path, K):
    f = read_cvf(path)
    if isinstance(f, FieldSamples) and f.grid.ny == 1:
        c = f.values
        if c.size % 2:
            raise ValidationError(f"{path}: coefficient record of odd length {c.size}")
        half = c.size // 2
        return [("H", FourierCoeffs(half, c[:half])), ("V", FourierCoeffs(half, c[half:]))]
    if isinstance(f, VectorFieldSamples):
        return [("H", fourier_coefficients(f.h, K, "fft")), ("V", fourier_coefficients(f.v, K, "fft"))]
    return [("H", fourier_coefficients(f, K, "fft"))]


def cmd_features(cfg, inputs, out, group="A", first_n=1):
    records = []
    for n, path in enumerate(inputs, start=first_n):
        for pol, coeffs in _features_of(path, cfg.reconstruction.K):
            records.append(FeatureRecord.from_fit(n, 1, group, pol, spectrum_fit(coeffs)))
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_features_csv(out, records)
    write_manifest(out.with_suffix(".json"), _manifest("features", cfg, [out]))
    return out


def cmd_experiment(cfg, out):
    d = _out_dir(out)
    res = run_study(cfg, keep_coefficients=True)
    outputs = [d / "features.csv", d / "ttest.txt", d / "boxplot.csv"]
    write_features_csv(outputs[0], res.records)
    note = ("per-sample H and V means are z-scored across all samples and averaged "
            "before the test")
    write_ttest_report(outputs[1], res.welch, "low", "high", note)
    with open(outputs[2], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "group", "h_mean", "v_mean", "combined"])
        for n in sorted(res.combined):
            w.writerow([n, res.groups[n], repr(res.samples[(n, "H")].mean),
                        repr(res.samples[(n, "V")].mean), repr(float(res.combined[n]))])
    K = cfg.reconstruction.K
    for (n, i), c in sorted(res.coefficients.items()):
        if i != 1:
            continue
        coeffs = FourierCoeffs(K, c[:K])
        mag = np.abs(coeffs.lattice)
        outputs.append(write_pgm(d / f"sample{n:02d}_h_absft.pgm", mag, f"|f_k| sample {n}"))
        fit = spectrum_fit(coeffs)
        outputs.append(write_pgm(d / f"sample{n:02d}_h_fit.pgm", gaussian_image(fit, mag.shape),
                                 f"Gaussian fit sample {n}"))
    extra = {"welch": {"t": res.welch.t, "df": res.welch.df, "p": res.welch.p},
             "solves": res.meta}
    write_manifest(d / "manifest.json", _manifest("experiment", cfg, outputs, extra))
    return d


# ---------------------------------------------------------------------------
# argument parsing


def _flag(sec, key):
    return f"--{sec}-{key.replace('_', '-')}"


def build_parser():
    p = argparse.ArgumentParser(prog="vfrecon", description="Vector-field reconstruction pipeline")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", help="key/value config file")
        sp.add_argument("--paper-scale", action="store_true", help="use the experimental system size")
        sp.add_argument("-v", "--verbose", action="store_true")
        grp = sp.add_argument_group("config overrides")
        for sec, key, _ in override_fields():
            grp.add_argument(_flag(sec, key), dest=f"ov__{sec}__{key}", metavar="VALUE")
        return sp

    sp = common(sub.add_parser("simulate-fibre", help="write a synthetic transmission operator"))
    sp.add_argument("--out", required=True)
    sp = common(sub.add_parser("calibrate", help="record the calibration set of an operator"))
    sp.add_argument("--operator", required=True)
    sp.add_argument("--out", required=True)
    sp = common(sub.add_parser("acquire", help="propagate a CVF1 field to CSS1 measurements"))
    sp.add_argument("--operator", required=True)
    sp.add_argument("--field", required=True)
    sp.add_argument("--out", required=True)
    sp = common(sub.add_parser("reconstruct", help="reconstruct a measurement"))
    sp.add_argument("--calibration", required=True)
    sp.add_argument("--measurement", required=True)
    sp.add_argument("--out", required=True)
    sp = common(sub.add_parser("features", help="Gaussian spectral features of fields or coefficients"))
    sp.add_argument("inputs", nargs="+")
    sp.add_argument("--out", required=True)
    sp.add_argument("--group", default="A")
    sp.add_argument("--first-n", type=int, default=1)
    sp = common(sub.add_parser("experiment", help="run the two-group feature study"))
    sp.add_argument("--out", required=True)
    return p


def _config_from(args):
    overrides = {}
    for name, val in vars(args).items():
        if name.startswith("ov__") and val is not None:
            _, sec, key = name.split("__", 2)
            overrides[f"{sec}.{key}"] = val
    cfg = load_config(args.config, overrides)
    if args.paper_scale:
        cfg = paper_scale(cfg).validate()
    return cfg


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = _config_from(args)
    if args.verb == "simulate-fibre":
        return cmd_simulate_fibre(cfg, args.out)
    if args.verb == "calibrate":
        return cmd_calibrate(cfg, args.operator, args.out)
    if args.verb == "acquire":
        return cmd_acquire(cfg, args.operator, args.field, args.out)
    if args.verb == "reconstruct":
        return cmd_reconstruct(cfg, args.calibration, args.measurement, args.out)
    if args.verb == "features":
        return cmd_features(cfg, args.inputs, args.out, args.group, args.first_n)
    return cmd_experiment(cfg, args.out)


def main(argv=None):
    try:
        run(argv)
    except (ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
