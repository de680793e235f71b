"""End-to-end stages shared by the command line and the experiments.

Stages: build the fibre operator, calibrate it with Gaussian spots, build
the reconstruction system (spots themselves or a Fourier basis reached
through a change of basis), reconstruct measured fields, and run the
two-group feature study.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .calibration import (CalibrationSet, PhaseShiftScheme, change_of_basis, make_spot_calibration,
                          polarisation_blocks, run_calibration)
from .config import (STAGE_CAL_NOISE, STAGE_FIBRE, STAGE_LAYOUT, STAGE_MEASUREMENT, STAGE_TISSUE,
                     ExperimentConfig)
from .errors import ValidationError
from .features import (FeatureRecord, FourierCoeffs, aggregate_features, combine_polarisations,
                       spectrum_fit, welch_t_test)
from .fibersim import NoiseModel, TransmissionOperator, add_noise, forward, make_operator
from .fields import FourierSystem, Grid2D, eval_basis
from .solvers import SolverConfig, expand_vector, solve, solve_many
from .tissuesim import TissueParams, category_ladder, gen_tissue, image_seeds

log = logging.getLogger(__name__)


def build_operator(cfg: ExperimentConfig) -> TransmissionOperator:
    f = cfg.fibre
    return make_operator(cfg.seed_for(STAGE_FIBRE), Grid2D.unit(f.grid), f.n_sensors, f.n_modes,
                         f.decay_rate, f.coupling)


def scheme_from(cfg: ExperimentConfig) -> PhaseShiftScheme:
    c = cfg.calibration
    if c.scheme == "two":
        return PhaseShiftScheme.two(c.beta)
    return PhaseShiftScheme.three(c.beta, c.gamma)


def build_calibration(op: TransmissionOperator, cfg: ExperimentConfig) -> CalibrationSet:
    c = cfg.calibration
    inputs = make_spot_calibration(c.M, op.in_grid, c.spot_width, cfg.seed_for(STAGE_LAYOUT), c.jitter)
    noise = NoiseModel(c.sigma, cfg.seed_for(STAGE_CAL_NOISE))
    return run_calibration(op, inputs, scheme_from(cfg), noise)


@dataclass(eq=False)
class ReconstructionSystem:
    """Assembled matrix ``[E_h H_h, E_v H_v]`` plus what is needed to expand."""

    matrix: np.ndarray
    system: object  # RepresentationSystem of the unknowns
    H: np.ndarray | None
    grid: Grid2D
    sensor_points: np.ndarray
    residuals: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def K(self):
        return self.matrix.shape[1] // 2


def reconstruction_system(cal: CalibrationSet, kind="fourier", K=400, spot_system_=None) -> ReconstructionSystem:
    """Build the system matrix for the chosen representation.

    ``kind="spots"`` reconstructs in the calibration inputs themselves
    (``H = I``); ``kind="fourier"`` expresses ``K`` Fourier exponentials
    through the calibration inputs by a Gram solve.
    """
    grid = cal.grid
    E_h, E_v = polarisation_blocks(cal)
    if kind == "spots":
        system = spot_system_
        A = np.hstack([E_h, E_v])
        return ReconstructionSystem(A, system, None, grid, cal.sensor_points,
                                    meta={"kind": "spots", "K": cal.M})
    if kind != "fourier":
        raise ValidationError(f"unknown representation {kind!r}")
    system = FourierSystem(int(K), grid.extent)
    if system.side // 2 > min(grid.nx, grid.ny) // 2:
        raise ValidationError(f"K={K} exceeds the Nyquist limit of the {grid.nx}x{grid.ny} grid")
    targets = [eval_basis(system, k, grid) for k in range(system.size)]
    # h and v calibration patterns coincide for spot calibration, so one H serves both
    bc = change_of_basis(cal.scalar_inputs("h"), targets, grid)
    if any(a is not b for a, b in cal.inputs):
        bc_v = change_of_basis(cal.scalar_inputs("v"), targets, grid)
        H_v = bc_v.H
    else:
        H_v = bc.H
    A = np.hstack([E_h @ bc.H, E_v @ H_v])
    return ReconstructionSystem(A, system, bc.H, grid, cal.sensor_points, bc.residuals,
                                meta={"kind": "fourier", "K": int(K)})


def solver_config(cfg: ExperimentConfig, method=None, lam=None) -> SolverConfig:
    r = cfg.reconstruction
    return SolverConfig(method or r.method, r.lam if lam is None else lam, max_iter=r.max_iter,
                        tol=r.tol, normalise=r.normalise)


def reconstruct(rs: ReconstructionSystem, g, config: SolverConfig):
    """Solve for the coefficients of one measurement; returns ``(report, field)``."""
    g = g.values if hasattr(g, "values") else np.asarray(g)
    if g.shape[0] != rs.matrix.shape[0]:
        raise ValidationError(f"measurement length {g.shape[0]} != system rows {rs.matrix.shape[0]}")
    rep = solve((rs.matrix, g), config)
    field_ = expand_vector(rep.coefficients, rs.system, rs.grid) if rs.system is not None else None
    return rep, field_


def acquire(op, field_, sigma, seed):
    """Noisy measurement of a vector field."""
    clean = forward(op, field_)
    return add_noise(clean, NoiseModel(sigma, seed))


# ---------------------------------------------------------------------------
# two-group study


@dataclass(eq=False)
class StudyResult:
    records: list
    samples: dict
    combined: dict
    groups: dict
    welch: object
    reports: list = field(default_factory=list)
    coefficients: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def study_design(cfg: ExperimentConfig):
    """``[(n, group, category)]`` with samples ``1..S`` low and ``S+1..2S`` high.

    In the null design both groups use the low category.
    """
    s = cfg.study
    S = s.samples_per_group
    high = s.low_category if s.null else s.high_category
    return [(n, "low", s.low_category) for n in range(1, S + 1)] + \
           [(n, "high", high) for n in range(S + 1, 2 * S + 1)]


def study_fields(cfg: ExperimentConfig, grid: Grid2D):
    """Yield ``(n, i, group, field)`` for every sub-image of the study."""
    ladder = category_ladder(cfg.study.n_categories)
    base = cfg.seed_for(STAGE_TISSUE)
    for n, group, j in study_design(cfg):
        tau, rho = ladder[j - 1]
        for i in range(1, cfg.study.sub_images + 1):
            ps, amp = image_seeds(base, n, i)
            params = TissueParams.at_scale(tau, rho, ps, grid.nx)
            yield n, i, group, gen_tissue(params, amp, shared_phase=cfg.study.shared_phase)


def run_study(cfg: ExperimentConfig, op=None, rs=None, keep_coefficients=False) -> StudyResult:
    """Tissue -> fibre -> Fourier reconstruction -> Gaussian fits -> Welch test."""
    if cfg.reconstruction.system != "fourier":
        raise ValidationError("the feature study reconstructs in a Fourier system")
    if op is None:
        op = build_operator(cfg)
    if rs is None:
        rs = reconstruction_system(build_calibration(op, cfg), "fourier", cfg.reconstruction.K)
    K = rs.K
    labels, G = [], []
    for n, i, group, f in study_fields(cfg, op.in_grid):
        labels.append((n, i, group))
        G.append(acquire(op, f, cfg.fibre.sigma, cfg.seed_for(STAGE_MEASUREMENT, n, i)))
    G = np.column_stack(G)
    sc = solver_config(cfg)
    reports = solve_many(rs.matrix, G, sc)
    records, coeffs = [], {}
    for (n, i, group), rep in zip(labels, reports):
        c = rep.coefficients
        for pol, part in (("H", c[:K]), ("V", c[K:])):
            fit = spectrum_fit(FourierCoeffs(K, part))
            records.append(FeatureRecord.from_fit(n, i, group, pol, fit))
        if keep_coefficients:
            coeffs[(n, i)] = c
    return summarise(records, reports, coeffs, cfg)


def summarise(records, reports=(), coeffs=None, cfg=None) -> StudyResult:
    samples = aggregate_features(records)
    ns = sorted({k[0] for k in samples})
    h = [samples[(n, "H")].mean for n in ns]
    v = [samples[(n, "V")].mean for n in ns]
    z = combine_polarisations(h, v)
    combined = dict(zip(ns, z))
    groups = {n: samples[(n, "H")].group for n in ns}
    low = [combined[n] for n in ns if groups[n] == "low"]
    high = [combined[n] for n in ns if groups[n] == "high"]
    w = welch_t_test(low, high)
    meta = {"n_converged": int(sum(r.converged for r in reports)), "n_solves": len(reports)}
    return StudyResult(list(records), samples, combined, groups, w, list(reports), coeffs or {}, meta)
