"""Inversion of complex linear systems ``g = A f + noise``.

Four approaches: naive (``A^* g``), least squares, Tikhonov and l1.  The l1
solver minimises ``0.5 ||g - A f||^2 + lam * sum_k |f_k|`` where ``|.|`` is
the complex modulus, using accelerated proximal gradient steps with complex
soft-thresholding and monotone restarts.

With ``SolverConfig(normalise=True)`` the system is rescaled before solving so
that the RMS column norm of ``A`` is 1 and the RMS entry of ``g`` is 1, which
makes ``lam`` independent of the units of the data.  Coefficients are always
reported in the units of the original system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, cg

from .calibration import AssembledSystem
from .errors import RankDeficientError, ValidationError
from .fields import FieldSamples, FourierSystem, Grid2D, RepresentationSystem, VectorFieldSamples
from .rng import make_rng

METHODS = ("naive", "least_squares", "tikhonov", "l1")

# Defaults for the regularisation weight by representation (spot basis / Fourier)
LAMBDA_SPOT = {"tikhonov": 0.3, "l1": 0.267}
LAMBDA_FOURIER = {"tikhonov": 10.0, "l1": 0.25}

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SolverConfig:
    method: str = "least_squares"
    lam: float = 0.0
    max_iter: int = 2000
    tol: float = 1e-8
    normalise: bool = False
    # l1 only: also require the subgradient optimality violation <= opt_tol * lam
    opt_tol: float | None = None
    dense_limit: int = 512
    power_iterations: int = 50
    lipschitz_safety: float = 1.05

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown solver method {self.method!r}")
        if self.lam < 0:
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValidationError("tol must be > 0")


@dataclass(eq=False)
class SolveReport:
    coefficients: np.ndarray
    iterations: int
    final_objective: float
    residual_norm: float
    converged: bool
    method: str = ""
    lam: float = 0.0
    objective: str = ""
    scale: tuple = (1.0, 1.0)
    history: np.ndarray | None = field(default=None, repr=False)

    def manifest(self):
        return {
            "method": self.method,
            "lambda": self.lam,
            "iterations": int(self.iterations),
            "objective": self.objective,
            "final_objective": float(self.final_objective),
            "residual_norm": float(self.residual_norm),
            "converged": bool(self.converged),
            "column_scale": float(self.scale[0]),
            "rhs_scale": float(self.scale[1]),
            "n_coefficients": int(self.coefficients.size),
        }


def _unpack(system):
    if isinstance(system, AssembledSystem):
        return system.matrix, system.rhs
    A, g = system
    return np.asarray(A, dtype=np.complex128), np.asarray(g, dtype=np.complex128)


def _rhs_scale(g):
    rms = np.sqrt(np.mean(np.abs(g) ** 2, axis=0))
    return np.where(rms > 0, 1.0 / np.where(rms > 0, rms, 1.0), 1.0)


def normalisation(A, g):
    """Return ``(c, d)`` so that ``c A`` has unit RMS column norm and ``d g``
    has unit RMS entry (``d`` is per column for a block of right-hand sides)."""
    col = np.sqrt(np.mean(np.sum(np.abs(A) ** 2, axis=0)))
    c = 1.0 / col if col > 0 else 1.0
    d = _rhs_scale(g)
    return c, (float(d) if np.ndim(d) == 0 else d)


def _finish(A, g, f, method, lam, objective_value, objective, iterations, converged,
            scale=(1.0, 1.0), history=None):
    resid = float(np.linalg.norm(g - A @ f))
    return SolveReport(f, iterations, float(objective_value), resid, bool(converged), method,
                       float(lam), objective, scale, history)


def solve(system, config: SolverConfig) -> SolveReport:
    """Dispatch on ``config.method``, applying normalisation if requested."""
    A, g = _unpack(system)
    c, d = normalisation(A, g) if config.normalise else (1.0, 1.0)
    An, gn = c * A, d * g
    impl = {"naive": lambda: solve_naive((An, gn)),
            "least_squares": lambda: solve_least_squares((An, gn), config),
            "tikhonov": lambda: solve_tikhonov((An, gn), config),
            "l1": lambda: solve_l1((An, gn), config)}[config.method]
    rep = impl()
    if config.normalise:
        rep.coefficients = rep.coefficients * (c / d)
        rep.residual_norm = float(np.linalg.norm(g - A @ rep.coefficients))
        rep.scale = (c, d)
    return rep


def solve_naive(system) -> SolveReport:
    """Phase-conjugation estimate ``f = A^* g``."""
    A, g = _unpack(system)
    f = A.conj().T @ g
    r = float(np.linalg.norm(g - A @ f))
    return _finish(A, g, f, "naive", 0.0, r, "||g - A f||_2", 1, True)


def _rank_check_dense(A):
    sv = sla.svdvals(A)
    m, n = A.shape
    thresh = max(m, n) * _EPS * sv[0]
    if sv[0] == 0 or sv.size < n or sv[-1] <= thresh:
        smallest = 0.0 if sv.size < n else sv[-1]
        raise RankDeficientError(
            f"system matrix ({m}x{n}) is rank deficient: smallest singular value "
            f"{smallest:.3e} <= {thresh:.3e}"
        )


def _rank_check_normal(N, m):
    n = N.shape[0]
    w = np.linalg.eigvalsh(N)
    thresh = 10 * n * _EPS * w[-1]
    if w[-1] <= 0 or w[0] <= thresh:
        raise RankDeficientError(
            f"system matrix ({m}x{n}) is rank deficient: smallest eigenvalue of the normal "
            f"matrix {max(w[0], 0.0):.3e} <= {thresh:.3e}"
        )


def _cg(apply, b, tol, max_iter):
    n = b.shape[0]
    op = LinearOperator((n, n), matvec=apply, dtype=np.complex128)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = cg(op, b, rtol=tol, atol=0.0, maxiter=max_iter, callback=cb)
    return x, count[0], info == 0


def solve_least_squares(system, config: SolverConfig = SolverConfig()) -> SolveReport:
    """Minimise ``||g - A f||_2``; fail loudly if ``A`` is rank deficient.

    Up to ``config.dense_limit`` unknowns the problem is solved with an
    SVD-based dense factorisation, beyond it with conjugate gradients on the
    normal equations.
    """
    A, g = _unpack(system)
    m, n = A.shape
    if m < n:
        raise RankDeficientError(f"underdetermined system ({m} rows < {n} unknowns)")
    if n <= config.dense_limit:
        _rank_check_dense(A)
        f = sla.lstsq(A, g, lapack_driver="gelsd")[0]
        it, conv = 1, True
    else:
        N = A.conj().T @ A
        _rank_check_normal(N, m)
        f, it, conv = _cg(lambda p: N @ p, A.conj().T @ g, config.tol, config.max_iter)
    r = float(np.linalg.norm(g - A @ f))
    return _finish(A, g, f, "least_squares", 0.0, r, "||g - A f||_2", it, conv)


def solve_tikhonov(system, config: SolverConfig) -> SolveReport:
    """``f = (A^* A + lam I)^{-1} A^* g``."""
    if config.lam == 0:
        rep = solve_least_squares(system, config)
        rep.method = "tikhonov"
        return rep
    A, g = _unpack(system)
    m, n = A.shape
    lam = config.lam
    rhs = A.conj().T @ g
    if n <= config.dense_limit:
        M = A.conj().T @ A
        M[np.diag_indices(n)] += lam
        f = sla.solve(M, rhs, assume_a="pos")
        it, conv = 1, True
    else:
        f, it, conv = _cg(lambda p: A.conj().T @ (A @ p) + lam * p, rhs, config.tol, config.max_iter)
    r = float(np.linalg.norm(g - A @ f))
    obj = 0.5 * r**2 + 0.5 * lam * float(np.vdot(f, f).real)
    return _finish(A, g, f, "tikhonov", lam, obj, "0.5||g - A f||^2 + 0.5 lam ||f||^2", it, conv)


# ---------------------------------------------------------------------------
# l1


def soft_threshold(z, t):
    """Complex soft-thresholding: ``max(|z| - t, 0) z / |z|`` (0 at z = 0)."""
    z = np.asarray(z)
    mag = np.abs(z)
    scale = np.maximum(mag - t, 0.0) / np.where(mag > 0, mag, 1.0)
    return z * scale


class _Normal:
    """Applies ``A^* A`` either through a precomputed matrix or through ``A``."""

    def __init__(self, A):
        self.A = A
        m, n = A.shape
        self.N = A.conj().T @ A if m >= n else None

    def __call__(self, X):
        if self.N is not None:
            return self.N @ X
        return self.A.conj().T @ (self.A @ X)


def lipschitz_estimate(normal, n, iterations=50, safety=1.05, seed=0):
    """Largest eigenvalue of ``A^* A`` by power iteration, times ``safety``."""
    rng = make_rng(seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iterations):
        w = normal(v)
        lam = float(np.vdot(v, w).real)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
    return safety * lam


def _l1_objective(X, NX, Ahg, g_sq, lam):
    quad = 0.5 * np.sum((X.conj() * NX).real, axis=0) - np.sum((X.conj() * Ahg).real, axis=0)
    return 0.5 * g_sq + quad + lam * np.sum(np.abs(X), axis=0)


def l1_optimality(X, NX, Ahg, lam):
    """Largest violation of the l1 subgradient optimality conditions per column."""
    grad = NX - Ahg
    mag = np.abs(X)
    on = mag > 0
    unit = np.where(on, X / np.where(on, mag, 1.0), 0.0)
    viol = np.where(on, np.abs(grad + lam * unit), np.maximum(np.abs(grad) - lam, 0.0))
    return viol.max(axis=0)


def fista(A, G, lam, config: SolverConfig):
    """Monotone-restart FISTA for one or many right-hand sides.

    ``G`` is ``(m,)`` or ``(m, B)``.  Returns ``(X, iterations, converged,
    objective, history)`` with per-column arrays; ``history`` holds the
    objective after every iteration for the first column.
    """
    single = G.ndim == 1
    G = G[:, None] if single else G
    m, n = A.shape
    B = G.shape[1]
    normal = _Normal(A)
    Ahg = A.conj().T @ G
    g_sq = np.sum(np.abs(G) ** 2, axis=0)
    L = lipschitz_estimate(normal, n, config.power_iterations, config.lipschitz_safety)
    X = np.zeros((n, B), dtype=np.complex128)
    if L == 0:
        F = 0.5 * g_sq
        return (X[:, 0] if single else X), np.zeros(B, int), np.ones(B, bool), F, np.array([F[0]])
    L = np.full(B, L)
    NX = np.zeros_like(X)
    FX = 0.5 * g_sq.copy()
    Y, NY = X.copy(), NX.copy()
    t = np.ones(B)
    at_x = np.ones(B, bool)  # Y == X (fresh restart)
    active = np.ones(B, bool)
    iters = np.zeros(B, int)
    history = [FX[0]]
    tiny = np.finfo(float).tiny

    for _ in range(config.max_iter):
        cols = np.flatnonzero(active)
        if cols.size == 0:
            break
        iters[cols] += 1
        x, nx_, y, ny, Lc = X[:, cols], NX[:, cols], Y[:, cols], NY[:, cols], L[cols]
        Z = soft_threshold(y - (ny - Ahg[:, cols]) / Lc, lam / Lc)
        NZ = normal(Z)
        FZ = _l1_objective(Z, NZ, Ahg[:, cols], g_sq[cols], lam)
        # objective differences below the rounding level of its evaluation carry no
        # information; accepting such steps lets plain prox steps keep contracting
        slack = 16 * _EPS * (0.5 * g_sq[cols] + np.abs(FX[cols]))
        accept = FZ <= FX[cols] + slack
        dec = FX[cols] - FZ

        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t[cols] ** 2))
        mom = (t[cols] - 1) / t_new
        Y_acc = Z + mom * (Z - x)
        NY_acc = NZ + mom * (NZ - nx_)

        done = accept & (dec <= config.tol * np.maximum(np.abs(FZ), tiny))
        if config.opt_tol is not None and done.any():
            opt = l1_optimality(Z, NZ, Ahg[:, cols], lam)
            done &= opt <= config.opt_tol * lam

        # accepted columns advance, rejected ones restart from x
        X[:, cols] = np.where(accept, Z, x)
        NX[:, cols] = np.where(accept, NZ, nx_)
        FX[cols] = np.where(accept, FZ, FX[cols])
        Y[:, cols] = np.where(accept, Y_acc, x)
        NY[:, cols] = np.where(accept, NY_acc, nx_)
        # a rejected plain step means the step size is too long
        grow = ~accept & at_x[cols]
        L[cols] = np.where(grow, 2 * Lc, Lc)
        t[cols] = np.where(accept, t_new, 1.0)
        at_x[cols] = ~accept
        active[cols[done]] = False
        history.append(FX[0])

    converged = ~active
    if single:
        return X[:, 0], iters, converged, FX, np.array(history)
    return X, iters, converged, FX, np.array(history)


def solve_l1(system, config: SolverConfig) -> SolveReport:
    """Minimise ``0.5 ||g - A f||_2^2 + lam * sum_k |f_k|``."""
    if not config.lam > 0:
        raise ValidationError(f"l1 solver needs lam > 0, got {config.lam}")
    A, g = _unpack(system)
    f, iters, conv, F, hist = fista(A, g, config.lam, config)
    return _finish(A, g, f, "l1", config.lam, F[0], "0.5||g - A f||^2 + lam ||f||_1",
                   int(iters[0]), bool(conv[0]), history=hist)


def solve_many(system_matrix, rhs_block, config: SolverConfig):
    """Solve one system for several right-hand sides (columns of ``rhs_block``).

    Returns a list of :class:`SolveReport`.  For l1 the iterations are
    batched; other methods loop.
    """
    A = np.asarray(system_matrix, dtype=np.complex128)
    G = np.asarray(rhs_block, dtype=np.complex128)
    if config.method != "l1":
        return [solve((A, G[:, b]), config) for b in range(G.shape[1])]
    if not config.lam > 0:
        raise ValidationError(f"l1 solver needs lam > 0, got {config.lam}")
    if config.normalise:
        c, d = normalisation(A, G)
    else:
        c, d = 1.0, np.ones(G.shape[1])
    X, iters, conv, F, _ = fista(c * A, G * d, config.lam, config)
    out = []
    for b in range(G.shape[1]):
        f = X[:, b] * (c / d[b])
        rep = _finish(A, G[:, b], f, "l1", config.lam, F[b], "0.5||g - A f||^2 + lam ||f||_1",
                      int(iters[b]), bool(conv[b]), scale=(c, float(d[b])))
        out.append(rep)
    return out


# ---------------------------------------------------------------------------
# expansion


def expand(coefficients, system: RepresentationSystem, grid: Grid2D) -> FieldSamples:
    """``sum_k c_k H_k`` sampled on ``grid``."""
    c = np.asarray(coefficients, dtype=np.complex128).ravel()
    if c.size != system.size:
        raise ValidationError(f"{c.size} coefficients for a system of size {system.size}")
    if isinstance(system, FourierSystem):
        return FieldSamples(grid, system.synthesize(c, grid))
    return FieldSamples(grid, c @ system.matrix(grid))


def expand_vector(coefficients, system_h, grid, system_v=None) -> VectorFieldSamples:
    """Split ``[f_h; f_v]`` and expand each polarisation."""
    system_v = system_h if system_v is None else system_v
    c = np.asarray(coefficients).ravel()
    K = system_h.size
    if c.size != K + system_v.size:
        raise ValidationError(f"{c.size} coefficients, expected {K + system_v.size}")
    return VectorFieldSamples(expand(c[:K], system_h, grid), expand(c[K:], system_v, grid))
