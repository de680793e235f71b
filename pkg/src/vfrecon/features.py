"""Fourier-domain features of complex fields.

The feature of a field is the spread of its Fourier magnitude: an
axis-aligned Gaussian ``a exp(-(w1-c1)^2/(2 s1^2) - (w2-c2)^2/(2 s2^2))`` is
fitted to ``|f_k|`` and ``s1 + s2`` summarises how slowly the spectrum
decays.  Per-sample features are averaged over sub-images and two groups are
compared with Welch's t-test.
"""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFitError, ValidationError
from .fields import FieldSamples, FourierSystem, fourier_side

# ---------------------------------------------------------------------------
# Fourier coefficients


@dataclass(frozen=True, eq=False)
class FourierCoeffs:
    """Coefficients ``f_k`` ordered row-major over ``(k1, k2)``.

    ``k1`` is the frequency along x (array axis 0 of :attr:`lattice`), ``k2``
    along y; both run over ``-s/2 .. s/2-1`` with ``s = sqrt(K)``.
    """

    K: int
    values: np.ndarray

    def __post_init__(self):
        fourier_side(self.K)
        v = np.asarray(self.values, dtype=np.complex128).ravel()
        if v.size != self.K:
            raise ValidationError(f"{v.size} coefficients for K={self.K}")
        object.__setattr__(self, "values", v)

    @property
    def side(self):
        return fourier_side(self.K)

    @property
    def frequencies(self):
        s = self.side
        return np.arange(-s // 2, s // 2)

    @property
    def lattice(self):
        """``(s, s)`` array indexed ``[k1 + s/2, k2 + s/2]``."""
        return self.values.reshape(self.side, self.side)

    def index_pairs(self):
        return FourierSystem(self.K).index_pairs()


def _check_nyquist(side, n, axis):
    if side // 2 > n // 2:
        raise ValidationError(
            f"K={side * side} needs |k| up to {side // 2} but the grid has only {n} samples along {axis}"
        )


def fourier_coefficients(field: FieldSamples, K, method="quadrature") -> FourierCoeffs:
    """``f_k = <F, H_k>`` on the grid's domain mapped onto the unit square.

    ``method="quadrature"`` evaluates the separable midpoint sums directly;
    ``method="fft"`` obtains the same sums from a 2D FFT of the samples.
    """
    grid = field.grid
    s = fourier_side(K)
    _check_nyquist(s, grid.nx, "x")
    _check_nyquist(s, grid.ny, "y")
    system = FourierSystem(K, grid.extent)
    if method == "quadrature":
        return FourierCoeffs(K, system.analyse(field.values, grid))
    if method != "fft":
        raise ValidationError(f"unknown method {method!r}")
    k = system.frequencies
    F = np.fft.fft2(field.image)  # axis 0: y frequency, axis 1: x frequency
    # sample u_i = -1/2 + (i + 1/2)/n, so exp(-2 pi i k u_i) = phase(k) * exp(-2 pi i k i / n)
    px = np.exp(-2j * np.pi * k * (-0.5 + 0.5 / grid.nx))
    py = np.exp(-2j * np.pi * k * (-0.5 + 0.5 / grid.ny))
    sub = F[np.ix_(k % grid.ny, k % grid.nx)].T  # [k1, k2]
    C = px[:, None] * sub * py[None, :]
    return FourierCoeffs(K, system._norm() * grid.cell_area * C.ravel())


def fourier_coefficients_1d(values, n_coeffs=20, interval=(-0.5, 0.5)):
    """``f_k = int F(x) exp(-2 pi i k u(x)) dx`` for ``k = -n/2 .. n/2-1``.

    ``values`` are samples at the cell centres of ``interval``; ``u`` maps the
    interval onto ``[-1/2, 1/2]`` and the exponentials are normalised on it.
    """
    values = np.asarray(values, dtype=np.complex128)
    n = values.size
    if n_coeffs % 2 or n_coeffs < 2:
        raise ValidationError("n_coeffs must be even and >= 2")
    if n_coeffs // 2 > n // 2:
        raise ValidationError(f"{n_coeffs} coefficients exceed the Nyquist limit of {n} samples")
    lo, hi = interval
    L = hi - lo
    u = -0.5 + (np.arange(n) + 0.5) / n
    k = np.arange(-n_coeffs // 2, n_coeffs // 2)
    E = np.exp(-2j * np.pi * np.outer(k, u))
    return k, (E @ values) * (L / n) / np.sqrt(L)


# ---------------------------------------------------------------------------
# sinc interpolation


def _sinc(t):
    """``sin(pi t) / (pi t)`` with exact zeros at the nonzero integers."""
    t = np.asarray(t, dtype=np.float64)
    return np.where((t == np.round(t)) & (t != 0), 0.0, np.sinc(t))


def sinc_interpolate(coeffs, points):
    """``sum_k f_k sinc(w - k)`` (product of per-axis sincs in 2D).

    ``coeffs`` is a :class:`FourierCoeffs` (``points`` of shape ``(P, 2)``
    in ``(w1, w2)``) or a pair ``(k, f)`` of 1D frequencies and
    coefficients (``points`` of shape ``(P,)``).
    """
    if isinstance(coeffs, FourierCoeffs):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        k = coeffs.frequencies
        S1 = _sinc(pts[:, 0:1] - k[None, :])
        S2 = _sinc(pts[:, 1:2] - k[None, :])
        return np.einsum("pa,ab,pb->p", S1, coeffs.lattice, S2)
    k, f = coeffs
    w = np.asarray(points, dtype=np.float64)
    return _sinc(w[..., None] - np.asarray(k)[None, :]) @ np.asarray(f, dtype=np.complex128)


def sinc_grid(coeffs: FourierCoeffs, w1, w2):
    """Interpolated values on the tensor grid ``w1 x w2`` (axis 0 = w1)."""
    k = coeffs.frequencies
    S1 = _sinc(np.asarray(w1)[:, None] - k[None, :])
    S2 = _sinc(np.asarray(w2)[:, None] - k[None, :])
    return S1 @ coeffs.lattice @ S2.T


# ---------------------------------------------------------------------------
# Gaussian fitting


def levenberg_marquardt(residual, jacobian, p0, max_iter=200, tol=1e-10, mu0=1e-3,
                        lower=None, upper=None):
    """Minimise ``0.5 ||residual(p)||^2`` with Marquardt-scaled damping.

    The damping starts at ``mu0``, is multiplied by 10 after a rejected
    step and divided by 10 after an accepted one.  Trial points are
    projected onto the box ``[lower, upper]``.  Convergence is declared
    when the step is below ``tol`` relative to ``|p|`` or when every free
    column of the Jacobian is within ``tol`` of orthogonal to the residual.
    Returns ``(p, cost, iterations, converged)``.
    """
    p = np.asarray(p0, dtype=np.float64).copy()
    lo = np.full(p.size, -np.inf) if lower is None else np.asarray(lower, dtype=np.float64)
    hi = np.full(p.size, np.inf) if upper is None else np.asarray(upper, dtype=np.float64)
    p = np.clip(p, lo, hi)
    r = residual(p)
    cost = 0.5 * float(r @ r)
    mu = mu0
    for it in range(1, max_iter + 1):
        J = jacobian(p)
        g = J.T @ r
        colnorm = np.linalg.norm(J, axis=0)
        rnorm = np.linalg.norm(r)
        # components pinned at a bound by the descent direction are not free
        free = ~(((p <= lo) & (g > 0)) | ((p >= hi) & (g < 0)))
        if rnorm == 0 or np.all(np.abs(g[free]) <= tol * np.maximum(colnorm[free], 1e-300) * rnorm):
            return p, cost, it, True
        JTJ = J.T @ J
        D = np.maximum(np.diag(JTJ), 1e-300)
        while True:
            try:
                step = np.linalg.solve(JTJ + mu * np.diag(D), -g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                if mu > 1e16:
                    return p, cost, it, False
                continue
            p_new = np.clip(p + step, lo, hi)
            r_new = residual(p_new)
            cost_new = 0.5 * float(r_new @ r_new)
            small = np.linalg.norm(p_new - p) <= tol * (np.linalg.norm(p) + tol)
            if np.isfinite(cost_new) and cost_new <= cost:
                p, r, cost = p_new, r_new, cost_new
                mu = max(mu / 10.0, 1e-15)
                if small:
                    return p, cost, it, True
                break
            if small:
                return p, cost, it, True
            mu *= 10.0
            if mu > 1e16:
                return p, cost, it, False
    return p, cost, max_iter, False


def _moments_1d(w, y):
    wts = np.clip(y, 0.0, None)
    total = wts.sum()
    if total <= 0:
        raise DegenerateFitError("no positive mass to fit")
    c = float(wts @ w / total)
    var = float(wts @ (w - c) ** 2 / total)
    if not var > 0:
        raise DegenerateFitError("weighted variance is zero")
    return c, math.sqrt(var)


@dataclass(frozen=True)
class GaussianFit1D:
    amp: float
    centre: float
    sigma: float
    rmse: float
    converged: bool
    iterations: int = 0


def fit_gaussian_1d(w, y, max_iter=200, tol=1e-10) -> GaussianFit1D:
    """Fit ``a exp(-(w-c)^2 / (2 s^2))`` to samples ``(w, y)``.

    The centre is kept inside the sampled range and ``s`` at most the width
    of that range; a fit that ends at the width cap (flat data) is reported
    as not converged.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if w.size != y.size or w.size < 4:
        raise ValidationError("need at least 4 matching samples")
    if np.ptp(y) == 0:
        raise DegenerateFitError("all samples are equal")
    c0, s0 = _moments_1d(w, y)

    def model(p):
        return p[0] * np.exp(-0.5 * ((w - p[1]) / p[2]) ** 2)

    def residual(p):
        return model(p) - y

    def jac(p):
        a, c, s = p
        e = np.exp(-0.5 * ((w - c) / s) ** 2)
        return np.column_stack([e, a * e * (w - c) / s**2, a * e * (w - c) ** 2 / s**3])

    span = float(np.ptp(w))
    lo, hi = [0.0, w.min(), 1e-6 * span], [np.inf, w.max(), span]
    p, cost, it, ok = levenberg_marquardt(residual, jac, [y.max(), c0, min(s0, span)], max_iter, tol,
                                          lower=lo, upper=hi)
    rmse = math.sqrt(2 * cost / w.size)
    ok = ok and p[2] < span
    return GaussianFit1D(float(p[0]), float(p[1]), float(p[2]), rmse, bool(ok), it)


@dataclass(frozen=True)
class GaussianFit2D:
    amp: float
    centre: tuple
    sigmas: tuple
    fit_rmse: float
    converged: bool
    iterations: int = 0

    @property
    def sigma_sum(self):
        return self.sigmas[0] + self.sigmas[1]


def fit_gaussian_2d(values, w1=None, w2=None, max_iter=200, tol=1e-10) -> GaussianFit2D:
    """Fit an axis-aligned 2D Gaussian to ``values[i, j]`` at ``(w1[i], w2[j])``.

    By default ``w1`` and ``w2`` are the centred integer frequencies
    ``-n/2 .. n/2-1`` of the array axes, so a ``|f_k|`` lattice from
    :class:`FourierCoeffs` can be fitted directly.
    """
    Y = np.asarray(values, dtype=np.float64)
    if Y.ndim != 2 or Y.size < 6:
        raise ValidationError("need a 2D array with at least 6 samples")
    n1, n2 = Y.shape
    w1 = np.arange(-(n1 // 2), n1 - n1 // 2, dtype=np.float64) if w1 is None else np.asarray(w1, float)
    w2 = np.arange(-(n2 // 2), n2 - n2 // 2, dtype=np.float64) if w2 is None else np.asarray(w2, float)
    if np.ptp(Y) == 0:
        raise DegenerateFitError("all samples are equal")
    W1, W2 = np.meshgrid(w1, w2, indexing="ij")
    x1, x2, y = W1.ravel(), W2.ravel(), Y.ravel()
    c1, s1 = _moments_1d(x1, y)
    c2, s2 = _moments_1d(x2, y)

    def parts(p):
        a, c1, c2, s1, s2 = p
        d1, d2 = x1 - c1, x2 - c2
        return a, d1, d2, s1, s2, np.exp(-0.5 * ((d1 / s1) ** 2 + (d2 / s2) ** 2))

    def residual(p):
        a, *_, e = parts(p)
        return a * e - y

    def jac(p):
        a, d1, d2, s1, s2, e = parts(p)
        ae = a * e
        return np.column_stack([e, ae * d1 / s1**2, ae * d2 / s2**2, ae * d1**2 / s1**3, ae * d2**2 / s2**3])

    sp1, sp2 = float(np.ptp(w1)), float(np.ptp(w2))
    lo = [0.0, w1.min(), w2.min(), 1e-6 * sp1, 1e-6 * sp2]
    hi = [np.inf, w1.max(), w2.max(), sp1, sp2]
    p0 = [y.max(), c1, c2, min(s1, sp1), min(s2, sp2)]
    p, cost, it, ok = levenberg_marquardt(residual, jac, p0, max_iter, tol, lower=lo, upper=hi)
    rmse = math.sqrt(2 * cost / y.size)
    ok = ok and p[3] < sp1 and p[4] < sp2
    return GaussianFit2D(float(p[0]), (float(p[1]), float(p[2])),
                         (float(p[3]), float(p[4])), rmse, bool(ok), it)


def gaussian_image(fit: GaussianFit2D, shape):
    """Evaluate a 2D fit on the centred integer lattice of ``shape``."""
    n1, n2 = shape
    w1 = np.arange(-(n1 // 2), n1 - n1 // 2)
    w2 = np.arange(-(n2 // 2), n2 - n2 // 2)
    W1, W2 = np.meshgrid(w1, w2, indexing="ij")
    (c1, c2), (s1, s2) = fit.centre, fit.sigmas
    return fit.amp * np.exp(-0.5 * (((W1 - c1) / s1) ** 2 + ((W2 - c2) / s2) ** 2))


def spectrum_fit(coeffs: FourierCoeffs, dense: int = 0) -> GaussianFit2D:
    """Gaussian fit to ``|f_k|``.

    With ``dense > 0`` the magnitude is sinc-interpolated on a grid refined
    ``dense`` times over ``[-s/2, s/2)`` before fitting.
    """
    if dense <= 0:
        return fit_gaussian_2d(np.abs(coeffs.lattice))
    s = coeffs.side
    w = np.arange(-s // 2 * dense, s // 2 * dense) / dense
    return fit_gaussian_2d(np.abs(sinc_grid(coeffs, w, w)), w, w)


def spectrum_fit_1d(k, f, dense=10, w_range=(-10.0, 10.0)) -> GaussianFit1D:
    """Gaussian fit to ``|sum_k f_k sinc(w - k)|`` sampled at step ``1/dense`` on ``w_range``."""
    lo, hi = w_range
    w = np.arange(round(lo * dense), round(hi * dense)) / dense
    return fit_gaussian_1d(w, np.abs(sinc_interpolate((k, f), w)))


def field_feature(field: FieldSamples, K=400, method="fft", dense=0) -> GaussianFit2D:
    """Gaussian fit to the Fourier magnitude of a sampled field."""
    return spectrum_fit(fourier_coefficients(field, K, method), dense)


# ---------------------------------------------------------------------------
# aggregation and testing


@dataclass(frozen=True)
class FeatureRecord:
    n: int
    i: int
    group: str
    pol: str
    sigma1: float
    sigma2: float
    rmse: float = 0.0
    converged: bool = True

    def __post_init__(self):
        if self.pol not in ("H", "V"):
            raise ValidationError(f"polarisation must be 'H' or 'V', got {self.pol!r}")
        if not self.sigma_sum > 0:
            raise ValidationError("sigma_sum must be positive")

    @property
    def sigma_sum(self):
        return self.sigma1 + self.sigma2

    @classmethod
    def from_fit(cls, n, i, group, pol, fit: GaussianFit2D):
        return cls(int(n), int(i), str(group), pol, fit.sigmas[0], fit.sigmas[1], fit.fit_rmse, fit.converged)


@dataclass(frozen=True)
class SampleFeature:
    n: int
    group: str
    pol: str
    mean: float
    count: int


def aggregate_features(records, expected=None):
    """Mean ``sigma_sum`` per ``(n, pol)``, keyed in first-seen order.

    ``expected`` optionally lists ``(n, pol)`` keys that must all be present.
    """
    acc = OrderedDict()
    for r in records:
        key = (r.n, r.pol)
        if key in acc and acc[key][0] != r.group:
            raise ValidationError(f"sample {r.n} appears in groups {acc[key][0]!r} and {r.group!r}")
        acc.setdefault(key, (r.group, []))[1].append(r.sigma_sum)
    for key in expected or ():
        if key not in acc:
            raise ValidationError(f"no records for sample {key[0]} polarisation {key[1]}")
    if not acc:
        raise ValidationError("no feature records")
    return OrderedDict(
        (k, SampleFeature(k[0], g, k[1], float(np.mean(v)), len(v))) for k, (g, v) in acc.items()
    )


def _betacf(a, b, x, tol=1e-12, max_iter=10000):
    """Continued fraction of the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a, b, x):
    """Regularised incomplete beta function ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"x must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return float(x)
    lbt = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(lbt) * _betacf(a, b, x) / a
    return 1.0 - math.exp(lbt) * _betacf(b, a, 1.0 - x) / b


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p: float
    mean_a: float
    mean_b: float
    n_a: int
    n_b: int


def welch_t_test(group_a, group_b) -> WelchResult:
    """Two-sided Welch t-test with Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(group_a, dtype=np.float64).ravel()
    b = np.asarray(group_b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise ValidationError("each group needs at least 2 values")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0 or vb == 0:
        raise ValidationError("each group needs nonzero variance")
    qa, qb = va / a.size, vb / b.size
    se2 = qa + qb
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2**2 / (qa**2 / (a.size - 1) + qb**2 / (b.size - 1))
    p = betainc(0.5 * df, 0.5, df / (df + t * t))
    return WelchResult(float(t), float(df), float(min(p, 1.0)), float(a.mean()), float(b.mean()),
                       int(a.size), int(b.size))


def zscore(x):
    x = np.asarray(x, dtype=np.float64)
    sd = x.std()
    if not sd > 0:
        raise ValidationError("zero variance across samples")
    return (x - x.mean()) / sd


def combine_polarisations(h, v):
    """Average of the per-polarisation z-scores (population std) per sample."""
    h = np.asarray(h, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if h.size != v.size or h.size == 0:
        raise ValidationError("need one H and one V feature per sample")
    return 0.5 * (zscore(h) + zscore(v))


# ---------------------------------------------------------------------------
# I/O

CSV_HEADER = ["n", "i", "group", "pol", "sigma1", "sigma2", "sigma_sum", "rmse", "converged"]


def write_features_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.n, r.i, r.group, r.pol, repr(r.sigma1), repr(r.sigma2),
                        repr(r.sigma_sum), repr(r.rmse), int(r.converged)])


def read_features_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and list(rows[0].keys()) != CSV_HEADER:
        raise ValidationError(f"{path}: unexpected header {list(rows[0].keys())}")
    return [FeatureRecord(int(r["n"]), int(r["i"]), r["group"], r["pol"], float(r["sigma1"]),
                          float(r["sigma2"]), float(r["rmse"]), bool(int(r["converged"])))
            for r in rows]


def write_ttest_report(path, result: WelchResult, label_a="A", label_b="B", note=""):
    lines = [
        "test: Welch two-sample t-test (two-sided)",
        f"groups: {label_a} vs {label_b}",
        f"t: {result.t!r}",
        f"df: {result.df!r}",
        f"p: {result.p!r}",
        f"mean_{label_a}: {result.mean_a!r}",
        f"mean_{label_b}: {result.mean_b!r}",
        f"n_{label_a}: {result.n_a}",
        f"n_{label_b}: {result.n_b}",
    ]
    if note:
        lines.append(f"note: {note}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
