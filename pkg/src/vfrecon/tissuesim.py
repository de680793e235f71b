"""Synthetic test fields: a 1D oscillating-phase family and 2D random tissue.

A tissue image is ``R(x) exp(i P(x))`` on ``[-1/2, 1/2]^2``.  The phase is
smoothed uniform noise rescaled to ``[-tau, tau]``; ``tau`` sets the phase
amplitude and the smoothing width ``rho`` (in pixels of the generation grid)
its spatial frequency.  The amplitude is a central Gaussian plus five random
bumps.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ValidationError
from .fields import FieldSamples, Grid2D, VectorFieldSamples
from .rng import GENERATOR_NAME, derive_seed, make_rng

PAPER_IMAGE_SIZE = 700
PAPER_GEN_SIZE = 800
PAPER_CROP = 50


@dataclass(frozen=True)
class TissueParams:
    tau: float
    rho: float
    seed: int = 0
    gen_size: int = PAPER_GEN_SIZE
    crop_margin: int = PAPER_CROP

    def __post_init__(self):
        if not 0.0 <= self.tau <= np.pi + 1e-12:
            raise ValidationError(f"tau must be in [0, pi], got {self.tau}")
        if not self.rho > 0:
            raise ValidationError(f"rho must be positive, got {self.rho}")
        if self.gen_size - 2 * self.crop_margin < 1:
            raise ValidationError("crop margin leaves an empty image")

    @property
    def out_size(self):
        return self.gen_size - 2 * self.crop_margin

    @classmethod
    def at_scale(cls, tau, rho, seed, size):
        """Parameters for a ``size x size`` output with ``rho`` and the crop
        margin scaled from the 700-pixel reference image."""
        s = size / PAPER_IMAGE_SIZE
        margin = max(1, int(round(PAPER_CROP * s)))
        return cls(float(tau), float(rho) * s, int(seed), size + 2 * margin, margin)


# ---------------------------------------------------------------------------
# 1D family


def tau_ladder_1d(n_levels=8, lo=0.75, hi=2.5):
    """``n_levels`` log-spaced phase amplitudes inside ``(0, 2 pi)``."""
    if not 0 < lo < hi < 2 * np.pi:
        raise ValidationError("need 0 < lo < hi < 2 pi")
    return np.geomspace(lo, hi, n_levels)


def gen_1d_example(j, n_levels=8, n_points=1024, frequency=20.0):
    """Amplitude ``exp(-x^2)`` and phase ``tau_j sin(20 x)`` on ``[-1/2, 1/2]``.

    Samples sit at the ``n_points`` cell centres.  Returns ``(x, R, P, tau_j)``.
    """
    if not 1 <= j <= n_levels:
        raise ValidationError(f"level j={j} outside 1..{n_levels}")
    taus = tau_ladder_1d(n_levels)
    x = -0.5 + (np.arange(n_points) + 0.5) / n_points
    R = np.exp(-(x**2))
    tau = float(taus[j - 1])
    return x, R, tau * np.sin(frequency * x), tau


# ---------------------------------------------------------------------------
# 2D tissue


def category_ladder(n=6):
    """``(tau_j, rho_j)`` for ``j = 1..n``.

    Both ``tau_j`` and ``1/rho_j`` grow geometrically and reach ``pi`` and
    ``0.125`` at ``j = n``; ``tau`` starts above ``0`` and ``1/rho`` above
    ``0.025``.
    """
    j = np.arange(1, n + 1)
    growth = 5.0 ** (j / n)
    taus = (np.pi / 5) * growth
    rhos = 1.0 / (0.025 * growth)
    return [(float(t), float(r)) for t, r in zip(taus, rhos)]


def gaussian_kernel(rho):
    """Unit-sum Gaussian of std ``rho`` truncated at ``2 * ceil(2 rho)`` taps."""
    half = 2 * int(np.ceil(2 * rho))
    t = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / rho) ** 2)
    return k / k.sum()


def smoothed_noise(params: TissueParams):
    """Filtered uniform noise before cropping and rescaling."""
    rng = make_rng(params.seed)
    raw = rng.uniform(-1.0, 1.0, (params.gen_size, params.gen_size))
    k = gaussian_kernel(params.rho)
    out = correlate1d(raw, k, axis=0, mode="nearest")
    return correlate1d(out, k, axis=1, mode="nearest")


def rescale(img, tau):
    """Affine map of ``img`` onto ``[-tau, tau]`` (all zeros for ``tau = 0``)."""
    if tau == 0:
        return np.zeros_like(img)
    lo, hi = img.min(), img.max()
    if hi == lo:
        raise ValidationError("constant image cannot be rescaled")
    out = (2.0 * tau) * (img - lo) / (hi - lo) - tau
    # pin the extremes so the range is exact despite rounding
    out[img == lo] = -tau
    out[img == hi] = tau
    return out


def gen_phase(params: TissueParams) -> FieldSamples:
    """Real phase image of ``out_size x out_size`` pixels on the unit square."""
    m = params.crop_margin
    img = smoothed_noise(params)[m:-m or None, m:-m or None]
    n = params.out_size
    return FieldSamples.from_image(Grid2D.unit(n), rescale(img, params.tau))


def gen_amplitude(seed, grid: Grid2D, n_bumps=5, bumps=True) -> FieldSamples:
    """``exp(-50|x|^2)/1000`` plus ``n_bumps`` terms ``exp(-|x-c|^2/d)/2000``.

    ``c`` is uniform on ``[-0.4, 0.4]^2`` and ``d`` uniform on
    ``[0.005, 0.05]``.  ``bumps=False`` keeps only the central term.
    """
    X, Y = grid.mesh()
    R = np.exp(-50.0 * (X**2 + Y**2)) / 1000.0
    if bumps:
        rng = make_rng(seed)
        c = rng.uniform(-0.4, 0.4, (n_bumps, 2))
        d = rng.uniform(0.005, 0.05, n_bumps)
        for (cx, cy), dk in zip(c, d):
            R = R + np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / dk) / 2000.0
    return FieldSamples.from_image(grid, R)


def gen_tissue(params: TissueParams, amp_seed, shared_phase=False, bumps=True) -> VectorFieldSamples:
    """Two-polarisation tissue field with a common amplitude.

    The v phase is drawn from ``seed + 1`` unless ``shared_phase``.
    """
    ph = gen_phase(params)
    if shared_phase:
        pv = ph
    else:
        pv = gen_phase(TissueParams(params.tau, params.rho, params.seed + 1,
                                    params.gen_size, params.crop_margin))
    amp = gen_amplitude(amp_seed, ph.grid, bumps=bumps)
    h = FieldSamples(ph.grid, amp.values * np.exp(1j * ph.values.real))
    v = FieldSamples(ph.grid, amp.values * np.exp(1j * pv.values.real))
    return VectorFieldSamples(h, v)


def image_seeds(base, j, i):
    """Phase and amplitude seeds of replicate ``i`` in category ``j``."""
    return derive_seed(base, j, i, 0), derive_seed(base, j, i, 1)


def image_manifest(params: TissueParams, j, i, amp_seed, shared_phase=False):
    return {
        "j": int(j),
        "i": int(i),
        "params": asdict(params),
        "amplitude_seed": int(amp_seed),
        "v_phase_seed": int(params.seed if shared_phase else params.seed + 1),
        "generator": GENERATOR_NAME,
        "rho_units": "pixels of the generation grid",
    }
