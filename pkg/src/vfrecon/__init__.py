"""Vector-field reconstruction through an unknown linear medium.

Submodules: ``fields`` (grids, samples, representation systems),
``fibersim`` (synthetic transmission operator), ``calibration``
(phase-shift schemes and system assembly), ``solvers`` (naive, least
squares, Tikhonov, l1), ``tissuesim`` (synthetic phase/amplitude images),
``features`` (Fourier features, Gaussian fits, Welch test) and ``cli``.
"""

__version__ = "0.1.0"
