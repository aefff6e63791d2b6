"""
Smoothing kernels.

All kernels are radial: K(u) = k(|u|), normalised to integrate to one on R^d.
In 1D this gives the textbook Gaussian, Epanechnikov 3/4 (1 - u²)_+ and
uniform 1/2 on [-1, 1].

Config files refer to kernels by name: "gaussian" | "epanechnikov" | "uniform-ball".
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma

from errors import SmoothingError


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / gamma(d / 2 + 1)


@dataclass(frozen=True)
class Kernel:
    name: str
    support: float                          # A; math.inf for the Gaussian
    squared_integral: float                 # ∫K² in 1D
    derivative_squared_integral: float | None = None   # ∫K'² in 1D, None when K' is not square-integrable

    @property
    def compact(self) -> bool:
        return math.isfinite(self.support)

    def __call__(self, r, d: int = 1) -> np.ndarray:
        """Kernel value at scaled distance(s) r = |x - X_i| / h in d dimensions."""
        r = np.asarray(r, dtype=float)
        if self.name == "gaussian":
            return np.exp(-0.5 * r * r) / (2 * math.pi) ** (d / 2)
        if self.name == "epanechnikov":
            c = (d + 2) / (2 * unit_ball_volume(d))
            return np.where(r <= 1.0, c * (1.0 - r * r), 0.0)
        return np.where(r <= 1.0, 1.0 / unit_ball_volume(d), 0.0)

    def squared_integral_in(self, d: int) -> float:
        """∫K² over R^d."""
        if self.name == "gaussian":
            return (4 * math.pi) ** (-d / 2)
        if self.name == "epanechnikov":
            return 2 * (d + 2) / (unit_ball_volume(d) * (d + 4))
        return 1.0 / unit_ball_volume(d)


GAUSSIAN = Kernel("gaussian", math.inf, 1 / (2 * math.sqrt(math.pi)), 1 / (4 * math.sqrt(math.pi)))
EPANECHNIKOV = Kernel("epanechnikov", 1.0, 0.6, 1.5)
UNIFORM_BALL = Kernel("uniform-ball", 1.0, 0.5)

KERNELS = {k.name: k for k in (GAUSSIAN, EPANECHNIKOV, UNIFORM_BALL)}


def get_kernel(name: "str | Kernel") -> Kernel:
    if isinstance(name, Kernel):
        return name
    try:
        return KERNELS[name]
    except KeyError:
        raise SmoothingError(f"unknown kernel {name!r} (known: {', '.join(KERNELS)})") from None
