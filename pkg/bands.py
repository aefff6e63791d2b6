"""
Uniform confidence bands for 1D regression (Johnston's construction).

    centre     f_n(x) = Σ K((x − X_i)/h) Y_i / (n h)           (unnormalised kernel sum)
    r_n(x)²    = ∫K² · E[Y² | X = x] / (n h)
    halfwidth  = r_n(x) · (d_n + c(α) / √(2δ log n))
    c(α)       = log 2 − log|log(1 − α)|
    d_n        = √(2δ log n) + κ / √(2δ log n)
    h          = n^(−δ),  1/5 < δ < 1/3

x is mapped affinely onto [0, 1] over the data's interval before smoothing,
so h and A·h are fractions of that interval; points and halfwidths keep
the data's units.

κ defaults to 0. Setting correction="bickel-rosenblatt" uses
κ = log(C_K / 2π) with C_K = √(∫K'² / ∫K²).

The same halfwidths can be hung around the convexified estimate φ_n
(attach="envelope"); the band still covers f, though it is no longer tight.
φ_n is the lower hull of the centres away from the endpoints (farther than
A·h), extended as a max of its pieces over the two margins, where the
unnormalised sum loses kernel mass.

Usage:
    band = confidence_band(data, BandConfig(alpha=0.05))
    band.width          # 2 × mean halfwidth
    band_covers(band, f_true, (0.1, 0.9))
"""

import math
from dataclasses import dataclass, field

import numpy as np

from errors import EmptyWindowError, InvalidInputError, UnsupportedDimensionError
from geometry import lower_hull, make_box_domain, uniform_grid
from kernels import Kernel, get_kernel
from log import get_logger
from smoothing import Dataset, PointStatus, fit_nadaraya_watson

logger = get_logger(__name__)

EVAL_POINTS = 1001
DELTA_RANGE = (0.2, 1 / 3)      # open interval
UNIT_INTERVAL = make_box_domain([0.0], [1.0])


def critical_constant(alpha: float) -> float:
    """c(α) = log 2 − log|log(1 − α)|."""
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    return math.log(2.0) - math.log(abs(math.log(1.0 - alpha)))


def correction_term(kernel: "Kernel | str", correction: "float | str" = 0.0) -> float:
    """κ for d_n: a number as given, or the Bickel–Rosenblatt value for the kernel."""
    if isinstance(correction, str):
        if correction != "bickel-rosenblatt":
            raise InvalidInputError(f"unknown d_n correction {correction!r}")
        k = get_kernel(kernel)
        if k.derivative_squared_integral is None:
            raise InvalidInputError(f"{k.name} kernel has no square-integrable derivative")
        c_k = math.sqrt(k.derivative_squared_integral / k.squared_integral)
        return math.log(c_k / (2 * math.pi))
    return float(correction)


def drift_constant(n: int, delta_exponent: float, kernel: "Kernel | str" = "epanechnikov",
                   correction: "float | str" = 0.0) -> float:
    if n < 2:
        raise InvalidInputError(f"d_n needs n ≥ 2, got {n}")
    t = 2.0 * delta_exponent * math.log(n)
    return math.sqrt(t) + correction_term(kernel, correction) / math.sqrt(t)


# ── Config ──────────────────────────────────────────────────────────────

@dataclass
class BandConfig:
    alpha: float = 0.05
    delta_exponent: float = 0.3
    kernel: str = "epanechnikov"
    correction: "float | str" = 0.0                 # κ, or "bickel-rosenblatt"
    second_moment: "str | object" = "plugin"       # "plugin" or a callable x ↦ E[Y²|X=x]

    def __post_init__(self):
        critical_constant(self.alpha)
        lo, hi = DELTA_RANGE
        if not lo < self.delta_exponent < hi:
            raise InvalidInputError(f"delta exponent must lie strictly in (1/5, 1/3), got {self.delta_exponent}")
        if not get_kernel(self.kernel).compact:
            raise InvalidInputError(f"bands need a compactly supported kernel, got {self.kernel}")
        if isinstance(self.second_moment, str) and self.second_moment != "plugin":
            raise InvalidInputError(f"unknown second-moment estimator {self.second_moment!r}")
        correction_term(self.kernel, self.correction)

    @classmethod
    def from_dict(cls, d: dict) -> "BandConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


# ── Estimate ────────────────────────────────────────────────────────────

@dataclass(eq=False)
class BandEstimate:
    points: np.ndarray              # (m,) evaluation grid
    centers: np.ndarray
    halfwidths: np.ndarray
    second_moments: np.ndarray      # E[Y²|X=x] used per point
    n: int
    bandwidth: float                # on the unit-rescaled x axis
    delta_exponent: float
    alpha: float
    c_alpha: float
    d_n: float
    correction: float               # κ
    correction_label: str
    squared_integral: float
    kernel: str
    support: float                  # A
    interval: tuple[float, float]   # endpoints of the domain
    attached_to: str = "smoother"   # smoother | envelope
    scale: float = 1.0              # interval length: unit-axis distances × scale = data units
    constants: dict = field(default_factory=dict)

    def recompute_halfwidths(self) -> np.ndarray:
        r = np.sqrt(self.squared_integral * self.second_moments / (self.n * self.bandwidth))
        return r * (self.d_n + self.c_alpha / math.sqrt(2.0 * self.delta_exponent * math.log(self.n)))

    @property
    def lower(self) -> np.ndarray:
        return self.centers - self.halfwidths

    @property
    def upper(self) -> np.ndarray:
        return self.centers + self.halfwidths

    @property
    def width(self) -> float:
        return 2.0 * float(np.mean(self.halfwidths))

    @property
    def unreliable(self) -> np.ndarray:
        """Points within A·h of an endpoint, where the unnormalised estimate loses mass."""
        reach = self.support * self.bandwidth * self.scale
        lo, hi = self.interval
        return (self.points - lo < reach) | (hi - self.points < reach)


def _second_moments(unit: Dataset, kernel: Kernel, h: float, u: np.ndarray, points: np.ndarray,
                    estimator) -> np.ndarray:
    if callable(estimator):
        return np.asarray(estimator(points), dtype=float).reshape(-1)
    fit = fit_nadaraya_watson(unit.with_ys(unit.ys ** 2), kernel, h, "ratio")
    values, status = fit.evaluate_many(u.reshape(-1, 1))
    failed = np.flatnonzero(status == PointStatus.FAILED)
    if len(failed):
        raise EmptyWindowError(
            f"E[Y²|X=x] plug-in has no data within h={h:.4g} (unit scale) of x={points[failed[0]]:.6g}")
    return values


def _envelope_centers(u, centers, reliable) -> np.ndarray:
    if np.count_nonzero(reliable) < 2:
        reliable = np.ones(len(u), dtype=bool)
    envelope = lower_hull(u[reliable].reshape(-1, 1), centers[reliable], domain=UNIT_INTERVAL)
    return envelope.evaluate_many(u.reshape(-1, 1), extend=True)


def confidence_band(data: Dataset, config: BandConfig | None = None, eval_points=None,
                    attach: str = "smoother") -> BandEstimate:
    """Band on an evaluation grid (default: 1001 points over the data's interval).

    attach="envelope" replaces the centres by the lower convex hull of the
    unnormalised estimate at the reliable evaluation points.
    """
    config = config or BandConfig()
    if data.dim != 1:
        raise UnsupportedDimensionError(f"confidence bands are one-dimensional, data is {data.dim}D")
    if attach not in ("smoother", "envelope"):
        raise InvalidInputError(f"attach must be smoother or envelope, got {attach!r}")
    if data.n < 2:
        raise InvalidInputError("a band needs at least two observations")

    kernel = get_kernel(config.kernel)
    domain = data.bounding_domain()
    if eval_points is None:
        points = uniform_grid(domain, EVAL_POINTS).points[:, 0]
    else:
        points = np.asarray(eval_points, dtype=float).reshape(-1)

    lo, hi = (float(v[0]) for v in domain.bounding_box())
    scale = hi - lo
    unit = Dataset((data.xs - lo) / scale, data.ys, UNIT_INTERVAL)
    u = (points - lo) / scale

    n = data.n
    h = n ** (-config.delta_exponent)
    centers, _ = fit_nadaraya_watson(unit, kernel, h, "johnston").evaluate_many(u.reshape(-1, 1))
    if attach == "envelope":
        reach = kernel.support * h
        centers = _envelope_centers(u, centers, (u >= reach) & (1.0 - u >= reach))

    m2 = _second_moments(unit, kernel, h, u, points, config.second_moment)
    if np.any(~(m2 > 0)):
        raise InvalidInputError("E[Y²|X=x] must be positive for a band (all-zero responses?)")

    kappa = correction_term(kernel, config.correction)
    label = config.correction if isinstance(config.correction, str) else f"kappa={kappa:g}"
    band = BandEstimate(
        points=points, centers=np.asarray(centers, dtype=float), halfwidths=np.empty(0),
        second_moments=m2, n=n, bandwidth=h, delta_exponent=config.delta_exponent,
        alpha=config.alpha, c_alpha=critical_constant(config.alpha),
        d_n=drift_constant(n, config.delta_exponent, kernel, config.correction),
        correction=kappa, correction_label=label,
        squared_integral=kernel.squared_integral, kernel=kernel.name, support=kernel.support,
        interval=(lo, hi), attached_to=attach, scale=scale,
    )
    band.halfwidths = band.recompute_halfwidths()
    band.constants = {
        "alpha": band.alpha, "c_alpha": band.c_alpha, "d_n": band.d_n, "correction": label,
        "n": n, "bandwidth": h, "delta_exponent": band.delta_exponent,
        "squared_integral": band.squared_integral, "kernel": kernel.name, "interval": [lo, hi],
    }
    logger.debug(f"📏 band ({attach}): n={n} h={h:.4f} c(α)={band.c_alpha:.4f} d_n={band.d_n:.4f} "
                 f"width={band.width:.4f}")
    return band


def band_covers(band: BandEstimate, f_true, interval: tuple[float, float] | None = None) -> bool:
    """True when f_true stays inside [lower, upper] at every grid point of the interval."""
    lo, hi = interval if interval is not None else band.interval
    mask = (band.points >= lo) & (band.points <= hi)
    truth = np.asarray(f_true(band.points[mask].reshape(-1, 1)), dtype=float).reshape(-1)
    return bool(np.all((band.lower[mask] <= truth) & (truth <= band.upper[mask])))
