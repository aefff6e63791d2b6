"""
Smoothing step: estimators f_n of the regression function.

    - Nadaraya–Watson, ratio form Σ w_i y_i / Σ w_i (default for fitting)
      or the unnormalised form Σ y_i K(·) / (n h^d) used by the band formula
    - local polynomials of degree 1 or 2 (intercept of a kernel-weighted
      least-squares fit centred at x)
    - moving-window average over the closed ball of radius h

Every estimator is evaluated in batches: evaluate_many() returns the values
and a PointStatus per point, so callers decide whether an empty window or a
singular local system is fatal.
"""

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from errors import (
    BandwidthSelectionError,
    EmptyWindowError,
    InvalidInputError,
    SamplingError,
    UnsupportedDimensionError,
)
from geometry import Grid, PolyhedralDomain, make_box_domain
from kernels import Kernel, get_kernel
from log import get_logger

logger = get_logger(__name__)

# ============================================================
# CONFIGURATION
# ============================================================
COND_LIMIT = 1e12            # local systems above this condition number fall back to degree 0
CHUNK_ELEMENTS = 4_000_000   # targets × data × features per batch
CV_MAX_FAILED = 0.2          # candidates with more failed leave-one-out fits are dropped
CV_CANDIDATES = 20
# ============================================================


class PointStatus(IntEnum):
    OK = 0
    FALLBACK = 1     # local polynomial system singular → weighted mean used
    FAILED = 2       # no data in the window


# ── Data ────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Dataset:
    """(X_i, Y_i), i = 1..n, with X_i ∈ R^d."""

    xs: np.ndarray
    ys: np.ndarray
    domain: PolyhedralDomain | None = None

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        if xs.ndim == 1:
            xs = xs.reshape(-1, 1)
        ys = np.asarray(self.ys, dtype=float).reshape(-1)
        if len(xs) < 1:
            raise InvalidInputError("a dataset needs at least one observation")
        if len(xs) != len(ys):
            raise InvalidInputError(f"{len(xs)} x rows but {len(ys)} responses")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise InvalidInputError("dataset contains NaN or infinite values")
        if self.domain is not None and self.domain.dim != xs.shape[1]:
            raise InvalidInputError(f"domain is {self.domain.dim}D but data is {xs.shape[1]}D")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self) -> int:
        return len(self.ys)

    @property
    def dim(self) -> int:
        return self.xs.shape[1]

    def with_ys(self, ys) -> "Dataset":
        return Dataset(self.xs, ys, self.domain)

    def bounding_domain(self) -> PolyhedralDomain:
        """The attached domain, else the bounding box of the xs."""
        if self.domain is not None:
            return self.domain
        return make_box_domain(self.xs.min(axis=0), self.xs.max(axis=0))


# ── Fits ────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SmootherFit:
    kind: str                   # nadaraya-watson | local-poly | moving-window
    bandwidth: float
    kernel: Kernel | None
    data: Dataset
    degree: int = 0
    form: str = "ratio"         # nadaraya-watson only: ratio | johnston

    def evaluate_many(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Values and PointStatus codes at an (m, d) array of points. Failed points are NaN."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.data.dim)
        if self.kind == "moving-window":
            return _window_mean(pts, self.data, self.bandwidth)
        if self.kind == "nadaraya-watson":
            return _kernel_mean(pts, self.data, self.kernel, self.bandwidth, self.form)
        return _local_poly(pts, self.data, self.kernel, self.bandwidth, self.degree)

    def evaluate(self, x) -> float:
        values, status = self.evaluate_many(np.asarray(x, dtype=float).reshape(1, self.data.dim))
        if status[0] == PointStatus.FAILED:
            raise EmptyWindowError(f"{self.kind}: no data within bandwidth {self.bandwidth:g} of {np.ravel(x).tolist()}")
        return float(values[0])

    __call__ = evaluate


def _check_bandwidth(h: float) -> float:
    h = float(h)
    if not (h > 0 and math.isfinite(h)):
        raise InvalidInputError(f"bandwidth must be positive and finite, got {h}")
    return h


def fit_nadaraya_watson(data: Dataset, kernel: "Kernel | str", h: float, form: str = "ratio") -> SmootherFit:
    """Kernel-weighted mean. form="johnston" divides by n·h^d instead of the weight sum."""
    if form not in ("ratio", "johnston"):
        raise InvalidInputError(f"unknown Nadaraya–Watson form {form!r}")
    return SmootherFit("nadaraya-watson", _check_bandwidth(h), get_kernel(kernel), data, 0, form)


def fit_local_poly(data: Dataset, kernel: "Kernel | str", h: float, degree: int = 1) -> SmootherFit:
    if degree not in (1, 2):
        raise InvalidInputError(f"local polynomial degree must be 1 or 2, got {degree}")
    return SmootherFit("local-poly", _check_bandwidth(h), get_kernel(kernel), data, degree)


def fit_moving_window(data: Dataset, h: float) -> SmootherFit:
    """Tran's estimator: plain mean of the y_i with |X_i - x| ≤ h."""
    return SmootherFit("moving-window", _check_bandwidth(h), None, data)


def tran_bandwidth(n: float, d: int, constant: float = 1.0) -> float:
    """h_n = c · (log n / n)^{1/(d+2)}."""
    if n < 2:
        raise InvalidInputError(f"Tran bandwidth needs n ≥ 2, got {n}")
    return constant * (math.log(n) / n) ** (1.0 / (d + 2))


# ── Batched estimators ──────────────────────────────────────────────────

def _chunks(m: int, n: int, p: int = 1):
    size = max(1, CHUNK_ELEMENTS // max(1, n * p))
    for start in range(0, m, size):
        yield slice(start, min(m, start + size))


def _window_mean(pts, data, h):
    values = np.full(len(pts), np.nan)
    status = np.full(len(pts), PointStatus.OK, dtype=int)
    for sl in _chunks(len(pts), data.n):
        inside = cdist(pts[sl], data.xs) <= h
        counts = inside.sum(axis=1)
        empty = counts == 0
        with np.errstate(invalid="ignore", divide="ignore"):
            values[sl] = np.where(empty, np.nan, (inside @ data.ys) / counts)
        status[sl][empty] = PointStatus.FAILED
    return values, status


def _kernel_mean(pts, data, kernel, h, form, exclude_self=False):
    values = np.full(len(pts), np.nan)
    status = np.full(len(pts), PointStatus.OK, dtype=int)
    d = data.dim
    for sl in _chunks(len(pts), data.n):
        w = kernel(cdist(pts[sl], data.xs) / h, d)
        if exclude_self:
            rows = np.arange(sl.stop - sl.start)
            w[rows, rows + sl.start] = 0.0
        if form == "johnston":
            values[sl] = (w @ data.ys) / (data.n * h ** d)
            continue
        total = w.sum(axis=1)
        empty = total == 0
        with np.errstate(invalid="ignore", divide="ignore"):
            values[sl] = np.where(empty, np.nan, (w @ data.ys) / total)
        status[sl][empty] = PointStatus.FAILED
    return values, status


def _features(u: np.ndarray, degree: int) -> np.ndarray:
    """Polynomial design in the scaled offsets u = (X_i - x)/h: 1, u_j, and u_j u_k (j ≤ k) for degree 2."""
    cols = [np.ones(u.shape[:-1]), *np.moveaxis(u, -1, 0)]
    if degree == 2:
        d = u.shape[-1]
        cols += [u[..., j] * u[..., k] for j in range(d) for k in range(j, d)]
    return np.stack(cols, axis=-1)


def _local_poly(pts, data, kernel, h, degree, exclude_self=False):
    values = np.full(len(pts), np.nan)
    status = np.full(len(pts), PointStatus.OK, dtype=int)
    d = data.dim
    p = 1 + d + (d * (d + 1) // 2 if degree == 2 else 0)

    for sl in _chunks(len(pts), data.n, p):
        targets = pts[sl]
        w = kernel(cdist(targets, data.xs) / h, d)
        if exclude_self:
            rows = np.arange(len(targets))
            w[rows, rows + sl.start] = 0.0
        wmax = w.max(axis=1)
        empty = wmax == 0
        w[~empty] /= wmax[~empty, None]

        feats = _features((data.xs[None, :, :] - targets[:, None, :]) / h, degree)
        weighted = (w[:, :, None] * feats).transpose(0, 2, 1)
        gram = weighted @ feats
        rhs = weighted @ data.ys
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            cond = np.linalg.cond(gram)
        solvable = np.isfinite(cond) & (cond < COND_LIMIT) & ~empty
        fallback = ~solvable & ~empty

        chunk_vals = np.full(len(targets), np.nan)
        if np.any(solvable):
            chunk_vals[solvable] = np.linalg.solve(gram[solvable], rhs[solvable][..., None])[:, 0, 0]
        if np.any(fallback):
            wf = w[fallback]
            chunk_vals[fallback] = (wf @ data.ys) / wf.sum(axis=1)

        chunk_status = np.full(len(targets), PointStatus.OK, dtype=int)
        chunk_status[fallback] = PointStatus.FALLBACK
        chunk_status[empty] = PointStatus.FAILED
        values[sl] = chunk_vals
        status[sl] = chunk_status
    return values, status


# ── Bandwidth selection ─────────────────────────────────────────────────

@dataclass(frozen=True)
class CandidateScore:
    bandwidth: float
    score: float              # mean squared leave-one-out residual over the fits that exist
    failed_fraction: float

    @property
    def disqualified(self) -> bool:
        return self.failed_fraction > CV_MAX_FAILED


def default_bandwidth_candidates(data: Dataset, count: int = CV_CANDIDATES) -> np.ndarray:
    """Log-spaced from half the mean nearest-neighbour spacing up to the domain diameter."""
    if data.domain is not None:
        diameter = data.domain.diameter
    else:
        diameter = float(np.linalg.norm(data.xs.max(axis=0) - data.xs.min(axis=0)))
    spacing, _ = cKDTree(data.xs).query(data.xs, k=2)
    nn = float(spacing[:, 1].mean()) if data.n > 1 else 0.0
    if nn <= 0 or diameter <= 0:
        raise BandwidthSelectionError("cannot derive bandwidth candidates from coincident points")
    return np.geomspace(0.5 * nn, diameter, count)


def leave_one_out(data: Dataset, kernel: "Kernel | str", degree: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-out predictions at every X_i. Degree 0 is the ratio-form kernel mean."""
    kernel = get_kernel(kernel)
    h = _check_bandwidth(h)
    if degree == 0:
        return _kernel_mean(data.xs, data, kernel, h, "ratio", exclude_self=True)
    return _local_poly(data.xs, data, kernel, h, degree, exclude_self=True)


def loocv_scores(data: Dataset, kernel: "Kernel | str", degree: int, candidates=None) -> list[CandidateScore]:
    if data.n < 3:
        raise BandwidthSelectionError(f"cross-validation needs at least 3 observations, got {data.n}")
    if candidates is None:
        candidates = default_bandwidth_candidates(data)
    candidates = [float(h) for h in candidates]
    if not candidates:
        raise BandwidthSelectionError("no bandwidth candidates given")

    scores = []
    for h in candidates:
        pred, status = leave_one_out(data, kernel, degree, h)
        # fallback (weighted-mean) predictions are scored; only empty windows are skipped
        ok = status != PointStatus.FAILED
        score = float(np.mean((data.ys[ok] - pred[ok]) ** 2)) if np.any(ok) else math.inf
        scores.append(CandidateScore(h, score, 1.0 - float(ok.mean())))
    return scores


def cross_validate_bandwidth(data: Dataset, kernel: "Kernel | str", degree: int = 1, candidates=None) -> float:
    """Leave-one-out CV bandwidth; ties go to the smaller bandwidth."""
    scores = [s for s in loocv_scores(data, kernel, degree, candidates) if not s.disqualified]
    if not scores:
        raise BandwidthSelectionError("every bandwidth candidate failed too many leave-one-out fits")
    best = min(s.score for s in scores)
    tied = [s.bandwidth for s in scores if s.score <= best * (1 + 1e-9) + 1e-14]
    chosen = min(tied)
    logger.debug(f"🧮 CV bandwidth h={chosen:.4g} (score {best:.4g}, {len(scores)} candidates)")
    return chosen


# ── Sampling on M_n ─────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class GridSample:
    points: np.ndarray
    values: np.ndarray
    excluded: np.ndarray        # indices of grid points that could not be evaluated
    fallback_count: int = 0

    @property
    def excluded_count(self) -> int:
        return len(self.excluded)


def sample_on_grid(fit: SmootherFit, grid: Grid, strict: bool = True) -> GridSample:
    """(g, f_n(g)) for every grid point g.

    strict=True raises SamplingError on any unevaluable point; otherwise those
    points are dropped and counted.
    """
    if grid.dim != fit.data.dim:
        raise UnsupportedDimensionError(f"grid is {grid.dim}D but the fit is {fit.data.dim}D")
    values, status = fit.evaluate_many(grid.points)
    failed = np.flatnonzero(status == PointStatus.FAILED)
    fallback = int(np.sum(status == PointStatus.FALLBACK))
    if fallback:
        logger.debug(f"⚠️  {fallback} grid points fell back to the local weighted mean")
    if len(failed) and strict:
        raise SamplingError(
            f"{len(failed)} of {len(grid)} grid points are unevaluable "
            f"(first at {grid.points[failed[0]].tolist()})")
    if len(failed):
        logger.warning(f"⚠️  {len(failed)} grid points excluded (empty window)")
    keep = np.setdiff1d(np.arange(len(grid)), failed)
    return GridSample(grid.points[keep], values[keep], failed, fallback)
