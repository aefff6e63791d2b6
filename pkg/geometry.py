"""
Polyhedral domains, grids and lower convex hulls.

This is the convexification step of the fitting procedure:

    1. sample the smoother on a finite grid M_n ⊂ Q
    2. lift the samples to R^{d+1} as (x, f_n(x))
    3. keep the facets of the convex hull that face downwards

Each lower facet is a plane y = a·x + b and the envelope φ_n is the max of
those planes, so it is convex everywhere (also outside Q, which is what the
"extend" evaluation relies on).

The d = 1 path uses a monotone chain over the sorted samples; d ≥ 2 goes
through scipy's QHULL wrapper.
"""

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from errors import (
    DegenerateGeometryError,
    GeometryError,
    InvalidDomainError,
    InvalidGridError,
    InvalidInputError,
    OutOfDomainError,
)
from log import get_logger

logger = get_logger(__name__)

# ============================================================
# TOLERANCES
# ============================================================
ABS_TOL = 1e-9          # containment and hull-below-sample checks (all studies live in O(1) boxes)
NORMAL_TOL = 1e-12      # |last normal coordinate| below this × scale → vertical facet
PIECE_DECIMALS = 10     # coplanar facets collapse to one piece at this rounding
ORACLE_MAX_SAMPLES = 15
# ============================================================


# ── Domains ─────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class PolyhedralDomain:
    """Q = conv(vertices). Boxes also remember their lower/upper corners."""

    dim: int
    vertices: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    _equations: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float).reshape(-1, self.dim)
        if self.dim < 1:
            raise InvalidDomainError(f"dimension must be positive, got {self.dim}")
        if not np.all(np.isfinite(verts)):
            raise InvalidDomainError("domain vertices must be finite")
        object.__setattr__(self, "vertices", verts)

        if self.dim == 1:
            if len(verts) != 2 or verts[0, 0] == verts[1, 0]:
                raise InvalidDomainError("a 1D domain needs exactly two distinct endpoints")
            # an interval is always a box
            verts = np.sort(verts, axis=0)
            object.__setattr__(self, "vertices", verts)
            object.__setattr__(self, "lower", verts[0])
            object.__setattr__(self, "upper", verts[1])
            return

        if len(verts) < self.dim + 1:
            raise InvalidDomainError(f"need at least {self.dim + 1} vertices in {self.dim}D, got {len(verts)}")
        try:
            hull = ConvexHull(verts)
        except QhullError as e:
            raise InvalidDomainError(f"vertices do not span R^{self.dim}: {str(e).splitlines()[0]}") from e
        if len(hull.vertices) != len(verts):
            raise InvalidDomainError("every vertex must be an extreme point of the domain")
        object.__setattr__(self, "_equations", hull.equations)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_points(cls, points) -> "PolyhedralDomain":
        """Convex hull of a point cloud, keeping only its extreme points."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        dim = pts.shape[1]
        if dim == 1:
            lo, hi = pts.min(), pts.max()
            if lo == hi:
                raise InvalidDomainError("all points coincide; the domain is degenerate")
            return cls(1, np.array([[lo], [hi]]), lower=np.array([lo]), upper=np.array([hi]))
        try:
            hull = ConvexHull(pts)
        except QhullError as e:
            raise InvalidDomainError(f"points do not span R^{dim}") from e
        return cls(dim, pts[np.sort(hull.vertices)])

    # -- queries ------------------------------------------------------------

    @property
    def is_box(self) -> bool:
        return self.lower is not None

    @property
    def diameter(self) -> float:
        return float(pdist(self.vertices).max())

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.is_box:
            return self.lower, self.upper
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def contains(self, points, tol: float = ABS_TOL):
        """True where a point lies in Q (within tol). Accepts one point or an (m, d) array."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim <= 1 and pts.size == self.dim
        pts = pts.reshape(-1, self.dim)
        if self.is_box:
            inside = np.all((pts >= self.lower - tol) & (pts <= self.upper + tol), axis=1)
        else:
            eq = self._equations
            inside = np.all(pts @ eq[:, :-1].T + eq[:, -1] <= tol, axis=1)
        return bool(inside[0]) if single else inside


def make_box_domain(lower, upper) -> PolyhedralDomain:
    """Axis-aligned box [lower, upper] with its 2^d corners as vertices."""
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    if lo.shape != hi.shape or lo.ndim != 1:
        raise InvalidDomainError(f"lower/upper shapes differ: {lo.shape} vs {hi.shape}")
    if np.any(lo >= hi):
        raise InvalidDomainError(f"degenerate box: lower={lo.tolist()} upper={hi.tolist()}")
    corners = np.array(list(itertools.product(*zip(lo, hi))), dtype=float)
    return PolyhedralDomain(len(lo), corners, lower=lo, upper=hi)


def sample_in_domain(domain: PolyhedralDomain, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points in Q by rejection from its bounding box."""
    lo, hi = domain.bounding_box()
    out = np.empty((0, domain.dim))
    while len(out) < count:
        cand = rng.uniform(lo, hi, size=(2 * count, domain.dim))
        out = np.vstack([out, cand[domain.contains(cand, tol=0.0)]])
    return out[:count]


# ── Grids ───────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Grid:
    """M_n: a finite point set in Q with covering radius `mesh` (δ_n)."""

    domain: PolyhedralDomain
    points: np.ndarray
    mesh: float
    per_axis: int | None = None
    kind: str = "uniform"       # uniform | polytope | design

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.domain.dim


def uniform_grid(domain: PolyhedralDomain, per_axis: int) -> Grid:
    """Lattice of per_axis^d points on a box, corners included."""
    if per_axis < 2:
        raise InvalidGridError(f"need at least 2 points per axis, got {per_axis}")
    if not domain.is_box:
        raise InvalidGridError("uniform_grid needs a box domain (use polytope_grid)")
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(domain.lower, domain.upper)]
    points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    spacing = float(np.max((domain.upper - domain.lower) / (per_axis - 1)))
    return Grid(domain, points, spacing * math.sqrt(domain.dim), per_axis, "uniform")


def polytope_grid(domain: PolyhedralDomain, per_axis: int) -> Grid:
    """Lattice ∩ Q plus the vertices of Q (and, in 2D, points along each edge).

    The covering radius is not guaranteed by construction here; it is reported
    as twice the lattice cell diagonal and checked with verify_covering().
    """
    if domain.is_box:
        return uniform_grid(domain, per_axis)
    if per_axis < 2:
        raise InvalidGridError(f"need at least 2 points per axis, got {per_axis}")
    lo, hi = domain.bounding_box()
    axes = [np.linspace(a, b, per_axis) for a, b in zip(lo, hi)]
    lattice = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    parts = [lattice[domain.contains(lattice, tol=1e-12)], domain.vertices]
    spacing = float(np.max((hi - lo) / (per_axis - 1)))

    if domain.dim == 2:
        for i, j in ConvexHull(domain.vertices).simplices:
            a, b = domain.vertices[i], domain.vertices[j]
            pieces = max(1, math.ceil(np.linalg.norm(b - a) / spacing))
            t = np.linspace(0.0, 1.0, pieces + 1)[:, None]
            parts.append(a + t * (b - a))
    else:
        logger.warning(f"⚠️  polytope grid in {domain.dim}D: covering near facets is only checked empirically")

    points = np.unique(np.vstack(parts), axis=0)
    return Grid(domain, points, 2.0 * spacing * math.sqrt(domain.dim), per_axis, "polytope")


def design_grid(points, domain: PolyhedralDomain | None = None) -> Grid:
    """Use given design points as M_n (plus the domain's vertices).

    Covering radius: the largest gap in 1D; for d ≥ 2 the domain diameter,
    which is always a valid (if loose) covering bound.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if domain is None:
        domain = PolyhedralDomain.from_points(pts)
    outside = ~domain.contains(pts)
    if np.any(outside):
        raise InvalidGridError(f"{int(outside.sum())} design points lie outside the domain")
    pts = np.unique(np.vstack([pts, domain.vertices]), axis=0)
    if domain.dim == 1:
        mesh = float(np.max(np.diff(pts[:, 0])))
    else:
        mesh = domain.diameter
    return Grid(domain, pts, mesh, None, "design")


def convex_combination_cover(grid: Grid, x) -> list[tuple[np.ndarray, float]]:
    """Write x as Σ λ_k x_k with at most d+1 grid points, each within grid.mesh of x.

    Uniform grids use a Freudenthal split of the containing cell (with the last
    axis reflected, so in 2D each square is cut along its anti-diagonal). Other
    grids solve a small LP over the grid points within the mesh radius.
    """
    x = np.asarray(x, dtype=float).reshape(grid.dim)
    if not grid.domain.contains(x):
        raise OutOfDomainError(f"point {x.tolist()} is outside the grid's domain")
    if grid.kind == "uniform":
        pairs = _cell_cover(grid, x)
    else:
        pairs = _lp_cover(grid, x)
    return sorted(pairs, key=lambda p: tuple(p[0]))


def _cell_cover(grid: Grid, x: np.ndarray) -> list[tuple[np.ndarray, float]]:
    d, m = grid.dim, grid.per_axis
    lo = grid.domain.lower
    step = (grid.domain.upper - lo) / (m - 1)
    s = (x - lo) / step
    idx = np.clip(np.floor(s), 0, m - 2)
    t = np.clip(s - idx, 0.0, 1.0)

    t_ref = t.copy()
    t_ref[-1] = 1.0 - t_ref[-1]
    order = np.argsort(-t_ref, kind="stable")
    sorted_t = t_ref[order]
    weights = np.empty(d + 1)
    weights[0] = 1.0 - sorted_t[0]
    weights[1:d] = sorted_t[:-1] - sorted_t[1:]
    weights[d] = sorted_t[-1]

    bits = np.zeros(d)
    pairs = []
    for k in range(d + 1):
        if k > 0:
            bits[order[k - 1]] = 1.0
        if weights[k] <= 0.0:
            continue
        real_bits = bits.copy()
        real_bits[-1] = 1.0 - real_bits[-1]
        pairs.append((lo + (idx + real_bits) * step, float(weights[k])))
    return pairs


def _lp_cover(grid: Grid, x: np.ndarray) -> list[tuple[np.ndarray, float]]:
    dist = np.linalg.norm(grid.points - x, axis=1)
    near = np.flatnonzero(dist <= grid.mesh * (1 + 1e-12))
    if len(near) == 0:
        raise GeometryError(f"no grid point within mesh {grid.mesh:g} of {x.tolist()}")
    pts = grid.points[near]
    a_eq = np.vstack([pts.T, np.ones(len(near))])
    b_eq = np.append(x, 1.0)
    res = linprog(dist[near], A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds")
    if not res.success:
        raise GeometryError(f"grid does not cover {x.tolist()} within mesh {grid.mesh:g}")
    support = np.flatnonzero(res.x > 1e-12)
    # polish on the basic support so the reconstruction is exact to roundoff
    lam, *_ = np.linalg.lstsq(a_eq[:, support], b_eq, rcond=None)
    return [(pts[k], float(w)) for k, w in zip(support, lam) if w > 0.0]


def verify_covering(grid: Grid, trials: int = 200, seed: int = 0) -> int:
    """Number of random points that no cover within grid.mesh can reach."""
    rng = np.random.default_rng(seed)
    failures = 0
    for x in sample_in_domain(grid.domain, trials, rng):
        try:
            _lp_cover(grid, x)
        except GeometryError:
            failures += 1
    return failures


# ── Envelopes ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class AffinePiece:
    gradient: tuple[float, ...]
    offset: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (*self.gradient, self.offset)):
            raise InvalidInputError("affine pieces must have finite entries")

    def __call__(self, x) -> float:
        return float(np.dot(self.gradient, np.atleast_1d(x)) + self.offset)


@dataclass(frozen=True, eq=False)
class ConvexEnvelope:
    """φ_n(x) = max_k (a_k·x + b_k); concave envelopes report −φ_n of the negated problem."""

    gradients: np.ndarray           # (k, d)
    offsets: np.ndarray             # (k,)
    domain: PolyhedralDomain
    facets: tuple = ()
    shape: str = "convex"

    def __post_init__(self):
        if len(self.offsets) == 0:
            raise GeometryError("an envelope needs at least one piece")
        if self.shape not in ("convex", "concave"):
            raise InvalidInputError(f"unknown shape {self.shape!r}")

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def sign(self) -> float:
        return -1.0 if self.shape == "concave" else 1.0

    @property
    def pieces(self) -> list[AffinePiece]:
        return [AffinePiece(tuple(float(v) for v in a), float(b)) for a, b in zip(self.gradients, self.offsets)]

    def with_shape(self, shape: str) -> "ConvexEnvelope":
        return replace(self, shape=shape)

    def evaluate_many(self, points, extend: bool = False) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        if not extend:
            inside = self.domain.contains(pts)
            if not np.all(inside):
                bad = pts[np.argmin(inside)]
                raise OutOfDomainError(f"point {bad.tolist()} is outside the envelope's domain (use extend)")
        return self.sign * np.max(pts @ self.gradients.T + self.offsets, axis=1)

    def evaluate(self, x, extend: bool = False) -> float:
        return float(self.evaluate_many(np.asarray(x, dtype=float).reshape(1, self.dim), extend)[0])


def evaluate(envelope: ConvexEnvelope, x, extend: bool = False) -> float:
    """Envelope value at one point; extend=True evaluates the same max of planes outside Q."""
    return envelope.evaluate(x, extend)


def _as_arrays(samples, values=None) -> tuple[np.ndarray, np.ndarray]:
    if values is None:
        pairs = list(samples)
        if not pairs:
            raise DegenerateGeometryError("no samples")
        points = np.array([np.atleast_1d(np.asarray(p, dtype=float)) for p, _ in pairs])
        values = np.array([v for _, v in pairs], dtype=float)
    else:
        points = np.asarray(samples, dtype=float)
        values = np.asarray(values, dtype=float).reshape(-1)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    if len(points) != len(values):
        raise InvalidInputError(f"{len(points)} points but {len(values)} values")
    return points, values


def collapse_duplicates(points: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge repeated x's, keeping the smallest value (the envelope only sees the lower sheet)."""
    uniq, inverse = np.unique(points, axis=0, return_inverse=True)
    lowest = np.full(len(uniq), np.inf)
    np.minimum.at(lowest, inverse.reshape(-1), values)
    return uniq, lowest


def lower_hull(samples, values=None, domain: PolyhedralDomain | None = None,
               tol: float = ABS_TOL) -> ConvexEnvelope:
    """Greatest convex function below the samples, as a max of affine pieces.

    Args:
        samples: sequence of (point, value) pairs, or an (N, d) point array when
                 `values` is given.
        values:  optional (N,) values matching `samples`.
        domain:  domain to attach; defaults to the convex hull of the points.
        tol:     absolute tolerance: how far a merged 1D chord may pass above a
                 sample, and the residual allowed by the flat-data plane fit.
    """
    points, vals = _as_arrays(samples, values)
    if not (np.all(np.isfinite(points)) and np.all(np.isfinite(vals))):
        raise InvalidInputError("samples must be finite")
    points, vals = collapse_duplicates(points, vals)
    n, d = points.shape
    if n < d + 1 or np.linalg.matrix_rank(points[1:] - points[0]) < d:
        raise DegenerateGeometryError(f"{n} distinct points do not affinely span R^{d}")
    if domain is None:
        domain = PolyhedralDomain.from_points(points)

    if d == 1:
        gradients, offsets, facets = _monotone_chain(points[:, 0], vals, tol)
    else:
        gradients, offsets, facets = _lifted_hull(points, vals, tol)

    logger.debug(f"📐 lower hull: {n} samples → {len(offsets)} pieces")
    return ConvexEnvelope(gradients, offsets, domain, facets)


def _monotone_chain(xs: np.ndarray, ys: np.ndarray, tol: float):
    """Lower hull of points already sorted by x (np.unique sorts them).

    The chain itself pops only on an exact non-left turn. Consecutive pieces
    are then merged into one chord when every vertex it skips lies within
    `tol` below that chord, so a line sampled in floating point stays one piece.
    """
    chain: list[int] = []
    for i in range(len(xs)):
        while len(chain) >= 2:
            o, a = chain[-2], chain[-1]
            if (xs[a] - xs[o]) * (ys[i] - ys[o]) - (ys[a] - ys[o]) * (xs[i] - xs[o]) > 0:
                break
            chain.pop()
        chain.append(i)
    chain = _merge_chords(xs, ys, chain, tol)

    gradients, offsets, facets = [], [], []
    for i, j in zip(chain[:-1], chain[1:]):
        slope = (ys[j] - ys[i]) / (xs[j] - xs[i])
        gradients.append([slope])
        offsets.append(ys[i] - slope * xs[i])
        facets.append((i, j))
    return np.array(gradients), np.array(offsets), tuple(facets)


def _merge_chords(xs: np.ndarray, ys: np.ndarray, chain: list[int], tol: float) -> list[int]:
    # chord − hull peaks at a hull vertex: checking skipped vertices bounds every sample
    order = np.asarray(chain)
    kept = [0]
    for pos in range(1, len(order) - 1):
        start, end = order[kept[-1]], order[pos + 1]
        skipped = order[kept[-1] + 1:pos + 1]
        slope = (ys[end] - ys[start]) / (xs[end] - xs[start])
        gaps = ys[start] + slope * (xs[skipped] - xs[start]) - ys[skipped]
        if np.max(gaps) > tol:
            kept.append(pos)
    kept.append(len(order) - 1)
    return [int(order[p]) for p in kept]


def _lifted_hull(points: np.ndarray, vals: np.ndarray, tol: float):
    d = points.shape[1]
    lifted = np.column_stack([points, vals])
    scale = max(1.0, float(np.abs(lifted).max()))
    try:
        hull = ConvexHull(lifted)
    except QhullError:
        # flat lifted data (e.g. f_n affine): QHULL has no full-dimensional simplex
        return _plane_fit(points, vals, tol * scale)

    eq = hull.equations
    lower = eq[:, d] < -NORMAL_TOL * scale
    if not np.any(lower):
        return _plane_fit(points, vals, tol * scale)

    normal_last = eq[lower, d]
    gradients = -eq[lower, :d] / normal_last[:, None]
    offsets = -eq[lower, d + 1] / normal_last
    facets = tuple(tuple(int(i) for i in s) for s in hull.simplices[lower])

    keys = np.round(np.column_stack([gradients, offsets]), PIECE_DECIMALS)
    _, first = np.unique(keys, axis=0, return_index=True)
    keep = np.sort(first)
    return gradients[keep], offsets[keep], facets


def _plane_fit(points: np.ndarray, vals: np.ndarray, tol: float):
    design = np.column_stack([points, np.ones(len(points))])
    coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
    resid = np.abs(design @ coef - vals).max()
    if resid > tol:
        raise DegenerateGeometryError(f"hull failed on non-flat data (plane residual {resid:.3g})")
    return coef[None, :-1], coef[-1:], (tuple(range(len(points))),)


# ── Reference checks ────────────────────────────────────────────────────

def envelope_oracle(samples, x, values=None) -> float:
    """Brute-force envelope value: min Σλ_k v_k over convex combinations of ≤ d+1 samples hitting x."""
    points, vals = _as_arrays(samples, values)
    if len(points) > ORACLE_MAX_SAMPLES:
        raise InvalidInputError(f"oracle is for small instances (≤ {ORACLE_MAX_SAMPLES} samples)")
    d = points.shape[1]
    target = np.append(np.asarray(x, dtype=float).reshape(d), 1.0)
    best = math.inf
    for size in range(1, d + 2):
        for subset in itertools.combinations(range(len(points)), size):
            idx = list(subset)
            system = np.vstack([points[idx].T, np.ones(size)])
            lam, *_ = np.linalg.lstsq(system, target, rcond=None)
            if np.linalg.norm(system @ lam - target) > 1e-10 or np.any(lam < -1e-12):
                continue
            best = min(best, float(lam @ vals[idx]))
    if best == math.inf:
        raise OutOfDomainError(f"{target[:-1].tolist()} is not in the convex hull of the samples")
    return best


def convexity_defect(fn, domain: PolyhedralDomain, triples: int = 1000, seed: int = 0) -> float:
    """Largest violation of fn(tx+(1-t)y) ≤ t·fn(x)+(1-t)·fn(y) over random triples (≤ 0 means none seen)."""
    rng = np.random.default_rng(seed)
    xs = sample_in_domain(domain, triples, rng)
    ys = sample_in_domain(domain, triples, rng)
    t = rng.uniform(0.0, 1.0, size=(triples, 1))
    mid = t * xs + (1 - t) * ys
    lhs = np.asarray(fn(mid), dtype=float)
    rhs = t[:, 0] * np.asarray(fn(xs), dtype=float) + (1 - t[:, 0]) * np.asarray(fn(ys), dtype=float)
    return float(np.max(lhs - rhs))
