"""
The fitting procedure end to end: smooth → grid → convexify.

    SMOOTHING         build f_n from the data (kernel, local polynomial or moving window)
    GRID              choose M_n ⊂ Q with covering radius δ_n
    CONVEXIFICATION   φ_n = lower convex hull of {(g, f_n(g)) : g ∈ M_n}

Concave fits negate the responses, run the convex procedure and flip the sign
of the result, so concave(xs, ys) == -convex(xs, -ys) exactly.

Also here: the uniform error bound check (−ε_n ≤ φ_n − f ≤ ε_n + L·δ_n) and
the empirical convergence-rate table.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from enum import Enum, auto

import numpy as np
from scipy.spatial import cKDTree

from config import thread_count
from errors import ConvexRegError, InvalidInputError, UsageError
from geometry import (
    ConvexEnvelope,
    Grid,
    PolyhedralDomain,
    design_grid,
    lower_hull,
    make_box_domain,
    polytope_grid,
)
from log import get_logger
from smoothing import (
    Dataset,
    GridSample,
    PointStatus,
    SmootherFit,
    cross_validate_bandwidth,
    fit_local_poly,
    fit_moving_window,
    fit_nadaraya_watson,
    sample_on_grid,
    tran_bandwidth,
)

logger = get_logger(__name__)

SMOOTHER_ALIASES = {
    "localpoly": "localpoly", "local-poly": "localpoly",
    "nw": "nw", "nadaraya-watson": "nw",
    "window": "window", "moving-window": "window",
}


class Step(Enum):
    SMOOTHING = auto()
    GRID = auto()
    CONVEXIFICATION = auto()


@contextmanager
def _step(step: Step):
    """Tag errors raised inside a procedure step with that step."""
    try:
        yield
    except ConvexRegError as e:
        if e.step is None:
            e.step = step.name
        raise


# ── Configuration ───────────────────────────────────────────────────────

@dataclass
class PipelineConfig:
    smoother: str = "localpoly"         # localpoly | nw | window
    kernel: str = "gaussian"
    degree: int = 1
    bandwidth: "float | str" = "cv"     # a number, "cv" or "tran"
    form: str = "ratio"                 # Nadaraya–Watson: ratio | johnston
    grid: "int | str | list" = 101      # points per axis, "design", or explicit points
    shape: str = "convex"               # convex | concave
    domain: str = "box"                 # box (bounding box) | hull (convex hull of the xs)
    tol: float = 1e-9
    relative_tol: bool = False
    strict: bool = True
    cv_candidates: "list[float] | None" = None

    def __post_init__(self):
        if self.smoother not in SMOOTHER_ALIASES:
            raise UsageError(f"unknown smoother {self.smoother!r}")
        self.smoother = SMOOTHER_ALIASES[self.smoother]
        if self.shape not in ("convex", "concave"):
            raise UsageError(f"shape must be convex or concave, got {self.shape!r}")
        if self.domain not in ("box", "hull"):
            raise UsageError(f"domain must be box or hull, got {self.domain!r}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth not in ("cv", "tran"):
                try:
                    self.bandwidth = float(self.bandwidth)
                except ValueError:
                    raise UsageError(f"bandwidth must be a number, 'cv' or 'tran', got {self.bandwidth!r}") from None
        if isinstance(self.grid, str) and self.grid != "design":
            try:
                self.grid = int(self.grid)
            except ValueError:
                raise UsageError(f"grid must be an integer, 'design' or a point list, got {self.grid!r}") from None

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> dict:
        out = asdict(self)
        if isinstance(self.grid, np.ndarray):
            out["grid"] = self.grid.tolist()
        return out

    def effective_tol(self, scale: float) -> float:
        return self.tol * max(1.0, scale) if self.relative_tol else self.tol


# ── Procedure ───────────────────────────────────────────────────────────

@dataclass(eq=False)
class ProcedureRun:
    data: Dataset               # as fitted (responses negated for concave fits)
    config: PipelineConfig
    smoother: SmootherFit
    grid: Grid
    sample: GridSample
    envelope: ConvexEnvelope

    @property
    def sign(self) -> float:
        return self.envelope.sign


def resolve_domain(data: Dataset, config: PipelineConfig) -> PolyhedralDomain:
    if config.domain == "hull":
        return PolyhedralDomain.from_points(data.xs)
    return data.bounding_domain()


def build_smoother(data: Dataset, config: PipelineConfig) -> SmootherFit:
    h = config.bandwidth
    if h == "tran":
        h = tran_bandwidth(data.n, data.dim)
    elif h == "cv":
        if config.smoother == "window":
            raise UsageError("cross-validation is not defined for the moving-window smoother; give a bandwidth")
        degree = config.degree if config.smoother == "localpoly" else 0
        h = cross_validate_bandwidth(data, config.kernel, degree, config.cv_candidates)

    if config.smoother == "window":
        return fit_moving_window(data, h)
    if config.smoother == "nw":
        return fit_nadaraya_watson(data, config.kernel, h, config.form)
    return fit_local_poly(data, config.kernel, h, config.degree)


def build_grid(domain: PolyhedralDomain, config: PipelineConfig, data: Dataset) -> Grid:
    if isinstance(config.grid, int):
        return polytope_grid(domain, config.grid)
    if isinstance(config.grid, str):
        return design_grid(data.xs, domain)
    return design_grid(np.asarray(config.grid, dtype=float), domain)


def run_procedure(data: Dataset, config: PipelineConfig) -> ProcedureRun:
    """Smoothing, grid and convexification; errors carry the step they came from."""
    if config.shape == "concave":
        data = data.with_ys(-data.ys)

    with _step(Step.SMOOTHING):
        domain = resolve_domain(data, config)
        smoother = build_smoother(data, config)
    with _step(Step.GRID):
        grid = build_grid(domain, config, data)
    with _step(Step.SMOOTHING):
        sample = sample_on_grid(smoother, grid, strict=config.strict)
    with _step(Step.CONVEXIFICATION):
        scale = float(np.abs(sample.values).max()) if len(sample.values) else 1.0
        envelope = lower_hull(sample.points, sample.values, domain=domain,
                              tol=config.effective_tol(scale))

    if config.shape == "concave":
        envelope = envelope.with_shape("concave")
    logger.debug(f"✅ {config.shape} fit: h={smoother.bandwidth:.4g}, {len(grid)} grid points, "
                 f"δ={grid.mesh:.4g}, {len(envelope.offsets)} pieces")
    return ProcedureRun(data, config, smoother, grid, sample, envelope)


def fit_convex(data: Dataset, config: PipelineConfig | None = None) -> ConvexEnvelope:
    return run_procedure(data, config or PipelineConfig()).envelope


# ── Error-bound diagnostics ─────────────────────────────────────────────

def dense_points(domain: PolyhedralDomain) -> np.ndarray:
    """Test grid for sup-norm proxies: 1001 points in 1D, 101×101 in 2D."""
    per_axis = {1: 1001, 2: 101}.get(domain.dim, 21)
    return polytope_grid(domain, per_axis).points


def estimate_lipschitz(f_true, points: np.ndarray) -> float:
    """Largest slope between neighbouring test-grid points."""
    tree = cKDTree(points)
    _, nn = tree.query(points, k=2)
    radius = float(np.max(np.linalg.norm(points[nn[:, 1]] - points, axis=1))) * (1 + 1e-9)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    values = np.asarray(f_true(points), dtype=float)
    gaps = np.linalg.norm(points[pairs[:, 0]] - points[pairs[:, 1]], axis=1)
    return float(np.max(np.abs(values[pairs[:, 0]] - values[pairs[:, 1]]) / gaps))


@dataclass
class DiagnosticsReport:
    eps_n: float                    # max over M_n of |f_n − f|
    lipschitz: float
    lipschitz_estimated: bool
    mesh: float                     # δ_n
    bound_lo: float
    bound_hi: float
    observed_min: float             # of φ_n − f over the test grid
    observed_max: float
    smoother_sup_error: float       # sup over the test grid of |f_n − f| (evaluable points only)
    sup_error: float                # sup |φ_n − f|
    sup_bound: float                # max(sup |f_n − f|, ε_n) + L·δ_n
    tol: float = 1e-9

    @property
    def within_bounds(self) -> bool:
        return self.bound_lo - self.tol <= self.observed_min and self.observed_max <= self.bound_hi + self.tol

    @property
    def sup_bound_holds(self) -> bool:
        return self.sup_error <= self.sup_bound + self.tol


def check_error_bound(f_true, run: ProcedureRun, lipschitz: float | None = None,
                      test_points: np.ndarray | None = None, tol: float = 1e-9) -> DiagnosticsReport:
    """Compare φ_n − f against [−ε_n, ε_n + L·δ_n] on a dense test grid.

    f_true takes an (m, d) array and returns m values. For concave fits the
    band is mirrored: [−ε_n − L·δ_n, ε_n].
    """
    domain = run.envelope.domain
    pts = dense_points(domain) if test_points is None else np.asarray(test_points, dtype=float).reshape(-1, domain.dim)
    sign = run.sign
    truth = np.asarray(f_true(pts), dtype=float)

    on_grid = sign * run.sample.values
    eps_n = float(np.max(np.abs(on_grid - np.asarray(f_true(run.sample.points), dtype=float))))

    estimated = lipschitz is None
    if estimated:
        lipschitz = estimate_lipschitz(f_true, pts)
        logger.warning(f"⚠️  Lipschitz constant estimated from the test grid: L≈{lipschitz:.4g}")

    diff = run.envelope.evaluate_many(pts) - truth
    smooth_vals, status = run.smoother.evaluate_many(pts)
    ok = status != PointStatus.FAILED
    smoother_err = float(np.max(np.abs(sign * smooth_vals[ok] - truth[ok]))) if np.any(ok) else math.nan

    slack = lipschitz * run.grid.mesh
    if run.envelope.shape == "concave":
        lo, hi = -eps_n - slack, eps_n
    else:
        lo, hi = -eps_n, eps_n + slack
    rhs_base = eps_n if math.isnan(smoother_err) else max(smoother_err, eps_n)
    return DiagnosticsReport(
        eps_n=eps_n, lipschitz=float(lipschitz), lipschitz_estimated=estimated, mesh=run.grid.mesh,
        bound_lo=lo, bound_hi=hi,
        observed_min=float(diff.min()), observed_max=float(diff.max()),
        smoother_sup_error=smoother_err,
        sup_error=float(np.max(np.abs(diff))), sup_bound=rhs_base + slack, tol=tol,
    )


# ── Replications ────────────────────────────────────────────────────────

def map_replications(fn, count: int) -> list:
    """fn(0), ..., fn(count-1), results in index order whatever the scheduling."""
    workers = min(thread_count(), count)
    if workers <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


# ── Empirical rate check ────────────────────────────────────────────────

@dataclass
class RateRow:
    n: int
    bandwidth: float
    mesh: float
    mean_sup_error: float


@dataclass
class RateTable:
    rows: list[RateRow] = field(default_factory=list)

    @property
    def decreasing_fraction(self) -> float:
        """Share of consecutive n-pairs where the mean sup-error strictly drops."""
        errs = [r.mean_sup_error for r in self.rows]
        if len(errs) < 2:
            return math.nan
        return sum(b < a for a, b in zip(errs[:-1], errs[1:])) / (len(errs) - 1)


def empirical_rate_check(f_true, d: int, n_list, replications: int, seed: int,
                         sigma: float = 0.1, smoother: str = "window") -> RateTable:
    """Mean sup-error of φ_n on [0,1]^d as n grows, at Tran's bandwidth and δ_n = h_n / log n.

    Each replication draws its own stream from (seed, n, replication).
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list[:-1], n_list[1:])):
        raise InvalidInputError(f"n_list must be increasing, got {n_list}")
    if replications < 10:
        raise InvalidInputError(f"need at least 10 replications, got {replications}")

    domain = make_box_domain(np.zeros(d), np.ones(d))
    test = dense_points(domain)
    truth = np.asarray(f_true(test), dtype=float)
    table = RateTable()

    for n in n_list:
        h = tran_bandwidth(n, d)
        delta = h / math.log(n)
        per_axis = math.ceil(math.sqrt(d) / delta) + 1
        config = PipelineConfig(smoother=smoother, bandwidth=h, grid=per_axis, strict=False)

        def one(rep: int, n=n, config=config) -> float:
            rng = np.random.default_rng([seed, n, rep])
            xs = rng.uniform(0.0, 1.0, size=(n, d))
            ys = np.asarray(f_true(xs), dtype=float) + sigma * rng.standard_normal(n)
            run = run_procedure(Dataset(xs, ys, domain), config)
            return float(np.max(np.abs(run.envelope.evaluate_many(test) - truth)))

        errors = map_replications(one, replications)
        mesh = math.sqrt(d) / (per_axis - 1)
        table.rows.append(RateRow(n, h, mesh, float(np.mean(errors))))
        logger.info(f"🔁 n={n}: h={h:.4f} δ={mesh:.4f} mean sup-error {table.rows[-1].mean_sup_error:.4f}")
    return table
