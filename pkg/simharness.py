"""
Monte Carlo harness: test functions, simulated designs, replication studies.

Test functions (all convex on their boxes):

    f1(x)        = e^{3(x − 1)}                                  on [0, 1]
    f2(x)        = (16/9)(x − 1/4)²                              on [0, 1]
    f3(x)        = max{−4x + 1, 0, 4x − 3}                       on [0, 1]
    f2d(x1, x2)  = max{2x1² + x2²/2, 3x1 + x2}                   on [0, 2]²

On [0, 1]² f2d coincides with the plane 3x1 + x2, so its box is [0, 2]²,
where the kink runs from (1.5, 0) to (0, 2).

Replication i draws from np.random.default_rng([seed, i]); results are
collected by index, so the thread pool never changes the numbers.

Studies (reproduce_figure):
    regression1d   5 runs per 1D function: φ_n, the raw smoother and f on 1001 points
    varbiasmse1d   pointwise variance / bias² / MSE of φ_n and of the smoother
    confidence     band around φ_n per 1D function (Epanechnikov, δ = 0.3)
    regression2d   two runs each on 10×10 and 20×20 lattices, on a 101×101 grid
    varbiasmse2d   moment surfaces on the 20×20 lattice
"""

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from bands import BandConfig, band_covers, confidence_band
from csv_io import RunManifest, band_text, table_text
from errors import ConvexRegError, InvalidInputError, SimulationError, UsageError
from geometry import PolyhedralDomain, make_box_domain, uniform_grid
from log import get_logger
from outputs import ArtifactOutput
from pipeline import PipelineConfig, map_replications, run_procedure
from smoothing import Dataset

logger = get_logger(__name__)

# ============================================================
# STUDY DEFAULTS
# ============================================================
DEFAULT_SEED = 2009
DEFAULT_REPLICATIONS = 2000
EVAL_PER_AXIS = {1: 1001, 2: 101}
CURVE_RUNS = 5
FIXED_DESIGN_STREAM = 2**32 - 1   # seed key [seed, stream] for the shared design; replications use [seed, index]
LATTICES_2D = (10, 20)
# ============================================================


# ── Test functions ──────────────────────────────────────────────────────

@dataclass(frozen=True)
class TestFunction:
    name: str
    dim: int
    lipschitz: float            # on the function's own box
    evaluator: object
    upper: float = 1.0          # box is [0, upper]^dim

    __test__ = False            # not a pytest class

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        return self.evaluator(pts)

    @property
    def domain(self) -> PolyhedralDomain:
        return make_box_domain(np.zeros(self.dim), np.full(self.dim, self.upper))


def _f1(p):
    return np.exp(3.0 * (p[:, 0] - 1.0))


def _f2(p):
    return (16.0 / 9.0) * (p[:, 0] - 0.25) ** 2


def _f3(p):
    x = p[:, 0]
    return np.maximum(np.maximum(-4.0 * x + 1.0, 0.0), 4.0 * x - 3.0)


def _f2d(p):
    x1, x2 = p[:, 0], p[:, 1]
    return np.maximum(2.0 * x1 ** 2 + x2 ** 2 / 2.0, 3.0 * x1 + x2)


TEST_FUNCTIONS = {
    "f1": TestFunction("f1", 1, 3.0, _f1),
    "f2": TestFunction("f2", 1, 8.0 / 3.0, _f2),
    "f3": TestFunction("f3", 1, 4.0, _f3),
    # steepest gradient of the quadratic piece is (8, 2) at (2, 2)
    "f2d": TestFunction("f2d", 2, math.sqrt(68.0), _f2d, upper=2.0),
}


def get_function(name: "str | TestFunction") -> TestFunction:
    if isinstance(name, TestFunction):
        return name
    try:
        return TEST_FUNCTIONS[name]
    except KeyError:
        raise UsageError(f"unknown test function {name!r} (known: {', '.join(TEST_FUNCTIONS)})") from None


def kink_mask(points, width: float = 0.1) -> np.ndarray:
    """Points where the two pieces of f2d are within `width` of each other."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    gap = (2.0 * p[:, 0] ** 2 + p[:, 1] ** 2 / 2.0) - (3.0 * p[:, 0] + p[:, 1])
    return np.abs(gap) <= width


# ── Simulation spec ─────────────────────────────────────────────────────

def default_pipeline() -> PipelineConfig:
    """Local linear, Gaussian kernel, cross-validated bandwidth, 100-point grid."""
    return PipelineConfig(smoother="localpoly", kernel="gaussian", degree=1, bandwidth="cv", grid=100)


@dataclass
class SimSpec:
    function: "TestFunction | str" = "f2"
    design: str = "uniform-random"      # uniform-random | lattice
    n: int = 100                        # sample size, or points per axis for a lattice
    sigma: float = 0.1
    replications: int = DEFAULT_REPLICATIONS
    seed: int = DEFAULT_SEED
    pipeline: PipelineConfig = field(default_factory=default_pipeline)
    fixed_design: bool = False          # draw the random design once for all replications
    antithetic: bool = False            # replication 2k+1 reuses 2k's draws with −z

    def __post_init__(self):
        self.function = get_function(self.function)
        if self.design not in ("uniform-random", "lattice"):
            raise InvalidInputError(f"design must be uniform-random or lattice, got {self.design!r}")
        if self.sigma < 0:
            raise InvalidInputError(f"noise sd must be ≥ 0, got {self.sigma}")
        if self.replications < 1:
            raise InvalidInputError(f"need at least one replication, got {self.replications}")
        if self.n < (2 if self.design == "lattice" else 1):
            raise InvalidInputError(f"n too small: {self.n}")

    @property
    def sample_size(self) -> int:
        return self.n ** self.function.dim if self.design == "lattice" else self.n

    def to_dict(self) -> dict:
        return {
            "function": self.function.name, "design": self.design, "n": self.n, "sigma": self.sigma,
            "replications": self.replications, "seed": self.seed, "pipeline": self.pipeline.to_dict(),
            "fixed_design": self.fixed_design, "antithetic": self.antithetic,
        }


def _lattice(fn: TestFunction, m: int) -> np.ndarray:
    return uniform_grid(fn.domain, m).points


def simulate_dataset(spec: SimSpec, index: int) -> Dataset:
    """y_i = f(x_i) + σ z_i, deterministic in (spec, index)."""
    fn = spec.function
    draw, sign = (index // 2, -1.0 if index % 2 else 1.0) if spec.antithetic else (index, 1.0)
    rng = np.random.default_rng([spec.seed, draw])

    if spec.design == "lattice":
        xs = _lattice(fn, spec.n)
    elif spec.fixed_design:
        xs = np.random.default_rng([spec.seed, FIXED_DESIGN_STREAM]).uniform(0.0, fn.upper, size=(spec.n, fn.dim))
    else:
        xs = rng.uniform(0.0, fn.upper, size=(spec.n, fn.dim))
    z = rng.standard_normal(len(xs))
    return Dataset(xs, fn(xs) + sign * spec.sigma * z, fn.domain)


# ── Moment studies ──────────────────────────────────────────────────────

@dataclass(eq=False)
class MomentSurface:
    points: np.ndarray
    truth: np.ndarray
    mean: np.ndarray
    variance: np.ndarray        # divisor R
    bias2: np.ndarray
    mse: np.ndarray
    replications: int
    smoother: "MomentSurface | None" = None

    @classmethod
    def from_replications(cls, points: np.ndarray, truth: np.ndarray, values: np.ndarray) -> "MomentSurface":
        """values is (R, m), one row per replication in index order."""
        mean = np.mean(values, axis=0)
        return cls(
            points=points, truth=truth, mean=mean,
            variance=np.mean((values - mean) ** 2, axis=0),
            bias2=(mean - truth) ** 2,
            mse=np.mean((values - truth) ** 2, axis=0),
            replications=len(values),
        )

    @property
    def decomposition_error(self) -> float:
        return float(np.max(np.abs(self.mse - (self.variance + self.bias2))))


def eval_points(fn: TestFunction) -> np.ndarray:
    return uniform_grid(fn.domain, EVAL_PER_AXIS.get(fn.dim, 21)).points


def _replicate(spec: SimSpec, one):
    """Run one(index) for every replication; a failing index aborts the study."""
    def guarded(i):
        try:
            return one(i)
        except ConvexRegError as e:
            raise SimulationError(f"replication {i} failed: {e}", replication=i, step=e.step) from e
    return map_replications(guarded, spec.replications)


def moment_study(spec: SimSpec, points: np.ndarray | None = None, include_smoother: bool = False) -> MomentSurface:
    """Pointwise variance, bias² and MSE of φ_n (and optionally f_n) over the replications."""
    if spec.replications < 2:
        raise InvalidInputError("a moment study needs at least two replications")
    fn = spec.function
    pts = eval_points(fn) if points is None else np.asarray(points, dtype=float).reshape(-1, fn.dim)
    truth = fn(pts)

    def one(i):
        run = run_procedure(simulate_dataset(spec, i), spec.pipeline)
        phi = run.envelope.evaluate_many(pts, extend=True)
        if not include_smoother:
            return phi, None
        values, _ = run.smoother.evaluate_many(pts)
        return phi, run.sign * values

    started = time.monotonic()
    results = _replicate(spec, one)
    surface = MomentSurface.from_replications(pts, truth, np.array([r[0] for r in results]))
    if include_smoother:
        surface.smoother = MomentSurface.from_replications(pts, truth, np.array([r[1] for r in results]))
    logger.info(f"🔁 {fn.name}: {spec.replications} replications in {time.monotonic() - started:.1f}s, "
                f"max MSE {surface.mse.max():.4g}")
    return surface


def variance_bias_ratio(surface: MomentSurface, mask: np.ndarray | None = None) -> float:
    """max variance / max bias² over the masked points."""
    mask = np.ones(len(surface.points), dtype=bool) if mask is None else mask
    top_bias = float(surface.bias2[mask].max())
    return float(surface.variance[mask].max()) / top_bias if top_bias > 0 else math.inf


def interior_mask(points: np.ndarray, fn: TestFunction, margin: float = 0.1) -> np.ndarray:
    """Points at least margin·upper away from every face of the box."""
    lo, hi = margin * fn.upper, (1.0 - margin) * fn.upper
    return np.all((points >= lo) & (points <= hi), axis=1)


# ── Coverage ────────────────────────────────────────────────────────────

@dataclass
class CoverageResult:
    covered: int
    replications: int
    mean_width: float

    @property
    def fraction(self) -> float:
        return self.covered / self.replications


def coverage_study(spec: SimSpec, band_config: BandConfig | None = None,
                   interval: tuple[float, float] = (0.1, 0.9)) -> CoverageResult:
    """How often f stays inside the band around φ_n on the interval."""
    if spec.function.dim != 1:
        raise InvalidInputError("coverage is only defined for 1D functions")
    band_config = band_config or BandConfig()

    def one(i):
        band = confidence_band(simulate_dataset(spec, i), band_config, attach="envelope")
        return band_covers(band, spec.function, interval), band.width

    results = _replicate(spec, one)
    covered = sum(1 for ok, _ in results if ok)
    return CoverageResult(covered, len(results), float(np.mean([w for _, w in results])))


# ── Figure reproduction ─────────────────────────────────────────────────

STUDIES = ("regression1d", "varbiasmse1d", "confidence", "regression2d", "varbiasmse2d")
FUNCTIONS_1D = ("f1", "f2", "f3")


def _curve_columns(pts: np.ndarray) -> tuple[list[str], list]:
    if pts.shape[1] == 1:
        return ["x"], [pts[:, 0]]
    return [f"x{k + 1}" for k in range(pts.shape[1])], [pts[:, k] for k in range(pts.shape[1])]


def _moments_text(surface: MomentSurface) -> str:
    header, cols = _curve_columns(surface.points)
    header += ["truth", "mean", "variance", "bias2", "mse"]
    cols += [surface.truth, surface.mean, surface.variance, surface.bias2, surface.mse]
    if surface.smoother is not None:
        s = surface.smoother
        header += ["smoother_variance", "smoother_bias2", "smoother_mse"]
        cols += [s.variance, s.bias2, s.mse]
    return table_text(header, cols)


def _regression1d(out, seed, reps, pipeline, summary):
    for name in FUNCTIONS_1D:
        spec = SimSpec(name, seed=seed, replications=CURVE_RUNS, pipeline=pipeline)
        pts = eval_points(spec.function)
        for k in range(CURVE_RUNS):
            run = run_procedure(simulate_dataset(spec, k), spec.pipeline)
            smooth, _ = run.smoother.evaluate_many(pts)
            out.write_text(f"regression1d/{name}/run{k}.csv", table_text(
                ["x", "estimate", "smoother", "truth"],
                [pts[:, 0], run.envelope.evaluate_many(pts), smooth, spec.function(pts)]))


def _varbiasmse1d(out, seed, reps, pipeline, summary):
    for name in FUNCTIONS_1D:
        spec = SimSpec(name, seed=seed, replications=reps, pipeline=pipeline)
        surface = moment_study(spec, include_smoother=True)
        out.write_text(f"varbiasmse1d/{name}/moments.csv", _moments_text(surface))
        summary[name] = {"max_mse": float(surface.mse.max()),
                         "decomposition_error": surface.decomposition_error}


def _confidence(out, seed, reps, pipeline, summary):
    config = BandConfig(alpha=0.05, delta_exponent=0.3, kernel="epanechnikov")
    for name in FUNCTIONS_1D:
        spec = SimSpec(name, seed=seed, replications=1, pipeline=pipeline)
        band = confidence_band(simulate_dataset(spec, 0), config, attach="envelope")
        out.write_text(f"confidence/{name}/band.csv", band_text(band))
        summary[name] = {"width": band.width}


def _regression2d(out, seed, reps, pipeline, summary):
    fn = TEST_FUNCTIONS["f2d"]
    pts = eval_points(fn)
    for m in LATTICES_2D:
        spec = SimSpec(fn, design="lattice", n=m, seed=seed, replications=2, pipeline=replace(pipeline, grid=m))
        for k in range(2):
            run = run_procedure(simulate_dataset(spec, k), spec.pipeline)
            out.write_text(f"regression2d/f2d/grid{m}_run{k}.csv", table_text(
                ["x1", "x2", "estimate", "truth"],
                [pts[:, 0], pts[:, 1], run.envelope.evaluate_many(pts), fn(pts)]))


def _varbiasmse2d(out, seed, reps, pipeline, summary):
    fn = TEST_FUNCTIONS["f2d"]
    m = LATTICES_2D[-1]
    spec = SimSpec(fn, design="lattice", n=m, seed=seed, replications=reps, pipeline=replace(pipeline, grid=m))
    surface = moment_study(spec)
    out.write_text("varbiasmse2d/f2d/moments.csv", _moments_text(surface))
    inner = interior_mask(surface.points, fn)
    summary["f2d"] = {
        "variance_bias_ratio": variance_bias_ratio(surface, inner),
        "max_variance": float(surface.variance[inner].max()),
        "max_bias2": float(surface.bias2[inner].max()),
    }


_STUDY_RUNNERS = {
    "regression1d": _regression1d,
    "varbiasmse1d": _varbiasmse1d,
    "confidence": _confidence,
    "regression2d": _regression2d,
    "varbiasmse2d": _varbiasmse2d,
}


def reproduce_figure(study: str, out: ArtifactOutput, seed: int = DEFAULT_SEED,
                     replications: int | None = None, pipeline: PipelineConfig | None = None,
                     argv: list[str] | None = None) -> RunManifest:
    """Write one study's CSVs plus <study>/manifest.json; returns the manifest."""
    if study not in _STUDY_RUNNERS:
        raise UsageError(f"unknown study {study!r} (known: {', '.join(STUDIES)})")
    reps = replications or DEFAULT_REPLICATIONS
    pipeline = pipeline or default_pipeline()
    summary: dict = {}

    logger.info(f"🚀 study {study}: seed={seed} replications={reps}")
    started = time.monotonic()
    before = set(out.files)
    _STUDY_RUNNERS[study](out, seed, reps, pipeline, summary)
    written = {p: out.digests[p] for p in out.files if p not in before}

    manifest = RunManifest(
        command="simulate", argv=list(argv or []),
        config={"study": study, "replications": reps, "pipeline": pipeline.to_dict()},
        seed=seed, outputs=written, timings={"total_s": round(time.monotonic() - started, 3)},
        summary=summary,
    )
    out.write_text(f"{study}/manifest.json", manifest.to_json())
    logger.info(f"✅ study {study}: {len(written)} files")
    return manifest
