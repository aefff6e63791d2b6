"""
Pipeline tests: the three-step fit, concave mode, error-bound diagnostics and
the convergence-rate table.

Run: pytest test_pipeline.py   (or: python test_pipeline.py)
Slow Monte Carlo checks: pytest -m slow test_pipeline.py
"""

import sys

import numpy as np
import pytest

from errors import InvalidGridError, InvalidInputError, SamplingError, UsageError
from geometry import convexity_defect
from pipeline import (
    PipelineConfig,
    check_error_bound,
    empirical_rate_check,
    fit_convex,
    map_replications,
    run_procedure,
)
from simharness import TEST_FUNCTIONS
from smoothing import Dataset


def noiseless(name, n=1000, seed=0):
    fn = TEST_FUNCTIONS[name]
    xs = np.random.default_rng(seed).uniform(0, 1, n)
    return fn, Dataset(xs, fn(xs), fn.domain)


def noisy_f2(n=100, seed=1):
    fn = TEST_FUNCTIONS["f2"]
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0, 1, n)
    return Dataset(xs, fn(xs) + 0.1 * rng.standard_normal(n), fn.domain)


# ── Configuration ───────────────────────────────────────────────────────

def test_config_parses_strings():
    cfg = PipelineConfig(bandwidth="0.25", grid="50", smoother="moving-window")
    assert cfg.bandwidth == 0.25 and cfg.grid == 50 and cfg.smoother == "window"


@pytest.mark.parametrize("bad", [
    {"shape": "wiggly"}, {"smoother": "spline"}, {"bandwidth": "wide"}, {"grid": "fine"}, {"domain": "disk"},
])
def test_config_rejects(bad):
    with pytest.raises(UsageError):
        PipelineConfig(**bad)


def test_config_from_dict_ignores_unknown_keys():
    cfg = PipelineConfig.from_dict({"grid": 11, "colour": "blue"})
    assert cfg.grid == 11
    assert cfg.to_dict()["grid"] == 11


# ── Error bound: noiseless moving window ────────────────────────────────

@pytest.mark.parametrize("name,lipschitz", [("f1", 3.0), ("f2", 8.0 / 3.0), ("f3", 4.0)])
def test_error_band_noiseless_window(name, lipschitz):
    fn, data = noiseless(name)
    run = run_procedure(data, PipelineConfig(smoother="window", bandwidth=0.02, grid=201))
    report = check_error_bound(fn, run, lipschitz=lipschitz)
    assert report.mesh == pytest.approx(0.005)
    assert report.bound_hi == pytest.approx(report.eps_n + lipschitz * 0.005)
    assert report.within_bounds
    assert report.observed_min >= -report.eps_n - 1e-9
    assert report.observed_max <= report.eps_n + lipschitz * report.mesh + 1e-9
    assert report.sup_bound_holds
    assert not report.lipschitz_estimated


def test_lipschitz_estimated_when_missing():
    fn, data = noiseless("f1", n=300)
    run = run_procedure(data, PipelineConfig(smoother="window", bandwidth=0.05, grid=51))
    report = check_error_bound(fn, run)
    assert report.lipschitz_estimated
    assert report.lipschitz == pytest.approx(3.0, abs=0.01)


# ── Exactness and symmetry ──────────────────────────────────────────────

def test_affine_data_gives_the_line():
    rng = np.random.default_rng(4)
    xs = rng.uniform(0, 1, 80)
    data = Dataset(xs, 3 * xs + 1)
    for grid in (5, 37, "design"):
        env = fit_convex(data, PipelineConfig(bandwidth=0.2, grid=grid))
        test = np.linspace(xs.min(), xs.max(), 501)
        assert np.max(np.abs(env.evaluate_many(test) - (3 * test + 1))) <= 1e-8


def test_affine_plane_2d():
    rng = np.random.default_rng(6)
    xs = rng.uniform(0, 1, size=(150, 2))
    data = Dataset(xs, xs[:, 0] - 2 * xs[:, 1] + 0.5)
    env = fit_convex(data, PipelineConfig(bandwidth=0.3, grid=15, kernel="epanechnikov"))
    test = np.random.default_rng(7).uniform(xs.min(axis=0), xs.max(axis=0), size=(200, 2))
    assert np.max(np.abs(env.evaluate_many(test) - (test[:, 0] - 2 * test[:, 1] + 0.5))) <= 1e-8


def test_concave_is_negated_convex():
    data = noisy_f2()
    flipped = data.with_ys(-data.ys)
    concave = fit_convex(flipped, PipelineConfig(shape="concave", bandwidth=0.1))
    convex = fit_convex(data, PipelineConfig(bandwidth=0.1))
    test = np.linspace(0, 1, 1001)
    assert concave.shape == "concave"
    assert np.max(np.abs(concave.evaluate_many(test) + convex.evaluate_many(test))) <= 1e-12


def test_concave_fit_of_concave_data_is_concave():
    base = noisy_f2()
    data = base.with_ys(-base.ys)
    run = run_procedure(data, PipelineConfig(shape="concave", bandwidth=0.1, grid=51))
    assert run.sign == -1
    # −φ is convex
    defect = convexity_defect(lambda p: -run.envelope.evaluate_many(p), run.envelope.domain, seed=3)
    assert defect <= 1e-9
    assert np.all(run.envelope.evaluate_many(run.sample.points) >= -run.sample.values - 1e-9)


def test_fit_is_deterministic():
    data = noisy_f2()
    a = fit_convex(data)
    b = fit_convex(data)
    assert np.array_equal(a.gradients, b.gradients)
    assert np.array_equal(a.offsets, b.offsets)


def test_default_fit_is_convex_and_below_samples():
    run = run_procedure(noisy_f2(), PipelineConfig())
    env = run.envelope
    assert convexity_defect(env.evaluate_many, env.domain, seed=1) <= 1e-9
    assert np.all(env.evaluate_many(run.sample.points) <= run.sample.values + 1e-9)


# ── Step attribution ────────────────────────────────────────────────────

def test_empty_windows_are_smoothing_errors():
    data = Dataset(np.linspace(0, 1, 5), np.zeros(5))
    with pytest.raises(SamplingError) as info:
        run_procedure(data, PipelineConfig(smoother="window", bandwidth=0.01, grid=101))
    assert info.value.step == "SMOOTHING"
    assert "[SMOOTHING]" in info.value.cli_line()


def test_lenient_mode_drops_empty_windows():
    data = Dataset(np.linspace(0, 1, 5), np.zeros(5))
    run = run_procedure(data, PipelineConfig(smoother="window", bandwidth=0.005, grid=101, strict=False))
    assert run.sample.excluded_count == 96
    assert run.envelope.evaluate(0.5) == pytest.approx(0.0)


def test_bad_grid_is_a_grid_error():
    with pytest.raises(InvalidGridError) as info:
        run_procedure(noisy_f2(), PipelineConfig(bandwidth=0.1, grid=1))
    assert info.value.step == "GRID"


def test_cv_needs_a_kernel_smoother():
    with pytest.raises(UsageError) as info:
        run_procedure(noisy_f2(), PipelineConfig(smoother="window", bandwidth="cv"))
    assert info.value.step == "SMOOTHING"


# ── Replications ────────────────────────────────────────────────────────

def test_map_replications_keeps_index_order(monkeypatch):
    monkeypatch.setenv("CONVEXREG_THREADS", "4")
    assert map_replications(lambda i: i * i, 50) == [i * i for i in range(50)]
    monkeypatch.setenv("CONVEXREG_THREADS", "1")
    assert map_replications(lambda i: -i, 3) == [0, -1, -2]


# ── Rate check ──────────────────────────────────────────────────────────

def test_rate_check_validates_arguments():
    with pytest.raises(InvalidInputError):
        empirical_rate_check(TEST_FUNCTIONS["f1"], 1, [400, 100], 10, seed=1)
    with pytest.raises(InvalidInputError):
        empirical_rate_check(TEST_FUNCTIONS["f1"], 1, [100, 400], 5, seed=1)


def test_rate_check_noiseless_within_window_bound():
    table = empirical_rate_check(TEST_FUNCTIONS["f1"], 1, [100, 400], 10, seed=3, sigma=0.0)
    assert [r.n for r in table.rows] == [100, 400]
    for row in table.rows:
        assert row.mesh <= row.bandwidth
        assert row.mean_sup_error <= 3.0 * (row.bandwidth + row.mesh) + 1e-9


def test_rate_check_affine_is_exact():
    def plane(p):
        return 2.0 * p[:, 0] + 1.0

    table = empirical_rate_check(plane, 1, [100, 200], 10, seed=5, sigma=0.0, smoother="localpoly")
    assert all(row.mean_sup_error <= 1e-8 for row in table.rows)


def test_rate_check_is_reproducible():
    a = empirical_rate_check(TEST_FUNCTIONS["f2"], 1, [50, 100], 10, seed=9)
    b = empirical_rate_check(TEST_FUNCTIONS["f2"], 1, [50, 100], 10, seed=9)
    assert [r.mean_sup_error for r in a.rows] == [r.mean_sup_error for r in b.rows]


@pytest.mark.slow
def test_rate_trend_f1():
    table = empirical_rate_check(TEST_FUNCTIONS["f1"], 1, [100, 400, 1600, 6400], 20, seed=2009)
    assert table.decreasing_fraction >= 2 / 3


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
