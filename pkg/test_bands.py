"""
Confidence band tests: constants, halfwidth formula, envelope attachment, coverage.

Run: pytest test_bands.py   (or: python test_bands.py)
"""

import math
import os
import sys

import numpy as np
import pytest

from bands import BandConfig, band_covers, confidence_band, correction_term, critical_constant, drift_constant
from csv_io import read_csv
from errors import InvalidInputError, UnsupportedDimensionError
from simharness import SimSpec, coverage_study, simulate_dataset
from smoothing import Dataset

RABBITS = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures", "rabbits_synthetic.csv")


def uniform_data(ys_fn, n=200, seed=0):
    xs = np.random.default_rng(seed).uniform(0, 1, n)
    return Dataset(xs, ys_fn(xs))


# ── Constants ───────────────────────────────────────────────────────────

def test_critical_constant():
    assert critical_constant(0.05) == pytest.approx(3.6633, abs=1e-4)
    assert critical_constant(0.5) == pytest.approx(1.0596, abs=1e-4)
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(InvalidInputError):
            critical_constant(bad)


def test_critical_constant_decreases_with_alpha():
    values = [critical_constant(a) for a in (0.01, 0.05, 0.1, 0.5)]
    assert values == sorted(values, reverse=True)


def test_drift_constant():
    assert drift_constant(100, 0.3) == pytest.approx(1.6623, abs=1e-4)
    with pytest.raises(InvalidInputError):
        drift_constant(1, 0.3)


def test_drift_correction_is_additive():
    t = 2 * 0.3 * math.log(500)
    base = drift_constant(500, 0.3)
    assert drift_constant(500, 0.3, correction=0.7) - base == pytest.approx(0.7 / math.sqrt(t), abs=1e-14)


def test_drift_increases_with_n():
    values = [drift_constant(n, 0.25) for n in (10, 100, 1000, 10_000)]
    assert all(b > a for a, b in zip(values[:-1], values[1:]))


def test_bickel_rosenblatt_correction():
    kappa = correction_term("epanechnikov", "bickel-rosenblatt")
    assert kappa == pytest.approx(math.log(math.sqrt(1.5 / 0.6) / (2 * math.pi)))
    with pytest.raises(InvalidInputError):
        correction_term("uniform-ball", "bickel-rosenblatt")
    with pytest.raises(InvalidInputError):
        correction_term("epanechnikov", "edgeworth")


@pytest.mark.parametrize("bad", [
    {"delta_exponent": 0.2}, {"delta_exponent": 1 / 3}, {"delta_exponent": 0.5},
    {"kernel": "gaussian"}, {"alpha": 0.0}, {"second_moment": "bootstrap"},
])
def test_band_config_rejects(bad):
    with pytest.raises(InvalidInputError):
        BandConfig(**bad)


# ── Halfwidths ──────────────────────────────────────────────────────────

def test_constant_data_halfwidth_formula():
    data = uniform_data(lambda x: np.ones_like(x))
    band = confidence_band(data, BandConfig(alpha=0.05, delta_exponent=0.3))
    n = 200
    h = n ** -0.3
    t = 0.6 * math.log(n)
    expected = math.sqrt(0.6 / (n * h)) * (math.sqrt(t) + critical_constant(0.05) / math.sqrt(t))
    assert band.bandwidth == pytest.approx(h)
    assert np.allclose(band.second_moments, 1.0, rtol=1e-12)
    assert np.allclose(band.halfwidths, expected, rtol=1e-12)
    assert np.all(band.halfwidths > 0)


def test_doubling_second_moment_scales_by_sqrt2():
    data = uniform_data(lambda x: x)
    one = confidence_band(data, BandConfig(second_moment=lambda x: np.ones(len(x))))
    two = confidence_band(data, BandConfig(second_moment=lambda x: np.full(len(x), 2.0)))
    assert np.allclose(two.halfwidths / one.halfwidths, math.sqrt(2), rtol=1e-12, atol=0)


def test_halfwidths_recompute_from_constants():
    data = uniform_data(lambda x: (x - 0.3) ** 2 + 0.5, seed=2)
    band = confidence_band(data, BandConfig(correction="bickel-rosenblatt"))
    assert np.max(np.abs(band.recompute_halfwidths() - band.halfwidths)) <= 1e-12
    assert band.constants["correction"] == "bickel-rosenblatt"
    assert band.constants["d_n"] == band.d_n


def test_smaller_alpha_gives_wider_band():
    data = uniform_data(lambda x: np.exp(x), seed=3)
    wide = confidence_band(data, BandConfig(alpha=0.01))
    narrow = confidence_band(data, BandConfig(alpha=0.05))
    assert wide.width > narrow.width
    assert np.all(wide.halfwidths > narrow.halfwidths)


def test_endpoint_points_flagged():
    band = confidence_band(uniform_data(lambda x: x + 1, n=100), eval_points=[0.0, 0.1, 0.5, 0.95, 1.0])
    reach = 100 ** -0.3
    assert reach == pytest.approx(0.2512, abs=1e-4)
    assert band.unreliable.tolist() == [True, True, False, True, True]


def test_band_on_wide_interval():
    data = read_csv(RABBITS, ["age"], "lens")
    lo, hi = float(data.xs.min()), float(data.xs.max())
    band = confidence_band(data)
    assert band.interval == (lo, hi)
    assert band.scale == pytest.approx(hi - lo)
    assert band.points[0] == pytest.approx(lo) and band.points[-1] == pytest.approx(hi)
    assert np.all(band.halfwidths > 0) and np.all(np.isfinite(band.centers))
    assert band.unreliable[0] and band.unreliable[-1] and not band.unreliable.all()
    reach = band.support * band.bandwidth * (hi - lo)
    middle = np.abs(band.points - (lo + hi) / 2) < (hi - lo) / 2 - reach
    assert not band.unreliable[middle].any()


def test_band_is_invariant_to_affine_x():
    data = uniform_data(lambda x: (x - 0.4) ** 2 + 1, seed=7)
    stretched = Dataset(100 * data.xs + 5, data.ys)
    base = confidence_band(data)
    moved = confidence_band(stretched)
    assert np.allclose(moved.points, 100 * base.points + 5, rtol=1e-12)
    assert np.allclose(moved.centers, base.centers, rtol=1e-9, atol=1e-12)
    assert np.allclose(moved.halfwidths, base.halfwidths, rtol=1e-9)
    assert moved.width == pytest.approx(base.width, rel=1e-9)


def test_band_needs_1d_data():
    xs = np.random.default_rng(0).uniform(0, 1, size=(50, 2))
    with pytest.raises(UnsupportedDimensionError):
        confidence_band(Dataset(xs, xs.sum(axis=1)))


def test_zero_responses_rejected():
    with pytest.raises(InvalidInputError):
        confidence_band(uniform_data(np.zeros_like))


# ── Envelope attachment ─────────────────────────────────────────────────

def test_envelope_centers_are_convex():
    data = simulate_dataset(SimSpec("f2", n=100, sigma=0.1, seed=11), 0)
    band = confidence_band(data, attach="envelope")
    smooth = confidence_band(data, attach="smoother")
    assert band.attached_to == "envelope"
    second = band.centers[:-2] - 2 * band.centers[1:-1] + band.centers[2:]
    assert second.min() >= -1e-10
    reliable = ~band.unreliable
    assert np.all(band.centers[reliable] <= smooth.centers[reliable] + 1e-9)
    assert np.array_equal(band.halfwidths, smooth.halfwidths)
    assert band.interval == (0.0, 1.0)


def test_band_covers():
    band = confidence_band(uniform_data(lambda x: 2 * x, seed=5))

    def inside(p):
        return np.interp(p[:, 0], band.points, band.centers)

    def above(p):
        return np.interp(p[:, 0], band.points, band.upper) + 1e-3

    assert band_covers(band, inside)
    assert not band_covers(band, above)
    assert band_covers(band, above, interval=(2.0, 3.0))    # nothing to check there


@pytest.mark.parametrize("name", ["f1", "f2", "f3"])
def test_band_widths_order_of_magnitude(name):
    data = simulate_dataset(SimSpec(name, n=100, sigma=0.1, seed=2009), 0)
    band = confidence_band(data, BandConfig(alpha=0.05, delta_exponent=0.3), attach="envelope")
    assert 0.05 <= band.width <= 0.5


@pytest.mark.slow
def test_coverage_f2():
    spec = SimSpec("f2", n=100, sigma=0.1, replications=200, seed=2009)
    result = coverage_study(spec, BandConfig(alpha=0.05), interval=(0.1, 0.9))
    assert result.replications == 200
    assert result.fraction >= 0.85


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
