"""
Geometry tests: domains, grids, lower hulls, covers and the brute-force oracle.

Run: pytest test_geometry.py   (or: python test_geometry.py)
"""

import math
import sys

import numpy as np
import pytest

from errors import DegenerateGeometryError, InvalidDomainError, InvalidGridError, InvalidInputError, OutOfDomainError
from geometry import (
    AffinePiece,
    ConvexEnvelope,
    PolyhedralDomain,
    convex_combination_cover,
    convexity_defect,
    design_grid,
    envelope_oracle,
    evaluate,
    lower_hull,
    make_box_domain,
    polytope_grid,
    sample_in_domain,
    uniform_grid,
    verify_covering,
)


def unit(d):
    return make_box_domain(np.zeros(d), np.ones(d))


# ── Domains ─────────────────────────────────────────────────────────────

def test_box_interval():
    dom = make_box_domain([0], [1])
    assert sorted(dom.vertices[:, 0].tolist()) == [0.0, 1.0]


def test_box_square_corners():
    dom = make_box_domain([0, 0], [1, 1])
    assert {tuple(v) for v in dom.vertices} == {(0, 0), (1, 0), (0, 1), (1, 1)}


def test_degenerate_box():
    with pytest.raises(InvalidDomainError):
        make_box_domain([0], [0])


def test_non_extreme_vertex_rejected():
    with pytest.raises(InvalidDomainError):
        PolyhedralDomain(2, np.array([[0, 0], [1, 0], [0, 1], [0.2, 0.2]]))


def test_from_points_keeps_extreme_points():
    pts = np.array([[0, 0], [2, 0], [0, 2], [0.5, 0.5], [0.2, 0.1]])
    dom = PolyhedralDomain.from_points(pts)
    assert len(dom.vertices) == 3
    assert dom.contains([0.4, 0.4])
    assert not dom.contains([1.5, 1.5])


# ── Grids ───────────────────────────────────────────────────────────────

def test_uniform_grid_1d():
    grid = uniform_grid(unit(1), 5)
    assert grid.points[:, 0].tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert grid.mesh == pytest.approx(0.25)


def test_uniform_grid_single_cell():
    grid = uniform_grid(unit(2), 2)
    assert len(grid) == 4
    assert grid.mesh == pytest.approx(math.sqrt(2))


def test_uniform_grid_11():
    grid = uniform_grid(unit(2), 11)
    assert len(grid) == 121
    assert grid.mesh == pytest.approx(0.1 * math.sqrt(2))


def test_grid_needs_two_points():
    with pytest.raises(InvalidGridError):
        uniform_grid(unit(1), 1)


def test_polytope_grid_contains_vertices_and_covers():
    dom = PolyhedralDomain(2, np.array([[0, 0], [1, 0], [0, 1]]))
    grid = polytope_grid(dom, 11)
    for v in dom.vertices:
        assert np.any(np.all(np.isclose(grid.points, v), axis=1))
    assert np.all(dom.contains(grid.points))
    assert verify_covering(grid, trials=100, seed=1) == 0


def test_design_grid_1d_mesh_is_largest_gap():
    grid = design_grid([0.1, 0.3, 0.9], unit(1))
    # domain endpoints 0 and 1 are added
    assert grid.mesh == pytest.approx(0.6)


# ── Covers ──────────────────────────────────────────────────────────────

def test_cover_midpoint():
    grid = uniform_grid(unit(1), 3)
    pairs = convex_combination_cover(grid, [0.25])
    assert [(p[0], w) for p, w in pairs] == [(0.0, 0.5), (0.5, 0.5)]


def test_cover_grid_point():
    grid = uniform_grid(unit(1), 3)
    pairs = convex_combination_cover(grid, [0.5])
    assert len(pairs) == 1
    assert pairs[0][0][0] == 0.5 and pairs[0][1] == pytest.approx(1.0)


def test_cover_square():
    grid = uniform_grid(unit(2), 2)
    pairs = convex_combination_cover(grid, [0.25, 0.25])
    assert len(pairs) == 3
    assert sorted(w for _, w in pairs) == pytest.approx([0.25, 0.25, 0.5])


def test_cover_properties_random():
    rng = np.random.default_rng(3)
    for d, m in ((1, 7), (2, 6), (3, 4)):
        grid = uniform_grid(unit(d), m)
        for x in rng.uniform(0, 1, size=(50, d)):
            pairs = convex_combination_cover(grid, x)
            pts = np.array([p for p, _ in pairs])
            lam = np.array([w for _, w in pairs])
            assert len(pairs) <= d + 1
            assert np.all(lam >= 0)
            assert lam.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.max(np.abs(lam @ pts - x)) <= 1e-12
            assert np.all(np.linalg.norm(pts - x, axis=1) <= grid.mesh + 1e-12)


def test_cover_outside():
    with pytest.raises(OutOfDomainError):
        convex_combination_cover(uniform_grid(unit(1), 3), [1.5])


# ── Lower hull / evaluate ───────────────────────────────────────────────

def test_hull_middle_point_above_chord():
    env = lower_hull([([0.0], 0.0), ([0.5], 1.0), ([1.0], 0.0)])
    assert len(env.offsets) == 1
    assert env.gradients[0, 0] == pytest.approx(0.0)
    assert evaluate(env, [0.5]) == pytest.approx(0.0)


def test_hull_two_pieces():
    env = lower_hull([([0.0], 1.0), ([0.5], 0.0), ([1.0], 1.0)])
    assert len(env.offsets) == 2
    assert evaluate(env, [0.25]) == pytest.approx(0.5)
    assert evaluate(env, [0.5]) == pytest.approx(0.0)
    assert evaluate(env, [0.75]) == pytest.approx(0.5)


def test_hull_square_one_raised_corner():
    samples = [([0, 0], 0.0), ([1, 0], 0.0), ([0, 1], 0.0), ([1, 1], 1.0)]
    env = lower_hull(samples)
    assert evaluate(env, [0.5, 0.5]) == pytest.approx(0.0, abs=1e-12)


def test_hull_flat_data_single_plane():
    pts = uniform_grid(unit(2), 5).points
    env = lower_hull(pts, 2 * pts[:, 0] - pts[:, 1] + 3)
    assert len(env.offsets) == 1
    assert env.evaluate([0.3, 0.6]) == pytest.approx(3.0)


def test_hull_line_is_one_piece_1d():
    xs = np.linspace(0, 1, 101)
    env = lower_hull(xs, 3 * xs + 1)
    assert len(env.offsets) == 1


def test_hull_keeps_small_dip_at_large_coordinates():
    xs = np.array([0.0, 400.0, 800.0])
    ys = np.array([0.0, 100.0 - 1e-7, 200.0])
    env = lower_hull(xs.reshape(-1, 1), ys)
    assert len(env.offsets) == 2
    assert abs(env.evaluate([400.0]) - ys[1]) <= 1e-9
    assert np.all(env.evaluate_many(xs.reshape(-1, 1)) <= ys + 1e-9)


def test_hull_line_at_large_coordinates_is_one_piece():
    xs = np.linspace(0, 800, 401)
    env = lower_hull(xs.reshape(-1, 1), 0.25 * xs + 3.0)
    assert len(env.offsets) == 1
    assert env.evaluate([123.0]) == pytest.approx(33.75)


def test_hull_duplicates_keep_minimum():
    env = lower_hull([([0.0], 0.0), ([1.0], 5.0), ([1.0], 1.0)])
    assert env.evaluate([1.0]) == pytest.approx(1.0)


def test_hull_errors():
    with pytest.raises(DegenerateGeometryError):
        lower_hull([([0.0, 0.0], 0.0), ([1.0, 1.0], 1.0), ([2.0, 2.0], 0.0)])
    with pytest.raises(InvalidInputError):
        lower_hull([([0.0], 0.0), ([1.0], math.nan)])


def test_evaluate_pieces():
    env = ConvexEnvelope(np.array([[0.0]]), np.array([0.0]), unit(1))
    assert evaluate(env, [0.3]) == 0.0
    env = ConvexEnvelope(np.array([[-2.0], [2.0]]), np.array([1.0, -1.0]), unit(1))
    assert evaluate(env, [0.0]) == 1.0


def test_pieces_match_evaluate():
    env = lower_hull([([0.0], 1.0), ([0.5], 0.0), ([1.0], 1.0)])
    pieces = env.pieces
    assert all(isinstance(p, AffinePiece) for p in pieces) and len(pieces) == 2
    for x in (0.1, 0.5, 0.9):
        assert max(p([x]) for p in pieces) == pytest.approx(env.evaluate([x]))


def test_affine_piece_rejects_non_finite():
    assert AffinePiece((2.0,), -1.0)(3.0) == pytest.approx(5.0)
    with pytest.raises(InvalidInputError):
        AffinePiece((math.nan,), 0.0)
    with pytest.raises(InvalidInputError):
        AffinePiece((1.0,), math.inf)


def test_evaluate_outside_needs_extend():
    env = lower_hull([([0.0], 1.0), ([0.5], 0.0), ([1.0], 1.0)])
    with pytest.raises(OutOfDomainError):
        evaluate(env, [2.0])
    assert evaluate(env, [2.0], extend=True) == pytest.approx(3.0)


def test_concave_shape_negates():
    env = lower_hull([([0.0], 1.0), ([0.5], 0.0), ([1.0], 1.0)]).with_shape("concave")
    assert env.evaluate([0.25]) == pytest.approx(-0.5)


def test_hull_below_samples_and_minimal():
    rng = np.random.default_rng(11)
    pts = uniform_grid(unit(2), 8).points
    vals = rng.normal(size=len(pts)) + np.sum(pts ** 2, axis=1)
    env = lower_hull(pts, vals)
    phi = env.evaluate_many(pts)
    assert np.all(phi <= vals + 1e-9)
    hull_vertices = {i for facet in env.facets for i in facet}
    for i in hull_vertices:
        assert phi[i] == pytest.approx(vals[i], abs=1e-9)


def test_idempotence():
    rng = np.random.default_rng(5)
    grid = uniform_grid(unit(2), 7)
    env = lower_hull(grid.points, rng.normal(size=len(grid)))
    again = lower_hull(grid.points, env.evaluate_many(grid.points))
    test = uniform_grid(unit(2), 31).points
    assert np.max(np.abs(env.evaluate_many(test) - again.evaluate_many(test))) <= 1e-9


def test_convexity_of_envelopes():
    rng = np.random.default_rng(8)
    dom = unit(2)
    grid = uniform_grid(dom, 9)
    env = lower_hull(grid.points, rng.normal(size=len(grid)))
    assert convexity_defect(lambda p: env.evaluate_many(p), dom, triples=1000, seed=2) <= 1e-9


# ── Oracle ──────────────────────────────────────────────────────────────

def test_oracle_values():
    assert envelope_oracle([([0.0], 0.0), ([1.0], 0.0)], [0.5]) == pytest.approx(0.0)
    assert envelope_oracle([([0.0], 1.0), ([0.5], 0.0), ([1.0], 1.0)], [0.25]) == pytest.approx(0.5)
    assert envelope_oracle([([0.0], 0.0), ([0.5], -1.0), ([1.0], 0.0)], [0.5]) == pytest.approx(-1.0)


def test_oracle_outside_hull():
    with pytest.raises(OutOfDomainError):
        envelope_oracle([([0.0], 0.0), ([1.0], 0.0)], [2.0])


def test_hull_matches_oracle_randomized():
    rng = np.random.default_rng(2024)
    for case in range(200):
        d = 1 + case % 2
        k = int(rng.integers(d + 2, 11))
        pts = rng.uniform(0, 1, size=(k, d))
        vals = rng.normal(size=k)
        env = lower_hull(pts, vals)
        assert convexity_defect(lambda p: env.evaluate_many(p, extend=True), env.domain,
                                triples=1000, seed=case) <= 1e-9
        for _ in range(3):
            lam = rng.dirichlet(np.ones(k))
            x = lam @ pts
            assert env.evaluate(x) == pytest.approx(envelope_oracle(pts, x, vals), abs=1e-8)


def test_sample_in_domain_inside():
    dom = PolyhedralDomain(2, np.array([[0, 0], [1, 0], [0, 1]]))
    pts = sample_in_domain(dom, 200, np.random.default_rng(0))
    assert pts.shape == (200, 2)
    assert np.all(dom.contains(pts))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
