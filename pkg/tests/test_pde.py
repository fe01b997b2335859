import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from capwiener.capacity import Exponents, MeasureOnGrid
from capwiener.pde import (
    BoundarySpec,
    SolverConfig,
    ball_domain,
    ball_grid,
    ball_torsion,
    exhaustion_levels,
    green_potential,
    ko_constant,
    ko_profile,
    large_solution,
    maximal_solution,
    residual,
    sigma_moderate_limit,
    solve_measure_wholebox,
    solve_semilinear,
)
from capwiener.setgeom import Ball, GridContext, PointCloud, SetSpec

from oracles import ko, radial_large_solution

Q4 = Exponents(4.0)
BALL = SetSpec((Ball((0, 0, 0), 1.0),))


@pytest.fixture(scope="module")
def small():
    g = ball_grid(1.0, 24)
    return g, ball_domain(g, 1.0)


def test_ko_examples():
    assert ko_constant(Q4) == pytest.approx((10 / 9) ** (1 / 3))
    assert ko_profile(1.0, Q4) == pytest.approx(1.0357, abs=1e-4)
    assert ko_profile(2.0, Exponents(3.0)) == pytest.approx(math.sqrt(2) / 2)
    t = np.array([0.1, 0.7])
    assert np.allclose(ko_profile(2 * t, Q4) / ko_profile(t, Q4), 2 ** (-2 / 3))


@settings(max_examples=20, deadline=None)
@given(q=st.floats(1.2, 8.0), t=st.floats(0.05, 5.0))
def test_ko_profile_solves_ode(q, t):
    e = Exponents(q)
    d = 1e-4 * t
    u = lambda s: ko_profile(s, e)
    upp = (u(t + d) - 2 * u(t) + u(t - d)) / d**2
    assert upp == pytest.approx(u(t) ** q, rel=1e-4)


def test_zero_data_zero_solution(small):
    g, dom = small
    f = solve_semilinear(dom, Q4)
    assert np.all(f.values == 0)
    assert np.all(green_potential(dom, MeasureOnGrid.zero(g)).values == 0)


def _random_measure(g, rng, n=5, scale=1.0):
    pts = rng.uniform(-0.5, 0.5, size=(n, 3))
    return MeasureOnGrid.from_points(g, pts, scale * rng.uniform(0.1, 1.0, n))


@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_monotone_in_measure_and_below_green(small, seed):
    g, dom = small
    rng = np.random.default_rng(seed)
    mu = _random_measure(g, rng)
    extra = _random_measure(g, rng, 3)
    u1 = solve_semilinear(dom, Q4, mu)
    u2 = solve_semilinear(dom, Q4, mu + extra)
    G = green_potential(dom, mu)
    tol = 1e-6
    assert np.all(u1.values <= u2.values + tol)
    assert np.all(u1.values <= G.values + tol)
    assert residual(u1, Q4, mu) <= SolverConfig().newton_tol


def test_green_symmetry_and_far_field():
    R = 2.0
    g = ball_grid(R, 64)
    dom = ball_domain(g, R)
    a = g.point_of(g.node_of((0.5, 0.0, 0.0)))
    b = g.point_of(g.node_of((-0.5, 0.2, 0.0)))
    ga = green_potential(dom, MeasureOnGrid.from_points(g, [a], [1.0]))
    gb = green_potential(dom, MeasureOnGrid.from_points(g, [b], [1.0]))
    assert ga.at_node(b) == pytest.approx(gb.at_node(a), rel=1e-8)

    # exact Dirichlet Green function of the ball
    def exact(x, xi):
        star = xi * R**2 / np.dot(xi, xi)
        return (1 / np.linalg.norm(x - xi) - R / (np.linalg.norm(xi) * np.linalg.norm(x - star))) / (4 * math.pi)

    assert ga.at_node(b) == pytest.approx(exact(b, a), rel=0.10)


def test_ball_torsion_against_discrete_laplacian():
    g = GridContext.cube(1.2, 24)
    R = 1.0
    coords = np.stack([c.ravel() for c in np.broadcast_arrays(*g.coords())], axis=1)
    phi = ball_torsion(coords, R).reshape(g.shape)
    h = g.h
    lap = -sum(np.roll(phi, 1, ax) + np.roll(phi, -1, ax) - 2 * phi for ax in range(3)) / h**2
    r = g.radius()
    inner = r < R - 2 * h
    assert np.allclose(lap[inner], 1.0, atol=1e-9)
    assert np.all(phi[r >= R] == 0)


def test_large_solution_slab_profile():
    # pseudo-1-D slab: blow-up on x = +-1, periodic in y and z
    from capwiener.verify import ko_slab_check

    rep = ko_slab_check(Q4, resolution=128)
    assert rep.passed, rep.quantities


def test_large_solution_monotone_in_schedule(small):
    g, dom = small
    f = large_solution(dom, Q4)
    assert f.info["monotone_in_k"]
    assert len(f.info["increments"]) == len(f.info["schedule"]) - 1
    with pytest.raises(ValueError):
        large_solution(dom, Q4, schedule=(1.0, 1e9))


def test_exhaustion_levels():
    lv = exhaustion_levels(0.1)
    assert lv[0] == 0.5 and lv[-1] == 0.05
    assert all(a > b for a, b in zip(lv, lv[1:]))


@pytest.fixture(scope="module")
def ball_max():
    return maximal_solution(BALL, 4.0, Q4, resolution=48, stop_rel=0.0)


def test_maximal_solution_monotone_exhaustion(ball_max):
    assert ball_max.info["monotone_in_n"]
    assert len(ball_max.info["exhaustion"]) >= 2


def test_maximal_solution_barrier_ratio(ball_max):
    h = ball_max.context.h
    for k in (2, 4, 8):
        d = k * h
        x = np.array([[1.0 + d, 0, 0]])
        ratio = ball_max.sample(x)[0] / ko_profile(d, Q4)
        assert 1 / 3 <= ratio <= 3


def test_maximal_solution_matches_radial_oracle(ball_max):
    r, u = radial_large_solution(1.0, 4.0, 4.0)
    ref = np.interp(2.0, r, u)
    assert ball_max.sample(np.array([[2.0, 0, 0]]))[0] == pytest.approx(ref, rel=0.08)


def test_keller_osserman_bound(ball_max):
    # u <= ko(d/2) at nodes d away from the F-side boundary
    from scipy import ndimage

    g = ball_max.context
    dom = ball_max.domain.indicator
    d = ndimage.distance_transform_edt(dom, sampling=g.h)
    inner = dom & (g.radius() < 2.0) & (d > g.h)
    assert np.all(ball_max.values[inner] <= ko(d[inner] / 2, 4.0))


def test_point_is_removable_in_supercritical_range():
    p = SetSpec((PointCloud(((0.0, 0.0, 0.0),)),))
    f = maximal_solution(p, 2.0, Q4, resolution=24)
    assert np.all(f.values == 0)


def test_wholebox_and_sigma_limit(small):
    g = ball_grid(2.0, 24)
    rng = np.random.default_rng(1)
    mu = MeasureOnGrid.from_points(g, rng.uniform(-0.4, 0.4, (4, 3)), 1.0)
    u = solve_measure_wholebox(mu, Q4, 2.0)
    G = green_potential(ball_domain(g, 2.0), mu)
    assert np.all(u.values <= G.values + 1e-8)
    assert u.info["stabilization_bound"] == pytest.approx(ko_profile(1.0, Q4))
    with pytest.raises(ValueError):
        solve_measure_wholebox(MeasureOnGrid.from_points(g, [[1.5, 0, 0]], [1.0]), Q4, 2.0)

    F = SetSpec((Ball((0, 0, 0), 0.4),))
    lim = sigma_moderate_limit(F, [F, F], Q4, R=2.0, resolution=24)
    assert lim.info["monotone_in_n"] and lim.info["increments"][0] == pytest.approx(0.0, abs=1e-8)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(damping=0.0)
    with pytest.raises(ValueError):
        BoundarySpec(schedule=(2.0, 1.0))
