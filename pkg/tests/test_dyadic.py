import math

import numpy as np
import pytest

from capwiener.capacity import CapacityConfig, Exponents
from capwiener.dyadic import (
    equivalence_WF_WFstar,
    potential,
    profile,
    sum_int_profile,
    thickness,
    truncation_range,
    weight,
)
from capwiener.setgeom import Ball, Box, PointCloud, SetSpec, scale_spec

Q4 = Exponents(4.0)
CFG = CapacityConfig(window_resolution=24)
BALL = SetSpec((Ball((0, 0, 0), 1.0),))
POINT = SetSpec((PointCloud(((0.0, 0.0, 0.0),)),))


def test_weight():
    assert weight(3, Q4) == pytest.approx(4.0)
    assert weight(-3, Q4) == pytest.approx(0.25)


def test_truncation_range_examples():
    assert truncation_range(BALL, (2, 0, 0)) == (-2, 1)
    assert truncation_range(BALL, (0.3, 0, 0))[1] == math.inf


def test_ball_potential_outside():
    pv = potential(BALL, (2, 0, 0), "annulus", Q4, CFG)
    i, M = pv.truncation
    assert pv.total > 0 and pv.terms
    assert all(i <= t.m <= M for t in pv.terms)
    assert pv.total == pytest.approx(sum(t.contribution for t in pv.terms))
    assert all(t.contribution >= 0 for t in pv.terms)
    rec = pv.record()
    assert [t["m"] for t in rec["terms"]] == [t.m for t in pv.terms]


def test_point_potential_vanishes_supercritical():
    pv = potential(POINT, (1, 0, 0), "annulus", Q4, CFG)
    assert pv.total == 0 and pv.terms == []


def test_point_potential_decreases_subcritical():
    q2 = Exponents(2.0)
    vals = [potential(POINT, (1, 0, 0), "annulus", q2, CapacityConfig(window_resolution=n)).total
            for n in (16, 32)]
    assert vals[1] < vals[0]


def test_scaling_identity():
    F = SetSpec((Ball((0.6, 0, 0), 0.2),))
    w1 = potential(F, (0, 0, 0), "annulus", Q4, CFG).total
    w2 = potential(scale_spec(F, 0.5), (0, 0, 0), "annulus", Q4, CFG).total
    assert w1 == pytest.approx(2 ** (2 / 3) * w2, rel=0.10)


def test_monotone_in_f():
    small = SetSpec((Ball((0, 0, 0), 0.5),))
    x = (1.5, 0.3, 0)
    a = potential(small, x, "annulus", Q4, CFG).total
    b = potential(BALL, x, "annulus", Q4, CFG).total
    assert a <= b * (1 + 1e-3)


def test_equivalence_lower_inequality():
    samples = [(1.5, 0, 0), (0, 1.8, 0.2)]
    rep = equivalence_WF_WFstar(BALL, samples, Q4, CFG, CapacityConfig(window_resolution=32))
    for level in ("coarse", "fine"):
        for w, ws in zip(rep.quantities[level]["W"], rep.quantities[level]["Wstar"]):
            assert ws >= w * (1 - 1e-3)
    assert rep.passed


def test_equivalence_empty_set():
    rep = equivalence_WF_WFstar(SetSpec(()), [(1.0, 0, 0)], Q4, CFG, CFG)
    assert rep.quantities["coarse"]["W"] == [0.0] and rep.passed


def test_thickness_point_is_zero():
    assert thickness(POINT, (0, 0, 0), Q4, 6, CFG).total == 0


def test_thickness_ball_boundary_grows():
    th = thickness(BALL, (1, 0, 0), Q4, 8, CFG)
    s = th.partial_sums
    assert len(s) == 9
    inc = np.diff(s)
    assert np.all(inc > 0)
    # increments do not decay: terms grow like 2^m for a ball
    assert inc[-1] > inc[0]


def test_profile_constant_below_radius():
    K = SetSpec((Ball((0, 0, 0), 1.5),))
    vals = [profile(K, t, Q4, CFG) for t in (1.0, 0.5, 0.25)]
    assert vals[0] == pytest.approx(vals[1]) == pytest.approx(vals[2])


def test_sum_int_constant_profile():
    K = SetSpec((Ball((0, 0, 0), 1.5),))
    rep = sum_int_profile(K, 0.0, (0, 3), Q4, CFG)
    run = rep.quantities["runs"]["4"]
    assert run["lower_sum"] / run["integral"] == pytest.approx(1 / math.log(2), rel=1e-9)
    assert rep.passed


def test_sum_int_ball_and_empty():
    rep = sum_int_profile(SetSpec((Ball((0, 0, 0), 0.5),)), 0.5, (0, 4), Q4, CFG)
    assert rep.passed and math.isfinite(rep.quantities["c"])
    empty = sum_int_profile(SetSpec(()), 0.5, (0, 3), Q4, CFG)
    assert empty.passed and empty.quantities["runs"]["4"]["integral"] == 0
    with pytest.raises(ValueError):
        sum_int_profile(BALL, 0.5, (3, 3), Q4, CFG)


def test_box_potential_positive():
    box = SetSpec((Box((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5)),))
    assert potential(box, (1.2, 0, 0), "closed-ball", Q4, CFG).total > 0
