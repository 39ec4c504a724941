import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import scene
from lensrig.domain import (
    S_MINUS,
    S_PLUS,
    S_ZERO,
    AntipodalGluing,
    BoundaryCurve,
    Circle,
    Peanut,
    Scene,
    boundary_frame,
    classify_boundary,
    lift_unit_tangent,
)
from lensrig.geometry import get_metric

FRAME_SCENES = ["flat-disk", "flat-annulus", "peanut", "cap-0.4pi", "cylinder", "hyperbolic-annulus",
                "remark-cone", "figure2-capped"]


def test_flat_disk_kg():
    for s in np.linspace(0, 2 * math.pi, 7):
        assert boundary_frame(scene("flat-disk"), 0, s)[3] == pytest.approx(1.0, abs=1e-12)


def test_concave_inner_circle_kg():
    m = get_metric("flat")
    sc = Scene("ann", m, [BoundaryCurve(m, Circle((0, 0), 1.0)), BoundaryCurve(m, Circle((0, 0), 0.5, "outside"))])
    assert boundary_frame(sc, 1, 0.3)[3] == pytest.approx(-2.0, abs=1e-12)


def test_cylinder_kg_zero():
    sc = scene("cylinder")
    for b in (0, 1):
        assert abs(boundary_frame(sc, b, 1.0)[3]) < 1e-14


@pytest.mark.parametrize("name", FRAME_SCENES)
def test_frame_orthonormal_and_inward(name):
    sc = scene(name)
    m = sc.metric
    rng = np.random.default_rng(0)
    for b in sc.open_boundaries:
        c = sc.boundaries[b]
        s = rng.uniform(0, c.length, 1000)
        p, T, nu, _ = c.frames(s)
        assert np.max(np.abs(m.inner(p[:, 0], p[:, 1], T, T) - 1)) < 1e-8
        assert np.max(np.abs(m.inner(p[:, 0], p[:, 1], nu, nu) - 1)) < 1e-8
        assert np.max(np.abs(m.inner(p[:, 0], p[:, 1], T, nu))) < 1e-8
        probe = p + 1e-4 * nu
        assert np.all(sc.level(probe[:, 0], probe[:, 1]) > 0)


def test_classify_disk():
    cls = scene("flat-disk").classification
    assert cls.counts() == {S_PLUS: 1, S_MINUS: 0, S_ZERO: 0}
    assert cls.switch_points == []


def test_classify_peanut():
    cls = scene("peanut").classification
    assert cls.counts() == {S_PLUS: 2, S_MINUS: 2, S_ZERO: 0}
    assert len(cls.switch_points) == 4


def test_peanut_zeros_simple():
    sc = scene("peanut")
    c = sc.boundaries[0]
    for _, s0 in sc.classification.switch_points:
        h = 1e-4
        slope = (c.frame((s0 + h) % c.length)[3] - c.frame((s0 - h) % c.length)[3]) / (2 * h)
        assert abs(slope) > 0.1


def test_classify_cylinder():
    cls = scene("cylinder").classification
    assert cls.counts(0) == {S_PLUS: 0, S_MINUS: 0, S_ZERO: 1}
    assert cls.counts(1) == {S_PLUS: 0, S_MINUS: 0, S_ZERO: 1}


def test_classify_glued_scene_skips_glued_circle():
    cls = scene("figure2-glued").classification
    assert all(a.boundary == 0 for a in cls.arcs)


@pytest.mark.parametrize("name", ["peanut", "flat-annulus", "cylinder"])
def test_classification_stable_under_refinement(name):
    sc = scene(name)
    a = classify_boundary(sc, n_samples=1024)
    b = classify_boundary(sc, n_samples=2048)
    assert [(x.boundary, x.cls) for x in a.arcs] == [(x.boundary, x.cls) for x in b.arcs]
    assert len(a.switch_points) == len(b.switch_points)
    for (i, s), (j, t) in zip(sorted(a.switch_points), sorted(b.switch_points)):
        assert i == j and abs(s - t) < a.step


def test_every_point_has_a_class():
    sc = scene("peanut")
    L = sc.boundaries[0].length
    for s in np.linspace(0, L, 997, endpoint=False):
        assert sc.classification.class_at(0, s) in (S_PLUS, S_MINUS, "switch")


def test_classification_matches_kg_sign():
    sc = scene("peanut")
    c = sc.boundaries[0]
    for s in np.linspace(0, c.length, 400, endpoint=False):
        cls = sc.classification.class_at(0, s, tol=1e-3)
        kg = c.frame(s)[3]
        if cls == S_PLUS:
            assert kg > 0
        elif cls == S_MINUS:
            assert kg < 0


def test_oscillating_kg_rejected():
    from lensrig.domain import ClassificationError

    m = get_metric("flat")
    sc = Scene("wiggle", m, [BoundaryCurve(m, Peanut(a=0.3))])
    with pytest.raises(ClassificationError):
        classify_boundary(sc, max_switch=2)


def test_lift_normal():
    sc = scene("flat-disk")
    X = lift_unit_tangent(sc, 0, 0.7, math.pi / 2)
    _, _, nu, _ = boundary_frame(sc, 0, 0.7)
    assert (X.du, X.dv) == pytest.approx((nu.du, nu.dv), abs=1e-15)


def test_lift_disk_closed_form():
    th = math.pi / 4
    X = lift_unit_tangent(scene("flat-disk"), 0, 0.0, th)
    # at s = 0: T = (0, 1), nu = (-1, 0)
    assert (X.du, X.dv) == pytest.approx((-math.sin(th), math.cos(th)), abs=1e-15)


def test_lift_rejects_edge_angles():
    with pytest.raises(ValueError):
        lift_unit_tangent(scene("flat-disk"), 0, 0.0, 0.0)
    with pytest.raises(ValueError):
        lift_unit_tangent(scene("flat-disk"), 0, 0.0, math.pi)


@given(s=st.floats(0, 6.28), th=st.floats(0.01, math.pi - 0.01))
def test_lift_clairaut_on_revolution_boundary(s, th):
    sc = scene("hyperbolic-annulus")
    X = lift_unit_tangent(sc, 0, s, th)
    r = X.base.u
    c = sc.metric.clairaut(np.asarray(r), np.asarray(X.base.v), np.asarray(X.du), np.asarray(X.dv))
    assert abs(abs(float(c)) - math.sinh(r) * abs(math.cos(th))) < 1e-12


@given(s=st.floats(0, 100), th=st.floats(0.001, 3.14))
def test_gluing_involution(s, th):
    g = AntipodalGluing(1, 2.5)
    s = s % 2.5
    s2, th2 = g.apply(*g.apply(s, th))
    assert min(abs(s2 - s), 2.5 - abs(s2 - s)) < 1e-12
    assert th2 == th
