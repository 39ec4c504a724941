import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import scene
from lensrig.pgeo import (
    KnotSpacingError,
    PiecewiseKnots,
    knot_distances,
    local_pgeodesic,
    pgeodesic_candidates,
    piecewise_energies,
    piecewise_energy,
    polyline_length,
    same_homotopy_class,
    shorten,
    uniqueness_radius,
    winding_angles,
)
from lensrig.scenes import tangent_arc_length

ANNULUS_P = (1.6, 0.4)
ANNULUS_Q = (-1.5, -0.6)


def test_disk_chord():
    pg = local_pgeodesic(scene("flat-disk"), (0.1, 0.2), (-0.5, 0.3))
    assert pg.length == pytest.approx(math.hypot(0.6, 0.1), abs=1e-14)
    assert pg.energy == pytest.approx(pg.length**2)
    assert [s.kind for s in pg.segments] == ["interior"]
    assert pg.unique


def test_zero_length():
    pg = local_pgeodesic(scene("flat-disk"), (0.1, 0.2), (0.1, 0.2))
    assert pg.length == 0.0
    assert np.allclose(pg.points(scene("flat-disk"), 3), [0.1, 0.2])


def test_annulus_wraps_obstacle():
    sc = scene("flat-annulus")
    pg = local_pgeodesic(sc, ANNULUS_P, ANNULUS_Q)
    assert pg.length == pytest.approx(tangent_arc_length(ANNULUS_P, ANNULUS_Q), abs=1e-9)
    assert [s.kind for s in pg.segments] == ["interior", "boundary", "interior"]
    assert pg.segments[1].boundary == 1
    assert max(pg.angle_defects) < 1e-6
    cands = pgeodesic_candidates(sc, ANNULUS_P, ANNULUS_Q)
    lengths = sorted(c.length for c in cands)
    assert lengths[1] == pytest.approx(
        max(tangent_arc_length(ANNULUS_P, ANNULUS_Q, direction=d) for d in (1, -1)), abs=1e-9)


def test_annulus_tie_is_not_unique():
    pg = local_pgeodesic(scene("flat-annulus"), (0.0, 1.5), (0.0, -1.5))
    assert not pg.unique


def test_cap_distance_matches_great_circle():
    sc = scene("cap-0.4pi")
    p, q = np.array([0.3, 0.1]), np.array([-0.2, -0.4])

    def to_sphere(x):
        r2 = x @ x
        return np.array([2 * x[0], 2 * x[1], 1 - r2]) / (1 + r2)

    d = math.acos(np.clip(to_sphere(p) @ to_sphere(q), -1, 1))
    assert local_pgeodesic(sc, p, q).length == pytest.approx(d, abs=1e-9)


def test_uniqueness_radius_disk():
    b = uniqueness_radius(scene("flat-disk"))
    assert 1.9 <= b <= 2.0


def test_uniqueness_radius_annulus():
    b = uniqueness_radius(scene("flat-annulus"))
    assert 2.5 < b < math.pi


def test_uniqueness_radius_cap():
    b = uniqueness_radius(scene("cap-0.4pi"))
    assert 0 < b <= 0.8 * math.pi + 1e-9


def test_energy_single_interval_is_d_squared():
    sc = scene("flat-disk")
    kn = PiecewiseKnots.uniform([[0.0, 0.0], [0.3, 0.4]])
    assert piecewise_energy(sc, kn) == pytest.approx(0.25)


def test_energy_midpoint_is_length_squared():
    sc = scene("flat-disk")
    kn = PiecewiseKnots.uniform([[0.0, 0.0], [0.15, 0.2], [0.3, 0.4]])
    assert piecewise_energy(sc, kn) == pytest.approx(0.25)
    bent = PiecewiseKnots.uniform([[0.0, 0.0], [0.15, 0.25], [0.3, 0.4]])
    assert piecewise_energy(sc, bent) > 0.25


def test_energy_nonuniform_partition():
    sc = scene("flat-disk")
    kn = PiecewiseKnots([0.0, 0.25, 1.0], [[0.0, 0.0], [0.1, 0.0], [0.4, 0.0]])
    assert piecewise_energy(sc, kn) == pytest.approx(0.01 / 0.25 + 0.09 / 0.75)


def test_energy_knot_spacing():
    sc = scene("flat-disk")
    kn = PiecewiseKnots.uniform([[0.0, 0.0], [0.3, 0.4]])
    with pytest.raises(KnotSpacingError):
        piecewise_energy(sc, kn, b=0.4)


def test_knots_validation():
    with pytest.raises(ValueError):
        PiecewiseKnots([0.0, 0.6, 0.5, 1.0], np.zeros((4, 2)))
    with pytest.raises(ValueError):
        PiecewiseKnots([0.0, 1.0], np.zeros((3, 2)))


def test_batched_energies_agree():
    sc = scene("flat-annulus")
    rng = np.random.default_rng(3)
    ang = np.linspace(0.2, 2.0, 5)
    X = np.stack([np.c_[1.5 * np.cos(ang + d), 1.5 * np.sin(ang + d)] for d in rng.uniform(0, 1, 3)])
    t = np.linspace(0, 1, 5)
    E = piecewise_energies(sc, t, X)
    for m in range(3):
        assert E[m] == pytest.approx(piecewise_energy(sc, PiecewiseKnots(t, X[m])), rel=1e-12)
    D = knot_distances(sc, X)
    assert D.shape == (3, 4)


@given(pts=st.lists(st.tuples(st.floats(-0.6, 0.6), st.floats(-0.6, 0.6)), min_size=3, max_size=6))
def test_energy_bounds_length(pts):
    """E >= L**2 with equality only for proportional spacing."""
    sc = scene("flat-disk")
    x = np.array(pts)
    kn = PiecewiseKnots.uniform(x)
    E = piecewise_energy(sc, kn)
    L = float(np.sum(np.hypot(*np.diff(x, axis=0).T)))
    assert E >= L**2 - 1e-12


def test_shorten_disk_zigzag():
    sc = scene("flat-disk")
    xs = np.linspace(-0.8, 0.8, 9)
    ys = 0.3 * (-1.0) ** np.arange(9)
    ys[0] = ys[-1] = 0.0
    res = shorten(sc, np.c_[xs, ys])
    assert res.converged and res.monotone
    assert res.path.length == pytest.approx(1.6, abs=1e-6)
    assert res.path.energy >= res.path.length**2 - 1e-12


def test_shorten_annulus_long_way():
    sc = scene("flat-annulus")
    p, q = np.array(ANNULUS_P), np.array(ANNULUS_Q)
    ap, aq = math.atan2(p[1], p[0]), math.atan2(q[1], q[0])
    d = max((1, -1), key=lambda d: tangent_arc_length(p, q, direction=d))
    ang = ap + d * np.linspace(0, (d * (aq - ap)) % (2 * math.pi), 40)[1:-1]
    poly = np.vstack([p, np.c_[1.5 * np.cos(ang), 1.5 * np.sin(ang)], q])
    res = shorten(sc, poly)
    assert res.homotopy_preserved and res.monotone and res.converged
    assert res.path.length == pytest.approx(tangent_arc_length(p, q, direction=d), abs=1e-4)
    assert res.path.length > tangent_arc_length(p, q) + 0.2
    for seg in res.path.segments:
        if seg.kind == "boundary":
            assert seg.boundary == 1


def test_shorten_cap():
    sc = scene("cap-0.4pi")
    p, q = np.array([0.4, 0.0]), np.array([-0.4, 0.1])
    poly = np.array([p, [0.2, 0.35], [0.0, -0.3], [-0.2, 0.35], q])
    res = shorten(sc, poly)
    assert res.converged and res.monotone
    assert res.path.length == pytest.approx(local_pgeodesic(sc, p, q).length, abs=1e-6)


def test_shorten_joins_are_c1():
    res = shorten(scene("flat-annulus"), np.array([ANNULUS_P, [0.3, 1.6], [-1.4, 0.8], ANNULUS_Q]))
    assert res.converged
    assert max(res.path.angle_defects, default=0.0) < 1e-5


def test_shorten_rejects_bad_input():
    with pytest.raises(ValueError):
        shorten(scene("flat-disk"), np.zeros((1, 2)))


def test_polyline_length_flat():
    sc = scene("flat-disk")
    cum = polyline_length(sc, np.array([[0.0, 0.0], [0.3, 0.4], [0.3, 0.0]]))
    assert np.allclose(cum, [0.0, 0.5, 0.9])


def test_winding_classes():
    sc = scene("flat-annulus")
    up = np.array([[1.5, 0.0], [0.0, 1.5], [-1.5, 0.0]])
    down = np.array([[1.5, 0.0], [0.0, -1.5], [-1.5, 0.0]])
    assert same_homotopy_class(winding_angles(sc, up), winding_angles(sc, up[::-1][::-1]))
    assert not same_homotopy_class(winding_angles(sc, up), winding_angles(sc, down))


def test_path_json():
    js = local_pgeodesic(scene("flat-annulus"), ANNULUS_P, ANNULUS_Q).to_json()
    assert [s["kind"] for s in js["segments"]] == ["interior", "boundary", "interior"]
    assert js["segments"][1]["boundary"] == 1
