import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import pair, scene
from lensrig.flow import IntegratorCfg, ScatterGrid, trace
from lensrig.lens import (
    BoundaryIsometry,
    LensCfg,
    NonConstantFamily,
    compare,
    direction_convexity,
    excess,
    first_variation_check,
    induced_phi,
    pair_excess,
    tangent_limit_excess,
)


@pytest.fixture(scope="module")
def fig2():
    P = pair("figure2-pair")
    return compare(P.M, P.N, P.isometry, ScatterGrid(n_s=16, n_theta=16))


def test_induced_phi_identity():
    h = BoundaryIsometry.identity(scene("flat-disk"))
    assert induced_phi(h, (0.7, 1.1)) == (0, 0.7, 1.1)
    assert induced_phi(h, (0, 0.7, 1.1)) == (0, 0.7, 1.1)


def test_induced_phi_reversing():
    sc = scene("flat-disk")
    h = BoundaryIsometry.from_rows(sc, sc, [{"from": 0, "to": 0, "sigma": -1, "shift": 1.0}])
    b, s, th = induced_phi(h, (0, 0.25, 0.4))
    assert b == 0
    assert s == pytest.approx(0.75)
    assert th == pytest.approx(math.pi - 0.4)


@given(s=st.floats(0, 2 * math.pi, exclude_max=True), th=st.floats(0, math.pi),
       sigma=st.sampled_from([1, -1]), shift=st.floats(-10, 10))
def test_induced_phi_is_invertible(s, th, sigma, shift):
    sc = scene("flat-disk")
    h = BoundaryIsometry.from_rows(sc, sc, [{"from": 0, "to": 0, "sigma": sigma, "shift": shift}])
    hinv = BoundaryIsometry.from_rows(sc, sc, [{"from": 0, "to": 0, "sigma": sigma, "shift": -sigma * shift}])
    b, s2, th2 = induced_phi(hinv, induced_phi(h, (0, s, th)))
    L = 2 * math.pi
    assert abs((s2 - s + L / 2) % L - L / 2) < 1e-9
    assert th2 == pytest.approx(th, abs=1e-12)


def test_isometry_rejects_bad_rows():
    with pytest.raises(ValueError, match="lengths differ"):
        BoundaryIsometry.from_rows(scene("flat-disk"), scene("cap-0.4pi"), [{"from": 0, "to": 0}])
    with pytest.raises(ValueError, match="sigma"):
        BoundaryIsometry.from_rows(scene("flat-disk"), scene("flat-disk"), [{"from": 0, "to": 0, "sigma": 2}])
    with pytest.raises(IndexError):
        BoundaryIsometry.from_rows(scene("flat-disk"), scene("flat-disk"), [{"from": 1, "to": 0}])
    with pytest.raises(KeyError):
        induced_phi(BoundaryIsometry.identity(scene("flat-disk")), (3, 0.1, 0.2))


def test_self_comparison_is_lens_equivalent():
    sc = scene("flat-disk")
    c = compare(sc, sc, grid=ScatterGrid(n_s=8, n_theta=8))
    assert c.verdict == {"scattering": True, "lens": True}
    assert np.all(c.e == 0.0)
    assert len(c.families) == 1 and c.families[0]["size"] == 64


def test_disk_and_hemisphere_differ():
    c = compare(scene("flat-disk"), scene("hemisphere-cap"), grid=ScatterGrid(n_s=8, n_theta=8))
    assert c.verdict == {"scattering": False, "lens": False}


def test_figure2_scattering_and_families(fig2):
    assert fig2.verdict["scattering"] is True
    assert fig2.verdict["lens"] is False
    values = sorted(round(f["e_median"], 6) for f in fig2.families)
    assert set(values) == {0.0, round(math.pi, 6)}


def test_figure2_pair_excess(fig2):
    big = next(f["id"] for f in fig2.families if f["e_median"] > 1)
    small = next(f["id"] for f in fig2.families if f["e_median"] < 1)
    assert pair_excess(fig2, big, small) == pytest.approx(math.pi, abs=1e-6)
    assert pair_excess(fig2, small, big) == pytest.approx(-math.pi, abs=1e-6)
    with pytest.raises(NonConstantFamily):
        pair_excess(fig2, big, small, tol=-1.0)


def test_figure2_outputs(fig2):
    js = fig2.to_json()
    assert js["M"] == "figure2-glued" and js["N"] == "figure2-capped"
    assert js["residuals"]["max_combined"] < fig2.scat_tol
    lines = fig2.to_csv().splitlines()
    assert lines[0] == "s,theta,scat_match,res_s,res_theta,e,family,excluded"
    assert len(lines) == 257


@given(s=st.floats(0, 2 * math.pi, exclude_max=True), th=st.floats(0.2, math.pi - 0.2))
def test_excess_time_reversal(s, th):
    """The excess of a geodesic and of its reverse agree."""
    P = pair("figure2-pair")
    rec = trace(P.M, (0, s, th), IntegratorCfg(rtol=1e-11, atol=1e-13))
    if rec.trapped or rec.tangencies:
        return
    b, s1, th1 = rec.exit
    if not 0.05 < th1 < math.pi - 0.05:
        return
    e1 = excess(P.M, P.N, P.isometry, 0, s, th)[0]
    e2 = excess(P.M, P.N, P.isometry, b, s1, math.pi - th1)[0]
    assert e1 == pytest.approx(e2, abs=1e-6)


def test_excess_trapped_is_nan():
    sc = scene("cylinder")
    h = BoundaryIsometry.identity(sc)
    e = excess(sc, sc, h, 0, [0.0], [0.01], IntegratorCfg(max_length=1.0))
    assert np.isnan(e[0])


@pytest.mark.parametrize("name", ["flat-disk", "peanut", "cap-0.4pi"])
def test_first_variation(name):
    r = first_variation_check(scene(name))
    for key in ("s", "theta"):
        assert r[key]["checked"] > 0
        assert r[key]["max_residual"] < 1e-5


def test_first_variation_glued():
    r = first_variation_check(scene("figure2-glued"))
    assert r["s"]["max_residual"] < 1e-5 and r["theta"]["max_residual"] < 1e-5


def test_direction_convexity():
    assert direction_convexity(scene("flat-disk"), 0, 1.0, 1) == "convex"
    assert direction_convexity(scene("cylinder"), 0, 1.0, -1) == "convex"
    pe = scene("peanut")
    arc = next(a for a in pe.classification.arcs if a.cls == "S-")
    assert direction_convexity(pe, 0, 0.5 * (arc.s_start + arc.s_end), 1) == "concave"


def test_tangent_limit_concave_is_zero():
    pe = scene("peanut")
    c = compare(pe, pe, grid=ScatterGrid(n_s=4, n_theta=4))
    arc = next(a for a in pe.classification.arcs if a.cls == "S-")
    assert tangent_limit_excess(c, 0, 0.5 * (arc.s_start + arc.s_end)) == 0.0


def test_tangent_limit_self_compare_and_figure2(fig2):
    sc = scene("flat-disk")
    c = compare(sc, sc, grid=ScatterGrid(n_s=4, n_theta=4))
    assert tangent_limit_excess(c, 0, 0.3, 1) == 0.0
    for side in (1, -1):
        assert abs(tangent_limit_excess(fig2, 0, 0.3, side)) < 1e-6


def test_tangent_limit_validates():
    sc = scene("flat-disk")
    c = compare(sc, sc, grid=ScatterGrid(n_s=4, n_theta=4))
    with pytest.raises(ValueError):
        tangent_limit_excess(c, 0, 0.3, side=0)
    with pytest.raises(ValueError):
        tangent_limit_excess(c, 0, 0.3, thetas=[0.1, 0.2])


def test_lens_tolerances_default():
    sc = scene("flat-disk")
    scat, lens = LensCfg().tolerances(sc)
    assert scat == pytest.approx(20 * IntegratorCfg().event_tol)
    assert lens == pytest.approx(1e-4 * sc.diameter)
