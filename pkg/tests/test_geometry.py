import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lensrig.geometry import (
    ChartPoint,
    DomainError,
    KinkError,
    TangentVec,
    christoffel,
    gauss_curvature,
    get_metric,
    metric_names,
    metric_norm,
    remark_profile,
)


def tv(u, v, du, dv):
    return TangentVec(ChartPoint(u, v), du, dv)


def test_norm_flat_unit():
    assert metric_norm(get_metric("flat"), tv(0, 0, 1, 0)) == 1.0


def test_norm_flat_polar():
    assert metric_norm(get_metric("flat-polar"), tv(2.0, 0.3, 0, 1)) == pytest.approx(2.0, abs=1e-15)


def test_norm_hyperbolic():
    assert metric_norm(get_metric("hyperbolic"), tv(1.0, 0.0, 0, 1)) == pytest.approx(math.sinh(1.0), rel=1e-15)


def test_norm_outside_domain():
    with pytest.raises(DomainError):
        metric_norm(get_metric("sphere"), tv(4.0, 0.0, 1, 0))


def test_christoffel_flat_zero():
    assert np.all(christoffel(get_metric("flat"), ChartPoint(0.3, -0.2)) == 0)


def test_christoffel_flat_polar():
    G = christoffel(get_metric("flat-polar"), ChartPoint(1.0, 0.0))
    assert G[0, 1, 1] == pytest.approx(-1.0)
    assert G[1, 0, 1] == pytest.approx(1.0)
    assert G[1, 1, 0] == pytest.approx(1.0)


def test_christoffel_sphere():
    G = christoffel(get_metric("sphere"), ChartPoint(math.pi / 4, 1.0))
    assert G[0, 1, 1] == pytest.approx(-0.5, abs=1e-15)


def test_curvature_values():
    assert gauss_curvature(get_metric("flat"), ChartPoint(0.5, 0.5)) == 0.0
    assert gauss_curvature(get_metric("sphere"), ChartPoint(1.0, 2.0)) == pytest.approx(1.0)
    assert gauss_curvature(get_metric("remark-cone"), ChartPoint(1.5, 0.0)) == pytest.approx(-1.0)
    assert gauss_curvature(get_metric("conformal:stereographic"), ChartPoint(0.4, -0.7)) == pytest.approx(1.0)


def test_curvature_at_kink_needs_side():
    m = get_metric("remark-cone")
    with pytest.raises(KinkError, match="0.1"):
        gauss_curvature(m, ChartPoint(0.1, 0.0))
    assert gauss_curvature(m, ChartPoint(0.1, 0.0), side=-1) == pytest.approx(0.0, abs=1e-12)


def test_remark_profile_constraints():
    p = remark_profile()
    r = np.linspace(1e-3, 3.0, 20001)
    assert np.all(p.df(r) > 0)
    assert np.all(p.d2f(r) >= -1e-12)
    assert np.allclose(p.f(np.array([0.05])), 0.05 / 3)
    assert np.allclose(p.f(np.array([1.5, 2.5])), np.sinh([1.5, 2.5]), rtol=1e-14)
    # f(1) = sinh(1): the integral of f' over [0, 1]
    assert p.f(np.array([1.0]))[0] == pytest.approx(math.sinh(1.0), rel=1e-12)


POINTS = {
    "flat": lambda a, b: (a, b),
    "sphere": lambda a, b: (0.2 + 2.7 * abs(a) / 2, b),
    "hyperbolic": lambda a, b: (0.1 + 3 * abs(a), b),
    "cylinder": lambda a, b: (a, b),
    "flat-polar": lambda a, b: (0.1 + abs(a), b),
    "remark-cone": lambda a, b: (0.02 + 2.9 * abs(a) / 2, b),
    "conformal:stereographic": lambda a, b: (a, b),
    "conformal:capped-cylinder": lambda a, b: (a * 0.7, b * 0.7),
}

coords = st.tuples(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))


def _point(name, ab):
    return POINTS[name](*ab)


@pytest.mark.parametrize("name", sorted(POINTS))
@given(ab=coords)
def test_christoffel_symmetric(name, ab):
    m = get_metric(name)
    u, v = _point(name, ab)
    if m.kink_at(u, v, atol=1e-6) is not None:
        return
    G = christoffel(m, ChartPoint(u, v))
    assert np.allclose(G[:, 0, 1], G[:, 1, 0], rtol=0, atol=1e-14)


@pytest.mark.parametrize("name", sorted(POINTS))
@given(ab=coords)
def test_christoffel_matches_metric_derivatives(name, ab):
    """Gamma from finite differences of g agrees with the closed form."""
    m = get_metric(name)
    u, v = _point(name, ab)
    if m.kink_at(u, v, atol=1e-4) is not None or (name == "conformal:capped-cylinder" and math.hypot(u, v) < 1e-2):
        return
    h = 1e-5
    g = m.tensor(np.asarray(u), np.asarray(v))
    dg = np.stack([(m.tensor(np.asarray(u + h), np.asarray(v)) - m.tensor(np.asarray(u - h), np.asarray(v))) / (2 * h),
                   (m.tensor(np.asarray(u), np.asarray(v + h)) - m.tensor(np.asarray(u), np.asarray(v - h))) / (2 * h)])
    gi = np.linalg.inv(g)
    G_fd = np.zeros((2, 2, 2))
    for k in range(2):
        for i in range(2):
            for j in range(2):
                G_fd[k, i, j] = 0.5 * sum(gi[k, l] * (dg[i, l, j] + dg[j, l, i] - dg[l, i, j]) for l in range(2))
    G_cf = christoffel(m, ChartPoint(u, v))
    scale = max(1.0, float(np.max(np.abs(G_cf))))
    assert np.allclose(G_cf, G_fd, rtol=0, atol=1e-6 * scale)


@pytest.mark.parametrize("name", ["sphere", "hyperbolic", "flat-polar", "remark-cone", "cylinder"])
@given(a=st.floats(0.0, 1.0))
def test_profile_derivatives(name, a):
    m = get_metric(name)
    r = _point(name, (a, 0.0))[0]
    if m.kink_at(r, 0.0, atol=1e-4) is not None:
        return
    p = m.profile
    h = 1e-6
    rr = np.array([r])
    assert p.df(rr)[0] == pytest.approx(((p.f(rr + h) - p.f(rr - h)) / (2 * h))[0], rel=1e-6, abs=1e-8)
    assert p.d2f(rr)[0] == pytest.approx(((p.df(rr + h) - p.df(rr - h)) / (2 * h))[0], rel=1e-6, abs=1e-6)


@pytest.mark.parametrize("name", ["sphere", "hyperbolic", "flat-polar", "remark-cone", "cylinder"])
@given(a=st.floats(0.0, 1.0), th=st.floats(0.0, 6.0))
def test_revolution_curvature_brioschi(name, a, th):
    """K = -f''/f against the Brioschi formula for E = 1, F = 0, G = f^2, by finite differences."""
    m = get_metric(name)
    r = _point(name, (a, 0.0))[0]
    if m.kink_at(r, th, atol=1e-3) is not None:
        return
    h = 1e-4

    def sqrtG(x):
        return np.sqrt(m.tensor(np.asarray(x), np.asarray(th))[1, 1])

    d2 = (sqrtG(r + h) - 2 * sqrtG(r) + sqrtG(r - h)) / h**2
    K_brioschi = -float(d2) / float(sqrtG(r))
    K = gauss_curvature(m, ChartPoint(r, th))
    assert K == pytest.approx(K_brioschi, abs=1e-5 * max(1.0, abs(K)))
    rr = np.array([r])
    assert K == pytest.approx(-m.profile.d2f(rr)[0] / m.profile.f(rr)[0], abs=1e-8)


@pytest.mark.parametrize("name", ["conformal:stereographic", "conformal:capped-cylinder", "flat"])
@given(ab=coords)
def test_conformal_curvature_formula(name, ab):
    """K = -(Laplacian of log lambda) / lambda^2 by finite differences."""
    m = get_metric(name)
    u, v = _point(name, ab)
    if m.kink_at(u, v, atol=1e-3) is not None or math.hypot(u, v) < 1e-2:
        return
    h = 1e-4

    def loglam(x, y):
        return float(np.log(m.lam(np.asarray(x), np.asarray(y))))

    lap = (loglam(u + h, v) + loglam(u - h, v) + loglam(u, v + h) + loglam(u, v - h) - 4 * loglam(u, v)) / h**2
    lam = float(m.lam(np.asarray(u), np.asarray(v)))
    assert gauss_curvature(m, ChartPoint(u, v)) == pytest.approx(-lap / lam**2, abs=1e-4)


def test_registry_names():
    names = metric_names()
    for n in ("flat", "sphere", "hyperbolic", "remark-cone", "conformal:stereographic"):
        assert n in names
    with pytest.raises(KeyError):
        get_metric("nope")
