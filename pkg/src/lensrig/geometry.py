"""
Analytic metric families on two-dimensional charts.

Two families are supported:

``ConformalPlanar``
    ``g = lam(x, y)**2 * (dx**2 + dy**2)`` on a planar chart.
``SurfaceOfRevolution``
    ``g = dr**2 + f(r)**2 * dtheta**2`` with ``theta`` carried unwrapped.

Every metric comes from a closed-form registry with hand-coded derivatives,
so Christoffel symbols and Gaussian curvature are exact up to roundoff.
All evaluation methods are vectorised over arrays of chart points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ChartPoint",
    "TangentVec",
    "DomainError",
    "KinkError",
    "Metric",
    "ConformalPlanar",
    "SurfaceOfRevolution",
    "Profile",
    "ProfilePiece",
    "RadialFactor",
    "RadialPiece",
    "FlatFactor",
    "metric_norm",
    "christoffel",
    "gauss_curvature",
    "get_metric",
    "metric_names",
    "remark_profile",
]


class DomainError(ValueError):
    """Point lies outside the declared chart domain."""


class KinkError(ValueError):
    """Second derivative of the metric is undefined at the requested point."""


@dataclass(frozen=True)
class ChartPoint:
    u: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v], dtype=float)


@dataclass(frozen=True)
class TangentVec:
    base: ChartPoint
    du: float
    dv: float

    def as_array(self) -> np.ndarray:
        return np.array([self.du, self.dv], dtype=float)


# --------------------------------------------------------------------------
# Profiles for surfaces of revolution
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProfilePiece:
    """One closed-form piece ``f, f', f''`` valid on ``[lo, hi]``."""

    lo: float
    hi: float
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    d2f: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Profile:
    """Piecewise profile ``f(r) > 0`` with breakpoints between pieces.

    At a breakpoint the piece on the ``side`` of the point is used
    (``side=+1`` takes the piece to the right).
    """

    name: str
    pieces: tuple[ProfilePiece, ...]
    r_min: float
    r_max: float

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(p.hi for p in self.pieces[:-1])

    def _select(self, r: np.ndarray, side: int) -> list[np.ndarray]:
        masks = []
        edges = [p.hi for p in self.pieces[:-1]]
        if side >= 0:
            idx = np.searchsorted(edges, r, side="right")
        else:
            idx = np.searchsorted(edges, r, side="left")
        for k in range(len(self.pieces)):
            masks.append(idx == k)
        return masks

    def _eval(self, attr: str, r, side: int = 1) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if len(self.pieces) == 1:
            return np.asarray(getattr(self.pieces[0], attr)(r), dtype=float) * np.ones_like(r)
        out = np.zeros_like(r)
        for piece, mask in zip(self.pieces, self._select(r, side)):
            if np.any(mask):
                out[mask] = getattr(piece, attr)(r[mask])
        return out

    def f(self, r, side: int = 1) -> np.ndarray:
        return self._eval("f", r, side)

    def df(self, r, side: int = 1) -> np.ndarray:
        return self._eval("df", r, side)

    def d2f(self, r, side: int = 1) -> np.ndarray:
        return self._eval("d2f", r, side)

    def kink_at(self, r: float, atol: float = 1e-13) -> float | None:
        """Breakpoint within ``atol`` of ``r`` where ``f''`` jumps, if any."""
        for b in self.breakpoints:
            if abs(r - b) <= atol:
                left = float(self.d2f(np.array([b]), side=-1)[0])
                right = float(self.d2f(np.array([b]), side=1)[0])
                if abs(left - right) > 1e-12 * max(1.0, abs(left)):
                    return b
        return None


def _const(c: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda r: np.full_like(np.asarray(r, dtype=float), c)


# Free coefficients of the quintic blend for f' on [1/10, 1]; the remaining
# four are fixed by f'(1/10) = 1/3, f'(1) = cosh 1, f''(1) = sinh 1 and the
# integral condition. These two keep f' strictly increasing on the blend.
_REMARK_C4 = -39.6
_REMARK_C5 = 12.8
_REMARK_A = 0.1
_REMARK_B = 1.0


def _remark_blend_coefficients() -> np.ndarray:
    h = _REMARK_B - _REMARK_A
    c4, c5 = _REMARK_C4, _REMARK_C5
    lhs = np.array(
        [[1, 0, 0, 0], [1, 1, 1, 1], [1, 1 / 2, 1 / 3, 1 / 4], [0, 1, 2, 3]], dtype=float
    )
    rhs = np.array(
        [
            1.0 / 3.0,
            math.cosh(1.0) - c4 - c5,
            (math.sinh(1.0) - 1.0 / 30.0) / h - c4 / 5 - c5 / 6,
            math.sinh(1.0) * h - 4 * c4 - 5 * c5,
        ]
    )
    return np.r_[np.linalg.solve(lhs, rhs), c4, c5]


def remark_profile() -> Profile:
    """Profile ``f`` that is a flat cone of angle 2*pi/3 near 0 and hyperbolic past 1.

    ``f = r/3`` on ``r <= 1/10``, ``f = sinh r`` on ``r >= 1``; in between
    ``f'`` is a monotone quintic with ``f'' >= 0`` and ``f(1) = sinh 1``.
    """
    c = _remark_blend_coefficients()
    h = _REMARK_B - _REMARK_A
    # antiderivative coefficients of p(x) = sum c_k x^k, scaled by h
    ci = np.r_[0.0, c / np.arange(1, 7)] * h
    dc = c[1:] * np.arange(1, 6) / h

    def x_of(r):
        return (np.asarray(r, dtype=float) - _REMARK_A) / h

    def f_mid(r):
        return 1.0 / 30.0 + np.polynomial.polynomial.polyval(x_of(r), ci)

    def df_mid(r):
        return np.polynomial.polynomial.polyval(x_of(r), c)

    def d2f_mid(r):
        return np.polynomial.polynomial.polyval(x_of(r), dc)

    pieces = (
        ProfilePiece(0.0, _REMARK_A, lambda r: np.asarray(r) / 3.0, _const(1 / 3), _const(0.0)),
        ProfilePiece(_REMARK_A, _REMARK_B, f_mid, df_mid, d2f_mid),
        ProfilePiece(_REMARK_B, math.inf, np.sinh, np.cosh, np.sinh),
    )
    return Profile("remark-cone", pieces, 0.0, math.inf)


def _profile_registry() -> dict[str, Callable[..., Profile]]:
    def sphere():
        return Profile("sphere", (ProfilePiece(0.0, math.pi, np.sin, np.cos, lambda r: -np.sin(r)),), 0.0, math.pi)

    def hyperbolic():
        return Profile("hyperbolic", (ProfilePiece(0.0, math.inf, np.sinh, np.cosh, np.sinh),), 0.0, math.inf)

    def cylinder(radius: float = 1.0):
        return Profile(
            "cylinder", (ProfilePiece(-math.inf, math.inf, _const(radius), _const(0.0), _const(0.0)),),
            -math.inf, math.inf,
        )

    def flat_polar():
        return Profile("flat-polar", (ProfilePiece(0.0, math.inf, lambda r: np.asarray(r, float), _const(1.0), _const(0.0)),), 0.0, math.inf)

    return {
        "sphere": sphere,
        "hyperbolic": hyperbolic,
        "cylinder": cylinder,
        "flat-polar": flat_polar,
        "remark-cone": remark_profile,
    }


# --------------------------------------------------------------------------
# Conformal factors
# --------------------------------------------------------------------------

class FlatFactor:
    """``lam == scale`` everywhere."""

    radial = True
    kinks: tuple[float, ...] = ()

    def __init__(self, scale: float = 1.0):
        self.scale = float(scale)

    def lam(self, x, y):
        return np.full(np.broadcast(x, y).shape, self.scale)

    def grad(self, x, y):
        z = np.zeros(np.broadcast(x, y).shape)
        return z, z.copy()

    def hess(self, x, y):
        z = np.zeros(np.broadcast(x, y).shape)
        return z, z.copy(), z.copy()

    def radius_kink(self, x, y, atol=1e-13):
        return None


@dataclass(frozen=True)
class RadialPiece:
    """Radial factor piece on ``lo <= R <= hi``.

    ``d1r`` is ``lam'(R)/R`` and ``q`` is ``(lam'' - lam'/R)/R**2``; both stay
    finite at ``R = 0`` for smooth radial functions.
    """

    lo: float
    hi: float
    lam: Callable[[np.ndarray], np.ndarray]
    d1r: Callable[[np.ndarray], np.ndarray]
    q: Callable[[np.ndarray], np.ndarray]


class RadialFactor:
    """Piecewise radial conformal factor ``lam(R)``, ``R = sqrt(x**2 + y**2)``."""

    radial = True

    def __init__(self, pieces: Sequence[RadialPiece]):
        self.pieces = tuple(pieces)
        self.kinks = tuple(p.hi for p in self.pieces[:-1])

    def _eval(self, attr, R, side=1):
        R = np.asarray(R, dtype=float)
        if len(self.pieces) == 1:
            return getattr(self.pieces[0], attr)(R) * np.ones_like(R)
        edges = list(self.kinks)
        idx = np.searchsorted(edges, R, side="right" if side >= 0 else "left")
        out = np.zeros_like(R)
        for k, piece in enumerate(self.pieces):
            m = idx == k
            if np.any(m):
                out[m] = getattr(piece, attr)(R[m])
        return out

    def lam(self, x, y, side=1):
        return self._eval("lam", np.hypot(x, y), side)

    def grad(self, x, y, side=1):
        d = self._eval("d1r", np.hypot(x, y), side)
        return d * x, d * y

    def hess(self, x, y, side=1):
        R = np.hypot(x, y)
        d = self._eval("d1r", R, side)
        q = self._eval("q", R, side)
        return q * x * x + d, q * x * y, q * y * y + d

    def radius_kink(self, x, y, atol=1e-13):
        R = math.hypot(x, y)
        for k in self.kinks:
            if abs(R - k) <= atol:
                return k
        return None


def stereographic_piece(A: float = 1.0, lo: float = 0.0, hi: float = math.inf) -> RadialPiece:
    """Unit sphere in scaled stereographic coordinates, ``lam = 2A/(1 + A^2 R^2)``."""

    def lam(R):
        return 2 * A / (1 + (A * R) ** 2)

    def d1r(R):
        return -4 * A**3 / (1 + (A * R) ** 2) ** 2

    def q(R):
        return 16 * A**5 / (1 + (A * R) ** 2) ** 3

    return RadialPiece(lo, hi, lam, d1r, q)


def log_polar_piece(lo: float, hi: float) -> RadialPiece:
    """Flat unit cylinder in log-polar form, ``lam = 1/R``."""
    return RadialPiece(lo, hi, lambda R: 1 / R, lambda R: -1 / R**3, lambda R: 3 / R**5)


def flare_piece(c0: float, lo: float, hi: float) -> RadialPiece:
    """Profile ``cosh`` flare in conformal form, ``lam = sec(c0 + ln R)/R``."""

    def lam(R):
        return 1 / (np.cos(c0 + np.log(R)) * R)

    def d1r(R):
        u = c0 + np.log(R)
        return (np.tan(u) - 1) / (np.cos(u) * R**3)

    def q(R):
        t = np.tan(c0 + np.log(R))
        return (2 * t * t - 4 * t + 4) / (np.cos(c0 + np.log(R)) * R**5)

    return RadialPiece(lo, hi, lam, d1r, q)


def capped_cylinder_factor(flare: float = 0.0, height: float = 2.0) -> RadialFactor:
    """Conformal factor of ``cosh`` flare + unit cylinder + unit hemisphere.

    The bottom of the flare is the circle ``R = 1``; the cylinder occupies
    ``R_top <= R <= R_flare`` and the hemisphere ``R <= R_top`` with its
    pole at the origin. ``flare = 0`` drops the flare.
    """
    c0 = 2 * math.atan(math.tanh(flare / 2))  # Gudermannian of the flare length
    r_flare = math.exp(-c0)
    r_top = math.exp(-c0 - height)
    pieces = [stereographic_piece(1 / r_top, 0.0, r_top), log_polar_piece(r_top, r_flare)]
    if flare > 0:
        pieces.append(flare_piece(c0, r_flare, math.inf))
    else:
        pieces[-1] = log_polar_piece(r_top, math.inf)
    return RadialFactor(pieces)


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

class Metric:
    """Common interface; subclasses implement the vectorised kernels."""

    family: str = ""
    name: str = ""
    rotational: bool = False
    flat_chart: bool = False

    def contains(self, u, v) -> np.ndarray:
        raise NotImplementedError

    def check_point(self, u: float, v: float) -> None:
        if not bool(np.all(self.contains(np.asarray(u, float), np.asarray(v, float)))):
            raise DomainError(f"point ({u}, {v}) outside chart domain of metric {self.name!r}")

    def tensor(self, u, v):
        raise NotImplementedError

    def inner(self, u, v, a, b):
        """``g(a, b)`` with ``a``, ``b`` of shape ``(..., 2)``."""
        g = self.tensor(u, v)
        return (
            g[..., 0, 0] * a[..., 0] * b[..., 0]
            + g[..., 0, 1] * (a[..., 0] * b[..., 1] + a[..., 1] * b[..., 0])
            + g[..., 1, 1] * a[..., 1] * b[..., 1]
        )

    def norm(self, u, v, a):
        return np.sqrt(self.inner(u, v, a, a))

    def rotate(self, u, v, a):
        """Rotate by +90 degrees in the metric, in the chart orientation."""
        g = self.tensor(u, v)
        sq = np.sqrt(g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] ** 2)
        out = np.empty(np.shape(a))
        out[..., 0] = -(g[..., 0, 1] * a[..., 0] + g[..., 1, 1] * a[..., 1]) / sq
        out[..., 1] = (g[..., 0, 0] * a[..., 0] + g[..., 0, 1] * a[..., 1]) / sq
        return out

    def christoffel(self, u, v, side: int = 1):
        raise NotImplementedError

    def curvature(self, u, v, side: int = 1):
        raise NotImplementedError

    def acceleration(self, u, v, du, dv):
        """Right-hand side of the geodesic equation, ``-Gamma(x', x')``."""
        G = self.christoffel(u, v)
        a0 = -(G[..., 0, 0, 0] * du * du + 2 * G[..., 0, 0, 1] * du * dv + G[..., 0, 1, 1] * dv * dv)
        a1 = -(G[..., 1, 0, 0] * du * du + 2 * G[..., 1, 0, 1] * du * dv + G[..., 1, 1, 1] * dv * dv)
        return a0, a1

    def clairaut(self, u, v, du, dv):
        """Angular momentum about the symmetry axis (rotational metrics only)."""
        raise NotImplementedError(f"metric {self.name!r} has no rotational symmetry")

    def kink_at(self, u: float, v: float, atol: float = 1e-13):
        return None

    @property
    def kink_radii(self) -> tuple[float, ...]:
        """Values of :meth:`kink_coordinate` where the metric's derivatives jump."""
        return ()

    def kink_coordinate(self, u, v):
        """Coordinate whose level sets carry the kinks, and its chart gradient."""
        raise NotImplementedError

    def describe(self) -> dict:
        return {"name": self.name, "params": dict(getattr(self, "params", {}))}


class ConformalPlanar(Metric):
    """``g = lam**2 (dx**2 + dy**2)``; ``domain_radius`` bounds ``|(x, y)|``."""

    family = "ConformalPlanar"

    def __init__(self, name: str, factor, domain_radius: float = math.inf, params: dict | None = None):
        self.name = name
        self.factor = factor
        self.domain_radius = float(domain_radius)
        self.rotational = bool(getattr(factor, "radial", False))
        self.flat_chart = isinstance(factor, FlatFactor)
        self.params = dict(params or {})

    def contains(self, u, v):
        return np.hypot(u, v) <= self.domain_radius

    def lam(self, u, v, side: int = 1):
        if isinstance(self.factor, FlatFactor):
            return self.factor.lam(u, v)
        return self.factor.lam(u, v, side)

    def tensor(self, u, v):
        lam = self.lam(u, v)
        g = np.zeros(np.shape(lam) + (2, 2))
        g[..., 0, 0] = lam * lam
        g[..., 1, 1] = lam * lam
        return g

    def inner(self, u, v, a, b):
        lam = self.lam(u, v)
        return lam * lam * (a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1])

    def rotate(self, u, v, a):
        out = np.empty(np.shape(a))
        out[..., 0] = -a[..., 1]
        out[..., 1] = a[..., 0]
        return out

    def _log_grad(self, u, v, side=1):
        lam = self.lam(u, v, side)
        if isinstance(self.factor, FlatFactor):
            lx, ly = self.factor.grad(u, v)
        else:
            lx, ly = self.factor.grad(u, v, side)
        return lx / lam, ly / lam

    def christoffel(self, u, v, side: int = 1):
        px, py = self._log_grad(np.asarray(u, float), np.asarray(v, float), side)
        G = np.zeros(np.shape(px) + (2, 2, 2))
        G[..., 0, 0, 0] = px
        G[..., 0, 0, 1] = G[..., 0, 1, 0] = py
        G[..., 0, 1, 1] = -px
        G[..., 1, 0, 0] = -py
        G[..., 1, 0, 1] = G[..., 1, 1, 0] = px
        G[..., 1, 1, 1] = py
        return G

    def acceleration(self, u, v, du, dv):
        if self.flat_chart:
            return np.zeros_like(du), np.zeros_like(dv)
        px, py = self._log_grad(u, v)
        s = 2 * (px * du + py * dv)
        w2 = du * du + dv * dv
        return -s * du + px * w2, -s * dv + py * w2

    def curvature(self, u, v, side: int = 1):
        u = np.asarray(u, float)
        v = np.asarray(v, float)
        if isinstance(self.factor, FlatFactor):
            return np.zeros(np.broadcast(u, v).shape)
        lam = self.factor.lam(u, v, side)
        lx, ly = self.factor.grad(u, v, side)
        hxx, _, hyy = self.factor.hess(u, v, side)
        # K = -Laplacian(log lam) / lam^2
        return -(lam * (hxx + hyy) - (lx * lx + ly * ly)) / lam**4

    def clairaut(self, u, v, du, dv):
        if not self.rotational:
            return super().clairaut(u, v, du, dv)
        lam = self.lam(u, v)
        return lam * lam * (u * dv - v * du)

    def kink_at(self, u, v, atol=1e-13):
        return self.factor.radius_kink(u, v, atol) if hasattr(self.factor, "radius_kink") else None

    @property
    def kink_radii(self):
        return tuple(getattr(self.factor, "kinks", ()))

    def kink_coordinate(self, u, v):
        R = np.hypot(u, v)
        with np.errstate(invalid="ignore", divide="ignore"):
            return R, (np.where(R > 0, u / R, 1.0), np.where(R > 0, v / R, 0.0))


class SurfaceOfRevolution(Metric):
    """``g = dr**2 + f(r)**2 dtheta**2`` on ``r_min <= r <= r_max``; ``theta`` unwrapped."""

    family = "SurfaceOfRevolution"
    rotational = True

    def __init__(self, name: str, profile: Profile, r_min: float | None = None,
                 r_max: float | None = None, params: dict | None = None):
        self.name = name
        self.profile = profile
        self.r_min = profile.r_min if r_min is None else float(r_min)
        self.r_max = profile.r_max if r_max is None else float(r_max)
        self.params = dict(params or {})

    def contains(self, u, v):
        u = np.asarray(u, float)
        ok = (u >= self.r_min) & (u <= self.r_max) & np.isfinite(v)
        with np.errstate(invalid="ignore"):
            ok &= self.profile.f(u) > 0
        return ok

    def tensor(self, u, v):
        f = self.profile.f(u)
        g = np.zeros(np.shape(f) + (2, 2))
        g[..., 0, 0] = 1.0
        g[..., 1, 1] = f * f
        return g

    def inner(self, u, v, a, b):
        f = self.profile.f(u)
        return a[..., 0] * b[..., 0] + f * f * a[..., 1] * b[..., 1]

    def rotate(self, u, v, a):
        f = self.profile.f(u)
        out = np.empty(np.shape(a))
        out[..., 0] = -f * a[..., 1]
        out[..., 1] = a[..., 0] / f
        return out

    def christoffel(self, u, v, side: int = 1):
        u = np.asarray(u, float)
        f = self.profile.f(u, side)
        df = self.profile.df(u, side)
        G = np.zeros(np.shape(f) + (2, 2, 2))
        G[..., 0, 1, 1] = -f * df
        G[..., 1, 0, 1] = G[..., 1, 1, 0] = df / f
        return G

    def acceleration(self, u, v, du, dv):
        f = self.profile.f(u)
        df = self.profile.df(u)
        return f * df * dv * dv, -2 * (df / f) * du * dv

    def curvature(self, u, v, side: int = 1):
        u = np.asarray(u, float)
        return -self.profile.d2f(u, side) / self.profile.f(u, side)

    def clairaut(self, u, v, du, dv):
        f = self.profile.f(u)
        return f * f * dv

    def kink_at(self, u, v, atol=1e-13):
        return self.profile.kink_at(u, atol)

    @property
    def kink_radii(self):
        return tuple(self.profile.breakpoints)

    def kink_coordinate(self, u, v):
        u = np.asarray(u, float)
        return u, (np.ones_like(u), np.zeros_like(u))


# --------------------------------------------------------------------------
# Registry
# --------------------------------------------------------------------------

def _conformal_registry() -> dict[str, Callable[..., ConformalPlanar]]:
    def stereographic(**params):
        return ConformalPlanar("conformal:stereographic", RadialFactor([stereographic_piece(1.0)]), params=params)

    def capped(flare: float = 0.0, height: float = 2.0):
        fac = capped_cylinder_factor(flare, height)
        limit = 1.5 if flare > 0 else math.inf
        return ConformalPlanar("conformal:capped-cylinder", fac, domain_radius=limit,
                               params={"flare": flare, "height": height})

    return {"conformal:stereographic": stereographic, "conformal:capped-cylinder": capped}


def metric_names() -> list[str]:
    return sorted(["flat", *_profile_registry(), *_conformal_registry()])


def get_metric(name: str, **params) -> Metric:
    """Build a registered metric by name.

    Revolution names accept ``r_min``/``r_max`` to restrict the chart;
    ``cylinder`` also takes ``radius``.
    """
    if name == "flat":
        return ConformalPlanar("flat", FlatFactor(1.0), params=params)
    profiles = _profile_registry()
    if name in profiles:
        p = dict(params)
        r_min = p.pop("r_min", None)
        r_max = p.pop("r_max", None)
        return SurfaceOfRevolution(name, profiles[name](**p), r_min, r_max, params=params)
    conformal = _conformal_registry()
    if name in conformal:
        return conformal[name](**params)
    raise KeyError(f"unknown metric {name!r}; known: {', '.join(metric_names())}")


# --------------------------------------------------------------------------
# Point-wise operations
# --------------------------------------------------------------------------

def metric_norm(m: Metric, w: TangentVec) -> float:
    """Riemannian length of ``w``."""
    m.check_point(w.base.u, w.base.v)
    p = w.base.as_array()
    return float(m.norm(p[0], p[1], w.as_array()))


def christoffel(m: Metric, p: ChartPoint, side: int | None = None) -> np.ndarray:
    """Christoffel symbols ``G[k, i, j]`` at ``p``.

    At a profile kink the symbols are one-sided; ``side`` picks the side
    (default right).
    """
    m.check_point(p.u, p.v)
    return m.christoffel(np.asarray(p.u), np.asarray(p.v), 1 if side is None else side)


def gauss_curvature(m: Metric, p: ChartPoint, side: int | None = None) -> float:
    """Gaussian curvature at ``p``; raises :class:`KinkError` at a kink unless ``side`` is given."""
    m.check_point(p.u, p.v)
    if side is None:
        kink = m.kink_at(p.u, p.v)
        if kink is not None:
            raise KinkError(f"curvature of {m.name!r} jumps at chart radius {kink!r}; pass side=+1 or -1")
        side = 1
    return float(m.curvature(np.asarray(p.u), np.asarray(p.v), side))
