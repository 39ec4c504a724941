"""
Scenes: a metric together with closed boundary curves and an optional gluing rule.

Boundary curves are closed chart curves ``c(phi)``, ``phi in [0, 2 pi)``, given
in closed form and reparameterised by metric arclength ``s in [0, L)``.
The tangent ``T`` is oriented so that the inward unit normal is
``nu = J T`` (rotation by +90 degrees in the chart orientation). Inward unit
vectors are written ``X = cos(theta) T + sin(theta) nu`` with
``theta in (0, pi)``; outgoing vectors as ``cos(theta) T - sin(theta) nu``.

Geodesic curvature is ``k_g = g(D_T T, nu)``, positive on strictly convex
boundary (a round disk has ``k_g = 1/radius``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from .geometry import ChartPoint, Metric, TangentVec

__all__ = [
    "Circle",
    "RLevel",
    "Peanut",
    "BoundaryCurve",
    "AntipodalGluing",
    "Scene",
    "Arc",
    "BoundaryClassification",
    "ClassificationError",
    "boundary_frame",
    "classify_boundary",
    "lift_unit_tangent",
    "S_PLUS",
    "S_MINUS",
    "S_ZERO",
]

TWO_PI = 2 * math.pi
S_PLUS, S_MINUS, S_ZERO = "S+", "S-", "S0"

# Gauss-Legendre rule used for boundary arclength
_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


class ClassificationError(ValueError):
    """Switch set not finite at the sampling resolution."""


# --------------------------------------------------------------------------
# Closed-form chart curves
# --------------------------------------------------------------------------

class Circle:
    """Chart circle; counterclockwise when the interior is inside, clockwise otherwise."""

    kind = "circle"

    def __init__(self, center=(0.0, 0.0), radius: float = 1.0, interior: str = "inside"):
        if interior not in ("inside", "outside"):
            raise ValueError("interior must be 'inside' or 'outside'")
        self.center = (float(center[0]), float(center[1]))
        self.radius = float(radius)
        self.interior = interior
        self.sigma = 1.0 if interior == "inside" else -1.0

    def point(self, phi):
        a = self.sigma * np.asarray(phi, float)
        return np.stack([self.center[0] + self.radius * np.cos(a), self.center[1] + self.radius * np.sin(a)], -1)

    def d1(self, phi):
        a = self.sigma * np.asarray(phi, float)
        return self.sigma * self.radius * np.stack([-np.sin(a), np.cos(a)], -1)

    def d2(self, phi):
        a = self.sigma * np.asarray(phi, float)
        return -self.radius * np.stack([np.cos(a), np.sin(a)], -1)

    def level(self, u, v):
        d2 = (u - self.center[0]) ** 2 + (v - self.center[1]) ** 2
        return self.sigma * (self.radius**2 - d2) / (2 * self.radius)

    def level_grad(self, u, v):
        return -self.sigma * (u - self.center[0]) / self.radius, -self.sigma * (v - self.center[1]) / self.radius

    def phi_of(self, u, v):
        return (self.sigma * np.arctan2(v - self.center[1], u - self.center[0])) % TWO_PI

    def rotational_about_origin(self) -> bool:
        return self.center == (0.0, 0.0)

    def describe(self) -> dict:
        return {"shape": "circle", "params": {"center": list(self.center), "radius": self.radius, "interior": self.interior}}


class RLevel:
    """Level circle ``r = r0`` of a surface of revolution.

    ``interior='above'`` means the domain is ``r > r0``; the curve then runs
    in decreasing ``theta`` so the chart orientation puts the interior on the left.
    """

    kind = "r-level"

    def __init__(self, r0: float, interior: str = "above"):
        if interior not in ("above", "below"):
            raise ValueError("interior must be 'above' or 'below'")
        self.r0 = float(r0)
        self.interior = interior
        self.sigma = -1.0 if interior == "above" else 1.0

    def point(self, phi):
        phi = np.asarray(phi, float)
        return np.stack([np.full_like(phi, self.r0), self.sigma * phi], -1)

    def d1(self, phi):
        phi = np.asarray(phi, float)
        return np.stack([np.zeros_like(phi), np.full_like(phi, self.sigma)], -1)

    def d2(self, phi):
        phi = np.asarray(phi, float)
        return np.zeros(phi.shape + (2,))

    def level(self, u, v):
        return (u - self.r0) if self.interior == "above" else (self.r0 - u)

    def level_grad(self, u, v):
        one = np.ones_like(np.asarray(u, float))
        return (one if self.interior == "above" else -one), np.zeros_like(one)

    def phi_of(self, u, v):
        return (self.sigma * np.asarray(v, float)) % TWO_PI

    def rotational_about_origin(self) -> bool:
        return True

    def describe(self) -> dict:
        return {"shape": "r-level", "params": {"r0": self.r0, "interior": self.interior}}


class Peanut:
    """Star-shaped curve ``rho(phi) = scale (1 + a cos 2 phi)``, interior inside.

    For ``a > 1/5`` the two waists are strictly concave and the curvature
    changes sign at four points.
    """

    kind = "peanut"

    def __init__(self, a: float = 0.3, scale: float = 1.0):
        self.a = float(a)
        self.scale = float(scale)

    def _rho(self, phi):
        return self.scale * (1 + self.a * np.cos(2 * phi)), -2 * self.scale * self.a * np.sin(2 * phi), -4 * self.scale * self.a * np.cos(2 * phi)

    def point(self, phi):
        phi = np.asarray(phi, float)
        r, _, _ = self._rho(phi)
        return np.stack([r * np.cos(phi), r * np.sin(phi)], -1)

    def d1(self, phi):
        phi = np.asarray(phi, float)
        r, dr, _ = self._rho(phi)
        c, s = np.cos(phi), np.sin(phi)
        return np.stack([dr * c - r * s, dr * s + r * c], -1)

    def d2(self, phi):
        phi = np.asarray(phi, float)
        r, dr, d2r = self._rho(phi)
        c, s = np.cos(phi), np.sin(phi)
        return np.stack([d2r * c - 2 * dr * s - r * c, d2r * s + 2 * dr * c - r * s], -1)

    def level(self, u, v):
        r, _, _ = self._rho(np.arctan2(v, u))
        return r - np.hypot(u, v)

    def level_grad(self, u, v):
        _, dr, _ = self._rho(np.arctan2(v, u))
        R2 = u * u + v * v
        R = np.sqrt(R2)
        return -dr * v / R2 - u / R, dr * u / R2 - v / R

    def phi_of(self, u, v):
        return np.arctan2(v, u) % TWO_PI

    def rotational_about_origin(self) -> bool:
        return False

    def describe(self) -> dict:
        return {"shape": "peanut", "params": {"a": self.a, "scale": self.scale}}


SHAPES = {"circle": Circle, "r-level": RLevel, "peanut": Peanut}


# --------------------------------------------------------------------------
# Boundary curves with metric arclength
# --------------------------------------------------------------------------

class BoundaryCurve:
    """A closed chart curve measured in the scene metric."""

    def __init__(self, metric: Metric, shape, n_panels: int = 256):
        self.metric = metric
        self.shape = shape
        self._uniform = False
        sp = self.speed(np.linspace(0, TWO_PI, 64, endpoint=False))
        if np.ptp(sp) <= 1e-14 * sp.max():
            self._uniform = True
            self._speed0 = float(sp[0])
            self.length = TWO_PI * self._speed0
        else:
            self._edges = np.linspace(0.0, TWO_PI, n_panels + 1)
            parts = np.array([self._panel_integral(a, b) for a, b in zip(self._edges[:-1], self._edges[1:])])
            self._cum = np.r_[0.0, np.cumsum(parts)]
            self.length = float(self._cum[-1])
        self._check_orientation()

    def speed(self, phi):
        p = self.shape.point(phi)
        return self.metric.norm(p[..., 0], p[..., 1], self.shape.d1(phi))

    def _panel_integral(self, a: float, b: float) -> float:
        x = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
        return float(0.5 * (b - a) * np.dot(_GL_W, self.speed(x)))

    def s_of_phi(self, phi: float) -> float:
        phi = float(phi) % TWO_PI
        if self._uniform:
            return self._speed0 * phi
        k = min(int(np.searchsorted(self._edges, phi, side="right")) - 1, len(self._edges) - 2)
        return float(self._cum[k] + self._panel_integral(self._edges[k], phi))

    def phi_of_s(self, s: float) -> float:
        s = float(s) % self.length
        if self._uniform:
            return s / self._speed0
        k = min(int(np.searchsorted(self._cum, s, side="right")) - 1, len(self._edges) - 2)
        a, b = self._edges[k], self._edges[k + 1]
        phi = a + (b - a) * (s - self._cum[k]) / (self._cum[k + 1] - self._cum[k])
        for _ in range(8):
            step = (self._cum[k] + self._panel_integral(a, phi) - s) / float(self.speed(phi))
            phi -= step
            if abs(step) < 1e-15:
                break
        return phi

    def s_of_point(self, u: float, v: float) -> float:
        return self.s_of_phi(float(self.shape.phi_of(np.asarray(u), np.asarray(v))))

    def phis_of_s(self, s) -> np.ndarray:
        s = np.asarray(s, float)
        if self._uniform:
            return (s % self.length) / self._speed0
        return np.array([self.phi_of_s(x) for x in s.ravel()]).reshape(s.shape)

    def frames_phi(self, phi):
        """Point, unit tangent, inward normal and ``k_g`` at chart parameters ``phi``."""
        phi = np.asarray(phi, float)
        p = self.shape.point(phi)
        d1 = self.shape.d1(phi)
        d2 = self.shape.d2(phi)
        u, v = p[..., 0], p[..., 1]
        sp = self.metric.norm(u, v, d1)
        T = d1 / sp[..., None]
        nu = self.metric.rotate(u, v, T)
        a0, a1 = self.metric.acceleration(u, v, d1[..., 0], d1[..., 1])
        cov = np.stack([d2[..., 0] - a0, d2[..., 1] - a1], -1)
        kg = self.metric.inner(u, v, cov, nu) / sp**2
        return p, T, nu, kg

    def frames(self, s):
        return self.frames_phi(self.phis_of_s(s))

    def frame(self, s: float):
        p, T, nu, kg = self.frames_phi(np.array([self.phi_of_s(s)]))
        return p[0], T[0], nu[0], float(kg[0])

    def level(self, u, v):
        return self.shape.level(u, v)

    def _check_orientation(self) -> None:
        phi = np.linspace(0, TWO_PI, 16, endpoint=False)
        p, T, nu, _ = self.frames_phi(phi)
        gx, gy = self.shape.level_grad(p[..., 0], p[..., 1])
        if np.any(gx * nu[..., 0] + gy * nu[..., 1] <= 0):
            raise ValueError(f"boundary {self.shape.describe()} is not positively oriented w.r.t. its interior")

    def describe(self) -> dict:
        return self.shape.describe()


@dataclass(frozen=True)
class AntipodalGluing:
    """Identify ``s`` with ``s + L/2`` on one boundary circle."""

    boundary: int
    length: float

    def apply(self, s: float, theta: float) -> tuple[float, float]:
        return (s + 0.5 * self.length) % self.length, theta


# --------------------------------------------------------------------------
# Classification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Arc:
    boundary: int
    s_start: float
    s_end: float  # may exceed the boundary length when the arc wraps
    cls: str


@dataclass
class BoundaryClassification:
    arcs: list[Arc]
    switch_points: list[tuple[int, float]]
    lengths: list[float]
    finite: bool = True
    step: float = 0.0

    def class_at(self, boundary: int, s: float, tol: float = 1e-9) -> str:
        L = self.lengths[boundary]
        s = s % L
        for b, sp in self.switch_points:
            if b == boundary:
                d = abs(s - sp) % L
                if min(d, L - d) <= tol:
                    return "switch"
        for arc in self.arcs:
            if arc.boundary != boundary:
                continue
            a = arc.s_start % L
            span = arc.s_end - arc.s_start
            if span >= L - tol or (s - a) % L <= span:
                return arc.cls
        return "switch"

    def counts(self, boundary: int | None = None) -> dict[str, int]:
        out = {S_PLUS: 0, S_MINUS: 0, S_ZERO: 0}
        for arc in self.arcs:
            if boundary is None or arc.boundary == boundary:
                out[arc.cls] += 1
        return out

    def to_json(self) -> dict:
        return {
            "arcs": [{"boundary": a.boundary, "s_start": a.s_start, "s_end": a.s_end, "class": a.cls} for a in self.arcs],
            "switch_points": [{"boundary": b, "s": s} for b, s in self.switch_points],
            "finite": self.finite,
        }


def _cyclic_runs(cls: np.ndarray) -> list[list[int]]:
    """Maximal runs ``[class, first, count]`` of a cyclic label array."""
    n = len(cls)
    first = int(np.nonzero(cls != np.roll(cls, 1))[0][0])
    runs = []
    j = 0
    while j < n:
        k = j
        while k + 1 < n and cls[(first + k + 1) % n] == cls[(first + j) % n]:
            k += 1
        runs.append([int(cls[(first + j) % n]), (first + j) % n, k - j + 1])
        j = k + 1
    return runs


def _merge_runs(runs: list[list[int]]) -> list[list[int]]:
    # single zero samples between nonzero runs are a crossing, not an S0 arc
    keep = []
    m = len(runs)
    for k, r in enumerate(runs):
        if r[0] == 0 and r[2] == 1 and m > 2 and runs[k - 1][0] != 0 and runs[(k + 1) % m][0] != 0:
            continue
        keep.append(list(r))
    out = []
    for r in keep:
        if out and out[-1][0] == r[0]:
            out[-1][2] += r[2] + 1
        else:
            out.append(r)
    if len(out) > 1 and out[0][0] == out[-1][0]:
        out[-1][2] += out[0][2]
        out.pop(0)
    return out


def _classify_one(curve: BoundaryCurve, idx: int, tol_kg: float, n: int, max_switch: int):
    L = curve.length
    h = L / n
    s = np.arange(n) * h
    _, _, _, kg = curve.frames(s)
    cls = np.where(kg > tol_kg, 1, np.where(kg < -tol_kg, -1, 0))
    names = {1: S_PLUS, -1: S_MINUS, 0: S_ZERO}
    if np.all(cls == cls[0]):
        return [Arc(idx, 0.0, L, names[int(cls[0])])], []
    runs = _merge_runs(_cyclic_runs(cls))
    if len(runs) == 1:
        return [Arc(idx, 0.0, L, names[runs[0][0]])], []
    if len(runs) > max_switch:
        raise ClassificationError(
            f"F_M not finite at resolution: more than {max_switch} switch points on boundary {idx}")

    def kg_at(x):
        return curve.frame(x % L)[3]

    cuts = []
    for a, b in zip(runs, runs[1:] + runs[:1]):
        lo = s[b[1]] - h
        hi = s[b[1]]
        if a[0] != 0 and b[0] != 0:
            lo = s[b[1]] - 2 * h if cls[(b[1] - 1) % n] == 0 else lo
            f = kg_at
        else:
            f = lambda x: abs(kg_at(x)) - tol_kg
        try:
            x = brentq(f, lo, hi, xtol=1e-14, rtol=1e-15)
        except ValueError:
            x = 0.5 * (lo + hi)
        cuts.append(x % L)
    arcs = []
    for k, run in enumerate(runs):
        lo, hi = cuts[k - 1], cuts[k]
        if hi <= lo:
            hi += L
        arcs.append(Arc(idx, lo, hi, names[run[0]]))
    return arcs, sorted((idx, c) for c in cuts)


def classify_boundary(scene: "Scene", tol_kg: float = 1e-9, n_samples: int = 2048,
                      max_switch: int = 64) -> BoundaryClassification:
    """Partition every boundary into S+/S-/S0 arcs and switch points.

    Sign changes of ``k_g`` and the ends of maximal ``|k_g| <= tol_kg``
    runs are refined by root finding.
    """
    arcs, switches = [], []
    for i, curve in enumerate(scene.boundaries):
        if scene.gluing is not None and scene.gluing.boundary == i:
            continue
        a, sw = _classify_one(curve, i, tol_kg, n_samples, max_switch)
        arcs += a
        switches += sw
    return BoundaryClassification(arcs, switches, [c.length for c in scene.boundaries], True,
                                  min(c.length for c in scene.boundaries) / n_samples)


# --------------------------------------------------------------------------
# Scenes
# --------------------------------------------------------------------------

@dataclass
class Scene:
    """A metric with boundary curves; immutable after construction."""

    name: str
    metric: Metric
    boundaries: list[BoundaryCurve]
    gluing: AntipodalGluing | None = None
    diameter: float | None = None
    spec: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.diameter is None:
            self.diameter = max(c.length for c in self.boundaries) / 2

    @cached_property
    def classification(self) -> BoundaryClassification:
        return classify_boundary(self)

    @property
    def open_boundaries(self) -> list[int]:
        return [i for i in range(len(self.boundaries)) if self.gluing is None or self.gluing.boundary != i]

    def level(self, u, v) -> np.ndarray:
        """Minimum of the boundary level functions (positive inside)."""
        return np.min(np.stack([c.level(u, v) for c in self.boundaries]), axis=0)


def boundary_frame(scene: Scene, boundary_idx: int, s: float):
    """Foot point, unit tangent, inward unit normal and ``k_g`` at arclength ``s``."""
    curve = scene.boundaries[boundary_idx]
    p, T, nu, kg = curve.frame(s % curve.length)
    base = ChartPoint(float(p[0]), float(p[1]))
    return base, TangentVec(base, float(T[0]), float(T[1])), TangentVec(base, float(nu[0]), float(nu[1])), kg


def lift_unit_tangent(scene: Scene, boundary_idx: int, s: float, theta: float) -> TangentVec:
    """Inward unit vector ``cos(theta) T + sin(theta) nu`` at ``s``."""
    if not 0.0 < theta < math.pi:
        raise ValueError(f"theta={theta!r} outside (0, pi)")
    base, T, nu, _ = boundary_frame(scene, boundary_idx, s)
    c, sn = math.cos(theta), math.sin(theta)
    return TangentVec(base, c * T.du + sn * nu.du, c * T.dv + sn * nu.dv)
