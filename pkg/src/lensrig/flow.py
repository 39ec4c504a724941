"""
Geodesic flow on scenes.

Geodesics are integrated at unit speed with an embedded Runge-Kutta 8(5,3)
pair (Dormand-Prince coefficients) that is vectorised over a batch of
independent trajectories. Each trajectory keeps its own step size, so the
result for one start does not depend on which other starts share its
batch. Boundary crossings are found on the chart level function of every
boundary: a cubic Hermite interpolant brackets the first sign change, and
safeguarded Newton iterations on exact partial steps pin it down.

At a crossing the exit angle ``theta'`` is measured against the boundary
frame with the outgoing convention ``v = cos(theta') T - sin(theta') nu``.
Nearly tangential crossings terminate on strictly convex arcs and are
recorded as grazes elsewhere. Crossing a glued boundary teleports the
state to the antipodal foot point with the same angle.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop
from scipy.optimize import minimize_scalar

from .domain import S_PLUS, Scene
from .geometry import ChartPoint, DomainError, TangentVec

__all__ = [
    "IntegratorCfg",
    "Event",
    "GeodesicRecord",
    "JacobiRecord",
    "ScatterGrid",
    "ScatteringTable",
    "StepUnderflow",
    "trace",
    "trace_batch",
    "scattering_map",
    "jacobi",
    "certify_no_conjugate_points",
    "exp_points",
    "self_intersections",
    "boundary_start_state",
]

_NS = _dop.N_STAGES
_A = _dop.A[:_NS, :_NS]
_B = _dop.B
_C = _dop.C[:_NS]
_E3 = _dop.E3
_E5 = _dop.E5
_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_EXPONENT = -1.0 / 8.0
_FRACTIONS = np.linspace(0.0, 1.0, 9)
_ARM_EPS = 1e-12


class StepUnderflow(RuntimeError):
    """The adaptive step collapsed; usually a metric kink or a chart edge."""


@dataclass(frozen=True)
class IntegratorCfg:
    """Integrator settings.

    ``max_length`` defaults to 100 times the scene diameter and ``h_max``
    to an eighth of it.
    """

    rtol: float = 1e-9
    atol: float = 1e-11
    event_tol: float = 1e-10
    tangency_tol: float = 1e-7
    max_length: float | None = None
    h_max: float | None = None
    theta_margin: float = 0.05
    max_steps: int = 200_000
    workers: int = 1
    chunk: int = 1024
    record_samples: bool = True

    def __post_init__(self):
        for name in ("rtol", "atol", "event_tol", "tangency_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_length is not None and not self.max_length > 0:
            raise ValueError("max_length must be positive")

    def resolved(self, scene: Scene) -> "IntegratorCfg":
        d = float(scene.diameter)
        return replace(
            self,
            max_length=self.max_length if self.max_length is not None else 100.0 * d,
            h_max=self.h_max if self.h_max is not None else d / 8.0,
        )


@dataclass(frozen=True)
class Event:
    """One entry of a geodesic's event log.

    ``kind`` is one of ``entry``, ``exit``, ``tangency``, ``gluing-jump`` or
    ``conjugate``; tangencies carry ``detail`` in ``{graze, switch-tangent}``
    and ``terminal=True`` when they ended the geodesic.
    """

    kind: str
    t: float
    boundary: int | None = None
    s: float | None = None
    theta: float | None = None
    detail: str | None = None
    terminal: bool = False
    s_to: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None and v is not False}


@dataclass
class GeodesicRecord:
    """A traced unit-speed geodesic.

    ``t``, ``points`` and ``velocities`` hold the accepted steps and the
    event points; ``exit`` is ``(boundary, s, theta)`` for non-trapped
    records; ``jacobi`` holds ``(j, j')`` when requested.
    """

    t: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    length: float
    exit: tuple[int, float, float] | None
    events: list[Event]
    trapped: bool
    clairaut: float | None = None
    start: tuple | None = None
    jacobi: np.ndarray | None = None
    failure: str | None = None

    @property
    def samples(self) -> list[tuple[float, ChartPoint, TangentVec]]:
        out = []
        for t, p, v in zip(self.t, self.points, self.velocities):
            base = ChartPoint(float(p[0]), float(p[1]))
            out.append((float(t), base, TangentVec(base, float(v[0]), float(v[1]))))
        return out

    @property
    def gluing_count(self) -> int:
        return sum(e.kind == "gluing-jump" for e in self.events)

    @property
    def tangencies(self) -> list[Event]:
        return [e for e in self.events if e.kind == "tangency"]

    def speed_drift(self, scene: Scene) -> float:
        sp = scene.metric.norm(self.points[:, 0], self.points[:, 1], self.velocities)
        return float(np.max(np.abs(sp - 1.0)))

    def segments(self) -> list[slice]:
        """Sample ranges between gluing jumps."""
        jumps = [e.t for e in self.events if e.kind == "gluing-jump"]
        cuts = [0]
        for tj in jumps:
            # a jump appends two samples at the same t: before and after
            k = int(np.searchsorted(self.t, tj, side="left")) + 1
            cuts.append(k)
        cuts.append(len(self.t))
        return [slice(a, b) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]

    def clairaut_drift(self, scene: Scene) -> float:
        """Relative drift of the Clairaut integral, reset across gluing jumps."""
        m = scene.metric
        if not m.rotational:
            raise ValueError(f"metric {m.name!r} is not rotational")
        worst = 0.0
        for sl in self.segments():
            p, v = self.points[sl], self.velocities[sl]
            c = m.clairaut(p[:, 0], p[:, 1], v[:, 0], v[:, 1])
            ref = max(abs(c[0]), 1e-12)
            worst = max(worst, float(np.max(np.abs(c - c[0]))) / ref)
        return worst

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "exit": None if self.exit is None else {"boundary": self.exit[0], "s": self.exit[1], "theta": self.exit[2]},
            "trapped": self.trapped,
            "clairaut": self.clairaut,
            "events": [e.to_dict() for e in self.events],
            "failure": self.failure,
        }


@dataclass
class JacobiRecord:
    along: GeodesicRecord
    t: np.ndarray
    j: np.ndarray
    dj: np.ndarray
    first_conjugate_t: float | None


# --------------------------------------------------------------------------
# Vectorised Runge-Kutta kernel
# --------------------------------------------------------------------------

def _rhs_factory(scene: Scene, with_jacobi: bool):
    metric = scene.metric

    def rhs(y: np.ndarray) -> np.ndarray:
        u, v, du, dv = y[:, 0], y[:, 1], y[:, 2], y[:, 3]
        out = np.empty_like(y)
        out[:, 0] = du
        out[:, 1] = dv
        with np.errstate(all="ignore"):
            a0, a1 = metric.acceleration(u, v, du, dv)
            out[:, 2] = a0
            out[:, 3] = a1
            if with_jacobi:
                out[:, 4] = y[:, 5]
                out[:, 5] = -metric.curvature(u, v) * y[:, 4]
        return out

    return rhs


def _rk_step(rhs, contains, y: np.ndarray, f: np.ndarray, h: np.ndarray, rtol: float, atol: float):
    """One Dormand-Prince 8(5,3) step per row; returns ``y_new, f_new, err, ok``."""
    # trial stages of an oversized step may leave the chart; those rows are rejected below
    with np.errstate(over="ignore", invalid="ignore"):
        return _rk_step_raw(rhs, contains, y, f, h, rtol, atol)


def _rk_step_raw(rhs, contains, y, f, h, rtol, atol):
    m, d = y.shape
    K = np.empty((_NS + 1, m, d))
    K[0] = f
    hc = h[:, None]
    ok = np.ones(m, dtype=bool)
    for s in range(1, _NS):
        acc = _A[s, 0] * K[0]
        for j in range(1, s):
            acc = acc + _A[s, j] * K[j]
        ys = y + hc * acc
        ok &= contains(ys[:, 0], ys[:, 1])
        K[s] = rhs(ys)
    acc = _B[0] * K[0]
    for j in range(1, _NS):
        acc = acc + _B[j] * K[j]
    y_new = y + hc * acc
    ok &= contains(y_new[:, 0], y_new[:, 1])
    f_new = rhs(y_new)
    K[_NS] = f_new
    ok &= np.all(np.isfinite(y_new), axis=1) & np.all(np.isfinite(f_new), axis=1)
    e5 = _E5[0] * K[0]
    e3 = _E3[0] * K[0]
    for j in range(1, _NS + 1):
        e5 = e5 + _E5[j] * K[j]
        e3 = e3 + _E3[j] * K[j]
    scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
    e5 = np.sum((e5 / scale) ** 2, axis=1)
    e3 = np.sum((e3 / scale) ** 2, axis=1)
    denom = e5 + 0.01 * e3
    with np.errstate(all="ignore"):
        err = np.where(denom > 0, np.abs(h) * e5 / np.sqrt(np.where(denom > 0, denom, 1.0) * d), 0.0)
    err = np.where(ok, err, np.inf)
    return y_new, f_new, err, ok


def _hermite_positions(y0, y1, h, fracs):
    """Cubic Hermite positions at step fractions; shape ``(len(fracs), m, 2)``."""
    p0, p1 = y0[:, :2], y1[:, :2]
    m0, m1 = y0[:, 2:4] * h[:, None], y1[:, 2:4] * h[:, None]
    out = []
    for x in fracs:
        h00 = 2 * x**3 - 3 * x**2 + 1
        h10 = x**3 - 2 * x**2 + x
        h01 = -2 * x**3 + 3 * x**2
        h11 = x**3 - x**2
        out.append(h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1)
    return np.stack(out)


# --------------------------------------------------------------------------
# Batch tracing
# --------------------------------------------------------------------------

def boundary_start_state(scene: Scene, boundary: int, s: float, theta: float) -> np.ndarray:
    """State ``(u, v, du, dv)`` of the inward unit vector at ``(s, theta)``."""
    if not 0.0 < theta < math.pi:
        raise ValueError(f"theta={theta!r} outside (0, pi)")
    curve = scene.boundaries[boundary]
    p, T, nu, _ = curve.frame(s % curve.length)
    w = math.cos(theta) * T + math.sin(theta) * nu
    return np.array([p[0], p[1], w[0], w[1]])


def _boundary_states(scene: Scene, boundary: int, s: np.ndarray, theta: np.ndarray):
    """Start states and first-step caps for boundary starts.

    A shallow start on a convex arc returns after a chord of about
    ``2 sin(theta) / k_g``; the first step is kept to half of that so the
    level is sampled inside the chord.
    """
    curve = scene.boundaries[boundary]
    p, T, nu, kg = curve.frames(np.asarray(s, float) % curve.length)
    c, sn = np.cos(theta)[:, None], np.sin(theta)[:, None]
    with np.errstate(divide="ignore"):
        cap = np.where(kg > 0, np.abs(sn[:, 0]) / np.where(kg > 0, kg, 1.0), np.inf)
    return np.concatenate([p, c * T + sn * nu], axis=1), cap


@dataclass
class _Result:
    y: np.ndarray
    t: float
    exit: tuple | None = None
    events: list = field(default_factory=list)
    trapped: bool = False
    failure: str | None = None
    hist_t: list = field(default_factory=list)
    hist_y: list = field(default_factory=list)


def _exit_angle(scene: Scene, b: int, y: np.ndarray):
    curve = scene.boundaries[b]
    s = curve.s_of_point(y[0], y[1])
    _, T, nu, _ = curve.frame(s)
    m = scene.metric
    u = np.array([y[0]])
    v = np.array([y[1]])
    vel = y[None, 2:4]
    c = float(m.inner(u, v, vel, T[None])[0])
    sn = -float(m.inner(u, v, vel, nu[None])[0])
    return s, math.atan2(sn, c)


class _Tracer:
    """Batch state of a set of unit-speed trajectories.

    Three kinds of events are watched: boundary crossings (from inside to
    outside), crossings of the metric's kink circles (either way; they only
    restart the step so no step straddles a jump in curvature) and zeros of
    the Jacobi field.
    """

    def __init__(self, scene: Scene, y0: np.ndarray, cfg: IntegratorCfg, disarm: np.ndarray,
                 with_jacobi: bool, stop_length, ignore_boundaries: bool, h_first=None):
        self.scene = scene
        self.cfg = cfg = cfg.resolved(scene)
        self.metric = metric = scene.metric
        self.rhs = _rhs_factory(scene, with_jacobi)
        self.curves = scene.boundaries
        self.glued = scene.gluing.boundary if scene.gluing is not None else -1
        self.cls = scene.classification if not ignore_boundaries else None
        self.with_jacobi = with_jacobi
        self.ignore_boundaries = ignore_boundaries
        self.kinks = np.asarray(metric.kink_radii, float)
        B = len(y0)
        self.y = y0.astype(float).copy()
        self.f = self.rhs(self.y)
        self.t = np.zeros(B)
        self.h = np.full(B, min(cfg.h_max, 0.05 * float(scene.diameter)))
        self.has_stop = stop_length is not None
        if self.has_stop:
            self.stop = np.asarray(stop_length, float)
            self.h = np.minimum(self.h, np.maximum(self.stop, 1e-300))
        else:
            self.stop = np.full(B, np.inf)
        if h_first is not None:
            self.h = np.minimum(self.h, h_first)
        self.rejected = np.zeros(B, dtype=bool)
        self.armed = np.ones((B, len(self.curves)), dtype=bool)
        rows = np.nonzero(disarm >= 0)[0]
        self.armed[rows, disarm[rows]] = False
        if ignore_boundaries:
            self.armed[:] = False
        self.karmed = np.ones((B, len(self.kinks)), dtype=bool)
        self.jarmed = np.zeros(B, dtype=bool)
        self.active = np.ones(B, dtype=bool)
        self.results = [_Result(self.y[i].copy(), 0.0) for i in range(B)]
        if cfg.record_samples:
            for i in range(B):
                self.results[i].hist_t.append(0.0)
                self.results[i].hist_y.append(self.y[i].copy())

    # -- helpers -----------------------------------------------------------

    def contains(self, u, v):
        return np.asarray(self.metric.contains(u, v), dtype=bool) & np.isfinite(u) & np.isfinite(v)

    def step(self, y, f, h):
        return _rk_step(self.rhs, self.contains, y, f, h, self.cfg.rtol, self.cfg.atol)

    def record(self, i, t, y):
        if self.cfg.record_samples:
            self.results[i].hist_t.append(float(t))
            self.results[i].hist_y.append(y.copy())

    def restart(self, i, ys, ts, x):
        self.y[i] = ys
        self.f[i] = self.rhs(ys[None])[0]
        self.t[i] = ts
        self.h[i] = max(x, self.h[i] * 0.5, 1e-8)

    def finish(self, i, ys, ts):
        self.y[i], self.t[i] = ys, ts
        self.active[i] = False

    def kink_level(self, Y, kidx, sign):
        c, (gx, gy) = self.metric.kink_coordinate(Y[:, 0], Y[:, 1])
        return sign * (c - self.kinks[kidx]), sign * (gx * Y[:, 2] + gy * Y[:, 3])

    # -- main loop ---------------------------------------------------------

    def run(self) -> list[_Result]:
        cfg = self.cfg
        steps = 0
        while np.any(self.active) and steps < cfg.max_steps:
            steps += 1
            self._advance()
        for i in np.nonzero(self.active)[0]:
            self.results[i].failure = f"step budget of {cfg.max_steps} exhausted at t={self.t[i]:.12g}"
        for i, r in enumerate(self.results):
            r.y = self.y[i].copy()
            r.t = float(self.t[i])
        return self.results

    def _advance(self) -> None:
        cfg, y, f, t, h = self.cfg, self.y, self.f, self.t, self.h
        idx = np.nonzero(self.active)[0]
        hh = np.minimum(h[idx], self.stop[idx] - t[idx])
        if not self.has_stop:
            hh = np.minimum(hh, cfg.max_length + 1e-9 - t[idx])
        yi, fi = y[idx], f[idx]
        y1, f1, err, ok = self.step(yi, fi, hh)
        acc = err < 1.0
        with np.errstate(divide="ignore"):
            fac = np.where(err == 0, _MAX_FACTOR, _SAFETY * err ** _EXPONENT)
        grow = np.minimum(_MAX_FACTOR, fac)
        grow = np.where(self.rejected[idx], np.minimum(1.0, grow), grow)
        shrink = np.where(ok, np.maximum(_MIN_FACTOR, fac), 0.25)
        new_h = np.minimum(np.where(acc, hh * grow, hh * shrink), cfg.h_max)
        for k in np.nonzero((~acc) & (new_h < 1e-14 * (1.0 + t[idx])))[0]:
            i = idx[k]
            kink = self.metric.kink_at(float(y[i, 0]), float(y[i, 1]), atol=1e-6)
            where = f" near kink at chart radius {kink}" if kink is not None else ""
            self.results[i].failure = f"step underflow at ({y[i, 0]:.12g}, {y[i, 1]:.12g}), t={t[i]:.12g}{where}"
            self.active[i] = False
        self.rejected[idx] = ~acc
        h[idx] = new_h
        if not np.any(acc):
            return
        a_idx = idx[acc]
        ya, fa, y1a, f1a, ha = yi[acc], fi[acc], y1[acc], f1[acc], hh[acc]
        m = len(a_idx)
        pos = _hermite_positions(ya, y1a, ha, _FRACTIONS)
        pos[-1] = y1a[:, :2]
        cand_b = np.full(m, -1)
        cand_bhi = np.zeros(m)
        if not self.ignore_boundaries:
            lev = np.stack([c.level(pos[..., 0], pos[..., 1]) for c in self.curves], axis=-1)
            arm = self.armed[a_idx].copy()
            for k in range(1, len(_FRACTIONS)):
                hit = arm & (lev[k] < 0) & (cand_b < 0)[:, None]
                for r in np.nonzero(hit.any(axis=1))[0]:
                    bs = np.nonzero(hit[r])[0]
                    cand_b[r] = bs[np.argmin(lev[k, r, bs])]
                    cand_bhi[r] = _FRACTIONS[k]
                arm |= lev[k] > _ARM_EPS
            self.armed[a_idx] = arm
            self._find_dips(ya, y1a, ha, lev, arm, cand_b, cand_bhi)
        cand_k = np.full(m, -1)
        cand_khi = np.zeros(m)
        ksign = np.zeros(m)
        if len(self.kinks):
            kc, _ = self.metric.kink_coordinate(pos[..., 0], pos[..., 1])
            kl = kc[..., None] - self.kinks  # (9, m, nk)
            s0 = np.sign(kl[0])
            arm = self.karmed[a_idx].copy()
            for k in range(1, len(_FRACTIONS)):
                hit = arm & (s0 != 0) & (np.sign(kl[k]) != s0) & (cand_k < 0)[:, None]
                for r in np.nonzero(hit.any(axis=1))[0]:
                    kk = int(np.nonzero(hit[r])[0][0])
                    cand_k[r], cand_khi[r], ksign[r] = kk, _FRACTIONS[k], s0[r, kk]
                arm |= np.abs(kl[k]) > _ARM_EPS
            self.karmed[a_idx] = arm
        jcand = np.zeros(m, dtype=bool)
        if self.with_jacobi:
            jcand = self.jarmed[a_idx] & (ya[:, 4] > 0) & (y1a[:, 4] <= 0)
            self.jarmed[a_idx] |= y1a[:, 4] > _ARM_EPS
        ev = (cand_b >= 0) | (cand_k >= 0) | jcand
        plain = ~ev
        p_idx = a_idx[plain]
        y[p_idx] = y1a[plain]
        f[p_idx] = f1a[plain]
        t[p_idx] = t[p_idx] + ha[plain]
        for k, i in zip(np.nonzero(plain)[0], p_idx):
            self.record(i, t[i], y1a[k])
        R = np.nonzero(ev)[0]
        if len(R):
            self._events(a_idx[R], ya[R], fa[R], y1a[R], f1a[R], ha[R], cand_b[R], cand_bhi[R],
                         cand_k[R], cand_khi[R], ksign[R], jcand[R])
        with np.errstate(invalid="ignore"):
            done_stop = self.active & (t >= self.stop - 1e-14 * np.maximum(1.0, self.stop))
        trapped = self.active & (t >= cfg.max_length) & (not self.has_stop)
        for i in np.nonzero(done_stop | trapped)[0]:
            self.results[i].trapped = bool(trapped[i] and not done_stop[i])
            self.active[i] = False

    def _find_dips(self, ya, y1a, ha, lev, arm, cand_b, cand_bhi) -> None:
        """Catch a near-tangent crossing that lies between two level samples.

        A local minimum of the sampled level that is small compared with the
        sample spacing squared is refined on the interpolant.
        """
        sub = (ha / (len(_FRACTIONS) - 1)) ** 2
        inner = lev[1:-1]
        dip = (inner <= lev[:-2]) & (inner <= lev[2:]) & (inner < sub[None, :, None]) & arm[None]
        for r in np.nonzero((cand_b < 0) & dip.any(axis=(0, 2)))[0]:
            best = (0.0, 0.0, -1)
            for k, b in zip(*np.nonzero(dip[:, r, :])):
                c = self.curves[b]

                def g(x, b=b, c=c):
                    q = _hermite_positions(ya[r:r + 1], y1a[r:r + 1], ha[r:r + 1], [x])[0, 0]
                    return float(c.level(q[0], q[1]))

                opt = minimize_scalar(g, bounds=(_FRACTIONS[k], _FRACTIONS[k + 2]), method="bounded",
                                      options={"xatol": 1e-12})
                if opt.fun < 0 and (best[2] < 0 or opt.x < best[0]):
                    best = (float(opt.x), opt.fun, int(b))
            if best[2] >= 0:
                cand_b[r], cand_bhi[r] = best[2], best[0]

    def _events(self, I, y0R, f0R, y1R, f1R, hR, bR, bhi, kR, khi, ksign, jR) -> None:
        """Localise and apply the earliest event of each row."""
        cfg, curves = self.cfg, self.curves
        m = len(I)

        def exact(x):
            yy, _, _, _ = self.step(y0R, f0R, x)
            return np.where((x > 0)[:, None], yy, y0R)

        x_best = np.full(m, np.inf)
        kind = np.full(m, -1)  # 0 boundary, 1 kink, 2 conjugate
        has_b = bR >= 0
        if np.any(has_b):
            bsafe = np.where(has_b, bR, 0)
            hi = bhi * hR
            g_hi, dg_hi = _boundary_level_rate(curves, bsafe, exact(hi))
            lo = np.zeros(m)
            moved = has_b & (g_hi >= 0)
            if np.any(moved):
                # the interpolant was early; look in the rest of the step
                g_end, _ = _boundary_level_rate(curves, bsafe, y1R)
                late = moved & (g_end < 0)
                lo = np.where(late, hi, lo)
                hi = np.where(late, hR, hi)
                has_b &= ~moved | late
                g_hi, dg_hi = _boundary_level_rate(curves, bsafe, exact(hi))
                has_b &= g_hi < 0
            if np.any(has_b):
                xb = _locate(lambda x: _boundary_level_rate(curves, bsafe, exact(x)), lo, hi, g_hi, dg_hi,
                             cfg.event_tol)
                x_best = np.where(has_b, xb, x_best)
                kind = np.where(has_b, 0, kind)
        has_k = kR >= 0
        if np.any(has_k):
            ksafe = np.where(has_k, kR, 0)
            hi = khi * hR
            g_hi, dg_hi = self.kink_level(exact(hi), ksafe, ksign)
            lo = np.zeros(m)
            moved = has_k & (g_hi >= 0)
            if np.any(moved):
                g_end, _ = self.kink_level(y1R, ksafe, ksign)
                late = moved & (g_end < 0)
                lo = np.where(late, hi, lo)
                hi = np.where(late, hR, hi)
                has_k &= ~moved | late
                g_hi, dg_hi = self.kink_level(exact(hi), ksafe, ksign)
                has_k &= g_hi < 0
            if np.any(has_k):
                xk = _locate(lambda x: self.kink_level(exact(x), ksafe, ksign), lo, hi, g_hi, dg_hi, cfg.event_tol)
                take = has_k & (xk < x_best)
                x_best = np.where(take, xk, x_best)
                kind = np.where(take, 1, kind)
        if np.any(jR):
            def jfn(x):
                yy = exact(x)
                return yy[:, 4], yy[:, 5]

            xj = _locate(jfn, np.zeros(m), hR.copy(), y1R[:, 4], y1R[:, 5], cfg.event_tol)
            take = jR & (xj < x_best)
            x_best = np.where(take, xj, x_best)
            kind = np.where(take, 2, kind)
        found = kind >= 0
        Ys = exact(np.where(found, x_best, 0.0))
        for k in range(m):
            i = I[k]
            h0 = float(hR[k])
            if not found[k]:
                # spurious dip of the interpolant: retry with half the step
                self.h[i] = 0.5 * h0
                if self.h[i] < 1e-14 * (1.0 + self.t[i]):
                    self.y[i], self.f[i], self.t[i] = y1R[k], f1R[k], self.t[i] + h0
                    self.record(i, self.t[i], y1R[k])
                continue
            x = float(x_best[k])
            ys = Ys[k].copy()
            ts = float(self.t[i] + x)
            self.record(i, ts, ys)
            if kind[k] == 1:
                self.karmed[i, kR[k]] = False
                self.restart(i, ys, ts, x)
            elif kind[k] == 2:
                self.results[i].events.append(Event("conjugate", ts))
                self.jarmed[i] = False
                self.restart(i, ys, ts, x)
            else:
                self._boundary_event(i, int(bR[k]), ys, ts, x)

    def _boundary_event(self, i, b, ys, ts, x) -> None:
        cfg, res = self.cfg, self.results[i]
        s, th = _exit_angle(self.scene, b, ys)
        if b == self.glued:
            curve = self.curves[b]
            s2 = (s + 0.5 * curve.length) % curve.length
            p2, T2, nu2, _ = curve.frame(s2)
            yn = ys.copy()
            yn[:2] = p2
            yn[2:4] = math.cos(th) * T2 + math.sin(th) * nu2
            res.events.append(Event("gluing-jump", ts, b, s, th, s_to=s2))
            self.record(i, ts, yn)
            self.armed[i, b] = False
            self.restart(i, yn, ts, x)
            return
        if th < cfg.tangency_tol or th > math.pi - cfg.tangency_tol:
            c = self.cls.class_at(b, s)
            if c != S_PLUS:
                res.events.append(Event("tangency", ts, b, s, th, "switch-tangent" if c == "switch" else "graze"))
                self.armed[i, b] = False
                self.restart(i, ys, ts, x)
                return
            res.events.append(Event("tangency", ts, b, s, th, "graze", terminal=True))
        res.events.append(Event("exit", ts, b, s, th))
        res.exit = (b, s, th)
        self.finish(i, ys, ts)


def _integrate(scene: Scene, y0: np.ndarray, cfg: IntegratorCfg, disarm: np.ndarray,
               with_jacobi: bool = False, stop_length: np.ndarray | None = None,
               ignore_boundaries: bool = False, h_first: np.ndarray | None = None) -> list[_Result]:
    """Integrate a batch of unit-speed starts until exit, trap or ``stop_length``."""
    return _Tracer(scene, y0, cfg, np.asarray(disarm), with_jacobi, stop_length, ignore_boundaries,
                   h_first).run()


def _boundary_level_rate(curves, bidx: np.ndarray, Y: np.ndarray):
    """Level of boundary ``bidx[k]`` at row ``k`` of ``Y`` and its rate along the velocity."""
    g = np.zeros(len(Y))
    dg = np.zeros(len(Y))
    for b in np.unique(bidx):
        rows = bidx == b
        u, v = Y[rows, 0], Y[rows, 1]
        gx, gy = curves[b].shape.level_grad(u, v)
        g[rows] = curves[b].level(u, v)
        dg[rows] = gx * Y[rows, 2] + gy * Y[rows, 3]
    return g, dg


def _locate(fn, lo: np.ndarray, hi: np.ndarray, g: np.ndarray, dg: np.ndarray, tol: float) -> np.ndarray:
    """Safeguarded Newton for roots with ``g(lo) >= 0 > g(hi)``, one per row.

    ``fn(x)`` returns ``(g, g')`` for all rows; ``g, dg`` are the values at ``hi``.
    """
    lo, hi = lo.copy(), hi.copy()
    x = hi.copy()
    live = np.ones(len(x), dtype=bool)
    for _ in range(100):
        with np.errstate(all="ignore"):
            newton = x - g / dg
        mid = 0.5 * (lo + hi)
        good = np.isfinite(newton) & (lo < newton) & (newton < hi)
        xn = np.where(live, np.where(good, newton, mid), x)
        step = np.abs(xn - x)
        g, dg = fn(xn)
        inside = g >= 0
        hi = np.where(live & ~inside, xn, hi)
        lo = np.where(live & inside, xn, lo)
        x = xn
        live &= ~((step <= 0.01 * tol) | (hi - lo <= 0.01 * tol) | (g == 0))
        if not np.any(live):
            break
    return x


def _to_record(scene: Scene, res: _Result, start, with_jacobi: bool) -> GeodesicRecord:
    if res.hist_t:
        tt = np.asarray(res.hist_t)
        yy = np.asarray(res.hist_y)
    else:
        tt = np.array([res.t])
        yy = res.y[None]
    m = scene.metric
    clair = None
    if m.rotational:
        clair = float(m.clairaut(yy[0, 0], yy[0, 1], yy[0, 2], yy[0, 3]))
    events = list(res.events)
    if start is not None and start[0] == "boundary":
        events.insert(0, Event("entry", 0.0, start[1], start[2], start[3]))
    return GeodesicRecord(
        t=tt, points=yy[:, :2].copy(), velocities=yy[:, 2:4].copy(), length=float(res.t),
        exit=res.exit, events=events, trapped=res.trapped, clairaut=clair, start=start,
        jacobi=yy[:, 4:6].copy() if with_jacobi else None, failure=res.failure,
    )


def _normalise_start(scene: Scene, start):
    """``(boundary, s, theta)`` or an interior :class:`TangentVec` -> state, disarm, tag, first-step cap."""
    if isinstance(start, TangentVec):
        m = scene.metric
        u, v = start.base.u, start.base.v
        m.check_point(u, v)
        if not float(scene.level(np.asarray(u), np.asarray(v))) > 0:
            raise DomainError(f"start point ({u}, {v}) is not interior to scene {scene.name!r}")
        w = np.array([start.du, start.dv])
        nrm = float(m.norm(np.asarray(u), np.asarray(v), w))
        if abs(nrm - 1.0) > 1e-8:
            raise ValueError(f"precondition failed: start vector has norm {nrm!r}, expected unit")
        return np.array([u, v, start.du, start.dv]), -1, ("interior", u, v, start.du, start.dv), math.inf
    b, s, theta = start
    b = int(b)
    if not 0 <= b < len(scene.boundaries):
        raise IndexError(f"boundary index {b} out of range")
    curve = scene.boundaries[b]
    s = float(s) % curve.length
    y0, cap = _boundary_states(scene, b, np.array([s]), np.array([float(theta)]))
    if not 0.0 < theta < math.pi:
        raise ValueError(f"theta={theta!r} outside (0, pi)")
    return y0[0], b, ("boundary", b, s, float(theta)), float(cap[0])


def trace_batch(scene: Scene, starts, cfg: IntegratorCfg | None = None, with_jacobi: bool = False) -> list[GeodesicRecord]:
    """Trace several starts together; each record equals its single-start trace."""
    cfg = cfg or IntegratorCfg()
    states, disarm, tags, caps = [], [], [], []
    for st in starts:
        y0, b, tag, cap = _normalise_start(scene, st)
        states.append(y0)
        disarm.append(b)
        tags.append(tag)
        caps.append(cap)
    if not states:
        return []
    y0 = np.array(states)
    if with_jacobi:
        y0 = np.concatenate([y0, np.tile([0.0, 1.0], (len(y0), 1))], axis=1)
    res = _integrate(scene, y0, cfg, np.array(disarm), with_jacobi, h_first=np.array(caps))
    return [_to_record(scene, r, tag, with_jacobi) for r, tag in zip(res, tags)]


def trace(scene: Scene, start, cfg: IntegratorCfg | None = None) -> GeodesicRecord:
    """Trace the geodesic from ``(boundary, s, theta)`` or an interior unit :class:`TangentVec`.

    Raises :class:`StepUnderflow` if the step collapses (e.g. at a kink).
    """
    rec = trace_batch(scene, [start], cfg)[0]
    if rec.failure is not None and rec.failure.startswith("step underflow"):
        raise StepUnderflow(rec.failure)
    return rec


# --------------------------------------------------------------------------
# Scattering tables
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScatterGrid:
    """``n_s`` equispaced foot points times ``n_theta`` angles in ``[m, pi - m]``."""

    boundary: int = 0
    n_s: int = 64
    n_theta: int = 64
    theta_margin: float = 0.05

    def __post_init__(self):
        if self.n_s < 2 or self.n_theta < 2:
            raise ValueError("grid sizes must be >= 2")
        if not 0 < self.theta_margin < math.pi / 2:
            raise ValueError("theta_margin must lie in (0, pi/2)")

    def s_values(self, length: float) -> np.ndarray:
        return np.arange(self.n_s) * (length / self.n_s)

    def theta_values(self) -> np.ndarray:
        return np.linspace(self.theta_margin, math.pi - self.theta_margin, self.n_theta)

    def nodes(self, length: float) -> tuple[np.ndarray, np.ndarray]:
        """Flattened ``(s, theta)``, s-major order."""
        S, TH = np.meshgrid(self.s_values(length), self.theta_values(), indexing="ij")
        return S.ravel(), TH.ravel()


@dataclass
class ScatteringTable:
    """Per-node scattering data in s-major grid order."""

    scene_name: str
    grid: ScatterGrid
    s: np.ndarray
    theta: np.ndarray
    b_out: np.ndarray
    s_out: np.ndarray
    theta_out: np.ndarray
    tau: np.ndarray
    trapped: np.ndarray
    events: list[list[Event]]
    failures: list[str | None]

    def __len__(self) -> int:
        return len(self.s)

    def signature(self, k: int) -> tuple:
        """Combinatorial type of node ``k``: exit boundary and gluing count."""
        ev = self.events[k]
        return (int(self.b_out[k]), sum(e.kind == "gluing-jump" for e in ev))

    def has_tangency(self, k: int) -> bool:
        return any(e.kind == "tangency" for e in self.events[k])

    def rows(self) -> list[dict]:
        out = []
        for k in range(len(self)):
            out.append({
                "b_idx": self.grid.boundary, "s": float(self.s[k]), "theta": float(self.theta[k]),
                "b_out": int(self.b_out[k]), "s_out": float(self.s_out[k]), "theta_out": float(self.theta_out[k]),
                "tau": float(self.tau[k]), "trapped": bool(self.trapped[k]),
                "events": ";".join(_event_tag(e) for e in self.events[k]),
            })
        return out

    def to_csv(self) -> str:
        cols = ["b_idx", "s", "theta", "b_out", "s_out", "theta_out", "tau", "trapped", "events"]
        lines = [",".join(cols)]
        for row in self.rows():
            lines.append(",".join(_fmt(row[c]) for c in cols))
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {"scene": self.scene_name, "grid": asdict(self.grid), "samples": self.rows()}


def _event_tag(e: Event) -> str:
    if e.kind == "tangency":
        return f"tangency:{e.detail}@{e.boundary}"
    if e.kind == "gluing-jump":
        return f"gluing-jump@{e.boundary}"
    return f"{e.kind}@{e.boundary}" if e.boundary is not None else e.kind


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _scatter_chunk(args):
    spec, scene, boundary, s, theta, cfg = args
    if scene is None:
        from .scenes import scene_from_spec

        scene = _worker_scene(spec, scene_from_spec)
    y0, cap = _boundary_states(scene, boundary, s, theta)
    res = _integrate(scene, y0, replace(cfg, record_samples=False), np.full(len(s), boundary), h_first=cap)
    return [(r.exit, r.t, r.trapped, r.events, r.failure) for r in res]


_WORKER_CACHE: dict = {}


def _worker_scene(spec, builder):
    import json

    key = json.dumps(spec, sort_keys=True)
    if key not in _WORKER_CACHE:
        _WORKER_CACHE[key] = builder(spec)
    return _WORKER_CACHE[key]


def _run_chunks(scene: Scene, boundary: int, s: np.ndarray, theta: np.ndarray, cfg: IntegratorCfg):
    cfg = cfg.resolved(scene)
    chunks = [(k, min(k + cfg.chunk, len(s))) for k in range(0, len(s), cfg.chunk)]
    workers = cfg.workers if cfg.workers > 0 else (os.cpu_count() or 1)
    out = []
    if workers <= 1 or len(chunks) <= 1:
        for a, b in chunks:
            out += _scatter_chunk((None, scene, boundary, s[a:b], theta[a:b], cfg))
        return out
    if scene.spec:
        jobs = [(scene.spec, None, boundary, s[a:b], theta[a:b], cfg) for a, b in chunks]
        pool = ProcessPoolExecutor(max_workers=workers)
    else:
        jobs = [(None, scene, boundary, s[a:b], theta[a:b], cfg) for a, b in chunks]
        pool = ThreadPoolExecutor(max_workers=workers)
    with pool:
        for part in pool.map(_scatter_chunk, jobs):
            out += part
    return out


def scattering_map(scene: Scene, grid: ScatterGrid | None = None, cfg: IntegratorCfg | None = None,
                   s: np.ndarray | None = None, theta: np.ndarray | None = None) -> ScatteringTable:
    """Trace every grid node; explicit ``s``/``theta`` arrays override the grid nodes.

    Results are gathered in grid order and do not depend on ``cfg.workers``.
    Trapped nodes carry ``tau = max_length``.
    """
    cfg = (cfg or IntegratorCfg()).resolved(scene)
    grid = grid or ScatterGrid(theta_margin=cfg.theta_margin)
    if grid.theta_margin < cfg.theta_margin - 1e-15 and s is None:
        raise ValueError("grid theta values must stay theta_margin away from 0 and pi")
    b = grid.boundary
    if s is None:
        s, theta = grid.nodes(scene.boundaries[b].length)
    s, theta = np.asarray(s, float), np.asarray(theta, float)
    raw = _run_chunks(scene, b, s, theta, cfg)
    n = len(s)
    b_out = np.full(n, -1)
    s_out = np.full(n, np.nan)
    th_out = np.full(n, np.nan)
    tau = np.full(n, np.nan)
    trapped = np.zeros(n, dtype=bool)
    events, failures = [], []
    for k, (ex, length, trp, ev, fail) in enumerate(raw):
        if ex is not None:
            b_out[k], s_out[k], th_out[k] = ex
            tau[k] = length
        trapped[k] = trp
        if trp:
            tau[k] = cfg.max_length
        events.append(list(ev))
        failures.append(fail)
    return ScatteringTable(scene.name, grid, s, theta, b_out, s_out, th_out, tau, trapped, events, failures)


# --------------------------------------------------------------------------
# Jacobi fields and conjugate points
# --------------------------------------------------------------------------

def jacobi(scene: Scene, geo: GeodesicRecord, cfg: IntegratorCfg | None = None) -> JacobiRecord:
    """Scalar normal Jacobi field ``j'' + K j = 0``, ``j(0) = 0``, ``j'(0) = 1`` along ``geo``.

    A record cut off by ``max_length`` is retraced to the same length.
    """
    if geo.start is None:
        raise ValueError("geodesic record carries no start data")
    if geo.trapped:
        cfg = replace(cfg or IntegratorCfg(), max_length=geo.length)
    rec = _retrace_with_jacobi(scene, [geo.start], cfg)[0]
    return _jacobi_record(rec)


def _jacobi_record(rec: GeodesicRecord) -> JacobiRecord:
    conj = [e.t for e in rec.events if e.kind == "conjugate"]
    return JacobiRecord(rec, rec.t, rec.jacobi[:, 0], rec.jacobi[:, 1], conj[0] if conj else None)


def _retrace_with_jacobi(scene: Scene, tags, cfg):
    starts = []
    for tag in tags:
        if tag[0] == "boundary":
            starts.append((tag[1], tag[2], tag[3]))
        else:
            base = ChartPoint(tag[1], tag[2])
            starts.append(TangentVec(base, tag[3], tag[4]))
    return trace_batch(scene, starts, cfg, with_jacobi=True)


def certify_no_conjugate_points(scene: Scene, grid: ScatterGrid | None = None,
                                cfg: IntegratorCfg | None = None) -> dict:
    """Run Jacobi fields over every grid geodesic and list conjugate points before exit.

    An empty ``violations`` list is sampling evidence, not a proof.
    """
    cfg = (cfg or IntegratorCfg()).resolved(scene)
    grid = grid or ScatterGrid(n_s=16, n_theta=16, theta_margin=cfg.theta_margin)
    b = grid.boundary
    s, theta = grid.nodes(scene.boundaries[b].length)
    starts = [(b, float(a), float(c)) for a, c in zip(s, theta)]
    violations, failures = [], []
    max_len = 0.0
    for k in range(0, len(starts), cfg.chunk):
        recs = trace_batch(scene, starts[k:k + cfg.chunk], replace(cfg, record_samples=False), with_jacobi=True)
        for st, rec in zip(starts[k:k + cfg.chunk], recs):
            if rec.failure or rec.trapped:
                failures.append({"s": st[1], "theta": st[2], "reason": rec.failure or "trapped"})
                continue
            max_len = max(max_len, rec.length)
            conj = [e.t for e in rec.events if e.kind == "conjugate"]
            if conj and conj[0] <= rec.length:
                violations.append({"s": st[1], "theta": st[2], "first_conjugate_t": conj[0], "tau": rec.length})
    return {"scene": scene.name, "violations": violations, "max_checked_length": max_len,
            "checked": len(starts) - len(failures), "failures": failures}


# --------------------------------------------------------------------------
# Exponential map and self-intersection
# --------------------------------------------------------------------------

def exp_points(scene: Scene, p: np.ndarray, w: np.ndarray, cfg: IntegratorCfg | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``exp_p(w)`` for rows of ``p`` and ``w``, ignoring the boundary.

    Returns end points and end velocities scaled back to ``|w|``. Rows whose
    integration fails come back as ``nan``.
    """
    cfg = cfg or IntegratorCfg()
    p = np.atleast_2d(np.asarray(p, float))
    w = np.atleast_2d(np.asarray(w, float))
    m = scene.metric
    nrm = m.norm(p[:, 0], p[:, 1], w)
    ends = p.copy()
    vels = w.copy()
    move = nrm > 0
    if np.any(move):
        y0 = np.concatenate([p[move], w[move] / nrm[move, None]], axis=1)
        res = _integrate(scene, y0, replace(cfg, record_samples=False), np.full(int(move.sum()), -1),
                         stop_length=nrm[move], ignore_boundaries=True)
        ye = np.array([r.y if r.failure is None else np.full(4, np.nan) for r in res])
        ends[move] = ye[:, :2]
        vels[move] = ye[:, 2:4] * nrm[move, None]
    return ends, vels


def self_intersections(rec: GeodesicRecord, scene: Scene) -> list[dict]:
    """Transversal self-crossings of a traced path.

    Revolution charts are embedded by ``(r cos theta, r sin theta)`` so that
    unwrapped angles are compared modulo a full turn; each hit reports the
    two arclength parameters and the winding ``delta theta / 2 pi`` between
    them.
    """
    pts = rec.points
    if scene.metric.family == "SurfaceOfRevolution":
        xy = np.stack([pts[:, 0] * np.cos(pts[:, 1]), pts[:, 0] * np.sin(pts[:, 1])], axis=1)
        ang = pts[:, 1]
    else:
        xy = pts
        ang = np.unwrap(np.arctan2(pts[:, 1], pts[:, 0]))
    a, b = xy[:-1], xy[1:]
    n = len(a)
    hits = []
    for i in range(n):
        j = np.arange(i + 2, n)
        if len(j) == 0:
            continue
        p, r = a[i], b[i] - a[i]
        q, s = a[j], b[j] - a[j]
        den = r[0] * s[:, 1] - r[1] * s[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            tt = ((q[:, 0] - p[0]) * s[:, 1] - (q[:, 1] - p[1]) * s[:, 0]) / den
            uu = ((q[:, 0] - p[0]) * r[1] - (q[:, 1] - p[1]) * r[0]) / den
        ok = (den != 0) & (tt >= 0) & (tt < 1) & (uu >= 0) & (uu < 1)
        for k in np.nonzero(ok)[0]:
            jj = j[k]
            t1 = rec.t[i] + tt[k] * (rec.t[i + 1] - rec.t[i])
            t2 = rec.t[jj] + uu[k] * (rec.t[jj + 1] - rec.t[jj])
            a1 = ang[i] + tt[k] * (ang[i + 1] - ang[i])
            a2 = ang[jj] + uu[k] * (ang[jj + 1] - ang[jj])
            hits.append({"t1": float(t1), "t2": float(t2), "point": xy[i] + tt[k] * r,
                         "winding": float((a2 - a1) / (2 * math.pi))})
    return hits
