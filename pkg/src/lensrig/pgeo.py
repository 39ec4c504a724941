"""
p-geodesics: locally shortest paths that may run along concave or totally
geodesic boundary.

Between two nearby points the candidates are the interior geodesic (found
by shooting, or a straight chord in a flat chart) and composites made of a
geodesic arriving tangentially at a non-convex boundary arc, a stretch of
that arc, and a geodesic leaving tangentially. The shortest admissible
candidate is the local p-geodesic; two distinct candidates within
``path_tol`` of each other mean the pair sits on a cut locus.

:func:`shorten` runs the discrete curve-shortening scheme on knots
``x_0, ..., x_k``: alternately every odd and every even interior knot is
moved to the midpoint of the local p-geodesic between its neighbours. The
piecewise energy ``sum d(x_i, x_{i+1})**2 / (t_{i+1} - t_i)`` never
increases under these moves.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .domain import S_MINUS, S_PLUS, S_ZERO, Circle, Scene
from .flow import IntegratorCfg, exp_points

__all__ = [
    "PGeoCfg",
    "Segment",
    "PGeodesicPath",
    "PiecewiseKnots",
    "NoConvergence",
    "KnotSpacingError",
    "local_pgeodesic",
    "pgeodesic_candidates",
    "uniqueness_radius",
    "piecewise_energy",
    "piecewise_energies",
    "knot_distances",
    "shorten",
    "ShortenResult",
    "winding_angles",
    "same_homotopy_class",
    "polyline_length",
]


class NoConvergence(RuntimeError):
    """Shooting failed; ``best`` holds the best candidate found, if any."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class KnotSpacingError(ValueError):
    pass


@dataclass(frozen=True)
class PGeoCfg:
    path_tol: float = 1e-9
    join_tol: float = 1e-6
    etol: float = 1e-10
    max_sweeps: int = 5000
    k_min: int = 4
    shoot_tol: float = 1e-11
    max_newton: int = 40
    n_tangent_samples: int | None = None  # 512 in flat charts, 96 otherwise
    n_clear_samples: int = 65
    integrator: IntegratorCfg = field(default_factory=lambda: IntegratorCfg(rtol=1e-12, atol=1e-14))


# --------------------------------------------------------------------------
# Paths
# --------------------------------------------------------------------------

@dataclass
class Segment:
    """Interior geodesic (``w`` = initial velocity, ``|w| = length``) or boundary arc.

    Boundary arcs run from ``s0`` to ``s0 + direction * length`` on ``boundary``.
    """

    kind: str
    start: np.ndarray
    end: np.ndarray
    length: float
    w: np.ndarray | None = None
    v_end: np.ndarray | None = None
    boundary: int | None = None
    s0: float | None = None
    direction: int = 1

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "start": [float(x) for x in self.start], "end": [float(x) for x in self.end],
             "length": float(self.length)}
        if self.kind == "boundary":
            d.update({"boundary": self.boundary, "s0": float(self.s0), "direction": int(self.direction)})
        return d


def _seg_points(scene: Scene, seg: Segment, fr: np.ndarray, cfg: PGeoCfg) -> np.ndarray:
    if seg.kind == "boundary":
        curve = scene.boundaries[seg.boundary]
        s = (seg.s0 + seg.direction * seg.length * fr) % curve.length
        return curve.frames(s)[0]
    if seg.length == 0:
        return np.tile(seg.start, (len(fr), 1))
    if scene.metric.flat_chart:
        return seg.start + fr[:, None] * (seg.end - seg.start)
    P = np.tile(seg.start, (len(fr), 1))
    E, _ = exp_points(scene, P, fr[:, None] * seg.w, cfg.integrator)
    return E


def _seg_dirs(scene: Scene, seg: Segment) -> tuple[np.ndarray, np.ndarray]:
    """Unit chart directions at the start and end of a segment."""
    if seg.kind == "boundary":
        curve = scene.boundaries[seg.boundary]
        _, T0, _, _ = curve.frame(seg.s0 % curve.length)
        _, T1, _, _ = curve.frame((seg.s0 + seg.direction * seg.length) % curve.length)
        return seg.direction * T0, seg.direction * T1
    return seg.w, seg.v_end


@dataclass
class PGeodesicPath:
    """Concatenation of segments; ``energy`` is for the constant-speed unit-interval parameterization."""

    segments: list[Segment]
    length: float
    energy: float
    angle_defects: list[float]
    unique: bool = True
    converged: bool = True
    winding: np.ndarray | None = None

    @property
    def start(self) -> np.ndarray:
        return self.segments[0].start

    @property
    def end(self) -> np.ndarray:
        return self.segments[-1].end

    def points(self, scene: Scene, n: int = 200, cfg: PGeoCfg | None = None) -> np.ndarray:
        return self.point_at(scene, np.linspace(0.0, 1.0, n), cfg)

    def point_at(self, scene: Scene, ts, cfg: PGeoCfg | None = None) -> np.ndarray:
        """Points at parameters ``ts`` in ``[0, 1]``, proportional to arclength."""
        cfg = cfg or PGeoCfg()
        ts = np.atleast_1d(np.asarray(ts, float))
        if self.length == 0:
            return np.tile(self.start, (len(ts), 1))
        cum = np.r_[0.0, np.cumsum([s.length for s in self.segments])] / self.length
        out = np.empty((len(ts), 2))
        k = np.clip(np.searchsorted(cum, ts, side="right") - 1, 0, len(self.segments) - 1)
        for j in np.unique(k):
            rows = k == j
            seg = self.segments[j]
            span = cum[j + 1] - cum[j]
            fr = np.clip((ts[rows] - cum[j]) / span, 0.0, 1.0) if span > 0 else np.zeros(rows.sum())
            out[rows] = _seg_points(scene, seg, fr, cfg)
        return out

    def to_json(self) -> dict:
        return {
            "length": float(self.length),
            "energy": float(self.energy),
            "angle_defects": [float(a) for a in self.angle_defects],
            "unique": bool(self.unique),
            "converged": bool(self.converged),
            "winding": None if self.winding is None else [float(x) for x in self.winding],
            "segments": [s.to_dict() for s in self.segments],
        }


@dataclass
class PiecewiseKnots:
    """Partition ``0 = t_0 < ... < t_k = 1`` and knots ``x_0, ..., x_k``."""

    t: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, float)
        self.x = np.asarray(self.x, float)
        if self.t.ndim != 1 or len(self.t) < 2 or self.x.shape != (len(self.t), 2):
            raise ValueError("need k+1 partition points and k+1 knots of shape (k+1, 2)")
        if abs(self.t[0]) > 1e-15 or abs(self.t[-1] - 1) > 1e-15 or np.any(np.diff(self.t) <= 0):
            raise ValueError("partition must increase strictly from 0 to 1")

    @property
    def k(self) -> int:
        return len(self.t) - 1

    @classmethod
    def uniform(cls, x) -> "PiecewiseKnots":
        x = np.asarray(x, float)
        return cls(np.linspace(0.0, 1.0, len(x)), x)


# --------------------------------------------------------------------------
# Two-point geodesics
# --------------------------------------------------------------------------

def _lift(scene: Scene, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Target lift nearest to the start in periodic revolution charts."""
    if scene.metric.family != "SurfaceOfRevolution":
        return Q
    Q = Q.copy()
    Q[:, 1] = P[:, 1] + (Q[:, 1] - P[:, 1] + math.pi) % (2 * math.pi) - math.pi
    return Q


def _shoot(scene: Scene, P: np.ndarray, Q: np.ndarray, W0: np.ndarray, cfg: PGeoCfg):
    """Newton on ``exp_P(W) = Q`` with a finite-difference Jacobian; rows converge independently."""
    W = W0.astype(float).copy()
    ok = np.zeros(len(P), dtype=bool)
    live = np.ones(len(P), dtype=bool)
    E = np.full_like(P, np.nan)
    V = np.full_like(P, np.nan)
    best = np.full(len(P), np.inf)
    stall = np.zeros(len(P), dtype=int)
    for _ in range(cfg.max_newton):
        idx = np.nonzero(live)[0]
        if not len(idx):
            break
        Ei, Vi = exp_points(scene, P[idx], W[idx], cfg.integrator)
        E[idx], V[idx] = Ei, Vi
        F = Ei - Q[idx]
        err = np.max(np.abs(F), axis=1)
        bad = ~np.isfinite(err)
        good = err < cfg.shoot_tol
        ok[idx[good]] = True
        # give up on rows that stop improving
        improved = err < 0.5 * best[idx]
        stall[idx] = np.where(improved, 0, stall[idx] + 1)
        best[idx] = np.minimum(best[idx], err)
        bad |= stall[idx] >= 4
        live[idx[good | bad]] = False
        step_rows = ~(good | bad)
        if not np.any(step_rows):
            continue
        j = idx[step_rows]
        Wj = W[j]
        eps = 1e-7 * np.maximum(np.hypot(Wj[:, 0], Wj[:, 1]), 1e-6)
        E1, _ = exp_points(scene, P[j], Wj + np.stack([eps, 0 * eps], 1), cfg.integrator)
        E2, _ = exp_points(scene, P[j], Wj + np.stack([0 * eps, eps], 1), cfg.integrator)
        J = np.stack([(E1 - Ei[step_rows]) / eps[:, None], (E2 - Ei[step_rows]) / eps[:, None]], axis=2)
        with np.errstate(all="ignore"):
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            Fj = F[step_rows]
            d0 = -(J[:, 1, 1] * Fj[:, 0] - J[:, 0, 1] * Fj[:, 1]) / det
            d1 = -(-J[:, 1, 0] * Fj[:, 0] + J[:, 0, 0] * Fj[:, 1]) / det
        dW = np.stack([d0, d1], 1)
        # damp steps longer than half the current vector
        nW = np.hypot(Wj[:, 0], Wj[:, 1])
        nd = np.hypot(dW[:, 0], dW[:, 1])
        scale = np.where(nd > 0.5 * nW + 1e-3, (0.5 * nW + 1e-3) / np.where(nd > 0, nd, 1), 1.0)
        W[j] = Wj + dW * scale[:, None]
        fin = np.all(np.isfinite(W[j]), axis=1)
        live[j[~fin]] = False
    return W, V, ok


def _geodesics(scene: Scene, P: np.ndarray, Q: np.ndarray, cfg: PGeoCfg, starts=(0.0,)):
    """Interior geodesics ``P -> Q`` per row and per start rotation.

    Returns lists (one per start) of ``(length, W, V_end, ok)``.
    """
    m = scene.metric
    P = np.atleast_2d(np.asarray(P, float))
    Q = _lift(scene, P, np.atleast_2d(np.asarray(Q, float)))
    D = Q - P
    if m.flat_chart:
        lam = float(m.lam(0.0, 0.0))
        L = lam * np.hypot(D[:, 0], D[:, 1])
        return [(L, D.copy(), D.copy(), np.ones(len(P), dtype=bool))]
    out = []
    same = np.hypot(D[:, 0], D[:, 1]) == 0
    for rot in starts:
        c, s = math.cos(rot), math.sin(rot)
        W0 = np.stack([c * D[:, 0] - s * D[:, 1], s * D[:, 0] + c * D[:, 1]], 1)
        W = np.zeros_like(P)
        V = np.zeros_like(P)
        ok = same.copy()
        rows = ~same
        if np.any(rows):
            W[rows], V[rows], ok[rows] = _shoot(scene, P[rows], Q[rows], W0[rows], cfg)
        L = m.norm(P[:, 0], P[:, 1], W)
        out.append((L, W, V, ok))
    return out


# --------------------------------------------------------------------------
# Admissibility
# --------------------------------------------------------------------------

def _holes(scene: Scene) -> list[np.ndarray]:
    return [np.array(c.shape.center) for c in scene.boundaries
            if isinstance(c.shape, Circle) and c.shape.interior == "outside"]


def _segment_clear(scene: Scene, P: np.ndarray, Q: np.ndarray, W: np.ndarray | None, cfg: PGeoCfg,
                   tol: float = 1e-10) -> np.ndarray:
    """Whether the interior geodesic from each ``P`` stays in the closed domain."""
    P = np.atleast_2d(P)
    Q = np.atleast_2d(Q)
    n = len(P)
    ok = np.ones(n, dtype=bool)
    if scene.metric.flat_chart:
        D = Q - P
        dd = np.maximum(np.sum(D * D, axis=1), 1e-300)
        for curve in scene.boundaries:
            sh = curve.shape
            if isinstance(sh, Circle):
                c = np.array(sh.center)
                tt = np.clip(np.sum((c - P) * D, axis=1) / dd, 0, 1)
                dist = np.hypot(*(P + tt[:, None] * D - c).T)
                if sh.interior == "outside":
                    ok &= dist >= sh.radius * (1 - tol)
                else:
                    ok &= np.hypot(*(P - c).T) <= sh.radius * (1 + tol)
                    ok &= np.hypot(*(Q - c).T) <= sh.radius * (1 + tol)
            else:
                fr = np.linspace(0, 1, 4 * cfg.n_clear_samples)
                pts = P[None] + fr[:, None, None] * D[None]
                ok &= np.all(curve.level(pts[..., 0], pts[..., 1]) >= -tol, axis=0)
        return ok
    fr = np.linspace(0, 1, cfg.n_clear_samples)[1:-1]
    PP = np.repeat(P, len(fr), axis=0)
    WW = (W[:, None, :] * fr[None, :, None]).reshape(-1, 2)
    E, _ = exp_points(scene, PP, WW, cfg.integrator)
    lev = scene.level(E[:, 0], E[:, 1]).reshape(n, len(fr))
    return ok & np.all(np.nan_to_num(lev, nan=-1.0) >= -tol, axis=1)


def _nonconvex_arcs(scene: Scene) -> dict[int, list]:
    out: dict[int, list] = {}
    for arc in scene.classification.arcs:
        if arc.cls in (S_MINUS, S_ZERO):
            out.setdefault(arc.boundary, []).append(arc)
    return out


def _on_nonconvex(scene: Scene, b: int, s: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    cls = scene.classification
    return np.array([cls.class_at(b, float(x), tol) != S_PLUS for x in np.atleast_1d(s)])


# --------------------------------------------------------------------------
# Tangent points
# --------------------------------------------------------------------------

def _on_boundary(scene: Scene, b: int, x: np.ndarray, tol: float = 1e-12) -> bool:
    return abs(float(scene.boundaries[b].level(np.asarray(x[0]), np.asarray(x[1])))) <= tol


def _tangent_points(scene: Scene, b: int, x: np.ndarray, cfg: PGeoCfg) -> list[tuple[float, int, float, np.ndarray, np.ndarray]]:
    """Boundary points ``c(s)`` of ``b`` whose geodesic to ``x`` leaves tangentially.

    Returns ``(s, sigma, length, u, v_end)``: ``u`` is the initial velocity at
    ``c(s)`` toward ``x`` and ``sigma = sign g(u, T)``. A point on the
    boundary is its own tangent point in both directions.
    """
    memo = scene.__dict__.setdefault("_tangent_memo", {})
    key = (b, float(x[0]), float(x[1]), cfg.n_tangent_samples, cfg.shoot_tol)
    if key not in memo:
        if len(memo) > 20000:
            memo.clear()
        memo[key] = _tangent_points_uncached(scene, b, x, cfg)
    return memo[key]


def _tangent_points_uncached(scene: Scene, b: int, x: np.ndarray, cfg: PGeoCfg):
    curve = scene.boundaries[b]
    m = scene.metric
    out = []
    if _on_boundary(scene, b, x):
        s = curve.s_of_point(float(x[0]), float(x[1]))
        z = np.zeros(2)
        return [(s, 1, 0.0, z, z), (s, -1, 0.0, z, z)]
    sh = curve.shape
    if m.flat_chart and isinstance(sh, Circle):
        c = np.array(sh.center)
        d = x - c
        D = math.hypot(*d)
        if D <= sh.radius:
            return []
        base = math.atan2(d[1], d[0])
        half = math.acos(sh.radius / D)
        for sgn in (1, -1):
            a = base + sgn * half
            pt = c + sh.radius * np.array([math.cos(a), math.sin(a)])
            s = curve.s_of_point(pt[0], pt[1])
            _, T, _, _ = curve.frame(s)
            u = x - pt
            sigma = 1 if float(np.dot(u, T)) > 0 else -1
            out.append((s, sigma, float(m.norm(pt[0], pt[1], u)), u, u))
        return out
    n = cfg.n_tangent_samples or (512 if m.flat_chart else 96)
    s = np.arange(n) * (curve.length / n)
    cache = curve.__dict__.setdefault("_sample_frames", {})
    if n not in cache:
        cache[n] = curve.frames(s)

    def evaluate(svals, frames=None, W0=None):
        p, T, nu, _ = frames if frames is not None else curve.frames(np.atleast_1d(svals))
        X = np.tile(x, (len(p), 1))
        if W0 is None or m.flat_chart:
            L, U, V, ok = _geodesics(scene, p, X, cfg)[0]
        else:
            U, V, ok = _shoot(scene, p, _lift(scene, p, X), np.atleast_2d(W0), cfg)
            L = m.norm(p[:, 0], p[:, 1], U)
        un = m.norm(p[:, 0], p[:, 1], U)
        with np.errstate(all="ignore"):
            F = m.inner(p[:, 0], p[:, 1], U, nu) / un
            G = m.inner(p[:, 0], p[:, 1], U, T) / un
        return np.where(ok, F, np.nan), G, L, U, V

    F, G, _, U0, _ = evaluate(s, cache[n])
    for k in range(n):
        k2 = (k + 1) % n
        if not (np.isfinite(F[k]) and np.isfinite(F[k2])) or F[k] * F[k2] > 0:
            continue
        lo, hi = s[k], s[k] + curve.length / n
        if not np.any(_on_nonconvex(scene, b, np.array([lo, hi]) % curve.length)):
            continue
        h = curve.length / n

        def warm(z):
            f = (z - lo) / h
            return (1 - f) * U0[k] + f * U0[k2]

        try:
            r = brentq(lambda z: float(evaluate(z % curve.length, W0=warm(z))[0][0]), lo, hi, xtol=1e-14, rtol=1e-15)
        except ValueError:
            continue
        Fr, Gr, Lr, Ur, Vr = evaluate(r % curve.length, W0=warm(r))
        r %= curve.length
        out.append((r, 1 if Gr[0] > 0 else -1, float(Lr[0]), Ur[0], Vr[0]))
    return out


# --------------------------------------------------------------------------
# Candidates and the local p-geodesic
# --------------------------------------------------------------------------

def _interior_candidates(scene: Scene, p: np.ndarray, q: np.ndarray, cfg: PGeoCfg) -> list[PGeodesicPath]:
    starts = (0.0,) if scene.metric.flat_chart else (0.0, 0.3, -0.3)
    sols = _geodesics(scene, p[None], q[None], cfg, starts)
    out = []
    for L, W, V, ok in sols:
        if not ok[0]:
            continue
        if any(np.allclose(W[0], c.segments[0].w, atol=1e-7) for c in out):
            continue
        qq = _lift(scene, p[None], q[None])[0]
        if not _segment_clear(scene, p[None], qq[None], W, cfg)[0]:
            continue
        seg = Segment("interior", p.copy(), q.copy(), float(L[0]), W[0].copy(), V[0].copy())
        out.append(_make_path(scene, [seg]))
    return out


def _composite_candidates(scene: Scene, p: np.ndarray, q: np.ndarray, cfg: PGeoCfg) -> list[PGeodesicPath]:
    out = []
    for b in _nonconvex_arcs(scene):
        if scene.gluing is not None and scene.gluing.boundary == b:
            continue
        curve = scene.boundaries[b]
        L = curve.length
        tp = _tangent_points(scene, b, p, cfg)
        if not tp:
            continue
        tq = _tangent_points(scene, b, q, cfg)
        for sa, sig_a, la, ua, va in tp:
            da = -sig_a  # arrival direction at a is -u_a
            for sb, sig_b, lb, ub, vb in tq:
                if sig_b != da:
                    continue
                arc = ((sb - sa) * da) % L
                if arc < 1e-12 or arc > L - 1e-12:
                    continue
                fr = np.linspace(0, 1, 33)
                if not np.all(_on_nonconvex(scene, b, (sa + da * arc * fr) % L)):
                    continue
                a_pt = curve.frame(sa)[0]
                b_pt = curve.frame(sb)[0]
                segs = []
                if la > 0:
                    # geodesic p -> a is the reverse of a -> p
                    if not _segment_clear(scene, a_pt[None], p[None], ua[None], cfg)[0]:
                        continue
                    segs.append(Segment("interior", p.copy(), a_pt, la, -va.copy(), -ua.copy()))
                segs.append(Segment("boundary", a_pt, b_pt, arc, boundary=b, s0=sa, direction=da))
                if lb > 0:
                    if not _segment_clear(scene, b_pt[None], q[None], ub[None], cfg)[0]:
                        continue
                    segs.append(Segment("interior", b_pt, q.copy(), lb, ub.copy(), vb.copy()))
                out.append(_make_path(scene, segs))
    return out


def _make_path(scene: Scene, segs: list[Segment]) -> PGeodesicPath:
    L = float(sum(s.length for s in segs))
    defects = []
    for a, b in zip(segs[:-1], segs[1:]):
        defects.append(_angle(scene, a.end, _seg_dirs(scene, a)[1], _seg_dirs(scene, b)[0]))
    return PGeodesicPath(segs, L, L * L, defects)


def _angle(scene: Scene, at: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    m = scene.metric
    u, v = np.asarray(at[0]), np.asarray(at[1])
    na = float(m.norm(u, v, a))
    nb = float(m.norm(u, v, b))
    if na == 0 or nb == 0:
        return 0.0
    c = float(m.inner(u, v, a, b)) / (na * nb)
    return math.acos(max(-1.0, min(1.0, c)))


def pgeodesic_candidates(scene: Scene, p, q, cfg: PGeoCfg | None = None) -> list[PGeodesicPath]:
    """All admissible candidates between ``p`` and ``q``, shortest first."""
    cfg = cfg or PGeoCfg()
    p = np.asarray(getattr(p, "as_array", lambda: p)(), float)
    q = np.asarray(getattr(q, "as_array", lambda: q)(), float)
    if np.array_equal(p, q):
        seg = Segment("interior", p.copy(), q.copy(), 0.0, np.zeros(2), np.zeros(2))
        return [PGeodesicPath([seg], 0.0, 0.0, [])]
    cands = _interior_candidates(scene, p, q, cfg) + _composite_candidates(scene, p, q, cfg)
    cands.sort(key=lambda c: c.length)
    return cands


def local_pgeodesic(scene: Scene, p, q, cfg: PGeoCfg | None = None) -> PGeodesicPath:
    """The shortest admissible p-geodesic from ``p`` to ``q``.

    ``unique`` is False when another distinct candidate is within ``path_tol``.
    Raises :class:`NoConvergence` when no candidate is found.
    """
    cfg = cfg or PGeoCfg()
    cands = pgeodesic_candidates(scene, p, q, cfg)
    if not cands:
        raise NoConvergence(f"no admissible p-geodesic between {p!r} and {q!r}")
    best = cands[0]
    best.unique = not (len(cands) > 1 and cands[1].length - best.length <= cfg.path_tol)
    best.winding = winding_angles(scene, best.points(scene, 64, cfg))
    return best


# --------------------------------------------------------------------------
# Homotopy bookkeeping
# --------------------------------------------------------------------------

def winding_angles(scene: Scene, pts: np.ndarray) -> np.ndarray:
    """Angle swept around each hole (hole centres, or the axis of a revolution chart)."""
    pts = np.asarray(pts, float)
    if scene.metric.family == "SurfaceOfRevolution":
        return np.array([pts[-1, 1] - pts[0, 1]])
    out = []
    for c in _holes(scene):
        ang = np.unwrap(np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0]))
        out.append(ang[-1] - ang[0])
    return np.array(out)


def same_homotopy_class(w1: np.ndarray, w2: np.ndarray) -> bool:
    """Paths with equal endpoints are homotopic iff their winding angles agree (no extra turns)."""
    w1, w2 = np.asarray(w1), np.asarray(w2)
    return bool(np.all(np.round((w1 - w2) / (2 * math.pi)) == 0))


# --------------------------------------------------------------------------
# Energy, uniqueness radius
# --------------------------------------------------------------------------

def _distance(scene: Scene, p: np.ndarray, q: np.ndarray, cfg: PGeoCfg) -> float:
    return local_pgeodesic(scene, p, q, cfg).length


def knot_distances(scene: Scene, X, cfg: PGeoCfg | None = None) -> np.ndarray:
    """Local p-geodesic distances between consecutive knots of ``X`` with shape ``(m, k+1, 2)``.

    Scenes without non-convex boundary arcs are handled in one batched
    shooting pass; otherwise each pair is solved separately.
    """
    cfg = cfg or PGeoCfg()
    X = np.asarray(X, float)
    m, n = X.shape[0], X.shape[1] - 1
    P = X[:, :-1].reshape(-1, 2)
    Q = X[:, 1:].reshape(-1, 2)
    if _nonconvex_arcs(scene):
        d = np.array([_distance(scene, a, b, cfg) for a, b in zip(P, Q)])
        return d.reshape(m, n)
    L, W, _, ok = _geodesics(scene, P, Q, cfg)[0]
    if np.any(ok):
        ok[ok] = _segment_clear(scene, P[ok], _lift(scene, P[ok], Q[ok]), W[ok], cfg)
    for j in np.nonzero(~ok)[0]:
        L[j] = _distance(scene, P[j], Q[j], cfg)
    return L.reshape(m, n)


def piecewise_energy(scene: Scene, knots: PiecewiseKnots, b: float | None = None,
                     cfg: PGeoCfg | None = None) -> float:
    """``sum d(x_i, x_{i+1})**2 / (t_{i+1} - t_i)`` with ``d`` the local p-geodesic distance.

    Raises :class:`KnotSpacingError` if a knot pair is farther apart than ``b``.
    """
    d = knot_distances(scene, knots.x[None], cfg)[0]
    if b is not None and np.any(d > b):
        i = int(np.argmax(d > b))
        raise KnotSpacingError(f"knots {i} and {i + 1} are {d[i]:.6g} apart, beyond b = {b:.6g}")
    return float(np.sum(d * d / np.diff(knots.t)))


def piecewise_energies(scene: Scene, t, X, cfg: PGeoCfg | None = None) -> np.ndarray:
    """Energies of many knot sets ``X`` (shape ``(m, k+1, 2)``) on the shared partition ``t``."""
    d = knot_distances(scene, X, cfg)
    return np.sum(d * d / np.diff(np.asarray(t, float))[None], axis=1)


def _probe_points(scene: Scene, n_boundary: int, n_interior: int, seed: int, region) -> np.ndarray:
    rng = np.random.default_rng(seed)
    pts = []
    for i in scene.open_boundaries:
        c = scene.boundaries[i]
        pts.append(c.frames(np.arange(n_boundary) * (c.length / n_boundary))[0])
    bpts = np.concatenate(pts)
    lo, hi = bpts.min(axis=0), bpts.max(axis=0)
    inner = []
    while len(inner) < n_interior:
        z = lo + (hi - lo) * rng.random((4 * n_interior, 2))
        z = z[scene.level(z[:, 0], z[:, 1]) > 1e-6]
        inner.extend(z[: n_interior - len(inner)])
    allp = np.concatenate([bpts, np.array(inner).reshape(-1, 2)])
    if region is not None:
        c = np.asarray(region["center"], float)
        allp = allp[np.hypot(*(allp - c).T) <= float(region["radius"])]
    return allp


def uniqueness_radius(scene: Scene, region: dict | None = None, n_boundary: int = 48, n_interior: int = 16,
                      seed: int = 0, tol: float = 1e-6, cfg: PGeoCfg | None = None) -> float:
    """Sampled lower bound for the uniqueness radius of ``scene`` (or of a chart ball ``region``).

    Probes are boundary samples and seeded interior points. A pair is
    ambiguous when two distinct candidates tie to ``path_tol``. The result is
    the largest radius, found by bisection, below which no probed pair is
    ambiguous, capped by the largest probed distance.
    """
    cfg = cfg or PGeoCfg()
    pts = _probe_points(scene, n_boundary, n_interior, seed, region)
    I, J = np.triu_indices(len(pts), 1)
    P, Q = pts[I], pts[J]
    # interior candidates for every pair at once
    starts = (0.0,) if scene.metric.flat_chart else (0.0, 0.3, -0.3)
    Ql = _lift(scene, P, Q)
    lengths = []
    sols = []
    for L, W, V, ok in _geodesics(scene, P, Q, cfg, starts):
        ok = ok.copy()
        if np.any(ok):
            ok[ok] = _segment_clear(scene, P[ok], Ql[ok], W[ok], cfg)
        lengths.append(np.where(ok, L, np.inf))
        sols.append(W)
    lengths = np.array(lengths)
    # drop repeated solutions from different starts
    for a in range(1, len(sols)):
        for c in range(a):
            dup = np.all(np.abs(sols[a] - sols[c]) < 1e-7, axis=1) & np.isfinite(lengths[c])
            lengths[a, dup] = np.inf
    has_arcs = bool(_nonconvex_arcs(scene))
    dists, ambiguous = [], []
    for n in range(len(P)):
        cand = sorted(x for x in lengths[:, n] if np.isfinite(x))
        if has_arcs:
            cand = sorted(cand + [c.length for c in _composite_candidates(scene, P[n], Q[n], cfg)])
        if not cand:
            continue
        dists.append(cand[0])
        ambiguous.append(len(cand) > 1 and cand[1] - cand[0] <= cfg.path_tol)
    dists = np.array(dists)
    ambiguous = np.array(ambiguous, dtype=bool)
    cap = float(min(dists.max(), float(scene.diameter))) if len(dists) else 0.0

    def bad(b):
        return bool(np.any(ambiguous & (dists <= b)))

    if not bad(cap):
        return cap
    lo, hi = 0.0, cap
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if bad(mid):
            hi = mid
        else:
            lo = mid
    return lo


@functools.lru_cache(maxsize=32)
def _cached_radius(key: str, scene_ref) -> float:
    return uniqueness_radius(scene_ref())


def _scene_radius(scene: Scene) -> float:
    key = json.dumps(scene.spec, sort_keys=True) if scene.spec else f"id:{id(scene)}"
    return _cached_radius(key, lambda: scene)


# --------------------------------------------------------------------------
# Curve shortening
# --------------------------------------------------------------------------

@dataclass
class ShortenResult:
    path: PGeodesicPath
    knots: PiecewiseKnots
    energies: list[float]
    sweeps: int
    converged: bool
    homotopy_preserved: bool

    @property
    def monotone(self) -> bool:
        e = np.asarray(self.energies)
        return bool(np.all(np.diff(e) <= 1e-12 * np.maximum(1.0, e[:-1])))


def polyline_length(scene: Scene, pts: np.ndarray, sub: int = 8) -> np.ndarray:
    """Cumulative metric length along a chart polyline (midpoint rule on ``sub`` pieces per edge)."""
    pts = np.asarray(pts, float)
    d = np.diff(pts, axis=0)
    fr = (np.arange(sub) + 0.5) / sub
    mids = pts[:-1, None, :] + fr[None, :, None] * d[:, None, :]
    dd = np.repeat(d[:, None, :] / sub, sub, axis=1)
    ln = scene.metric.norm(mids[..., 0], mids[..., 1], dd).sum(axis=1)
    return np.r_[0.0, np.cumsum(ln)]


def _resample(scene: Scene, pts: np.ndarray, k: int) -> np.ndarray:
    cum = polyline_length(scene, pts)
    target = np.linspace(0, cum[-1], k + 1)
    j = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, len(pts) - 2)
    span = np.where(cum[j + 1] > cum[j], cum[j + 1] - cum[j], 1.0)
    f = np.clip((target - cum[j]) / span, 0, 1)
    out = pts[j] + f[:, None] * (pts[j + 1] - pts[j])
    out[0], out[-1] = pts[0], pts[-1]
    return out


def _knot_paths(scene: Scene, x: np.ndarray, cfg: PGeoCfg) -> list[PGeodesicPath]:
    return [local_pgeodesic(scene, x[i], x[i + 1], cfg) for i in range(len(x) - 1)]


def _energy(paths, t) -> float:
    return float(sum(p.length ** 2 / (t[i + 1] - t[i]) for i, p in enumerate(paths)))


def _join_defects(scene: Scene, paths: list[PGeodesicPath]) -> list[float]:
    out = []
    for a, b in zip(paths[:-1], paths[1:]):
        if a.length == 0 or b.length == 0:
            continue
        out.append(_angle(scene, a.end, _seg_dirs(scene, a.segments[-1])[1], _seg_dirs(scene, b.segments[0])[0]))
    return out


def _concatenate(scene: Scene, paths: list[PGeodesicPath], cfg: PGeoCfg) -> PGeodesicPath:
    segs = []
    for p in paths:
        for s in p.segments:
            if s.length == 0:
                continue
            if segs and s.kind == "boundary" and segs[-1].kind == "boundary" and s.boundary == segs[-1].boundary \
                    and s.direction == segs[-1].direction:
                prev = segs[-1]
                segs[-1] = replace(prev, end=s.end, length=prev.length + s.length)
                continue
            if segs and s.kind == "interior" and segs[-1].kind == "interior" and scene.metric.flat_chart:
                prev = segs[-1]
                if _angle(scene, prev.end, prev.v_end, s.w) < cfg.join_tol:
                    D = s.end - prev.start
                    segs[-1] = Segment("interior", prev.start, s.end, prev.length + s.length, D, D)
                    continue
            segs.append(s)
    if not segs:
        segs = [paths[0].segments[0]]
    out = _make_path(scene, segs)
    return out


def shorten(scene: Scene, path, cfg: PGeoCfg | None = None, b: float | None = None,
            k: int | None = None) -> ShortenResult:
    """Discrete curve shortening from a chart polyline (``(n, 2)`` array) or a :class:`PGeodesicPath`.

    The partition is uniform with ``k`` intervals, chosen so that
    ``t_{i+1} - t_i < b**2 / E``; it doubles whenever a knot pair drifts
    beyond ``b``. Sweeps stop when the relative energy decrease drops below
    ``etol`` and every join angle is below ``join_tol``.
    """
    cfg = cfg or PGeoCfg()
    if isinstance(path, PGeodesicPath):
        pts = path.points(scene, 257, cfg)
    else:
        pts = np.asarray(path, float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("polyline must have shape (n, 2) with n >= 2")
    b = b if b is not None else _scene_radius(scene)
    L0 = float(polyline_length(scene, pts)[-1])
    if k is None:
        k = max(cfg.k_min, int(math.ceil((L0 / b) ** 2)) + 1 if b > 0 else cfg.k_min)
    w0 = winding_angles(scene, pts)
    x = _resample(scene, pts, k)
    t = np.linspace(0, 1, k + 1)
    paths = _knot_paths(scene, x, cfg)
    energies = [_energy(paths, t)]
    converged = False
    sweeps = 0
    while sweeps < cfg.max_sweeps:
        sweeps += 1
        for parity in (1, 0):
            for i in range(1 + (1 - parity), len(x) - 1, 2):
                pg = local_pgeodesic(scene, x[i - 1], x[i + 1], cfg)
                frac = (t[i] - t[i - 1]) / (t[i + 1] - t[i - 1])
                x[i] = pg.point_at(scene, [frac], cfg)[0]
        paths = _knot_paths(scene, x, cfg)
        if any(p.length > b for p in paths):
            # refine: insert the midpoint of every knot pair
            mids = np.array([p.point_at(scene, [0.5], cfg)[0] for p in paths])
            xn = np.empty((2 * len(x) - 1, 2))
            xn[0::2] = x
            xn[1::2] = mids
            x = xn
            t = np.linspace(0, 1, len(x))
            paths = _knot_paths(scene, x, cfg)
        E = _energy(paths, t)
        dE = energies[-1] - E
        energies.append(E)
        defects = _join_defects(scene, paths)
        if dE < cfg.etol * max(E, 1e-300) and (not defects or max(defects) < cfg.join_tol):
            converged = True
            break
    out = _concatenate(scene, paths, cfg)
    out.converged = converged
    out.winding = winding_angles(scene, out.points(scene, 513, cfg))
    kn = PiecewiseKnots(t, x)
    return ShortenResult(out, kn, energies, sweeps, converged, same_homotopy_class(w0, out.winding))
