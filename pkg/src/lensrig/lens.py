"""
Comparing two scenes through a boundary isometry.

A boundary isometry ``h`` pairs boundary circles of ``M`` and ``N`` and maps
arclength by ``s -> sigma * s + s0``. It induces a map ``phi`` on boundary
unit vectors that fixes the normal component and pushes the tangential one
forward, which in ``(s, theta)`` coordinates is ``theta -> theta`` for
``sigma = +1`` and ``theta -> pi - theta`` for ``sigma = -1``.

:func:`compare` traces a grid in both scenes, checks
``phi(alpha_M(X)) == alpha_N(phi(X))`` and records the excess
``e(X) = tau_N(phi(X)) - tau_M(X)``. Grid samples are grouped into
families: neighbours (periodic in ``s``) whose geodesics have the same
exit boundary and gluing count in both scenes and no tangency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .domain import S_MINUS, S_PLUS, Scene
from .flow import IntegratorCfg, ScatterGrid, ScatteringTable, scattering_map

__all__ = [
    "BoundaryMatch",
    "BoundaryIsometry",
    "LensCfg",
    "LensComparison",
    "NonConstantFamily",
    "NonConvergentLimit",
    "induced_phi",
    "compare",
    "excess",
    "pair_excess",
    "first_variation_check",
    "tangent_limit_excess",
    "direction_convexity",
]


class NonConstantFamily(ValueError):
    def __init__(self, family: int, spread: float):
        super().__init__(f"excess is not constant on family {family}: spread {spread:.3e}")
        self.family = family
        self.spread = spread


class NonConvergentLimit(ValueError):
    def __init__(self, tail: list[float]):
        spread = max(tail) - min(tail)
        super().__init__(f"tangent-limit sequence did not settle: tail spread {spread:.3e}")
        self.tail = tail
        self.spread = spread


@dataclass(frozen=True)
class BoundaryMatch:
    source: int
    target: int
    sigma: int = 1
    shift: float = 0.0


@dataclass
class BoundaryIsometry:
    """Arclength isometry between open boundaries of ``M`` and ``N``."""

    matches: dict[int, BoundaryMatch]
    lengths_M: list[float]
    lengths_N: list[float]

    @classmethod
    def from_rows(cls, M: Scene, N: Scene, rows: list[dict], tol: float = 1e-9) -> "BoundaryIsometry":
        matches = {}
        LM = [c.length for c in M.boundaries]
        LN = [c.length for c in N.boundaries]
        for k, row in enumerate(rows):
            a, b = int(row["from"]), int(row["to"])
            sigma = int(row.get("sigma", 1))
            if sigma not in (1, -1):
                raise ValueError(f"isometry row {k}: sigma must be +1 or -1")
            if not (0 <= a < len(LM) and 0 <= b < len(LN)):
                raise IndexError(f"isometry row {k}: boundary index out of range")
            if abs(LM[a] - LN[b]) > tol * max(1.0, LM[a]):
                raise ValueError(
                    f"isometry row {k}: boundary lengths differ ({LM[a]!r} vs {LN[b]!r})")
            matches[a] = BoundaryMatch(a, b, sigma, float(row.get("shift", 0.0)))
        return cls(matches, LM, LN)

    @classmethod
    def identity(cls, M: Scene, N: Scene | None = None) -> "BoundaryIsometry":
        N = N or M
        rows = [{"from": i, "to": i} for i in M.open_boundaries]
        return cls.from_rows(M, N, rows)

    def rows(self) -> list[dict]:
        return [{"from": m.source, "to": m.target, "sigma": m.sigma, "shift": m.shift} for m in self.matches.values()]


def induced_phi(h: BoundaryIsometry, v) -> tuple[int, float, float]:
    """Push ``(boundary, s, theta)`` (or ``(s, theta)`` on boundary 0) through ``h``.

    Works for inward and outgoing angle conventions alike, ``theta`` in ``[0, pi]``.
    """
    if len(v) == 2:
        b, (s, theta) = 0, v
    else:
        b, s, theta = v
    b = int(b)
    if b not in h.matches:
        raise KeyError(f"boundary {b} of M has no partner under h")
    m = h.matches[b]
    L = h.lengths_N[m.target]
    s2 = (m.sigma * s + m.shift) % L
    th2 = theta if m.sigma == 1 else math.pi - theta
    return m.target, s2, th2


def _phi_arrays(h: BoundaryIsometry, b: int, s: np.ndarray, theta: np.ndarray):
    m = h.matches[b]
    L = h.lengths_N[m.target]
    s2 = (m.sigma * np.asarray(s, float) + m.shift) % L
    th2 = np.asarray(theta, float) if m.sigma == 1 else math.pi - np.asarray(theta, float)
    return m.target, s2, th2


@dataclass(frozen=True)
class LensCfg:
    """Comparison settings.

    ``scat_tol`` defaults to 20 times the integrator's ``event_tol`` and
    ``lens_tol`` to ``1e-4`` times the diameter of ``M``. The default
    integrator runs two orders tighter than a single trace so that its
    error sits well below ``scat_tol``.
    """

    integrator: IntegratorCfg = field(default_factory=lambda: IntegratorCfg(rtol=1e-11, atol=1e-13))
    scat_tol: float | None = None
    lens_tol: float | None = None

    def tolerances(self, M: Scene) -> tuple[float, float]:
        scat = self.scat_tol if self.scat_tol is not None else 20.0 * self.integrator.event_tol
        lens = self.lens_tol if self.lens_tol is not None else 1e-4 * float(M.diameter)
        return scat, lens


@dataclass
class LensComparison:
    """Per-sample comparison data and family statistics."""

    M: Scene
    N: Scene
    h: BoundaryIsometry
    cfg: LensCfg
    grid: ScatterGrid
    table_M: ScatteringTable
    table_N: ScatteringTable
    residual_s: np.ndarray
    residual_theta: np.ndarray
    scat_match: np.ndarray
    e: np.ndarray
    excluded: list[str | None]
    family: np.ndarray
    families: list[dict]
    scat_tol: float
    lens_tol: float

    @property
    def s(self) -> np.ndarray:
        return self.table_M.s

    @property
    def theta(self) -> np.ndarray:
        return self.table_M.theta

    @property
    def verdict(self) -> dict:
        ok = np.array([x is None for x in self.excluded])
        scattering = bool(np.all(self.scat_match[ok])) and bool(np.any(ok))
        lens = scattering and bool(np.all(np.abs(self.e[ok]) < self.lens_tol))
        return {"scattering": scattering, "lens": lens}

    def family_of(self, k: int) -> int:
        return int(self.family[k])

    def family_stats(self, fid: int) -> dict:
        return next(f for f in self.families if f["id"] == fid)

    def to_json(self) -> dict:
        ok = np.array([x is None for x in self.excluded])
        res = np.hypot(self.residual_s, self.residual_theta)
        reasons: dict[str, int] = {}
        for x in self.excluded:
            if x is not None:
                reasons[x] = reasons.get(x, 0) + 1
        return {
            "M": self.M.name,
            "N": self.N.name,
            "verdict": self.verdict,
            "tolerances": {"scat_tol": self.scat_tol, "lens_tol": self.lens_tol},
            "families": [dict(f) for f in self.families],
            "residuals": {
                "max_s": float(np.max(self.residual_s[ok])) if ok.any() else None,
                "max_theta": float(np.max(self.residual_theta[ok])) if ok.any() else None,
                "max_combined": float(np.max(res[ok])) if ok.any() else None,
            },
            "excluded": reasons,
        }

    def rows(self) -> list[dict]:
        out = []
        for k in range(len(self.e)):
            out.append({
                "s": float(self.s[k]), "theta": float(self.theta[k]),
                "scat_match": bool(self.scat_match[k]),
                "res_s": float(self.residual_s[k]), "res_theta": float(self.residual_theta[k]),
                "e": float(self.e[k]), "family": int(self.family[k]),
                "excluded": self.excluded[k] or "",
            })
        return out

    def to_csv(self) -> str:
        cols = ["s", "theta", "scat_match", "res_s", "res_theta", "e", "family", "excluded"]
        lines = [",".join(cols)]
        for row in self.rows():
            vals = []
            for c in cols:
                x = row[c]
                vals.append(("true" if x else "false") if isinstance(x, bool) else repr(x) if isinstance(x, float) else str(x))
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


def _circ(d: np.ndarray, L: float) -> np.ndarray:
    return np.abs((d + 0.5 * L) % L - 0.5 * L)


def compare(M: Scene, N: Scene, h: BoundaryIsometry | None = None, grid: ScatterGrid | None = None,
            cfg: LensCfg | None = None) -> LensComparison:
    """Scattering and lens comparison of ``M`` and ``N`` rel ``h`` on a grid of ``M``."""
    cfg = cfg or LensCfg()
    h = h or BoundaryIsometry.identity(M, N)
    grid = grid or ScatterGrid(theta_margin=cfg.integrator.theta_margin)
    b = grid.boundary
    if b not in h.matches:
        raise ValueError(f"grid boundary {b} has no partner under h")
    scat_tol, lens_tol = cfg.tolerances(M)
    tM = scattering_map(M, grid, cfg.integrator)
    bN, sN, thN = _phi_arrays(h, b, tM.s, tM.theta)
    tN = scattering_map(N, replace(grid, boundary=bN), cfg.integrator, s=sN, theta=thN)
    n = len(tM)
    res_s = np.full(n, np.inf)
    res_th = np.full(n, np.inf)
    excluded: list[str | None] = [None] * n
    for k in range(n):
        if tM.failures[k] or tN.failures[k]:
            excluded[k] = "integration-failure"
        elif tM.trapped[k] or tN.trapped[k]:
            excluded[k] = "trapped"
        elif tM.b_out[k] not in h.matches:
            excluded[k] = "unmatched-exit-boundary"
    for bo in np.unique(tM.b_out):
        if bo < 0 or bo not in h.matches:
            continue
        rows = (tM.b_out == bo) & np.array([x is None for x in excluded])
        if not rows.any():
            continue
        bx, sx, thx = _phi_arrays(h, int(bo), tM.s_out[rows], tM.theta_out[rows])
        same_b = tN.b_out[rows] == bx
        L = h.lengths_N[bx]
        rs = np.where(same_b, _circ(sx - tN.s_out[rows], L), np.inf)
        rt = np.where(same_b, np.abs(thx - tN.theta_out[rows]), np.inf)
        res_s[rows] = rs
        res_th[rows] = rt
    match = np.hypot(res_s, res_th) < scat_tol
    e = tN.tau - tM.tau
    fam = _families(grid, tM, tN, excluded)
    families = []
    for fid in range(int(fam.max()) + 1 if fam.size and fam.max() >= 0 else 0):
        sel = fam == fid
        ev = e[sel]
        families.append({
            "id": fid,
            "size": int(sel.sum()),
            "e_mean": float(np.mean(ev)),
            "e_median": float(np.median(ev)),
            "e_spread": float(np.max(ev) - np.min(ev)),
            "scat_match": bool(np.all(match[sel])),
            "signature": list(tM.signature(int(np.nonzero(sel)[0][0]))),
        })
    return LensComparison(M, N, h, cfg, grid, tM, tN, res_s, res_th, match, e, excluded, fam, families,
                          scat_tol, lens_tol)


def _families(grid: ScatterGrid, tM: ScatteringTable, tN: ScatteringTable, excluded) -> np.ndarray:
    """Connected components of the grid graph, ``-1`` for samples outside every family."""
    n_s, n_t = grid.n_s, grid.n_theta
    n = n_s * n_t
    ok = np.array([excluded[k] is None and not tM.has_tangency(k) and not tN.has_tangency(k) for k in range(n)])
    sig = [(tM.signature(k), tN.signature(k)) for k in range(n)]
    ii, jj = [], []
    for a in range(n_s):
        for c in range(n_t):
            k = a * n_t + c
            if not ok[k]:
                continue
            nbrs = [((a + 1) % n_s) * n_t + c]
            if c + 1 < n_t:
                nbrs.append(k + 1)
            for q in nbrs:
                if ok[q] and sig[q] == sig[k]:
                    ii.append(k)
                    jj.append(q)
    graph = coo_matrix((np.ones(len(ii)), (ii, jj)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    # renumber in grid order, skipping excluded samples
    out = np.full(n, -1)
    remap: dict[int, int] = {}
    for k in range(n):
        if ok[k]:
            out[k] = remap.setdefault(int(labels[k]), len(remap))
    return out


def excess(M: Scene, N: Scene, h: BoundaryIsometry, boundary: int, s, theta,
           cfg: IntegratorCfg | None = None) -> np.ndarray:
    """``tau_N(phi(X)) - tau_M(X)`` for starts ``(boundary, s, theta)``; ``nan`` when trapped."""
    cfg = cfg or LensCfg().integrator
    s = np.atleast_1d(np.asarray(s, float))
    theta = np.atleast_1d(np.asarray(theta, float))
    grid = ScatterGrid(boundary=boundary, theta_margin=min(cfg.theta_margin, 1e-3))
    cfg = replace(cfg, theta_margin=grid.theta_margin)
    tM = scattering_map(M, grid, cfg, s=s, theta=theta)
    bN, sN, thN = _phi_arrays(h, boundary, s, theta)
    tN = scattering_map(N, replace(grid, boundary=bN), cfg, s=sN, theta=thN)
    e = tN.tau - tM.tau
    return np.where(tM.trapped | tN.trapped, np.nan, e)


def pair_excess(cmp: LensComparison, fam1: int, fam2: int, tol: float | None = None) -> float:
    """``l = e(fam1) - e(fam2)``; raises :class:`NonConstantFamily` if either family is not constant."""
    tol = cmp.lens_tol if tol is None else tol
    vals = []
    for fid in (fam1, fam2):
        st = cmp.family_stats(fid)
        if st["e_spread"] > tol:
            raise NonConstantFamily(fid, st["e_spread"])
        vals.append(st["e_median"])
    return vals[0] - vals[1]


def first_variation_check(scene: Scene, grid: ScatterGrid | None = None, cfg: IntegratorCfg | None = None,
                          delta: float = 1e-4) -> dict:
    """Compare finite-difference derivatives of ``tau`` with the first variation formula.

    Along ``s`` and along ``theta`` at every grid node,
    ``d tau = cos(theta_out) d s_out - cos(theta_in) d s_in``. Nodes whose
    three traces differ in exit boundary, gluing count or tangency are
    reported as branch splits instead.
    """
    cfg = cfg or LensCfg().integrator
    grid = grid or ScatterGrid(n_s=8, n_theta=8, theta_margin=0.2)
    b = grid.boundary
    L = scene.boundaries[b].length
    s0, th0 = grid.nodes(L)
    out = {}
    for name, ds, dth in (("s", delta, 0.0), ("theta", 0.0, delta)):
        s = np.concatenate([s0 - ds, s0, s0 + ds])
        th = np.concatenate([th0 - dth, th0, th0 + dth])
        tab = scattering_map(scene, replace(grid, theta_margin=min(grid.theta_margin, cfg.theta_margin)),
                             replace(cfg, theta_margin=min(grid.theta_margin, cfg.theta_margin)), s=s, theta=th)
        n = len(s0)
        lo, mid, hi = slice(0, n), slice(n, 2 * n), slice(2 * n, 3 * n)
        sig = [tuple(tab.signature(k) for k in (i, n + i, 2 * n + i)) for i in range(n)]
        tang = [any(tab.has_tangency(k) for k in (i, n + i, 2 * n + i)) for i in range(n)]
        same = np.array([len(set(sg)) == 1 and not tg and not tab.trapped[[i, n + i, 2 * n + i]].any()
                         for i, (sg, tg) in enumerate(zip(sig, tang))])
        Lout = np.array([scene.boundaries[bo].length if bo >= 0 else np.nan for bo in tab.b_out[mid]])
        dtau = (tab.tau[hi] - tab.tau[lo]) / (2 * delta)
        dso = ((tab.s_out[hi] - tab.s_out[lo] + 0.5 * Lout) % Lout - 0.5 * Lout) / (2 * delta)
        dsi = 1.0 if name == "s" else 0.0
        pred = np.cos(tab.theta_out[mid]) * dso - np.cos(tab.theta[mid]) * dsi
        r = np.abs(dtau - pred)
        out[name] = {
            "max_residual": float(np.max(r[same])) if same.any() else None,
            "checked": int(same.sum()),
            "split": [{"s": float(s0[i]), "theta": float(th0[i])} for i in np.nonzero(~same)[0]],
            "dtau": dtau.tolist(),
            "predicted": pred.tolist(),
        }
    return {"scene": scene.name, "delta": delta, **out}


def direction_convexity(scene: Scene, boundary: int, s: float, side: int) -> str:
    """``convex`` or ``concave`` for the boundary tangent direction ``side * T`` at ``s``.

    The geodesic in that direction leaves at once from a strictly convex
    point and runs into the interior from a strictly concave one; across
    totally geodesic stretches and switch points the first strictly signed
    arc ahead decides, and a boundary that is a closed geodesic counts as
    convex.
    """
    cls = scene.classification
    curve = scene.boundaries[boundary]
    L = curve.length
    c = cls.class_at(boundary, s)
    if c == S_PLUS:
        return "convex"
    if c == S_MINUS:
        return "concave"
    step = cls.step or L / 2048
    for k in range(1, int(2 * L / step) + 2):
        c = cls.class_at(boundary, (s + side * k * step) % L)
        if c == S_PLUS:
            return "convex"
        if c == S_MINUS:
            return "concave"
    return "convex"


def tangent_limit_excess(cmp: LensComparison, boundary: int, s: float, side: int = 1,
                         thetas=None, tol: float | None = None) -> float:
    """Limit of the excess along inward vectors tending to ``side * T`` at ``s``.

    ``thetas`` must decrease monotonically to 0 (default ``0.2 / 2**k``,
    ``k < 5``); the values are extrapolated by repeated Richardson steps
    assuming a leading error linear in ``theta``. Concave directions give 0.
    """
    if side not in (1, -1):
        raise ValueError("side must be +1 or -1")
    if direction_convexity(cmp.M, boundary, s, side) == "concave":
        return 0.0
    thetas = np.asarray(thetas if thetas is not None else 0.2 / 2.0 ** np.arange(5), float)
    if np.any(np.diff(thetas) >= 0) or np.any(thetas <= 0):
        raise ValueError("thetas must decrease monotonically towards 0")
    tol = cmp.lens_tol if tol is None else tol
    ang = thetas if side == 1 else math.pi - thetas
    icfg = replace(cmp.cfg.integrator, max_length=max(100.0 * float(cmp.M.diameter), 20.0 / float(thetas[-1])))
    e = excess(cmp.M, cmp.N, cmp.h, boundary, np.full(len(thetas), s), ang, icfg)
    if np.any(~np.isfinite(e)):
        raise NonConvergentLimit([float(x) for x in e])
    # Neville extrapolation to theta = 0 on sliding windows of three points
    ext = [_neville0(thetas[k:k + 3], e[k:k + 3]) for k in range(max(1, len(e) - 2))]
    tail = ext[-2:]
    if max(tail) - min(tail) > tol:
        raise NonConvergentLimit([float(x) for x in tail])
    return float(ext[-1])


def _neville0(x: np.ndarray, y: np.ndarray) -> float:
    """Value at 0 of the interpolating polynomial through ``(x, y)``."""
    p = [float(v) for v in y]
    n = len(p)
    for level in range(1, n):
        for i in range(n - level):
            j = i + level
            p[i] = (x[j] * p[i] - x[i] * p[i + 1]) / (x[j] - x[i])
    return p[0]
