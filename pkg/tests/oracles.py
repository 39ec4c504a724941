"""Independent reference computations used by the tests."""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra


def annulus_mesh(r_in: float = 1.0, r_out: float = 2.0, n_r: int = 250, n_theta: int = 2000):
    """Structured triangulation of a flat annulus: ``2 * n_r * n_theta`` triangles."""
    r = np.linspace(r_in, r_out, n_r + 1)
    th = np.arange(n_theta) * (2 * np.pi / n_theta)
    R, TH = np.meshgrid(r, th, indexing="ij")
    verts = np.stack([R * np.cos(TH), R * np.sin(TH)], -1).reshape(-1, 2)
    i, j = np.meshgrid(np.arange(n_r), np.arange(n_theta), indexing="ij")
    a = i * n_theta + j
    b = i * n_theta + (j + 1) % n_theta
    c = (i + 1) * n_theta + j
    d = (i + 1) * n_theta + (j + 1) % n_theta
    tris = np.concatenate([np.stack([a, b, d], -1).reshape(-1, 3), np.stack([a, d, c], -1).reshape(-1, 3)])
    return verts, tris


def boundary_loops(verts: np.ndarray, tris: np.ndarray) -> list[np.ndarray]:
    """Boundary edges (edges used by exactly one triangle), grouped into closed vertex loops."""
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(e, axis=1)
    uniq, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    bd = e[cnt[inv.ravel()] == 1]
    nxt = dict(zip(bd[:, 0].tolist(), bd[:, 1].tolist()))
    loops, seen = [], set()
    for start in nxt:
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        v = nxt[start]
        while v != start:
            loop.append(v)
            seen.add(v)
            v = nxt[v]
        loops.append(np.array(loop))
    return loops


def _visible(A: np.ndarray, B: np.ndarray, E0: np.ndarray, E1: np.ndarray) -> np.ndarray:
    """Whether each segment ``A[i]B[i]`` avoids crossing every obstacle edge properly."""

    def cross(o, p, q):
        return (p[..., 0] - o[..., 0]) * (q[..., 1] - o[..., 1]) - (p[..., 1] - o[..., 1]) * (q[..., 0] - o[..., 0])

    A, B = A[:, None], B[:, None]
    E0, E1 = E0[None], E1[None]
    d1 = cross(E0, E1, A)
    d2 = cross(E0, E1, B)
    d3 = cross(A, B, E0)
    d4 = cross(A, B, E1)
    eps = 1e-12
    hit = (d1 * d2 < -eps) & (d3 * d4 < -eps)
    return ~np.any(hit, axis=1)


def mesh_obstacle_distance(p, q, n_r: int = 250, n_theta: int = 2000) -> float:
    """Shortest path between ``p`` and ``q`` in the polygonal domain of an annulus mesh.

    The inner boundary loop of the mesh is the obstacle; shortest paths bend
    only at its vertices, so Dijkstra runs on the visibility graph of
    ``p``, ``q`` and those vertices.
    """
    verts, tris = annulus_mesh(n_r=n_r, n_theta=n_theta)
    loops = boundary_loops(verts, tris)
    inner = min(loops, key=lambda lp: np.hypot(*verts[lp].T).mean())
    poly = verts[inner]
    E0, E1 = poly, np.roll(poly, -1, axis=0)
    nodes = np.vstack([np.asarray(p, float), np.asarray(q, float), poly])
    n = len(nodes)
    rows, cols, w = [], [], []
    # polygon edges
    k = np.arange(len(poly))
    rows += list(k + 2)
    cols += list((k + 1) % len(poly) + 2)
    w += list(np.hypot(*(E1 - E0).T))
    # p and q to everything, chunked over targets
    for src in (0, 1):
        A = np.repeat(nodes[src][None], n, axis=0)
        vis = np.zeros(n, dtype=bool)
        for lo in range(0, n, 256):
            vis[lo:lo + 256] = _visible(A[lo:lo + 256], nodes[lo:lo + 256], E0, E1)
        # a chord from outside through the convex polygon's interior touches it twice
        mid = 0.5 * (A + nodes)
        vis &= np.hypot(*mid.T) >= np.hypot(*poly.T).min() * np.cos(np.pi / len(poly)) - 1e-12
        vis[src] = False
        t = np.nonzero(vis)[0]
        rows += [src] * len(t)
        cols += list(t)
        w += list(np.hypot(*(nodes[t] - nodes[src]).T))
    G = coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
    dist = dijkstra(G, directed=False, indices=0)
    return float(dist[1])
