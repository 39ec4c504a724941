"""A self-intersecting geodesic on a surface without conjugate points.

Near its inner boundary the surface is a flat cone of angle 2 pi / 3; the
chart angle is three times the angle in the development. The straight
chord joining the points 1/20 along the two edge radii of the development
closes up on the cone. Extended a little at both ends it crosses itself,
although Jacobi fields along it never vanish.
"""

import math

import numpy as np

from lensrig import IntegratorCfg, jacobi, load_scene, self_intersections, trace
from lensrig.geometry import ChartPoint, TangentVec

sc = load_scene("remark-cone")
r = np.linspace(1 / 40, 3.0, 2001)
print(f"max Gaussian curvature on [1/40, 3]: {np.max(sc.metric.curvature(r, np.zeros_like(r))):.1e}")

ell = math.sqrt(3) / 20
d = np.array([-math.cos(math.pi / 6), math.sin(math.pi / 6)])
P = np.array([0.05, 0.0]) - 0.2 * ell * d
rho, psi = float(np.hypot(*P)), math.atan2(P[1], P[0])
er = np.array([math.cos(psi), math.sin(psi)])
ep = np.array([-math.sin(psi), math.cos(psi)])
start = TangentVec(ChartPoint(rho, 3 * psi), float(d @ er), float(3 * (d @ ep) / rho))

rec = trace(sc, start, IntegratorCfg(h_max=0.002, max_length=1.4 * ell))
for hit in self_intersections(rec, sc):
    print(f"self-crossing at t = {hit['t1']:.5f} and {hit['t2']:.5f} (chord length {ell:.5f}), "
          f"winding {hit['winding']:.3f}")
print(f"first conjugate point: {jacobi(sc, rec).first_conjugate_t}")
