"""Shortest paths around a hole, by construction and by curve shortening.

In the flat annulus 1 < |x| < 2 the shortest path between two points that
cannot see each other runs along a tangent segment, an arc of the inner
circle and another tangent segment. Discrete curve shortening started from
a wiggly polyline in the same homotopy class converges to it.
"""

import math

import numpy as np

from lensrig import load_scene, local_pgeodesic, shorten
from lensrig.scenes import registry_truths

sc = load_scene("flat-annulus")
p, q = np.array([1.6, 0.4]), np.array([-1.5, -0.6])
truth = registry_truths("flat-annulus")["obstacle_length"]

pg = local_pgeodesic(sc, p, q)
print(f"p-geodesic: {[s.kind for s in pg.segments]}, length {pg.length:.12f}")
print(f"closed form:                                   {truth(p, q):.12f}")

ang = np.linspace(math.atan2(p[1], p[0]), math.atan2(q[1], q[0]) + 2 * math.pi, 60)
rad = 1.5 + 0.3 * np.sin(7 * ang)
poly = np.c_[rad * np.cos(ang), rad * np.sin(ang)]
poly[0], poly[-1] = p, q
res = shorten(sc, poly)
print(f"\nshorten over the top: {res.sweeps} sweeps, converged {res.converged}, monotone {res.monotone}")
print(f"  length {res.path.length:.12f}, counterclockwise closed form {truth(p, q, direction=1):.12f}")
print(f"  energies: {', '.join(f'{e:.6f}' for e in res.energies[:6])} ...")
