"""Jacobi fields and conjugate points on model surfaces.

Along a unit-speed geodesic the normal Jacobi field with j(0) = 0,
j'(0) = 1 is t, sin t or sinh t in curvature 0, 1 and -1. A spherical cap
wider than a hemisphere contains chords longer than pi, which therefore
carry a conjugate point at t = pi.
"""

import math

import numpy as np

from lensrig import certify_no_conjugate_points, jacobi, load_scene, trace

for name, model in (("flat-disk", lambda t: t), ("cap-0.6pi", np.sin), ("hyperbolic-annulus", np.sinh)):
    sc = load_scene(name)
    rec = trace(sc, (0, 0.0, math.pi / 2))
    jr = jacobi(sc, rec)
    err = np.max(np.abs(jr.j - model(jr.t)))
    print(f"{name}: length {rec.length:.6f}, max |j - model| {err:.1e}, first conjugate t = {jr.first_conjugate_t}")

print()
for name in ("flat-disk", "cap-0.4pi", "cap-0.6pi", "hyperbolic-annulus"):
    rep = certify_no_conjugate_points(load_scene(name))
    print(f"{name}: {len(rep['violations'])} of {rep['checked']} grid geodesics have a conjugate point")
