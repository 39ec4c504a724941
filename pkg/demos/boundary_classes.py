"""Boundary classification by the sign of the geodesic curvature.

Convex arcs (S+) turn towards the interior, concave arcs (S-) away from it
and totally geodesic arcs (S0) not at all. The peanut has two concave
waists; the cylinder's boundary circles are geodesics.
"""

from lensrig import load_scene

for name in ("flat-disk", "peanut", "cylinder", "flat-annulus"):
    cls = load_scene(name).classification
    print(f"{name}: {cls.counts()}")
    for arc in cls.arcs:
        print(f"  boundary {arc.boundary}: [{arc.s_start:.4f}, {arc.s_end:.4f}] {arc.cls}")
