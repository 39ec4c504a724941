"""
Built-in scene library, the SceneSpec JSON format (version ``v1``) and
closed-form oracles for the built-in scenes.

A scene spec looks like::

    {
      "version": "v1",
      "name": "flat-disk",
      "metric": {"name": "flat", "params": {}},
      "boundaries": [{"shape": "circle", "params": {"center": [0, 0], "radius": 1, "interior": "inside"}}],
      "gluing": null
    }

A pair spec bundles two scene specs with a boundary isometry::

    {"version": "v1", "kind": "pair", "name": ..., "M": {...}, "N": {...},
     "isometry": [{"from": 0, "to": 0, "sigma": 1, "shift": 0.0}]}
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .domain import SHAPES, AntipodalGluing, BoundaryCurve, Scene
from .geometry import get_metric, remark_profile

__all__ = [
    "SchemaError",
    "NoOracle",
    "ScenePair",
    "load_scene",
    "load_pair",
    "scene_from_spec",
    "pair_from_spec",
    "dumps_spec",
    "registry_names",
    "pair_names",
    "scene_spec",
    "registry_truths",
    "REMARK_EPSILON",
    "FIGURE2_FLARE",
    "FIGURE2_HEIGHT",
]

SCHEMA_VERSION = "v1"
REMARK_EPSILON = 1.0 / 50.0
REMARK_OUTER = 3.0
FIGURE2_FLARE = 1.0
FIGURE2_HEIGHT = 2.0


class SchemaError(ValueError):
    """Scene spec violates the v1 schema; ``pointer`` is a JSON pointer."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer}: {message}")
        self.pointer = pointer


class NoOracle(KeyError):
    pass


# --------------------------------------------------------------------------
# Spec construction helpers
# --------------------------------------------------------------------------

def _spec(name, metric, params, boundaries, gluing=None, diameter=None) -> dict:
    out = {
        "version": SCHEMA_VERSION,
        "name": name,
        "metric": {"name": metric, "params": params},
        "boundaries": boundaries,
        "gluing": gluing,
    }
    if diameter is not None:
        out["diameter"] = diameter
    return out


def _circle(radius, interior="inside", center=(0.0, 0.0)):
    return {"shape": "circle", "params": {"center": [float(center[0]), float(center[1])], "radius": float(radius), "interior": interior}}


def _rlevel(r0, interior):
    return {"shape": "r-level", "params": {"r0": float(r0), "interior": interior}}


def _cap_spec(name: str, angular_radius: float) -> dict:
    return _spec(name, "conformal:stereographic", {}, [_circle(math.tan(angular_radius / 2))],
                 diameter=min(2 * angular_radius, math.pi))


def _figure2_specs(flare: float) -> tuple[dict, dict]:
    """Glued cylinder (M) and capped cylinder (N) sharing one conformal factor."""
    c0 = 2 * math.atan(math.tanh(flare / 2))
    r_top = math.exp(-c0 - FIGURE2_HEIGHT)
    params = {"flare": float(flare), "height": FIGURE2_HEIGHT}
    diameter = flare + FIGURE2_HEIGHT + math.pi
    suffix = "" if flare > 0 else "-plain"
    glued = _spec(f"figure2-glued{suffix}", "conformal:capped-cylinder", params,
                  [_circle(1.0), _circle(r_top, "outside")], {"boundary": 1}, diameter)
    capped = _spec(f"figure2-capped{suffix}", "conformal:capped-cylinder", params, [_circle(1.0)], None, diameter)
    return glued, capped


_SCENES: dict[str, Callable[[], dict]] = {
    "flat-disk": lambda: _spec("flat-disk", "flat", {}, [_circle(1.0)], diameter=2.0),
    "flat-annulus": lambda: _spec("flat-annulus", "flat", {}, [_circle(2.0), _circle(1.0, "outside")], diameter=4.0),
    "peanut": lambda: _spec("peanut", "flat", {}, [{"shape": "peanut", "params": {"a": 0.3, "scale": 1.0}}], diameter=2.6),
    "hemisphere-cap": lambda: _cap_spec("hemisphere-cap", math.pi / 2),
    "cap-0.4pi": lambda: _cap_spec("cap-0.4pi", 0.4 * math.pi),
    "cap-0.55pi": lambda: _cap_spec("cap-0.55pi", 0.55 * math.pi),
    "cap-0.6pi": lambda: _cap_spec("cap-0.6pi", 0.6 * math.pi),
    "cylinder": lambda: _spec("cylinder", "cylinder", {}, [_rlevel(0.0, "above"), _rlevel(2.0, "below")], diameter=2.0 + math.pi),
    "hyperbolic-annulus": lambda: _spec("hyperbolic-annulus", "hyperbolic", {}, [_rlevel(0.5, "above"), _rlevel(2.0, "below")], diameter=4.0),
    "remark-cone": lambda: _spec("remark-cone", "remark-cone", {}, [_rlevel(REMARK_EPSILON, "above"), _rlevel(REMARK_OUTER, "below")],
                                 diameter=2 * REMARK_OUTER),
    "figure2-glued": lambda: _figure2_specs(FIGURE2_FLARE)[0],
    "figure2-capped": lambda: _figure2_specs(FIGURE2_FLARE)[1],
    "figure2-glued-plain": lambda: _figure2_specs(0.0)[0],
    "figure2-capped-plain": lambda: _figure2_specs(0.0)[1],
}

_PAIRS: dict[str, Callable[[], dict]] = {
    "figure2-pair": lambda: {
        "version": SCHEMA_VERSION, "kind": "pair", "name": "figure2-pair",
        "M": _SCENES["figure2-glued"](), "N": _SCENES["figure2-capped"](),
        "isometry": [{"from": 0, "to": 0, "sigma": 1, "shift": 0.0}],
    },
    "figure2-pair-plain": lambda: {
        "version": SCHEMA_VERSION, "kind": "pair", "name": "figure2-pair-plain",
        "M": _SCENES["figure2-glued-plain"](), "N": _SCENES["figure2-capped-plain"](),
        "isometry": [{"from": 0, "to": 0, "sigma": 1, "shift": 0.0}],
    },
}


def registry_names() -> list[str]:
    return sorted(_SCENES)


def pair_names() -> list[str]:
    return sorted(_PAIRS)


def scene_spec(name: str) -> dict:
    if name in _SCENES:
        return _SCENES[name]()
    if name in _PAIRS:
        return _PAIRS[name]()
    raise KeyError(f"unknown scene {name!r}")


# --------------------------------------------------------------------------
# Parsing and serialization
# --------------------------------------------------------------------------

def _require(obj, key, typ, pointer):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(pointer, f"missing required key {key!r}")
    val = obj[key]
    if not isinstance(val, typ):
        raise SchemaError(f"{pointer}/{key}", f"expected {typ}, got {type(val).__name__}")
    return val


def scene_from_spec(spec: dict, pointer: str = "") -> Scene:
    """Validate a v1 scene spec and build the scene (classification included)."""
    if not isinstance(spec, dict):
        raise SchemaError(pointer or "/", "scene spec must be an object")
    version = _require(spec, "version", str, pointer)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{pointer}/version", f"unsupported version {version!r}")
    name = _require(spec, "name", str, pointer)
    mspec = _require(spec, "metric", dict, pointer)
    mname = _require(mspec, "name", str, f"{pointer}/metric")
    mparams = mspec.get("params", {}) or {}
    try:
        metric = get_metric(mname, **mparams)
    except KeyError as exc:
        raise SchemaError(f"{pointer}/metric/name", str(exc)) from None
    except TypeError as exc:
        raise SchemaError(f"{pointer}/metric/params", str(exc)) from None
    blist = _require(spec, "boundaries", list, pointer)
    if not blist:
        raise SchemaError(f"{pointer}/boundaries", "at least one boundary required")
    curves = []
    for i, b in enumerate(blist):
        bp = f"{pointer}/boundaries/{i}"
        shape = _require(b, "shape", str, bp)
        if shape not in SHAPES:
            raise SchemaError(f"{bp}/shape", f"unknown shape {shape!r}")
        try:
            curves.append(BoundaryCurve(metric, SHAPES[shape](**(b.get("params") or {}))))
        except TypeError as exc:
            raise SchemaError(f"{bp}/params", str(exc)) from None
        except ValueError as exc:
            raise ValueError(f"invariant 'positively oriented boundary' failed at {bp}: {exc}") from None
    gluing = None
    g = spec.get("gluing")
    if g is not None:
        idx = _require(g, "boundary", int, f"{pointer}/gluing")
        if not 0 <= idx < len(curves):
            raise SchemaError(f"{pointer}/gluing/boundary", f"index {idx} out of range")
        gluing = AntipodalGluing(idx, curves[idx].length)
    scene = Scene(name, metric, curves, gluing, spec.get("diameter"), spec)
    _ = scene.classification
    return scene


@dataclass
class ScenePair:
    name: str
    M: Scene
    N: Scene
    isometry: "object"
    spec: dict


def pair_from_spec(spec: dict) -> ScenePair:
    from .lens import BoundaryIsometry

    if spec.get("kind") != "pair":
        raise SchemaError("/kind", "expected 'pair'")
    M = scene_from_spec(_require(spec, "M", dict, ""), "/M")
    N = scene_from_spec(_require(spec, "N", dict, ""), "/N")
    rows = _require(spec, "isometry", list, "")
    iso = BoundaryIsometry.from_rows(M, N, rows)
    return ScenePair(spec.get("name", "pair"), M, N, iso, spec)


def dumps_spec(spec: dict) -> str:
    """Canonical JSON text; parse -> dump round trips byte-identically."""
    return json.dumps(spec, sort_keys=True, indent=2) + "\n"


def _scene_dirs() -> list[Path]:
    extra = os.environ.get("LENSRIG_SCENES")
    return [Path(p) for p in extra.split(os.pathsep) if p] if extra else []


def _read_spec(ref: str) -> dict:
    path = Path(ref)
    if path.suffix == ".json" and path.exists():
        return json.loads(path.read_text())
    if ref in _SCENES or ref in _PAIRS:
        return scene_spec(ref)
    for d in _scene_dirs():
        cand = d / f"{ref}.json"
        if cand.exists():
            return json.loads(cand.read_text())
    raise KeyError(f"unknown scene {ref!r} (not a file, registry name, or in LENSRIG_SCENES)")


def load_scene(ref: str) -> Scene:
    """Load a scene from a JSON file path or a registry name."""
    spec = _read_spec(ref)
    if spec.get("kind") == "pair":
        raise SchemaError("/kind", f"{ref!r} is a pair; use load_pair")
    return scene_from_spec(spec)


def load_pair(ref: str) -> ScenePair:
    return pair_from_spec(_read_spec(ref))


# --------------------------------------------------------------------------
# Closed-form oracles
# --------------------------------------------------------------------------

def _flat_disk_truth(s, theta):
    return 2 * np.sin(theta), (np.asarray(s) + 2 * np.asarray(theta)) % (2 * math.pi), np.asarray(theta)


def _cap_truth(angular_radius):
    """Great-circle chords of a cap: length, exit arclength and exit angle."""
    rho = angular_radius
    L = 2 * math.pi * math.sin(rho)
    # boundary point, unit tangent (increasing azimuth) and inward normal in R^3
    x0 = np.array([math.sin(rho), 0.0, math.cos(rho)])
    T = np.array([0.0, 1.0, 0.0])
    nu = np.array([-math.cos(rho), 0.0, math.sin(rho)])

    def truth(s, theta):
        theta = np.asarray(theta, float)
        # Clairaut on the sphere: sin(r_min) = sin(rho) |cos(theta)|
        cos_rmin = np.sqrt(1 - (math.sin(rho) * np.cos(theta)) ** 2)
        tau = 2 * np.arccos(np.clip(math.cos(rho) / cos_rmin, -1, 1))
        v = np.cos(theta)[..., None] * T + np.sin(theta)[..., None] * nu
        p = np.cos(tau)[..., None] * x0 + np.sin(tau)[..., None] * v
        dpsi = np.arctan2(p[..., 1], p[..., 0]) % (2 * math.pi)
        return tau, (np.asarray(s) + math.sin(rho) * dpsi) % L, theta

    return truth


def _cylinder_truth(height=2.0):
    """Unrolled strip: straight lines from the bottom circle to the top one."""

    def truth(s, theta):
        theta = np.asarray(theta, float)
        tau = height / np.sin(theta)
        # the bottom circle runs in decreasing azimuth, the top one in increasing
        s_out = (-np.asarray(s) - height * np.cos(theta) / np.sin(theta)) % (2 * math.pi)
        return tau, s_out, np.pi - theta

    return truth


def tangent_arc_length(p, q, radius: float = 1.0, center=(0.0, 0.0), direction: int | None = None) -> float:
    """Shortest path from ``p`` to ``q`` around a disk obstacle in the flat plane.

    Straight segment when it clears the disk; otherwise tangent segment,
    arc of the circle, tangent segment. ``direction`` (+1 ccw, -1 cw) forces
    the side the path wraps around.
    """
    p = np.asarray(p, float) - center
    q = np.asarray(q, float) - center
    dp, dq = np.hypot(*p), np.hypot(*q)
    if direction is None:
        d = q - p
        t = np.clip(-np.dot(p, d) / np.dot(d, d), 0, 1)
        if np.hypot(*(p + t * d)) >= radius:
            return float(np.hypot(*d))
        return min(tangent_arc_length(p, q, radius, (0, 0), 1), tangent_arc_length(p, q, radius, (0, 0), -1))
    ap, aq = math.atan2(p[1], p[0]), math.atan2(q[1], q[0])
    bp, bq = math.acos(radius / dp), math.acos(radius / dq)
    # tangent points: leave p going around in `direction`
    tp = ap + direction * bp
    tq = aq - direction * bq
    arc = (direction * (tq - tp)) % (2 * math.pi)
    return math.sqrt(dp * dp - radius**2) + radius * arc + math.sqrt(dq * dq - radius**2)


def _cone_truth(r_start: float, angle_to_inward: float):
    """Straight line in the development of the cone ``f = r/3`` (angle 2 pi/3)."""

    def truth(t):
        t = np.asarray(t, float)
        x0 = np.array([r_start, 0.0])
        d = np.array([-math.cos(angle_to_inward), math.sin(angle_to_inward)])
        pts = x0[None, :] + t[:, None] * d[None, :]
        r = np.hypot(pts[:, 0], pts[:, 1])
        psi = np.unwrap(np.arctan2(pts[:, 1], pts[:, 0]))
        return r, 3 * psi

    return truth


def registry_truths(name: str) -> dict:
    """Closed-form oracle callables for a built-in scene or pair."""
    if name == "flat-disk":
        return {"scattering": _flat_disk_truth}
    if name == "hemisphere-cap":
        return {"scattering": lambda s, th: (np.full_like(np.asarray(th, float), math.pi),
                                             (np.asarray(s) + math.pi) % (2 * math.pi), np.asarray(th, float))}
    if name.startswith("cap-") and name.endswith("pi"):
        rho = float(name[4:-2]) * math.pi
        return {"scattering": _cap_truth(rho), "max_chord": 2 * rho}
    if name == "cylinder":
        return {"scattering": _cylinder_truth(2.0)}
    if name == "flat-annulus":
        return {"obstacle_length": lambda p, q, direction=None: tangent_arc_length(p, q, 1.0, (0.0, 0.0), direction)}
    if name == "remark-cone":
        return {"cone_line": _cone_truth, "cone_angle": 2 * math.pi / 3, "profile": remark_profile}
    if name in ("figure2-pair", "figure2-pair-plain"):
        return {"cap_excess": math.pi, "avoid_excess": 0.0}
    raise NoOracle(f"no oracle for {name!r}")
