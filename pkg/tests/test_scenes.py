import json
import math

import numpy as np
import pytest

from lensrig.geometry import remark_profile
from lensrig.scenes import (
    REMARK_EPSILON,
    NoOracle,
    SchemaError,
    dumps_spec,
    load_pair,
    load_scene,
    pair_names,
    registry_names,
    registry_truths,
    scene_from_spec,
    scene_spec,
)


@pytest.mark.parametrize("name", registry_names())
def test_registry_scene_loads(name):
    sc = load_scene(name)
    assert sc.name == name
    assert sc.classification is not None
    assert sc.diameter > 0


@pytest.mark.parametrize("name", pair_names())
def test_registry_pair_loads(name):
    P = load_pair(name)
    assert P.M.name.startswith("figure2-glued") and P.N.name.startswith("figure2-capped")


@pytest.mark.parametrize("name", registry_names() + pair_names())
def test_json_round_trip(name):
    text = dumps_spec(scene_spec(name))
    assert dumps_spec(json.loads(text)) == text


def test_file_round_trip(tmp_path):
    path = tmp_path / "disk.json"
    path.write_text(dumps_spec(scene_spec("flat-disk")))
    sc = load_scene(str(path))
    assert dumps_spec(sc.spec) == path.read_text()


def _bad(mutate):
    spec = scene_spec("flat-annulus")
    mutate(spec)
    with pytest.raises(SchemaError) as info:
        scene_from_spec(spec)
    return info.value.pointer


def test_schema_pointers():
    assert _bad(lambda s: s.pop("metric")) == ""
    assert _bad(lambda s: s.update(version="v0")) == "/version"
    assert _bad(lambda s: s["metric"].update(name="nope")) == "/metric/name"
    assert _bad(lambda s: s["boundaries"][1].update(shape="hexagon")) == "/boundaries/1/shape"
    assert _bad(lambda s: s["boundaries"][1]["params"].update(wobble=1)) == "/boundaries/1/params"
    assert _bad(lambda s: s.update(boundaries=[])) == "/boundaries"
    assert _bad(lambda s: s.update(gluing={"boundary": 5})) == "/gluing/boundary"


def test_pair_schema_pointer():
    spec = scene_spec("figure2-pair")
    spec["N"]["metric"]["name"] = "nope"
    from lensrig.scenes import pair_from_spec

    with pytest.raises(SchemaError) as info:
        pair_from_spec(spec)
    assert info.value.pointer == "/N/metric/name"


def test_pair_is_not_a_scene():
    with pytest.raises(SchemaError):
        load_scene("figure2-pair")


def test_unknown_scene():
    with pytest.raises(KeyError):
        load_scene("no-such-scene")


def test_search_path(tmp_path, monkeypatch):
    spec = scene_spec("flat-disk")
    spec["name"] = "my-disk"
    (tmp_path / "my-disk.json").write_text(dumps_spec(spec))
    monkeypatch.setenv("LENSRIG_SCENES", str(tmp_path))
    assert load_scene("my-disk").name == "my-disk"


def test_figure2_boundary_lengths_match():
    P = load_pair("figure2-pair")
    assert abs(P.M.boundaries[0].length - P.N.boundaries[0].length) < 1e-12
    assert P.M.gluing is not None and P.M.gluing.boundary == 1
    assert P.M.open_boundaries == [0]


def test_remark_profile_flat_region():
    """The profile is a flat cone, ``f = r/3``, near the inner boundary."""
    prof = remark_profile()
    r = np.linspace(REMARK_EPSILON, 0.1, 400)
    assert np.allclose(prof.f(r), r / 3, atol=1e-15)
    assert np.max(np.abs(prof.d2f(r, side=-1))) <= 1e-12
    assert REMARK_EPSILON == pytest.approx(1 / 50)


def test_truths():
    t = registry_truths("flat-disk")["scattering"]
    tau, s_out, th = t(np.array([0.0]), np.array([math.pi / 2]))
    assert tau[0] == pytest.approx(2.0) and s_out[0] == pytest.approx(math.pi)
    assert registry_truths("cap-0.4pi")["max_chord"] == pytest.approx(0.8 * math.pi)
    assert registry_truths("figure2-pair")["cap_excess"] == pytest.approx(math.pi)
    ob = registry_truths("flat-annulus")["obstacle_length"]
    assert ob((1.5, 0.0), (-1.5, 0.0)) == pytest.approx(2 * math.sqrt(1.25) + math.pi - 2 * math.acos(1 / 1.5), rel=1e-12)
    assert ob((1.5, 0.0), (1.5, 0.5)) == pytest.approx(0.5)


def test_cap_truth_consistent_with_sphere():
    tau, _, _ = registry_truths("cap-0.4pi")["scattering"](np.array([0.0]), np.array([math.pi / 2]))
    assert tau[0] == pytest.approx(0.8 * math.pi, abs=1e-12)


def test_no_oracle():
    with pytest.raises(NoOracle):
        registry_truths("peanut")
