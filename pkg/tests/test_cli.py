import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from lensrig.cli import run
from lensrig.scenes import registry_truths


def call(capsys, *argv):
    code = run(list(argv))
    out = capsys.readouterr().out
    return code, out


def test_scatter_csv_matches_chord_oracle(capsys):
    code, out = call(capsys, "scatter", "--scene", "flat-disk", "--grid", "32x32")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 1024
    s = np.array([float(r["s"]) for r in rows])
    th = np.array([float(r["theta"]) for r in rows])
    tau, s_out, _ = registry_truths("flat-disk")["scattering"](s, th)
    assert np.max(np.abs(np.array([float(r["tau"]) for r in rows]) - tau)) < 1e-6
    d = (np.array([float(r["s_out"]) for r in rows]) - s_out + math.pi) % (2 * math.pi) - math.pi
    assert np.max(np.abs(d)) < 1e-6


def test_output_is_bit_identical(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(["scatter", "--scene", "peanut", "--grid", "8x8", "-o", str(a)]) == 0
    assert run(["scatter", "--scene", "peanut", "--grid", "8x8", "-o", str(b), "--workers", "1"]) == 0
    capsys.readouterr()
    assert a.read_bytes() == b.read_bytes()


def test_compare_pair(capsys):
    code, out = call(capsys, "compare", "--pair", "figure2-pair", "--grid", "16x16")
    assert code == 0
    js = json.loads(out)
    assert js["verdict"] == {"scattering": True, "lens": False}
    means = sorted(f["e_mean"] for f in js["families"])
    assert means[0] == pytest.approx(0.0, abs=1e-6)
    assert means[-1] == pytest.approx(math.pi, abs=1e-6)


def test_conjugates(capsys):
    code, out = call(capsys, "conjugates", "--scene", "flat-disk", "--grid", "8x8")
    assert code == 0
    assert json.loads(out)["violations"] == []


def test_trace_json_and_csv(capsys):
    code, out = call(capsys, "trace", "--scene", "flat-disk", "--start", "0,0,1.5707963267948966")
    assert code == 0
    js = json.loads(out)
    assert js["length"] == pytest.approx(2.0, abs=1e-10)
    code, out = call(capsys, "trace", "--scene", "flat-disk", "--point", "0,0", "--direction", "0", "--format", "csv")
    assert code == 0
    last = out.strip().splitlines()[-1].split(",")
    assert float(last[0]) == pytest.approx(1.0, abs=1e-10)


def test_classify(capsys):
    code, out = call(capsys, "classify", "--scene", "peanut")
    assert code == 0
    assert json.loads(out)["counts"]["S-"] == 2


def test_shorten(capsys, tmp_path):
    poly = tmp_path / "poly.csv"
    poly.write_text("u,v\n1.6,0.4\n0.3,1.6\n-1.4,0.8\n-1.5,-0.6\n")
    code, out = call(capsys, "shorten", "--scene", "flat-annulus", "--polyline", str(poly))
    assert code == 0
    js = json.loads(out)
    # the polyline passes above the hole, so the path wraps counterclockwise
    oracle = registry_truths("flat-annulus")["obstacle_length"]((1.6, 0.4), (-1.5, -0.6), direction=1)
    assert js["length"] == pytest.approx(oracle, abs=1e-6)
    assert js["monotone"] and js["homotopy_preserved"]


def test_truths(capsys):
    code, out = call(capsys, "truths", "--scene", "flat-disk")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert max(float(r["abs_error"]) for r in rows) < 1e-9


def test_usage_error(capsys):
    code, out = call(capsys, "scatter", "--grid", "bogus")
    assert code == 64
    assert json.loads(out)["error"]["code"] == "usage"
    code, _ = call(capsys)
    assert code == 64


def test_unknown_scene(capsys):
    code, out = call(capsys, "scatter", "--scene", "no-such-scene")
    assert code == 1
    assert json.loads(out)["error"]["code"] == "unknown-scene"


def test_no_oracle(capsys):
    code, out = call(capsys, "truths", "--scene", "peanut")
    assert code == 1
    assert json.loads(out)["error"]["code"] == "no-oracle"


def test_schema_error(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"version": "v1", "name": "x", "metric": {"name": "flat"}}))
    code, out = call(capsys, "scatter", "--scene", str(bad))
    assert code == 1
    assert json.loads(out)["error"]["code"] == "schema-error"


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lensrig", "classify", "--scene", "flat-disk"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["scene"] == "flat-disk"
