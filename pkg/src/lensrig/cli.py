"""
Command-line front end.

Machine output (CSV or JSON) goes to standard output or ``--output``; a short
human summary goes to standard error. Exit codes: 0 success, 1 domain or
validation error, 2 numerical non-convergence, 64 usage error. Error paths
emit ``{"error": {"code": ..., "message": ...}}`` as machine output.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import flow, lens, pgeo, scenes
from .domain import ClassificationError
from .geometry import DomainError, KinkError

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_NONCONV = 2
EXIT_USAGE = 64

SUBCOMMANDS = ("trace", "scatter", "compare", "conjugates", "shorten", "classify", "truths")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


@dataclass
class RunConfig:
    subcommand: str
    scene: str | None
    pair: str | None
    n_s: int
    n_theta: int
    theta_margin: float
    rtol: float | None
    atol: float | None
    event_tol: float | None
    tangency_tol: float | None
    scat_tol: float | None
    lens_tol: float | None
    fmt: str
    output: str | None
    seed: int
    workers: int

    def __post_init__(self):
        for name in ("rtol", "atol", "event_tol", "tangency_tol", "scat_tol", "lens_tol"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"--{name.replace('_', '-')} must be positive")
        if self.n_s < 2 or self.n_theta < 2:
            raise ValueError("grid sizes must be >= 2")

    def integrator(self, base: flow.IntegratorCfg | None = None) -> flow.IntegratorCfg:
        cfg = base or flow.IntegratorCfg()
        over = {k: getattr(self, k) for k in ("rtol", "atol", "event_tol", "tangency_tol") if getattr(self, k) is not None}
        return replace(cfg, theta_margin=self.theta_margin, workers=self.workers, **over)

    def grid(self) -> flow.ScatterGrid:
        return flow.ScatterGrid(n_s=self.n_s, n_theta=self.n_theta, theta_margin=self.theta_margin)


def _grid_arg(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 64x64, got {text!r}")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--scene", help="registry name, JSON file, or name in LENSRIG_SCENES")
    common.add_argument("--pair", help="scene pair reference (compare, truths)")
    common.add_argument("--grid", type=_grid_arg, default=None, help="n_s x n_theta, e.g. 64x64")
    common.add_argument("--theta-margin", type=float, default=0.05)
    for name in ("rtol", "atol", "event-tol", "tangency-tol", "scat-tol", "lens-tol"):
        common.add_argument(f"--{name}", type=float, default=None)
    common.add_argument("--format", choices=("csv", "json"), default=None)
    common.add_argument("--output", "-o", default=None, help="write machine output here instead of stdout")
    common.add_argument("--seed", type=int, default=0, help="seed for the random interior probes of shorten")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1)

    p = _Parser(prog="lensrig", description="Geodesic scattering, lens data and p-geodesic tools.")
    sub = p.add_subparsers(dest="subcommand", parser_class=_Parser)
    sp = sub.add_parser("trace", parents=[common], help="trace one geodesic")
    sp.add_argument("--start", type=_floats, help="boundary start b,s,theta")
    sp.add_argument("--point", type=_floats, help="interior start u,v (with --direction)")
    sp.add_argument("--direction", type=float, help="chart angle of the interior start direction")
    sp.add_argument("--samples", action="store_true", help="include the sampled path")
    sub.add_parser("scatter", parents=[common], help="scattering table")
    sub.add_parser("compare", parents=[common], help="compare scattering and lens data of a pair")
    sub.add_parser("conjugates", parents=[common], help="conjugate point certification")
    sp = sub.add_parser("shorten", parents=[common], help="curve shortening from a polyline CSV")
    sp.add_argument("--polyline", required=True, help="CSV of chart points u,v (header optional)")
    sp.add_argument("--k", type=int, default=None, help="initial number of partition intervals")
    sp.add_argument("--b", type=float, default=None, help="uniqueness radius to use")
    sub.add_parser("classify", parents=[common], help="boundary classification report")
    sub.add_parser("truths", parents=[common], help="oracle predictions next to computed values")
    return p


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------

def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _json_text(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _csv_text(rows: list[dict], cols: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else
                    ("true" if v is True else "false" if v is False else v) for v in (r[c] for c in cols)])
    return buf.getvalue()


def _emit(text: str, output: str | None) -> None:
    if output:
        with open(output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _need(ref: str | None, flag: str) -> str:
    if not ref:
        raise UsageError(f"this subcommand needs {flag}")
    return ref


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def _cmd_trace(cfg: RunConfig, args) -> tuple[int, str]:
    scene = scenes.load_scene(_need(cfg.scene, "--scene"))
    if args.start is not None:
        if len(args.start) != 3:
            raise UsageError("--start takes b,s,theta")
        start = (int(args.start[0]), args.start[1], args.start[2])
    elif args.point is not None and args.direction is not None:
        if len(args.point) != 2:
            raise UsageError("--point takes u,v")
        from .geometry import ChartPoint, TangentVec
        u, v = args.point
        d = np.array([math.cos(args.direction), math.sin(args.direction)])
        d = d / float(scene.metric.norm(np.asarray(u), np.asarray(v), d))
        start = TangentVec(ChartPoint(u, v), float(d[0]), float(d[1]))
    else:
        raise UsageError("trace needs --start b,s,theta or --point u,v --direction angle")
    rec = flow.trace(scene, start, cfg.integrator())
    out = rec.to_dict()
    out["scene"] = scene.name
    if args.samples:
        out["samples"] = [{"t": float(t), "u": float(p[0]), "v": float(p[1]), "du": float(w[0]), "dv": float(w[1])}
                          for t, p, w in zip(rec.t, rec.points, rec.velocities)]
    if (cfg.fmt or "json") == "csv":
        cols = ["t", "u", "v", "du", "dv"]
        rows = [dict(zip(cols, (float(t), float(p[0]), float(p[1]), float(w[0]), float(w[1]))))
                for t, p, w in zip(rec.t, rec.points, rec.velocities)]
        text = _csv_text(rows, cols)
    else:
        text = _json_text(out)
    _say(f"trace {scene.name}: length={rec.length:.12g} trapped={rec.trapped} events={len(rec.events)}")
    code = EXIT_NONCONV if rec.failure else EXIT_OK
    return code, text


def _cmd_scatter(cfg: RunConfig, args) -> tuple[int, str]:
    scene = scenes.load_scene(_need(cfg.scene, "--scene"))
    table = flow.scattering_map(scene, cfg.grid(), cfg.integrator())
    text = table.to_csv() if (cfg.fmt or "csv") == "csv" else _json_text(table.to_json())
    nfail = sum(f is not None for f in table.failures)
    _say(f"scatter {scene.name}: {len(table)} samples, {int(np.sum(table.trapped))} trapped, {nfail} failures")
    return (EXIT_NONCONV if nfail else EXIT_OK), text


def _cmd_compare(cfg: RunConfig, args) -> tuple[int, str]:
    pair = scenes.load_pair(_need(cfg.pair, "--pair"))
    base = lens.LensCfg()
    lcfg = lens.LensCfg(cfg.integrator(base.integrator), cfg.scat_tol, cfg.lens_tol)
    cmp = lens.compare(pair.M, pair.N, pair.isometry, cfg.grid(), lcfg)
    if (cfg.fmt or "json") == "csv":
        text = cmp.to_csv()
    else:
        text = _json_text(cmp.to_json())
    v = cmp.verdict
    fams = ", ".join(f"#{f['id']} n={f['size']} e={f['e_mean']:.9g}" for f in cmp.families)
    _say(f"compare {pair.name}: scattering={v['scattering']} lens={v['lens']}; families: {fams}")
    return EXIT_OK, text


def _cmd_conjugates(cfg: RunConfig, args) -> tuple[int, str]:
    scene = scenes.load_scene(_need(cfg.scene, "--scene"))
    grid = cfg.grid() if args.grid else None
    rep = flow.certify_no_conjugate_points(scene, grid, cfg.integrator())
    if (cfg.fmt or "json") == "csv":
        text = _csv_text(rep["violations"], ["s", "theta", "first_conjugate_t", "tau"])
    else:
        text = _json_text(rep)
    _say(f"conjugates {scene.name}: {len(rep['violations'])} violations over {rep['checked']} geodesics")
    return EXIT_OK, text


def _read_polyline(path: str) -> np.ndarray:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip().startswith("#"):
                continue
            try:
                rows.append([float(rec[0]), float(rec[1])])
            except (ValueError, IndexError):
                if rows:
                    raise ValueError(f"bad polyline row {rec!r}")
    if len(rows) < 2:
        raise ValueError("polyline needs at least two points")
    return np.array(rows)


def _cmd_shorten(cfg: RunConfig, args) -> tuple[int, str]:
    scene = scenes.load_scene(_need(cfg.scene, "--scene"))
    pts = _read_polyline(args.polyline)
    if np.any(scene.level(pts[:, 0], pts[:, 1]) < -1e-12):
        raise DomainError("polyline leaves the scene")
    b = args.b
    if b is None and cfg.seed != 0:
        # the default radius uses seed 0 and is cached per scene
        b = pgeo.uniqueness_radius(scene, seed=cfg.seed)
    res = pgeo.shorten(scene, pts, b=b, k=args.k)
    out = res.path.to_json()
    out.update({"scene": scene.name, "sweeps": res.sweeps, "energies": res.energies, "monotone": res.monotone,
                "homotopy_preserved": res.homotopy_preserved,
                "knots": {"t": res.knots.t.tolist(), "x": res.knots.x.tolist()}})
    if (cfg.fmt or "json") == "csv":
        P = res.path.points(scene, 201)
        text = _csv_text([{"u": float(a), "v": float(b)} for a, b in P], ["u", "v"])
    else:
        text = _json_text(out)
    _say(f"shorten {scene.name}: length={res.path.length:.12g} sweeps={res.sweeps} converged={res.converged}")
    return (EXIT_OK if res.converged else EXIT_NONCONV), text


def _cmd_classify(cfg: RunConfig, args) -> tuple[int, str]:
    scene = scenes.load_scene(_need(cfg.scene, "--scene"))
    cls = scene.classification
    out = {"scene": scene.name, "classification": cls.to_json(), "counts": cls.counts()}
    if (cfg.fmt or "json") == "csv":
        rows = [{"boundary": a["boundary"], "s_start": a["s_start"], "s_end": a["s_end"], "class": a["class"]}
                for a in out["classification"]["arcs"]]
        text = _csv_text(rows, ["boundary", "s_start", "s_end", "class"])
    else:
        text = _json_text(out)
    _say(f"classify {scene.name}: {out['counts']}, {len(cls.switch_points)} switch points")
    return EXIT_OK, text


def _truth_rows(cfg: RunConfig, name: str) -> list[dict]:
    rows: list[dict] = []
    if name in scenes.pair_names():
        pair = scenes.load_pair(name)
        truths = scenes.registry_truths(name)
        cmp = lens.compare(pair.M, pair.N, pair.isometry, flow.ScatterGrid(n_s=16, n_theta=16))
        for f in cmp.families:
            key = "cap_excess" if abs(f["e_mean"] - truths["cap_excess"]) < abs(f["e_mean"] - truths["avoid_excess"]) \
                else "avoid_excess"
            rows.append({"quantity": f"family {f['id']} excess", "oracle": truths[key], "computed": f["e_mean"]})
        return rows
    scene = scenes.load_scene(name)
    truths = scenes.registry_truths(name)
    if "scattering" in truths:
        grid = flow.ScatterGrid(n_s=cfg.n_s if cfg.n_s != 64 else 8, n_theta=cfg.n_theta if cfg.n_theta != 64 else 8,
                                theta_margin=cfg.theta_margin)
        tab = flow.scattering_map(scene, grid, cfg.integrator())
        tau, s_out, th_out = truths["scattering"](tab.s, tab.theta)
        for k in range(len(tab)):
            tag = f"s={float(tab.s[k])!r} theta={float(tab.theta[k])!r}"
            rows.append({"quantity": f"tau {tag}", "oracle": float(tau[k]), "computed": float(tab.tau[k])})
            rows.append({"quantity": f"s_out {tag}", "oracle": float(s_out[k]), "computed": float(tab.s_out[k])})
            rows.append({"quantity": f"theta_out {tag}", "oracle": float(th_out[k]), "computed": float(tab.theta_out[k])})
    if "obstacle_length" in truths:
        p, q = np.array([-1.5, 0.4]), np.array([1.5, 0.4])
        g = pgeo.local_pgeodesic(scene, p, q)
        rows.append({"quantity": "p-geodesic (-1.5,0.4)->(1.5,0.4)", "oracle": truths["obstacle_length"](p, q),
                     "computed": g.length})
    if "cone_line" in truths:
        from .geometry import ChartPoint, TangentVec
        r0, ang = 0.05, 1.2
        line = truths["cone_line"](r0, ang)
        # the development direction (-cos ang, sin ang) as a unit chart vector
        f0 = float(scene.metric.profile.f(np.asarray(r0)))
        start = TangentVec(ChartPoint(r0, 0.0), -math.cos(ang), math.sin(ang) / f0)
        rec = flow.trace(scene, start, replace(cfg.integrator(), max_length=0.04))
        t_end = float(rec.t[-1])
        r_true, th_true = (float(x[0]) for x in line(np.array([t_end])))
        rows.append({"quantity": f"cone r at t={t_end!r}", "oracle": float(r_true), "computed": float(rec.points[-1, 0])})
        rows.append({"quantity": f"cone theta at t={t_end!r}", "oracle": float(th_true), "computed": float(rec.points[-1, 1])})
    if "max_chord" in truths:
        rows.append({"quantity": "max chord", "oracle": truths["max_chord"], "computed": float(scene.diameter)})
    return rows


def _cmd_truths(cfg: RunConfig, args) -> tuple[int, str]:
    name = cfg.pair or _need(cfg.scene, "--scene or --pair")
    rows = _truth_rows(cfg, name)
    for r in rows:
        r["abs_error"] = abs(float(r["computed"]) - float(r["oracle"]))
    if (cfg.fmt or "csv") == "csv":
        text = _csv_text(rows, ["quantity", "oracle", "computed", "abs_error"])
    else:
        text = _json_text({"name": name, "rows": rows})
    worst = max((r["abs_error"] for r in rows), default=0.0)
    _say(f"truths {name}: {len(rows)} comparisons, max abs error {worst:.3g}")
    return EXIT_OK, text


_COMMANDS = {
    "trace": _cmd_trace, "scatter": _cmd_scatter, "compare": _cmd_compare, "conjugates": _cmd_conjugates,
    "shorten": _cmd_shorten, "classify": _cmd_classify, "truths": _cmd_truths,
}


def _error(code: str, message: str, output: str | None, fmt: str | None) -> None:
    _emit(_json_text({"error": {"code": code, "message": message}}), output)
    _say(f"error [{code}]: {message}")


def run(argv: list[str] | None = None) -> int:
    """Run the command line; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.subcommand is None:
            raise UsageError(parser.format_usage() + "lensrig: error: a subcommand is required")
        n_s, n_theta = args.grid if args.grid else (64, 64)
        cfg = RunConfig(args.subcommand, args.scene, args.pair, n_s, n_theta, args.theta_margin, args.rtol, args.atol,
                        args.event_tol, args.tangency_tol, args.scat_tol, args.lens_tol, args.format, args.output,
                        args.seed, max(1, args.workers))
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        _emit(_json_text({"error": {"code": "usage", "message": str(exc).strip().splitlines()[-1]}}), None)
        return EXIT_USAGE
    except ValueError as exc:
        _error("validation-error", str(exc), None, None)
        return EXIT_DOMAIN
    try:
        code, text = _COMMANDS[cfg.subcommand](cfg, args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        _emit(_json_text({"error": {"code": "usage", "message": str(exc)}}), cfg.output)
        return EXIT_USAGE
    except scenes.SchemaError as exc:
        _error("schema-error", str(exc), cfg.output, cfg.fmt)
        return EXIT_DOMAIN
    except scenes.NoOracle as exc:
        _error("no-oracle", str(exc.args[0]), cfg.output, cfg.fmt)
        return EXIT_DOMAIN
    except KeyError as exc:
        _error("unknown-scene", str(exc.args[0]), cfg.output, cfg.fmt)
        return EXIT_DOMAIN
    except (DomainError, KinkError) as exc:
        _error("domain-error", str(exc), cfg.output, cfg.fmt)
        return EXIT_DOMAIN
    except ClassificationError as exc:
        _error("classification-error", str(exc), cfg.output, cfg.fmt)
        return EXIT_DOMAIN
    except (pgeo.NoConvergence, flow.StepUnderflow, lens.NonConvergentLimit) as exc:
        _error("non-convergence", str(exc), cfg.output, cfg.fmt)
        return EXIT_NONCONV
    except (OSError, ValueError) as exc:
        _error("validation-error", str(exc), cfg.output, cfg.fmt)
        return EXIT_DOMAIN
    _emit(text, cfg.output)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
