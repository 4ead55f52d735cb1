"""``finsler-lab`` command-line entry point."""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .acceptance import AcceptanceSuite
from .config import (
    COMMANDS,
    ConfigError,
    Scenario,
    build_scenario,
    config_hash,
    parse_config,
)
from .cut import NormalFan, sample_cut_locus
from .distance import DistanceField, GridGraph, build_field, cache_key, load_field_values, save_field_values
from .geodesic import shoot
from .normal import orthogonality_residual, sample_unit_normals
from .output import dumps, write_csv, write_json
from .tube import check_q_box, estimate_tube_radius, verify_smooth_distance, verify_tube

EXIT_OK, EXIT_ERROR, EXIT_VERIFICATION = 0, 1, 2
DEFAULT_OUT = "finsler-lab-output"


class Runner:
    """Executes one command for one validated scenario and tracks outputs and cache use."""

    def __init__(self, scenario: Scenario, out: Path, threads: int = 1, use_cache: bool = True):
        self.scenario = scenario
        self.config = scenario.config
        self.task = scenario.config.task
        self.out = out
        self.threads = threads
        self.use_cache = use_cache
        self.outputs: list[str] = []
        self.cache = {"hits": 0, "misses": 0, "writes": 0}
        self.timings: dict[str, float] = {}
        self._graph = None
        self._field = None

    def path(self, name: str) -> Path:
        return self.out / f"{self.config.output.prefix}{name}"

    def csv(self, name, header, rows):
        write_csv(self.path(name), header, rows)
        self.outputs.append(self.path(name).name)

    def json(self, name, obj):
        write_json(self.path(name), obj)
        self.outputs.append(self.path(name).name)

    def timed(self, label, func, *args, **kwargs):
        start = time.perf_counter()
        try:
            return func(*args, **kwargs)
        finally:
            self.timings[label] = self.timings.get(label, 0.0) + time.perf_counter() - start

    # --- oracle with cache ------------------------------------------------

    def graph(self) -> GridGraph:
        if self._graph is None:
            s = self.scenario
            o = self.config.oracle
            self._graph = self.timed("oracle_graph", GridGraph, s.metric, s.region, o.resolution, o.stencil)
        return self._graph

    def field(self, source=None, reversed_metric: bool = False) -> DistanceField:
        """Distance field from ``source`` (a point) or, by default, the submanifold."""
        s = self.scenario
        graph = self.graph().transpose() if reversed_metric else self.graph()
        sources = s.submanifold if source is None else np.asarray(source, dtype=float)
        payload = json.dumps({
            "metric": self.config.metric.model_dump(mode="json"),
            "chart": self.config.chart.model_dump(mode="json"),
            "region": [s.region[0].tolist(), s.region[1].tolist()],
            "resolution": self.config.oracle.resolution,
            "stencil": self.config.oracle.stencil,
            "sources": (self.config.submanifold.model_dump(mode="json") if source is None
                        else [float(x) for x in sources]),
            "reverse": reversed_metric,
        }, sort_keys=True)
        key = cache_key(payload)
        cache_file = self.out / ".cache" / f"{key}.fld"
        if self.use_cache:
            values = load_field_values(cache_file, key)
            if values is not None and values.shape == graph.shape:
                self.cache["hits"] += 1
                return build_field(graph.metric, None, sources=sources, graph=graph, values=values)
            self.cache["misses"] += 1
        fld = self.timed("oracle_field", build_field, graph.metric, None, sources=sources, graph=graph)
        if self.use_cache:
            cache_file.parent.mkdir(parents=True, exist_ok=True)
            save_field_values(cache_file, key, fld.values)
            self.cache["writes"] += 1
        return fld

    def submanifold_field(self) -> DistanceField:
        if self._field is None:
            self._field = self.field()
        return self._field

    # --- commands ----------------------------------------------------------

    def run(self) -> int:
        handler = getattr(self, "cmd_" + self.task.command.replace("-", "_"))
        return handler()

    def cmd_geodesic(self) -> int:
        s, t = self.scenario, self.task
        n = s.chart.dimension
        p = np.array(t.p) if t.p is not None else 0.5 * (s.chart.lower + s.chart.upper)
        v = np.array(t.v) if t.v is not None else np.eye(n)[0]
        path = self.timed("shoot", shoot, s.metric, p, v, t.t_max)
        ts, X, V = path.sample(t.samples)
        speed = s.metric._norm(X, V)
        header = ["t"] + [f"x{i}" for i in range(n)] + [f"v{i}" for i in range(n)] + ["speed"]
        self.csv("geodesic.csv", header, [[ts[j], *X[j], *V[j], speed[j]] for j in range(len(ts))])
        self.json("geodesic.json", {"t_end": path.t_end, "exited": path.exited, "t_exit": path.t_exit,
                                    "rtol": path.rtol, "atol": path.atol})
        return EXIT_OK

    def cmd_normal_cone(self) -> int:
        s, t = self.scenario, self.task
        sub = s.submanifold
        params = np.array(t.u) if t.u is not None else sub.sample_parameters(t.resolution)
        normals = self.timed("normals", sample_unit_normals, s.metric, sub, params, t.sphere_resolution, t.side)
        n, k = sub.n, sub.k
        header = ([f"u{i}" for i in range(k)] + ["side"] + [f"p{i}" for i in range(n)]
                  + [f"v{i}" for i in range(n)] + ["F", "orthogonality_residual"])
        rows = [[*np.atleast_1d(nv.u), nv.side or "", *nv.base, *nv.vector, s.metric._norm(nv.base, nv.vector),
                 orthogonality_residual(s.metric, sub, nv)] for nv in normals]
        self.csv("normals.csv", header, rows)
        return EXIT_OK

    def cmd_distance_field(self) -> int:
        s, t = self.scenario, self.task
        source = None if t.source == "submanifold" else t.source
        fld = self.field(source, reversed_metric=t.reverse)
        g = fld.graph
        n = s.chart.dimension
        header = [f"x{i}" for i in range(n)] + ["d"]
        coords = np.stack(np.meshgrid(*g.axes, indexing="ij"), axis=-1).reshape(-1, n)
        self.csv("distance_field.csv", header, np.column_stack([coords, fld.values.reshape(-1)]))
        if t.queries:
            q = np.array(t.queries)
            d = np.atleast_1d(fld.distance(q))
            self.csv("distance_queries.csv", header + ["error_bound"],
                     [[*q[i], d[i], fld.error_bound(d[i])] for i in range(len(q))])
        self.json("distance_field.json", {"grid_step": fld.step, "metrication": g.metrication, "fmax": g.fmax,
                                          "shape": list(g.shape), "reverse": t.reverse,
                                          "error_model": "metrication * d + 2 * step * fmax * (1 + metrication)"})
        return EXIT_OK

    def _sweep_args(self):
        s, t = self.scenario, self.task
        fan = self.timed("fan", NormalFan, s.metric, s.submanifold, t.horizon,
                         foot_resolution=t.fan_resolution, sphere_resolution=max(32, t.sphere_resolution))
        q_lower = t.Q.lower if t.Q else None
        q_upper = t.Q.upper if t.Q else None
        return fan, q_lower, q_upper

    def cmd_cut_value(self) -> int:
        s, t = self.scenario, self.task
        fld = self.submanifold_field()
        fan, q_lower, q_upper = self._sweep_args()
        sub = s.submanifold
        lo = sub.param_lower if q_lower is None else np.array(q_lower)
        hi = sub.param_upper if q_upper is None else np.array(q_upper)
        params = sub.sample_parameters(t.resolution, lo, hi)
        results = self.timed("cut", sample_cut_locus, s.metric, sub, t.sphere_resolution, t.horizon, t.tol, fld,
                             t.side, fan, params, self.threads)
        n, k = sub.n, sub.k
        header = ([f"u{i}" for i in range(k)] + ["side"] + [f"v{i}" for i in range(n)]
                  + ["cut_value", "bracket_width", "method", "horizon", "truncated"]
                  + [f"cut_point{i}" for i in range(n)] + ["error"])
        rows = []
        for nv, r in results:
            point = r.point if r.point is not None else [math.nan] * n
            rows.append([*np.atleast_1d(nv.u), nv.side or "", *nv.vector, r.value, r.width, r.method, r.horizon,
                         r.truncated, *point, r.error or ""])
        self.csv("cut_values.csv", header, rows)
        return EXIT_OK

    def _tube(self):
        s, t = self.scenario, self.task
        fld = self.submanifold_field()
        fan, q_lower, q_upper = self._sweep_args()
        report = self.timed("tube", estimate_tube_radius, s.metric, s.submanifold, q_lower, q_upper,
                            t.resolution, t.horizon, t.tol, fld, t.side, t.sphere_resolution, fan,
                            getattr(t, "safety", 0.9), self.threads)
        return report, fld, q_lower, q_upper

    def cmd_tube_radius(self) -> int:
        report, _, _, _ = self._tube()
        self.json("tube_report.json", report.summary())
        sub = self.scenario.submanifold
        n, k = sub.n, sub.k
        header = ([f"u{i}" for i in range(k)] + ["side"] + [f"v{i}" for i in range(n)]
                  + ["cut_value", "cut_method", "focal_instant", "focal_mode", "exit_time", "error"])
        rows = []
        for smp in report.samples:
            nv = smp.normal
            rows.append([*np.atleast_1d(nv.u), nv.side or "", *nv.vector,
                         smp.cut.value if smp.cut else math.nan, smp.cut.method if smp.cut else "",
                         smp.focal.value if smp.focal else math.nan, smp.focal.mode if smp.focal else "",
                         smp.exit_time, smp.error or ""])
        self.csv("tube_samples.csv", header, rows)
        return EXIT_OK

    def _epsilon(self):
        t = self.task
        if t.epsilon is not None:
            fld = self.submanifold_field()
            if t.Q is not None:
                check_q_box(self.scenario.submanifold, t.Q.lower, t.Q.upper)
            return t.epsilon, fld, (t.Q.lower if t.Q else None), (t.Q.upper if t.Q else None), None
        report, fld, q_lower, q_upper = self._tube()
        return report.epsilon, fld, q_lower, q_upper, report.summary()

    def cmd_verify_tube(self) -> int:
        s, t = self.scenario, self.task
        eps, fld, q_lower, q_upper, summary = self._epsilon()
        result = self.timed("verify", verify_tube, s.metric, s.submanifold, eps, fld, q_lower, q_upper,
                            t.resolution, t.time_samples, t.side, t.sphere_resolution, t.tol)
        self.json("verify_tube.json", {**result.as_dict(), "tube_report": summary})
        return EXIT_OK if result.passed else EXIT_VERIFICATION

    def cmd_smooth_distance(self) -> int:
        s, t = self.scenario, self.task
        eps, fld, q_lower, q_upper, summary = self._epsilon()
        result = self.timed("smooth", verify_smooth_distance, s.metric, s.submanifold, eps, fld, q_lower, q_upper,
                            t.resolution, t.time_samples, t.side, t.sphere_resolution)
        self.json("smooth_distance.json", {**result.as_dict(), "tube_report": summary})
        return EXIT_OK if result.passed else EXIT_VERIFICATION

    def cmd_acceptance_suite(self) -> int:
        suite = AcceptanceSuite(seed=self.config.seed)
        results = []
        for cid in self.task.criteria:
            r = suite.run_one(cid)
            self.timings[f"criterion_{cid}"] = r.seconds
            print(r.line(), flush=True)
            results.append(r)
        passed = all(r.passed for r in results)
        self.json("acceptance_report.json", {"passed": passed, "seed": self.config.seed,
                                             "criteria": [r.as_dict() for r in results]})
        return EXIT_OK if passed else EXIT_VERIFICATION


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="finsler-lab", description="Finsler geodesics, cut values and tubes.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON scenario file")
    p.add_argument("--out", default=None, help=f"output directory (default: config output.directory or {DEFAULT_OUT})")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads for per-normal sweeps")
    p.add_argument("--no-cache", action="store_true", help="neither read nor write the distance-field cache")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    started = time.perf_counter()
    manifest = {"tool": "finsler-lab", "version": __version__, "command": args.command,
                "config_path": str(args.config), "config_hash": None, "threads": args.threads,
                "cache_enabled": not args.no_cache, "outputs": [], "errors": []}
    out = Path(args.out) if args.out else None
    code = EXIT_ERROR
    runner = None
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        config = parse_config(text, args.command)
        manifest["config_hash"] = config_hash(config)
        if out is None:
            out = Path(config.output.directory or DEFAULT_OUT)
        out.mkdir(parents=True, exist_ok=True)
        runner = Runner(build_scenario(config), out, args.threads, not args.no_cache)
        code = runner.run()
    except ConfigError as exc:
        manifest["errors"].extend({"pointer": i.pointer, "message": i.message} for i in exc.issues)
    except OSError as exc:
        manifest["errors"].append({"message": f"{type(exc).__name__}: {exc}"})
    except Exception as exc:  # noqa: BLE001 - serialized into the manifest
        manifest["errors"].append({"message": f"{type(exc).__name__}: {exc}",
                                   "traceback": traceback.format_exc(limit=8)})
    out = out or Path(DEFAULT_OUT)
    if runner is not None:
        manifest["outputs"] = runner.outputs
        manifest["cache"] = runner.cache
        manifest["timings"] = runner.timings
    manifest["exit_code"] = code
    manifest["status"] = {EXIT_OK: "success", EXIT_VERIFICATION: "verification-failed"}.get(code, "error")
    manifest["seconds"] = time.perf_counter() - started
    for err in manifest["errors"]:
        where = f"{err['pointer'] or '/'}: " if "pointer" in err else ""
        print(f"error: {where}{err['message']}", file=sys.stderr)
    try:
        write_json(out / "manifest.json", manifest)
    except OSError as exc:
        print(f"error: cannot write manifest: {exc}", file=sys.stderr)
        print(dumps(manifest), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
