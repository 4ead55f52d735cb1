"""Scenario configuration: strict JSON parsing, semantic validation and object construction."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import expressions
from .errors import FinslerError
from .metric import (
    Chart,
    CustomMetric,
    FinslerMetric,
    MinkowskiMetric,
    RandersMetric,
    RiemannianMetric,
    StereographicSphere,
)
from .submanifold import (
    CircleSubmanifold,
    CustomImmersion,
    GraphSubmanifold,
    LineSubmanifold,
    PointSubmanifold,
    Submanifold,
)

COMMANDS = ("geodesic", "normal-cone", "distance-field", "cut-value", "tube-radius",
            "verify-tube", "smooth-distance", "acceptance-suite")
NEEDS_SUBMANIFOLD = {"normal-cone", "cut-value", "tube-radius", "verify-tube", "smooth-distance"}

Vector = list[float]
Entry = Union[float, str]


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# --- metric --------------------------------------------------------------

class RiemannianSpec(Strict):
    family: Literal["riemannian"]
    tensor: Union[str, list[list[Entry]]] = "identity"
    differentiation: Literal["analytic", "fd"] = "analytic"


class RandersSpec(Strict):
    family: Literal["randers"]
    a: Union[str, list[list[Entry]]] = "identity"
    b: list[Entry]
    differentiation: Literal["analytic", "fd"] = "analytic"


class MinkowskiSpec(Strict):
    """Either a norm expression in ``v0..`` or constant Randers data ``a``, ``b``."""

    family: Literal["minkowski"]
    norm: str | None = None
    a: Union[str, list[list[float]]] = "identity"
    b: Vector | None = None


class CustomMetricSpec(Strict):
    family: Literal["custom"]
    expression: str
    differentiation: Literal["fd"] = "fd"


MetricSpec = Annotated[Union[RiemannianSpec, RandersSpec, MinkowskiSpec, CustomMetricSpec],
                       Field(discriminator="family")]


class BoxSpec(Strict):
    lower: Vector
    upper: Vector


# --- submanifold ---------------------------------------------------------

class PointSpec(Strict):
    kind: Literal["point"]
    point: Vector


class LineSpec(Strict):
    kind: Literal["line"]
    origin: Vector
    direction: Vector
    lower: float = -1.0
    upper: float = 1.0


class CircleSpec(Strict):
    kind: Literal["circle"]
    center: Vector
    radius: float = Field(1.0, gt=0)
    lower: float = 0.0
    upper: float = 2 * math.pi


class GraphSpec(Strict):
    """Graph of expressions in ``u0..u{k-1}`` giving the last ``n - k`` coordinates."""

    kind: Literal["graph"]
    expressions: list[str]
    lower: Vector
    upper: Vector


class CustomImmersionSpec(Strict):
    kind: Literal["custom"]
    expressions: list[str]
    lower: Vector
    upper: Vector
    periodic: list[bool] | None = None


SubmanifoldSpec = Annotated[Union[PointSpec, LineSpec, CircleSpec, GraphSpec, CustomImmersionSpec],
                            Field(discriminator="kind")]


class OracleSpec(Strict):
    region: BoxSpec | None = None
    resolution: int = Field(256, ge=8, le=4096)
    stencil: int = Field(3, ge=1, le=8)


# --- tasks ---------------------------------------------------------------

Side = Literal["+", "-"]


class GeodesicTask(Strict):
    command: Literal["geodesic"]
    p: Vector | None = None
    v: Vector | None = None
    t_max: float = Field(1.0, gt=0)
    samples: int = Field(101, ge=2)


class NormalConeTask(Strict):
    command: Literal["normal-cone"]
    u: list[Vector] | None = None
    resolution: int = Field(8, ge=1)
    sphere_resolution: int = Field(32, ge=1)
    side: Side | None = None


class DistanceFieldTask(Strict):
    command: Literal["distance-field"]
    source: Union[Literal["submanifold"], Vector] = "submanifold"
    reverse: bool = False
    queries: list[Vector] = []


class SweepTask(Strict):
    horizon: float = Field(2.0, gt=0)
    tol: float = Field(1e-3, gt=0)
    resolution: int = Field(16, ge=1)
    sphere_resolution: int = Field(32, ge=1)
    fan_resolution: int = Field(64, ge=4)
    side: Side | None = None
    Q: BoxSpec | None = None


class CutValueTask(SweepTask):
    command: Literal["cut-value"]


class TubeRadiusTask(SweepTask):
    command: Literal["tube-radius"]
    safety: float = Field(0.9, gt=0, le=1)


class VerifyTubeTask(SweepTask):
    command: Literal["verify-tube"]
    epsilon: float | None = None
    time_samples: int = Field(64, ge=2)

    @field_validator("epsilon")
    @classmethod
    def _positive(cls, value):
        if value is not None and not value > 0:
            raise ValueError("tube radius must be positive")
        return value


class SmoothDistanceTask(VerifyTubeTask):
    command: Literal["smooth-distance"]
    time_samples: int = Field(32, ge=2)


class AcceptanceTask(Strict):
    command: Literal["acceptance-suite"]
    criteria: list[int] = list(range(1, 13))

    @field_validator("criteria")
    @classmethod
    def _known(cls, value):
        bad = [c for c in value if not 1 <= c <= 12]
        if bad:
            raise ValueError(f"unknown criteria {bad}; valid ids are 1..12")
        return value


TaskSpec = Annotated[Union[GeodesicTask, NormalConeTask, DistanceFieldTask, CutValueTask, TubeRadiusTask,
                           VerifyTubeTask, SmoothDistanceTask, AcceptanceTask], Field(discriminator="command")]


class OutputSpec(Strict):
    directory: str | None = None
    prefix: str = ""

    @field_validator("prefix")
    @classmethod
    def _safe(cls, value):
        if not re.fullmatch(r"[A-Za-z0-9_.-]*", value):
            raise ValueError("prefix may contain only letters, digits, '_', '.' and '-'")
        return value


class ScenarioConfig(Strict):
    name: str | None = None
    description: str | None = None
    metric: MetricSpec | None = None
    chart: BoxSpec | None = None
    submanifold: SubmanifoldSpec | None = None
    oracle: OracleSpec = OracleSpec()
    task: TaskSpec | None = None
    output: OutputSpec = OutputSpec()
    seed: int = 0


# --- errors --------------------------------------------------------------

@dataclass(frozen=True)
class ConfigIssue:
    pointer: str
    message: str

    def __str__(self):
        return f"{self.pointer or '/'}: {self.message}"


class ConfigError(FinslerError, ValueError):
    def __init__(self, issues: list[ConfigIssue]):
        self.issues = issues
        super().__init__("; ".join(str(i) for i in issues))


_TAGS = {"metric": "family", "submanifold": "kind", "task": "command"}


def _pointer(loc, data) -> str:
    loc = list(loc)
    if len(loc) >= 2 and loc[0] in _TAGS and isinstance(data, dict):
        tag = data.get(loc[0], {}).get(_TAGS[loc[0]]) if isinstance(data.get(loc[0]), dict) else None
        if loc[1] == tag:
            del loc[1]
    # union members of plain fields add their type name
    cleaned = [str(p) for p in loc if not (isinstance(p, str) and (p.startswith(("list[", "str", "float", "int",
                                                                                    "bool", "literal["))
                                                                  or p.endswith("]") and "[" in p))]
    return "/" + "/".join(c.replace("~", "~0").replace("/", "~1") for c in cleaned)


# --- parsing -------------------------------------------------------------

def parse_config(text: str, command: str | None = None) -> ScenarioConfig:
    """Validate a JSON scenario; raises :class:`ConfigError` listing every problem.

    ``command`` (from the CLI) fills ``task.command`` when absent and must match it otherwise.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([ConfigIssue("", f"syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}")])
    if not isinstance(data, dict):
        raise ConfigError([ConfigIssue("", "top level must be a JSON object")])
    if command is not None:
        if command not in COMMANDS:
            raise ConfigError([ConfigIssue("/task/command", f"unknown command {command!r}")])
        task = data.get("task")
        if task is None:
            data["task"] = {"command": command}
        elif isinstance(task, dict):
            given = task.get("command")
            if given is None:
                data["task"] = {"command": command, **task}
            elif given != command:
                raise ConfigError([ConfigIssue("/task/command",
                                               f"config is for {given!r}, command line asked for {command!r}")])
    try:
        config = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        issues = [ConfigIssue(_pointer(e["loc"], data), e["msg"]) for e in exc.errors()]
        raise ConfigError(_dedupe(issues)) from None
    issues = semantic_issues(config)
    if issues:
        raise ConfigError(issues)
    return config


def _dedupe(issues):
    seen, out = set(), []
    for i in issues:
        if (i.pointer, i.message) not in seen:
            seen.add((i.pointer, i.message))
            out.append(i)
    return out


def semantic_issues(config: ScenarioConfig) -> list[ConfigIssue]:
    issues: list[ConfigIssue] = []
    command = config.task.command if config.task else None
    if command != "acceptance-suite":
        if config.metric is None:
            issues.append(ConfigIssue("/metric", "a metric is required"))
        if config.chart is None:
            issues.append(ConfigIssue("/chart", "a chart is required"))
    if command in NEEDS_SUBMANIFOLD and config.submanifold is None:
        issues.append(ConfigIssue("/submanifold", f"command {command!r} needs a submanifold"))
    if config.chart is None:
        return issues

    try:
        chart = build_chart(config.chart)
    except (ValueError, FinslerError) as exc:
        return issues + [ConfigIssue("/chart", str(exc))]
    n = chart.dimension

    region = config.oracle.region
    if region is not None:
        if len(region.lower) != n or len(region.upper) != n:
            issues.append(ConfigIssue("/oracle/region", f"region must have {n} lower and upper bounds"))
        elif not chart.contains_box(region.lower, region.upper):
            issues.append(ConfigIssue("/oracle/region", "region is not contained in the chart domain"))

    if config.metric is not None:
        try:
            build_metric(config.metric, chart)
        except _MetricIssue as exc:
            issues.append(ConfigIssue(exc.pointer, exc.message))

    sub = None
    if config.submanifold is not None:
        try:
            sub = build_submanifold(config.submanifold, n)
        except (ValueError, FinslerError) as exc:
            issues.append(ConfigIssue("/submanifold", str(exc)))

    task = config.task
    if isinstance(task, GeodesicTask):
        for key in ("p", "v"):
            vec = getattr(task, key)
            if vec is not None and len(vec) != n:
                issues.append(ConfigIssue(f"/task/{key}", f"expected {n} components"))
        if task.p is not None and len(task.p) == n and not chart.contains(np.array(task.p)):
            issues.append(ConfigIssue("/task/p", "initial point outside the chart domain"))
    if isinstance(task, DistanceFieldTask):
        if task.source != "submanifold" and len(task.source) != n:
            issues.append(ConfigIssue("/task/source", f"expected {n} components"))
        if task.source == "submanifold" and config.submanifold is None:
            issues.append(ConfigIssue("/submanifold", "distance from a submanifold needs one"))
        for i, q in enumerate(task.queries):
            if len(q) != n:
                issues.append(ConfigIssue(f"/task/queries/{i}", f"expected {n} components"))
    if isinstance(task, NormalConeTask) and task.u is not None and sub is not None:
        for i, u in enumerate(task.u):
            try:
                sub.check_parameter(u)
            except FinslerError as exc:
                issues.append(ConfigIssue(f"/task/u/{i}", str(exc)))
    if isinstance(task, SweepTask) and task.Q is not None and sub is not None:
        from .tube import check_q_box

        try:
            check_q_box(sub, task.Q.lower, task.Q.upper)
        except FinslerError as exc:
            issues.append(ConfigIssue("/task/Q", str(exc)))
    return issues


# --- construction --------------------------------------------------------

class _MetricIssue(Exception):
    def __init__(self, pointer, message):
        self.pointer, self.message = pointer, message
        super().__init__(message)


def build_chart(spec: BoxSpec) -> Chart:
    if len(spec.lower) != len(spec.upper):
        raise ValueError("chart bounds have different lengths")
    return Chart(np.array(spec.lower, dtype=float), np.array(spec.upper, dtype=float))


def default_region(chart: Chart) -> tuple[np.ndarray, np.ndarray]:
    """Chart box shrunk by 5% of its width on every side."""
    pad = 0.05 * (chart.upper - chart.lower)
    return chart.lower + pad, chart.upper - pad


_SPHERE = re.compile(r"\s*stereographic-sphere\(\s*([^)]+)\)\s*")


def _tensor(value, n, pointer):
    if isinstance(value, str):
        if value == "identity":
            return np.eye(n)
        m = _SPHERE.fullmatch(value)
        if m:
            try:
                radius = float(m.group(1))
            except ValueError:
                raise _MetricIssue(pointer, f"bad sphere radius {m.group(1)!r}") from None
            if not radius > 0:
                raise _MetricIssue(pointer, "sphere radius must be positive")
            return StereographicSphere(radius)
        raise _MetricIssue(pointer, f"unknown tensor {value!r}; use 'identity', "
                                    "'stereographic-sphere(R)' or a matrix")
    rows = np.asarray(value, dtype=object)
    if rows.shape != (n, n):
        raise _MetricIssue(pointer, f"expected a {n}x{n} matrix")
    if all(not isinstance(e, str) for e in rows.reshape(-1)):
        return rows.astype(float)
    from .metric import CallableTensor

    try:
        func, grad = expressions.compile_field(value, n)
    except ValueError as exc:
        raise _MetricIssue(pointer, str(exc)) from None
    return CallableTensor(func, grad)


def _one_form(value, n, pointer):
    if len(value) != n:
        raise _MetricIssue(pointer, f"expected {n} components")
    if all(not isinstance(e, str) for e in value):
        return np.asarray(value, dtype=float)
    from .metric import CallableOneForm

    try:
        func, grad = expressions.compile_field(value, n)
    except ValueError as exc:
        raise _MetricIssue(pointer, str(exc)) from None
    return CallableOneForm(func, grad)


def build_metric(spec, chart: Chart) -> FinslerMetric:
    n = chart.dimension
    try:
        if isinstance(spec, RiemannianSpec):
            return RiemannianMetric(chart, _tensor(spec.tensor, n, "/metric/tensor"), spec.differentiation)
        if isinstance(spec, RandersSpec):
            a = _tensor(spec.a, n, "/metric/a")
            b = _one_form(spec.b, n, "/metric/b")
            return _randers(chart, a, b, spec.differentiation)
        if isinstance(spec, MinkowskiSpec):
            if spec.norm is not None:
                if spec.b is not None or spec.a != "identity":
                    raise _MetricIssue("/metric", "give either 'norm' or constant 'a'/'b', not both")
                try:
                    f = expressions.compile_array([spec.norm], [expressions.symbols("v", n)], ())
                except ValueError as exc:
                    raise _MetricIssue("/metric/norm", str(exc)) from None
                return MinkowskiMetric(chart, f)
            a = _tensor(spec.a, n, "/metric/a")
            b = _one_form(spec.b if spec.b is not None else [0.0] * n, n, "/metric/b")
            return _randers(chart, a, b, "analytic")
        try:
            f = expressions.compile_array([spec.expression], [expressions.symbols("x", n), expressions.symbols("v", n)], ())
        except ValueError as exc:
            raise _MetricIssue("/metric/expression", str(exc)) from None
        return CustomMetric(chart, f)
    except _MetricIssue:
        raise
    except (ValueError, FinslerError) as exc:
        raise _MetricIssue("/metric", str(exc)) from None


def _randers(chart, a, b, differentiation):
    try:
        return RandersMetric(chart, a, b, differentiation)
    except FinslerError as exc:
        raise _MetricIssue("/metric/b", f"positivity violated: {exc}") from None
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise _MetricIssue("/metric/a", str(exc)) from None


def build_submanifold(spec, n: int) -> Submanifold:
    def dim(vec, what):
        if len(vec) != n:
            raise ValueError(f"{what} must have {n} components")
        return np.asarray(vec, dtype=float)

    if isinstance(spec, PointSpec):
        return PointSubmanifold(dim(spec.point, "point"))
    if isinstance(spec, LineSpec):
        direction = dim(spec.direction, "direction")
        if not np.linalg.norm(direction) > 0:
            raise ValueError("line direction must be nonzero")
        return LineSubmanifold(dim(spec.origin, "origin"), direction, spec.lower, spec.upper)
    if isinstance(spec, CircleSpec):
        if n < 2:
            raise ValueError("a circle needs dimension at least 2")
        return CircleSubmanifold(dim(spec.center, "center"), spec.radius, spec.lower, spec.upper)
    k = len(spec.lower)
    if len(spec.upper) != k:
        raise ValueError("parameter bounds have different lengths")
    us = expressions.symbols("u", k)
    if isinstance(spec, GraphSpec):
        if len(spec.expressions) != n - k:
            raise ValueError(f"graph needs {n - k} expressions for {k} parameters in dimension {n}")
        f = expressions.compile_array(spec.expressions, [us], (n - k,))
        return GraphSubmanifold(f, n, spec.lower, spec.upper)
    if len(spec.expressions) != n:
        raise ValueError(f"immersion needs {n} coordinate expressions")
    f = expressions.compile_array(spec.expressions, [us], (n,))
    return CustomImmersion(f, n, spec.lower, spec.upper, spec.periodic)


@dataclass(eq=False)
class Scenario:
    config: ScenarioConfig
    chart: Chart | None
    metric: FinslerMetric | None
    submanifold: Submanifold | None
    region: tuple[np.ndarray, np.ndarray] | None


def build_scenario(config: ScenarioConfig) -> Scenario:
    chart = build_chart(config.chart) if config.chart else None
    metric = build_metric(config.metric, chart) if config.metric and chart else None
    sub = build_submanifold(config.submanifold, chart.dimension) if config.submanifold and chart else None
    region = None
    if chart is not None:
        r = config.oracle.region
        region = (np.array(r.lower), np.array(r.upper)) if r else default_region(chart)
    return Scenario(config, chart, metric, sub, region)


def config_hash(config: ScenarioConfig) -> str:
    import hashlib

    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
