"""Declarative multi-metric anomaly models and their evaluation."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, Union

from .errors import (BadThreshold, InsufficientData, MissingMetric, OmxError, SchemaError,
                     UnknownMetric, UnknownStatSpec)
from .metrics import STAT_NAMES, DatabaseKind, MetricStore, TrendClass

log = logging.getLogger(__name__)

EQ_TOL = 1e-9
OPS = (">", ">=", "<", "<=", "=")
_OP_ALIASES = {"≥": ">=", "≤": "<=", "==": "="}


# -- expression tree ------------------------------------------------------

@dataclass(frozen=True)
class Compare:
    metric: str
    stat: str
    window: int
    op: str
    threshold: float

    @property
    def spec(self) -> str:
        return f"{self.stat}@{self.window}s"


@dataclass(frozen=True)
class TrendIs:
    metric: str
    window: int
    trend: TrendClass

    @property
    def spec(self) -> str:
        return f"trend@{self.window}s"


@dataclass(frozen=True)
class And:
    children: tuple


@dataclass(frozen=True)
class Or:
    children: tuple


@dataclass(frozen=True)
class Not:
    child: object


DetectionExpr = Union[Compare, TrendIs, And, Or, Not]


@dataclass(frozen=True)
class Evidence:
    metric_id: str
    stat_spec: str
    value: float

    def to_dict(self) -> dict:
        return {"metric_id": self.metric_id, "stat": self.stat_spec, "value": self.value}

    @classmethod
    def from_dict(cls, d: dict) -> "Evidence":
        return cls(d["metric_id"], d["stat"], d["value"])


def leaves(expr) -> list:
    if isinstance(expr, (Compare, TrendIs)):
        return [expr]
    if isinstance(expr, Not):
        return leaves(expr.child)
    out = []
    for child in expr.children:
        out.extend(leaves(child))
    return out


def referenced_metrics(expr) -> list[str]:
    seen = []
    for leaf in leaves(expr):
        if leaf.metric not in seen:
            seen.append(leaf.metric)
    return seen


def compare(observed: float, op: str, threshold: float) -> bool:
    if op == ">":
        return observed > threshold
    if op == ">=":
        return observed >= threshold
    if op == "<":
        return observed < threshold
    if op == "<=":
        return observed <= threshold
    if op == "=":
        return abs(observed - threshold) <= EQ_TOL
    raise ValueError(op)


class Snapshot(Protocol):
    def observe(self, metric_id: str, stat: str, window_seconds: int): ...


class StoreSnapshot:
    """Read access to a metric store frozen at one evaluation instant."""

    def __init__(self, store: MetricStore, now: int):
        self.store = store
        self.now = now

    def observe(self, metric_id, stat, window_seconds):
        try:
            return self.store.observe(metric_id, stat, window_seconds, self.now)
        except UnknownMetric:
            raise MissingMetric(metric_id) from None


def evaluate_expr(expr, snapshot: Snapshot) -> tuple[bool, list[Evidence]]:
    """Evaluate every leaf (no short-circuit) and combine.

    The evidence list holds one entry per leaf in pre-order, so a caller
    always sees every observed value that went into the decision.
    """
    evidence: list[Evidence] = []

    def walk(node) -> bool:
        if isinstance(node, Compare):
            observed = float(snapshot.observe(node.metric, node.stat, node.window))
            evidence.append(Evidence(node.metric, node.spec, observed))
            return compare(observed, node.op, node.threshold)
        if isinstance(node, TrendIs):
            observed = TrendClass(int(snapshot.observe(node.metric, "trend", node.window)))
            evidence.append(Evidence(node.metric, node.spec, int(observed)))
            return observed == node.trend
        if isinstance(node, Not):
            return not walk(node.child)
        results = [walk(child) for child in node.children]
        return all(results) if isinstance(node, And) else any(results)

    return walk(expr), evidence


def render_expr(expr, units: dict[str, str] | None = None) -> str:
    """Infix rendering used in prompts and CLI output."""
    units = units or {}
    if isinstance(expr, Compare):
        unit = units.get(expr.metric, "")
        thr = f"{expr.threshold:g}{unit}"
        return f"{expr.metric}.{expr.stat}[{expr.window}s] {expr.op} {thr}"
    if isinstance(expr, TrendIs):
        return (f"{expr.metric}.trend[{expr.window}s] = {int(expr.trend)} "
                f"({expr.trend.label})")
    if isinstance(expr, Not):
        return f"NOT ({render_expr(expr.child, units)})"
    joiner = " AND " if isinstance(expr, And) else " OR "
    return joiner.join(f"({render_expr(c, units)})" for c in expr.children)


# -- models ---------------------------------------------------------------

@dataclass(frozen=True)
class FrequencyControl:
    k: int
    n: int

    def __post_init__(self):
        if not (1 <= self.k <= self.n):
            raise SchemaError("freq", "k>n" if self.k > self.n else "need 1 <= k <= n")


@dataclass
class MetricDecl:
    id: str
    unit: str = ""
    category: list[str] = field(default_factory=list)
    tags: list[str] = field(default_factory=list)


@dataclass
class ExperienceDecl:
    text: str
    source: str = "model"
    cause: str | None = None
    tags: list[str] = field(default_factory=list)
    metrics: list[str] = field(default_factory=list)


@dataclass
class ToolDecl:
    id: str
    params: dict = field(default_factory=dict)
    tags: list[str] = field(default_factory=list)


@dataclass
class AnomalyModel:
    model_id: str
    name: str
    symptom_description: str
    database_kind: DatabaseKind
    expr: object
    freq: FrequencyControl
    eval_period_seconds: int
    trigger_vertex_id: str = ""
    metrics: list[MetricDecl] = field(default_factory=list)
    tags: list[str] = field(default_factory=list)
    experience: list[ExperienceDecl] = field(default_factory=list)
    tools: list[ToolDecl] = field(default_factory=list)

    def __post_init__(self):
        if not self.trigger_vertex_id:
            self.trigger_vertex_id = f"trigger:{self.model_id}"

    def units(self) -> dict[str, str]:
        return {m.id: m.unit for m in self.metrics}


@dataclass
class AnomalyEvent:
    model_id: str
    fired_at: int
    window: tuple[int, int]
    evidence: list[Evidence]
    history: list[bool]

    @property
    def event_id(self) -> str:
        return f"{self.model_id}@{self.fired_at}"

    def to_dict(self) -> dict:
        return {"model_id": self.model_id, "fired_at": self.fired_at,
                "window": list(self.window),
                "evidence": [e.to_dict() for e in self.evidence],
                "history": list(self.history)}

    @classmethod
    def from_dict(cls, d: dict) -> "AnomalyEvent":
        return cls(d["model_id"], int(d["fired_at"]), tuple(d["window"]),
                   [Evidence.from_dict(e) for e in d["evidence"]], list(d["history"]))


def _require(doc, key, path, kind=None):
    if not isinstance(doc, dict) or key not in doc:
        raise SchemaError(f"{path}.{key}" if path else key, "missing")
    value = doc[key]
    if kind is not None and (not isinstance(value, kind) or isinstance(value, bool)):
        raise SchemaError(f"{path}.{key}" if path else key, f"expected {kind}")
    return value


def _positive_int(value, path):
    if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
        raise SchemaError(path, "expected a positive integer")
    return value


def _parse_expr(node, path, declared, period):
    if not isinstance(node, dict) or "op" not in node:
        raise SchemaError(path, "expression node needs 'op'")
    op = node["op"]
    if op == "cmp":
        metric = _require(node, "metric", path, str)
        stat = node.get("stat", "last")
        if stat not in STAT_NAMES or stat == "trend":
            raise UnknownStatSpec(f"{path}.stat", stat)
        window = _positive_int(node.get("window", period), f"{path}.window")
        cmp_op = _OP_ALIASES.get(node.get("cmp"), node.get("cmp"))
        if cmp_op not in OPS:
            raise SchemaError(f"{path}.cmp", f"unknown comparison {node.get('cmp')!r}")
        thr = node.get("threshold")
        if isinstance(thr, bool) or not isinstance(thr, (int, float)) or not math.isfinite(thr):
            raise BadThreshold(f"{path}.threshold", thr)
        leaf = Compare(metric, stat, window, cmp_op, float(thr))
    elif op == "trend":
        metric = _require(node, "metric", path, str)
        window = _positive_int(node.get("window", period), f"{path}.window")
        code = node.get("trend")
        if isinstance(code, str):
            try:
                trend = TrendClass.from_label(code)
            except ValueError:
                raise SchemaError(f"{path}.trend", f"unknown trend {code!r}") from None
        elif isinstance(code, int) and not isinstance(code, bool) and 0 <= code <= 5:
            trend = TrendClass(code)
        else:
            raise SchemaError(f"{path}.trend", "expected trend code 0..5")
        leaf = TrendIs(metric, window, trend)
    elif op in ("and", "or"):
        args = node.get("args")
        if not isinstance(args, list) or not args:
            raise SchemaError(f"{path}.args", "expected a non-empty list")
        children = tuple(_parse_expr(a, f"{path}.args[{i}]", declared, period)
                         for i, a in enumerate(args))
        return And(children) if op == "and" else Or(children)
    elif op == "not":
        return Not(_parse_expr(node.get("arg"), f"{path}.arg", declared, period))
    else:
        raise SchemaError(f"{path}.op", f"unknown op {op!r}")
    if leaf.metric not in declared:
        raise SchemaError(f"{path}.metric", f"metric {leaf.metric!r} not declared in model")
    return leaf


def _str_list(value, path):
    if value is None:
        return []
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise SchemaError(path, "expected a list of strings")
    return list(value)


def model_from_dict(doc) -> AnomalyModel:
    if not isinstance(doc, dict) or not doc:
        raise SchemaError("$", "empty or non-object model document")
    model_id = _require(doc, "id", "", str)
    name = _require(doc, "name", "", str)
    symptom = _require(doc, "symptom", "", str)
    try:
        db = DatabaseKind(_require(doc, "database", "", str))
    except ValueError:
        raise SchemaError("database", f"unknown database {doc['database']!r}") from None
    period = _positive_int(_require(doc, "period_seconds", ""), "period_seconds")
    freq_doc = _require(doc, "freq", "", dict)
    k = _positive_int(_require(freq_doc, "k", "freq"), "freq.k")
    n = _positive_int(_require(freq_doc, "n", "freq"), "freq.n")
    freq = FrequencyControl(k, n)

    metrics = []
    for i, m in enumerate(doc.get("metrics", [])):
        path = f"metrics[{i}]"
        metrics.append(MetricDecl(_require(m, "id", path, str), m.get("unit", ""),
                                  _str_list(m.get("category"), f"{path}.category"),
                                  _str_list(m.get("tags"), f"{path}.tags")))
    declared = {m.id for m in metrics}
    expr = _parse_expr(_require(doc, "expr", "", dict), "expr", declared, period)

    experience = []
    for i, e in enumerate(doc.get("experience", [])):
        path = f"experience[{i}]"
        experience.append(ExperienceDecl(
            _require(e, "text", path, str), e.get("source", "model"), e.get("cause"),
            _str_list(e.get("tags"), f"{path}.tags"), _str_list(e.get("metrics"), f"{path}.metrics")))
        for mid in experience[-1].metrics:
            if mid not in declared:
                raise SchemaError(f"{path}.metrics", f"metric {mid!r} not declared in model")
    tools = []
    for i, t in enumerate(doc.get("tools", [])):
        path = f"tools[{i}]"
        params = t.get("params", {})
        if not isinstance(params, dict):
            raise SchemaError(f"{path}.params", "expected an object")
        tools.append(ToolDecl(_require(t, "id", path, str), dict(params),
                              _str_list(t.get("tags"), f"{path}.tags")))
    return AnomalyModel(model_id, name, symptom, db, expr, freq, period,
                        doc.get("trigger_vertex", ""), metrics,
                        _str_list(doc.get("tags"), "tags"), experience, tools)


def parse_model(text: str) -> AnomalyModel:
    if not text or not text.strip():
        raise SchemaError("$", "empty document")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from None
    return model_from_dict(doc)


def expr_to_dict(expr) -> dict:
    if isinstance(expr, Compare):
        return {"op": "cmp", "metric": expr.metric, "stat": expr.stat, "window": expr.window,
                "cmp": expr.op, "threshold": expr.threshold}
    if isinstance(expr, TrendIs):
        return {"op": "trend", "metric": expr.metric, "window": expr.window,
                "trend": int(expr.trend)}
    if isinstance(expr, Not):
        return {"op": "not", "arg": expr_to_dict(expr.child)}
    return {"op": "and" if isinstance(expr, And) else "or",
            "args": [expr_to_dict(c) for c in expr.children]}


def model_to_dict(model: AnomalyModel) -> dict:
    return {
        "id": model.model_id,
        "name": model.name,
        "symptom": model.symptom_description,
        "database": model.database_kind.value,
        "period_seconds": model.eval_period_seconds,
        "freq": {"k": model.freq.k, "n": model.freq.n},
        "trigger_vertex": model.trigger_vertex_id,
        "metrics": [{"id": m.id, "unit": m.unit, "category": m.category, "tags": m.tags}
                    for m in model.metrics],
        "tags": model.tags,
        "experience": [{"text": e.text, "source": e.source, "cause": e.cause,
                        "tags": e.tags, "metrics": e.metrics} for e in model.experience],
        "tools": [{"id": t.id, "params": t.params, "tags": t.tags} for t in model.tools],
        "expr": expr_to_dict(model.expr),
    }


def serialize_model(model: AnomalyModel) -> str:
    return json.dumps(model_to_dict(model), indent=2, ensure_ascii=False) + "\n"


def load_models(directory) -> list[AnomalyModel]:
    models = []
    for path in sorted(Path(directory).glob("*.json")):
        try:
            models.append(parse_model(path.read_text(encoding="utf-8")))
        except SchemaError as exc:
            raise SchemaError(f"{path.name}:{exc.path}", exc.reason) from None
    return models


def seed_models_dir() -> Path:
    return Path(__file__).parent / "data" / "models"


def seed_models() -> list[AnomalyModel]:
    return load_models(seed_models_dir())


# -- detection ------------------------------------------------------------

def apply_frequency_control(history: Sequence[bool], freq: FrequencyControl) -> bool:
    """k-of-n debouncing over the newest entries (newest last).

    A history shorter than n is judged on what is available.
    """
    recent = list(history)[-freq.n:] if history else []
    return sum(1 for h in recent if h) >= freq.k


@dataclass
class DetectionError:
    model_id: str
    error: OmxError

    def __str__(self):
        return f"{self.model_id}: {self.error}"


def evaluation_times(model: AnomalyModel, now: int) -> list[int]:
    """The n evaluation instants ending at ``now``, oldest first."""
    n = model.freq.n
    return [now - (n - 1 - i) * model.eval_period_seconds for i in range(n)]


def detect_model(model: AnomalyModel, store: MetricStore, now: int) -> AnomalyEvent | None:
    history: list[bool] = []
    evidence_by_time: list[list[Evidence]] = []
    for t in evaluation_times(model, now):
        try:
            fired, evidence = evaluate_expr(model.expr, StoreSnapshot(store, t))
        except InsufficientData:
            fired, evidence = False, []
        history.append(fired)
        evidence_by_time.append(evidence if fired else [])
    if not apply_frequency_control(history, model.freq):
        return None
    evidence = next(e for e in reversed(evidence_by_time) if e)
    t0 = now - model.freq.n * model.eval_period_seconds
    return AnomalyEvent(model.model_id, now, (t0, now), evidence, history)


def detect(models: Sequence[AnomalyModel], store: MetricStore, now: int,
           errors: list | None = None) -> list[AnomalyEvent]:
    """Run every model at ``now``; per-model failures land in ``errors``."""
    events = []
    for model in models:
        try:
            event = detect_model(model, store, now)
        except OmxError as exc:
            log.warning("model %s skipped: %s", model.model_id, exc)
            if errors is not None:
                errors.append(DetectionError(model.model_id, exc))
            continue
        if event is not None:
            events.append(event)
    events.sort(key=lambda e: (e.model_id, e.fired_at))
    return events
