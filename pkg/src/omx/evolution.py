"""Two-stage graph evolution: proximity discovery plus ADF screening.

Each round runs a bounded BFS from the current frontier, screens newly reached
metrics with the adaptive detector, and lets abnormal metrics seed the next
round. Branches that end only in normal metrics are clipped before the
context is handed to the prompt builder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

from .adf import ADFConfig, ADFResult, evaluate
from .anomaly import AnomalyEvent
from .errors import DanglingEndpoint, InsufficientData, OmxError, UnknownTrigger
from .graph import (CreatedBy, Edge, ExpandLimits, ExperienceGraph, Relation, VertexKind, bfs)
from .metrics import MetricStore
from .tools import DEFAULT_REGISTRY, MetricSnapshot, ToolFindings, ToolRegistry, run_safely


@dataclass(frozen=True)
class EvolutionConfig:
    limits: ExpandLimits = ExpandLimits(max_depth=2, max_vertices=200, min_edge_weight=0.0)
    max_rounds: int = 3
    adf: ADFConfig = ADFConfig()
    cross_edge_increment: float = 1.0
    screen_window_seconds: int = 600

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not (math.isfinite(self.cross_edge_increment) and self.cross_edge_increment > 0):
            raise ValueError("cross_edge_increment must be > 0")
        if self.screen_window_seconds <= 0:
            raise ValueError("screen_window_seconds must be > 0")

    def to_dict(self) -> dict:
        return {"limits": self.limits.to_dict(), "max_rounds": self.max_rounds,
                "adf": self.adf.to_dict(), "cross_edge_increment": self.cross_edge_increment,
                "screen_window_seconds": self.screen_window_seconds}

    @classmethod
    def from_dict(cls, d: dict) -> "EvolutionConfig":
        base = cls()
        return cls(ExpandLimits.from_dict(d["limits"]) if "limits" in d else base.limits,
                   int(d.get("max_rounds", base.max_rounds)),
                   ADFConfig.from_dict(d["adf"]) if "adf" in d else base.adf,
                   float(d.get("cross_edge_increment", base.cross_edge_increment)),
                   int(d.get("screen_window_seconds", base.screen_window_seconds)))


@dataclass
class ExperienceItem:
    vertex_id: str
    text: str
    cause: str | None = None

    def to_dict(self) -> dict:
        return {"vertex_id": self.vertex_id, "text": self.text, "cause": self.cause}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperienceItem":
        return cls(d["vertex_id"], d["text"], d.get("cause"))


@dataclass
class DiagnosisContext:
    anomaly: AnomalyEvent
    trigger: str
    explored_paths: list = field(default_factory=list)
    abnormal_metrics: list = field(default_factory=list)   # (metric_id, ADFResult)
    normal_metrics: list = field(default_factory=list)     # metric ids
    experience_texts: list = field(default_factory=list)   # ExperienceItem
    tool_findings: list = field(default_factory=list)      # ToolFindings
    created_cross_edges: list = field(default_factory=list)
    metric_windows: dict = field(default_factory=dict)     # metric_id -> [(ts, value)]
    normal_results: dict = field(default_factory=dict)     # metric_id -> ADFResult
    units: dict = field(default_factory=dict)
    screening_errors: list = field(default_factory=list)   # (metric_id, message)
    rounds: int = 0

    def metric_ids(self) -> set:
        return {m for m, _ in self.abnormal_metrics} | set(self.normal_metrics)

    def vertices(self) -> set:
        return {v for path in self.explored_paths for v in path}

    def is_empty(self) -> bool:
        return not (self.explored_paths or self.abnormal_metrics or self.normal_metrics
                    or self.experience_texts)

    def to_dict(self) -> dict:
        return {
            "anomaly": self.anomaly.to_dict(),
            "trigger": self.trigger,
            "explored_paths": [list(p) for p in self.explored_paths],
            "abnormal_metrics": [[m, r.to_dict()] for m, r in self.abnormal_metrics],
            "normal_metrics": list(self.normal_metrics),
            "experience_texts": [e.to_dict() for e in self.experience_texts],
            "tool_findings": [f.to_dict() for f in self.tool_findings],
            "created_cross_edges": [e.to_dict() for e in self.created_cross_edges],
            "metric_windows": {k: [list(p) for p in v] for k, v in self.metric_windows.items()},
            "normal_results": {k: r.to_dict() for k, r in self.normal_results.items()},
            "units": dict(self.units),
            "screening_errors": [list(e) for e in self.screening_errors],
            "rounds": self.rounds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosisContext":
        return cls(
            AnomalyEvent.from_dict(d["anomaly"]), d["trigger"],
            [list(p) for p in d["explored_paths"]],
            [(m, ADFResult.from_dict(r)) for m, r in d["abnormal_metrics"]],
            list(d["normal_metrics"]),
            [ExperienceItem.from_dict(e) for e in d["experience_texts"]],
            [ToolFindings.from_dict(f) for f in d["tool_findings"]],
            [Edge.from_dict(e) for e in d["created_cross_edges"]],
            {k: [tuple(p) for p in v] for k, v in d["metric_windows"].items()},
            {k: ADFResult.from_dict(r) for k, r in d.get("normal_results", {}).items()},
            dict(d.get("units", {})),
            [tuple(e) for e in d.get("screening_errors", [])],
            int(d.get("rounds", 0)))


def screen_metric(store: MetricStore, metric_id: str, t_end: int, window_seconds: int,
                  cfg: ADFConfig):
    """Run the detector on the window ending at ``t_end``.

    Returns (result, window points). The baseline uses points before the
    window, falling back to earlier points inside it when there are none.
    """
    start = t_end - window_seconds
    points = store.get_window(metric_id, start + 1, t_end)
    values = [p.value for p in points]
    if len(values) < 2:
        raise InsufficientData(2, len(values))
    x_last = points[-1]
    history = store.before(metric_id, start + 1)
    if not history:
        history = points[:-1]
    result = evaluate(values, x_last.value, x_last.ts, history, cfg)
    return result, [(p.ts, p.value) for p in points]


def reinforce_cross_edges(graph: ExperienceGraph, co_abnormal, increment: float) -> int:
    """Create or strengthen evolution-made Relevance edges between vertex pairs.

    Pairs already joined by a manual or enrichment Relevance edge are left alone.
    """
    updated, _ = _reinforce(graph, co_abnormal, increment)
    return updated


def _reinforce(graph, co_abnormal, increment):
    touched = []
    for a, b in co_abnormal:
        for vid in (a, b):
            if vid not in graph.vertices:
                raise DanglingEndpoint(vid)
        src, dst = min(a, b), max(a, b)
        if src == dst:
            continue
        existing = graph.edges_between(src, dst)
        relevance = [e for e in existing if e.relation is Relation.RELEVANCE]
        evo = [e for e in relevance if e.created_by == CreatedBy.EVOLUTION.value]
        if evo:
            edge = evo[0]
            edge.attributes["weight"] = edge.weight + increment
            touched.append(edge)
        elif relevance:
            continue
        else:
            edge = Edge(src, Relation.RELEVANCE, dst,
                        {"weight": increment, "created_by": CreatedBy.EVOLUTION.value})
            graph.upsert_edge(edge)
            touched.append(edge)
    return len(touched), touched


def _path(parent: dict, vid: str) -> list:
    out = [vid]
    while parent[out[-1]] is not None:
        out.append(parent[out[-1]])
    return out[::-1]


def evolve(event: AnomalyEvent, graph: ExperienceGraph, store: MetricStore,
           tools: ToolRegistry | None = None, cfg: EvolutionConfig | None = None,
           trigger_vertex: str | None = None, reinforce: bool = True) -> DiagnosisContext:
    cfg = cfg or EvolutionConfig()
    tools = tools if tools is not None else DEFAULT_REGISTRY
    trigger = trigger_vertex or graph.trigger_for_model(event.model_id)
    if trigger is None or trigger not in graph.vertices \
            or graph.vertices[trigger].kind is not VertexKind.TRIGGER:
        raise UnknownTrigger(event.model_id)
    V = graph.vertices

    parent: dict = {trigger: None}
    discovery = [trigger]
    status: dict[str, bool] = {}           # metric vertex id -> abnormal?
    results: dict[str, ADFResult] = {}     # metric_id -> result
    windows: dict[str, list] = {}
    errors: list = []
    abnormal_order: list[str] = []
    normal_order: list[str] = []
    frontier = [trigger]
    rounds = 0

    for _ in range(cfg.max_rounds):
        rounds += 1
        seeds = set(frontier)
        order, par, depth = bfs(graph, frontier, cfg.limits,
                                passable=lambda u: V[u].kind is not VertexKind.METRIC or u in seeds)
        fresh = [v for v in order if v not in parent]
        for v in fresh:
            parent[v] = par[v]
            discovery.append(v)
        new_abnormal = []
        for v in fresh:
            if V[v].kind is not VertexKind.METRIC:
                continue
            mid = V[v].payload.get("metric_id", v)
            if mid not in results and mid not in {e[0] for e in errors}:
                try:
                    res, pts = screen_metric(store, mid, event.fired_at,
                                             cfg.screen_window_seconds, cfg.adf)
                except OmxError as exc:
                    errors.append((mid, str(exc)))
                    status[v] = False
                    continue
                results[mid] = res
                windows[mid] = pts
                (abnormal_order if res.abnormal else normal_order).append(mid)
            status[v] = bool(mid in results and results[mid].abnormal)
            if status[v]:
                new_abnormal.append(v)
        if not new_abnormal:
            break
        boundary = [v for v in fresh if depth[v] == cfg.limits.max_depth
                    and V[v].kind is not VertexKind.METRIC]
        frontier = sorted(set(new_abnormal) | set(boundary))

    # clipping: keep branches that lead to an abnormal metric
    children: dict[str, list] = {v: [] for v in discovery}
    for v in discovery:
        if parent[v] is not None:
            children[parent[v]].append(v)
    leads: dict[str, bool] = {}
    for v in reversed(discovery):
        leads[v] = status.get(v, False) or any(leads[c] for c in children[v])
    kept: set = set()
    for v in discovery:  # parents precede children in discovery order
        p = parent[v]
        if p is None or leads[v] or (
                p in kept and V[v].kind in (VertexKind.EXPERIENCE, VertexKind.TOOL)):
            kept.add(v)
    kept_order = [v for v in discovery if v in kept]
    leaves = [v for v in kept_order if not any(c in kept for c in children[v])]
    paths = [_path(parent, v) for v in leaves]

    experience = []
    findings = []
    snapshot = MetricSnapshot(store, event.fired_at, cfg.screen_window_seconds)
    for v in kept_order:
        vert = V[v]
        if vert.kind is VertexKind.EXPERIENCE:
            experience.append(ExperienceItem(v, vert.payload.get("text", ""),
                                             vert.payload.get("cause")))
        elif vert.kind is VertexKind.TOOL:
            tool_id = vert.payload.get("tool_id", v)
            findings.append(run_safely(tools, tool_id, snapshot, vert.payload.get("params")))

    # co-abnormal fragments: kept triggers owning an abnormal metric
    triggers = set()
    for v, bad in status.items():
        if not bad:
            continue
        for e in graph.incident(v):
            other = e.other(v)
            if (e.relation is Relation.RELEVANCE and e.created_by == CreatedBy.MANUAL.value
                    and V[other].kind is VertexKind.TRIGGER and other in kept):
                triggers.add(other)
    pairs = list(combinations(sorted(triggers), 2))
    created = []
    if reinforce and pairs:
        _, touched = _reinforce(graph, pairs, cfg.cross_edge_increment)
        created = [Edge(e.src, e.relation, e.dst, dict(e.attributes)) for e in touched]

    units = {}
    for mid in abnormal_order + normal_order:
        vert = V.get(f"metric:{mid}")
        units[mid] = (vert.payload.get("unit") if vert else None) or store.unit(mid)
    return DiagnosisContext(
        anomaly=event, trigger=trigger, explored_paths=paths,
        abnormal_metrics=[(m, results[m]) for m in abnormal_order],
        normal_metrics=list(normal_order), experience_texts=experience,
        tool_findings=findings, created_cross_edges=created, metric_windows=windows,
        normal_results={m: results[m] for m in normal_order}, units=units,
        screening_errors=errors, rounds=rounds)
