"""Heterogeneous O&M experience graph.

An embedded adjacency store; the query surface is the three operations the
diagnosis pipeline needs (localize, expand, aggregate_metrics) plus canonical
JSON persistence.
"""
from __future__ import annotations

import json
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (CorruptGraphFile, DanglingEndpoint, DuplicateModelId, GraphError, IoError,
                     KindChange, SchemaError, SelfLoop, SynonymKindViolation, UnknownSeed)
from .metrics import DatabaseKind, MetricStore

FORMAT_VERSION = 1


class VertexKind(str, Enum):
    TRIGGER = "Trigger"
    METRIC = "Metric"
    EXPERIENCE = "Experience"
    TOOL = "Tool"
    TAG = "Tag"
    AUXILIARY = "Auxiliary"


class Relation(str, Enum):
    CONTAINMENT = "Containment"
    RELEVANCE = "Relevance"
    DIAGNOSIS = "Diagnosis"
    SYNONYM = "Synonym"


class CreatedBy(str, Enum):
    MANUAL = "manual"
    ENRICHMENT = "enrichment"
    EVOLUTION = "evolution"


@dataclass
class Vertex:
    id: str
    kind: VertexKind
    database_tags: frozenset = frozenset()
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = VertexKind(self.kind)
        self.database_tags = frozenset(DatabaseKind(d) for d in self.database_tags)

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind.value,
                "database_tags": sorted(d.value for d in self.database_tags),
                "payload": self.payload}

    @classmethod
    def from_dict(cls, d: dict) -> "Vertex":
        return cls(d["id"], d["kind"], frozenset(d.get("database_tags", ())), dict(d["payload"]))


@dataclass
class Edge:
    src: str
    relation: Relation
    dst: str
    attributes: dict = field(default_factory=lambda: {"weight": 1.0, "created_by": "manual"})

    def __post_init__(self):
        self.relation = Relation(self.relation)
        attrs = dict(self.attributes)
        attrs.setdefault("weight", 1.0)
        attrs.setdefault("created_by", CreatedBy.MANUAL.value)
        attrs["weight"] = float(attrs["weight"])
        attrs["created_by"] = CreatedBy(attrs["created_by"]).value
        if not math.isfinite(attrs["weight"]) or attrs["weight"] < 0:
            raise GraphError(f"edge weight must be finite and >= 0, got {attrs['weight']}")
        self.attributes = attrs

    @property
    def key(self) -> tuple:
        return (self.src, self.relation.value, self.dst)

    @property
    def weight(self) -> float:
        return self.attributes["weight"]

    @property
    def created_by(self) -> str:
        return self.attributes["created_by"]

    def other(self, vid: str) -> str:
        return self.dst if vid == self.src else self.src

    def to_dict(self) -> dict:
        return {"src": self.src, "relation": self.relation.value, "dst": self.dst,
                "attributes": self.attributes}

    @classmethod
    def from_dict(cls, d: dict) -> "Edge":
        return cls(d["src"], d["relation"], d["dst"], dict(d["attributes"]))


@dataclass(frozen=True)
class ExpandLimits:
    max_depth: int = 2
    max_vertices: int = 500
    min_edge_weight: float = 0.0

    def __post_init__(self):
        if self.max_depth < 0 or self.max_vertices < 1 or self.min_edge_weight < 0:
            raise ValueError("invalid expand limits")
        if not math.isfinite(self.min_edge_weight):
            raise ValueError("min_edge_weight must be finite")

    def to_dict(self) -> dict:
        return {"max_depth": self.max_depth, "max_vertices": self.max_vertices,
                "min_edge_weight": self.min_edge_weight}

    @classmethod
    def from_dict(cls, d: dict) -> "ExpandLimits":
        return cls(int(d["max_depth"]), int(d["max_vertices"]), float(d["min_edge_weight"]))


@dataclass(frozen=True)
class MetricViewEntry:
    metric_id: str
    vertex_ids: tuple


def tag_vertex_id(label: str) -> str:
    return "tag:" + re.sub(r"[^a-z0-9]+", "_", label.lower()).strip("_")


class ExperienceGraph:
    def __init__(self):
        self.vertices: dict[str, Vertex] = {}
        self.edges: dict[tuple, Edge] = {}
        self._adj: dict[str, set] = defaultdict(set)

    def __len__(self):
        return len(self.vertices)

    def __contains__(self, vid) -> bool:
        return vid in self.vertices

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExperienceGraph):
            return NotImplemented
        return self.vertices == other.vertices and self.edges == other.edges

    # -- mutation ---------------------------------------------------------
    def upsert_vertex(self, v: Vertex) -> bool:
        """Insert or replace a vertex; returns True when newly inserted."""
        old = self.vertices.get(v.id)
        if old is not None and old.kind != v.kind:
            raise KindChange(v.id, old.kind.value, v.kind.value)
        self.vertices[v.id] = v
        return old is None

    def upsert_edge(self, e: Edge) -> bool:
        """Insert or merge an edge; returns True when newly inserted.

        On update the attributes are merged, the weight is overwritten, and
        ``created_by`` keeps its first-insert value.
        """
        for vid in (e.src, e.dst):
            if vid not in self.vertices:
                raise DanglingEndpoint(vid)
        if e.src == e.dst:
            raise SelfLoop(e.src)
        if e.relation is Relation.SYNONYM and not (
                self.vertices[e.src].kind is VertexKind.TAG
                and self.vertices[e.dst].kind is VertexKind.TAG):
            raise SynonymKindViolation(e.src, e.dst)
        old = self.edges.get(e.key)
        if old is not None:
            merged = dict(old.attributes)
            merged.update(e.attributes)
            merged["created_by"] = old.created_by
            old.attributes = merged
            return False
        self.edges[e.key] = e
        self._adj[e.src].add(e.key)
        self._adj[e.dst].add(e.key)
        return True

    def remove_vertex(self, vid: str) -> None:
        if vid not in self.vertices:
            raise UnknownSeed(vid)
        for key in list(self._adj.get(vid, ())):
            self._remove_edge(key)
        self._adj.pop(vid, None)
        del self.vertices[vid]

    def _remove_edge(self, key):
        edge = self.edges.pop(key)
        self._adj[edge.src].discard(key)
        self._adj[edge.dst].discard(key)

    def copy(self) -> "ExperienceGraph":
        g = ExperienceGraph()
        for v in self.vertices.values():
            g.vertices[v.id] = Vertex(v.id, v.kind, v.database_tags, dict(v.payload))
        for e in self.edges.values():
            g.edges[e.key] = Edge(e.src, e.relation, e.dst, dict(e.attributes))
            g._adj[e.src].add(e.key)
            g._adj[e.dst].add(e.key)
        return g

    # -- reads ------------------------------------------------------------
    def incident(self, vid: str) -> list[Edge]:
        return [self.edges[k] for k in sorted(self._adj.get(vid, ()))]

    def neighbors(self, vid: str, min_weight: float = 0.0) -> list[str]:
        out = {e.other(vid) for e in self.incident(vid) if e.weight >= min_weight}
        return sorted(out)

    def edges_between(self, a: str, b: str) -> list[Edge]:
        return [e for e in self.incident(a) if e.other(a) == b]

    def by_kind(self, kind: VertexKind) -> list[Vertex]:
        kind = VertexKind(kind)
        return [self.vertices[k] for k in sorted(self.vertices)
                if self.vertices[k].kind is kind]

    def trigger_for_model(self, model_id: str) -> str | None:
        for v in self.by_kind(VertexKind.TRIGGER):
            if v.payload.get("model_id") == model_id:
                return v.id
        return None

    def stats(self) -> dict:
        kinds = {k.value: 0 for k in VertexKind}
        for v in self.vertices.values():
            kinds[v.kind.value] += 1
        relations = {r.value: 0 for r in Relation}
        for e in self.edges.values():
            relations[e.relation.value] += 1
        return {"vertices": len(self.vertices), "edges": len(self.edges),
                "by_kind": kinds, "by_relation": relations}

    def validate(self, model_ids: Iterable[str] | None = None) -> list[str]:
        """Return a list of invariant violations (empty when the graph is sound)."""
        problems = []
        known = set(model_ids) if model_ids is not None else None
        for key, e in self.edges.items():
            if key != e.key:
                problems.append(f"edge key mismatch {key}")
            for vid in (e.src, e.dst):
                if vid not in self.vertices:
                    problems.append(f"dangling endpoint {vid} in {key}")
            if e.src == e.dst:
                problems.append(f"self-loop {key}")
            if e.relation is Relation.SYNONYM and not all(
                    vid in self.vertices and self.vertices[vid].kind is VertexKind.TAG
                    for vid in (e.src, e.dst)):
                problems.append(f"synonym between non-tags {key}")
        if known is not None:
            for v in self.by_kind(VertexKind.TRIGGER):
                if v.payload.get("model_id") not in known:
                    problems.append(f"trigger {v.id} references unknown model")
        return problems

    # -- tags -------------------------------------------------------------
    def synonym_classes(self) -> dict[str, str]:
        """Map every Tag vertex to the smallest id in its Synonym-connected class."""
        parent = {v.id: v.id for v in self.by_kind(VertexKind.TAG)}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for e in self.edges.values():
            if e.relation is Relation.SYNONYM:
                ra, rb = find(e.src), find(e.dst)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        return {t: find(t) for t in parent}

    def tagged(self, tag_id: str) -> set[str]:
        """Non-Tag vertices annotated by the tag (linked by a Relevance edge)."""
        out = set()
        for e in self.incident(tag_id):
            if e.relation is Relation.RELEVANCE:
                other = e.other(tag_id)
                if self.vertices[other].kind is not VertexKind.TAG:
                    out.add(other)
        return out

    # -- persistence ------------------------------------------------------
    def dumps(self) -> str:
        vs = ",\n".join(json.dumps(self.vertices[k].to_dict(), sort_keys=True,
                                   ensure_ascii=False, separators=(",", ":"))
                        for k in sorted(self.vertices))
        es = ",\n".join(json.dumps(self.edges[k].to_dict(), sort_keys=True,
                                   ensure_ascii=False, separators=(",", ":"))
                        for k in sorted(self.edges))
        return (f'{{"version":{FORMAT_VERSION},\n"vertices":[\n{vs}\n],\n'
                f'"edges":[\n{es}\n]}}\n')

    @classmethod
    def loads(cls, text: str) -> "ExperienceGraph":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorruptGraphFile(f"invalid JSON: {exc}") from None
        if not isinstance(doc, dict) or doc.get("version") != FORMAT_VERSION:
            raise CorruptGraphFile("missing or unsupported version")
        if not isinstance(doc.get("vertices"), list) or not isinstance(doc.get("edges"), list):
            raise CorruptGraphFile("vertices and edges must be arrays")
        g = cls()
        try:
            for vd in doc["vertices"]:
                v = Vertex.from_dict(vd)
                if v.id in g.vertices:
                    raise CorruptGraphFile(f"duplicate vertex {v.id}")
                g.vertices[v.id] = v
            for ed in doc["edges"]:
                if not g.upsert_edge(Edge.from_dict(ed)):
                    raise CorruptGraphFile(f"duplicate edge {ed}")
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise CorruptGraphFile(f"bad record: {exc!r}") from None
        except GraphError as exc:
            if isinstance(exc, CorruptGraphFile):
                raise
            raise CorruptGraphFile(str(exc)) from None
        return g


def save(graph: ExperienceGraph, path) -> None:
    try:
        Path(path).write_text(graph.dumps(), encoding="utf-8")
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from None


def load(path) -> ExperienceGraph:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from None
    return ExperienceGraph.loads(text)


# -- construction -----------------------------------------------------------

def _add_tag(g: ExperienceGraph, label: str, db, annotated: str) -> None:
    tid = tag_vertex_id(label)
    old = g.vertices.get(tid)
    dbs = (old.database_tags if old else frozenset()) | {db}
    g.upsert_vertex(Vertex(tid, VertexKind.TAG, dbs, {"label": label}))
    g.upsert_edge(Edge(tid, Relation.RELEVANCE, annotated))


def init_from_models(models: Sequence, graph: ExperienceGraph | None = None) -> ExperienceGraph:
    """Build the initial graph with each model's Trigger vertex at the centre."""
    g = graph if graph is not None else ExperienceGraph()
    seen = set()
    for m in models:
        if m.model_id in seen:
            raise DuplicateModelId(m.model_id)
        seen.add(m.model_id)
    for m in models:
        db = m.database_kind
        trig = m.trigger_vertex_id
        g.upsert_vertex(Vertex(trig, VertexKind.TRIGGER, {db},
                               {"model_id": m.model_id, "name": m.name}))
        metric_vids = {}
        for decl in m.metrics:
            vid = f"metric:{decl.id}"
            old = g.vertices.get(vid)
            dbs = (old.database_tags if old else frozenset()) | {db}
            g.upsert_vertex(Vertex(vid, VertexKind.METRIC, dbs,
                                   {"metric_id": decl.id, "unit": decl.unit}))
            g.upsert_edge(Edge(vid, Relation.RELEVANCE, trig))
            metric_vids[decl.id] = vid
            for label in decl.tags:
                _add_tag(g, label, db, vid)
        sym = f"exp:{m.model_id}:symptom"
        g.upsert_vertex(Vertex(sym, VertexKind.EXPERIENCE, {db},
                               {"text": m.symptom_description, "source": "symptom"}))
        g.upsert_edge(Edge(trig, Relation.CONTAINMENT, sym))
        for i, exp in enumerate(m.experience, start=1):
            vid = f"exp:{m.model_id}:{i}"
            payload = {"text": exp.text, "source": exp.source}
            if exp.cause:
                payload["cause"] = exp.cause
            g.upsert_vertex(Vertex(vid, VertexKind.EXPERIENCE, {db}, payload))
            g.upsert_edge(Edge(trig, Relation.CONTAINMENT, vid))
            for mid in exp.metrics:
                g.upsert_edge(Edge(vid, Relation.DIAGNOSIS, metric_vids[mid]))
            for label in exp.tags:
                _add_tag(g, label, db, vid)
        for tool in m.tools:
            vid = f"tool:{m.model_id}:{tool.id}"
            g.upsert_vertex(Vertex(vid, VertexKind.TOOL, {db},
                                   {"tool_id": tool.id, "params": dict(tool.params)}))
            g.upsert_edge(Edge(trig, Relation.CONTAINMENT, vid))
            for label in tool.tags:
                _add_tag(g, label, db, vid)
        for label in m.tags:
            _add_tag(g, label, db, trig)
    return g


def profile_similarity(a: Sequence[tuple], b: Sequence[tuple], grid_seconds: int = 60) -> float:
    """Pearson correlation of two (ts, value) series on a shared 1-minute grid.

    Constant series give 0 unless the two resampled profiles are identical.
    """
    if len(a) < 2 or len(b) < 2:
        return 0.0
    ta, va = np.array([p[0] for p in a], float), np.array([p[1] for p in a], float)
    tb, vb = np.array([p[0] for p in b], float), np.array([p[1] for p in b], float)
    lo, hi = max(ta[0], tb[0]), min(ta[-1], tb[-1])
    if hi - lo < grid_seconds:
        return 0.0
    grid = np.arange(lo, hi + 1e-9, grid_seconds)
    ra, rb = np.interp(grid, ta, va), np.interp(grid, tb, vb)
    sa, sb = ra.std(), rb.std()
    if sa == 0 or sb == 0:
        return 1.0 if np.array_equal(ra, rb) else 0.0
    za, zb = (ra - ra.mean()) / sa, (rb - rb.mean()) / sb
    return float(np.clip(np.mean(za * zb), -1.0, 1.0))


def _relevance_linked(g: ExperienceGraph, a: str, b: str) -> bool:
    return ((a, Relation.RELEVANCE.value, b) in g.edges
            or (b, Relation.RELEVANCE.value, a) in g.edges)


def enrich(graph: ExperienceGraph, store: MetricStore | None, sim_threshold: float) -> int:
    """Add Relevance edges for shared tags and similar metric profiles.

    Idempotent: a second call adds nothing.
    """
    if not 0.0 <= sim_threshold <= 1.0:
        raise ValueError("sim_threshold must lie in [0, 1]")
    added = 0
    members: dict[str, set] = defaultdict(set)
    for tag, root in graph.synonym_classes().items():
        members[root] |= graph.tagged(tag)
    pairs = set()
    for vids in members.values():
        pairs.update(combinations(sorted(vids), 2))
    for a, b in sorted(pairs):
        if not _relevance_linked(graph, a, b):
            graph.upsert_edge(Edge(a, Relation.RELEVANCE, b,
                                   {"weight": 1.0, "created_by": CreatedBy.ENRICHMENT.value}))
            added += 1
    if store is not None:
        metric_vs = [v for v in graph.by_kind(VertexKind.METRIC)
                     if v.payload.get("metric_id") in store]
        profiles = {v.id: [(p.ts, p.value) for p in store.series(v.payload["metric_id"]).points]
                    for v in metric_vs}
        for va, vb in combinations(metric_vs, 2):
            if _relevance_linked(graph, va.id, vb.id):
                continue
            if profile_similarity(profiles[va.id], profiles[vb.id]) >= sim_threshold:
                graph.upsert_edge(Edge(va.id, Relation.RELEVANCE, vb.id,
                                       {"weight": 1.0, "created_by": CreatedBy.ENRICHMENT.value}))
                added += 1
    return added


# -- queries ---------------------------------------------------------------

def localize(graph: ExperienceGraph, kinds=None, tag_labels=None, database=None,
             id_prefix=None) -> list[str]:
    """Vertex ids matching every given filter, sorted.

    ``database`` matches vertices tagged with that database or Generic;
    ``tag_labels`` requires an annotation (directly or through a synonym) for
    every listed label.
    """
    kinds = {VertexKind(k) for k in kinds} if kinds else None
    db = DatabaseKind(database) if database else None
    label_sets = None
    if tag_labels:
        classes = graph.synonym_classes()
        by_root: dict[str, set] = defaultdict(set)
        for tag, root in classes.items():
            by_root[root].add(graph.vertices[tag].payload.get("label"))
        annotated: dict[str, set] = defaultdict(set)
        for tag, root in classes.items():
            for vid in graph.tagged(tag):
                annotated[vid] |= by_root[root]
        label_sets = annotated
    out = []
    for vid in sorted(graph.vertices):
        v = graph.vertices[vid]
        if kinds is not None and v.kind not in kinds:
            continue
        if db is not None and not ({db, DatabaseKind.GENERIC} & v.database_tags):
            continue
        if id_prefix and not vid.startswith(id_prefix):
            continue
        if label_sets is not None and not set(tag_labels) <= label_sets.get(vid, set()):
            continue
        out.append(vid)
    return out


def bfs(graph: ExperienceGraph, seeds: Iterable[str], limits: ExpandLimits,
        passable: Callable[[str], bool] | None = None):
    """Level-order traversal over edges in both directions.

    Returns ``(order, parent, depth)``. Each level is visited in ascending id
    order and truncated once ``max_vertices`` is reached. Vertices for which
    ``passable`` is false are reached but not expanded (seeds always expand).
    """
    seeds = sorted(set(seeds))
    for s in seeds:
        if s not in graph.vertices:
            raise UnknownSeed(s)
    order = list(seeds)
    parent: dict[str, str | None] = {s: None for s in seeds}
    depth = {s: 0 for s in seeds}
    level = seeds
    seedset = set(seeds)
    for d in range(1, limits.max_depth + 1):
        if len(order) >= limits.max_vertices:
            break
        candidates: dict[str, str] = {}
        for u in level:
            if u not in seedset and passable is not None and not passable(u):
                continue
            for w in graph.neighbors(u, limits.min_edge_weight):
                if w not in parent and w not in candidates:
                    candidates[w] = u
        nxt = []
        for w in sorted(candidates):
            if len(order) >= limits.max_vertices:
                break
            parent[w] = candidates[w]
            depth[w] = d
            order.append(w)
            nxt.append(w)
        if not nxt:
            break
        level = nxt
    return order, parent, depth


def induced_subgraph(graph: ExperienceGraph, vids: Iterable[str]) -> ExperienceGraph:
    keep = set(vids)
    sub = ExperienceGraph()
    for vid in sorted(keep):
        sub.vertices[vid] = graph.vertices[vid]
    for vid in sorted(keep):
        for e in graph.incident(vid):
            if e.src in keep and e.dst in keep and e.key not in sub.edges:
                sub.edges[e.key] = e
                sub._adj[e.src].add(e.key)
                sub._adj[e.dst].add(e.key)
    return sub


def expand(graph: ExperienceGraph, seeds: Iterable[str], limits: ExpandLimits) -> ExperienceGraph:
    order, _, _ = bfs(graph, seeds, limits)
    return induced_subgraph(graph, order)


def aggregate_metrics(subgraph: ExperienceGraph) -> list[MetricViewEntry]:
    """Unified metric view: one entry per metric id with its Metric vertices."""
    prov: dict[str, list] = defaultdict(list)
    for v in subgraph.by_kind(VertexKind.METRIC):
        prov[v.payload["metric_id"]].append(v.id)
    return [MetricViewEntry(mid, tuple(sorted(vids))) for mid, vids in sorted(prov.items())]


def build_seed_graph(models=None) -> ExperienceGraph:
    from .anomaly import seed_models
    return init_from_models(models if models is not None else seed_models())


__all__ = [
    "VertexKind", "Relation", "CreatedBy", "Vertex", "Edge", "ExpandLimits", "MetricViewEntry",
    "ExperienceGraph", "init_from_models", "enrich", "localize", "expand", "bfs",
    "aggregate_metrics", "induced_subgraph", "save", "load", "profile_similarity",
    "tag_vertex_id", "build_seed_graph", "SchemaError",
]
