import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from omx.errors import (CorruptGraphFile, DanglingEndpoint, DuplicateModelId, GraphError,
                        KindChange, SelfLoop, SynonymKindViolation, UnknownSeed)
from omx.graph import (Edge, ExpandLimits, ExperienceGraph, Relation, Vertex, VertexKind,
                       aggregate_metrics, enrich, expand, init_from_models, load, localize,
                       profile_similarity, save)
from omx.metrics import MetricPoint, MetricStore


def tag(g, vid, label=None):
    g.upsert_vertex(Vertex(vid, VertexKind.TAG, {"Generic"}, {"label": label or vid}))


def vtx(g, vid, kind=VertexKind.AUXILIARY, db="Generic"):
    g.upsert_vertex(Vertex(vid, kind, {db}, {}))


def chain(*ids):
    g = ExperienceGraph()
    for v in ids:
        vtx(g, v)
    for a, b in zip(ids, ids[1:]):
        g.upsert_edge(Edge(a, Relation.RELEVANCE, b))
    return g


class TestUpsert:
    def test_synonym_between_tags(self):
        g = ExperienceGraph()
        tag(g, "physical_read")
        tag(g, "disk_read")
        assert g.upsert_edge(Edge("physical_read", Relation.SYNONYM, "disk_read"))

    def test_synonym_to_metric(self):
        g = ExperienceGraph()
        tag(g, "t")
        vtx(g, "m", VertexKind.METRIC)
        with pytest.raises(SynonymKindViolation):
            g.upsert_edge(Edge("t", Relation.SYNONYM, "m"))

    def test_reupsert_overwrites_weight_keeps_creator(self):
        g = chain("a", "b")
        updated = g.upsert_edge(Edge("a", Relation.RELEVANCE, "b",
                                     {"weight": 2.0, "created_by": "evolution"}))
        assert updated is False
        e = g.edges[("a", "Relevance", "b")]
        assert e.weight == 2.0 and e.created_by == "manual"
        assert len(g.edges) == 1

    def test_dangling(self):
        with pytest.raises(DanglingEndpoint):
            chain("a").upsert_edge(Edge("a", Relation.RELEVANCE, "zz"))

    def test_self_loop(self):
        with pytest.raises(SelfLoop):
            chain("a").upsert_edge(Edge("a", Relation.RELEVANCE, "a"))

    def test_kind_fixed(self):
        g = chain("a")
        with pytest.raises(KindChange):
            vtx(g, "a", VertexKind.TAG)

    def test_negative_weight(self):
        with pytest.raises(GraphError):
            Edge("a", Relation.RELEVANCE, "b", {"weight": -1})


class TestInit:
    def test_log_file_sync_fragment(self, models_by_id):
        g = init_from_models([models_by_id["LOG_FILE_SYNC"]])
        s = g.stats()["by_kind"]
        assert s["Trigger"] == 1 and s["Metric"] == 2 and s["Experience"] >= 1
        trig = "trigger:LOG_FILE_SYNC"
        for m in ("metric:avg_log_sync_time", "metric:txn_throughput"):
            assert (m, "Relevance", trig) in g.edges
        assert (trig, "Containment", "exp:LOG_FILE_SYNC:symptom") in g.edges

    def test_empty(self):
        assert len(init_from_models([])) == 0

    def test_shared_tag_single_vertex(self, models_by_id):
        g = init_from_models([models_by_id["LOG_FILE_SYNC"], models_by_id["REDO_ALLOCATION"]])
        tid = "tag:concurrent_transactions"
        assert g.vertices[tid].payload["label"] == "Concurrent Transactions"
        assert g.tagged(tid) == {"trigger:LOG_FILE_SYNC", "trigger:REDO_ALLOCATION"}

    def test_duplicate_model(self, models_by_id):
        m = models_by_id["CPU_SPIKE"]
        with pytest.raises(DuplicateModelId):
            init_from_models([m, m])

    def test_seed_graph_valid(self, seed_graph, models):
        assert seed_graph.validate([m.model_id for m in models]) == []


class TestEnrich:
    def test_shared_tag_links_triggers_once(self):
        g = ExperienceGraph()
        vtx(g, "t2", VertexKind.TRIGGER)
        vtx(g, "t1", VertexKind.TRIGGER)
        tag(g, "tag:x")
        g.upsert_edge(Edge("tag:x", Relation.RELEVANCE, "t1"))
        g.upsert_edge(Edge("tag:x", Relation.RELEVANCE, "t2"))
        assert enrich(g, None, 0.9) == 1
        e = g.edges[("t1", "Relevance", "t2")]
        assert e.created_by == "enrichment" and e.weight == 1.0
        assert enrich(g, None, 0.9) == 0

    def test_synonym_closure(self):
        # a -[tag p]  p ~ q ~ r  [tag r]- b ; c hangs off an unrelated tag
        g = ExperienceGraph()
        for v in ("a", "b", "c"):
            vtx(g, v, VertexKind.EXPERIENCE)
        for t in ("p", "q", "r", "s"):
            tag(g, t)
        g.upsert_edge(Edge("p", Relation.SYNONYM, "q"))
        g.upsert_edge(Edge("r", Relation.SYNONYM, "q"))
        g.upsert_edge(Edge("p", Relation.RELEVANCE, "a"))
        g.upsert_edge(Edge("r", Relation.RELEVANCE, "b"))
        g.upsert_edge(Edge("s", Relation.RELEVANCE, "c"))
        assert enrich(g, None, 1.0) == 1
        assert ("a", "Relevance", "b") in g.edges

    def test_identical_series_similarity(self):
        g = ExperienceGraph()
        vtx(g, "metric:x", VertexKind.METRIC)
        vtx(g, "metric:y", VertexKind.METRIC)
        g.vertices["metric:x"].payload["metric_id"] = "x"
        g.vertices["metric:y"].payload["metric_id"] = "y"
        store = MetricStore()
        vals = [1, 5, 2, 8, 3, 9, 4]
        store.commit(MetricPoint(m, i * 60, float(v)) for m in "xy" for i, v in enumerate(vals))
        assert profile_similarity(*(
            [(p.ts, p.value) for p in store.series(m).points] for m in "xy")) == pytest.approx(1.0)
        assert enrich(g, store, 0.99) == 1
        assert enrich(g, store, 0.99) == 0

    def test_constant_series_similarity(self):
        a = [(0, 1.0), (60, 1.0), (120, 1.0)]
        b = [(0, 2.0), (60, 3.0), (120, 1.0)]
        assert profile_similarity(a, b) == 0.0
        assert profile_similarity(a, a) == 1.0


class TestLocalize:
    def test_oracle_triggers(self, seed_graph, models):
        want = sorted(m.trigger_vertex_id for m in models if m.database_kind.value == "Oracle")
        assert localize(seed_graph, kinds=["Trigger"], database="Oracle") == want

    def test_empty_filter(self, seed_graph):
        assert localize(seed_graph) == sorted(seed_graph.vertices)

    def test_unknown_tag(self, seed_graph):
        assert localize(seed_graph, tag_labels=["nonexistent"]) == []

    def test_tag_filter(self, seed_graph):
        got = localize(seed_graph, kinds=["Trigger"], tag_labels=["Concurrent Transactions"])
        assert got == ["trigger:LOG_FILE_SYNC", "trigger:REDO_ALLOCATION"]


class TestExpand:
    def test_depth_zero(self):
        g = chain("A", "B", "C")
        assert sorted(expand(g, {"A"}, ExpandLimits(0, 10, 0)).vertices) == ["A"]

    def test_chain_depth_one(self):
        g = chain("A", "B", "C")
        assert sorted(expand(g, {"A"}, ExpandLimits(1, 10, 0)).vertices) == ["A", "B"]

    def test_star_truncation(self):
        g = ExperienceGraph()
        vtx(g, "hub")
        for i in range(10):
            vtx(g, f"n{i}")
            g.upsert_edge(Edge(f"n{i}", Relation.RELEVANCE, "hub"))
        sub = expand(g, {"hub"}, ExpandLimits(1, 4, 0))
        assert sorted(sub.vertices) == ["hub", "n0", "n1", "n2"]

    def test_weight_filter(self):
        g = chain("A", "B")
        g.edges[("A", "Relevance", "B")].attributes["weight"] = 0.5
        assert sorted(expand(g, {"A"}, ExpandLimits(3, 10, 1.0)).vertices) == ["A"]

    def test_unknown_seed(self):
        with pytest.raises(UnknownSeed):
            expand(chain("A"), {"Z"}, ExpandLimits())

    def test_induced_edges(self):
        g = chain("A", "B", "C")
        g.upsert_edge(Edge("A", Relation.RELEVANCE, "C"))
        sub = expand(g, {"A"}, ExpandLimits(1, 10, 0))
        assert len(sub.edges) == 3


class TestAggregate:
    def test_dedup_provenance(self):
        g = ExperienceGraph()
        for vid in ("metric:a", "metric:a2"):
            g.upsert_vertex(Vertex(vid, VertexKind.METRIC, {"Oracle"}, {"metric_id": "a", "unit": ""}))
        view = aggregate_metrics(g)
        assert len(view) == 1 and view[0].vertex_ids == ("metric:a", "metric:a2")

    def test_no_metrics(self):
        assert aggregate_metrics(chain("x", "y")) == []

    def test_redo_and_log_sync_metrics(self, seed_graph):
        sub = expand(seed_graph, {"trigger:LOG_FILE_SYNC"}, ExpandLimits(3, 500, 0))
        ids = {e.metric_id for e in aggregate_metrics(sub)}
        assert {"avg_log_sync_time", "redo_buffer_busy"} <= ids


class TestPersistence:
    def test_roundtrip_bytes(self, seed_graph, tmp_path):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save(seed_graph, p1)
        g2 = load(p1)
        assert g2 == seed_graph
        save(g2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated(self, seed_graph, tmp_path):
        p = tmp_path / "g.json"
        save(seed_graph, p)
        p.write_bytes(p.read_bytes()[:-40])
        with pytest.raises(CorruptGraphFile):
            load(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "g.json"
        p.write_text(json.dumps({"version": 9, "vertices": [], "edges": []}))
        with pytest.raises(CorruptGraphFile):
            load(p)

    def test_dangling_in_file(self, tmp_path):
        p = tmp_path / "g.json"
        p.write_text(json.dumps({"version": 1, "vertices": [], "edges": [
            {"src": "a", "relation": "Relevance", "dst": "b", "attributes": {}}]}))
        with pytest.raises(CorruptGraphFile):
            load(p)


# -- properties --------------------------------------------------------------

KINDS = list(VertexKind)
RELS = list(Relation)
ops = st.lists(st.one_of(
    st.tuples(st.just("v"), st.integers(0, 7), st.sampled_from(KINDS)),
    st.tuples(st.just("e"), st.integers(0, 7), st.sampled_from(RELS), st.integers(0, 7),
              st.floats(0, 5))), max_size=40)


def apply_ops(seq):
    g = ExperienceGraph()
    for op in seq:
        try:
            if op[0] == "v":
                g.upsert_vertex(Vertex(f"v{op[1]}", op[2], {"Generic"}, {}))
            else:
                g.upsert_edge(Edge(f"v{op[1]}", op[2], f"v{op[3]}", {"weight": op[4]}))
        except GraphError:
            pass
    return g


@settings(max_examples=150)
@given(ops)
def test_invariants_after_random_ops(seq):
    g = apply_ops(seq)
    assert g.validate() == []
    for e in g.edges.values():
        if e.relation is Relation.SYNONYM:
            assert g.vertices[e.src].kind is g.vertices[e.dst].kind is VertexKind.TAG


@settings(max_examples=100)
@given(ops)
def test_persistence_roundtrip(seq):
    g = apply_ops(seq)
    g2 = ExperienceGraph.loads(g.dumps())
    assert g2 == g and g2.dumps() == g.dumps()


@settings(max_examples=100)
@given(ops, st.integers(0, 3), st.integers(1, 8))
def test_expand_monotone_and_oracle(seq, depth, cap):
    g = apply_ops(seq)
    if not g.vertices:
        return
    seed = sorted(g.vertices)[0]
    small = set(expand(g, {seed}, ExpandLimits(depth, cap, 0)).vertices)
    assert small <= set(expand(g, {seed}, ExpandLimits(depth + 1, cap, 0)).vertices)
    assert small <= set(expand(g, {seed}, ExpandLimits(depth, cap + 3, 0)).vertices)
    adj = {}
    for e in g.edges.values():
        adj.setdefault(e.src, set()).add(e.dst)
        adj.setdefault(e.dst, set()).add(e.src)
    full = set(expand(g, {seed}, ExpandLimits(depth, 10_000, 0)).vertices)
    assert full == oracles.bounded_bfs(adj, {seed}, depth)


@settings(max_examples=50)
@given(ops)
def test_enrich_idempotent(seq):
    g = apply_ops(seq)
    enrich(g, None, 0.5)
    assert enrich(g, None, 0.5) == 0


@given(ops)
def test_aggregate_depends_on_metric_vertices_only(seq):
    g = apply_ops(seq)
    for v in g.by_kind(VertexKind.METRIC):
        v.payload["metric_id"] = v.id
    stripped = ExperienceGraph()
    for v in g.by_kind(VertexKind.METRIC):
        stripped.upsert_vertex(v)
    assert aggregate_metrics(g) == aggregate_metrics(stripped)
