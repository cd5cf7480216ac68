import pytest
from hypothesis import given
from hypothesis import strategies as st

from omx.errors import DuplicateTool, UnknownTool
from omx.metrics import MetricPoint, MetricStore
from omx.tools import (FindingItem, MetricSnapshot, Severity, ToolFindings, ToolRegistry,
                       check_evidence, default_registry, register_tool, run_safely, run_tool)


def flat_store(**levels):
    s = MetricStore()
    for mid, v in levels.items():
        s.commit(MetricPoint(mid, t, float(v)) for t in range(0, 601, 30))
    return s


@pytest.fixture
def healthy():
    return MetricSnapshot(flat_store(avg_log_sync_time=4, redo_generation_rate=12,
                                     txn_throughput=40, log_switches_per_hour=4), 600)


class TestLogSync:
    def test_simulated_delay_is_critical(self, log_sync_data):
        gen, store = log_sync_data
        snap = MetricSnapshot(store, gen.truth.detect_at)
        f = run_tool("logsync_verifier", snap)
        crit = [i for i in f.items if i.severity is Severity.CRITICAL]
        assert crit and crit[0].evidence[0][0] == "avg_log_sync_time"
        assert check_evidence(f, snap) == []

    def test_healthy_info(self, healthy):
        items = run_tool("logsync_verifier", healthy).items
        assert [i.severity for i in items] == [Severity.INFO]

    def test_warn_band(self):
        snap = MetricSnapshot(flat_store(avg_log_sync_time=10, redo_generation_rate=12,
                                         txn_throughput=40), 600)
        items = run_tool("logsync_verifier", snap).items
        assert [i.severity for i in items] == [Severity.WARN]

    def test_missing_metric_non_fatal(self):
        snap = MetricSnapshot(flat_store(avg_log_sync_time=70), 600)
        items = run_tool("logsync_verifier", snap).items
        assert items[0].severity is Severity.CRITICAL
        assert sum("unavailable" in i.message for i in items) == 2


class TestRedoArchive:
    def test_log_buffer_floor(self, healthy):
        items = run_tool("redoarchive_inspector", healthy, {"log_buffer": 4 * 1024 * 1024}).items
        assert any(i.severity is Severity.WARN and "log_buffer" in i.message for i in items)

    def test_archive_lag(self, healthy):
        items = run_tool("redoarchive_inspector", healthy, {"archive_lag_target": 60}).items
        assert any("archive_lag_target" in i.message for i in items)

    def test_size_ratio(self, healthy):
        items = run_tool("redoarchive_inspector", healthy,
                         {"archive_log_size_mb": 900, "redo_log_size_mb": 200}).items
        assert any("ratio 4.50" in i.message for i in items)

    @pytest.mark.parametrize("rate,sev", [(4, Severity.INFO), (20, Severity.WARN),
                                          (40, Severity.CRITICAL)])
    def test_switch_rate(self, rate, sev):
        snap = MetricSnapshot(flat_store(log_switches_per_hour=rate), 600)
        assert run_tool("redoarchive_inspector", snap).items[-1].severity is sev


class TestRegistry:
    def test_unknown(self, healthy):
        with pytest.raises(UnknownTool):
            run_tool("nope", healthy)

    def test_register_then_run(self, healthy):
        reg = ToolRegistry()
        assert register_tool("echo", lambda s, p: [FindingItem("info", p["msg"])], reg)
        assert reg.run("echo", healthy, {"msg": "hi"}).items[0].message == "hi"

    def test_duplicate(self):
        reg = default_registry()
        with pytest.raises(DuplicateTool):
            reg.register("logsync_verifier", lambda s, p: [])

    def test_run_safely_unregistered(self, healthy):
        f = run_safely(ToolRegistry(), "ghost", healthy)
        assert f.items[0].severity is Severity.WARN and f.items[0].message == "tool unavailable"

    def test_findings_roundtrip(self, healthy):
        f = run_tool("logsync_verifier", MetricSnapshot(flat_store(avg_log_sync_time=70), 600))
        assert ToolFindings.from_dict(f.to_dict()) == f

    def test_check_evidence_flags_fabrication(self, healthy):
        f = ToolFindings("x", [FindingItem("warn", "m", [("ghost", "max", 1.0),
                                                        ("avg_log_sync_time", "max", 99.0)])])
        assert len(check_evidence(f, healthy)) == 2


@given(st.floats(0, 200), st.floats(0, 50), st.floats(0, 200))
def test_pure_and_evidence_closed(wait, redo, commits):
    snap = MetricSnapshot(flat_store(avg_log_sync_time=wait, redo_generation_rate=redo,
                                     txn_throughput=commits, log_switches_per_hour=redo), 600)
    for tool in ("logsync_verifier", "redoarchive_inspector"):
        a, b = run_tool(tool, snap), run_tool(tool, snap)
        assert a == b
        assert check_evidence(a, snap) == []


def test_simulator_redo_data_flags_switching(redo_fixture):
    gen, store = redo_fixture
    snap = MetricSnapshot(store, gen.truth.detect_at)
    items = run_tool("redoarchive_inspector", snap).items
    assert any("switching" in i.message for i in items)
