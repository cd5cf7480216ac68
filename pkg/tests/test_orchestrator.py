import http.server
import json
import socket
import threading
import urllib.request

import pytest
from hypothesis import given
from hypothesis import strategies as st

from omx.adf import ADFResult
from omx.anomaly import AnomalyEvent
from omx.errors import (EmptyContext, HttpStatus, LlmError, MalformedResponse, MissingSection,
                        NoCauses, TooManyCauses)
from omx.evolution import DiagnosisContext, evolve
from omx.orchestrator import (SECTIONS, DiagnosisReport, EvidenceRef, LlmEndpointConfig, LlmMode,
                              RootCause, build_prompt, complete, extract_evidence, fmt,
                              mock_complete, parse_report, render_report, validate_evidence)


@pytest.fixture
def lfs_model(models_by_id):
    return models_by_id["LOG_FILE_SYNC"]


@pytest.fixture
def ctx(redo_fixture, seed_graph, models):
    from omx.anomaly import detect
    gen, store = redo_fixture
    ev = next(e for e in detect(models, store, gen.truth.detect_at)
              if e.model_id == "LOG_FILE_SYNC")
    return evolve(ev, seed_graph, store)


def result(score=12.0, abnormal=True):
    return ADFResult(1, 0, 0, 0, 4, 11, 2, 0.5, 0.5, score, abnormal)


def table5_context():
    """Log sync wait peaking at 15.2ms with a 6.0ms average."""
    ev = AnomalyEvent("LOG_FILE_SYNC", 600, (0, 600), [], [])
    window = [(0, 2.0), (60, 4.0), (120, 15.2), (180, 2.8)]
    return DiagnosisContext(ev, "trigger:LOG_FILE_SYNC",
                            explored_paths=[["trigger:LOG_FILE_SYNC", "metric:avg_log_sync_time"]],
                            abnormal_metrics=[("avg_log_sync_time", result())],
                            normal_metrics=["txn_throughput"],
                            metric_windows={"avg_log_sync_time": window,
                                            "txn_throughput": [(0, 40.0), (60, 41.0)]},
                            units={"avg_log_sync_time": "ms"})


def report_citing(text):
    return DiagnosisReport(True, "", [RootCause("X", text, extract_evidence(text))], [], "s")


class TestPrompt:
    def test_abnormal_metrics_listed(self, ctx, lfs_model):
        prompt = build_prompt(ctx, lfs_model)
        for mid, res in ctx.abnormal_metrics:
            assert f"metric {mid} " in prompt.metrics
        line = next(l for l in prompt.metrics.splitlines() if "avg_log_sync_time" in l)
        values = [v for _, v in ctx.metric_windows["avg_log_sync_time"]]
        assert f"max={fmt(max(values))}ms" in line and "avg=" in line
        assert set(prompt.metric_ids) == ctx.metric_ids()

    def test_all_components_present(self, ctx, lfs_model):
        p = build_prompt(ctx, lfs_model)
        assert all(part.strip() for part in (p.anomaly, p.condition, p.metrics, p.experience,
                                             p.output_spec))
        assert "3 of 5" in p.condition and "LOG_FILE_SYNC" in p.anomaly

    def test_zero_abnormal(self, lfs_model):
        ev = AnomalyEvent("LOG_FILE_SYNC", 600, (0, 600), [], [])
        c = DiagnosisContext(ev, "trigger:LOG_FILE_SYNC", normal_metrics=["txn_throughput"],
                             metric_windows={"txn_throughput": [(0, 40.0), (60, 41.0)]})
        p = build_prompt(c, lfs_model)
        assert "no metric abnormal" in p.metrics
        report = parse_report(mock_complete(p.render()))
        assert report.is_real_anomaly is False

    def test_empty(self, lfs_model):
        ev = AnomalyEvent("LOG_FILE_SYNC", 600, (0, 600), [], [])
        with pytest.raises(EmptyContext):
            build_prompt(DiagnosisContext(ev, "trigger:LOG_FILE_SYNC"), lfs_model)

    def test_byte_identical(self, redo_fixture, models, lfs_model):
        from omx.anomaly import detect
        from omx.graph import init_from_models
        gen, store = redo_fixture
        ev = next(e for e in detect(models, store, gen.truth.detect_at)
                  if e.model_id == "LOG_FILE_SYNC")
        a = build_prompt(evolve(ev, init_from_models(models), store), lfs_model).render()
        b = build_prompt(evolve(ev, init_from_models(models), store), lfs_model).render()
        assert a.encode() == b.encode()

    def test_fmt(self):
        assert [fmt(x) for x in (15.2, 6.0, 3.456, -0.001)] == ["15.2", "6", "3.46", "0"]


class TestMock:
    def test_parseable_and_clean(self, ctx, lfs_model):
        raw = mock_complete(build_prompt(ctx, lfs_model).render())
        report = parse_report(raw)
        assert 1 <= len(report.root_causes) <= 5
        assert report.is_real_anomaly
        assert validate_evidence(report, ctx) == []
        assert any(r.metric_id == "avg_log_sync_time" for c in report.root_causes
                   for r in c.evidence_refs)

    def test_any_prompt(self):
        assert parse_report(mock_complete("free text")).labels() == ["UNDETERMINED"]

    def test_no_network(self, ctx, lfs_model, monkeypatch):
        calls = []

        def counting(*a, **k):
            calls.append(a)
            raise AssertionError("network used")
        monkeypatch.setattr(urllib.request, "urlopen", counting)
        monkeypatch.setattr(socket.socket, "connect", counting)
        cfg = LlmEndpointConfig(base_url="http://example.invalid", mode="mock")
        complete(cfg, build_prompt(ctx, lfs_model).render())
        assert calls == []


class TestParse:
    def mock_text(self):
        return mock_complete("[EXPERIENCE]\n- [cause: A] x\n- [cause: B] y\n")

    def test_sections(self):
        r = parse_report(self.mock_text())
        assert r.labels() == ["A", "B"] and r.recovery and r.summary
        assert r.sql_context is None

    def test_missing_summary(self):
        text = self.mock_text().replace("# Summary", "# Epilogue")
        with pytest.raises(MissingSection) as exc:
            parse_report(text)
        assert exc.value.name == "Summary"

    def test_too_many(self):
        causes = "\n".join(f"{i}. CAUSE {i}" for i in range(1, 7))
        text = (f"# Anomaly Validation\nReal anomaly: yes\n# Root Cause Analysis\n{causes}\n"
                "# Recover Solution\n- x\n# Summary\ns\n# SQL Context\nN/A\n")
        with pytest.raises(TooManyCauses) as exc:
            parse_report(text)
        assert exc.value.n == 6

    def test_no_causes(self):
        text = ("# Anomaly Validation\nReal anomaly: yes\n# Root Cause Analysis\nnothing\n"
                "# Recover Solution\n- x\n# Summary\ns\n# SQL Context\nN/A\n")
        with pytest.raises(NoCauses):
            parse_report(text)

    def test_case_insensitive_headings(self):
        text = self.mock_text().replace("# Summary", "# SUMMARY")
        assert parse_report(text).summary

    def test_extract_evidence(self):
        refs = extract_evidence("metric avg_log_sync_time max=15.2ms, avg=6.0ms; metric x")
        assert refs == [EvidenceRef("avg_log_sync_time", "max", 15.2, "ms"),
                        EvidenceRef("avg_log_sync_time", "avg", 6.0, "ms"), EvidenceRef("x")]


label = st.text("ABCDEFGHIJ _", min_size=1, max_size=12).map(str.strip).filter(bool)
line = st.text("abcdefgh ,.", min_size=1, max_size=30).map(str.strip).filter(bool)


@given(st.booleans(), st.lists(st.tuples(label, line), min_size=1, max_size=5),
       st.lists(line, min_size=1, max_size=3), line, st.one_of(st.none(), line))
def test_render_parse_roundtrip(real, causes, recovery, summary, sql):
    report = DiagnosisReport(real, "", [RootCause(l, r) for l, r in causes], recovery, summary,
                             None if sql in (None, "na", "n/a") else sql)
    back = parse_report(render_report(report))
    assert back.is_real_anomaly == real
    assert back.labels() == [l for l, _ in causes]
    assert [c.reasoning for c in back.root_causes] == [r for _, r in causes]
    assert back.recovery == recovery and back.summary == summary
    assert back.sql_context == report.sql_context


class TestEvidence:
    def test_true_max_passes(self):
        r = report_citing("metric avg_log_sync_time max=15.2ms, avg=6.0ms")
        assert validate_evidence(r, table5_context()) == []

    def test_rounding_tolerated(self):
        r = report_citing("metric avg_log_sync_time max=15.25ms")
        assert validate_evidence(r, table5_context()) == []

    def test_unknown_metric(self):
        r = report_citing("metric controlfile_parallel_write max=3ms")
        found = validate_evidence(r, table5_context())
        assert [f.kind for f in found] == ["UnknownMetric"]

    def test_value_mismatch(self):
        r = report_citing("metric avg_log_sync_time max=3.78ms")
        found = validate_evidence(r, table5_context())
        assert [f.kind for f in found] == ["ValueMismatch"]
        assert "15.2" in found[0].detail

    def test_normal_metric_citable(self):
        r = report_citing("metric txn_throughput max=41")
        assert validate_evidence(r, table5_context()) == []


# -- remote endpoint against a local stub --------------------------------------

class _Stub(http.server.BaseHTTPRequestHandler):
    replies: dict = {}

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        code, payload = self.replies[self.path]
        self.send_response(code)
        self.end_headers()
        if payload is not None:
            self.wfile.write(payload if isinstance(payload, bytes) else json.dumps(payload).encode())
        self.server.seen.append((body, self.headers.get("Authorization")))

    def log_message(self, *a):
        pass


@pytest.fixture
def stub():
    srv = http.server.HTTPServer(("127.0.0.1", 0), _Stub)
    srv.seen = []
    _Stub.replies = {
        "/ok": (200, {"choices": [{"message": {"content": "hello"}}]}),
        "/empty": (200, {"choices": []}),
        "/junk": (200, b"not json"),
        "/fail": (503, None),
    }
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}", srv
    srv.shutdown()


def remote(url, **kw):
    return LlmEndpointConfig(base_url=url, model_name="m", timeout_seconds=5, mode="remote", **kw)


class TestRemote:
    def test_ok(self, stub, monkeypatch):
        base, srv = stub
        monkeypatch.setenv("OMX_LLM_API_KEY", "k")
        assert complete(remote(base + "/ok"), "prompt") == "hello"
        body, auth = srv.seen[0]
        assert body["messages"][0]["content"] == "prompt" and auth == "Bearer k"

    @pytest.mark.parametrize("path", ["/empty", "/junk"])
    def test_malformed(self, stub, path):
        with pytest.raises(MalformedResponse):
            complete(remote(stub[0] + path), "prompt")

    def test_status(self, stub):
        with pytest.raises(HttpStatus) as exc:
            complete(remote(stub[0] + "/fail"), "prompt")
        assert exc.value.code == 503

    def test_unreachable(self):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
        s.close()
        with pytest.raises(LlmError):
            complete(remote(f"http://127.0.0.1:{port}/x"), "prompt")

    def test_config(self):
        with pytest.raises(ValueError):
            LlmEndpointConfig(mode="remote")
        cfg = remote("http://h")
        assert LlmEndpointConfig.from_dict(cfg.to_dict()) == cfg
        assert cfg.mode is LlmMode.REMOTE


def test_sections_constant():
    assert len(SECTIONS) == 5
