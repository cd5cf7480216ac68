"""Diagnostic analyzers bound to Tool vertices.

Each analyzer is a pure function ``fn(snapshot, params) -> list[FindingItem]``
registered under a tool id. Analyzers only read from the snapshot they are
handed, so identical inputs always yield identical findings.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .errors import DuplicateTool, InsufficientData, MissingMetric, OmxError, UnknownMetric, UnknownTool
from .metrics import MetricStore


class Severity(str, Enum):
    INFO = "info"
    WARN = "warn"
    CRITICAL = "critical"


@dataclass
class FindingItem:
    severity: Severity
    message: str
    evidence: list = field(default_factory=list)  # (metric_id, stat, value)

    def __post_init__(self):
        self.severity = Severity(self.severity)
        self.evidence = [tuple(e) for e in self.evidence]

    def to_dict(self) -> dict:
        return {"severity": self.severity.value, "message": self.message,
                "evidence": [list(e) for e in self.evidence]}

    @classmethod
    def from_dict(cls, d: dict) -> "FindingItem":
        return cls(d["severity"], d["message"], [tuple(e) for e in d["evidence"]])


@dataclass
class ToolFindings:
    tool_id: str
    items: list[FindingItem] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"tool_id": self.tool_id, "items": [i.to_dict() for i in self.items]}

    @classmethod
    def from_dict(cls, d: dict) -> "ToolFindings":
        return cls(d["tool_id"], [FindingItem.from_dict(i) for i in d["items"]])


class MetricSnapshot:
    """Read-only view of the store over (t_end - window_seconds, t_end]."""

    def __init__(self, store: MetricStore, t_end: int, window_seconds: int = 600):
        self.store = store
        self.t_end = t_end
        self.window_seconds = window_seconds

    def has(self, metric_id: str) -> bool:
        if metric_id not in self.store:
            return False
        return bool(self.store.window_values(metric_id, self.t_end, self.window_seconds))

    def stat(self, metric_id: str, stat: str) -> float:
        if metric_id not in self.store:
            raise MissingMetric(metric_id)
        return float(self.store.observe(metric_id, stat, self.window_seconds, self.t_end))


Analyzer = Callable[[MetricSnapshot, dict], list]


class ToolRegistry:
    def __init__(self):
        self._tools: dict[str, Analyzer] = {}

    def register(self, tool_id: str, analyzer: Analyzer) -> bool:
        if tool_id in self._tools:
            raise DuplicateTool(tool_id)
        self._tools[tool_id] = analyzer
        return True

    def __contains__(self, tool_id) -> bool:
        return tool_id in self._tools

    def ids(self) -> list[str]:
        return sorted(self._tools)

    def run(self, tool_id: str, snapshot: MetricSnapshot, params: dict | None = None) -> ToolFindings:
        analyzer = self._tools.get(tool_id)
        if analyzer is None:
            raise UnknownTool(tool_id)
        return ToolFindings(tool_id, list(analyzer(snapshot, dict(params or {}))))


def _observe(snapshot, metric_id, stat, items):
    """Fetch a stat, turning a missing metric into a warn item."""
    try:
        return snapshot.stat(metric_id, stat)
    except (UnknownMetric, InsufficientData):
        items.append(FindingItem(Severity.WARN, f"metric {metric_id} unavailable in snapshot"))
        return None


def logsync_verifier(snapshot: MetricSnapshot, params: dict) -> list[FindingItem]:
    """Checks log-sync wait, redo generation and commit rate against baselines."""
    p = {"wait_metric": "avg_log_sync_time", "wait_threshold": 60.0, "wait_warn": 6.0,
         "redo_metric": "redo_generation_rate", "redo_threshold": 30.0,
         "commit_metric": "txn_throughput", "commit_threshold": 100.0}
    p.update(params)
    items: list[FindingItem] = []
    wait_max = _observe(snapshot, p["wait_metric"], "max", items)
    if wait_max is not None:
        ev = [(p["wait_metric"], "max", wait_max)]
        if wait_max > p["wait_threshold"]:
            items.append(FindingItem(
                Severity.CRITICAL,
                f"log sync wait max {wait_max:.2f} above {p['wait_threshold']:g}; "
                "commits are queueing behind redo flushes", ev))
        elif wait_max > p["wait_warn"]:
            items.append(FindingItem(
                Severity.WARN, f"log sync wait max {wait_max:.2f} above {p['wait_warn']:g}", ev))
    redo = _observe(snapshot, p["redo_metric"], "mean", items)
    if redo is not None and redo > p["redo_threshold"]:
        items.append(FindingItem(
            Severity.WARN, f"redo generation mean {redo:.2f} above {p['redo_threshold']:g}; "
            "check redo file size and log buffer", [(p["redo_metric"], "mean", redo)]))
    commits = _observe(snapshot, p["commit_metric"], "mean", items)
    if commits is not None and commits > p["commit_threshold"]:
        items.append(FindingItem(
            Severity.WARN, f"commit rate mean {commits:.2f} above {p['commit_threshold']:g}; "
            "consider batching commits", [(p["commit_metric"], "mean", commits)]))
    if not items:
        items.append(FindingItem(Severity.INFO, "log sync metrics within baseline"))
    return items


def redoarchive_inspector(snapshot: MetricSnapshot, params: dict) -> list[FindingItem]:
    """Checks redo/archive sizing, related parameters and log switch frequency."""
    p = {"log_buffer": None, "log_buffer_floor": 8 * 1024 * 1024,
         "archive_lag_target": None, "min_archive_lag": 300,
         "archive_log_size_mb": None, "redo_log_size_mb": None, "size_ratio_bound": 2.0,
         "switch_metric": "log_switches_per_hour", "rapid_switches": 12.0,
         "critical_switches": 30.0}
    p.update(params)
    items: list[FindingItem] = []
    if p["log_buffer"] is not None and p["log_buffer"] < p["log_buffer_floor"]:
        items.append(FindingItem(
            Severity.WARN, f"log_buffer {p['log_buffer']} below floor {p['log_buffer_floor']}"))
    lag = p["archive_lag_target"]
    if lag is not None and 0 < lag < p["min_archive_lag"]:
        items.append(FindingItem(
            Severity.WARN, f"archive_lag_target {lag}s forces frequent log switches"))
    arch, redo = p["archive_log_size_mb"], p["redo_log_size_mb"]
    if arch is not None and redo:
        ratio = arch / redo
        if ratio > p["size_ratio_bound"]:
            items.append(FindingItem(
                Severity.WARN, f"archive/redo size ratio {ratio:.2f} above "
                f"{p['size_ratio_bound']:g}; redo files look undersized"))
    switches = _observe(snapshot, p["switch_metric"], "max", items)
    if switches is not None:
        ev = [(p["switch_metric"], "max", switches)]
        if switches > p["critical_switches"]:
            items.append(FindingItem(
                Severity.CRITICAL, f"rapid redo log switching: {switches:.2f} per hour", ev))
        elif switches > p["rapid_switches"]:
            items.append(FindingItem(
                Severity.WARN, f"rapid redo log switching: {switches:.2f} per hour", ev))
    if not items:
        items.append(FindingItem(Severity.INFO, "redo and archive configuration looks healthy"))
    return items


def default_registry() -> ToolRegistry:
    reg = ToolRegistry()
    reg.register("logsync_verifier", logsync_verifier)
    reg.register("redoarchive_inspector", redoarchive_inspector)
    return reg


DEFAULT_REGISTRY = default_registry()


def register_tool(tool_id: str, analyzer: Analyzer, registry: ToolRegistry | None = None) -> bool:
    return (registry or DEFAULT_REGISTRY).register(tool_id, analyzer)


def run_tool(tool_id: str, snapshot: MetricSnapshot, params: dict | None = None,
             registry: ToolRegistry | None = None) -> ToolFindings:
    return (registry or DEFAULT_REGISTRY).run(tool_id, snapshot, params)


def run_safely(registry: ToolRegistry, tool_id: str, snapshot: MetricSnapshot,
               params: dict | None = None) -> ToolFindings:
    """Like ``run`` but never raises: failures become a warn item."""
    if tool_id not in registry:
        return ToolFindings(tool_id, [FindingItem(Severity.WARN, "tool unavailable")])
    try:
        return registry.run(tool_id, snapshot, params)
    except OmxError as exc:
        return ToolFindings(tool_id, [FindingItem(Severity.WARN, f"tool failed: {exc}")])


def check_evidence(findings: ToolFindings, snapshot: MetricSnapshot) -> list[str]:
    """Evidence entries that do not resolve in the snapshot."""
    bad = []
    for item in findings.items:
        for metric_id, stat, value in item.evidence:
            if not snapshot.has(metric_id):
                bad.append(f"{metric_id} missing")
                continue
            actual = snapshot.stat(metric_id, stat)
            if abs(actual - value) > 1e-9:
                bad.append(f"{metric_id}.{stat}={value} but snapshot has {actual}")
    return bad
