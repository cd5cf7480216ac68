"""Seeded synthetic metric streams with injected anomalies and ground truth."""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import BadWindow, SchemaError
from .metrics import DatabaseKind, MetricPoint, MetricStore

DEFAULT_START = 1_700_000_000
DEFAULT_DURATION = 7200
DEFAULT_CADENCE = 30
AR_COEF = 0.6
NOISE_FRACTION = 0.05

# Root-cause vocabulary by database (which labels are observed for which engine).
CAUSE_VOCABULARY = {
    DatabaseKind.ORACLE: frozenset({
        "HIGH DATA SELECT", "LOW REDO FILE SIZE", "LOW REDO GROUP COUNT",
        "LOG BUFFER SETTING NOT ENOUGH", "TABLE INITTRANS NOT ENOUGH", "BUFFER BUSY WAIT",
        "ENQ LOCK WAIT", "LATCH WAIT", "HIGH MEMORY USAGE", "HIGH CPU USAGE"}),
    DatabaseKind.DM8: frozenset({
        "HIGH DATA SELECT", "LOG BUFFER SETTING NOT ENOUGH", "BUFFER BUSY WAIT",
        "ENQ LOCK WAIT", "LATCH WAIT", "HIGH MEMORY USAGE", "HIGH CPU USAGE"}),
    DatabaseKind.MYSQL: frozenset({
        "HIGH DATA SELECT", "BUFFER BUSY WAIT", "ENQ LOCK WAIT", "LATCH WAIT",
        "HIGH MEMORY USAGE", "HIGH CPU USAGE"}),
    DatabaseKind.POSTGRESQL: frozenset({
        "BGWRITER PARAMETER PROBLEM", "SHARED BUFFER NOT ENOUGH",
        "CHECKPOINT PARAMETER PROBLEM", "WAL PARAMETER PROBLEM", "TABLE DEAD TUPLE",
        "INDEX PROBLEM", "STATISTICS EXPIRED"}),
}
ALL_CAUSES = frozenset().union(*CAUSE_VOCABULARY.values())


class Category(str, Enum):
    LOG_SYNC = "log_sync"
    CONTENTION = "contention"
    SQL_OPTIMIZATION = "sql_optimization"
    RESOURCE_BOTTLENECK = "resource_bottleneck"
    WRITE_PERFORMANCE = "write_performance"


class Transform(str, Enum):
    LEVEL_SHIFT = "level_shift"
    RAMP = "ramp"
    SPIKE_TRAIN = "spike_train"


@dataclass(frozen=True)
class MetricSpec:
    metric_id: str
    nominal: float
    unit: str
    database: DatabaseKind
    category: tuple


@dataclass(frozen=True)
class Injection:
    metric_id: str
    offset: int            # seconds after the series start
    length: int
    transform: Transform
    delta: float = 0.0     # level_shift
    slope: float = 0.0     # ramp, per second
    period: int = 60       # spike_train
    amplitude: float = 0.0

    def window(self, start: int) -> tuple[int, int]:
        return (start + self.offset, start + self.offset + self.length)

    def apply(self, ts: int, value: float, start: int) -> float:
        t0, t1 = self.window(start)
        if not t0 <= ts <= t1:
            return value
        if self.transform is Transform.LEVEL_SHIFT:
            return value + self.delta
        if self.transform is Transform.RAMP:
            return value + self.slope * (ts - t0)
        return value + self.amplitude if (ts - t0) % self.period == 0 else value


@dataclass(frozen=True)
class Scenario:
    name: str
    category: Category
    injected: tuple
    truth_causes: frozenset
    database_kind: DatabaseKind
    model: str = ""

    def validate(self) -> None:
        if not self.truth_causes:
            raise SchemaError(self.name, "truth_causes must be non-empty")
        vocab = CAUSE_VOCABULARY.get(self.database_kind, ALL_CAUSES)
        unknown = set(self.truth_causes) - vocab
        if unknown:
            raise SchemaError(self.name, f"labels outside vocabulary: {sorted(unknown)}")


@dataclass
class GroundTruth:
    scenario: str
    causes: list
    windows: list
    detect_at: int

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "causes": list(self.causes),
                "windows": [list(w) for w in self.windows], "detect_at": self.detect_at}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(d["scenario"], list(d["causes"]), [tuple(w) for w in d["windows"]],
                   int(d["detect_at"]))


@dataclass
class Generated:
    series: dict = field(default_factory=dict)   # metric_id -> [MetricPoint]
    truth: GroundTruth | None = None
    specs: dict = field(default_factory=dict)

    def points(self) -> list[MetricPoint]:
        return [p for mid in sorted(self.series) for p in self.series[mid]]

    def to_store(self, store: MetricStore | None = None) -> MetricStore:
        store = store or MetricStore()
        for mid, spec in sorted(self.specs.items()):
            store.register(mid, spec.database, spec.category, spec.unit)
        store.commit(self.points())
        return store

    def jsonl(self) -> str:
        return "".join(json.dumps({"metric_id": p.metric_id, "ts": p.ts, "value": p.value},
                                  separators=(",", ":")) + "\n" for p in self.points())


def _data_file() -> Path:
    return Path(__file__).parent / "data" / "scenarios.json"


def _injection(d: dict) -> Injection:
    return Injection(d["metric_id"], int(d["offset"]), int(d["length"]), Transform(d["transform"]),
                     float(d.get("delta", 0.0)), float(d.get("slope", 0.0)),
                     int(d.get("period", 60)), float(d.get("amplitude", 0.0)))


def load_catalog(path=None) -> tuple[dict, list[Scenario]]:
    doc = json.loads(Path(path or _data_file()).read_text(encoding="utf-8"))
    specs = {mid: MetricSpec(mid, float(m["nominal"]), m.get("unit", ""),
                             DatabaseKind(m.get("database", "Generic")),
                             tuple(m.get("category", ["uncategorized"])))
             for mid, m in doc["metrics"].items()}
    scenarios = []
    for s in doc["scenarios"]:
        sc = Scenario(s["name"], Category(s["category"]),
                      tuple(_injection(i) for i in s.get("injected", [])),
                      frozenset(s["truth_causes"]), DatabaseKind(s["database"]), s.get("model", ""))
        sc.validate()
        for inj in sc.injected:
            if inj.metric_id not in specs:
                raise SchemaError(sc.name, f"unknown metric {inj.metric_id}")
        scenarios.append(sc)
    return specs, scenarios


def catalog(path=None) -> list[Scenario]:
    return load_catalog(path)[1]


def metric_specs(path=None) -> dict:
    return load_catalog(path)[0]


def scenario(name: str, path=None) -> Scenario:
    for sc in catalog(path):
        if sc.name == name:
            return sc
    raise KeyError(name)


def null_scenario(database=DatabaseKind.GENERIC) -> Scenario:
    return Scenario("baseline", Category.LOG_SYNC, (), frozenset(), DatabaseKind(database))


def _ar1(rng: np.random.Generator, n: int, scale: float) -> np.ndarray:
    innov = rng.normal(0.0, scale * np.sqrt(1.0 - AR_COEF ** 2), n)
    out = np.empty(n)
    prev = rng.normal(0.0, scale)
    for i in range(n):
        prev = AR_COEF * prev + innov[i]
        out[i] = prev
    return out


def generate(sc: Scenario, seed: int, duration_seconds: int = DEFAULT_DURATION,
             cadence_seconds: int = DEFAULT_CADENCE, start: int = DEFAULT_START,
             specs: dict | None = None) -> Generated:
    """Generate every catalog metric with the scenario's injections applied."""
    specs = specs if specs is not None else metric_specs()
    if cadence_seconds <= 0 or duration_seconds <= 0:
        raise BadWindow("duration and cadence must be positive")
    end = start + duration_seconds
    longest = max((inj.length for inj in sc.injected), default=0)
    if duration_seconds < 2 * longest:
        raise BadWindow(f"duration {duration_seconds}s shorter than twice the "
                        f"longest injection ({longest}s)")
    for inj in sc.injected:
        t0, t1 = inj.window(start)
        if inj.length <= 0 or t0 < start or t1 > end:
            raise BadWindow(f"injection on {inj.metric_id} [{t0}, {t1}] outside [{start}, {end}]")
        if inj.metric_id not in specs:
            raise BadWindow(f"injection targets unknown metric {inj.metric_id}")
    stamps = list(range(start, end + 1, cadence_seconds))
    series = {}
    for mid in sorted(specs):
        spec = specs[mid]
        rng = np.random.default_rng([seed, zlib.crc32(mid.encode())])
        noise = _ar1(rng, len(stamps), NOISE_FRACTION * spec.nominal)
        pts = []
        for ts, eps in zip(stamps, noise):
            value = spec.nominal + float(eps)
            for inj in sc.injected:
                if inj.metric_id == mid:
                    value = inj.apply(ts, value, start)
            pts.append(MetricPoint(mid, ts, round(value, 6)))
        series[mid] = pts
    windows = [inj.window(start) for inj in sc.injected]
    detect_at = max((w[1] for w in windows), default=end)
    truth = GroundTruth(sc.name, sorted(sc.truth_causes), windows, detect_at)
    return Generated(series, truth, dict(specs))


def write(generated: Generated, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.jsonl"
    truth_path = out / "truth.json"
    metrics_path.write_text(generated.jsonl(), encoding="utf-8")
    truth_path.write_text(json.dumps(generated.truth.to_dict(), indent=2) + "\n", encoding="utf-8")
    return metrics_path, truth_path
