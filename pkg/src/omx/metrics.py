"""Metric store: raw point ingestion plus lazily derived window statistics."""
from __future__ import annotations

import bisect
import csv
import io
import json
import math
import threading
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Sequence

from .errors import InsufficientData, MalformedRecord, NonFiniteValue, UnknownMetric


class DatabaseKind(str, Enum):
    ORACLE = "Oracle"
    MYSQL = "MySQL"
    POSTGRESQL = "PostgreSQL"
    DM8 = "DM8"
    GENERIC = "Generic"


class TrendClass(IntEnum):
    STABLE = 0
    SHARP_DECLINE = 1
    SLOW_DECLINE = 2
    SHARP_RISE = 3
    SLOW_RISE = 4
    FLUCTUATING = 5

    @property
    def label(self) -> str:
        return _TREND_LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "TrendClass":
        for code, text in _TREND_LABELS.items():
            if text == label:
                return code
        raise ValueError(f"unknown trend label {label!r}")

    def mirrored(self) -> "TrendClass":
        return _MIRROR.get(self, self)


_TREND_LABELS = {
    TrendClass.STABLE: "stable",
    TrendClass.SHARP_DECLINE: "sharp decline",
    TrendClass.SLOW_DECLINE: "slow decline",
    TrendClass.SHARP_RISE: "sharp rise",
    TrendClass.SLOW_RISE: "slow rise",
    TrendClass.FLUCTUATING: "fluctuating",
}
_MIRROR = {
    TrendClass.SHARP_DECLINE: TrendClass.SHARP_RISE,
    TrendClass.SHARP_RISE: TrendClass.SHARP_DECLINE,
    TrendClass.SLOW_DECLINE: TrendClass.SLOW_RISE,
    TrendClass.SLOW_RISE: TrendClass.SLOW_DECLINE,
}


@dataclass(frozen=True)
class TrendConfig:
    flat: float = 0.05
    sharp: float = 0.3
    noise: float = 0.2
    eps: float = 1e-9

    def to_dict(self) -> dict:
        return {"flat": self.flat, "sharp": self.sharp, "noise": self.noise, "eps": self.eps}

    @classmethod
    def from_dict(cls, d: dict) -> "TrendConfig":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class MetricPoint:
    metric_id: str
    ts: int
    value: float


@dataclass
class MetricSeries:
    metric_id: str
    database_kind: DatabaseKind = DatabaseKind.GENERIC
    category_path: list[str] = field(default_factory=lambda: ["uncategorized"])
    unit: str = ""
    points: list[MetricPoint] = field(default_factory=list)


class StatKind(str, Enum):
    DELTA = "delta"
    ROLLING_MEAN = "mean"
    PERCENTILE = "percentile"
    TREND = "trend"


@dataclass(frozen=True)
class DerivedStat:
    kind: StatKind
    window_seconds: int
    value: float | TrendClass
    p: int | None = None


DEFAULT_PERCENTILES = (50, 90, 95)

# Stat names accepted by observe(); detection expressions and tools use these.
STAT_NAMES = ("last", "mean", "min", "max", "delta", "p50", "p90", "p95", "trend")


def nearest_rank(values: Sequence[float], p: float) -> float:
    if not values:
        raise InsufficientData(1, 0)
    ordered = sorted(values)
    rank = max(1, math.ceil(p / 100.0 * len(ordered)))
    return ordered[rank - 1]


def classify_trend(values: Sequence[float], cfg: TrendConfig | None = None) -> TrendClass:
    """Classify a window into one of the six trend classes.

    Fits a least-squares slope over index positions and scales it to the
    relative change across the window; the residual coefficient of variation
    separates "stable" from "fluctuating" when the slope is flat.
    """
    cfg = cfg or TrendConfig()
    m = len(values)
    if m < 2:
        raise InsufficientData(2, m)
    mean = math.fsum(values) / m
    centre = (m - 1) / 2.0
    sxy = math.fsum((i - centre) * (y - mean) for i, y in enumerate(values))
    sxx = math.fsum((i - centre) ** 2 for i in range(m))
    slope = sxy / sxx
    scale = max(abs(mean), cfg.eps)
    r = slope * (m - 1) / scale
    resid = [y - (mean + slope * (i - centre)) for i, y in enumerate(values)]
    rmean = math.fsum(resid) / m
    q = math.sqrt(math.fsum((e - rmean) ** 2 for e in resid) / m) / scale

    if abs(r) < cfg.flat and q < cfg.noise:
        return TrendClass.STABLE
    if r <= -cfg.sharp:
        return TrendClass.SHARP_DECLINE
    if -cfg.sharp < r <= -cfg.flat:
        return TrendClass.SLOW_DECLINE
    if r >= cfg.sharp:
        return TrendClass.SHARP_RISE
    if cfg.flat <= r < cfg.sharp:
        return TrendClass.SLOW_RISE
    return TrendClass.FLUCTUATING


def _parse_ts(raw, line_no):
    if isinstance(raw, bool):
        raise MalformedRecord(line_no, "ts must be an integer")
    if isinstance(raw, int):
        ts = raw
    elif isinstance(raw, float) and raw.is_integer():
        ts = int(raw)
    elif isinstance(raw, str) and raw.strip().lstrip("-").isdigit():
        ts = int(raw.strip())
    else:
        raise MalformedRecord(line_no, f"bad ts {raw!r}")
    if ts < 0:
        raise MalformedRecord(line_no, "ts must be >= 0")
    return ts


def _parse_value(raw, line_no):
    if isinstance(raw, bool):
        raise MalformedRecord(line_no, "value must be numeric")
    if isinstance(raw, (int, float)):
        value = float(raw)
    elif isinstance(raw, str):
        try:
            value = float(raw)
        except ValueError:
            raise MalformedRecord(line_no, f"bad value {raw!r}") from None
    else:
        raise MalformedRecord(line_no, f"bad value {raw!r}")
    if not math.isfinite(value):
        raise NonFiniteValue(line_no, raw)
    return value


def parse_records(lines: Iterable[str], format: str = "jsonl") -> list[MetricPoint]:
    """Decode JSONL or CSV records into points; raises on the first bad line."""
    fmt = format.lower()
    points = []
    if fmt == "jsonl":
        for line_no, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, str(exc)) from None
            if not isinstance(rec, dict) or not {"metric_id", "ts", "value"} <= rec.keys():
                raise MalformedRecord(line_no, "record needs metric_id, ts, value")
            mid = rec["metric_id"]
            if not isinstance(mid, str) or not mid:
                raise MalformedRecord(line_no, "metric_id must be a non-empty string")
            points.append(MetricPoint(mid, _parse_ts(rec["ts"], line_no),
                                      _parse_value(rec["value"], line_no)))
    elif fmt == "csv":
        text = "\n".join(line.rstrip("\r\n") for line in lines)
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None:
            return points
        header = [h.strip() for h in header]
        if header != ["metric_id", "ts", "value"]:
            raise MalformedRecord(1, "CSV header must be metric_id,ts,value")
        for row in reader:
            line_no = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3 or not row[0].strip():
                raise MalformedRecord(line_no, "expected 3 columns")
            points.append(MetricPoint(row[0].strip(), _parse_ts(row[1], line_no),
                                      _parse_value(row[2].strip(), line_no)))
    else:
        raise ValueError(f"unsupported format {format!r}")
    return points


class _Column:
    __slots__ = ("by_ts", "ts", "values")

    def __init__(self):
        self.by_ts: dict[int, float] = {}
        self.ts: list[int] = []
        self.values: list[float] = []

    def rebuild(self):
        self.ts = sorted(self.by_ts)
        self.values = [self.by_ts[t] for t in self.ts]


class MetricStore:
    """In-memory metric store.

    Readers may run concurrently; all writes go through ``commit`` under a lock
    and swap in freshly sorted columns, so a reader never sees a half-sorted
    series.
    """

    def __init__(self, trend_cfg: TrendConfig | None = None):
        self.trend_cfg = trend_cfg or TrendConfig()
        self._columns: dict[str, _Column] = {}
        self._meta: dict[str, MetricSeries] = {}
        self._lock = threading.Lock()

    # -- metadata -------------------------------------------------------
    def register(self, metric_id: str, database_kind=DatabaseKind.GENERIC,
                 category_path: Sequence[str] = ("uncategorized",), unit: str = ""):
        if not category_path:
            raise ValueError("category_path must be non-empty")
        self._meta[metric_id] = MetricSeries(
            metric_id, DatabaseKind(database_kind), list(category_path), unit)

    def metric_ids(self) -> list[str]:
        return sorted(self._columns)

    def __contains__(self, metric_id) -> bool:
        return metric_id in self._columns

    def series(self, metric_id: str) -> MetricSeries:
        col = self._column(metric_id)
        meta = self._meta.get(metric_id) or MetricSeries(metric_id)
        return MetricSeries(meta.metric_id, meta.database_kind, list(meta.category_path),
                            meta.unit, [MetricPoint(metric_id, t, v)
                                        for t, v in zip(col.ts, col.values)])

    def unit(self, metric_id: str) -> str:
        meta = self._meta.get(metric_id)
        return meta.unit if meta else ""

    def hierarchy(self) -> dict:
        """Nested dict of category path -> metric ids for ingested metrics."""
        tree: dict = {}
        for mid in self.metric_ids():
            meta = self._meta.get(mid) or MetricSeries(mid)
            node = tree
            for part in meta.category_path:
                node = node.setdefault(part, {})
            node.setdefault("__metrics__", []).append(mid)
        return tree

    # -- writes ---------------------------------------------------------
    def commit(self, points: Iterable[MetricPoint]) -> int:
        points = list(points)
        for i, p in enumerate(points, start=1):
            if not math.isfinite(p.value):
                raise NonFiniteValue(i, p.value)
            if p.ts < 0:
                raise MalformedRecord(i, "ts must be >= 0")
        touched = set()
        with self._lock:
            for p in points:
                col = self._columns.get(p.metric_id)
                if col is None:
                    col = self._columns[p.metric_id] = _Column()
                col.by_ts[p.ts] = p.value
                touched.add(p.metric_id)
            for mid in touched:
                self._columns[mid].rebuild()
        return len(points)

    def ingest_points(self, lines: Iterable[str], format: str = "jsonl") -> int:
        """Parse every line first, then commit; a bad line commits nothing."""
        return self.commit(parse_records(lines, format))

    def ingest_file(self, path) -> int:
        fmt = "csv" if str(path).lower().endswith(".csv") else "jsonl"
        with open(path, encoding="utf-8") as fh:
            return self.ingest_points(fh, fmt)

    # -- reads ----------------------------------------------------------
    def _column(self, metric_id: str) -> _Column:
        col = self._columns.get(metric_id)
        if col is None:
            raise UnknownMetric(metric_id)
        return col

    def get_window(self, metric_id: str, t0: int, t1: int) -> list[MetricPoint]:
        if t0 > t1:
            raise ValueError("t0 must be <= t1")
        col = self._column(metric_id)
        lo = bisect.bisect_left(col.ts, t0)
        hi = bisect.bisect_right(col.ts, t1)
        return [MetricPoint(metric_id, t, v) for t, v in zip(col.ts[lo:hi], col.values[lo:hi])]

    def window_values(self, metric_id: str, t_end: int, window_seconds: int) -> list[float]:
        """Values in the half-open window (t_end - window_seconds, t_end]."""
        if window_seconds <= 0:
            raise ValueError("window_seconds must be positive")
        col = self._column(metric_id)
        lo = bisect.bisect_right(col.ts, t_end - window_seconds)
        hi = bisect.bisect_right(col.ts, t_end)
        return col.values[lo:hi]

    def before(self, metric_id: str, t: int) -> list[MetricPoint]:
        col = self._column(metric_id)
        hi = bisect.bisect_left(col.ts, t)
        return [MetricPoint(metric_id, ts, v) for ts, v in zip(col.ts[:hi], col.values[:hi])]

    def derive_stat(self, metric_id: str, kind: StatKind | str, t_end: int,
                    window_seconds: int, p: int | None = None) -> DerivedStat:
        kind = StatKind(kind)
        values = self.window_values(metric_id, t_end, window_seconds)
        if kind in (StatKind.DELTA, StatKind.TREND):
            if len(values) < 2:
                raise InsufficientData(2, len(values))
        elif not values:
            raise InsufficientData(1, 0)
        if kind is StatKind.DELTA:
            value = values[-1] - values[0]
        elif kind is StatKind.ROLLING_MEAN:
            value = math.fsum(values) / len(values)
        elif kind is StatKind.PERCENTILE:
            if p is None:
                raise ValueError("percentile needs p")
            value = nearest_rank(values, p)
        else:
            value = classify_trend(values, self.trend_cfg)
        return DerivedStat(kind, window_seconds, value, p)

    def observe(self, metric_id: str, stat: str, window_seconds: int, t_end: int):
        """Evaluate one named statistic over (t_end - window_seconds, t_end]."""
        if stat == "last":
            values = self.window_values(metric_id, t_end, window_seconds)
            if not values:
                raise InsufficientData(1, 0)
            return values[-1]
        if stat in ("min", "max"):
            values = self.window_values(metric_id, t_end, window_seconds)
            if not values:
                raise InsufficientData(1, 0)
            return min(values) if stat == "min" else max(values)
        if stat == "mean":
            return self.derive_stat(metric_id, StatKind.ROLLING_MEAN, t_end, window_seconds).value
        if stat == "delta":
            return self.derive_stat(metric_id, StatKind.DELTA, t_end, window_seconds).value
        if stat == "trend":
            return self.derive_stat(metric_id, StatKind.TREND, t_end, window_seconds).value
        if stat in ("p50", "p90", "p95"):
            return self.derive_stat(metric_id, StatKind.PERCENTILE, t_end, window_seconds,
                                    p=int(stat[1:])).value
        raise ValueError(f"unknown stat {stat!r}")
