"""Prompt assembly, LLM calls, report parsing and evidence validation."""
from __future__ import annotations

import json
import math
import os
import re
import socket
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from enum import Enum

from .anomaly import AnomalyModel, render_expr
from .errors import (EmptyContext, HttpStatus, LlmError, LlmTimeout, MalformedResponse,
                     MissingSection, NoCauses, TooManyCauses)
from .evolution import DiagnosisContext
from .metrics import nearest_rank

SECTIONS = ("Anomaly Validation", "Root Cause Analysis", "Recover Solution", "Summary",
            "SQL Context")
MAX_CAUSES = 5
NUM = r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?"

# prompt component markers
_A, _L, _M, _E, _O = ("[ANOMALY]", "[DETECTION CONDITION]", "[METRICS]", "[EXPERIENCE]",
                      "[OUTPUT FORMAT]")

OUTPUT_SPEC = """\
Answer strictly from the metrics and experience above. Do not cite any metric or
value that is not listed. Write the report as plain text with exactly these
level-1 headings, in order:
# Anomaly Validation   first line "Real anomaly: yes" or "Real anomaly: no", then a rationale
# Root Cause Analysis  one to five causes, each as "## Cause N: <LABEL>" followed by reasoning
                       that cites evidence as "metric <id> max=<value><unit>, avg=<value><unit>"
# Recover Solution     one "- " bullet per recovery action
# Summary              a short paragraph
# SQL Context          relevant SQL details, or N/A"""


def fmt(value: float) -> str:
    """Two-decimal rendering with trailing zeros trimmed."""
    text = f"{value:.2f}".rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


@dataclass
class DiagnosisPrompt:
    anomaly: str
    condition: str
    metrics: str
    experience: str
    output_spec: str
    metric_ids: list = field(default_factory=list)

    def render(self) -> str:
        parts = [(_A, self.anomaly), (_L, self.condition), (_M, self.metrics),
                 (_E, self.experience), (_O, self.output_spec)]
        return "\n\n".join(f"{head}\n{body.rstrip()}" for head, body in parts) + "\n"


def _metric_line(mid, unit, points, result, label) -> str:
    values = [v for _, v in points]
    t0, t1 = (points[0][0], points[-1][0]) if points else (0, 0)
    u = unit or ""
    stats = (f"min={fmt(min(values))}{u}, max={fmt(max(values))}{u}, "
             f"avg={fmt(math.fsum(values) / len(values))}{u}") if values else "no data"
    score = f", adf_score={fmt(result.score)}" if result is not None else ""
    return f"- metric {mid} ({u or 'unitless'}) window [{t0}, {t1}]: {stats}{score} [{label}]"


def build_prompt(context: DiagnosisContext, model: AnomalyModel) -> DiagnosisPrompt:
    if context is None or context.is_empty():
        raise EmptyContext("diagnosis context has nothing to report")
    ev = context.anomaly
    anomaly = (f"Anomaly model {model.model_id} ({model.name}) on {model.database_kind.value} "
               f"fired at {ev.fired_at}, window [{ev.window[0]}, {ev.window[1]}].\n"
               f"Symptom: {model.symptom_description}")
    if ev.evidence:
        anomaly += "\nTriggering observations: " + "; ".join(
            f"{e.metric_id}.{e.stat_spec}={fmt(float(e.value))}" for e in ev.evidence)
    condition = (f"{render_expr(model.expr, model.units())}\n"
                 f"Frequency control: fires when the condition holds in {model.freq.k} of "
                 f"{model.freq.n} consecutive evaluations every {model.eval_period_seconds}s.")
    lines = []
    if not context.abnormal_metrics:
        lines.append("no metric abnormal")
    for mid, res in context.abnormal_metrics:
        lines.append(_metric_line(mid, context.units.get(mid, ""),
                                  context.metric_windows.get(mid, []), res, "abnormal"))
    for mid in context.normal_metrics:
        lines.append(_metric_line(mid, context.units.get(mid, ""),
                                  context.metric_windows.get(mid, []),
                                  context.normal_results.get(mid), "normal"))
    exp_lines = []
    for item in context.experience_texts:
        tag = f"[cause: {item.cause}] " if item.cause else ""
        exp_lines.append(f"- ({item.vertex_id}) {tag}{item.text}")
    for findings in context.tool_findings:
        for it in findings.items:
            exp_lines.append(f"- (tool {findings.tool_id}) {it.severity.value.upper()}: {it.message}")
    if not exp_lines:
        exp_lines.append("- no experience fragment reached")
    ids = [m for m, _ in context.abnormal_metrics] + list(context.normal_metrics)
    return DiagnosisPrompt(anomaly, condition, "\n".join(lines), "\n".join(exp_lines),
                           OUTPUT_SPEC, ids)


# -- LLM endpoint -------------------------------------------------------------

class LlmMode(str, Enum):
    REMOTE = "remote"
    MOCK = "mock"


@dataclass
class LlmEndpointConfig:
    base_url: str = ""
    model_name: str = "deepseek-r1"
    timeout_seconds: int = 120
    api_key_env: str = "OMX_LLM_API_KEY"
    mode: LlmMode = LlmMode.MOCK

    def __post_init__(self):
        self.mode = LlmMode(self.mode)
        if self.mode is LlmMode.REMOTE and not self.base_url:
            raise ValueError("remote mode requires base_url")
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be positive")

    def to_dict(self) -> dict:
        return {"base_url": self.base_url, "model_name": self.model_name,
                "timeout_seconds": self.timeout_seconds, "api_key_env": self.api_key_env,
                "mode": self.mode.value}

    @classmethod
    def from_dict(cls, d: dict) -> "LlmEndpointConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def _section(prompt_text: str, head: str) -> str:
    heads = [_A, _L, _M, _E, _O]
    start = prompt_text.find(head + "\n")
    if start < 0:
        return ""
    start += len(head) + 1
    ends = [prompt_text.find("\n\n" + h, start) for h in heads if h != head]
    ends = [e for e in ends if e >= 0]
    return prompt_text[start:min(ends) if ends else len(prompt_text)]


_METRIC_LINE = re.compile(
    r"^- metric (\S+) \(([^)]*)\) window \[[^\]]*\]: min=(" + NUM + r")\S*, max=(" + NUM
    + r")\S*, avg=(" + NUM + r")\S*.*\[(abnormal|normal)\]$")
_CAUSE_TAG = re.compile(r"\[cause: ([^\]]+)\]")


def mock_complete(prompt_text: str) -> str:
    """Deterministic stand-in for a reasoning model.

    Causes come from the experience fragments in prompt order; evidence cites
    abnormal metrics exactly as the prompt printed them.
    """
    metrics = []
    for line in _section(prompt_text, _M).splitlines():
        m = _METRIC_LINE.match(line.strip())
        if m:
            mid, unit, mn, mx, avg, label = m.groups()
            unit = "" if unit == "unitless" else unit
            metrics.append((mid, unit, mx, avg, label == "abnormal"))
    abnormal = [m for m in metrics if m[4]]
    causes = []
    for cause in _CAUSE_TAG.findall(_section(prompt_text, _E)):
        if cause not in causes:
            causes.append(cause)
    causes = causes[:MAX_CAUSES] or ["UNDETERMINED"]
    cited = abnormal[:3]
    evidence = "; ".join(f"metric {mid} max={mx}{u}, avg={avg}{u}" for mid, u, mx, avg, _ in cited)
    real = "yes" if abnormal else "no"
    out = ["# Anomaly Validation", f"Real anomaly: {real}"]
    out.append(f"{len(abnormal)} metric(s) flagged abnormal by the detector."
               if abnormal else "No metric was flagged abnormal by the detector.")
    out += ["", "# Root Cause Analysis"]
    for i, cause in enumerate(causes, start=1):
        out.append(f"## Cause {i}: {cause}")
        reason = f"Experience fragments on the explored path point to {cause.lower()}."
        out.append(reason + (f" Evidence: {evidence}." if evidence else ""))
        out.append("")
    out += ["# Recover Solution"]
    out += [f"- Address {c.lower()} following the matched experience fragment." for c in causes]
    out += ["", "# Summary",
            f"Most likely cause: {causes[0]}." + (f" Supported by {len(cited)} abnormal metric(s)."
                                                   if cited else ""),
            "", "# SQL Context", "N/A", ""]
    return "\n".join(out)


def complete(cfg: LlmEndpointConfig, prompt_text: str) -> str:
    if not prompt_text or not prompt_text.strip():
        raise ValueError("prompt is empty")
    if cfg.mode is LlmMode.MOCK:
        return mock_complete(prompt_text)
    body = json.dumps({"model": cfg.model_name,
                       "messages": [{"role": "user", "content": prompt_text}]}).encode()
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(cfg.api_key_env)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    req = urllib.request.Request(cfg.base_url, data=body, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=cfg.timeout_seconds) as resp:
            raw = resp.read()
    except urllib.error.HTTPError as exc:
        raise HttpStatus(exc.code) from None
    except urllib.error.URLError as exc:
        if isinstance(exc.reason, (socket.timeout, TimeoutError)):
            raise LlmTimeout(f"no response within {cfg.timeout_seconds}s") from None
        raise LlmError(f"cannot reach {cfg.base_url}: {exc.reason}") from None
    except (socket.timeout, TimeoutError):
        raise LlmTimeout(f"no response within {cfg.timeout_seconds}s") from None
    try:
        content = json.loads(raw)["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        raise MalformedResponse("response lacks choices[0].message.content") from None
    if not isinstance(content, str) or not content.strip():
        raise MalformedResponse("empty message content")
    return content


# -- report ---------------------------------------------------------------------

@dataclass(frozen=True)
class EvidenceRef:
    metric_id: str
    stat: str | None = None
    value: float | None = None
    unit: str = ""


@dataclass
class RootCause:
    label: str
    reasoning: str = ""
    evidence_refs: list = field(default_factory=list)


@dataclass
class DiagnosisReport:
    is_real_anomaly: bool
    rationale: str
    root_causes: list
    recovery: list
    summary: str
    sql_context: str | None = None

    def labels(self) -> list[str]:
        return [c.label for c in self.root_causes]

    def to_dict(self) -> dict:
        return {
            "validation": {"is_real_anomaly": self.is_real_anomaly, "rationale": self.rationale},
            "root_causes": [{"label": c.label, "reasoning": c.reasoning,
                             "evidence_refs": [[r.metric_id, r.stat, r.value, r.unit]
                                               for r in c.evidence_refs]}
                            for c in self.root_causes],
            "recovery": list(self.recovery), "summary": self.summary,
            "sql_context": self.sql_context,
        }


_STAT_RE = re.compile(r"\b(min|max|avg|mean|last|p50|p90|p95|adf_score)\s*[=:]?\s*(" + NUM
                      + r")\s*([A-Za-z%/µ]*)")
_METRIC_REF = re.compile(r"\bmetric\s+([A-Za-z_][\w.:\-]*)")


def extract_evidence(text: str) -> list[EvidenceRef]:
    refs = []
    hits = list(_METRIC_REF.finditer(text))
    for i, hit in enumerate(hits):
        end = hits[i + 1].start() if i + 1 < len(hits) else len(text)
        segment = text[hit.end():end]
        stats = list(_STAT_RE.finditer(segment))
        mid = hit.group(1).rstrip(".:,")
        if not stats:
            refs.append(EvidenceRef(mid))
        for s in stats:
            refs.append(EvidenceRef(mid, s.group(1), float(s.group(2)), s.group(3)))
    return refs


_H1 = re.compile(r"^#(?!#)\s*(.+?)\s*$")
_CAUSE_HEAD = re.compile(r"^##(?!#)\s*(?:cause\s*\d+\s*[:.)-]\s*)?(.+?)\s*$", re.IGNORECASE)
_ENUM = re.compile(r"^\d+[.)]\s+(.+?)\s*$")
_BULLET = re.compile(r"^(?:[-*]|\d+[.)])\s+(.+?)\s*$")


def _split_causes(body: str) -> list[RootCause]:
    lines = body.splitlines()
    heads = [i for i, ln in enumerate(lines) if _CAUSE_HEAD.match(ln.strip())]
    pattern = _CAUSE_HEAD
    if not heads:
        heads = [i for i, ln in enumerate(lines) if _ENUM.match(ln.strip())]
        pattern = _ENUM
    causes = []
    for j, i in enumerate(heads):
        end = heads[j + 1] if j + 1 < len(heads) else len(lines)
        label = pattern.match(lines[i].strip()).group(1)
        reasoning = "\n".join(lines[i + 1:end]).strip()
        causes.append(RootCause(label, reasoning, extract_evidence(label + "\n" + reasoning)))
    return causes


def parse_report(raw: str) -> DiagnosisReport:
    canon = {s.lower(): s for s in SECTIONS}
    bodies: dict[str, list] = {}
    current = None
    for line in (raw or "").splitlines():
        m = _H1.match(line.strip())
        if m and line.lstrip().startswith("#"):
            current = canon.get(m.group(1).lower())
            if current is not None:
                bodies.setdefault(current, [])
            continue
        if current is not None:
            bodies[current].append(line)
    for name in SECTIONS:
        if name not in bodies:
            raise MissingSection(name)
    text = {k: "\n".join(v).strip() for k, v in bodies.items()}

    validation = text["Anomaly Validation"]
    m = re.search(r"real anomaly\s*:\s*(yes|no|true|false)", validation, re.IGNORECASE)
    if m:
        is_real = m.group(1).lower() in ("yes", "true")
        rationale = (validation[:m.start()] + validation[m.end():]).strip()
    else:
        is_real = "false alarm" not in validation.lower()
        rationale = validation

    causes = _split_causes(text["Root Cause Analysis"])
    if not causes:
        raise NoCauses()
    if len(causes) > MAX_CAUSES:
        raise TooManyCauses(len(causes))

    rec_lines = [ln.strip() for ln in text["Recover Solution"].splitlines() if ln.strip()]
    bullets = [_BULLET.match(ln).group(1) for ln in rec_lines if _BULLET.match(ln)]
    recovery = bullets or rec_lines
    sql = text["SQL Context"]
    sql_context = None if sql.strip().lower() in ("", "n/a", "na", "none") else sql
    return DiagnosisReport(is_real, rationale, causes, recovery, text["Summary"], sql_context)


def render_report(report: DiagnosisReport) -> str:
    out = ["# Anomaly Validation", f"Real anomaly: {'yes' if report.is_real_anomaly else 'no'}"]
    if report.rationale:
        out.append(report.rationale)
    out += ["", "# Root Cause Analysis"]
    for i, c in enumerate(report.root_causes, start=1):
        out.append(f"## Cause {i}: {c.label}")
        if c.reasoning:
            out.append(c.reasoning)
        out.append("")
    out.append("# Recover Solution")
    out += [f"- {a}" for a in report.recovery]
    out += ["", "# Summary", report.summary, "", "# SQL Context", report.sql_context or "N/A", ""]
    return "\n".join(out)


# -- evidence authenticity ----------------------------------------------------------

@dataclass(frozen=True)
class AuthenticityFinding:
    cause_index: int
    kind: str  # "UnknownMetric" | "ValueMismatch"
    detail: str


def _recompute(context: DiagnosisContext, mid: str, stat: str):
    values = [v for _, v in context.metric_windows.get(mid, [])]
    if stat == "adf_score":
        for m, r in context.abnormal_metrics:
            if m == mid:
                return r.score
        r = context.normal_results.get(mid)
        return r.score if r is not None else None
    if not values:
        return None
    if stat == "min":
        return min(values)
    if stat == "max":
        return max(values)
    if stat in ("avg", "mean"):
        return math.fsum(values) / len(values)
    if stat == "last":
        return values[-1]
    if stat in ("p50", "p90", "p95"):
        return nearest_rank(values, int(stat[1:]))
    return None


def validate_evidence(report: DiagnosisReport, context: DiagnosisContext,
                      rel_tol: float = 0.01, abs_tol: float = 0.01) -> list[AuthenticityFinding]:
    known = context.metric_ids()
    findings = []
    for idx, cause in enumerate(report.root_causes):
        for ref in cause.evidence_refs:
            if ref.metric_id not in known:
                findings.append(AuthenticityFinding(
                    idx, "UnknownMetric", f"metric {ref.metric_id} is not in the context"))
                continue
            if ref.stat is None:
                continue
            actual = _recompute(context, ref.metric_id, ref.stat)
            if actual is None:
                findings.append(AuthenticityFinding(
                    idx, "ValueMismatch", f"{ref.metric_id}.{ref.stat} cannot be verified"))
            elif not math.isclose(ref.value, actual, rel_tol=rel_tol, abs_tol=abs_tol):
                findings.append(AuthenticityFinding(
                    idx, "ValueMismatch",
                    f"{ref.metric_id}.{ref.stat} claimed {ref.value} but context has {fmt(actual)}"))
    return findings
