"""Root-cause scoring and the scenario evaluation suite."""
from __future__ import annotations

import csv
import io
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .errors import OmxError, OutOfRange

log = logging.getLogger(__name__)

DEFAULT_PENALTY = 0.1
CSV_COLUMNS = ("case_id", "scenario", "seed", "a_c", "a_w", "a_a", "precision", "recall", "f1",
               "accuracy")


def normalize_label(label: str, synonyms: dict | None = None) -> str:
    norm = re.sub(r"\s+", " ", str(label).strip().lower())
    if synonyms:
        norm = synonyms.get(norm, norm)
    return norm


@dataclass(frozen=True)
class CaseScore:
    a_c: int
    a_w: int
    a_a: int
    precision: float
    recall: float
    f1: float
    accuracy: float
    penalty_sigma: float = DEFAULT_PENALTY


def accuracy(a_c: int, a_w: int, a_a: int, penalty_sigma: float = DEFAULT_PENALTY) -> float:
    """Penalized accuracy: wrong causes cost ``penalty_sigma`` of a correct one."""
    if a_a > 0 and a_c >= penalty_sigma * a_w:
        return (a_c - penalty_sigma * a_w) / a_a
    return 0.0


def score_case(predicted: Iterable[str], truth: Iterable[str],
               penalty_sigma: float = DEFAULT_PENALTY, synonyms: dict | None = None) -> CaseScore:
    pred = {normalize_label(p, synonyms) for p in predicted}
    true = {normalize_label(t, synonyms) for t in truth}
    a_c = len(pred & true)
    a_w = len(pred - true)
    a_a = len(true)
    precision = a_c / len(pred) if pred else 0.0
    recall = a_c / a_a if a_a else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return CaseScore(a_c, a_w, a_a, precision, recall, f1,
                     accuracy(a_c, a_w, a_a, penalty_sigma), penalty_sigma)


def heval(recall_score: float, consistency_score: float, authenticity_score: float) -> float:
    """Weighted human-evaluation score (30/30/40)."""
    for name, v in (("recall", recall_score), ("consistency", consistency_score),
                    ("authenticity", authenticity_score)):
        if not (isinstance(v, (int, float)) and math.isfinite(v) and 0.0 <= v <= 1.0):
            raise OutOfRange(f"{name} score {v!r} not in [0, 1]")
    return 0.3 * recall_score + 0.3 * consistency_score + 0.4 * authenticity_score


# -- suite ------------------------------------------------------------------

@dataclass
class Case:
    case_id: str
    scenario: object
    seed: int
    store: object
    truth: object
    events: list
    now: int


@dataclass
class CaseResult:
    case_id: str
    scenario: str
    seed: int
    score: CaseScore
    predicted: list
    error: str | None = None
    reports: list = field(default_factory=list)

    def row(self) -> dict:
        s = self.score
        return {"case_id": self.case_id, "scenario": self.scenario, "seed": self.seed,
                "a_c": s.a_c, "a_w": s.a_w, "a_a": s.a_a, "precision": s.precision,
                "recall": s.recall, "f1": s.f1, "accuracy": s.accuracy}


@dataclass
class EvalSummary:
    cases: list

    def mean(self, key: str) -> float:
        if not self.cases:
            return 0.0
        return math.fsum(getattr(c.score, key) for c in self.cases) / len(self.cases)

    @property
    def means(self) -> dict:
        return {k: self.mean(k) for k in ("accuracy", "precision", "recall", "f1")}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for c in self.cases:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in c.row().items()})
        return buf.getvalue()


Diagnoser = Callable[[Case], Iterable[str]]


def oracle_diagnoser(case: Case) -> list[str]:
    return list(case.truth.causes)


def empty_diagnoser(case: Case) -> list[str]:
    return []


class MockPipelineDiagnoser:
    """Full detect-evolve-prompt-report pipeline with the deterministic mock model."""

    def __init__(self, models=None, graph=None, tools=None, evolution_cfg=None, llm_cfg=None):
        from .anomaly import seed_models
        from .graph import init_from_models
        from .orchestrator import LlmEndpointConfig
        self.models = models if models is not None else seed_models()
        self.graph = graph if graph is not None else init_from_models(self.models)
        self.tools = tools
        self.evolution_cfg = evolution_cfg
        self.llm_cfg = llm_cfg or LlmEndpointConfig()
        self.last_outcomes: list = []

    def __call__(self, case: Case) -> list[str]:
        from .pipeline import diagnose_event
        by_id = {m.model_id: m for m in self.models}
        graph = self.graph.copy()   # keep cases independent of each other
        labels: list[str] = []
        self.last_outcomes = []
        for event in case.events:
            outcome = diagnose_event(event, by_id[event.model_id], graph, case.store,
                                     self.tools, self.evolution_cfg, self.llm_cfg)
            self.last_outcomes.append(outcome)
            for label in outcome.report.labels():
                if label not in labels:
                    labels.append(label)
        return labels


def build_case(sc, seed: int, models, duration=None, cadence=None) -> Case:
    from .anomaly import detect
    from .simulator import DEFAULT_CADENCE, DEFAULT_DURATION, generate
    gen = generate(sc, seed, duration or DEFAULT_DURATION, cadence or DEFAULT_CADENCE)
    store = gen.to_store()
    now = gen.truth.detect_at
    events = detect(models, store, now)
    return Case(f"{sc.name}#{seed:03d}", sc, seed, store, gen.truth, events, now)


def run_suite(scenarios: Sequence, diagnoser: Diagnoser, seeds: Sequence[int], models=None,
              penalty_sigma: float = DEFAULT_PENALTY, duration=None, cadence=None) -> EvalSummary:
    from .anomaly import seed_models
    models = models if models is not None else seed_models()
    results = []
    for sc in scenarios:
        for seed in seeds:
            case = build_case(sc, seed, models, duration, cadence)
            error = None
            try:
                predicted = list(diagnoser(case))
            except (OmxError, ValueError, KeyError) as exc:
                log.warning("case %s failed: %s", case.case_id, exc)
                predicted, error = [], f"{type(exc).__name__}: {exc}"
            score = score_case(predicted, case.truth.causes, penalty_sigma)
            results.append(CaseResult(case.case_id, sc.name, seed, score, predicted, error))
    results.sort(key=lambda r: r.case_id)
    return EvalSummary(results)


def parse_seeds(text: str) -> list[int]:
    """Accepts "1..10", "1,2,5" or a mix such as "1..3,7"."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError(f"no seeds in {text!r}")
    return seeds
