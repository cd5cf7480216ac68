"""Glue that runs one event through evolution, prompting and report checks."""
from __future__ import annotations

from dataclasses import dataclass

from .evolution import DiagnosisContext, EvolutionConfig, evolve
from .orchestrator import (AuthenticityFinding, DiagnosisPrompt, DiagnosisReport,
                           LlmEndpointConfig, build_prompt, complete, parse_report,
                           validate_evidence)


@dataclass
class DiagnosisOutcome:
    context: DiagnosisContext
    prompt: DiagnosisPrompt
    raw: str
    report: DiagnosisReport
    findings: list  # AuthenticityFinding


def diagnose_event(event, model, graph, store, tools=None, evolution_cfg=None,
                   llm_cfg=None) -> DiagnosisOutcome:
    evolution_cfg = evolution_cfg or EvolutionConfig()
    llm_cfg = llm_cfg or LlmEndpointConfig()
    context = evolve(event, graph, store, tools, evolution_cfg,
                     trigger_vertex=model.trigger_vertex_id
                     if model.trigger_vertex_id in graph.vertices else None)
    prompt = build_prompt(context, model)
    raw = complete(llm_cfg, prompt.render())
    report = parse_report(raw)
    return DiagnosisOutcome(context, prompt, raw, report, validate_evidence(report, context))


__all__ = ["DiagnosisOutcome", "diagnose_event", "AuthenticityFinding"]
