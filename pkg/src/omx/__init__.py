"""omx: database anomaly diagnosis over an O&M experience graph."""
from .adf import ADFConfig, ADFResult, AdaptiveDetector, TrendClassifier
from .anomaly import AnomalyEvent, AnomalyModel, detect, evaluate_expr, parse_model, seed_models
from .evolution import DiagnosisContext, EvolutionConfig, evolve
from .graph import ExperienceGraph, ExpandLimits, init_from_models
from .metrics import MetricStore, TrendClass, TrendConfig, classify_trend

__version__ = "0.1.0"

__all__ = [
    "ADFConfig", "ADFResult", "AdaptiveDetector", "TrendClassifier", "AnomalyEvent",
    "AnomalyModel", "detect", "evaluate_expr", "parse_model", "seed_models",
    "DiagnosisContext", "EvolutionConfig", "evolve", "ExperienceGraph", "ExpandLimits",
    "init_from_models", "MetricStore", "TrendClass", "TrendConfig", "classify_trend",
]
