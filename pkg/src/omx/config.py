"""Engine configuration file (JSON)."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .adf import ADFConfig
from .errors import IoError, SchemaError
from .evolution import EvolutionConfig
from .metrics import TrendConfig
from .orchestrator import LlmEndpointConfig

ENV_VAR = "OMX_CONFIG"


@dataclass
class Paths:
    graph_file: str = "omx-graph.json"
    models_dir: str = ""          # empty means the shipped seed models
    data_dir: str = "omx-data"

    def to_dict(self) -> dict:
        return {"graph_file": self.graph_file, "models_dir": self.models_dir,
                "data_dir": self.data_dir}


@dataclass
class EngineConfig:
    paths: Paths = field(default_factory=Paths)
    adf: ADFConfig = field(default_factory=ADFConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    llm: LlmEndpointConfig = field(default_factory=LlmEndpointConfig)
    trend: TrendConfig = field(default_factory=TrendConfig)

    def evolution_config(self) -> EvolutionConfig:
        """Evolution settings with the engine-wide detector config applied."""
        return replace(self.evolution, adf=self.adf)

    def to_dict(self) -> dict:
        evo = self.evolution.to_dict()
        evo.pop("adf")
        return {"paths": self.paths.to_dict(), "adf": self.adf.to_dict(), "evolution": evo,
                "llm": self.llm.to_dict(), "trend": self.trend.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        if not isinstance(d, dict):
            raise SchemaError("$", "config must be an object")
        try:
            paths = Paths(**d.get("paths", {}))
            adf = ADFConfig.from_dict(d.get("adf", {}))
            evo = EvolutionConfig.from_dict({**d.get("evolution", {}), "adf": adf.to_dict()})
            llm = LlmEndpointConfig.from_dict(d.get("llm", {}))
            trend = TrendConfig.from_dict(d["trend"]) if "trend" in d else TrendConfig()
        except (TypeError, ValueError, KeyError) as exc:
            raise SchemaError("$", f"invalid config: {exc}") from None
        return cls(paths, adf, evo, llm, trend)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def load_config(path=None) -> EngineConfig:
    """Read the config from ``path``, else $OMX_CONFIG, else defaults."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return EngineConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(str(path), f"invalid JSON: {exc}") from None
    return EngineConfig.from_dict(doc)


def save_config(cfg: EngineConfig, path) -> None:
    try:
        Path(path).write_text(cfg.dumps(), encoding="utf-8")
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from None
