"""Command-line entry point: ``omx <subcommand> ...``.

Exit codes: 0 success, 1 operational error, 2 usage error. Diagnostics go to
stderr; results go to stdout or the path given with ``--out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import anomaly, graph as graphmod, simulator
from .config import EngineConfig, load_config
from .errors import OmxError
from .metrics import MetricStore
from .orchestrator import LlmEndpointConfig, render_report

log = logging.getLogger("omx")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _emit(args, record, text=None):
    if args.json:
        print(json.dumps(record, sort_keys=True))
    else:
        print(text if text is not None else json.dumps(record, indent=2, sort_keys=True))


def _write_out(path, text):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        from .errors import IoError
        raise IoError(path, exc.strerror or str(exc)) from None


# -- shared loaders -------------------------------------------------------------

def _config(args) -> EngineConfig:
    cfg = load_config(args.config)
    paths = cfg.paths
    if args.data_dir:
        paths = replace(paths, data_dir=args.data_dir)
    if args.models_dir:
        paths = replace(paths, models_dir=args.models_dir)
    if args.graph_file:
        paths = replace(paths, graph_file=args.graph_file)
    llm = cfg.llm.to_dict()
    for key, attr in (("mode", "llm_mode"), ("base_url", "llm_url"), ("model_name", "llm_model"),
                      ("timeout_seconds", "llm_timeout")):
        if getattr(args, attr) is not None:
            llm[key] = getattr(args, attr)
    try:
        cfg.llm = LlmEndpointConfig.from_dict(llm)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg.paths = paths
    return cfg


def _models(cfg):
    if cfg.paths.models_dir:
        return anomaly.load_models(cfg.paths.models_dir)
    return anomaly.seed_models()


def _data_files(data_dir) -> list[Path]:
    d = Path(data_dir)
    if not d.is_dir():
        return []
    return sorted(p for p in d.iterdir() if p.suffix in (".jsonl", ".csv"))


def _store(cfg) -> MetricStore:
    store = MetricStore(cfg.trend)
    for path in _data_files(cfg.paths.data_dir):
        store.ingest_file(path)
    return store


def _graph(cfg, models=None):
    path = Path(cfg.paths.graph_file)
    if path.exists():
        return graphmod.load(path)
    return graphmod.init_from_models(models if models is not None else _models(cfg))


# -- subcommands ------------------------------------------------------------------

def cmd_ingest(args, cfg):
    store = MetricStore(cfg.trend)
    total = 0
    for f in args.files:
        total += store.ingest_file(f)
    out = Path(cfg.paths.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "ingested.jsonl"
    if target.exists():
        existing = MetricStore()
        existing.ingest_file(target)
        merged = MetricStore()
        for mid in existing.metric_ids():
            merged.commit(existing.series(mid).points)
        for mid in store.metric_ids():
            merged.commit(store.series(mid).points)
        store = merged
    lines = [json.dumps({"metric_id": p.metric_id, "ts": p.ts, "value": p.value},
                        separators=(",", ":"))
             for mid in store.metric_ids() for p in store.series(mid).points]
    _write_out(target, "".join(line + "\n" for line in lines))
    _emit(args, {"ingested": total, "metrics": len(store.metric_ids()), "path": str(target)},
          f"ingested {total} points into {target}")
    return 0


def cmd_detect(args, cfg):
    models = _models(cfg)
    store = _store(cfg)
    errors: list = []
    events = anomaly.detect(models, store, args.now, errors)
    for err in errors:
        print(f"warning: {err}", file=sys.stderr)
    if args.json:
        for e in events:
            print(json.dumps({"event_id": e.event_id, **e.to_dict()}, sort_keys=True))
    else:
        if not events:
            print("no anomaly events")
        for e in events:
            ev = ", ".join(f"{x.metric_id}.{x.stat_spec}={x.value:g}" for x in e.evidence)
            print(f"{e.event_id}  window=[{e.window[0]}, {e.window[1]}]  evidence: {ev}")
    return 0


def cmd_graph(args, cfg):
    action = args.action
    if action == "build":
        g = graphmod.init_from_models(_models(cfg))
        out = args.out or cfg.paths.graph_file
        graphmod.save(g, out)
        _emit(args, {"saved": str(out), **g.stats()}, f"built graph with {len(g)} vertices -> {out}")
        return 0
    if action == "load":
        if not args.path:
            raise UsageError("graph load needs a path")
        g = graphmod.load(args.path)
        problems = g.validate()
        if problems:
            for p in problems:
                print(f"invalid: {p}", file=sys.stderr)
            return 1
        _emit(args, g.stats(), f"loaded {args.path}: {len(g)} vertices, {len(g.edges)} edges")
        return 0
    g = _graph(cfg)
    if action == "stats":
        stats = g.stats()
        lines = [f"{stats['vertices']:,} vertices, {stats['edges']:,} edges"]
        lines += [f"  {k}: {v:,}" for k, v in stats["by_kind"].items()]
        lines += [f"  {k} edges: {v:,}" for k, v in stats["by_relation"].items()]
        _emit(args, stats, "\n".join(lines))
    elif action == "query":
        ids = graphmod.localize(g, args.kind or None, args.tag or None, args.database,
                                args.prefix)
        if args.json:
            for vid in ids:
                print(json.dumps({"id": vid, "kind": g.vertices[vid].kind.value}))
        else:
            print("\n".join(ids) if ids else "(no match)")
    elif action == "enrich":
        added = graphmod.enrich(g, _store(cfg), args.threshold)
        out = args.out or cfg.paths.graph_file
        graphmod.save(g, out)
        _emit(args, {"added_edges": added, "saved": str(out)}, f"added {added} edges -> {out}")
    elif action == "save":
        out = args.out or cfg.paths.graph_file
        graphmod.save(g, out)
        _emit(args, {"saved": str(out)}, f"saved {out}")
    return 0


def cmd_diagnose(args, cfg):
    from .pipeline import diagnose_event
    from .tools import DEFAULT_REGISTRY
    model_id, _, ts = args.event.rpartition("@")
    if not model_id or not ts.lstrip("-").isdigit():
        raise UsageError("--event must look like MODEL_ID@unix_ts")
    models = {m.model_id: m for m in _models(cfg)}
    if model_id not in models:
        print(f"error: unknown model {model_id}", file=sys.stderr)
        return 1
    model = models[model_id]
    store = _store(cfg)
    event = anomaly.detect_model(model, store, int(ts))
    if event is None:
        print(f"error: model {model_id} does not fire at {ts}", file=sys.stderr)
        return 1
    g = _graph(cfg, list(models.values()))
    from .evolution import evolve
    from .orchestrator import build_prompt, complete, parse_report, validate_evidence
    context = evolve(event, g, store, DEFAULT_REGISTRY, cfg.evolution_config())
    if args.dump_context:
        _write_out(args.dump_context, json.dumps(context.to_dict(), indent=2, sort_keys=True) + "\n")
    try:
        prompt = build_prompt(context, model)
        raw = complete(cfg.llm, prompt.render())
        report = parse_report(raw)
    except OmxError:
        if not args.dump_context:
            dump = Path(cfg.paths.data_dir) / f"context-{model_id}-{ts}.json"
            try:
                dump.parent.mkdir(parents=True, exist_ok=True)
                _write_out(dump, json.dumps(context.to_dict(), indent=2, sort_keys=True) + "\n")
                print(f"context dumped to {dump}", file=sys.stderr)
            except OmxError:
                pass
        raise
    findings = validate_evidence(report, context)
    for f in findings:
        print(f"authenticity: cause {f.cause_index + 1}: {f.kind}: {f.detail}", file=sys.stderr)
    if args.save_graph:
        graphmod.save(g, cfg.paths.graph_file)
    text = render_report(report) if not args.raw else raw
    if args.out:
        _write_out(args.out, text)
    if args.json:
        print(json.dumps({"event_id": event.event_id, "report": report.to_dict(),
                          "authenticity_findings": [f.__dict__ for f in findings]}, sort_keys=True))
    elif not args.out:
        print(text)
    return 0


def cmd_simulate(args, cfg):
    specs, scenarios = simulator.load_catalog(args.catalog)
    names = {s.name: s for s in scenarios}
    if args.list:
        for s in scenarios:
            print(f"{s.name}\t{s.category.value}\t{s.database_kind.value}\t"
                  + ", ".join(sorted(s.truth_causes)))
        return 0
    if not args.scenario or not args.out:
        raise UsageError("simulate needs --scenario and --out (or --list)")
    if args.scenario == "baseline":
        sc = simulator.null_scenario()
    elif args.scenario in names:
        sc = names[args.scenario]
    else:
        raise UsageError(f"unknown scenario {args.scenario!r}; choose from {sorted(names)}")
    gen = simulator.generate(sc, args.seed, args.duration, args.cadence, specs=specs)
    mpath, tpath = simulator.write(gen, args.out)
    _emit(args, {"metrics": str(mpath), "truth": str(tpath), "detect_at": gen.truth.detect_at},
          f"wrote {mpath} and {tpath} (detect at {gen.truth.detect_at})")
    return 0


def cmd_evaluate(args, cfg):
    from .evaluation import (MockPipelineDiagnoser, empty_diagnoser, oracle_diagnoser,
                             parse_seeds, run_suite)
    try:
        seeds = parse_seeds(args.seeds)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    scenarios = simulator.catalog(args.catalog)
    models = _models(cfg)
    if args.diagnoser == "oracle":
        diagnoser = oracle_diagnoser
    elif args.diagnoser == "empty":
        diagnoser = empty_diagnoser
    else:
        if cfg.llm.mode.value != "mock" and args.llm_mode is None:
            cfg.llm = LlmEndpointConfig.from_dict({**cfg.llm.to_dict(), "mode": "mock"})
        diagnoser = MockPipelineDiagnoser(models, graphmod.init_from_models(models),
                                          evolution_cfg=cfg.evolution_config(), llm_cfg=cfg.llm)
    summary = run_suite(scenarios, diagnoser, seeds, models)
    table = summary.to_csv()
    if args.out:
        _write_out(args.out, table)
    means = summary.means
    _emit(args, {"cases": len(summary.cases), **{f"mean_{k}": v for k, v in means.items()}},
          (table if not args.out else "") + " ".join(f"mean_{k}={v:.6f}" for k, v in means.items()))
    return 0


def cmd_tool(args, cfg):
    from .tools import DEFAULT_REGISTRY, MetricSnapshot
    params = {}
    for item in args.param or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--param expects key=value, got {item!r}")
        try:
            params[key] = json.loads(value)
        except json.JSONDecodeError:
            params[key] = value
    store = _store(cfg)
    findings = DEFAULT_REGISTRY.run(args.tool_id, MetricSnapshot(store, args.now, args.window),
                                    params)
    if args.json:
        print(json.dumps(findings.to_dict(), sort_keys=True))
    else:
        for it in findings.items:
            ev = ", ".join(f"{m}.{s}={v:g}" for m, s, v in it.evidence)
            print(f"[{it.severity.value}] {it.message}" + (f" ({ev})" if ev else ""))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="omx", description="Database anomaly diagnosis engine")
    p.add_argument("--config", help="engine config file (default: $OMX_CONFIG)")
    p.add_argument("--json", action="store_true", help="line-delimited JSON output")
    p.add_argument("--data-dir")
    p.add_argument("--models-dir")
    p.add_argument("--graph-file")
    p.add_argument("--llm-mode", choices=["remote", "mock"])
    p.add_argument("--llm-url")
    p.add_argument("--llm-model")
    p.add_argument("--llm-timeout", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("ingest", help="ingest JSONL/CSV metric files into the data dir")
    s.add_argument("files", nargs="+")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("detect", help="run every anomaly model at a timestamp")
    s.add_argument("--now", type=int, required=True)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("graph", help="build, enrich, inspect or persist the experience graph")
    s.add_argument("action", choices=["build", "enrich", "stats", "query", "save", "load"])
    s.add_argument("path", nargs="?", help="file for 'load'")
    s.add_argument("--out")
    s.add_argument("--threshold", type=float, default=0.9, help="profile similarity for enrich")
    s.add_argument("--kind", action="append")
    s.add_argument("--tag", action="append")
    s.add_argument("--database")
    s.add_argument("--prefix")
    s.set_defaults(func=cmd_graph)

    s = sub.add_parser("diagnose", help="diagnose one anomaly event")
    s.add_argument("--event", required=True, help="MODEL_ID@unix_ts")
    s.add_argument("--dump-context", metavar="PATH")
    s.add_argument("--out", help="write the report here")
    s.add_argument("--raw", action="store_true", help="print the model output unparsed")
    s.add_argument("--save-graph", action="store_true", help="persist reinforced cross-edges")
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("simulate", help="generate a synthetic scenario")
    s.add_argument("--scenario")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--duration", type=int, default=simulator.DEFAULT_DURATION)
    s.add_argument("--cadence", type=int, default=simulator.DEFAULT_CADENCE)
    s.add_argument("--catalog")
    s.add_argument("--list", action="store_true")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("evaluate", help="score diagnoses over the scenario catalog")
    s.add_argument("--catalog")
    s.add_argument("--seeds", default="1..10")
    s.add_argument("--diagnoser", choices=["mock", "oracle", "empty"], default="mock")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("tool", help="run a diagnostic tool")
    tsub = s.add_subparsers(dest="tool_command", parser_class=_Parser)
    r = tsub.add_parser("run", help="run one tool against ingested data")
    r.add_argument("tool_id")
    r.add_argument("--now", type=int, required=True)
    r.add_argument("--window", type=int, default=600)
    r.add_argument("--param", action="append", help="key=value (JSON values accepted)")
    r.set_defaults(func=cmd_tool)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    func = getattr(args, "func", None)
    if func is None:
        parser.print_help(sys.stderr)
        return 2
    try:
        cfg = _config(args)
        return func(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (OmxError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
