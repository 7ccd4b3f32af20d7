"""Command line: ``agentdag {run,route,simulate,evolve,audit,inspect}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import yaml

from ..audit import system_audit
from ..config import RunConfig
from ..errors import AuthMissing, ConfigError, GraphError, NoCandidate, ScenarioError
from ..graph import load_graph, validate_graph
from ..orchestrator import Orchestrator
from ..records import Task, TaskRecord
from ..router import route
from .executors import MockExecutor, ScriptedExecutor
from .http import DEFAULT_KEY_ENV, EndpointConfig, HttpExecutor
from .metrics import Metrics
from .scenario import Scenario
from .simulate import evolve, load_records, simulate, write_audit, write_run

logger = logging.getLogger("agentdag")


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    changes = {}
    if getattr(args, "max_parallel", None) is not None:
        changes["max_parallel"] = args.max_parallel
    if getattr(args, "strict_coverage", False):
        changes["strict_coverage"] = True
    if getattr(args, "dump_context", False):
        changes["dump_context"] = True
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def _executor(spec: str, args, cfg: RunConfig):
    if spec == "mock":
        return MockExecutor()
    if spec.startswith("scripted:"):
        return ScriptedExecutor(Scenario.load(spec.split(":", 1)[1]))
    if spec == "http":
        http = dict(cfg.extra.get("http") or {})
        if args.endpoint:
            http["url"] = args.endpoint
        if args.model:
            http["model"] = args.model
        if args.key_env:
            http["key_env"] = args.key_env
        if "url" not in http or "model" not in http:
            raise ConfigError("http executor needs --endpoint and --model (or extra.http in the config file)")
        executor = HttpExecutor(EndpointConfig.from_dict(http))
        executor.check_credentials()
        return executor
    raise ConfigError(f"unknown executor {spec!r}; use mock, scripted:<file> or http")


def _run_dir(args, verb: str) -> Path:
    if args.run_dir:
        return Path(args.run_dir)
    return Path("runs") / f"{verb}-{time.strftime('%Y%m%d-%H%M%S')}"


def _print(data) -> None:
    sys.stdout.write(yaml.safe_dump(data, sort_keys=False, allow_unicode=True))


def cmd_run(args) -> int:
    cfg = _config(args)
    graph = load_graph(args.graph)
    exec_ = _executor(args.executor, args, cfg)
    run_dir = _run_dir(args, "run")
    from ..workspace import Workspace

    ws = Workspace(run_dir, descriptor_limit=cfg.descriptor_limit)
    orch = Orchestrator(graph, exec_, cfg, ws)
    result = orch.run(Task("T0", args.task))
    metrics = Metrics.from_records(
        [result.root],
        token_budget=cfg.token_budget,
        tokens=int(getattr(exec_, "tokens_used", 0)),
        wall_time=result.wall_time,
    )
    report = system_audit(result.root, cfg=cfg, ledger=result.ledger)
    write_run(run_dir, [result.root], metrics, report, history=result.history, cfg=cfg, graph=graph)
    _print({"run_dir": str(run_dir), **result.output.to_dict()})
    return 0 if result.succeeded else 1


def cmd_route(args) -> int:
    graph = load_graph(args.graph)
    try:
        rr = route(Task("T0", args.task), graph, floor=args.floor)
    except NoCandidate as exc:
        sys.stderr.write(f"no candidate: {exc}\n")
        return 1
    _print(rr.to_dict())
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    graph = load_graph(args.graph)
    scenario = Scenario.load(args.scenario)
    run_dir = _run_dir(args, "simulate")
    res = simulate(cfg, graph, scenario, args.rounds, run_dir)
    m = res.metrics
    _print(
        {
            "run_dir": str(run_dir),
            "runs": m.runs,
            "succeeded": m.runs_succeeded,
            "rejects": m.rejects,
            "retries": m.retries,
            "max_context": m.max_context,
            "token_budget": m.token_budget,
            "history_size": m.history_sizes[-1] if m.history_sizes else 0,
            "wall_time": round(m.wall_time, 3),
        }
    )
    return 0 if res.succeeded else 1


def cmd_evolve(args) -> int:
    cfg = _config(args)
    graph = load_graph(args.graph)
    scenario = Scenario.load(args.scenario)
    run_dir = _run_dir(args, "evolve")
    res = evolve(cfg, graph, scenario, args.rounds, run_dir)
    _print(
        {
            "run_dir": str(run_dir),
            "merged_deltas": res.main.delta_ids(),
            "rejected_deltas": [d.id for d in res.main.rejected],
            "dataset_examples": len(res.dataset),
            "active_branches": [b.id for b in res.branches],
            "pruned_branches": res.pruned,
            "branch_quality": {a: round(q, 6) for a, q in sorted(res.ledger.scores.items())},
            "graph_nodes": len(res.graph),
        }
    )
    return 0


def cmd_audit(args) -> int:
    run_dir = Path(args.run)
    records = load_records(run_dir)
    cfg_path = run_dir / "config.yaml"
    cfg = RunConfig.load(cfg_path) if cfg_path.exists() else RunConfig()
    metrics = Metrics.from_records(records, token_budget=cfg.token_budget)
    report = system_audit(
        records,
        metrics.context_sizes,
        cfg=cfg,
        history_size=metrics.history_sizes[-1] if metrics.history_sizes else 0,
    )
    path = write_audit(run_dir, report)
    sys.stdout.write(path.read_text(encoding="utf-8"))
    return 0


def _tree_lines(rec: TaskRecord, indent: int = 0) -> list[str]:
    verdicts = ",".join(a.verdict for a in rec.attempts) or "-"
    line = f"{'  ' * indent}{rec.task.id} [{rec.agent_id}/{rec.role}] {rec.status.value} attempts={verdicts}"
    out = [line]
    for w in rec.warnings:
        out.append(f"{'  ' * indent}  ! {w}")
    for child in rec.children:
        out.extend(_tree_lines(child, indent + 1))
    return out


def cmd_inspect(args) -> int:
    if args.graph:
        graph = load_graph(args.graph, strict=False)
        report = validate_graph(graph)
        _print(
            {
                "nodes": len(graph),
                "roots": sorted(graph.roots),
                "edges": len(graph.edges()),
                "valid": report.ok,
                "findings": [f"{f.kind}: {f.detail}" for f in report.findings],
            }
        )
        return 0 if report.ok else 1
    run_dir = Path(args.run)
    for root in load_records(run_dir):
        sys.stdout.write("\n".join(_tree_lines(root)) + "\n")
        if root.error_information:
            sys.stdout.write("error_information:\n  " + root.error_information.replace("\n", "\n  ") + "\n")
    metrics = run_dir / "metrics.json"
    if metrics.exists():
        m = json.loads(metrics.read_text(encoding="utf-8"))
        sys.stdout.write(
            f"attempts={m['attempts']} rejects={m['rejects']} retries={m['retries']} "
            f"max_context={m['max_context']}/{m['token_budget']}\n"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agentdag", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, *, scenario: bool = False) -> None:
        p.add_argument("--graph", required=True, help="agent graph YAML file")
        p.add_argument("--config", help="RunConfig YAML file")
        p.add_argument("--run-dir", help="output directory (default runs/<verb>-<timestamp>)")
        p.add_argument("--max-parallel", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--dump-context", action="store_true", help="write per-attempt context snapshots")
        if scenario:
            p.add_argument("--scenario", required=True, help="scenario YAML file")
            p.add_argument("--rounds", type=int, default=1)

    p = sub.add_parser("run", help="run one task end to end")
    common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--executor", default="mock", help="mock | scripted:<scenario-file> | http")
    p.add_argument("--strict-coverage", action="store_true")
    p.add_argument("--endpoint", help="chat-completion URL (http executor)")
    p.add_argument("--model", help="model name (http executor)")
    p.add_argument("--key-env", help=f"credential environment variable (default {DEFAULT_KEY_ENV})")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("route", help="show where a task would be routed")
    p.add_argument("--graph", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--floor", type=float, default=0.0)
    p.set_defaults(fn=cmd_route)

    p = sub.add_parser("simulate", help="run scenario tasks for several rounds")
    common(p, scenario=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("evolve", help="branch/merge/prune/restructure loop")
    common(p, scenario=True)
    p.set_defaults(fn=cmd_evolve)

    p = sub.add_parser("audit", help="regenerate the system audit of a run directory")
    p.add_argument("--run", required=True)
    p.set_defaults(fn=cmd_audit)

    p = sub.add_parser("inspect", help="print a run's record tree or validate a graph")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--run")
    g.add_argument("--graph")
    p.set_defaults(fn=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (AuthMissing, ConfigError, ScenarioError, GraphError, FileNotFoundError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
