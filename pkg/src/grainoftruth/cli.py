"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 search budget exhausted,
4 invalid run (likelihood interval width above ``width_budget``, or an
agent whose class cannot explain its observations).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from fractions import Fraction
from pathlib import Path

from .bayes import PosteriorUndefined
from .config import ConfigError, ExperimentConfig, apply, load_config, load_registry
from .experiments import SpecError, classify_pd, run_configured
from .machine import MachineError, MachineRegistry, query_at
from .multiagent import BeliefError
from .oracle import PartialOracle, completed_bounds, truncated
from .search import search

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_INVALID = 0, 2, 3, 4


def _header(cfg: ExperimentConfig, registry: MachineRegistry) -> str:
    return f"# config {cfg.hash} registry {registry.fingerprint}\n"


def _registry(cfg: ExperimentConfig) -> MachineRegistry:
    if cfg.registry is None:
        return MachineRegistry()
    return load_registry(cfg.resolve(cfg.registry))


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _csv(header: str, rows: list, columns: list) -> str:
    buf = io.StringIO()
    buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def cmd_build_oracle(cfg: ExperimentConfig) -> int:
    registry = _registry(cfg)
    trace = search(registry, cfg.max_level, cfg.budget, cfg.lookahead)
    out = _out(cfg)
    header = {"config": cfg.hash, "registry": registry.fingerprint, "max_level": cfg.max_level, "status": trace.status}
    (out / "trace.jsonl").write_text(trace.dump_jsonl(header))
    if trace.chain:
        (out / "oracle.txt").write_text(_header(cfg, registry) + trace.chain[-1].dumps())
    print(f"status {trace.status}; reached level {trace.reached} of {cfg.max_level}; "
          f"backtracks {sum(trace.backtracks.values())}")
    if trace.status != "complete":
        if not trace.chain:
            print("budget exhausted before level 1", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


def _oracle_at(cfg: ExperimentConfig, registry: MachineRegistry, level: int) -> PartialOracle:
    path = Path(cfg.out_dir) / "trace.jsonl"
    if not path.is_file():
        raise ConfigError(f"no oracle trace at {path}; run build-oracle first")
    chosen = None
    for line in path.read_text().splitlines():
        rec = json.loads(line)
        if "header" in rec:
            if rec["header"]["registry"] != registry.fingerprint:
                raise ConfigError("oracle trace was built for a different registry")
            continue
        if rec["level"] == level:
            chosen = rec  # the last emission at a level belongs to the final chain
    if chosen is None:
        raise ConfigError(f"trace has no oracle at level {level}")
    return PartialOracle(level, tuple(chosen["values"]), registry.fingerprint)


def cmd_eval(cfg: ExperimentConfig) -> int:
    registry = _registry(cfg)
    level = cfg.level or cfg.max_level
    po = _oracle_at(cfg, registry, level)
    dist = truncated(po, registry, cfg.machine, cfg.input)
    iv = completed_bounds(po, registry, cfg.machine, cfg.input)
    report = {
        "config": cfg.hash, "registry": registry.fingerprint, "machine": cfg.machine,
        "input": cfg.input, "level": level, "p1": str(dist.p1), "p0": str(dist.p0),
        "interval": [str(iv.lo), str(iv.hi)],
    }
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def _width(run) -> Fraction:
    widths = [Fraction(0)]
    for pol in run.policies:
        env = getattr(pol, "env", None) or getattr(pol, "mixture", None)
        if env is not None and hasattr(env, "state"):
            widths.append(env.state.width)
    return max(widths)


def _write_run(cfg, run, out: Path, seed: int, header: str) -> None:
    n = run.game.n
    rows = []
    for t, (ja, jp) in enumerate(run.history, start=1):
        rows.append([t] + list(ja) + [str(run.game.percepts[i].reward(jp[i])) for i in range(n)])
    cols = ["t"] + [f"action{i}" for i in range(n)] + [f"reward{i}" for i in range(n)]
    (out / f"trajectory-{seed}.csv").write_text(_csv(header, rows, cols))
    grows = [[g.t, g.agent, str(g.lo), str(g.hi), int(g.hi < cfg.eps)] for g in run.gaps]
    (out / f"gaps-{seed}.csv").write_text(_csv(header, grows, ["t", "agent", "gap_lo", "gap_hi", "eps_best"]))
    prow = []
    for i, pol in enumerate(run.policies):
        env = getattr(pol, "env", None) or getattr(pol, "mixture", None)
        if env is None or not hasattr(env, "posterior"):
            continue
        view = tuple((ja[i], jp[i]) for ja, jp in run.history)
        for t in range(len(view) + 1):
            if cfg.check_every and t % cfg.check_every and t != len(view):
                continue
            prow.append([t, i] + [str(w) for w in env.posterior(view[:t])])
    if prow:
        (out / f"posterior-{seed}.csv").write_text(_csv(header, prow, ["t", "agent", "weights..."]))


def _summary(cfg, run, seed) -> dict:
    n = run.game.n
    last = {}
    for g in run.gaps:
        last[g.agent] = g
    summary = {"seed": seed, "avg_reward": [str(run.average_reward(i)) for i in range(n)]}
    if last:
        summary["final_gap_hi"] = [str(last[i].hi) for i in range(n)]
        summary["eps_best"] = [bool(last[i].hi < cfg.eps) for i in range(n)]
    if run.game.name == "prisoners-dilemma":
        summary["pattern"] = classify_pd(run.history)
    return summary


def cmd_run_game(cfg: ExperimentConfig) -> int:
    out = _out(cfg)
    header = _header(cfg, _registry(cfg))
    run = run_configured(cfg, cfg.seed)
    _write_run(cfg, run, out, cfg.seed, header)
    print(json.dumps(_summary(cfg, run, cfg.seed), sort_keys=True))
    if cfg.width_budget is not None and _width(run) > cfg.width_budget:
        print("likelihood interval width budget exceeded", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def cmd_experiment(cfg: ExperimentConfig) -> int:
    out = _out(cfg)
    header = _header(cfg, _registry(cfg))
    rows = []
    invalid = False
    summaries = []
    for seed in sorted(cfg.seeds):
        run = run_configured(cfg, seed)
        s = _summary(cfg, run, seed)
        summaries.append(s)
        for i in range(run.game.n):
            rows.append([seed, i, s["avg_reward"][i], s.get("final_gap_hi", [""] * run.game.n)[i],
                         int(s.get("eps_best", [False] * run.game.n)[i]), s.get("pattern", "")])
        if cfg.width_budget is not None and _width(run) > cfg.width_budget:
            invalid = True
    (out / "per-seed.csv").write_text(_csv(header, rows, ["seed", "agent", "avg_reward", "final_gap_hi", "eps_best", "pattern"]))
    agents = [flag for s in summaries for flag in s.get("eps_best", [])]
    nash = [all(s["eps_best"]) for s in summaries if "eps_best" in s]
    aggregate = {
        "config": cfg.hash,
        "seeds": len(summaries),
        "eps_best_fraction": (sum(agents) / len(agents)) if agents else None,
        "eps_nash_fraction": (sum(nash) / len(nash)) if nash else None,
        "patterns": {p: sum(1 for s in summaries if s.get("pattern") == p) for p in ("cooperate", "defect", "other")}
        if cfg.game == "prisoners-dilemma" else None,
    }
    (out / "aggregate.json").write_text(json.dumps(aggregate, sort_keys=True) + "\n")
    print(json.dumps(aggregate, sort_keys=True))
    return EXIT_INVALID if invalid else EXIT_OK


def cmd_enumerate_queries(cfg: ExperimentConfig, count: int, machines: int = 0) -> int:
    n = machines or len(_registry(cfg))
    if n < 1:
        raise ConfigError("need at least one machine to enumerate queries")
    for i in range(1, count + 1):
        print(f"{i} {query_at(n, i).golden()}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grainoftruth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("build-oracle", "eval", "run-game", "experiment", "enumerate-queries"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--level", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--seeds", help="e.g. '0..29' or '1 2 3'")
        p.add_argument("--out-dir")
        p.add_argument("--budget", type=int)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
        if name == "eval":
            p.add_argument("--machine", type=int)
            p.add_argument("--input")
        if name == "enumerate-queries":
            p.add_argument("--count", type=int, default=10)
            p.add_argument("--machines", type=int, default=0)
    return parser


def _configure(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        apply(cfg, *item.split("=", 1))
    for flag, key in (("level", "level"), ("seed", "seed"), ("seeds", "seeds"), ("out_dir", "out_dir"),
                      ("budget", "budget"), ("machine", "machine"), ("input", "input")):
        v = getattr(args, flag, None)
        if v is not None:
            apply(cfg, key, str(v))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _configure(args)
        if args.command == "build-oracle":
            return cmd_build_oracle(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "run-game":
            return cmd_run_game(cfg)
        if args.command == "experiment":
            return cmd_experiment(cfg)
        return cmd_enumerate_queries(cfg, args.count, args.machines)
    except (ConfigError, SpecError, MachineError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (PosteriorUndefined, BeliefError) as err:
        # an agent's class cannot explain what it saw: the run is invalid, not a crash
        print(f"invalid run: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
