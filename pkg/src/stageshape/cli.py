"""Command-line entry points: run, suite, gate, report, replay."""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ROLES, ExperimentConfig
from .env import EnvConfig
from .errors import StageShapeError
from .gate import BranchCurve, decide, score_branch
from .learner import LearnerConfig, read_curve_csv
from .llm.providers import ProviderSpec, build_providers
from .report import report
from .workflow import (
    DESK_HORIZON,
    FIXED_DIRECTIONS,
    METHODS,
    PROFILES,
    Workflow,
    WorkflowBudget,
    replay_run,
    run_dir_for,
)


def _add_budget_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--budget-profile", default="short-2.05M", choices=sorted(PROFILES))
    p.add_argument(
        "--final-horizon",
        type=int,
        default=DESK_HORIZON,
        help="scale the profile to this horizon; 0 keeps absolute budgets",
    )
    p.add_argument("--eval-episodes", type=int, default=10)


def _budget(args) -> WorkflowBudget:
    horizon = args.final_horizon or None
    return WorkflowBudget.from_profile(args.budget_profile, horizon, eval_episodes=args.eval_episodes)


def run_one(
    method: str,
    env_name: str,
    seed: int,
    budget: WorkflowBudget,
    learner: LearnerConfig,
    provider_specs: dict[str, ProviderSpec],
    out_root: str,
    parallel: int = 1,
    fixed_direction: str = "balanced-progress",
    reference: bool = False,
) -> str:
    """Run one method/env/seed into its run directory; returns the directory."""
    run_dir = run_dir_for(out_root, method, env_name, seed)
    uses_llm = method not in ("sparse", "fixed-rs")
    providers = build_providers(provider_specs) if uses_llm else {}
    Workflow(
        method=method,
        env_config=EnvConfig.from_name(env_name),
        seed=seed,
        budget=budget,
        learner_config=learner,
        providers=providers,
        run_dir=run_dir,
        parallel=parallel,
        fixed_direction=fixed_direction,
        reference=reference,
        provider_specs=provider_specs if uses_llm else {},
    ).run()
    return str(run_dir)


def _run_one_packed(kwargs: dict) -> str:
    return run_one(**kwargs)


def cmd_run(args) -> dict:
    spec = ProviderSpec.parse(args.provider)
    specs = {r: spec for r in ROLES}
    path = run_one(
        args.method,
        args.env,
        args.seed,
        _budget(args),
        LearnerConfig(),
        specs,
        args.out,
        args.parallel,
        args.fixed_direction,
        args.reference,
    )
    ledger = json.loads((Path(path) / "ledger.json").read_text())
    return {"run_dir": path, "env_steps": ledger["env_steps_total"], "warnings": ledger["warnings"]}


def cmd_suite(args) -> dict:
    cfg = ExperimentConfig.load(args.config)
    if args.provider:
        spec = ProviderSpec.parse(args.provider)
        cfg = ExperimentConfig(**{**cfg.__dict__, "providers": {r: spec for r in ROLES}})
    jobs = [
        dict(
            method=m,
            env_name=cfg.env,
            seed=s,
            budget=cfg.budget,
            learner=cfg.learner,
            provider_specs=cfg.providers,
            out_root=cfg.output_root,
            fixed_direction=cfg.fixed_direction,
            reference=cfg.reference,
        )
        for m in cfg.methods
        for s in cfg.seeds
    ]
    if args.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            dirs = list(pool.map(_run_one_packed, jobs))
    else:
        dirs = [run_one(**j) for j in jobs]
    return {"runs": dirs}


def cmd_gate(args) -> dict:
    if args.gate_cmd == "score":
        curve = BranchCurve(Path(args.curve).stem, tuple(read_curve_csv(args.curve)))
        return score_branch(curve, args.k).to_dict()
    paths = sorted(Path(args.curves_dir).glob("*.csv"))
    scores = {p.stem: score_branch(BranchCurve(p.stem, tuple(read_curve_csv(p))), args.k) for p in paths}
    if args.control not in scores:
        raise StageShapeError(f"control curve {args.control}.csv not found in {args.curves_dir}")
    control = scores.pop(args.control)
    return decide(control, list(scores.values()), args.tau).to_dict()


def cmd_report(args) -> dict:
    result = report(args.runs, args.out)
    return {"out": args.out, "rows": len(result["metrics"]), "runs_with_decisions": len(result["decisions"])}


def cmd_replay(args) -> dict:
    out = args.out or tempfile.mkdtemp(prefix="replay-")
    identical = replay_run(args.run_dir, out)
    if not identical:
        raise StageShapeError(f"ledger differs from replay in {out}")
    print("ledger identical", file=sys.stderr)
    return {"replay_dir": out, "ledger_identical": True}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stageshape", description="Staged shaping-search workflow for foraging MARL.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one method on one environment and seed")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--env", required=True, help="task name such as 8x8-2p-1f")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--provider", default="heuristic", help="heuristic | scripted:<path> | remote:<url>#<model>#<KEY_ENV_VAR>"
    )
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--out", default="run")
    p.add_argument("--fixed-direction", default="balanced-progress", choices=FIXED_DIRECTIONS)
    p.add_argument("--reference", action="store_true", help="also train the fixed-reference continuation")
    _add_budget_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="run every method/seed of an experiment config")
    p.add_argument("config")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--provider", default=None, help="override the provider for both roles")
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("gate", help="score curves or decide between branches")
    gsub = p.add_subparsers(dest="gate_cmd", required=True)
    g = gsub.add_parser("score")
    g.add_argument("curve", help="CSV with env_steps,mean_sparse_return")
    g.add_argument("--k", type=int, default=5)
    g.set_defaults(func=cmd_gate)
    g = gsub.add_parser("decide")
    g.add_argument("curves_dir", help="directory of <branch_id>.csv curves")
    g.add_argument("--control", default="NC", help="branch id of the no-change control")
    g.add_argument("--tau", type=float, default=0.02)
    g.add_argument("--k", type=int, default=5)
    g.set_defaults(func=cmd_gate)

    p = sub.add_parser("report", help="metrics and plot data from run directories")
    p.add_argument("--runs", default="run")
    p.add_argument("--out", default="report")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("replay", help="re-drive a run from its transcripts and compare ledgers")
    p.add_argument("run_dir")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except (StageShapeError, ValueError, OSError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
