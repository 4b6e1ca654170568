"""Staged training workflow: diagnostic run, initial search, checkpoint validation.

The controller trains every segment through :class:`TrainJob` objects, so
branch trainings are side-effect free and may run in worker processes. All
run artefacts are derived from seeds and provider responses only, which
makes ``ledger.json`` byte-reproducible.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .env import EnvConfig
from .errors import ConfigurationError, ContractViolation, StageShapeError
from .evidence import derive_keys, summarize_episodes
from .gate import (
    BELOW_REFERENCE,
    FIRST_REPLACEMENT,
    BranchCurve,
    BranchScore,
    decide,
    invalid_score,
    rank_key,
    score_branch,
)
from .learner import Checkpoint, LearnerConfig, TrainReport, save_checkpoint, train_segment, write_curve_csv
from .llm import (
    CheckpointContext,
    DiagnosisFailure,
    HeuristicProvider,
    ProviderError,
    TranscriptStore,
    critic_diagnose,
    generator_propose,
    merged_propose,
)
from .llm.heuristic import TEMPLATES
from .shaping import ShapingConfig, make_config

log = logging.getLogger(__name__)

METHODS = ("sparse", "fixed-rs", "single-llm-rg", "also", "single-llm-adapt")
FIXED_DIRECTIONS = ("balanced-progress", "early-discovery", "collection-readiness")
NC_ID = "NC"
RECENT_POINTS = 10

# absolute budget profiles; from_profile can rescale them to a shorter horizon
PROFILES = {
    "short-2.05M": dict(
        final_horizon=2_050_000,
        diagnostic_budget=2_050_000,
        pilot_budget=850_000,
        initial_endpoint_step=800_000,
        checkpoint_positions=(1_000_000, 1_500_000),
        branch_budget=300_000,
    ),
    "medium-10M": dict(
        final_horizon=10_000_000,
        diagnostic_budget=10_000_000,
        pilot_budget=850_000,
        initial_endpoint_step=800_000,
        checkpoint_positions=(1_500_000, 2_500_000),
        branch_budget=500_000,
    ),
}
DESK_HORIZON = 200_000
EVAL_POINTS = 50


@dataclass(frozen=True)
class WorkflowBudget:
    final_horizon: int = DESK_HORIZON
    diagnostic_budget: int = DESK_HORIZON
    initial_rounds: int = 2
    candidates_per_round: int = 3
    pilot_budget: int = 82_927
    initial_endpoint_step: int = 78_049
    checkpoint_positions: tuple[int, ...] = (97_561, 146_341)
    branch_budget: int = 29_268
    validation_rounds_per_checkpoint: int = 2
    updates_per_round: int = 3
    eval_every: int = DESK_HORIZON // EVAL_POINTS
    eval_episodes: int = 10

    def __post_init__(self):
        object.__setattr__(self, "checkpoint_positions", tuple(int(c) for c in self.checkpoint_positions))
        ev = self.eval_every
        if ev < 1 or self.eval_episodes < 1:
            raise ConfigurationError("eval_every and eval_episodes must be >= 1")
        for name in ("final_horizon", "diagnostic_budget", "pilot_budget", "branch_budget"):
            if getattr(self, name) < ev:
                raise ConfigurationError(f"{name} must be >= eval_every ({ev})")
        if not 0 < self.initial_endpoint_step <= self.pilot_budget:
            raise ConfigurationError("need 0 < initial_endpoint_step <= pilot_budget")
        if self.initial_endpoint_step > self.diagnostic_budget:
            raise ConfigurationError("initial_endpoint_step must not exceed diagnostic_budget")
        if (
            min(
                self.initial_rounds,
                self.candidates_per_round,
                self.validation_rounds_per_checkpoint,
                self.updates_per_round,
            )
            < 1
        ):
            raise ConfigurationError("round and candidate counts must be >= 1")
        if self.candidates_per_round > 3 or self.updates_per_round > 3:
            raise ConfigurationError("at most three candidates per round (one per candidate type)")
        cps = self.checkpoint_positions
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise ConfigurationError("checkpoint_positions must be strictly increasing")
        prev = self.endpoint_step()
        for c in cps:
            if c - prev < ev:
                raise ConfigurationError(
                    f"checkpoint {c} is closer than eval_every to the previous mainline point {prev}"
                )
            prev = c + self.branch_budget
        if self.final_horizon - prev < ev:
            raise ConfigurationError("final_horizon leaves no room after the last branch")

    @classmethod
    def from_profile(cls, name: str, final_horizon: int | None = DESK_HORIZON, **overrides) -> WorkflowBudget:
        """Profile ``name`` as absolute budgets, or scaled to ``final_horizon``."""
        if name not in PROFILES:
            raise ConfigurationError(f"unknown budget profile {name!r}; choose from {sorted(PROFILES)}")
        base = dict(PROFILES[name])
        if final_horizon is not None:
            ratio = final_horizon / base["final_horizon"]
            for key in ("diagnostic_budget", "pilot_budget", "initial_endpoint_step", "branch_budget"):
                base[key] = round(base[key] * ratio)
            base["checkpoint_positions"] = tuple(round(c * ratio) for c in base["checkpoint_positions"])
            base["final_horizon"] = final_horizon
        base.setdefault("eval_every", max(1, base["final_horizon"] // EVAL_POINTS))
        base.update(overrides)
        return cls(**base)

    def endpoint_step(self) -> int:
        """Pilot evaluation point nearest ``initial_endpoint_step`` (earlier wins ties)."""
        points = self.eval_points(self.pilot_budget)
        return min(points, key=lambda p: (abs(p - self.initial_endpoint_step), p))

    def eval_points(self, budget: int) -> list[int]:
        pts = list(range(self.eval_every, budget + 1, self.eval_every))
        if not pts or pts[-1] != budget:
            pts.append(budget)
        return pts

    def expected_env_steps(self, method: str, reference: bool = False) -> int:
        """Closed-form env-step total for one run of ``method``."""
        H, P = self.final_horizon, self.pilot_budget
        search = self.diagnostic_budget + self.initial_rounds * self.candidates_per_round * P
        if method in ("sparse", "fixed-rs"):
            return H
        if method == "single-llm-rg":
            return search + H
        if method in ("also", "single-llm-adapt"):
            e0 = self.endpoint_step()
            n_cp = len(self.checkpoint_positions)
            per_cp = 1 + self.validation_rounds_per_checkpoint * self.updates_per_round
            total = search + (H - e0 - n_cp * self.branch_budget) + n_cp * per_cp * self.branch_budget
            return total + ((H - e0) if reference else 0)
        raise ConfigurationError(f"unknown method {method!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checkpoint_positions"] = list(self.checkpoint_positions)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> WorkflowBudget:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown budget fields: {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# training jobs


@dataclass(frozen=True)
class TrainJob:
    label: str
    start: Checkpoint | None
    shaping: ShapingConfig | None
    budget: int
    snapshot_steps: tuple[int, ...] = ()
    record_traces: bool = False


Trainer = Callable[[TrainJob, EnvConfig, LearnerConfig, int, int], TrainReport]


def run_job(
    job: TrainJob, env_config: EnvConfig, learner_config: LearnerConfig, eval_every: int, eval_episodes: int
) -> TrainReport:
    return train_segment(
        job.start,
        env_config,
        learner_config,
        job.shaping,
        job.budget,
        eval_every,
        eval_episodes,
        job.snapshot_steps,
        job.record_traces,
    )


def _run_job_packed(args) -> TrainReport:
    return run_job(*args)


def fixed_config(direction: str, beta: float | None = None) -> ShapingConfig:
    """Pre-registered static configuration for one of the non-LLM directions."""
    if direction not in FIXED_DIRECTIONS:
        raise ConfigurationError(f"fixed-rs direction must be one of {FIXED_DIRECTIONS}")
    weights, default_beta = TEMPLATES[direction]
    return make_config(default_beta if beta is None else beta, direction, weights, candidate_type="targeted")


def _clean(obj):
    """JSON-safe copy with non-finite floats replaced by ``None``."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dump_json(obj, path: Path | None = None) -> str:
    text = json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n"
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    return text


def _curve_list(curve) -> list[list]:
    return [[int(s), float(v)] for s, v in curve]


@dataclass
class Candidate:
    branch_id: str
    config: ShapingConfig | None
    report: TrainReport | None = None
    score: BranchScore | None = None
    error: str | None = None


@dataclass
class Workflow:
    """One run of one method on one environment and seed."""

    method: str
    env_config: EnvConfig
    seed: int
    budget: WorkflowBudget = field(default_factory=WorkflowBudget)
    learner_config: LearnerConfig = field(default_factory=LearnerConfig)
    providers: dict | None = None
    run_dir: Path | None = None
    parallel: int = 1
    fixed_direction: str = "balanced-progress"
    reference: bool = False
    tau_tie: float = 0.02
    score_k: int = 5
    trainer: Trainer | None = None
    # recorded in config.json only; the ledger never names providers
    provider_specs: dict | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.method == "fixed-rs":
            fixed_config(self.fixed_direction)
        lc = self.learner_config
        anneal = lc.epsilon_anneal_steps
        if anneal is None:
            anneal = int(0.3 * self.budget.final_horizon)
        self.learner_config = replace(lc, seed=self.seed, epsilon_anneal_steps=anneal)
        if self.run_dir is not None:
            self.run_dir = Path(self.run_dir)
        self.providers = dict(self.providers or {})
        self.store = TranscriptStore(self.run_dir / "llm_transcripts" if self.run_dir else None)
        self.consumed = 0
        self.warnings: list[str] = []
        self.history: list[dict] = []
        self.records: list[dict] = []
        self.decisions: list[dict] = []
        self.mainline: list[dict] = []
        self.search_log: dict = {}
        self.diagnostic: dict | None = None
        self.evidence_files: dict[str, dict] = {}
        self.reference_curve: list[tuple[int, float]] | None = None

    # -- job plumbing -----------------------------------------------------

    def _train(self, jobs: Sequence[TrainJob], tolerate: bool = False) -> list[TrainReport | Exception]:
        """Run jobs (possibly in parallel) and charge their env steps to the run."""
        b, ec, lc = self.budget, self.env_config, self.learner_config
        if self.trainer is not None or self.parallel <= 1 or len(jobs) <= 1:
            trainer = self.trainer or run_job
            results: list = []
            for job in jobs:
                try:
                    results.append(trainer(job, ec, lc, b.eval_every, b.eval_episodes))
                except StageShapeError as exc:
                    if not tolerate:
                        raise
                    results.append(exc)
        else:
            with ProcessPoolExecutor(max_workers=min(self.parallel, len(jobs))) as pool:
                futures = [pool.submit(_run_job_packed, (job, ec, lc, b.eval_every, b.eval_episodes)) for job in jobs]
                results = []
                for fut in futures:
                    try:
                        results.append(fut.result())
                    except StageShapeError as exc:
                        if not tolerate:
                            raise
                        results.append(exc)
        for r in results:
            if isinstance(r, TrainReport):
                self.consumed += r.env_steps
        return results

    def _train_one(self, job: TrainJob) -> TrainReport:
        return self._train([job])[0]

    def _score(self, cand: Candidate) -> BranchScore:
        if cand.report is None:
            return invalid_score(cand.branch_id, "training_error")
        curve = BranchCurve(cand.branch_id, tuple(cand.report.curve))
        return score_branch(curve, self.score_k)

    def _train_candidates(
        self, cands: list[Candidate], start: Checkpoint | None, budget: int, snapshots: tuple[int, ...] = ()
    ) -> None:
        jobs = [TrainJob(c.branch_id, start, c.config, budget, snapshots, record_traces=True) for c in cands]
        for cand, result in zip(cands, self._train(jobs, tolerate=True)):
            if isinstance(result, Exception):
                cand.error = type(result).__name__
                self.warnings.append(f"branch {cand.branch_id} failed to train: {cand.error}")
            else:
                cand.report = result
            cand.score = self._score(cand)

    # -- providers ---------------------------------------------------------

    def _merged(self) -> bool:
        return self.method in ("single-llm-rg", "single-llm-adapt")

    def _provider(self, role: str):
        return self.providers.get(role) or self.providers.get("critic") or HeuristicProvider()

    def _propose(self, context: CheckpointContext, n: int) -> tuple[dict, list[ShapingConfig]]:
        try:
            if self._merged():
                card, configs = merged_propose(context, n, self._provider("critic"), self.store)
            else:
                card = critic_diagnose(context, self._provider("critic"), self.store)
                configs = generator_propose(card, context, n, self._provider("generator"), self.store)
        except (ProviderError, DiagnosisFailure) as exc:
            self.warnings.append(
                f"{context.phase} round {context.round}: {type(exc).__name__}, heuristic fallback used"
            )
            fallback = HeuristicProvider()
            self.store.fallback_mode = True
            try:
                card = critic_diagnose(context, fallback, self.store)
                configs = generator_propose(card, context, n, fallback, self.store)
            finally:
                self.store.fallback_mode = False
        return card.to_dict(), configs

    def _context(
        self, phase: str, round_: int, curve, evidence: dict | None, current: ShapingConfig | None, upto: int
    ) -> CheckpointContext:
        ref = None
        if self.reference_curve is not None:
            ref = [p for p in self.reference_curve if p[0] <= upto][-RECENT_POINTS:]
        return CheckpointContext(
            env_name=self.env_config.name,
            phase=phase,
            round=round_,
            steps_consumed=self.consumed,
            recent_curve=list(curve)[-RECENT_POINTS:],
            evidence_summary=evidence["summary"] if evidence else None,
            evidence_keys=evidence["keys"] if evidence else [],
            current_config=current.to_dict() if current is not None else None,
            branch_history=[dict(h) for h in self.history],
            reference_window=ref,
        )

    def _evidence(self, label: str, report: TrainReport) -> dict | None:
        if not report.eval_traces:
            return None
        summary = summarize_episodes(report.eval_traces, self.env_config)
        doc = {"summary": summary.to_dict(), "keys": [k.to_dict() for k in derive_keys(summary)]}
        self.evidence_files[label] = doc
        return doc

    # -- phases --------------------------------------------------------------

    def run_sparse_diagnostic(self) -> tuple[TrainReport, dict]:
        b = self.budget
        snaps = (b.endpoint_step(),) if self.method in ("also", "single-llm-adapt") else ()
        report = self._train_one(TrainJob("diagnostic", None, None, b.diagnostic_budget, snaps, record_traces=True))
        evidence = self._evidence("diagnostic", report)
        self.diagnostic = {"curve": _curve_list(report.curve), "evidence": evidence, "env_steps": report.env_steps}
        return report, evidence

    def initial_search(self, diag: TrainReport, evidence: dict) -> tuple[ShapingConfig | None, Checkpoint, list[dict]]:
        b = self.budget
        e0 = b.endpoint_step()
        rounds = []
        pilots: list[Candidate] = []
        for r in range(1, b.initial_rounds + 1):
            ctx = self._context("initial", r, diag.curve, evidence, None, diag.curve[-1][0])
            card, configs = self._propose(ctx, b.candidates_per_round)
            cands = [Candidate(f"I{r}-c{i + 1}", cfg) for i, cfg in enumerate(configs)]
            self._train_candidates(cands, None, b.pilot_budget, (e0,))
            for cand in cands:
                ev = self._evidence(f"initial-{cand.branch_id}", cand.report) if cand.report else None
                self.history.append(self._history_entry("initial", r, cand, None, None, ev))
            pilots.extend(cands)
            rounds.append({"round": r, "guidance_card": card, "pilots": [self._pilot_record(c) for c in cands]})

        valid = [c for c in pilots if not c.score.severe_invalid]
        if valid:
            winner = min(valid, key=lambda c: rank_key(c.score))
            theta0, c0 = winner.config, winner.report.snapshots[e0]
            winner_id, prefix = winner.branch_id, [p for p in winner.report.curve if p[0] <= e0]
        else:
            self.warnings.append("all initial-search pilots severe-invalid: sparse continuation")
            theta0, c0 = None, diag.snapshots[e0]
            winner_id, prefix = None, [p for p in diag.curve if p[0] <= e0]
        self.search_log = {
            "rounds": rounds,
            "winner": winner_id,
            "theta0": theta0.to_dict() if theta0 else None,
            "c0_step": e0,
            "c0_fingerprint": c0.fingerprint,
            "fallback": winner_id is None,
        }
        return theta0, c0, prefix

    def _pilot_record(self, cand: Candidate) -> dict:
        return {
            "branch_id": cand.branch_id,
            "config": cand.config.to_dict() if cand.config else None,
            "curve": _curve_list(cand.report.curve) if cand.report else [],
            "score": cand.score.to_dict(),
            "error": cand.error,
        }

    def _history_entry(self, phase, round_, cand: Candidate, margin, decision, evidence) -> dict:
        s = cand.score
        return {
            "phase": phase,
            "round": round_,
            "branch_id": cand.branch_id,
            "config": cand.config.to_dict() if cand.config else None,
            "score": None if s.severe_invalid else s.score,
            "last_k_mean": None if s.severe_invalid else s.last_k_mean,
            "final": None if s.severe_invalid else s.final,
            "margin": margin,
            "decision": decision,
            "evidence_keys": [k["key"] for k in evidence["keys"]] if evidence else [],
        }

    def checkpoint_validation(
        self, label: str, ckpt: Checkpoint, theta: ShapingConfig | None, recent_curve, evidence: dict | None
    ) -> tuple[Candidate, ShapingConfig | None]:
        b = self.budget
        start_fp = ckpt.fingerprint
        nc = Candidate(NC_ID, theta)
        updates: list[Candidate] = []
        for r in range(1, b.validation_rounds_per_checkpoint + 1):
            ctx = self._context(label, r, recent_curve, evidence, theta, ckpt.env_steps)
            card, configs = self._propose(ctx, b.updates_per_round)
            cands = [Candidate(f"R{r}-u{i + 1}", cfg) for i, cfg in enumerate(configs)]
            batch = ([nc] if r == 1 else []) + cands
            self._train_candidates(batch, ckpt, b.branch_budget)
            if nc.report is None:
                raise ContractViolation(f"no-change control at {label} failed to train")
            if r == 1:
                self.history.append(self._history_entry(label, "NC", nc, 0.0, "control", None))
            for cand in cands:
                margin = None if cand.score.severe_invalid else cand.score.score - nc.score.score
                self.history.append(self._history_entry(label, r, cand, margin, "pending", None))
            updates.extend(cands)
            self.search_log.setdefault("cards", {})[f"{label}/{r}"] = card

        decision = decide(nc.score, [u.score for u in updates], self.tau_tie)
        by_id = {c.branch_id: c for c in [nc, *updates]}
        winner = by_id[decision.winner]
        for h in self.history:
            if h["phase"] == label and h["decision"] == "pending":
                h["decision"] = "promoted" if h["branch_id"] == winner.branch_id else "rejected"
        annotations = []
        if decision.promoted and not any(d["promoted"] for d in self.decisions):
            annotations.append(FIRST_REPLACEMENT)
        if self.reference_curve is not None:
            end = ckpt.env_steps + b.branch_budget
            ref = [v for s, v in self.reference_curve if s <= end]
            if ref and winner.score.final < ref[-1]:
                annotations.append(BELOW_REFERENCE)
        self.decisions.append({"checkpoint": label, "annotations": annotations, **decision.to_dict()})
        for round_, cands in [("NC", [nc])] + [
            (r, [u for u in updates if u.branch_id.startswith(f"R{r}-")])
            for r in range(1, b.validation_rounds_per_checkpoint + 1)
        ]:
            for cand in cands:
                is_win = cand.branch_id == winner.branch_id
                self.records.append(
                    {
                        "checkpoint": label,
                        "round": round_,
                        "branch_id": cand.branch_id,
                        "config": cand.config.to_dict() if cand.config else None,
                        "curve": _curve_list(cand.report.curve) if cand.report else [],
                        "score": cand.score.to_dict(),
                        "margin": decision.margins[cand.branch_id],
                        "decision": ("retained" if cand is nc else "promoted") if is_win else "rejected",
                        "promoted": is_win and cand is not nc,
                        "start_fingerprint": start_fp,
                        "end_fingerprint": cand.report.checkpoint.fingerprint if cand.report else None,
                        "error": cand.error,
                    }
                )
        return winner, winner.config

    # -- methods -------------------------------------------------------------

    def _segment(
        self,
        label: str,
        start: Checkpoint | None,
        config: ShapingConfig | None,
        budget: int,
        source: str,
        record: bool = False,
    ) -> TrainReport:
        report = self._train_one(TrainJob(label, start, config, budget, record_traces=record))
        self._add_mainline(
            label, report.curve, config, source, start.env_steps if start else 0, report.checkpoint.env_steps
        )
        return report

    def _add_mainline(self, label, curve, config, source, start_step, end_step) -> None:
        if self.mainline and self.mainline[-1]["end_step"] != start_step:
            raise ContractViolation(f"mainline gap before segment {label}")
        self.mainline.append(
            {
                "label": label,
                "source": source,
                "start_step": int(start_step),
                "end_step": int(end_step),
                "config": config.to_dict() if config else None,
                "curve": _curve_list(curve),
            }
        )

    def run(self) -> dict:
        b = self.budget
        H = b.final_horizon
        checkpoints: dict[str, Checkpoint] = {}
        if self.method == "sparse":
            rep = self._segment("main", None, None, H, "sparse")
            checkpoints["final"] = rep.checkpoint
        elif self.method == "fixed-rs":
            rep = self._segment("main", None, fixed_config(self.fixed_direction), H, "fixed")
            checkpoints["final"] = rep.checkpoint
        else:
            diag, evidence = self.run_sparse_diagnostic()
            theta, c0, prefix = self.initial_search(diag, evidence)
            if self.method == "single-llm-rg":
                rep = self._segment("main", None, theta, H, "initial-winner")
                checkpoints["final"] = rep.checkpoint
            else:
                checkpoints["c0"] = c0
                e0 = c0.env_steps
                self._add_mainline("initial", prefix, theta, self.search_log["winner"] or "diagnostic", 0, e0)
                if self.reference:
                    ref = self._train_one(TrainJob("reference", c0, theta, H - e0))
                    self.reference_curve = list(prefix) + list(ref.curve)
                ckpt = c0
                for j, cp in enumerate(b.checkpoint_positions, start=1):
                    label = f"C{j}"
                    seg = self._segment(f"pre-{label}", ckpt, theta, cp - ckpt.env_steps, "mainline", record=True)
                    evidence = self._evidence(label, seg)
                    checkpoints[label] = seg.checkpoint
                    recent = [p for m in self.mainline for p in m["curve"]]
                    winner, theta = self.checkpoint_validation(label, seg.checkpoint, theta, recent, evidence)
                    self._add_mainline(
                        f"{label}-{winner.branch_id}",
                        winner.report.curve,
                        theta,
                        f"{label}/{winner.branch_id}",
                        seg.checkpoint.env_steps,
                        winner.report.checkpoint.env_steps,
                    )
                    ckpt = winner.report.checkpoint
                rep = self._segment("final", ckpt, theta, H - ckpt.env_steps, "mainline")
                checkpoints["final"] = rep.checkpoint

        expected = b.expected_env_steps(self.method, self.reference)
        if self.trainer is None and self.consumed != expected:
            raise ContractViolation(f"budget accounting: consumed {self.consumed} env steps, expected {expected}")
        ledger = self.ledger(expected)
        if self.run_dir is not None:
            self._write(ledger, checkpoints)
        return ledger

    def selected_curve(self) -> list[list]:
        out: list[list] = []
        for seg in self.mainline:
            for s, v in seg["curve"]:
                if not out or s > out[-1][0]:
                    out.append([s, v])
        return out

    def ledger(self, expected: int) -> dict:
        return {
            "method": self.method,
            "env": self.env_config.name,
            "seed": self.seed,
            "budget": self.budget.to_dict(),
            "learner": self.learner_config.to_dict(),
            "options": {
                "fixed_direction": self.fixed_direction if self.method == "fixed-rs" else None,
                "reference": self.reference,
                "tau_tie": self.tau_tie,
                "score_k": self.score_k,
            },
            "diagnostic": self.diagnostic,
            "initial_search": self.search_log or None,
            "mainline": self.mainline,
            "branches": self.records,
            "decisions": self.decisions,
            "reference_curve": _curve_list(self.reference_curve) if self.reference_curve else None,
            "selected_curve": self.selected_curve(),
            "env_steps_total": self.consumed,
            "expected_env_steps": expected,
            "warnings": self.warnings,
        }

    def run_config(self) -> dict:
        return {
            "method": self.method,
            "env": self.env_config.to_dict(),
            "seed": self.seed,
            "budget": self.budget.to_dict(),
            "learner": self.learner_config.to_dict(),
            "fixed_direction": self.fixed_direction,
            "reference": self.reference,
            "tau_tie": self.tau_tie,
            "score_k": self.score_k,
            "providers": {r: spec.to_dict() for r, spec in (self.provider_specs or {}).items()},
        }

    def _write(self, ledger: dict, checkpoints: dict[str, Checkpoint]) -> None:
        root = self.run_dir
        root.mkdir(parents=True, exist_ok=True)
        dump_json(self.run_config(), root / "config.json")
        dump_json(ledger, root / "ledger.json")
        dump_json(self.decisions, root / "decisions.json")
        seg_dir = root / "segments"
        seg_dir.mkdir(exist_ok=True)
        for i, seg in enumerate(self.mainline):
            write_curve_csv(seg["curve"], seg_dir / f"{i:02d}_{seg['label']}.csv")
        write_curve_csv(ledger["selected_curve"], seg_dir / "selected.csv")
        branch_root = root / "branches"
        for rnd in (self.search_log or {}).get("rounds", []):
            for p in rnd["pilots"]:
                self._write_branch(branch_root / "initial" / p["branch_id"], p)
        for rec in self.records:
            self._write_branch(branch_root / rec["checkpoint"] / rec["branch_id"], rec)
        ck_dir = root / "checkpoints"
        ck_dir.mkdir(exist_ok=True)
        for name, ck in checkpoints.items():
            save_checkpoint(ck, ck_dir / f"{name}.ckpt")
        for name, doc in self.evidence_files.items():
            dump_json(doc, root / "evidence" / f"{name}.json")

    @staticmethod
    def _write_branch(path: Path, rec: dict) -> None:
        path.mkdir(parents=True, exist_ok=True)
        write_curve_csv(rec["curve"], path / "curve.csv")
        dump_json(rec["config"], path / "config.json")
        dump_json(rec["score"], path / "score.json")


def run_dir_for(root: str | Path, method: str, env_name: str, seed: int) -> Path:
    return Path(root) / method / env_name / str(seed)


def workflow_from_run_config(
    config: dict, run_dir: Path | None, providers: dict, provider_specs: dict | None = None
) -> Workflow:
    """Rebuild a workflow from a run directory's ``config.json``."""
    return Workflow(
        method=config["method"],
        env_config=EnvConfig.from_dict(config["env"]),
        seed=config["seed"],
        budget=WorkflowBudget.from_dict(config["budget"]),
        learner_config=LearnerConfig.from_dict(config["learner"]),
        providers=providers,
        run_dir=run_dir,
        fixed_direction=config["fixed_direction"],
        reference=config["reference"],
        tau_tie=config["tau_tie"],
        score_k=config["score_k"],
        provider_specs=provider_specs,
    )


def replay_run(run_dir: str | Path, out_dir: str | Path) -> bool:
    """Re-drive a finished run from its transcripts; True when the ledgers are byte-identical."""
    from .llm import ProviderSpec, build_providers

    run_dir, out_dir = Path(run_dir), Path(out_dir)
    config = json.loads((run_dir / "config.json").read_text())
    spec = ProviderSpec(kind="scripted", transcript_path=str(run_dir / "llm_transcripts"))
    needs_llm = config["method"] not in ("sparse", "fixed-rs")
    providers = build_providers({"critic": spec, "generator": spec}) if needs_llm else {}
    specs = {"critic": spec, "generator": spec} if needs_llm else {}
    workflow_from_run_config(config, out_dir, providers, specs).run()
    return (run_dir / "ledger.json").read_bytes() == (out_dir / "ledger.json").read_bytes()


__all__ = [
    "FIXED_DIRECTIONS",
    "METHODS",
    "PROFILES",
    "TrainJob",
    "Workflow",
    "WorkflowBudget",
    "fixed_config",
    "replay_run",
    "run_dir_for",
    "run_job",
]
