from __future__ import annotations

import json
from pathlib import Path

import pytest

from stageshape.env import EnvConfig
from stageshape.learner import Checkpoint, LearnerConfig, TrainReport, fresh_checkpoint
from stageshape.workflow import WorkflowBudget

# checkpoint-validation scores of a representative run: (branch id, round, score)
REFERENCE_SCORES = {
    "C1": [("NC", "NC", 0.216), ("R1-u1", 1, 0.275), ("R1-u2", 1, 0.383), ("R1-u3", 1, 0.254)],
    "C2": [
        ("NC", "NC", 0.765),
        ("R1-u1", 1, 0.627),
        ("R1-u2", 1, 0.756),
        ("R1-u3", 1, 0.767),
        ("R2-u1", 2, 0.686),
        ("R2-u2", 2, 0.573),
        ("R2-u3", 2, 0.570),
    ],
}
REFERENCE_MARGINS = {
    "C1": {"NC": 0.0, "R1-u1": 0.058, "R1-u2": 0.167, "R1-u3": 0.038},
    "C2": {
        "NC": 0.0,
        "R1-u1": -0.138,
        "R1-u2": -0.009,
        "R1-u3": 0.002,
        "R2-u1": -0.079,
        "R2-u2": -0.192,
        "R2-u3": -0.195,
    },
}
# the C1 round-2 updates are not listed; any score below the C1 winner keeps the outcome
C1_ROUND2_FILL = 0.2


def constant_curve(start: int, value: float, n: int = 8, every: int = 1000) -> list[list]:
    """A flat curve scores exactly its value under the branch score."""
    return [[start + every * (i + 1), value] for i in range(n)]


def reference_ledger() -> dict:
    branches, decisions = [], []
    for label, rows in REFERENCE_SCORES.items():
        start = 1000 if label == "C1" else 5000
        for bid, rnd, score in rows:
            branches.append(
                {
                    "checkpoint": label,
                    "round": rnd,
                    "branch_id": bid,
                    "config": None,
                    "curve": constant_curve(start, score),
                    "score": {},
                    "margin": None,
                    "decision": "",
                    "promoted": False,
                }
            )
    decisions = [
        {"checkpoint": "C1", "winner": "R1-u2", "reason": "clear_improvement", "promoted": True},
        {"checkpoint": "C2", "winner": "NC", "reason": "near_tie_rejected", "promoted": False},
    ]
    return {
        "method": "also",
        "env": "10x10-2p-1f",
        "seed": 0,
        "options": {"tau_tie": 0.02, "score_k": 5},
        "branches": branches,
        "decisions": decisions,
        "selected_curve": [[1000, 0.1], [2000, 0.4], [3000, 0.7]],
    }


@pytest.fixture
def reference_run(tmp_path) -> Path:
    run = tmp_path / "runs" / "also" / "10x10-2p-1f" / "0"
    run.mkdir(parents=True)
    (run / "ledger.json").write_text(json.dumps(reference_ledger()))
    return tmp_path / "runs"


class ConstantTrainer:
    """Stand-in trainer: flat curves chosen by branch label and start step."""

    def __init__(self, values: dict[tuple[str, str], float], default: float = 0.1):
        self.values = values
        self.default = default
        self.calls: list[tuple[str, int, int]] = []

    def __call__(self, job, env_config: EnvConfig, learner_config: LearnerConfig, eval_every: int, eval_episodes: int):
        start = job.start if job.start is not None else fresh_checkpoint(env_config, learner_config)
        self.calls.append((job.label, start.env_steps, job.budget))
        end = start.env_steps + job.budget
        value = self.values.get((job.label, start.env_steps), self.values.get((job.label, None), self.default))
        steps = list(range(start.env_steps + eval_every, end + 1, eval_every))
        if not steps or steps[-1] != end:
            steps.append(end)
        curve = [(s, value) for s in steps]

        def ckpt_at(step: int) -> Checkpoint:
            return Checkpoint(start.env_name, start.q_tables, step, start.episodes, start.rng_state, start.epsilon)

        snaps = {s: ckpt_at(s) for s in job.snapshot_steps if start.env_steps < s <= end}
        return TrainReport(curve, ckpt_at(end), job.budget, snaps, ())


@pytest.fixture
def tiny_budget() -> WorkflowBudget:
    return WorkflowBudget.from_profile("short-2.05M", 20_000, eval_episodes=3)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "ACCEPTANCE_LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
