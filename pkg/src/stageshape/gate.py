"""Branch scoring and the replacement decision.

A branch is scored on its short sparse-evaluation curve; updates are
compared with the no-change control by score margin. The decision is a
pure function of the scores, so permuting the update list never changes
the winner.
"""

from __future__ import annotations

import math
import statistics
from collections.abc import Sequence
from dataclasses import dataclass, field

from .errors import ContractViolation

# score weights: last-k mean, AUC, final, best, stability penalty
W_LASTK = 0.35
W_AUC = 0.35
W_FINAL = 0.20
W_BEST = 0.10
W_PENALTY = 0.10

DEFAULT_K = 5
DEFAULT_TAU_TIE = 0.02
SPIKE_WARNING = 0.3

SEVERE = "severe_invalid"
SPIKE_FLAG = "spike_warning"
BELOW_REFERENCE = "below_reference"
FIRST_REPLACEMENT = "first_replacement"

CLEAR_IMPROVEMENT = "clear_improvement"
NEAR_TIE = "near_tie_rejected"
ALL_BELOW = "all_below_control"
RISK_REJECTED = "risk_rejected"


@dataclass(frozen=True)
class BranchCurve:
    branch_id: str
    points: tuple[tuple[int, float], ...]
    origin: str = ""
    config: dict | None = None


@dataclass(frozen=True)
class BranchScore:
    branch_id: str
    last_k_mean: float
    auc: float
    final: float
    best: float
    spike_gap: float
    std_last_k: float
    score: float
    flags: tuple[str, ...] = ()

    @property
    def severe_invalid(self) -> bool:
        return SEVERE in self.flags

    def to_dict(self) -> dict:
        return {
            "branch_id": self.branch_id,
            "last_k_mean": self.last_k_mean,
            "auc": self.auc,
            "final": self.final,
            "best": self.best,
            "spike_gap": self.spike_gap,
            "std_last_k": self.std_last_k,
            "score": self.score,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, data: dict) -> BranchScore:
        return cls(
            branch_id=data["branch_id"],
            last_k_mean=data["last_k_mean"],
            auc=data["auc"],
            final=data["final"],
            best=data["best"],
            spike_gap=data["spike_gap"],
            std_last_k=data["std_last_k"],
            score=data["score"],
            flags=tuple(data.get("flags", ())),
        )


def invalid_score(branch_id: str, *extra_flags: str) -> BranchScore:
    nan = float("nan")
    return BranchScore(branch_id, nan, nan, nan, nan, nan, nan, nan, (SEVERE, *extra_flags))


def score_branch(curve: BranchCurve, k: int = DEFAULT_K) -> BranchScore:
    """Stability-aware score of a branch curve.

    AUC is the trapezoidal area over env steps divided by the step span, so
    every term is in return units. Curves with fewer than two points or any
    non-finite return are flagged severe-invalid.
    """
    points = curve.points
    if len(points) < 2:
        return invalid_score(curve.branch_id, "too_few_points")
    steps = [p[0] for p in points]
    values = [float(p[1]) for p in points]
    if not all(math.isfinite(v) for v in values):
        return invalid_score(curve.branch_id, "non_finite_return")
    if any(b <= a for a, b in zip(steps, steps[1:])):
        return invalid_score(curve.branch_id, "non_increasing_steps")
    k = max(1, min(k, len(values)))
    tail = values[-k:]
    last_k = math.fsum(tail) / len(tail)
    std_k = statistics.pstdev(tail)
    area = math.fsum((steps[i + 1] - steps[i]) * (values[i] + values[i + 1]) / 2 for i in range(len(values) - 1))
    auc = area / (steps[-1] - steps[0])
    final = values[-1]
    best = max(values)
    spike = max(0.0, best - last_k)  # non-negative up to rounding
    score = W_LASTK * last_k + W_AUC * auc + W_FINAL * final + W_BEST * best - W_PENALTY * (spike + std_k)
    flags = (SPIKE_FLAG,) if spike > SPIKE_WARNING else ()
    return BranchScore(curve.branch_id, last_k, auc, final, best, spike, std_k, score, flags)


def rank_key(score: BranchScore) -> tuple:
    """Sort key: higher score, then higher last-k mean, lower spike gap, branch id."""
    return (-score.score, -score.last_k_mean, score.spike_gap, score.branch_id)


def best_branch(scores: Sequence[BranchScore]) -> BranchScore | None:
    valid = [s for s in scores if not s.severe_invalid]
    return min(valid, key=rank_key) if valid else None


@dataclass(frozen=True)
class GateDecision:
    control_id: str
    scores: dict[str, BranchScore]
    margins: dict[str, float]
    winner: str
    reason: str
    flags: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @property
    def promoted(self) -> bool:
        return self.winner != self.control_id

    def to_dict(self) -> dict:
        return {
            "control_id": self.control_id,
            "winner": self.winner,
            "reason": self.reason,
            "promoted": self.promoted,
            "margins": dict(self.margins),
            "scores": {k: v.to_dict() for k, v in self.scores.items()},
            "flags": {k: list(v) for k, v in self.flags.items()},
        }


def decide(
    control: BranchScore | None,
    updates: Sequence[BranchScore],
    tau_tie: float = DEFAULT_TAU_TIE,
) -> GateDecision:
    """Promote the best update only if it clears the control by more than ``tau_tie``."""
    if control is None:
        raise ContractViolation("decide needs a no-change control score")
    if not updates:
        raise ContractViolation("decide needs at least one update branch")
    ids = [control.branch_id, *(u.branch_id for u in updates)]
    if len(set(ids)) != len(ids):
        raise ContractViolation("branch ids must be unique")

    scores = {control.branch_id: control, **{u.branch_id: u for u in updates}}
    flags = {bid: s.flags for bid, s in scores.items()}
    if control.severe_invalid:
        margins = {bid: float("nan") for bid in scores}
        margins[control.branch_id] = 0.0
        return GateDecision(control.branch_id, scores, margins, control.branch_id, RISK_REJECTED, flags)

    margins = {control.branch_id: 0.0}
    for u in updates:
        margins[u.branch_id] = u.score - control.score

    best = best_branch(updates)
    if best is None:
        return GateDecision(control.branch_id, scores, margins, control.branch_id, RISK_REJECTED, flags)
    delta = margins[best.branch_id]
    if delta > tau_tie:
        return GateDecision(control.branch_id, scores, margins, best.branch_id, CLEAR_IMPROVEMENT, flags)
    reason = NEAR_TIE if delta >= 0 else ALL_BELOW
    return GateDecision(control.branch_id, scores, margins, control.branch_id, reason, flags)
