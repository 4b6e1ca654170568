"""Behaviour evidence distilled from evaluation episodes.

Evidence is read off recorded traces only. The per-step cache metrics reuse
the shaping cache so that "allocation" and "stability" mean the same thing
here as in the potential.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import asdict, dataclass, fields

from .env import EnvConfig, EpisodeTrace
from .errors import ContractViolation
from .shaping import advance, augment, phi_alloc, phi_stab

EVIDENCE_KEYS = (
    "low_coverage",
    "no_discovery",
    "approach_stall",
    "lone_load_failures",
    "target_collision",
    "allocation_imbalance",
    "late_instability",
    "near_success",
)

NEAR_TARGET_DISTANCE = 2


@dataclass(frozen=True)
class EvidenceSummary:
    coverage_frac: float
    discovery_frac: float
    near_target_frac: float
    failed_load_rate: float
    target_concentration: float
    allocation_balance: float
    stability_index: float
    success_rate: float
    mean_return: float
    episode_count: int
    n_agents: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> EvidenceSummary:
        return cls(**{f.name: data[f.name] for f in fields(cls)})


@dataclass(frozen=True)
class KeyThresholds:
    low_coverage: float = 0.3
    lone_load_rate: float = 0.05
    lone_load_success: float = 0.5
    target_collision: float = 0.8
    allocation_imbalance: float = 0.5
    late_instability: float = 0.6
    late_instability_return: float = 0.3
    near_success_high: float = 0.5
    approach_stall: float = 0.2


@dataclass(frozen=True)
class EvidenceKey:
    key: str
    severity: float

    def to_dict(self) -> dict:
        return {"key": self.key, "severity": self.severity}


def summarize_episodes(traces: Sequence[EpisodeTrace], env_config: EnvConfig) -> EvidenceSummary:
    """Aggregate evaluation traces into an evidence summary.

    Per-step metrics are taken on the state each step produced and pooled
    over all steps of all episodes; coverage, discovery, success and return
    are per-episode means. Target concentration only counts steps with at
    least two uncollected foods, where sharing a target is a real choice.
    """
    if not traces:
        raise ContractViolation("summarize_episodes needs at least one trace")
    n_agents = env_config.n_agents
    n_cells = env_config.width * env_config.height
    coverage = discovery = success = returns = 0.0
    steps = near = 0
    alloc_sum = stab_sum = 0.0
    failed = 0
    conc_sum, conc_steps = 0.0, 0
    for trace in traces:
        aug = augment(trace.states[0], env_config)
        for t, action in enumerate(trace.actions):
            aug = advance(aug, trace.states[t + 1], action, trace.events[t])
            env = aug.env
            steps += 1
            failed += len(trace.events[t].failed_loads)
            remaining = [pos for pos, c in zip(env.food_positions, env.food_collected) if not c]
            if any(
                abs(fx - x) + abs(fy - y) <= NEAR_TARGET_DISTANCE
                for x, y in env.agent_positions
                for fx, fy in remaining
            ):
                near += 1
            if len(remaining) >= 2:
                counts: dict[int, int] = {}
                for target in aug.targets:
                    counts[target] = counts.get(target, 0) + 1
                conc_sum += max(counts.values()) / n_agents
                conc_steps += 1
            alloc_sum += phi_alloc(aug)
            stab_sum += phi_stab(aug)
        coverage += len(aug.visited_cells) / n_cells
        discovery += len(aug.discovered_foods) / env_config.n_foods
        success += all(aug.env.food_collected)
        returns += trace.episode_return
    n_eps = len(traces)
    return EvidenceSummary(
        coverage_frac=coverage / n_eps,
        discovery_frac=discovery / n_eps,
        near_target_frac=near / steps,
        failed_load_rate=failed / (n_agents * steps),
        target_concentration=conc_sum / conc_steps if conc_steps else 0.0,
        allocation_balance=alloc_sum / steps,
        stability_index=stab_sum / steps,
        success_rate=success / n_eps,
        mean_return=returns / n_eps,
        episode_count=n_eps,
        n_agents=n_agents,
    )


def _below(value: float, threshold: float) -> float:
    return min(1.0, max(0.0, (threshold - value) / threshold)) if threshold > 0 else 1.0


def _above(value: float, threshold: float) -> float:
    return min(1.0, max(0.0, (value - threshold) / (1.0 - threshold))) if threshold < 1 else 1.0


def derive_keys(summary: EvidenceSummary, thresholds: KeyThresholds | None = None) -> list[EvidenceKey]:
    """Apply the rule table; returns fired keys sorted by descending severity."""
    th = thresholds or KeyThresholds()
    s = summary
    fired: list[EvidenceKey] = []

    def fire(key: str, severity: float) -> None:
        # a rule that fired never reports zero severity
        fired.append(EvidenceKey(key, max(severity, 1e-6)))

    if s.coverage_frac < th.low_coverage:
        fire("low_coverage", _below(s.coverage_frac, th.low_coverage))
    if s.discovery_frac < 1.0 and s.mean_return == 0:
        fire("no_discovery", 1.0 - s.discovery_frac)
    if s.near_target_frac < th.approach_stall and s.discovery_frac > 0:
        fire("approach_stall", _below(s.near_target_frac, th.approach_stall))
    if s.failed_load_rate > th.lone_load_rate and s.success_rate < th.lone_load_success:
        fire("lone_load_failures", _above(s.failed_load_rate, th.lone_load_rate))
    if s.target_concentration > th.target_collision and s.n_agents >= 2:
        fire("target_collision", _above(s.target_concentration, th.target_collision))
    if s.allocation_balance < th.allocation_imbalance:
        fire("allocation_imbalance", _below(s.allocation_balance, th.allocation_imbalance))
    if s.stability_index < th.late_instability and s.mean_return > th.late_instability_return:
        fire("late_instability", _below(s.stability_index, th.late_instability))
    if 0 < s.success_rate < th.near_success_high:
        fire("near_success", s.success_rate / th.near_success_high)
    order = {k: i for i, k in enumerate(EVIDENCE_KEYS)}
    return sorted(fired, key=lambda e: (-e.severity, order[e.key]))
