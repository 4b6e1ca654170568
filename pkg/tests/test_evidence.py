from __future__ import annotations

import pytest

from stageshape.env import Action, EnvConfig, EpisodeTrace, run_episode, step
from stageshape.errors import ContractViolation
from stageshape.evidence import (
    EVIDENCE_KEYS,
    EvidenceSummary,
    KeyThresholds,
    derive_keys,
    summarize_episodes,
)

from .test_env import make_state


def scripted_trace(state, actions, cfg) -> EpisodeTrace:
    states, events, rewards = [state], [], []
    for a in actions:
        state, r, _, ev = step(state, a, cfg)
        states.append(state)
        events.append(ev)
        rewards.append(r)
    return EpisodeTrace(tuple(states), tuple(actions), tuple(events), tuple(rewards))


def summary(**overrides) -> EvidenceSummary:
    base = dict(
        coverage_frac=0.6,
        discovery_frac=1.0,
        near_target_frac=0.5,
        failed_load_rate=0.0,
        target_concentration=0.5,
        allocation_balance=1.0,
        stability_index=1.0,
        success_rate=1.0,
        mean_return=1.0,
        episode_count=10,
        n_agents=2,
    )
    return EvidenceSummary(**{**base, **overrides})


def test_lone_loader_hand_computed():
    cfg = EnvConfig(5, 5, 2, 1)
    s0 = make_state([(1, 2), (4, 4)], [(2, 2)], [2])
    trace = scripted_trace(s0, [(Action.LOAD, Action.NOOP)] * 4, cfg)
    s = summarize_episodes([trace], cfg)
    assert s.failed_load_rate == pytest.approx(4 / 8)
    assert s.coverage_frac == pytest.approx(2 / 25)
    assert s.near_target_frac == 1.0
    assert s.success_rate == 0.0 and s.mean_return == 0.0
    keys = [k.key for k in derive_keys(s)]
    assert "lone_load_failures" in keys and "low_coverage" in keys


def test_never_moving_agents_have_minimal_coverage():
    cfg = EnvConfig.from_name("10x10-2p-1f")
    traces = [run_episode(lambda o: [Action.NOOP] * len(o), cfg, s) for s in range(3)]
    s = summarize_episodes(traces, cfg)
    assert s.coverage_frac == pytest.approx(2 / 100)
    assert s.failed_load_rate == 0.0 and s.mean_return == 0.0
    keys = {k.key: k.severity for k in derive_keys(s)}
    assert keys["low_coverage"] == pytest.approx((0.3 - 0.02) / 0.3)


def test_empty_traces_rejected():
    with pytest.raises(ContractViolation):
        summarize_episodes([], EnvConfig.from_name("5x5-1p-1f"))


def test_healthy_summary_fires_nothing():
    assert derive_keys(summary()) == []


@pytest.mark.parametrize(
    "overrides,key",
    [
        (dict(coverage_frac=0.1), "low_coverage"),
        (dict(discovery_frac=0.5, mean_return=0.0, success_rate=0.0), "no_discovery"),
        (dict(near_target_frac=0.05), "approach_stall"),
        (dict(failed_load_rate=0.3, success_rate=0.2), "lone_load_failures"),
        (dict(target_concentration=0.95), "target_collision"),
        (dict(allocation_balance=0.2), "allocation_imbalance"),
        (dict(stability_index=0.3, mean_return=0.5), "late_instability"),
        (dict(success_rate=0.25), "near_success"),
    ],
)
def test_each_rule_fires_with_positive_severity(overrides, key):
    fired = {k.key: k.severity for k in derive_keys(summary(**overrides))}
    assert key in fired and 0 < fired[key] <= 1


def test_single_agent_never_collides():
    assert derive_keys(summary(target_concentration=1.0, n_agents=1)) == []


def test_keys_sorted_by_severity_then_table_order():
    s = summary(coverage_frac=0.0, allocation_balance=0.0, near_target_frac=0.1)
    keys = derive_keys(s)
    sev = [k.severity for k in keys]
    assert sev == sorted(sev, reverse=True)
    assert [k.key for k in keys if k.severity == 1.0] == ["low_coverage", "allocation_imbalance"]
    assert all(k.key in EVIDENCE_KEYS for k in keys)


def test_thresholds_are_configurable():
    s = summary(coverage_frac=0.4)
    assert derive_keys(s) == []
    assert derive_keys(s, KeyThresholds(low_coverage=0.5))[0].key == "low_coverage"
    assert EvidenceSummary.from_dict(s.to_dict()) == s
