from __future__ import annotations

import math
import random

import pytest

from stageshape.errors import ContractViolation
from stageshape.gate import (
    ALL_BELOW,
    CLEAR_IMPROVEMENT,
    NEAR_TIE,
    RISK_REJECTED,
    SPIKE_FLAG,
    BranchCurve,
    decide,
    score_branch,
)

from .conftest import REFERENCE_MARGINS, REFERENCE_SCORES, constant_curve


def curve(values, bid="b", every=1000) -> BranchCurve:
    return BranchCurve(bid, tuple((every * (i + 1), v) for i, v in enumerate(values)))


def test_hand_computed_fixture():
    s = score_branch(curve([0.1, 0.2, 0.3, 0.3, 0.4]), k=3)
    assert s.last_k_mean == pytest.approx(1 / 3)
    assert s.auc == pytest.approx(0.2625)
    assert s.spike_gap == pytest.approx(0.4 - 1 / 3)
    assert s.std_last_k == pytest.approx(0.0471, abs=1e-4)
    assert s.score == pytest.approx(0.3171, abs=1e-4)


def test_constant_curve_scores_its_value():
    s = score_branch(curve([0.42] * 6))
    assert s.score == pytest.approx(0.42, abs=1e-12)
    assert s.spike_gap == 0 and s.std_last_k == 0


def test_spike_scores_below_flat():
    spiky = score_branch(curve([0.2, 0.9, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2]))
    flat = score_branch(curve([0.2875] * 8))
    assert spiky.score < flat.score
    assert SPIKE_FLAG in spiky.flags


@pytest.mark.parametrize("values", [[0.3], [], [0.1, float("nan")], [0.1, float("inf")]])
def test_severe_invalid_curves(values):
    s = score_branch(curve(values))
    assert s.severe_invalid and math.isnan(s.score)


def test_non_increasing_steps_invalid():
    s = score_branch(BranchCurve("x", ((1000, 0.1), (1000, 0.2))))
    assert s.severe_invalid


def _scores(label):
    start = 1000
    return {
        bid: score_branch(BranchCurve(bid, tuple(constant_curve(start, v)))) for bid, _, v in REFERENCE_SCORES[label]
    }


def test_reference_score_decisions():
    c1 = _scores("C1")
    d = decide(c1.pop("NC"), list(c1.values()))
    assert d.winner == "R1-u2" and d.reason == CLEAR_IMPROVEMENT and d.promoted
    for bid, m in REFERENCE_MARGINS["C1"].items():
        assert abs(d.margins[bid] - m) <= 1e-3 + 1e-12

    c2 = _scores("C2")
    d = decide(c2.pop("NC"), list(c2.values()))
    assert d.winner == "NC" and d.reason == NEAR_TIE and not d.promoted
    for bid, m in REFERENCE_MARGINS["C2"].items():
        assert abs(d.margins[bid] - m) <= 1e-3 + 1e-12


def test_all_below_and_missing_control():
    ctrl = score_branch(curve([0.5] * 5, "NC"))
    d = decide(ctrl, [score_branch(curve([0.1] * 5, "a")), score_branch(curve([0.2] * 5, "b"))])
    assert d.winner == "NC" and d.reason == ALL_BELOW
    with pytest.raises(ContractViolation):
        decide(None, [ctrl])
    with pytest.raises(ContractViolation):
        decide(ctrl, [])
    with pytest.raises(ContractViolation):
        decide(ctrl, [score_branch(curve([0.1] * 5, "NC"))])


def test_severe_invalid_never_wins():
    ctrl = score_branch(curve([0.1] * 5, "NC"))
    bad = score_branch(curve([0.9], "bad"))
    d = decide(ctrl, [bad])
    assert d.winner == "NC" and d.reason == RISK_REJECTED
    ok = score_branch(curve([0.5] * 5, "ok"))
    assert decide(ctrl, [bad, ok]).winner == "ok"
    broken_ctrl = score_branch(curve([0.1], "NC"))
    assert decide(broken_ctrl, [ok]).reason == RISK_REJECTED


def test_tie_break_prefers_higher_last_k_then_id():
    ctrl = score_branch(curve([0.0] * 4, "NC"))
    a = score_branch(curve([0.5] * 4, "b"))
    b = score_branch(curve([0.5] * 4, "a"))
    assert decide(ctrl, [a, b]).winner == "a"


def test_monotonicity_and_permutation_small():
    rng = random.Random(0)
    for _ in range(100):
        curves = [curve([rng.random() for _ in range(6)], f"u{i}") for i in range(4)]
        ctrl = score_branch(curve([rng.random() for _ in range(6)], "NC"))
        scores = [score_branch(c) for c in curves]
        d = decide(ctrl, scores)
        shuffled = scores[:]
        rng.shuffle(shuffled)
        assert decide(ctrl, shuffled).winner == d.winner
        i = rng.randrange(4)
        c = 0.1
        lifted = BranchCurve(curves[i].branch_id, tuple((s, v + c) for s, v in curves[i].points))
        ls = score_branch(lifted)
        assert ls.score == pytest.approx(scores[i].score + c, abs=1e-12)
        if d.winner == curves[i].branch_id:
            assert decide(ctrl, scores[:i] + [ls] + scores[i + 1 :]).winner == d.winner
