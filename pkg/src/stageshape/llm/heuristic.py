"""Deterministic offline stand-in for the critic and generator roles.

Every evidence key maps to a failure label, a preferred and a secondary
mode; every mode has a weight template. The output depends only on the
context document, so replaying a context reproduces the answer exactly.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from typing import Any

from ..shaping import (
    BETA_MAX,
    CANDIDATE_TYPES,
    COMPONENTS,
    ConfigRejected,
    ShapingConfig,
    make_config,
)
from .schemas import GuidanceCard

RULE_SET_VERSION = "heuristic-v1"

# weights in component order: col, app, cov, ready, alloc, stab
TEMPLATES: dict[str, tuple[tuple[float, ...], float]] = {
    "balanced-progress": ((0.2, 0.2, 0.2, 0.2, 0.1, 0.1), 0.5),
    "early-discovery": ((0.1, 0.3, 0.45, 0.15, 0.0, 0.0), 0.6),
    "coverage-recovery": ((0.1, 0.25, 0.5, 0.15, 0.0, 0.0), 0.6),
    "collection-readiness": ((0.3, 0.15, 0.0, 0.45, 0.05, 0.05), 0.5),
    "allocation-balance": ((0.2, 0.2, 0.0, 0.15, 0.4, 0.05), 0.5),
    "late-stability": ((0.4, 0.1, 0.0, 0.15, 0.05, 0.3), 0.3),
}

# key -> (failure label, preferred mode, secondary mode)
RULES: dict[str, tuple[str, str, str]] = {
    "low_coverage": ("agents explore too little of the map", "coverage-recovery", "early-discovery"),
    "no_discovery": ("food is rarely found before the episode ends", "early-discovery", "coverage-recovery"),
    "approach_stall": ("agents see food but do not close in on it", "early-discovery", "collection-readiness"),
    "lone_load_failures": ("agents try to load without enough partners", "collection-readiness", "allocation-balance"),
    "target_collision": ("agents crowd the same food item", "allocation-balance", "collection-readiness"),
    "allocation_imbalance": ("agents do not spread over remaining food", "allocation-balance", "balanced-progress"),
    "late_instability": ("behaviour oscillates once returns appear", "late-stability", "collection-readiness"),
    "near_success": ("episodes sometimes succeed but not reliably", "collection-readiness", "late-stability"),
}
DEFAULT_MODES = ("balanced-progress", "early-discovery")

BETA_BOUNDS = (0.05, BETA_MAX)
HINT_THRESHOLD = 0.3
REFINE_BETA_FACTOR = 1.25
CONSERVATIVE_BETA_FACTOR = 0.9
CONSERVATIVE_BASE_BETA = 0.25
CONSERVATIVE_STEPS = tuple(i / 10 for i in range(1, 11))


def template_weights(mode: str) -> dict[str, float]:
    return dict(zip(COMPONENTS, TEMPLATES[mode][0]))


def _clamp_beta(beta: float, bounds: Sequence[float]) -> float:
    lo, hi = bounds
    return min(hi, max(lo, beta, 1e-6))


def diagnose(context: Mapping[str, Any]) -> GuidanceCard:
    """Guidance card from the ranked evidence keys of a context document."""
    keys = [k["key"] for k in context.get("evidence_keys", []) if k.get("key") in RULES]
    if keys:
        _, primary, secondary = RULES[keys[0]]
        modes = [primary, secondary] + [RULES[k][1] for k in keys[1:]]
        failures = [{"mode": RULES[k][0], "explanation": f"evidence key {k} fired"} for k in keys]
    else:
        modes = list(DEFAULT_MODES)
        failures = [{"mode": "no dominant bottleneck", "explanation": "no evidence key fired"}]
    modes = list(dict.fromkeys(modes))
    hints = {c: w for c, w in template_weights(modes[0]).items() if w >= HINT_THRESHOLD}
    risks = ["dense shaping may pull agents away from the sparse objective"]
    if context.get("current_config"):
        risks.append("replacing a working configuration can undo recent progress")
    return GuidanceCard(
        diagnosed_failures=tuple(failures),
        supporting_evidence_keys=tuple(keys),
        allowed_modes=tuple(modes),
        weight_mass_hints=hints,
        beta_bounds=BETA_BOUNDS,
        risks=tuple(risks),
    )


def _phase_history(context: Mapping[str, Any]) -> list[dict]:
    phase = context.get("phase")
    return [h for h in context.get("branch_history", []) if h.get("phase") == phase]


def _config_or_none(data: Any) -> ShapingConfig | None:
    if not data:
        return None
    try:
        parsed = ShapingConfig.from_dict(data)
        return make_config(parsed.beta, parsed.mode, parsed.weights)
    except ConfigRejected:
        return None


def _same_signal(a: ShapingConfig, b: ShapingConfig, tol: float = 1e-9) -> bool:
    return (
        a.mode == b.mode
        and abs(a.beta - b.beta) <= tol
        and all(abs(x - y) <= tol for x, y in zip(a.weight_vector(), b.weight_vector()))
    )


def _try(beta: float, mode: str, weights: Mapping[str, float], **meta) -> ShapingConfig | None:
    try:
        return make_config(beta, mode, weights, **meta)
    except ConfigRejected:
        return None


def propose(card: GuidanceCard, context: Mapping[str, Any], n: int = 3) -> list[ShapingConfig]:
    """Targeted, exploratory and conservative proposals that satisfy ``card``."""
    allowed = list(card.allowed_modes) or list(TEMPLATES)
    bounds = card.beta_bounds
    keys = tuple(card.supporting_evidence_keys)
    history = _phase_history(context)
    current = _config_or_none(context.get("current_config"))

    # targeted: template of the preferred mode, or in later rounds the best
    # prior candidate of this phase pushed harder
    target_mode = allowed[0]
    t_weights, t_beta = template_weights(target_mode), TEMPLATES[target_mode][1]
    effect = f"shift weight mass toward {target_mode}"
    scored = [h for h in history if h.get("score") is not None and h.get("config")]
    scored.sort(key=lambda h: (-h["score"], h.get("branch_id", "")))
    for h in scored:
        prior = _config_or_none(h["config"])
        if prior is not None and prior.mode in allowed:
            target_mode, t_weights = prior.mode, dict(prior.weights)
            t_beta = prior.beta * REFINE_BETA_FACTOR
            effect = f"strengthen best prior candidate {h.get('branch_id')}"
            break
    targeted = make_config(
        _clamp_beta(t_beta, bounds),
        target_mode,
        t_weights,
        candidate_type="targeted",
        evidence_keys=keys,
        expected_effect=effect,
        risk_notes="may over-commit to one bottleneck",
    )

    # exploratory: first allowed mode not yet tried in this phase
    tried = {target_mode}
    for h in history:
        cfg = h.get("config") or {}
        if isinstance(cfg, Mapping) and isinstance(cfg.get("mode"), str):
            tried.add(cfg["mode"])
    fresh = [m for m in allowed if m not in tried] or [m for m in allowed if m != target_mode] or allowed
    e_mode = fresh[0]
    # a repeated direction is retried at half strength
    e_beta = TEMPLATES[e_mode][1] if e_mode not in tried else TEMPLATES[e_mode][1] / 2
    exploratory = make_config(
        _clamp_beta(e_beta, bounds),
        e_mode,
        template_weights(e_mode),
        candidate_type="exploratory",
        evidence_keys=keys,
        expected_effect=f"test the alternative direction {e_mode}",
        risk_notes="direction not directly supported by the top evidence key",
    )

    # conservative: nudge the current weights toward the preferred template
    if current is not None:
        base_w, base_beta, base_mode = dict(current.weights), current.beta, current.mode
    else:
        base_w, base_beta, base_mode = template_weights("balanced-progress"), CONSERVATIVE_BASE_BETA, allowed[0]
    goal = template_weights(allowed[0])
    mode_order = list(dict.fromkeys([m for m in (base_mode, allowed[0]) if m in allowed] + allowed))
    conservative = None
    for alpha in CONSERVATIVE_STEPS:
        blend = {c: (1 - alpha) * base_w.get(c, 0.0) + alpha * goal[c] for c in COMPONENTS}
        for mode in mode_order:
            conservative = _try(
                _clamp_beta(base_beta, bounds),
                mode,
                blend,
                candidate_type="conservative",
                evidence_keys=keys,
                expected_effect=f"small step ({alpha:.1f}) toward {allowed[0]}",
                risk_notes="may be too small a change to matter",
            )
            if conservative is not None:
                break
        if conservative is not None:
            break
    assert conservative is not None  # alpha = 1 reproduces a valid template
    if current is not None and _same_signal(conservative, current):
        # current already sits on the template: soften it instead of duplicating the control
        conservative = make_config(
            _clamp_beta(current.beta * CONSERVATIVE_BETA_FACTOR, bounds),
            conservative.mode,
            conservative.weights,
            candidate_type="conservative",
            evidence_keys=keys,
            expected_effect="slightly weaker shaping with unchanged weights",
            risk_notes="may be too small a change to matter",
        )

    by_type = {"targeted": targeted, "exploratory": exploratory, "conservative": conservative}
    return [by_type[t] for t in CANDIDATE_TYPES[:n]]
