"""Reference prompts for the critic, generator and merged single-model roles.

The system prompt carries the output schema; the user prompt is a JSON
document with the task payload so that responses can be validated
mechanically.
"""

from __future__ import annotations

import hashlib
import json

from ..shaping import BETA_MAX, COMPONENTS, MODES

ROLES = ("critic", "generator", "merged")

_SPACE = f"""\
Training signal under design: a potential-based shaping term
beta * (gamma * Phi(s') - Phi(s)), added to the sparse team reward during
training only. Evaluation always uses the sparse reward.
Phi is a weighted sum of six bounded components:
  col   - collection progress
  app   - approach toward uncollected food
  cov   - map coverage and food discovery
  ready - joint-collection readiness (adjacent agent levels vs food level)
  alloc - spread of agents over distinct targets
  stab  - absence of failed loads and move reversals in a recent window
Modes and their weight-mass constraints (after normalisation):
  balanced-progress     max weight <= 0.5
  early-discovery       cov + app >= 0.6
  coverage-recovery     cov + app >= 0.6
  collection-readiness  ready + col >= 0.5
  allocation-balance    alloc >= 0.3
  late-stability        stab + col >= 0.5
beta must lie in (0, {BETA_MAX}]. Weights are nonnegative; they are normalised to sum to 1.
"""

_CARD_SCHEMA = """\
{"diagnosed_failures": [{"mode": str, "explanation": str}],
 "supporting_evidence_keys": [str],            # subset of context.evidence_keys[*].key
 "generation_constraints": {"allowed_modes": [mode], "weight_mass_hints": {component: float},
                            "beta_bounds": [low, high]},
 "risks": [str]}"""

_CANDIDATE_SCHEMA = """\
{"impl_id": "lbf-structured-pbrs-v1", "mode": mode, "beta": float,
 "active_components": [component],
 "weights": {"col": float, "app": float, "cov": float, "ready": float, "alloc": float, "stab": float},
 "metadata": {"candidate_type": "targeted" | "exploratory" | "conservative",
              "evidence_keys": [str], "expected_effect": str, "risk_notes": str}}"""

CRITIC_SYSTEM = f"""\
You diagnose why a cooperative multi-agent foraging learner is stuck at its
current training stage. You never control agents or change the learner; you
only write a guidance card for a separate proposal step.

{_SPACE}
Read the sparse-return curve, evidence keys, current configuration and any
branch history in the user message. Reply with exactly one JSON object, no
prose, matching:
{_CARD_SCHEMA}
"""

GENERATOR_SYSTEM = f"""\
You turn a guidance card into shaping configurations for a cooperative
multi-agent foraging learner. You may only choose a mode, beta and component
weights; no other reward terms exist.

{_SPACE}
Propose exactly the requested number of candidates: one "targeted" (fixes
the diagnosed bottleneck), one "exploratory" (a different direction), one
"conservative" (close to the current configuration). Respect the card's
allowed_modes and beta_bounds. Reply with exactly one JSON object, no prose:
{{"candidates": [{_CANDIDATE_SCHEMA}]}}
If the user message lists rejections, fix those candidates.
"""

MERGED_SYSTEM = f"""\
You both diagnose a cooperative multi-agent foraging learner and propose
shaping configurations for it. You may only choose a mode, beta and component
weights.

{_SPACE}
Reply with exactly one JSON object, no prose:
{{"guidance_card": {_CARD_SCHEMA},
  "candidates": [{_CANDIDATE_SCHEMA}]}}
Candidates must include one each of targeted, exploratory and conservative.
"""

SYSTEM_PROMPTS = {"critic": CRITIC_SYSTEM, "generator": GENERATOR_SYSTEM, "merged": MERGED_SYSTEM}


def build_request(
    role: str,
    context: dict,
    card: dict | None = None,
    n_candidates: int | None = None,
    feedback: list | None = None,
) -> dict:
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}")
    payload = {"task": role, "context": context}
    if card is not None:
        payload["guidance_card"] = card
    if n_candidates is not None:
        payload["n_candidates"] = n_candidates
    if feedback:
        payload["feedback"] = feedback
    return {
        "role": role,
        "system": SYSTEM_PROMPTS[role],
        "user": json.dumps(payload, sort_keys=True),
    }


def request_digest(request: dict) -> str:
    blob = json.dumps({"role": request["role"], "system": request["system"], "user": request["user"]}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


assert set(COMPONENTS) == {"col", "app", "cov", "ready", "alloc", "stab"} and len(MODES) == 6
