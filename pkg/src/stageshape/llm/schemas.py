"""Structured objects exchanged with the critic and generator roles."""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

from ..errors import StageShapeError
from ..shaping import (
    BETA_MAX,
    CANDIDATE_TYPES,
    COMPONENTS,
    MODES,
    ConfigRejected,
    ShapingConfig,
    normalize_and_validate,
)

MAX_CONTEXT_BYTES = 32 * 1024

MODE_NOT_ALLOWED = "mode not allowed by guidance card"
BETA_NOT_ALLOWED = "beta outside guidance bounds"
BAD_CANDIDATE_TYPE = "unknown candidate type"


class ResponseInvalid(StageShapeError):
    """A provider response failed to parse or validate."""


@dataclass
class CheckpointContext:
    env_name: str
    phase: str
    round: int
    steps_consumed: int
    recent_curve: list[tuple[int, float]]
    evidence_summary: dict | None = None
    evidence_keys: list[dict] = field(default_factory=list)
    current_config: dict | None = None
    branch_history: list[dict] = field(default_factory=list)
    reference_window: list[tuple[int, float]] | None = None

    @property
    def key_names(self) -> list[str]:
        return [k["key"] for k in self.evidence_keys]

    def to_dict(self) -> dict:
        return {
            "env_name": self.env_name,
            "phase": self.phase,
            "round": self.round,
            "steps_consumed": self.steps_consumed,
            "recent_curve": [[int(s), float(v)] for s, v in self.recent_curve],
            "evidence_summary": self.evidence_summary,
            "evidence_keys": list(self.evidence_keys),
            "current_config": self.current_config,
            "branch_history": list(self.branch_history),
            "reference_window": None
            if self.reference_window is None
            else [[int(s), float(v)] for s, v in self.reference_window],
        }

    def bounded_dict(self, limit: int = MAX_CONTEXT_BYTES) -> dict:
        """``to_dict`` with the oldest history and curve points dropped until it fits."""
        data = self.to_dict()
        while len(json.dumps(data, sort_keys=True)) > limit:
            if data["branch_history"]:
                data["branch_history"] = data["branch_history"][1:]
            elif data["reference_window"] and len(data["reference_window"]) > 1:
                data["reference_window"] = data["reference_window"][1:]
            elif len(data["recent_curve"]) > 1:
                data["recent_curve"] = data["recent_curve"][1:]
            else:
                break
        return data


@dataclass(frozen=True)
class GuidanceCard:
    diagnosed_failures: tuple[dict, ...]
    supporting_evidence_keys: tuple[str, ...]
    allowed_modes: tuple[str, ...]
    weight_mass_hints: dict[str, float]
    beta_bounds: tuple[float, float]
    risks: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "diagnosed_failures": [dict(f) for f in self.diagnosed_failures],
            "supporting_evidence_keys": list(self.supporting_evidence_keys),
            "generation_constraints": {
                "allowed_modes": list(self.allowed_modes),
                "weight_mass_hints": dict(self.weight_mass_hints),
                "beta_bounds": list(self.beta_bounds),
            },
            "risks": list(self.risks),
        }


def _str_list(value: Any, name: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ResponseInvalid(f"{name} must be a list of strings")
    return value


def _number(value: Any, name: str) -> float:
    try:
        ok = not isinstance(value, bool) and isinstance(value, (int, float)) and math.isfinite(float(value))
    except OverflowError:
        ok = False
    if not ok:
        raise ResponseInvalid(f"{name} must be a finite number")
    return float(value)


def parse_card(data: Any, context: CheckpointContext) -> GuidanceCard:
    if not isinstance(data, Mapping):
        raise ResponseInvalid("guidance card must be a JSON object")
    failures = data.get("diagnosed_failures")
    if not isinstance(failures, list):
        raise ResponseInvalid("diagnosed_failures must be a list")
    parsed_failures = []
    for i, item in enumerate(failures):
        if not isinstance(item, Mapping) or not isinstance(item.get("mode"), str):
            raise ResponseInvalid(f"diagnosed_failures[{i}] needs a string 'mode'")
        parsed_failures.append({"mode": item["mode"], "explanation": str(item.get("explanation", ""))})
    keys = _str_list(data.get("supporting_evidence_keys"), "supporting_evidence_keys")
    known = set(context.key_names)
    stray = [k for k in keys if k not in known]
    if stray:
        raise ResponseInvalid(f"supporting_evidence_keys not present in context: {stray}")
    constraints = data.get("generation_constraints")
    if not isinstance(constraints, Mapping):
        raise ResponseInvalid("generation_constraints must be an object")
    modes = _str_list(constraints.get("allowed_modes", []), "allowed_modes")
    bad_modes = [m for m in modes if m not in MODES]
    if bad_modes:
        raise ResponseInvalid(f"unknown modes in allowed_modes: {bad_modes}")
    hints_raw = constraints.get("weight_mass_hints", {})
    if not isinstance(hints_raw, Mapping):
        raise ResponseInvalid("weight_mass_hints must be an object")
    hints = {}
    for comp, value in hints_raw.items():
        if comp not in COMPONENTS:
            raise ResponseInvalid(f"unknown component in weight_mass_hints: {comp!r}")
        v = _number(value, f"weight_mass_hints.{comp}")
        if not 0 <= v <= 1:
            raise ResponseInvalid(f"weight_mass_hints.{comp} must be in [0, 1]")
        hints[comp] = v
    bounds = constraints.get("beta_bounds", [0.0, BETA_MAX])
    if not isinstance(bounds, list) or len(bounds) != 2:
        raise ResponseInvalid("beta_bounds must be [low, high]")
    lo, hi = _number(bounds[0], "beta_bounds[0]"), _number(bounds[1], "beta_bounds[1]")
    if not 0 <= lo <= hi <= BETA_MAX or hi == 0:
        raise ResponseInvalid(f"beta_bounds must satisfy 0 <= low <= high <= {BETA_MAX}, high > 0")
    risks = _str_list(data.get("risks", []), "risks")
    return GuidanceCard(
        diagnosed_failures=tuple(parsed_failures),
        supporting_evidence_keys=tuple(keys),
        allowed_modes=tuple(dict.fromkeys(modes)),
        weight_mass_hints=hints,
        beta_bounds=(lo, hi),
        risks=tuple(risks),
    )


def check_candidate(data: Any, card: GuidanceCard | None) -> ShapingConfig:
    """Parse, normalise and constrain one candidate; raises ``ConfigRejected``."""
    config = normalize_and_validate(ShapingConfig.from_dict(data))
    if config.candidate_type not in CANDIDATE_TYPES:
        raise ConfigRejected(BAD_CANDIDATE_TYPE, repr(config.candidate_type))
    if card is not None:
        if card.allowed_modes and config.mode not in card.allowed_modes:
            raise ConfigRejected(MODE_NOT_ALLOWED, f"{config.mode} not in {list(card.allowed_modes)}")
        lo, hi = card.beta_bounds
        if not lo <= config.beta <= hi:
            raise ConfigRejected(BETA_NOT_ALLOWED, f"beta={config.beta} not in [{lo}, {hi}]")
    return config


def parse_candidates(data: Any, card: GuidanceCard | None) -> tuple[list[ShapingConfig], list[dict]]:
    """Split a generator response into accepted configs and rejection records."""
    if not isinstance(data, Mapping) or not isinstance(data.get("candidates"), list):
        raise ResponseInvalid("response must be an object with a 'candidates' list")
    accepted, rejected = [], []
    for i, item in enumerate(data["candidates"]):
        try:
            accepted.append(check_candidate(item, card))
        except ConfigRejected as exc:
            rejected.append({"index": i, "reason": exc.reason, "detail": exc.detail})
    return accepted, rejected


def pick_by_type(configs: Sequence[ShapingConfig], types: Sequence[str]) -> dict[str, ShapingConfig]:
    """First accepted config of each wanted candidate type."""
    out: dict[str, ShapingConfig] = {}
    for config in configs:
        if config.candidate_type in types and config.candidate_type not in out:
            out[config.candidate_type] = config
    return out


def parse_json_object(text: str) -> Any:
    """Decode a response that must be a single JSON object (code fences tolerated)."""
    stripped = text.strip()
    if stripped.startswith("```"):
        stripped = stripped.split("\n", 1)[1] if "\n" in stripped else ""
        if stripped.rstrip().endswith("```"):
            stripped = stripped.rstrip()[:-3]
    try:
        data = json.loads(stripped)
    except json.JSONDecodeError as exc:
        raise ResponseInvalid(f"response is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ResponseInvalid("response must be a JSON object")
    return data
