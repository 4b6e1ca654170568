"""Structured potential-based reward shaping.

A shaping configuration is ``(beta, mode, weights)`` over six potential
components. The potential of an augmented state is the weighted sum of the
components, each bounded in ``[0, 1]``; the shaping reward is
``beta * (gamma * phi(s') - phi(s))``.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, replace
from typing import Any, NamedTuple

from .env import OPPOSITE, EnvConfig, EnvState, StepEvents
from .errors import StageShapeError

COMPONENTS = ("col", "app", "cov", "ready", "alloc", "stab")
FOOD_COMPONENTS = frozenset({"col", "app", "ready", "alloc"})
MODES = (
    "balanced-progress",
    "early-discovery",
    "coverage-recovery",
    "collection-readiness",
    "allocation-balance",
    "late-stability",
)
CANDIDATE_TYPES = ("targeted", "exploratory", "conservative")
IMPL_ID = "lbf-structured-pbrs-v1"
BETA_MAX = 1.0
STABILITY_WINDOW = 8
ACTIVE_THRESHOLD = 0.05
_SUM_TOL = 1e-9

# rejection reasons fed back to the generator
ALL_ZERO = "all-zero weights"
NEGATIVE_WEIGHT = "negative weight"
BETA_RANGE = "beta out of range"
UNKNOWN_COMPONENT = "unknown component"
UNKNOWN_MODE = "unknown mode"
MODE_MASS = "mode mass constraint"
NON_FINITE = "non-finite value"
SCHEMA = "schema violation"


class ConfigRejected(StageShapeError, ValueError):
    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


@dataclass(frozen=True)
class ShapingConfig:
    beta: float
    mode: str
    weights: Mapping[str, float]
    impl_id: str = IMPL_ID
    candidate_type: str = ""
    evidence_keys: tuple[str, ...] = ()
    expected_effect: str = ""
    risk_notes: str = ""

    @property
    def active_components(self) -> tuple[str, ...]:
        return tuple(k for k in COMPONENTS if self.weights.get(k, 0.0) > ACTIVE_THRESHOLD)

    def weight_vector(self) -> tuple[float, ...]:
        return tuple(float(self.weights.get(k, 0.0)) for k in COMPONENTS)

    def runtime_key(self) -> tuple:
        """The fields that define the shaping signal; metadata is excluded."""
        return (self.impl_id, self.mode, self.beta, self.weight_vector())

    def to_dict(self) -> dict:
        return {
            "impl_id": self.impl_id,
            "mode": self.mode,
            "beta": self.beta,
            "active_components": list(self.active_components),
            "weights": {k: float(self.weights.get(k, 0.0)) for k in COMPONENTS},
            "metadata": {
                "candidate_type": self.candidate_type,
                "evidence_keys": list(self.evidence_keys),
                "expected_effect": self.expected_effect,
                "risk_notes": self.risk_notes,
            },
        }

    @classmethod
    def from_dict(cls, data: Any) -> ShapingConfig:
        """Parse the candidate JSON schema without semantic validation.

        Structural problems raise ``ConfigRejected``; range and mode checks
        are left to :func:`normalize_and_validate`.
        """
        if not isinstance(data, Mapping):
            raise ConfigRejected(SCHEMA, "candidate must be a JSON object")
        for key in ("mode", "beta", "weights"):
            if key not in data:
                raise ConfigRejected(SCHEMA, f"missing field {key!r}")
        mode = data["mode"]
        if not isinstance(mode, str):
            raise ConfigRejected(UNKNOWN_MODE, f"mode must be a string, got {type(mode).__name__}")
        beta = _as_real(data["beta"], "beta")
        raw_weights = data["weights"]
        if not isinstance(raw_weights, Mapping):
            raise ConfigRejected(SCHEMA, "weights must be an object")
        weights = {}
        for key, value in raw_weights.items():
            if key not in COMPONENTS:
                raise ConfigRejected(UNKNOWN_COMPONENT, repr(key))
            weights[key] = _as_real(value, f"weights.{key}")
        active = data.get("active_components", [])
        if not isinstance(active, list):
            raise ConfigRejected(SCHEMA, "active_components must be a list")
        for key in active:
            if key not in COMPONENTS:
                raise ConfigRejected(UNKNOWN_COMPONENT, repr(key))
        impl_id = data.get("impl_id", IMPL_ID)
        if impl_id != IMPL_ID:
            raise ConfigRejected(SCHEMA, f"unsupported impl_id {impl_id!r}")
        meta = data.get("metadata", {})
        if not isinstance(meta, Mapping):
            raise ConfigRejected(SCHEMA, "metadata must be an object")
        evidence = meta.get("evidence_keys", [])
        if not isinstance(evidence, list):
            evidence = []
        return cls(
            beta=beta,
            mode=mode,
            weights=weights,
            impl_id=IMPL_ID,
            candidate_type=str(meta.get("candidate_type", "")),
            evidence_keys=tuple(str(k) for k in evidence),
            expected_effect=str(meta.get("expected_effect", "")),
            risk_notes=str(meta.get("risk_notes", "")),
        )


def _as_real(value: Any, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigRejected(SCHEMA, f"{name} must be a number")
    try:
        out = float(value)
    except OverflowError:
        raise ConfigRejected(NON_FINITE, name) from None
    if not math.isfinite(out):
        raise ConfigRejected(NON_FINITE, name)
    return out


def _finite_or_none(value: Any) -> float | None:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return None
    try:
        out = float(value)
    except OverflowError:
        return None
    return out if math.isfinite(out) else None


def check_mode_mass(mode: str, w: Mapping[str, float]) -> bool:
    if mode in ("early-discovery", "coverage-recovery"):
        return w["cov"] + w["app"] >= 0.6
    if mode == "collection-readiness":
        return w["ready"] + w["col"] >= 0.5
    if mode == "allocation-balance":
        return w["alloc"] >= 0.3
    if mode == "late-stability":
        return w["stab"] + w["col"] >= 0.5
    if mode == "balanced-progress":
        return max(w.values()) <= 0.5
    raise ConfigRejected(UNKNOWN_MODE, repr(mode))


def normalize_and_validate(raw: ShapingConfig) -> ShapingConfig:
    """Validate an untrusted configuration and return it with normalised weights.

    Raises ``ConfigRejected`` whose ``reason`` names the failed check.
    """
    if raw.impl_id != IMPL_ID:
        raise ConfigRejected(SCHEMA, f"unsupported impl_id {raw.impl_id!r}")
    if raw.mode not in MODES:
        raise ConfigRejected(UNKNOWN_MODE, repr(raw.mode))
    for key in raw.weights:
        if key not in COMPONENTS:
            raise ConfigRejected(UNKNOWN_COMPONENT, repr(key))
    beta = _finite_or_none(raw.beta)
    if beta is None:
        raise ConfigRejected(BETA_RANGE, f"beta={raw.beta!r}")
    if not 0.0 < beta <= BETA_MAX:
        raise ConfigRejected(BETA_RANGE, f"beta={beta!r} not in (0, {BETA_MAX}]")
    values = []
    for key in COMPONENTS:
        v = raw.weights.get(key, 0.0)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigRejected(SCHEMA, f"weights.{key} must be a number")
        fv = _finite_or_none(v)
        if fv is None:
            raise ConfigRejected(NON_FINITE, f"weights.{key}={v!r}")
        if fv < 0:
            raise ConfigRejected(NEGATIVE_WEIGHT, f"weights.{key}={v!r}")
        values.append(fv)
    try:
        total = math.fsum(values)
    except OverflowError:
        total = math.inf
    if total <= 0.0:
        raise ConfigRejected(ALL_ZERO)
    if not math.isfinite(total):
        raise ConfigRejected(NON_FINITE, "weight sum overflows")
    # skipping an already-normalised vector keeps the operation idempotent
    if abs(total - 1.0) > 1e-12:
        values = [v / total for v in values]
    if not all(math.isfinite(v) for v in values) or abs(math.fsum(values) - 1.0) > _SUM_TOL:
        raise ConfigRejected(ALL_ZERO, "weights too small to normalise")
    weights = dict(zip(COMPONENTS, values))
    if not check_mode_mass(raw.mode, weights):
        raise ConfigRejected(MODE_MASS, f"mode {raw.mode} with weights {weights}")
    return replace(raw, beta=beta, weights=weights)


def make_config(beta: float, mode: str, weights: Sequence[float] | Mapping[str, float], **meta) -> ShapingConfig:
    """Build and validate a configuration from a weight vector in component order."""
    if not isinstance(weights, Mapping):
        weights = dict(zip(COMPONENTS, weights))
    return normalize_and_validate(ShapingConfig(beta=beta, mode=mode, weights=dict(weights), **meta))


# ---------------------------------------------------------------------------
# augmented state


class AugmentedState(NamedTuple):
    """Environment state plus the episode cache used only by the potential."""

    env: EnvState
    config: EnvConfig
    visited_cells: frozenset
    discovered_foods: frozenset
    failed_loads: tuple[tuple[bool, ...], ...]  # per agent, last STABILITY_WINDOW steps
    last_moves: tuple[tuple[int, ...], ...]  # per agent, last STABILITY_WINDOW actions
    targets: tuple[int | None, ...]
    recent_failed: int = 0  # failed loads inside the window, all agents
    recent_reversals: int = 0  # opposite consecutive moves inside the window


def _nearest_targets(env: EnvState) -> tuple[int | None, ...]:
    foods = [(f, pos) for f, pos in enumerate(env.food_positions) if not env.food_collected[f]]
    out = []
    for x, y in env.agent_positions:
        best, best_d = None, None
        for f, (fx, fy) in foods:
            d = abs(fx - x) + abs(fy - y)
            if best_d is None or d < best_d:
                best, best_d = f, d
        out.append(best)
    return tuple(out)


def _visible_foods(env: EnvState, config: EnvConfig) -> set[int]:
    radius = config.sight_radius
    if radius is None:
        return set(range(len(env.food_positions)))
    seen = set()
    for f, (fx, fy) in enumerate(env.food_positions):
        for x, y in env.agent_positions:
            if max(abs(fx - x), abs(fy - y)) <= radius:
                seen.add(f)
                break
    return seen


def augment(env: EnvState, config: EnvConfig) -> AugmentedState:
    """Initial augmented state of an episode."""
    n = len(env.agent_positions)
    return AugmentedState(
        env=env,
        config=config,
        visited_cells=frozenset(env.agent_positions),
        discovered_foods=frozenset(_visible_foods(env, config)),
        failed_loads=((),) * n,
        last_moves=((),) * n,
        targets=_nearest_targets(env),
    )


def advance(aug: AugmentedState, env: EnvState, actions: Sequence[int], events: StepEvents) -> AugmentedState:
    """Fold one transition into the cache; a pure function of its inputs."""
    visited = aug.visited_cells
    if events.entered and not visited.issuperset(events.entered):
        visited = visited | frozenset(events.entered)
    discovered = aug.discovered_foods
    if len(discovered) < len(env.food_positions):
        discovered = discovered | frozenset(_visible_foods(env, aug.config))
    failed_set = events.failed_loads
    w = STABILITY_WINDOW
    n_failed = aug.recent_failed
    n_rev = aug.recent_reversals
    failed = []
    moves = []
    for i, buf in enumerate(aug.failed_loads):
        flag = i in failed_set
        grown = buf + (flag,)
        n_failed += flag
        if len(grown) > w:
            n_failed -= grown[0]
            grown = grown[1:]
        failed.append(grown)
        mbuf = aug.last_moves[i]
        a = int(actions[i])
        if mbuf and OPPOSITE.get(mbuf[-1]) == a:
            n_rev += 1
        grown = mbuf + (a,)
        if len(grown) > w:
            if OPPOSITE.get(grown[0]) == grown[1]:
                n_rev -= 1
            grown = grown[1:]
        moves.append(grown)
    return AugmentedState(
        env, aug.config, visited, discovered, tuple(failed), tuple(moves), _nearest_targets(env), n_failed, n_rev
    )


def count_reversals(moves: Sequence[int]) -> int:
    return sum(1 for a, b in zip(moves, moves[1:]) if OPPOSITE.get(a) == b)


# ---------------------------------------------------------------------------
# potential components


def phi_col(s: AugmentedState) -> float:
    env = s.env
    total = sum(env.food_levels)
    return sum(lv for lv, c in zip(env.food_levels, env.food_collected) if c) / total


def phi_app(s: AugmentedState) -> float:
    env = s.env
    foods = [pos for pos, c in zip(env.food_positions, env.food_collected) if not c]
    if not foods:
        return 1.0
    scale = s.config.width + s.config.height
    dist = 0
    for x, y in env.agent_positions:
        dist += min(abs(fx - x) + abs(fy - y) for fx, fy in foods)
    return 1.0 - dist / (len(env.agent_positions) * scale)


def phi_cov(s: AugmentedState) -> float:
    cfg = s.config
    return 0.5 * (len(s.visited_cells) / (cfg.width * cfg.height)) + 0.5 * (len(s.discovered_foods) / cfg.n_foods)


def phi_ready(s: AugmentedState) -> float:
    env = s.env
    total, count = 0.0, 0
    for (fx, fy), level, c in zip(env.food_positions, env.food_levels, env.food_collected):
        if c:
            continue
        adjacent = sum(
            al for (x, y), al in zip(env.agent_positions, env.agent_levels) if abs(fx - x) + abs(fy - y) == 1
        )
        total += min(1.0, adjacent / level)
        count += 1
    return 1.0 if count == 0 else total / count


def phi_alloc(s: AugmentedState) -> float:
    remaining = s.env.food_collected.count(False)
    if remaining == 0:
        return 1.0
    distinct = len({t for t in s.targets if t is not None})
    return distinct / min(len(s.env.agent_positions), remaining)


def phi_stab(s: AugmentedState) -> float:
    n = len(s.env.agent_positions)
    bad = s.recent_failed + s.recent_reversals
    return min(1.0, max(0.0, 1.0 - bad / (n * STABILITY_WINDOW)))


COMPONENT_FUNCS = {
    "col": phi_col,
    "app": phi_app,
    "cov": phi_cov,
    "ready": phi_ready,
    "alloc": phi_alloc,
    "stab": phi_stab,
}


class PotentialBreakdown(NamedTuple):
    components: dict[str, float]
    total: float


def compute_potential(s: AugmentedState, config: ShapingConfig) -> PotentialBreakdown:
    comps = {k: COMPONENT_FUNCS[k](s) for k in COMPONENTS}
    total = 0.0
    for k in COMPONENTS:
        total += config.weights.get(k, 0.0) * comps[k]
    return PotentialBreakdown(comps, total)


def potential(s: AugmentedState, config: ShapingConfig) -> float:
    """Total potential, evaluating only components with nonzero weight."""
    total = 0.0
    weights = config.weights
    for k in COMPONENTS:
        w = weights.get(k, 0.0)
        if w:
            total += w * COMPONENT_FUNCS[k](s)
    return total


def pbrs(phi: float, phi_next: float, beta: float, gamma: float) -> float:
    return beta * (gamma * phi_next - phi)


def shaping_reward(s: AugmentedState, s_next: AugmentedState, config: ShapingConfig, gamma: float) -> float:
    return pbrs(potential(s, config), potential(s_next, config), config.beta, gamma)


def training_reward(sparse: float, shaped: float) -> float:
    """Reward routed to the learner; evaluation must use ``sparse`` alone."""
    return sparse + shaped
