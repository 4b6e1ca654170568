"""Level-based foraging gridworld.

A deterministic, pure-function implementation: ``reset`` and ``step`` take
and return immutable values, so replaying a recorded action sequence from
the same seed reproduces a trajectory exactly. Coordinates are ``(x, y)``
with ``y`` growing downwards.
"""

from __future__ import annotations

import json
import random
import re
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

from .errors import ConfigurationError, ContractViolation
from .seeding import derive_seed


class Action(IntEnum):
    NOOP = 0
    UP = 1
    DOWN = 2
    LEFT = 3
    RIGHT = 4
    LOAD = 5


N_ACTIONS = len(Action)

# indexed by action value; NOOP and LOAD do not move
DELTAS = ((0, 0), (0, -1), (0, 1), (-1, 0), (1, 0), (0, 0))
OPPOSITE = {1: 2, 2: 1, 3: 4, 4: 3}

_TASK_RE = re.compile(r"^(?:(?P<sight>\d+)s-)?(?P<w>\d+)x(?P<h>\d+)-(?P<n>\d+)p-(?P<f>\d+)f$")


@dataclass(frozen=True)
class EnvConfig:
    width: int
    height: int
    n_agents: int
    n_foods: int
    sight_radius: int | None = None  # None means full observability
    max_episode_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.width < 3 or self.height < 3:
            raise ConfigurationError(f"grid must be at least 3x3, got {self.width}x{self.height}")
        if not 1 <= self.n_agents <= self.width * self.height / 4:
            raise ConfigurationError(
                f"n_agents must be in [1, W*H/4 = {self.width * self.height / 4:g}], got {self.n_agents}"
            )
        if self.n_foods < 1:
            raise ConfigurationError("n_foods must be >= 1")
        if self.n_agents + self.n_foods > self.width * self.height:
            raise ConfigurationError("too many entities for the grid")
        if self.sight_radius is not None and self.sight_radius < 1:
            raise ConfigurationError("sight_radius must be 'full' or an integer >= 1")
        if self.max_episode_steps is None:
            object.__setattr__(self, "max_episode_steps", 4 * (self.width + self.height))
        elif self.max_episode_steps < 1:
            raise ConfigurationError("max_episode_steps must be >= 1")

    @property
    def name(self) -> str:
        prefix = "" if self.sight_radius is None else f"{self.sight_radius}s-"
        return f"{prefix}{self.width}x{self.height}-{self.n_agents}p-{self.n_foods}f"

    @classmethod
    def from_name(cls, name: str, **overrides) -> EnvConfig:
        """Parse a task name such as ``2s-8x8-2p-2f``."""
        match = _TASK_RE.match(name.strip())
        if match is None:
            raise ConfigurationError(f"unrecognised task name {name!r}")
        sight = match.group("sight")
        fields = dict(
            width=int(match.group("w")),
            height=int(match.group("h")),
            n_agents=int(match.group("n")),
            n_foods=int(match.group("f")),
            sight_radius=int(sight) if sight else None,
        )
        fields.update(overrides)
        return cls(**fields)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "width": self.width,
            "height": self.height,
            "n_agents": self.n_agents,
            "n_foods": self.n_foods,
            "sight_radius": "full" if self.sight_radius is None else self.sight_radius,
            "max_episode_steps": self.max_episode_steps,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> EnvConfig:
        data = dict(data)
        data.pop("name", None)
        sight = data.get("sight_radius", "full")
        data["sight_radius"] = None if sight in (None, "full") else int(sight)
        known = {"width", "height", "n_agents", "n_foods", "sight_radius", "max_episode_steps", "seed"}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown task descriptor fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> EnvConfig:
        return cls.from_dict(json.loads(text))


class EnvState(NamedTuple):
    agent_positions: tuple[tuple[int, int], ...]
    agent_levels: tuple[int, ...]
    food_positions: tuple[tuple[int, int], ...]
    food_levels: tuple[int, ...]
    food_collected: tuple[bool, ...]
    step_count: int


class Observation(NamedTuple):
    """Egocentric view of one agent.

    ``agents`` and ``foods`` hold ``(index, dx, dy, level)`` tuples relative
    to ``position``; only uncollected food is listed.
    """

    position: tuple[int, int]
    level: int
    agents: tuple[tuple[int, int, int, int], ...]
    foods: tuple[tuple[int, int, int, int], ...]
    step_fraction: float


class StepEvents(NamedTuple):
    moved: tuple[bool, ...]
    failed_loads: tuple[int, ...]  # agent indices
    collected: tuple[int, ...]  # food indices
    entered: tuple[tuple[int, int], ...]  # cells entered by successful movers


def reset(config: EnvConfig, episode_seed: int) -> tuple[EnvState, list[Observation]]:
    """Place agents and food on distinct cells drawn from the episode's PRNG stream."""
    rng = random.Random(derive_seed(config.seed, "episode", episode_seed))
    n_cells = config.width * config.height
    needed = config.n_agents + config.n_foods
    if needed > n_cells:
        raise ConfigurationError("placement impossible: too many entities for grid")
    taken: set[tuple[int, int]] = set()
    cells: list[tuple[int, int]] = []
    while len(cells) < needed:
        cell = (rng.randrange(config.width), rng.randrange(config.height))
        if cell not in taken:
            taken.add(cell)
            cells.append(cell)
    agent_levels = (1,) * config.n_agents
    max_level = sum(agent_levels)
    food_levels = tuple(rng.randint(1, max_level) for _ in range(config.n_foods))
    state = EnvState(
        agent_positions=tuple(cells[: config.n_agents]),
        agent_levels=agent_levels,
        food_positions=tuple(cells[config.n_agents :]),
        food_levels=food_levels,
        food_collected=(False,) * config.n_foods,
        step_count=0,
    )
    return state, observe(state, config)


def is_done(state: EnvState, config: EnvConfig) -> bool:
    return all(state.food_collected) or state.step_count >= config.max_episode_steps


def step(state: EnvState, actions: Sequence[int], config: EnvConfig) -> tuple[EnvState, float, bool, StepEvents]:
    """Advance one timestep; moves resolve simultaneously and conflicting moves all fail."""
    positions = state.agent_positions
    n = len(positions)
    if len(actions) != n:
        raise ContractViolation(f"joint action has length {len(actions)}, expected {n}")
    if is_done(state, config):
        raise ContractViolation("step called on a finished episode")

    width, height = config.width, config.height
    collected = state.food_collected
    food_positions = state.food_positions
    blocked = set(positions)
    for f, pos in enumerate(food_positions):
        if not collected[f]:
            blocked.add(pos)

    targets: list[tuple[int, int] | None] = [None] * n
    claims: dict[tuple[int, int], int] = {}
    for i in range(n):
        a = actions[i]
        if 1 <= a <= 4:
            dx, dy = DELTAS[a]
            x, y = positions[i]
            t = (x + dx, y + dy)
            if 0 <= t[0] < width and 0 <= t[1] < height and t not in blocked:
                targets[i] = t
                claims[t] = claims.get(t, 0) + 1
        elif a != 0 and a != 5:
            raise ContractViolation(f"invalid action {a!r} for agent {i}")

    new_positions = list(positions)
    moved = [False] * n
    entered = []
    for i in range(n):
        t = targets[i]
        if t is not None and claims[t] == 1:
            new_positions[i] = t
            moved[i] = True
            entered.append(t)

    reward = 0.0
    new_collected = list(collected)
    collected_now = []
    failed: set[int] = set()
    levels = state.agent_levels
    total_level = sum(state.food_levels)
    for f, (fx, fy) in enumerate(food_positions):
        if collected[f]:
            continue
        loaders = [
            i
            for i in range(n)
            if actions[i] == 5 and abs(new_positions[i][0] - fx) + abs(new_positions[i][1] - fy) == 1
        ]
        if not loaders:
            continue
        if sum(levels[i] for i in loaders) >= state.food_levels[f]:
            new_collected[f] = True
            collected_now.append(f)
            reward += state.food_levels[f] / total_level
        else:
            failed.update(loaders)

    next_state = EnvState(
        agent_positions=tuple(new_positions),
        agent_levels=levels,
        food_positions=food_positions,
        food_levels=state.food_levels,
        food_collected=tuple(new_collected),
        step_count=state.step_count + 1,
    )
    events = StepEvents(
        moved=tuple(moved),
        failed_loads=tuple(sorted(failed)),
        collected=tuple(collected_now),
        entered=tuple(entered),
    )
    return next_state, reward, is_done(next_state, config), events


def observe(state: EnvState, config: EnvConfig) -> list[Observation]:
    radius = config.sight_radius
    positions = state.agent_positions
    levels = state.agent_levels
    frac = state.step_count / config.max_episode_steps
    visible_foods = [
        (f, pos, state.food_levels[f]) for f, pos in enumerate(state.food_positions) if not state.food_collected[f]
    ]
    out = []
    for i, (x, y) in enumerate(positions):
        agents = []
        for j, (ox, oy) in enumerate(positions):
            if j == i:
                continue
            dx, dy = ox - x, oy - y
            if radius is None or max(abs(dx), abs(dy)) <= radius:
                agents.append((j, dx, dy, levels[j]))
        foods = []
        for f, (fx, fy), level in visible_foods:
            dx, dy = fx - x, fy - y
            if radius is None or max(abs(dx), abs(dy)) <= radius:
                foods.append((f, dx, dy, level))
        out.append(Observation((x, y), levels[i], tuple(agents), tuple(foods), frac))
    return out


Policy = Callable[[list[Observation]], Sequence[int]]


class EpisodeTrace(NamedTuple):
    """Recorded episode: ``states`` has one more entry than ``actions``."""

    states: tuple[EnvState, ...]
    actions: tuple[tuple[int, ...], ...]
    events: tuple[StepEvents, ...]
    rewards: tuple[float, ...]

    @property
    def episode_return(self) -> float:
        return sum(self.rewards)


def run_episode(policy: Policy, config: EnvConfig, episode_seed: int) -> EpisodeTrace:
    state, obs = reset(config, episode_seed)
    states, actions, events, rewards = [state], [], [], []
    done = False
    while not done:
        joint = tuple(int(a) for a in policy(obs))
        state, reward, done, ev = step(state, joint, config)
        obs = observe(state, config)
        states.append(state)
        actions.append(joint)
        events.append(ev)
        rewards.append(reward)
    return EpisodeTrace(tuple(states), tuple(actions), tuple(events), tuple(rewards))


def eval_episode_seeds(eval_seed: int, n_episodes: int) -> list[int]:
    return [derive_seed(eval_seed, "eval-episode", k) for k in range(n_episodes)]


def collect_traces(policy: Policy, config: EnvConfig, n_episodes: int, eval_seed: int) -> list[EpisodeTrace]:
    """Run greedy evaluation episodes and keep their full traces."""
    if n_episodes < 1:
        raise ContractViolation("n_episodes must be >= 1")
    return [run_episode(policy, config, s) for s in eval_episode_seeds(eval_seed, n_episodes)]


def evaluate_policy(policy: Policy, config: EnvConfig, n_episodes: int, eval_seed: int) -> float:
    """Mean undiscounted sparse return over ``n_episodes`` seeded episodes.

    The policy is queried as-is; callers pass a greedy policy. There is no
    shaping parameter on purpose: evaluation only ever sees task reward.
    """
    if n_episodes < 1:
        raise ContractViolation("n_episodes must be >= 1")
    total = 0.0
    for s in eval_episode_seeds(eval_seed, n_episodes):
        state, obs = reset(config, s)
        done = False
        while not done:
            state, reward, done, _ = step(state, policy(obs), config)
            total += reward
            if not done:
                obs = observe(state, config)
    return total / n_episodes
