"""Reference multi-agent learner: independent tabular Q-learning.

Each agent keeps a Q-table keyed by a 64-bit hash of its observation. All
agents learn from the same team reward. Training uses the shaped training
reward when a shaping configuration is supplied; evaluation always runs the
greedy policy under the sparse task reward.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import json
import random
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path

from .env import (
    N_ACTIONS,
    EnvConfig,
    EpisodeTrace,
    Observation,
    collect_traces,
    evaluate_policy,
    observe,
    reset,
    step,
)
from .errors import ConfigurationError, ContractViolation, IntegrityError
from .seeding import derive_seed
from .shaping import ShapingConfig, advance, augment, pbrs, potential, training_reward

CHECKPOINT_FORMAT = "stageshape.checkpoint"
CHECKPOINT_VERSION = 1
_ENTRY = struct.Struct("<Q6d")


@dataclass(frozen=True)
class LearnerConfig:
    learning_rate: float = 0.1
    gamma: float = 0.95
    epsilon_start: float = 1.0
    epsilon_final: float = 0.05
    # None anneals over 30% of the segment budget
    epsilon_anneal_steps: int | None = None
    seed: int = 0
    # "clipped": relative offsets clipped to +-view_radius, no absolute position;
    # "full": the whole observation
    observation_view: str = "clipped"
    view_radius: int = 3
    # step fraction is bucketed into this many bins in the table key
    time_buckets: int = 1

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ConfigurationError("learning_rate must be in (0, 1]")
        if not 0 < self.gamma <= 1:
            raise ConfigurationError("gamma must be in (0, 1]")
        if not 0 <= self.epsilon_final <= self.epsilon_start <= 1:
            raise ConfigurationError("need 0 <= epsilon_final <= epsilon_start <= 1")
        if self.epsilon_anneal_steps is not None and self.epsilon_anneal_steps < 0:
            raise ConfigurationError("epsilon_anneal_steps must be >= 0")
        if self.time_buckets < 1:
            raise ConfigurationError("time_buckets must be >= 1")
        if self.observation_view not in ("clipped", "full"):
            raise ConfigurationError(f"unknown observation_view {self.observation_view!r}")
        if self.view_radius < 1:
            raise ConfigurationError("view_radius must be >= 1")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "gamma": self.gamma,
            "epsilon_start": self.epsilon_start,
            "epsilon_final": self.epsilon_final,
            "epsilon_anneal_steps": self.epsilon_anneal_steps,
            "seed": self.seed,
            "observation_view": self.observation_view,
            "view_radius": self.view_radius,
            "time_buckets": self.time_buckets,
        }

    @classmethod
    def from_dict(cls, data: dict) -> LearnerConfig:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown learner fields: {sorted(unknown)}")
        return cls(**data)


@lru_cache(maxsize=1 << 20)
def _hash_key(canonical: tuple) -> int:
    return int.from_bytes(hashlib.blake2b(repr(canonical).encode(), digest_size=8).digest(), "little")


def _clip(v: int, r: int) -> int:
    return -r if v < -r else (min(v, r))


def observation_key(obs: Observation, view: str = "full", radius: int = 3, time_buckets: int = 1) -> int:
    """64-bit hash of the canonical serialisation of an observation view.

    The ``clipped`` view drops entity indices and the absolute position and
    clips relative offsets to ``radius``, so distant entities only keep
    their direction.
    """
    if view == "full":
        canonical = obs[:4]
    else:
        canonical = (
            obs.level,
            tuple((_clip(dx, radius), _clip(dy, radius), lv) for _, dx, dy, lv in obs.agents),
            tuple((_clip(dx, radius), _clip(dy, radius), lv) for _, dx, dy, lv in obs.foods),
        )
    if time_buckets > 1:
        canonical = (*canonical, min(time_buckets - 1, int(obs.step_fraction * time_buckets)))
    return _hash_key(canonical)


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """Immutable learner snapshot; never mutate ``q_tables`` in place."""

    env_name: str
    q_tables: tuple[dict[int, list[float]], ...]
    env_steps: int
    episodes: int
    rng_state: tuple
    epsilon: float

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([self.env_name, self.env_steps, self.episodes, repr(self.epsilon)]).encode())
        h.update(repr(self.rng_state).encode())
        for table in self.q_tables:
            h.update(b"|table|%d|" % len(table))
            h.update(b"".join(_ENTRY.pack(k, *table[k]) for k in sorted(table)))
        return h.hexdigest()

    @property
    def n_agents(self) -> int:
        return len(self.q_tables)

    def to_payload(self) -> dict:
        return {
            "env_name": self.env_name,
            "env_steps": self.env_steps,
            "episodes": self.episodes,
            "epsilon": self.epsilon,
            "rng_state": [self.rng_state[0], list(self.rng_state[1]), self.rng_state[2]],
            "q_tables": [{str(k): t[k] for k in sorted(t)} for t in self.q_tables],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> Checkpoint:
        version, internal, gauss = payload["rng_state"]
        return cls(
            env_name=payload["env_name"],
            q_tables=tuple({int(k): [float(x) for x in v] for k, v in t.items()} for t in payload["q_tables"]),
            env_steps=int(payload["env_steps"]),
            episodes=int(payload["episodes"]),
            rng_state=(version, tuple(internal), gauss),
            epsilon=float(payload["epsilon"]),
        )


def fresh_checkpoint(env_config: EnvConfig, learner_config: LearnerConfig) -> Checkpoint:
    rng = random.Random(derive_seed(learner_config.seed, "explore"))
    return Checkpoint(
        env_name=env_config.name,
        q_tables=tuple({} for _ in range(env_config.n_agents)),
        env_steps=0,
        episodes=0,
        rng_state=rng.getstate(),
        epsilon=learner_config.epsilon_start,
    )


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "fingerprint": ckpt.fingerprint,
        "payload": ckpt.to_payload(),
    }
    raw = json.dumps(doc, separators=(",", ":")).encode()
    with open(path, "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
        gz.write(raw)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        with gzip.open(path, "rb") as gz:
            doc = json.loads(gz.read())
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
            raise IntegrityError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
        ckpt = Checkpoint.from_payload(doc["payload"])
    except IntegrityError:
        raise
    except (OSError, EOFError, ValueError, KeyError, TypeError) as exc:
        raise IntegrityError(f"{path}: unreadable checkpoint ({exc})") from exc
    if ckpt.fingerprint != doc.get("fingerprint"):
        raise IntegrityError(f"{path}: fingerprint mismatch")
    return ckpt


class GreedyPolicy:
    """Exploration-free policy over a set of Q-tables (lowest action wins ties)."""

    def __init__(self, q_tables: Sequence[dict[int, list[float]]], learner_config: LearnerConfig):
        self.q_tables = q_tables
        self.key_args = (learner_config.observation_view, learner_config.view_radius, learner_config.time_buckets)

    def __call__(self, observations: list[Observation]) -> tuple[int, ...]:
        actions = []
        for table, obs in zip(self.q_tables, observations):
            qs = table.get(observation_key(obs, *self.key_args))
            if qs is None:
                actions.append(0)
            else:
                actions.append(qs.index(max(qs)))
        return tuple(actions)


@dataclass
class TrainReport:
    curve: list[tuple[int, float]]
    checkpoint: Checkpoint
    env_steps: int
    snapshots: dict[int, Checkpoint] = field(default_factory=dict)
    eval_traces: tuple[EpisodeTrace, ...] = ()


def _mean_return(traces: Sequence[EpisodeTrace]) -> float:
    # same summation order as evaluate_policy, so both paths agree bit-for-bit
    total = 0.0
    for trace in traces:
        for r in trace.rewards:
            total += r
    return total / len(traces)


def _evaluate(tables, env_config, learner_config, eval_episodes, record):
    policy = GreedyPolicy(tables, learner_config)
    eval_seed = derive_seed(learner_config.seed, "eval")
    if record:
        traces = collect_traces(policy, env_config, eval_episodes, eval_seed)
        return _mean_return(traces), tuple(traces)
    return evaluate_policy(policy, env_config, eval_episodes, eval_seed), ()


def train_segment(
    start: Checkpoint | None,
    env_config: EnvConfig,
    learner_config: LearnerConfig,
    shaping: ShapingConfig | None,
    budget: int,
    eval_every: int,
    eval_episodes: int,
    snapshot_steps: Sequence[int] = (),
    record_traces: bool = False,
) -> TrainReport:
    """Train for ``budget`` environment steps, evaluating every ``eval_every``.

    Each segment starts a new episode and truncates the running one at its
    end. A zero budget performs a single evaluation of the starting policy.
    ``snapshot_steps`` are global step counts at which to keep checkpoints.
    ``record_traces`` keeps the episode traces of the last evaluation.
    """
    if budget != 0 and not budget >= eval_every >= 1:
        raise ContractViolation(f"need budget >= eval_every >= 1 (budget={budget}, eval_every={eval_every})")
    if eval_episodes < 1:
        raise ContractViolation("eval_episodes must be >= 1")
    lc = learner_config
    if start is None:
        start = fresh_checkpoint(env_config, lc)
    if start.env_name != env_config.name or start.n_agents != env_config.n_agents:
        raise ContractViolation(f"checkpoint for {start.env_name} cannot train on {env_config.name}")

    if budget == 0:
        value, traces = _evaluate(start.q_tables, env_config, lc, eval_episodes, record_traces)
        return TrainReport([(start.env_steps, value)], start, 0, {}, traces)

    tables = [{k: list(v) for k, v in t.items()} for t in start.q_tables]
    rng = random.Random()
    rng.setstate(start.rng_state)
    anneal = lc.epsilon_anneal_steps if lc.epsilon_anneal_steps is not None else int(0.3 * budget)
    eps_start, eps_final = lc.epsilon_start, lc.epsilon_final
    alpha, gamma = lc.learning_rate, lc.gamma
    key_args = (lc.observation_view, lc.view_radius, lc.time_buckets)
    n = env_config.n_agents
    agents = range(n)
    wanted = set(snapshot_steps)

    env_steps = start.env_steps
    episodes = start.episodes
    curve: list[tuple[int, float]] = []
    snapshots: dict[int, Checkpoint] = {}
    traces: tuple[EpisodeTrace, ...] = ()
    state = None
    obs_keys: list[int] = []
    aug = None
    phi = 0.0
    eps = start.epsilon

    for t in range(1, budget + 1):
        if state is None:
            state, obs = reset(env_config, derive_seed(lc.seed, "train-episode", episodes))
            episodes += 1
            obs_keys = [observation_key(o, *key_args) for o in obs]
            if shaping is not None:
                aug = augment(state, env_config)
                phi = potential(aug, shaping)

        eps = eps_start + (eps_final - eps_start) * min(1.0, env_steps / anneal) if anneal > 0 else eps_final
        actions = []
        rows = []
        for i in agents:
            table = tables[i]
            qs = table.get(obs_keys[i])
            if qs is None:
                qs = table[obs_keys[i]] = [0.0] * N_ACTIONS
            rows.append(qs)
            if rng.random() < eps:
                actions.append(rng.randrange(N_ACTIONS))
            else:
                best = max(qs)
                if qs.count(best) == 1:
                    actions.append(qs.index(best))
                else:
                    actions.append(rng.choice([a for a in range(N_ACTIONS) if qs[a] == best]))

        state, sparse, done, events = step(state, actions, env_config)
        reward = sparse
        if shaping is not None:
            aug = advance(aug, state, actions, events)
            phi_next = potential(aug, shaping)
            reward = training_reward(sparse, pbrs(phi, phi_next, shaping.beta, gamma))
            phi = phi_next

        next_obs = observe(state, env_config)
        next_keys = [observation_key(o, *key_args) for o in next_obs]
        for i in agents:
            qs = rows[i]
            a = actions[i]
            if done:
                target = reward
            else:
                nxt = tables[i].get(next_keys[i])
                target = reward + gamma * (max(nxt) if nxt is not None else 0.0)
            qs[a] += alpha * (target - qs[a])
        obs_keys = next_keys
        env_steps += 1
        if done:
            state = None

        if env_steps in wanted:
            snapshots[env_steps] = Checkpoint(
                env_config.name,
                tuple({k: list(v) for k, v in tb.items()} for tb in tables),
                env_steps,
                episodes,
                rng.getstate(),
                eps,
            )
        if t % eval_every == 0 or t == budget:
            last = t == budget
            value, got = _evaluate(tables, env_config, lc, eval_episodes, record_traces and last)
            curve.append((env_steps, value))
            if last:
                traces = got

    final = Checkpoint(env_config.name, tuple(tables), env_steps, episodes, rng.getstate(), eps)
    return TrainReport(curve, final, budget, snapshots, traces)


def write_curve_csv(curve: Sequence[tuple[int, float]], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["env_steps", "mean_sparse_return"])
    for steps, value in curve:
        writer.writerow([int(steps), repr(float(value))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_curve_csv(path: str | Path) -> list[tuple[int, float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[:2] != ["env_steps", "mean_sparse_return"]:
            raise ContractViolation(f"{path}: expected columns env_steps,mean_sparse_return")
        return [(int(row["env_steps"]), float(row["mean_sparse_return"])) for row in reader]
