"""Experiment configuration files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .env import EnvConfig
from .errors import ConfigurationError
from .learner import LearnerConfig
from .llm.providers import ProviderSpec
from .workflow import DESK_HORIZON, FIXED_DIRECTIONS, METHODS, WorkflowBudget

ROLES = ("critic", "generator")


@dataclass(frozen=True)
class ExperimentConfig:
    env: str
    methods: tuple[str, ...]
    seeds: tuple[int, ...]
    budget: WorkflowBudget
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    providers: dict[str, ProviderSpec] = field(default_factory=lambda: {r: ProviderSpec() for r in ROLES})
    output_root: str = "run"
    fixed_direction: str = "balanced-progress"
    reference: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        """Parse and validate; unknown keys anywhere raise ``ConfigurationError``.

        ``budget`` is either a profile name (scaled to ``final_horizon``, by
        default the desk horizon) or a mapping of absolute budget fields,
        optionally with a ``profile`` key whose values it overrides.
        """
        if not isinstance(data, dict):
            raise ConfigurationError("experiment config must be a JSON object")
        known = set(cls.__dataclass_fields__) | {"final_horizon"}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown experiment fields: {sorted(unknown)}")
        for key in ("env", "methods", "seeds"):
            if key not in data:
                raise ConfigurationError(f"missing field {key!r}")
        env = data["env"]
        EnvConfig.from_name(env)
        methods = tuple(data["methods"])
        bad = [m for m in methods if m not in METHODS]
        if not methods or bad:
            raise ConfigurationError(f"methods must be a non-empty subset of {METHODS}, got {list(methods)}")
        seeds = data["seeds"]
        if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
            raise ConfigurationError("seeds must be a non-empty list of integers")
        horizon = data.get("final_horizon", DESK_HORIZON)
        raw_budget = data.get("budget", "short-2.05M")
        if isinstance(raw_budget, str):
            budget = WorkflowBudget.from_profile(raw_budget, horizon)
        elif isinstance(raw_budget, dict):
            raw_budget = dict(raw_budget)
            profile = raw_budget.pop("profile", None)
            if profile is not None:
                unknown = set(raw_budget) - set(WorkflowBudget.__dataclass_fields__)
                if unknown:
                    raise ConfigurationError(f"unknown budget fields: {sorted(unknown)}")
                budget = WorkflowBudget.from_profile(profile, horizon, **raw_budget)
            else:
                budget = WorkflowBudget.from_dict(raw_budget)
        else:
            raise ConfigurationError("budget must be a profile name or an object")
        providers_raw = data.get("providers", {})
        if not isinstance(providers_raw, dict) or set(providers_raw) - set(ROLES):
            raise ConfigurationError(f"providers must map roles {ROLES} to provider specs")
        providers = {r: ProviderSpec.from_dict(providers_raw.get(r, {})) for r in ROLES}
        direction = data.get("fixed_direction", "balanced-progress")
        if direction not in FIXED_DIRECTIONS:
            raise ConfigurationError(f"fixed_direction must be one of {FIXED_DIRECTIONS}")
        return cls(
            env=env,
            methods=methods,
            seeds=tuple(seeds),
            budget=budget,
            learner=LearnerConfig.from_dict(data.get("learner", {})),
            providers=providers,
            output_root=str(data.get("output_root", "run")),
            fixed_direction=direction,
            reference=bool(data.get("reference", False)),
        )

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "env": self.env,
            "methods": list(self.methods),
            "seeds": list(self.seeds),
            "budget": self.budget.to_dict(),
            "learner": self.learner.to_dict(),
            "providers": {r: s.to_dict() for r, s in self.providers.items()},
            "output_root": self.output_root,
            "fixed_direction": self.fixed_direction,
            "reference": self.reference,
        }
