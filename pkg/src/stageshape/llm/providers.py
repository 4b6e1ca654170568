"""Provider backends and the transcript store.

A provider turns a request ``{role, system, user}`` into response text.
Remote providers speak an OpenAI-style chat-completions protocol over
``urllib``; scripted providers replay recorded transcripts; the heuristic
provider answers from a fixed rule table.
"""

from __future__ import annotations

import json
import os
import time
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Protocol

from ..errors import ConfigurationError, StageShapeError
from .heuristic import RULE_SET_VERSION, diagnose, propose
from .prompts import request_digest
from .schemas import CheckpointContext, parse_card


class ProviderError(StageShapeError):
    """Transport failure: unreachable endpoint, timeout, or exhausted transcript."""


class Provider(Protocol):
    name: str

    def complete(self, request: dict) -> str: ...


class HeuristicProvider:
    """Rule-table provider; reads the JSON payload of the user message."""

    def __init__(self, rule_set: str = RULE_SET_VERSION):
        if rule_set != RULE_SET_VERSION:
            raise ConfigurationError(f"unknown heuristic rule set {rule_set!r}")
        self.name = f"heuristic:{rule_set}"

    def complete(self, request: dict) -> str:
        payload = json.loads(request["user"])
        context = payload["context"]
        role = request["role"]
        if role == "critic":
            return json.dumps(diagnose(context).to_dict(), sort_keys=True)
        n = int(payload.get("n_candidates", 3))
        if role == "generator":
            card = parse_card(payload["guidance_card"], _context_from_dict(context))
            return json.dumps({"candidates": [c.to_dict() for c in propose(card, context, n)]}, sort_keys=True)
        if role == "merged":
            card = diagnose(context)
            return json.dumps(
                {"guidance_card": card.to_dict(), "candidates": [c.to_dict() for c in propose(card, context, n)]},
                sort_keys=True,
            )
        raise ProviderError(f"heuristic provider cannot serve role {role!r}")


def _context_from_dict(data: dict) -> CheckpointContext:
    return CheckpointContext(
        env_name=data.get("env_name", ""),
        phase=data.get("phase", ""),
        round=data.get("round", 0),
        steps_consumed=data.get("steps_consumed", 0),
        recent_curve=[tuple(p) for p in data.get("recent_curve", [])],
        evidence_keys=list(data.get("evidence_keys", [])),
    )


class ScriptedProvider:
    """Replays the non-fallback entries of a transcript in sequence order."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.name = "scripted"
        self._entries = [
            e for e in load_transcripts(self.path) if not e.get("fallback") and e.get("response") is not None
        ]
        self._cursor = 0

    @property
    def remaining(self) -> int:
        return len(self._entries) - self._cursor

    def complete(self, request: dict) -> str:
        if self._cursor >= len(self._entries):
            raise ProviderError(f"transcript {self.path} exhausted after {self._cursor} responses")
        entry = self._entries[self._cursor]
        self._cursor += 1
        if entry.get("role") != request["role"]:
            raise ProviderError(
                f"transcript entry {entry.get('seq')} is for role {entry.get('role')!r}, request is {request['role']!r}"
            )
        recorded = entry.get("request_sha256")
        if recorded and recorded != request_digest(request):
            raise ProviderError(f"transcript entry {entry.get('seq')} was recorded for a different request")
        return entry["response"]


class RemoteProvider:
    """Chat-completions client; the credential is read from an environment variable."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str | None,
        timeout: float = 60.0,
        retries: int = 2,
        backoff: float = 1.0,
    ):
        if not endpoint:
            raise ConfigurationError("remote provider needs an endpoint URL")
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.name = f"remote:{model}"
        self._key = None
        if api_key_env:
            self._key = os.environ.get(api_key_env)
            if not self._key:
                raise ConfigurationError(f"provider credential missing: environment variable {api_key_env} is not set")

    def complete(self, request: dict) -> str:
        body = json.dumps(
            {
                "model": self.model,
                "temperature": 0,
                "messages": [
                    {"role": "system", "content": request["system"]},
                    {"role": "user", "content": request["user"]},
                ],
            }
        ).encode()
        headers = {"Content-Type": "application/json"}
        if self._key:
            headers["Authorization"] = f"Bearer {self._key}"
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * attempt)
            req = urllib.request.Request(self.endpoint, data=body, headers=headers, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    doc = json.loads(resp.read())
                return doc["choices"][0]["message"]["content"]
            except (urllib.error.URLError, TimeoutError, OSError) as exc:
                last = exc
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ProviderError(f"malformed reply from {self.endpoint}: {exc}") from exc
        raise ProviderError(f"{self.endpoint} unreachable after {self.retries + 1} attempts: {last}")


@dataclass(frozen=True)
class ProviderSpec:
    kind: str = "heuristic"
    endpoint: str = ""
    model: str = ""
    api_key_env: str | None = None
    timeout: float = 60.0
    retries: int = 2
    transcript_path: str = ""
    rule_set: str = RULE_SET_VERSION

    def __post_init__(self):
        if self.kind not in ("remote", "scripted", "heuristic"):
            raise ConfigurationError(f"unknown provider kind {self.kind!r}")
        if self.kind == "scripted" and not self.transcript_path:
            raise ConfigurationError("scripted provider needs transcript_path")
        if self.kind == "remote" and not (self.endpoint and self.model):
            raise ConfigurationError("remote provider needs endpoint and model")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ProviderSpec:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown provider fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def parse(cls, text: str) -> ProviderSpec:
        """CLI shorthand: ``heuristic``, ``scripted:<path>`` or ``remote:<url>#<model>#<ENV_VAR>``."""
        kind, _, rest = text.partition(":")
        if kind == "heuristic":
            return cls()
        if kind == "scripted":
            return cls(kind="scripted", transcript_path=rest)
        if kind == "remote":
            url, _, tail = rest.partition("#")
            model, _, env = tail.partition("#")
            return cls(kind="remote", endpoint=url, model=model, api_key_env=env or None)
        raise ConfigurationError(f"cannot parse provider {text!r}")


def build_providers(specs: dict[str, ProviderSpec]) -> dict[str, Provider]:
    """Instantiate one provider per role; roles sharing a spec share an instance."""
    cache: dict[ProviderSpec, Provider] = {}
    out = {}
    for role, spec in specs.items():
        if spec not in cache:
            if spec.kind == "heuristic":
                cache[spec] = HeuristicProvider(spec.rule_set)
            elif spec.kind == "scripted":
                cache[spec] = ScriptedProvider(spec.transcript_path)
            else:
                cache[spec] = RemoteProvider(spec.endpoint, spec.model, spec.api_key_env, spec.timeout, spec.retries)
        out[role] = cache[spec]
    return out


class TranscriptStore:
    """Sequential request/response log, written to disk as each entry arrives."""

    def __init__(self, root: str | Path | None = None):
        self.root = Path(root) if root is not None else None
        self.entries: list[dict] = []
        # set by the controller while it substitutes the heuristic provider
        self.fallback_mode = False

    def record(
        self,
        phase: str,
        round_: int,
        role: str,
        attempt: int,
        provider: str,
        request: dict,
        response: str | None,
        error: str | None = None,
        fallback: bool = False,
    ) -> dict:
        entry = {
            "seq": len(self.entries),
            "phase": phase,
            "round": round_,
            "role": role,
            "attempt": attempt,
            "provider": provider,
            "fallback": fallback or self.fallback_mode,
            "request": request,
            "request_sha256": request_digest(request),
            "response": response,
            "error": error,
        }
        self.entries.append(entry)
        if self.root is not None:
            target = self.root / phase / str(round_)
            target.mkdir(parents=True, exist_ok=True)
            (target / f"{entry['seq']:04d}_{role}.json").write_text(json.dumps(entry, indent=1, sort_keys=True))
        return entry


def load_transcripts(path: str | Path) -> list[dict[str, Any]]:
    """Entries from a transcript directory tree or a single JSON list file, in seq order."""
    path = Path(path)
    if path.is_file():
        entries = json.loads(path.read_text())
        if isinstance(entries, dict):
            entries = entries.get("entries", [])
    elif path.is_dir():
        entries = [json.loads(p.read_text()) for p in path.rglob("*.json")]
    else:
        raise ConfigurationError(f"transcript path {path} does not exist")
    return sorted(entries, key=lambda e: e["seq"])
