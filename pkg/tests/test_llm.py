from __future__ import annotations

import json
import random
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from stageshape.errors import ConfigurationError
from stageshape.llm import (
    CheckpointContext,
    DiagnosisFailure,
    HeuristicProvider,
    ProviderError,
    ProviderSpec,
    RemoteProvider,
    ScriptedProvider,
    TranscriptStore,
    check_candidate,
    critic_diagnose,
    generator_propose,
    merged_propose,
)
from stageshape.llm.heuristic import DEFAULT_MODES, diagnose, propose
from stageshape.llm.prompts import build_request
from stageshape.llm.schemas import MAX_CONTEXT_BYTES, ResponseInvalid, parse_card, parse_json_object
from stageshape.shaping import CANDIDATE_TYPES, ConfigRejected, make_config

from .fuzz import fuzz_candidate, violations


def context(keys=("low_coverage",), current=None, history=(), phase="C1") -> CheckpointContext:
    return CheckpointContext(
        env_name="8x8-2p-1f",
        phase=phase,
        round=1,
        steps_consumed=80_000,
        recent_curve=[(4000 * i, 0.1 * i) for i in range(1, 6)],
        evidence_keys=[{"key": k, "severity": 0.9 - 0.1 * i} for i, k in enumerate(keys)],
        current_config=current,
        branch_history=list(history),
    )


class ListProvider:
    """Returns canned responses in order."""

    def __init__(self, responses):
        self.name = "list"
        self.responses = list(responses)
        self.requests = []

    def complete(self, request):
        self.requests.append(request)
        if not self.responses:
            raise ProviderError("no more responses")
        return self.responses.pop(0)


def test_heuristic_card_follows_top_key():
    card = diagnose(context(("low_coverage", "lone_load_failures")).to_dict())
    assert card.allowed_modes[0] == "coverage-recovery"
    assert "collection-readiness" in card.allowed_modes
    assert card.supporting_evidence_keys == ("low_coverage", "lone_load_failures")
    assert card.weight_mass_hints["cov"] == 0.5
    empty = diagnose(context(()).to_dict())
    assert empty.allowed_modes == DEFAULT_MODES and empty.supporting_evidence_keys == ()


@pytest.mark.parametrize("keys", [(), ("no_discovery",), ("target_collision", "near_success"), ("late_instability",)])
def test_heuristic_proposals_satisfy_card(keys):
    current = make_config(0.5, "balanced-progress", (0.2, 0.2, 0.2, 0.2, 0.1, 0.1)).to_dict()
    ctx = context(keys, current).to_dict()
    card = diagnose(ctx)
    configs = propose(card, ctx, 3)
    assert [c.candidate_type for c in configs] == list(CANDIDATE_TYPES)
    keys_seen = set()
    for c in configs:
        assert check_candidate(c.to_dict(), card).runtime_key() == c.runtime_key()
        keys_seen.add(c.runtime_key())
    assert len(keys_seen) == 3


def test_critic_reprompts_then_succeeds():
    good = json.dumps(diagnose(context().to_dict()).to_dict())
    provider = ListProvider(["not json", json.dumps({"diagnosed_failures": "x"}), good])
    store = TranscriptStore()
    card = critic_diagnose(context(), provider, store)
    assert card.allowed_modes[0] == "coverage-recovery"
    assert [e["attempt"] for e in store.entries] == [0, 1, 2]
    second = json.loads(provider.requests[1]["user"])
    assert "not valid JSON" in second["feedback"][0]["error"]


def test_critic_gives_up():
    with pytest.raises(DiagnosisFailure):
        critic_diagnose(context(), ListProvider(["{}"] * 3), TranscriptStore())


def test_card_with_unknown_evidence_key_is_invalid():
    data = diagnose(context(("low_coverage",)).to_dict()).to_dict()
    data["supporting_evidence_keys"] = ["made_up"]
    with pytest.raises(ResponseInvalid):
        parse_card(data, context())


def test_generator_rejection_feedback_and_fill():
    ctx = context()
    card = diagnose(ctx.to_dict())
    bad = make_config(0.5, "late-stability", (1, 0, 0, 0, 0, 0), candidate_type="targeted").to_dict()
    good = make_config(0.4, "coverage-recovery", (0, 0.5, 0.5, 0, 0, 0), candidate_type="exploratory").to_dict()
    provider = ListProvider([json.dumps({"candidates": [bad, good]})] * 3)
    store = TranscriptStore()
    configs = generator_propose(card, ctx, 3, provider, store)
    assert [c.candidate_type for c in configs] == list(CANDIDATE_TYPES)
    assert configs[1].runtime_key() == check_candidate(good, card).runtime_key()
    feedback = json.loads(provider.requests[1]["user"])["feedback"]
    assert feedback[0]["reason"] == "mode not allowed by guidance card"
    assert {"missing_candidate_types": ["targeted", "conservative"]} in feedback
    assert store.entries[-1]["fallback"] and store.entries[-1]["provider"] == "heuristic-fill"


def test_merged_role():
    provider = HeuristicProvider()
    card, configs = merged_propose(context(("approach_stall",)), 2, provider, TranscriptStore())
    assert card.allowed_modes[0] == "early-discovery"
    assert [c.candidate_type for c in configs] == ["targeted", "exploratory"]


def test_code_fenced_json_accepted():
    assert parse_json_object('```json\n{"a": 1}\n```') == {"a": 1}
    with pytest.raises(ResponseInvalid):
        parse_json_object("[1, 2]")


def test_scripted_replay_matches_and_detects_drift(tmp_path):
    store = TranscriptStore(tmp_path / "t")
    provider = HeuristicProvider()
    card = critic_diagnose(context(), provider, store)
    configs = generator_propose(card, context(), 3, provider, store)

    scripted = ScriptedProvider(tmp_path / "t")
    replay = TranscriptStore()
    card2 = critic_diagnose(context(), scripted, replay)
    configs2 = generator_propose(card2, context(), 3, scripted, replay)
    assert card2 == card and [c.to_dict() for c in configs2] == [c.to_dict() for c in configs]
    assert scripted.remaining == 0
    with pytest.raises(ProviderError):
        scripted.complete(build_request("critic", context().to_dict()))

    drifted = ScriptedProvider(tmp_path / "t")
    with pytest.raises(ProviderError):
        critic_diagnose(context(("no_discovery",)), drifted, TranscriptStore())


def test_context_is_bounded():
    history = [{"phase": "C1", "branch_id": f"b{i}", "note": "x" * 500} for i in range(200)]
    ctx = context(history=history)
    doc = ctx.bounded_dict()
    assert len(json.dumps(doc, sort_keys=True)) <= MAX_CONTEXT_BYTES
    assert doc["branch_history"][-1]["branch_id"] == "b199"


class _ChatHandler(BaseHTTPRequestHandler):
    replies: list = []
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        self.seen.append((self.headers.get("Authorization"), body))
        reply = self.replies.pop(0)
        raw = reply.encode() if isinstance(reply, str) else json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


@pytest.fixture
def chat_server():
    server = HTTPServer(("127.0.0.1", 0), _ChatHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _ChatHandler.replies, _ChatHandler.seen = [], []
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions", _ChatHandler
    server.shutdown()


def test_remote_provider_round_trip(chat_server, monkeypatch):
    url, handler = chat_server
    monkeypatch.setenv("TEST_LLM_KEY", "sekrit")
    card = diagnose(context().to_dict()).to_dict()
    handler.replies = [{"choices": [{"message": {"content": json.dumps(card)}}]}, "garbage"]
    provider = RemoteProvider(url, "test-model", "TEST_LLM_KEY", timeout=5, retries=0)
    got = critic_diagnose(context(), provider, TranscriptStore())
    assert got.to_dict() == card
    auth, body = handler.seen[0]
    assert auth == "Bearer sekrit" and body["model"] == "test-model" and body["temperature"] == 0
    with pytest.raises(ProviderError):
        provider.complete(build_request("critic", context().to_dict()))


def test_remote_provider_failures(monkeypatch):
    monkeypatch.delenv("MISSING_LLM_KEY", raising=False)
    with pytest.raises(ConfigurationError):
        RemoteProvider("http://127.0.0.1:9/", "m", "MISSING_LLM_KEY")
    unreachable = RemoteProvider("http://127.0.0.1:9/", "m", None, timeout=1, retries=1, backoff=0)
    with pytest.raises(ProviderError):
        unreachable.complete(build_request("critic", context().to_dict()))


def test_provider_spec_parsing():
    assert ProviderSpec.parse("heuristic").kind == "heuristic"
    s = ProviderSpec.parse("remote:http://x/v1#gpt#KEY")
    assert (s.endpoint, s.model, s.api_key_env) == ("http://x/v1", "gpt", "KEY")
    assert ProviderSpec.from_dict(s.to_dict()) == s
    for bad in ("remote:http://x", "scripted:", "magic"):
        with pytest.raises(ConfigurationError):
            ProviderSpec.parse(bad)


def test_fuzzed_candidates_never_break_invariants():
    rng = random.Random(1)
    card = diagnose(context().to_dict())
    for _ in range(2000):
        data = fuzz_candidate(rng)
        for c in (None, card):
            try:
                config = check_candidate(data, c)
            except ConfigRejected:
                continue
            assert violations(config) == []
            if c is not None:
                assert config.mode in card.allowed_modes
