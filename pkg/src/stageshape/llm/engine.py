"""Critic and generator calls with validation, re-prompting and fallback."""

from __future__ import annotations

from ..errors import ContractViolation, StageShapeError
from ..shaping import CANDIDATE_TYPES, ShapingConfig
from .heuristic import propose as heuristic_propose
from .prompts import build_request
from .providers import Provider, TranscriptStore
from .schemas import (
    CheckpointContext,
    GuidanceCard,
    ResponseInvalid,
    check_candidate,
    parse_candidates,
    parse_card,
    parse_json_object,
    pick_by_type,
)

MAX_ATTEMPTS = 3


class DiagnosisFailure(StageShapeError):
    """The critic produced no valid guidance card within the attempt budget."""


def _call(provider: Provider, store: TranscriptStore, ctx: CheckpointContext, attempt: int, request: dict) -> str:
    # ProviderError propagates; the failed exchange is still logged first
    try:
        text = provider.complete(request)
    except Exception as exc:
        store.record(ctx.phase, ctx.round, request["role"], attempt, provider.name, request, None, repr(exc))
        raise
    store.record(ctx.phase, ctx.round, request["role"], attempt, provider.name, request, text)
    return text


def critic_diagnose(
    context: CheckpointContext,
    provider: Provider,
    store: TranscriptStore,
    max_attempts: int = MAX_ATTEMPTS,
) -> GuidanceCard:
    ctx_doc = context.bounded_dict()
    feedback: list = []
    for attempt in range(max_attempts):
        text = _call(provider, store, context, attempt, build_request("critic", ctx_doc, feedback=feedback))
        try:
            return parse_card(parse_json_object(text), context)
        except ResponseInvalid as exc:
            feedback = [{"error": str(exc)}]
    raise DiagnosisFailure(f"no valid guidance card after {max_attempts} attempts: {feedback[0]['error']}")


def _fill(
    chosen: dict[str, ShapingConfig],
    wanted: tuple[str, ...],
    card: GuidanceCard,
    context: CheckpointContext,
    ctx_doc: dict,
    store: TranscriptStore,
) -> list[ShapingConfig]:
    missing = [t for t in wanted if t not in chosen]
    if missing:
        filled = {c.candidate_type: c for c in heuristic_propose(card, ctx_doc, len(CANDIDATE_TYPES))}
        for t in missing:
            # heuristic output is generated inside the card constraints; re-check anyway
            chosen[t] = check_candidate(filled[t].to_dict(), card)
        request = build_request("generator", ctx_doc, card.to_dict(), len(missing))
        store.record(
            context.phase,
            context.round,
            "generator",
            0,
            "heuristic-fill",
            request,
            None,
            f"filled {missing}",
            fallback=True,
        )
    return [chosen[t] for t in wanted]


def _wanted(n: int) -> tuple[str, ...]:
    if not 1 <= n <= len(CANDIDATE_TYPES):
        raise ContractViolation(f"n must be between 1 and {len(CANDIDATE_TYPES)}")
    return CANDIDATE_TYPES[:n]


def generator_propose(
    card: GuidanceCard,
    context: CheckpointContext,
    n: int,
    provider: Provider,
    store: TranscriptStore,
    max_attempts: int = MAX_ATTEMPTS,
) -> list[ShapingConfig]:
    """``n`` validated proposals with distinct candidate types, in type order."""
    wanted = _wanted(n)
    ctx_doc = context.bounded_dict()
    chosen: dict[str, ShapingConfig] = {}
    feedback: list = []
    for attempt in range(max_attempts):
        request = build_request("generator", ctx_doc, card.to_dict(), n, feedback)
        text = _call(provider, store, context, attempt, request)
        try:
            accepted, rejected = parse_candidates(parse_json_object(text), card)
        except ResponseInvalid as exc:
            feedback = [{"error": str(exc)}]
            continue
        for t, cfg in pick_by_type(accepted, wanted).items():
            chosen.setdefault(t, cfg)
        missing = [t for t in wanted if t not in chosen]
        if not missing:
            break
        feedback = rejected + [{"missing_candidate_types": missing}]
    return _fill(chosen, wanted, card, context, ctx_doc, store)


def merged_propose(
    context: CheckpointContext,
    n: int,
    provider: Provider,
    store: TranscriptStore,
    max_attempts: int = MAX_ATTEMPTS,
) -> tuple[GuidanceCard, list[ShapingConfig]]:
    """Single-model variant: one prompt returns both the card and the candidates."""
    wanted = _wanted(n)
    ctx_doc = context.bounded_dict()
    card: GuidanceCard | None = None
    chosen: dict[str, ShapingConfig] = {}
    feedback: list = []
    for attempt in range(max_attempts):
        text = _call(provider, store, context, attempt, build_request("merged", ctx_doc, None, n, feedback))
        try:
            data = parse_json_object(text)
            if card is None:
                card = parse_card(data.get("guidance_card"), context)
            accepted, rejected = parse_candidates(data, card)
        except ResponseInvalid as exc:
            feedback = [{"error": str(exc)}]
            continue
        for t, cfg in pick_by_type(accepted, wanted).items():
            chosen.setdefault(t, cfg)
        missing = [t for t in wanted if t not in chosen]
        if not missing:
            break
        feedback = rejected + [{"missing_candidate_types": missing}]
    if card is None:
        raise DiagnosisFailure(f"no valid guidance card after {max_attempts} attempts")
    return card, _fill(chosen, wanted, card, context, ctx_doc, store)
