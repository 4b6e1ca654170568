"""Critic/generator interface: prompts, schemas, providers and the call engine."""

from .engine import DiagnosisFailure, critic_diagnose, generator_propose, merged_propose
from .providers import (
    HeuristicProvider,
    ProviderError,
    ProviderSpec,
    RemoteProvider,
    ScriptedProvider,
    TranscriptStore,
    build_providers,
    load_transcripts,
)
from .schemas import CheckpointContext, GuidanceCard, ResponseInvalid, check_candidate

__all__ = [
    "CheckpointContext",
    "DiagnosisFailure",
    "GuidanceCard",
    "HeuristicProvider",
    "ProviderError",
    "ProviderSpec",
    "RemoteProvider",
    "ResponseInvalid",
    "ScriptedProvider",
    "TranscriptStore",
    "build_providers",
    "check_candidate",
    "critic_diagnose",
    "generator_propose",
    "load_transcripts",
    "merged_propose",
]
