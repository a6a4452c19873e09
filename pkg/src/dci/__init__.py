"""Structured multi-delegate deliberation with a guaranteed decision packet."""

from __future__ import annotations

from .delegate import Archetype, ArchetypeKind, Delegate, RemoteDelegate, ScriptedDelegate
from .events import EventLog
from .flow import SessionRunner, run_session
from .grammar import ActType, Move, Phase, SpeechMode, parse_move, validate_move
from .packet import DecisionPacket, validate_completeness
from .session import CouncilMember, Criterion, RoundLedger, SessionEnvelope

__all__ = [
    "ActType",
    "Archetype",
    "ArchetypeKind",
    "CouncilMember",
    "Criterion",
    "DecisionPacket",
    "Delegate",
    "EventLog",
    "Move",
    "Phase",
    "RemoteDelegate",
    "RoundLedger",
    "ScriptedDelegate",
    "SessionEnvelope",
    "SessionRunner",
    "SpeechMode",
    "parse_move",
    "run_session",
    "validate_completeness",
    "validate_move",
]
