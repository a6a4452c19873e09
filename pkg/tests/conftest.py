from __future__ import annotations

import sys
from typing import Any

import pytest

from dci.convergence import CandidateOption, HypothesisPool, canonicalize_and_cluster
from dci.delegate import Hypothesis

# The example move from the wire-format reference, verbatim.
REFERENCE_MOVE: dict[str, Any] = {
    "move_id": "mv-042",
    "session_id": "DCI-S-001",
    "round": 2,
    "phase": "mutual_engagement",
    "actor": "Challenger",
    "mode": "critical",
    "act": "challenge",
    "intent": "test assumption",
    "target": "contribution:mv-031",
    "content": (
        "This proposal assumes delegates can self-regulate without coordination pressure. "
        "What prevents divergence?"
    ),
    "confidence": 0.78,
    "move_force": "hard",
    "meta_level": False,
}


def move_doc(**overrides: Any) -> dict[str, Any]:
    doc = {
        "move_id": "m1",
        "session_id": "S",
        "round": 1,
        "phase": "mutual_engagement",
        "actor": "alice",
        "mode": "analytical",
        "act": "frame",
        "intent": "set the lens",
        "target": "problem",
        "content": "the real question is cost",
        "confidence": 0.5,
        "move_force": "soft",
        "meta_level": False,
    }
    doc.update(overrides)
    return doc


def make_options(*labels: str) -> list[CandidateOption]:
    pool = HypothesisPool()
    for i, label in enumerate(labels):
        pool.add(f"author{i}", Hypothesis(label, f"{label} description"))
    return canonicalize_and_cluster(pool, max(len(labels), 1)).options


@pytest.fixture
def reference_move() -> dict[str, Any]:
    return dict(REFERENCE_MOVE)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda text: int(text.split("[", 1)[1].split("]", 1)[0])):
            terminalreporter.write_line(line)
