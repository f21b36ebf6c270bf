"""Per-target memory of previous hints and how they fared."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..model import MutationHint, Target

FEEDBACK_CAP = 5


class Outcome(str, enum.Enum):
    TARGET_COVERED = "TargetCovered"
    NOT_COVERED = "NotCovered"
    APPLY_ERROR = "ApplyError"
    PARSE_ERROR = "ParseError"


@dataclass(frozen=True)
class FeedbackEntry:
    hint: MutationHint | None
    outcome: Outcome
    detail: str = ""

    def describe(self) -> str:
        outcome = self.outcome.value + (f": {self.detail}" if self.detail else "")
        return outcome


@dataclass
class FeedbackLedger:
    entries: dict = field(default_factory=dict)  # Target -> [FeedbackEntry]

    def record(self, target: Target, hint: MutationHint | None, outcome: Outcome, detail: str = "") -> None:
        self.entries.setdefault(target, []).append(FeedbackEntry(hint, Outcome(outcome), detail))

    def history(self, target: Target) -> list:
        return list(self.entries.get(target, ()))

    def slice(self, target: Target, cap: int = FEEDBACK_CAP) -> list:
        """The most recent entries for ``target``, newest first."""
        return self.history(target)[::-1][:cap]


def record_feedback(ledger: FeedbackLedger, t: Target, h: MutationHint | None, outcome: Outcome, detail: str = ""):
    ledger.record(t, h, outcome, detail)
