"""LLM-assisted mutation: prompt, query, parse, apply, with a random fallback."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field

from ..analysis import RelatedCode
from ..model import TestCase
from ..mutation import ApplyError, MutationConfig, apply_hint, random_mutate
from .backends import Backend, BackendConfigError, BackendError, query_backend
from .feedback import FeedbackLedger, Outcome, record_feedback
from .hints import ParseError, parse_hint
from .prompt import build_prompt

log = logging.getLogger(__name__)


@dataclass
class AssistConfig:
    backend: Backend
    rng: random.Random = field(default_factory=random.Random)
    mutation: MutationConfig = field(default_factory=MutationConfig)
    feedback_cap: int = 5


@dataclass(frozen=True)
class AssistOutcome:
    test_case: TestCase
    fallback: bool
    detail: str = ""
    prompt_chars: int = 0


def llm_assisted(tc: TestCase, apis, rc: RelatedCode, cfg: AssistConfig, ledger: FeedbackLedger) -> AssistOutcome:
    """As :func:`llm_mutate`, but also says whether the fallback was taken."""
    t = rc.target
    prompt = build_prompt(t, rc, tc, ledger.slice(t, cfg.feedback_cap))
    try:
        response = query_backend(prompt, cfg.backend)
    except BackendConfigError:
        raise
    except BackendError as e:
        log.info("backend unavailable for %s: %s", t.id, e)
        record_feedback(ledger, t, None, Outcome.PARSE_ERROR, f"no response ({type(e).__name__})")
        return AssistOutcome(_fallback(tc, apis, cfg), True, str(e), len(prompt.text))
    try:
        hint = parse_hint(response, tc.actions)
    except ParseError as e:
        record_feedback(ledger, t, None, Outcome.PARSE_ERROR, str(e))
        return AssistOutcome(_fallback(tc, apis, cfg), True, f"parse: {e}", len(prompt.text))
    try:
        new = apply_hint(tc, hint)
    except ApplyError as e:
        record_feedback(ledger, t, hint, Outcome.APPLY_ERROR, str(e))
        return AssistOutcome(_fallback(tc, apis, cfg), True, f"apply: {e}", len(prompt.text))
    return AssistOutcome(new, False, "", len(prompt.text))


def _fallback(tc: TestCase, apis, cfg: AssistConfig) -> TestCase:
    return random_mutate(tc, apis, cfg.rng, cfg.mutation)


def llm_mutate(tc: TestCase, apis, rc: RelatedCode, cfg: AssistConfig, ledger: FeedbackLedger) -> TestCase:
    """One LLM-assisted mutation of ``tc`` towards ``rc.target``.

    Malformed output and unusable hints never escape: they are recorded in the
    ledger and a random mutation is returned instead.
    """
    return llm_assisted(tc, apis, rc, cfg, ledger).test_case
