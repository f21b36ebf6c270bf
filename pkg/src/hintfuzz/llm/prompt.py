"""Prompt construction and the matching reader used by the offline oracle.

A prompt has six sections, each opened by a line ``=== (<n>) <title> ===``.
The context section holds one block per placeholder, opened by ``<<Name>>``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache

from ..analysis import RelatedCode
from ..model import MutationHint, TestCase
from .feedback import FeedbackEntry, Outcome
from .hints import hint_from_dict, serialize_hint

SECTION_TITLES = (
    "Task",
    "Reasoning steps",
    "Control-flow attention",
    "Context",
    "Output format",
    "Feedback",
)
PLACEHOLDERS = (
    "Target",
    "LineCode",
    "DefUseChain",
    "CalledFunctionDefinition",
    "FunctionCode",
    "RestCallActions",
)
NONE_MARK = "(none)"
NO_ATTEMPTS = "There are no previous attempts for this target."

_TASK = """\
You are helping a coverage-guided REST API fuzzer. One coverage target in the
service below is still uncovered. Propose a single change to one field of the
given test case so that executing it covers the target."""

_STEPS = """\
Work through these steps:
  a. Select the REST call action most likely to reach the target code.
  b. Locate the parameter type (path, query, header or body) and the field
     whose value flows into the target condition.
  c. Revise that field to a value that drives the condition to the expected
     outcome given in the target id."""

_ATTENTION = """\
Pay attention to control flow. The target decision may only execute when
earlier conditions in the function hold, and values may reach it indirectly
through assignments, parameters of the enclosing function or constants
declared elsewhere. The new value must satisfy every condition on the path."""

_FORMAT = """\
Reply with one JSON object and nothing else inside it:
  {"action": <action index>, "parameterType": "path|query|header|body",
   "field": "<field name, dotted for nested body fields>", "newValue": <value>}
Examples:
  {"action": 0, "parameterType": "body", "field": "address.zip", "newValue": "10115"}
  {"action": 1, "parameterType": "query", "field": "limit", "newValue": 0}"""

_SECTION_RE = re.compile(r"^=== \((\d)\) (.+) ===$", re.M)
_PLACEHOLDER_RE = re.compile(r"^<<(\w+)>>(.*)$", re.M)
_CHAIN_ENTRY_RE = re.compile(r"^([A-Za-z_][\w.]*):(\d+): ", re.M)
_FIRST_LINE_RE = re.compile(r"first line (\d+)")
_decoder = json.JSONDecoder()


@dataclass(frozen=True)
class Prompt:
    sections: tuple  # (title, body) in order

    @property
    def text(self) -> str:
        return "\n".join(f"=== ({i}) {title} ===\n{body}\n" for i, (title, body) in enumerate(self.sections, 1))

    def section(self, title: str) -> str:
        return dict(self.sections)[title]

    def __str__(self):
        return self.text


def _action_line(i: int, action) -> str:
    memo = action.__dict__.setdefault("_prompt_lines", {})  # actions are immutable
    line = memo.get(i)
    if line is None:
        line = memo[i] = json.dumps({"index": i, **action.to_dict()}, sort_keys=True, separators=(",", ":"))
    return line


def render_actions(tc: TestCase) -> str:
    return "\n".join(_action_line(i, a) for i, a in enumerate(tc.actions))


def render_feedback(entries) -> str:
    if not entries:
        return NO_ATTEMPTS
    lines = ["Previous hints for this target, most recent first:"]
    for e in entries:
        hint = serialize_hint(e.hint) if e.hint is not None else "(no usable hint)"
        lines.append(f"- {hint} -> {e.describe()}")
    lines.append("Do not repeat a hint that failed; use the outcomes to revise your reasoning.")
    return "\n".join(lines)


def render_context(rc: RelatedCode, tc: TestCase) -> str:
    chain = "\n".join(f"{e.ref.unit}:{e.ref.line}: {e.text}" for e in rc.def_use_chain) or NONE_MARK
    called = "\n\n".join(rc.called_function_defs) or NONE_MARK
    blocks = [
        ("Target", "", rc.target.id),
        ("LineCode", "", rc.target_line_text),
        ("DefUseChain", "", chain),
        ("CalledFunctionDefinition", "", called),
        ("FunctionCode", f" (first line {rc.function_start_line})", rc.enclosing_function_text),
        ("RestCallActions", "", render_actions(tc)),
    ]
    return "\n".join(f"<<{name}>>{suffix}\n{body}" for name, suffix, body in blocks)


def build_prompt(t, rc: RelatedCode, tc: TestCase, ledger_slice=()) -> Prompt:
    if rc.target != t:
        raise ValueError("related code belongs to a different target")
    return Prompt(
        (
            (SECTION_TITLES[0], _TASK),
            (SECTION_TITLES[1], _STEPS),
            (SECTION_TITLES[2], _ATTENTION),
            (SECTION_TITLES[3], render_context(rc, tc)),
            (SECTION_TITLES[4], _FORMAT),
            (SECTION_TITLES[5], render_feedback(list(ledger_slice))),
        )
    )


# ---------------------------------------------------------------------------
# Reading prompts back
# ---------------------------------------------------------------------------


def split_sections(text: str) -> list:
    """``[(number, title, body)]`` in document order."""
    marks = list(_SECTION_RE.finditer(text))
    out = []
    for i, m in enumerate(marks):
        end = marks[i + 1].start() if i + 1 < len(marks) else len(text)
        out.append((int(m.group(1)), m.group(2), text[m.end() + 1 : end].rstrip("\n")))
    return out


def split_placeholders(context: str) -> dict:
    """``name -> (suffix, body)`` for every placeholder block."""
    marks = list(_PLACEHOLDER_RE.finditer(context))
    out = {}
    for i, m in enumerate(marks):
        end = marks[i + 1].start() if i + 1 < len(marks) else len(context)
        out[m.group(1)] = (m.group(2).strip(), context[m.end() + 1 : end].rstrip("\n"))
    return out


@dataclass(frozen=True)
class ParsedPrompt:
    target_id: str
    line_code: str
    chain: tuple  # (unit, line, text)
    called_text: str
    function_text: str
    function_first_line: int
    actions: tuple  # action dicts
    feedback: tuple  # (hint or None, outcome text)

    @property
    def bundle_key(self) -> tuple:
        return (self.target_id, self.line_code, self.chain, self.called_text, self.function_text, self.function_first_line)


def _parse_chain(body: str) -> tuple:
    if body.strip() == NONE_MARK:
        return ()
    marks = list(_CHAIN_ENTRY_RE.finditer(body))
    out = []
    for i, m in enumerate(marks):
        end = marks[i + 1].start() if i + 1 < len(marks) else len(body)
        out.append((m.group(1), int(m.group(2)), body[m.end() : end].rstrip("\n")))
    return tuple(out)


@lru_cache(maxsize=4096)
def _parse_feedback_line(rest: str) -> tuple:
    hint = None
    try:
        obj, end = _decoder.raw_decode(rest)
        hint = hint_from_dict(obj)
        rest = rest[end:]
    except (ValueError, TypeError):
        pass
    _, _, outcome = rest.partition(" -> ")
    return hint, outcome.split(":", 1)[0].strip()


def _parse_feedback(body: str) -> tuple:
    return tuple(_parse_feedback_line(line[2:]) for line in body.splitlines() if line.startswith("- "))


def parse_prompt(text: str) -> ParsedPrompt:
    sections = split_sections(text)
    titles = [s[1] for s in sections]
    if titles != list(SECTION_TITLES):
        raise ValueError(f"unexpected prompt layout: {titles}")
    body = {s[1]: s[2] for s in sections}
    ph = split_placeholders(body["Context"])
    missing = [p for p in PLACEHOLDERS if p not in ph]
    if missing:
        raise ValueError(f"prompt lacks placeholders {missing}")
    m = _FIRST_LINE_RE.search(ph["FunctionCode"][0])
    actions = tuple(json.loads(line) for line in ph["RestCallActions"][1].splitlines() if line.strip())
    called = ph["CalledFunctionDefinition"][1]
    return ParsedPrompt(
        target_id=ph["Target"][1].strip(),
        line_code=ph["LineCode"][1],
        chain=_parse_chain(ph["DefUseChain"][1]),
        called_text="" if called.strip() == NONE_MARK else called,
        function_text=ph["FunctionCode"][1],
        function_first_line=int(m.group(1)) if m else 1,
        actions=actions,
        feedback=_parse_feedback(body["Feedback"]),
    )


def failed_hints(parsed: ParsedPrompt) -> set:
    """Serialized hints the feedback marks as not having covered the target."""
    bad = {Outcome.NOT_COVERED.value, Outcome.APPLY_ERROR.value}
    return {serialize_hint(h) for h, outcome in parsed.feedback if h is not None and outcome in bad}


__all__ = [
    "Prompt",
    "ParsedPrompt",
    "FeedbackEntry",
    "MutationHint",
    "build_prompt",
    "parse_prompt",
    "failed_hints",
    "SECTION_TITLES",
    "PLACEHOLDERS",
]
