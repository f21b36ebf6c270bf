"""Shared domain types: targets, requests, test cases, hints, coverage, archive."""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1


class TargetKind(str, enum.Enum):
    BRANCH = "Branch"
    METHOD_REPLACEMENT = "MethodReplacement"


class Expected(str, enum.Enum):
    TRUE_SIDE = "TrueSide"
    FALSE_SIDE = "FalseSide"
    RETURNS_TRUE = "ReturnsTrue"
    RETURNS_FALSE = "ReturnsFalse"

    @property
    def rank(self) -> int:
        return _EXPECTED_ORDER.index(self)

    @property
    def outcome(self) -> bool:
        return self in (Expected.TRUE_SIDE, Expected.RETURNS_TRUE)


_EXPECTED_ORDER = list(Expected)
_EXPECTED_FOR_KIND = {
    TargetKind.BRANCH: (Expected.TRUE_SIDE, Expected.FALSE_SIDE),
    TargetKind.METHOD_REPLACEMENT: (Expected.RETURNS_TRUE, Expected.RETURNS_FALSE),
}

UNIT_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*")


class MalformedTargetId(ValueError):
    def __init__(self, text: str, component: str, reason: str):
        super().__init__(f"malformed target id {text!r}: bad {component} ({reason})")
        self.text = text
        self.component = component
        self.reason = reason


@dataclass(frozen=True)
class Target:
    """One coverable program point."""

    kind: TargetKind
    class_name: str
    line: int
    position: int
    expected: Expected

    def __post_init__(self):
        if self.line < 1:
            raise ValueError(f"line must be >= 1, got {self.line}")
        if self.position < 0:
            raise ValueError(f"position must be >= 0, got {self.position}")
        if self.expected not in _EXPECTED_FOR_KIND[self.kind]:
            raise ValueError(f"{self.expected.value} is not an outcome of {self.kind.value}")
        if not UNIT_NAME_RE.fullmatch(self.class_name):
            raise ValueError(f"invalid class name {self.class_name!r}")
        object.__setattr__(self, "_hash", hash((self.kind.value, self.class_name, self.line, self.position, self.expected.value)))

    def __hash__(self) -> int:  # targets key every coverage map; hash once
        return self._hash

    @classmethod
    def for_outcome(cls, kind: TargetKind, class_name: str, line: int, position: int, outcome: bool) -> Target:
        expected = _EXPECTED_FOR_KIND[kind][0 if outcome else 1]
        return cls(kind, class_name, line, position, expected)

    @property
    def sort_key(self) -> tuple:
        return (self.class_name, self.line, self.position, self.expected.rank)

    @property
    def id(self) -> str:
        return render_target_id(self)

    def sibling(self) -> Target:
        a, b = _EXPECTED_FOR_KIND[self.kind]
        return Target(self.kind, self.class_name, self.line, self.position, b if self.expected == a else a)

    def __str__(self) -> str:
        return render_target_id(self)


def render_target_id(t: Target) -> str:
    return f"{t.kind.value}_at_{t.class_name}_at_line_{t.line}_position_{t.position}_{t.expected.value}"


_NUMBER_RE = re.compile(r"0|[1-9][0-9]*")


def parse_target_id(s: str) -> Target:
    for kind in TargetKind:
        prefix = kind.value + "_at_"
        if s.startswith(prefix):
            break
    else:
        raise MalformedTargetId(s, "kind", "expected Branch or MethodReplacement")
    rest = s[len(prefix):]

    cut = rest.rfind("_at_line_")
    if cut < 0:
        raise MalformedTargetId(s, "line", "missing '_at_line_'")
    class_name, rest = rest[:cut], rest[cut + len("_at_line_"):]
    if not UNIT_NAME_RE.fullmatch(class_name):
        raise MalformedTargetId(s, "class name", f"{class_name!r} is not a dotted name")

    line_text, sep, rest = rest.partition("_position_")
    if not sep:
        raise MalformedTargetId(s, "position", "missing '_position_'")
    if not _NUMBER_RE.fullmatch(line_text):
        raise MalformedTargetId(s, "line", f"{line_text!r} is not a canonical integer")
    line = int(line_text)
    if line < 1:
        raise MalformedTargetId(s, "line", "must be >= 1")

    pos_text, sep, expected_text = rest.partition("_")
    if not sep or not _NUMBER_RE.fullmatch(pos_text):
        raise MalformedTargetId(s, "position", f"{pos_text!r} is not a canonical integer")
    try:
        expected = Expected(expected_text)
    except ValueError:
        raise MalformedTargetId(s, "expected", f"unknown value {expected_text!r}") from None
    if expected not in _EXPECTED_FOR_KIND[kind]:
        raise MalformedTargetId(s, "expected", f"{expected_text} does not apply to {kind.value}")
    return Target(kind, class_name, line, int(pos_text), expected)


# ---------------------------------------------------------------------------
# Typed values are plain JSON-like Python values; the tag is derived.
# ---------------------------------------------------------------------------


class ValueTag(str, enum.Enum):
    STR = "Str"
    INT = "Int"
    FLOAT = "Float"
    BOOL = "Bool"
    NULL = "Null"
    OBJECT = "Object"
    ARRAY = "Array"


def tag_of(value: Any) -> ValueTag:
    if value is None:
        return ValueTag.NULL
    if isinstance(value, bool):
        return ValueTag.BOOL
    if isinstance(value, int):
        return ValueTag.INT
    if isinstance(value, float):
        return ValueTag.FLOAT
    if isinstance(value, str):
        return ValueTag.STR
    if isinstance(value, dict):
        return ValueTag.OBJECT
    if isinstance(value, (list, tuple)):
        return ValueTag.ARRAY
    raise TypeError(f"not a typed value: {value!r}")


def check_value(value: Any) -> None:
    """Raise ValueError unless ``value`` is a well-formed typed value tree."""
    tag = tag_of(value)
    if tag is ValueTag.INT and not INT64_MIN <= value <= INT64_MAX:
        raise ValueError(f"integer out of 64-bit range: {value}")
    if tag is ValueTag.FLOAT and not math.isfinite(value):
        raise ValueError(f"float must be finite: {value}")
    if tag is ValueTag.OBJECT:
        for key, child in value.items():
            if not isinstance(key, str):
                raise ValueError(f"object keys must be strings: {key!r}")
            check_value(child)
    elif tag is ValueTag.ARRAY:
        for child in value:
            check_value(child)


def copy_value(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: copy_value(v) for k, v in value.items()}
    if isinstance(value, list):
        return [copy_value(v) for v in value]
    return value


# ---------------------------------------------------------------------------
# Requests and test cases
# ---------------------------------------------------------------------------


class Verb(str, enum.Enum):
    GET = "GET"
    POST = "POST"
    PUT = "PUT"
    DELETE = "DELETE"


class ParamKind(str, enum.Enum):
    PATH = "path"
    QUERY = "query"
    HEADER = "header"
    BODY = "body"


class Provenance(str, enum.Enum):
    RANDOM_INIT = "RandomInit"
    RANDOM_MUTATION = "RandomMutation"
    LLM_MUTATION = "LlmMutation"


PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True, eq=True)
class RestCallAction:
    verb: Verb
    path_template: str
    path_params: dict = field(default_factory=dict)
    query_params: dict = field(default_factory=dict)
    headers: dict = field(default_factory=dict)
    body: Any = None

    def __post_init__(self):
        names = PLACEHOLDER_RE.findall(self.path_template)
        missing = [n for n in names if n not in self.path_params]
        if missing:
            raise ValueError(f"path params missing for {missing} in {self.path_template}")
        lowered = [h.lower() for h in self.headers]
        if len(set(lowered)) != len(lowered):
            raise ValueError(f"duplicate header names (case-insensitive): {sorted(self.headers)}")
        for group in (self.path_params, self.query_params, self.headers):
            for v in group.values():
                check_value(v)
        if self.body is not None:
            check_value(self.body)

    @property
    def label(self) -> str:
        return f"{self.verb.value} {self.path_template}"

    def params(self, kind: ParamKind) -> Any:
        return {
            ParamKind.PATH: self.path_params,
            ParamKind.QUERY: self.query_params,
            ParamKind.HEADER: self.headers,
            ParamKind.BODY: self.body,
        }[kind]

    def to_dict(self) -> dict:
        return {
            "verb": self.verb.value,
            "path": self.path_template,
            "path_params": copy_value(self.path_params),
            "query_params": copy_value(self.query_params),
            "headers": copy_value(self.headers),
            "body": copy_value(self.body),
        }

    @classmethod
    def from_dict(cls, d: dict) -> RestCallAction:
        return cls(
            verb=Verb(d["verb"]),
            path_template=d["path"],
            path_params=copy_value(d.get("path_params") or {}),
            query_params=copy_value(d.get("query_params") or {}),
            headers=copy_value(d.get("headers") or {}),
            body=copy_value(d.get("body")),
        )

    def replace_params(self, kind: ParamKind, value: Any, check: bool = True) -> RestCallAction:
        """Copy with one parameter group replaced.

        ``check=False`` skips validation; only for callers that swapped one
        already-checked scalar for another of the same shape.
        """
        parts = {
            "path_params": self.path_params,
            "query_params": self.query_params,
            "headers": self.headers,
            "body": self.body,
        }
        key = {"path": "path_params", "query": "query_params", "header": "headers", "body": "body"}[kind.value]
        parts[key] = value
        if check:
            return RestCallAction(self.verb, self.path_template, **parts)
        out = object.__new__(RestCallAction)
        object.__setattr__(out, "verb", self.verb)
        object.__setattr__(out, "path_template", self.path_template)
        for name, v in parts.items():
            object.__setattr__(out, name, v)
        return out


@dataclass(frozen=True)
class MutationHint:
    action_index: int
    param_kind: ParamKind
    field_path: tuple
    new_value: Any

    def __post_init__(self):
        object.__setattr__(self, "field_path", tuple(self.field_path))
        object.__setattr__(self, "param_kind", ParamKind(self.param_kind))
        if self.action_index < 0:
            raise ValueError("action_index must be >= 0")
        if not self.field_path:
            raise ValueError("field_path must be non-empty")
        if self.param_kind is not ParamKind.BODY and len(self.field_path) != 1:
            raise ValueError(f"{self.param_kind.value} hints address exactly one field")
        check_value(self.new_value)

    @property
    def field_text(self):
        """Dotted text when unambiguous, else the segment list."""
        path = self.field_path
        if all(isinstance(p, str) and "." not in p for p in path) and (
            self.param_kind is ParamKind.BODY or len(path) == 1
        ):
            return ".".join(path)
        return list(path)

    def to_dict(self) -> dict:
        return {
            "action": self.action_index,
            "parameterType": self.param_kind.value,
            "field": self.field_text,
            "newValue": copy_value(self.new_value),
        }


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class

    actions: tuple
    provenance: Provenance = Provenance.RANDOM_INIT
    hint: MutationHint | None = None

    def __post_init__(self):
        if not self.actions:
            raise ValueError("a test case needs at least one action")
        object.__setattr__(self, "actions", tuple(self.actions))

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance.value,
            "actions": [a.to_dict() for a in self.actions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> TestCase:
        return cls(
            tuple(RestCallAction.from_dict(a) for a in d["actions"]),
            Provenance(d.get("provenance", Provenance.RANDOM_INIT.value)),
        )


# ---------------------------------------------------------------------------
# Coverage and archive
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoverageSnapshot:
    covered_targets: frozenset = frozenset()
    covered_lines: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "covered_targets", frozenset(self.covered_targets))
        object.__setattr__(self, "covered_lines", frozenset(self.covered_lines))

    def to_dict(self) -> dict:
        return {
            "covered_targets": sorted(t.id for t in self.covered_targets),
            "covered_lines": sorted([u, n] for u, n in self.covered_lines),
        }

    @classmethod
    def from_dict(cls, d: dict) -> CoverageSnapshot:
        return cls(
            frozenset(parse_target_id(s) for s in d.get("covered_targets", ())),
            frozenset((u, int(n)) for u, n in d.get("covered_lines", ())),
        )


def coverage_not_fewer(new: CoverageSnapshot, old: CoverageSnapshot, containment: bool = False) -> bool:
    """``new`` covers at least as many targets as ``old``.

    With ``containment`` the stricter reading is used: every target of ``old``
    must still be covered by ``new``.
    """
    if containment:
        return old.covered_targets <= new.covered_targets
    return len(new.covered_targets) >= len(old.covered_targets)


@dataclass
class ArchiveEntry:
    test_case: TestCase
    score: float
    result: Any = None  # ExecutionResult of the test case, cached for reuse


@dataclass
class Archive:
    population_cap: int = 10
    populations: dict = field(default_factory=dict)
    covered: dict = field(default_factory=dict)  # Target -> witnessing TestCase
    attempts: dict = field(default_factory=dict)
    hits: dict = field(default_factory=dict)
    covered_lines: set = field(default_factory=set)

    def insert(self, target: Target, entry: ArchiveEntry) -> None:
        pop = self.populations.setdefault(target, [])
        if len(pop) >= self.population_cap:
            # stable: among equal scores the oldest entry survives, so a
            # newcomer no better than the worst is the one evicted
            scores = [e.score for e in pop]
            worst = min(scores)
            if entry.score <= worst:
                return
            del pop[len(scores) - 1 - scores[::-1].index(worst)]
        pop.append(entry)

    def mark_covered(self, target: Target, witness: TestCase) -> bool:
        if target in self.covered:
            return False
        self.covered[target] = witness
        return True

    def uncovered_with_population(self) -> list:
        return sorted(
            (t for t, pop in self.populations.items() if pop and t not in self.covered),
            key=lambda t: t.sort_key,
        )

    def record_attempt(self, target: Target, hit: bool) -> None:
        self.attempts[target] = self.attempts.get(target, 0) + 1
        if hit:
            self.hits[target] = self.hits.get(target, 0) + 1


def iter_leaves(value: Any, prefix: tuple = ()) -> Iterable[tuple]:
    """Yield ``(path, leaf)`` for every scalar inside a typed value tree."""
    if isinstance(value, dict):
        for k, v in value.items():
            yield from iter_leaves(v, prefix + (k,))
    elif isinstance(value, list):
        for i, v in enumerate(value):
            yield from iter_leaves(v, prefix + (i,))
    else:
        yield prefix, value


@dataclass(frozen=True)
class ExecutionResult:
    """Outcome of running one test case against a fresh coverage state."""

    statuses: tuple
    coverage: CoverageSnapshot
    heuristics: dict  # Target -> score in [0, 1]; 1 means covered
    wall_ms: float = 0.0
    failure: str | None = None

    def score(self, target: Target) -> float:
        return self.heuristics.get(target, 0.0)
