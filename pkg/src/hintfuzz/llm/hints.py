"""Extracting a mutation hint from free-form model output."""

from __future__ import annotations

import json

from ..model import MutationHint, ParamKind, check_value

REQUIRED_KEYS = ("action", "parameterType", "field", "newValue")

_decoder = json.JSONDecoder()


class ParseError(ValueError):
    pass


def first_json_object(text: str):
    """The first complete JSON object in ``text``; prose and fences are skipped."""
    i = text.find("{")
    while i != -1:
        try:
            obj, _ = _decoder.raw_decode(text, i)
        except ValueError:
            pass
        else:
            if isinstance(obj, dict):
                return obj
        i = text.find("{", i + 1)
    return None


def _action_index(value, actions) -> int:
    if isinstance(value, bool):
        raise ParseError("action must be an index or an action name")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        s = value.strip()
        if s.isdigit():
            return int(s)
        if actions:
            for i, a in enumerate(actions):
                if s in (a.label, a.path_template, f"{a.verb.value}:{a.path_template}"):
                    return i
        raise ParseError(f"unknown action {value!r}")
    raise ParseError("action must be an index or an action name")


def _field_path(value, kind: ParamKind) -> tuple:
    if isinstance(value, str):
        if not value:
            raise ParseError("field must not be empty")
        return tuple(value.split(".")) if kind is ParamKind.BODY else (value,)
    if isinstance(value, list) and value and all(isinstance(p, (str, int)) and not isinstance(p, bool) for p in value):
        return tuple(value)
    raise ParseError("field must be dotted text or a list of segments")


def hint_from_dict(obj: dict, actions=None) -> MutationHint:
    for key in REQUIRED_KEYS:
        if key not in obj:
            raise ParseError(f"missing {key}")
    index = _action_index(obj["action"], actions)
    ptype = obj["parameterType"]
    if not isinstance(ptype, str):
        raise ParseError("parameterType must be text")
    try:
        kind = ParamKind(ptype.strip().lower())
    except ValueError:
        raise ParseError(f"unknown parameterType {ptype!r}") from None
    path = _field_path(obj["field"], kind)
    value = obj["newValue"]
    try:
        check_value(value)
        return MutationHint(index, kind, path, value)
    except (TypeError, ValueError) as e:
        raise ParseError(str(e)) from None


def parse_hint(response: str, actions=None) -> MutationHint:
    obj = first_json_object(response or "")
    if obj is None:
        raise ParseError("no JSON object in response")
    return hint_from_dict(obj, actions)


def serialize_hint(h: MutationHint) -> str:
    text = h.__dict__.get("_text")
    if text is None:  # hints are immutable; the oracle serializes the same ones repeatedly
        text = json.dumps(h.to_dict(), sort_keys=True, separators=(",", ":"))
        object.__setattr__(h, "_text", text)
    return text
