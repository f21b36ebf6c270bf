"""Random test-case sampling, one-leaf random mutation and hint application."""

from __future__ import annotations

import logging
import random
import string
from dataclasses import dataclass, field

from .model import (
    INT64_MAX,
    INT64_MIN,
    MutationHint,
    ParamKind,
    Provenance,
    RestCallAction,
    TestCase,
    copy_value,
    iter_leaves,
)

log = logging.getLogger(__name__)

_KINDS = ("path", "query", "header", "body")


@dataclass(frozen=True)
class MutationConfig:
    seed: int = 0
    field_kind_weights: dict = field(default_factory=lambda: {k: 1.0 for k in _KINDS})
    charset: str = string.ascii_letters + string.digits
    int_range: tuple = (-1000, 1000)
    int_delta: int = 10
    float_range: tuple = (-1000.0, 1000.0)
    float_delta: float = 10.0
    resample_probability: float = 0.2
    max_actions: int = 3
    max_chars_replaced: int = 3

    def __post_init__(self):
        weights = self.field_kind_weights
        if any(w < 0 for w in weights.values()) or not any(w > 0 for w in weights.values()):
            raise ValueError("field kind weights must be non-negative with at least one positive")
        if len(set(self.charset)) < 2:
            raise ValueError("charset needs at least two distinct characters")
        if self.int_range[0] > self.int_range[1] or self.int_delta < 1:
            raise ValueError("bad numeric mutation ranges")


class ApplyError(ValueError):
    pass


class NoSuchField(ApplyError):
    def __init__(self, message: str, available):
        super().__init__(f"{message}; available: {', '.join(map(str, available)) or '(none)'}")
        self.available = list(available)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sentinel_string(rng: random.Random) -> str:
    return f"_EM_{rng.randrange(1000)}_XYZ"


def random_value(schema, rng: random.Random, cfg: MutationConfig):
    if isinstance(schema, dict):
        return {k: random_value(v, rng, cfg) for k, v in schema.items()}
    if isinstance(schema, list):
        return [random_value(schema[0], rng, cfg) for _ in range(rng.randint(1, 2))]
    if schema == "string":
        return sentinel_string(rng)
    if schema == "int":
        return rng.randint(*cfg.int_range)
    if schema == "float":
        return round(rng.uniform(*cfg.float_range), 3)
    if schema == "bool":
        return rng.random() < 0.5
    raise ValueError(f"unknown schema {schema!r}")


def random_action(endpoint, rng: random.Random, cfg: MutationConfig) -> RestCallAction:
    return RestCallAction(
        verb=endpoint.verb,
        path_template=endpoint.path,
        path_params=random_value(endpoint.path_params, rng, cfg),
        query_params=random_value(endpoint.query, rng, cfg),
        headers=random_value(endpoint.headers, rng, cfg),
        body=None if endpoint.body is None else random_value(endpoint.body, rng, cfg),
    )


def sample_random_test_case(apis, rng: random.Random, cfg: MutationConfig = MutationConfig()) -> TestCase:
    if not apis:
        raise ValueError("no endpoints to sample from")
    n = rng.randint(1, cfg.max_actions)
    return TestCase(tuple(random_action(rng.choice(apis), rng, cfg) for _ in range(n)), Provenance.RANDOM_INIT)


# ---------------------------------------------------------------------------
# Random mutation
# ---------------------------------------------------------------------------


def mutable_leaves(tc: TestCase) -> list:
    """``(action index, kind, path, value)`` for every non-null scalar leaf."""
    cached = tc.__dict__.get("_leaves")
    if cached is not None:  # test cases are immutable; the chosen one is mutated many times
        return cached
    out = []
    for i, a in enumerate(tc.actions):
        for kind in _KINDS:
            for path, v in iter_leaves(a.params(ParamKind(kind))):
                if path and v is not None:
                    out.append((i, kind, path, v))
    object.__setattr__(tc, "_leaves", out)
    return out


def mutate_string(s: str, rng: random.Random, cfg: MutationConfig) -> str:
    if not s:
        return rng.choice(cfg.charset)
    chars = list(s)
    k = rng.randint(1, min(cfg.max_chars_replaced, len(chars)))
    for pos in rng.sample(range(len(chars)), k):
        old = chars[pos]
        c = rng.choice(cfg.charset)
        while c == old:
            c = rng.choice(cfg.charset)
        chars[pos] = c
    return "".join(chars)


def mutate_scalar(v, rng: random.Random, cfg: MutationConfig):
    if isinstance(v, bool):
        return not v
    if isinstance(v, int):
        if rng.random() < cfg.resample_probability:
            new = rng.randint(*cfg.int_range)
        else:
            new = v + rng.choice((-1, 1)) * rng.randint(1, cfg.int_delta)
        new = min(max(new, INT64_MIN), INT64_MAX)
        return new if new != v else (v - 1 if v > INT64_MIN else v + 1)
    if isinstance(v, float):
        if rng.random() < cfg.resample_probability:
            new = round(rng.uniform(*cfg.float_range), 3)
        else:
            new = v + rng.choice((-1.0, 1.0)) * rng.uniform(0.001, cfg.float_delta)
        return new if new != v else v + 1.0
    if isinstance(v, str):
        return mutate_string(v, rng, cfg)
    raise TypeError(f"cannot mutate {type(v).__name__}")


def _set_in(container, path: tuple, value):
    """Copy of ``container`` with the node at ``path`` replaced."""
    out = copy_value(container)
    node = out
    for p in path[:-1]:
        node = node[p]
    node[path[-1]] = value
    return out


def _replace_leaf(tc: TestCase, idx: int, kind: str, path: tuple, value, check: bool = True) -> tuple:
    action = tc.actions[idx]
    pk = ParamKind(kind)
    new_action = action.replace_params(pk, _set_in(action.params(pk), path, value), check)
    actions = list(tc.actions)
    actions[idx] = new_action
    return tuple(actions)


def random_mutate(tc: TestCase, apis, rng: random.Random, cfg: MutationConfig = MutationConfig()) -> TestCase:
    """Change exactly one leaf of one action (``apis`` is accepted for symmetry)."""
    every = mutable_leaves(tc)  # shared cache: never modify in place
    weights = cfg.field_kind_weights
    leaves = [leaf for leaf in every if weights.get(leaf[1], 0) > 0]
    if not leaves:
        return TestCase(tc.actions, Provenance.RANDOM_MUTATION)
    kinds = sorted({leaf[1] for leaf in leaves}, key=_KINDS.index)
    kind = rng.choices(kinds, weights=[weights[k] for k in kinds])[0]
    leaf = rng.choice([leaf for leaf in leaves if leaf[1] == kind])
    idx, kind, path, v = leaf
    new = mutate_scalar(v, rng, cfg)  # a checked scalar for a checked scalar
    child = TestCase(_replace_leaf(tc, idx, kind, path, new, check=False), Provenance.RANDOM_MUTATION)
    inherited = list(every)
    inherited[every.index(leaf)] = (idx, kind, path, new)
    object.__setattr__(child, "_leaves", inherited)
    return child


# ---------------------------------------------------------------------------
# Hint application
# ---------------------------------------------------------------------------


def _text_of(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def coerce_like(current, new):
    """Coerce ``new`` to the type of the value it replaces when it parses."""
    if isinstance(current, bool):
        if isinstance(new, bool):
            return new
        if isinstance(new, str) and new.strip().lower() in ("true", "false"):
            return new.strip().lower() == "true"
    elif isinstance(current, int):
        if type(new) is int:
            return new
        if isinstance(new, float) and new.is_integer():
            return int(new)
        if isinstance(new, str):
            try:
                n = int(new.strip())
            except ValueError:
                pass
            else:
                if INT64_MIN <= n <= INT64_MAX:
                    return n
    elif isinstance(current, float):
        if isinstance(new, (int, float)) and not isinstance(new, bool):
            return float(new)
        if isinstance(new, str):
            try:
                return float(new.strip())
            except ValueError:
                pass
    elif isinstance(current, str):
        if isinstance(new, str):
            return new
        if isinstance(new, (bool, int, float)):
            return _text_of(new)
    else:
        return new
    if isinstance(new, str):
        log.info("hint value %r kept as string for a %s field", new, type(current).__name__)
        return new
    return _text_of(new) if not isinstance(new, (dict, list)) else new


def _locate(container, path: tuple, where: str) -> tuple:
    """Resolve ``path`` (string segments allowed for list indices)."""
    node = container
    resolved = []
    for seg in path:
        if isinstance(node, dict):
            key = str(seg)
            if key not in node:
                raise NoSuchField(f"no field {key!r} in {where or 'value'}", sorted(node))
            resolved.append(key)
            node = node[key]
        elif isinstance(node, list):
            try:
                i = int(seg)
            except (TypeError, ValueError):
                i = -1
            if not 0 <= i < len(node):
                raise NoSuchField(f"no element {seg!r} in {where}", list(range(len(node))))
            resolved.append(i)
            node = node[i]
        else:
            raise NoSuchField(f"{where} is a scalar; cannot descend into {seg!r}", [])
        where = f"{where}.{seg}" if where else str(seg)
    return tuple(resolved), node


def apply_hint(tc: TestCase, h: MutationHint) -> TestCase:
    if not 0 <= h.action_index < len(tc.actions):
        raise NoSuchField(f"no action {h.action_index}", list(range(len(tc.actions))))
    action = tc.actions[h.action_index]
    params = action.params(h.param_kind)
    if params is None:
        raise NoSuchField(f"action {h.action_index} has no {h.param_kind.value} parameters", [])
    field_path = tuple(h.field_path)
    if h.param_kind is ParamKind.HEADER:
        # header names are case-insensitive
        want = str(field_path[0]).lower()
        field_path = tuple(k for k in params if k.lower() == want)[:1] or field_path
    path, current = _locate(params, field_path, h.param_kind.value)
    value = coerce_like(current, copy_value(h.new_value))
    actions = _replace_leaf(tc, h.action_index, h.param_kind.value, path, value)
    return TestCase(actions, Provenance.LLM_MUTATION, hint=h)
