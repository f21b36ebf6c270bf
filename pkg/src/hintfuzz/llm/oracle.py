"""SolverOracle: an offline, deterministic stand-in for a chat model.

The oracle only sees the prompt text. It re-parses the enclosing function,
the called-function definitions and the def-use chain quoted in the prompt,
then tries candidate values for the request fields those snippets read. A
candidate wins when running the enclosing function on the modified request
fires the target probe with the expected outcome. Values come from the
literals in the quoted code: regex instances, the literals themselves, their
pieces and pairings, and boundary numbers around integer literals.

Whatever the prompt leaves out stays unknown to the oracle. A constant that is
defined outside the enclosing function and missing from the chain makes
every candidate fail, which is why trimmed prompts solve fewer targets.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter, OrderedDict

from ..interp import Compiler, Context, Recorder
from ..model import MutationHint, ParamKind, RestCallAction, iter_leaves, parse_target_id
from ..msl import MslProgram, ast as A, parse_msl, parse_statement_text
from ..msl.parser import MslSyntaxError, Unit, tokenize
from .hints import serialize_hint
from .prompt import failed_hints, parse_prompt
from .regexgen import instances, looks_like_regex

log = logging.getLogger(__name__)

_SPLIT_RE = re.compile(r"[,;| ]+")
_BOUNDARY_INTS = (0, 1, -1, 2, 10, 100, 1000, -1000)


def _request_of(action: RestCallAction) -> dict:
    return {
        "path": dict(action.path_params),
        "query": dict(action.query_params),
        "header": {k.lower(): v for k, v in action.headers.items()},
        "body": action.body,
    }


def _with_value(request: dict, kind: str, path: tuple, value) -> dict:
    out = dict(request)
    if len(path) == 1 and kind != "body":
        part = dict(request[kind])
        part[path[0].lower() if kind == "header" else path[0]] = value
        out[kind] = part
        return out
    root = json.loads(json.dumps(request[kind]))
    node = root
    for p in path[:-1]:
        node = node[p]
    node[path[-1]] = value
    out[kind] = root
    return out


def _slot(h: MutationHint) -> tuple:
    return (h.action_index, h.param_kind, h.field_path)


class _ChainScope(dict):
    """Globals resolved lazily from quoted chain definitions."""

    def __init__(self, defs: dict, functions: dict, request: dict):
        super().__init__()
        self._defs = defs
        self._functions = functions
        self._request = request
        self._busy: set = set()

    def __missing__(self, name):
        for i, expr in enumerate(self._defs.get(name, ())):
            key = (name, i)
            if key in self._busy:
                continue
            self._busy.add(key)
            try:
                value = expr({}, Context(self._request, Recorder(), self, self._functions))
            except Exception:  # an unusable definition; try the next one
                continue
            finally:
                self._busy.discard(key)
            self[name] = value
            return value
        raise KeyError(name)


class _Problem:
    """Everything the oracle reconstructs from one prompt's code context."""

    def __init__(self, parsed):
        self.target = parse_target_id(parsed.target_id)
        unit = parse_msl(parsed.function_text, self.target.class_name, parsed.function_first_line)
        if len(unit.functions) != 1:
            raise ValueError("function code must hold exactly one function")
        self.fn = unit.functions[0]
        program = MslProgram()
        program.add(unit)
        called_exprs = []
        if parsed.called_text:
            try:
                called = parse_msl(parsed.called_text, "<called>")
            except MslSyntaxError:
                called = None
            if called is not None:
                fresh = [f for f in called.functions if f.name not in program.functions]
                if fresh:
                    program.add(Unit("<called>", called.source, 1, [], fresh))
                for f in fresh:
                    for s in A.iter_statements(f.body):
                        called_exprs.extend(A.stmt_exprs(s))
        self.compiler = Compiler(program)
        self.entry = self.compiler.functions[self.fn.name]

        self.defs: dict = {}
        chain_exprs = []
        for unit_name, line, text in parsed.chain:
            inside = unit_name == self.target.class_name and self.fn.contains_line(line)
            if inside:
                continue
            try:
                stmt = parse_statement_text(text)
            except MslSyntaxError:
                continue
            if isinstance(stmt, (A.Let, A.Assign)):
                self.defs.setdefault(stmt.name, []).append(self.compiler.expr(stmt.value, "<chain>"))
                chain_exprs.append(stmt.value)

        exprs = [e for s in A.iter_statements(self.fn.body) for e in A.stmt_exprs(s)]
        exprs += called_exprs + chain_exprs
        refs: dict = {}
        for e in exprs:
            for node in A.iter_expr(e):
                if isinstance(node, A.RequestField):
                    refs.setdefault((node.kind, node.path), None)
        self.refs = list(refs)

        strings, ints = {}, {}
        for text in [parsed.function_text, parsed.called_text, *(t for _, _, t in parsed.chain)]:
            try:
                toks = tokenize(text)
            except MslSyntaxError:
                continue
            for tok in toks:
                if tok.kind == "string":
                    strings.setdefault(tok.value, None)
                elif tok.kind == "int":
                    ints.setdefault(tok.value, None)
        self.strings = list(strings)
        self.ints = list(ints)
        self._string_candidates = None

    # -- candidate values

    def int_candidates(self) -> list:
        out: dict = {}
        for n in self.ints:
            for v in (n, n + 1, n - 1):
                out.setdefault(v, None)
        for v in _BOUNDARY_INTS:
            out.setdefault(v, None)
        return list(out)

    def string_candidates(self) -> list:
        if self._string_candidates is not None:
            return self._string_candidates
        out: dict = {}
        regexes = [s for s in self.strings if looks_like_regex(s)]
        plain = [s for s in self.strings if s not in regexes]
        for r in regexes:
            for s in instances(r):
                out.setdefault(s, None)
        for s in plain:
            out.setdefault(s, None)
        for s in plain:
            for piece in _SPLIT_RE.split(s):
                if piece:
                    out.setdefault(piece, None)
        few = plain[:12]
        for a in few:
            for b in few:
                if a != b:
                    out.setdefault(a + b, None)
        for s in plain:
            for n in self.ints:
                if len(s) < n <= 64:
                    out.setdefault(s + "0" * (n - len(s)), None)
        for n in self.int_candidates():
            out.setdefault(str(n), None)
        out.setdefault("", None)
        self._string_candidates = list(out)
        return self._string_candidates

    def candidates_for(self, current) -> list:
        if isinstance(current, bool):
            return [True, False]
        if isinstance(current, int):
            return self.int_candidates()
        if isinstance(current, float):
            return [float(v) for v in self.int_candidates()]
        if isinstance(current, str):
            return self.string_candidates()
        return []

    # -- simulation

    def fires(self, request: dict, guess) -> bool:
        rec = Recorder()
        scope = _ChainScope(self.defs, self.compiler.functions, request)
        try:
            args = [self._param(scope, p, request, guess) for p in self.fn.param_names]
            self.entry(Context(request, rec, scope, self.compiler.functions), args)
        except Exception:  # the probe may already have fired before the failure
            pass
        return self.target in rec.hits

    @staticmethod
    def _param(scope, name, request, guess):
        try:
            return scope[name]
        except KeyError:
            pass
        for kind in ("body", "query", "path", "header"):
            part = request.get(kind)
            if isinstance(part, dict) and name in part:
                return part[name]
        return guess


class _Search:
    """Lazily enumerates solving hints for one (code context, actions) pair."""

    def __init__(self, problem: _Problem, actions: list, budget: int):
        self.problem = problem
        self.actions = actions
        self.found: list = []
        self.first_untried: list = []
        self._it = self._generate(budget)

    def _fields(self):
        refs = self.problem.refs
        order = {r: n for n, r in enumerate(refs)}
        for i, a in enumerate(self.actions):
            leaves = [
                (kind, tuple(path), v)
                for kind in ParamKind
                for path, v in iter_leaves(a.params(kind))
                if path and v is not None
            ]
            if refs:
                key = lambda leaf: (leaf[0].value, leaf[1] if leaf[0] is not ParamKind.HEADER else (leaf[1][0].lower(),))
                leaves = sorted((leaf for leaf in leaves if key(leaf) in order), key=lambda leaf: order[key(leaf)])
            for kind, path, v in leaves:
                yield i, kind, path, v

    def _generate(self, budget: int):
        base = {i: _request_of(a) for i, a in enumerate(self.actions)}
        runs = 0
        for i, kind, path, current in self._fields():
            for value in self.problem.candidates_for(current):
                if value == current and type(value) is type(current):
                    continue
                hint = MutationHint(i, kind, path, value)
                item = (hint, serialize_hint(hint))
                if len(self.first_untried) < 20:
                    self.first_untried.append(item)
                if runs >= budget:
                    return
                runs += 1
                if self.problem.fires(_with_value(base[i], kind.value, path, value), value):
                    yield item

    def solutions(self):
        """``(hint, serialized hint)`` pairs, cached ones first."""
        yield from list(self.found)
        for item in self._it:
            self.found.append(item)
            yield item


class SolverOracle:
    """Text in, text out; deterministic for a given prompt."""

    def __init__(self, budget: int = 600, cache_size: int = 256):
        self.budget = budget
        self.cache_size = cache_size
        self._problems: OrderedDict = OrderedDict()
        self._searches: OrderedDict = OrderedDict()
        self._responses: OrderedDict = OrderedDict()  # the answer is a function of the prompt
        self.calls = 0

    def _cached(self, cache: OrderedDict, key, make):
        if key in cache:
            cache.move_to_end(key)
            return cache[key]
        value = make()
        cache[key] = value
        if len(cache) > self.cache_size:
            cache.popitem(last=False)
        return value

    def _problem(self, parsed):
        def make():
            try:
                return _Problem(parsed)
            except Exception as e:  # unreadable code context
                log.info("oracle cannot model target %s: %s", parsed.target_id, e)
                return None

        return self._cached(self._problems, parsed.bundle_key, make)

    def complete(self, prompt_text: str) -> str:
        self.calls += 1
        return self._cached(self._responses, prompt_text, lambda: self._solve(prompt_text))

    def _solve(self, prompt_text: str) -> str:
        try:
            parsed = parse_prompt(prompt_text)
        except (ValueError, KeyError) as e:
            return f"I could not read the prompt ({e}); no hint."
        problem = self._problem(parsed)
        if problem is None:
            return "I cannot relate the target to any request field."
        try:
            actions = [RestCallAction.from_dict(a) for a in parsed.actions]
        except (KeyError, ValueError, TypeError):
            return "The REST call actions are unreadable; no hint."
        key = (parsed.bundle_key, json.dumps(parsed.actions, sort_keys=True))
        search = self._cached(self._searches, key, lambda: _Search(problem, actions, self.budget))
        skip = failed_hints(parsed)
        # a field that keeps failing is probably not reached by that action
        tried = Counter(_slot(h) for h, outcome in parsed.feedback if h is not None)
        best = None
        for hint, text in search.solutions():
            if text in skip:
                continue
            n = tried[_slot(hint)]
            if n == 0:
                return self._answer(problem, hint, text, solved=True)
            if best is None or n < best[0]:
                best = (n, hint, text)
        if best is not None:
            return self._answer(problem, best[1], best[2], solved=True)
        for hint, text in search.first_untried:
            if text not in skip:
                return self._answer(problem, hint, text, solved=False)
        return "None of the values I can derive from the code reach the target."

    @staticmethod
    def _answer(problem: _Problem, hint: MutationHint, text: str, solved: bool) -> str:
        where = f"{hint.param_kind.value} field {'.'.join(map(str, hint.field_path))}"
        lead = (
            f"Setting the {where} of action {hint.action_index} drives {problem.target.id}."
            if solved
            else f"Best guess: change the {where} of action {hint.action_index}."
        )
        return f"{lead}\n```json\n{text}\n```\n"
