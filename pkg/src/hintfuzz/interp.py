"""Closure-compiling interpreter for MSL with coverage probes.

Each function body is compiled once into nested Python closures. Probes fire
when an ``if`` condition resolves and when a replaced boolean builtin
(``matches``, ``contains``, ``startsWith``) returns; they record the covered
outcome and a branch-distance score for the outcome that was not taken.
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass, field

from .model import INT64_MAX, INT64_MIN, Target, TargetKind
from .msl import MslProgram, ast as A

K = 1.0  # distance offset for strict comparisons
FLAT = 1.0  # distance reported when no gradient exists
MAX_DEPTH = 64
NOT_COVERED_CAP = 0.999999

_NORET = object()


class MslRuntimeError(Exception):
    def __init__(self, message: str, line: int | None = None, unit: str | None = None):
        where = f"{unit}:{line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line
        self.unit = unit


@dataclass
class Recorder:
    """Per-execution coverage: hit targets and lines, best heuristic scores."""

    hits: set = field(default_factory=set)
    lines: set = field(default_factory=set)
    scores: dict = field(default_factory=dict)

    def decision(self, taken: Target, other: Target, distance: float) -> None:
        self.hits.add(taken)
        self.scores[taken] = 1.0
        if other not in self.hits:
            s = min(1.0 / (1.0 + distance), NOT_COVERED_CAP)
            if s > self.scores.get(other, 0.0):
                self.scores[other] = s

    def line(self, key: tuple) -> None:
        self.lines.add(key)

    def merge(self, other: Recorder) -> None:
        if not (self.scores or self.hits or self.lines):  # first action after a reset
            self.scores = dict(other.scores)
            self.hits = set(other.hits)
            self.lines = set(other.lines)
            return
        scores = self.scores
        for t, s in other.scores.items():
            if s > scores.get(t, 0.0):
                scores[t] = s
        for t in other.hits - self.hits:
            scores[t] = 1.0
        self.hits |= other.hits
        self.lines |= other.lines

    @property
    def covered_targets(self) -> frozenset:
        return frozenset(self.hits)

    @property
    def covered_lines(self) -> frozenset:
        return frozenset(self.lines)


class Context:
    __slots__ = ("request", "recorder", "globals", "functions", "depth")

    def __init__(self, request, recorder, globals_, functions):
        self.request = request
        self.recorder = recorder
        self.globals = globals_
        self.functions = functions
        self.depth = 0


# -- runtime values ------------------------------------------------------------


@functools.lru_cache(maxsize=512)
def _compile_regex(pattern: str):
    return re.compile(pattern)


class Pattern:
    __slots__ = ("source", "regex")

    def __init__(self, source: str):
        try:
            self.regex = _compile_regex(source)
        except re.error as e:
            raise MslRuntimeError(f"invalid regex {source!r}: {e}") from None
        self.source = source

    def __repr__(self):
        return f"Pattern({self.source!r})"


class Matcher:
    __slots__ = ("pattern", "subject", "match")

    def __init__(self, pattern: Pattern, subject: str):
        self.pattern = pattern
        self.subject = subject
        self.match = None

    def __repr__(self):
        return f"Matcher({self.pattern.source!r}, {self.subject!r})"


def type_name(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, int):
        return "int"
    if isinstance(v, float):
        return "float"
    if isinstance(v, str):
        return "string"
    if isinstance(v, dict):
        return "object"
    if isinstance(v, list):
        return "array"
    return type(v).__name__.lower()


def is_number(v) -> bool:
    return (type(v) is int) or (type(v) is float)


def to_text(v) -> str:
    if v is None:
        return "null"
    if v is True:
        return "true"
    if v is False:
        return "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def values_equal(a, b) -> bool:
    if is_number(a) and is_number(b):
        return a == b
    if type(a) is not type(b):
        return False
    return a == b


def _check_int(v, node):
    if type(v) is int and not INT64_MIN <= v <= INT64_MAX:
        raise MslRuntimeError("integer overflow", node.line)
    return v


_INT_RE = re.compile(r"[+-]?[0-9]+")
_FLOAT_RE = re.compile(r"[+-]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?")


def parse_int(s):
    if not isinstance(s, str) or not _INT_RE.fullmatch(s):
        raise MslRuntimeError(f"NumberFormatException: For input string: {to_text(s)!r}")
    v = int(s)
    if not INT64_MIN <= v <= INT64_MAX:
        raise MslRuntimeError(f"NumberFormatException: out of range: {s!r}")
    return v


def parse_float(s):
    if not isinstance(s, str) or not _FLOAT_RE.fullmatch(s):
        raise MslRuntimeError(f"NumberFormatException: For input string: {to_text(s)!r}")
    return float(s)


def _builtin_function(name, args, node):
    if name == "parseInt":
        _arity(node, args, 1)
        return parse_int(args[0])
    if name == "parseFloat":
        _arity(node, args, 1)
        return parse_float(args[0])
    if name == "compile":
        _arity(node, args, 1)
        if not isinstance(args[0], str):
            raise MslRuntimeError("compile expects a string", node.line)
        return Pattern(args[0])
    if name == "str":
        _arity(node, args, 1)
        return to_text(args[0])
    if name == "len":
        _arity(node, args, 1)
        if isinstance(args[0], (str, list)):
            return len(args[0])
        raise MslRuntimeError(f"len of {type_name(args[0])}", node.line)
    raise MslRuntimeError(f"unknown builtin {name}", node.line)


def _arity(node, args, *allowed):
    if len(args) not in allowed:
        raise MslRuntimeError(f"{node.name} takes {allowed} arguments, got {len(args)}", node.line)


def _want_str(v, node, what="argument"):
    if not isinstance(v, str):
        raise MslRuntimeError(f"{node.name}: {what} must be a string, got {type_name(v)}", node.line)
    return v


def _want_int(v, node):
    if type(v) is not int:
        raise MslRuntimeError(f"{node.name}: index must be an int, got {type_name(v)}", node.line)
    return v


def call_method(obj, name, args, node):
    if isinstance(obj, str):
        if name == "matches":
            _arity(node, args, 1)
            pat = args[0]
            if isinstance(pat, Pattern):
                return pat.regex.fullmatch(obj) is not None
            return Pattern(_want_str(pat, node)).regex.fullmatch(obj) is not None
        if name == "contains":
            _arity(node, args, 1)
            return _want_str(args[0], node) in obj
        if name == "startsWith":
            _arity(node, args, 1)
            return obj.startswith(_want_str(args[0], node))
        if name == "endsWith":
            _arity(node, args, 1)
            return obj.endswith(_want_str(args[0], node))
        if name == "length":
            _arity(node, args, 0)
            return len(obj)
        if name == "substring":
            _arity(node, args, 1, 2)
            begin = _want_int(args[0], node)
            end = _want_int(args[1], node) if len(args) == 2 else len(obj)
            if begin < 0 or end > len(obj) or begin > end:
                raise MslRuntimeError(
                    f"StringIndexOutOfBounds: begin {begin}, end {end}, length {len(obj)}", node.line
                )
            return obj[begin:end]
        if name == "toLowerCase":
            _arity(node, args, 0)
            return obj.lower()
        if name == "toUpperCase":
            _arity(node, args, 0)
            return obj.upper()
        if name == "trim":
            _arity(node, args, 0)
            return obj.strip()
        if name == "indexOf":
            _arity(node, args, 1)
            return obj.find(_want_str(args[0], node))
        if name == "equals":
            _arity(node, args, 1)
            return values_equal(obj, args[0])
    elif isinstance(obj, Pattern):
        if name == "matcher":
            _arity(node, args, 1)
            return Matcher(obj, _want_str(args[0], node))
    elif isinstance(obj, Matcher):
        if name == "matches":
            _arity(node, args, 0)
            obj.match = obj.pattern.regex.fullmatch(obj.subject)
            return obj.match is not None
        if name == "group":
            _arity(node, args, 0, 1)
            if obj.match is None:
                raise MslRuntimeError("IllegalStateException: No match found", node.line)
            idx = _want_int(args[0], node) if args else 0
            if not 0 <= idx <= obj.pattern.regex.groups:
                raise MslRuntimeError(f"IndexOutOfBounds: no group {idx}", node.line)
            return obj.match.group(idx)
    elif isinstance(obj, list):
        if name == "contains":
            _arity(node, args, 1)
            return any(values_equal(x, args[0]) for x in obj)
        if name == "length":
            _arity(node, args, 0)
            return len(obj)
    elif name == "equals":
        _arity(node, args, 1)
        return values_equal(obj, args[0])
    raise MslRuntimeError(f"no method {name} on {type_name(obj)}", node.line)


# -- compilation ---------------------------------------------------------------


def _arith(op, a, b, node):
    if op == "+" and (isinstance(a, str) or isinstance(b, str)):
        return to_text(a) + to_text(b)
    if not (is_number(a) and is_number(b)):
        raise MslRuntimeError(f"bad operands for {op}: {type_name(a)}, {type_name(b)}", node.line)
    if op == "+":
        return _check_int(a + b, node)
    if op == "-":
        return _check_int(a - b, node)
    if op == "*":
        return _check_int(a * b, node)
    if b == 0:
        raise MslRuntimeError("ArithmeticException: / by zero", node.line)
    if op == "/":
        if type(a) is int and type(b) is int:
            q = abs(a) // abs(b)
            return _check_int(q if (a >= 0) == (b >= 0) else -q, node)
        return a / b
    # Java remainder takes the sign of the dividend
    if type(a) is int and type(b) is int:
        r = abs(a) % abs(b)
        return r if a >= 0 else -r
    return math.fmod(a, b)


_CMP = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def _compare(op, a, b, node):
    if not (is_number(a) and is_number(b)):
        raise MslRuntimeError(f"bad operands for {op}: {type_name(a)}, {type_name(b)}", node.line)
    return _CMP[op](a, b)


def _want_bool(v, node, what="condition"):
    if type(v) is not bool:
        raise MslRuntimeError(f"{what} must be bool, got {type_name(v)}", node.line)
    return v


def comparison_distances(op: str, a, b) -> tuple:
    """(outcome, distance to true, distance to false) for numeric operands."""
    if op == "<":
        return (True, 0.0, b - a) if a < b else (False, a - b + K, 0.0)
    if op == "<=":
        return (True, 0.0, b - a + K) if a <= b else (False, a - b, 0.0)
    if op == ">":
        return (True, 0.0, a - b) if a > b else (False, b - a + K, 0.0)
    if op == ">=":
        return (True, 0.0, a - b + K) if a >= b else (False, b - a, 0.0)
    if op == "==":
        return (True, 0.0, K) if a == b else (False, abs(a - b), 0.0)
    if op == "!=":
        return (True, 0.0, abs(a - b)) if a != b else (False, K, 0.0)
    raise ValueError(op)


class Compiler:
    """Compiles the functions and constants of an MslProgram."""

    def __init__(self, program: MslProgram):
        self.program = program
        self.functions: dict = {}
        self.const_exprs: dict = {}
        for name, fn in program.functions.items():
            self.functions[name] = self.compile_function(fn)
        for name, c in program.consts.items():
            self.const_exprs[name] = self.expr(c.value, c.unit)

    # -- functions and statements

    def compile_function(self, fn: A.FunctionDecl):
        body = self.block(fn.body, fn.unit)
        params = fn.param_names
        name = fn.name

        def run(ctx: Context, args):
            if len(args) != len(params):
                raise MslRuntimeError(f"{name} takes {len(params)} arguments, got {len(args)}", fn.line, fn.unit)
            if ctx.depth >= MAX_DEPTH:
                raise MslRuntimeError("StackOverflowError", fn.line, fn.unit)
            ctx.depth += 1
            try:
                frame = dict(zip(params, args))
                r = body(frame, ctx)
            finally:
                ctx.depth -= 1
            return None if r is _NORET else r

        run.decl = fn
        return run

    def block(self, stmts, unit):
        compiled = tuple(self.stmt(s, unit) for s in stmts)

        def run(frame, ctx):
            for s in compiled:
                r = s(frame, ctx)
                if r is not _NORET:
                    return r
            return _NORET

        return run

    def stmt(self, s: A.Stmt, unit):
        key = (unit, s.line)
        if isinstance(s, (A.Let, A.Assign)):
            value = self.expr(s.value, unit)
            name = s.name

            def run(frame, ctx):
                ctx.recorder.line(key)
                frame[name] = value(frame, ctx)
                return _NORET

            return run
        if isinstance(s, A.Return):
            if s.value is None:

                def run(frame, ctx):
                    ctx.recorder.line(key)
                    return None

                return run
            value = self.expr(s.value, unit)

            def run(frame, ctx):
                ctx.recorder.line(key)
                return value(frame, ctx)

            return run
        if isinstance(s, A.ExprStmt):
            value = self.expr(s.expr, unit)

            def run(frame, ctx):
                ctx.recorder.line(key)
                value(frame, ctx)
                return _NORET

            return run
        if isinstance(s, A.If):
            cond = self.cond(s.cond, unit)
            then_b = self.block(s.then_body, unit)
            else_b = self.block(s.else_body, unit) if s.else_body else None
            t_true = Target.for_outcome(TargetKind.BRANCH, unit, s.line, s.position, True)
            t_false = t_true.sibling()

            def run(frame, ctx):
                rec = ctx.recorder
                rec.line(key)
                outcome, d_true, d_false = cond(frame, ctx)
                if outcome:
                    rec.decision(t_true, t_false, d_false)
                    return then_b(frame, ctx)
                rec.decision(t_false, t_true, d_true)
                if else_b is not None:
                    return else_b(frame, ctx)
                return _NORET

            return run
        raise TypeError(f"unknown statement {type(s).__name__}")

    # -- conditions carry branch distances

    def cond(self, e, unit):
        if isinstance(e, A.Binary) and e.op in ("<", "<=", ">", ">=", "==", "!="):
            left = self.expr(e.left, unit)
            right = self.expr(e.right, unit)
            op = e.op

            def run(frame, ctx):
                a = left(frame, ctx)
                b = right(frame, ctx)
                if is_number(a) and is_number(b):
                    return comparison_distances(op, a, b)
                if op in ("==", "!="):
                    eq = values_equal(a, b)
                    v = eq if op == "==" else not eq
                    return (True, 0.0, FLAT) if v else (False, FLAT, 0.0)
                v = _compare(op, a, b, e)
                return (True, 0.0, FLAT) if v else (False, FLAT, 0.0)

            return run
        if isinstance(e, A.Binary) and e.op in ("&&", "||"):
            left = self.cond(e.left, unit)
            right = self.cond(e.right, unit)
            if e.op == "&&":

                def run(frame, ctx):
                    lv, lt, lf = left(frame, ctx)
                    if not lv:
                        return (False, lt + FLAT, 0.0)
                    rv, rt, rf = right(frame, ctx)
                    return (rv, rt, min(lf, rf))

                return run

            def run(frame, ctx):
                lv, lt, lf = left(frame, ctx)
                if lv:
                    return (True, 0.0, lf + FLAT)
                rv, rt, rf = right(frame, ctx)
                return (rv, min(lt, rt), rf)

            return run
        if isinstance(e, A.Unary) and e.op == "!":
            inner = self.cond(e.operand, unit)

            def run(frame, ctx):
                v, dt, df = inner(frame, ctx)
                return (not v, df, dt)

            return run
        value = self.expr(e, unit)

        def run(frame, ctx):
            v = _want_bool(value(frame, ctx), e)
            return (True, 0.0, FLAT) if v else (False, FLAT, 0.0)

        return run

    # -- expressions

    def expr(self, e, unit):
        if isinstance(e, A.Literal):
            v = e.value
            return lambda frame, ctx: v
        if isinstance(e, A.Name):
            name = e.ident
            line = e.line

            def run(frame, ctx):
                try:
                    return frame[name]
                except KeyError:
                    pass
                try:
                    return ctx.globals[name]
                except KeyError:
                    raise MslRuntimeError(f"undefined variable {name}", line, unit) from None

            return run
        if isinstance(e, A.RequestField):
            kind, path = e.kind, e.path

            def run(frame, ctx):
                if ctx.request is None:
                    raise MslRuntimeError("no request in scope", e.line, unit)
                v = ctx.request[kind]
                for p in path:
                    if not isinstance(v, dict) or p not in v:
                        raise MslRuntimeError(f"request has no {kind} field {'.'.join(path)}", e.line, unit)
                    v = v[p]
                return v

            return run
        if isinstance(e, A.FieldAccess):
            obj = self.expr(e.obj, unit)
            name = e.name

            def run(frame, ctx):
                o = obj(frame, ctx)
                if isinstance(o, dict) and name in o:
                    return o[name]
                raise MslRuntimeError(f"no field {name} on {type_name(o)}", e.line, unit)

            return run
        if isinstance(e, A.Call):
            args = tuple(self.expr(a, unit) for a in e.args)
            name = e.name
            if name in A.BUILTIN_FUNCTIONS:

                def run(frame, ctx):
                    return _builtin_function(name, [a(frame, ctx) for a in args], e)

                return run

            def run(frame, ctx):
                fn = ctx.functions.get(name)
                if fn is None:
                    raise MslRuntimeError(f"unknown function {name}", e.line, unit)
                return fn(ctx, [a(frame, ctx) for a in args])

            return run
        if isinstance(e, A.MethodCall):
            obj = self.expr(e.obj, unit)
            args = tuple(self.expr(a, unit) for a in e.args)
            name = e.name
            if e.position is not None:
                t_true = Target.for_outcome(TargetKind.METHOD_REPLACEMENT, unit, e.name_line, e.position, True)
                t_false = t_true.sibling()

                def run(frame, ctx):
                    r = call_method(obj(frame, ctx), name, [a(frame, ctx) for a in args], e)
                    if r is True:
                        ctx.recorder.decision(t_true, t_false, FLAT)
                    elif r is False:
                        ctx.recorder.decision(t_false, t_true, FLAT)
                    return r

                return run

            def run(frame, ctx):
                return call_method(obj(frame, ctx), name, [a(frame, ctx) for a in args], e)

            return run
        if isinstance(e, A.Unary):
            inner = self.expr(e.operand, unit)
            if e.op == "!":
                return lambda frame, ctx: not _want_bool(inner(frame, ctx), e, "operand of !")

            def neg(frame, ctx):
                v = inner(frame, ctx)
                if not is_number(v):
                    raise MslRuntimeError(f"bad operand for -: {type_name(v)}", e.line, unit)
                return _check_int(-v, e)

            return neg
        if isinstance(e, A.Binary):
            op = e.op
            left = self.expr(e.left, unit)
            right = self.expr(e.right, unit)
            if op == "&&":
                return lambda f, c: _want_bool(left(f, c), e, "operand of &&") and _want_bool(
                    right(f, c), e, "operand of &&"
                )
            if op == "||":
                return lambda f, c: _want_bool(left(f, c), e, "operand of ||") or _want_bool(
                    right(f, c), e, "operand of ||"
                )
            if op == "==":
                return lambda f, c: values_equal(left(f, c), right(f, c))
            if op == "!=":
                return lambda f, c: not values_equal(left(f, c), right(f, c))
            if op in _CMP:
                return lambda f, c: _compare(op, left(f, c), right(f, c), e)
            return lambda f, c: _arith(op, left(f, c), right(f, c), e)
        raise TypeError(f"unknown expression {type(e).__name__}")


class LazyGlobals(dict):
    """Global scope whose constants are evaluated on first use."""

    def __init__(self, exprs: dict, functions: dict, request=None):
        super().__init__()
        self._exprs = exprs
        self._functions = functions
        self._request = request
        self._pending: set = set()

    def __missing__(self, name):
        expr = self._exprs.get(name)
        if expr is None or name in self._pending:
            raise KeyError(name)
        self._pending.add(name)
        try:
            ctx = Context(self._request, Recorder(), self, self._functions)
            value = expr({}, ctx)
        finally:
            self._pending.discard(name)
        self[name] = value
        return value


def evaluate_constants(compiler: Compiler) -> dict:
    scope = LazyGlobals(compiler.const_exprs, compiler.functions)
    for name in compiler.const_exprs:
        try:
            scope[name]
        except KeyError:
            raise MslRuntimeError(f"constant {name} depends on an undefined or cyclic name") from None
    return dict(scope)
