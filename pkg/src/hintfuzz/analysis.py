"""Related-code extraction: enclosing function, def-use chain, called functions.

The def-use walk is flow-insensitive. Every definition of a variable that is
visible from the use site joins the chain, in discovery order. Call-site
parameter bindings (``formal = actual``) count as definitions of the formal
parameter, so the walk crosses function boundaries in both directions: up the
caller chain first, then backwards from the target statement's variables.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from .model import Target, TargetKind
from .msl import MslProgram, ast as A

log = logging.getLogger(__name__)


class NotInFunction(LookupError):
    pass


class TargetLineNotFound(LookupError):
    pass


class UnresolvedVariable(LookupError):
    def __init__(self, names, chain=None):
        super().__init__(f"unresolved variables: {', '.join(names)}")
        self.names = list(names)
        self.chain = chain


@dataclass(frozen=True, order=True)
class StatementRef:
    unit: str
    line: int
    ordinal: int = 0

    def __str__(self):
        return f"{self.unit}:{self.line}#{self.ordinal}"


@dataclass(frozen=True)
class ChainEntry:
    ref: StatementRef
    text: str
    # disambiguates several parameter bindings quoted from one call statement
    detail: str = ""

    @property
    def key(self) -> tuple:
        return (self.ref, self.detail)

    @property
    def is_binding(self) -> bool:
        return bool(self.detail)


@dataclass
class DefUseChain:
    entries: list = field(default_factory=list)
    unresolved: list = field(default_factory=list)
    _keys: set = field(default_factory=set, repr=False)

    def __contains__(self, entry: ChainEntry) -> bool:
        return entry.key in self._keys

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def add(self, entry: ChainEntry) -> bool:
        if entry.key in self._keys:
            return False
        self._keys.add(entry.key)
        self.entries.append(entry)
        return True

    @property
    def texts(self) -> list:
        return [e.text for e in self.entries]

    @property
    def keys(self) -> list:
        return [e.key for e in self.entries]


@dataclass(frozen=True)
class AnalysisConfig:
    max_caller_depth: int | None = 8
    max_chain_size: int | None = 64


UNCAPPED = AnalysisConfig(None, None)


# ---------------------------------------------------------------------------
# Definition sites
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Def:
    entry: ChainEntry
    uses: tuple  # variable names read by the definition
    scope: object  # FunctionDecl, or None for global scope


@dataclass(frozen=True)
class _CallSite:
    caller: object  # FunctionDecl or None when the call sits in a constant
    stmt: object
    call: A.Call


class _Index:
    """Per-program lookup tables, built once and cached on the program."""

    def __init__(self, program: MslProgram):
        self.program = program
        self.locals: dict = {}  # (fn name, var) -> [_Def]
        self.calls: dict = {}  # callee name -> [_CallSite]
        self.owner: dict = {}  # id(stmt) -> FunctionDecl
        for unit in program.units.values():
            for fn in unit.functions:
                for stmt in A.iter_statements(fn.body):
                    self.owner[id(stmt)] = fn
                    if isinstance(stmt, (A.Let, A.Assign)):
                        d = _Def(
                            ChainEntry(StatementRef(stmt.unit, stmt.line, stmt.ordinal), stmt.text),
                            tuple(A.free_variables([stmt.value])),
                            fn,
                        )
                        self.locals.setdefault((fn.name, stmt.name), []).append(d)
                    for e in A.stmt_exprs(stmt):
                        self._collect_calls(fn, stmt, e)
            for c in unit.consts:
                self._collect_calls(None, c, c.value)

    def _collect_calls(self, fn, stmt, expr):
        for node in A.iter_expr(expr):
            if isinstance(node, A.Call) and node.name in self.program.functions:
                self.calls.setdefault(node.name, []).append(_CallSite(fn, stmt, node))

    def source_text(self, unit: str, node: A.Node) -> str:
        return self.program.units[unit].source[node.start : node.end]

    def bindings(self, callee: A.FunctionDecl, site: _CallSite) -> list:
        out = []
        ref = StatementRef(site.stmt.unit, site.stmt.line, site.stmt.ordinal)
        for i, (param, actual) in enumerate(zip(callee.params, site.call.args)):
            text = f"{param.name} = {self.source_text(site.stmt.unit, actual)}"
            detail = f"{callee.name}@{site.call.col}:{param.name}"
            out.append(
                (param.name, _Def(ChainEntry(ref, text, detail), tuple(A.free_variables([actual])), site.caller))
            )
        return out

    def definitions(self, name: str, scope) -> list | None:
        """Definitions of ``name`` as seen from ``scope``; None if unresolved."""
        if scope is not None:
            defs = list(self.locals.get((scope.name, name), ()))
            if name in scope.param_names:
                for site in self.calls.get(scope.name, ()):
                    defs += [d for formal, d in self.bindings(scope, site) if formal == name]
                return defs
            if defs:
                return defs
        const = self.program.consts.get(name)
        if const is not None:
            return [
                _Def(
                    ChainEntry(StatementRef(const.unit, const.line, const.ordinal), const.text),
                    tuple(A.free_variables([const.value])),
                    None,
                )
            ]
        return None


def _index(program: MslProgram) -> _Index:
    idx = getattr(program, "_analysis_index", None)
    if idx is None:
        idx = _Index(program)
        program._analysis_index = idx
    return idx


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def resolve_statement(program: MslProgram, ref: StatementRef):
    stmt = program.statement(ref.unit, ref.line, ref.ordinal)
    if stmt is None:
        raise TargetLineNotFound(f"no statement at {ref}")
    return stmt


def find_enclosing_function(program: MslProgram, ref: StatementRef) -> A.FunctionDecl:
    stmt = resolve_statement(program, ref)
    if isinstance(stmt, A.ConstDecl):
        raise NotInFunction(f"{ref} is a top-level constant")
    fn = _index(program).owner.get(id(stmt)) or program.function_of(stmt)
    if fn is None:
        raise NotInFunction(f"{ref} is not inside a function")
    return fn


def def_use_chain(
    program: MslProgram, ref: StatementRef, config: AnalysisConfig = AnalysisConfig(), strict: bool = False
) -> DefUseChain:
    idx = _index(program)
    stmt = resolve_statement(program, ref)
    fn = find_enclosing_function(program, ref)
    chain = DefUseChain()
    cap = config.max_chain_size
    max_depth = config.max_caller_depth
    # shallowest caller depth each entry was reached at; a shallower revisit re-expands
    reached: dict = {}

    def full() -> bool:
        return cap is not None and len(chain) >= cap

    def add_def(d: _Def, depth: int):
        # a binding moves the walk into the caller, one level further out
        if d.entry.is_binding:
            if max_depth is not None and depth >= max_depth:
                return
            depth += 1
        key = d.entry.key
        if key in reached and reached[key] <= depth:
            return
        if key not in reached:
            if full():
                return
            chain.add(d.entry)
        reached[key] = depth
        for v in d.uses:
            analyze_variable(v, d.scope, depth)

    def analyze_variable(name: str, scope, depth: int):
        defs = idx.definitions(name, scope)
        if defs is None:
            if name not in chain.unresolved:
                chain.unresolved.append(name)
                log.info("unresolved variable %s in %s", name, scope.name if scope else "<global>")
            return
        for d in defs:
            add_def(d, depth)

    visited: set = set()

    def analyze_callers(callee: A.FunctionDecl, depth: int):
        if callee.name in visited:
            return
        visited.add(callee.name)
        if max_depth is not None and depth >= max_depth:
            return
        for site in idx.calls.get(callee.name, ()):
            for _formal, d in idx.bindings(callee, site):
                add_def(d, depth)
            if site.caller is not None:
                analyze_callers(site.caller, depth + 1)

    analyze_callers(fn, 0)
    for v in A.free_variables(A.stmt_exprs(stmt)):
        analyze_variable(v, fn, 0)
    if strict and chain.unresolved:
        raise UnresolvedVariable(chain.unresolved, chain)
    return chain


def called_function_definitions(program: MslProgram, ref: StatementRef) -> list:
    stmt = resolve_statement(program, ref)
    texts, seen = [], set()
    exprs = [stmt.value] if isinstance(stmt, A.ConstDecl) else A.stmt_exprs(stmt)
    for e in exprs:
        for node in A.iter_expr(e):
            if not isinstance(node, A.Call) or node.name in seen:
                continue
            seen.add(node.name)
            fn = program.functions.get(node.name)
            if fn is not None:
                texts.append(fn.text)
            elif node.name not in A.BUILTIN_FUNCTIONS:
                log.info("skipping unknown callee %s at %s", node.name, ref)
    return texts


def target_statement(program: MslProgram, t: Target):
    """The function-body statement holding the decision named by ``t``."""
    unit = program.units.get(t.class_name)
    if unit is None:
        raise TargetLineNotFound(f"unknown unit {t.class_name}")
    candidates = [s for s in unit.statements() if s.line <= t.line <= s.line + s.text.count("\n")]
    for s in candidates:
        if t.kind is TargetKind.BRANCH and isinstance(s, A.If) and s.line == t.line and s.position == t.position:
            return s
        if t.kind is TargetKind.METHOD_REPLACEMENT:
            for e in A.stmt_exprs(s):
                for node in A.iter_expr(e):
                    if isinstance(node, A.MethodCall) and node.name_line == t.line and node.position == t.position:
                        return s
    on_line = [s for s in candidates if s.line == t.line]
    if on_line:
        return on_line[0]
    raise TargetLineNotFound(f"{t.id}: no statement at {t.class_name}:{t.line}")


@dataclass(frozen=True)
class RelatedCode:
    target: Target
    target_line_text: str
    enclosing_function_text: str
    function_start_line: int
    def_use_chain: tuple  # ChainEntry values
    called_function_defs: tuple
    unresolved: tuple = ()

    @property
    def chain_texts(self) -> list:
        return [e.text for e in self.def_use_chain]

    def without_value_expansion(self) -> RelatedCode:
        return replace(self, def_use_chain=(), called_function_defs=(), unresolved=())

    def sections(self) -> dict:
        return {
            "Target": self.target.id,
            "LineCode": self.target_line_text,
            "DefUseChain": "\n".join(self.chain_texts),
            "CalledFunctionDefinition": "\n\n".join(self.called_function_defs),
            "FunctionCode": self.enclosing_function_text,
        }

    def render(self) -> str:
        return "\n".join(f"[{k}]\n{v}\n" for k, v in self.sections().items())


def extract_related_code(program: MslProgram, t: Target, config: AnalysisConfig = AnalysisConfig()) -> RelatedCode:
    if t.kind not in (TargetKind.BRANCH, TargetKind.METHOD_REPLACEMENT):
        raise ValueError(f"unsupported target kind {t.kind}")
    stmt = target_statement(program, t)
    ref = StatementRef(stmt.unit, stmt.line, stmt.ordinal)
    fn = find_enclosing_function(program, ref)
    line_text = program.units[t.class_name].line_text(t.line)
    if line_text is None:
        raise TargetLineNotFound(f"{t.id}: line {t.line} is out of range")
    chain = def_use_chain(program, ref, config)
    return RelatedCode(
        target=t,
        target_line_text=line_text.strip(),
        enclosing_function_text=fn.text,
        function_start_line=fn.first_line,
        def_use_chain=tuple(chain.entries),
        called_function_defs=tuple(called_function_definitions(program, ref)),
        unresolved=tuple(chain.unresolved),
    )
