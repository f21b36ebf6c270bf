"""AST node classes for MSL.

Every node records the 1-based line and column where it starts plus the source
offsets it spans, so statements and functions can be quoted verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

# Boolean builtins whose outcomes are tracked as method-replacement targets.
REPLACED_METHODS = frozenset({"matches", "contains", "startsWith", "endsWith"})

BUILTIN_FUNCTIONS = frozenset({"parseInt", "parseFloat", "compile", "str", "len"})
BUILTIN_METHODS = frozenset(
    {
        "matches",
        "contains",
        "startsWith",
        "endsWith",
        "length",
        "substring",
        "group",
        "matcher",
        "toLowerCase",
        "toUpperCase",
        "trim",
        "indexOf",
        "equals",
    }
)

REQUEST_KINDS = ("path", "query", "header", "body")


@dataclass(eq=False)
class Node:
    line: int
    col: int
    start: int
    end: int


# -- expressions -------------------------------------------------------------


@dataclass(eq=False)
class Literal(Node):
    value: Any


@dataclass(eq=False)
class Name(Node):
    ident: str


@dataclass(eq=False)
class RequestField(Node):
    kind: str
    path: tuple


@dataclass(eq=False)
class FieldAccess(Node):
    obj: Node
    name: str


@dataclass(eq=False)
class Call(Node):
    name: str
    args: list


@dataclass(eq=False)
class MethodCall(Node):
    obj: Node
    name: str
    args: list
    name_line: int = 0
    name_col: int = 0
    # ordinal among replaced-method calls on ``name_line``; None if not tracked
    position: Optional[int] = None


@dataclass(eq=False)
class Binary(Node):
    op: str
    left: Node
    right: Node


@dataclass(eq=False)
class Unary(Node):
    op: str
    operand: Node


# -- statements --------------------------------------------------------------


@dataclass(eq=False)
class Stmt(Node):
    unit: str = ""
    ordinal: int = 0
    text: str = ""


@dataclass(eq=False)
class Let(Stmt):
    name: str = ""
    type_name: Optional[str] = None
    value: Optional[Node] = None


@dataclass(eq=False)
class Assign(Stmt):
    name: str = ""
    value: Optional[Node] = None


@dataclass(eq=False)
class If(Stmt):
    cond: Optional[Node] = None
    then_body: list = field(default_factory=list)
    else_body: Optional[list] = None
    position: int = 0
    # source span of the condition only, used when quoting the decision
    cond_text: str = ""


@dataclass(eq=False)
class Return(Stmt):
    value: Optional[Node] = None


@dataclass(eq=False)
class ExprStmt(Stmt):
    expr: Optional[Node] = None


# -- declarations ------------------------------------------------------------


@dataclass(eq=False)
class Param:
    name: str
    type_name: Optional[str]


@dataclass(eq=False)
class ConstDecl(Node):
    unit: str
    name: str
    value: Node
    doc: Optional[str]
    text: str
    ordinal: int = 0


@dataclass(eq=False)
class FunctionDecl(Node):
    unit: str
    name: str
    params: list
    return_type: Optional[str]
    body: list
    doc: Optional[str]
    first_line: int  # doc comment line when present
    end_line: int
    text: str  # full source lines, annotation included

    @property
    def param_names(self) -> list:
        return [p.name for p in self.params]

    def contains_line(self, line: int) -> bool:
        return self.first_line <= line <= self.end_line


def iter_statements(body: list):
    """Pre-order walk over a statement list, descending into if branches."""
    for stmt in body:
        yield stmt
        if isinstance(stmt, If):
            yield from iter_statements(stmt.then_body)
            if stmt.else_body:
                yield from iter_statements(stmt.else_body)


def iter_expr(node: Node):
    """Pre-order walk over an expression tree."""
    yield node
    if isinstance(node, (Binary,)):
        yield from iter_expr(node.left)
        yield from iter_expr(node.right)
    elif isinstance(node, Unary):
        yield from iter_expr(node.operand)
    elif isinstance(node, FieldAccess):
        yield from iter_expr(node.obj)
    elif isinstance(node, Call):
        for a in node.args:
            yield from iter_expr(a)
    elif isinstance(node, MethodCall):
        yield from iter_expr(node.obj)
        for a in node.args:
            yield from iter_expr(a)


def stmt_exprs(stmt: Stmt) -> list:
    """Expressions evaluated by ``stmt`` itself (not by nested statements)."""
    if isinstance(stmt, (Let, Assign)):
        return [stmt.value]
    if isinstance(stmt, If):
        return [stmt.cond]
    if isinstance(stmt, Return):
        return [stmt.value] if stmt.value is not None else []
    if isinstance(stmt, ExprStmt):
        return [stmt.expr]
    return []


def free_variables(exprs) -> list:
    """Variable names read by the expressions, first-occurrence order."""
    seen: dict = {}
    for e in exprs:
        for node in iter_expr(e):
            if isinstance(node, Name):
                seen.setdefault(node.ident, None)
    return list(seen)
