"""Lexer and recursive-descent parser for MSL source units."""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import ast as A

KEYWORDS = frozenset({"fun", "const", "let", "if", "else", "return", "true", "false", "null", "request"})

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<doc>/\*\*(?!/).*?\*/)
  | (?P<block>/\*.*?\*/)
  | (?P<comment>//[^\n]*)
  | (?P<float>\d+\.\d+)
  | (?P<int>\d+)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|!=|<=|>=|&&|\|\||[-+*/%<>=!(){},:;.])
    """,
    re.VERBOSE | re.DOTALL,
)

_ESCAPES = {"n": "\n", "t": "\t", '"': '"', "\\": "\\", "r": "\r"}


class MslSyntaxError(SyntaxError):
    def __init__(self, message: str, unit: str, line: int, col: int, expected=()):
        self.unit = unit
        self.line = line
        self.col = col
        self.expected = tuple(sorted(expected))
        detail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{unit}:{line}:{col}: {message}{detail}")
        self.lineno = line
        self.offset = col


@dataclass
class Token:
    kind: str  # ident, keyword, int, float, string, op, doc, eof
    value: object
    text: str
    line: int
    col: int
    start: int
    end: int


def tokenize(source: str, unit: str = "<msl>", first_line: int = 1) -> list:
    tokens = []
    pos = 0
    line = first_line
    line_start = 0
    n = len(source)
    while pos < n:
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise MslSyntaxError(f"unexpected character {source[pos]!r}", unit, line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        col = pos - line_start + 1
        if kind not in ("ws", "comment", "block"):
            if kind == "ident" and text in KEYWORDS:
                tokens.append(Token("keyword", text, text, line, col, pos, m.end()))
            elif kind == "int":
                tokens.append(Token("int", int(text), text, line, col, pos, m.end()))
            elif kind == "float":
                tokens.append(Token("float", float(text), text, line, col, pos, m.end()))
            elif kind == "string":
                tokens.append(Token("string", _unescape(text[1:-1], unit, line, col), text, line, col, pos, m.end()))
            elif kind == "doc":
                tokens.append(Token("doc", text, text, line, col, pos, m.end()))
            else:
                tokens.append(Token(kind, text, text, line, col, pos, m.end()))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + text.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", None, "", line, pos - line_start + 1, pos, pos))
    return tokens


def _unescape(body: str, unit: str, line: int, col: int) -> str:
    out = []
    i = 0
    while i < len(body):
        c = body[i]
        if c == "\\":
            nxt = body[i + 1]
            if nxt not in _ESCAPES:
                raise MslSyntaxError(f"unknown escape \\{nxt}", unit, line, col + i + 1)
            out.append(_ESCAPES[nxt])
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


@dataclass
class Unit:
    """One parsed source unit."""

    name: str
    source: str
    first_line: int
    consts: list
    functions: list

    @property
    def lines(self) -> list:
        return self.source.split("\n")

    def line_text(self, line: int) -> str | None:
        idx = line - self.first_line
        lines = self.lines
        if 0 <= idx < len(lines):
            return lines[idx]
        return None

    def statements(self):
        for fn in self.functions:
            yield from A.iter_statements(fn.body)


class Parser:
    def __init__(self, source: str, unit: str, first_line: int = 1):
        self.source = source
        self.unit = unit
        self.first_line = first_line
        self.tokens = tokenize(source, unit, first_line)
        self.i = 0
        self._lines = source.split("\n")

    # -- token helpers -----------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def at(self, kind: str, value=None) -> bool:
        t = self.tok
        return t.kind == kind and (value is None or t.value == value)

    def at_op(self, *ops) -> bool:
        return self.tok.kind == "op" and self.tok.value in ops

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def error(self, message: str, expected=(), tok: Token | None = None):
        t = tok or self.tok
        found = "end of input" if t.kind == "eof" else repr(t.text)
        raise MslSyntaxError(f"{message}, found {found}", self.unit, t.line, t.col, expected)

    def expect_op(self, op: str, opened: Token | None = None) -> Token:
        if self.at_op(op):
            return self.advance()
        if opened is not None and self.tok.kind == "eof":
            raise MslSyntaxError(
                f"unclosed {opened.text!r} opened here, reached end of input",
                self.unit,
                opened.line,
                opened.col,
                {repr(op)},
            )
        self.error("unexpected token", {repr(op)})

    def expect_ident(self, what: str = "identifier") -> Token:
        if self.at("ident"):
            return self.advance()
        self.error(f"expected {what}", {what})

    def skip_semis(self):
        while self.at_op(";"):
            self.advance()

    def text_between(self, start: int, end: int) -> str:
        return self.source[start:end]

    def full_lines(self, first: int, last: int) -> str:
        lo = first - self.first_line
        hi = last - self.first_line + 1
        return "\n".join(self._lines[lo:hi])

    # -- declarations --------------------------------------------------------

    def parse_unit(self) -> Unit:
        consts, functions = [], []
        while not self.at("eof"):
            doc = None
            doc_tok = None
            while self.at("doc"):
                doc_tok = self.advance()
                doc = doc_tok.value
            if self.at("keyword", "fun"):
                functions.append(self.parse_function(doc, doc_tok))
            elif self.at("keyword", "const"):
                consts.append(self.parse_const(doc))
            elif self.at("eof"):
                break
            else:
                self.error("expected a declaration", {"'fun'", "'const'"})
            self.skip_semis()
        unit = Unit(self.unit, self.source, self.first_line, consts, functions)
        _assign_ordinals(unit)
        return unit

    def parse_const(self, doc) -> A.ConstDecl:
        kw = self.advance()
        name = self.expect_ident("constant name")
        self.expect_op("=")
        value = self.parse_expr()
        end = self.tokens[self.i - 1].end
        return A.ConstDecl(
            kw.line, kw.col, kw.start, end, self.unit, name.value, value, doc, self.text_between(kw.start, end)
        )

    def parse_function(self, doc, doc_tok) -> A.FunctionDecl:
        kw = self.advance()
        name = self.expect_ident("function name")
        open_paren = self.expect_op("(")
        params = []
        if not self.at_op(")"):
            while True:
                pname = self.expect_ident("parameter name")
                ptype = None
                if self.at_op(":"):
                    self.advance()
                    ptype = self.expect_ident("type name").value
                params.append(A.Param(pname.value, ptype))
                if self.at_op(","):
                    self.advance()
                    continue
                break
        self.expect_op(")", open_paren)
        ret = None
        if self.at_op(":"):
            self.advance()
            ret = self.expect_ident("type name").value
        body, close = self.parse_block()
        first_line = doc_tok.line if doc_tok is not None else kw.line
        return A.FunctionDecl(
            kw.line,
            kw.col,
            kw.start,
            close.end,
            self.unit,
            name.value,
            params,
            ret,
            body,
            doc,
            first_line,
            close.line,
            self.full_lines(first_line, close.line),
        )

    def parse_block(self):
        opened = self.expect_op("{")
        body = []
        while not self.at_op("}"):
            if self.at("eof"):
                self.expect_op("}", opened)
            while self.at("doc"):
                self.advance()
            if self.at_op("}"):
                break
            body.append(self.parse_statement())
            self.skip_semis()
        close = self.advance()
        return body, close

    # -- statements ----------------------------------------------------------

    def parse_statement(self) -> A.Stmt:
        t = self.tok
        if t.kind == "keyword" and t.value == "let":
            self.advance()
            name = self.expect_ident("variable name")
            type_name = None
            if self.at_op(":"):
                self.advance()
                type_name = self.expect_ident("type name").value
            self.expect_op("=")
            value = self.parse_expr()
            return self._finish(A.Let, t, name=name.value, type_name=type_name, value=value)
        if t.kind == "keyword" and t.value == "if":
            return self.parse_if()
        if t.kind == "keyword" and t.value == "return":
            self.advance()
            value = None
            nxt = self.tok
            if not (nxt.kind == "op" and nxt.value in ("}", ";")) and nxt.kind != "eof" and nxt.line == t.line:
                value = self.parse_expr()
            return self._finish(A.Return, t, value=value)
        if t.kind == "ident" and self.peek().kind == "op" and self.peek().value == "=":
            self.advance()
            self.advance()
            value = self.parse_expr()
            return self._finish(A.Assign, t, name=t.value, value=value)
        if t.kind in ("ident", "keyword", "int", "float", "string") or (t.kind == "op" and t.value in "(!-"):
            if t.kind == "keyword" and t.value in ("fun", "const", "else"):
                self.error("expected a statement", {"statement"})
            expr = self.parse_expr()
            return self._finish(A.ExprStmt, t, expr=expr)
        self.error("expected a statement", {"statement"})

    def _finish(self, cls, first: Token, **fields):
        end = self.tokens[self.i - 1].end
        return cls(
            first.line, first.col, first.start, end, unit=self.unit, text=self.text_between(first.start, end), **fields
        )

    def parse_if(self) -> A.If:
        kw = self.advance()
        opened = self.expect_op("(")
        cond = self.parse_expr()
        close_paren = self.expect_op(")", opened)
        then_body, _ = self.parse_block()
        else_body = None
        if self.at("keyword", "else"):
            self.advance()
            if self.at("keyword", "if"):
                else_body = [self.parse_if()]
            else:
                else_body, _ = self.parse_block()
        node = self._finish(A.If, kw, cond=cond, then_body=then_body, else_body=else_body)
        node.cond_text = self.text_between(kw.start, close_paren.end)
        return node

    # -- expressions -----------------------------------------------------------

    def parse_expr(self):
        return self.parse_or()

    def _binary_level(self, ops, sub):
        left = sub()
        while self.at_op(*ops):
            op = self.advance()
            right = sub()
            left = A.Binary(left.line, left.col, left.start, right.end, op.value, left, right)
        return left

    def parse_or(self):
        return self._binary_level(("||",), self.parse_and)

    def parse_and(self):
        return self._binary_level(("&&",), self.parse_equality)

    def parse_equality(self):
        return self._binary_level(("==", "!="), self.parse_relational)

    def parse_relational(self):
        return self._binary_level(("<", "<=", ">", ">="), self.parse_additive)

    def parse_additive(self):
        return self._binary_level(("+", "-"), self.parse_multiplicative)

    def parse_multiplicative(self):
        return self._binary_level(("*", "/", "%"), self.parse_unary)

    def parse_unary(self):
        if self.at_op("!", "-"):
            op = self.advance()
            operand = self.parse_unary()
            if op.value == "-" and isinstance(operand, A.Literal) and type(operand.value) in (int, float):
                return A.Literal(op.line, op.col, op.start, operand.end, -operand.value)
            return A.Unary(op.line, op.col, op.start, operand.end, op.value, operand)
        return self.parse_postfix()

    def parse_postfix(self):
        node = self.parse_primary()
        while self.at_op("."):
            self.advance()
            name = self.expect_ident("field or method name")
            if self.at_op("("):
                args, close = self.parse_args()
                node = A.MethodCall(
                    node.line, node.col, node.start, close.end, node, name.value, args, name.line, name.col
                )
            else:
                node = A.FieldAccess(node.line, node.col, node.start, name.end, node, name.value)
        return node

    def parse_args(self):
        opened = self.expect_op("(")
        args = []
        if not self.at_op(")"):
            while True:
                args.append(self.parse_expr())
                if self.at_op(","):
                    self.advance()
                    continue
                break
        close = self.expect_op(")", opened)
        return args, close

    def parse_primary(self):
        t = self.tok
        if t.kind in ("int", "float", "string"):
            self.advance()
            return A.Literal(t.line, t.col, t.start, t.end, t.value)
        if t.kind == "keyword":
            if t.value in ("true", "false", "null"):
                self.advance()
                return A.Literal(t.line, t.col, t.start, t.end, {"true": True, "false": False, "null": None}[t.value])
            if t.value == "request":
                return self.parse_request_field()
        if t.kind == "ident":
            self.advance()
            if self.at_op("("):
                args, close = self.parse_args()
                return A.Call(t.line, t.col, t.start, close.end, t.value, args)
            return A.Name(t.line, t.col, t.start, t.end, t.value)
        if t.kind == "op" and t.value == "(":
            self.advance()
            inner = self.parse_expr()
            self.expect_op(")", t)
            return inner
        self.error("expected an expression", {"expression"})

    def parse_request_field(self):
        kw = self.advance()
        self.expect_op(".")
        kind = self.expect_ident("request part")
        if kind.value not in A.REQUEST_KINDS:
            self.error(f"unknown request part {kind.value!r}", {repr(k) for k in A.REQUEST_KINDS}, kind)
        path = []
        end = kind.end
        while self.at_op(".") and self.peek().kind == "ident" and not (
            self.peek(2).kind == "op" and self.peek(2).value == "("
        ):
            self.advance()
            name = self.advance()
            path.append(name.value)
            end = name.end
        if not path:
            self.error("request field access needs a field name", {"field name"})
        return A.RequestField(kw.line, kw.col, kw.start, end, kind.value, tuple(path))


def _assign_ordinals(unit: Unit) -> None:
    """Number statements per line and decision points per (line, kind)."""
    stmt_counts: dict = {}
    for c in unit.consts:
        c.ordinal = stmt_counts.get(c.line, 0)
        stmt_counts[c.line] = c.ordinal + 1
    decisions = []
    for fn in unit.functions:
        for stmt in A.iter_statements(fn.body):
            stmt.ordinal = stmt_counts.get(stmt.line, 0)
            stmt_counts[stmt.line] = stmt.ordinal + 1
            if isinstance(stmt, A.If):
                decisions.append(("branch", stmt.line, stmt.col, stmt))
            for e in A.stmt_exprs(stmt):
                for node in A.iter_expr(e):
                    if isinstance(node, A.MethodCall) and node.name in A.REPLACED_METHODS:
                        decisions.append(("mr", node.name_line, node.name_col, node))
    for const in unit.consts:
        for node in A.iter_expr(const.value):
            if isinstance(node, A.MethodCall) and node.name in A.REPLACED_METHODS:
                decisions.append(("mr", node.name_line, node.name_col, node))
    decisions.sort(key=lambda d: (d[1], d[2]))
    counters: dict = {}
    for kind, line, _col, node in decisions:
        pos = counters.get((kind, line), 0)
        counters[(kind, line)] = pos + 1
        node.position = pos


def parse_msl(source: str, unit_name: str, first_line: int = 1) -> Unit:
    """Parse one source unit. ``first_line`` offsets line numbers for fragments."""
    return Parser(source, unit_name, first_line).parse_unit()


def parse_statement_text(text: str, unit: str = "<fragment>"):
    """Parse a single statement (used to read back quoted definitions)."""
    p = Parser(text, unit)
    if p.at("keyword", "const"):
        p.advance()
        name = p.expect_ident("constant name")
        p.expect_op("=")
        value = p.parse_expr()
        stmt = A.Let(1, 1, 0, len(text), unit=unit, text=text, name=name.value, value=value)
    else:
        stmt = p.parse_statement()
    p.skip_semis()
    if not p.at("eof"):
        p.error("trailing input after statement")
    return stmt


def parse_expression_text(text: str, unit: str = "<fragment>"):
    p = Parser(text, unit)
    expr = p.parse_expr()
    if not p.at("eof"):
        p.error("trailing input after expression")
    return expr
