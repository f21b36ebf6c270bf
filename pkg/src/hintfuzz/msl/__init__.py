"""MSL, the mini-service language the bundled services are written in.

See ``docs/msl.md`` in the repository for the grammar.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import ast
from .parser import MslSyntaxError, Unit, parse_expression_text, parse_msl, parse_statement_text


class DuplicateDeclaration(ValueError):
    pass


@dataclass
class MslProgram:
    """A set of parsed units sharing one global namespace."""

    units: dict = field(default_factory=dict)
    functions: dict = field(default_factory=dict)
    consts: dict = field(default_factory=dict)

    @classmethod
    def from_units(cls, units) -> MslProgram:
        prog = cls()
        for unit in units:
            prog.add(unit)
        return prog

    @classmethod
    def from_sources(cls, sources: dict) -> MslProgram:
        """``sources`` maps unit name to source text."""
        return cls.from_units(parse_msl(text, name) for name, text in sources.items())

    def add(self, unit: Unit) -> None:
        if unit.name in self.units:
            raise DuplicateDeclaration(f"unit {unit.name} declared twice")
        for decl in [*unit.consts, *unit.functions]:
            if decl.name in self.functions or decl.name in self.consts:
                raise DuplicateDeclaration(f"{decl.name} declared twice (second in {unit.name})")
            if isinstance(decl, ast.FunctionDecl):
                if decl.name in ast.BUILTIN_FUNCTIONS:
                    raise DuplicateDeclaration(f"{decl.name} shadows a builtin")
                self.functions[decl.name] = decl
            else:
                self.consts[decl.name] = decl
        self.units[unit.name] = unit
        self.__dict__.pop("_analysis_index", None)

    def statements_at(self, unit: str, line: int) -> list:
        u = self.units.get(unit)
        if u is None:
            return []
        found = [c for c in u.consts if c.line == line]
        found += [s for s in u.statements() if s.line == line]
        return sorted(found, key=lambda s: s.ordinal)

    def statement(self, unit: str, line: int, ordinal: int = 0):
        for s in self.statements_at(unit, line):
            if s.ordinal == ordinal:
                return s
        return None

    def executable_lines(self) -> set:
        """(unit, line) of every statement inside a function body."""
        return {(u.name, s.line) for u in self.units.values() for s in u.statements()}

    def function_of(self, stmt) -> ast.FunctionDecl | None:
        for fn in self.functions.values():
            if fn.unit == stmt.unit and fn.start <= stmt.start and stmt.end <= fn.end:
                return fn
        return None


__all__ = [
    "MslProgram",
    "MslSyntaxError",
    "DuplicateDeclaration",
    "Unit",
    "ast",
    "parse_msl",
    "parse_statement_text",
    "parse_expression_text",
]
