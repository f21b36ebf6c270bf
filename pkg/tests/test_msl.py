import pytest
from hypothesis import given, strategies as st

from hintfuzz.harness import decision_targets
from hintfuzz.msl import DuplicateDeclaration, MslProgram, MslSyntaxError, ast as A, parse_msl

ONE_DECISION = """\
fun f(): int {
    let x = request.query.x
    if (x < 1) {
        return 0
    }
    return x
}
"""


def test_single_decision():
    unit = parse_msl(ONE_DECISION, "demo.F")
    ifs = [s for s in unit.statements() if isinstance(s, A.If)]
    assert len(ifs) == 1 and ifs[0].line == 3 and ifs[0].position == 0
    assert [f.name for f in unit.functions] == ["f"]


def test_unbalanced_brace_reports_line():
    src = "fun f(): int {\n    if (true) {\n        return 1\n\n"
    with pytest.raises(SyntaxError) as e:
        parse_msl(src, "demo.F")
    assert isinstance(e.value, MslSyntaxError)
    # points at the brace left open, not at end of input
    assert (e.value.unit, e.value.line) == ("demo.F", 2)
    assert "unclosed" in str(e.value)


def test_bad_token_line_and_column():
    with pytest.raises(MslSyntaxError) as e:
        parse_msl("fun f(): int {\n    let x = 1 $ 2\n}\n", "u")
    assert (e.value.line, e.value.col) == (2, 15)


def test_hgvs_decisions_on_distinct_lines(hgvs):
    unit = hgvs.program.units["genome.VariantAnnotator"]
    branch_lines = [s.line for s in unit.statements() if isinstance(s, A.If)]
    assert branch_lines == [10, 12]


def test_positions_count_per_line():
    unit = parse_msl('fun f(a: string): bool {\n    return a.matches("x") && a.endsWith("y")\n}\n', "u")
    calls = [n for s in unit.statements() for e in A.stmt_exprs(s) for n in A.iter_expr(e)
             if isinstance(n, A.MethodCall)]
    assert sorted(c.position for c in calls) == [0, 1]


def test_duplicate_declarations_rejected():
    with pytest.raises(DuplicateDeclaration):
        MslProgram.from_sources({"a": "fun f(): int {\n return 1\n}\n", "b": "fun f(): int {\n return 2\n}\n"})
    with pytest.raises(DuplicateDeclaration):
        MslProgram.from_sources({"a": "fun parseInt(): int {\n return 1\n}\n"})


def test_branch_targets_for_comparison():
    prog = MslProgram.from_sources({"u.X": ONE_DECISION})
    ids = sorted(t.id for t in decision_targets(prog))
    assert ids == ["Branch_at_u.X_at_line_3_position_0_FalseSide", "Branch_at_u.X_at_line_3_position_0_TrueSide"]


def test_matches_gives_method_replacement_targets():
    prog = MslProgram.from_sources({"u.X": 'fun f(): bool {\n    return request.query.q.matches("a+")\n}\n'})
    assert sorted(t.id for t in decision_targets(prog)) == [
        "MethodReplacement_at_u.X_at_line_2_position_0_ReturnsFalse",
        "MethodReplacement_at_u.X_at_line_2_position_0_ReturnsTrue",
    ]


def test_hash_validator_targets(hashguard):
    ts = [t for t in hashguard.targets if t.class_name == "auth.HashValidator"]
    kinds = sorted((t.kind.value, t.line, t.expected.value) for t in ts)
    assert kinds == [
        ("Branch", 14, "FalseSide"),
        ("Branch", 14, "TrueSide"),
        ("MethodReplacement", 13, "ReturnsFalse"),
        ("MethodReplacement", 13, "ReturnsTrue"),
    ]


@given(st.integers(-10**6, 10**6), st.text(alphabet="abc xyz019", max_size=12))
def test_literals_round_trip_through_parser(n, s):
    src = f'const N = {n}\nconst S = "{s}"\n'
    unit = parse_msl(src, "u")
    values = {c.name: c.value for c in unit.consts}
    assert isinstance(values["N"], (A.Literal, A.Unary))
    assert values["S"].value == s
