import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import HASH_MATCHES, HGVS_CPOS_TRUE
from hintfuzz.analysis import (
    UNCAPPED,
    AnalysisConfig,
    NotInFunction,
    StatementRef,
    TargetLineNotFound,
    UnresolvedVariable,
    called_function_definitions,
    def_use_chain,
    extract_related_code,
    find_enclosing_function,
)
from hintfuzz.model import Expected, Target, TargetKind, parse_target_id
from hintfuzz.msl import MslProgram
from msl_gen import DataFlowGraph, chain_key, random_program

HV = "auth.HashValidator"
KR = "auth.KeyResource"


def test_enclosing_function(hashguard):
    p = hashguard.program
    assert find_enclosing_function(p, StatementRef(HV, 13)).name == "isHashValid"
    # first body line
    assert find_enclosing_function(p, StatementRef(HV, 12)).name == "isHashValid"
    with pytest.raises(NotInFunction):
        find_enclosing_function(p, StatementRef(HV, 4))
    with pytest.raises(TargetLineNotFound):
        find_enclosing_function(p, StatementRef(HV, 3))


def test_cross_function_chain_order(hashguard):
    chain = def_use_chain(hashguard.program, StatementRef(HV, 13))
    assert chain.texts == [
        "toValidate = key",
        "let key = request.query.key",
        "let matcher = PATTERN.matcher(toValidate)",
        "const PATTERN = compile(GUID_HASH_PATTERN)",
        'const GUID_HASH_PATTERN = "[a-f0-9]{32}"',
    ]
    assert [(e.ref.unit, e.ref.line) for e in chain] == [(KR, 8), (KR, 7), (HV, 12), (HV, 4), (HV, 2)]
    # callee@column:formal
    assert chain.entries[0].detail == "isHashValid@9:toValidate"
    assert chain.unresolved == []


def test_literal_only_target_has_only_bindings():
    prog = MslProgram.from_sources({
        "u": "fun g(a: int): int {\n    if (1 < 2) {\n        return a\n    }\n    return 0\n}\n"
             "fun h(): int {\n    return g(request.query.n)\n}\n",
    })
    chain = def_use_chain(prog, StatementRef("u", 2))
    assert chain.entries and all(e.is_binding for e in chain)
    assert chain.texts == ["a = request.query.n"]


def test_called_function_definitions():
    prog = MslProgram.from_sources({
        "u": "fun normalize(x: string): string {\n    return x\n}\n"
             "fun g(y: string): string {\n    return y\n}\n"
             "fun main(): bool {\n"
             "    let x = request.query.x\n"
             "    let a = normalize(x)\n"
             "    let b = x.matches(\"q\")\n"
             "    let c = normalize(g(normalize(x)))\n"
             "    return b\n"
             "}\n",
    })
    texts = lambda line: called_function_definitions(prog, StatementRef("u", line))
    assert [t.split("(")[0] for t in texts(9)] == ["fun normalize"]
    assert texts(10) == []
    assert sorted(t.split("(")[0] for t in texts(11)) == ["fun g", "fun normalize"]


def test_extract_related_code_hgvs(hgvs):
    rc = extract_related_code(hgvs.program, parse_target_id(HGVS_CPOS_TRUE))
    assert rc.target_line_text == "if (cPos < 1) {"
    # the doc comment travels with the function
    assert rc.enclosing_function_text.startswith("/**")
    assert "fun resolveHgvspShortFromHgvsc(hgvsc: string): string {" in rc.enclosing_function_text
    assert "let cPos = parseInt(matcher.group(1))" in rc.chain_texts
    assert "hgvsc = hgvsc" in rc.chain_texts
    assert "let hgvsc = request.body.hgvsc" in rc.chain_texts
    assert rc.called_function_defs == ()
    empty = rc.without_value_expansion()
    assert empty.def_use_chain == () and empty.called_function_defs == ()
    assert empty.sections()["DefUseChain"] == "" and empty.sections()["CalledFunctionDefinition"] == ""


def test_extract_entry_point_without_callers(hashguard):
    t = Target(TargetKind.BRANCH, KR, 17, 0, Expected.TRUE_SIDE)
    rc = extract_related_code(hashguard.program, t)
    assert rc.chain_texts == ["let id = request.path.id"]
    assert rc.called_function_defs == ()


def test_stale_line_raises(hashguard):
    with pytest.raises(TargetLineNotFound):
        extract_related_code(hashguard.program, Target(TargetKind.BRANCH, HV, 99, 0, Expected.TRUE_SIDE))
    with pytest.raises(TargetLineNotFound):
        extract_related_code(hashguard.program, Target(TargetKind.BRANCH, "no.Such", 1, 0, Expected.TRUE_SIDE))


def test_deterministic(hashguard):
    t = parse_target_id(HASH_MATCHES)
    assert extract_related_code(hashguard.program, t) == extract_related_code(hashguard.program, t)


def test_unresolved_names_are_reported():
    prog = MslProgram.from_sources({"u": "fun f(): int {\n    return ghost + 1\n}\n"})
    chain = def_use_chain(prog, StatementRef("u", 2))
    assert chain.unresolved == ["ghost"] and len(chain) == 0
    with pytest.raises(UnresolvedVariable) as e:
        def_use_chain(prog, StatementRef("u", 2), strict=True)
    assert e.value.names == ["ghost"]


def _deep_program(depth):
    fns = [f"fun f{i}(a: int): int {{\n    return f{i + 1}(a)\n}}\n" for i in range(depth)]
    fns.append(f"fun f{depth}(a: int): int {{\n    if (a < 1) {{\n        return 1\n    }}\n    return a\n}}\n")
    fns.append("fun entry(): int {\n    return f0(request.query.n)\n}\n")
    return MslProgram.from_sources({"u": "".join(fns)})


def test_caller_depth_cap():
    depth = 12
    prog = _deep_program(depth)
    line = 3 * depth + 2
    full = def_use_chain(prog, StatementRef("u", line), UNCAPPED)
    assert len(full) == depth + 1
    capped = def_use_chain(prog, StatementRef("u", line), AnalysisConfig(max_caller_depth=8))
    assert len(capped) == 8
    assert capped.texts == full.texts[:8]


def test_chain_size_cap():
    body = "".join(f"    x = x + {i}\n" for i in range(100))
    prog = MslProgram.from_sources({"u": f"fun f(): int {{\n    let x = 0\n{body}    return x\n}}\n"})
    ret = 103
    assert len(def_use_chain(prog, StatementRef("u", ret), UNCAPPED)) == 101
    assert len(def_use_chain(prog, StatementRef("u", ret))) == 64


def test_recursion_terminates():
    prog = MslProgram.from_sources({
        "u": "fun even(n: int): bool {\n    if (n == 0) {\n        return true\n    }\n    return odd(n - 1)\n}\n"
             "fun odd(n: int): bool {\n    if (n == 0) {\n        return false\n    }\n    return even(n - 1)\n}\n"
             "fun entry(): bool {\n    return even(request.query.n)\n}\n",
    })
    chain = def_use_chain(prog, StatementRef("u", 2), UNCAPPED)
    assert sorted(chain.texts) == ["n = n - 1", "n = n - 1", "n = request.query.n"]
    assert len(set(chain.keys)) == len(chain)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32))
def test_chain_is_duplicate_free_and_minimal(seed):
    prog = random_program(random.Random(seed))
    mp = MslProgram.from_sources(prog.sources)
    g = DataFlowGraph(prog)
    for f in prog.functions.values():
        for s in f.walk():
            chain = def_use_chain(mp, StatementRef(f.unit, s.line), UNCAPPED)
            keys = [chain_key(e) for e in chain]
            assert len(keys) == len(set(keys))
            want, _ = g.reachable(s)
            # nothing outside the backward slice
            assert set(keys) <= want
