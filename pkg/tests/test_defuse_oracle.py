"""Def-use chains against the independent data-flow-graph oracle in ``msl_gen``."""

import random

import pytest

from hintfuzz.analysis import UNCAPPED, StatementRef, def_use_chain
from hintfuzz.msl import MslProgram
from msl_gen import DataFlowGraph, chain_key, random_program, statement_count


def compare(seed):
    prog = random_program(random.Random(seed))
    mp = MslProgram.from_sources(prog.sources)
    g = DataFlowGraph(prog)
    mismatches = []
    for f in prog.functions.values():
        for s in f.walk():
            want, unresolved = g.reachable(s)
            chain = def_use_chain(mp, StatementRef(f.unit, s.line), UNCAPPED)
            got = {chain_key(e) for e in chain}
            if got != want or set(chain.unresolved) != unresolved:
                mismatches.append((f.unit, s.line, got ^ want))
    return prog, mismatches


@pytest.mark.parametrize("block", range(4))
def test_oracle_agreement(block):
    for seed in range(block * 50, block * 50 + 50):
        prog, bad = compare(seed)
        assert not bad, (seed, bad, prog.sources)


def test_generator_respects_bounds():
    for seed in range(200):
        prog = random_program(random.Random(seed))
        assert statement_count(prog) <= 50
        assert len(prog.functions) <= 4
