from fractions import Fraction
from pathlib import Path

import pytest

from bruteforce import output_probs
from conftest import DIAGONALIZER, registry_of
from grainoftruth.machine import MachineRegistry, enumerate_queries, partial_answer_probs
from grainoftruth.oracle import PartialOracle, extends, is_partially_reflective
from grainoftruth.search import answer_at_level, extension_candidates, root_candidates, search

GOLDEN = Path(__file__).parent / "golden"


def reflective_by_brute_force(po, reg):
    probs = partial_answer_probs(po.values, po.level)
    for i, q in enumerate(enumerate_queries(reg, po.level), start=1):
        p1, p0 = output_probs(reg[q.machine], q.machine, len(reg), q.input, po.level, probs)
        v = po.value(i)
        if (p1 > q.threshold and v != 1) or (p0 > 1 - q.threshold and v != 0):
            return False
    return True


def test_diagonalizer_chain_is_frozen():
    reg = registry_of(DIAGONALIZER)
    trace = search(reg, 6)
    assert trace.status == "complete"
    assert [po.values for po in trace.chain] == [
        (1,), (2, 4), (4, 8, 4), (8, 16, 8, 0), (16, 32, 16, 0, 32), (32, 64, 32, 0, 64, 32),
    ]
    for k in range(1, 7):
        assert answer_at_level(trace, 1, k) == Fraction(1, 2)


def test_trace_matches_golden_file():
    reg = registry_of(DIAGONALIZER)
    trace = search(reg, 6)
    assert trace.dump_jsonl() == (GOLDEN / "diagonalizer_trace.jsonl").read_text()


def test_every_emitted_oracle_is_reflective_and_chained():
    reg = registry_of(DIAGONALIZER, "OUT1", "COIN\nOUT")
    trace = search(reg, 6)
    for po, _ in trace.emitted:
        assert reflective_by_brute_force(po, reg)
    for child, parent in zip(trace.chain[1:], trace.chain):
        assert extends(child, parent)


def test_lookahead_does_not_change_the_chain():
    reg = registry_of(DIAGONALIZER, "OUT1", "COIN\nOUT")
    with_la = search(reg, 5)
    without = search(reg, 5, lookahead=False)
    assert [p.values for p in with_la.chain] == [p.values for p in without.chain]


def test_root_candidates_order():
    assert [p.values for p in root_candidates(MachineRegistry())] == [(1,), (0,), (2,)]


def test_extension_candidate_count():
    po = PartialOracle(2, (0, 2))
    # old values {0,1} and {4,3,5}; new query 9 options
    assert len(list(extension_candidates(po))) == 2 * 3 * 9


def test_budget_exhaustion_is_reported():
    reg = registry_of(DIAGONALIZER)
    trace = search(reg, 6, budget=3)
    assert trace.status == "budget-exhausted"
    assert trace.reached < 6
    assert not any(trace.stabilized)
    assert search(reg, 6, budget=0).empty


def test_empty_registry_gives_vacuous_oracles():
    trace = search(MachineRegistry(), 3)
    assert trace.status == "complete"
    assert [p.values for p in trace.chain] == [(1,), (2, 2), (4, 4, 4)]


def test_answer_at_level_validates():
    trace = search(registry_of("OUT1"), 2)
    with pytest.raises(ValueError):
        answer_at_level(trace, 1, 3)
    with pytest.raises(ValueError):
        answer_at_level(trace, 3, 2)


def test_small_search_agrees_with_exhaustive_enumeration():
    # exhaustive: every reflective level-3 oracle reachable by an extends-chain
    reg = registry_of(DIAGONALIZER, "OUT1")
    level1 = [p for p in root_candidates(reg) if is_partially_reflective(p, reg)]
    chains = []
    for p1 in level1:
        for p2 in extension_candidates(p1):
            if not is_partially_reflective(p2, reg):
                continue
            for p3 in extension_candidates(p2):
                if is_partially_reflective(p3, reg):
                    chains.append((p1, p2, p3))
    trace = search(reg, 3, lookahead=False)
    assert tuple(p.values for p in trace.chain) == tuple(p.values for p in chains[0])
