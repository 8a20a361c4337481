from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from bruteforce import output_probs
from conftest import DIAGONALIZER, registry_of
from grainoftruth.machine import (
    AssemblyError,
    BuiltinMachine,
    Call,
    Choose,
    Coin,
    Evaluator,
    MachineError,
    MachineRegistry,
    assemble,
    enumerate_queries,
    eval_truncated,
    oracle_dependencies,
    parse_dyadic,
    partial_answer_probs,
    query_at,
    query_index,
    string_at,
    string_index,
    threshold_at,
    threshold_index,
)
from grainoftruth.oracle import PartialOracle

# frozen from the enumeration's definition, checked by hand
GOLDEN_SINGLE_MACHINE = ["1 ε 1/2^1", "1 ε 1/2^2", "1 0 1/2^1", "1 ε 3/2^2", "1 0 1/2^2", "1 1 1/2^1"]


def test_query_enumeration_golden():
    assert [query_at(1, i).golden() for i in range(1, 7)] == GOLDEN_SINGLE_MACHINE


def test_two_machine_enumeration_starts_on_each_diagonal():
    got = [query_at(2, i).golden() for i in range(1, 6)]
    assert got == ["1 ε 1/2^1", "1 ε 1/2^2", "1 0 1/2^1", "2 ε 1/2^1", "1 ε 3/2^2"]


@given(st.integers(1, 3), st.integers(1, 400))
def test_query_index_inverts_query_at(n, i):
    q = query_at(n, i)
    assert query_index(n, q.machine, q.input, q.threshold) == i


@given(st.integers(0, 2000))
def test_string_and_threshold_indices_invert(i):
    assert string_index(string_at(i)) == i
    p = threshold_at(i)
    assert 0 < p < 1
    assert threshold_index(p) == i


def test_non_enumerated_triples_have_no_index():
    assert query_index(1, 1, "", Fraction(0)) is None
    assert query_index(1, 1, "", Fraction(1)) is None
    assert query_index(1, 2, "", Fraction(1, 2)) is None
    assert query_index(1, 1, "", Fraction(1, 3)) is None


@pytest.mark.parametrize("text,value", [("1/2", Fraction(1, 2)), ("3/2^3", Fraction(3, 8)), ("0", 0), ("1", 1)])
def test_parse_dyadic(text, value):
    assert parse_dyadic(text) == value


@pytest.mark.parametrize("text", ["1/3", "3/2", "x", "5/4"])
def test_parse_dyadic_rejects(text):
    with pytest.raises(ValueError):
        parse_dyadic(text)


def test_assembler_reports_line_and_column():
    with pytest.raises(AssemblyError) as err:
        assemble("OUT1\n  FROB\n")
    assert (err.value.line, err.value.column) == (2, 3)
    with pytest.raises(AssemblyError):
        assemble("JMP nowhere")
    with pytest.raises(AssemblyError):
        assemble("ORACLE 1, 2, 1/2")
    with pytest.raises(AssemblyError):
        assemble("a:\na: OUT1")


def test_code_length_is_bytecode_length():
    assert assemble("OUT1").code_length == 1
    assert assemble("COIN\nOUT").code_length == 2
    assert assemble("loop: JMP loop").code_length == 2


def test_registry_is_one_based_and_fingerprinted():
    reg = registry_of("OUT1", "OUT0")
    assert len(reg) == 2
    with pytest.raises(MachineError):
        reg[0]
    with pytest.raises(MachineError):
        reg[3]
    other = registry_of("OUT1", "OUT0")
    assert reg.fingerprint == other.fingerprint
    assert registry_of("OUT0", "OUT1").fingerprint != reg.fingerprint


def test_constant_and_coin_machines():
    reg = registry_of("OUT1", "COIN\nOUT", "loop:\nJMP loop")
    po = PartialOracle(3, (4, 4, 4))
    assert eval_truncated(reg, 1, "", po).p1 == 1
    coin = eval_truncated(reg, 2, "", po)
    assert (coin.p1, coin.p0) == (Fraction(1, 2), Fraction(1, 2))
    loop = eval_truncated(reg, 3, "", po)
    assert (loop.p1, loop.p0) == (0, 0)


def test_budget_truncates_runs():
    reg = registry_of("COIN\nOUT")
    ev = Evaluator(reg, lambda i: None)
    assert ev.distribution(1, "", 1).p1 == 0
    assert ev.distribution(1, "", 2).p1 == Fraction(1, 2)


def test_diagonalizer_truncated_output():
    reg = registry_of(DIAGONALIZER)
    for k in range(1, 7):
        values = (2 ** (k - 1),) + (0,) * (k - 1)
        d = eval_truncated(reg, 1, "", PartialOracle(k, values))
        # three instructions: no output fits in fewer than three steps
        expected = Fraction(1, 2) - Fraction(1, 2 ** (k + 1)) if k >= 3 else 0
        assert d.p1 == d.p0 == expected


# random straight-line-ish programs over a small opcode alphabet
OPS = ["COIN", "INPUT", "PUSH0", "PUSH1", "POP", "DUP", "NOT", "OUT", "OUT0", "OUT1", "HALT",
       "JZ L0", "JMP L1", "ORACLE SELF, ε, 1/2", "ORACLE 1, 0, 1/4", "SLIT 01", "SPUSH", "SIN", "SCLR",
       "ORACLE SELF, S, 1/2"]


@st.composite
def programs(draw):
    body = draw(st.lists(st.sampled_from(OPS), min_size=1, max_size=8))
    l0 = draw(st.integers(0, len(body)))
    l1 = draw(st.integers(0, len(body)))
    lines = []
    for i, op in enumerate(body + ["HALT"]):
        prefix = ("L0: " if i == l0 else "") + ("L1: " if i == l1 else "")
        lines.append(prefix + op)
    return "\n".join(lines)


@given(programs(), st.sampled_from(["", "0", "1", "10"]), st.integers(1, 9),
       st.lists(st.integers(0, 8), min_size=4, max_size=4))
def test_evaluator_matches_choice_tape_enumeration(src, x, budget, raw):
    reg = registry_of(src)
    level = 3
    values = tuple(raw[:level])
    probs = partial_answer_probs(values, level)
    got = Evaluator(reg, probs).distribution(1, x, budget)
    want = output_probs(reg[1], 1, 1, x, budget, probs)
    assert (got.p1, got.p0) == want
    assert got.p1 + got.p0 <= 1


def test_builtin_requests():
    def body(x, me):
        j = yield Choose((Fraction(1, 4), Fraction(1, 2)))
        if j == 0:
            return 1
        b = yield Coin()
        c = yield Call(1, x)
        return b & c

    reg = registry_of("OUT1")
    reg.register(BuiltinMachine("mix", body, 3))
    d = Evaluator(reg, lambda i: None).distribution(2, "", 10)
    # 1/4 direct; 1/2 * 1/2 coin heads times OUT1
    assert (d.p1, d.p0) == (Fraction(1, 2), Fraction(1, 4))


def test_builtin_costs_must_be_positive():
    with pytest.raises(ValueError):
        BuiltinMachine("bad", lambda x, m: iter(()), 1, oracle_cost=0)


def test_dependencies_of_diagonalizer():
    reg = registry_of(DIAGONALIZER, "ORACLE 1, 0, 1/4\nOUT")
    assert oracle_dependencies(reg, 1, "", 5) == {1}
    assert oracle_dependencies(reg, 2, "", 5) == {query_index(2, 1, "0", Fraction(1, 4))}
    assert len(enumerate_queries(reg, 7)) == 7
    assert enumerate_queries(MachineRegistry(), 5) == []
