import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from conftest import DIAGONALIZER, registry_of
from grainoftruth.oracle import (
    Answer,
    FingerprintMismatch,
    PartialOracle,
    ProbabilityInterval,
    answer,
    answer_distribution,
    completed_bounds,
    extends,
    is_partially_reflective,
    truncated,
)


@st.composite
def oracles(draw, max_level=6):
    k = draw(st.integers(1, max_level))
    values = tuple(draw(st.integers(0, 2**k)) for _ in range(k))
    return PartialOracle(k, values)


def test_answer_probabilities_on_the_grid():
    po = PartialOracle(2, (2, 4))  # values 1/2 and 1
    d = answer_distribution(po, 1)
    assert d[Answer.ONE] == d[Answer.ZERO] == Fraction(3, 8)
    d = answer_distribution(po, 2)
    assert (d[Answer.ONE], d[Answer.ZERO], d[Answer.HALT]) == (Fraction(7, 8), 0, Fraction(1, 8))
    assert answer_distribution(po, 3)[Answer.HALT] == 1


@given(oracles(), st.integers(1, 8))
def test_answer_distribution_is_a_distribution(po, i):
    d = answer_distribution(po, i)
    assert sum(d.values()) == 1
    assert all(v >= 0 for v in d.values())


def test_sampled_answers_follow_the_distribution():
    po = PartialOracle(1, (1,))
    rng = random.Random(7)
    counts = {a: 0 for a in Answer}
    for _ in range(4000):
        counts[answer(po, 1, rng)] += 1
    assert abs(counts[Answer.ONE] / 4000 - 0.25) < 0.03
    assert abs(counts[Answer.HALT] / 4000 - 0.5) < 0.03
    assert answer(po, 2, rng) is Answer.HALT


def test_extends_examples():
    parent = PartialOracle(1, (1,))
    assert extends(PartialOracle(2, (2, 0)), parent)
    assert extends(PartialOracle(2, (1, 4)), parent)
    assert extends(PartialOracle(2, (3, 2)), parent)
    assert not extends(PartialOracle(2, (4, 2)), parent)
    with pytest.raises(ValueError):
        extends(PartialOracle(3, (4, 4, 4)), parent)
    with pytest.raises(FingerprintMismatch):
        extends(PartialOracle(2, (2, 2), "abc"), parent)


@given(oracles(max_level=5), st.data())
def test_extension_stays_within_half_a_parent_step(po, data):
    child_values = tuple(data.draw(st.sampled_from([max(0, 2 * n - 1), 2 * n, min(2 ** (po.level + 1), 2 * n + 1)]))
                         for n in po.values) + (data.draw(st.integers(0, 2 ** (po.level + 1))),)
    child = PartialOracle(po.level + 1, child_values)
    assert extends(child, po)
    for i in range(1, po.level + 1):
        assert abs(child.value(i) - po.value(i)) <= Fraction(1, 2 ** (po.level + 1))


@given(oracles())
def test_file_round_trip(po):
    po = PartialOracle(po.level, po.values, "0123456789abcdef")
    assert PartialOracle.loads(po.dumps()) == po


def test_invalid_oracles_rejected():
    with pytest.raises(ValueError):
        PartialOracle(2, (1,))
    with pytest.raises(ValueError):
        PartialOracle(1, (3,))
    with pytest.raises(ValueError):
        PartialOracle.loads("2\n1 1\n3 1\n")


def test_diagonalizer_only_half_is_reflective():
    reg = registry_of(DIAGONALIZER)
    for k in (3, 4, 5):
        rest = (0,) * (k - 1)
        for n in range(2**k + 1):
            po = PartialOracle(k, (n,) + rest, reg.fingerprint)
            check = is_partially_reflective(po, reg)
            if n != 2 ** (k - 1):
                assert not check and check.witness == 1


def test_fingerprint_mismatch_is_refused():
    reg = registry_of("OUT1")
    po = PartialOracle(1, (1,), "not-this-registry")
    with pytest.raises(FingerprintMismatch):
        is_partially_reflective(po, reg)


def test_completed_bounds_examples():
    reg = registry_of("OUT1", "loop:\nJMP loop", "COIN\nOUT")
    po = PartialOracle(2, (2, 2), reg.fingerprint)
    assert completed_bounds(po, reg, 1, "") == ProbabilityInterval(Fraction(1), Fraction(1))
    assert completed_bounds(po, reg, 2, "") == ProbabilityInterval(Fraction(0), Fraction(1))
    assert completed_bounds(po, reg, 3, "") == ProbabilityInterval(Fraction(1, 2), Fraction(1, 2))
    assert truncated(po, reg, 3, "").deficit == 0


def test_interval_validation():
    with pytest.raises(ValueError):
        ProbabilityInterval(Fraction(1, 2), Fraction(1, 4))
    iv = ProbabilityInterval(Fraction(1, 4), Fraction(3, 4))
    assert iv.width == Fraction(1, 2) and iv.midpoint == Fraction(1, 2)
    assert iv.contains(ProbabilityInterval(Fraction(1, 2), Fraction(1, 2)))
