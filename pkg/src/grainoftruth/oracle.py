"""Partial oracles: grid-valued answers to the first k queries."""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .machine import (
    Evaluator,
    MachineRegistry,
    OutputDist,
    enumerate_queries,
    partial_answer_probs,
)


class FingerprintMismatch(ValueError):
    pass


class Answer(enum.Enum):
    ONE = 1
    ZERO = 0
    HALT = None


@dataclass(frozen=True)
class ProbabilityInterval:
    lo: Fraction
    hi: Fraction

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi <= 1:
            raise ValueError(f"invalid probability interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    @property
    def midpoint(self) -> Fraction:
        return (self.lo + self.hi) / 2

    def contains(self, other: "ProbabilityInterval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi


@dataclass(frozen=True)
class PartialOracle:
    """Level-k oracle; ``values[i-1] / 2**level`` answers query i."""

    level: int
    values: tuple
    fingerprint: str = ""

    def __post_init__(self):
        if self.level < 1:
            raise ValueError("level must be positive")
        if len(self.values) != self.level:
            raise ValueError(f"level {self.level} oracle needs {self.level} values, got {len(self.values)}")
        top = 2**self.level
        if any(not isinstance(n, int) or not 0 <= n <= top for n in self.values):
            raise ValueError(f"values must be integers in [0, {top}]")

    def value(self, i: int) -> Fraction:
        if not 1 <= i <= self.level:
            raise IndexError(f"query {i} is not answered at level {self.level}")
        return Fraction(self.values[i - 1], 2**self.level)

    def answer_probs(self, i: int) -> Optional[tuple[Fraction, Fraction]]:
        return partial_answer_probs(self.values, self.level)(i)

    def check(self, registry: MachineRegistry) -> None:
        if self.fingerprint and self.fingerprint != registry.fingerprint:
            raise FingerprintMismatch(
                f"partial oracle built for registry {self.fingerprint}, "
                f"used with {registry.fingerprint}"
            )

    def dumps(self) -> str:
        lines = []
        if self.fingerprint:
            lines.append(f"# registry {self.fingerprint}")
        lines.append(str(self.level))
        lines.extend(f"{i} {n}" for i, n in enumerate(self.values, start=1))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PartialOracle":
        fingerprint = ""
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "registry":
                    fingerprint = parts[1]
                continue
            rows.append(line)
        level = int(rows[0])
        values = []
        for expected, row in enumerate(rows[1:], start=1):
            i, n = row.split()
            if int(i) != expected:
                raise ValueError(f"expected query {expected}, found {i}")
            values.append(int(n))
        return cls(level, tuple(values), fingerprint)


def answer(po: PartialOracle, i: int, rng: random.Random) -> Answer:
    """Sample the truncated oracle's reply to query ``i``."""
    if i < 1:
        raise ValueError("query indices start at 1")
    probs = po.answer_probs(i)
    if probs is None:
        return Answer.HALT
    one, zero = probs
    scale = 2 ** (po.level + 1)
    r = rng.randrange(scale)
    if r < one * scale:
        return Answer.ONE
    if r < (one + zero) * scale:
        return Answer.ZERO
    return Answer.HALT


def answer_distribution(po: PartialOracle, i: int) -> dict:
    probs = po.answer_probs(i)
    if probs is None:
        return {Answer.ONE: Fraction(0), Answer.ZERO: Fraction(0), Answer.HALT: Fraction(1)}
    one, zero = probs
    return {Answer.ONE: one, Answer.ZERO: zero, Answer.HALT: 1 - one - zero}


def extends(child: PartialOracle, parent: PartialOracle) -> bool:
    """True iff ``child`` (level k+1) stays within 2^-(k+1) of ``parent`` on its k queries."""
    if child.level != parent.level + 1:
        raise ValueError(f"extends needs levels k+1 and k, got {child.level} and {parent.level}")
    if child.fingerprint != parent.fingerprint:
        raise FingerprintMismatch("partial oracles belong to different registries")
    # both sides on the 2^-(k+1) grid: |n' - 2n| <= 1
    return all(abs(c - 2 * p) <= 1 for c, p in zip(child.values, parent.values))


@dataclass(frozen=True)
class ReflectivityCheck:
    ok: bool
    witness: Optional[int] = None

    def __bool__(self) -> bool:
        return self.ok


def violates(dist: OutputDist, p: Fraction, value: Fraction) -> bool:
    if dist.p1 > p and value != 1:
        return True
    if dist.p0 > 1 - p and value != 0:
        return True
    return False


def is_partially_reflective(po: PartialOracle, registry: MachineRegistry) -> ReflectivityCheck:
    """Check the reflectivity implications on q_1..q_k under k-step truncation."""
    po.check(registry)
    if len(registry) == 0:
        return ReflectivityCheck(True)
    ev = Evaluator(registry, partial_answer_probs(po.values, po.level))
    for i, q in enumerate(enumerate_queries(registry, po.level), start=1):
        dist = ev.distribution(q.machine, q.input, po.level)
        if violates(dist, q.threshold, po.value(i)):
            return ReflectivityCheck(False, i)
    return ReflectivityCheck(True)


def truncated(po: PartialOracle, registry: MachineRegistry, machine: int, x: str) -> OutputDist:
    po.check(registry)
    registry[machine]
    return Evaluator(registry, partial_answer_probs(po.values, po.level)).distribution(machine, x, po.level)


def completed_bounds(po: PartialOracle, registry: MachineRegistry, machine: int, x: str) -> ProbabilityInterval:
    """Interval [P(1), 1 - P(0)] holding the completed probability of output 1."""
    dist = truncated(po, registry, machine, x)
    return ProbabilityInterval(dist.p1, 1 - dist.p0)
