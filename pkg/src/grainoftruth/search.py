"""Anytime depth-first search for a chain of partially reflective partial oracles.

Level k of the search tree holds k-partial oracles; a level-(k+1) node is a
child of a level-k node when it extends it. The search picks the first child,
in a fixed order, that is (k+1)-partially reflective and backtracks when none
exists. Every accepted node is emitted, so reading the trace at level k gives
the current preliminary answer to the first k queries.

Candidates are produced by a constraint solver rather than by materialising
all 3^k * (2^(k+1) + 1) extensions: queries are assigned in index order and a
query's reflectivity constraint is tested as soon as every query its machine
could ask has a value. The optional lookahead additionally discards values
that no extension chain can keep reflective up to ``max_level`` (a sound
lower bound on future output probabilities). Neither changes the final chain.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Optional

from .machine import Evaluator, MachineRegistry, enumerate_queries, oracle_dependencies
from .oracle import PartialOracle, is_partially_reflective, violates


def _value_options(parent: Optional[PartialOracle], level: int) -> list[list[int]]:
    top = 2**level
    options = []
    if parent is not None:
        for n in parent.values:
            options.append([v for v in (2 * n, 2 * n - 1, 2 * n + 1) if 0 <= v <= top])
    mid = top // 2
    new = [mid]
    for step in range(1, mid + 1):
        new += [mid - step, mid + step]
    options.append(new)
    return options


def root_candidates(registry: MachineRegistry) -> list[PartialOracle]:
    """The three level-1 oracles, midpoint first: values 1/2, 0, 1."""
    fp = registry.fingerprint
    return [PartialOracle(1, (n,), fp) for n in _value_options(None, 1)[0]]


def extension_candidates(po: PartialOracle) -> Iterator[PartialOracle]:
    """All level-(k+1) oracles extending ``po``, in the documented order.

    Earlier queries vary slowest. Old values try unchanged, then one grid step
    down, then up; the new query goes midpoint-outward, lower side first.
    """
    level = po.level + 1
    for values in itertools.product(*_value_options(po, level)):
        yield PartialOracle(level, values, po.fingerprint)


class _LevelSolver:
    """Constraint-ordered enumeration of reflective candidates at one level."""

    def __init__(self, registry: MachineRegistry, level: int, max_level: int, lookahead: bool):
        self.registry = registry
        self.level = level
        self.horizon = max_level if lookahead else level
        self.queries = enumerate_queries(registry, level)
        budget = max(level, self.horizon)
        self.deps = []
        self.ready: list[list[int]] = [[] for _ in range(level + 1)]
        for i, q in enumerate(self.queries, start=1):
            deps = sorted(d for d in oracle_dependencies(registry, q.machine, q.input, budget) if d <= level)
            self.deps.append(deps)
            self.ready[max(deps + [i])].append(i)
        self._cache: dict = {}

    def _evaluate(self, i: int, assignment: list[int]):
        deps = self.deps[i - 1]
        key = (i, tuple(assignment[d - 1] for d in deps))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        level = self.level
        scale = Fraction(1, 2**level)
        half = scale / 2
        known = {d: Fraction(assignment[d - 1]) * scale for d in deps}

        def exact(j):
            if j is None or j > level:
                return None
            v = known[j]
            return (max(Fraction(0), v - half), max(Fraction(0), 1 - v - half))

        def bound(j):
            if j is None or j > level:
                return None
            v = known[j]
            return (max(Fraction(0), v - scale), max(Fraction(0), 1 - v - scale))

        q = self.queries[i - 1]
        now = Evaluator(self.registry, exact).distribution(q.machine, q.input, level)
        later = None
        if self.horizon > level:
            later = Evaluator(self.registry, bound).distribution(q.machine, q.input, self.horizon)
        self._cache[key] = (now, later)
        return now, later

    def _feasible(self, i: int, assignment: list[int]) -> bool:
        q = self.queries[i - 1]
        n = assignment[i - 1]
        now, later = self._evaluate(i, assignment)
        if violates(now, q.threshold, Fraction(n, 2**self.level)):
            return False
        if later is not None:
            # distance the value may still travel before the horizon, in grid units
            slack = Fraction(1) - Fraction(1, 2 ** (self.horizon - self.level))
            top = 2**self.level
            if later.p1 > q.threshold and top - n > slack:
                return False
            if later.p0 > 1 - q.threshold and n > slack:
                return False
        return True

    def solutions(self, options: list[list[int]]) -> Iterator[tuple]:
        k = self.level
        assignment = [0] * k

        def assign(j: int) -> Iterator[tuple]:
            if j > k:
                yield tuple(assignment)
                return
            for v in options[j - 1]:
                assignment[j - 1] = v
                if all(self._feasible(i, assignment) for i in self.ready[j]):
                    yield from assign(j + 1)

        if k == 0:
            return
        yield from assign(1)


@dataclass
class OracleTrace:
    """Everything a search run emitted, plus its final chain."""

    max_level: int
    emitted: list = field(default_factory=list)  # (PartialOracle, backtracks so far)
    chain: list = field(default_factory=list)
    backtracks: dict = field(default_factory=dict)
    expansions: int = 0
    status: str = "complete"
    stabilized: list = field(default_factory=list)

    @property
    def reached(self) -> int:
        return len(self.chain)

    @property
    def empty(self) -> bool:
        return not self.emitted

    def records(self) -> list[dict]:
        return [
            {"level": po.level, "values": list(po.values), "backtracks": bt}
            for po, bt in self.emitted
        ]

    def dump_jsonl(self, header: Optional[dict] = None) -> str:
        lines = []
        if header is not None:
            lines.append(json.dumps({"header": header}, sort_keys=True))
        lines += [json.dumps(r, sort_keys=True) for r in self.records()]
        return "\n".join(lines) + "\n"


class SearchError(RuntimeError):
    pass


def search(
    registry: MachineRegistry,
    max_level: int,
    budget: Optional[int] = None,
    lookahead: bool = True,
    verify: bool = True,
) -> OracleTrace:
    """Depth-first search up to ``max_level``; ``budget`` caps node expansions.

    The trace's ``status`` is ``complete``, ``budget-exhausted`` or
    ``tree-exhausted`` (the latter cannot happen for a registry that admits a
    reflective oracle, which every registry does).
    """
    if max_level < 1:
        raise ValueError("max_level must be at least 1")
    trace = OracleTrace(max_level)
    solvers: dict[int, _LevelSolver] = {}
    fp = registry.fingerprint

    def children(parent: Optional[PartialOracle]) -> Iterator[PartialOracle]:
        level = 1 if parent is None else parent.level + 1
        if level not in solvers:
            solvers[level] = _LevelSolver(registry, level, max_level, lookahead)
        for values in solvers[level].solutions(_value_options(parent, level)):
            po = PartialOracle(level, values, fp)
            if verify and not is_partially_reflective(po, registry):
                raise SearchError(f"solver produced a non-reflective oracle at level {level}")
            yield po

    stack = [children(None)]
    total_backtracks = 0
    while True:
        if budget is not None and trace.expansions >= budget:
            trace.status = "budget-exhausted"
            break
        trace.expansions += 1
        node = next(stack[-1], None)
        if node is None:
            stack.pop()
            if not trace.chain:
                trace.status = "tree-exhausted"
                break
            dropped = trace.chain.pop()
            trace.backtracks[dropped.level] = trace.backtracks.get(dropped.level, 0) + 1
            total_backtracks += 1
            continue
        trace.chain.append(node)
        trace.emitted.append((node, total_backtracks))
        if node.level == max_level:
            break
        stack.append(children(node))

    done = trace.status == "complete"
    trace.stabilized = [done] * len(trace.chain)
    return trace


def answer_at_level(trace: OracleTrace, query: int, k: int) -> Fraction:
    """Preliminary answer to query ``query`` from the level-k node of the final chain."""
    if k > trace.reached:
        raise ValueError(f"trace only reached level {trace.reached}")
    if not 1 <= query <= k:
        raise ValueError(f"query {query} is not enumerated at level {k}")
    return trace.chain[k - 1].value(query)
