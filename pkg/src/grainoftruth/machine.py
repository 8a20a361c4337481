"""Probabilistic oracle machines, their registry, and exact truncated evaluation.

Machines come in two flavours. Programs are written in a small stack-based
assembly language (see ``assemble``); built-ins are Python generators that
yield requests (coin flips, weighted choices, oracle questions, calls into
other registered machines) and finally return an output bit.

Evaluation under a partial oracle explores every computation branch and
returns the exact output distribution as ``Fraction`` values.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterator, Optional, Union

SELF = "SELF"

# opcode -> number of operands
OPCODES = {
    "COIN": 0,
    "INPUT": 0,
    "PUSH0": 0,
    "PUSH1": 0,
    "POP": 0,
    "DUP": 0,
    "NOT": 0,
    "OUT": 0,
    "OUT0": 0,
    "OUT1": 0,
    "HALT": 0,
    "JMP": 1,
    "JZ": 1,
    "SCLR": 0,
    "SLIT": 1,
    "SPUSH": 0,
    "SIN": 0,
    "ORACLE": 3,
}
_OPCODE_BYTES = {name: i + 1 for i, name in enumerate(OPCODES)}

EMPTY_TOKENS = ("ε", "eps", "-")


class AssemblyError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class MachineError(RuntimeError):
    """Invalid machine reference or a built-in breaking its contract."""


# --------------------------------------------------------------------------
# dyadic rationals, strings and the query enumeration


def parse_dyadic(text: str) -> Fraction:
    """Parse ``n/2^j``, ``n/d`` (d a power of two) or a bare ``0``/``1``."""
    m = re.fullmatch(r"\s*(\d+)\s*(?:/\s*(?:2\^(\d+)|(\d+)))?\s*", text)
    if not m:
        raise ValueError(f"malformed dyadic literal {text!r}")
    num = int(m.group(1))
    if m.group(2) is not None:
        den = 2 ** int(m.group(2))
    elif m.group(3) is not None:
        den = int(m.group(3))
    else:
        den = 1
    if den <= 0 or den & (den - 1):
        raise ValueError(f"denominator of {text!r} is not a power of two")
    value = Fraction(num, den)
    if value > 1:
        raise ValueError(f"dyadic literal {text!r} exceeds 1")
    return value


def dyadic_level(p: Fraction) -> int:
    """Smallest j with p * 2^j integral; None-safe only for dyadics."""
    den = p.denominator
    if den & (den - 1):
        raise ValueError(f"{p} is not dyadic")
    return den.bit_length() - 1


def threshold_at(j: int) -> Fraction:
    """The j-th threshold (0-based): 1/2, 1/4, 3/4, 1/8, 3/8, ... ."""
    level = (j + 1).bit_length()
    offset = j - (2 ** (level - 1) - 1)
    return Fraction(2 * offset + 1, 2**level)


def threshold_index(p: Fraction) -> Optional[int]:
    if not 0 < p < 1 or p.denominator & (p.denominator - 1):
        return None
    level = dyadic_level(p)
    return 2 ** (level - 1) - 1 + (p.numerator - 1) // 2


def string_at(i: int) -> str:
    """The i-th binary string (0-based) in length-lexicographic order."""
    length = (i + 1).bit_length() - 1
    offset = i - (2**length - 1)
    return format(offset, "b").zfill(length) if length else ""


def string_index(x: str) -> int:
    return 2 ** len(x) - 1 + (int(x, 2) if x else 0)


def _diagonal_size(n_machines: int, d: int) -> int:
    # entries (m, xi, pi) with (m-1) + xi + pi == d and 1 <= m <= n_machines
    top = min(n_machines, d + 1)
    return top * (d + 2) - top * (top + 1) // 2


def query_at(n_machines: int, i: int) -> "Query":
    """The i-th query (1-based) of the enumeration over ``n_machines`` machines.

    Queries are triples (m, x, p) ordered by the diagonal d = (m-1) + xi + pi,
    where xi indexes x in length-lexicographic order and pi indexes the dyadic
    threshold p in (0, 1) by level then numerator. Inside a diagonal the order
    is by m, then by xi.
    """
    if n_machines <= 0:
        raise IndexError("empty registry has no queries")
    if i < 1:
        raise IndexError("query indices start at 1")
    rest = i - 1
    d = 0
    while True:
        size = _diagonal_size(n_machines, d)
        if rest < size:
            break
        rest -= size
        d += 1
    for m in range(1, min(n_machines, d + 1) + 1):
        width = d - (m - 1) + 1
        if rest < width:
            xi = rest
            return Query(m, string_at(xi), threshold_at(d - (m - 1) - xi))
        rest -= width
    raise AssertionError("unreachable")


def query_index(n_machines: int, machine: int, x: str, p: Fraction) -> Optional[int]:
    """Inverse of ``query_at``; None when the triple is never enumerated."""
    if not 1 <= machine <= n_machines:
        return None
    pi = threshold_index(p)
    if pi is None:
        return None
    xi = string_index(x)
    d = (machine - 1) + xi + pi
    before = sum(_diagonal_size(n_machines, e) for e in range(d))
    for m in range(1, machine):
        before += d - (m - 1) + 1
    return before + xi + 1


@dataclass(frozen=True)
class Query:
    machine: int
    input: str
    threshold: Fraction

    def golden(self) -> str:
        level = dyadic_level(self.threshold)
        return f"{self.machine} {self.input or 'ε'} {self.threshold.numerator}/2^{level}"


def enumerate_queries(registry: "MachineRegistry", n: int) -> list[Query]:
    if n < 0:
        raise ValueError("n must be nonnegative")
    if len(registry) == 0:
        return []
    return [query_at(len(registry), i) for i in range(1, n + 1)]


# --------------------------------------------------------------------------
# programs


@dataclass(frozen=True)
class Instruction:
    op: str
    args: tuple = ()


@dataclass(frozen=True)
class Program:
    instructions: tuple[Instruction, ...]
    source: str = ""
    self_index: Optional[int] = None

    def __len__(self) -> int:
        return len(self.instructions)

    @property
    def code_length(self) -> int:
        return len(self.encode())

    def encode(self) -> bytes:
        """Compact bytecode; its length serves as the program's code length."""
        out = bytearray()
        for ins in self.instructions:
            out.append(_OPCODE_BYTES[ins.op])
            if ins.op in ("JMP", "JZ"):
                out.append(ins.args[0] & 0xFF)
            elif ins.op == "SLIT":
                bits = ins.args[0]
                out.append(len(bits))
                out += _pack_bits(bits)
            elif ins.op == "ORACLE":
                ref, spec, p = ins.args
                out.append(0 if ref == SELF else ref & 0xFF)
                kind = spec[0]
                out.append({"lit": 1, "reg": 2, "in": 3}[kind])
                if kind == "lit":
                    out.append(len(spec[1]))
                    out += _pack_bits(spec[1])
                level = dyadic_level(p)
                out.append(level)
                out += p.numerator.to_bytes(max(1, (level + 7) // 8), "big")
        return bytes(out)

    def canonical(self) -> str:
        lines = []
        for ins in self.instructions:
            if ins.op == "ORACLE":
                ref, spec, p = ins.args
                ref = SELF if ref == SELF and self.self_index is None else ref
                s = {"lit": lambda: spec[1] or "ε", "reg": lambda: "S", "in": lambda: "IN"}[spec[0]]()
                lines.append(f"ORACLE {ref}, {s}, {p}")
            elif ins.args:
                lines.append(f"{ins.op} {ins.args[0]}")
            else:
                lines.append(ins.op)
        return "\n".join(lines)


def _pack_bits(bits: str) -> bytes:
    if not bits:
        return b""
    n = (len(bits) + 7) // 8
    return int(bits.ljust(8 * n, "0"), 2).to_bytes(n, "big")


def assemble(source: str) -> Program:
    """Assemble program text.

    One instruction per line, ``;`` starts a comment, ``name:`` defines a
    label (alone or before an instruction). Operands of ``ORACLE`` are
    comma-separated: a machine index or ``SELF``; a query string (a binary
    literal, ``ε``, ``S`` for the string register or ``IN`` for the input);
    a dyadic threshold such as ``1/2`` or ``3/2^3``.
    """
    labels: dict[str, int] = {}
    pending: list[tuple[str, list[str], int, int]] = []
    for lineno, raw in enumerate(source.splitlines(), start=1):
        text = raw.split(";", 1)[0].rstrip()
        col = len(text) - len(text.lstrip()) + 1
        text = text.strip()
        while text:
            m = re.match(r"([A-Za-z_]\w*)\s*:(.*)", text)
            if not m:
                break
            name = m.group(1)
            if name in labels:
                raise AssemblyError(f"duplicate label {name!r}", lineno, col)
            labels[name] = len(pending)
            rest = m.group(2)
            col += len(text) - len(rest.lstrip())
            text = rest.strip()
        if not text:
            continue
        parts = text.split(None, 1)
        op = parts[0].upper()
        if op not in OPCODES:
            raise AssemblyError(f"unknown opcode {parts[0]!r}", lineno, col)
        operands = [a.strip() for a in parts[1].split(",")] if len(parts) > 1 else []
        if len(operands) != OPCODES[op]:
            raise AssemblyError(
                f"{op} takes {OPCODES[op]} operand(s), got {len(operands)}", lineno, col
            )
        pending.append((op, operands, lineno, col))

    instructions = []
    for op, operands, lineno, col in pending:
        if op in ("JMP", "JZ"):
            target = operands[0]
            if target not in labels:
                raise AssemblyError(f"undefined label {target!r}", lineno, col)
            instructions.append(Instruction(op, (labels[target],)))
        elif op == "SLIT":
            bits = "" if operands[0] in EMPTY_TOKENS else operands[0]
            if not re.fullmatch(r"[01]*", bits):
                raise AssemblyError(f"SLIT expects a binary literal, got {bits!r}", lineno, col)
            instructions.append(Instruction(op, (bits,)))
        elif op == "ORACLE":
            ref_text, str_text, p_text = operands
            if ref_text.upper() == SELF:
                ref: Union[int, str] = SELF
            elif ref_text.isdigit() and int(ref_text) >= 1:
                ref = int(ref_text)
            else:
                raise AssemblyError(f"bad machine reference {ref_text!r}", lineno, col)
            if str_text in EMPTY_TOKENS:
                spec: tuple = ("lit", "")
            elif str_text.upper() == "S":
                spec = ("reg",)
            elif str_text.upper() == "IN":
                spec = ("in",)
            elif re.fullmatch(r"[01]+", str_text):
                spec = ("lit", str_text)
            else:
                raise AssemblyError(f"bad query string {str_text!r}", lineno, col)
            try:
                p = parse_dyadic(p_text)
            except ValueError as exc:
                raise AssemblyError(str(exc), lineno, col) from None
            instructions.append(Instruction(op, (ref, spec, p)))
        else:
            instructions.append(Instruction(op))
    return Program(tuple(instructions), source=source)


# --------------------------------------------------------------------------
# built-in machines


@dataclass(frozen=True)
class Coin:
    """Fair random bit; costs one step."""


@dataclass(frozen=True)
class Choose:
    """Pick index j with probability weights[j]; leftover mass halts. One step."""

    weights: tuple


@dataclass(frozen=True)
class Ask:
    """Ask the oracle about (machine, input, threshold)."""

    machine: Union[int, str]
    input: str
    threshold: Fraction


@dataclass(frozen=True)
class Call:
    """Run another registered machine on ``input`` and receive its output bit."""

    machine: Union[int, str]
    input: str


@dataclass(eq=False)
class BuiltinMachine:
    """A natively implemented conditional semimeasure.

    ``body(x, self_index)`` must be a generator yielding ``Coin``, ``Choose``,
    ``Ask`` or ``Call`` requests and returning 0, 1 or None (no output).
    ``oracle_cost`` steps are charged per ``Ask`` and ``output_cost`` per
    emitted bit.
    """

    name: str
    body: Callable[[str, int], Iterator]
    code_length: int
    oracle_cost: int = 1
    output_cost: int = 1
    description: str = ""

    def __post_init__(self):
        if self.oracle_cost < 1 or self.output_cost < 1:
            raise ValueError("built-in step costs must be positive integers")

    def canonical(self) -> str:
        return (
            f"builtin {self.name} len={self.code_length} "
            f"costs={self.oracle_cost},{self.output_cost} {self.description}"
        )


Entry = Union[Program, BuiltinMachine]


class MachineRegistry:
    """Append-only, 1-based list of machines."""

    def __init__(self, entries=()):
        self._entries: list[Entry] = []
        for entry in entries:
            self.register(entry)

    def register(self, entry: Entry) -> int:
        index = len(self._entries) + 1
        if isinstance(entry, Program):
            if entry.self_index is not None:
                raise MachineError("program is already registered")
            entry = Program(entry.instructions, entry.source, self_index=index)
        elif not isinstance(entry, BuiltinMachine):
            raise TypeError(f"cannot register {type(entry).__name__}")
        self._entries.append(entry)
        return index

    def __len__(self) -> int:
        return len(self._entries)

    def __getitem__(self, index: int) -> Entry:
        if not isinstance(index, int) or not 1 <= index <= len(self._entries):
            raise MachineError(f"invalid machine index {index!r}")
        return self._entries[index - 1]

    def __iter__(self):
        return iter(self._entries)

    def resolve(self, ref, owner: int) -> int:
        return owner if ref == SELF else ref

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for i, entry in enumerate(self._entries, start=1):
            h.update(f"{i}:{entry.canonical()}\n".encode())
        return h.hexdigest()[:16]


def register(registry: MachineRegistry, entry: Entry) -> int:
    return registry.register(entry)


# --------------------------------------------------------------------------
# exact evaluation


@dataclass(frozen=True)
class OutputDist:
    p1: Fraction
    p0: Fraction

    @property
    def deficit(self) -> Fraction:
        return 1 - self.p1 - self.p0


# answer_probs(query index or None) -> (P[answer 1], P[answer 0]) or None to halt
AnswerProbs = Callable[[Optional[int]], Optional[tuple[Fraction, Fraction]]]

HALF = Fraction(1, 2)


class Evaluator:
    """Exhaustive branch enumeration for one oracle model.

    ``run`` returns a mapping ``(bit, steps_left) -> probability``. Results are
    memoised on (machine, input, machine state, remaining budget).
    """

    def __init__(self, registry: MachineRegistry, answer_probs: AnswerProbs):
        self.registry = registry
        self.answer_probs = answer_probs
        self.n = len(registry)
        self._memo: dict = {}

    def distribution(self, machine: int, x: str, budget: int) -> OutputDist:
        out = self.run(machine, x, budget)
        p1 = sum((w for (b, _), w in out.items() if b == 1), Fraction(0))
        p0 = sum((w for (b, _), w in out.items() if b == 0), Fraction(0))
        return OutputDist(p1, p0)

    def run(self, machine: int, x: str, budget: int) -> dict:
        entry = self.registry[machine]
        if isinstance(entry, Program):
            return self._prog(machine, entry, x, 0, (), 0, "", budget)
        return self._builtin(machine, entry, x, (), budget)

    def _oracle(self, machine: int, ref, s: str, p: Fraction):
        target = machine if ref == SELF else ref
        return self.answer_probs(query_index(self.n, target, s, p))

    def _prog(self, m, prog, x, pc, stack, inpos, sreg, budget) -> dict:
        key = (m, x, pc, stack, inpos, sreg, budget)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        result: dict = {}
        # loop over deterministic instructions, branching recursively
        while True:
            if pc >= len(prog.instructions) or budget <= 0:
                break
            ins = prog.instructions[pc]
            op = ins.op
            budget -= 1
            pc += 1
            if op == "COIN":
                for b in (0, 1):
                    _acc(result, self._prog(m, prog, x, pc, stack + (b,), inpos, sreg, budget), HALF)
                break
            if op == "ORACLE":
                ref, spec, p = ins.args
                s = spec[1] if spec[0] == "lit" else (sreg if spec[0] == "reg" else x)
                probs = self._oracle(m, ref, s, p)
                if probs is not None:
                    for b, w in ((1, probs[0]), (0, probs[1])):
                        if w > 0:
                            _acc(result, self._prog(m, prog, x, pc, stack + (b,), inpos, sreg, budget), w)
                break
            if op == "INPUT":
                if inpos >= len(x):
                    break
                stack = stack + (int(x[inpos]),)
                inpos += 1
            elif op == "PUSH0":
                stack = stack + (0,)
            elif op == "PUSH1":
                stack = stack + (1,)
            elif op == "POP":
                if not stack:
                    break
                stack = stack[:-1]
            elif op == "DUP":
                if not stack:
                    break
                stack = stack + (stack[-1],)
            elif op == "NOT":
                if not stack:
                    break
                stack = stack[:-1] + (1 - stack[-1],)
            elif op == "OUT":
                if stack:
                    result[(stack[-1], budget)] = Fraction(1)
                break
            elif op == "OUT0":
                result[(0, budget)] = Fraction(1)
                break
            elif op == "OUT1":
                result[(1, budget)] = Fraction(1)
                break
            elif op == "HALT":
                break
            elif op == "JMP":
                pc = ins.args[0]
            elif op == "JZ":
                if not stack:
                    break
                top, stack = stack[-1], stack[:-1]
                if top == 0:
                    pc = ins.args[0]
            elif op == "SCLR":
                sreg = ""
            elif op == "SLIT":
                sreg += ins.args[0]
            elif op == "SPUSH":
                if not stack:
                    break
                sreg += str(stack[-1])
                stack = stack[:-1]
            elif op == "SIN":
                sreg += x
            else:  # pragma: no cover - guarded by assemble
                raise MachineError(f"unknown opcode {op}")
        self._memo[key] = result
        return result

    def _builtin(self, m, entry: BuiltinMachine, x, answers: tuple, budget) -> dict:
        key = (m, x, answers, budget)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        gen = entry.body(x, m)
        try:
            req = gen.send(None)
            for a in answers:
                req = gen.send(a)
        except StopIteration as stop:
            bit = stop.value
            if bit is None:
                result: dict = {}
            elif bit in (0, 1):
                result = {(bit, budget - entry.output_cost): Fraction(1)} if budget >= entry.output_cost else {}
            else:
                raise MachineError(f"built-in {entry.name!r} returned {bit!r}, expected 0, 1 or None")
            self._memo[key] = result
            return result
        finally:
            gen.close()

        result = {}
        if isinstance(req, Coin):
            if budget >= 1:
                for b in (0, 1):
                    _acc(result, self._builtin(m, entry, x, answers + (b,), budget - 1), HALF)
        elif isinstance(req, Choose):
            weights = [Fraction(w) for w in req.weights]
            if any(w < 0 for w in weights) or sum(weights) > 1:
                raise MachineError(f"built-in {entry.name!r} chose with invalid weights")
            if budget >= 1:
                for j, w in enumerate(weights):
                    if w > 0:
                        _acc(result, self._builtin(m, entry, x, answers + (j,), budget - 1), w)
        elif isinstance(req, Ask):
            if budget >= entry.oracle_cost:
                probs = self._oracle(m, req.machine, req.input, Fraction(req.threshold))
                if probs is not None:
                    for b, w in ((1, probs[0]), (0, probs[1])):
                        if w > 0:
                            _acc(result, self._builtin(m, entry, x, answers + (b,), budget - entry.oracle_cost), w)
        elif isinstance(req, Call):
            target = m if req.machine == SELF else req.machine
            sub = self.run(target, req.input, budget)
            for (b, left), w in sorted(sub.items()):
                _acc(result, self._builtin(m, entry, x, answers + (b,), left), w)
        else:
            raise MachineError(f"built-in {entry.name!r} yielded unsupported request {req!r}")
        self._memo[key] = result
        return result


def _acc(target: dict, source: dict, weight: Fraction) -> None:
    for k, v in source.items():
        target[k] = target.get(k, 0) + weight * v


def partial_answer_probs(values: tuple, level: int) -> AnswerProbs:
    """Answer probabilities of a level-k partial oracle with grid numerators ``values``."""
    scale = 2**level
    half_step = Fraction(1, 2 ** (level + 1))

    def probs(i):
        if i is None or i > level:
            return None
        v = Fraction(values[i - 1], scale)
        return (max(Fraction(0), v - half_step), max(Fraction(0), 1 - v - half_step))

    return probs


def eval_truncated(registry: MachineRegistry, machine: int, x: str, po) -> OutputDist:
    """Exact output distribution of ``machine`` on ``x`` under partial oracle ``po``."""
    if po.level < 1:
        raise ValueError("partial oracle level must be at least 1")
    registry[machine]  # validates the index
    ev = Evaluator(registry, partial_answer_probs(po.values, po.level))
    return ev.distribution(machine, x, po.level)


def oracle_dependencies(registry: MachineRegistry, machine: int, x: str, budget: int) -> frozenset:
    """Indices of every query some branch of the machine can ask within ``budget`` steps."""
    seen: set = set()

    def probs(i):
        if i is None:
            return None
        seen.add(i)
        return (HALF, HALF)

    Evaluator(registry, probs).run(machine, x, budget)
    return frozenset(seen)
