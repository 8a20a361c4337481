"""Histories, discounting, environments, policies and interval-valued values.

Values are normalised discounted reward sums in [0, 1]. Every value returned
here is an interval: depth truncation contributes the discount tail, and
machine-backed environments contribute the width of their conditional
probability intervals.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

from .machine import MachineRegistry
from .oracle import PartialOracle, answer_distribution, Answer, completed_bounds

ALPHA, BETA = 0, 1
ACTIONS = (ALPHA, BETA)
ACTION_NAMES = ("α", "β")

ZERO = Fraction(0)
ONE = Fraction(1)


class HorizonError(ValueError):
    pass


# --------------------------------------------------------------------------
# spaces and histories


@dataclass(frozen=True)
class Percept:
    obs: str
    reward: Fraction
    code: str = ""


class PerceptSpace:
    """Finite percept set with fixed-length binary codes."""

    def __init__(self, percepts: Sequence[Percept]):
        if not percepts:
            raise ValueError("percept space is empty")
        n = len(percepts)
        width = max(1, math.ceil(math.log2(n)))
        if all(p.code for p in percepts):
            width = len(percepts[0].code)
            if any(len(p.code) != width or set(p.code) - {"0", "1"} for p in percepts):
                raise ValueError("percept codes must be binary and of equal length")
        elif any(p.code for p in percepts):
            raise ValueError("either all or no percepts carry codes")
        else:
            percepts = [Percept(p.obs, p.reward, format(i, "b").zfill(width)) for i, p in enumerate(percepts)]
        codes = [p.code for p in percepts]
        if len(set(codes)) != n:
            raise ValueError("percept encoding collision")
        for p in percepts:
            if not 0 <= Fraction(p.reward) <= 1:
                raise ValueError(f"reward {p.reward} outside [0, 1]")
        self.percepts = tuple(Percept(p.obs, Fraction(p.reward), p.code) for p in percepts)
        self.code_length = width
        self.rewards = tuple(p.reward for p in self.percepts)
        self._by_code = {p.code: i for i, p in enumerate(self.percepts)}

    @classmethod
    def from_rewards(cls, rewards, obs: str = "") -> "PerceptSpace":
        return cls([Percept(obs, Fraction(r)) for r in rewards])

    def __len__(self) -> int:
        return len(self.percepts)

    def __iter__(self):
        return iter(range(len(self.percepts)))

    def reward(self, e: int) -> Fraction:
        return self.rewards[e]

    def code(self, e: int) -> str:
        return self.percepts[e].code

    def index_of(self, code: str) -> int:
        return self._by_code[code]

    @property
    def complete(self) -> bool:
        return len(self) == 2**self.code_length

    def __eq__(self, other):
        return isinstance(other, PerceptSpace) and self.percepts == other.percepts

    def __hash__(self):
        return hash(self.percepts)


History = tuple  # ((action, percept index), ...)


def encode_history(history: History, percepts: PerceptSpace) -> str:
    return "".join(str(a) + percepts.code(e) for a, e in history)


def check_history(history: History, percepts: PerceptSpace) -> None:
    for cycle in history:
        if len(cycle) != 2 or cycle[0] not in ACTIONS or not 0 <= cycle[1] < len(percepts):
            raise ValueError(f"malformed history cycle {cycle!r}")


# --------------------------------------------------------------------------
# discounting


class Discount:
    """Discount function with exactly computable tail sums Γ_t (t >= 1)."""

    stationary = False

    def gamma(self, t: int) -> Fraction:
        raise NotImplementedError

    def tail(self, t: int) -> Fraction:
        raise NotImplementedError

    def weights(self, t: int) -> tuple[Fraction, Fraction]:
        """(γ_t / Γ_t, Γ_{t+1} / Γ_t); only meaningful when Γ_t > 0."""
        g = self.tail(t)
        return self.gamma(t) / g, self.tail(t + 1) / g

    def tail_ratio(self, t: int, k: int) -> Fraction:
        return self.tail(t + k) / self.tail(t)


class GeometricDiscount(Discount):
    stationary = True

    def __init__(self, rate):
        rate = Fraction(rate)
        if not 0 < rate < 1:
            raise ValueError("geometric rate must lie in (0, 1)")
        self.rate = rate

    def gamma(self, t):
        return self.rate**t

    def tail(self, t):
        return self.rate**t / (1 - self.rate)

    def weights(self, t):
        return 1 - self.rate, self.rate

    def tail_ratio(self, t, k):
        return self.rate**k

    def __repr__(self):
        return f"GeometricDiscount({self.rate})"


class CustomDiscount(Discount):
    """User-supplied γ and closed-form tail; computability is taken on trust."""

    def __init__(self, gamma: Callable[[int], Fraction], tail: Callable[[int], Fraction]):
        self._gamma = gamma
        self._tail = tail

    def gamma(self, t):
        return Fraction(self._gamma(t))

    def tail(self, t):
        return Fraction(self._tail(t))


def effective_horizon(discount: Discount, t: int, eps) -> int:
    """min{k : Γ_{t+k} / Γ_t <= eps}."""
    eps = Fraction(eps)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if discount.tail(t) == 0:
        raise HorizonError(f"Γ_{t} = 0, the effective horizon is undefined")
    k = 0
    while discount.tail_ratio(t, k) > eps:
        k += 1
    return k


def truncation_depth(discount: Discount, t: int, eps) -> int:
    """Depth whose tail leaves half the precision for environment intervals."""
    return effective_horizon(discount, t, Fraction(eps) / 2)


# --------------------------------------------------------------------------
# environments


class Environment:
    """Conditional percept distribution ν(e | history, action).

    ``conditional`` returns one ``(lo, hi)`` pair per percept; exact
    environments have ``lo == hi`` and sum to one. ``state_key`` must capture
    everything about the history that matters for the future; it keys the
    planners' memo tables.
    """

    exact = True

    def __init__(self, percepts: PerceptSpace, discount: Optional[Discount] = None):
        self.percepts = percepts
        self.discount = discount or GeometricDiscount(Fraction(1, 2))

    def conditional(self, history: History, action: int) -> tuple:
        raise NotImplementedError

    def probs(self, history: History, action: int) -> tuple:
        """Point probabilities (interval midpoints for inexact environments)."""
        return tuple((lo + hi) / 2 for lo, hi in self.conditional(history, action))

    def state_key(self, history: History):
        return history


class FunctionEnvironment(Environment):
    """Exact environment given by a function returning one probability per percept."""

    def __init__(self, percepts, fn, discount=None, key=None, name=""):
        super().__init__(percepts, discount)
        self._fn = fn
        self._key = key
        self.name = name

    def conditional(self, history, action):
        ps = tuple(Fraction(p) for p in self._fn(history, action))
        if len(ps) != len(self.percepts) or any(p < 0 for p in ps) or sum(ps) != 1:
            raise ValueError(f"environment {self.name!r} returned an invalid distribution {ps}")
        return tuple((p, p) for p in ps)

    def state_key(self, history):
        return self._key(history) if self._key else history


class TabularEnvironment(Environment):
    """Exact conditional tables keyed by history suffixes.

    A key is a tuple ``(a_1, e_1, ..., a_j)`` ending in the current action; the
    longest key matching the end of ``history + (action,)`` wins.
    """

    def __init__(self, percepts, table: dict, discount=None, name=""):
        super().__init__(percepts, discount)
        self.table = {}
        for key, probs in table.items():
            ps = tuple(Fraction(p) for p in probs)
            if len(ps) != len(percepts) or any(p < 0 for p in ps) or sum(ps) != 1:
                raise ValueError(f"table row {key!r} is not a distribution")
            if len(key) % 2 != 1 or key[-1] not in ACTIONS:
                raise ValueError(f"table key {key!r} must end with an action")
            self.table[tuple(key)] = ps
        self.order = max(len(k) // 2 for k in self.table) if self.table else 0
        self.name = name

    def conditional(self, history, action):
        flat = tuple(x for cycle in history[len(history) - self.order:] for x in cycle) + (action,)
        for start in range(0, len(flat), 2):
            row = self.table.get(flat[start:])
            if row is not None:
                return tuple((p, p) for p in row)
        raise KeyError(f"no table row matches history ending {flat!r}")

    def state_key(self, history):
        return history[len(history) - self.order:] if self.order else ()


class MachineEnvironment(Environment):
    """Percept probabilities from a registered machine's completed bounds."""

    exact = False

    def __init__(self, registry, index, po, percepts, discount=None):
        if not percepts.complete:
            raise ValueError("machine-backed environments need a complete percept encoding")
        super().__init__(percepts, discount)
        registry[index]
        po.check(registry)
        self.registry = registry
        self.index = index
        self.po = po
        self._bits: dict = {}
        self.code_length = registry[index].code_length
        self.name = f"machine{index}"

    def _bit(self, x: str):
        hit = self._bits.get(x)
        if hit is None:
            iv = completed_bounds(self.po, self.registry, self.index, x)
            hit = self._bits[x] = (iv.lo, iv.hi)
        return hit

    def conditional(self, history, action):
        x = encode_history(history, self.percepts) + str(action)
        out = []
        for e in self.percepts:
            lo, hi = ONE, ONE
            prefix = x
            for bit in self.percepts.code(e):
                b_lo, b_hi = self._bit(prefix)
                if bit == "1":
                    lo, hi = lo * b_lo, hi * b_hi
                else:
                    lo, hi = lo * (1 - b_hi), hi * (1 - b_lo)
                prefix += bit
            out.append((lo, hi))
        return tuple(out)


def env_from_machine(registry: MachineRegistry, index: int, po: PartialOracle, percepts: PerceptSpace, discount=None):
    return MachineEnvironment(registry, index, po, percepts, discount)


# --------------------------------------------------------------------------
# policies


def sample(rng: random.Random, outcomes):
    """Draw from ``[(prob, item), ...]`` with exact rational comparison."""
    u = Fraction(rng.getrandbits(64), 2**64)
    acc = ZERO
    last = None
    for p, item in outcomes:
        if p <= 0:
            continue
        acc += p
        last = item
        if u < acc:
            return item
    if last is None:
        raise ValueError("cannot sample from an empty distribution")
    return last


class Policy:
    """π(a | history), optionally with a hidden internal state.

    ``step`` lists ``(probability, action, next_state)`` outcomes. Stateless
    policies keep ``None`` as their state.
    """

    def initial_state(self):
        return None

    def step(self, history: History, state) -> list:
        raise NotImplementedError

    def key(self, history: History, state):
        return (history, state)

    def act(self, history, state, rng):
        outcomes = self.step(history, state)
        for p, a, _ in outcomes:
            if a not in ACTIONS:
                raise ValueError(f"policy emitted invalid action {a!r}")
        return sample(rng, [(p, (a, s)) for p, a, s in outcomes])

    def probs(self, history, state=None) -> dict:
        out: dict = {}
        for p, a, _ in self.step(history, state):
            out[a] = out.get(a, ZERO) + p
        return out


class DeterministicPolicy(Policy):
    def __init__(self, fn: Callable[[History], int], key=None, name=""):
        self.fn = fn
        self._key = key
        self.name = name

    def step(self, history, state):
        return [(ONE, self.fn(history), None)]

    def key(self, history, state):
        return self._key(history) if self._key else history


class StochasticPolicy(Policy):
    def __init__(self, fn: Callable[[History], dict], key=None, name=""):
        self.fn = fn
        self._key = key
        self.name = name

    def step(self, history, state):
        dist = self.fn(history)
        if sum(dist.values()) != 1:
            raise ValueError("policy probabilities must sum to 1")
        return [(Fraction(p), a, None) for a, p in sorted(dist.items()) if p > 0]

    def key(self, history, state):
        return self._key(history) if self._key else history


class PeriodicPolicy(Policy):
    """Plays ``pattern`` (a sequence of actions) over and over."""

    def __init__(self, pattern):
        if isinstance(pattern, str):
            pattern = [ALPHA if c in "aα" else BETA for c in pattern]
        self.pattern = tuple(pattern)
        self.name = "".join(ACTION_NAMES[a] for a in self.pattern)

    def action_at(self, t: int) -> int:
        return self.pattern[(t - 1) % len(self.pattern)]

    def step(self, history, state):
        return [(ONE, self.action_at(len(history) + 1), None)]

    def key(self, history, state):
        return len(history) % len(self.pattern)


def constant_policy(action: int) -> PeriodicPolicy:
    return PeriodicPolicy((action,))


# --------------------------------------------------------------------------
# values


@dataclass(frozen=True)
class ValueInterval:
    lo: Fraction
    hi: Fraction
    truncation: Fraction = ZERO
    precision: Optional[Fraction] = None

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    @property
    def env_width(self) -> Fraction:
        return max(ZERO, self.width - self.truncation)

    @property
    def flagged(self) -> bool:
        """Requested precision was not reached (environment intervals too wide)."""
        return self.precision is not None and self.width > self.precision

    def __sub__(self, other: "ValueInterval") -> "ValueInterval":
        return ValueInterval(self.lo - other.hi, self.hi - other.lo, self.truncation + other.truncation)


def _expect(cond, lows, highs):
    """Bounds on Σ_e p_e f_e over all p with lo_e <= p_e <= hi_e, Σ p_e = 1."""
    if all(lo == hi for lo, hi in cond):
        return (sum((lo * f for (lo, _), f in zip(cond, lows)), ZERO),
                sum((lo * f for (lo, _), f in zip(cond, highs)), ZERO))
    base = sum((lo for lo, _ in cond), ZERO)
    free = max(ZERO, 1 - base)
    lower = sum((lo * f for (lo, _), f in zip(cond, lows)), ZERO)
    left = free
    for j in sorted(range(len(cond)), key=lambda j: lows[j]):
        add = min(cond[j][1] - cond[j][0], left)
        lower += add * lows[j]
        left -= add
    upper = sum((lo * f for (lo, _), f in zip(cond, highs)), ZERO)
    left = free
    for j in sorted(range(len(cond)), key=lambda j: -highs[j]):
        add = min(cond[j][1] - cond[j][0], left)
        upper += add * highs[j]
        left -= add
    return lower, upper


class Planner:
    """Memoised depth-limited Bellman recursions for one environment.

    Memo keys use ``env.state_key``; for non-stationary discounts the time
    step is part of the key. A planner may be kept alive across calls.
    """

    def __init__(self, env: Environment, discount: Optional[Discount] = None):
        self.env = env
        self.discount = discount or env.discount
        self._opt: dict = {}
        self._pol: dict = {}
        self._cond: dict = {}

    def _time_key(self, t):
        return None if self.discount.stationary else t

    def _conditional(self, h, a, skey):
        key = (skey, a, self._time_key(len(h) + 1)) if skey is not None else None
        if key is not None:
            hit = self._cond.get(key)
            if hit is not None:
                return hit
        cond = self.env.conditional(h, a)
        if key is not None:
            self._cond[key] = cond
        return cond

    def _backup(self, h, a, depth, skey, next_value):
        t = len(h) + 1
        w_r, w_c = self.discount.weights(t)
        cond = self._conditional(h, a, skey)
        rewards = self.env.percepts.rewards
        lows, highs = [], []
        for e, (lo, hi) in enumerate(cond):
            if hi == 0:
                lows.append(ZERO)
                highs.append(ZERO)
                continue
            nlo, nhi = next_value(h + ((a, e),), depth - 1) if w_c else (ZERO, ZERO)
            lows.append(w_r * rewards[e] + w_c * nlo)
            highs.append(w_r * rewards[e] + w_c * nhi)
        return _expect(cond, lows, highs)

    def optimal(self, h, depth) -> tuple:
        if self.discount.tail(len(h) + 1) == 0:
            return ZERO, ZERO
        if depth <= 0:
            return ZERO, ONE
        skey = self.env.state_key(h)
        key = (skey, depth, self._time_key(len(h) + 1))
        hit = self._opt.get(key)
        if hit is not None:
            return hit
        best = None
        for a in ACTIONS:
            lo, hi = self._backup(h, a, depth, skey, self.optimal)
            best = (lo, hi) if best is None else (max(best[0], lo), max(best[1], hi))
        self._opt[key] = best
        return best

    def q_value(self, h, a, depth) -> tuple:
        if self.discount.tail(len(h) + 1) == 0:
            return ZERO, ZERO
        if depth <= 0:
            return ZERO, ONE
        return self._backup(h, a, depth, self.env.state_key(h), self.optimal)

    def policy_value(self, policy: Policy, h, state, depth) -> tuple:
        if self.discount.tail(len(h) + 1) == 0:
            return ZERO, ZERO
        if depth <= 0:
            return ZERO, ONE
        skey = self.env.state_key(h)
        key = (id(policy), policy.key(h, state), skey, depth, self._time_key(len(h) + 1))
        hit = self._pol.get(key)
        if hit is not None:
            return hit
        lo = hi = ZERO
        for p, a, nstate in policy.step(h, state):
            if p == 0:
                continue
            qlo, qhi = self._backup(h, a, depth, skey, lambda h2, d: self.policy_value(policy, h2, nstate, d))
            lo += p * qlo
            hi += p * qhi
        self._pol[key] = (lo, hi)
        return lo, hi


def _depth(env, history, eps, depth):
    t = len(history) + 1
    if depth is not None:
        return depth
    return truncation_depth(env.discount, t, eps)


def _interval(env, history, bounds, depth, eps):
    t = len(history) + 1
    tail = env.discount.tail_ratio(t, depth) if env.discount.tail(t) else ZERO
    return ValueInterval(bounds[0], bounds[1], tail, Fraction(eps) if eps is not None else None)


def value(policy: Policy, env: Environment, history: History, eps=Fraction(1, 100), state=None,
          depth: Optional[int] = None, planner: Optional[Planner] = None) -> ValueInterval:
    """Interval around V^π_ν(history) of width <= eps plus environment slack."""
    d = _depth(env, history, eps, depth)
    planner = planner or Planner(env)
    return _interval(env, history, planner.policy_value(policy, tuple(history), state, d), d, eps)


def optimal_value(env: Environment, history: History, eps=Fraction(1, 100), depth: Optional[int] = None,
                  planner: Optional[Planner] = None) -> ValueInterval:
    """Expectimax interval around V*_ν(history)."""
    d = _depth(env, history, eps, depth)
    planner = planner or Planner(env)
    return _interval(env, history, planner.optimal(tuple(history), d), d, eps)


def q_values(env, history, eps=Fraction(1, 100), depth=None, planner=None) -> dict:
    d = _depth(env, history, eps, depth)
    planner = planner or Planner(env)
    return {a: _interval(env, history, planner.q_value(tuple(history), a, d), d, eps) for a in ACTIONS}


class OracleTieBreak:
    """Settle a tie by the partial oracle's answer to a fixed query.

    ``query_of(history)`` gives the query index to ask (or None when the
    query is not enumerated at the oracle's level). Answer 1 means α. HALT
    mass is shared in proportion to the two answers, and an unanswered query
    is an even split, the noncommittal choice the oracle is allowed to make.
    """

    def __init__(self, po: PartialOracle, query_of: Callable[[History], Optional[int]]):
        self.po = po
        self.query_of = query_of

    def __call__(self, history) -> dict:
        i = self.query_of(history)
        if i is None or i > self.po.level:
            return {ALPHA: Fraction(1, 2), BETA: Fraction(1, 2)}
        dist = answer_distribution(self.po, i)
        one, zero = dist[Answer.ONE], dist[Answer.ZERO]
        if one + zero == 0:
            return {ALPHA: Fraction(1, 2), BETA: Fraction(1, 2)}
        return {a: p for a, p in ((ALPHA, one / (one + zero)), (BETA, zero / (one + zero))) if p > 0}


def action_distribution(env: Environment, history: History, eps=Fraction(1, 100), tie_rule="alpha",
                        planner: Optional[Planner] = None) -> dict:
    """Distribution over optimal actions; non-trivial only when the tie rule randomises.

    Deepens the expectimax until the two action-value intervals separate or
    the truncation depth for ``eps`` is reached.
    """
    history = tuple(history)
    planner = planner or Planner(env)
    t = len(history) + 1
    if env.discount.tail(t) == 0:
        d_max = 0
    else:
        d_max = max(1, truncation_depth(env.discount, t, eps))
    for d in range(1, d_max + 1):
        qa = planner.q_value(history, ALPHA, d)
        qb = planner.q_value(history, BETA, d)
        if qa[0] > qb[1]:
            return {ALPHA: ONE}
        if qb[0] > qa[1]:
            return {BETA: ONE}
    if tie_rule == "alpha":
        return {ALPHA: ONE}
    if tie_rule == "beta":
        return {BETA: ONE}
    if tie_rule == "uniform":
        return {ALPHA: Fraction(1, 2), BETA: Fraction(1, 2)}
    if callable(tie_rule):
        return tie_rule(history)
    raise ValueError(f"unknown tie rule {tie_rule!r}")


def optimal_action(env: Environment, history: History, eps=Fraction(1, 100), tie_rule="alpha",
                   planner: Optional[Planner] = None, rng: Optional[random.Random] = None) -> int:
    dist = action_distribution(env, history, eps, tie_rule, planner)
    if len(dist) == 1:
        return next(iter(dist))
    if rng is None:
        raise ValueError("tie rule randomised; pass rng to draw the action")
    return sample(rng, [(p, a) for a, p in sorted(dist.items())])


class OptimalPolicy(Policy):
    """π*_ν realised by interval expectimax with a persistent planner."""

    def __init__(self, env: Environment, eps=Fraction(1, 100), tie_rule="alpha"):
        self.env = env
        self.eps = Fraction(eps)
        self.tie_rule = tie_rule
        self.planner = Planner(env)
        self._cache: dict = {}

    def step(self, history, state):
        key = (self.env.state_key(history), None if self.env.discount.stationary else len(history))
        dist = self._cache.get(key)
        if dist is None:
            dist = action_distribution(self.env, history, self.eps, self.tie_rule, self.planner)
            self._cache[key] = dist
        return [(p, a, None) for a, p in sorted(dist.items())]

    def key(self, history, state):
        return self.env.state_key(history)
