"""Multi-agent play, subjective environments, best-response gaps and equilibria."""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .bayes import PrefixCache
from .rl import (
    ACTIONS,
    ALPHA,
    BETA,
    Discount,
    Environment,
    GeometricDiscount,
    Percept,
    PerceptSpace,
    Planner,
    Policy,
    PeriodicPolicy,
    StochasticPolicy,
    ValueInterval,
    optimal_value,
    sample,
    value,
)

ZERO = Fraction(0)
ONE = Fraction(1)


class BeliefError(RuntimeError):
    """Belief filtering failed: impossible view or support above the bound."""


# --------------------------------------------------------------------------
# games


class MultiAgentEnv:
    """Joint percept distribution σ(e | joint history, joint action).

    A joint history is a tuple of ``(joint action, joint percept)`` pairs,
    both tuples with one entry per agent.
    """

    def __init__(self, n: int, percepts: Sequence[PerceptSpace], discount: Optional[Discount] = None, name: str = ""):
        if n < 1 or len(percepts) != n:
            raise ValueError("need one percept space per agent")
        self.n = n
        self.percepts = list(percepts)
        self.discount = discount or GeometricDiscount(Fraction(1, 2))
        self.name = name

    def joint_conditional(self, jh: tuple, joint_action: tuple) -> dict:
        raise NotImplementedError

    def state_key(self, jh: tuple):
        return jh


class RepeatedGame(MultiAgentEnv):
    """Stateless game: each joint action yields a fixed joint percept."""

    def __init__(self, n, percepts, outcomes: dict, discount=None, name=""):
        super().__init__(n, percepts, discount, name)
        for ja in itertools.product(ACTIONS, repeat=n):
            if ja not in outcomes:
                raise ValueError(f"missing outcome for joint action {ja}")
        self.outcomes = {tuple(k): tuple(v) for k, v in outcomes.items()}

    def joint_conditional(self, jh, joint_action):
        return {self.outcomes[tuple(joint_action)]: ONE}

    def state_key(self, jh):
        return ()

    def rewards(self, joint_action) -> tuple:
        jp = self.outcomes[tuple(joint_action)]
        return tuple(self.percepts[i].reward(e) for i, e in enumerate(jp))


def make_matching_pennies(discount=None) -> RepeatedGame:
    """Agent 0 is rewarded for matching, agent 1 for mismatching.

    Observations are empty; percept 1 carries reward 1 and percept 0 reward 0.
    """
    ps = PerceptSpace([Percept("", ZERO), Percept("", ONE)])
    outcomes = {(a, b): ((1, 0) if a == b else (0, 1)) for a in ACTIONS for b in ACTIONS}
    return RepeatedGame(2, [ps, ps], outcomes, discount, "matching-pennies")


PD_PAYOFF = {
    (ALPHA, ALPHA): Fraction(3, 4),
    (ALPHA, BETA): ZERO,
    (BETA, ALPHA): ONE,
    (BETA, BETA): Fraction(1, 4),
}


def make_iterated_pd(discount=None) -> RepeatedGame:
    """Prisoner's dilemma with α = cooperate and β = defect.

    Percept index ``2 * own + other`` records both actions; its reward is the
    stage payoff (3/4, 0, 1, 1/4).
    """
    names = {ALPHA: "C", BETA: "D"}
    ps = PerceptSpace([Percept(names[own] + names[other], PD_PAYOFF[(own, other)])
                       for own in ACTIONS for other in ACTIONS])
    outcomes = {(a, b): (2 * a + b, 2 * b + a) for a in ACTIONS for b in ACTIONS}
    return RepeatedGame(2, [ps, ps], outcomes, discount, "prisoners-dilemma")


def pd_other_action(e: int) -> int:
    return e % 2


class GrimPolicy(Policy):
    """Cooperate at steps τ <= t until the opponent defects, then defect.

    ``t = None`` never stops cooperating on its own (grim trigger); ``t = 0``
    defects from the start.
    """

    def __init__(self, t: Optional[int]):
        if t is not None and t < 0:
            raise ValueError("t must be a nonnegative integer or None")
        self.t = t
        self.name = "grim:inf" if t is None else f"grim:{t}"
        self._triggered = PrefixCache((), False, lambda prev, h, cycle: prev or pd_other_action(cycle[1]) == BETA)

    def _defects(self, history) -> bool:
        history = tuple(history)
        return self._triggered(history) or (self.t is not None and len(history) >= self.t)

    def step(self, history, state):
        return [(ONE, BETA if self._defects(history) else ALPHA, None)]

    def key(self, history, state):
        if self._defects(history):
            return ("D",)
        return ("C", None if self.t is None else len(history))


def pd_grim_policy(t: Optional[int]) -> GrimPolicy:
    return GrimPolicy(t)


def iid_policy(p_alpha) -> StochasticPolicy:
    """Plays α with probability ``p_alpha`` at every step, ignoring the history."""
    p = Fraction(p_alpha)
    if not 0 <= p <= 1:
        raise ValueError(f"probability {p} outside [0, 1]")
    dist = {a: q for a, q in ((ALPHA, p), (BETA, 1 - p)) if q > 0}
    return StochasticPolicy(lambda h: dist, key=lambda h: (), name=f"iid:{p}")


# --------------------------------------------------------------------------
# play


@dataclass(frozen=True)
class JointHistory:
    cycles: tuple = ()

    def __len__(self):
        return len(self.cycles)

    def project(self, i: int) -> tuple:
        return project(self.cycles, i)

    def actions(self, i: int) -> list:
        return [ja[i] for ja, _ in self.cycles]

    def rewards(self, game: MultiAgentEnv, i: int) -> list:
        return [game.percepts[i].reward(jp[i]) for _, jp in self.cycles]


def project(jh: tuple, i: int) -> tuple:
    return tuple((ja[i], jp[i]) for ja, jp in jh)


def play(game: MultiAgentEnv, policies: Sequence[Policy], T: int, seed: int = 0, callback=None) -> JointHistory:
    """Sample T cycles; agent i draws from ``Random(f"{seed}/{i}")``.

    ``callback(t, jh, states)`` runs after each cycle, e.g. to measure gaps.
    """
    if len(policies) != game.n:
        raise ValueError(f"game needs {game.n} policies, got {len(policies)}")
    rngs = [random.Random(f"{seed}/{i}") for i in range(game.n)]
    env_rng = random.Random(f"{seed}/env")
    states = [p.initial_state() for p in policies]
    views = [() for _ in range(game.n)]
    jh: tuple = ()
    for t in range(1, T + 1):
        joint_action = []
        for i, pol in enumerate(policies):
            a, states[i] = pol.act(views[i], states[i], rngs[i])
            if a not in ACTIONS:
                raise ValueError(f"agent {i} emitted invalid action {a!r}")
            joint_action.append(a)
        joint_action = tuple(joint_action)
        dist = game.joint_conditional(jh, joint_action)
        jp = sample(env_rng, [(p, jp) for jp, p in sorted(dist.items())])
        jh = jh + ((joint_action, jp),)
        views = [v + ((joint_action[i], jp[i]),) for i, v in enumerate(views)]
        if callback is not None:
            callback(t, jh, tuple(states))
    return JointHistory(jh)


# --------------------------------------------------------------------------
# subjective environments


class SubjectiveEnvironment(Environment):
    """Agent i's view of the game with the other agents' policies folded in.

    Exact belief filtering: the belief after agent i's history is a
    distribution over (joint history, hidden states of the others) that
    project onto it. Entries with zero weight are pruned. With
    ``on_impossible="ignore"`` a percept the others rule out is treated as
    uninformative (the belief conditions on the action only), which lets the
    environment keep predicting inside a frozen posterior.
    """

    exact = True

    def __init__(self, game: MultiAgentEnv, policies: Sequence[Optional[Policy]], i: int,
                 support_limit: int = 10_000, name: str = "", on_impossible: str = "raise"):
        super().__init__(game.percepts[i], game.discount)
        if on_impossible not in ("raise", "ignore"):
            raise ValueError(f"unknown on_impossible rule {on_impossible!r}")
        self.on_impossible = on_impossible
        if len(policies) != game.n:
            raise ValueError(f"game needs {game.n} policies")
        self.game = game
        self.i = i
        self.others = [(j, policies[j]) for j in range(game.n) if j != i]
        if any(p is None for _, p in self.others):
            raise ValueError("every other agent needs a policy")
        self.support_limit = support_limit
        self.name = name
        root = {((), tuple(p.initial_state() for _, p in self.others)): ONE}
        self.belief = PrefixCache((), root, self._advance)
        self._expansions: dict = {}

    def _expand(self, history, action) -> dict:
        key = (history, action)
        hit = self._expansions.get(key)
        if hit is not None:
            return hit
        belief = self.belief(history)
        out: dict = {}
        for (jh, states), w in belief.items():
            choices = []
            for (j, pol), s in zip(self.others, states):
                choices.append(pol.step(project(jh, j), s))
            for combo in itertools.product(*choices):
                p = w
                acts = {}
                nstates = []
                for (j, _), (q, a, ns) in zip(self.others, combo):
                    p *= q
                    acts[j] = a
                    nstates.append(ns)
                if p == 0:
                    continue
                acts[self.i] = action
                ja = tuple(acts[k] for k in range(self.game.n))
                for jp, q in self.game.joint_conditional(jh, ja).items():
                    if q == 0:
                        continue
                    bucket = out.setdefault(jp[self.i], {})
                    entry = (jh + ((ja, jp),), tuple(nstates))
                    bucket[entry] = bucket.get(entry, ZERO) + p * q
        if len(self._expansions) > 100_000:
            self._expansions.clear()
        self._expansions[key] = out
        return out

    def _advance(self, belief, history, cycle):
        a, e = cycle
        exp = self._expand(history[:-1], a)
        bucket = exp.get(e)
        if not bucket and self.on_impossible == "ignore":
            bucket = {}
            for b in exp.values():
                for k, v in b.items():
                    bucket[k] = bucket.get(k, ZERO) + v
        if not bucket:
            raise BeliefError(f"agent {self.i} observed percept {e} that the others' policies rule out")
        if len(bucket) > self.support_limit:
            raise BeliefError(f"belief support {len(bucket)} exceeds the bound {self.support_limit}")
        total = sum(bucket.values())
        return {k: v / total for k, v in bucket.items()}

    def conditional(self, history, action):
        exp = self._expand(tuple(history), action)
        probs = [sum(exp.get(e, {}).values(), ZERO) for e in self.percepts]
        return tuple((p, p) for p in probs)

    def state_key(self, history):
        merged: dict = {}
        for (jh, states), w in self.belief(tuple(history)).items():
            k = (self.game.state_key(jh),
                 tuple(pol.key(project(jh, j), s) for (j, pol), s in zip(self.others, states)))
            merged[k] = merged.get(k, ZERO) + w
        return frozenset(merged.items())


def subjective_env(game: MultiAgentEnv, policies, i: int, **kwargs) -> SubjectiveEnvironment:
    return SubjectiveEnvironment(game, policies, i, **kwargs)


def best_response_gap(game: MultiAgentEnv, policies, i: int, history=(), precision=Fraction(1, 100),
                      state=None, depth: Optional[int] = None, env: Optional[Environment] = None,
                      planner: Optional[Planner] = None) -> ValueInterval:
    """Interval enclosing V*(h) - V^π_i(h) in agent i's subjective environment."""
    env = env or SubjectiveEnvironment(game, policies, i)
    planner = planner or Planner(env)
    history = tuple(history)
    best = optimal_value(env, history, precision, depth=depth, planner=planner)
    own = value(policies[i], env, history, precision, state=state, depth=depth, planner=planner)
    return ValueInterval(best.lo - own.hi, best.hi - own.lo, best.truncation + own.truncation, Fraction(precision))


def is_eps_best_response(gap: ValueInterval, eps) -> bool:
    return gap.hi < Fraction(eps)


# --------------------------------------------------------------------------
# stage games and backward induction


def solve_bimatrix(A, B) -> tuple:
    """An exact Nash equilibrium of a 2x2 bimatrix game.

    Pure equilibria are tried first in lexicographic order of the joint
    action; otherwise the unique fully mixed equilibrium is returned. Each
    strategy is the tuple (P[α], P[β]).
    """
    for a1, a2 in itertools.product(ACTIONS, repeat=2):
        if A[a1][a2] >= A[1 - a1][a2] and B[a1][a2] >= B[a1][1 - a2]:
            return tuple(ONE if a == a1 else ZERO for a in ACTIONS), tuple(ONE if a == a2 else ZERO for a in ACTIONS)
    dq = A[0][0] - A[0][1] - A[1][0] + A[1][1]
    dp = B[0][0] - B[1][0] - B[0][1] + B[1][1]
    if dq == 0 or dp == 0:  # pragma: no cover - impossible without a pure equilibrium
        raise ArithmeticError("degenerate 2x2 game without a pure equilibrium")
    q = (A[1][1] - A[0][1]) / dq
    p = (B[1][1] - B[1][0]) / dp
    if not (0 <= p <= 1 and 0 <= q <= 1):  # pragma: no cover
        raise ArithmeticError("mixed equilibrium outside the simplex")
    return (p, 1 - p), (q, 1 - q)


@dataclass
class Equilibrium:
    game: MultiAgentEnv
    horizon: int
    strategies: dict = field(default_factory=dict)  # (state key, depth, t) -> per-agent strategies
    values: tuple = ()  # normalised root values
    root: tuple = ()  # per-agent root strategies
    policies: list = field(default_factory=list)


class _BackwardInduction:
    def __init__(self, game: MultiAgentEnv, max_nodes: int):
        if game.n > 2:
            raise NotImplementedError("stage games are solved for one or two agents")
        self.game = game
        self.discount = game.discount
        self.max_nodes = max_nodes
        self.memo: dict = {}

    def _key(self, jh, depth):
        t = None if self.discount.stationary else len(jh) + 1
        return (self.game.state_key(jh), depth, t)

    def solve(self, jh, depth):
        """(unnormalised values per agent, strategies per agent) at ``jh``."""
        n = self.game.n
        if depth <= 0 or self.discount.tail(len(jh) + 1) == 0:
            return (ZERO,) * n, None
        key = self._key(jh, depth)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        if len(self.memo) >= self.max_nodes:
            raise RuntimeError(f"backward induction exceeded {self.max_nodes} nodes")
        w_r, w_c = self.discount.weights(len(jh) + 1)
        payoff = {}
        for ja in itertools.product(ACTIONS, repeat=n):
            vals = [ZERO] * n
            for jp, q in self.game.joint_conditional(jh, ja).items():
                if q == 0:
                    continue
                nxt = self.solve(jh + ((ja, jp),), depth - 1)[0] if w_c else (ZERO,) * n
                for k in range(n):
                    vals[k] += q * (w_r * self.game.percepts[k].reward(jp[k]) + w_c * nxt[k])
            payoff[ja] = vals
        if n == 1:
            best = max(ACTIONS, key=lambda a: (payoff[(a,)][0], -a))
            strategies = (tuple(ONE if a == best else ZERO for a in ACTIONS),)
        else:
            A = [[payoff[(a, b)][0] for b in ACTIONS] for a in ACTIONS]
            B = [[payoff[(a, b)][1] for b in ACTIONS] for a in ACTIONS]
            strategies = solve_bimatrix(A, B)
        values = []
        for k in range(n):
            v = ZERO
            for ja in itertools.product(ACTIONS, repeat=n):
                p = ONE
                for j in range(n):
                    p *= strategies[j][ja[j]]
                v += p * payoff[ja][k]
            values.append(v)
        result = (tuple(values), strategies)
        self.memo[key] = result
        return result


class EquilibriumPolicy(Policy):
    """Agent i's part of a backward-induction equilibrium.

    Joint histories consistent with the agent's own view are reconstructed
    from the game; the view must pin down the prescribed strategy. Beyond the
    horizon the agent plays the one-step equilibrium.
    """

    def __init__(self, solver: _BackwardInduction, horizon: int, i: int):
        self.solver = solver
        self.horizon = horizon
        self.i = i
        game = solver.game

        def extend(candidates, history, cycle):
            a, e = cycle
            out = []
            for jh in candidates:
                for ja in itertools.product(ACTIONS, repeat=game.n):
                    if ja[i] != a:
                        continue
                    for jp, q in game.joint_conditional(jh, ja).items():
                        if q > 0 and jp[i] == e:
                            out.append(jh + ((ja, jp),))
            return tuple(out)

        self._joint = PrefixCache((), ((),), extend)

    def _strategy(self, history):
        history = tuple(history)
        depth = self.horizon - len(history) if len(history) < self.horizon else 1
        found = set()
        for jh in self._joint(history):
            strategies = self.solver.solve(jh, depth)[1]
            if strategies is not None:
                found.add(strategies[self.i])
        if len(found) != 1:
            raise BeliefError(f"agent {self.i}'s view does not determine its equilibrium strategy")
        return found.pop()

    def step(self, history, state):
        strat = self._strategy(history)
        return [(p, a, None) for a, p in zip(ACTIONS, strat) if p > 0]

    def key(self, history, state):
        return self._strategy(history)


def informed_equilibrium(game: MultiAgentEnv, horizon: int, tie_rule: str = "lex", max_nodes: int = 100_000) -> Equilibrium:
    """Subgame-perfect equilibrium of the game truncated after ``horizon`` steps.

    Stage games are solved exactly; ties between equilibria go to the
    lexicographically first pure profile. Reported values are normalised by
    the discount mass of the truncated game.
    """
    if horizon < 1:
        raise ValueError("horizon must be positive")
    if tie_rule != "lex":
        raise ValueError(f"unsupported tie rule {tie_rule!r}")
    solver = _BackwardInduction(game, max_nodes)
    raw, root = solver.solve((), horizon)
    mass = 1 - game.discount.tail_ratio(1, horizon)
    eq = Equilibrium(game, horizon)
    eq.values = tuple(v / mass for v in raw)
    eq.root = root
    eq.strategies = solver.memo
    eq.policies = [EquilibriumPolicy(solver, horizon, i) for i in range(game.n)]
    return eq
