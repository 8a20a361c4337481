"""Bayes mixtures, posteriors, Bayes-optimal and Thompson-sampling agents, dogmatic priors."""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

from .machine import BuiltinMachine, Call, Choose, MachineRegistry
from .oracle import ProbabilityInterval
from .rl import (
    ACTIONS,
    Environment,
    MachineEnvironment,
    OptimalPolicy,
    Policy,
    effective_horizon,
    sample,
)

ZERO = Fraction(0)
ONE = Fraction(1)


class PosteriorUndefined(ArithmeticError):
    """Every class member assigns probability zero to the observed history."""


class PrefixCache:
    """Memo for history functions computed incrementally from the parent history.

    ``step(parent_value, history, cycle)`` extends the value by one cycle. The
    table is cleared when it outgrows ``limit``; the root is always kept.
    """

    def __init__(self, root_history: tuple, root_value, step: Callable, limit: int = 200_000):
        self.root = tuple(root_history)
        self.root_value = root_value
        self.step = step
        self.limit = limit
        self._table = {self.root: root_value}

    def __call__(self, history: tuple):
        hit = self._table.get(history)
        if hit is not None:
            return hit
        n = len(self.root)
        if len(history) < n or history[:n] != self.root:
            raise ValueError("history does not extend the cached root")
        # walk back to the nearest cached ancestor, then forward
        j = len(history) - 1
        while j > n and history[:j] not in self._table:
            j -= 1
        value = self._table[history[:j]]
        if len(self._table) > self.limit:
            self._table = {self.root: self.root_value, history[:j]: value}
        for i in range(j, len(history)):
            value = self.step(value, history[: i + 1], history[i])
            self._table[history[: i + 1]] = value
        return value


# --------------------------------------------------------------------------
# classes and priors


class EnvironmentClass:
    """Finite ordered environment class sharing one percept space and discount."""

    def __init__(self, members: Sequence[Environment], names: Optional[Sequence[str]] = None,
                 code_lengths: Optional[Sequence[Optional[int]]] = None):
        members = list(members)
        if not members:
            raise ValueError("environment class is empty")
        percepts = members[0].percepts
        if any(m.percepts != percepts for m in members):
            raise ValueError("class members must share a percept space")
        self.members = members
        self.percepts = percepts
        self.discount = members[0].discount
        self.names = list(names) if names else [getattr(m, "name", "") or f"env{i}" for i, m in enumerate(members)]
        if code_lengths is None:
            code_lengths = [getattr(m, "code_length", None) for m in members]
        self.code_lengths = list(code_lengths)

    def __len__(self):
        return len(self.members)

    def __getitem__(self, i):
        return self.members[i]

    def __iter__(self):
        return iter(self.members)


def prior_from_code_length(cls: EnvironmentClass, uniform: bool = False) -> tuple:
    """Weights 2^-(8 * bytes) per member, or 1/N each with ``uniform``.

    The result is a semidistribution; it is never renormalised here.
    """
    if uniform:
        return tuple(Fraction(1, len(cls)) for _ in cls.members)
    out = []
    for name, n in zip(cls.names, cls.code_lengths):
        if n is None:
            raise ValueError(f"class member {name!r} has no code length")
        out.append(Fraction(1, 2 ** (8 * n)))
    return tuple(out)


def _check_prior(cls, prior) -> tuple:
    prior = tuple(Fraction(w) for w in prior)
    if len(prior) != len(cls):
        raise ValueError("prior length does not match the class")
    if any(w <= 0 for w in prior) or sum(prior) > 1:
        raise ValueError("prior weights must be positive with total at most 1")
    return prior


# --------------------------------------------------------------------------
# posterior


@dataclass(frozen=True)
class BayesState:
    """Class, prior and the prior-times-likelihood weights after ``history``.

    Interval-valued likelihoods contribute their midpoint; ``width`` sums the
    likelihood interval widths seen so far. ``skipped`` counts cycles ignored
    under the ``freeze`` rule because every member ruled them out.
    """

    cls: EnvironmentClass
    prior: tuple
    weights: tuple
    history: tuple = ()
    width: Fraction = ZERO
    skipped: int = 0

    @classmethod
    def initial(cls_, env_class: EnvironmentClass, prior=None) -> "BayesState":
        prior = _check_prior(env_class, prior if prior is not None else prior_from_code_length(env_class, uniform=True))
        return cls_(env_class, prior, prior)

    @property
    def posterior(self) -> tuple:
        total = sum(self.weights)
        if total == 0:
            raise PosteriorUndefined("all class members have zero likelihood")
        return tuple(w / total for w in self.weights)


def _update(cls, posterior, history, a, e, on_undefined):
    """One Bayes step on normalised weights; returns (posterior, width, skipped)."""
    new = []
    width = ZERO
    for w, env in zip(posterior, cls.members):
        if w == 0:
            new.append(ZERO)
            continue
        lo, hi = env.conditional(history, a)[e]
        width = max(width, hi - lo)
        new.append(w * (lo + hi) / 2)
    total = sum(new)
    if total == 0:
        if on_undefined == "freeze":
            return posterior, width, 1
        raise PosteriorUndefined(f"no class member can produce percept {e} after action {a}")
    return tuple(w / total for w in new), width, 0


def posterior_update(state: BayesState, a: int, e: int, on_undefined: str = "raise") -> BayesState:
    """Condition on one more cycle (a, e)."""
    if a not in ACTIONS or not 0 <= e < len(state.cls.percepts):
        raise ValueError(f"malformed cycle ({a!r}, {e!r})")
    new = []
    width = ZERO
    for w, env in zip(state.weights, state.cls.members):
        if w == 0:
            new.append(ZERO)
            continue
        lo, hi = env.conditional(state.history, a)[e]
        width = max(width, hi - lo)
        new.append(w * (lo + hi) / 2)
    history = state.history + ((a, e),)
    if sum(new) == 0:
        if on_undefined == "freeze":
            return BayesState(state.cls, state.prior, state.weights, history, state.width + width, state.skipped + 1)
        raise PosteriorUndefined(f"no class member can produce percept {e} after action {a}")
    return BayesState(state.cls, state.prior, tuple(new), history, state.width + width, state.skipped)


def mixture_conditional(state: BayesState, a: int, e: int) -> ProbabilityInterval:
    """Posterior-weighted conditional probability of percept e after action a."""
    post = state.posterior
    lo = hi = ZERO
    for w, env in zip(post, state.cls.members):
        if w:
            l, h = env.conditional(state.history, a)[e]
            lo += w * l
            hi += w * h
    return ProbabilityInterval(lo, min(hi, ONE))


def joint_probability(env: Environment, history: tuple) -> tuple:
    """Bounds on env(e_1..e_t | a_1..a_t) by the chain rule."""
    lo = hi = ONE
    for i, (a, e) in enumerate(history):
        l, h = env.conditional(history[:i], a)[e]
        lo, hi = lo * l, hi * h
    return lo, hi


class MixtureEnvironment(Environment):
    """The Bayes mixture as an environment, rooted at a BayesState.

    Posteriors at continuation histories are computed incrementally and
    cached. The state key is the normalised posterior restricted to live
    members together with those members' own state keys.
    """

    exact = False

    def __init__(self, state: BayesState, on_undefined: str = "raise"):
        super().__init__(state.cls.percepts, state.cls.discount)
        self.cls = state.cls
        self.state = state
        self.on_undefined = on_undefined
        self.exact = all(getattr(m, "exact", True) for m in self.cls.members)
        cls = self.cls

        def step(post, history, cycle):
            return _update(cls, post, history[:-1], cycle[0], cycle[1], on_undefined)[0]

        self.posterior = PrefixCache(state.history, state.posterior, step)

    def conditional(self, history, action):
        post = self.posterior(tuple(history))
        n = len(self.percepts)
        lo = [ZERO] * n
        hi = [ZERO] * n
        for w, env in zip(post, self.cls.members):
            if w:
                for e, (l, h) in enumerate(env.conditional(history, action)):
                    lo[e] += w * l
                    hi[e] += w * h
        return tuple(zip(lo, hi))

    def state_key(self, history):
        history = tuple(history)
        post = self.posterior(history)
        return tuple((i, w, self.cls.members[i].state_key(history)) for i, w in enumerate(post) if w)


def bayes_optimal_policy(state: BayesState, precision=Fraction(1, 100), tie_rule="alpha",
                         on_undefined: str = "raise") -> OptimalPolicy:
    """Optimal policy for the mixture environment rooted at ``state``."""
    return OptimalPolicy(MixtureEnvironment(state, on_undefined), precision, tie_rule)


# --------------------------------------------------------------------------
# Thompson sampling


class ThompsonPolicy(Policy):
    """Sample an environment from the posterior and follow its optimal policy.

    The sample is kept for H_t(eps_T) steps (at least one). The hidden state
    is ``(member index, resample time)``; it is ``None`` when the next step
    resamples regardless, which keeps the policy stateless when H = 1.
    """

    def __init__(self, state: BayesState, eps_T, seed: int = 0, precision=Fraction(1, 100),
                 tie_rule="alpha", on_undefined: str = "raise"):
        eps_T = Fraction(eps_T)
        if eps_T <= 0:
            raise ValueError("eps_T must be positive")
        self.eps_T = eps_T
        self.seed = seed
        self.rng = random.Random(seed)
        self.mixture = MixtureEnvironment(state, on_undefined)
        self.members = [OptimalPolicy(env, precision, tie_rule) for env in state.cls.members]

    def period(self, t: int) -> int:
        return max(1, effective_horizon(self.mixture.discount, t, self.eps_T))

    def step(self, history, state):
        history = tuple(history)
        t = len(history) + 1
        if state is not None and t < state[1]:
            i = state[0]
            return [(p, a, state) for p, a, _ in self.members[i].step(history, None)]
        post = self.mixture.posterior(history)
        H = self.period(t)
        merged: dict = {}
        for i, w in enumerate(post):
            if w == 0:
                continue
            nxt = None if H == 1 else (i, t + H)
            for p, a, _ in self.members[i].step(history, None):
                merged[(a, nxt)] = merged.get((a, nxt), ZERO) + w * p
        return [(p, a, nxt) for (a, nxt), p in sorted(merged.items(), key=lambda kv: (kv[0][0], kv[0][1] or (-1, 0)))]

    def key(self, history, state):
        if state is not None and len(history) + 1 < state[1]:
            i = state[0]
            return ("follow", i, self.members[i].key(history, None), state[1] - len(history))
        return ("sample", self.mixture.state_key(history))

    def act(self, history, state, rng=None):
        return super().act(history, state, rng or self.rng)


def thompson_policy(state: BayesState, eps_T, seed: int = 0, **kwargs) -> ThompsonPolicy:
    return ThompsonPolicy(state, eps_T, seed, **kwargs)


# --------------------------------------------------------------------------
# dogmatic priors


def _policy_action(policy: Policy, history) -> int:
    dist = policy.probs(history)
    if len(dist) != 1:
        raise ValueError("dogmatic priors need a deterministic reference policy")
    return next(iter(dist))


class HellEnvironment(Environment):
    """Behaves like ``base`` while the agent follows ``policy``; after any
    deviation every percept is the reward-0 ``hell`` percept forever."""

    def __init__(self, base: Environment, policy: Policy, hell_percept: Optional[int] = None, name: str = "hell"):
        super().__init__(base.percepts, base.discount)
        if hell_percept is None:
            zeros = [e for e in base.percepts if base.percepts.reward(e) == 0]
            if not zeros:
                raise ValueError("percept space has no reward-0 percept")
            hell_percept = zeros[0]
        if base.percepts.reward(hell_percept) != 0:
            raise ValueError("the hell percept must carry reward 0")
        self.base = base
        self.policy = policy
        self.hell = hell_percept
        self.name = name
        self.exact = getattr(base, "exact", True)

        def step(deviated, history, cycle):
            return deviated or cycle[0] != _policy_action(policy, history[:-1])

        self.deviated = PrefixCache((), False, step)

    def _point(self):
        return tuple((ONE, ONE) if e == self.hell else (ZERO, ZERO) for e in self.percepts)

    def conditional(self, history, action):
        history = tuple(history)
        if self.deviated(history) or action != _policy_action(self.policy, history):
            return self._point()
        return self.base.conditional(history, action)

    def state_key(self, history):
        history = tuple(history)
        if self.deviated(history):
            return ("hell",)
        return (self.policy.key(history, None), self.base.state_key(history))


def hell_weight_for(min_on_policy_value) -> Fraction:
    """Prior weight on the hell environment that pins the agent to its policy.

    With hell weight h, deviating is worth at most 1 - h under the mixture,
    while following the policy is worth at least its smallest on-policy value
    v in the base environment; h = 1 - v/2 makes deviation strictly worse.
    """
    v = Fraction(min_on_policy_value)
    if not 0 < v <= 1:
        raise ValueError("the on-policy value must be positive")
    return 1 - v / 2


def dogmatic_class(base: Environment, policy: Policy, hell_weight, extra: Sequence[Environment] = ()):
    """Class [hell, base, *extra] with the hell member weighted ``hell_weight``.

    The remaining mass is split evenly over the other members.
    """
    hell_weight = Fraction(hell_weight)
    if not 0 < hell_weight < 1:
        raise ValueError("hell weight must lie in (0, 1)")
    members = [HellEnvironment(base, policy), base, *extra]
    rest = (1 - hell_weight) / (len(members) - 1)
    names = ["hell", getattr(base, "name", "") or "base"] + [getattr(m, "name", "") or f"extra{i}" for i, m in enumerate(extra)]
    cls = EnvironmentClass(members, names)
    return cls, (hell_weight,) + (rest,) * (len(members) - 1)


# --------------------------------------------------------------------------
# the mixture as a machine


def register_mixture_as_machine(registry: MachineRegistry, state: BayesState, name: str = "mixture",
                                code_length: Optional[int] = None) -> int:
    """Register a built-in machine whose conditionals are the Bayes mixture's.

    Every class member must be a machine-backed environment over ``registry``.
    On input x (an encoded history, possibly ending inside a percept) the
    machine picks a member by prior weight, replays the member on every
    percept bit of x and restarts on the first disagreement; once all bits
    agree it runs the member on x and emits its bit. The accepted member is
    distributed as the posterior, so the next bit follows the mixture; the
    restarts are paid in steps, so truncated runs lose mass like any other
    semimeasure.
    """
    members = state.cls.members
    for env in members:
        if not isinstance(env, MachineEnvironment) or env.registry is not registry:
            raise ValueError("every class member must be machine-backed over this registry")
    if state.history:
        raise ValueError("register the mixture from the prior state (empty history)")
    indices = tuple(env.index for env in members)
    total = sum(state.prior)
    weights = tuple(w / total for w in state.prior)
    cycle = 1 + state.cls.percepts.code_length

    def body(x, self_index):
        while True:
            j = yield Choose(weights)
            m = indices[j]
            ok = True
            for i in range(len(x)):
                if i % cycle == 0:
                    continue  # action bits are inputs, not predictions
                bit = yield Call(m, x[:i])
                if bit != int(x[i]):
                    ok = False
                    break
            if ok:
                bit = yield Call(m, x)
                return bit

    if code_length is None:
        code_length = 1 + sum(registry[i].code_length for i in indices)
    desc = "mixture of " + ",".join(map(str, indices)) + " weights " + ",".join(map(str, weights))
    return registry.register(BuiltinMachine(name, body, code_length, description=desc))
