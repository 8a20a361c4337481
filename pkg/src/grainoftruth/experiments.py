"""Agent and game builders plus the run loop shared by the CLI and the scripts."""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .bayes import (
    BayesState,
    EnvironmentClass,
    bayes_optimal_policy,
    dogmatic_class,
    thompson_policy,
)
from .multiagent import (
    GrimPolicy,
    MultiAgentEnv,
    SubjectiveEnvironment,
    best_response_gap,
    iid_policy,
    make_iterated_pd,
    make_matching_pennies,
    play,
    project,
)
from .rl import BETA, GeometricDiscount, Planner, PeriodicPolicy, Policy

GAMES = {"matching-pennies": make_matching_pennies, "prisoners-dilemma": make_iterated_pd}
PI_HORIZONS = tuple(range(21)) + (None,)


class SpecError(ValueError):
    pass


def make_game(name: str, discount=Fraction(1, 2)) -> MultiAgentEnv:
    try:
        factory = GAMES[name]
    except KeyError:
        raise SpecError(f"unknown game {name!r}; choose from {sorted(GAMES)}") from None
    return factory(GeometricDiscount(discount))


def _seat(game, i, other_policy):
    policies = [None] * game.n
    policies[1 - i] = other_policy
    return policies


def opponent_class(game: MultiAgentEnv, i: int, opponents, names, on_impossible="raise") -> EnvironmentClass:
    """Subjective environments for agent i, one per hypothesised opponent policy."""
    members = [SubjectiveEnvironment(game, _seat(game, i, o), i, name=n, on_impossible=on_impossible)
               for o, n in zip(opponents, names)]
    return EnvironmentClass(members, names)


def iid_class(game, i, on_impossible="raise") -> EnvironmentClass:
    """Opponent plays α i.i.d. with probability 1/4, 1/2 or 3/4, or alternates α β."""
    opponents = [iid_policy(Fraction(1, 4)), iid_policy(Fraction(1, 2)), iid_policy(Fraction(3, 4)), PeriodicPolicy("ab")]
    return opponent_class(game, i, opponents, ["iid:1/4", "iid:1/2", "iid:3/4", "alternate"], on_impossible)


def grim_class(game, i, horizons=PI_HORIZONS, on_impossible="raise") -> EnvironmentClass:
    """Opponent plays one of the grim policies π_t."""
    opponents = [GrimPolicy(t) for t in horizons]
    return opponent_class(game, i, opponents, [o.name for o in opponents], on_impossible)


def random_prior(n: int, rng: random.Random) -> tuple:
    raw = [rng.randint(1, 100) for _ in range(n)]
    total = sum(raw)
    return tuple(Fraction(r, total) for r in raw)


@dataclass
class AgentOptions:
    precision: Fraction = Fraction(1, 100)
    eps_T: Fraction = Fraction(1, 2)
    hell_weight: Fraction = Fraction(9, 10)
    random_prior: bool = True
    tie_rule: str = "alpha"


def parse_pattern(text: str) -> PeriodicPolicy:
    if not text or set(text) - set("abαβ"):
        raise SpecError(f"action pattern {text!r} must use a/b")
    return PeriodicPolicy(text)


def build_agent(spec: str, game: MultiAgentEnv, i: int, seed: int, opts: Optional[AgentOptions] = None) -> Policy:
    """Build agent i from a spec string.

    Specs: ``fixed:<pattern>``, ``iid:<p>``, ``grim:<t|inf>``,
    ``bayes:<iid|grim>``, ``thompson:<iid|grim>``, ``dogmatic:<own>/<other>``.
    """
    opts = opts or AgentOptions()
    kind, _, arg = spec.partition(":")
    if kind == "fixed":
        return parse_pattern(arg)
    try:
        if kind == "iid":
            return iid_policy(Fraction(arg))
        if kind == "grim":
            return GrimPolicy(None if arg in ("inf", "∞") else int(arg))
    except (ValueError, ZeroDivisionError):
        raise SpecError(f"bad parameter in agent spec {spec!r}") from None
    if kind in ("bayes", "thompson"):
        builders = {"iid": iid_class, "grim": grim_class}
        if arg not in builders:
            raise SpecError(f"unknown class {arg!r} in agent spec {spec!r}")
        # a policy must act on every history, including ones its class rules out
        # (other agents' gap checks ask about those); there the posterior is frozen
        cls = builders[arg](game, i, on_impossible="ignore")
        rng = random.Random(f"prior/{seed}/{i}")
        prior = random_prior(len(cls), rng) if opts.random_prior else None
        state = BayesState.initial(cls, prior)
        if kind == "bayes":
            return bayes_optimal_policy(state, opts.precision, opts.tie_rule, on_undefined="freeze")
        return thompson_policy(state, opts.eps_T, seed, precision=opts.precision, tie_rule="uniform",
                               on_undefined="freeze")
    if kind == "dogmatic":
        own, sep, other = arg.partition("/")
        if not sep:
            raise SpecError("dogmatic spec needs <own pattern>/<other pattern>")
        own_policy = parse_pattern(own)
        base = SubjectiveEnvironment(game, _seat(game, i, parse_pattern(other)), i, name="base", on_impossible="ignore")
        cls, prior = dogmatic_class(base, own_policy, opts.hell_weight)
        return bayes_optimal_policy(BayesState.initial(cls, prior), opts.precision, opts.tie_rule, on_undefined="freeze")
    raise SpecError(f"unknown agent spec {spec!r}")


@dataclass
class GapRecord:
    t: int
    agent: int
    lo: Fraction
    hi: Fraction


@dataclass
class GameRun:
    game: MultiAgentEnv
    policies: list
    history: tuple = ()
    gaps: list = field(default_factory=list)

    def average_reward(self, i: int) -> Fraction:
        rewards = [self.game.percepts[i].reward(jp[i]) for _, jp in self.history]
        return sum(rewards, Fraction(0)) / len(rewards) if rewards else Fraction(0)

    def actions(self, i: int) -> list:
        return [ja[i] for ja, _ in self.history]


def run_game(game: MultiAgentEnv, policies, T: int, seed: int, check_every: int = 0, gap_at_end: bool = False,
             gap_depth: Optional[int] = None, precision=Fraction(1, 100)) -> GameRun:
    """Play T steps, measuring each agent's best-response gap every ``check_every`` steps."""
    run = GameRun(game, list(policies))
    envs = planners = None
    if check_every or gap_at_end:
        envs = [SubjectiveEnvironment(game, policies, i) for i in range(game.n)]
        planners = [Planner(e) for e in envs]

    def measure(t, jh, states):
        for i in range(game.n):
            g = best_response_gap(game, policies, i, project(jh, i), precision, state=states[i],
                                  depth=gap_depth, env=envs[i], planner=planners[i])
            run.gaps.append(GapRecord(t, i, g.lo, g.hi))

    def callback(t, jh, states):
        if (check_every and t % check_every == 0) or (gap_at_end and t == T and not (check_every and t % check_every == 0)):
            measure(t, jh, states)

    run.history = play(game, policies, T, seed, callback if envs else None).cycles
    return run


def run_configured(cfg, seed: int) -> GameRun:
    """One game run described by an ExperimentConfig (game, agents, T, gap settings)."""
    game = make_game(cfg.game, cfg.discount)
    if len(cfg.agents) != game.n:
        raise SpecError(f"game {cfg.game} needs {game.n} agents")
    opts = AgentOptions(cfg.precision, cfg.eps_T, cfg.hell_weight, cfg.random_prior)
    policies = [build_agent(spec, game, i, seed, opts) for i, spec in enumerate(cfg.agents)]
    return run_game(game, policies, cfg.T, seed, cfg.check_every, gap_at_end=bool(cfg.check_every),
                    gap_depth=cfg.gap_depth, precision=cfg.precision)


def classify_pd(history) -> str:
    """``cooperate`` (all C), ``defect`` (both D from the step after the first
    defection on), or ``other``."""
    first = next((t for t, (ja, _) in enumerate(history) if BETA in ja), None)
    if first is None:
        return "cooperate"
    if all(ja == (BETA, BETA) for ja, _ in history[first + 1:]):
        return "defect"
    return "other"
