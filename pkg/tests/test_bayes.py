import random
from fractions import Fraction
from itertools import product

import pytest
from hypothesis import given, strategies as st

from conftest import registry_of
from grainoftruth.bayes import (
    BayesState,
    EnvironmentClass,
    HellEnvironment,
    MixtureEnvironment,
    PosteriorUndefined,
    PrefixCache,
    bayes_optimal_policy,
    dogmatic_class,
    hell_weight_for,
    joint_probability,
    mixture_conditional,
    posterior_update,
    prior_from_code_length,
    register_mixture_as_machine,
    thompson_policy,
)
from grainoftruth.machine import eval_truncated
from grainoftruth.oracle import PartialOracle
from grainoftruth.rl import (
    ALPHA,
    BETA,
    FunctionEnvironment,
    MachineEnvironment,
    PerceptSpace,
    PeriodicPolicy,
    optimal_action,
)

HALF = Fraction(1, 2)
BITS = PerceptSpace.from_rewards([0, 1])


def coin(p, name=""):
    p = Fraction(p)
    return FunctionEnvironment(BITS, lambda h, a: (1 - p, p), key=lambda h: (), name=name or f"coin{p}")


def bandit(good):
    """Deterministic: the ``good`` action pays 1, the other 0."""
    return FunctionEnvironment(BITS, lambda h, a: (0, 1) if a == good else (1, 0), key=lambda h: (),
                               name=f"bandit{good}")


def arm_env(pa, pb):
    pa, pb = Fraction(pa), Fraction(pb)
    return FunctionEnvironment(BITS, lambda h, a: (1 - pa, pa) if a == ALPHA else (1 - pb, pb), key=lambda h: ())


def test_prior_from_code_length():
    cls = EnvironmentClass([coin(0), coin(1)], code_lengths=[3, 5])
    assert prior_from_code_length(cls) == (Fraction(1, 2**24), Fraction(1, 2**40))
    assert prior_from_code_length(cls, uniform=True) == (HALF, HALF)
    with pytest.raises(ValueError):
        prior_from_code_length(EnvironmentClass([coin(0)]))


def test_prior_validation():
    cls = EnvironmentClass([coin(0), coin(1)])
    with pytest.raises(ValueError):
        BayesState.initial(cls, (HALF,))
    with pytest.raises(ValueError):
        BayesState.initial(cls, (0, 1))
    with pytest.raises(ValueError):
        BayesState.initial(cls, (HALF, Fraction(3, 4)))


def test_posterior_examples():
    s = BayesState.initial(EnvironmentClass([coin(1), coin(0)]))
    assert posterior_update(s, ALPHA, 1).posterior == (1, 0)
    s = BayesState.initial(EnvironmentClass([coin(Fraction(3, 4)), coin(Fraction(1, 4))]))
    assert posterior_update(s, ALPHA, 1).posterior == (Fraction(3, 4), Fraction(1, 4))
    s = posterior_update(posterior_update(s, ALPHA, 1), BETA, 0)
    assert s.posterior == (HALF, HALF)


def test_mixture_conditional_examples():
    s = BayesState.initial(EnvironmentClass([coin(1), coin(0)]), (Fraction(1, 4), Fraction(3, 4)))
    assert mixture_conditional(s, ALPHA, 1).lo == Fraction(1, 4)
    s = BayesState.initial(EnvironmentClass([coin(Fraction(3, 4)), coin(Fraction(1, 4))]))
    s = posterior_update(s, ALPHA, 1)
    # 3/4 * 3/4 + 1/4 * 1/4
    assert mixture_conditional(s, ALPHA, 1).lo == Fraction(5, 8)


def test_posterior_undefined_and_freeze():
    s = BayesState.initial(EnvironmentClass([coin(1)]))
    with pytest.raises(PosteriorUndefined):
        posterior_update(s, ALPHA, 0)
    frozen = posterior_update(s, ALPHA, 0, on_undefined="freeze")
    assert frozen.skipped == 1 and frozen.posterior == (1,)
    with pytest.raises(ValueError):
        posterior_update(s, 2, 0)


def test_class_needs_shared_percepts():
    other = FunctionEnvironment(PerceptSpace.from_rewards([0, HALF, 1]), lambda h, a: (0, 0, 1))
    with pytest.raises(ValueError):
        EnvironmentClass([coin(0), other])


def history_env(seed):
    rng = random.Random(seed)
    table = {}

    def probs(h, a):
        if (h, a) not in table:
            n = rng.randint(0, 4)
            table[h, a] = (Fraction(4 - n, 4), Fraction(n, 4))
        return table[h, a]

    return FunctionEnvironment(BITS, probs)


@given(st.integers(0, 1000), st.lists(st.integers(1, 9), min_size=3, max_size=3),
       st.lists(st.tuples(st.sampled_from([ALPHA, BETA]), st.integers(0, 1)), max_size=4))
def test_mixture_dominates_each_member(seed, raw, history):
    members = [history_env(seed + k) for k in range(3)]
    prior = tuple(Fraction(w, sum(raw)) for w in raw)
    mix = MixtureEnvironment(BayesState.initial(EnvironmentClass(members), prior))

    # reference: the mixture's joint is the prior-weighted sum of member joints
    def reference(h):
        return sum(w * joint_probability(m, h)[0] for w, m in zip(prior, members))

    # conditionals are only defined after histories of positive mass
    history = tuple(history)
    while history and reference(history[:-1]) == 0:
        history = history[:-1]
    want = reference(history)
    got = joint_probability(mix, history)
    assert got == (want, want)
    for w, m in zip(prior, members):
        assert got[0] >= w * joint_probability(m, tuple(history))[0]


def test_prefix_cache_reuses_parents():
    calls = []

    def step(prev, history, cycle):
        calls.append(history)
        return prev + cycle[1]

    cache = PrefixCache((), 0, step)
    assert cache(((0, 1), (1, 1), (0, 0))) == 2
    assert cache(((0, 1), (1, 1))) == 2
    assert len(calls) == 3


def test_bayes_optimal_matches_member_when_certain():
    s = BayesState.initial(EnvironmentClass([bandit(BETA), bandit(ALPHA)]))
    s = posterior_update(s, ALPHA, 0)
    pol = bayes_optimal_policy(s)
    assert pol.probs(s.history) == {BETA: 1}


def test_thompson_single_member_is_its_optimal_policy():
    env = arm_env(Fraction(1, 4), Fraction(3, 4))
    s = BayesState.initial(EnvironmentClass([env]))
    pol = thompson_policy(s, HALF)
    assert pol.probs(()) == {optimal_action(env, ()): 1}


def test_thompson_mixes_by_posterior_then_collapses():
    s = BayesState.initial(EnvironmentClass([bandit(ALPHA), bandit(BETA)]), (Fraction(1, 4), Fraction(3, 4)))
    pol = thompson_policy(s, HALF, seed=1)
    assert pol.period(1) == 1
    assert pol.probs(()) == {ALPHA: Fraction(1, 4), BETA: Fraction(3, 4)}
    assert pol.probs(((ALPHA, 1),)) == {ALPHA: 1}


def test_thompson_holds_sample_for_the_effective_horizon():
    s = BayesState.initial(EnvironmentClass([bandit(ALPHA), bandit(BETA)]))
    pol = thompson_policy(s, Fraction(1, 8), seed=3)
    assert pol.period(1) == 3
    outcomes = pol.step((), None)
    assert sorted((a, st_) for _, a, st_ in outcomes) == [(ALPHA, (0, 4)), (BETA, (1, 4))]
    # the held sample keeps acting even when history rules it out
    assert pol.step(((ALPHA, 0),), (0, 4)) == [(1, ALPHA, (0, 4))]


def test_hell_environment():
    base = coin(HALF)
    hell = HellEnvironment(base, PeriodicPolicy("ab"))
    assert hell.conditional((), ALPHA) == base.conditional((), ALPHA)
    assert hell.conditional((), BETA) == ((1, 1), (0, 0))
    assert hell.conditional(((BETA, 1),), BETA) == ((1, 1), (0, 0))
    assert hell.state_key(((BETA, 1), (ALPHA, 1))) == ("hell",)
    assert hell_weight_for(HALF) == Fraction(3, 4)


def test_dogmatic_agent_follows_its_policy():
    pi = PeriodicPolicy("aab")
    base = arm_env(Fraction(1, 4), Fraction(3, 4))  # on its own the agent would always pick β
    cls, prior = dogmatic_class(base, pi, Fraction(9, 10))
    assert prior == (Fraction(9, 10), Fraction(1, 10))
    agent = bayes_optimal_policy(BayesState.initial(cls, prior), on_undefined="freeze")
    rng = random.Random(0)
    h = ()
    for t in range(30):
        a, _ = agent.act(h, None, rng)
        assert a == pi.action_at(t + 1)
        h += ((a, 1 if rng.random() < 0.5 else 0),)


def test_mixture_machine_predicts_like_the_mixture():
    reg = registry_of("OUT1", "OUT0")
    po = PartialOracle(8, (0,) * 8, reg.fingerprint)
    members = [MachineEnvironment(reg, i, po, BITS) for i in (1, 2)]
    s = BayesState.initial(EnvironmentClass(members), (Fraction(1, 4), Fraction(3, 4)))
    idx = register_mixture_as_machine(reg, s)
    assert reg[idx].code_length == 3
    po = PartialOracle(8, (0,) * 8, reg.fingerprint)
    assert eval_truncated(reg, idx, "0", po).p1 == Fraction(1, 4)


def test_mixture_machine_bounds_tighten_with_level():
    reg = registry_of("COIN\nOUT", "OUT1")
    po = PartialOracle(1, (0,), reg.fingerprint)
    members = [MachineEnvironment(reg, i, po, BITS) for i in (1, 2)]
    idx = register_mixture_as_machine(reg, BayesState.initial(EnvironmentClass(members)))
    # history: action 0, percept 1; posterior (1/3, 2/3) so the next percept bit is 1 w.p. 5/6
    lows = [eval_truncated(reg, idx, "010", PartialOracle(k, (0,) * k, reg.fingerprint)).p1 for k in (4, 6, 8, 10)]
    assert lows == sorted(lows)
    assert lows[-1] <= Fraction(5, 6)
    assert Fraction(5, 6) - lows[-1] < Fraction(5, 6) - lows[0]


def test_mixture_machine_needs_machine_members():
    reg = registry_of("OUT1")
    with pytest.raises(ValueError):
        register_mixture_as_machine(reg, BayesState.initial(EnvironmentClass([coin(1)])))


def test_all_histories_have_positive_mixture_mass():
    members = [coin(Fraction(1, 4)), coin(Fraction(3, 4))]
    mix = MixtureEnvironment(BayesState.initial(EnvironmentClass(members)))
    total = 0
    for es in product((0, 1), repeat=3):
        h = tuple((ALPHA, e) for e in es)
        lo, _ = joint_probability(mix, h)
        assert lo > 0
        total += lo
    assert total == 1
