import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decobp.environment import (
    EnvironmentSpec,
    InvalidSpecError,
    TwoStateTauLaw,
    env_from_dict,
    is_irreducible,
    period,
    regenerations,
    sample_cycles,
    sample_env,
    sample_env_block,
    stationary_distribution,
    two_state_tau_law,
    two_state_transition,
    zeta,
)
from decobp.offspring import Geometric, Poisson, ProductLaw

UP = ProductLaw(Geometric(2.0), Poisson(1.0))
DOWN = ProductLaw(Geometric(0.5), Poisson(1.0))


def two_state_params():
    return st.tuples(st.floats(0.05, 0.95), st.floats(0.05, 0.999)).map(
        lambda t: (t[0], t[1] * min(1 / t[0], 1 / (1 - t[0])))
    )


@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
@settings(max_examples=40)
def test_stationary_distribution_solves_balance(n, seed):
    rng = np.random.default_rng(seed)
    P = rng.random((n, n)) + 0.01
    P /= P.sum(axis=1, keepdims=True)
    pi = stationary_distribution(P)
    assert pi.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.max(np.abs(pi @ P - pi)) < 1e-14


def test_stationary_distribution_rejects_bad_matrices():
    with pytest.raises(InvalidSpecError):
        stationary_distribution([[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(InvalidSpecError):
        stationary_distribution([[1.0, 0.0], [0.5, 0.5]])  # reducible
    with pytest.raises(InvalidSpecError):
        stationary_distribution(np.ones((2, 3)) / 3)


def test_irreducibility_and_period():
    flip = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert is_irreducible(flip)
    assert period(flip) == 2
    cyc3 = np.roll(np.eye(3), 1, axis=1)
    assert period(cyc3) == 3
    assert period(two_state_transition(0.3, 0.5)) == 1
    with pytest.raises(InvalidSpecError):
        EnvironmentSpec.markov([UP, DOWN], flip)


@given(two_state_params())
def test_two_state_transition_has_stationary_vector(params):
    pi1, d = params
    P = two_state_transition(pi1, d)
    pi = np.array([pi1, 1 - pi1])
    assert np.allclose(P.sum(axis=1), 1.0)
    assert np.allclose(pi @ P, pi, atol=1e-15)


def test_two_state_rejects_out_of_range_d():
    with pytest.raises(InvalidSpecError):
        two_state_transition(0.25, 1 / 0.75 + 1e-9)
    with pytest.raises(InvalidSpecError):
        EnvironmentSpec.from_two_state(1.0, 0.5, [UP, DOWN])


def test_d_equal_one_is_iid():
    P = two_state_transition(0.3, 1.0)
    assert np.allclose(P, [[0.3, 0.7], [0.3, 0.7]])


@given(two_state_params())
@settings(max_examples=60)
def test_two_state_tau_law_closed_forms(params):
    pi1, d = params
    law = TwoStateTauLaw(pi1, d)
    assert law.total_mass() == pytest.approx(1.0, abs=1e-12)
    assert law.mean_minus_one() == pytest.approx(1.0, abs=1e-10)
    assert law.second_factorial() == pytest.approx(law.reference_second_factorial(), rel=1e-10)
    # the stationary law mixes the conditional laws
    for k in (1, 2, 5):
        mix = pi1 * law.conditional_pmf(0, k) + (1 - pi1) * law.conditional_pmf(1, k)
        assert law.pmf(k) == pytest.approx(mix, rel=1e-13, abs=1e-300)


@given(two_state_params(), st.floats(-2, 2), st.floats(-2, 2))
def test_mean_cycle_sum_is_twice_the_stationary_mean(params, b1, b2):
    pi1, d = params
    law = TwoStateTauLaw(pi1, d)
    assert law.mean_cycle_sum(b1, b2) == pytest.approx(2 * (pi1 * b1 + (1 - pi1) * b2), abs=1e-12)


def test_two_state_tau_law_function_and_domain():
    assert two_state_tau_law(0.5, 0.5, 1) == pytest.approx(1 - 2 * 0.25 * 0.5)
    with pytest.raises(ValueError):
        two_state_tau_law(0.5, 0.5, 0)


def test_spec_constructors_and_round_trip():
    specs = [
        EnvironmentSpec.constant(UP),
        EnvironmentSpec.iid([UP, DOWN], [0.5, 0.5]),
        EnvironmentSpec.markov([UP, DOWN], [[0.9, 0.1], [0.2, 0.8]]),
        EnvironmentSpec.from_two_state(1 / 3, 0.8, [UP, DOWN]),
    ]
    for spec in specs:
        again = env_from_dict(spec.to_dict())
        assert again == spec
        assert hash(again) == hash(spec)
    with pytest.raises(InvalidSpecError):
        EnvironmentSpec.iid([UP, DOWN], [0.5, 0.6])
    with pytest.raises(InvalidSpecError):
        env_from_dict({"kind": "hmm"})


def test_zeta_and_drift():
    spec = EnvironmentSpec.iid([UP, DOWN], [0.5, 0.5])
    assert zeta(UP) == pytest.approx(math.log(2))
    assert spec.mean_zeta() == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("kind", ["iid", "markov"])
def test_sampled_frequencies_match_stationary_law(kind):
    if kind == "iid":
        spec = EnvironmentSpec.iid([UP, DOWN, UP], [0.2, 0.5, 0.3])
    else:
        spec = EnvironmentSpec.markov([UP, DOWN, UP], [[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.3, 0.3, 0.4]])
    block = sample_env_block(spec, 2000, 100, np.random.default_rng(0))
    freq = np.bincount(block.ravel(), minlength=3) / block.size
    assert np.allclose(freq, spec.stationary, atol=0.01)


def test_markov_transitions_match_matrix():
    P = np.array([[0.9, 0.1], [0.3, 0.7]])
    spec = EnvironmentSpec.markov([UP, DOWN], P)
    block = sample_env_block(spec, 500, 400, np.random.default_rng(2))
    a, b = block[:, :-1].ravel(), block[:, 1:].ravel()
    for i in (0, 1):
        assert np.mean(b[a == i] == 1) == pytest.approx(P[i, 1], abs=0.01)


def test_block_continuation_follows_the_chain():
    spec = EnvironmentSpec.from_two_state(0.5, 0.1, [UP, DOWN])
    after = np.array([0, 1] * 500, dtype=np.int8)
    block = sample_env_block(spec, 1000, 1, np.random.default_rng(4), after=after)
    # with d = 0.1 the chain mostly stays put
    assert np.mean(block[:, 0] == after) > 0.9


def test_sample_env_and_regenerations():
    spec = EnvironmentSpec.from_two_state(0.4, 0.7, [UP, DOWN])
    seq = sample_env(spec, 500, np.random.default_rng(1))
    reg = regenerations(seq)
    assert reg.taus[0] == 0
    assert np.all(np.diff(reg.taus) >= 1)
    assert np.all(seq.states[reg.taus] == seq.states[0])
    cycles = reg.cycles(seq.states)
    assert sum(len(c) for c in cycles) + reg.incomplete_tail == len(seq)
    # inside a cycle the initial state never reappears after position 0
    for c in cycles:
        assert c[0] == seq.states[0] and np.all(c[1:] != seq.states[0])
    with pytest.raises(ValueError):
        sample_env(spec, 0, np.random.default_rng(0))


def test_sample_cycles_keeps_consistent_states():
    spec = EnvironmentSpec.from_two_state(1 / 3, 0.8, [UP, DOWN])
    batch = sample_cycles(spec, 5000, np.random.default_rng(5), keep_states=True)
    z = spec.zeta_values()
    for i in range(0, 5000, 97):
        s = batch.states(i)
        assert len(s) == batch.tau[i]
        assert s[0] == batch.start[i] and np.all(s[1:] != s[0])
        assert batch.zeta_hat[i] == pytest.approx(z[s].sum())
    assert batch.tau.mean() == pytest.approx(2.0, abs=0.06)


def test_iid_cycles_are_geometric():
    spec = EnvironmentSpec.iid([UP, DOWN], [0.3, 0.7])
    batch = sample_cycles(spec, 100_000, np.random.default_rng(6), start=np.zeros(100_000, dtype=np.int8))
    # from state 0 the return time is geometric with success probability 0.3
    assert batch.tau.mean() == pytest.approx(1 / 0.3, rel=0.02)
