import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decobp.embedded import (
    _cycles_block,
    composed_pgf_bar,
    cycle_moments_closed_form,
    cycle_moments_oracle,
    embed_summary,
    embedded_process_view,
    embedded_tail_samples,
    estimate_embedded_survival_curve,
    exact_mu1_hat_law,
    matched_horizons,
    moment_generating_mu1_hat,
    moment_generating_mu1_hat_linear,
    sample_cycle_moments,
    sandwich_check,
    two_state_cycle_law,
    x_hat_1_pmf,
)
from decobp.environment import EnvironmentSpec
from decobp.offspring import Geometric, JointTable, OffspringLaw2, Poisson, ProductLaw
from decobp.process import exact_constant_survival

UP = ProductLaw(Geometric(2.0), Poisson(1.0))
DOWN = ProductLaw(Geometric(0.5), Poisson(1.0))
JOINT = JointTable(((0, 0), (1, 2), (2, 1), (3, 0)), (0.3, 0.3, 0.2, 0.2))
LAWS = [UP, DOWN, JOINT, ProductLaw(Poisson(0.8), Geometric(1.5))]
LAW2 = OffspringLaw2.geometric_mean_one()


def two_state(pi1, d):
    return EnvironmentSpec.from_two_state(pi1, d, [UP, DOWN])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=5), st.sampled_from(["geometric", "poisson"]))
def test_closed_form_cycle_moments_match_numerical_oracle(states, which):
    law2 = OffspringLaw2.geometric_mean_one() if which == "geometric" else OffspringLaw2.poisson_mean_one()
    cf = cycle_moments_closed_form(states, LAWS, law2)
    ref = cycle_moments_oracle(states, LAWS, law2)
    for name in ("mu1_hat", "mu2_hat", "theta1_hat", "theta2_hat", "m2_hat"):
        assert getattr(cf, name) == pytest.approx(getattr(ref, name), rel=1e-6, abs=1e-9), name
    assert ref.m1_hat == pytest.approx(1.0, rel=1e-8)
    assert cf.zeta_hat == pytest.approx(ref.zeta_hat)
    assert cf.tau == len(states)


def test_single_step_cycle_reduces_to_step_moments():
    m = JOINT.moments()
    cf = cycle_moments_closed_form([0], [JOINT], LAW2)
    assert (cf.mu1_hat, cf.mu2_hat, cf.theta1_hat, cf.theta2_hat) == pytest.approx((m.mu1, m.mu2, m.theta1, m.theta2))
    with pytest.raises(ValueError):
        cycle_moments_closed_form([], [JOINT], LAW2)


def test_composed_pgf_is_a_complement_pgf():
    assert composed_pgf_bar([0, 1, 0], LAWS, LAW2, 0.0, 0.0) == pytest.approx(0.0, abs=1e-15)
    v = composed_pgf_bar([0, 1, 0], LAWS, LAW2, 1.0, 1.0)
    assert 0.0 < v <= 1.0


two_state_params = st.tuples(st.floats(0.1, 0.9), st.floats(0.1, 0.99)).map(
    lambda t: (t[0], t[1] * min(1 / t[0], 1 / (1 - t[0])))
)


@settings(max_examples=40, deadline=None)
@given(two_state_params, st.floats(0.05, 1.5))
def test_power_moment_closed_form_linear_and_enumeration_agree(params, kappa):
    spec = two_state(*params)
    cf = moment_generating_mu1_hat(spec, kappa)
    lin = moment_generating_mu1_hat_linear(spec, kappa)
    if math.isinf(cf):
        assert math.isinf(lin)
        return
    assert lin == pytest.approx(cf, rel=1e-10)
    vals, probs = exact_mu1_hat_law(spec, tail=1e-15)
    # the enumeration drops sojourns once their probability is below 1e-15; the
    # weighted remainder decays like (P_jj mu_j**kappa)**L, so compare only when small
    mu = np.array([2.0, 0.5])
    P = np.diag(spec.transition)
    lengths = np.log(1e-15) / np.log(np.maximum(P, 1e-300))
    if np.all((P * mu**kappa) ** lengths < 1e-9):
        assert float(probs @ vals**kappa) == pytest.approx(cf, rel=1e-6)


@given(two_state_params)
def test_cycle_law_enumeration(params):
    spec = two_state(*params)
    law = two_state_cycle_law(spec, tail=1e-13)
    mass = sum(p for p, _ in law)
    mean = sum(p * len(s) for p, s in law)
    assert mass == pytest.approx(1.0, abs=1e-11)
    # stationary start: mean cycle length equals the number of states
    assert mean == pytest.approx(2.0, rel=1e-8)


def test_x_hat_1_pmf_is_a_distribution_with_cycle_mean():
    # milder laws so that the cycle mean is finite
    spec = EnvironmentSpec.from_two_state(0.5, 0.5, [ProductLaw(Geometric(1.2), Poisson(1.0)), DOWN])
    pmf = x_hat_1_pmf(spec)
    big = x_hat_1_pmf(spec, size=1 << 16)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(pmf[:50], big[:50], rtol=0, atol=1e-10)
    # the mean converges from below as the support grows; the tail is heavy
    exact = moment_generating_mu1_hat(spec, 1.0)
    m_small = float(np.arange(pmf.size) @ pmf)
    m_big = float(np.arange(big.size) @ big)
    assert m_small < m_big < exact and exact - m_big < 2e-3
    # Monte Carlo over one cycle from a stationary start
    rng = np.random.default_rng(8)
    x1 = np.array([embedded_process_view(spec, LAW2, 1, rng).X[1] for _ in range(20_000)])
    for k in range(3):
        freq = np.mean(x1 == k)
        assert abs(freq - pmf[k]) < 4 * math.sqrt(pmf[k] * (1 - pmf[k]) / x1.size)
    with pytest.raises(ValueError):
        two_state_cycle_law(EnvironmentSpec.iid([UP, DOWN], [0.5, 0.5]))
    # staying in the growing state has P_jj mu_j >= 1, so the mean diverges
    assert math.isinf(moment_generating_mu1_hat(two_state(0.5, 0.5), 1.0))


@given(two_state_params, st.integers(1, 5000))
def test_matched_horizons_average_to_mean_cycle_times_r(params, r):
    spec = two_state(*params)
    per_state = matched_horizons(spec, np.arange(2), r)
    assert float(spec.stationary @ (r / spec.stationary)) == pytest.approx(2 * r)
    assert np.all(np.abs(per_state - r / spec.stationary) <= 0.5)
    assert np.all(matched_horizons(EnvironmentSpec.constant(UP), np.zeros(3, dtype=int), r) == r)


@pytest.mark.parametrize("spec", [two_state(1 / 3, 0.8), EnvironmentSpec.iid([UP, DOWN, UP], [0.2, 0.5, 0.3])])
def test_cycles_block_holds_r_returns(spec):
    env, tau_r, tau_k = _cycles_block(spec, 500, 40, np.random.default_rng(0), slack=0.0)
    assert np.all(tau_k[:, 0] == 0)
    assert np.array_equal(tau_r, tau_k[:, -1])
    for i in range(0, 500, 37):
        row = env[i]
        hits = np.flatnonzero(row == row[0])
        assert np.array_equal(hits[:41], tau_k[i])


def test_cycles_block_return_times_are_unbiased():
    # continuing short rows rather than redrawing keeps the cycle-length law
    spec = two_state(1 / 3, 0.8)
    _, tau_r, _ = _cycles_block(spec, 20_000, 5, np.random.default_rng(1), slack=0.0)
    assert tau_r.mean() / 5 == pytest.approx(2.0, rel=0.02)


def test_embedded_curve_is_exact_in_a_constant_environment():
    spec = EnvironmentSpec.constant(ProductLaw(Geometric(1.0), Poisson(1.0)))
    est = estimate_embedded_survival_curve(spec, LAW2, [10, 40], 50)
    for e in est:
        assert (e.p_z, e.p_x, e.p_either) == pytest.approx(exact_constant_survival(spec, LAW2, e.n), abs=1e-14)


def test_sandwich_orders_conditional_survival():
    res = sandwich_check(two_state(1 / 3, 0.8), LAW2, 60, 3000, seed=2)
    assert res.violations == 0
    assert res.lower <= res.middle <= res.upper


def test_embed_summary_wald_identity():
    s = embed_summary(two_state(1 / 3, 0.8), 200_000, seed=3)
    assert s.a == pytest.approx(2.0, abs=4 * s.se_a)
    assert s.wald_ok


def test_sample_cycle_moments_are_closed_form_moments():
    spec = two_state(0.5, 0.5)
    cyc = sample_cycle_moments(spec, LAW2, 50, np.random.default_rng(4))
    for c in cyc:
        assert c == cycle_moments_closed_form(c.states, spec.laws, LAW2)


def test_embedded_process_view_records():
    spec = two_state(0.5, 0.5)
    rng = np.random.default_rng(5)
    for _ in range(30):
        rec = embedded_process_view(spec, LAW2, 12, rng)
        assert len(rec.X) == 13 and len(rec.Y) == 12
        assert rec.X[0] == 1 and rec.Z[0] == 0 and rec.Z[1] == rec.Y[0]
        if not rec.censored:
            assert rec.X[rec.T] == 0 and all(x > 0 for x in rec.X[: rec.T])
    with pytest.raises(ValueError):
        embedded_process_view(spec, LAW2, 0, rng)


def test_embedded_tails_need_a_markov_environment():
    with pytest.raises(ValueError):
        embedded_tail_samples(EnvironmentSpec.iid([UP, DOWN], [0.5, 0.5]), LAW2, 10)
    out = embedded_tail_samples(two_state(0.5, 0.5), LAW2, 2000, seed=6, stop_at=1e4)
    for ts in out.values():
        assert ts.n_total == 2000
        assert ts.tail(0.0) <= 1.0
