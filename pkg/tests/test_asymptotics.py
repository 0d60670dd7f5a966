import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decobp.asymptotics import (
    AsymptoticReport,
    NoRootError,
    classify,
    constant_env_predictions,
    fit_log_law,
    fit_tail_index,
    hill,
    power_moment,
    q_kappa,
    solve_kappa,
    subcritical_constants,
    tail_plateau,
    total_progeny_laplace,
)
from decobp.environment import EnvironmentSpec
from decobp.offspring import Geometric, OffspringLaw2, Poisson, ProductLaw
from decobp.process import TailSample


@given(st.floats(0.55, 0.95))
def test_kappa_of_two_point_law(p):
    # p/y + (1-p) y = 1 with y = 2**kappa has the roots y = 1 and y = p/(1-p)
    kappa = solve_kappa(([0.5, 2.0], [p, 1 - p]))
    assert kappa == pytest.approx(math.log2(p / (1 - p)), rel=1e-12, abs=1e-13)


def test_kappa_from_spec_and_callable_agree():
    spec = EnvironmentSpec.iid([ProductLaw(Poisson(0.5), Poisson(1.0)), ProductLaw(Poisson(2.0), Poisson(1.0))], [0.8, 0.2])
    k = solve_kappa(spec)
    assert k == pytest.approx(2.0, abs=1e-10)
    assert solve_kappa(lambda t: power_moment(np.array([0.5, 2.0]), np.array([0.8, 0.2]), t)) == pytest.approx(k, abs=1e-10)


def test_kappa_callable_with_divergent_moment():
    # moment 0.5 * 0.5**k + 0.5 * 2**k / (1 - k/3) diverges at k = 3 but crosses 1 first
    def moment(k):
        return math.inf if k >= 3 else 0.6 * 0.5**k + 0.4 * 2**k * (1 + 0.01 * k / (3 - k))

    k = solve_kappa(moment)
    assert moment(k) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(NoRootError):
        solve_kappa(lambda k: math.inf if k >= 0.5 else 0.5 * 0.5**k + 0.5 * 1.5**k)


@pytest.mark.parametrize(
    "law",
    [([1.0], [1.0]), ([0.5, 1.0], [0.5, 0.5]), ([0.5, 4.0], [0.5, 0.5]), ([0.0, 2.0], [0.5, 0.5])],
    ids=["degenerate", "no-upside", "positive-drift", "zero-mean"],
)
def test_kappa_no_root(law):
    with pytest.raises(NoRootError) as err:
        solve_kappa(law)
    assert err.value.diagnostics


def test_q_kappa_branches():
    assert q_kappa(100.0, 0.5) == pytest.approx(0.1)
    assert q_kappa(100.0, 1.0) == pytest.approx(math.log(100) / 100)
    assert q_kappa(100.0, 1.0 + 1e-11) == pytest.approx(math.log(100) / 100)
    assert q_kappa(100.0, 2.0) == pytest.approx(0.01)
    assert q_kappa(np.array([4.0, 16.0]), 0.5) == pytest.approx([0.5, 0.25])
    with pytest.raises(ValueError):
        q_kappa(1.0, 0.5)
    with pytest.raises(ValueError):
        q_kappa(10.0, 0.0)


@given(st.floats(1e-6, 5.0))
@settings(deadline=None)
def test_laplace_critical_geometric_closed_form(lam):
    # f(s) = 1/(2-s): phi solves phi^2 - 2 phi + e^-lam = 0
    phi, resid = total_progeny_laplace(ProductLaw(Geometric(1.0), Poisson(1.0)), lam)
    assert phi == pytest.approx(1 - math.sqrt(-math.expm1(-lam)), rel=1e-9)
    assert resid < 1e-13


@given(st.floats(0.1, 0.9), st.floats(1e-6, 5.0))
@settings(deadline=None)
def test_laplace_subcritical_geometric_closed_form(m, lam):
    # f(s) = 1/(1 + m(1-s)): m phi^2 - (1+m) phi + e^-lam = 0
    phi, _ = total_progeny_laplace(ProductLaw(Geometric(m), Poisson(1.0)), lam)
    b = math.exp(-lam)
    ref = 2 * b / ((1 + m) + math.sqrt((1 + m) ** 2 - 4 * m * b))
    assert phi == pytest.approx(ref, rel=1e-12)


def test_laplace_domain():
    with pytest.raises(ValueError):
        total_progeny_laplace(ProductLaw(Geometric(1.5), Poisson(1.0)), 0.1)
    with pytest.raises(ValueError):
        total_progeny_laplace(ProductLaw(Geometric(0.5), Poisson(1.0)), -1.0)
    assert total_progeny_laplace(ProductLaw(Geometric(0.5), Poisson(1.0)), 0.0) == (1.0, 0.0)


def test_constant_env_predictions():
    law2 = OffspringLaw2.geometric_mean_one()
    crit = constant_env_predictions(ProductLaw(Geometric(1.0), Poisson(1.0)), law2, 100)
    assert crit["regime"] == "constant_critical"
    assert crit["px"] == pytest.approx(2 / (2 * 100))
    assert crit["pz"] == pytest.approx(2 / math.sqrt(2 * 2 * 100))
    sub = constant_env_predictions(ProductLaw(Geometric(0.5), Poisson(1.0)), law2, 100)
    assert sub["pz"] == pytest.approx(2 * 1.0 / (2 * 0.5 * 100))
    with pytest.raises(ValueError):
        constant_env_predictions(ProductLaw(Geometric(1.5), Poisson(1.0)), law2, 100)


@pytest.mark.parametrize("alpha", [0.7, 1.0, 2.0])
def test_hill_recovers_pareto_index(alpha):
    rng = np.random.default_rng(int(alpha * 10))
    x = rng.pareto(alpha, 1_000_000) + 1.0  # P[X > x] = x**-alpha
    fit = fit_tail_index(x)
    assert fit.kappa == pytest.approx(alpha, rel=0.03)
    assert fit.power_law
    srt = np.sort(x)[::-1]
    # the plateau at the true index is flat at C = 1; the fitted C inherits
    # the kappa error amplified by x**(kappa_hat - alpha) over the fit range
    plateau = srt[fit.ks] ** alpha * fit.ks / x.size
    assert np.all(np.abs(plateau - 1.0) < 0.1)
    assert fit.C == pytest.approx(1.0, rel=0.25)
    assert hill(srt, 5000) == pytest.approx(alpha, rel=0.05)
    with pytest.raises(ValueError):
        fit_tail_index(x[:1000])


def test_hill_refuses_incomplete_top_values():
    vals = np.arange(1.0, 2_000_001.0)
    status = np.ones(vals.size, dtype=np.int8)
    status[-1] = 3  # the largest value is only a lower bound
    with pytest.raises(ValueError):
        fit_tail_index(TailSample("W_T", vals, status, 10, 1e6))


def test_tail_plateau():
    vals = np.array([1.0, 2.0, 4.0, 8.0])
    ts = TailSample("S_T", vals, np.ones(4, dtype=np.int8), 10, None)
    assert tail_plateau(ts, [3.0], 1.0) == pytest.approx([3.0 * 0.5])


def test_log_law_fits_on_synthetic_curves():
    ns = 2.0 ** np.arange(4, 21)
    L = np.log(ns)
    assert fit_log_law(ns, 3 / L).K == pytest.approx(3.0, rel=1e-2)
    shifted = fit_log_law(ns, 3 / L + 5 / L**2, model="shifted")
    assert shifted.K == pytest.approx(3.0, rel=0.2)
    assert shifted.B == pytest.approx(5.0, rel=0.2)
    pure = fit_log_law(ns, 3 / L + 5 / L**2)
    assert pure.goodness > shifted.goodness
    with pytest.raises(ValueError):
        fit_log_law([10, 20], [0.4, 0.3])
    with pytest.raises(ValueError):
        fit_log_law(ns, 3 / L, model="cubic")


def test_log_law_reports_tail_constant():
    ns = 2.0 ** np.arange(4, 14)
    xs = np.array([10.0, 100.0, 1000.0])
    vals = np.repeat(xs * 1.5, 3)
    ts = TailSample("S1_T", vals, np.ones(vals.size, dtype=np.int8), 10, None)
    fit = fit_log_law(ns, 2 / np.log(ns), tail_sample=ts, tail_xs=xs)
    assert fit.K_tail == pytest.approx(float(np.median(np.log(xs) * ts.tail(xs))))
    assert fit.ratio == pytest.approx(fit.K / fit.K_tail)


def test_subcritical_constants_branches():
    K, scaled = subcritical_constants(0.5, 0.5, 2.0)
    assert K == pytest.approx(math.gamma(0.5) * 0.5) and scaled == K
    K, _ = subcritical_constants(0.5, 1.0, 2.0)
    assert K == pytest.approx(0.5)
    K, scaled = subcritical_constants(None, 2.0, 2.0, a=2.0, mean_w=3.0)
    assert K == pytest.approx(1.5) and scaled == pytest.approx(3.0)
    K, scaled = subcritical_constants(0.5, 0.5, 1.0, a=2.0)
    assert K == pytest.approx(math.gamma(0.5) * 0.5) and scaled == pytest.approx(math.sqrt(2) * K)
    for args in ((None, 0.5, 2.0), (None, 1.0, 2.0), (0.5, 2.0, 2.0), (0.5, 0.0, 2.0)):
        with pytest.raises(ValueError):
            subcritical_constants(*args)


def test_classify_and_report():
    up, down = ProductLaw(Geometric(2.0), Poisson(1.0)), ProductLaw(Geometric(0.5), Poisson(1.0))
    assert classify(EnvironmentSpec.constant(ProductLaw(Geometric(1.0), Poisson(1.0)))) == "constant_critical"
    assert classify(EnvironmentSpec.iid([up, down], [0.5, 0.5])) == "iid_critical"
    assert classify(EnvironmentSpec.from_two_state(1 / 3, 0.8, [up, down])) == "markov_subcritical"
    with pytest.raises(ValueError):
        classify(EnvironmentSpec.constant(up))
    rep = AsymptoticReport("iid_critical")
    rep.predict("pz", 0.5, "K/log n")
    rep.measure("pz", 0.45, 0.01)
    assert rep.ratios["pz"] == pytest.approx(0.9)
    assert rep.to_dict()["measured"]["pz"]["se"] == 0.01
    with pytest.raises(ValueError):
        AsymptoticReport("chaotic")
