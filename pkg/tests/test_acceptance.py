"""Acceptance suite: one test per criterion, each printing its PASS/FAIL lines.

Every test runs the registered verification check of the same name, so
``decobp verify`` and this file measure exactly the same quantities.
"""

import pytest

from decobp.verify import REGISTRY, run_check


def _run(name, capsys):
    run = run_check(REGISTRY[name])
    with capsys.disabled():
        print(f"\n== {name} (criterion {run.check.criterion}; {run.elapsed:.1f} s)")
        for r in run.results:
            print("  " + r.line())
        if run.error:
            print(f"  FAIL  {name}: {run.error}")
    assert not run.error, run.error
    failed = [r.line() for r in run.results if not r.passed]
    assert not failed, "\n".join(failed)


def test_c01_extinction_law(capsys):
    _run("extinction_law", capsys)


def test_c02_constant_critical_survival(capsys):
    _run("constant_critical", capsys)


def test_c03_constant_subcritical_survival(capsys):
    _run("constant_subcritical", capsys)


def test_c04_total_progeny_laplace(capsys):
    _run("progeny_laplace", capsys)


@pytest.mark.slow
def test_c05_iid_critical_shape(capsys):
    _run("iid_critical_shape", capsys)


@pytest.mark.slow
def test_c06a_rao_blackwell_vs_naive(capsys):
    _run("rb_vs_naive", capsys)


@pytest.mark.slow
def test_c06b_weighted_progeny_tail_ratio(capsys):
    _run("tail_ratio", capsys)


@pytest.mark.slow
def test_c06c_log_law_constants(capsys):
    _run("log_law_constants", capsys)


def test_c07_kappa_solver(capsys):
    _run("kappa_solver", capsys)


@pytest.mark.slow
def test_c08_hill_tail_index(capsys):
    _run("hill_tail_index", capsys)


def test_c09_two_state_regeneration_law(capsys):
    _run("two_state_tau", capsys)


def test_c10_wald_identity(capsys):
    _run("wald_identity", capsys)


def test_c11_embedded_moments(capsys):
    _run("embedded_moments", capsys)


@pytest.mark.slow
def test_c12_embedded_consistency(capsys):
    _run("embedded_consistency", capsys)


@pytest.mark.slow
def test_c13_determinism(capsys):
    _run("determinism", capsys)
