"""Acceptance criteria at the default configuration.

Each test runs (or reuses) its scenario, prints one PASS/FAIL line and checks
the verdict together with the criterion's wall-time budget in seconds.
"""

import pytest

from phi4lab.experiments import CRITERIA

BUDGET = {
    "bony_exactness": 10,
    "semigroup_laws": 5,
    "max_principle": 120,
    "merge_by_t1": 300,
    "coming_down_constant": 300,
    "l2_contraction": 60,
    "girsanov_normalization": 120,
    "coupling_success": 900,
    "multi_window": 900,
    "monotonicity_regression": 300,
    "harnack": 1200,
    "para_bound_stable": 120,
    "n_choice_bound": 120,
    "mollifier_exponent": 60,
    "exponent_table": 1,
}


def check(scenarios, report, criterion):
    name, desc = CRITERIA[criterion]
    res = scenarios.get(name)
    v = res.verdict(criterion)
    took = res.timings[criterion]
    ok = v.passed and took <= BUDGET[criterion]
    report(f"{'PASS' if ok else 'FAIL'} {criterion} ({desc}): observed={v.observed:.6g} "
           f"threshold={v.threshold:.6g} time={took:.1f}s/{BUDGET[criterion]}s")
    assert v.passed, f"{criterion}: observed {v.observed} vs threshold {v.threshold}: {v.detail}"
    assert took <= BUDGET[criterion], f"{criterion} took {took:.1f}s"


def test_bony_exactness(scenarios, report):
    check(scenarios, report, "bony_exactness")


def test_semigroup_laws(scenarios, report):
    check(scenarios, report, "semigroup_laws")


def test_max_principle_bound(scenarios, report):
    check(scenarios, report, "max_principle")


def test_coming_down_merge(scenarios, report):
    check(scenarios, report, "merge_by_t1")


def test_coming_down_constant(scenarios, report):
    check(scenarios, report, "coming_down_constant")


def test_linear_l2_contraction(scenarios, report):
    check(scenarios, report, "l2_contraction")


def test_girsanov_normalization(scenarios, report):
    check(scenarios, report, "girsanov_normalization")


def test_single_window_coupling_success(scenarios, report):
    check(scenarios, report, "coupling_success")


def test_multi_window_failure_decay(scenarios, report):
    check(scenarios, report, "multi_window")


def test_monotonicity_regression(scenarios, report):
    check(scenarios, report, "monotonicity_regression")


def test_harnack_inequality(scenarios, report):
    check(scenarios, report, "harnack")


def test_paraproduct_constant_stable(scenarios, report):
    check(scenarios, report, "para_bound_stable")


def test_optimized_n_choice_bound(scenarios, report):
    # expected to fail: the combined bound stays about 9x above ell^(1/3+0.2)
    # until ell is astronomically large; see the decisions ledger
    check(scenarios, report, "n_choice_bound")


def test_mollifier_exponent(scenarios, report):
    check(scenarios, report, "mollifier_exponent")


def test_exponent_table(scenarios, report):
    check(scenarios, report, "exponent_table")


def test_every_criterion_is_covered():
    import inspect, sys
    src = inspect.getsource(sys.modules[__name__])
    missing = [c for c in CRITERIA if f'"{c}")' not in src]
    assert not missing
