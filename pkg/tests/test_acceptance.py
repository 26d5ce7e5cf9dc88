"""End-to-end acceptance gate: every numbered criterion runs the
corresponding verification-suite check at full strength and asserts it."""

import time

import pytest

from coopdrive.selftest import (check_alignment_oracles,
                                check_assignment_oracle,
                                check_attention_normalization,
                                check_collision_oracle, check_determinism,
                                check_ego_preservation, check_gradients,
                                check_template_contracts, run_selftest)


def report(result):
    status = "PASS" if result.passed else "FAIL"
    print(f"{status} {result.name}: {result.detail}")
    assert result.passed, f"{result.name}: {result.detail}"


def test_criterion_1_gradients_match_finite_differences():
    tic = time.perf_counter()
    result = check_gradients(n_cases=25, tol=1e-4)
    took = time.perf_counter() - tic
    report(result)
    assert took < 60.0, f"gradient check took {took:.1f}s"


def test_criterion_2_attention_rows_normalized():
    report(check_attention_normalization())


def test_criterion_3_alignment_oracles():
    report(check_alignment_oracles())


def test_criterion_4_assignment_oracle_and_id_stability():
    report(check_assignment_oracle(n_cases=500))


def test_criterion_5_collision_oracles():
    report(check_collision_oracle(n_scenes=200, n_pairs=1000))


def test_criterion_6_template_contracts_and_anchor_scan():
    report(check_template_contracts())


def test_criterion_7_byte_identical_determinism():
    report(check_determinism(thread_check=True))


def test_criterion_8_ego_preservation_and_v2x_benefit():
    report(check_ego_preservation())


def test_criterion_9_full_suite_within_budget():
    tic = time.perf_counter()
    results = run_selftest(fast=False, thread_check=True)
    took = time.perf_counter() - tic
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.detail}")
    assert all(r.passed for r in results), \
        "; ".join(f"{r.name}: {r.detail}" for r in results if not r.passed)
    assert took < 600.0, f"selftest took {took:.1f}s"
