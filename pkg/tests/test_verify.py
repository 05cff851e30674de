import math

import pytest

from twoscale_ldp import verify


def test_check_result_semantics():
    res = verify.CheckResult(0, "demo", budget=1.0)
    assert res.add("a", 0.5, 1.0)
    assert res.add("b", 2.0, (1.0, 3.0), "in")
    assert not res.add("c", 0.5, 1.0, ">=")
    assert not res.passed
    assert res.summary().startswith("[FAIL] check 0 demo")
    with pytest.raises(ValueError):
        res.add("d", 1.0, 1.0, "??")


def test_runtime_budget_is_part_of_pass():
    res = verify.CheckResult(0, "demo", budget=1.0)
    res.add("a", 0.0, 1.0)
    res.elapsed = 2.0
    assert not res.passed and "over budget" in res.summary()


def test_find_check():
    assert verify.find_check(5).name == "legendre-duality"
    assert verify.find_check("tail-ldp-slope").number == 8
    with pytest.raises(KeyError):
        verify.find_check("nope")
    assert [c.number for c in verify.CHECKS] == list(range(1, 11))


def test_zero_tolerance_forces_failure():
    res = verify.run_check(5, tol_scale=0.0)
    assert not res.passed
    assert any(not m.passed for m in res.measurements)


def test_quick_checks_carry_evidence():
    res = verify.run_check(1)
    assert res.passed and res.tables
    assert math.isfinite(res.elapsed)
