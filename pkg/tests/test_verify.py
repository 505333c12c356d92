import pytest

from hystfem.verify import Check, check_energy_gradient, run_checks


def test_check_passes_at_tolerance():
    assert Check("x", 1e-6, 1e-6).passed
    assert not Check("x", 2e-6, 1e-6).passed
    assert not Check("x", float("nan"), 1.0).passed


def test_unknown_level_rejected():
    with pytest.raises(ValueError):
        run_checks("medium")


def test_gradient_check_detects_a_fault():
    assert check_energy_gradient().passed
    assert not check_energy_gradient(fault=1e-3).passed


def test_quick_suite_reports_every_check():
    seen = []
    out = run_checks("quick", report=seen.append)
    assert seen == out
    assert all(c.passed for c in out), [(c.name, c.value) for c in out if not c.passed]


def test_fault_injection_turns_suite_red():
    out = run_checks("quick", fault="gradient")
    assert any(not c.passed for c in out)
