"""Acceptance suite: one check per criterion at full settings.

Each test prints a ``PASS``/``FAIL`` line with the measured value and the
wall time, then asserts the verdict and the time budget.  Run directly
with ``python tests/test_acceptance.py`` for the summary lines alone.
"""
import sys

import pytest

from dnlskam import checks

CRITERIA = {
    "bracket_structure": (lambda: checks.bracket_structure(200, 8, 4, 0), 60),
    "divisor_scan": (lambda: checks.divisor_scan(50), 60),
    "birkhoff_identity": (lambda: checks.birkhoff_identity(12), 300),
    "homological_residual": (lambda: checks.homological_residual_check(20, 8, 1e-3, 1e-4, 0), 120),
    "kam_contraction": (lambda: checks.kam_contraction(4, 8, 1e-3), 600),
    "measure_law": (lambda: checks.measure_law((1e-4, 2e-4, 4e-4, 8e-4), 10_000, 0), 300),
    "plane_wave": (lambda: checks.plane_wave(1, 0.01, 200.0, 256), 120),
    "two_frequency": (lambda: checks.two_frequency((2.5e-4, 5e-4, 1e-3)), 900),
    "stability": (lambda: checks.stability((1e-3, 1e-3), T=500.0), 600),
}


def _report(m: checks.Metric) -> str:
    text = m.line()
    if m.name == "two_frequency":
        text += f"\n  nominal cross weight exponent: {m.details['exponent_nominal']:.3f} (diagnostic)"
    if m.name == "kam_contraction":
        text += f"\n  eps: {m.details['eps']}\n  s limit: {m.details['s_limit_estimate']}"
    return text


@pytest.mark.parametrize("name", list(CRITERIA))
def test_criterion(name, capsys):
    run, budget = CRITERIA[name]
    m = run()
    assert m.name == name
    with capsys.disabled():
        print("\n" + _report(m))
    assert m.passed, m.details
    assert m.seconds < budget


def test_names_cover_the_summary():
    assert tuple(CRITERIA) == checks.ACCEPTANCE_NAMES


if __name__ == "__main__":
    ok = True
    for name, (run, budget) in CRITERIA.items():
        m = run()
        print(_report(m), flush=True)
        ok &= bool(m.passed) and m.seconds < budget
    sys.exit(0 if ok else 1)
