import pytest

from brinkman_hdiv import invariants as inv


@pytest.mark.parametrize("check", [
    inv.check_commuting_diagram, lambda: inv.check_commuting_diagram("rt"), inv.check_mass_conservation,
    inv.check_skeleton_symmetry, inv.check_coercivity, inv.check_mean_preservation, inv.check_eta_pythagoras,
    inv.check_hybrid_oracle,
])
def test_invariant_holds(check):
    res = check()
    assert res.passed, res.line()


def test_skeleton_is_indefinite():
    # the condensed skeleton is symmetric indefinite for t > 0 (see hybrid module docstring)
    res = inv.check_skeleton_spd()
    assert not res.passed and res.value < 0
    assert "79 negative eigenvalues" in res.detail


def test_result_line_format():
    r = inv.CheckResult("demo", False, 1.5e-3, 1e-6, "detail")
    assert r.line() == "FAIL demo: 1.500e-03 (tol 1.0e-06) detail"
