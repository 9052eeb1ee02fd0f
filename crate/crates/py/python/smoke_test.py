"""Smoke test of the sivstark extension: one call per binding.

Run with ``python -m pytest crates/py/python`` or directly as a script.
"""

import math

import pytest
import sivstark


def test_stark_law():
    assert sivstark.transition_frequency(406600.0, 15.0, 3.0, 3.0) == 406600.0
    shift = 406600.0 - sivstark.transition_frequency(406600.0, 15.0, 0.0, 45.0)
    assert math.isclose(shift, 30.375, rel_tol=1e-9)
    with pytest.raises(ValueError):
        sivstark.transition_frequency(406600.0, -1.0, 0.0, 1.0)


def test_local_field_and_ladder():
    assert sivstark.lorentz_local_field(1.0, 1.0) == 1.0
    assert math.isclose(sivstark.lorentz_local_field(3.0, 5.7), 7.7)
    ladder = sivstark.transition_ladder(406.7, 76.0, 273.0)
    assert [ladder["A"] - ladder["B"], ladder["B"] - ladder["C"], ladder["C"] - ladder["D"]] == [76.0, 197.0, 76.0]


def test_field_report():
    r = sivstark.field_report(resolution=96, epsilon=1.0)
    assert r["E_local_MVpm"] == r["E_ext_MVpm"] > 0.0
    assert r["kappa_MVpm_per_V"] > 0.0


def test_simulate_fit_round_trip():
    voltages = [10.0 * i for i in range(11)]
    series = sivstark.simulate_series(406600.0, 15.0, 3.0, 0.21, voltages, seed=3, noiseless=True)
    assert [s["voltage"] for s in series] == voltages
    fits = [sivstark.fit_spectrum(s["detunings"], s["counts"], s["integration_time"], s["voltage"]) for s in series]
    fields = [0.21 * f["voltage_V"] for f in fits]
    centers = [f["center_GHz"] for f in fits]
    sigmas = [f["center_sigma_GHz"] for f in fits]
    stark = sivstark.fit_stark(fields, centers, sigmas)
    assert math.isclose(stark["alpha_MHz_per_MVpm2"], 15.0, rel_tol=1e-6)
    assert math.isclose(stark["e0_MVpm"], 3.0, rel_tol=1e-6)
    lin = sivstark.linear_term_test(fields, centers, sigmas)
    assert abs(lin["significance"]) < 3.0


def test_match():
    plan = sivstark.match_ensemble(n=1)
    assert plan["matched_fraction"] == 1.0
    plan = sivstark.match_ensemble(objective="min-max-residual")
    assert len(plan["assignments"]) == 9
    with pytest.raises(ValueError):
        sivstark.match_ensemble(objective="best")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
