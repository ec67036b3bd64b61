from __future__ import annotations

import numpy as np
import pytest
from scipy import integrate

from sacelab import potential as P
from sacelab.errors import InvalidPotentialError


def test_quartic_and_sextic_are_double_wells():
    for name in ("quartic", "sextic"):
        rep = P.assert_double_well(P.get(name))
        assert rep.passed, str(rep)


def test_asymmetric_polynomial_fails_symmetry_clause():
    # (u^2 - 1)^2 (1 + u/4)^2: zeros at +-1 only, but not even
    c = np.polynomial.polynomial.polymul(
        np.polynomial.polynomial.polymul([-1, 0, 1], [-1, 0, 1]), [1, 0.5, 1 / 16])
    rep = P.assert_double_well(P.from_coeffs(c))
    assert not rep.clauses["c"].passed
    assert "F(" in rep.clauses["c"].witness


def test_negative_potential_fails_positivity_clause():
    rep = P.assert_double_well(P.from_coeffs([-0.1, 0, -1, 0, 0.5]))
    assert not rep.clauses["a"].passed


def test_unknown_name():
    with pytest.raises(InvalidPotentialError):
        P.get("octic")


def test_polynomial_derivatives_match_finite_differences():
    F = P.sextic()
    u = np.linspace(-2, 2, 41)
    h = 1e-5
    assert np.allclose(F.dF(u), (F.F(u + h) - F.F(u - h)) / (2 * h), atol=1e-7)
    assert np.allclose(F.d2F(u), (F.dF(u + h) - F.dF(u - h)) / (2 * h), atol=1e-6)
    assert np.allclose(F.d3F(u), (F.d2F(u + h) - F.d2F(u - h)) / (2 * h), atol=1e-5)


def test_quartic_surface_tension_is_four_thirds():
    assert abs(P.surface_tension(P.quartic()) - 4 / 3) <= 1e-10


def test_sextic_surface_tension_against_scipy_quad():
    spec = P.sextic()
    ref, _ = integrate.quad(lambda u: np.sqrt(2 * spec.F(u)), -1, 1, epsabs=1e-13)
    assert abs(P.surface_tension(spec) - ref) <= 1e-10


def test_g_value_matches_closed_form_and_quadrature():
    q = P.quartic()
    for u in (-1.7, -0.3, 0.0, 0.5, 1.0, 2.2):
        assert abs(P.g_value(q, u) - float(q.closed_form_G(u))) <= 1e-10
        assert abs(P.g_quadrature(q, u) - float(q.closed_form_G(u))) <= 1e-10


def test_cutoff_agrees_inside_and_has_bounded_slope():
    q = P.quartic()
    c = P.cutoff(q, cut_radius=2.0)
    u = np.linspace(-1.9, 1.9, 101)
    assert np.allclose(c.F(u), q.F(u))
    far = np.array([10.0, 100.0, -100.0])
    assert np.all(np.abs(c.dF(far)) <= c.slope_bound() + 1e-9)


def test_scaled_potential():
    q = P.quartic().scaled(3.0)
    assert np.isclose(q.F(0.0), 1.5)
    assert np.isclose(q.dF(0.5), 3 * 2 * 0.5 * (0.25 - 1))


def test_zero_potential_is_identically_zero():
    z = P.zero()
    u = np.linspace(-3, 3, 7)
    assert np.all(z.F(u) == 0) and np.all(z.dF(u) == 0)
