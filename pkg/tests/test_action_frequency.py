import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dnlskam.action_frequency import (CROSS_KERNEL, CROSS_NOMINAL, FrequencyMap, IntegerLead, frequencies,
                                      frequency_table_csv, mass_correction, mass_reduction, normal_series,
                                      read_frequencies, rescale, split_normal_part, to_action_angle)
from dnlskam.dnls_model import build_hamiltonian, build_quartic
from dnlskam.errors import DomainError
from dnlskam.ft_algebra import FTSeries, LATTICE_QQBAR, MIXED, ModeLattice, in_class_A, poisson_bracket
from dnlskam.normal_form import normal_form_4

LAT = ModeLattice(4, (1, 5))


def mono(a=(), b=(), k=(0, 0), l=(0, 0)):
    return (k, l, tuple(sorted(a)), tuple(sorted(b)))


def test_polar_substitution_of_an_action():
    F = FTSeries(LAT, {mono((1,), (1,)): 1.0})
    out = to_action_angle(F, (0.3, 0.2))
    assert out.terms == {mono(l=(1, 0)): 1.0, mono(): pytest.approx(0.3)}


def test_polar_substitution_half_power():
    # q_1 q_2 qbar_{-1} qbar_4: sqrt(I_1 + xi_1) e^{i theta_1} z_2 zbar_{-1} zbar_4
    F = FTSeries(LAT, {mono((1, 2), (-1, 4)): 2.0}, degree_cap=8)
    xi1 = 0.3
    out = to_action_angle(F, (xi1, 0.2), taylor_order=3)
    want = [math.sqrt(xi1), 0.5 / math.sqrt(xi1), -0.125 * xi1 ** -1.5]
    for t, c in enumerate(want):
        key = ((1, 0), (t, 0), (2,), (-1, 4))
        assert out.coeff(key) == pytest.approx(2 * c)
    # the I^3 term has degree 9 and is counted as overflow
    assert len(out) == 3 and out.overflow == 1
    assert in_class_A(F) and in_class_A(out)


def test_polar_substitution_errors():
    F = FTSeries(LAT, {mono((1,), (1,)): 1.0})
    with pytest.raises(DomainError):
        to_action_angle(F, (0.0, 0.2))
    with pytest.raises(DomainError):
        to_action_angle(F, (0.1, 0.2), max_action=0.05)
    with pytest.raises(DomainError):
        to_action_angle(FTSeries(LAT, {mono(l=(1, 0)): 1.0}), (0.1, 0.2))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_substitution_commutes_with_bracket(seed, xi1, xi2):
    """The polar substitution is symplectic: q-brackets become mixed brackets
    with the negative angle orientation."""
    rng = np.random.default_rng(seed)
    G = build_quartic(LAT, degree_cap=8)
    F = FTSeries(LAT, {k: complex(*rng.normal(size=2)) for k in G.terms}, 8, 8)
    lhs = to_action_angle(poisson_bracket(F, G, LATTICE_QQBAR), (xi1, xi2))
    rhs = poisson_bracket(to_action_angle(F, (xi1, xi2)), to_action_angle(G, (xi1, xi2)), MIXED, -1)
    assert lhs.max_diff(rhs) <= 1e-11 * max(1.0, lhs.max_abs())


def test_substitution_preserves_class_a(rng):
    G = build_quartic(ModeLattice(6, (1, 5)), degree_cap=8)
    keys = list(G.terms)
    for _ in range(100):
        pick = rng.choice(len(keys), 5, replace=False)
        F = FTSeries(G.lattice, {keys[i]: complex(*rng.normal(size=2)) for i in pick}, 8, 8)
        assert in_class_A(to_action_angle(F, (0.4, 0.1)))


def test_rescale_exponents():
    eps = 0.1
    H = FTSeries(LAT, {mono((2,), (2,), l=(1, 0)): 1.0, mono(): 7.0, mono(l=(1, 0)): 3.0})
    out = rescale(H, eps)
    assert out.coeff(mono((2,), (2,), l=(1, 0))) == pytest.approx(eps ** 2)
    assert out.coeff(mono(l=(1, 0))) == pytest.approx(3.0 * eps ** -4)
    assert mono() not in out.terms


def test_rescaled_frequencies_match_star_map():
    eps = 0.1
    xi = np.array([0.3, 0.2])
    lat = ModeLattice(8, (1, 5))
    res = normal_form_4(build_hamiltonian(lat))
    polar = to_action_angle(res.Lambda + res.G_bar, eps ** 4 * xi)
    N, _ = split_normal_part(rescale(polar, eps))
    omega, Omega = read_frequencies(N)
    star = FrequencyMap(1, 5, epsilon=eps, cross=CROSS_KERNEL)
    assert omega == pytest.approx(star.omega_star(xi), rel=1e-13)
    for j in (2, -3, 7):
        assert Omega[j] == pytest.approx(float(star.Omega_star(xi, j)), rel=1e-13)


def test_frequency_intercepts():
    fm = FrequencyMap(1, 5)
    omega, Omega = frequencies(fm, (0.0, 0.0))
    assert omega.tolist() == [1.0, 25.0]
    assert all(v == j * j for j, v in Omega.items())


def test_frequency_plugged_value():
    omega = FrequencyMap(1, 5).omega((4 * math.pi, 0.0))
    assert omega[0] == pytest.approx(-3.0)


@pytest.mark.parametrize("cross", [CROSS_NOMINAL, CROSS_KERNEL])
def test_maps_are_affine(cross):
    fm = FrequencyMap(-3, 1, c=0.7, epsilon=0.5, cross=cross)
    a, b = np.array([0.2, 0.9]), np.array([0.4, 0.1])
    for f in (fm.omega, fm.omega_star, lambda x: fm.Omega(x, 6), lambda x: fm.Omega_star(x, -2)):
        assert np.allclose(f(a + b) - f(a) - f(b) + f(np.zeros(2)), 0, atol=1e-12)
    h = 1e-3
    fd = np.column_stack([(fm.omega(a + h * e) - fm.omega(a)) / h for e in np.eye(2)])
    assert np.allclose(fd, fm.jacobian(), atol=1e-9)


@pytest.mark.parametrize("cross", [CROSS_NOMINAL, CROSS_KERNEL])
def test_reduced_maps_agree_on_the_mass_shell(cross):
    xi = np.array([0.35, 0.15])
    red = FrequencyMap(1, 5, c=float(xi.sum()), epsilon=0.3, cross=cross)
    assert np.allclose(red.omega(xi), red.omega_star(xi), rtol=1e-14)
    for j in (-4, 2, 9):
        assert red.Omega(xi, j) == pytest.approx(float(red.Omega_star(xi, j)), rel=1e-14)


def test_frequency_map_validation():
    with pytest.raises(DomainError, match="odd"):
        FrequencyMap(2, 6)
    with pytest.raises(DomainError):
        FrequencyMap(1, 5, epsilon=0.0)
    with pytest.raises(DomainError):
        FrequencyMap(1, 5, c=-1.0)


def test_mass_reduction():
    c, res = mass_reduction((0.3, 0.2))
    assert c == pytest.approx(0.5) and res == 0.0
    rng = np.random.default_rng(5)
    z = rng.normal(size=6) * 1e-2 + 1j * rng.normal(size=6) * 1e-2
    c, res = mass_reduction((0.3, 0.2), I=(1e-3, 2e-3), z=z, epsilon=0.1)
    assert res <= 1e-12
    assert c == pytest.approx(0.5 + 0.01 * (3e-3 + np.sum(np.abs(z) ** 2)))
    with pytest.raises(DomainError):
        mass_reduction((-0.3, 0.2))


def test_mass_correction_coefficients():
    eps = 0.2
    M = mass_correction(LAT, eps)
    base = -eps ** 2 * 6 / (2 * math.pi)
    assert M.coeff(mono(l=(2, 0))) == pytest.approx(base)
    assert M.coeff(mono(l=(1, 1))) == pytest.approx(2 * base)
    assert M.coeff(mono((3,), (3,), l=(0, 1))) == pytest.approx(2 * base)
    assert M.coeff(mono((2, 3), (2, 3))) == pytest.approx(2 * base)
    assert M.coeff(mono((2, 2), (2, 2))) == pytest.approx(base)


def test_normal_series_round_trip():
    Omega = {j: 0.1 * j for j in LAT.normal_modes}
    N = normal_series(LAT, (1.5, 2.5), Omega)
    omega, back = read_frequencies(N)
    assert omega.tolist() == [1.5, 2.5] and back == Omega
    extra = FTSeries(LAT, {mono((2,), (3,)): 1.0, mono(k=(1, -1), l=(1, 0)): 2.0})
    n, p = split_normal_part(N + extra)
    assert n.max_diff(N) == 0.0 and p.max_diff(extra) == 0.0


def test_frequency_table_csv():
    text = frequency_table_csv(FrequencyMap(1, 5), [(0.0, 0.0), (0.1, 0.2)], [2, 3])
    rows = text.strip().split("\n")
    assert rows[0] == "xi1,xi2,omega1,omega2,Omega_2,Omega_3"
    assert rows[1].split(",")[2:] == ["1.0", "25.0", "4.0", "9.0"]


def test_integer_lead_cancels_exactly():
    scale = 1e12
    lead = IntegerLead.squares((1, 5), range(-8, 9), scale)
    key = ((-2, 2), (0, 0), (-1,), (7,))
    assert lead.integer_divisor(key, angle_sign=-1) == 0
    assert lead.divisor(key, angle_sign=-1) == 0.0
    assert lead.integer_divisor(key, angle_sign=1) == 96
    w, W = lead.add_to((0.5, 0.25), {3: 0.125})
    assert w.tolist() == [scale + 0.5, 25 * scale + 0.25] and W == {3: 9 * scale + 0.125}


def test_integer_lead_bracket_matches_series_bracket(rng):
    lead = IntegerLead.squares((1, 5), LAT.normal_modes, 7.0)
    G = build_quartic(LAT, degree_cap=8)
    F = to_action_angle(FTSeries(LAT, {k: complex(*rng.normal(size=2)) for k in G.terms}, 8, 8), (0.3, 0.2))
    for sign in (1, -1):
        a = lead.bracket(F, sign)
        b = poisson_bracket(F, lead.series(LAT, 8, 8), MIXED, sign)
        assert a.max_diff(b) <= 1e-12 * b.max_abs()
