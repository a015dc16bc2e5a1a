import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dnlskam.dnls_model import (build_hamiltonian, build_quartic, cubic_ratio, g_kernel, gradient_G,
                                gradient_G_direct, mass_bracket, nonresonance_scan)
from dnlskam.errors import DomainError
from dnlskam.ft_algebra import ModeLattice, in_class_A, is_compact_form, is_gauge_invariant


def test_kernel_values():
    assert g_kernel(1, 1, 1, 1) == pytest.approx(1 / (2 * math.pi))
    assert g_kernel(1, 2, 1, 1) == 0.0
    assert g_kernel(-3, 5, 1, 1) == pytest.approx(1 / (2 * math.pi))
    with pytest.raises(DomainError):
        g_kernel(0, 1, 1, 0)


def test_quartic_coefficient_by_tuple_enumeration():
    """Every canonical coefficient equals the sum over the ordered tuples
    (i, j, k, l) that collapse onto it."""
    lat = ModeLattice(2, (1, 5))
    G = build_quartic(lat)
    want = {}
    for i, j, k, l in product(lat.modes, repeat=4):
        if i + j != k + l:
            continue
        key = ((0, 0), (0, 0), tuple(sorted((i, j))), tuple(sorted((k, l))))
        want[key] = want.get(key, 0.0) + 0.5 * j / (2 * math.pi)
    want = {k: v for k, v in want.items() if v != 0}
    assert set(G.terms) == set(want)
    for key, v in want.items():
        assert G.coeff(key) == pytest.approx(v, abs=1e-15)
    # |q_1|^2 |q_2|^2 collects (1,2,1,2), (1,2,2,1), (2,1,1,2), (2,1,2,1)
    assert G.coeff(((0, 0), (0, 0), (1, 2), (1, 2))) == pytest.approx(3 / (2 * math.pi))


@pytest.mark.parametrize("pair", [(1, 5), (-3, 1), (5, 9)])
def test_quartic_in_class_a(pair):
    G = build_quartic(ModeLattice(6, pair))
    assert is_compact_form(G)[0] and is_gauge_invariant(G)[0]


def test_quartic_is_angle_and_action_free():
    G = build_quartic(ModeLattice(4, (1, 5)))
    assert all(k == (0, 0) and l == (0, 0) for k, l, _, _ in G.terms)
    assert all(0 not in a + b for _, _, a, b in G.terms)


def _fft_gradient(lattice, q, n_grid=64):
    """(dG/dqbar_l) = -i <|u|^2 u_x, phi_l> evaluated pseudo-spectrally."""
    coeffs = np.zeros(n_grid, dtype=complex)
    for j, v in q.items():
        coeffs[j % n_grid] = v
    k = np.fft.fftfreq(n_grid, 1.0 / n_grid)
    u = np.fft.ifft(coeffs) * n_grid / math.sqrt(2 * math.pi)
    ux = np.fft.ifft(1j * k * coeffs) * n_grid / math.sqrt(2 * math.pi)
    f = np.abs(u) ** 2 * ux
    fhat = np.fft.fft(f) / n_grid * math.sqrt(2 * math.pi)
    return {j: -1j * fhat[j % n_grid] for j in lattice.modes}


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_gradient_matches_fft_oracle(seed):
    rng = np.random.default_rng(seed)
    lat = ModeLattice(20, (1, 5))
    support = rng.choice([j for j in range(-6, 7) if j], 6, replace=False)
    q = {int(j): complex(*rng.normal(size=2)) * 0.3 for j in support}
    # the quartic series is only needed on the support's span
    G = build_quartic(lat, degree_cap=4)
    series = gradient_G(G, q)
    oracle = _fft_gradient(lat, q)
    direct = gradient_G_direct(lat, q)
    for j in lat.modes:
        assert abs(series[j] - oracle[j]) <= 1e-10
        assert abs(direct[j] - oracle[j]) <= 1e-10


@pytest.mark.parametrize("n,A", [(1, 0.1), (-2, 0.3 + 0.2j), (3, 0.05j)])
def test_single_mode_gradient(n, A):
    lat = ModeLattice(4, (1, 5))
    g = gradient_G(build_quartic(lat), {n: A})
    assert g[n] == pytest.approx(n * abs(A) ** 2 * A / (2 * math.pi), abs=1e-15)
    assert all(abs(v) < 1e-15 for j, v in g.items() if j != n)


def test_zero_state_gradient():
    lat = ModeLattice(4, (1, 5))
    assert all(v == 0 for v in gradient_G(build_quartic(lat), {}).values())


def test_mass_is_conserved():
    H = build_hamiltonian(ModeLattice(5, (1, 5)))
    assert mass_bracket(H).max_abs() <= 1e-14


def test_nonresonance_scan_finds_only_trivial_resonances():
    # i^2 + j^2 = k^2 + l^2 with i + j = k + l forces {i, j} = {k, l}
    assert nonresonance_scan(30) == []


def test_cubic_ratio_bounded():
    rng = np.random.default_rng(1)
    lat = ModeLattice(8, (1, 5))
    G = build_quartic(lat)
    ratios = [cubic_ratio(G, rng.normal(size=16) + 1j * rng.normal(size=16), 0.1, 2.0) for _ in range(20)]
    assert max(ratios) < 1.0


def test_hamiltonian_is_real():
    H = build_hamiltonian(ModeLattice(4, (1, 5)))
    assert H.H.is_real() and in_class_A(H.H)
