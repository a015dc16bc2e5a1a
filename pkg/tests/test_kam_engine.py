import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dnlskam.action_frequency import IntegerLead, normal_series, read_frequencies
from dnlskam.checks import aitken_limit, random_class_a
from dnlskam.errors import AdmissionError, ContractError, ResonanceError
from dnlskam.ft_algebra import MIXED, FTSeries, ModeLattice, in_class_A, make_key, poisson_bracket
from dnlskam.kam_engine import (KamSchedule, KamState, build_dnls_problem, divisor, iterate, kam_step,
                                measure_norm, negligible_filter, solve_homological, symplectic_defect,
                                truncate_R)
from dnlskam.resonance_measure import DiophantineParams

LAT = ModeLattice(4, (1, 5))
PARAMS = DiophantineParams(1e-8, K_max=8, J_max=8)


def series(terms, lattice=LAT):
    return FTSeries(lattice, terms, 6, 8, prune=0.0)


def simple_N(omega=(1.0, math.sqrt(2)), lattice=LAT):
    return normal_series(lattice, omega, {j: j * j + 0.1 * j for j in lattice.normal_modes})


@pytest.fixture(scope="module")
def dnls():
    return build_dnls_problem(j_max=6)


def test_truncation_examples():
    P = series({make_key(l=(2, 0)): 1.0, make_key(k=(1, 0), alpha=(2,), beta=(3,)): 2.0,
                make_key(l=(1, 0)): 3.0, make_key(alpha=(2,), beta=(2,)): 4.0})
    t = truncate_R(P)
    assert make_key(l=(2, 0)) in t.tail.terms and make_key(l=(2, 0)) not in t.R.terms
    assert make_key(k=(1, 0), alpha=(2,), beta=(3,)) in t.R.terms
    assert set(t.mean.terms) == {make_key(l=(1, 0)), make_key(alpha=(2,), beta=(2,))}
    assert (t.R + t.tail).max_diff(P) == 0.0


def test_mean_of_random_class_a(rng):
    for _ in range(20):
        P = random_class_a(LAT, rng, n_terms=20, max_degree=3, degree_cap=6)
        for k, l, a, b in truncate_R(P).mean.terms:
            assert k == (0, 0)
            assert (sum(l) == 1 and not a and not b) or (l == (0, 0) and len(a) == 1 and a == b)


def test_single_angle_divisor():
    N = normal_series(LAT, (1.0, math.sqrt(2)), {})
    R = series({make_key(k=(1, 0)): 1.0})
    sol = solve_homological(N, R, PARAMS)
    assert sol.F.terms == {make_key(k=(1, 0)): pytest.approx(1 / 1j)}
    assert len(sol.N_hat) == 0 and sol.residual <= 1e-15


def test_diagonal_term_goes_to_normal_form():
    N = simple_N()
    R = series({make_key(alpha=(3,), beta=(3,)): 0.5, make_key(l=(0, 1)): 0.25})
    sol = solve_homological(N, R, PARAMS)
    assert len(sol.F) == 0
    assert sol.N_hat.max_diff(R) == 0.0


def test_resonant_divisor_raises():
    N = normal_series(LAT, (1.0, 1.0), {})
    R = series({make_key(k=(1, -1)): 1.0})
    with pytest.raises(ResonanceError):
        solve_homological(N, R, PARAMS)


def test_contract_errors():
    N = simple_N()
    with pytest.raises(ContractError):
        solve_homological(N, series({make_key(l=(2, 0)): 1.0}), PARAMS)
    # exp(i theta_1) z_3 zbar_{-3}: |3| > (1/2) 5 |k|
    with pytest.raises(ContractError):
        solve_homological(N, series({make_key(k=(1, 0), alpha=(3,), beta=(-3,)): 1.0}), PARAMS)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([1, -1]))
def test_homological_residual_on_random_input(seed, sign):
    rng = np.random.default_rng(seed)
    omega = (1.0 + rng.uniform(0, 0.3), 25.0 + rng.uniform(0, 0.3))
    Omega = {j: j * j + rng.uniform(0, 0.3) for j in LAT.normal_modes}
    N = normal_series(LAT, omega, Omega)
    R = truncate_R(random_class_a(LAT, rng, n_terms=15, max_degree=2, degree_cap=6)).R
    try:
        sol = solve_homological(N, R, DiophantineParams(1e-12, K_max=8, J_max=8), sign)
    except (ResonanceError, ContractError):
        return
    # independent evaluation of {F, N} + N_hat - R
    lhs = poisson_bracket(sol.F, N, MIXED, sign) + sol.N_hat
    R0 = R.filter(lambda key: not (key[0] == (0, 0) and sum(key[1]) == 0 and not key[2] and not key[3]))
    assert (lhs - R0).max_abs() <= 1e-10
    assert not any(k == (0, 0) and (sum(l) == 1 and not a and not b or (l == (0, 0) and a == b and len(a) == 1))
                   for k, l, a, b in sol.F.terms)


def test_lead_and_folded_frequencies_agree(rng):
    """Frequencies split into an integer lead plus corrections give the same F."""
    scale = 1e4
    lead = IntegerLead.squares((1, 5), LAT.normal_modes, scale)
    corr = normal_series(LAT, (0.3, 0.7), {j: 0.05 * j for j in LAT.normal_modes})
    full = corr + lead.series(LAT)
    R = truncate_R(random_class_a(LAT, rng, n_terms=15, max_degree=2, degree_cap=6)).R
    a = solve_homological(corr, R, PARAMS, -1, lead=lead)
    b = solve_homological(full, R, PARAMS, -1)
    assert a.F.max_diff(b.F) <= 1e-12 * max(1.0, b.F.max_abs())
    for key in R.terms:
        assert divisor(key, (0.3, 0.7), {j: 0.05 * j for j in LAT.normal_modes}, -1, lead) == pytest.approx(
            divisor(key, *_totals(lead, corr), -1), rel=1e-12, abs=1e-9)


def _totals(lead, corr):
    w, W = read_frequencies(corr)
    return lead.add_to(w, W)


def test_step_with_normal_form_perturbation():
    N = simple_N()
    mean = series({make_key(l=(1, 0)): 1e-3, make_key(alpha=(2,), beta=(2,)): 2e-3})
    tail = series({make_key(l=(2, 0)): 1e-4})
    new = kam_step(KamState(N, mean + tail), PARAMS)
    assert len(new.info["F"]) == 0
    assert new.P.max_diff(tail) == 0.0
    assert new.N.max_diff(N + mean) == 0.0
    assert new.info["omega_hat"] == [1e-3, 0.0]


def test_smallness_gate():
    with pytest.raises(AdmissionError):
        kam_step(KamState(simple_N(), series({})), PARAMS, gate=(1.0, 0.5))


def test_dnls_step_structure_and_lead_route(dnls):
    state = dnls.state
    eps = measure_norm(state.P, 32, 0.1)
    params = DiophantineParams(eps ** (1 / 3), K_max=8, J_max=8)
    filt = negligible_filter(0.1, 1e-14 * eps)
    new = kam_step(state, params, term_filter=filt)
    assert new.check_structure() == [] and in_class_A(new.P)
    assert new.info["residual"] <= 1e-10
    folded = state.N + state.lead.series(state.N.lattice, state.N.degree_cap, state.N.fourier_cap)
    alt = kam_step(KamState(folded, state.P, 0, -1), params, term_filter=filt)
    assert new.P.max_diff(alt.P) <= 1e-12 * new.P.max_abs()
    # measured contraction and the frequency update bound
    sched = KamSchedule(32, 0.1)
    eps1 = measure_norm(new.P, sched.s(1), sched.eta(eps, 0) * 0.1)
    assert eps1 < eps
    update = sum(abs(v) for v in new.info["omega_hat"]) + max(
        [abs(v) / abs(j) for j, v in new.info["Omega_hat"].items()], default=0.0)
    assert update <= eps


def test_zero_steps_leave_state(dnls):
    run = iterate(dnls.state, DiophantineParams(1e-4), 0, KamSchedule(32, 0.1))
    assert run.states == [dnls.state] and len(run.records) == 1
    assert run.states[0].P is dnls.state.P


def test_two_step_iteration(dnls):
    run = iterate(dnls.state, DiophantineParams(1e-4, K_max=20, J_max=60), 2, KamSchedule(32, 0.1))
    rep = run.report()
    assert run.excluded_at is None and rep["decreasing"] and len(rep["eps"]) == 3
    assert all(r.residual <= 1e-10 for r in run.records[:-1])
    assert all(r.spectral_floor >= run.schedule.m(r.nu) * (1 - 1e-12) for r in run.records[:-1])
    assert all(s.check_structure() == [] for s in run.states)
    assert [r.s for r in run.records] == [32.0, 24.0, 20.0]
    assert all(b < a for a, b in zip(rep["r"], rep["r"][1:]))


def test_symplectic_defect_of_truncated_flow():
    rng = np.random.default_rng(0)
    F = random_class_a(LAT, rng, n_terms=6, max_degree=3, degree_cap=6)
    F = F + F.conj()
    d3 = symplectic_defect(F * 1e-3, -1, modes=[2, 3])
    d2 = symplectic_defect(F * 1e-2, -1, modes=[2, 3])
    assert d3 <= 1e-9
    # the defect of a third-order series is of fourth order in F
    assert d2 / d3 > 1e3


def test_schedule_formulas():
    s = KamSchedule(32.0, 0.1, C=2.0)
    for nu in range(6):
        assert s.s(nu + 1) == pytest.approx(s.s(nu) - 2 * s.sigma(nu))
        assert s.M(nu + 1) > s.M(nu) and s.m(nu + 1) < s.m(nu)
    assert aitken_limit([s.s(n) for n in range(3, 6)]) == pytest.approx(16.0)
    eps = 1e-6
    nxt = s.next_eps(eps, 1)
    assert nxt == pytest.approx(2.0 * (eps ** (1 / 3) * s.sigma(1) ** 13) ** (-1 / 3) * eps ** (4 / 3))
    assert s.normalized_ratio(eps, nxt, 1) == pytest.approx(2.0)
    assert s.eta(eps, 0) ** 3 == pytest.approx(eps / (eps ** (1 / 3) * 4.0 ** 13))
    assert s.lam(eps, 0) == pytest.approx(eps ** (1 / 3))
    assert s.admission(1.0) and not KamSchedule(32.0, 0.1, C=1.0, m0=1.0).admission(1e-9)
