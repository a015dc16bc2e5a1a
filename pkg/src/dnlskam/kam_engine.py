"""One KAM step and the iteration driver.

A state is ``H = N + P`` with ``N = <omega, I> + sum Omega_j z_j zbar_j``.
Each step truncates ``P`` to ``R``, solves ``{F, N} + N_hat = R`` term by
term, moves ``N_hat`` into ``N`` and pushes ``N + P`` through the time-one
map of ``F`` (a truncated Lie series).  Norms are measured on shrinking
domains ``D(s_nu, r_nu)`` that follow the geometric schedule below.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .action_frequency import IntegerLead, read_frequencies, rescale, split_normal_part, to_action_angle
from .dnls_model import build_hamiltonian
from .errors import AdmissionError, ContractError, ResonanceError
from .ft_algebra import (MIXED, FTSeries, ModeLattice, SampleGrid, WeightedNorms, in_class_A,
                         key_degree, make_key, poisson_bracket, series_vector_field_norm)
from .normal_form import lie_transform, normal_form_4
from .resonance_measure import DiophantineParams, family_floor, point_violations, spectral_floor

RESIDUAL_TOL = 1e-10


# truncation -----------------------------------------------------------------

def _is_mean_term(key) -> bool:
    k, l, a, b = key
    if k != (0, 0):
        return False
    if sum(l) == 1 and not a and not b:
        return True
    return l == (0, 0) and len(a) == 1 and a == b


@dataclass
class Truncation:
    R: FTSeries
    tail: FTSeries
    mean: FTSeries

    def __iter__(self):
        return iter((self.R, self.tail))


def truncate_R(P: FTSeries) -> Truncation:
    """Split ``P`` into ``R`` (``2|l| + |alpha| + |beta| <= 2``) and the tail.

    ``mean`` is ``[R]``: the theta-free I-linear and diagonal ``z_j zbar_j`` terms.
    """
    R = P.filter(lambda key: key_degree(key) <= 2)
    tail = P.filter(lambda key: key_degree(key) > 2)
    return Truncation(R, tail, R.filter(_is_mean_term))


# homological equation -------------------------------------------------------

@dataclass
class HomologicalSolution:
    F: FTSeries
    N_hat: FTSeries
    margins: list
    residual: float

    def __iter__(self):
        return iter((self.F, self.N_hat, self.margins))


def divisor(key, omega, Omega: dict, angle_sign: int = 1, lead: IntegerLead | None = None) -> float:
    """``d`` with ``{F, N} = i d F`` for the monomial ``key``.

    With ``lead`` the frequencies are corrections and the exact lead
    divisor is added.
    """
    k, _, a, b = key
    om = Omega.__getitem__ if lead is None else (lambda j: Omega.get(j, 0.0))
    d = angle_sign * (k[0] * omega[0] + k[1] * omega[1])
    d -= sum(om(j) for j in a)
    d += sum(om(j) for j in b)
    if lead is not None:
        d += lead.divisor(key, angle_sign)
    return d


def solve_homological(N: FTSeries, R: FTSeries, params: DiophantineParams, angle_sign: int = 1,
                      check: bool = True, lead: IntegerLead | None = None) -> HomologicalSolution:
    """Coefficientwise solution of ``{F, N} + N_hat = R`` with ``[F] = 0``.

    With ``lead`` the normal form is ``N + lead`` and ``N`` holds only the
    corrections.

    ``margins`` lists ``(tag, key, |divisor|, floor)`` for every solved term.
    Raises :class:`ResonanceError` when a divisor is below its floor.
    """
    omega, Omega = read_frequencies(N)
    pair = N.lattice.pair
    fterms, nterms, margins = {}, {}, []
    for key, c in R.terms.items():
        k, l, a, b = key
        if k == (0, 0) and key_degree(key) == 0:
            continue
        if _is_mean_term(key):
            nterms[key] = c
            continue
        if k == (0, 0) and not a and not b:
            raise ContractError(f"theta-free action term {key} outside the truncation")
        if len(a) == 1 and len(b) == 1 and a[0] == -b[0] and pair:
            if abs(a[0]) > 0.5 * max(abs(pair[0]), abs(pair[1])) * (abs(k[0]) + abs(k[1])):
                raise ContractError(f"term {key} violates the special form")
        d = divisor(key, omega, Omega, angle_sign, lead)
        tag, floor = family_floor(params.gamma, params.tau, params.delta, k, a, b)
        margins.append((tag, key, abs(d), floor))
        if abs(d) < floor or d == 0:
            raise ResonanceError(k, (a, b), d, floor)
        fterms[key] = c / (1j * d)
    F = FTSeries(R.lattice, fterms, R.degree_cap, R.fourier_cap, prune=0.0)
    N_hat = FTSeries(R.lattice, nterms, R.degree_cap, R.fourier_cap, prune=0.0)
    residual = 0.0
    if check:
        lhs = poisson_bracket(F, N, MIXED, angle_sign) + N_hat
        if lead is not None:
            lhs = lhs + lead.bracket(F, angle_sign)
        R0 = R.filter(lambda key: not (key[0] == (0, 0) and key_degree(key) == 0))
        residual = (lhs - R0).max_abs()
    return HomologicalSolution(F, N_hat, margins, residual)


# states and schedule --------------------------------------------------------

@dataclass
class KamState:
    N: FTSeries
    P: FTSeries
    nu: int = 0
    angle_sign: int = 1
    lead: IntegerLead | None = None
    log: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def frequencies(self) -> tuple[np.ndarray, dict]:
        """Total frequencies (lead added in floating point)."""
        omega, Omega = read_frequencies(self.N)
        if self.lead is None:
            return omega, Omega
        return self.lead.add_to(omega, Omega)

    def frequency_corrections(self) -> tuple[np.ndarray, dict]:
        """Frequencies without the lead; exact when a lead is stored."""
        return read_frequencies(self.N)

    def check_structure(self) -> list:
        bad = [key for key in self.N.terms if not _is_mean_term(key)]
        if not in_class_A(self.P):
            bad.append("P outside class A")
        return bad


@dataclass
class KamSchedule:
    """Geometric schedule for the domains and the perturbation size.

    ``sigma_nu = s0/8 * 2^-nu``, ``s_{nu+1} = s_nu - 2 sigma_nu``,
    ``eta_nu^3 = eps_nu / (gamma_nu sigma_nu^(2 tau + 3))``,
    ``r_{nu+1} = eta_nu r_nu``, ``gamma_nu = eps_nu^(1/3)``,
    ``M_nu = M0 (2 - 2^-nu)``, ``m_nu = m0 (1 + 2^-nu) / 2`` and
    ``eps_{nu+1} = C (gamma_nu sigma_nu^(2 tau + 3))^(-1/3) eps_nu^(4/3)``.
    """

    s0: float
    r0: float
    tau: float = 5.0
    C: float | None = None
    m0: float = 1.0
    M0: float = 1.0

    def sigma(self, nu: int) -> float:
        return self.s0 / 8.0 * 2.0 ** -nu

    def s(self, nu: int) -> float:
        return self.s0 - 0.5 * self.s0 * (1.0 - 2.0 ** -nu)

    def gamma(self, eps: float) -> float:
        return eps ** (1.0 / 3.0)

    def eta(self, eps: float, nu: int) -> float:
        return (eps / (self.gamma(eps) * self.sigma(nu) ** (2 * self.tau + 3))) ** (1.0 / 3.0)

    def M(self, nu: int) -> float:
        return self.M0 * (2.0 - 2.0 ** -nu)

    def m(self, nu: int) -> float:
        return 0.5 * self.m0 * (1.0 + 2.0 ** -nu)

    def lam(self, eps: float, nu: int) -> float:
        return self.gamma(eps) / self.M(nu)

    def contraction_factor(self, eps: float, nu: int) -> float:
        """``(gamma_nu sigma_nu^(2 tau + 3))^(-1/3)``."""
        return (self.gamma(eps) * self.sigma(nu) ** (2 * self.tau + 3)) ** (-1.0 / 3.0)

    def next_eps(self, eps: float, nu: int) -> float:
        return self._C * self.contraction_factor(eps, nu) * eps ** (4.0 / 3.0)

    def normalized_ratio(self, eps: float, eps_next: float, nu: int) -> float:
        """``eps_{nu+1} / ((gamma sigma^(2 tau + 3))^(-1/3) eps_nu^(4/3))``: the measured ``C``."""
        return eps_next / (self.contraction_factor(eps, nu) * eps ** (4.0 / 3.0))

    def gate(self, eps: float, nu: int) -> float:
        """Right-hand side of the smallness gate ``||X_P|| <= gamma sigma^(2 tau + 4) eta^2 / C``."""
        return self.gamma(eps) * self.sigma(nu) ** (2 * self.tau + 4) * self.eta(eps, nu) ** 2 / self._C

    def admission(self, eps0: float) -> list:
        """Violated admission inequalities (empty when admitted)."""
        out = []
        bound = self.gamma(eps0) * self.sigma(0) ** (2 * self.tau + 6) / self._C ** 3
        if eps0 > bound:
            out.append(f"eps0 = {eps0:.3e} > gamma0 sigma0^(2 tau + 6) / C^3 = {bound:.3e}")
        if self.gamma(eps0) > self.m0 / 2:
            out.append(f"gamma0 = {self.gamma(eps0):.3e} > m0 / 2 = {self.m0 / 2:.3e}")
        return out

    @property
    def _C(self) -> float:
        return 1.0 if self.C is None else self.C


def measure_norm(P: FTSeries, s: float, r: float, a: float = 0.1, p: float = 2.0,
                 grid: SampleGrid | None = None) -> float:
    """Sampled ``||X_P||`` on ``D(s, r)`` (see :class:`SampleGrid`)."""
    return series_vector_field_norm(P, WeightedNorms(a=a, p=p, s=s, r=r), grid or SampleGrid())


def _drop_constant(H: FTSeries) -> FTSeries:
    return H.filter(lambda key: not (key[0] == (0, 0) and key_degree(key) == 0))


def negligible_filter(radius: float, floor: float):
    """Drop terms of weighted degree ``d >= 3`` with ``|c| radius^(d-2) < floor``.

    On ``D(s, r)`` with ``r <= radius`` such a term changes the sampled
    vector-field norm by less than ``floor`` times a mode weight; terms of
    degree at most two are always kept since their weight grows as ``r``
    shrinks.
    """
    def keep(S: FTSeries) -> FTSeries:
        out = {}
        for key, c in S.terms.items():
            d = key_degree(key)
            if d <= 2 or abs(c) * radius ** (d - 2) >= floor:
                out[key] = c
        return FTSeries(S.lattice, out, S.degree_cap, S.fourier_cap, S.overflow, S.prune)
    return keep


def _phi1(B: FTSeries, F: FTSeries, order_cap: int, angle_sign: int, term_filter=None) -> FTSeries:
    """``sum_{m=1..order_cap} ad_F^(m-1)(B) / m!``."""
    term = term_filter(B) if term_filter is not None else B
    total = term
    for m in range(2, order_cap + 1):
        if len(term) == 0:
            break
        term = poisson_bracket(term, F, MIXED, angle_sign) / m
        if term_filter is not None:
            term = term_filter(term)
        total = total + term
    return total


def kam_step(state: KamState, params: DiophantineParams, order_cap: int = 3,
             gate: tuple[float, float] | None = None, term_filter=None) -> KamState:
    """One step ``(N, P) -> (N + N_hat, P_+)``.

    ``gate = (||X_P||, bound)`` enforces the smallness hypothesis before the
    step.  ``term_filter`` is passed to the Lie series (see
    :func:`negligible_filter`).  The returned state carries ``info`` with the
    solution residual, the frequency update and ``F``.
    """
    if gate is not None and gate[0] > gate[1]:
        raise AdmissionError(f"smallness gate fails: ||X_P|| = {gate[0]:.3e} > {gate[1]:.3e}")
    trunc = truncate_R(state.P)
    sol = solve_homological(state.N, trunc.R, params, state.angle_sign, lead=state.lead)
    if sol.residual > RESIDUAL_TOL:
        raise ContractError(f"homological residual {sol.residual:.3e} exceeds {RESIDUAL_TOL}")
    N_plus = state.N + sol.N_hat
    # (N + P) o Phi = N + Lie(P) + sum_m ad_F^(m-1)({N, F}) / m!, with the
    # lead part of {N, F} taken termwise so that it cancels exactly
    B = poisson_bracket(state.N, sol.F, MIXED, state.angle_sign)
    if state.lead is not None:
        B = B - state.lead.bracket(sol.F, state.angle_sign)
    H_plus = lie_transform(state.P, sol.F, order_cap, MIXED, state.angle_sign, term_filter=term_filter)
    H_plus = H_plus + _phi1(B, sol.F, order_cap, state.angle_sign, term_filter)
    P_plus = _drop_constant(H_plus - sol.N_hat)
    w_hat, O_hat = read_frequencies(sol.N_hat)
    info = {
        "residual": sol.residual,
        "omega_hat": [float(v) for v in w_hat],
        "Omega_hat": {int(j): float(v) for j, v in O_hat.items()},
        "F_terms": len(sol.F),
        "overflow": H_plus.overflow,
        "min_margin": min((m[2] / m[3] for m in sol.margins if m[3] > 0), default=math.inf),
        "F": sol.F,
    }
    return KamState(N_plus, P_plus, state.nu + 1, state.angle_sign, state.lead, list(state.log), info)


# iteration ------------------------------------------------------------------

@dataclass
class StepRecord:
    nu: int
    s: float
    r: float
    sigma: float
    gamma: float
    eps_measured: float
    eps_schedule: float
    omega: list
    excluded: bool
    ratio: float | None = None
    gate_bound: float | None = None
    residual: float | None = None
    spectral_floor: float | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


@dataclass
class KamRun:
    states: list
    records: list
    schedule: KamSchedule
    excluded_at: int | None = None
    reason: str = ""

    @property
    def eps(self) -> list:
        return [r.eps_measured for r in self.records]

    def ratios(self) -> list:
        return [r.ratio for r in self.records if r.ratio is not None]

    def report(self) -> dict:
        eps = self.eps
        ratios = self.ratios()
        decreasing = all(b < a for a, b in zip(eps, eps[1:]))
        spread = max(ratios) / min(ratios) if ratios and min(ratios) > 0 else math.inf
        raw = [b / a ** (4.0 / 3.0) for a, b in zip(eps, eps[1:]) if a > 0]
        s_vals = [r.s for r in self.records]
        return {
            "eps": eps,
            "decreasing": decreasing,
            "normalized_ratios": ratios,
            "ratio_spread": spread,
            "raw_ratios": raw,
            "s": s_vals,
            "s_limit_gap": abs(s_vals[-1] - self.schedule.s0 / 2) if s_vals else None,
            "r": [r.r for r in self.records],
            "omega_final": self.records[-1].omega if self.records else None,
            "excluded_at": self.excluded_at,
            "reason": self.reason,
            "C": self.schedule.C,
        }


def _omega_out(state: KamState) -> list:
    w, _ = state.frequency_corrections()
    return [float(v) for v in w]


def iterate(state0: KamState, params: DiophantineParams, nu_max: int, schedule: KamSchedule,
            order_cap: int = 3, a: float = 0.1, p: float = 2.0, grid: SampleGrid | None = None,
            full_exclusion: bool = False, drop_tol: float = 1e-14) -> KamRun:
    """Run ``nu_max`` steps with the schedule, re-checking the Diophantine
    conditions and the spectral floor ``m_nu`` at every step.

    By default only conditions whose divisor can occur in a class-A
    perturbation are re-checked; ``full_exclusion`` checks every family.
    Lie-series increments are thinned with :func:`negligible_filter` at
    ``drop_tol`` times the current norm on the next domain (0 disables it).

    ``schedule.C`` is calibrated from the first step when it is ``None``;
    the admission inequalities are then checked once and frozen.
    """
    grid = grid or SampleGrid()
    if schedule.C is None and state0.frequencies[1]:
        schedule.m0 = spectral_floor(state0.frequencies[1])[0]
    s, r = schedule.s0, schedule.r0
    eps = measure_norm(state0.P, s, r, a, p, grid)
    eps_sched = eps
    records = [StepRecord(0, s, r, schedule.sigma(0), schedule.gamma(eps), eps, eps_sched,
                          _omega_out(state0), False)]
    states = [state0]
    run = KamRun(states, records, schedule)
    state = state0
    for nu in range(nu_max):
        gamma = schedule.gamma(eps)
        step_params = dataclasses.replace(params, gamma=gamma)
        Omega = state.frequencies[1]
        floor = spectral_floor(Omega)[0] if Omega else math.inf
        records[-1].spectral_floor = floor
        cw, cO = state.frequency_corrections() if state.lead is not None else state.frequencies
        viol = point_violations(cw, cO, step_params, state.N.lattice.pair,
                                admissible_only=not full_exclusion, angle_sign=state.angle_sign, lead=state.lead)
        if viol or floor < schedule.m(nu) * (1 - 1e-12):
            run.excluded_at, run.reason = nu, (f"{len(viol)} Diophantine violations" if viol
                                               else f"spectral floor {floor:.3e} < m_nu")
            records[-1].excluded = True
            break
        if schedule.C is not None:
            records[-1].gate_bound = schedule.gate(eps, nu)
            gate = (eps, records[-1].gate_bound)
        else:
            gate = None
        try:
            filt = negligible_filter(schedule.eta(eps, nu) * r, drop_tol * eps) if drop_tol else None
            new = kam_step(state, step_params, order_cap, gate, filt)
        except ResonanceError as err:
            run.excluded_at, run.reason = nu, str(err)
            records[-1].excluded = True
            break
        eta = schedule.eta(eps, nu)
        s_next, r_next = schedule.s(nu + 1), eta * r
        eps_next = measure_norm(new.P, s_next, r_next, a, p, grid)
        if schedule.C is None:
            schedule.C = schedule.normalized_ratio(eps, eps_next, nu)
            bad = schedule.admission(eps)
            if bad:
                raise AdmissionError("; ".join(bad))
            records[-1].gate_bound = schedule.gate(eps, nu)
            if eps > records[-1].gate_bound:
                raise AdmissionError(f"smallness gate fails: ||X_P|| = {eps:.3e} > {records[-1].gate_bound:.3e}")
        records[-1].ratio = schedule.normalized_ratio(eps, eps_next, nu)
        records[-1].residual = new.info["residual"]
        eps_sched = schedule.next_eps(eps_sched, nu)
        new.log.append(f"step {nu}: eps {eps:.3e} -> {eps_next:.3e}")
        records.append(StepRecord(nu + 1, s_next, r_next, schedule.sigma(nu + 1), schedule.gamma(eps_next),
                                  eps_next, eps_sched, _omega_out(new), False))
        states.append(new)
        state, eps, r = new, eps_next, r_next
    return run


# symplecticity --------------------------------------------------------------

def canonical_coordinates(lattice: ModeLattice, modes=None, degree_cap=6, fourier_cap=8) -> dict:
    """``exp(i theta_j)``, ``I_j``, ``z_m`` and ``zbar_m`` as series."""
    mk = lambda key: FTSeries(lattice, {key: 1.0}, degree_cap, fourier_cap, prune=0.0)
    out = {("E", 0): mk(make_key(k=(1, 0))), ("E", 1): mk(make_key(k=(0, 1))),
           ("I", 0): mk(make_key(l=(1, 0))), ("I", 1): mk(make_key(l=(0, 1)))}
    for m in (modes if modes is not None else lattice.normal_modes):
        out[("z", m)] = mk(make_key(alpha=(m,)))
        out[("zbar", m)] = mk(make_key(beta=(m,)))
    return out


def symplectic_defect(F: FTSeries, angle_sign: int = 1, order_cap: int = 3, modes=None,
                      n_points: int = 16, radius: float = 0.1, seed: int = 0) -> float:
    """Largest deviation of the transformed canonical brackets from their
    canonical values on sampled points of the real phase space."""
    lattice = F.lattice
    coords = canonical_coordinates(lattice, modes, F.degree_cap, F.fourier_cap)
    new = {name: lie_transform(c, F, order_cap, MIXED, angle_sign) for name, c in coords.items()}
    rng = np.random.default_rng(seed)
    zmodes = list(lattice.modes)
    theta = rng.uniform(0, 2 * np.pi, (n_points, 2))
    I = rng.uniform(0, radius ** 2, (n_points, 2))
    z = radius * (rng.normal(size=(n_points, len(zmodes))) + 1j * rng.normal(size=(n_points, len(zmodes))))
    z /= np.sqrt(len(zmodes))
    pts = (theta, I, z, z.conj())
    names = list(new)
    worst = 0.0
    for i, a in enumerate(names):
        for b in names[i:]:
            br = poisson_bracket(new[a], new[b], MIXED, angle_sign)
            if a[0] == "E" and b[0] == "I" and a[1] == b[1]:
                br = br - new[a] * (1j * angle_sign)
            if a[0] == "z" and b[0] == "zbar" and a[1] == b[1]:
                br = br + 1j
            if len(br):
                vals = br.evaluator().values(*pts)
                worst = max(worst, float(np.abs(vals).max()))
    return worst


# DNLS problem ---------------------------------------------------------------

@dataclass
class DnlsKamProblem:
    state: KamState
    epsilon: float
    xi: tuple
    birkhoff: object


def build_dnls_problem(pair=(1, 5), j_max: int = 8, xi=(0.3, 0.2), epsilon: float = 1e-3,
                       degree_cap: int = 6, fourier_cap: int = 8) -> DnlsKamProblem:
    """Rescaled normal-form Hamiltonian of the lattice as a KAM state.

    Birkhoff normal form, polar substitution at ``eps^4 xi``, rescaling
    by ``eps`` and the split into ``N`` and ``P``.  The orientation of the
    angles is the one induced by the lattice structure.
    """
    lattice = ModeLattice(j_max, pair)
    H = build_hamiltonian(lattice, degree_cap, fourier_cap)
    bf = normal_form_4(H, pair)
    xa = (epsilon ** 4 * xi[0], epsilon ** 4 * xi[1])
    # Lambda only contributes the lead eps^-4 (n^2 I + j^2 z zbar) after
    # rescaling; it is kept exact and out of the series
    polar = to_action_angle(bf.G_bar + bf.G_hat + bf.K, xa)
    N, P = split_normal_part(rescale(polar, epsilon))
    lead = IntegerLead.squares(pair, lattice.normal_modes, epsilon ** -4)
    state = KamState(N, P, 0, -1, lead)
    return DnlsKamProblem(state, epsilon, tuple(xi), bf)
