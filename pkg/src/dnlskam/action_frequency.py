"""Polar reduction around the tangential pair, rescaling and frequency maps."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .ft_algebra import FTSeries, ModeLattice, key_degree, validate_pair

FOUR_PI = 4.0 * math.pi
# Weight of mode-mode cross terms in the frequency maps.  The standard closed
# form uses 1/(4 pi) throughout; summing the quartic kernel over ordered
# tuples gives 1/(2 pi) for distinct modes (self terms are 1/(4 pi) in both).
CROSS_NOMINAL = 1.0 / FOUR_PI
CROSS_KERNEL = 1.0 / (2.0 * math.pi)


def _binom(x: float, t: int) -> float:
    out = 1.0
    for i in range(t):
        out *= (x - i) / (i + 1)
    return out


def to_action_angle(F: FTSeries, xi, taylor_order: int = 3, max_action: float | None = None) -> FTSeries:
    """Substitute ``q_{n_j} = sqrt(I_j + xi_j) exp(i theta_j)`` and ``q_j = z_j``.

    Half-integer powers of ``I_j + xi_j`` are expanded in ``I_j / xi_j`` up
    to ``taylor_order``; integer powers are expanded exactly.  When
    ``max_action`` is given the expansion is only admitted for
    ``max_action / xi_j <= 0.1``.
    """
    n1, n2 = validate_pair(F.lattice.pair)
    xi = tuple(float(v) for v in xi)
    if min(xi) <= 0:
        raise DomainError("polar substitution is singular at xi_j = 0")
    if max_action is not None and max_action / min(xi) > 0.1:
        raise DomainError("action radius too large for the square-root expansion (I/xi > 0.1)")
    out = defaultdict(complex)
    dropped = 0
    cache = {}
    for (k, l, a, b), c in F.terms.items():
        if k != (0, 0) or l != (0, 0):
            raise DomainError("to_action_angle expects a polynomial in (q, qbar)")
        p = (a.count(n1), a.count(n2))
        r = (b.count(n1), b.count(n2))
        na = tuple(m for m in a if m not in (n1, n2))
        nb = tuple(m for m in b if m not in (n1, n2))
        kk = (p[0] - r[0], p[1] - r[1])
        factors = []
        for j in (0, 1):
            m = p[j] + r[j]
            ck = (j, m)
            if ck not in cache:
                top = m // 2 if m % 2 == 0 else taylor_order
                cache[ck] = [(t, xi[j] ** (m / 2 - t) * _binom(m / 2, t)) for t in range(top + 1)]
            factors.append(cache[ck])
        base = len(na) + len(nb)
        for t1, c1 in factors[0]:
            for t2, c2 in factors[1]:
                if base + 2 * (t1 + t2) > F.degree_cap:
                    dropped += 1
                    continue
                out[(kk, (t1, t2), na, nb)] += c * c1 * c2
    return FTSeries(F.lattice, out, F.degree_cap, F.fourier_cap, overflow=dropped, prune=0.0)


def rescale(H: FTSeries, epsilon: float) -> FTSeries:
    """``eps^-10 H(eps^6 I, theta, eps^3 z, eps^3 zbar)`` without the constant term.

    The xi-dependence is already fixed by the substitution point, so the
    caller passes the series evaluated at ``eps^4 xi``.
    """
    out = {}
    for key, c in H.terms.items():
        k, l, a, b = key
        if k == (0, 0) and key_degree(key) == 0:
            continue
        out[key] = c * epsilon ** (6 * (l[0] + l[1]) + 3 * (len(a) + len(b)) - 10)
    return FTSeries(H.lattice, out, H.degree_cap, H.fourier_cap, prune=0.0)


def split_normal_part(H: FTSeries) -> tuple[FTSeries, FTSeries]:
    """Split into ``<omega, I> + sum Omega_j z_j zbar_j`` and the remainder."""
    def normal(key):
        k, l, a, b = key
        if k != (0, 0):
            return False
        if sum(l) == 1 and not a and not b:
            return True
        return l == (0, 0) and len(a) == 1 and a == b
    return H.filter(normal), H.filter(lambda key: not normal(key))


def read_frequencies(N: FTSeries) -> tuple[np.ndarray, dict]:
    """``(omega, {j: Omega_j})`` read off a normal-form series."""
    omega = np.array([N.coeff(((0, 0), (1, 0), (), ())).real, N.coeff(((0, 0), (0, 1), (), ())).real])
    Omega = {}
    for (k, l, a, b), c in N.terms.items():
        if k == (0, 0) and l == (0, 0) and len(a) == 1 and a == b:
            Omega[a[0]] = c.real
    return omega, dict(sorted(Omega.items()))


def normal_series(lattice: ModeLattice, omega, Omega: dict, degree_cap=6, fourier_cap=8) -> FTSeries:
    terms = {((0, 0), (1, 0), (), ()): omega[0], ((0, 0), (0, 1), (), ()): omega[1]}
    for j, v in Omega.items():
        terms[((0, 0), (0, 0), (j,), (j,))] = v
    return FTSeries(lattice, terms, degree_cap, fourier_cap, prune=0.0)


@dataclass(frozen=True)
class FrequencyMap:
    """Affine frequency maps around the tangential pair.

    ``omega``/``Omega`` are the maps after the mass reduction;
    ``omega_star``/``Omega_star`` the rescaled maps before it and
    ``omega_tilde``/``Omega_tilde`` the unscaled normal-form frequencies
    (``epsilon`` plays no role there).  ``cross`` weights the mode-mode
    cross terms, see :data:`CROSS_NOMINAL` and :data:`CROSS_KERNEL`.
    """

    n1: int
    n2: int
    c: float = 0.0
    epsilon: float = 1.0
    cross: float = CROSS_NOMINAL

    def __post_init__(self):
        validate_pair((self.n1, self.n2))
        if not 0 < self.epsilon <= 1:
            raise DomainError("epsilon must lie in (0, 1]")
        if self.c < 0:
            raise DomainError("mass must be non-negative")

    @property
    def pair(self):
        return (self.n1, self.n2)

    @property
    def self_weight(self) -> float:
        return 1.0 / (2.0 * math.pi)

    def _lead(self, j):
        return np.asarray(j, dtype=float) ** 2 / self.epsilon ** 4

    def omega(self, xi) -> np.ndarray:
        n1, n2, k = self.n1, self.n2, self.cross
        xi = np.asarray(xi, dtype=float)
        shift = k * (n1 + n2) * self.c
        return np.array([
            self._lead(n1) + shift + (n1 * self.self_weight - k * (n1 + n2)) * xi[..., 0],
            self._lead(n2) + shift + (n2 * self.self_weight - k * (n1 + n2)) * xi[..., 1],
        ])

    def Omega(self, xi, j):
        xi = np.asarray(xi, dtype=float)
        return self._lead(j) + self.cross * (self.c * np.asarray(j) + self.n1 * xi[..., 0] + self.n2 * xi[..., 1])

    def omega_star(self, xi) -> np.ndarray:
        n1, n2, k, s = self.n1, self.n2, self.cross, self.self_weight
        xi = np.asarray(xi, dtype=float)
        return np.array([
            self._lead(n1) + s * n1 * xi[..., 0] + k * (n1 + n2) * xi[..., 1],
            self._lead(n2) + k * (n1 + n2) * xi[..., 0] + s * n2 * xi[..., 1],
        ])

    def Omega_star(self, xi, j):
        xi = np.asarray(xi, dtype=float)
        return self._lead(j) + self.cross * ((self.n1 + j) * xi[..., 0] + (self.n2 + j) * xi[..., 1])

    def omega_tilde(self, xi) -> np.ndarray:
        return FrequencyMap(self.n1, self.n2, self.c, 1.0, self.cross).omega_star(xi)

    def Omega_tilde(self, xi, j):
        return FrequencyMap(self.n1, self.n2, self.c, 1.0, self.cross).Omega_star(xi, j)

    def jacobian(self) -> np.ndarray:
        """``d omega / d xi`` of the reduced map."""
        n1, n2, k = self.n1, self.n2, self.cross
        return np.diag([n1 * self.self_weight - k * (n1 + n2), n2 * self.self_weight - k * (n1 + n2)])


def frequencies(fmap: FrequencyMap, xi, modes=None) -> tuple[np.ndarray, dict]:
    """``(omega(xi), {j: Omega_j(xi)})`` over ``modes`` (default ``|j| <= 16``)."""
    if modes is None:
        modes = [j for j in range(-16, 17) if j not in (0, fmap.n1, fmap.n2)]
    return fmap.omega(xi), {j: float(fmap.Omega(xi, j)) for j in modes}


def mass_reduction(xi, I=(0.0, 0.0), z=None, epsilon: float = 1.0) -> tuple[float, float]:
    """Conserved mass ``c`` of a rescaled state and the residual of
    ``xi_1 + xi_2 = c - eps^2 (I_1 + I_2 + sum |z_j|^2)``."""
    zsq = 0.0 if z is None else float(np.sum(np.abs(np.asarray(list(z.values()) if isinstance(z, dict) else z)) ** 2))
    xi = np.asarray(xi, dtype=float)
    I = np.asarray(I, dtype=float)
    c = float(xi.sum() + epsilon ** 2 * (I.sum() + zsq))
    if c < 0 or np.any(xi < 0):
        raise DomainError("mass must be non-negative")
    residual = abs(float(xi.sum()) - (c - epsilon ** 2 * (float(I.sum()) + zsq)))
    return c, residual


def mass_correction(lattice: ModeLattice, epsilon: float, degree_cap=6, fourier_cap=8) -> FTSeries:
    """``-eps^2 (n1 + n2)/(2 pi) (I_1 + I_2 + sum |z_j|^2)^2``."""
    n1, n2 = validate_pair(lattice.pair)
    M = {((0, 0), (1, 0), (), ()): 1.0, ((0, 0), (0, 1), (), ()): 1.0}
    for j in lattice.normal_modes:
        M[((0, 0), (0, 0), (j,), (j,))] = 1.0
    S = FTSeries(lattice, M, degree_cap, fourier_cap)
    return (S * S) * (-epsilon ** 2 * (n1 + n2) / (2 * math.pi))


def frequency_table_csv(fmap: FrequencyMap, xi_points, modes) -> str:
    """CSV rows ``xi1, xi2, omega1, omega2, Omega_j...``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["xi1", "xi2", "omega1", "omega2"] + [f"Omega_{j}" for j in modes])
    for xi in xi_points:
        om, Om = frequencies(fmap, xi, modes)
        w.writerow([repr(float(xi[0])), repr(float(xi[1])), repr(float(om[0])), repr(float(om[1]))]
                   + [repr(Om[j]) for j in modes])
    return buf.getvalue()


@dataclass(frozen=True)
class IntegerLead:
    """Frequencies ``scale * n_j^2`` and ``scale * j^2`` kept apart from the
    corrections.

    Divisors combine the integer parts before scaling, so a vanishing
    integer part cancels exactly instead of leaving the rounding error of
    two numbers of size ``scale``.
    """

    scale: float
    omega: tuple
    Omega: dict

    @classmethod
    def squares(cls, pair, modes, scale: float) -> "IntegerLead":
        return cls(float(scale), (pair[0] ** 2, pair[1] ** 2), {int(j): int(j) * int(j) for j in modes})

    def integer_divisor(self, key, angle_sign: int = 1) -> int:
        k, _, a, b = key
        return (angle_sign * (k[0] * self.omega[0] + k[1] * self.omega[1])
                - sum(self.Omega[j] for j in a) + sum(self.Omega[j] for j in b))

    def divisor(self, key, angle_sign: int = 1) -> float:
        return self.scale * self.integer_divisor(key, angle_sign)

    def add_to(self, omega, Omega: dict) -> tuple[np.ndarray, dict]:
        """Total frequencies from corrections (rounded to float)."""
        w = np.asarray(omega, dtype=float) + self.scale * np.asarray(self.omega, dtype=float)
        return w, {j: v + self.scale * self.Omega.get(j, 0) for j, v in Omega.items()}

    def series(self, lattice: ModeLattice, degree_cap=6, fourier_cap=8) -> FTSeries:
        omega = [self.scale * v for v in self.omega]
        return normal_series(lattice, omega, {j: self.scale * v for j, v in self.Omega.items()
                                              if j in lattice.normal_modes}, degree_cap, fourier_cap)

    def bracket(self, F: FTSeries, angle_sign: int = 1) -> FTSeries:
        """``{F, N_lead}`` termwise: ``i d F`` with the exact integer divisor."""
        out = {key: 1j * self.divisor(key, angle_sign) * c for key, c in F.terms.items()}
        return FTSeries(F.lattice, {k: v for k, v in out.items() if v != 0}, F.degree_cap, F.fourier_cap,
                        prune=0.0)
