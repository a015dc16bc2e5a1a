"""Truncated lattice Hamiltonian H = Lambda + G of the derivative NLS.

With ``u = sum_j q_j exp(ijx)/sqrt(2 pi)`` the equation
``i u_t + u_xx + i |u|^2 u_x = 0`` becomes ``dq_j/dt = -i dH/dqbar_j`` with

    Lambda = sum_j j^2 |q_j|^2,
    G      = 1/2 sum_{i+j=k+l} j G_ijkl q_i q_j qbar_k qbar_l,  G_ijkl = 1/(2 pi).

With these coefficients ``dG/dqbar_l`` is exactly the l-th Fourier
coefficient of ``-i |u|^2 u_x``, so no extra phase is needed.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DomainError
from .ft_algebra import FTSeries, ModeLattice, norm_ap, poisson_bracket, LATTICE_QQBAR

TWO_PI = 2.0 * math.pi


def g_kernel(i: int, j: int, k: int, l: int) -> float:
    """Quartic kernel: ``1/(2 pi)`` when ``i + j = k + l``, else 0."""
    if 0 in (i, j, k, l):
        raise DomainError("zero mode is excluded by the zero-mean condition")
    return 1.0 / TWO_PI if i + j == k + l else 0.0


def build_quadratic(lattice: ModeLattice, degree_cap: int = 6, fourier_cap: int = 8) -> FTSeries:
    terms = {((0, 0), (0, 0), (j,), (j,)): float(j * j) for j in lattice.modes}
    return FTSeries(lattice, terms, degree_cap, fourier_cap)


def build_quartic(lattice: ModeLattice, degree_cap: int = 6, fourier_cap: int = 8) -> FTSeries:
    """Accumulate ``(1/2) j G_ijkl`` over ordered tuples into canonical monomials."""
    modes = lattice.modes
    terms = defaultdict(float)
    for i in modes:
        for j in modes:
            s = i + j
            for k in modes:
                l = s - k
                if not lattice.contains(l):
                    continue
                key = ((0, 0), (0, 0), tuple(sorted((i, j))), tuple(sorted((k, l))))
                terms[key] += 0.5 * j * g_kernel(i, j, k, l)
    return FTSeries(lattice, terms, degree_cap, fourier_cap)


def mass_series(lattice: ModeLattice, degree_cap: int = 6, fourier_cap: int = 8) -> FTSeries:
    terms = {((0, 0), (0, 0), (j,), (j,)): 1.0 for j in lattice.modes}
    return FTSeries(lattice, terms, degree_cap, fourier_cap)


@dataclass(frozen=True)
class LatticeHamiltonian:
    lattice: ModeLattice
    Lambda: FTSeries
    G: FTSeries

    @property
    def lambda_j(self) -> dict:
        return {j: j * j for j in self.lattice.modes}

    @property
    def H(self) -> FTSeries:
        return self.Lambda + self.G


def build_hamiltonian(lattice: ModeLattice, degree_cap: int = 6, fourier_cap: int = 8) -> LatticeHamiltonian:
    return LatticeHamiltonian(lattice, build_quadratic(lattice, degree_cap, fourier_cap),
                              build_quartic(lattice, degree_cap, fourier_cap))


def _as_vector(lattice: ModeLattice, q) -> np.ndarray:
    out = np.zeros(len(lattice.modes), dtype=complex)
    if isinstance(q, Mapping):
        idx = {j: n for n, j in enumerate(lattice.modes)}
        for j, v in q.items():
            if j not in idx:
                raise DomainError(f"mode {j} outside the lattice")
            out[idx[j]] = v
        return out
    return np.asarray(q, dtype=complex)


def gradient_G(G: FTSeries, q) -> dict:
    """``(dG/dqbar_l)_l`` evaluated from the series at ``q`` (``qbar = conj q``)."""
    lattice = G.lattice
    vec = _as_vector(lattice, q)
    grad = G.evaluator().gradient(np.zeros((1, 2)), np.zeros((1, 2)), vec[None, :], vec.conj()[None, :])
    return dict(zip(lattice.modes, grad["zbar"][0]))


def gradient_G_direct(lattice: ModeLattice, q) -> dict:
    """Closed-form kernel sum ``sum_{i+j-k=l} j/(2 pi) q_i q_j qbar_k``."""
    vec = dict(zip(lattice.modes, _as_vector(lattice, q)))
    support = [j for j, v in vec.items() if v != 0]
    out = {j: 0j for j in lattice.modes}
    for i in support:
        for j in support:
            for k in support:
                l = i + j - k
                if lattice.contains(l):
                    out[l] += j / TWO_PI * vec[i] * vec[j] * vec[k].conjugate()
    return out


def nonresonance_scan(j_max: int = 50) -> list:
    """Quadruples with ``i+j=k+l``, ``{i,j} != {k,l}`` and vanishing divisor."""
    modes = np.array([j for j in range(-j_max, j_max + 1) if j != 0])
    i, j, k = np.meshgrid(modes, modes, modes, indexing="ij")
    l = i + j - k
    ok = (l != 0) & (np.abs(l) <= j_max)
    diag = ((i == k) & (j == l)) | ((i == l) & (j == k))
    div = i * i + j * j - k * k - l * l
    bad = ok & ~diag & (div == 0)
    return [tuple(int(x) for x in t) for t in zip(i[bad], j[bad], k[bad], l[bad])]


def mass_bracket(H: LatticeHamiltonian) -> FTSeries:
    """``{sum |q_j|^2, H}`` as a truncated series (zero for this model)."""
    M = mass_series(H.lattice, H.G.degree_cap, H.G.fourier_cap)
    return poisson_bracket(M, H.H, LATTICE_QQBAR)


def cubic_ratio(G: FTSeries, q, a: float, p: float) -> float:
    """``||G_qbar||_{a,p-1} / ||q||_{a,p}^3`` for one sample."""
    vec = dict(zip(G.lattice.modes, _as_vector(G.lattice, q)))
    grad = gradient_G(G, vec)
    denom = norm_ap(vec, a, p) ** 3
    return norm_ap(grad, a, p - 1) / denom if denom > 0 else 0.0
