"""Sparse truncated Fourier-Taylor series in (theta, I, z, zbar).

A term is ``coeff * exp(i<k,theta>) * I^l * z^alpha * zbar^beta``.  The key
of a term is ``(k, l, alpha, beta)`` where ``k`` and ``l`` are integer pairs
and ``alpha``/``beta`` are sorted tuples of lattice modes with repetition
(``z_2**2 * z_3`` is stored as ``(2, 2, 3)``).  Pure lattice polynomials in
``(q, qbar)`` use the same container with ``k = l = (0, 0)`` and ``alpha``,
``beta`` running over every lattice mode, tangential ones included.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ConfigurationError, ContractError, DomainError, InvariantViolation, StructuralError

PRUNE_TOL = 1e-15
PAIR_RULE = "n₁ is odd and |n₂−n₁|=4"

LATTICE_QQBAR = "lattice_qqbar"
MIXED = "mixed_angle_action"


def validate_pair(pair) -> tuple[int, int]:
    """Return ``pair`` as a tuple of ints or raise if it is not admissible."""
    try:
        n1, n2 = (int(v) for v in pair)
    except (TypeError, ValueError) as exc:
        raise DomainError(f"tangential pair must be two integers ({PAIR_RULE})") from exc
    if n1 % 2 == 0 or abs(n2 - n1) != 4:
        raise DomainError(f"invalid tangential pair {(n1, n2)}: require {PAIR_RULE}")
    if n1 == 0 or n2 == 0:
        raise DomainError("tangential modes must be nonzero (zero-mean lattice)")
    return n1, n2


@dataclass(frozen=True)
class ModeLattice:
    """Truncated mode set ``{j : 0 < |j| <= j_max}`` with a tangential pair.

    The pair may lie outside the truncation window (small test lattices),
    in which case every lattice mode is normal.
    """

    j_max: int
    pair: tuple[int, int] | None = (1, 5)

    def __post_init__(self):
        if int(self.j_max) < 1:
            raise DomainError("j_max must be a positive integer")
        object.__setattr__(self, "j_max", int(self.j_max))
        if self.pair is not None:
            object.__setattr__(self, "pair", validate_pair(self.pair))

    @property
    def modes(self) -> tuple[int, ...]:
        return tuple(j for j in range(-self.j_max, self.j_max + 1) if j != 0)

    @property
    def normal_modes(self) -> tuple[int, ...]:
        tangential = set(self.pair or ())
        return tuple(j for j in self.modes if j not in tangential)

    def contains(self, j: int) -> bool:
        return j != 0 and abs(j) <= self.j_max

    def header(self) -> dict:
        return {"j_max": self.j_max, "pair": list(self.pair) if self.pair else None}

    @classmethod
    def from_header(cls, header: Mapping) -> "ModeLattice":
        pair = header.get("pair")
        return cls(int(header["j_max"]), tuple(pair) if pair is not None else None)


@dataclass(frozen=True)
class MultiIndexMonomial:
    """One term of a series with exponents as ``{mode: power}`` maps."""

    k: tuple[int, int]
    l: tuple[int, int]
    alpha: dict
    beta: dict
    coeff: complex

    @property
    def degree(self) -> int:
        return 2 * sum(self.l) + sum(self.alpha.values()) + sum(self.beta.values())

    def key(self):
        return make_key(self.k, self.l, self.alpha, self.beta)


def _multiset(powers: Mapping[int, int] | Iterable[int] | None) -> tuple[int, ...]:
    if not powers:
        return ()
    if isinstance(powers, Mapping):
        out = []
        for j, p in powers.items():
            if p < 0:
                raise DomainError("negative exponent")
            out.extend([int(j)] * int(p))
        return tuple(sorted(out))
    return tuple(sorted(int(j) for j in powers))


def pairs(ms: tuple[int, ...]) -> list[list[int]]:
    """``(2, 2, 3) -> [[2, 2], [3, 1]]``."""
    out: list[list[int]] = []
    for j in ms:
        if out and out[-1][0] == j:
            out[-1][1] += 1
        else:
            out.append([j, 1])
    return out


def powers(ms: tuple[int, ...]) -> dict[int, int]:
    return {j: p for j, p in pairs(ms)}


def make_key(k=(0, 0), l=(0, 0), alpha=None, beta=None):
    k = (int(k[0]), int(k[1]))
    l = (int(l[0]), int(l[1]))
    if l[0] < 0 or l[1] < 0:
        raise DomainError("action exponents must be non-negative")
    return (k, l, _multiset(alpha), _multiset(beta))


def key_degree(key) -> int:
    _, l, a, b = key
    return 2 * (l[0] + l[1]) + len(a) + len(b)


def conj_key(key):
    k, l, a, b = key
    return ((-k[0], -k[1]), l, b, a)


def _sort_key(key):
    k, l, a, b = key
    return (k, l, pairs(a), pairs(b))


def _merge(a: tuple, b: tuple) -> tuple:
    if not a:
        return b
    if not b:
        return a
    return tuple(sorted(a + b))


class FTSeries:
    """Immutable sparse Fourier-Taylor series over a :class:`ModeLattice`.

    Parameters
    ----------
    lattice : ModeLattice
        Mode lattice carrying the tangential pair.
    terms : mapping, optional
        ``(k, l, alpha, beta) -> complex`` (see :func:`make_key`).
    degree_cap : int
        Largest admitted ``2|l| + |alpha| + |beta|``.
    fourier_cap : int
        Largest admitted ``max(|k_1|, |k_2|)``.
    overflow : int
        Number of contributions dropped by the operation that produced
        this series.  Terms passed in that exceed the caps are dropped
        and counted here as well.
    prune : float
        Coefficients with ``|c| <= prune`` are discarded.  The threshold is
        inherited by every series derived from this one; rescaled problems
        whose coefficients span many decades use ``prune=0``.
    """

    __slots__ = ("lattice", "_terms", "degree_cap", "fourier_cap", "overflow", "prune", "_evaluator")

    def __init__(self, lattice: ModeLattice, terms=None, degree_cap: int = 6,
                 fourier_cap: int = 8, overflow: int = 0, prune: float = PRUNE_TOL):
        self.lattice = lattice
        self.prune = float(prune)
        self.degree_cap = int(degree_cap)
        self.fourier_cap = int(fourier_cap)
        if self.degree_cap < 0 or self.fourier_cap < 0:
            raise ConfigurationError("caps must be non-negative")
        kept = {}
        dropped = 0
        for key, c in (terms or {}).items():
            c = complex(c)
            if abs(c) <= prune:
                continue
            k = key[0]
            if key_degree(key) > self.degree_cap or max(abs(k[0]), abs(k[1])) > self.fourier_cap:
                dropped += 1
                continue
            kept[key] = c
        self._terms = kept
        self.overflow = int(overflow) + dropped
        self._evaluator = None

    # construction helpers -------------------------------------------------
    def _like(self, terms, overflow=0) -> "FTSeries":
        return FTSeries(self.lattice, terms, self.degree_cap, self.fourier_cap, overflow, self.prune)

    @classmethod
    def zero(cls, lattice, degree_cap=6, fourier_cap=8) -> "FTSeries":
        return cls(lattice, {}, degree_cap, fourier_cap)

    @classmethod
    def monomial(cls, lattice, coeff=1.0, k=(0, 0), l=(0, 0), alpha=None, beta=None,
                 degree_cap=6, fourier_cap=8) -> "FTSeries":
        key = make_key(k, l, alpha, beta)
        for j in key[2] + key[3]:
            if not lattice.contains(j):
                raise StructuralError(f"mode {j} not in lattice")
        return cls(lattice, {key: coeff}, degree_cap, fourier_cap)

    def with_caps(self, degree_cap=None, fourier_cap=None) -> "FTSeries":
        return FTSeries(self.lattice, self._terms,
                        self.degree_cap if degree_cap is None else degree_cap,
                        self.fourier_cap if fourier_cap is None else fourier_cap, 0, self.prune)

    # container protocol ---------------------------------------------------
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def __len__(self):
        return len(self._terms)

    def __iter__(self):
        return iter(self.items())

    def __contains__(self, key):
        return key in self._terms

    def items(self):
        return sorted(self._terms.items(), key=lambda kv: _sort_key(kv[0]))

    def coeff(self, key) -> complex:
        return self._terms.get(key, 0j)

    def monomials(self) -> list[MultiIndexMonomial]:
        return [MultiIndexMonomial(k, l, powers(a), powers(b), c) for (k, l, a, b), c in self.items()]

    def __repr__(self):
        return f"FTSeries({len(self)} terms, degree_cap={self.degree_cap}, fourier_cap={self.fourier_cap})"

    # linear structure -----------------------------------------------------
    def _check(self, other: "FTSeries"):
        if not isinstance(other, FTSeries):
            raise StructuralError("operand is not an FTSeries")
        if other.lattice != self.lattice:
            raise StructuralError(f"lattice mismatch: {self.lattice} vs {other.lattice}")

    def __add__(self, other):
        if isinstance(other, (int, float, complex)):
            other = self._like({make_key(): other})
        self._check(other)
        out = dict(self._terms)
        for key, c in other._terms.items():
            out[key] = out.get(key, 0j) + c
        return FTSeries(self.lattice, out, self.degree_cap, self.fourier_cap, 0, min(self.prune, other.prune))

    __radd__ = __add__

    def __neg__(self):
        return self._like({key: -c for key, c in self._terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float, complex)):
            return self + (-other)
        return self + (-other)

    def __mul__(self, scalar):
        if isinstance(scalar, FTSeries):
            return multiply(self, scalar)
        return self._like({key: c * scalar for key, c in self._terms.items()})

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self._like({key: c / scalar for key, c in self._terms.items()})

    def filter(self, predicate: Callable) -> "FTSeries":
        """Terms whose key satisfies ``predicate(key)``."""
        return self._like({key: c for key, c in self._terms.items() if predicate(key)})

    def degree_part(self, degree: int) -> "FTSeries":
        return self.filter(lambda key: key_degree(key) == degree)

    def max_degree(self) -> int:
        return max((key_degree(key) for key in self._terms), default=0)

    def max_abs(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def l1(self) -> float:
        return float(sum(abs(c) for c in self._terms.values()))

    def max_diff(self, other: "FTSeries") -> float:
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        return max((abs(self._terms.get(k, 0j) - other._terms.get(k, 0j)) for k in keys), default=0.0)

    def conj(self) -> "FTSeries":
        """The series of the complex-conjugate function on the real subspace."""
        return self._like({conj_key(key): c.conjugate() for key, c in self._terms.items()})

    def is_real(self, tol: float = 1e-12) -> bool:
        return self.max_diff(self.conj()) <= tol

    def derivative(self, kind: str, index: int) -> "FTSeries":
        """Partial derivative in ``theta``, ``I``, ``z`` or ``zbar``.

        ``index`` is 0/1 for theta and I, a lattice mode for z and zbar.
        """
        out = defaultdict(complex)
        for (k, l, a, b), c in self._terms.items():
            if kind == "theta":
                if k[index]:
                    out[(k, l, a, b)] += 1j * k[index] * c
            elif kind == "I":
                if l[index]:
                    nl = (l[0] - 1, l[1]) if index == 0 else (l[0], l[1] - 1)
                    out[(k, nl, a, b)] += l[index] * c
            elif kind in ("z", "zbar"):
                seq = a if kind == "z" else b
                p = seq.count(index)
                if p:
                    i = seq.index(index)
                    rest = seq[:i] + seq[i + 1:]
                    nk = (k, l, rest, b) if kind == "z" else (k, l, a, rest)
                    out[nk] += p * c
            else:
                raise StructuralError(f"unknown variable kind {kind!r}")
        return self._like(out)

    # serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "lattice": self.lattice.header(),
            "degree_cap": self.degree_cap,
            "fourier_cap": self.fourier_cap,
            "prune": self.prune,
            "terms": [[list(k), list(l), pairs(a), pairs(b), c.real, c.imag]
                      for (k, l, a, b), c in self.items()],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: Mapping) -> "FTSeries":
        lattice = ModeLattice.from_header(data["lattice"])
        terms = {}
        for k, l, a, b, re, im in data["terms"]:
            key = make_key(k, l, {j: p for j, p in a}, {j: p for j, p in b})
            terms[key] = complex(re, im)
        return cls(lattice, terms, data["degree_cap"], data["fourier_cap"], prune=data.get("prune", PRUNE_TOL))

    @classmethod
    def from_json(cls, text: str) -> "FTSeries":
        return cls.from_dict(json.loads(text))

    # evaluation -----------------------------------------------------------
    def evaluator(self) -> "SeriesEvaluator":
        if self._evaluator is None:
            self._evaluator = SeriesEvaluator(self)
        return self._evaluator

    def __call__(self, theta=(0.0, 0.0), I=(0.0, 0.0), z=None, zbar=None):
        """Evaluate at one point; ``z``/``zbar`` map lattice modes to values."""
        ev = self.evaluator()
        zz, zb = ev.pack(z), ev.pack(zbar)
        return ev.values(np.atleast_2d(theta), np.atleast_2d(I), zz[None, :], zb[None, :])[0]


class SeriesEvaluator:
    """Vectorized values and gradients of a series on batches of points."""

    def __init__(self, series: FTSeries):
        self.modes = series.lattice.modes
        self.index = {j: i for i, j in enumerate(self.modes)}
        keys = list(series._terms)
        T, M = len(keys), len(self.modes)
        self.c = np.array([series._terms[key] for key in keys], dtype=complex)
        self.K = np.zeros((T, 2))
        self.L = np.zeros((T, 2), dtype=int)
        self.A = np.zeros((T, M), dtype=int)
        self.B = np.zeros((T, M), dtype=int)
        for t, (k, l, a, b) in enumerate(keys):
            self.K[t] = k
            self.L[t] = l
            for j in a:
                self.A[t, self.index[j]] += 1
            for j in b:
                self.B[t, self.index[j]] += 1

    def pack(self, values) -> np.ndarray:
        out = np.zeros(len(self.modes), dtype=complex)
        if values is None:
            return out
        if isinstance(values, Mapping):
            for j, v in values.items():
                out[self.index[j]] = v
            return out
        return np.asarray(values, dtype=complex)

    @staticmethod
    def _powers(x, E):
        out = np.ones((x.shape[0], E.shape[0]), dtype=complex)
        for v in np.nonzero(E.any(axis=0))[0]:
            top = int(E[:, v].max())
            table = np.ones((x.shape[0], top + 1), dtype=complex)
            for e in range(1, top + 1):
                table[:, e] = table[:, e - 1] * x[:, v]
            out *= table[:, E[:, v]]
        return out

    def monomials(self, theta, I, z, zbar, K=None, L=None, A=None, B=None):
        K = self.K if K is None else K
        L = self.L if L is None else L
        A = self.A if A is None else A
        B = self.B if B is None else B
        theta = np.asarray(theta, dtype=complex)
        mono = np.exp(1j * theta @ K.T)
        mono *= self._powers(np.asarray(I, dtype=complex), L)
        mono *= self._powers(np.asarray(z, dtype=complex), A)
        mono *= self._powers(np.asarray(zbar, dtype=complex), B)
        return mono

    def values(self, theta, I, z, zbar) -> np.ndarray:
        if len(self.c) == 0:
            return np.zeros(np.asarray(theta).shape[0], dtype=complex)
        return self.monomials(theta, I, z, zbar) @ self.c

    def _grad_block(self, weighted, x, E, which, theta, I, z, zbar):
        """Gradient block for one variable group; exact at zero coordinates."""
        grad = np.zeros(x.shape, dtype=complex)
        if len(self.c) == 0:
            return grad
        raw = weighted @ E
        nz = x != 0
        grad[nz] = raw[nz] / x[nz]
        for p, v in zip(*np.nonzero(~nz)):
            sel = E[:, v] == 1
            if not sel.any():
                continue
            args = {"K": self.K[sel], "L": self.L[sel], "A": self.A[sel], "B": self.B[sel]}
            red = args[which].copy()
            red[:, v] = 0
            args[which] = red
            mono = self.monomials(theta[p:p + 1], I[p:p + 1], z[p:p + 1], zbar[p:p + 1], **args)
            grad[p, v] = mono[0] @ self.c[sel]
        return grad

    def gradient(self, theta, I, z, zbar) -> dict:
        """Partial derivatives at each point: keys theta, I, z, zbar."""
        theta = np.asarray(theta, dtype=complex)
        I = np.asarray(I, dtype=complex)
        z = np.asarray(z, dtype=complex)
        zbar = np.asarray(zbar, dtype=complex)
        mono = self.monomials(theta, I, z, zbar)
        weighted = mono * self.c[None, :]
        return {
            "theta": 1j * weighted @ self.K,
            "I": self._grad_block(weighted, I, self.L, "L", theta, I, z, zbar),
            "z": self._grad_block(weighted, z, self.A, "A", theta, I, z, zbar),
            "zbar": self._grad_block(weighted, zbar, self.B, "B", theta, I, z, zbar),
        }


# brackets and products ----------------------------------------------------

def _z_derivatives(terms, slot):
    """mode -> degree -> list of (k, l, alpha, beta, coeff) for d/dz or d/dzbar."""
    out = defaultdict(lambda: defaultdict(list))
    for key, c in terms.items():
        k, l, a, b = key
        seq = a if slot == 2 else b
        deg = key_degree(key) - 1
        n = len(seq)
        i = 0
        while i < n:
            m = seq[i]
            j = i
            while j < n and seq[j] == m:
                j += 1
            rest = seq[:i] + seq[i + 1:]
            entry = (k, l, rest, b, c * (j - i)) if slot == 2 else (k, l, a, rest, c * (j - i))
            out[m][deg].append(entry)
            i = j
    return out


def _accumulate(out, left, right, factor, cap, fcap):
    """Add ``factor * left_i * right_j`` for all pairs; return overflow count."""
    dropped = 0
    for dl, lt in left.items():
        for dr, rt in right.items():
            if dl + dr > cap:
                dropped += len(lt) * len(rt)
                continue
            for k1, l1, a1, b1, c1 in lt:
                fc = factor * c1
                for k2, l2, a2, b2, c2 in rt:
                    k = (k1[0] + k2[0], k1[1] + k2[1])
                    if abs(k[0]) > fcap or abs(k[1]) > fcap:
                        dropped += 1
                        continue
                    key = (k, (l1[0] + l2[0], l1[1] + l2[1]), _merge(a1, a2), _merge(b1, b2))
                    out[key] += fc * c2
    return dropped


def _angle_action_blocks(terms, j):
    """d/dtheta_j and d/dI_j of a term dict, grouped by resulting degree."""
    dth = defaultdict(list)
    dI = defaultdict(list)
    for key, c in terms.items():
        k, l, a, b = key
        deg = key_degree(key)
        if k[j]:
            dth[deg].append((k, l, a, b, 1j * k[j] * c))
        if l[j]:
            nl = (l[0] - 1, l[1]) if j == 0 else (l[0], l[1] - 1)
            dI[deg - 2].append((k, nl, a, b, l[j] * c))
    return dth, dI


def poisson_bracket(F: FTSeries, G: FTSeries, structure: str = MIXED,
                    angle_sign: int = 1, method: str = "auto") -> FTSeries:
    """Truncated Poisson bracket ``{F, G}``.

    ``lattice_qqbar``: ``-i sum_m (F_q G_qbar - F_qbar G_q)`` over every
    lattice mode; both operands must be theta- and I-free.

    ``mixed_angle_action``: ``angle_sign * sum_j (F_theta G_I - F_I G_theta)
    - i sum_m (F_z G_zbar - F_zbar G_z)``.  The default orientation gives
    ``{exp(i theta_1), I_1} = i exp(i theta_1)``; ``angle_sign=-1`` is the
    orientation induced on polar coordinates ``q = sqrt(I + xi) exp(i theta)``
    by the lattice structure.

    The result carries ``overflow``: the number of monomial products dropped
    by the degree or Fourier caps.

    ``method`` selects the term-by-term dictionary implementation (``"dict"``)
    or the array implementation (``"packed"``); ``"auto"`` picks by size.
    """
    F._check(G)
    if method == "auto":
        method = "packed" if len(F) * len(G) > 2000 else "dict"
    if method == "packed":
        return _packed_bracket(F, G, structure, angle_sign)
    if method != "dict":
        raise ConfigurationError(f"unknown bracket method {method!r}")
    if structure not in (LATTICE_QQBAR, MIXED):
        raise StructuralError(f"unknown bracket structure {structure!r}")
    cap = min(F.degree_cap, G.degree_cap)
    fcap = min(F.fourier_cap, G.fourier_cap)
    if structure == LATTICE_QQBAR:
        for S in (F, G):
            if any(key[0] != (0, 0) or key[1] != (0, 0) for key in S._terms):
                raise StructuralError("lattice_qqbar bracket needs theta- and I-free series")
    out = defaultdict(complex)
    dropped = 0
    Fz, Fzb = _z_derivatives(F._terms, 2), _z_derivatives(F._terms, 3)
    Gz, Gzb = _z_derivatives(G._terms, 2), _z_derivatives(G._terms, 3)
    for m in sorted(set(Fz) & set(Gzb)):
        dropped += _accumulate(out, Fz[m], Gzb[m], -1j, cap, fcap)
    for m in sorted(set(Fzb) & set(Gz)):
        dropped += _accumulate(out, Fzb[m], Gz[m], 1j, cap, fcap)
    if structure == MIXED:
        for j in (0, 1):
            Fth, FI = _angle_action_blocks(F._terms, j)
            Gth, GI = _angle_action_blocks(G._terms, j)
            dropped += _accumulate(out, Fth, GI, float(angle_sign), cap, fcap)
            dropped += _accumulate(out, FI, Gth, -float(angle_sign), cap, fcap)
    return FTSeries(F.lattice, out, cap, fcap, overflow=dropped, prune=min(F.prune, G.prune))


class _Packed:
    """Exponent rows ``(k1, k2, l1, l2, alpha counts, beta counts)`` of a series
    with two independent linear 64-bit hashes per row."""

    _weights = {}

    def __init__(self, S: FTSeries):
        modes = S.lattice.modes
        self.modes = np.array(modes)
        M = len(modes)
        index = {j: i for i, j in enumerate(modes)}
        keys = list(S._terms)
        E = np.zeros((len(keys), 4 + 2 * M), dtype=np.int64)
        for t, (k, l, a, b) in enumerate(keys):
            E[t, 0:2] = k
            E[t, 2:4] = l
            for j in a:
                E[t, 4 + index[j]] += 1
            for j in b:
                E[t, 4 + M + index[j]] += 1
        self.E = E
        self.c = np.array([S._terms[key] for key in keys], dtype=complex)
        self.M = M
        self.W = self.weights(E.shape[1])

    @classmethod
    def weights(cls, width: int) -> np.ndarray:
        if width not in cls._weights:
            rng = np.random.default_rng(width)
            cls._weights[width] = rng.integers(1, 2 ** 63, size=(width, 2), dtype=np.int64).astype(np.uint64) | np.uint64(1)
        return cls._weights[width]

    def block(self, col: int, kind: str):
        """Derivative rows: ``kind`` is ``"z"`` (lower ``col``) or ``"theta"``
        (multiply by ``i k``, column unchanged)."""
        E, c = self.E, self.c
        if kind == "theta":
            sel = E[:, col] != 0
            Eb = E[sel]
            return Eb, c[sel] * 1j * Eb[:, col]
        sel = E[:, col] > 0
        Eb = E[sel].copy()
        cb = c[sel] * Eb[:, col]
        Eb[:, col] -= 1
        return Eb, cb


def _row_stats(E: np.ndarray, W: np.ndarray):
    h = (E.astype(np.uint64)[:, :, None] * W[None, :, :]).sum(axis=1, dtype=np.uint64)
    deg = 2 * (E[:, 2] + E[:, 3]) + E[:, 4:].sum(axis=1)
    return h, deg


def _packed_bracket(F: FTSeries, G: FTSeries, structure: str, angle_sign: int) -> FTSeries:
    if structure not in (LATTICE_QQBAR, MIXED):
        raise StructuralError(f"unknown bracket structure {structure!r}")
    cap = min(F.degree_cap, G.degree_cap)
    fcap = min(F.fourier_cap, G.fourier_cap)
    pF, pG = _Packed(F), _Packed(G)
    if structure == LATTICE_QQBAR:
        for p in (pF, pG):
            if np.any(p.E[:, :4] != 0):
                raise StructuralError("lattice_qqbar bracket needs theta- and I-free series")
    M = pF.M
    W = pF.W
    pairs_ = []
    for v in range(M):
        a, b = 4 + v, 4 + M + v
        pairs_.append((pF.block(a, "z"), pG.block(b, "z"), -1j))
        pairs_.append((pF.block(b, "z"), pG.block(a, "z"), 1j))
    if structure == MIXED:
        for j in (0, 1):
            pairs_.append((pF.block(j, "theta"), pG.block(2 + j, "z"), float(angle_sign)))
            pairs_.append((pF.block(2 + j, "z"), pG.block(j, "theta"), -float(angle_sign)))
    dropped = 0
    hashes, coeffs, rows = [], [], []
    for (E1, c1), (E2, c2), factor in pairs_:
        if not len(E1) or not len(E2):
            continue
        h1, d1 = _row_stats(E1, W)
        h2, d2 = _row_stats(E2, W)
        chunk = max(1, 400_000 // len(E2))
        for start in range(0, len(E1), chunk):
            sl = slice(start, start + chunk)
            deg = d1[sl, None] + d2[None, :]
            k0 = E1[sl, 0:1] + E2[None, :, 0]
            k1 = E1[sl, 1:2] + E2[None, :, 1]
            ok = (deg <= cap) & (np.abs(k0) <= fcap) & (np.abs(k1) <= fcap)
            dropped += int(ok.size - ok.sum())
            ii, jj = np.nonzero(ok)
            if not len(ii):
                continue
            h = h1[sl][ii] + h2[jj]
            cc = factor * c1[sl][ii] * c2[jj]
            hv = np.ascontiguousarray(h).view(np.dtype((np.void, 16))).ravel()
            uniq, first, inv = np.unique(hv, return_index=True, return_inverse=True)
            summed = (np.bincount(inv, cc.real, len(uniq)) + 1j * np.bincount(inv, cc.imag, len(uniq)))
            hashes.append(h[first])
            coeffs.append(summed)
            rows.append(E1[sl][ii[first]] + E2[jj[first]])
    if not hashes:
        return FTSeries(F.lattice, {}, cap, fcap, overflow=dropped, prune=min(F.prune, G.prune))
    H = np.concatenate(hashes)
    C = np.concatenate(coeffs)
    R = np.concatenate(rows)
    hv = np.ascontiguousarray(H).view(np.dtype((np.void, 16))).ravel()
    uniq, first, inv = np.unique(hv, return_index=True, return_inverse=True)
    total = np.bincount(inv, C.real, len(uniq)) + 1j * np.bincount(inv, C.imag, len(uniq))
    reps = R[first]
    if not np.array_equal(reps[inv], R):
        raise InvariantViolation("hash collision in packed bracket")
    modes = pF.modes
    out = {}
    for row, c in zip(reps, total):
        a = tuple(int(m) for m in np.repeat(modes, row[4:4 + M]))
        b = tuple(int(m) for m in np.repeat(modes, row[4 + M:]))
        out[((int(row[0]), int(row[1])), (int(row[2]), int(row[3])), a, b)] = c
    return FTSeries(F.lattice, out, cap, fcap, overflow=dropped, prune=min(F.prune, G.prune))


def multiply(F: FTSeries, G: FTSeries) -> FTSeries:
    """Truncated product of two series."""
    F._check(G)
    cap = min(F.degree_cap, G.degree_cap)
    fcap = min(F.fourier_cap, G.fourier_cap)
    left, right = defaultdict(list), defaultdict(list)
    for S, grp in ((F, left), (G, right)):
        for key, c in S._terms.items():
            grp[key_degree(key)].append((*key, c))
    out = defaultdict(complex)
    dropped = _accumulate(out, left, right, 1.0, cap, fcap)
    return FTSeries(F.lattice, out, cap, fcap, overflow=dropped, prune=min(F.prune, G.prune))


# structural predicates ----------------------------------------------------

def _pair_of(F: FTSeries, pair):
    pair = pair or F.lattice.pair
    if pair is None:
        raise ContractError("compact form needs a tangential pair")
    return pair


def is_compact_form(F: FTSeries, pair=None):
    """``k1 n1 + k2 n2 + sum (alpha_n - beta_n) n == 0`` on every term."""
    n1, n2 = _pair_of(F, pair)
    bad = [key for key in F._terms
           if key[0][0] * n1 + key[0][1] * n2 + sum(key[2]) - sum(key[3]) != 0]
    return (not bad, bad)


def is_gauge_invariant(F: FTSeries):
    """``k1 + k2 + |alpha| - |beta| == 0`` on every term."""
    bad = [key for key in F._terms if key[0][0] + key[0][1] + len(key[2]) - len(key[3]) != 0]
    return (not bad, bad)


def special_form_violations(F: FTSeries) -> list:
    """Terms ``e^{i<k,theta>} z_n zbar_n`` (k != 0) or ``z_n zbar_m`` (k = 0, n != m)."""
    bad = []
    for key in F._terms:
        k, l, a, b = key
        if l != (0, 0) or len(a) != 1 or len(b) != 1:
            continue
        if k != (0, 0) and a == b:
            bad.append(key)
        elif k == (0, 0) and a != b:
            bad.append(key)
    return bad


def assert_special_form(F: FTSeries, pair=None) -> bool:
    """Special-form check for a series already in compact and gauge form.

    Raises :class:`ContractError` naming the failing predicate when the
    precondition does not hold.
    """
    ok, bad = is_compact_form(F, pair)
    if not ok:
        raise ContractError(f"compact form fails on {len(bad)} terms, e.g. {bad[0]}")
    ok, bad = is_gauge_invariant(F)
    if not ok:
        raise ContractError(f"gauge invariance fails on {len(bad)} terms, e.g. {bad[0]}")
    return not special_form_violations(F)


def in_class_A(F: FTSeries, pair=None) -> bool:
    return is_compact_form(F, pair)[0] and is_gauge_invariant(F)[0]


# sequence norms -----------------------------------------------------------

def convolution(w: Mapping[int, complex], v: Mapping[int, complex], j_max: int | None = None) -> dict:
    """``(w * v)_n = sum_m w_{n-m} v_m`` restricted to ``0 < |n| <= j_max``."""
    out = defaultdict(complex)
    for n1, a in w.items():
        for n2, b in v.items():
            n = n1 + n2
            if n == 0 or (j_max is not None and abs(n) > j_max):
                continue
            out[n] += a * b
    return {n: c for n, c in sorted(out.items()) if c != 0}


def norm_ap(w: Mapping[int, complex], a: float, p: float) -> float:
    """``sqrt(sum |w_n|^2 |n|^(2p) exp(2a|n|))``."""
    total = 0.0
    for n, c in w.items():
        if n == 0:
            continue
        total += abs(c) ** 2 * abs(n) ** (2 * p) * math.exp(2 * a * abs(n))
    return math.sqrt(total)


@dataclass(frozen=True)
class WeightedNorms:
    """Norm parameters for phase-space domains ``D(s, r)``."""

    a: float = 0.1
    p: float = 2.0
    s: float = 1.0
    r: float = 1.0
    q: float | None = None
    delta: float = 1.0
    d: float = 2.0

    def __post_init__(self):
        if self.q is None:
            object.__setattr__(self, "q", self.p - 1.0)
        if self.a <= 0 or self.s <= 0 or self.r <= 0:
            raise ConfigurationError("a, s and r must be positive")
        if self.p <= 1.5:
            raise ConfigurationError("p must exceed 3/2")
        if abs(self.q - (self.p - 1.0)) > 1e-12:
            raise ConfigurationError("q must equal p - 1")
        if self.p - self.q > self.delta + 1e-12 or abs(self.delta - (self.d - 1.0)) > 1e-12:
            raise ConfigurationError("need p - q <= delta = d - 1")

    def weights(self, modes, exponent: float) -> np.ndarray:
        m = np.abs(np.asarray(modes, dtype=float))
        return m ** exponent * np.exp(self.a * m)


def vector_field_norm(X, norms: WeightedNorms, modes=None) -> float:
    """``|X| + |Y|/r^2 + ||U||_{a,q}/r + ||V||_{a,q}/r``.

    ``X`` is one bundle ``(X_theta, X_I, X_z, X_zbar)`` or a sequence of
    bundles, in which case the supremum over the bundles is returned.
    ``X_z``/``X_zbar`` are mappings ``mode -> value`` or arrays aligned with
    ``modes``.
    """
    if isinstance(X, tuple) and len(X) == 4 and not isinstance(X[0], tuple):
        X = [X]
    X = list(X)
    if not X:
        raise ConfigurationError("empty sample grid for vector-field norm")
    best = 0.0
    for xt, xi, xz, xzb in X:
        val = float(np.sum(np.abs(np.atleast_1d(xt)))) + float(np.sum(np.abs(np.atleast_1d(xi)))) / norms.r ** 2
        for comp in (xz, xzb):
            if comp is None:
                continue
            if isinstance(comp, Mapping):
                w = dict(comp)
            else:
                if modes is None:
                    raise ConfigurationError("modes required for array components")
                w = dict(zip(modes, np.asarray(comp)))
            val += norm_ap(w, norms.a, norms.q) / norms.r
        best = max(best, val)
    return best


@dataclass
class SampleGrid:
    """Fixed sample points of ``D(s, r)`` on the real torus.

    ``n_angles`` points of a Kronecker sequence on the 2-torus times
    ``n_radii`` radial shells; each shell places ``|I| = rho^2 r^2`` and
    ``||z||_{a,p} = rho r`` with fixed pseudo-random phases.
    """

    n_angles: int = 32
    n_radii: int = 8
    seed: int = 0
    points: dict = field(default_factory=dict)

    def build(self, lattice: ModeLattice, norms: WeightedNorms) -> dict:
        if self.n_angles < 1 or self.n_radii < 1:
            raise ConfigurationError("empty sample grid for vector-field norm")
        rng = np.random.default_rng(self.seed)
        modes = lattice.modes
        normal = np.array([j in lattice.normal_modes for j in modes])
        golden = np.array([0.7548776662466927, 0.5698402909980532])
        angles = 2 * np.pi * ((np.arange(1, self.n_angles + 1)[:, None] * golden[None, :]) % 1.0)
        rhos = np.arange(1, self.n_radii + 1) / self.n_radii
        theta, I, z = [], [], []
        wp = norms.weights(modes, norms.p)
        for rho in rhos:
            for ang in angles:
                dirI = rng.uniform(0.2, 1.0, 2)
                dirI /= dirI.sum()
                amp = rng.uniform(0.5, 1.0, len(modes)) * normal
                amp = amp / wp
                scale = np.sqrt(np.sum((amp * wp) ** 2))
                phase = np.exp(2j * np.pi * rng.uniform(size=len(modes)))
                theta.append(ang)
                I.append(rho ** 2 * norms.r ** 2 * dirI)
                z.append(rho * norms.r * amp / scale * phase)
        z = np.array(z)
        return {"theta": np.array(theta), "I": np.array(I), "z": z, "zbar": z.conj(), "modes": modes}


def hamiltonian_vector_field(P: FTSeries, theta, I, z, zbar, angle_sign: int = 1) -> dict:
    """Components of ``X_P`` under the mixed structure at a batch of points."""
    g = P.evaluator().gradient(np.atleast_2d(theta), np.atleast_2d(I), np.atleast_2d(z), np.atleast_2d(zbar))
    return {
        "theta": angle_sign * g["I"],
        "I": -angle_sign * g["theta"],
        "z": -1j * g["zbar"],
        "zbar": 1j * g["z"],
    }


def series_vector_field_norm(P: FTSeries, norms: WeightedNorms, grid: SampleGrid | None = None) -> float:
    """Sup of the weighted norm of ``X_P`` over a fixed grid of ``D(s, r)``."""
    grid = grid or SampleGrid()
    pts = grid.build(P.lattice, norms)
    if len(P) == 0:
        return 0.0
    X = hamiltonian_vector_field(P, pts["theta"], pts["I"], pts["z"], pts["zbar"])
    modes = pts["modes"]
    wq = norms.weights(modes, norms.q)
    val = (np.abs(X["theta"]).sum(axis=1) + np.abs(X["I"]).sum(axis=1) / norms.r ** 2
           + np.sqrt((np.abs(X["z"]) ** 2 * wq ** 2).sum(axis=1)) / norms.r
           + np.sqrt((np.abs(X["zbar"]) ** 2 * wq ** 2).sum(axis=1)) / norms.r)
    return float(val.max())
