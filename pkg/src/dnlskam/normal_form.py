"""Order-four partial Birkhoff normal form of the lattice Hamiltonian."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .dnls_model import LatticeHamiltonian, g_kernel
from .errors import DomainError, InvariantViolation
from .ft_algebra import (FTSeries, LATTICE_QQBAR, ModeLattice, key_degree, poisson_bracket,
                         validate_pair)


class LieSeriesWarning(UserWarning):
    """Lie-series terms grew for three consecutive orders."""


@dataclass(frozen=True)
class QuadrupleClass:
    """Membership of ``(i, j, k, l)`` in the diagonal set and the Delta sets.

    ``delta`` is the number of components outside the tangential pair,
    capped at 3 (so ``delta == 3`` means "at least three").
    """

    quadruple: tuple[int, int, int, int]
    delta: int
    diagonal: bool

    @property
    def tags(self) -> frozenset:
        out = {f"Delta{self.delta}"}
        if self.diagonal:
            out.add("N_diag")
        return frozenset(out)

    @property
    def in_generator_support(self) -> bool:
        """Membership in ``(Delta0 \\ N) u Delta1 u (Delta2 \\ N)``."""
        return self.delta == 1 or (self.delta in (0, 2) and not self.diagonal)

    @property
    def averaged(self) -> bool:
        """Diagonal terms kept in the integrable quartic part."""
        return self.diagonal and self.delta in (0, 2)


def classify(i: int, j: int, k: int, l: int, pair) -> QuadrupleClass:
    if i + j - k - l != 0:
        raise DomainError(f"momentum condition fails for {(i, j, k, l)}")
    tangential = set(pair)
    outside = sum(1 for m in (i, j, k, l) if m not in tangential)
    diagonal = sorted((i, j)) == sorted((k, l))
    return QuadrupleClass((i, j, k, l), min(outside, 3), diagonal)


def small_divisor(i: int, j: int, k: int, l: int) -> int:
    """``i^2 + j^2 - k^2 - l^2``, checked against ``2 (j - k)(j - l)``."""
    if i + j - k - l != 0:
        raise DomainError(f"momentum condition fails for {(i, j, k, l)}")
    d = i * i + j * j - k * k - l * l
    if d != 2 * (j - k) * (j - l):
        raise InvariantViolation(f"divisor factorization fails at {(i, j, k, l)}")
    return d


def generator_coefficient(i: int, j: int, k: int, l: int, pair) -> complex:
    """``i F_ijkl`` for one ordered quadruple (zero off the generator support)."""
    cls = classify(i, j, k, l, pair)
    if not cls.in_generator_support:
        return 0.0
    d = small_divisor(i, j, k, l)
    if d == 0:
        raise InvariantViolation(f"zero divisor on the generator support at {(i, j, k, l)}")
    return -j * g_kernel(i, j, k, l) / d


def _monomial_class(key, pair) -> QuadrupleClass:
    _, _, a, b = key
    return classify(a[0], a[1], b[0], b[1], pair)


def birkhoff_generator(G: FTSeries, pair=None) -> FTSeries:
    """Generator ``F`` with ``{Lambda, F} + G`` free of terms on the support.

    Per canonical monomial ``q_i q_j qbar_k qbar_l`` the coefficient is
    ``i G_c / (i^2 + j^2 - k^2 - l^2)``.
    """
    pair = validate_pair(pair or G.lattice.pair)
    terms = {}
    for key, c in G.terms.items():
        if key_degree(key) != 4 or len(key[2]) != 2:
            raise DomainError("generator expects the quartic lattice series")
        cls = _monomial_class(key, pair)
        if not cls.in_generator_support:
            continue
        a, b = key[2], key[3]
        d = small_divisor(a[0], a[1], b[0], b[1])
        if d == 0:
            raise InvariantViolation(f"zero divisor on the generator support at {a + b}")
        terms[key] = 1j * c / d
    return FTSeries(G.lattice, terms, G.degree_cap, G.fourier_cap)


@dataclass
class LieResult:
    series: FTSeries
    overflow: int
    term_norms: list
    warning: bool


def lie_transform(H: FTSeries, F: FTSeries, order_cap: int = 3, structure: str = LATTICE_QQBAR,
                  angle_sign: int = 1, report: bool = False, term_filter=None):
    """``sum_{m <= order_cap} ad_F^m(H) / m!`` with ``ad_F(X) = {X, F}``.

    Returns the transformed series (its ``overflow`` counts every dropped
    product); with ``report=True`` a :class:`LieResult` is returned instead.
    ``term_filter`` (series -> series) is applied to every increment before
    it is added and bracketed again.
    """
    if order_cap < 2:
        raise DomainError("order_cap must be at least 2")
    total = H
    term = H
    overflow = 0
    norms = [H.l1()]
    for m in range(1, order_cap + 1):
        if len(term) == 0 or len(F) == 0:
            break
        term = poisson_bracket(term, F, structure, angle_sign)
        overflow += term.overflow
        term = term / m
        if term_filter is not None:
            term = term_filter(term)
        norms.append(term.l1())
        total = total + term
    growth = [norms[i + 1] > norms[i] for i in range(1, len(norms) - 1)]
    warn = any(all(growth[i:i + 3]) for i in range(len(growth) - 2))
    if warn:
        warnings.warn("Lie series terms grow for three consecutive orders", LieSeriesWarning)
    out = FTSeries(total.lattice, total.terms, total.degree_cap, total.fourier_cap, overflow=overflow,
                   prune=total.prune)
    if report:
        return LieResult(out, overflow, norms, warn)
    return out


@dataclass
class BirkhoffResult:
    Lambda: FTSeries
    G_bar: FTSeries
    G_hat: FTSeries
    K: FTSeries
    F_generator: FTSeries
    overflow_count: int
    pair: tuple = (1, 5)
    extras: dict = field(default_factory=dict)

    @property
    def lattice(self) -> ModeLattice:
        return self.Lambda.lattice

    def transformed(self) -> FTSeries:
        return self.Lambda + self.G_bar + self.G_hat + self.K

    def save(self, directory) -> Path:
        """Write one JSON file per series plus ``manifest.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = {}
        for name in ("Lambda", "G_bar", "G_hat", "K", "F_generator"):
            path = directory / f"{name}.json"
            path.write_text(getattr(self, name).to_json())
            files[name] = path.name
        manifest = {
            "pair": list(self.pair),
            "lattice": self.lattice.header(),
            "degree_cap": self.Lambda.degree_cap,
            "fourier_cap": self.Lambda.fourier_cap,
            "overflow_count": self.overflow_count,
            "files": files,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return directory

    @classmethod
    def load(cls, directory) -> "BirkhoffResult":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        parts = {name: FTSeries.from_json((directory / fn).read_text())
                 for name, fn in manifest["files"].items()}
        return cls(overflow_count=manifest["overflow_count"], pair=tuple(manifest["pair"]), **parts)


def split_quartic(G: FTSeries, pair) -> tuple[FTSeries, FTSeries]:
    """(diagonal terms on Delta0 u Delta2, terms on Delta3)."""
    bar = G.filter(lambda key: _monomial_class(key, pair).averaged)
    hat = G.filter(lambda key: _monomial_class(key, pair).delta == 3)
    return bar, hat


def normal_form_4(H: LatticeHamiltonian, pair=None, order_cap: int = 3) -> BirkhoffResult:
    """Decompose ``H o Gamma = Lambda + G_bar + G_hat + K``."""
    pair = validate_pair(pair or H.lattice.pair)
    F = birkhoff_generator(H.G, pair)
    G_bar, G_hat = split_quartic(H.G, pair)
    new = lie_transform(H.H, F, order_cap)
    K = new - H.Lambda - G_bar - G_hat
    return BirkhoffResult(H.Lambda, G_bar, G_hat, K, F, new.overflow, pair)


def homological_residual(H: LatticeHamiltonian, result: BirkhoffResult) -> float:
    """Coefficientwise ``max |{Lambda, F} + G - G_bar - G_hat|``."""
    lhs = poisson_bracket(H.Lambda, result.F_generator, LATTICE_QQBAR) + H.G
    return lhs.max_diff(result.G_bar + result.G_hat)


def delta1_diagonal_scan(j_max: int = 50, pair=(1, 5)) -> list:
    """Quadruples that are both in Delta1 and diagonal (expected: none)."""
    pair = validate_pair(pair)
    modes = [m for m in range(-j_max, j_max + 1) if m != 0]
    hits = []
    tang = set(pair)
    for i in modes:
        for j in modes:
            for k in modes:
                l = i + j - k
                if l == 0 or abs(l) > j_max:
                    continue
                if sorted((i, j)) != sorted((k, l)):
                    continue
                if sum(1 for m in (i, j, k, l) if m not in tang) == 1:
                    hits.append((i, j, k, l))
    return hits


def averaged_coefficient(a: int, b: int) -> float:
    """Coefficient of ``|q_a|^2 |q_b|^2`` in the averaged quartic part.

    Summing ``(1/2) j G_ijkl`` over the ordered tuples of the monomial gives
    ``a / (4 pi)`` for ``a == b`` and ``(a + b) / (2 pi)`` otherwise.
    """
    if a == b:
        return a / (4 * math.pi)
    return (a + b) / (2 * math.pi)
