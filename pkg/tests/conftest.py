import numpy as np
import pytest
import sympy as sp

from dnlskam.ft_algebra import FTSeries, ModeLattice

E1, E2, I1, I2 = sp.symbols("E1 E2 I1 I2")


def zsym(j):
    return sp.Symbol(f"z_{j}".replace("-", "m"))


def zbsym(j):
    return sp.Symbol(f"zb_{j}".replace("-", "m"))


def to_sympy(F: FTSeries):
    """Series as a Laurent polynomial in E_j = exp(i theta_j), I, z, zbar."""
    expr = 0
    for (k, l, a, b), c in F.terms.items():
        m = sp.nsimplify(0) + complex(c)
        m = m * E1 ** k[0] * E2 ** k[1] * I1 ** l[0] * I2 ** l[1]
        for j in a:
            m = m * zsym(j)
        for j in b:
            m = m * zbsym(j)
        expr += m
    return expr


def sympy_bracket(F: FTSeries, G: FTSeries, angle_sign: int = 1):
    """Mixed bracket by symbolic differentiation (d/dtheta_j = i E_j d/dE_j)."""
    f, g = to_sympy(F), to_sympy(G)
    out = 0
    for E, I in ((E1, I1), (E2, I2)):
        out += angle_sign * (sp.I * E * sp.diff(f, E) * sp.diff(g, I) - sp.diff(f, I) * sp.I * E * sp.diff(g, E))
    for j in F.lattice.modes:
        z, zb = zsym(j), zbsym(j)
        out += -sp.I * (sp.diff(f, z) * sp.diff(g, zb) - sp.diff(f, zb) * sp.diff(g, z))
    return sp.expand(out)


def sympy_terms(expr, lattice: ModeLattice) -> dict:
    """Laurent polynomial back to ``(k, l, alpha, beta) -> coeff``."""
    names = {}
    for j in lattice.modes:
        names[zsym(j)] = ("a", j)
        names[zbsym(j)] = ("b", j)
    out = {}
    for mono, c in sp.expand(expr).as_coefficients_dict().items():
        coeff = complex(c)
        k, l, a, b = [0, 0], [0, 0], [], []
        factors = mono.as_powers_dict() if mono != 1 else {}
        num = 1
        for base, p in factors.items():
            if base.is_number:
                num *= complex(base ** p)
                continue
            p = int(p)
            if base == E1:
                k[0] += p
            elif base == E2:
                k[1] += p
            elif base == I1:
                l[0] += p
            elif base == I2:
                l[1] += p
            else:
                side, j = names[base]
                (a if side == "a" else b).extend([j] * p)
        key = (tuple(k), tuple(l), tuple(sorted(a)), tuple(sorted(b)))
        out[key] = out.get(key, 0) + coeff * num
    return {k: v for k, v in out.items() if abs(v) > 0}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
