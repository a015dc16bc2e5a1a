"""Nondegeneracy, Diophantine conditions and excluded-set measure estimates.

Every small divisor is affine in ``xi``:
``<k, omega(xi)> + <l, Omega(xi)> = a + b . xi``.  The conditions are
enumerated once per frequency map, candidates that cannot fail anywhere in
the parameter box are discarded, and the survivors are evaluated in bulk.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .action_frequency import FrequencyMap, IntegerLead
from .errors import ConfigurationError, DomainError

FAMILIES = ("k", "kj±", "kij±±", "kij+−", "kj(−j)")


@dataclass(frozen=True)
class DiophantineParams:
    gamma: float
    tau: float = 5.0
    K_max: int = 20
    J_max: int = 60
    delta: float = 1.0

    def __post_init__(self):
        if self.tau < 5:
            raise ConfigurationError("tau must be at least 5")
        if self.gamma < 0:
            raise ConfigurationError("gamma must be non-negative")
        if self.K_max < 1 or self.J_max < 1:
            raise ConfigurationError("cutoffs must be positive")


@dataclass
class Violation:
    tag: str
    indices: tuple
    margin: float


@dataclass
class ResonanceReport:
    xi: tuple
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def histogram(self) -> dict:
        counts = Counter(v.tag for v in self.violations)
        return {tag: counts.get(tag, 0) for tag in FAMILIES}


def l_bracket(l: dict, delta: float = 1.0) -> tuple[float, float, int]:
    """``(<l>_delta, |l|_delta, |l|)`` with
    ``<l>_delta = max(1, |sum j l_j| * sum |j|^delta |l_j|)``."""
    size = sum(abs(v) for v in l.values())
    weighted = sum(abs(j) ** delta * abs(v) for j, v in l.items())
    momentum = abs(sum(j * v for j, v in l.items()))
    return max(1.0, momentum * weighted), float(weighted), int(size)


@dataclass
class Nondegeneracy:
    A: np.ndarray
    detA: float
    m: float
    worst: tuple


def nondegeneracy(pair, c: float, epsilon: float, J_max: int = 60, xi_samples=None,
                  cross: float | None = None) -> Nondegeneracy:
    """Jacobian of the reduced tangential map and the spectral constant ``m``.

    ``m`` is the smallest ratio ``|<l, Omega(xi)>| / <l>_1`` over nonzero
    ``|l| <= 2`` supported on ``|j| <= J_max`` and the sampled ``xi``.  The
    vectors ``e_j - e_{-j}`` are excluded: their divisors are controlled by
    the separate ``(j, -j)`` family.
    """
    kw = {} if cross is None else {"cross": cross}
    fmap = FrequencyMap(pair[0], pair[1], c, epsilon, **kw)
    A = fmap.jacobian()
    detA = float(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0])
    if xi_samples is None:
        xi_samples = np.array([[0.0, 0.0], [1e-3, 1e-3], [1.0, 1e-3], [1e-3, 1.0], [1.0, 1.0], [0.5, 0.25]])
    xi_samples = np.atleast_2d(xi_samples)
    modes = np.array([j for j in range(-J_max, J_max + 1) if j not in (0, pair[0], pair[1])])
    best = (math.inf, None)
    for xi in xi_samples:
        Om = fmap.Omega(xi, modes)
        r1 = np.abs(Om) / np.maximum(1.0, modes.astype(float) ** 2)
        i = int(np.argmin(r1))
        if r1[i] < best[0]:
            best = (float(r1[i]), ("e_j", int(modes[i])))
        I, J = np.meshgrid(np.arange(len(modes)), np.arange(len(modes)), indexing="ij")
        upper = I < J
        mi, mj = modes[I[upper]], modes[J[upper]]
        oi, oj = Om[I[upper]], Om[J[upper]]
        w = np.abs(mi) + np.abs(mj)
        plus = np.abs(oi + oj) / np.maximum(1.0, np.abs(mi + mj) * w)
        k = int(np.argmin(plus))
        if plus[k] < best[0]:
            best = (float(plus[k]), ("e_i+e_j", int(mi[k]), int(mj[k])))
        keep = mi != -mj
        minus = np.abs(oi - oj)[keep] / np.maximum(1.0, np.abs(mi - mj)[keep] * w[keep])
        if len(minus):
            k = int(np.argmin(minus))
            if minus[k] < best[0]:
                best = (float(minus[k]), ("e_i-e_j", int(mi[keep][k]), int(mj[keep][k])))
        two = np.abs(2 * Om) / np.maximum(1.0, (2 * modes.astype(float)) * (2 * np.abs(modes)))
        k = int(np.argmin(two))
        if two[k] < best[0]:
            best = (float(two[k]), ("2e_j", int(modes[k])))
    return Nondegeneracy(A, detA, best[0], best[1])


class ResonanceGeometry:
    """All Diophantine conditions for a frequency map as affine functions of ``xi``.

    Conditions are stored as rows ``(a, b1, b2, weight)`` meaning
    ``|a + b . xi| >= gamma * weight``.  With ``box`` given, rows that hold
    on the whole box for ``gamma <= gamma_max`` are dropped.
    """

    def __init__(self, fmap: FrequencyMap, params: DiophantineParams, box=None, gamma_max=None):
        self.fmap = fmap
        self.params = params
        n1, n2 = fmap.pair
        eps4 = fmap.epsilon ** -4
        K, J, tau, dl = params.K_max, params.J_max, params.tau, params.delta
        jac = np.diag(fmap.jacobian())
        om0 = fmap.omega(np.zeros(2))
        kap = fmap.cross
        ks = np.array([(a, b) for a in range(-K, K + 1) for b in range(-K, K + 1)
                       if (a, b) != (0, 0) and abs(a) + abs(b) <= K], dtype=float)
        knorm = np.abs(ks).sum(axis=1)
        kdot_a = ks @ om0
        kdot_b = ks * jac[None, :]
        modes = np.array([j for j in range(-J, J + 1) if j not in (0, n1, n2)], dtype=float)
        Om_a = eps4 * modes ** 2 + kap * fmap.c * modes
        Om_b = np.array([kap * n1, kap * n2])
        gmax = params.gamma if gamma_max is None else gamma_max
        if box is not None:
            lo = np.array([box[0][0], box[1][0]], dtype=float)
            hi = np.array([box[0][1], box[1][1]], dtype=float)
        rows, tags, idx = [], [], []

        def add(tag, a, b, w, ind):
            a = np.asarray(a, dtype=float)
            b = np.asarray(b, dtype=float)
            w = np.asarray(w, dtype=float)
            if box is not None:
                # smallest |a + b.xi| over the box is 0 if the sign changes
                c1 = a + np.minimum(b[:, 0] * lo[0], b[:, 0] * hi[0]) + np.minimum(b[:, 1] * lo[1], b[:, 1] * hi[1])
                c2 = a + np.maximum(b[:, 0] * lo[0], b[:, 0] * hi[0]) + np.maximum(b[:, 1] * lo[1], b[:, 1] * hi[1])
                dist = np.where((c1 <= 0) & (c2 >= 0), 0.0, np.minimum(np.abs(c1), np.abs(c2)))
                sel = dist < gmax * w * (1 + 1e-9) + 1e-300
            else:
                sel = np.ones(len(a), dtype=bool)
            if sel.any():
                rows.append(np.column_stack([a[sel], b[sel], w[sel]]))
                tags.extend([tag] * int(sel.sum()))
                idx.extend(ind[i] for i in np.nonzero(sel)[0])

        kt = [tuple(int(v) for v in k) for k in ks]
        add("k", kdot_a, kdot_b, knorm ** -tau, [(k,) for k in kt])
        for s in (1, -1):
            a = kdot_a[:, None] + s * Om_a[None, :]
            b = np.broadcast_to(kdot_b[:, None, :] + s * Om_b[None, None, :], a.shape + (2,))
            w = (np.abs(modes)[None, :] ** (1 + dl)) / knorm[:, None] ** tau
            ind = [(k, ("+" if s > 0 else "-"), int(j)) for k in kt for j in modes]
            add("kj±", a.ravel(), b.reshape(-1, 2), w.ravel(), ind)
        ii, jj = np.triu_indices(len(modes))
        mi, mj = modes[ii], modes[jj]
        wij = (np.abs(mi) + np.abs(mj)) * (np.abs(mi) ** dl + np.abs(mj) ** dl)
        for n, k in enumerate(kt):
            for s in (1, -1):
                a = kdot_a[n] + s * (Om_a[ii] + Om_a[jj])
                b = np.tile(kdot_b[n] + 2 * s * Om_b, (len(ii), 1))
                add("kij±±", a, b, wij / knorm[n] ** tau,
                    [(k, "++" if s > 0 else "--", int(p), int(q)) for p, q in zip(mi, mj)])
        i2, j2 = np.nonzero(np.abs(modes)[:, None] != np.abs(modes)[None, :])
        pi_, pj = modes[i2], modes[j2]
        wd = np.abs(np.abs(pi_) - np.abs(pj)) * (np.abs(pi_) ** dl + np.abs(pj) ** dl)
        for n, k in enumerate(kt):
            a = kdot_a[n] + Om_a[i2] - Om_a[j2]
            b = np.tile(kdot_b[n], (len(i2), 1))
            add("kij+−", a, b, wd / knorm[n] ** tau, [(k, int(p), int(q)) for p, q in zip(pi_, pj)])
        cutoff = 0.5 * max(abs(n1), abs(n2))
        pos = modes[modes > 0]
        for n, k in enumerate(kt):
            js = pos[np.isin(-pos, modes) & (pos <= cutoff * knorm[n])]
            for s in (1, -1):
                jv = s * js
                if not len(jv):
                    continue
                a = kdot_a[n] + kap * fmap.c * 2 * jv
                b = np.tile(kdot_b[n], (len(jv), 1))
                add("kj(−j)", a, b, np.abs(jv) ** dl / knorm[n] ** tau, [(k, int(j)) for j in jv])
        if rows:
            R = np.vstack(rows)
        else:
            R = np.zeros((0, 4))
        self.a, self.b, self.w = R[:, 0], R[:, 1:3], R[:, 3]
        self.tags = np.array(tags, dtype=object)
        self.indices = idx

    def __len__(self):
        return len(self.a)

    def values(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return np.abs(self.a[None, :] + xi @ self.b.T)

    def violated(self, xi, gamma: float) -> np.ndarray:
        """Boolean ``(n_points, n_conditions)`` matrix of failing conditions."""
        return self.values(xi) < gamma * self.w[None, :]

    def l_brackets(self) -> np.ndarray:
        out = np.empty(len(self.a))
        for n, (tag, ind) in enumerate(zip(self.tags, self.indices)):
            out[n] = l_bracket(_l_vector(tag, ind), 1.0)[0]
        return out

    def k_norms(self) -> np.ndarray:
        return np.array([abs(ind[0][0]) + abs(ind[0][1]) for ind in self.indices], dtype=float)


def _l_vector(tag, ind) -> dict:
    if tag == "k":
        return {}
    if tag == "kj±":
        return {ind[2]: 1 if ind[1] == "+" else -1}
    if tag == "kij±±":
        s = 1 if ind[1] == "++" else -1
        out = Counter()
        out[ind[2]] += s
        out[ind[3]] += s
        return dict(out)
    if tag == "kij+−":
        return {ind[1]: 1, ind[2]: -1}
    return {ind[1]: 1, -ind[1]: -1}


def diophantine_report(xi, fmap: FrequencyMap, params: DiophantineParams,
                       geometry: ResonanceGeometry | None = None) -> ResonanceReport:
    """Every failing condition at ``xi`` with margin ``lhs - rhs`` (negative)."""
    geo = geometry or ResonanceGeometry(fmap, params, box=((xi[0], xi[0]), (xi[1], xi[1])))
    vals = geo.values(xi)[0]
    rhs = params.gamma * geo.w
    bad = np.nonzero(vals < rhs)[0]
    rep = ResonanceReport(tuple(float(v) for v in xi))
    for n in bad:
        rep.violations.append(Violation(str(geo.tags[n]), geo.indices[n], float(vals[n] - rhs[n])))
    return rep


def stratified_samples(box, sample_count: int, rng_seed: int) -> np.ndarray:
    """One uniform point per cell of a near-square grid covering the box."""
    if sample_count < 100:
        raise ConfigurationError("sample_count must be at least 100")
    rng = np.random.default_rng(rng_seed)
    nx = int(math.floor(math.sqrt(sample_count)))
    ny = int(math.ceil(sample_count / nx))
    cells = np.array([(i, j) for i in range(nx) for j in range(ny)])[:sample_count]
    u = (cells + rng.uniform(size=cells.shape)) / np.array([nx, ny])
    lo = np.array([box[0][0], box[1][0]])
    hi = np.array([box[0][1], box[1][1]])
    return lo + u * (hi - lo)


def box_area(box) -> float:
    return float((box[0][1] - box[0][0]) * (box[1][1] - box[1][0]))


def measure_excluded(box, fmap: FrequencyMap, params: DiophantineParams, sample_count: int = 10_000,
                     rng_seed: int = 0, geometry: ResonanceGeometry | None = None,
                     samples=None) -> tuple[float, float]:
    """Monte-Carlo measure of the resonant part of ``box`` and its 95% half-width."""
    pts = stratified_samples(box, sample_count, rng_seed) if samples is None else samples
    if params.gamma == 0:
        return 0.0, 0.0
    geo = geometry or ResonanceGeometry(fmap, params, box)
    hit = np.zeros(len(pts), dtype=bool)
    for start in range(0, len(pts), 512):
        chunk = pts[start:start + 512]
        hit[start:start + 512] = geo.violated(chunk, params.gamma).any(axis=1)
    p = hit.mean()
    area = box_area(box)
    half = 1.96 * math.sqrt(max(p * (1 - p), 1.0 / len(pts) ** 2) / len(pts))
    return float(p * area), float(half * area)


def measure_scan(box, fmap: FrequencyMap, gammas, tau=5.0, K_max=20, J_max=60, sample_count=10_000,
                 rng_seed=0) -> dict:
    """Excluded measure for several ``gamma`` on shared samples, plus the
    per-family histogram of failing conditions."""
    gmax = max(gammas)
    geo = ResonanceGeometry(fmap, DiophantineParams(gmax, tau, K_max, J_max), box, gamma_max=gmax)
    pts = stratified_samples(box, sample_count, rng_seed)
    rows = []
    hist = {}
    for g in gammas:
        params = DiophantineParams(g, tau, K_max, J_max)
        est, ci = measure_excluded(box, fmap, params, sample_count, rng_seed, geo, pts)
        counts = Counter()
        if g > 0:
            for start in range(0, len(pts), 512):
                v = geo.violated(pts[start:start + 512], g)
                for n in np.nonzero(v.any(axis=0))[0]:
                    counts[geo.tags[n]] += int(v[:, n].sum())
        rows.append({"gamma": g, "estimate": est, "ci": ci})
        hist[repr(float(g))] = {tag: counts.get(tag, 0) for tag in FAMILIES}
    return {"rows": rows, "histogram": hist, "conditions": len(geo)}


def fit_through_origin(x, y) -> tuple[float, float]:
    """Slope and uncentered R^2 of ``y ~ slope * x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope = float(x @ y / (x @ x))
    ss_res = float(np.sum((y - slope * x) ** 2))
    ss_tot = float(np.sum(y ** 2))
    return slope, (1.0 - ss_res / ss_tot) if ss_tot > 0 else 0.0


def pruning_constant(fmap: FrequencyMap, m: float, box) -> float:
    """``4 (1 + sup |omega|) / m`` over the corners of the box."""
    corners = np.array([[box[0][i], box[1][j]] for i in (0, 1) for j in (0, 1)])
    sup = max(float(np.abs(fmap.omega(c)).max()) for c in corners)
    return 4.0 * (1.0 + sup) / m


def sublevel_measure(g, h: float, N: int, interval=(-1.0, 1.0), d: float = 1.0,
                     resolution: int = 200_001) -> tuple[float, float]:
    """Length of ``{u in interval : |g(u)| <= h}`` and the bound ``c h^(1/N)``.

    The set is located on a fine grid and its endpoints are refined by
    linear interpolation of ``|g| - h``.
    """
    if h < 0:
        raise DomainError("h must be non-negative")
    c = 2.0 * (sum(range(2, N + 1)) + 1.0 / d)
    bound = c * h ** (1.0 / N)
    if h == 0:
        return 0.0, bound
    u = np.linspace(interval[0], interval[1], resolution)
    f = np.abs(np.asarray(g(u), dtype=float)) - h
    inside = f <= 0
    du = u[1] - u[0]
    total = 0.0
    for n in range(len(u) - 1):
        a, b = inside[n], inside[n + 1]
        if a and b:
            total += du
        elif a != b:
            frac = f[n] / (f[n] - f[n + 1])
            total += du * (1 - frac) if b else du * frac
    return total, bound


def histogram_json(scan: dict) -> str:
    return json.dumps(scan["histogram"], indent=2, sort_keys=True)


def family_floor(gamma: float, tau: float, delta: float, k, alpha, beta) -> tuple[str, float]:
    """Condition family and right-hand side for the divisor of
    ``exp(i<k,theta>) z^alpha zbar^beta``."""
    kn = max(abs(k[0]) + abs(k[1]), 1) ** tau
    zs = list(alpha) + list(beta)
    if not zs or (len(alpha) == 1 and alpha == beta):
        return "k", gamma / kn
    if len(zs) == 1:
        j = abs(zs[0])
        return "kj±", gamma * j ** (1 + delta) / kn
    i, j = abs(zs[0]), abs(zs[1])
    if len(alpha) == 2 or len(beta) == 2:
        return "kij±±", gamma * (i + j) * (i ** delta + j ** delta) / kn
    if i != j:
        return "kij+−", gamma * abs(i - j) * (i ** delta + j ** delta) / kn
    return "kj(−j)", gamma * j ** delta / kn


def admissible(k, l: dict, pair, angle_sign: int = 1) -> bool:
    """Whether the divisor ``<k, omega> + <l, Omega>`` belongs to a monomial
    that satisfies the momentum and gauge relations of the class A.

    For ``angle_sign = s`` the monomial ``exp(i<k,theta>) z^alpha zbar^beta``
    has divisor ``s <k, omega> - <alpha - beta, Omega>``, so ``l`` pairs with
    ``alpha - beta = -s l`` up to an overall sign.
    """
    n1, n2 = pair
    mom = n1 * k[0] + n2 * k[1]
    return (mom == angle_sign * sum(j * v for j, v in l.items())
            and k[0] + k[1] == angle_sign * sum(l.values()))


def point_violations(omega, Omega: dict, params: DiophantineParams, pair=None,
                     admissible_only: bool = False, angle_sign: int = 1,
                     lead: IntegerLead | None = None) -> list:
    """Failing conditions for fixed numerical frequencies ``omega``, ``Omega_j``.

    Same families and cutoffs as :func:`diophantine_report`, evaluated
    directly on the numbers instead of on an affine frequency map.  With
    ``admissible_only`` the conditions are restricted to :func:`admissible`
    ones.  With ``lead`` the frequencies are corrections to it and every
    divisor combines the integer lead parts before scaling.
    """
    if admissible_only:
        full = point_violations(omega, Omega, params, pair, lead=lead)
        return [v for v in full if admissible(v.indices[0], _l_vector(v.tag, v.indices), pair, angle_sign)]
    K, tau, dl, g = params.K_max, params.tau, params.delta, params.gamma
    modes = np.array(sorted(j for j in Omega if abs(j) <= params.J_max), dtype=float)
    Om = np.array([Omega[int(j)] for j in modes], dtype=float)
    scale = lead.scale if lead is not None else 0.0
    wi = lead.omega if lead is not None else (0, 0)
    Oi = np.array([lead.Omega.get(int(j), 0) if lead is not None else 0 for j in modes], dtype=np.int64)
    ks = [(a, b) for a in range(-K, K + 1) for b in range(-K, K + 1) if (a, b) != (0, 0) and abs(a) + abs(b) <= K]
    cutoff = 0.5 * max(abs(pair[0]), abs(pair[1])) if pair else math.inf
    ii, jj = np.triu_indices(len(modes))
    i2, j2 = np.nonzero(np.abs(modes)[:, None] != np.abs(modes)[None, :])
    wij = (np.abs(modes[ii]) + np.abs(modes[jj])) * (np.abs(modes[ii]) ** dl + np.abs(modes[jj]) ** dl)
    wd = np.abs(np.abs(modes[i2]) - np.abs(modes[j2])) * (np.abs(modes[i2]) ** dl + np.abs(modes[j2]) ** dl)
    index = {int(j): n for n, j in enumerate(modes)}
    out = []

    def report(tag, vals, rhs, labels):
        for n in np.nonzero(vals < rhs)[0]:
            out.append(Violation(tag, labels(n), float(vals[n] - rhs[n])))

    for k in ks:
        kn = float(abs(k[0]) + abs(k[1])) ** tau
        kw = float(k[0] * omega[0] + k[1] * omega[1])
        kwi = k[0] * wi[0] + k[1] * wi[1]
        v = abs(scale * kwi + kw)
        if v < g / kn:
            out.append(Violation("k", (k,), v - g / kn))
        for s, sg in ((1, "+"), (-1, "-")):
            report("kj±", np.abs(scale * (kwi + s * Oi) + (kw + s * Om)), g * np.abs(modes) ** (1 + dl) / kn,
                   lambda n, sg=sg: (k, sg, int(modes[n])))
            report("kij±±", np.abs(scale * (kwi + s * (Oi[ii] + Oi[jj])) + (kw + s * (Om[ii] + Om[jj]))),
                   g * wij / kn, lambda n, sg=sg: (k, sg * 2, int(modes[ii[n]]), int(modes[jj[n]])))
        report("kij+−", np.abs(scale * (kwi + Oi[i2] - Oi[j2]) + (kw + Om[i2] - Om[j2])), g * wd / kn,
               lambda n: (k, int(modes[i2[n]]), int(modes[j2[n]])))
        for j in modes:
            if j > 0 and -j in index and j <= cutoff * (abs(k[0]) + abs(k[1])):
                for jv in (j, -j):
                    a, b = index[int(jv)], index[int(-jv)]
                    val = abs(scale * (kwi + Oi[a] - Oi[b]) + (kw + Om[a] - Om[b]))
                    rhs = g * abs(jv) ** dl / kn
                    if val < rhs:
                        out.append(Violation("kj(−j)", (k, int(jv)), val - rhs))
    return out


def spectral_floor(Omega: dict, exclude_antipodal: bool = True) -> tuple[float, tuple]:
    """Smallest ``|<l, Omega>| / <l>_1`` over nonzero ``|l| <= 2`` on the given modes."""
    modes = sorted(Omega)
    best = (math.inf, None)
    for n, i in enumerate(modes):
        for l in ({i: 1}, {i: 2}):
            v = abs(sum(Omega[j] * c for j, c in l.items())) / l_bracket(l)[0]
            if v < best[0]:
                best = (v, tuple(sorted(l.items())))
        for j in modes[n + 1:]:
            for l in ({i: 1, j: 1}, {i: 1, j: -1}):
                if exclude_antipodal and i == -j and l[j] == -1:
                    continue
                v = abs(sum(Omega[m] * c for m, c in l.items())) / l_bracket(l)[0]
                if v < best[0]:
                    best = (v, tuple(sorted(l.items())))
    return best
