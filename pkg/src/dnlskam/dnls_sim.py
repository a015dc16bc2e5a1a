"""Pseudo-spectral integration of ``i u_t + u_xx + i |u|^2 u_x = 0`` on the circle.

The state is kept in lattice normalization ``q_n = sqrt(2 pi) * uhat_n`` with
``u = sum_n uhat_n exp(inx)``, so ``sum |q_n|^2`` is the mass ``int |u|^2 dx``.
The zero mode is pinned to zero after every stage, which integrates the
zero-mean projection of the equation (the same system as the lattice model).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .dnls_model import build_quartic
from .errors import BlowUpError, ConfigurationError, DomainError
from .ft_algebra import ModeLattice, validate_pair
from .normal_form import birkhoff_generator

log = logging.getLogger(__name__)

SQRT_2PI = math.sqrt(2 * math.pi)


@dataclass
class SpectralField:
    """Fourier coefficients in lattice normalization, numpy FFT ordering."""

    n_grid: int
    coeffs: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        if self.n_grid < 8 or self.n_grid & (self.n_grid - 1):
            raise ConfigurationError("n_grid must be a power of two >= 8")
        self.coeffs = np.asarray(self.coeffs, dtype=complex).copy()
        if self.coeffs.shape != (self.n_grid,):
            raise ConfigurationError("coeffs must have length n_grid")
        self.coeffs[0] = 0.0

    @property
    def wavenumbers(self) -> np.ndarray:
        return np.fft.fftfreq(self.n_grid, 1.0 / self.n_grid).round().astype(int)

    @classmethod
    def from_modes(cls, n_grid: int, q: dict, time: float = 0.0) -> "SpectralField":
        coeffs = np.zeros(n_grid, dtype=complex)
        for n, v in q.items():
            if n == 0:
                raise DomainError("zero mode must vanish")
            if abs(n) >= n_grid // 2:
                raise ConfigurationError(f"mode {n} not resolved on a grid of {n_grid}")
            coeffs[n % n_grid] = v
        return cls(n_grid, coeffs, time)

    def mode(self, n: int) -> complex:
        return self.coeffs[n % self.n_grid]

    def mass(self) -> float:
        return float(np.sum(np.abs(self.coeffs) ** 2))

    def physical(self) -> np.ndarray:
        """Grid values of ``u`` at ``x_m = 2 pi m / n_grid``."""
        return np.fft.ifft(self.coeffs) * self.n_grid / SQRT_2PI


@dataclass
class Trajectory:
    times: np.ndarray
    modes: dict
    mass: np.ndarray
    final: SpectralField
    energy_outside: np.ndarray | None = None
    excited: tuple = ()

    @property
    def mass_drift(self) -> float:
        return float(np.max(np.abs(self.mass - self.mass[0])) / self.mass[0]) if self.mass[0] > 0 else 0.0


class _Rhs:
    def __init__(self, n_grid: int, dealias: float):
        self.N = n_grid
        self.k = np.fft.fftfreq(n_grid, 1.0 / n_grid)
        self.mask = np.abs(self.k) < dealias * n_grid / 2
        self.mask[0] = False
        self.lin = -1j * self.k ** 2

    def __call__(self, q):
        u = np.fft.ifft(q) * (self.N / SQRT_2PI)
        ux = np.fft.ifft(1j * self.k * q) * (self.N / SQRT_2PI)
        f = -(u * u.conj()) * ux
        out = np.fft.fft(f) * (SQRT_2PI / self.N)
        out[~self.mask] = 0.0
        return out


def _step_if_rk4(rhs, q, dt, E, E2):
    k1 = dt * rhs(q)
    k2 = dt * rhs(E * (q + 0.5 * k1))
    k3 = dt * rhs(E * q + 0.5 * k2)
    k4 = dt * rhs(E2 * q + E * k3)
    return E2 * q + (E2 * k1 + 2 * E * (k2 + k3) + k4) / 6.0


def _step_strang(rhs, q, dt, E, E2):
    q = E * q
    k1 = dt * rhs(q)
    k2 = dt * rhs(q + 0.5 * k1)
    k3 = dt * rhs(q + 0.5 * k2)
    k4 = dt * rhs(q + k3)
    q = q + (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return E * q


SCHEMES = {"integrating_factor_rk4": _step_if_rk4, "strang_split": _step_strang}


def stability_limit(u0: SpectralField, dealias: float = 2 / 3) -> float:
    """Documented time-step gate: ``dt * K * max|u|^2 <= 2.8`` with ``K`` the
    largest retained wavenumber (RK4 stability on the imaginary axis)."""
    amp = float(np.max(np.abs(u0.physical())) ** 2)
    kmax = dealias * u0.n_grid / 2
    return math.inf if amp == 0 else 2.8 / (kmax * amp)


def integrate(u0: SpectralField, dt: float, T: float, scheme: str = "integrating_factor_rk4",
              watch=(), sample_every: int = 1, excited=(), dealias: float = 2 / 3) -> Trajectory:
    """Advance ``u0`` to time ``T`` and record the watched modes and the mass.

    ``excited`` lists modes whose complement is tracked as
    ``energy_outside`` (mass carried by every other mode).
    """
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    if dt <= 0 or T < 0:
        raise ConfigurationError("dt must be positive and T non-negative")
    if dt > stability_limit(u0, dealias):
        raise ConfigurationError(f"dt={dt} exceeds the stability gate {stability_limit(u0, dealias):.3g}")
    n_steps = int(round(T / dt))
    rhs = _Rhs(u0.n_grid, dealias)
    E = np.exp(rhs.lin * dt / 2)
    E2 = E * E
    step = SCHEMES[scheme]
    q = u0.coeffs.copy()
    q[0] = 0.0
    watch = list(watch)
    idx = [n % u0.n_grid for n in watch]
    outside = np.ones(u0.n_grid, dtype=bool)
    outside[0] = False
    for n in excited:
        outside[n % u0.n_grid] = False
    n_samples = n_steps // sample_every + 1
    times = np.empty(n_samples)
    series = np.empty((n_samples, len(watch)), dtype=complex)
    mass = np.empty(n_samples)
    energy = np.empty(n_samples) if excited else None
    s = 0
    t0 = u0.time
    last_ok = t0
    for n in range(n_steps + 1):
        if n % sample_every == 0:
            times[s] = t0 + n * dt
            series[s] = q[idx]
            a2 = np.abs(q) ** 2
            mass[s] = a2.sum()
            if energy is not None:
                energy[s] = a2[outside].sum()
            if not np.isfinite(mass[s]):
                raise BlowUpError("non-finite state", last_ok)
            last_ok = times[s]
            s += 1
        if n == n_steps:
            break
        q = step(rhs, q, dt, E, E2)
        q[0] = 0.0
    if not np.all(np.isfinite(q)):
        raise BlowUpError("non-finite state", last_ok)
    final = SpectralField(u0.n_grid, q, t0 + n_steps * dt)
    return Trajectory(times[:s], {m: series[:s, i] for i, m in enumerate(watch)}, mass[:s], final,
                      energy[:s] if energy is not None else None, tuple(excited))


def plane_wave_frequency(n: int, A: complex) -> float:
    """Rotation rate ``omega`` of the exact solution ``A exp(i(nx - omega t))``."""
    if n == 0:
        raise DomainError("plane waves need n != 0")
    return n * n + n * abs(A) ** 2


def build_initial_data(xi, pair, correction_order: int = 0, n_grid: int = 64, j_max: int | None = None,
                       theta=(0.0, 0.0), gate: float = 0.05) -> SpectralField:
    """Torus point with actions ``xi`` mapped to physical coordinates.

    Order 0 places ``q_{n_j} = sqrt(xi_j) exp(i theta_j)``; order 1 adds the
    first Lie-series correction ``-i dF/dqbar`` of the Birkhoff generator.
    """
    n1, n2 = validate_pair(pair)
    xi = np.asarray(xi, dtype=float)
    if np.any(xi < 0) or np.linalg.norm(xi) > gate:
        raise DomainError(f"xi={xi.tolist()} outside the small-amplitude gate {gate}")
    if correction_order not in (0, 1):
        raise ConfigurationError("correction_order must be 0 or 1")
    q = {n1: math.sqrt(xi[0]) * np.exp(1j * theta[0]), n2: math.sqrt(xi[1]) * np.exp(1j * theta[1])}
    q = {n: v for n, v in q.items() if v != 0}
    if correction_order == 1:
        j_max = j_max or min(n_grid // 3 - 1, 3 * max(abs(n1), abs(n2)))
        lattice = ModeLattice(j_max, (n1, n2))
        F = birkhoff_generator(build_quartic(lattice, degree_cap=4), (n1, n2))
        vec = np.array([q.get(j, 0.0) for j in lattice.modes], dtype=complex)
        grad = F.evaluator().gradient(np.zeros((1, 2)), np.zeros((1, 2)), vec[None, :], vec.conj()[None, :])
        corr = -1j * grad["zbar"][0]
        q = {j: q.get(j, 0.0) + c for j, c in zip(lattice.modes, corr) if q.get(j, 0.0) + c != 0}
    return SpectralField.from_modes(n_grid, q)


@dataclass
class FrequencyEstimate:
    frequency: float
    leakage: float
    quasi_periodic: bool
    periods: float
    iterations: int = 0
    notes: list = field(default_factory=list)


def _spectrum_at(x, t, w, nu):
    return np.abs(np.sum(w * x * np.exp(1j * nu * t)))


def estimate_frequency(x, t, refine: bool = True, pad: int = 8, refine_steps: int = 3) -> FrequencyEstimate:
    """Rotation rate ``nu`` of a signal dominated by ``A exp(-i nu t)``.

    Hann-windowed zero-padded transform, quadratic peak interpolation and
    optional phase-slope refinement on the demodulated signal.
    """
    x = np.asarray(x, dtype=complex)
    t = np.asarray(t, dtype=float)
    n = len(x)
    if n < 16:
        raise ConfigurationError("need at least 16 samples")
    dt = t[1] - t[0]
    w = np.hanning(n)
    m = pad * n
    spec = np.abs(np.fft.ifft(w * x, m)) * m
    kpk = int(np.argmax(spec))
    y0, y1, y2 = spec[(kpk - 1) % m], spec[kpk], spec[(kpk + 1) % m]
    den = y0 - 2 * y1 + y2
    shift = 0.5 * (y0 - y2) / den if den != 0 else 0.0
    kf = kpk + shift
    if kf > m / 2:
        kf -= m
    nu = 2 * math.pi * kf / (m * dt)
    it = 0
    if refine:
        tc = t - t.mean()
        for it in range(1, refine_steps + 1):
            y = x * np.exp(1j * nu * t)
            phase = np.unwrap(np.angle(y))
            W = w.sum()
            pm = np.sum(w * phase) / W
            slope = np.sum(w * tc * (phase - pm)) / np.sum(w * tc * tc)
            nu = nu - slope
            if abs(slope) < 1e-14 * max(1.0, abs(nu)):
                break
        # keep the NAFF maximum if the phase fit wandered off the peak
        width = 2 * math.pi / (n * dt)
        res = minimize_scalar(lambda v: -_spectrum_at(x, t, w, v), bounds=(nu - 0.1 * width, nu + 0.1 * width),
                              method="bounded", options={"xatol": 1e-13})
        if res.success and _spectrum_at(x, t, w, res.x) > _spectrum_at(x, t, w, nu) * (1 + 1e-12):
            nu = float(res.x)
    peak = _spectrum_at(x, t, w, nu) ** 2
    leak = 1.0 - peak / (w.sum() * np.sum(w * np.abs(x) ** 2)) if np.any(x) else 1.0
    periods = abs(nu) * (t[-1] - t[0]) / (2 * math.pi)
    est = FrequencyEstimate(float(nu), float(max(leak, 0.0)), bool(leak <= 0.5), float(periods), it)
    if leak > 0.5:
        est.notes.append("no dominant peak: signal is not quasi-periodic at this resolution")
    if periods < 64:
        est.notes.append(f"record covers only {periods:.1f} periods (< 64)")
    return est


def extract_frequencies(traj: Trajectory, modes, refine: bool = True) -> dict:
    """Per-mode :class:`FrequencyEstimate` for the watched modes."""
    out = {}
    for n in modes:
        if n not in traj.modes:
            raise ConfigurationError(f"mode {n} was not watched")
        out[n] = estimate_frequency(traj.modes[n], traj.times, refine)
    return out
