"""Bath spectral densities, lineshape functions and noise modulation profiles.

Spectral densities follow the reorganization-energy convention
``lambda = (1/pi) * int_0^inf J(w)/w dw`` so that the Drude-Lorentz form is
``J(w) = 2 lambda gamma w / (w^2 + gamma^2)``, and the lineshape function is

    g(t) = (1/pi) int_0^inf dw J(w)/w^2 [(1 - cos wt) coth(beta w / 2)
                                          + i (sin wt - wt)].

A classical dephasing signal ``beta(t) = alpha sum_j F_j w_j cos(w_j t + psi_j)``
has decoherence integral ``chi(t) = alpha^2 sum_j F_j^2 sin^2(w_j t / 2)``;
:func:`modulation_profile` picks ``F_j`` so that ``chi ~= Re g``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, special

from .model import KB_OVER_HBAR

#: Amplitude scale used with the dedicated Debye profile.
DEBYE_ALPHA = math.sqrt(2 / math.pi)

DEPHASING = "dephasing"
AMPLITUDE = "amplitude"


# Spectral density variants ------------------------------------------------

@dataclass(frozen=True)
class Debye:
    lam: float
    gamma: float

    def __post_init__(self):
        if not (self.lam > 0 and self.gamma > 0):
            raise ValueError("Debye lam and gamma must be positive")


@dataclass(frozen=True)
class PowerLaw:
    """Noise whose power spectrum scales as ``alpha * w**exponent``."""

    alpha: float = 1.0
    exponent: float = 0.0


def OhmicStep(alpha=1.0):
    return PowerLaw(alpha, 1.0)


def White(alpha=1.0):
    return PowerLaw(alpha, 0.0)


def OneOverF(alpha=1.0):
    return PowerLaw(alpha, -1.0)


def OneOverFSquared(alpha=1.0):
    return PowerLaw(alpha, -2.0)


@dataclass(frozen=True)
class B777:
    """Two-component B777 (Adolphs-Renger type) spectral density.

    The tabulated form ``J_AR(w) = S0/(s1+s2) sum_i s_i w^3 exp(-sqrt(w/W_i)) / (7! 2 W_i^4)``
    integrates to the Huang-Rhys factor ``S0``.  :func:`spectral_density`
    returns ``pi w^2 J_AR(w)``, which is the same density in the
    reorganization convention used for Debye baths (units of frequency).
    """

    S0: float = 0.5
    s1: float = 0.8
    s2: float = 0.5
    Omega1: float = 1.0
    Omega2: float = 1.0

    def __post_init__(self):
        if not (self.Omega1 > 0 and self.Omega2 > 0):
            raise ValueError("B777 Omega1 and Omega2 must be positive")

    def huang_rhys_density(self, w):
        w = np.asarray(w, dtype=float)
        total = np.zeros_like(w)
        for s, om in ((self.s1, self.Omega1), (self.s2, self.Omega2)):
            total += s / (math.factorial(7) * 2 * om**4) * w**3 * np.exp(-np.sqrt(w / om))
        return self.S0 / (self.s1 + self.s2) * total


@dataclass(frozen=True)
class Tabulated:
    """Linearly interpolated samples; zero outside the sampled range."""

    omega: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if w.ndim != 1 or w.shape != v.shape or w.size < 2:
            raise ValueError("tabulated spectrum needs matching 1D arrays of length >= 2")
        if np.any(np.diff(w) <= 0) or w[0] < 0:
            raise ValueError("tabulated omega must be strictly increasing and >= 0")
        if np.any(v < 0):
            raise ValueError("tabulated J(omega) must be nonnegative")
        object.__setattr__(self, "omega", w)
        object.__setattr__(self, "values", v)


def read_tabulated_csv(path) -> Tabulated:
    """Read ``omega_rad_per_ms, J`` rows; a non-numeric first row is skipped."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                if rows:
                    raise
    arr = np.array(rows)
    return Tabulated(arr[:, 0], arr[:, 1])


def spectral_density(spec, omega):
    """Evaluate ``J(omega)`` for ``omega >= 0``."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ValueError("spectral density is defined for omega >= 0")
    if isinstance(spec, Debye):
        return 2 * spec.lam * spec.gamma * w / (w**2 + spec.gamma**2)
    if isinstance(spec, B777):
        return np.pi * w**2 * spec.huang_rhys_density(w)
    if isinstance(spec, Tabulated):
        return np.interp(w, spec.omega, spec.values, left=0.0, right=0.0)
    if isinstance(spec, PowerLaw):
        with np.errstate(divide="ignore"):
            return spec.alpha * np.power(w, spec.exponent)
    raise TypeError(f"unsupported spectral density {spec!r}")


def coth_half(beta_omega):
    """coth(x/2), using 2/x + x/6 for x < 1e-8."""
    x = np.asarray(beta_omega, dtype=float)
    small = np.abs(x) < 1e-8
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(small, 2 / np.where(small, x, 1.0) + x / 6, 1 / np.tanh(x / 2))
    return out


# Lineshape function ------------------------------------------------------

@dataclass(frozen=True)
class LineshapeParams:
    """Drude-Lorentz lineshape parameters.

    ``lam`` and ``Lambda`` in rad/ms, ``temperature`` in K.  With
    ``n_matsubara=None`` the number of Matsubara terms is chosen per call.
    """

    lam: float
    Lambda: float
    temperature: float
    n_matsubara: int | None = None

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.Lambda <= 0 or self.lam < 0:
            raise ValueError("need Lambda > 0 and lam >= 0")

    @property
    def thermal_frequency(self) -> float:
        return KB_OVER_HBAR * self.temperature

    @property
    def beta(self) -> float:
        return 1.0 / self.thermal_frequency


MATSUBARA_CAP = 10_000


def _matsubara_count(params: LineshapeParams, t_max: float) -> int:
    """Smallest N whose last term is < 1e-8 of the leading Re g at t_max."""
    if params.n_matsubara is not None:
        return params.n_matsubara
    if t_max <= 0 or params.lam == 0:
        return 0
    beta, lam, Lam = params.beta, params.lam, params.Lambda
    lead = abs(lam / Lam / math.tan(beta * Lam / 2)) * (math.expm1(-Lam * t_max) + Lam * t_max)
    pref = 4 * lam * Lam / beta
    for n in range(1, MATSUBARA_CAP + 1):
        nu = 2 * math.pi * n / beta
        term = pref * (math.expm1(-nu * t_max) + nu * t_max) / (nu * abs(nu**2 - Lam**2))
        if n > 1 and term < 1e-8 * max(lead, 1e-300):
            return n
    return MATSUBARA_CAP


def _tail_integral(u0):
    """int_{u0}^inf (e^-u + u - 1)/u^3 du, stable for small u0."""
    u0 = np.asarray(u0, dtype=float)
    out = np.zeros_like(u0)
    big = u0 >= 0.1
    ub = u0[big]
    out[big] = 1 / ub - 1 / (2 * ub**2) + special.expn(3, ub) / ub**2
    us = u0[~big]
    if us.size:
        c = 0.1
        base = 1 / c - 1 / (2 * c**2) + special.expn(3, c) / c**2
        # integrand series: sum_{k>=2} (-1)^k u^(k-3) / k!
        acc = 0.5 * np.log(c / np.where(us > 0, us, 1.0))
        for k in range(3, 12):
            p = k - 2
            acc = acc + (-1) ** k / math.factorial(k) * (c**p - us**p) / p
        out[~big] = np.where(us > 0, base + acc, np.inf)
    return out


def lineshape_g(params: LineshapeParams, t):
    """Complex lineshape function g(t) for a Drude-Lorentz bath.

    Uses the Matsubara series, with the truncated tail replaced by its
    integral estimate.  Raises ``ValueError`` when ``beta*Lambda`` sits on a
    pole of the cotangent (a Matsubara frequency equal to the cutoff).
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("lineshape_g requires t >= 0")
    beta, lam, Lam = params.beta, params.lam, params.Lambda
    half = beta * Lam / 2
    k = round(half / math.pi)
    if k >= 1 and abs(half - k * math.pi) < 1e-9 * half:
        raise ValueError(f"beta*Lambda/2 = {half!r} is at the cotangent pole k={k}; "
                         "a Matsubara frequency coincides with the cutoff")
    flat = t.ravel()
    first = (lam / Lam) * (1 / math.tan(half) - 1j) * (np.expm1(-Lam * flat) + Lam * flat)
    n = _matsubara_count(params, float(flat.max()) if flat.size else 0.0)
    series = np.zeros(flat.shape)
    nu_step = 2 * math.pi / beta
    chunk = 512
    for start in range(1, n + 1, chunk):
        nu = nu_step * np.arange(start, min(start + chunk, n + 1))
        x = np.outer(flat, nu)
        series += ((np.expm1(-x) + x) / (nu * (nu**2 - Lam**2))).sum(axis=1)
    if n > 0 and params.n_matsubara is None:
        a = nu_step * flat
        pos = a > 0
        series[pos] += a[pos] ** 2 / nu_step**3 * _tail_integral(a[pos] * (n + 0.5))
    g = first + 4 * lam * Lam / beta * series
    return g.reshape(t.shape)


def lineshape_quadrature(spec, temperature, t, omega_max=np.inf):
    """Re g(t) by adaptive quadrature of the defining integral (an oracle)."""
    from scipy.integrate import quad

    beta = 1.0 / (KB_OVER_HBAR * temperature)

    def integrand(w, tt):
        if w == 0:
            return 0.0
        return (spectral_density(spec, w) / w**2 * 2 * math.sin(w * tt / 2) ** 2
                * coth_half(beta * w)) / math.pi

    def smooth(w):
        return spectral_density(spec, w) / w**2 * coth_half(beta * w) / math.pi

    out = []
    scale = spec.gamma if isinstance(spec, Debye) else 1.0
    for tt in np.atleast_1d(t):
        if tt == 0:
            out.append(0.0)
            continue
        top = omega_max if np.isfinite(omega_max) else 50 * max(scale, 2 * math.pi / tt)
        # direct rule below one oscillation, Fourier-weighted rule above it
        a = min(top, math.pi / tt)
        total = quad(integrand, 0, a, args=(tt,), limit=400, epsabs=0, epsrel=1e-11)[0]
        if top > a:
            edges = np.geomspace(a, top, 16)
            for lo, hi in zip(edges[:-1], edges[1:]):
                flat = quad(smooth, lo, hi, limit=400, epsabs=0, epsrel=1e-11)[0]
                osc = quad(smooth, lo, hi, weight="cos", wvar=tt, limit=400,
                           epsabs=1e-12 * abs(flat), epsrel=1e-11)[0]
                total += flat - osc
        if not np.isfinite(omega_max):
            # (1 - cos wt) split so the oscillating part uses a Fourier-weighted rule
            flat = quad(lambda x: smooth(top / x) * top / x**2 if x > 0 else 0.0, 0, 1,
                        limit=400, epsabs=0, epsrel=1e-10)[0]
            osc = quad(lambda u: smooth(top + u), 0, np.inf, weight="cos", wvar=tt, limit=400)[0]
            osc_s = quad(lambda u: smooth(top + u), 0, np.inf, weight="sin", wvar=tt, limit=400)[0]
            total += flat - (math.cos(tt * top) * osc - math.sin(tt * top) * osc_s)
        out.append(total)
    return np.array(out)


# Noise profiles ----------------------------------------------------------

@dataclass(frozen=True)
class NoiseProfile:
    """Comb of ``J`` lines at ``w_j = j * omega0`` with weights ``F``.

    The dephasing signal is ``alpha sum_j F_j w_j cos(w_j t + psi_j)``;
    the amplitude signal is ``alpha sum_j F_j sin(w_j t + psi_j)``.
    """

    omega0: float
    J: int
    alpha: float
    F: np.ndarray
    channel: str = DEPHASING
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        if self.omega0 <= 0 or self.J < 1:
            raise ValueError("need omega0 > 0 and J >= 1")
        if F.shape != (self.J,):
            raise ValueError(f"F must have length J={self.J}, got {F.shape}")
        if not np.all(np.isfinite(F)) or np.any(F < 0):
            raise ValueError("F must be finite and nonnegative")
        if self.channel not in (DEPHASING, AMPLITUDE):
            raise ValueError(f"unknown channel {self.channel!r}")
        F.setflags(write=False)
        object.__setattr__(self, "F", F)

    @property
    def omegas(self) -> np.ndarray:
        return self.omega0 * np.arange(1, self.J + 1)

    @property
    def line_amplitudes(self) -> np.ndarray:
        """Amplitude of each cosine in the sampled signal."""
        if self.channel == DEPHASING:
            return self.alpha * self.F * self.omegas
        return self.alpha * self.F

    def psd_heights(self) -> np.ndarray:
        """Weight of each delta line (per side) in the two-sided PSD, divided by 2*pi."""
        return (self.line_amplitudes / 2) ** 2

    def autocorrelation(self, tau):
        """<beta(t + tau) beta(t)> for the comb."""
        tau = np.asarray(tau, dtype=float)
        return (np.cos(np.multiply.outer(tau, self.omegas)) @ (2 * self.psd_heights()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("j,omega_j,F_j\n")
            for j, (w, f) in enumerate(zip(self.omegas, self.F), start=1):
                fh.write(f"{j},{w:.17g},{f:.17g}\n")

    @classmethod
    def from_csv(cls, path, alpha, channel=DEPHASING):
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        omega0 = arr[0, 1] / arr[0, 0]
        return cls(float(omega0), arr.shape[0], alpha, arr[:, 2], channel)


def chi(profile: NoiseProfile, t):
    """Decoherence integral ``alpha^2 sum_j F_j^2 sin^2(w_j t / 2)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("chi requires t >= 0")
    weights = profile.alpha**2 * profile.F**2
    flat = t.ravel()
    out = np.empty(flat.shape)
    chunk = max(1, 2_000_000 // profile.J)
    for s in range(0, flat.size, chunk):
        out[s:s + chunk] = np.sin(np.outer(flat[s:s + chunk], profile.omegas) / 2) ** 2 @ weights
    return out.reshape(t.shape)


_DEPHASING_EXPONENT = {-2.0: -2.0, -1.0: -1.5, 0.0: -1.0, 1.0: -0.5}
_AMPLITUDE_EXPONENT = {-2.0: -1.0, -1.0: -0.5, 0.0: 0.0, 1.0: 0.5}


def modulation_profile(spec, temperature, omega0, J, alpha=None, channel=DEPHASING) -> NoiseProfile:
    """Comb weights ``F(w_j)`` that reproduce a spectral density.

    Power-law spectra use the closed-form table entries, ``F = w^(p/2 - 1)``
    for dephasing and ``F = w^(p/2)`` for amplitude noise.  Debye baths use
    ``F = sqrt(2 lam gamma w0 coth(beta w/2) / (w (w^2 + gamma^2)))`` scaled
    by ``DEBYE_ALPHA / alpha``; any other density uses
    ``F = (1/alpha) sqrt(2 J(w) w0 coth(beta w/2) / (pi w^2))``.  Both give
    ``chi(t)`` equal to the comb (Riemann-sum) estimate of ``Re g(t)``.

    Parameters
    ----------
    temperature : float
        Kelvin, in the simulator's (NMR) regime.
    alpha : float, optional
        Global amplitude; defaults to 1 for power laws and ``DEBYE_ALPHA``
        otherwise.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if omega0 <= 0 or int(J) < 1:
        raise ValueError("need omega0 > 0 and J >= 1")
    J = int(J)
    w = omega0 * np.arange(1, J + 1)
    beta = 1.0 / (KB_OVER_HBAR * temperature)
    meta = {"spec": type(spec).__name__, "temperature_K": float(temperature)}
    if isinstance(spec, PowerLaw):
        table = _DEPHASING_EXPONENT if channel == DEPHASING else _AMPLITUDE_EXPONENT
        exponent = spec.exponent / 2 - 1 if channel == DEPHASING else spec.exponent / 2
        if spec.exponent not in table:
            meta["note"] = "exponent outside the tabulated set; using w^(p/2-1) rule"
        a = 1.0 if alpha is None else alpha
        return NoiseProfile(omega0, J, a, np.sqrt(spec.alpha) * w**exponent, channel, meta)
    if channel != DEPHASING:
        raise ValueError("amplitude-channel profiles are defined only for power-law spectra")
    a = DEBYE_ALPHA if alpha is None else alpha
    if a <= 0:
        raise ValueError("alpha must be positive for a bath-matched profile")
    if isinstance(spec, Debye):
        F = np.sqrt(2 * spec.lam * spec.gamma * omega0 * coth_half(beta * w)
                    / (w * (w**2 + spec.gamma**2)))
        return NoiseProfile(omega0, J, a, F * DEBYE_ALPHA / a, channel, meta)
    return NoiseProfile(omega0, J, a, general_profile_weights(spec, beta, w, omega0, a), channel, meta)


def general_profile_weights(spec, beta, omegas, omega0, alpha):
    """``(1/alpha) sqrt(2 J(w) w0 coth(beta w/2) / (pi w^2))`` for any density."""
    w = np.asarray(omegas, dtype=float)
    return np.sqrt(2 * spectral_density(spec, w) * omega0 * coth_half(beta * w) / (np.pi * w**2)) / alpha


def chi_grid(profile: NoiseProfile, n_per_period: int = 16):
    """chi on a uniform grid spanning one comb period, via FFT.

    Returns ``(t, chi)`` with spacing ``2*pi / (omega0 * N)`` where ``N`` is
    at least ``n_per_period * J``.
    """
    N = int(2 ** math.ceil(math.log2(max(n_per_period * profile.J, 64))))
    c = np.zeros(N)
    c[1:profile.J + 1] = profile.alpha**2 * profile.F**2
    cos_sum = np.fft.fft(c).real  # sum_j c_j cos(2 pi j k / N)
    values = (c.sum() - cos_sum) / 2
    t = 2 * math.pi / profile.omega0 * np.arange(N) / N
    return t, values


def fit_t2(profile: NoiseProfile, xtol: float = 1e-9):
    """Smallest ``t`` with ``2 chi(t) = 1``; ``None`` if chi never reaches 1/2."""
    ceiling = profile.alpha**2 * float(np.sum(profile.F**2))
    if ceiling <= 0.5:
        return None
    t, values = chi_grid(profile)
    above = np.nonzero(2 * values >= 1)[0]
    if above.size == 0:
        return None
    k = above[0]

    def f(x):
        return 2 * float(chi(profile, x)) - 1

    # grid values can sit exactly on the crossing; refine with direct sums
    while k < t.size and f(t[k]) < 0:
        k += 1
    if k == t.size:
        return None
    hi = t[k]
    if f(hi) == 0:
        return float(hi)
    lo = t[k - 1]
    if f(lo) >= 0:
        fine = np.linspace(0, hi, 4001)
        vals = 2 * chi(profile, fine) - 1
        k2 = np.nonzero(vals >= 0)[0][0]
        lo, hi = fine[k2 - 1], fine[k2]
    return optimize.brentq(f, lo, hi, xtol=xtol, rtol=1e-14)
