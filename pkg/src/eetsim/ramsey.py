"""Ramsey fringes: closed forms, noisy simulation and envelope extraction.

The simulated protocol prepares ``exp(i pi X/4)|0>``, evolves under
``(omega_L/2 + n(t)) Z`` with ``n = (b1 - b2)/2`` built from two independent
noise streams, closes with ``exp(-i pi X/4)`` and reads out ``P0``.  This
yields ``P0 = cos^2(omega_L t/2 + Phi)`` with ``Phi = int n``, whose ensemble
mean is ``(1 + cos(omega_L t) exp(-2 chi(t)))/2``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .model import PAULI
from .spectral import DEPHASING, LineshapeParams, NoiseProfile, chi, lineshape_g
from .trajectory import draw_phases, noise_phase, step_coefficients, trajectory_seed


@dataclass(frozen=True)
class RamseyConfig:
    """Fringe frequency ``omega_L`` (rad/ms), grid and decoherence source.

    ``source`` is a :class:`NoiseProfile` (classical-noise form) or
    :class:`LineshapeParams` (bath lineshape form).
    """

    omega_L: float
    t_grid: np.ndarray
    source: NoiseProfile | LineshapeParams
    dt: float = 0.02
    M: int = 50

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float)
        if t.ndim != 1 or np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise ValueError("t_grid must be nonnegative and increasing")
        if not np.isfinite(self.omega_L):
            raise ValueError("omega_L must be real")
        if self.M < 1 or self.dt <= 0:
            raise ValueError("need M >= 1 and dt > 0")
        object.__setattr__(self, "t_grid", t)


def decay_exponent(source, t):
    """``2 chi(t)`` or ``2 Re g(t)``."""
    if isinstance(source, NoiseProfile):
        return 2 * chi(source, t)
    if isinstance(source, LineshapeParams):
        return 2 * lineshape_g(source, t).real
    raise TypeError(f"unsupported decoherence source {source!r}")


def ramsey_analytic(config: RamseyConfig) -> np.ndarray:
    t = config.t_grid
    return 0.5 * (1 + np.cos(config.omega_L * t) * np.exp(-decay_exponent(config.source, t)))


def _expm_pauli(axis, angle):
    """exp(-i angle sigma_axis)."""
    return math.cos(angle) * PAULI["I"] - 1j * math.sin(angle) * PAULI[axis]


PREPARE = _expm_pauli("X", -math.pi / 4)   # exp(+i pi X / 4)
CLOSE = _expm_pauli("X", math.pi / 4)      # exp(-i pi X / 4)


@dataclass
class RamseySeries:
    t: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    M: int
    master_seed: int

    def to_csv(self, path) -> None:
        write_series_csv(path, ["t_ms", "P0_mean", "P0_se"], [self.t, self.mean, self.stderr])


def write_series_csv(path, header, cols) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(f"{float(v):.17g}" for v in row) + "\n")


def _ramsey_batch(config, profile, seeds, record, steps):
    B = len(seeds)
    phases = np.stack([draw_phases(s, 2, profile.J) for s in seeds])
    phi = noise_phase(profile, phases.reshape(2 * B, profile.J), config.dt, steps)
    beta = step_coefficients(phi, config.dt).reshape(B, 2, steps)
    n = 0.5 * (beta[:, 0] - beta[:, 1])
    # H_i is diagonal, so the ordered product of exp(-i H_i dt) is a
    # running sum of per-step Z angles
    theta = np.concatenate([np.zeros((B, 1)),
                            np.cumsum((config.omega_L / 2 + n) * config.dt, axis=1)], axis=1)
    theta = theta[:, record]
    psi = PREPARE @ np.array([1.0, 0.0])
    evolved = np.stack([np.exp(-1j * theta) * psi[0], np.exp(1j * theta) * psi[1]], axis=-1)
    final = evolved @ CLOSE.T
    return np.abs(final[..., 0]) ** 2


def ramsey_simulate(config: RamseyConfig, profile: NoiseProfile, master_seed: int,
                    threads: int = 1, batch_size: int = 100) -> RamseySeries:
    """Ensemble of ``config.M`` simulated fringes; returns mean and standard error."""
    if profile.channel != DEPHASING:
        raise ValueError("Ramsey simulation needs a dephasing-channel profile")
    dt = config.dt
    record = np.rint(config.t_grid / dt).astype(np.int64)
    if np.any(np.abs(record * dt - config.t_grid) > 1e-9 * np.maximum(config.t_grid, dt)):
        raise ValueError("every t_grid point must be a multiple of dt")
    steps = int(record[-1])
    seeds = [trajectory_seed(master_seed, i) for i in range(config.M)]
    batches = [seeds[s:s + batch_size] for s in range(0, config.M, batch_size)]

    def run(b):
        return _ramsey_batch(config, profile, b, record, steps)

    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, batches))
    else:
        parts = [run(b) for b in batches]
    P = np.concatenate(parts, axis=0)
    se = P.std(axis=0, ddof=1) / math.sqrt(config.M) if config.M > 1 else np.zeros(P.shape[1])
    return RamseySeries(config.t_grid, P.mean(axis=0), se, config.M, master_seed)


@dataclass
class Envelope:
    t: np.ndarray
    envelope: np.ndarray
    amplitude: float
    decay_time: float

    def to_csv(self, path) -> None:
        write_series_csv(path, ["t_ms", "envelope"], [self.t, self.envelope])


def extract_envelope(t, series, omega_L: float, window: float | None = None,
                     min_samples: int = 7, order: int = 2) -> Envelope:
    """Demodulate a fringe ``(1 + E(t) cos(omega_L t))/2`` and fit ``E``.

    Around each sample, ``series - 1/2`` is fitted by least squares to
    ``a(t) cos(omega_L t) + b(t) sin(omega_L t)`` over a centred window,
    where ``a`` and ``b`` are polynomials of degree ``order`` in the offset
    from the centre; the local envelope is ``2 sqrt(a^2 + b^2)`` at the
    centre.  ``window`` defaults to half a fringe period, widened to hold at
    least ``min_samples`` points.  A single
    exponential ``A exp(-t/tau)`` is then fitted to the envelope.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(series, dtype=float) - 0.5
    if omega_L <= 0:
        raise ValueError("omega_L must be positive")
    period = 2 * math.pi / omega_L
    if t[-1] - t[0] < 3 * period:
        raise ValueError("series must cover at least three fringe periods")
    dt = float(np.median(np.diff(t)))
    if window is None:
        window = max(period / 2, (min_samples - 1) * dt)
    half = window / 2 + 1e-12
    env = np.empty(t.size)
    c, s = np.cos(omega_L * t), np.sin(omega_L * t)
    for i, ti in enumerate(t):
        lo, hi = np.searchsorted(t, ti - half), np.searchsorted(t, ti + half, side="right")
        # keep the window centred where possible, shift it at the edges
        need = max(min_samples, hi - lo)
        if hi - lo < need:
            lo, hi = max(0, min(lo, t.size - need)), min(t.size, max(hi, need))
        cols = [c[lo:hi], s[lo:hi]]
        x = (t[lo:hi] - ti) / window
        for k in range(1, order + 1):
            cols += [x**k * c[lo:hi], x**k * s[lo:hi]]
        coef = np.linalg.lstsq(np.column_stack(cols), y[lo:hi], rcond=None)[0]
        env[i] = 2 * math.hypot(coef[0], coef[1])

    def model(tt, amp, tau):
        return amp * np.exp(-tt / tau)

    try:
        span = t[-1] - t[0]
        (amp, tau), _ = optimize.curve_fit(model, t, env, p0=(1.0, span), maxfev=20000)
    except RuntimeError:
        amp, tau = float("nan"), float("nan")
    return Envelope(t, env, float(amp), float(tau))
