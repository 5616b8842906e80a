"""Classical-noise trajectories and ensemble averages.

Each noise stream is a random-phase comb (see :class:`~eetsim.spectral.NoiseProfile`).
A trajectory evolves under ``H_i = H_S + sum_k n_k(t_i) O_k`` with one exact
matrix exponential per step, where the coefficients ``n_k`` are linear
combinations of independent streams.  Per step, the coefficient is the
average of the noise over the step (the exact phase increment divided by
``dt``), which reproduces the accumulated phase exactly whenever the noise
operators commute with ``H_S``.

Randomness: trajectory ``i`` of an ensemble draws its phases from
``numpy.random.Philox(splitmix64(master_seed, i))``, so results do not depend
on how trajectories are scheduled across threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .heom import write_population_csv
from .model import HamiltonianMatrix, pauli_string_matrix
from .spectral import AMPLITUDE, DEPHASING, NoiseProfile

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One round of the SplitMix64 output function."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def trajectory_seed(master_seed: int, index: int) -> int:
    return splitmix64((splitmix64(master_seed & _MASK) + index * _GOLDEN) & _MASK)


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed & _MASK))


# Noise synthesis ---------------------------------------------------------

@dataclass(frozen=True)
class NoiseRealization:
    """Random phases for one stream.  ``target`` labels where it acts."""

    profile: NoiseProfile
    phases: np.ndarray
    seed: int
    target: str = "z"

    @classmethod
    def draw(cls, profile: NoiseProfile, seed: int, target: str = "z"):
        return cls(profile, draw_phases(seed, 1, profile.J)[0], seed, target)

    def signal(self, t):
        return noise_signal(self.profile, self.phases, t)

    def phase(self, dt, n_steps):
        return noise_phase(self.profile, self.phases[None], dt, n_steps)[0]


def draw_phases(seed: int, n_streams: int, J: int) -> np.ndarray:
    """``(n_streams, J)`` phases uniform on [0, 2 pi)."""
    return generator(seed).uniform(0.0, 2 * np.pi, size=(n_streams, J))


def noise_signal(profile: NoiseProfile, phases, t):
    """Evaluate the comb signal at times ``t`` by direct summation."""
    t = np.asarray(t, dtype=float)
    amp = profile.line_amplitudes
    out = np.empty(t.shape)
    flat_t, flat_o = t.ravel(), out.reshape(-1)
    chunk = max(1, 1_000_000 // profile.J)
    for s in range(0, flat_t.size, chunk):
        arg = np.outer(flat_t[s:s + chunk], profile.omegas) + phases
        flat_o[s:s + chunk] = (np.cos(arg) if profile.channel == DEPHASING else np.sin(arg)) @ amp
    return out


def sample_noise(profile: NoiseProfile, seed: int, t_grid):
    """Signal of the stream seeded by ``seed`` on ``t_grid``."""
    t = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be increasing")
    return NoiseRealization.draw(profile, seed).signal(t)


def fft_period(profile: NoiseProfile, dt: float) -> int | None:
    """Samples per comb period if the grid is commensurate with ``omega0``."""
    n = 2 * math.pi / (profile.omega0 * dt)
    N = round(n)
    if N > profile.J and abs(n - N) < 1e-9 * n:
        return N
    return None


def noise_phase(profile: NoiseProfile, phases, dt: float, n_steps: int):
    """Integrated signal ``phi(k dt) = int_0^{k dt} beta`` for k = 0..n_steps.

    ``phases`` has shape ``(n_streams, J)``; the result has shape
    ``(n_streams, n_steps + 1)``.  Uses an inverse FFT when ``2 pi/(omega0 dt)``
    is an integer, otherwise direct sums.
    """
    phases = np.atleast_2d(phases)
    amp = profile.alpha * profile.F
    if profile.channel == AMPLITUDE:
        amp = amp / profile.omegas
    N = fft_period(profile, dt)
    if N is not None:
        c = np.zeros((phases.shape[0], N), dtype=complex)
        c[:, 1:profile.J + 1] = amp * np.exp(1j * phases)
        z = np.fft.ifft(c, axis=1) * N
        part = z.imag if profile.channel == DEPHASING else -z.real
        reps = n_steps // N + 1
        part = np.tile(part, reps)[:, :n_steps + 1] if reps > 1 else part[:, :n_steps + 1]
        return part - part[:, :1]
    out = np.empty((phases.shape[0], n_steps + 1))
    t = dt * np.arange(n_steps + 1)
    chunk = max(1, 500_000 // profile.J)
    for s in range(0, t.size, chunk):
        arg = np.multiply.outer(t[s:s + chunk], profile.omegas)[None] + phases[:, None, :]
        if profile.channel == DEPHASING:
            out[:, s:s + chunk] = np.sin(arg) @ amp - (np.sin(phases) @ amp)[:, None]
        else:
            out[:, s:s + chunk] = (np.cos(phases) @ amp)[:, None] - np.cos(arg) @ amp
    return out


# Noise-to-Hamiltonian mapping -------------------------------------------

@dataclass(frozen=True)
class NoiseMapping:
    """Operators ``O_k`` and mixing matrix with ``n = mix @ beta``."""

    name: str
    operators: np.ndarray
    mix: np.ndarray

    @property
    def n_streams(self) -> int:
        return self.mix.shape[1]

    @property
    def dim(self) -> int:
        return self.operators.shape[1]


def two_qubit_mapping() -> NoiseMapping:
    """``n1 = (b1 + b2)/2`` on Z1 and ``n2 = (b1 - b2)/2`` on Z2."""
    ops = np.array([pauli_string_matrix("ZI"), pauli_string_matrix("IZ")])
    return NoiseMapping("two_qubit", ops, np.array([[0.5, 0.5], [0.5, -0.5]]))


def independent_sites_mapping(dim: int) -> NoiseMapping:
    """One independent stream on each site projector ``|j><j|``."""
    ops = np.zeros((dim, dim, dim), dtype=complex)
    for j in range(dim):
        ops[j, j, j] = 1.0
    return NoiseMapping("independent_sites", ops, np.eye(dim))


def single_qubit_mapping() -> NoiseMapping:
    """``n = (b1 - b2)/2`` on Z, so the accumulated Z phase has variance chi."""
    return NoiseMapping("single_qubit", np.array([pauli_string_matrix("Z")]),
                        np.array([[0.5, -0.5]]))


def resolve_mapping(mapping, dim: int) -> NoiseMapping:
    if isinstance(mapping, NoiseMapping):
        return mapping
    if mapping == "two_qubit":
        if dim != 4:
            raise ValueError("the two_qubit mapping needs a two-qubit (4-level) system")
        return two_qubit_mapping()
    if mapping == "independent_sites":
        return independent_sites_mapping(dim)
    if mapping == "single_qubit":
        return single_qubit_mapping()
    raise ValueError(f"unknown noise mapping {mapping!r}")


# Propagation -------------------------------------------------------------

@dataclass(frozen=True)
class PiecewiseHamiltonianSchedule:
    """``H_i = base + sum_k coefficients[i, k] * operators[k]`` held for ``dt``."""

    base: HamiltonianMatrix
    dt: float
    operators: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        ops = np.asarray(self.operators, dtype=complex)
        coef = np.asarray(self.coefficients, dtype=float)
        if coef.ndim != 2 or coef.shape[1] != ops.shape[0]:
            raise ValueError("coefficients must have shape (steps, n_operators)")
        if ops.shape[1:] != (self.base.dim, self.base.dim):
            raise ValueError("operators must match the Hamiltonian dimension")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "operators", ops)
        object.__setattr__(self, "coefficients", coef)

    @property
    def steps(self) -> int:
        return self.coefficients.shape[0]

    @property
    def duration(self) -> float:
        return self.steps * self.dt

    @classmethod
    def noiseless(cls, base: HamiltonianMatrix, dt: float, steps: int):
        return cls(base, dt, np.zeros((0, base.dim, base.dim)), np.zeros((steps, 0)))


def _propagate_batch(H, dt, operators, coefficients, psi0, record):
    """Evolve a batch of states; ``coefficients`` is ``(B, steps, n_ops)``.

    ``record`` is a sorted array of step counts at which ``|psi|^2`` is stored.
    Returns ``(populations (len(record), B, d), final states (B, d))``.
    """
    B, steps, _ = coefficients.shape
    d = H.shape[0]
    psi = np.array(np.broadcast_to(psi0, (B, d)), dtype=complex)
    pops = np.empty((len(record), B, d))
    diag_ops = operators.shape[0] == 0 or all(
        np.count_nonzero(o - np.diag(np.diag(o))) == 0 for o in operators)
    diags = np.array([np.diag(o).real for o in operators]).reshape(-1, d)
    r = 0
    while r < len(record) and record[r] == 0:
        pops[r] = np.abs(psi) ** 2
        r += 1
    if operators.shape[0] == 0:
        e, v = np.linalg.eigh(H)
        U = (v * np.exp(-1j * e * dt)) @ v.conj().T
    for k in range(steps):
        if operators.shape[0]:
            if diag_ops:
                Hk = np.repeat(H[None], B, axis=0)
                idx = np.arange(d)
                Hk[:, idx, idx] += coefficients[:, k, :] @ diags
            else:
                Hk = H[None] + np.einsum("bk,kij->bij", coefficients[:, k, :], operators)
            e, v = np.linalg.eigh(Hk)
            psi = np.einsum("bij,bj->bi", v,
                            np.exp(-1j * e * dt) * np.einsum("bji,bj->bi", v.conj(), psi))
        else:
            psi = psi @ U.T
        while r < len(record) and record[r] == k + 1:
            pops[r] = np.abs(psi) ** 2
            r += 1
    return pops, psi


@dataclass
class TrajectoryResult:
    t: np.ndarray
    populations: np.ndarray
    state: np.ndarray


def propagate_trajectory(schedule: PiecewiseHamiltonianSchedule, state0, record_every: int = 1):
    """Apply ``exp(-i H_i dt)`` step by step.

    ``state0`` is a normalized vector or a trace-one density matrix.
    Populations are recorded every ``record_every`` steps (and at t = 0).
    """
    H = np.asarray(schedule.base.elements)
    d = H.shape[0]
    s = np.asarray(state0, dtype=complex)
    record = np.arange(0, schedule.steps + 1, record_every)
    t = record * schedule.dt
    if s.shape == (d,):
        if abs(np.vdot(s, s).real - 1) > 1e-10:
            raise ValueError("state vector must be normalized")
        pops, psi = _propagate_batch(H, schedule.dt, schedule.operators,
                                     schedule.coefficients[None], s, record)
        return TrajectoryResult(t, pops[:, 0], psi[0])
    if s.shape == (d, d):
        if abs(np.trace(s) - 1) > 1e-10 or not np.allclose(s, s.conj().T, atol=1e-12):
            raise ValueError("density matrix must be Hermitian with unit trace")
        # evolve eigenvectors and recombine populations with their weights
        w, vecs = np.linalg.eigh(s)
        pops, psi = _propagate_batch(H, schedule.dt, schedule.operators,
                                     np.repeat(schedule.coefficients[None], d, axis=0),
                                     vecs.T, record)
        rho = (psi.T * w) @ psi.conj()
        return TrajectoryResult(t, np.einsum("rbd,b->rd", pops, w), rho)
    raise ValueError(f"state0 must have shape ({d},) or ({d}, {d})")


def step_coefficients(phase, dt):
    """Per-step average of the noise from its running integral."""
    return np.diff(phase, axis=-1) / dt


@dataclass
class EnsembleResult:
    t: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    M: int
    master_seed: int
    mapping: str = "two_qubit"
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        write_population_csv(path, self.t, self.mean, self.stderr)

    @classmethod
    def from_csv(cls, path, M=0, master_seed=0):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1::2], data[:, 2::2], M, master_seed)


def _grid_steps(t_grid, dt):
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(t < 0) or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be nonnegative and increasing")
    k = np.rint(t / dt).astype(np.int64)
    if np.any(np.abs(k * dt - t) > 1e-9 * np.maximum(t, dt)):
        raise ValueError("every t_grid point must be a multiple of dt")
    return k


def _batch_moments(h, profile, mapping, dt, steps, record, state0, seeds, audit):
    n_streams = mapping.n_streams
    phases = np.stack([draw_phases(s, n_streams, profile.J) for s in seeds])  # (B, S, J)
    if audit is not None:
        audit.extend(zip(seeds, phases))
    B = len(seeds)
    phi = noise_phase(profile, phases.reshape(B * n_streams, profile.J), dt, steps)
    beta = step_coefficients(phi, dt).reshape(B, n_streams, steps)
    coef = np.einsum("ks,bsl->blk", mapping.mix, beta)
    pops, _ = _propagate_batch(np.asarray(h.elements), dt, mapping.operators, coef, state0, record)
    mean = pops.mean(axis=1)
    m2 = ((pops - mean[:, None, :]) ** 2).sum(axis=1)
    return B, mean, m2


def ensemble_average(h: HamiltonianMatrix, profile: NoiseProfile, M: int, dt: float, t_grid,
                     state0, master_seed: int, mapping="two_qubit", threads: int = 1,
                     batch_size: int = 50, audit: list | None = None) -> EnsembleResult:
    """Mean populations and standard errors over ``M`` noisy trajectories.

    Trajectories are grouped into fixed batches of ``batch_size``; batch
    moments are merged in batch order, so results are identical for any
    ``threads``.  If ``audit`` is a list, ``(seed, phases)`` pairs are
    appended to it.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    if profile.channel != DEPHASING:
        raise ValueError("ensemble dynamics use dephasing-channel profiles")
    mp = resolve_mapping(mapping, h.dim)
    record = _grid_steps(t_grid, dt)
    steps = int(record[-1])
    psi0 = np.asarray(state0, dtype=complex)
    if psi0.shape != (h.dim,) or abs(np.vdot(psi0, psi0).real - 1) > 1e-10:
        raise ValueError("state0 must be a normalized state vector")
    seeds = [trajectory_seed(master_seed, i) for i in range(M)]
    batches = [seeds[s:s + batch_size] for s in range(0, M, batch_size)]
    audits = [[] if audit is not None else None for _ in batches]

    def run(i):
        return _batch_moments(h, profile, mp, dt, steps, record, psi0, batches[i], audits[i])

    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(batches))))
    else:
        parts = [run(i) for i in range(len(batches))]
    n, mean, m2 = parts[0]
    for nb, mb, m2b in parts[1:]:
        delta = mb - mean
        tot = n + nb
        mean = mean + delta * (nb / tot)
        m2 = m2 + m2b + delta**2 * (n * nb / tot)
        n = tot
    if audit is not None:
        for a in audits:
            audit.extend(a)
    se = np.sqrt(m2 / (M - 1) / M) if M > 1 else np.zeros_like(mean)
    return EnsembleResult(record * dt, mean, se, M, master_seed, mp.name)


def write_audit(path, audit) -> None:
    """CSV rows ``seed,stream,psi_1..psi_J``."""
    with open(path, "w", newline="\n") as fh:
        for seed, phases in audit:
            for s, row in enumerate(np.atleast_2d(phases)):
                fh.write(f"{seed},{s}," + ",".join(f"{p:.17g}" for p in row) + "\n")
