"""High-temperature hierarchical equations of motion for site-local Debye baths.

Each site ``j`` couples to its own Drude-Lorentz bath through ``V_j = |j><j|``.
With one exponential per bath the auxiliary operators obey

    d sigma(n)/dt = -(i [H, .] + sum_j n_j gamma_j) sigma(n)
                    + sum_j [ i V_j^x sigma(n_j+)
                              + n_j i (2 lam_j T' V_j^x - i lam_j gamma_j V_j^o) sigma(n_j-) ]

where ``V^x`` and ``V^o`` are the commutator and anticommutator
superoperators and ``T' = k_B T / hbar``.  ``sigma(0)`` is the reduced
density matrix.  Superoperators act on row-major vectorized matrices,
``vec(A X B) = kron(A, B.T) vec(X)``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import HamiltonianMatrix, thermal_frequency

#: ADO count above which build_hierarchy refuses by default.
DEFAULT_MAX_COUNT = 200_000
#: Liouville-space size up to which the dense one-step propagator is used.
DENSE_LIMIT = 2048


class HierarchyTooLarge(ValueError):
    def __init__(self, count, max_count):
        super().__init__(f"hierarchy has {count} auxiliary operators, budget is {max_count}")
        self.count = count
        self.max_count = max_count


class HeomIntegrationError(RuntimeError):
    def __init__(self, t_reached, message="non-finite state"):
        super().__init__(f"{message} at t = {t_reached!r} ms")
        self.t_reached = t_reached


class HighTemperatureWarning(UserWarning):
    pass


# Hierarchy ---------------------------------------------------------------

@dataclass(frozen=True)
class HierarchyIndexSet:
    """Multi-indices with total weight <= depth and neighbour tables.

    ``plus[i, m]`` is the row of ``n + e_m`` and ``minus[i, m]`` the row of
    ``n - e_m``; ``-1`` marks a missing neighbour.  Rows are ordered by tier.
    """

    n_sites: int
    depth: int
    k_exponentials: int
    indices: np.ndarray
    plus: np.ndarray
    minus: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.n_sites * self.k_exponentials

    @property
    def count(self) -> int:
        return self.indices.shape[0]

    def position(self, index) -> int:
        """Row of a multi-index (linear search; not for hot loops)."""
        hits = np.nonzero((self.indices == np.asarray(index)).all(axis=1))[0]
        if hits.size == 0:
            raise KeyError(tuple(index))
        return int(hits[0])


def hierarchy_count(n_modes: int, depth: int) -> int:
    return math.comb(depth + n_modes, depth)


def build_hierarchy(n_sites: int, depth: int, k_exponentials: int = 1,
                    max_count: int = DEFAULT_MAX_COUNT) -> HierarchyIndexSet:
    if n_sites < 1 or depth < 0 or k_exponentials < 1:
        raise ValueError("need n_sites >= 1, depth >= 0 and k_exponentials >= 1")
    n_modes = n_sites * k_exponentials
    count = hierarchy_count(n_modes, depth)
    if count > max_count:
        raise HierarchyTooLarge(count, max_count)
    indices = np.zeros((count, n_modes), dtype=np.int64)
    row = 0
    for tier in range(depth + 1):
        for combo in itertools.combinations_with_replacement(range(n_modes), tier):
            for m in combo:
                indices[row, m] += 1
            row += 1
    lookup = {tuple(n): i for i, n in enumerate(indices.tolist())}
    plus = np.full((count, n_modes), -1, dtype=np.int64)
    minus = np.full((count, n_modes), -1, dtype=np.int64)
    for i, n in enumerate(indices.tolist()):
        for m in range(n_modes):
            n[m] += 1
            plus[i, m] = lookup.get(tuple(n), -1)
            n[m] -= 2
            if n[m] >= 0:
                minus[i, m] = lookup[tuple(n)]
            n[m] += 1
    for arr in (indices, plus, minus):
        arr.setflags(write=False)
    return HierarchyIndexSet(n_sites, depth, k_exponentials, indices, plus, minus)


# Cost estimate -----------------------------------------------------------

@dataclass(frozen=True)
class CostEstimate:
    """ADO count and Stirling-type bounds.

    ``count`` is exact (arbitrary precision).  ``stirling_bound`` is an upper
    bound from Robbins' factorial inequalities; ``stirling_lower`` is the
    matching lower estimate ``sqrt(2 pi (D+M)/(e^4 D M)) (1+M/D)^D (1+D/M)^M``.
    When a bound exceeds float range it saturates to ``inf`` and
    ``overflow`` is set; ``log_stirling_bound`` stays finite.
    """

    count: int
    stirling_bound: float
    stirling_lower: float
    log_stirling_bound: float
    overflow: bool

    @property
    def log_count(self) -> float:
        return math.log(self.count)


def _log_binomial_core(D, M):
    return D * math.log1p(M / D) + M * math.log1p(D / M)


def cost_estimate(n_levels: int, k_exponentials: int, depth: int) -> CostEstimate:
    if min(n_levels, k_exponentials, depth) < 0:
        raise ValueError("arguments must be nonnegative")
    M = n_levels * k_exponentials
    count = hierarchy_count(M, depth)
    if depth == 0 or M == 0:
        return CostEstimate(count, 1.0, 1.0, 0.0, False)
    core = _log_binomial_core(depth, M)
    log_upper = 1 - math.log(2 * math.pi) + 0.5 * math.log((depth + M) / (depth * M)) + core
    log_lower = 0.5 * math.log(2 * math.pi * (depth + M) / (depth * M)) - 2 + core
    overflow = log_upper > 709.0
    upper = math.inf if overflow else math.exp(log_upper)
    lower = math.inf if log_lower > 709.0 else math.exp(log_lower)
    return CostEstimate(count, upper, lower, log_upper, overflow)


# Bath and propagation ----------------------------------------------------

@dataclass(frozen=True)
class BathParams:
    """Per-site Debye baths: ``lam`` and ``gamma`` in rad/ms, temperature in K."""

    lam: np.ndarray
    gamma: np.ndarray
    temperature: float

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if lam.shape != gamma.shape or lam.ndim != 1:
            raise ValueError("lam and gamma must be 1D arrays of equal length")
        if np.any(lam < 0) or np.any(gamma <= 0):
            raise ValueError("need lam >= 0 and gamma > 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "gamma", gamma)

    @classmethod
    def uniform(cls, n_sites, lam, gamma, temperature):
        return cls(np.full(n_sites, lam), np.full(n_sites, gamma), temperature)

    @property
    def n_sites(self) -> int:
        return self.lam.size

    @property
    def thermal_frequency(self) -> float:
        return float(thermal_frequency(self.temperature))

    @property
    def high_temperature_ok(self) -> bool:
        return bool(np.all(self.gamma / self.thermal_frequency < 1))


@dataclass
class HeomResult:
    t: np.ndarray
    populations: np.ndarray
    rho: np.ndarray | None
    depth: int
    count: int
    step: float
    warnings: list = field(default_factory=list)

    @property
    def trace_error(self) -> float:
        return float(np.max(np.abs(self.populations.sum(axis=1) - 1)))

    @property
    def hermiticity_error(self) -> float:
        if self.rho is None:
            return float("nan")
        return float(np.max(np.abs(self.rho - np.conj(np.swapaxes(self.rho, 1, 2)))))

    def to_csv(self, path) -> None:
        write_population_csv(path, self.t, self.populations)


def write_population_csv(path, t, populations, errors=None) -> None:
    """CSV with ``t_ms,P1,...`` (and ``P_k_se`` columns when errors given)."""
    n = populations.shape[1]
    if errors is None:
        header = ["t_ms"] + [f"P{k + 1}" for k in range(n)]
        cols = [t] + [populations[:, k] for k in range(n)]
    else:
        header = ["t_ms"]
        cols = [t]
        for k in range(n):
            header += [f"P{k + 1}", f"P{k + 1}_se"]
            cols += [populations[:, k], errors[:, k]]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(f"{float(v):.17g}" for v in row) + "\n")


def heom_generator(h: HamiltonianMatrix, bath: BathParams, hierarchy: HierarchyIndexSet):
    """Sparse generator ``A`` with ``d vec(sigma)/dt = A vec(sigma)``."""
    H = np.asarray(getattr(h, "elements", h))
    d = H.shape[0]
    if bath.n_sites != d or hierarchy.n_sites != d:
        raise ValueError("bath and hierarchy must have one entry per level")
    if hierarchy.k_exponentials != 1:
        raise ValueError("propagation supports one exponential per bath")
    eye = np.eye(d)
    liou = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    Tp = bath.thermal_frequency
    comm, anti = [], []
    for j in range(d):
        V = np.zeros((d, d))
        V[j, j] = 1.0
        comm.append(np.kron(V, eye) - np.kron(eye, V.T))
        anti.append(np.kron(V, eye) + np.kron(eye, V.T))
    blocks_r, blocks_c, blocks_v = [], [], []

    def put(i, k, M):
        m = sp.coo_matrix(M)
        blocks_r.append(m.row + i * d * d)
        blocks_c.append(m.col + k * d * d)
        blocks_v.append(m.data)

    up_ops = [1j * comm[j] for j in range(d)]
    down_ops = [1j * (2 * bath.lam[j] * Tp * comm[j] - 1j * bath.lam[j] * bath.gamma[j] * anti[j])
                for j in range(d)]
    ident = np.eye(d * d)
    for i, n in enumerate(hierarchy.indices):
        put(i, i, liou - float(n @ bath.gamma) * ident)
        for j in range(d):
            if hierarchy.plus[i, j] >= 0 and bath.lam[j] > 0:
                put(i, hierarchy.plus[i, j], up_ops[j])
            if hierarchy.minus[i, j] >= 0 and bath.lam[j] > 0:
                put(i, hierarchy.minus[i, j], n[j] * down_ops[j])
    size = hierarchy.count * d * d
    return sp.csr_matrix((np.concatenate(blocks_v),
                          (np.concatenate(blocks_r), np.concatenate(blocks_c))),
                         shape=(size, size))


def default_step(h: HamiltonianMatrix, bath: BathParams, depth: int) -> float:
    """Largest fixed RK4 step allowed by the spectral and damping scales."""
    eig = np.max(np.abs(np.linalg.eigvalsh(h.traceless())))
    gmax = float(np.max(bath.gamma))
    limits = [0.1 / gmax]
    if eig > 0:
        limits.append(0.01 / eig)
    if depth > 0:
        limits.append(0.1 / (depth * gmax))
    return min(limits)


def _rk4_matrix(A, h):
    hA = h * A
    out = np.eye(A.shape[0], dtype=complex)
    term = out
    for k in range(1, 5):
        term = term @ hA / k
        out = out + term
    return out


def _rk4_step(A, y, h):
    k1 = A @ y
    k2 = A @ (y + 0.5 * h * k1)
    k3 = A @ (y + 0.5 * h * k2)
    k4 = A @ (y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _validate_rho(rho0, d):
    rho = np.asarray(rho0, dtype=complex)
    if rho.shape != (d, d):
        raise ValueError(f"rho0 must be {d}x{d}")
    if not np.allclose(rho, rho.conj().T, atol=1e-12):
        raise ValueError("rho0 must be Hermitian")
    if abs(np.trace(rho) - 1) > 1e-10:
        raise ValueError("rho0 must have unit trace")
    if np.min(np.linalg.eigvalsh(rho)) < -1e-10:
        raise ValueError("rho0 must be positive semidefinite")
    return rho


def heom_propagate(h: HamiltonianMatrix, bath: BathParams, rho0, t_grid, depth: int,
                   step: float | None = None, keep_rho: bool = True,
                   max_count: int = DEFAULT_MAX_COUNT) -> HeomResult:
    """Propagate the hierarchy with fixed-step RK4 and sample ``sigma(0)``.

    The step is the largest value not exceeding ``step`` (default from
    :func:`default_step`) that divides every grid interval into an integer
    number of substeps.  Small systems use the dense one-step RK4 matrix
    raised to the substep count, which is algebraically identical to
    stepping.
    """
    H = h.traceless()
    d = H.shape[0]
    rho = _validate_rho(rho0, d)
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or t[0] != 0 or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be increasing and start at 0")
    notes = []
    if not bath.high_temperature_ok:
        msg = (f"gamma/T' = {np.max(bath.gamma) / bath.thermal_frequency:.3g} >= 1; "
               "high-temperature hierarchy is outside its validity range")
        warnings.warn(msg, HighTemperatureWarning, stacklevel=2)
        notes.append(msg)
    hier = build_hierarchy(d, depth, max_count=max_count)
    A = heom_generator(H, bath, hier)
    h_max = default_step(h, bath, depth) if step is None else float(step)
    size = A.shape[0]
    y = np.zeros(size, dtype=complex)
    y[:d * d] = rho.ravel()
    pops = np.empty((t.size, d))
    rhos = np.empty((t.size, d, d), dtype=complex) if keep_rho else None

    def record(k, vec):
        r = vec[:d * d].reshape(d, d)
        pops[k] = r.diagonal().real
        if keep_rho:
            rhos[k] = r

    record(0, y)
    dense = size <= DENSE_LIMIT
    if dense:
        A_dense = A.toarray()
        cache = {}
    intervals = np.diff(t)
    used = h_max
    for k, dt in enumerate(intervals, start=1):
        # intervals equal to ~1e-12 relative share one propagator
        dt = float(f"{dt:.12g}")
        n_sub = max(1, math.ceil(dt / h_max - 1e-9))
        hstep = dt / n_sub
        used = min(used, hstep)
        # overflow surfaces below as HeomIntegrationError
        with np.errstate(over="ignore", invalid="ignore"):
            if dense:
                if dt not in cache:
                    cache[dt] = np.linalg.matrix_power(_rk4_matrix(A_dense, hstep), n_sub)
                y = cache[dt] @ y
            else:
                for _ in range(n_sub):
                    y = _rk4_step(A, y, hstep)
        if not np.all(np.isfinite(y[:d * d])):
            raise HeomIntegrationError(float(t[k - 1]))
        record(k, y)
    return HeomResult(t, pops, rhos, depth, hier.count, used, notes)


@dataclass(frozen=True)
class DepthConvergence:
    depth: int
    residual: float
    converged: bool
    differences: tuple


def converged_depth(h: HamiltonianMatrix, bath: BathParams, rho0, t_grid, tol: float,
                    min_depth: int = 0, max_depth: int = 8, **kwargs) -> DepthConvergence:
    """Smallest depth whose populations differ from depth+1 by less than ``tol``.

    ``differences[i]`` is the max population difference between depths
    ``min_depth + i`` and ``min_depth + i + 1``.  If ``max_depth`` is reached
    first the result has ``converged=False`` and reports the depth with the
    smallest residual.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    diffs = []
    prev = heom_propagate(h, bath, rho0, t_grid, min_depth, keep_rho=False, **kwargs).populations
    for depth in range(min_depth, max_depth):
        nxt = heom_propagate(h, bath, rho0, t_grid, depth + 1, keep_rho=False, **kwargs).populations
        diff = float(np.max(np.abs(nxt - prev)))
        diffs.append(diff)
        if diff < tol:
            return DepthConvergence(depth, diff, True, tuple(diffs))
        prev = nxt
    best = int(np.argmin(diffs)) if diffs else 0
    return DepthConvergence(min_depth + best, diffs[best] if diffs else 0.0, False, tuple(diffs))
