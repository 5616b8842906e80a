"""Gradient ascent pulse engineering for coupled spin-1/2 systems.

Segment ``j`` of a pulse applies

    U_j = exp(-i dt (H_int + sum_k u_x^k(j) X_k + u_y^k(j) Y_k))

and the fitness is ``F = |Tr(U_D^dag U_L ... U_1)| / 2^n``.  Controls are in
rad/ms, ``dt`` in ms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import HamiltonianMatrix, pauli_string_matrix

HZ_TO_RAD_PER_MS = 2 * math.pi * 1e-3

CHLOROFORM_SHIFTS_HZ = (3206.5, 7787.9)
CHLOROFORM_J_HZ = 215.1


class IllConditionedGradient(ValueError):
    """Raised when the fitness is too close to zero for ``|.|`` to be differentiable."""


def _local_op(pauli: str, k: int, n: int) -> np.ndarray:
    label = ["I"] * n
    label[k] = pauli
    return pauli_string_matrix("".join(label))


@dataclass(frozen=True)
class SpinSystem:
    """Weakly coupled spins: ``sum_k pi nu_k Z_k + sum_{k<l} (pi J_kl / 2) Z_k Z_l``.

    ``shifts_hz`` and ``couplings_hz`` are ordinary frequencies in Hz.
    """

    shifts_hz: tuple
    couplings_hz: dict = field(default_factory=dict)

    @property
    def n_qubits(self) -> int:
        return len(self.shifts_hz)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    @classmethod
    def chloroform(cls):
        return cls(CHLOROFORM_SHIFTS_HZ, {(0, 1): CHLOROFORM_J_HZ})

    def hamiltonian(self) -> HamiltonianMatrix:
        n = self.n_qubits
        H = np.zeros((self.dim, self.dim), dtype=complex)
        for k, nu in enumerate(self.shifts_hz):
            H += HZ_TO_RAD_PER_MS * nu / 2 * _local_op("Z", k, n)
        for (k, l), J in self.couplings_hz.items():
            H += HZ_TO_RAD_PER_MS * J / 4 * (_local_op("Z", k, n) @ _local_op("Z", l, n))
        return HamiltonianMatrix(H)

    def control_operators(self) -> np.ndarray:
        """``(n_qubits, 2, d, d)`` array of ``X_k`` and ``Y_k``."""
        n = self.n_qubits
        return np.array([[_local_op("X", k, n), _local_op("Y", k, n)] for k in range(n)])


@dataclass
class ControlPulse:
    """Piecewise-constant controls ``u[j, k, a]`` for segment j, qubit k, axis a (x, y)."""

    u: np.ndarray
    dt: float
    amplitude_cap: float | None = None

    def __post_init__(self):
        self.u = np.array(self.u, dtype=float)
        if self.u.ndim != 3 or self.u.shape[2] != 2:
            raise ValueError("controls must have shape (L, n_qubits, 2)")
        if not np.all(np.isfinite(self.u)):
            raise ValueError("controls must be finite")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.amplitude_cap is not None and np.any(np.abs(self.u) > self.amplitude_cap):
            raise ValueError("control amplitude exceeds the cap")

    @property
    def L(self) -> int:
        return self.u.shape[0]

    @property
    def n_qubits(self) -> int:
        return self.u.shape[1]

    @property
    def duration(self) -> float:
        return self.L * self.dt

    @classmethod
    def zeros(cls, L, n_qubits, dt):
        return cls(np.zeros((L, n_qubits, 2)), dt)

    @classmethod
    def random(cls, L, n_qubits, dt, scale=2 * math.pi * 0.1, seed=0):
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-scale, scale, size=(L, n_qubits, 2)), dt)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(f"# L={self.L},dt={self.dt:.17g},n_qubits={self.n_qubits}\n")
            fh.write("segment,qubit,u_x_rad_per_ms,u_y_rad_per_ms\n")
            for j in range(self.L):
                for k in range(self.n_qubits):
                    fh.write(f"{j},{k},{self.u[j, k, 0]:.17g},{self.u[j, k, 1]:.17g}\n")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            meta = dict(item.split("=") for item in fh.readline().lstrip("# ").strip().split(","))
        data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
        L, n = int(meta["L"]), int(meta["n_qubits"])
        u = np.zeros((L, n, 2))
        u[data[:, 0].astype(int), data[:, 1].astype(int)] = data[:, 2:4]
        return cls(u, float(meta["dt"]))


def _segment_hamiltonians(pulse: ControlPulse, sys: SpinSystem):
    if pulse.n_qubits != sys.n_qubits:
        raise ValueError("pulse and spin system have different qubit counts")
    ops = sys.control_operators()
    return np.asarray(sys.hamiltonian().elements)[None] + np.einsum("jka,kaxy->jxy", pulse.u, ops)


def _segment_eig(pulse, sys):
    e, v = np.linalg.eigh(_segment_hamiltonians(pulse, sys))
    phase = np.exp(-1j * pulse.dt * e)
    U = np.einsum("jab,jb,jcb->jac", v, phase, v.conj())
    return e, v, phase, U


def compile_propagator(pulse: ControlPulse, sys: SpinSystem) -> np.ndarray:
    """``U_L ... U_1``."""
    U = np.eye(sys.dim, dtype=complex)
    for Uj in _segment_eig(pulse, sys)[3]:
        U = Uj @ U
    return U


def gate_fidelity(U_target, U) -> float:
    U_target = np.asarray(U_target)
    if U_target.shape != np.shape(U):
        raise ValueError("unitaries must have the same shape")
    return float(abs(np.trace(U_target.conj().T @ U)) / U_target.shape[0])


def fidelity(U_target, pulse: ControlPulse, sys: SpinSystem) -> float:
    return gate_fidelity(U_target, compile_propagator(pulse, sys))


def gradient(pulse: ControlPulse, U_target, sys: SpinSystem, method: str = "exact",
             return_fidelity: bool = False):
    """dF/du with the same shape as ``pulse.u``.

    ``method="exact"`` differentiates each segment exponential through its
    eigendecomposition; ``method="first_order"`` uses
    ``dU_j ~ -i dt O U_j``, accurate when ``dt ||H_j|| << 1``.
    """
    U_target = np.asarray(U_target)
    e, v, phase, U = _segment_eig(pulse, sys)
    L, d = pulse.L, sys.dim
    fwd = np.empty((L + 1, d, d), dtype=complex)   # fwd[j] = U_j ... U_1
    fwd[0] = np.eye(d)
    for j in range(L):
        fwd[j + 1] = U[j] @ fwd[j]
    bwd = np.empty((L + 1, d, d), dtype=complex)   # bwd[j] = U_D^dag U_L ... U_{j+1}
    bwd[L] = U_target.conj().T
    for j in range(L - 1, -1, -1):
        bwd[j] = bwd[j + 1] @ U[j]
    z = np.trace(bwd[L] @ fwd[L])
    F = abs(z) / d
    if F < 1e-10:
        raise IllConditionedGradient(f"fidelity {F:.3g} is too small for a stable gradient")
    ops = sys.control_operators()
    dt = pulse.dt
    if method == "first_order":
        # dz = -i dt Tr(bwd[j+1] O fwd[j+1])
        dz = -1j * dt * np.einsum("jab,kpbc,jca->jkp", bwd[1:], ops, fwd[1:])
    elif method == "exact":
        diff = e[:, :, None] - e[:, None, :]
        same = np.abs(diff) < 1e-10
        num = phase[:, :, None] - phase[:, None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            Phi = np.where(same, -1j * dt * phase[:, :, None], num / np.where(same, 1.0, diff))
        # W = V^dag fwd[j] bwd[j+1] V and O' = V^dag O V
        W = np.einsum("jba,jbc,jcd,jde->jae", v.conj(), fwd[:-1], bwd[1:], v)
        Op = np.einsum("jba,kpbc,jcd->jkpad", v.conj(), ops, v)
        dz = np.einsum("jba,jab,jkpab->jkp", W, Phi, Op)
    else:
        raise ValueError(f"unknown gradient method {method!r}")
    g = (np.conj(z) * dz).real / (abs(z) * d)
    return (g, F) if return_fidelity else g


@dataclass
class OptimizeResult:
    pulse: ControlPulse
    fidelity: float
    trace: list
    status: str
    iterations: int


def optimize(U_target, sys: SpinSystem, L: int = 100, dt: float = 0.05, step: float = 0.1,
             max_iter: int = 2000, target_fidelity: float = 0.999, initial: ControlPulse | None = None,
             seed: int = 0, method: str = "exact", patience: int = 200,
             min_gain: float = 1e-9) -> OptimizeResult:
    """Gradient ascent ``u <- u + eps g`` with a backtracking step size.

    ``eps`` grows by 1.2 after an accepted step and halves on a rejected one.
    Stops when the fitness reaches ``target_fidelity`` (status ``"target"``),
    after ``max_iter`` gradient evaluations (``"max_iter"``), or when the
    best fitness improved by less than ``min_gain`` over ``patience``
    iterations (``"stall"``).  The best pulse seen is returned.
    """
    if not 0 < target_fidelity <= 1:
        raise ValueError("target_fidelity must lie in (0, 1]")
    pulse = initial if initial is not None else ControlPulse.random(L, sys.n_qubits, dt, seed=seed)
    u = pulse.u.copy()
    g, F = gradient(ControlPulse(u, pulse.dt), U_target, sys, method, return_fidelity=True)
    trace = [F]
    eps = step
    status = "max_iter"
    it = 0
    if F >= target_fidelity:
        return OptimizeResult(ControlPulse(u, pulse.dt), F, trace, "target", 0)
    history = [F]
    while it < max_iter:
        it += 1
        trial = u + eps * g
        F_new = fidelity(U_target, ControlPulse(trial, pulse.dt), sys)
        if F_new > F:
            u, eps = trial, eps * 1.2
            g, F = gradient(ControlPulse(u, pulse.dt), U_target, sys, method, return_fidelity=True)
            trace.append(F)
            if F >= target_fidelity:
                status = "target"
                break
        else:
            eps /= 2
        history.append(F)
        if len(history) > patience and history[-1] - history[-1 - patience] < min_gain:
            status = "stall"
            break
    return OptimizeResult(ControlPulse(u, pulse.dt), F, trace, status, it)


CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
