"""State-vector and density-matrix engine for registers of up to four atoms.

Each atom is a two-level memory with basis ``g -> 0`` (bright) and
``s -> 1`` (dark). Qubit 0 is the most significant index of the flattened
amplitude vector, so ``|gs>`` sits at index ``0b01``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence, Union

import numpy as np

MAX_QUBITS = 4
NORM_TOL = 1e-12
_INV_SQRT2 = 1 / math.sqrt(2)
G, S = 0, 1


class StateError(ValueError):
    """Raised for malformed registers or invalid register manipulations."""


@dataclass(frozen=True, eq=False)
class PureState:
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        size = amps.shape[0] if amps.ndim == 1 else -1
        if size < 1 or size & (size - 1):
            raise StateError(f"amplitude vector length {size} is not a power of two")
        if size > 2**MAX_QUBITS:
            raise StateError(f"register exceeds {MAX_QUBITS} qubits")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def _trusted(cls, amps: np.ndarray) -> "PureState":
        # hot-path constructor for vectors produced by this module
        obj = object.__new__(cls)
        obj.__dict__["amplitudes"] = amps
        return obj

    @property
    def num_qubits(self) -> int:
        return self.amplitudes.shape[0].bit_length() - 1

    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def tensor_view(self) -> np.ndarray:
        return self.amplitudes.reshape((2,) * self.num_qubits)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @classmethod
    def basis(cls, labels: str) -> "PureState":
        """Computational basis state from a label string such as ``"gs"``."""
        index = 0
        for ch in labels:
            if ch not in "gs":
                raise StateError(f"unknown basis label {ch!r}")
            index = 2 * index + (ch == "s")
        amps = np.zeros(2 ** len(labels), dtype=complex)
        amps[index] = 1.0
        return cls(amps)

    @classmethod
    def from_qubit(cls, alpha: complex, beta: complex) -> "PureState":
        """``alpha|g> + beta|s>``; raises if not normalized."""
        norm = abs(alpha) ** 2 + abs(beta) ** 2
        if abs(norm - 1.0) > 1e-9:
            raise StateError(f"|alpha|^2 + |beta|^2 = {norm}, expected 1")
        return cls(np.array([alpha, beta], dtype=complex))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise StateError("density matrix must be square")
        size = mat.shape[0]
        if size < 1 or size & (size - 1) or size > 2**MAX_QUBITS:
            raise StateError(f"invalid density matrix dimension {size}")
        object.__setattr__(self, "matrix", mat)

    @property
    def num_qubits(self) -> int:
        return self.matrix.shape[0].bit_length() - 1

    @classmethod
    def from_pure(cls, psi: PureState) -> "DensityMatrix":
        return cls(np.outer(psi.amplitudes, psi.amplitudes.conj()))

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def is_physical(self, tol: float = 1e-12) -> bool:
        mat = self.matrix
        if not np.allclose(mat, mat.conj().T, atol=tol, rtol=0):
            return False
        if abs(self.trace() - 1.0) > tol:
            return False
        return bool(np.linalg.eigvalsh(mat).min() >= -1e-10)

    def probabilities(self) -> np.ndarray:
        return np.real(np.diag(self.matrix)).clip(min=0.0)

    def apply_unitary(self, unitary: np.ndarray) -> "DensityMatrix":
        return DensityMatrix(unitary @ self.matrix @ unitary.conj().T)

    def apply_single_qubit(self, qubit: int, gate: np.ndarray) -> "DensityMatrix":
        return self.apply_unitary(_embed(gate, qubit, self.num_qubits))


@dataclass(frozen=True)
class ProjectionOutcome:
    state: Optional[PureState]
    probability: float


def _check_qubit(qubit: int, n: int) -> None:
    if not 0 <= qubit < n:
        raise StateError(f"qubit index {qubit} out of range for {n}-qubit register")


def _split(amps: np.ndarray, qubit: int, n: int) -> np.ndarray:
    # view as (higher qubits, this qubit, lower qubits)
    return amps.reshape(1 << qubit, 2, 1 << (n - qubit - 1))


@lru_cache(maxsize=None)
def _bit_of(n: int, qubit: int) -> np.ndarray:
    return (np.arange(1 << n) >> (n - 1 - qubit)) & 1


@lru_cache(maxsize=None)
def _s_indices(n: int, qubit: int) -> np.ndarray:
    return np.flatnonzero(_bit_of(n, qubit))


@lru_cache(maxsize=1024)
def _damping_scale(n: int, qubit: int, p: float) -> np.ndarray:
    return np.where(_bit_of(n, qubit) == 1, math.sqrt(1.0 - p), 1.0)


@lru_cache(maxsize=None)
def _pattern_code(n: int, qubit_a: int, qubit_b: int) -> np.ndarray:
    return 2 * _bit_of(n, qubit_a) + _bit_of(n, qubit_b)


@lru_cache(maxsize=None)
def _relabel_target(n: int, drop: tuple[int, ...]) -> tuple[np.ndarray, int]:
    # register index after removing the dropped qubits
    keep = [q for q in range(n) if q not in drop]
    target = np.zeros(1 << n, dtype=np.intp)
    for q in keep:
        target = 2 * target + _bit_of(n, q)
    return target, 1 << len(keep)


def _embed(gate: np.ndarray, qubit: int, n: int) -> np.ndarray:
    return np.kron(np.kron(np.eye(1 << qubit), gate), np.eye(1 << (n - qubit - 1)))


def _normalized(amps: np.ndarray) -> PureState:
    norm = math.sqrt(np.vdot(amps, amps).real)
    return PureState._trusted(amps / norm)


# --- constructors -------------------------------------------------------------


def init_node_superposition(phase: float) -> PureState:
    """Node memory prepared in ``(|g> + e^{i phase}|s>)/sqrt(2)``."""
    if not math.isfinite(phase):
        raise StateError("phase must be finite")
    r = _INV_SQRT2
    return PureState._trusted(np.array([r, r * complex(math.cos(phase), math.sin(phase))]))


def entangled_pair_state(phase: float) -> PureState:
    """``(|gs> + e^{i phase}|sg>)/sqrt(2)``, the heralded link state."""
    r = 1 / math.sqrt(2)
    amps = np.zeros(4, dtype=complex)
    amps[0b01] = r
    amps[0b10] = r * complex(math.cos(phase), math.sin(phase))
    return PureState(amps)


def tensor(a: PureState, b: PureState) -> PureState:
    n = a.num_qubits + b.num_qubits
    if n > MAX_QUBITS:
        raise StateError(f"combined register of {n} qubits exceeds {MAX_QUBITS}")
    # the product of normalized factors is already normalized
    return PureState._trusted((a.amplitudes[:, None] * b.amplitudes).reshape(-1))


# --- gates --------------------------------------------------------------------


def phase_gate_matrix(alpha: float) -> np.ndarray:
    return np.array([[1.0, 0.0], [0.0, np.exp(1j * alpha)]], dtype=complex)


def rotation_x_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def apply_single_qubit(state: PureState, qubit: int, gate: np.ndarray) -> PureState:
    n = state.num_qubits
    _check_qubit(qubit, n)
    t = _split(state.amplitudes, qubit, n)
    out = np.empty_like(t)
    out[:, 0, :] = gate[0, 0] * t[:, 0, :] + gate[0, 1] * t[:, 1, :]
    out[:, 1, :] = gate[1, 0] * t[:, 0, :] + gate[1, 1] * t[:, 1, :]
    return PureState(out.reshape(-1))


def apply_phase_gate(state: PureState, qubit: int, alpha: float) -> PureState:
    n = state.num_qubits
    _check_qubit(qubit, n)
    t = _split(state.amplitudes, qubit, n).copy()
    t[:, 1, :] *= complex(math.cos(alpha), math.sin(alpha))
    return PureState(t.reshape(-1))


def apply_rotation_x(state: PureState, qubit: int, theta: float) -> PureState:
    return apply_single_qubit(state, qubit, rotation_x_matrix(theta))


# --- projections --------------------------------------------------------------


def single_bright_projection(
    state: PureState, qubit_a: int, qubit_b: int, channel_phase: float = 0.0
) -> ProjectionOutcome:
    """Herald "exactly one of ``qubit_a``, ``qubit_b`` bright".

    Applies ``|g><g|_a |s><s|_b + e^{i channel_phase} |s><s|_a |g><g|_b``. The
    returned probability is the Born weight of the single-bright subspace.
    """
    n = state.num_qubits
    _check_qubit(qubit_a, n)
    _check_qubit(qubit_b, n)
    if qubit_a == qubit_b:
        raise StateError("projection needs two distinct qubits")
    return _outcome(state.amplitudes * _single_bright_diagonal(n, qubit_a, qubit_b, channel_phase))


@lru_cache(maxsize=4096)
def _single_bright_diagonal(n: int, qubit_a: int, qubit_b: int, channel_phase: float) -> np.ndarray:
    code = _pattern_code(n, qubit_a, qubit_b)
    phase = complex(math.cos(channel_phase), math.sin(channel_phase))
    return np.where(code == 0b01, 1.0 + 0j, np.where(code == 0b10, phase, 0j))


def project_pattern(state: PureState, qubits: Sequence[int], labels: Sequence[int]) -> ProjectionOutcome:
    """Project the listed qubits onto fixed computational values (0=g, 1=s)."""
    n = state.num_qubits
    t = state.tensor_view()
    idx = [slice(None)] * n
    for q, v in zip(qubits, labels):
        _check_qubit(q, n)
        idx[q] = v
    out = np.zeros_like(t)
    out[tuple(idx)] = t[tuple(idx)]
    return _outcome(out.reshape(-1))


def _outcome(amps: np.ndarray) -> ProjectionOutcome:
    prob = float(np.vdot(amps, amps).real)
    if prob <= NORM_TOL**2:
        return ProjectionOutcome(None, 0.0)
    return ProjectionOutcome(PureState._trusted(amps / math.sqrt(prob)), min(prob, 1.0))


def pattern_weights(state: PureState, qubit_a: int, qubit_b: int) -> np.ndarray:
    """2x2 array of Born weights for the (qubit_a, qubit_b) basis pattern."""
    n = state.num_qubits
    amps = state.amplitudes
    probs = amps.real**2 + amps.imag**2
    return np.bincount(_pattern_code(n, qubit_a, qubit_b), weights=probs, minlength=4).reshape(2, 2)


def relabel_s_to_g(state: PureState, qubits: Iterable[int]) -> PureState:
    """Map ``|s> -> |g>`` on the listed qubits and drop them from the register.

    Models the pi-pulse plus spontaneous decay that resets the measured atoms.
    Raises :class:`StateError` when two surviving branches would merge, since
    the idealized map is then not an isometry on the state.
    """
    n = state.num_qubits
    drop = tuple(sorted(set(qubits)))
    for q in drop:
        _check_qubit(q, n)
    target, size = _relabel_target(n, drop)
    amps = state.amplitudes
    live = np.abs(amps) > 1e-12
    dest = target[live]
    if len(set(dest.tolist())) < len(dest):
        raise StateError("relabeling merges distinct branches; listed qubits do not factor out")
    out = np.zeros(size, dtype=complex)
    out[dest] = amps[live]
    return _normalized(out)


# --- measurement and noise ----------------------------------------------------


def measure_z(state: PureState, qubit: int, rng: np.random.Generator) -> tuple[int, PureState]:
    """Born-rule readout; bit 0 means ``g`` (bright)."""
    n = state.num_qubits
    _check_qubit(qubit, n)
    t = _split(state.amplitudes, qubit, n)
    p_g = float(np.sum(np.abs(t[:, 0, :]) ** 2))
    bit = 0 if rng.random() < p_g else 1
    out = np.zeros_like(t)
    out[:, bit, :] = t[:, bit, :]
    return bit, _normalized(out.reshape(-1))


def _decay_core(amps: np.ndarray, n: int, qubit: int, p: float, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    s_idx = _s_indices(n, qubit)
    s_part = amps[s_idx]
    w_s = np.vdot(s_part, s_part).real
    if w_s == 0.0:
        return amps, False
    if rng.random() < p * w_s:
        out = np.zeros_like(amps)
        out[s_idx - (1 << (n - 1 - qubit))] = s_part
        return out / math.sqrt(w_s), True
    # no-jump branch: s amplitudes shrink by sqrt(1-p), total norm becomes 1 - p*w_s
    return amps * (_damping_scale(n, qubit, p) / math.sqrt(1.0 - p * w_s)), False


def decay_trajectory_steps(
    state: PureState, qubits: Sequence[int], dt: float, t_c: float, rng: np.random.Generator
) -> tuple[PureState, int]:
    """Apply :func:`decay_trajectory_step` to each listed qubit in turn; returns the jump count."""
    if dt < 0 or t_c <= 0:
        raise StateError("need dt >= 0 and t_c > 0")
    p = -math.expm1(-dt / t_c)
    n = state.num_qubits
    for q in qubits:
        _check_qubit(q, n)
    if p == 0.0:
        return state, 0
    amps, jumps = state.amplitudes, 0
    for q in qubits:
        amps, jumped = _decay_core(amps, n, q, p, rng)
        jumps += jumped
    return PureState._trusted(amps), jumps


def decay_trajectory_step(
    state: PureState, qubit: int, dt: float, t_c: float, rng: np.random.Generator
) -> tuple[PureState, bool]:
    """One quantum-jump step of ``s -> g`` decay; also reports whether it jumped.

    Averaged over the jump/no-jump branches this reproduces the amplitude
    damping channel with ``p = 1 - exp(-dt/t_c)``.
    """
    state, jumps = decay_trajectory_steps(state, (qubit,), dt, t_c, rng)
    return state, jumps > 0


def amplitude_decay_sample(
    state: PureState, qubit: int, dt: float, t_c: float, rng: np.random.Generator
) -> PureState:
    return decay_trajectory_step(state, qubit, dt, t_c, rng)[0]


def amplitude_damping_channel(rho: DensityMatrix, qubit: int, dt: float, t_c: float) -> DensityMatrix:
    """Exact ``s -> g`` damping channel with ``p = 1 - exp(-dt/t_c)``."""
    p = -math.expm1(-dt / t_c)
    n = rho.num_qubits
    _check_qubit(qubit, n)
    k0 = _embed(np.array([[1.0, 0.0], [0.0, math.sqrt(1 - p)]]), qubit, n)
    k1 = _embed(np.array([[0.0, math.sqrt(p)], [0.0, 0.0]]), qubit, n)
    m = rho.matrix
    return DensityMatrix(k0 @ m @ k0.conj().T + k1 @ m @ k1.conj().T)


def phase_kick(state: PureState, qubit: int, sigma: float, rng: np.random.Generator) -> PureState:
    """Random phase ``e^{i delta}`` on ``|s>`` with ``delta ~ N(0, sigma^2)``."""
    if sigma < 0:
        raise StateError("sigma must be non-negative")
    if sigma == 0:
        return state
    return apply_phase_gate(state, qubit, float(rng.normal(0.0, sigma)))


def dark_count_mixture(psi: PureState, c0: float) -> DensityMatrix:
    """``(c0 |ss..><ss..| + |psi><psi|) / (1 + c0)``: heralded state with dark-count admixture."""
    if c0 < 0:
        raise StateError("c0 must be non-negative")
    dim = psi.amplitudes.shape[0]
    vac = np.zeros((dim, dim), dtype=complex)
    vac[-1, -1] = 1.0
    pure = np.outer(psi.amplitudes, psi.amplitudes.conj())
    return DensityMatrix((c0 * vac + pure) / (1.0 + c0))


def fidelity(rho: Union[DensityMatrix, PureState], target: PureState) -> float:
    """``<target|rho|target>``, or ``|<target|psi>|^2`` for a pure input."""
    if rho.num_qubits != target.num_qubits:
        raise StateError(f"dimension mismatch: {rho.num_qubits} vs {target.num_qubits} qubits")
    t = target.amplitudes
    if isinstance(rho, PureState):
        value = abs(np.vdot(t, rho.amplitudes)) ** 2
    else:
        value = np.vdot(t, rho.matrix @ t).real
    return float(min(max(value, 0.0), 1.0))
