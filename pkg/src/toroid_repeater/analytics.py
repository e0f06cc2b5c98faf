"""Closed-form evaluators and the entanglement-based application experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import photon_stats as ps
from .protocol_engine import (
    TWO_PI,
    EntangledPair,
    RepeaterConfig,
    derive_link,
    run_nested_trial,
)
from .quantum_core import (
    DensityMatrix,
    PureState,
    apply_phase_gate,
    apply_rotation_x,
    dark_count_mixture,
    entangled_pair_state,
    fidelity,
    pattern_weights,
    phase_gate_matrix,
    phase_kick,
    project_pattern,
    relabel_s_to_g,
    rotation_x_matrix,
    single_bright_projection,
    tensor,
)

PairSource = Callable[[np.random.Generator], EntangledPair]

CHSH_SETTINGS = (
    (0.0, math.pi / 4),
    (math.pi / 2, math.pi / 4),
    (math.pi / 2, 3 * math.pi / 4),
    (0.0, 3 * math.pi / 4),
)
CHSH_SIGNS = (1, 1, 1, -1)
EKERT_BASES = (0.0, math.pi / 2)


# --- closed forms -------------------------------------------------------------


def analytic_expected_time(config: RepeaterConfig, p1: Optional[float] = None) -> float:
    """Mean time to distribute one pair over ``2**m`` links: ``2^(m+1) T0 / P1^(m+1)``."""
    if p1 is None:
        p1 = ps.discrimination_profile(config.count_model).p1
    _, T0 = derive_link(config)
    k = config.m + 1
    return 2.0**k * T0 / p1**k


def decoherence_bound(t_exposure: float, t_c: float) -> float:
    """Upper bound on the fidelity loss from memory decay, ``3 (1 - e^{-t/t_c})``."""
    if t_exposure < 0 or t_c <= 0:
        raise ValueError("need t_exposure >= 0 and t_c > 0")
    return -3.0 * math.expm1(-t_exposure / t_c)


def phase_walk_sigma(sigma_link: float, m: int) -> float:
    """Phase noise after ``m`` doublings: independent link errors add as a random walk."""
    if sigma_link < 0 or m < 0:
        raise ValueError("need sigma_link >= 0 and m >= 0")
    return sigma_link * math.sqrt(2**m)


# --- pair sources -------------------------------------------------------------


def ideal_pair_source(random_phase: bool = True) -> PairSource:
    def source(rng: np.random.Generator) -> EntangledPair:
        phase = TWO_PI * rng.random() if random_phase else 0.0
        return EntangledPair((0, 1), phase, 0.0, entangled_pair_state(phase))

    return source


def dark_count_pair_source(c0: float, random_phase: bool = True) -> Callable:
    """Pairs carried as the mixed state with dark-count weight ``c0``."""

    def source(rng: np.random.Generator):
        phase = TWO_PI * rng.random() if random_phase else 0.0
        return MixedPair(phase, dark_count_mixture(entangled_pair_state(phase), c0))

    return source


def dephased_pair_source(sigma: float, random_phase: bool = True) -> PairSource:
    """Ideal pairs whose relative phase picks up an unknown Gaussian kick."""

    def source(rng: np.random.Generator) -> EntangledPair:
        phase = TWO_PI * rng.random() if random_phase else 0.0
        state = phase_kick(entangled_pair_state(phase), 0, sigma, rng)
        return EntangledPair((0, 1), phase, 0.0, state)

    return source


def engine_pair_source(config: RepeaterConfig) -> PairSource:
    """End-to-end pairs produced by full repeater trials under ``config``."""

    def source(rng: np.random.Generator) -> EntangledPair:
        result = run_nested_trial(config, rng, log_events=False)
        return result.final_pair

    return source


@dataclass(frozen=True)
class MixedPair:
    phase: float
    state: DensityMatrix


# --- readout ------------------------------------------------------------------


def _rotated_outcome_probs(pair, phi_l: float, phi_r: float) -> np.ndarray:
    """P(L, R) over {g, s}^2 after the |psi^-> phase shift and the X rotations."""
    alpha = math.pi - pair.phase
    state = pair.state
    if isinstance(state, PureState):
        state = apply_phase_gate(state, 0, alpha)
        state = apply_rotation_x(state, 0, phi_l)
        state = apply_rotation_x(state, 1, phi_r)
        return pattern_weights(state, 0, 1)
    rho = state.apply_single_qubit(0, rotation_x_matrix(phi_l) @ phase_gate_matrix(alpha))
    rho = rho.apply_single_qubit(1, rotation_x_matrix(phi_r))
    return rho.probabilities().reshape(2, 2)


def _read_bit(atom_level: int, model: ps.PhotonCountModel, rng: np.random.Generator, ideal: bool) -> int:
    if ideal:
        return 1 if atom_level == 0 else 0
    n = ps.sample_count(model.mean_for(1 if atom_level == 0 else 0), rng)
    return ps.threshold_bit(n, model.window_lo)


def measure_pair(
    pair,
    phi_l: float,
    phi_r: float,
    rng: np.random.Generator,
    model: ps.PhotonCountModel = ps.PhotonCountModel(),
    ideal_readout: bool = False,
) -> tuple[int, int]:
    """Rotate both atoms, read them out and return ``(bit_L, bit_R)``.

    The R bit is complemented so that matching settings give equal bits and the
    correlator follows ``+cos(phi_L - phi_R)``.
    """
    probs = _rotated_outcome_probs(pair, phi_l, phi_r).ravel().tolist()
    u = rng.random()
    acc = 0.0
    index = 3
    for k, w in enumerate(probs):
        acc += w
        if u < acc:
            index = k
            break
    level_l, level_r = divmod(index, 2)
    bit_l = _read_bit(level_l, model, rng, ideal_readout)
    bit_r = _read_bit(level_r, model, rng, ideal_readout)
    return bit_l, 1 - bit_r


def exact_correlation(pair, phi_l: float, phi_r: float) -> float:
    """Born-rule correlator with ideal readout and the complemented R bit."""
    p = _rotated_outcome_probs(pair, phi_l, phi_r)
    # raw same-outcome events become "different" after complementing R
    return float((p[0, 1] + p[1, 0]) - (p[0, 0] + p[1, 1]))


def exact_chsh(pair) -> float:
    return abs(sum(sign * exact_correlation(pair, a, b) for sign, (a, b) in zip(CHSH_SIGNS, CHSH_SETTINGS)))


# --- experiments --------------------------------------------------------------


@dataclass
class ChshResult:
    correlations: dict[tuple[float, float], float]
    S: float
    samples_per_setting: int
    standard_errors: dict[tuple[float, float], float]
    S_stderr: float = math.nan

    def to_dict(self) -> dict:
        return {
            "correlations": [
                {"phi_l": a, "phi_r": b, "E": e, "stderr": self.standard_errors[(a, b)]}
                for (a, b), e in self.correlations.items()
            ],
            "S": self.S,
            "S_stderr": self.S_stderr,
            "samples_per_setting": self.samples_per_setting,
        }


def run_chsh(
    pair_source,
    angle_settings: Optional[Sequence[tuple[float, float]]] = None,
    samples: int = 100_000,
    rng: Optional[np.random.Generator] = None,
    model: ps.PhotonCountModel = ps.PhotonCountModel(),
    ideal_readout: bool = False,
) -> ChshResult:
    """Estimate ``E = (N_same - N_diff) / N`` per setting and the CHSH value ``S``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    settings = list(angle_settings) if angle_settings is not None else list(CHSH_SETTINGS)
    correlations, errors = {}, {}
    for a, b in settings:
        same = 0
        for _ in range(samples):
            bit_l, bit_r = measure_pair(pair_source(rng), a, b, rng, model, ideal_readout)
            same += bit_l == bit_r
        e = (2 * same - samples) / samples
        correlations[(a, b)] = e
        errors[(a, b)] = math.sqrt(max(1.0 - e * e, 0.0) / samples)
    if all(s in correlations for s in CHSH_SETTINGS):
        S = abs(sum(sign * correlations[s] for sign, s in zip(CHSH_SIGNS, CHSH_SETTINGS)))
        S_err = math.sqrt(sum(errors[s] ** 2 for s in CHSH_SETTINGS))
    else:
        S, S_err = math.nan, math.nan
    return ChshResult(correlations, S, samples, errors, S_err)


@dataclass
class EkertResult:
    raw_rounds: int
    sifted_bits: tuple[str, str]
    sift_rate: float
    qber: float

    def to_dict(self) -> dict:
        return {
            "raw_rounds": self.raw_rounds,
            "sifted_length": len(self.sifted_bits[0]),
            "sift_rate": self.sift_rate,
            "qber": self.qber,
            "key_l": self.sifted_bits[0],
            "key_r": self.sifted_bits[1],
        }


def run_ekert(
    pair_source,
    rounds: int,
    rng: Optional[np.random.Generator] = None,
    model: ps.PhotonCountModel = ps.PhotonCountModel(),
    ideal_readout: bool = False,
) -> EkertResult:
    """Key distribution with rotations drawn independently from {0, pi/2} on each side."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    key_l, key_r = [], []
    for _ in range(rounds):
        a = EKERT_BASES[int(rng.integers(2))]
        b = EKERT_BASES[int(rng.integers(2))]
        bit_l, bit_r = measure_pair(pair_source(rng), a, b, rng, model, ideal_readout)
        if a == b:
            key_l.append(bit_l)
            key_r.append(bit_r)
    kept = len(key_l)
    errors = sum(x != y for x, y in zip(key_l, key_r))
    return EkertResult(
        raw_rounds=rounds,
        sifted_bits=("".join(map(str, key_l)), "".join(map(str, key_r))),
        sift_rate=kept / rounds,
        qber=errors / kept if kept else math.nan,
    )


@dataclass
class TeleportResult:
    trials: int
    success_rate: float
    mean_fidelity: float
    fidelities: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "successes": len(self.fidelities),
            "success_rate": self.success_rate,
            "mean_fidelity": self.mean_fidelity,
            "min_fidelity": min(self.fidelities) if self.fidelities else math.nan,
        }


def teleport_once(
    pair: EntangledPair,
    alpha: complex,
    beta: complex,
    rng: np.random.Generator,
    model: ps.PhotonCountModel = ps.PhotonCountModel(),
) -> Optional[PureState]:
    """One heralded teleportation of ``alpha|g> + beta|s>`` into the pair's R atom.

    Returns the R-atom state, or ``None`` if the herald count missed the window.
    """
    message = PureState.from_qubit(alpha, beta)
    joint = tensor(message, pair.state)  # order: I, L, R
    weights = pattern_weights(joint, 0, 1).ravel().tolist()
    u = rng.random()
    acc, index = 0.0, 3
    for k, w in enumerate(weights):
        acc += w
        if u < acc:
            index = k
            break
    level_i, level_l = divmod(index, 2)
    bright = (level_i == 0) + (level_l == 0)
    n = ps.sample_count(model.mean_for(bright), rng)
    if ps.classify(n, model) is not ps.CountClass.IN_WINDOW:
        return None
    if level_i != level_l:
        # the detector mode carries the pair phase, which cancels it in the output
        heralded = single_bright_projection(joint, 0, 1, pair.phase).state
    else:
        heralded = project_pattern(joint, (0, 1), (level_i, level_l)).state
    return relabel_s_to_g(heralded, (0, 1))


def run_teleportation(
    pair_source: PairSource,
    inputs: Sequence[tuple[complex, complex]],
    rng: Optional[np.random.Generator] = None,
    model: ps.PhotonCountModel = ps.PhotonCountModel(),
) -> TeleportResult:
    rng = rng if rng is not None else np.random.default_rng()
    fids = []
    for alpha, beta in inputs:
        out = teleport_once(pair_source(rng), alpha, beta, rng, model)
        if out is not None:
            fids.append(fidelity(out, PureState.from_qubit(alpha, beta)))
    total = len(inputs)
    return TeleportResult(
        trials=total,
        success_rate=len(fids) / total if total else math.nan,
        mean_fidelity=float(np.mean(fids)) if fids else math.nan,
        fidelities=fids,
    )


def random_qubit_inputs(count: int, rng: np.random.Generator) -> list[tuple[complex, complex]]:
    """Haar-random ``(alpha, beta)`` pairs."""
    z = rng.normal(size=(count, 2)) + 1j * rng.normal(size=(count, 2))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return [(complex(a), complex(b)) for a, b in z]

