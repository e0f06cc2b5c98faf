"""Monte-Carlo execution of the nested repeater protocol.

Nodes along the chain are numbered ``0 .. 2**m``. A pair between nodes
``i < j`` is a two-qubit state ordered ``(atom at i, atom at j)``.
Intermediate nodes hold two atoms, one per adjacent link, so two pairs are
swappable when the right end of one equals the left end of the other.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Optional

import numpy as np

from . import photon_stats as ps
from .quantum_core import (
    PureState,
    decay_trajectory_steps,
    entangled_pair_state,
    fidelity,
    init_node_superposition,
    pattern_weights,
    phase_kick,
    project_pattern,
    relabel_s_to_g,
    single_bright_projection,
    tensor,
)

TWO_PI = 2 * math.pi
DEFAULT_SEED = 20080601
# MeanField reuses one child pair per level; after this many failed swaps the
# children are rebuilt so a degenerate (e.g. decayed) child cannot stall a trial.
MEANFIELD_REUSE_LIMIT = 1000


class TimingMode(enum.Enum):
    MEAN_FIELD = "meanfield"
    PARALLEL_CHILDREN = "parallel"


@dataclass(frozen=True)
class RepeaterConfig:
    """Physical and protocol parameters.

    Lengths are in km, times in seconds, ``c_fiber`` in m/s. Pulse durations
    left as ``None`` default to ``100 * tau_B``.
    """

    L_t: float = 2500.0
    m: int = 6
    L_att: float = 22.0
    c_fiber: float = 2.0e8
    tau_B: float = 6e-9
    t_e: Optional[float] = None
    t_s: Optional[float] = None
    t_a: Optional[float] = None
    t_t: Optional[float] = None
    t_c: float = 6e-3
    c0: float = 0.0
    count_model: ps.PhotonCountModel = field(default_factory=ps.PhotonCountModel)
    phase_sigma_link: float = 0.0
    channel_phase: float = 0.0
    timing_mode: TimingMode = TimingMode.MEAN_FIELD
    heralding_latency: bool = False
    single_photon_mode: bool = False
    random_init_phases: bool = True
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        # 100 * tau_B taken in decimal so the default equals what a unit-suffixed
        # config file would spell out (e.g. 6 ns -> 600 ns, not 600.0000000000001)
        default_pulse = float(Decimal(repr(float(self.tau_B))) * 100)
        for name in ("t_e", "t_s", "t_a", "t_t"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, default_pulse)
        if isinstance(self.timing_mode, str):
            object.__setattr__(self, "timing_mode", TimingMode(self.timing_mode))
        problems = []
        if not self.L_t > 0:
            problems.append(("L_t", "must be > 0"))
        if not (isinstance(self.m, int) and self.m >= 0):
            problems.append(("m", "must be an integer >= 0"))
        if not self.L_att > 0:
            problems.append(("L_att", "must be > 0"))
        if not self.c_fiber > 0:
            problems.append(("c_fiber", "must be > 0"))
        if not self.tau_B > 0:
            problems.append(("tau_B", "must be > 0"))
        for name in ("t_e", "t_s", "t_a", "t_t"):
            if not getattr(self, name) >= 0:
                problems.append((name, "must be >= 0"))
        if not self.t_c > 0:
            problems.append(("t_c", "must be > 0"))
        if not self.c0 >= 0:
            problems.append(("c0", "must be >= 0"))
        if not self.phase_sigma_link >= 0:
            problems.append(("phase_sigma_link", "must be >= 0"))
        if not 0 <= self.seed < 2**64:
            problems.append(("seed", "must be an unsigned 64-bit integer"))
        if problems:
            raise ConfigError(problems)

    @property
    def L0(self) -> float:
        return self.L_t / 2**self.m

    @property
    def effective_c0(self) -> float:
        # multi-photon heralding excludes dark counts entirely
        return self.c0 if self.single_photon_mode else 0.0


class ConfigError(ValueError):
    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{k}: {msg}" for k, msg in problems))


@dataclass(frozen=True)
class EntangledPair:
    endpoints: tuple[int, int]
    phase: float
    created_at: float
    state: PureState
    # signed constituent phases (phi_L, -phi_R, channel per link); ``phase`` is
    # their correctly rounded sum mod 2 pi, so it does not depend on nesting order
    phase_terms: tuple[float, ...] = ()

    def fidelity(self) -> float:
        return fidelity(self.state, entangled_pair_state(self.phase))


@dataclass(frozen=True)
class GenerationAttempt:
    pair: Optional[EntangledPair]
    elapsed: float
    count: int

    @property
    def success(self) -> bool:
        return self.pair is not None


@dataclass(frozen=True)
class SwapAttempt:
    pair: Optional[EntangledPair]
    count: int
    decay_jumps: int = 0

    @property
    def success(self) -> bool:
        return self.pair is not None

    @property
    def undetected_decay(self) -> bool:
        return self.success and self.decay_jumps > 0


@dataclass
class TrialResult:
    success_time: float
    final_phase: float
    final_fidelity: float
    generation_attempts: int
    swap_attempts_per_level: list[int]
    event_log: list[tuple[float, str, int]] = field(default_factory=list)
    undetected_decays: int = 0
    generation_phases: list[tuple[float, float]] = field(default_factory=list)
    final_pair: Optional[EntangledPair] = field(default=None, repr=False)


def derive_link(config: RepeaterConfig) -> tuple[float, float]:
    """Basic-link length (km) and the time (s) of one generation attempt on it."""
    L0 = config.L0
    T0 = L0 * 1e3 / config.c_fiber + config.t_e * math.exp(L0 / config.L_att)
    return L0, T0


def _heralded_state(state: PureState, qa: int, qb: int, bright_pattern: tuple[int, int], phase: float) -> PureState:
    a, b = bright_pattern
    if a != b:
        return single_bright_projection(state, qa, qb, phase).state
    return project_pattern(state, (qa, qb), (a, b)).state


_PATTERNS = ((0, 0), (0, 1), (1, 0), (1, 1))
_INIT_PAIR_WEIGHTS = tuple(pattern_weights(tensor(init_node_superposition(0.0), init_node_superposition(0.0)), 0, 1).ravel().tolist())


def _sample_pattern(weights, rng: np.random.Generator) -> tuple[int, int]:
    # weights in order gg, gs, sg, ss (0 = g = bright)
    u = rng.random()
    acc = 0.0
    for pattern, w in zip(_PATTERNS, weights):
        acc += w
        if u < acc:
            return pattern
    return _PATTERNS[-1]


def _herald(config: RepeaterConfig, pattern: tuple[int, int], rng: np.random.Generator) -> tuple[int, bool]:
    bright = (pattern[0] == 0) + (pattern[1] == 0)
    model = config.count_model
    n = ps.sample_count(model.mean_for(bright), rng)
    return n, model.window_lo <= n <= model.window_hi


def attempt_generation(
    config: RepeaterConfig,
    link_endpoints: tuple[int, int],
    rng: np.random.Generator,
    now: float = 0.0,
    T0: Optional[float] = None,
) -> GenerationAttempt:
    """One heralded entangling attempt on a basic link; always costs ``T0``."""
    if T0 is None:
        T0 = derive_link(config)[1]
    if config.random_init_phases:
        phi_l, phi_r = TWO_PI * rng.random(), TWO_PI * rng.random()
    else:
        phi_l = phi_r = 0.0
    # the pattern weights of the product of two initialized memories do not
    # depend on their phases, so the joint state is only built on success
    pattern = _sample_pattern(_INIT_PAIR_WEIGHTS, rng)
    n, ok = _herald(config, pattern, rng)
    if not ok:
        return GenerationAttempt(None, T0, n)
    # product of the two initialized memories, (|g> + e^{i phi}|s>)/sqrt(2) each
    e_l, e_r = complex(math.cos(phi_l), math.sin(phi_l)), complex(math.cos(phi_r), math.sin(phi_r))
    joint = PureState._trusted(np.array([0.5, 0.5 * e_r, 0.5 * e_l, 0.5 * e_l * e_r]))
    state = _heralded_state(joint, 0, 1, pattern, config.channel_phase)
    c0 = config.effective_c0
    if c0 > 0 and rng.random() < c0 / (1.0 + c0):
        # trajectory unravelling of the dark-count mixture: heralded on vacuum
        state = PureState.basis("ss")
    state = phase_kick(state, 0, config.phase_sigma_link, rng)
    terms = (phi_l, -phi_r, config.channel_phase)
    pair = EntangledPair(tuple(link_endpoints), math.fsum(terms) % TWO_PI, now + T0, state, terms)
    return GenerationAttempt(pair, T0, n)


def attempt_swap(
    config: RepeaterConfig,
    pair_a: EntangledPair,
    pair_b: EntangledPair,
    rng: np.random.Generator,
    now: float = 0.0,
    joint: Optional[PureState] = None,
) -> SwapAttempt:
    """Probe the two intermediate atoms; success fuses the pairs end to end.

    Both intermediate atoms are exposed to memory decay for the probe duration
    ``t_s`` before the photon count is drawn. ``joint`` may carry a cached
    ``tensor(pair_a.state, pair_b.state)`` when the same pairs are retried.
    """
    if pair_a.endpoints[1] != pair_b.endpoints[0]:
        raise ValueError(f"pairs {pair_a.endpoints} and {pair_b.endpoints} are not adjacent")
    if joint is None:
        joint = tensor(pair_a.state, pair_b.state)
    joint, jumps = decay_trajectory_steps(joint, (1, 2), config.t_s, config.t_c, rng)
    pattern = _sample_pattern(pattern_weights(joint, 1, 2).ravel().tolist(), rng)
    n, ok = _herald(config, pattern, rng)
    if not ok:
        return SwapAttempt(None, n, jumps)
    state = relabel_s_to_g(_heralded_state(joint, 1, 2, pattern, 0.0), (1, 2))
    terms = pair_a.phase_terms + pair_b.phase_terms
    phase = math.fsum(terms) % TWO_PI if terms else (pair_a.phase + pair_b.phase) % TWO_PI
    endpoints = (pair_a.endpoints[0], pair_b.endpoints[1])
    return SwapAttempt(EntangledPair(endpoints, phase, now, state, terms), n, jumps)


def analytic_level_time(config: RepeaterConfig, level: int, p1: Optional[float] = None) -> float:
    """Expected time to hold a level-``level`` pair: ``2^(level+1) T0 / P1^(level+1)``."""
    if p1 is None:
        p1 = ps.discrimination_profile(config.count_model).p1
    T0 = derive_link(config)[1]
    return T0 / (0.5 * p1) ** (level + 1)


def _decay_pair(pair: EntangledPair, dt: float, config: RepeaterConfig, rng: np.random.Generator) -> EntangledPair:
    if dt <= 0:
        return pair
    state, _ = decay_trajectory_steps(pair.state, (0, 1), dt, config.t_c, rng)
    return replace(pair, state=state)


class _Trial:
    def __init__(self, config: RepeaterConfig, rng: np.random.Generator, log_events: bool):
        self.config = config
        self.rng = rng
        self.log_events = log_events
        self.T0 = derive_link(config)[1]
        self.generation_attempts = 0
        self.swap_attempts = [0] * config.m
        self.undetected = 0
        self.events: list[tuple[float, str, int]] = []
        self.phases: list[tuple[float, float]] = []
        if config.timing_mode is TimingMode.MEAN_FIELD:
            p1 = ps.discrimination_profile(config.count_model).p1
            self.level_times = [analytic_level_time(config, i, p1) for i in range(config.m)]

    def log(self, t: float, kind: str, level: int) -> None:
        if self.log_events:
            self.events.append((t, kind, level))

    def generate(self, left: int, start: float) -> tuple[EntangledPair, float]:
        t = start
        while True:
            self.generation_attempts += 1
            att = attempt_generation(self.config, (left, left + 1), self.rng, now=t, T0=self.T0)
            t += att.elapsed
            if att.success:
                self.log(t, "generate", 0)
                self.phases.append((att.pair.phase_terms[0], -att.pair.phase_terms[1]))
                return att.pair, t

    def swap(self, level: int, a: EntangledPair, b: EntangledPair, t: float, joint=None) -> SwapAttempt:
        self.swap_attempts[level - 1] += 1
        att = attempt_swap(self.config, a, b, self.rng, now=t, joint=joint)
        self.undetected += att.undetected_decay
        self.log(t, "swap_success" if att.success else "swap_failure", level)
        return att

    def build_meanfield(self, level: int, left: int, start: float) -> tuple[EntangledPair, float]:
        if level == 0:
            return self.generate(left, start)
        half = 2 ** (level - 1)
        child_time = self.level_times[level - 1]
        while True:
            mark = len(self.phases)
            a, _ = self.build_meanfield(level - 1, left, start)
            b, _ = self.build_meanfield(level - 1, left + half, start)
            joint = tensor(a.state, b.state)
            for k in range(1, MEANFIELD_REUSE_LIMIT + 1):
                # each retry is charged one expected child-build time
                att = self.swap(level, a, b, start + k * child_time, joint)
                if att.success:
                    return att.pair, start + k * child_time
            start += MEANFIELD_REUSE_LIMIT * child_time
            del self.phases[mark:]

    def build_parallel(self, level: int, left: int, start: float) -> tuple[EntangledPair, float]:
        if level == 0:
            return self.generate(left, start)
        cfg = self.config
        half = 2 ** (level - 1)
        t = start
        while True:
            mark = len(self.phases)
            a, ta = self.build_parallel(level - 1, left, t)
            b, tb = self.build_parallel(level - 1, left + half, t)
            ready = max(ta, tb)
            a = _decay_pair(a, ready - ta, cfg, self.rng)
            b = _decay_pair(b, ready - tb, cfg, self.rng)
            if cfg.heralding_latency:
                ready += (2**level * cfg.L0) * 1e3 / (2 * cfg.c_fiber)
            att = self.swap(level, a, b, ready)
            t = ready
            if att.success:
                return att.pair, t
            del self.phases[mark:]


def run_nested_trial(config: RepeaterConfig, rng: np.random.Generator, log_events: bool = True) -> TrialResult:
    """Distribute one end-to-end pair over ``2**m`` links and time it."""
    trial = _Trial(config, rng, log_events)
    if config.timing_mode is TimingMode.MEAN_FIELD:
        pair, t = trial.build_meanfield(config.m, 0, 0.0)
    else:
        pair, t = trial.build_parallel(config.m, 0, 0.0)
    return TrialResult(
        success_time=t,
        final_phase=pair.phase,
        final_fidelity=pair.fidelity(),
        generation_attempts=trial.generation_attempts,
        swap_attempts_per_level=trial.swap_attempts,
        event_log=trial.events,
        undetected_decays=trial.undetected,
        generation_phases=trial.phases,
        final_pair=pair,
    )


def trial_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trial ``index``, fixed by ``(seed, index)`` alone."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


@dataclass
class EnsembleStats:
    trials: int
    mean_time: float
    stderr_time: float
    std_time: float
    percentiles: dict[str, float]
    histogram_counts: list[int]
    histogram_edges: list[float]
    mean_fidelity: float
    mean_generation_attempts: float
    mean_swap_attempts_per_level: list[float]
    undetected_decays: int
    results: list[TrialResult] = field(repr=False, default_factory=list)

    def summary(self) -> dict:
        return {
            "trials": self.trials,
            "mean_time_s": self.mean_time,
            "stderr_time_s": self.stderr_time,
            "std_time_s": self.std_time,
            "percentiles_s": self.percentiles,
            "histogram": {"counts": self.histogram_counts, "edges_s": self.histogram_edges},
            "mean_fidelity": self.mean_fidelity,
            "mean_generation_attempts": self.mean_generation_attempts,
            "mean_swap_attempts_per_level": self.mean_swap_attempts_per_level,
            "undetected_decays": self.undetected_decays,
        }


def _run_chunk(args: tuple[RepeaterConfig, int, int]) -> list[TrialResult]:
    config, lo, hi = args
    return [run_nested_trial(config, trial_rng(config.seed, i), log_events=False) for i in range(lo, hi)]


def summarize(results: list[TrialResult], bins: int = 30) -> EnsembleStats:
    times = np.array([r.success_time for r in results])
    n = len(times)
    std = float(times.std(ddof=1)) if n > 1 else 0.0
    counts, edges = np.histogram(times, bins=bins)
    swaps = np.array([r.swap_attempts_per_level for r in results], dtype=float).reshape(n, -1)
    return EnsembleStats(
        trials=n,
        mean_time=float(times.mean()),
        stderr_time=std / math.sqrt(n),
        std_time=std,
        percentiles={f"p{q}": float(np.percentile(times, q)) for q in (5, 25, 50, 75, 95)},
        histogram_counts=[int(c) for c in counts],
        histogram_edges=[float(e) for e in edges],
        mean_fidelity=float(np.mean([r.final_fidelity for r in results])),
        mean_generation_attempts=float(np.mean([r.generation_attempts for r in results])),
        mean_swap_attempts_per_level=[float(v) for v in swaps.mean(axis=0)],
        undetected_decays=int(sum(r.undetected_decays for r in results)),
        results=results,
    )


def run_ensemble(config: RepeaterConfig, trials: int, workers: int = 1) -> EnsembleStats:
    """Run ``trials`` independent trials; the outcome does not depend on ``workers``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if workers <= 1:
        results = _run_chunk((config, 0, trials))
    else:
        step = math.ceil(trials / workers)
        chunks = [(config, lo, min(lo + step, trials)) for lo in range(0, trials, step)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for part in pool.map(_run_chunk, chunks) for r in part]
    return summarize(results)
