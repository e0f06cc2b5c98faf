"""End-to-end acceptance checks, each with its tolerance and wall-clock budget.

Every check prints a single PASS/FAIL line (visible under ``pytest -v``).
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from oracles import pair_vector, relabel_isometry, single_bright_operator, KET
from toroid_repeater import cli
from toroid_repeater.analytics import (
    analytic_expected_time,
    decoherence_bound,
    exact_chsh,
    ideal_pair_source,
    random_qubit_inputs,
    run_chsh,
    teleport_once,
)
from toroid_repeater.photon_stats import discrimination_profile, window_probability
from toroid_repeater.protocol_engine import (
    TWO_PI,
    EntangledPair,
    RepeaterConfig,
    attempt_generation,
    attempt_swap,
    run_ensemble,
    run_nested_trial,
    trial_rng,
)
from toroid_repeater.quantum_core import (
    PureState,
    entangled_pair_state,
    relabel_s_to_g,
    single_bright_projection,
    tensor,
)

DEFAULTS = RepeaterConfig()
P1 = discrimination_profile(DEFAULTS.count_model).p1


@contextmanager
def criterion(capsys, number, title, budget_s):
    start = time.perf_counter()
    detail = {}
    ok = False
    try:
        yield detail
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        in_time = budget_s is None or elapsed < budget_s
        status = "PASS" if ok and in_time else "FAIL"
        budget = f" (budget {budget_s:g} s)" if budget_s is not None else ""
        note = f" {detail['note']}" if "note" in detail else ""
        with capsys.disabled():
            print(f"\n{status} criterion {number}: {title}:{note} [{elapsed:.2f} s{budget}]")
    assert in_time, f"criterion {number} took {elapsed:.2f} s, budget {budget_s} s"


def binomial_band(successes, n, p):
    return abs(successes / n - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_criterion_01_discrimination_probabilities(capsys):
    with criterion(capsys, 1, "window probabilities over [40,120]", 1.0) as d:
        p0 = window_probability(10, 40, 120)
        p1 = window_probability(100, 40, 120)
        p2 = window_probability(200, 40, 120)
        d["note"] = f"P0={p0:.4g} P1={p1:.6f} P2={p2:.4g}"
        assert abs(p1 - 0.9773) <= 5e-4
        assert abs(p0 - 7.3e-13) <= 0.05 * 7.3e-13
        assert abs(p2 - 6.7e-10) <= 0.05 * 6.7e-10


def test_criterion_02_timing_endpoint(capsys):
    with criterion(capsys, 2, "analytic end-to-end time", 1.0) as d:
        out = cli.cmd_analytic(DEFAULTS)
        d["note"] = f"T={out['T_ms']:.4f} ms"
        assert 29.5 <= out["T_ms"] <= 30.5


def test_criterion_03_monte_carlo_matches_analytic(capsys):
    with criterion(capsys, 3, "mean-field ensemble vs analytic T", 60.0) as d:
        stats = run_ensemble(DEFAULTS, 10_000)
        T = analytic_expected_time(DEFAULTS)
        z = (stats.mean_time - T) / stats.stderr_time
        d["note"] = f"mean={stats.mean_time * 1e3:.4f} ms analytic={T * 1e3:.4f} ms z={z:+.2f}"
        assert abs(z) <= 3


def test_criterion_04_fidelity_bound(capsys):
    with criterion(capsys, 4, "decay fidelity bound", 1.0) as d:
        bound = decoherence_bound(3.543e-6, 6e-3)
        d["note"] = f"dF={bound:.5g}"
        assert round(bound, 5) == 1.77e-3
        assert bound <= 0.0018


def test_criterion_05_chsh(capsys):
    with criterion(capsys, 5, "CHSH exact and sampled", 60.0) as d:
        rng = np.random.default_rng(5)
        worst = max(
            abs(exact_chsh(EntangledPair((0, 1), phi, 0.0, entangled_pair_state(phi))) - 2 * math.sqrt(2))
            for phi in rng.uniform(0, TWO_PI, size=20)
        )
        res = run_chsh(ideal_pair_source(), samples=100_000, rng=rng)
        d["note"] = f"exact dev={worst:.1e} S={res.S:.4f}+-{res.S_stderr:.4f}"
        assert worst <= 1e-12
        assert abs(res.S - 2.8284) <= 3 * res.S_stderr


def test_criterion_06_success_rates(capsys):
    with criterion(capsys, 6, "generation/swap/teleport heralding rates", 120.0) as d:
        p = 0.5 * P1
        rng = np.random.default_rng(6)
        n_gen = 1_000_000
        gen = sum(attempt_generation(DEFAULTS, (0, 1), rng).success for _ in range(n_gen))
        source = ideal_pair_source()
        lefts = [source(rng) for _ in range(1000)]
        rights = [EntangledPair((1, 2), q.phase, 0.0, q.state) for q in (source(rng) for _ in range(1000))]
        n_swap = 1_000_000
        swap = sum(attempt_swap(DEFAULTS, lefts[i % 1000], rights[i % 997], rng).success for i in range(n_swap))
        n_tel = 100_000
        inputs = random_qubit_inputs(n_tel, rng)
        tel = sum(teleport_once(source(rng), a, b, rng) is not None for a, b in inputs)
        d["note"] = f"gen={gen / n_gen:.5f} swap={swap / n_swap:.5f} teleport={tel / n_tel:.5f} target={p:.5f}"
        assert binomial_band(gen, n_gen, p)
        assert binomial_band(swap, n_swap, p)
        assert binomial_band(tel, n_tel, p)


def test_criterion_07_dense_oracle_equivalence(capsys):
    with criterion(capsys, 7, "projection/swap/teleport vs dense operators", 10.0) as d:
        rng = np.random.default_rng(7)
        exact_swap = RepeaterConfig(t_s=0.0)
        worst = 0.0
        for _ in range(100):
            # single-bright projection on a random register of 2..4 qubits
            n = int(rng.integers(2, 5))
            v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
            v /= np.linalg.norm(v)
            a, b = rng.choice(n, size=2, replace=False)
            chi = float(rng.uniform(0, TWO_PI))
            raw = single_bright_operator(n, a, b, chi) @ v
            out = single_bright_projection(PureState(v), int(a), int(b), chi)
            worst = max(worst, np.abs(out.state.amplitudes - raw / np.linalg.norm(raw)).max())
            worst = max(worst, abs(out.probability - np.vdot(raw, raw).real))

            # swap composition: core functions and the engine's heralded swap
            phi1, phi2 = rng.uniform(0, TWO_PI, size=2)
            dense = relabel_isometry(4, (1, 2)) @ single_bright_operator(4, 1, 2) @ np.kron(
                pair_vector(phi1), pair_vector(phi2)
            )
            dense /= np.linalg.norm(dense)
            fused = relabel_s_to_g(
                single_bright_projection(tensor(entangled_pair_state(phi1), entangled_pair_state(phi2)), 1, 2).state,
                (1, 2),
            )
            worst = max(worst, np.abs(fused.amplitudes - dense).max())
            pa = EntangledPair((0, 1), phi1, 0.0, entangled_pair_state(phi1))
            pb = EntangledPair((1, 2), phi2, 0.0, entangled_pair_state(phi2))
            att = attempt_swap(exact_swap, pa, pb, rng)
            while not att.success:
                att = attempt_swap(exact_swap, pa, pb, rng)
            worst = max(worst, np.abs(att.pair.state.amplitudes - dense).max())

            # teleportation of a random qubit through a random-phase pair
            (alpha, beta), phase = random_qubit_inputs(1, rng)[0], float(rng.uniform(0, TWO_PI))
            pair = EntangledPair((0, 1), phase, 0.0, entangled_pair_state(phase))
            joint = np.kron(alpha * KET["g"] + beta * KET["s"], pair_vector(phase))
            expect = relabel_isometry(3, (0, 1)) @ single_bright_operator(3, 0, 1, phase) @ joint
            expect /= np.linalg.norm(expect)
            got = teleport_once(pair, alpha, beta, rng)
            while got is None:
                got = teleport_once(pair, alpha, beta, rng)
            worst = max(worst, np.abs(got.amplitudes - expect).max())
        d["note"] = f"max deviation={worst:.1e} over 100 instances"
        assert worst <= 1e-9


def test_criterion_08_phase_additivity(capsys):
    with criterion(capsys, 8, "final phase equals signed sum of link phases", None) as d:
        checked = 0
        for m in range(1, 7):
            cfg = RepeaterConfig(m=m, L_t=39.0625 * 2**m)
            for i in range(100):
                r = run_nested_trial(cfg, trial_rng(800 + m, i), log_events=False)
                terms = [x for phi_l, phi_r in r.generation_phases for x in (phi_l, -phi_r)]
                assert len(terms) == 2 ** (m + 1)
                assert r.final_phase == math.fsum(terms) % TWO_PI
                checked += 1
        d["note"] = f"{checked} trials, exact equality"


def test_criterion_09_determinism(capsys, tmp_path):
    with criterion(capsys, 9, "identical seed and config give identical records", None) as d:
        commands = [
            ["analytic"],
            ["discriminate"],
            ["simulate", "--trials", "200"],
            ["simulate", "--trials", "200", "--format", "delimited"],
            ["experiments", "chsh", "--samples", "500"],
            ["experiments", "ekert", "--samples", "2000"],
            ["experiments", "teleport", "--samples", "2000"],
        ]
        for k, argv in enumerate(commands):
            outputs = []
            for rep in range(2):
                path = tmp_path / f"{k}-{rep}"
                assert cli.run([*argv, "--seed", "12345", "--out", str(path)]) == cli.EXIT_OK
                outputs.append(path.read_bytes())
            assert outputs[0] == outputs[1], argv
        d["note"] = f"{len(commands)} commands byte-identical"


def test_criterion_10_scaling_law(capsys):
    with criterion(capsys, 10, "T(m+1)/T(m) = 2/P1", None) as d:
        worst = 0.0
        for m in range(9):
            small = RepeaterConfig(m=m, L_t=39.0625 * 2**m)
            large = RepeaterConfig(m=m + 1, L_t=39.0625 * 2 ** (m + 1))
            ratio = analytic_expected_time(large) / analytic_expected_time(small)
            worst = max(worst, abs(ratio / (2 / P1) - 1))
        d["note"] = f"max relative deviation={worst:.1e}"
        # "exactly" up to double rounding of the two products and the division
        assert worst <= 8 * np.finfo(float).eps
