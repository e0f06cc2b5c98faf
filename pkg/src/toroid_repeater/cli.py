"""Command-line front end.

Scenario files are YAML (or JSON) mappings whose keys carry their units, e.g.
``l_att_km: 22`` or ``tau_b_ns: 6``. Omitted keys take the default scenario
(2500 km, six doublings, 22 km attenuation length, 6 ns photon spacing).
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import math
import sys
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np
import yaml

from . import __version__
from . import analytics as an
from . import photon_stats as ps
from .protocol_engine import (
    DEFAULT_SEED,
    ConfigError,
    RepeaterConfig,
    TimingMode,
    derive_link,
    run_ensemble,
)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
EXIT_IO = 4

# file key -> (RepeaterConfig / PhotonCountModel attribute, kind, decimal exponent to SI)
CONFIG_KEYS: dict[str, tuple[str, str, int]] = {
    "l_t_km": ("L_t", "float", 0),
    "m": ("m", "int", 0),
    "l_att_km": ("L_att", "float", 0),
    "c_fiber_m_per_s": ("c_fiber", "float", 0),
    "tau_b_ns": ("tau_B", "float", -9),
    "t_e_ns": ("t_e", "float", -9),
    "t_s_ns": ("t_s", "float", -9),
    "t_a_ns": ("t_a", "float", -9),
    "t_t_ns": ("t_t", "float", -9),
    "t_c_ms": ("t_c", "float", -3),
    "c0": ("c0", "float", 0),
    "phase_sigma_link_rad": ("phase_sigma_link", "float", 0),
    "channel_phase_rad": ("channel_phase", "float", 0),
    "timing_mode": ("timing_mode", "mode", 0),
    "heralding_latency": ("heralding_latency", "bool", 0),
    "single_photon_mode": ("single_photon_mode", "bool", 0),
    "random_init_phases": ("random_init_phases", "bool", 0),
    "seed": ("seed", "int", 0),
}
MODEL_KEYS: dict[str, str] = {
    "lambda_dark": "float",
    "lambda_one": "float",
    "lambda_two": "float",
    "window_lo": "int",
    "window_hi": "int",
}
RUN_KEYS = {"trials", "samples", "experiment", "source", "out", "format", "workers"}
_ATTR_TO_KEY = {attr: key for key, (attr, _, _) in CONFIG_KEYS.items()}

RECORD_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "tool_version", "command", "config", "seed", "timestamp", "outputs"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "tool_version": {"type": "string"},
        "command": {"enum": ["analytic", "simulate", "experiments", "discriminate"]},
        "config": {
            "type": "object",
            "required": list(CONFIG_KEYS) + list(MODEL_KEYS),
            "additionalProperties": False,
            "properties": {
                **{
                    key: {"float": {"type": "number"}, "int": {"type": "integer"}, "bool": {"type": "boolean"},
                          "mode": {"enum": [m.value for m in TimingMode]}}[kind]
                    for key, (_, kind, _) in CONFIG_KEYS.items()
                },
                **{key: {"type": "number" if kind == "float" else "integer"} for key, kind in MODEL_KEYS.items()},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "timestamp": {"type": ["string", "null"]},
        "outputs": {"type": "object"},
    },
}


class ValidationError(Exception):
    pass


def _shift(value: float, exponent: int) -> float:
    # scale by a power of ten on the shortest decimal form, so ns <-> s round-trips
    if exponent == 0:
        return float(value)
    return float(Decimal(repr(float(value))).scaleb(exponent))


def _coerce(key: str, kind: str, value: Any) -> Any:
    if kind == "bool":
        if not isinstance(value, bool):
            raise ValidationError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        if kind == "mode" and isinstance(value, str):
            try:
                return TimingMode(value)
            except ValueError:
                pass
            raise ValidationError(f"{key}: expected one of meanfield, parallel, got {value!r}")
        raise ValidationError(f"{key}: expected a number, got {value!r}")
    if kind == "int":
        if isinstance(value, float) and not value.is_integer():
            raise ValidationError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if kind == "mode":
        raise ValidationError(f"{key}: expected one of meanfield, parallel, got {value!r}")
    if not math.isfinite(value):
        raise ValidationError(f"{key}: must be finite")
    return float(value)


def config_from_mapping(doc: dict) -> tuple[RepeaterConfig, dict]:
    """Build a config from a scenario mapping; returns the config and run options."""
    if not isinstance(doc, dict):
        raise ValidationError("scenario file must contain a mapping")
    unknown = sorted(set(doc) - set(CONFIG_KEYS) - set(MODEL_KEYS) - RUN_KEYS)
    if unknown:
        raise ValidationError(f"unknown keys: {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, (attr, kind, exp) in CONFIG_KEYS.items():
        if key in doc:
            value = _coerce(key, kind, doc[key])
            kwargs[attr] = _shift(value, exp) if kind == "float" else value
    model_kwargs = {k: _coerce(k, kind, doc[k]) for k, kind in MODEL_KEYS.items() if k in doc}
    try:
        if model_kwargs:
            kwargs["count_model"] = ps.PhotonCountModel(**model_kwargs)
        config = RepeaterConfig(**kwargs)
    except ConfigError as exc:
        raise ValidationError("; ".join(f"{_ATTR_TO_KEY.get(a, a)}: {msg}" for a, msg in exc.problems)) from exc
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    return config, {k: doc[k] for k in RUN_KEYS if k in doc}


def config_to_mapping(config: RepeaterConfig) -> dict:
    out: dict[str, Any] = {}
    for key, (attr, kind, exp) in CONFIG_KEYS.items():
        value = getattr(config, attr)
        if kind == "mode":
            value = value.value
        elif kind == "float":
            value = _shift(value, -exp)
        out[key] = value
    for key in MODEL_KEYS:
        out[key] = getattr(config.count_model, key)
    return out


def load_scenario(path: Optional[str]) -> tuple[RepeaterConfig, dict]:
    if path is None:
        return RepeaterConfig(), {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IOError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: not valid YAML/JSON: {exc}") from exc
    return config_from_mapping(doc or {})


def _sub_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


# --- commands -----------------------------------------------------------------


def cmd_analytic(config: RepeaterConfig, p1_override: Optional[float] = None) -> dict:
    L0, T0 = derive_link(config)
    profile = ps.discrimination_profile(config.count_model)
    p1 = profile.p1 if p1_override is None else p1_override
    T = an.analytic_expected_time(config, p1)
    exposure_long = config.t_e * math.exp(L0 / config.L_att)
    return {
        "L0_km": L0,
        "T0_s": T0,
        "P0": profile.p0,
        "P1": profile.p1,
        "P2": profile.p2,
        "P1_used": p1,
        "T_s": T,
        "T_ms": T * 1e3,
        "light_time_s": config.L_t * 1e3 / config.c_fiber,
        "detected_mean": ps.detected_mean(L0, config.L_att, config.t_e, config.tau_B),
        "delta_F_bound": {
            "pulse_exposure": {"t_exposure_s": config.t_e, "bound": an.decoherence_bound(config.t_e, config.t_c)},
            "attenuated_exposure": {
                "t_exposure_s": exposure_long,
                "bound": an.decoherence_bound(exposure_long, config.t_c),
            },
        },
        "phase_walk_sigma": [
            {"level": k, "sigma_rad": an.phase_walk_sigma(config.phase_sigma_link, k)} for k in range(config.m + 1)
        ],
    }


def cmd_simulate(config: RepeaterConfig, trials: int, workers: int = 1):
    """Run the ensemble; returns the summary payload and the per-trial rows."""
    if trials < 1:
        raise ValidationError("trials: must be >= 1")
    stats = run_ensemble(config, trials, workers=workers)
    payload = stats.summary()
    payload["mode"] = config.timing_mode.value
    payload["analytic_T_s"] = an.analytic_expected_time(config)
    rows = [
        (i, r.success_time, r.final_fidelity, r.generation_attempts) for i, r in enumerate(stats.results)
    ]
    return payload, rows


def cmd_experiments(config: RepeaterConfig, which: str, samples: int, source: str = "ideal") -> dict:
    if samples < 1:
        raise ValidationError("samples: must be >= 1")
    if source == "ideal":
        pairs = an.ideal_pair_source()
    elif source == "engine":
        pairs = an.engine_pair_source(config)
    else:
        raise ValidationError(f"source: expected ideal or engine, got {source!r}")
    rng = _sub_rng(config.seed, 1)
    model = config.count_model
    if which == "chsh":
        result = an.run_chsh(pairs, samples=samples, rng=rng, model=model)
    elif which == "ekert":
        result = an.run_ekert(pairs, samples, rng=rng, model=model)
    elif which == "teleport":
        inputs = an.random_qubit_inputs(samples, _sub_rng(config.seed, 2))
        result = an.run_teleportation(pairs, inputs, rng=rng, model=model)
    else:
        raise ValidationError(f"experiment: expected chsh, ekert or teleport, got {which!r}")
    out = result.to_dict()
    out["experiment"] = which
    out["source"] = source
    return out


def cmd_discriminate(config: RepeaterConfig) -> dict:
    model = config.count_model
    profile = ps.discrimination_profile(model)
    lo_sweep = []
    for lo in range(max(0, model.window_lo - 20), min(model.window_hi, model.window_lo + 20) + 1, 5):
        p = ps.discrimination_profile(dataclasses.replace(model, window_lo=lo))
        lo_sweep.append({"window_lo": lo, "P0": p.p0, "P1": p.p1, "P2": p.p2})
    hi_sweep = []
    for hi in range(max(model.window_lo, model.window_hi - 20), model.window_hi + 21, 5):
        p = ps.discrimination_profile(dataclasses.replace(model, window_hi=hi))
        hi_sweep.append({"window_hi": hi, "P0": p.p0, "P1": p.p1, "P2": p.p2})
    return {
        "window": [model.window_lo, model.window_hi],
        "means": [model.lambda_dark, model.lambda_one, model.lambda_two],
        "P0": profile.p0,
        "P1": profile.p1,
        "P2": profile.p2,
        "heralding_probability": 0.5 * profile.p1,
        "sweep_window_lo": lo_sweep,
        "sweep_window_hi": hi_sweep,
    }


def make_record(command: str, config: RepeaterConfig, outputs: dict, timestamp: Optional[str] = None) -> dict:
    record = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "command": command,
        "config": config_to_mapping(config),
        "seed": config.seed,
        "timestamp": timestamp,
        "outputs": outputs,
    }
    jsonschema.validate(record, RECORD_SCHEMA)
    return record


def dump_record(record: dict) -> str:
    return json.dumps(record, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _flatten(prefix: str, value: Any, rows: list[tuple[str, Any]]) -> None:
    if isinstance(value, dict):
        for k in sorted(value):
            _flatten(f"{prefix}.{k}" if prefix else str(k), value[k], rows)
    elif isinstance(value, list):
        for i, v in enumerate(value):
            _flatten(f"{prefix}[{i}]", v, rows)
    else:
        rows.append((prefix, value))


def delimited_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    return buf.getvalue()


# --- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON scenario file")
    common.add_argument("--seed", type=int, help=f"64-bit seed (default {DEFAULT_SEED})")
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--format", choices=["structured", "delimited"], help="record format")
    common.add_argument("--stamp", action="store_true", help="record the wall-clock time in the output")

    parser = argparse.ArgumentParser(prog="toroid-repeater", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("analytic", parents=[common], help="closed-form timing, discrimination and fidelity")
    p.add_argument("--p1", type=float, help="override the single-bright window probability")
    p = sub.add_parser("simulate", parents=[common], help="Monte-Carlo ensemble of repeater trials")
    p.add_argument("--trials", type=int)
    p.add_argument("--mode", choices=["meanfield", "parallel"])
    p.add_argument("--workers", type=int)
    p = sub.add_parser("experiments", parents=[common], help="CHSH, Ekert or teleportation runs")
    p.add_argument("which", nargs="?", choices=["chsh", "ekert", "teleport"])
    p.add_argument("--samples", type=int)
    p.add_argument("--source", choices=["ideal", "engine"])
    sub.add_parser("discriminate", parents=[common], help="window probabilities and window sweeps")
    return parser


def _write(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IOError(f"cannot write {out}: {exc.strerror}") from exc


def run(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config, opts = load_scenario(args.config)
        if args.seed is not None:
            config = _replace_config(config, seed=args.seed)
        fmt = args.format or opts.get("format", "structured")
        out = args.out or opts.get("out")
        timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds") if args.stamp else None
        rows = None
        if args.command == "analytic":
            outputs = cmd_analytic(config, args.p1)
        elif args.command == "simulate":
            mode = args.mode or None
            if mode:
                config = _replace_config(config, timing_mode=TimingMode(mode))
            trials = args.trials or int(opts.get("trials", 1000))
            workers = args.workers or int(opts.get("workers", 1))
            outputs, rows = cmd_simulate(config, trials, workers)
        elif args.command == "experiments":
            which = args.which or opts.get("experiment")
            if which is None:
                raise ValidationError("experiment: choose chsh, ekert or teleport")
            samples = args.samples or int(opts.get("samples", 10_000))
            outputs = cmd_experiments(config, which, samples, args.source or opts.get("source", "ideal"))
        else:
            outputs = cmd_discriminate(config)
        record = make_record(args.command, config, outputs, timestamp)
        if fmt == "delimited":
            if rows is not None:
                text = delimited_text(["index", "time_s", "fidelity", "attempts"], rows)
            else:
                flat: list[tuple[str, Any]] = []
                _flatten("", record["outputs"], flat)
                text = delimited_text(["key", "value"], flat)
        else:
            text = dump_record(record)
        _write(text, out)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except IOError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _replace_config(config: RepeaterConfig, **changes) -> RepeaterConfig:
    try:
        return dataclasses.replace(config, **changes)
    except ConfigError as exc:
        raise ValidationError("; ".join(f"{_ATTR_TO_KEY.get(a, a)}: {msg}" for a, msg in exc.problems)) from exc


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
