"""Command-line front end: config loading, dispatch, CSV and figure output.

Exit codes: 0 success, 1 configuration error (bad flags, unknown keys,
malformed JSON, unwritable output), 2 numerical failure during a run.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .beamforming import (
    GdConfig,
    OracleObjective,
    brute_force_oracle,
    gd_beamform,
    objective_trace,
    phase_match,
    sdr_beamform,
)
from .channels import IrsState, SystemConfig, composite_channel, gen_channels
from .estimation import fisher_matrix, gen_pilots, phase_one_regressor
from .experiments import (
    ESTIMATION_METHODS,
    RATE_METHODS,
    RATE_ORACLE_GRID,
    SIGMA_E2_MODES,
    SweepSpec,
    estimation_sweep_preset,
    rate_sweep_preset,
    records_to_csv,
    run_estimation_sweep,
    run_rate_sweep,
    snr_db_to_sigma_w2,
    summarize,
)
from .quantization import achievable_rate, distortion_factor
from .selfcheck import run_selftest

__all__ = ["parse_and_dispatch", "main"]

_ORACLE_POINT_BOUND = 10**7


class ConfigError(Exception):
    """User-facing configuration problem; maps to exit status 1."""


def _spec_to_dict(spec):
    return {
        "m_antennas": spec.base.m_antennas,
        "sigma_x2": spec.base.sigma_x2,
        "snr_db_grid": list(spec.snr_db_grid),
        "tau_grid": list(spec.tau_grid),
        "n_grid": list(spec.n_grid),
        "bits_grid": list(spec.bits_grid),
        "methods": list(spec.methods),
        "trials": spec.trials,
        "master_seed": spec.master_seed,
        "sigma_e2_at": spec.sigma_e2_at,
    }


def _default_config(command):
    if command == "rate-sweep":
        return _spec_to_dict(rate_sweep_preset())
    if command == "estimate-sweep":
        return _spec_to_dict(estimation_sweep_preset())
    if command == "beamform":
        return {
            "m_antennas": 4,
            "sigma_x2": 1.0,
            "snr_db_grid": [0.0],
            "tau_grid": [1],
            "n_grid": [5],
            "bits_grid": [1],
            "methods": ["pm", "sdr", "gd"],
            "trials": 1,
            "master_seed": 1,
            "sigma_e2_at": "true",
        }
    return {
        "m_antennas": 2,
        "sigma_x2": 1.0,
        "snr_db_grid": [0.0],
        "tau_grid": [16],
        "n_grid": [1],
        "bits_grid": [1],
        "methods": ["ml"],
        "trials": 1,
        "master_seed": 1,
        "sigma_e2_at": "true",
    }


def _as_int(key, value):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return value


def _as_float(key, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    return float(value)


def _as_list(key, value, item_fn):
    if not isinstance(value, (list, tuple)) or len(value) == 0:
        raise ConfigError(f"{key} must be a non-empty list, got {value!r}")
    return [item_fn(key, v) for v in value]


def _as_str(key, value):
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


_SCHEMA = {
    "m_antennas": _as_int,
    "sigma_x2": _as_float,
    "snr_db_grid": lambda k, v: _as_list(k, v, _as_float),
    "tau_grid": lambda k, v: _as_list(k, v, _as_int),
    "n_grid": lambda k, v: _as_list(k, v, _as_int),
    "bits_grid": lambda k, v: _as_list(k, v, _as_int),
    "methods": lambda k, v: _as_list(k, v, _as_str),
    "trials": _as_int,
    "master_seed": _as_int,
    "sigma_e2_at": _as_str,
}


def _merge_config(base, updates, source):
    for key, value in updates.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r} (from {source})")
        base[key] = _SCHEMA[key](key, value)
    return base


def _parse_override(text):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _load_config(args):
    config = _default_config(args.command)
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a JSON object")
        _merge_config(config, loaded, args.config)
    overrides = {}
    for item in args.override or []:
        key, value = _parse_override(item)
        overrides[key] = value
    _merge_config(config, overrides, "--override")
    if args.seed is not None:
        config["master_seed"] = _as_int("--seed", args.seed)
    return config


def _resolve_threads(args):
    if args.threads is not None:
        value = args.threads
    else:
        raw = os.environ.get("IRS_SIM_THREADS", "1")
        try:
            value = int(raw)
        except ValueError as exc:
            raise ConfigError(f"IRS_SIM_THREADS is not an integer: {raw!r}") from exc
    if value < 1:
        raise ConfigError(f"thread count must be >= 1, got {value}")
    return value


def _build_spec(config):
    try:
        base = SystemConfig(
            m_antennas=config["m_antennas"],
            n_elements=config["n_grid"][0],
            tau=config["tau_grid"][0],
            sigma_w2=1.0,
            sigma_x2=config["sigma_x2"],
            bits=config["bits_grid"][0],
        )
        return SweepSpec(
            base=base,
            snr_db_grid=tuple(config["snr_db_grid"]),
            tau_grid=tuple(config["tau_grid"]),
            n_grid=tuple(config["n_grid"]),
            bits_grid=tuple(config["bits_grid"]),
            methods=tuple(config["methods"]),
            trials=config["trials"],
            master_seed=config["master_seed"],
            sigma_e2_at=config["sigma_e2_at"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _summary_paragraph(records, metric_names):
    means = summarize(records)
    points = []
    by_point = {}
    for (snr_db, tau, n, bits, method, metric), value in means.items():
        if metric not in metric_names:
            continue
        point = (snr_db, tau, n, bits)
        if point not in by_point:
            by_point[point] = []
            points.append(point)
        by_point[point].append(f"{method}={value:.4g}")
    chunks = [
        f"[snr={p[0]:g} tau={p[1]} n={p[2]} bits={p[3]}] " + " ".join(by_point[p])
        for p in points
    ]
    return "mean per point: " + "; ".join(chunks)


def _write_output(args, records, figure_fn):
    csv_text = records_to_csv(records)
    if args.output == "-":
        sys.stdout.write(csv_text)
        return
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text)
    if not args.no_figures:
        stem, _ = os.path.splitext(args.output)
        figure_fn(records, stem + ".png")


def _cmd_rate_sweep(args, config):
    from .plots import save_rate_figure

    spec = _build_spec(config)
    records = run_rate_sweep(spec, threads=_resolve_threads(args))
    _write_output(args, records, save_rate_figure)
    print(_summary_paragraph(records, {"rate_bits"}), file=sys.stderr)
    return 0


def _cmd_estimate_sweep(args, config):
    from .plots import save_nmse_figure

    spec = _build_spec(config)
    records = run_estimation_sweep(spec, threads=_resolve_threads(args))
    _write_output(args, records, save_nmse_figure)
    print(_summary_paragraph(records, {"nmse"}), file=sys.stderr)
    return 0


def _cmd_beamform(args, config):
    spec = _build_spec(config)
    snr_db = spec.snr_db_grid[0]
    n = spec.n_grid[0]
    bits = spec.bits_grid[0]
    sigma_w2 = snr_db_to_sigma_w2(snr_db)
    rho_q = distortion_factor(bits)
    cfg = SystemConfig(
        m_antennas=spec.base.m_antennas,
        n_elements=n,
        tau=1,
        sigma_w2=sigma_w2,
        sigma_x2=spec.base.sigma_x2,
        bits=bits,
    )
    rng = np.random.default_rng(spec.master_seed)
    ch = gen_channels(cfg, rng)
    print(
        f"instance: M={cfg.m_antennas} N={n} SNR={snr_db:g} dB bits={bits} "
        f"seed={spec.master_seed}"
    )
    pm = phase_match(ch, sigma_w2)
    gd = gd_beamform(ch, sigma_w2, rho_q, GdConfig(), rng)
    sol = sdr_beamform(ch, sigma_w2, rng)
    obj = {
        "pm": objective_trace(ch, pm, sigma_w2),
        "sdr": sol.rounded_value,
        "gd": objective_trace(ch, gd, sigma_w2),
    }
    if RATE_ORACLE_GRID**n <= _ORACLE_POINT_BOUND:
        oracle = brute_force_oracle(
            ch, sigma_w2, rho_q, RATE_ORACLE_GRID, OracleObjective.FULL_RATE
        )
        obj["oracle"] = objective_trace(ch, oracle, sigma_w2)
    np.set_printoptions(precision=4, suppress=True)
    print(f"theta (gd): {gd.theta}")
    parts = " ".join(f"{k}={v:.6g}" for k, v in obj.items())
    print(f"objective (scaled receive power): {parts} upper_bound={sol.upper_bound:.6g}")
    rates = {
        "no_irs": achievable_rate(
            composite_channel(ch, IrsState.off()), cfg.sigma_x2, sigma_w2, rho_q
        ),
        "pm": achievable_rate(
            composite_channel(ch, IrsState.on(pm)), cfg.sigma_x2, sigma_w2, rho_q
        ),
        "sdr": achievable_rate(
            composite_channel(ch, IrsState.on(sol.rounded)),
            cfg.sigma_x2, sigma_w2, rho_q,
        ),
        "gd": achievable_rate(
            composite_channel(ch, IrsState.on(gd)), cfg.sigma_x2, sigma_w2, rho_q
        ),
    }
    parts = " ".join(f"{k}={v:.6g}" for k, v in rates.items())
    print(f"rate (bits/use): {parts}")
    return 0


def _cmd_crlb(args, config):
    spec = _build_spec(config)
    snr_db = spec.snr_db_grid[0]
    tau = spec.tau_grid[0]
    sigma_w2 = snr_db_to_sigma_w2(snr_db)
    cfg = SystemConfig(
        m_antennas=spec.base.m_antennas,
        n_elements=spec.n_grid[0],
        tau=tau,
        sigma_w2=sigma_w2,
        sigma_x2=spec.base.sigma_x2,
        bits=1,
    )
    rng = np.random.default_rng(spec.master_seed)
    ch = gen_channels(cfg, rng)
    frame = gen_pilots(tau, rng)
    regressor = phase_one_regressor(frame.a, cfg.m_antennas)
    stacked = np.concatenate([ch.h_d.real, ch.h_d.imag])
    info = fisher_matrix(regressor, stacked, sigma_w2)
    print(
        f"instance: M={cfg.m_antennas} tau={tau} SNR={snr_db:g} dB "
        f"seed={spec.master_seed}"
    )
    print(f"crlb_trace = {info.crlb_trace!r}")
    print(f"sigma_e2 = {info.sigma_e2!r}")
    return 0


def _cmd_selftest(args, config):
    report = run_selftest(seed=config["master_seed"])
    for line in report.lines:
        print(line)
    return 0 if report.ok else 2


_COMMANDS = {
    "rate-sweep": _cmd_rate_sweep,
    "estimate-sweep": _cmd_estimate_sweep,
    "beamform": _cmd_beamform,
    "crlb": _cmd_crlb,
    "selftest": _cmd_selftest,
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="irs-sim",
        description=(
            "Simulate an IRS-assisted uplink with few-bit ADCs: beamforming "
            "and 1-bit channel-estimation sweeps with CSV output."
        ),
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (flat sweep schema)")
    common.add_argument(
        "--output", default="-", help="CSV output path, or - for standard output"
    )
    common.add_argument(
        "--override",
        action="append",
        metavar="KEY=VALUE",
        help="config override, repeatable; values parsed as JSON when possible",
    )
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker threads (fallback: IRS_SIM_THREADS, then 1)",
    )
    common.add_argument("--seed", type=int, default=None, help="master seed override")
    common.add_argument(
        "--no-figures",
        action="store_true",
        help="skip PNG figure rendering next to the CSV",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser(
        "rate-sweep", parents=[common],
        help=f"achievable-rate sweep (methods: {', '.join(RATE_METHODS)})",
    )
    sub.add_parser(
        "estimate-sweep", parents=[common],
        help=(
            "estimation NMSE sweep "
            f"(methods: {', '.join(ESTIMATION_METHODS)}; "
            f"sigma_e2_at: {', '.join(SIGMA_E2_MODES)})"
        ),
    )
    sub.add_parser(
        "beamform", parents=[common], help="optimize one seeded instance and print"
    )
    sub.add_parser(
        "crlb", parents=[common], help="print the estimation lower bound for one instance"
    )
    sub.add_parser("selftest", parents=[common], help="run the invariant suite")
    return parser


def parse_and_dispatch(argv):
    """Parse argv (without program name) and execute; returns exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        config = _load_config(args)
        _resolve_threads(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(parse_and_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
