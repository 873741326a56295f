"""Monte-Carlo sweep harness with deterministic seeding and CSV output.

Two sweeps are provided: achievable rate across (SNR, N, bits) for the
beamforming methods, and estimation NMSE across (SNR, tau, N) for the
1-bit channel estimators. Results are emitted per trial in a long CSV
format so downstream aggregation (means, bootstrap intervals) stays
flexible.

Determinism contract: the record stream is a pure function of the
SweepSpec. Every (sweep point, trial) pair owns a seed derived from
(master_seed, point index, trial index) through SeedSequence, with one
sub-stream for the system realization and one reserved per method, so the
same method sees the same randomness regardless of which other methods
run. Workers fill a results table keyed by (point, trial); emission order
never depends on scheduling.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product

import numpy as np

from .beamforming import (
    GdConfig,
    OracleObjective,
    SdrOptions,
    brute_force_oracle,
    gd_beamform,
    phase_match,
    sdr_beamform,
)
from .channels import IrsState, PhaseVector, SystemConfig, cascade_matrix, composite_channel, gen_channels
from .estimation import (
    fisher_matrix,
    gen_pilots,
    lmmse_estimate,
    ls_estimate,
    ml_direct,
    ml_reflect,
    nmse,
    phase_one_regressor,
    phase_two_frame,
    realize_system,
)
from .quantization import achievable_rate, distortion_factor

__all__ = [
    "SweepSpec",
    "TrialRecord",
    "METRICS",
    "RATE_METHODS",
    "ESTIMATION_METHODS",
    "run_rate_sweep",
    "run_estimation_sweep",
    "records_to_csv",
    "summarize",
    "rate_sweep_preset",
    "estimation_sweep_preset",
]

logger = logging.getLogger(__name__)

METRICS = frozenset(
    {"rate_bits", "nmse", "crlb_trace", "objective", "iterations", "converged"}
)
RATE_METHODS = ("no_irs", "random_phase", "pm", "sdr", "gd", "oracle")
ESTIMATION_METHODS = ("ml", "ls", "lmmse")
SIGMA_E2_MODES = ("true", "estimate", "zero")
RATE_ORACLE_GRID = 16
_ORACLE_POINT_BOUND = 10**7
_SDR_CANDIDATES = 200
CSV_HEADER = "snr_db,tau,n,bits,method,trial,seed,metric,value"


def snr_db_to_sigma_w2(snr_db):
    """Noise variance from the SNR convention SNR = 1 / sigma_w2."""
    return float(10.0 ** (-snr_db / 10.0))


@dataclass(frozen=True)
class TrialRecord:
    """One metric value from one trial at one sweep point."""

    snr_db: float
    tau: int
    n: int
    bits: int
    method: str
    trial: int
    seed: int
    metric: str
    value: float

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric name: {self.metric!r}")


@dataclass(frozen=True)
class SweepSpec:
    """Full description of a sweep; the record stream is a function of this."""

    base: SystemConfig
    snr_db_grid: tuple
    tau_grid: tuple
    n_grid: tuple
    bits_grid: tuple
    methods: tuple
    trials: int
    master_seed: int
    sigma_e2_at: str = "true"

    def __post_init__(self):
        for name in ("snr_db_grid", "tau_grid", "n_grid", "bits_grid", "methods"):
            value = tuple(getattr(self, name))
            if len(value) == 0:
                raise ValueError(f"{name} must be non-empty")
            object.__setattr__(self, name, value)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in 64 bits")
        known = set(RATE_METHODS) | set(ESTIMATION_METHODS)
        for m in self.methods:
            if m not in known:
                raise ValueError(f"unknown method name: {m!r}")
        if self.sigma_e2_at not in SIGMA_E2_MODES:
            raise ValueError(
                f"sigma_e2_at must be one of {SIGMA_E2_MODES}, got {self.sigma_e2_at!r}"
            )


def _trial_seed(master_seed, point_idx, trial):
    """64-bit seed identifying (point, trial); recorded in every CSV row."""
    ss = np.random.SeedSequence((master_seed, point_idx, trial))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _stream(master_seed, point_idx, trial, stream_id):
    return np.random.default_rng(
        np.random.SeedSequence((master_seed, point_idx, trial, stream_id))
    )


def _run_jobs(spec, points, worker, threads):
    """Execute worker(point_idx, point, trial) for every pair, order-stable."""
    keys = [(pi, t) for pi in range(len(points)) for t in range(spec.trials)]
    results = {}
    if threads <= 1:
        for pi, t in keys:
            results[(pi, t)] = worker(pi, points[pi], t)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {
                key: pool.submit(worker, key[0], points[key[0]], key[1])
                for key in keys
            }
            for key in keys:
                results[key] = futures[key].result()
    records = []
    for key in keys:
        records.extend(results[key])
    return records


def run_rate_sweep(spec, threads=1):
    """Achievable rate per beamforming method over (SNR, N, bits).

    The exhaustive oracle is skipped (with a converged=0 record) at points
    where its grid would exceed the enumeration bound.
    """
    bad = set(spec.methods) - set(RATE_METHODS)
    if bad:
        raise ValueError(f"invalid rate-sweep methods: {sorted(bad)}")
    points = list(product(spec.snr_db_grid, spec.n_grid, spec.bits_grid))

    def worker(point_idx, point, trial):
        snr_db, n, bits = point
        sigma_w2 = snr_db_to_sigma_w2(snr_db)
        rho_q = distortion_factor(bits)
        cfg = SystemConfig(
            m_antennas=spec.base.m_antennas,
            n_elements=n,
            tau=spec.base.tau,
            sigma_w2=sigma_w2,
            sigma_x2=spec.base.sigma_x2,
            bits=bits,
        )
        rng_sys = _stream(spec.master_seed, point_idx, trial, 0)
        ch = gen_channels(cfg, rng_sys)
        seed_val = _trial_seed(spec.master_seed, point_idx, trial)
        ident = dict(
            snr_db=float(snr_db), tau=spec.base.tau, n=n, bits=bits,
            trial=trial, seed=seed_val,
        )
        records = []
        for ordinal, name in enumerate(RATE_METHODS):
            if name not in spec.methods:
                continue
            rng_m = _stream(spec.master_seed, point_idx, trial, 1 + ordinal)
            if name == "oracle" and RATE_ORACLE_GRID**n > _ORACLE_POINT_BOUND:
                records.append(
                    TrialRecord(**ident, method=name, metric="converged", value=0.0)
                )
                continue
            if name == "no_irs":
                h = composite_channel(ch, IrsState.off())
            elif name == "random_phase":
                h = composite_channel(
                    ch, IrsState.on(PhaseVector(rng_m.uniform(0.0, 2.0 * np.pi, n)))
                )
            elif name == "pm":
                h = composite_channel(ch, IrsState.on(phase_match(ch, sigma_w2)))
            elif name == "sdr":
                opts = SdrOptions(seed=int(rng_m.integers(0, 2**63)))
                sol = sdr_beamform(ch, sigma_w2, rng_m, _SDR_CANDIDATES, opts)
                h = composite_channel(ch, IrsState.on(sol.rounded))
            elif name == "gd":
                u = gd_beamform(ch, sigma_w2, rho_q, GdConfig(), rng_m)
                h = composite_channel(ch, IrsState.on(u))
            else:
                u = brute_force_oracle(
                    ch, sigma_w2, rho_q, RATE_ORACLE_GRID, OracleObjective.FULL_RATE
                )
                h = composite_channel(ch, IrsState.on(u))
                records.append(
                    TrialRecord(**ident, method=name, metric="converged", value=1.0)
                )
            rate = achievable_rate(h, spec.base.sigma_x2, sigma_w2, rho_q)
            records.append(
                TrialRecord(**ident, method=name, metric="rate_bits", value=rate)
            )
        return records

    return _run_jobs(spec, points, worker, threads)


def _sigma_e2_zero_form(m_antennas, sigma_w2, tau):
    """Residual variance model evaluated at a zero channel: closed form.

    tr(J^{-1}) at h = 0 is pi M sigma_w2 / (2 tau) for the phase-one
    regressor, scaled by sqrt(2) per the residual-variance convention.
    """
    return float(np.sqrt(2.0) * np.pi * m_antennas * sigma_w2 / (2.0 * tau))


def run_estimation_sweep(spec, threads=1):
    """Estimator NMSE over (SNR, tau, N) for 1-bit phase-two training.

    Each trial draws channels and pilots, models the direct-channel
    residual variance per spec.sigma_e2_at ("true": bound at the true
    channel; "estimate": bound at a phase-one ML estimate; "zero": closed
    form at h = 0), then realizes the phase-two system once and runs every
    selected estimator on the same data. A genie bound record
    (method "crlb") is emitted per trial alongside the estimators.
    """
    bad = set(spec.methods) - set(ESTIMATION_METHODS)
    if bad:
        raise ValueError(f"invalid estimation-sweep methods: {sorted(bad)}")
    if tuple(spec.bits_grid) != (1,):
        raise ValueError("estimation sweep supports 1-bit quantization only")
    points = list(product(spec.snr_db_grid, spec.tau_grid, spec.n_grid))

    def worker(point_idx, point, trial):
        snr_db, tau, n = point
        sigma_w2 = snr_db_to_sigma_w2(snr_db)
        cfg = SystemConfig(
            m_antennas=spec.base.m_antennas,
            n_elements=n,
            tau=tau,
            sigma_w2=sigma_w2,
            sigma_x2=spec.base.sigma_x2,
            bits=1,
        )
        rng_sys = _stream(spec.master_seed, point_idx, trial, 0)
        ch = gen_channels(cfg, rng_sys)
        frame = gen_pilots(tau, rng_sys)
        seed_val = _trial_seed(spec.master_seed, point_idx, trial)
        ident = dict(
            snr_db=float(snr_db), tau=tau, n=n, bits=1, trial=trial, seed=seed_val,
        )
        records = []

        a_regressor = phase_one_regressor(frame.a, cfg.m_antennas)
        h_d_stacked = np.concatenate([ch.h_d.real, ch.h_d.imag])
        genie = fisher_matrix(a_regressor, h_d_stacked, sigma_w2)
        records.append(
            TrialRecord(
                **ident, method="crlb", metric="crlb_trace", value=genie.crlb_trace
            )
        )

        if spec.sigma_e2_at == "zero":
            sigma_e2 = _sigma_e2_zero_form(cfg.m_antennas, sigma_w2, tau)
        elif spec.sigma_e2_at == "true":
            sigma_e2 = genie.sigma_e2
        else:
            sys_one = realize_system(ch, frame, sigma_w2, None, rng_sys)
            first = ml_direct(sys_one, sigma_w2)
            h_hat_stacked = np.concatenate([first.h_hat.real, first.h_hat.imag])
            blind = fisher_matrix(a_regressor, h_hat_stacked, sigma_w2)
            sigma_e2 = blind.sigma_e2
        if not np.isfinite(sigma_e2):
            logger.debug(
                "residual variance not finite at point %s; using zero-channel form",
                point,
            )
            sigma_e2 = _sigma_e2_zero_form(cfg.m_antennas, sigma_w2, tau)

        frame_two = phase_two_frame(frame.a, n)
        sys_two = realize_system(ch, frame_two, sigma_w2, sigma_e2, rng_sys)
        truth = cascade_matrix(ch)
        for name in ESTIMATION_METHODS:
            if name not in spec.methods:
                continue
            if name == "ml":
                res = ml_reflect(sys_two, sigma_w2, sigma_e2)
                records.append(
                    TrialRecord(
                        **ident, method=name, metric="iterations",
                        value=float(res.iterations),
                    )
                )
                records.append(
                    TrialRecord(
                        **ident, method=name, metric="converged",
                        value=1.0 if res.converged else 0.0,
                    )
                )
            elif name == "ls":
                res = ls_estimate(sys_two)
            else:
                res = lmmse_estimate(sys_two, 1.0)
            records.append(
                TrialRecord(
                    **ident, method=name, metric="nmse",
                    value=nmse(res.h_hat, truth),
                )
            )
        return records

    return _run_jobs(spec, points, worker, threads)


def records_to_csv(records):
    """Render records to CSV text: UTF-8, LF, shortest round-trip floats."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER.split(","))
    for r in records:
        writer.writerow(
            [
                repr(float(r.snr_db)),
                r.tau,
                r.n,
                r.bits,
                r.method,
                r.trial,
                r.seed,
                r.metric,
                repr(float(r.value)),
            ]
        )
    return out.getvalue()


def summarize(records):
    """Mean value per (sweep point, method, metric), in first-seen point order.

    ML NMSE averages only trials whose converged flag is 1 (the norm-capped
    runaway estimates would otherwise dominate the mean); the companion
    key ("ml", "converged") reports the converged fraction.
    """
    converged = {}
    for r in records:
        if r.method == "ml" and r.metric == "converged":
            converged[(r.snr_db, r.tau, r.n, r.bits, r.trial)] = r.value > 0.5
    groups = {}
    order = []
    for r in records:
        if r.method == "ml" and r.metric == "nmse":
            if not converged.get((r.snr_db, r.tau, r.n, r.bits, r.trial), True):
                continue
        key = (r.snr_db, r.tau, r.n, r.bits, r.method, r.metric)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r.value)
    return {key: float(np.mean(groups[key])) for key in order}


def rate_sweep_preset():
    """Desk-scale rate sweep: N in {5, 40}, 1-bit and 10-bit ADCs."""
    return SweepSpec(
        base=SystemConfig(
            m_antennas=4, n_elements=5, tau=1, sigma_w2=1.0, sigma_x2=1.0, bits=1
        ),
        snr_db_grid=(-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0),
        tau_grid=(1,),
        n_grid=(5, 40),
        bits_grid=(1, 10),
        methods=("no_irs", "random_phase", "pm", "gd"),
        trials=100,
        master_seed=20240817,
    )


def estimation_sweep_preset():
    """Desk-scale estimation sweep: M=2, N in {4, 8}, 1-bit receiver."""
    return SweepSpec(
        base=SystemConfig(
            m_antennas=2, n_elements=4, tau=8, sigma_w2=1.0, sigma_x2=1.0, bits=1
        ),
        snr_db_grid=(-10.0, -5.0, 0.0, 10.0, 20.0, 30.0),
        tau_grid=(8, 16, 32),
        n_grid=(4, 8),
        bits_grid=(1,),
        methods=("ml", "ls", "lmmse"),
        trials=100,
        master_seed=20240817,
        sigma_e2_at="zero",
    )
