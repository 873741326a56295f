"""Render sweep results to PNG figures next to the CSV output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .experiments import summarize

__all__ = ["save_rate_figure", "save_nmse_figure"]


def _series_by_key(records, metric, key_fn):
    means = summarize(records)
    series = {}
    for (snr_db, tau, n, bits, method, met), value in means.items():
        if met != metric:
            continue
        series.setdefault(key_fn(method, tau, n, bits), []).append((snr_db, value))
    return {k: sorted(v) for k, v in series.items()}


def save_rate_figure(records, path):
    """Mean achievable rate vs SNR, one line per (method, N, bits)."""
    series = _series_by_key(
        records, "rate_bits", lambda method, tau, n, bits: (method, n, bits)
    )
    fig, ax = plt.subplots(figsize=(7.0, 5.0))
    for key in sorted(series, key=str):
        method, n, bits = key
        pts = series[key]
        ax.plot(
            [p[0] for p in pts],
            [p[1] for p in pts],
            marker="o",
            label=f"{method} N={n} {bits}-bit",
        )
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("rate (bits per channel use)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def save_nmse_figure(records, path):
    """Mean NMSE vs SNR on a log scale, one line per (method, tau, N)."""
    series = _series_by_key(
        records, "nmse", lambda method, tau, n, bits: (method, tau, n)
    )
    fig, ax = plt.subplots(figsize=(7.0, 5.0))
    for key in sorted(series, key=str):
        method, tau, n = key
        pts = series[key]
        ax.semilogy(
            [p[0] for p in pts],
            [p[1] for p in pts],
            marker="s",
            label=f"{method} tau={tau} N={n}",
        )
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("NMSE")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
