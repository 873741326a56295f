"""Few-bit ADC model: Lloyd-Max quantizer, distortion factor, quantized rate.

The receiver quantizes each real dimension of the baseband signal with a
b-bit optimal (Lloyd-Max) scalar quantizer designed for a unit-variance
Gaussian input. Its mean-square distortion ratio rho_q enters the linearized
(Bussgang) model of the quantized receiver, which gives the achievable-rate
expression used throughout:

    rate = log2(1 + (1 - rho_q) sigma_x2 sum_i |h_i|^2 / (sigma_w2 + rho_q |h_i|^2))

and its low-SNR proxy sigma_x2 (1 - rho_q) ||h||^2 / sigma_w2.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "QuantizerSpec",
    "distortion_factor",
    "quantize",
    "achievable_rate",
    "low_snr_rate_proxy",
]

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def _gauss_pdf(x):
    return np.exp(-0.5 * x * x) / _SQRT_2PI


@lru_cache(maxsize=None)
def _lloyd_levels(bits, tol=1e-12, max_iters=10_000):
    """Nonnegative reconstruction levels of the Lloyd-Max quantizer.

    Fixed-point iteration on the half-line (the optimal quantizer for a
    symmetric density is symmetric): each level moves to the conditional
    mean of its cell, cells are delimited by midpoints. Initialized at
    quantiles of the asymptotically optimal point density phi^(1/3), which
    is a half-normal with standard deviation sqrt(3).
    """
    half = 2 ** (bits - 1)
    u = (np.arange(half) + 0.5) / half
    lv = np.sqrt(3.0) * ndtri(0.5 + 0.5 * u)
    for _ in range(max_iters):
        thr = 0.5 * (lv[1:] + lv[:-1])
        a = np.concatenate([[0.0], thr])
        b = np.concatenate([thr, [np.inf]])
        m0 = ndtr(b) - ndtr(a)
        m1 = _gauss_pdf(a) - _gauss_pdf(b)
        new = m1 / m0
        delta = np.max(np.abs(new - lv))
        lv = new
        if delta < tol:
            break
    lv.setflags(write=False)
    return lv


@lru_cache(maxsize=None)
def distortion_factor(bits):
    """Mean-square distortion ratio E|y - Q(y)|^2 / E|y|^2 per real dimension.

    Computed for a unit-variance Gaussian input under the optimal scalar
    quantizer at the given bit depth. bits=1 evaluates to 1 - 2/pi exactly
    (up to the fixed-point tolerance).
    """
    if not isinstance(bits, (int, np.integer)) or bits < 1:
        raise ValueError("bits must be a positive integer")
    lv = _lloyd_levels(int(bits))
    thr = 0.5 * (lv[1:] + lv[:-1])
    a = np.concatenate([[0.0], thr])
    b = np.concatenate([thr, [np.inf]])
    m0 = ndtr(b) - ndtr(a)
    m1 = _gauss_pdf(a) - _gauss_pdf(b)
    e_xq = 2.0 * np.sum(lv * m1)
    e_q2 = 2.0 * np.sum(lv * lv * m0)
    return float(1.0 - 2.0 * e_xq + e_q2)


@dataclass(frozen=True)
class QuantizerSpec:
    """ADC resolution paired with its distortion factor."""

    bits: int
    rho_q: float

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("bits must be >= 1")
        if not 0.0 < self.rho_q < 1.0:
            raise ValueError("distortion factor must lie in (0, 1)")

    @classmethod
    def for_bits(cls, bits):
        return cls(bits=bits, rho_q=distortion_factor(bits))


def _quantize_real(x, levels, thresholds):
    idx = np.searchsorted(thresholds, x)
    return levels[idx]


def quantize(y, spec):
    """Quantize each real dimension of a complex signal.

    bits=1 returns sgn(Re y) + j sgn(Im y) with sgn(0) = +1. For bits > 1
    both components are mapped to the nearest Lloyd-Max reconstruction level
    designed for unit variance per real dimension; callers pre-scale inputs
    by the known standard deviation.
    """
    y = np.asarray(y, dtype=complex)
    if spec.bits == 1:
        re = np.where(y.real >= 0, 1.0, -1.0)
        im = np.where(y.imag >= 0, 1.0, -1.0)
        return re + 1j * im
    half = _lloyd_levels(spec.bits)
    levels = np.concatenate([-half[::-1], half])
    thresholds = 0.5 * (levels[1:] + levels[:-1])
    return _quantize_real(y.real, levels, thresholds) + 1j * _quantize_real(
        y.imag, levels, thresholds
    )


def _check_rate_args(h, sigma_x2, sigma_w2, rho_q):
    if not np.all(np.isfinite(h)):
        raise ValueError("channel vector contains non-finite entries")
    if not sigma_w2 > 0:
        raise ValueError("noise variance must be positive")
    if not 0 <= rho_q < 1:
        raise ValueError("distortion factor must be in [0, 1)")
    if not sigma_x2 > 0:
        raise ValueError("signal power must be positive")


def achievable_rate(h, sigma_x2, sigma_w2, rho_q):
    """Rate of the quantized receiver in bits per channel use.

    Scalar form of the linearized-model rate: the effective per-antenna
    noise is sigma_w2 + rho_q |h_i|^2, so

        rate = log2(1 + (1 - rho_q) sigma_x2 sum_i |h_i|^2 / (sigma_w2 + rho_q |h_i|^2)).

    rho_q = 0 reduces to log2(1 + sigma_x2 ||h||^2 / sigma_w2).
    """
    h = np.asarray(h, dtype=complex)
    _check_rate_args(h, sigma_x2, sigma_w2, rho_q)
    p = np.abs(h) ** 2
    snr_eff = (1.0 - rho_q) * sigma_x2 * np.sum(p / (sigma_w2 + rho_q * p))
    return float(np.log2(1.0 + snr_eff))


def low_snr_rate_proxy(h, sigma_x2, sigma_w2, rho_q):
    """Low-SNR mutual-information proxy sigma_x2 (1 - rho_q) ||h||^2 / sigma_w2."""
    h = np.asarray(h, dtype=complex)
    _check_rate_args(h, sigma_x2, sigma_w2, rho_q)
    return float(sigma_x2 * (1.0 - rho_q) * np.sum(np.abs(h) ** 2) / sigma_w2)
