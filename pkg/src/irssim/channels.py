"""System model for the IRS-assisted single-user SIMO uplink.

A user with a single antenna transmits to an M-antenna receiver. An optional
reflecting surface with N passive elements sits between them; each element
applies a unit-modulus phase shift to the incident signal. The composite
uplink channel is

    h = G diag(u) h_r + h_d,    u_n = exp(j theta_n),

where h_d is the direct channel, h_r the user-to-surface channel and G the
surface-to-receiver matrix. All three are drawn i.i.d. CN(0, 1); the SNR
convention downstream is 1 / sigma_w2 with unit transmit power.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SystemConfig",
    "ChannelSet",
    "PhaseVector",
    "IrsState",
    "gen_channels",
    "composite_channel",
    "cascade_matrix",
    "crandn",
]

TWO_PI = 2.0 * np.pi


def crandn(rng, *shape):
    """Circularly symmetric complex Gaussian draws with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@dataclass(frozen=True)
class SystemConfig:
    """Static dimensions and powers of one simulated link."""

    m_antennas: int
    n_elements: int
    tau: int
    sigma_w2: float
    sigma_x2: float = 1.0
    bits: int = 1

    def __post_init__(self):
        if self.m_antennas < 1:
            raise ValueError("antenna count must be >= 1")
        if self.n_elements < 0:
            raise ValueError("element count must be >= 0")
        if self.tau < 1:
            raise ValueError("pilot length must be >= 1")
        if not self.sigma_w2 > 0:
            raise ValueError("noise variance must be positive")
        if not self.sigma_x2 > 0:
            raise ValueError("signal power must be positive")
        if self.bits < 1:
            raise ValueError("ADC resolution must be >= 1 bit")


@dataclass(frozen=True)
class ChannelSet:
    """One realization of the three link channels.

    h_d has length M, h_r length N and G is M x N. N = 0 is allowed and
    leaves h_r and G empty (direct link only).
    """

    h_d: np.ndarray
    h_r: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        m = self.h_d.shape[0]
        n = self.h_r.shape[0]
        if self.G.shape != (m, n):
            raise ValueError(
                f"G has shape {self.G.shape}, expected ({m}, {n}) from h_d/h_r"
            )
        for name, arr in (("h_d", self.h_d), ("h_r", self.h_r), ("G", self.G)):
            if arr.size and not np.all(np.isfinite(arr.view(float))):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def m_antennas(self):
        return self.h_d.shape[0]

    @property
    def n_elements(self):
        return self.h_r.shape[0]


@dataclass(frozen=True)
class PhaseVector:
    """Unit-modulus reflection coefficients u_n = exp(j theta_n).

    Construction accepts arbitrary real angles and reduces them into
    [0, 2 pi); theta and u are kept mutually consistent.
    """

    theta: np.ndarray
    u: np.ndarray = field(init=False)

    def __post_init__(self):
        theta = np.mod(np.asarray(self.theta, dtype=float), TWO_PI)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "u", np.exp(1j * theta))

    def __len__(self):
        return self.theta.shape[0]


@dataclass(frozen=True)
class IrsState:
    """Surface mode: reflecting with given phases, or fully absorbing.

    The off state models zero reflection amplitude on every element. It is
    distinct from theta = 0, which still reflects at full amplitude.
    """

    phases: PhaseVector | None = None

    @classmethod
    def on(cls, phases):
        return cls(phases=phases)

    @classmethod
    def off(cls):
        return cls(phases=None)

    @property
    def is_on(self):
        return self.phases is not None


def gen_channels(cfg, rng):
    """Draw one ChannelSet with i.i.d. CN(0, 1) entries."""
    return ChannelSet(
        h_d=crandn(rng, cfg.m_antennas),
        h_r=crandn(rng, cfg.n_elements),
        G=crandn(rng, cfg.m_antennas, cfg.n_elements),
    )


def composite_channel(ch, irs):
    """Effective uplink channel G diag(u) h_r + h_d, or h_d when off."""
    if not irs.is_on:
        return ch.h_d.copy()
    u = irs.phases.u
    if u.shape[0] != ch.n_elements:
        raise ValueError(
            f"phase vector length {u.shape[0]} does not match {ch.n_elements} elements"
        )
    return ch.G @ (u * ch.h_r) + ch.h_d


def cascade_matrix(ch):
    """Per-element reflected channel: column n is G[:, n] * h_r[n]."""
    if ch.n_elements == 0:
        raise ValueError("no reflecting channel: the surface has zero elements")
    return ch.G * ch.h_r[None, :]
