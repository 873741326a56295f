"""Built-in invariant suite behind the `selftest` CLI command.

Each check re-derives a quantity through an independent route and compares:
the analytic rate gradient against central finite differences, the
homogenized quadratic form against the direct receive-power objective, and
the determinant form of the quantized rate against the scalar form used in
production.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .beamforming import full_rate_objective, homogenize, objective_trace, rate_gradient
from .channels import PhaseVector, SystemConfig, gen_channels
from .quantization import achievable_rate, distortion_factor

__all__ = ["SelftestReport", "run_selftest"]


@dataclass(frozen=True)
class SelftestReport:
    passed: int
    failed: int
    lines: tuple

    @property
    def ok(self):
        return self.failed == 0


def _det_form_rate(h, sigma_x2, sigma_w2, rho_q):
    """Quantized rate via the linearized-model determinant.

    The sign output decomposes as (1 - rho) (h x + w) + q with distortion
    covariance rho (1 - rho) diag(C_y), C_y = sigma_x2 h h^H + sigma_w2 I.
    """
    m = h.shape[0]
    hh = np.outer(h, h.conj())
    cy_diag = sigma_x2 * np.abs(h) ** 2 + sigma_w2
    noise = (1.0 - rho_q) ** 2 * sigma_w2 * np.eye(m) + rho_q * (
        1.0 - rho_q
    ) * np.diag(cy_diag)
    K = np.eye(m) + (1.0 - rho_q) ** 2 * sigma_x2 * np.linalg.solve(noise, hh)
    sign, logdet = np.linalg.slogdet(K)
    return float(sign.real * logdet / np.log(2.0))


def _check_gradient(rng, probes=20):
    worst = 0.0
    for _ in range(probes):
        m = int(rng.integers(1, 7))
        n = int(rng.integers(1, 7))
        cfg = SystemConfig(m, n, tau=1, sigma_w2=float(rng.uniform(0.1, 10.0)))
        ch = gen_channels(cfg, rng)
        rho = distortion_factor(int(rng.integers(1, 4)))
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        grad = rate_gradient(ch, PhaseVector(theta), cfg.sigma_w2, rho)
        fd = np.zeros(n)
        delta = 1e-6
        for i in range(n):
            up, down = theta.copy(), theta.copy()
            up[i] += delta
            down[i] -= delta
            fd[i] = (
                full_rate_objective(ch, PhaseVector(up), cfg.sigma_w2, rho)
                - full_rate_objective(ch, PhaseVector(down), cfg.sigma_w2, rho)
            ) / (2.0 * delta)
        rel = np.max(np.abs(fd - grad)) / max(np.max(np.abs(grad)), 1e-8)
        worst = max(worst, rel)
    return worst < 1e-5, f"max relative gradient error {worst:.2e} (bound 1e-5)"


def _check_homogenization(rng, probes=200):
    worst = 0.0
    for _ in range(probes):
        m = int(rng.integers(1, 7))
        n = int(rng.integers(1, 7))
        cfg = SystemConfig(m, n, tau=1, sigma_w2=float(rng.uniform(0.1, 10.0)))
        ch = gen_channels(cfg, rng)
        obj = homogenize(ch, cfg.sigma_w2)
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        t = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi))
        ubar = np.concatenate([np.exp(1j * theta), [t]])
        lifted = float(np.real(ubar.conj() @ obj.C @ ubar)) + obj.const_term
        direct = objective_trace(
            ch, PhaseVector(theta - np.angle(t)), cfg.sigma_w2
        )
        worst = max(worst, abs(lifted - direct))
    return worst < 1e-10, f"max homogenization mismatch {worst:.2e} (bound 1e-10)"


def _check_rate_identity(rng, probes=200):
    worst = 0.0
    for _ in range(probes):
        m = int(rng.integers(1, 9))
        h = (rng.standard_normal(m) + 1j * rng.standard_normal(m)) / np.sqrt(2.0)
        sigma_w2 = float(rng.uniform(0.01, 10.0))
        rho = distortion_factor(int(rng.integers(1, 4)))
        scalar = achievable_rate(h, 1.0, sigma_w2, rho)
        det = _det_form_rate(h, 1.0, sigma_w2, rho)
        worst = max(worst, abs(scalar - det))
    return worst < 1e-10, f"max rate-form mismatch {worst:.2e} (bound 1e-10)"


def run_selftest(seed=0):
    """Run the invariant suite; returns pass/fail counts and report lines."""
    rng = np.random.default_rng(seed)
    checks = (
        ("gradient vs finite differences", _check_gradient),
        ("homogenization consistency", _check_homogenization),
        ("rate determinant identity", _check_rate_identity),
    )
    lines = []
    passed = failed = 0
    for name, fn in checks:
        ok, detail = fn(rng)
        if ok:
            passed += 1
        else:
            failed += 1
        lines.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    lines.append(f"{passed} passed, {failed} failed")
    return SelftestReport(passed=passed, failed=failed, lines=tuple(lines))
