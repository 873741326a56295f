"""Pilot-based channel estimation from 1-bit quantized observations.

The receiver sees only the signs of the real and imaginary parts of the
received pilot signal. Estimation runs in two phases: the direct channel is
estimated with the surface absorbing (phase one), then the cascaded
reflecting channel is estimated with the surface cycling through DFT
patterns (phase two), treating the residual direct-channel error as extra
per-slot noise.

Everything is posed in the real domain. A complex system y = A h + w maps to

    A_R = [[Re A, -Im A], [Im A, Re A]],   y_R = [Re y; Im y],

and the observed data are r_R = sgn(y_R). Sign refinement multiplies row i
of A_R by r_i so the likelihood only involves positive half-planes:

    log L(h) = sum_i log Phi( a~_i^T h / s_i ),

with s_i the per-row noise standard deviation per real dimension.

Estimator families:

* ML: gradient ascent on the (concave) probit log-likelihood with Armijo
  backtracking, relative-step termination and a norm cap that flags the
  separable-data divergence pathology of sign regression.
* LS: h = pinv(A_R) (sqrt(pi/2) s r_R). The scaling inverts the Bussgang
  gain of the sign nonlinearity: for a zero-mean Gaussian y with per-dim
  std s, E[sgn(y) y] = s sqrt(2/pi) E[y^2] / E[y^2], so y ~ sqrt(pi/2) s r.
* LMMSE: h = C_hr C_rr^{-1} r_R with the arcsine law for the sign
  autocovariance, C_rr = (2/pi) arcsin(D^{-1/2} C_yy D^{-1/2}),
  C_yy = (v/2) A_R A_R^T + C_noise, D = diag(C_yy), and cross-covariance
  C_hr = sqrt(2/pi) (v/2) A_R^T D^{-1/2}, where v is the prior variance per
  complex coefficient. C_noise includes the phase-two residual covariance
  0.5 rstack((sigma_e2 / M) c c^H kron I_M) on top of (sigma_w2 / 2) I.

The Fisher information of the sign observations gives the estimation lower
bound used both as a benchmark and as the phase-two error-variance model
sigma_e2 = sqrt(2) tr(J^{-1}).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import log_ndtr

from .channels import PhaseVector, crandn

__all__ = [
    "PilotPhase",
    "PilotFrame",
    "RealizedPilotSystem",
    "FisherInfo",
    "EstimationResult",
    "AscentOptions",
    "gen_pilots",
    "dft_patterns",
    "phase_two_frame",
    "phase_one_regressor",
    "realize_system",
    "ml_direct",
    "ml_reflect",
    "fisher_matrix",
    "ls_estimate",
    "lmmse_estimate",
    "nmse",
]

logger = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class PilotPhase(Enum):
    """Training stage: direct channel (I) or reflecting channel (II)."""

    I = "I"
    II = "II"


@dataclass(frozen=True)
class PilotFrame:
    """Pilot symbols plus, for phase two, the per-sub-frame surface patterns."""

    a: np.ndarray
    phase: PilotPhase
    irs_pattern: list[PhaseVector] | None = None

    def __post_init__(self):
        a = np.asarray(self.a, dtype=complex)
        object.__setattr__(self, "a", a)
        if a.ndim != 1 or a.shape[0] < 1:
            raise ValueError("pilot sequence must be a vector of length >= 1")
        mods = np.abs(a)
        if np.max(np.abs(mods - mods[0])) > 1e-9:
            raise ValueError("pilot symbols must have constant modulus")
        if self.phase is PilotPhase.II:
            if not self.irs_pattern:
                raise ValueError("phase-two frame needs a non-empty pattern list")
            n = len(self.irs_pattern[0])
            if any(len(p) != n for p in self.irs_pattern):
                raise ValueError("all surface patterns must have equal length")

    @property
    def tau(self):
        return self.a.shape[0]


def gen_pilots(tau, rng):
    """Draw tau unit-modulus pilot symbols with uniform random phases.

    Continuous phases (rather than a small PSK alphabet) avoid the exact
    sign alignments that make 1-bit data linearly separable at short pilot
    lengths.
    """
    if tau < 1:
        raise ValueError("pilot length must be >= 1")
    return PilotFrame(
        a=np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, tau)),
        phase=PilotPhase.I,
    )


def dft_patterns(n_elements):
    """N surface patterns from the columns of the N-point DFT matrix.

    Pattern s sets theta_n = -2 pi n s / N. Stacking the resulting
    sub-frame regressors yields an orthogonal design (A^H A = tau N I), so
    the cascaded channel is identifiable from sign data.
    """
    if n_elements < 1:
        raise ValueError("need at least one reflecting element")
    n = np.arange(n_elements)
    return [
        PhaseVector(-2.0 * np.pi * n * s / n_elements) for s in range(n_elements)
    ]


def phase_two_frame(a, n_elements):
    """Build the phase-two frame: same pilots repeated under DFT patterns."""
    return PilotFrame(
        a=np.asarray(a, dtype=complex),
        phase=PilotPhase.II,
        irs_pattern=dft_patterns(n_elements),
    )


def _rstack_matrix(A):
    return np.block([[A.real, -A.imag], [A.imag, A.real]])


def phase_one_regressor(a, m_antennas):
    """Real-stacked (unrefined) regressor of the direct-channel pilot system.

    The complex regressor is a kron I_M; rows group antenna-major within
    each pilot slot. Used by the Fisher-information paths, which need the
    regressor without simulating any observation.
    """
    A = np.kron(np.asarray(a, dtype=complex)[:, None], np.eye(m_antennas))
    return _rstack_matrix(A)


def _rstack_vector(y):
    return np.concatenate([y.real, y.imag])


def _repack_complex(h_R, phase, m_antennas, n_elements):
    d = h_R.shape[0] // 2
    hc = h_R[:d] + 1j * h_R[d:]
    if phase is PilotPhase.II:
        return hc.reshape((m_antennas, n_elements), order="F")
    return hc


@dataclass(frozen=True)
class RealizedPilotSystem:
    """One simulated pilot transmission after real stacking and quantization.

    Beyond the regressor/sign data the realization keeps the per-slot pilot
    values (c), the realized noise levels and the dimensions, which the
    estimators need to reconstruct likelihood weights and covariances.
    """

    A_R: np.ndarray
    r_R: np.ndarray
    A_tilde: np.ndarray
    noise_std_per_row: np.ndarray
    phase: PilotPhase
    m_antennas: int
    n_elements: int
    c: np.ndarray
    sigma_w2: float
    sigma_e2: float

    def __post_init__(self):
        if not np.all(np.abs(self.r_R) == 1.0):
            raise ValueError("sign vector entries must be exactly +1 or -1")
        if not np.array_equal(self.A_tilde, self.r_R[:, None] * self.A_R):
            raise ValueError("refined rows must equal r_R[i] times rows of A_R")
        rows, d = self.A_R.shape
        half_r, half_c = rows // 2, d // 2
        top_left = self.A_R[:half_r, :half_c]
        top_right = self.A_R[:half_r, half_c:]
        bottom_left = self.A_R[half_r:, :half_c]
        bottom_right = self.A_R[half_r:, half_c:]
        if not (
            np.array_equal(top_left, bottom_right)
            and np.array_equal(top_right, -bottom_left)
        ):
            raise ValueError("A_R does not have the [[Re,-Im],[Im,Re]] structure")

    @property
    def n_rows(self):
        return self.A_R.shape[0]

    @property
    def n_unknowns(self):
        return self.A_R.shape[1]


def _row_slot_amplitudes(c, m_antennas):
    """|pilot|^2 per real-stacked row, via the row -> slot map.

    Complex row j (j < M tau') belongs to slot j // M; real row i maps to
    complex row i mod (M tau'). Both the real and imaginary halves repeat
    the same slot layout.
    """
    amp2 = np.repeat(np.abs(c) ** 2, m_antennas)
    return np.concatenate([amp2, amp2])


def realize_system(ch, frame, sigma_w2, sigma_e2, rng):
    """Simulate one pilot frame through the 1-bit receiver.

    Phase one regresses on the direct channel with A = a kron I_M. Phase
    two cycles the surface through frame.irs_pattern, one sub-frame of tau
    slots per pattern, regressing on the vectorized cascade; the direct
    channel enters only through its estimation residual, drawn here as
    e_d ~ CN(0, sigma_e2 / M) per antenna and injected as c kron e_d. The
    per-row noise level accounts for that residual:
    s_i = sqrt(((sigma_e2 / M) |a_slot|^2 + sigma_w2) / 2).
    """
    if not sigma_w2 > 0:
        raise ValueError("noise variance must be positive")
    m = ch.m_antennas
    a = frame.a
    if frame.phase is PilotPhase.I:
        A = np.kron(a[:, None], np.eye(m))
        y = A @ ch.h_d + np.sqrt(sigma_w2) * crandn(rng, A.shape[0])
        c = a.copy()
        sigma_e2_eff = 0.0
    else:
        if ch.n_elements == 0:
            raise ValueError("phase two needs at least one reflecting element")
        if sigma_e2 is None:
            raise ValueError("phase two needs the direct-residual variance")
        patterns = frame.irs_pattern
        if len(patterns[0]) != ch.n_elements:
            raise ValueError(
                f"pattern length {len(patterns[0])} does not match "
                f"{ch.n_elements} elements"
            )
        cascade = ch.G * ch.h_r[None, :]
        h_vec = cascade.reshape(-1, order="F")
        A = np.vstack(
            [np.kron(np.outer(a, p.u), np.eye(m)) for p in patterns]
        )
        c = np.tile(a, len(patterns))
        e_d = np.sqrt(sigma_e2 / m) * crandn(rng, m)
        y = (
            A @ h_vec
            + np.kron(c, e_d)
            + np.sqrt(sigma_w2) * crandn(rng, A.shape[0])
        )
        sigma_e2_eff = float(sigma_e2)
    A_R = _rstack_matrix(A)
    y_R = _rstack_vector(y)
    r_R = np.where(y_R >= 0, 1.0, -1.0)
    amp2 = _row_slot_amplitudes(c, m)
    noise_std = np.sqrt(((sigma_e2_eff / m) * amp2 + sigma_w2) / 2.0)
    return RealizedPilotSystem(
        A_R=A_R,
        r_R=r_R,
        A_tilde=r_R[:, None] * A_R,
        noise_std_per_row=noise_std,
        phase=frame.phase,
        m_antennas=m,
        n_elements=ch.n_elements,
        c=c,
        sigma_w2=float(sigma_w2),
        sigma_e2=sigma_e2_eff,
    )


@dataclass(frozen=True)
class EstimationResult:
    """Estimate plus solver diagnostics."""

    h_hat: np.ndarray
    iterations: int
    converged: bool
    final_grad_norm: float
    ridge_fallback: bool = False

    def __post_init__(self):
        arr = np.asarray(self.h_hat)
        if not np.all(np.isfinite(arr)):
            raise ValueError("estimate contains non-finite entries")


@dataclass(frozen=True)
class AscentOptions:
    """Controls for the probit likelihood ascent."""

    eps: float = 1e-4
    max_iters: int = 500
    step_init: float = 1.0
    armijo_c: float = 1e-4
    backtrack_ratio: float = 0.5
    norm_cap_factor: float = 1e3

    def __post_init__(self):
        if not (self.eps > 0 and self.step_init > 0 and self.norm_cap_factor > 0):
            raise ValueError("eps, step_init and norm_cap_factor must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.backtrack_ratio < 1:
            raise ValueError("backtrack_ratio must lie in (0, 1)")


def _phi_over_ndtr(z):
    """Stable phi(z) / Phi(z), evaluated in the log domain."""
    return np.exp(-0.5 * z * z - _LOG_SQRT_2PI - log_ndtr(z))


def _probit_ascent(B, opts):
    """Maximize sum_i log Phi((B h)_i) over real h by gradient ascent.

    Starts at h = 0, doubles the step across iterations and halves it under
    the Armijo sufficient-increase test. Terminates on a relative step below
    opts.eps (converged), a vanishing gradient (converged), a norm above
    opts.norm_cap_factor * sqrt(d) (not converged: the data are separable
    or nearly so and the maximizer runs away), or the iteration budget
    (not converged). A stalled point whose refined margins are all strictly
    positive separates the data, which certifies an unbounded maximizer;
    such exits are pushed to the norm cap and reported not converged.
    """
    d = B.shape[1]
    h = np.zeros(d)
    cap = opts.norm_cap_factor * np.sqrt(d)
    f = float(np.sum(log_ndtr(B @ h)))
    step = opts.step_init
    converged = False
    iterations = 0
    grad_norm = np.inf
    for iterations in range(1, opts.max_iters + 1):
        g = B.T @ _phi_over_ndtr(B @ h)
        gn2 = float(g @ g)
        grad_norm = np.sqrt(gn2)
        if gn2 == 0.0:
            converged = True
            break
        step = min(step * 2.0, 1e8)
        accepted = False
        while step >= 1e-18:
            h_trial = h + step * g
            f_trial = float(np.sum(log_ndtr(B @ h_trial)))
            if f_trial >= f + opts.armijo_c * step * gn2:
                accepted = True
                break
            step *= opts.backtrack_ratio
        if not accepted:
            converged = True
            break
        if f_trial < f:
            raise RuntimeError(
                "likelihood decreased on an accepted step; ascent is diverging"
            )
        moved = float(np.linalg.norm(h_trial - h))
        base = float(np.linalg.norm(h))
        h, f = h_trial, f_trial
        if np.linalg.norm(h) > cap:
            h *= cap / np.linalg.norm(h)
            converged = False
            logger.debug("estimate norm hit the cap; data likely separable")
            break
        if base > 0 and moved < opts.eps * base:
            converged = True
            break
    if converged and h.any() and np.all(B @ h > 0.0):
        # a point that strictly separates every refined row certifies that
        # the likelihood has no finite maximizer (it keeps increasing along
        # this ray), so a stalled ascent here is separation, not optimality
        h *= cap / float(np.linalg.norm(h))
        converged = False
        logger.debug("terminal point separates the sign data; flagging")
    return h, iterations, converged, grad_norm


def _scaled_refined_rows(sys, noise_std):
    return sys.A_tilde / noise_std[:, None]


def ml_direct(sys, sigma_w2, opts=None):
    """ML estimate of the direct channel from phase-one sign data.

    Maximizes sum_i log Phi(sqrt(2 / sigma_w2) a~_i^T h); the objective is
    concave, so the ascent's terminal point is the global maximizer
    whenever it converges.
    """
    if sys.phase is not PilotPhase.I:
        raise ValueError("direct-channel ML needs a phase-one system")
    if opts is None:
        opts = AscentOptions()
    noise_std = np.full(sys.n_rows, np.sqrt(sigma_w2 / 2.0))
    B = _scaled_refined_rows(sys, noise_std)
    h_R, iterations, converged, grad_norm = _probit_ascent(B, opts)
    return EstimationResult(
        h_hat=_repack_complex(h_R, sys.phase, sys.m_antennas, sys.n_elements),
        iterations=iterations,
        converged=converged,
        final_grad_norm=grad_norm,
    )


def ml_reflect(sys, sigma_w2, sigma_e2, opts=None):
    """ML estimate of the vectorized cascaded channel from phase-two data.

    The likelihood weights each row by its own noise level, which folds the
    direct-channel residual into the per-slot variance. sigma_e2 = 0 makes
    the likelihood identical to the phase-one form on the same regressor.
    The estimate is repacked to an M x N matrix (column n is the reflected
    path through element n).
    """
    if sys.phase is not PilotPhase.II:
        raise ValueError("reflecting-channel ML needs a phase-two system")
    if opts is None:
        opts = AscentOptions()
    amp2 = _row_slot_amplitudes(sys.c, sys.m_antennas)
    noise_std = np.sqrt(((sigma_e2 / sys.m_antennas) * amp2 + sigma_w2) / 2.0)
    B = _scaled_refined_rows(sys, noise_std)
    h_R, iterations, converged, grad_norm = _probit_ascent(B, opts)
    return EstimationResult(
        h_hat=_repack_complex(h_R, sys.phase, sys.m_antennas, sys.n_elements),
        iterations=iterations,
        converged=converged,
        final_grad_norm=grad_norm,
    )


@dataclass(frozen=True)
class FisherInfo:
    """Fisher information of the sign observations and the implied bounds."""

    J: np.ndarray
    crlb_trace: float
    sigma_e2: float
    singular: bool = False

    def __post_init__(self):
        if np.max(np.abs(self.J - self.J.T)) > 1e-10:
            raise ValueError("Fisher matrix must be symmetric within 1e-10")
        w = np.linalg.eigvalsh(self.J)
        if w[0] < -1e-8:
            raise ValueError("Fisher matrix must be positive semidefinite")
        if not self.singular and not self.crlb_trace > 0:
            raise ValueError("trace of the inverse must be positive")


def fisher_matrix(A_R, h_R, sigma_w2, sigma_e2_factor=np.sqrt(2.0)):
    """Fisher information for 1-bit observations of A_R h + noise.

    J = sum_i (2 / sigma_w2) phi(z_i)^2 / (Phi(z_i) Phi(-z_i)) a_i a_i^T
    with z_i = sqrt(2 / sigma_w2) a_i^T h_R over the unrefined rows (the
    information does not depend on the realized signs). The weight is
    evaluated in the log domain; it underflows gracefully to 0 for |z|
    beyond ~38 instead of producing 0/0.

    Returns tr(J^{-1}) and the modeled residual variance
    sigma_e2 = sigma_e2_factor * tr(J^{-1}); a singular J reports both as
    +inf with the singular flag set.
    """
    A_R = np.asarray(A_R, dtype=float)
    z = np.sqrt(2.0 / sigma_w2) * (A_R @ np.asarray(h_R, dtype=float))
    coef = np.exp(-z * z - 2.0 * _LOG_SQRT_2PI - log_ndtr(z) - log_ndtr(-z))
    J = (2.0 / sigma_w2) * (A_R.T * coef[None, :]) @ A_R
    J = 0.5 * (J + J.T)
    w = np.linalg.eigvalsh(J)
    tol = 1e-12 * max(float(w[-1]), 1.0)
    if w[0] <= tol:
        return FisherInfo(J=J, crlb_trace=np.inf, sigma_e2=np.inf, singular=True)
    crlb = float(np.sum(1.0 / w))
    return FisherInfo(
        J=J, crlb_trace=crlb, sigma_e2=float(sigma_e2_factor) * crlb
    )


def ls_estimate(sys):
    """Least squares on the Bussgang-rescaled signs.

    Solves A_R h = sqrt(pi/2) s r_R in the least-squares sense, which
    inverts the average gain of the sign nonlinearity row by row. Raises
    when the regressor cannot identify all unknowns.
    """
    target = np.sqrt(np.pi / 2.0) * sys.noise_std_per_row * sys.r_R
    h_R, _, rank, _ = np.linalg.lstsq(sys.A_R, target, rcond=None)
    if rank < sys.n_unknowns:
        raise ValueError(
            f"regressor rank {rank} is deficient: {sys.n_unknowns} real unknowns; "
            "the pilot design does not identify the channel"
        )
    return EstimationResult(
        h_hat=_repack_complex(h_R, sys.phase, sys.m_antennas, sys.n_elements),
        iterations=0,
        converged=True,
        final_grad_norm=0.0,
    )


def lmmse_estimate(sys, channel_prior_var):
    """Linear MMSE estimate from sign data via the arcsine law.

    Models the channel prior as CN(0, channel_prior_var) per complex
    coefficient. The sign autocovariance of a zero-mean Gaussian vector y
    is (2/pi) arcsin of its correlation matrix, and the cross-covariance
    with any jointly Gaussian quantity picks up the Bussgang factor
    sqrt(2/pi) / std(y_j) per output. The noise covariance includes the
    phase-two direct-residual term, correlated across slots through the
    pilot values.
    """
    if not channel_prior_var > 0:
        raise ValueError("prior variance must be positive")
    v = float(channel_prior_var)
    n_rows = sys.n_rows
    C_noise = (sys.sigma_w2 / 2.0) * np.eye(n_rows)
    if sys.sigma_e2 > 0:
        K = (sys.sigma_e2 / sys.m_antennas) * np.kron(
            np.outer(sys.c, sys.c.conj()), np.eye(sys.m_antennas)
        )
        C_noise += 0.5 * _rstack_matrix(K)
    C_yy = (v / 2.0) * (sys.A_R @ sys.A_R.T) + C_noise
    root_d = np.sqrt(np.diag(C_yy))
    corr = C_yy / np.outer(root_d, root_d)
    C_rr = (2.0 / np.pi) * np.arcsin(np.clip(corr, -1.0, 1.0))
    C_hr = np.sqrt(2.0 / np.pi) * (v / 2.0) * (sys.A_R.T / root_d[None, :])
    ridge = False
    try:
        weights = np.linalg.solve(C_rr, sys.r_R)
        # LU only raises on an exactly zero pivot; a singular covariance
        # usually slips through with astronomically amplified weights, so
        # verify the solution actually satisfies the system
        residual = float(np.max(np.abs(C_rr @ weights - sys.r_R)))
        if not np.isfinite(residual) or residual > 1e-6:
            raise np.linalg.LinAlgError("sign covariance numerically singular")
    except np.linalg.LinAlgError:
        ridge = True
        logger.warning("sign covariance singular; retrying with 1e-10 ridge")
        weights = np.linalg.solve(
            C_rr + 1e-10 * np.eye(n_rows), sys.r_R
        )
    h_R = C_hr @ weights
    return EstimationResult(
        h_hat=_repack_complex(h_R, sys.phase, sys.m_antennas, sys.n_elements),
        iterations=0,
        converged=True,
        final_grad_norm=0.0,
        ridge_fallback=ridge,
    )


def nmse(h_hat, h_true):
    """Normalized squared error ||h_hat - h_true||^2 / ||h_true||^2."""
    h_hat = np.asarray(h_hat)
    h_true = np.asarray(h_true)
    if h_hat.shape != h_true.shape:
        raise ValueError(
            f"shape mismatch: estimate {h_hat.shape} vs truth {h_true.shape}"
        )
    den = float(np.sum(np.abs(h_true) ** 2))
    if den == 0.0:
        raise ValueError("true channel is zero; NMSE undefined")
    return float(np.sum(np.abs(h_hat - h_true) ** 2) / den)
