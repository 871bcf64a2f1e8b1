"""Fixed-point moment updates for VB matrix factorization/completion.

The factor ``A`` always carries a zero-mean Gaussian prior with diagonal
covariance ``diag(c_a)``. The factor ``B`` carries one of three priors:

* Laplace ``exp(-|b|/k)`` expanded to first order in ``1/k``. The posterior
  moments then have closed forms built from the error function and the
  renormalizer ``Z_B``.
* Uniform, the ``k -> inf`` limit of the above.
* Unit-variance Gaussian, the classic VBMF baseline.

Array layout: ``a_mean`` (L, H), ``b_mean`` (H, M), ``sigma_a`` (L, H),
``sigma_b`` (M, H); the precision-like matrices are stacked as (L, H, H) and
(M, H, H).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .core import (
    ConvergenceMode,
    FactorState,
    Hyperparams,
    Observation,
    PriorB,
    Schedule,
    SolveOptions,
    SolveReport,
    SparseVBError,
)
from .linalg import norm_dist, spd_inverse_batch, symmetrize

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12


class NonPositiveDiagonal(SparseVBError, ValueError):
    pass


class MissingOracle(SparseVBError, ValueError):
    pass


class Divergence(SparseVBError, ArithmeticError):
    """The iterate left the finite range. ``report`` holds the partial run."""

    def __init__(self, message: str, report: SolveReport | None = None):
        super().__init__(message)
        self.report = report


@dataclass(eq=False)
class Workspace:
    sigma_hat_b: np.ndarray  # (M, H, H)
    sigma_hat_b_inv: np.ndarray  # (M, H, H)
    gamma: np.ndarray  # (H, M)
    omega: np.ndarray  # (H, M)
    zb: float
    sigma_hat_a: np.ndarray | None = None  # (L, H, H)


@dataclass
class StepDiagnostics:
    zb: float = 1.0  # raw, before clamping
    zb_clamped: bool = False
    negative_variance_count: int = 0
    jitter_count: int = 0


# -- precision-like matrices -------------------------------------------------

def sigma_hat_a_all(state: FactorState, obs: Observation, hp: Hyperparams) -> np.ndarray:
    """All row matrices at once, shape (L, H, H)."""
    theta = obs.mask
    B = state.b_mean
    H = B.shape[0]
    diag = hp.sigma2 / hp.c_a + theta @ state.sigma_b  # (L, H)
    outer = (B[None, :, :] * theta[:, None, :]) @ B.T  # (L, H, H)
    out = symmetrize(outer)
    idx = np.arange(H)
    out[:, idx, idx] += diag
    return out


def sigma_hat_b_all(state: FactorState, obs: Observation, prior_b=PriorB.UNIFORM,
                    sigma2: float | None = None) -> np.ndarray:
    """All column matrices at once, shape (M, H, H).

    For the Gaussian baseline ``sigma2`` is added on the diagonal, mirroring
    the ``sigma2 / c_a`` term of the row matrices with unit prior variance.
    """
    theta = obs.mask
    A = state.a_mean
    H = A.shape[1]
    diag = theta.T @ state.sigma_a  # (M, H)
    if PriorB(prior_b) is PriorB.GAUSSIAN:
        if sigma2 is None:
            raise ValueError("sigma2 is required for the Gaussian prior")
        diag = diag + sigma2
    outer = (A.T[None, :, :] * theta.T[:, None, :]) @ A  # (M, H, H)
    out = symmetrize(outer)
    idx = np.arange(H)
    out[:, idx, idx] += diag
    return out


def compute_sigma_hat_a(state: FactorState, obs: Observation, hp: Hyperparams, l: int) -> np.ndarray:
    theta = obs.mask[l]
    B = state.b_mean
    out = symmetrize((B * theta) @ B.T)
    out[np.diag_indices_from(out)] += hp.sigma2 / hp.c_a + theta @ state.sigma_b
    return out


def compute_sigma_hat_b(state: FactorState, obs: Observation, m: int) -> np.ndarray:
    theta = obs.mask[:, m]
    A = state.a_mean
    out = symmetrize((A.T * theta) @ A)
    out[np.diag_indices_from(out)] += theta @ state.sigma_a
    return out


# -- A update ----------------------------------------------------------------

def update_a(state: FactorState, obs: Observation, hp: Hyperparams) -> tuple[np.ndarray, np.ndarray, int]:
    """Return ``(a_mean', sigma_a', jitter_count)``."""
    shat = sigma_hat_a_all(state, obs, hp)
    sinv, jit = spd_inverse_batch(shat)
    rhs = obs.V @ state.b_mean.T  # (L, H); V is already zero where masked
    a_mean = np.einsum("lhk,lk->lh", sinv, rhs)
    sigma_a = hp.sigma2 * np.diagonal(sinv, axis1=1, axis2=2).copy()
    return a_mean, sigma_a, jit


# -- B update ----------------------------------------------------------------

def compute_gamma(a_mean: np.ndarray, obs: Observation) -> np.ndarray:
    """``gamma[h, m] = sum_l theta[l, m] v[l, m] a_mean[l, h]``."""
    return a_mean.T @ obs.V


def _omega_from(sinv: np.ndarray, gamma: np.ndarray, sigma2: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(mu, omega)`` with ``mu = Sinv gamma`` per column."""
    mu = np.einsum("mhk,km->hm", sinv, gamma)
    d = np.diagonal(sinv, axis1=1, axis2=2).T  # (H, M)
    if np.any(~(d > 0)):
        raise NonPositiveDiagonal("inverse precision has a non-positive diagonal entry")
    return mu, mu / np.sqrt(2.0 * sigma2 * d)


def build_workspace(state: FactorState, obs: Observation, hp: Hyperparams) -> tuple[Workspace, int]:
    """Assemble the B-side workspace from ``state``'s A moments."""
    shat = sigma_hat_b_all(state, obs, hp.prior_b, hp.sigma2)
    sinv, jit = spd_inverse_batch(shat)
    gamma = compute_gamma(state.a_mean, obs)
    _, omega = _omega_from(sinv, gamma, hp.sigma2)
    ws = Workspace(shat, sinv, gamma, omega, 1.0)
    if hp.prior_b is PriorB.LAPLACE:
        ws.zb = compute_zb(ws, hp)
    return ws, jit


def compute_omega(ws: Workspace, hp: Hyperparams, h: int, m: int) -> float:
    sinv = ws.sigma_hat_b_inv[m]
    d = sinv[h, h]
    if not d > 0:
        raise NonPositiveDiagonal(f"(Sigma_hat_B[{m}]^-1)[{h},{h}] = {d!r}")
    return float(sinv[h] @ ws.gamma[:, m] / np.sqrt(2.0 * hp.sigma2 * d))


def compute_zb(ws: Workspace, hp: Hyperparams) -> float:
    """Renormalizer of the first-order Laplace weight.

    ``1 - (1/k) * sum_{h,m} E|b_hm|`` under the Gaussian part of the
    posterior, written with the standard error function.
    """
    mu = np.einsum("mhk,km->hm", ws.sigma_hat_b_inv, ws.gamma)
    d = np.diagonal(ws.sigma_hat_b_inv, axis1=1, axis2=2).T
    omega = ws.omega
    e_abs = np.sqrt(2.0 * hp.sigma2 * d / np.pi) * np.exp(-omega**2) + mu * erf(omega)
    return float(1.0 - np.sum(e_abs) / hp.k)


def laplace_moments(sinv: np.ndarray, gamma: np.ndarray, sigma2: float, k: float,
                    zb: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form mean (H, M) and raw variance (M, H) under the Laplace weight.

    ``zb`` is used as given; clamping is the caller's business.
    """
    mu, omega = _omega_from(sinv, gamma, sigma2)
    d = np.diagonal(sinv, axis1=1, axis2=2).T  # (H, M), d[h', m]
    kz = k * zb
    s = sigma2 * sinv  # (M, H', H); symmetric so s[m, h', h] == s[m, h, h']
    # mean correction c[h, m] = sum_h' s[m, h', h] erf(omega[h', m]) / (k Z)
    corr = np.einsum("mkh,km->hm", s, erf(omega)) / kz
    mean = mu - corr
    # exp term: sum_h' sqrt(2 / (pi s_h'h')) s[m,h',h]^2 exp(-omega_h'^2) / (k Z)
    w = np.sqrt(2.0 / (np.pi * sigma2 * d)) * np.exp(-omega**2)  # (H', M)
    exp_term = np.einsum("mkh,km->hm", s * s, w) / kz
    var = sigma2 * d - exp_term - corr**2
    return mean, var.T.copy()


def update_b(state: FactorState, obs: Observation, hp: Hyperparams, ws: Workspace | None = None,
             zb_floor: float = 1e-12) -> tuple[np.ndarray, np.ndarray, StepDiagnostics]:
    """Return ``(b_mean', sigma_b', diagnostics)``.

    ``ws`` must have been built from the same A moments as ``state``; it is
    built here when omitted.
    """
    diag = StepDiagnostics()
    if ws is None:
        ws, diag.jitter_count = build_workspace(state, obs, hp)
    sinv = ws.sigma_hat_b_inv
    if hp.prior_b is not PriorB.LAPLACE:
        mean = np.einsum("mhk,km->hm", sinv, ws.gamma)
        var = hp.sigma2 * np.diagonal(sinv, axis1=1, axis2=2).copy()
        return mean, var, diag

    zb = ws.zb
    diag.zb = zb
    if not zb >= zb_floor:
        diag.zb_clamped = True
        zb = zb_floor
    mean, var = laplace_moments(sinv, ws.gamma, hp.sigma2, hp.k, zb)
    bad = ~(var > 0)
    diag.negative_variance_count = int(np.count_nonzero(bad))
    if diag.negative_variance_count:
        var = np.where(bad, VARIANCE_FLOOR, var)
    return mean, var, diag


# -- iteration ---------------------------------------------------------------

def step(state: FactorState, obs: Observation, hp: Hyperparams,
         opts: SolveOptions | None = None) -> tuple[FactorState, StepDiagnostics]:
    """One sweep of all four moment equations.

    Jacobi reads only the incoming state on every right-hand side. Gauss-Seidel
    updates A first and feeds the fresh A moments to the B update; the B-first
    variant does the reverse.
    """
    opts = opts or SolveOptions()
    schedule = opts.update_schedule
    with np.errstate(over="ignore", invalid="ignore"):
        if schedule is Schedule.GAUSS_SEIDEL_B_FIRST:
            b_mean, sigma_b, diag = update_b(state, obs, hp, zb_floor=opts.zb_floor)
            a_input = FactorState(state.a_mean, b_mean, state.sigma_a, sigma_b)
            a_mean, sigma_a, jit_a = update_a(a_input, obs, hp)
        else:
            a_mean, sigma_a, jit_a = update_a(state, obs, hp)
            if schedule is Schedule.GAUSS_SEIDEL:
                b_input = FactorState(a_mean, state.b_mean, sigma_a, state.sigma_b)
            else:
                b_input = state
            b_mean, sigma_b, diag = update_b(b_input, obs, hp, zb_floor=opts.zb_floor)
    diag.jitter_count += jit_a
    new = FactorState(a_mean, b_mean, sigma_a, sigma_b)
    if not new.is_finite():
        raise Divergence(f"non-finite state (raw Z_B = {diag.zb!r})")
    return new, diag


def solve(obs: Observation, hp: Hyperparams, opts: SolveOptions, init: FactorState,
          oracle_ab: np.ndarray | None = None) -> tuple[FactorState, SolveReport]:
    """Iterate :func:`step` until convergence or ``opts.max_iters``.

    ``ORACLE_DISTANCE`` stops when the change of ``d(A_t B_t, AB)`` between
    sweeps, squared, drops below ``delta``; ``AB`` is ``oracle_ab``.
    ``SUCCESSIVE_ITERATES`` stops when ``d(A_t B_t, A_{t-1} B_{t-1}) < sqrt(delta)``.
    """
    oracle_mode = opts.convergence_mode is ConvergenceMode.ORACLE_DISTANCE
    if oracle_mode and oracle_ab is None:
        raise MissingOracle("ORACLE_DISTANCE convergence needs the ground-truth product")
    if not oracle_mode and oracle_ab is not None:
        raise MissingOracle("oracle_ab given but convergence_mode is SUCCESSIVE_ITERATES")

    report = SolveReport()
    state = init
    prev_prod = state.product()
    if oracle_mode:
        prev_d = norm_dist(prev_prod, oracle_ab)
        report.distance_trace.append(prev_d)
    threshold = opts.delta if oracle_mode else np.sqrt(opts.delta)

    for t in range(1, opts.max_iters + 1):
        try:
            state, diag = step(state, obs, hp, opts)
        except (SparseVBError, np.linalg.LinAlgError) as exc:
            # Propagate unchanged, but let callers see how far the run got.
            report.iters = t
            exc.report = report
            raise
        report.iters = t
        report.final_zb = diag.zb
        report.zb_clamped_count += int(diag.zb_clamped)
        report.negative_variance_count += diag.negative_variance_count
        report.jitter_count += diag.jitter_count
        prod = state.product()
        if oracle_mode:
            d = norm_dist(prod, oracle_ab)
            report.distance_trace.append(d)
            diff = d - prev_d
            done = diff * diff < threshold
            prev_d = d
        else:
            d = norm_dist(prod, prev_prod) if np.any(prev_prod) else np.inf
            report.distance_trace.append(d)
            done = d < threshold
            prev_prod = prod
        if done:
            report.converged = True
            break
    logger.debug("solve: iters=%d converged=%s zb=%g", report.iters, report.converged, report.final_zb)
    return state, report
