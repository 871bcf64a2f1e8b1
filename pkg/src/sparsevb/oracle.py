"""Brute-force quadrature of the single-column B posterior moments.

Used only as an independent check of the closed-form Laplace updates. The
weight integrated is

    w(b) = (1 - sum_h |b_h| / k) * exp(-(b' S b - 2 g' b) / (2 sigma2))

over a tensor grid, with ``S`` the column precision-like matrix and ``g``
the column of gamma.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import SparseVBError, ValidationError


class NotPositiveDefinite(SparseVBError, ValueError):
    pass


class IllConditioned(SparseVBError, ArithmeticError):
    def __init__(self, renormalizer: float):
        super().__init__(f"integral of the truncated weight is {renormalizer!r} <= 0")
        self.renormalizer = renormalizer


class QuadratureMethod(str, enum.Enum):
    TENSOR_TRAPEZOID = "trapezoid"
    # Same tensor grid idea, but Gauss-Legendre nodes on each side of b_h = 0
    # so the |b_h| kink sits on a panel boundary.
    TENSOR_GAUSS_LEGENDRE = "gauss-legendre"


@dataclass(frozen=True)
class QuadratureSpec:
    points_per_axis: int = 400
    radius_sigmas: float = 12.0
    method: QuadratureMethod = QuadratureMethod.TENSOR_GAUSS_LEGENDRE

    def __post_init__(self):
        if self.points_per_axis < 50:
            raise ValidationError("points_per_axis", "must be >= 50")
        if self.radius_sigmas < 6:
            raise ValidationError("radius_sigmas", "must be >= 6")
        object.__setattr__(self, "method", QuadratureMethod(self.method))


@dataclass(frozen=True)
class Moments:
    mean: np.ndarray
    variance: np.ndarray
    zb: float


def _trapezoid_axis(lo: float, hi: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    # Uniform spacing, shifted so that 0 is a node whenever it is in range.
    h = (hi - lo) / (n - 1)
    if lo < 0 < hi:
        j0 = np.floor(-lo / h)
        start = -j0 * h
        x = start + h * np.arange(n + 1)
        x = x[x <= hi + 0.5 * h]
    else:
        x = lo + h * np.arange(n)
    w = np.full(x.size, h)
    w[0] = w[-1] = 0.5 * h
    return x, w


def _gauss_legendre_axis(lo: float, hi: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    if lo < 0 < hi:
        n_left = max(2, int(round(n * (-lo) / (hi - lo))))
        n_left = min(n_left, n - 2)
        panels = [(lo, 0.0, n_left), (0.0, hi, n - n_left)]
    else:
        panels = [(lo, hi, n)]
    xs, ws = [], []
    for a, b, m in panels:
        t, wt = np.polynomial.legendre.leggauss(m)
        xs.append(0.5 * (b - a) * t + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * wt)
    return np.concatenate(xs), np.concatenate(ws)


def moments_bruteforce(sigma_hat_b, gamma_col, sigma2: float, k: float,
                       spec: QuadratureSpec | None = None) -> Moments:
    """Mean, variance diagonal and ``Z_B`` of one column by tensor quadrature.

    Raises
    ------
    NotPositiveDefinite
        ``sigma_hat_b`` is not positive definite.
    IllConditioned
        The truncated weight integrates to a non-positive value; the raw
        integral ratio is carried on the exception.
    """
    spec = spec or QuadratureSpec()
    S = np.atleast_2d(np.asarray(sigma_hat_b, dtype=float))
    g = np.atleast_1d(np.asarray(gamma_col, dtype=float))
    H = S.shape[0]
    if S.shape != (H, H) or g.shape != (H,):
        raise ValueError(f"shape mismatch: sigma_hat_b {S.shape}, gamma {g.shape}")
    if H > 3:
        raise ValueError("brute-force quadrature supports H <= 3 only")
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("sigma_hat_b is not positive definite") from None

    mu = np.linalg.solve(S, g)
    cov = sigma2 * np.linalg.inv(S)
    half = spec.radius_sigmas * np.sqrt(np.max(np.diag(cov)))
    axis = _trapezoid_axis if spec.method is QuadratureMethod.TENSOR_TRAPEZOID else _gauss_legendre_axis
    nodes, weights = zip(*(axis(mu[h] - half, mu[h] + half, spec.points_per_axis) for h in range(H)))

    # Integrate slab by slab along the first axis so H = 3 stays in memory.
    rest = np.meshgrid(*nodes[1:], indexing="ij")
    rest_w = np.ones(rest[0].shape) if H > 1 else np.ones(())
    for w in (np.ix_(*weights[1:]) if H > 1 else ()):
        rest_w = rest_w * w
    rest = [r - mu[i + 1] for i, r in enumerate(rest)]

    # acc = [∫f, ∫fΛ, ∫(b-mu)fΛ per axis, ∫(b-mu)²fΛ per axis], Λ = 1 - Σ|b|/k
    acc = np.zeros(2 + 2 * H)
    for x0, w0 in zip(nodes[0], weights[0]):
        db = [np.full(rest_w.shape, x0 - mu[0])] + rest
        quad = sum(S[i, j] * db[i] * db[j] for i in range(H) for j in range(H))
        f = np.exp(-quad / (2.0 * sigma2)) * (w0 * rest_w)
        abs_sum = sum(np.abs(d + mu[i]) for i, d in enumerate(db))
        lam = f * (1.0 - abs_sum / k)
        acc[0] += f.sum()
        acc[1] += lam.sum()
        for i in range(H):
            dl = db[i] * lam
            acc[2 + i] += dl.sum()
            acc[2 + H + i] += (db[i] * dl).sum()

    F, ZF = acc[0], acc[1]
    if not ZF > 0:
        raise IllConditioned(ZF / F)
    shift = acc[2:2 + H] / ZF
    second = acc[2 + H:] / ZF
    return Moments(mean=mu + shift, variance=second - shift**2, zb=float(ZF / F))
