"""Small dense symmetric linear algebra and matrix distances."""

from __future__ import annotations

import numpy as np

from .core import SparseVBError

JITTER_SCALE = 1e-10
JITTER_RETRIES = 8


class SingularMatrix(SparseVBError, np.linalg.LinAlgError):
    pass


class ZeroReference(SparseVBError, ValueError):
    pass


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return ``(m + m^T) / 2`` over the last two axes; exactly symmetric."""
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _chol_inverse(m: np.ndarray) -> np.ndarray:
    c = np.linalg.cholesky(m)
    ci = np.linalg.inv(c)
    return symmetrize(np.swapaxes(ci, -1, -2) @ ci)


def spd_inverse(m, jitter_scale: float = JITTER_SCALE) -> tuple[np.ndarray, bool]:
    """Invert a symmetric positive-definite matrix through its Cholesky factor.

    If the factorization fails, ``m + jitter * I`` is tried instead with
    ``jitter = jitter_scale * trace(m) / n``, doubling the jitter up to
    ``JITTER_RETRIES`` times.

    Returns
    -------
    inverse : ndarray
        Exactly symmetric inverse.
    jittered : bool
        Whether a jitter had to be added.

    Raises
    ------
    SingularMatrix
        If every attempt fails.
    """
    m = symmetrize(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {m.shape}")
    try:
        return _chol_inverse(m), False
    except np.linalg.LinAlgError:
        pass
    n = m.shape[0]
    jitter = jitter_scale * np.trace(m) / n
    eye = np.eye(n)
    if jitter > 0 and np.isfinite(jitter):
        for _ in range(JITTER_RETRIES):
            try:
                return _chol_inverse(m + jitter * eye), True
            except np.linalg.LinAlgError:
                jitter *= 2.0
    raise SingularMatrix(f"matrix is not positive definite even after jitter (trace={np.trace(m)!r})")


def spd_inverse_batch(ms: np.ndarray, jitter_scale: float = JITTER_SCALE) -> tuple[np.ndarray, int]:
    """Batched :func:`spd_inverse` over a stack of shape (N, n, n).

    Returns the stacked inverses and the number of matrices that needed jitter.
    """
    ms = np.asarray(ms, dtype=float)
    try:
        return _chol_inverse(symmetrize(ms)), 0
    except np.linalg.LinAlgError:
        pass
    out = np.empty_like(ms)
    jittered = 0
    for i, m in enumerate(ms):
        out[i], j = spd_inverse(m, jitter_scale)
        jittered += j
    return out, jittered


def frobenius(x) -> float:
    x = np.asarray(x, dtype=float)
    # Rescale first so tiny or huge entries neither underflow nor overflow.
    scale = np.max(np.abs(x)) if x.size else 0.0
    if scale == 0 or not np.isfinite(scale):
        return float(scale)
    y = x / scale
    return float(scale * np.sqrt(np.sum(y * y)))


def norm_dist(x, y) -> float:
    """Squared normalized distance ``||x - y||_F^2 / ||y||_F^2``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    ref = frobenius(y)
    if ref == 0:
        raise ZeroReference("reference matrix has zero Frobenius norm")
    return (frobenius(x - y) / ref) ** 2
