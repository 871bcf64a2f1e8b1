"""Permutation/sign alignment of recovered factors and reconstruction errors."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .linalg import ZeroReference, frobenius, norm_dist

EXHAUSTIVE_MAX_H = 8


@dataclass(frozen=True, eq=False)
class Alignment:
    """``aligned[h] = signs[h] * b_hat[perm[h]]``; columns of A transform alike."""

    perm: np.ndarray
    signs: np.ndarray

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=int)
        signs = np.asarray(self.signs, dtype=float)
        if sorted(perm.tolist()) != list(range(perm.size)):
            raise ValueError(f"perm is not a permutation: {perm}")
        if signs.shape != perm.shape or not np.all(np.abs(signs) == 1):
            raise ValueError("signs must be +-1, one per row")
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "signs", signs)

    @classmethod
    def identity(cls, H: int) -> Alignment:
        return cls(np.arange(H), np.ones(H))

    def apply_b(self, b: np.ndarray) -> np.ndarray:
        return self.signs[:, None] * np.asarray(b)[self.perm]

    def apply_a(self, a: np.ndarray) -> np.ndarray:
        return np.asarray(a)[:, self.perm] * self.signs[None, :]

    def __eq__(self, other):
        if not isinstance(other, Alignment):
            return NotImplemented
        return np.array_equal(self.perm, other.perm) and np.array_equal(self.signs, other.signs)

    __hash__ = None


@dataclass(frozen=True)
class ErrorReport:
    err_b: float
    err_b_abs: float
    err_b_sp: float
    err_ab: float
    err_ab_mc: float | None
    alignment: Alignment


def _unit(x: np.ndarray, name: str) -> np.ndarray:
    n = frobenius(x)
    if n == 0:
        raise ZeroReference(f"{name} has zero Frobenius norm")
    return x / n


def _pair_costs(b_hat: np.ndarray, b_ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cost of sending b_hat row j to b_ref row i with the better sign.

    err_b is a sum over rows once both matrices are unit-normalized (row
    permutations and sign flips do not change the norm), so the best sign
    for each (i, j) pair is independent of every other pair.
    """
    x = _unit(b_hat, "b_hat")
    y = _unit(b_ref, "b_ref")
    plus = ((y[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    minus = ((y[:, None, :] + x[None, :, :]) ** 2).sum(-1)
    signs = np.where(minus < plus, -1.0, 1.0)
    return np.minimum(plus, minus), signs


def align(b_hat, b_ref) -> Alignment:
    """Row permutation and signs of ``b_hat`` that best match ``b_ref``.

    For ``H <= 8`` every permutation is scored (with the per-row optimal sign,
    which is equivalent to scoring all ``H! * 2^H`` candidates); ties go to the
    lexicographically smallest permutation and to ``+1`` signs. Larger ``H``
    uses an assignment on the absolute row correlations.
    """
    b_hat = np.asarray(b_hat, dtype=float)
    b_ref = np.asarray(b_ref, dtype=float)
    if b_hat.shape != b_ref.shape:
        raise ValueError(f"shape mismatch: {b_hat.shape} vs {b_ref.shape}")
    H = b_ref.shape[0]
    cost, signs = _pair_costs(b_hat, b_ref)
    rows = np.arange(H)
    if H <= EXHAUSTIVE_MAX_H:
        perms = np.array(list(itertools.permutations(range(H))), dtype=int)
        totals = cost[rows[None, :], perms].sum(axis=1)
        perm = perms[int(np.argmin(totals))]
    else:
        x = _unit(b_hat, "b_hat")
        y = _unit(b_ref, "b_ref")
        nx = np.linalg.norm(x, axis=1)
        ny = np.linalg.norm(y, axis=1)
        denom = np.outer(ny, nx)
        corr = np.divide(y @ x.T, denom, out=np.zeros((H, H)), where=denom > 0)
        _, perm = linear_sum_assignment(-np.abs(corr))
    return Alignment(perm, signs[rows, perm])


def compute_errors(a_hat, b_hat, a_ref, b_ref, mask=None, alignment: Alignment | None = None) -> ErrorReport:
    """Five reconstruction errors after aligning ``b_hat`` to ``b_ref``.

    The alignment is chosen once (minimizing err_b) and reused for err_b_abs
    and err_b_sp. err_ab is alignment-free. err_ab_mc is only computed when a
    mask is given and sums over its zero entries.
    """
    a_hat = np.asarray(a_hat, dtype=float)
    b_hat = np.asarray(b_hat, dtype=float)
    a_ref = np.asarray(a_ref, dtype=float)
    b_ref = np.asarray(b_ref, dtype=float)
    if alignment is None:
        alignment = align(b_hat, b_ref)
    b_al = alignment.apply_b(b_hat)

    x = _unit(b_al, "b_hat")
    y = _unit(b_ref, "b_ref")
    err_b = norm_dist(x, y)
    err_b_abs = norm_dist(np.abs(x), np.abs(y))
    err_b_sp = float(np.sum(x[b_ref == 0] ** 2))

    p_hat = _unit(a_hat @ b_hat, "a_hat @ b_hat")
    p_ref = _unit(a_ref @ b_ref, "a_ref @ b_ref")
    err_ab = norm_dist(p_hat, p_ref)
    err_ab_mc = None
    if mask is not None:
        missing = np.asarray(mask) == 0
        err_ab_mc = float(np.sum((p_hat[missing] - p_ref[missing]) ** 2))
    return ErrorReport(err_b, err_b_abs, err_b_sp, err_ab, err_ab_mc, alignment)
