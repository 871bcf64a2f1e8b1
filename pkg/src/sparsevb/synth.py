"""Seeded synthetic problems: dense A, sparse B, Gaussian noise, random mask."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .core import Dims, FactorState, Observation, ValidationError, save_bundle


def substream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for ``(seed, label)``.

    The label is hashed into the seed sequence, so e.g. changing how many
    mask draws happen never shifts the draws of the ground truth.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(label.encode())]))


@dataclass(frozen=True)
class ProblemSpec:
    dims: Dims
    p_zero: float = 0.5
    miss_frac: float = 0.0
    sigma2: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.p_zero <= 1:
            raise ValidationError("p_zero", f"must lie in [0, 1], got {self.p_zero!r}")
        if not 0 <= self.miss_frac < 1:
            raise ValidationError("miss_frac", f"must lie in [0, 1), got {self.miss_frac!r}")
        if not self.sigma2 > 0:
            raise ValidationError("sigma2", f"must be > 0, got {self.sigma2!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed", "must be a 64-bit unsigned integer")

    @property
    def n_zero_b(self) -> int:
        return int(round(self.p_zero * self.dims.H * self.dims.M))

    @property
    def n_missing(self) -> int:
        return int(round(self.miss_frac * self.dims.L * self.dims.M))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    a: np.ndarray
    b: np.ndarray
    e: np.ndarray

    @property
    def product(self) -> np.ndarray:
        return self.a @ self.b


def _zero_out(shape: tuple[int, int], count: int, rng: np.random.Generator) -> np.ndarray:
    """0/1 matrix of ``shape`` with exactly ``count`` zeros at uniform positions."""
    flat = np.ones(shape[0] * shape[1])
    flat[rng.choice(flat.size, size=count, replace=False)] = 0.0
    return flat.reshape(shape)


def generate(spec: ProblemSpec) -> tuple[GroundTruth, Observation]:
    L, M, H = spec.dims.L, spec.dims.M, spec.dims.H
    a = substream(spec.seed, "truth-A").standard_normal((L, H))
    rng_b = substream(spec.seed, "truth-B")
    b = rng_b.standard_normal((H, M)) * _zero_out((H, M), spec.n_zero_b, rng_b)
    b[b == 0] = 0.0  # drop any -0.0 left by the multiply
    e = np.sqrt(spec.sigma2) * substream(spec.seed, "noise").standard_normal((L, M))
    mask = _zero_out((L, M), spec.n_missing, substream(spec.seed, "mask"))
    truth = GroundTruth(a, b, e)
    return truth, Observation(mask * (a @ b + e), mask)


def init_state(dims: Dims, seed: int) -> FactorState:
    """Standard-normal means and unit variances."""
    rng = substream(seed, "init")
    a_mean = rng.standard_normal((dims.L, dims.H))
    b_mean = rng.standard_normal((dims.H, dims.M))
    return FactorState(a_mean, b_mean, np.ones((dims.L, dims.H)), np.ones((dims.M, dims.H)))


def export_bundle(directory, spec: ProblemSpec, obs: Observation):
    return save_bundle(directory, spec.dims, obs, spec.sigma2)
