"""Domain types, validation and the problem-bundle file format."""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class SparseVBError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SparseVBError, ValueError):
    """An input violates a type invariant. ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ShapeMismatch(ValidationError):
    pass


class EmptyMask(ValidationError):
    pass


class NonPositiveParam(ValidationError):
    pass


class PriorB(str, enum.Enum):
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"  # unit-variance Gaussian on every entry of B
    UNIFORM = "uniform"  # k -> infinity limit of the Laplace prior


class ConvergenceMode(str, enum.Enum):
    ORACLE_DISTANCE = "oracle"
    SUCCESSIVE_ITERATES = "successive"


class Schedule(str, enum.Enum):
    """Order of the A and B half-steps inside one sweep.

    Under JACOBI both halves read the previous sweep, so ``A_t`` descends from
    ``B_{t-1}, A_{t-2}, ...`` and ``B_t`` from ``A_{t-1}, B_{t-2}, ...``: two
    interleaved chains whose factors need not match, so ``A_t B_t`` is not a
    fit of ``V``. GAUSS_SEIDEL feeds the fresh A into the B half-step;
    GAUSS_SEIDEL_B_FIRST updates B from the incoming A and then A from the
    fresh B.
    """

    JACOBI = "jacobi"
    GAUSS_SEIDEL = "gs"
    GAUSS_SEIDEL_B_FIRST = "gs-b"


@dataclass(frozen=True)
class Dims:
    L: int
    M: int
    H: int

    def __post_init__(self):
        for name in ("L", "M", "H"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise NonPositiveParam(name, f"must be a positive integer, got {value!r}")
        if self.H > min(self.L, self.M):
            raise ShapeMismatch("H", f"H={self.H} exceeds min(L, M)={min(self.L, self.M)}")


def _frozen_array(x, dtype=float) -> np.ndarray:
    a = np.array(x, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class Observation:
    """Observed matrix ``V`` together with its binary observation mask.

    Entries of ``V`` where the mask is 0 are overwritten with exactly 0 on
    construction, so every masked sum can be written as a plain product.
    ``mask=None`` means fully observed.
    """

    __slots__ = ("V", "mask")

    def __init__(self, V, mask=None):
        V = np.asarray(V, dtype=float)
        if V.ndim != 2:
            raise ShapeMismatch("V", f"expected a 2-D matrix, got ndim={V.ndim}")
        if mask is None:
            mask = np.ones(V.shape)
        else:
            mask = np.asarray(mask, dtype=float)
            if mask.shape != V.shape:
                raise ShapeMismatch("mask", f"shape {mask.shape} != V shape {V.shape}")
            if not np.all((mask == 0) | (mask == 1)):
                raise ValidationError("mask", "entries must be 0 or 1")
        if not np.all(np.isfinite(V[mask == 1])):
            raise ValidationError("V", "observed entries must be finite")
        V = np.where(mask == 1, V, 0.0)
        object.__setattr__(self, "V", _frozen_array(V))
        object.__setattr__(self, "mask", _frozen_array(mask))

    def __setattr__(self, name, value):
        raise AttributeError("Observation is immutable")

    @property
    def shape(self) -> tuple[int, int]:
        return self.V.shape

    @property
    def fully_observed(self) -> bool:
        return bool(np.all(self.mask == 1))

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return np.array_equal(self.V, other.V) and np.array_equal(self.mask, other.mask)

    def __repr__(self):
        L, M = self.shape
        return f"Observation(L={L}, M={M}, observed={int(self.mask.sum())})"


@dataclass(frozen=True)
class Hyperparams:
    sigma2: float
    k: float = 4e3
    c_a: np.ndarray | None = None
    prior_b: PriorB = PriorB.LAPLACE
    H: int | None = None  # only used to expand a default c_a

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise NonPositiveParam("sigma2", f"must be > 0, got {self.sigma2!r}")
        if not self.k > 0:
            raise NonPositiveParam("k", f"must be > 0, got {self.k!r}")
        c_a = self.c_a
        if c_a is None:
            if self.H is None:
                raise ValidationError("c_a", "give c_a or H to build the identity default")
            c_a = np.ones(self.H)
        c_a = np.atleast_1d(np.asarray(c_a, dtype=float))
        if np.any(~(c_a > 0)):
            raise NonPositiveParam("c_a", "all entries must be > 0")
        object.__setattr__(self, "c_a", _frozen_array(c_a))
        object.__setattr__(self, "H", c_a.size)
        object.__setattr__(self, "prior_b", PriorB(self.prior_b))

    def __eq__(self, other):
        if not isinstance(other, Hyperparams):
            return NotImplemented
        return (
            self.sigma2 == other.sigma2
            and self.k == other.k
            and self.prior_b == other.prior_b
            and np.array_equal(self.c_a, other.c_a)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FactorState:
    """Posterior means and diagonal covariances of both factors.

    Shapes: ``a_mean`` (L, H), ``b_mean`` (H, M), ``sigma_a`` (L, H) holding
    the diagonal of each row covariance, ``sigma_b`` (M, H) holding the
    diagonal of each column covariance.
    """

    a_mean: np.ndarray
    b_mean: np.ndarray
    sigma_a: np.ndarray
    sigma_b: np.ndarray

    def __post_init__(self):
        for name in ("a_mean", "b_mean", "sigma_a", "sigma_b"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        L, H = self.a_mean.shape
        H2, M = self.b_mean.shape
        if H2 != H:
            raise ShapeMismatch("b_mean", f"expected {H} rows, got {H2}")
        if self.sigma_a.shape != (L, H):
            raise ShapeMismatch("sigma_a", f"expected {(L, H)}, got {self.sigma_a.shape}")
        if self.sigma_b.shape != (M, H):
            raise ShapeMismatch("sigma_b", f"expected {(M, H)}, got {self.sigma_b.shape}")

    @property
    def dims(self) -> Dims:
        L, H = self.a_mean.shape
        return Dims(L, self.b_mean.shape[1], H)

    def product(self) -> np.ndarray:
        return self.a_mean @ self.b_mean

    def is_finite(self) -> bool:
        return all(
            np.all(np.isfinite(x)) for x in (self.a_mean, self.b_mean, self.sigma_a, self.sigma_b)
        )

    def __eq__(self, other):
        if not isinstance(other, FactorState):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("a_mean", "b_mean", "sigma_a", "sigma_b")
        )

    __hash__ = None


@dataclass(frozen=True)
class SolveOptions:
    delta: float = 1e-19
    max_iters: int = 10000
    convergence_mode: ConvergenceMode = ConvergenceMode.SUCCESSIVE_ITERATES
    zb_floor: float = 1e-12
    # Jacobi pairs A and B from two decoupled chains; see Schedule docs.
    update_schedule: Schedule = Schedule.GAUSS_SEIDEL
    seed: int = 0

    def __post_init__(self):
        if not self.delta > 0:
            raise NonPositiveParam("delta", f"must be > 0, got {self.delta!r}")
        # max_iters == 0 is accepted: solve() then returns the initial state.
        if int(self.max_iters) != self.max_iters or self.max_iters < 0:
            raise NonPositiveParam("max_iters", f"must be a non-negative integer, got {self.max_iters!r}")
        if not 0 < self.zb_floor < 1:
            raise NonPositiveParam("zb_floor", f"must lie in (0, 1), got {self.zb_floor!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed", "must be a 64-bit unsigned integer")
        object.__setattr__(self, "convergence_mode", ConvergenceMode(self.convergence_mode))
        object.__setattr__(self, "update_schedule", Schedule(self.update_schedule))


@dataclass
class SolveReport:
    iters: int = 0
    converged: bool = False
    final_zb: float = 1.0
    zb_clamped_count: int = 0
    negative_variance_count: int = 0
    jitter_count: int = 0
    distance_trace: list[float] = field(default_factory=list)


def validate(dims: Dims, obs: Observation, hp: Hyperparams) -> None:
    """Check that ``obs`` and ``hp`` are consistent with ``dims``.

    Raises
    ------
    ShapeMismatch, EmptyMask, NonPositiveParam
    """
    # Dims/Hyperparams check their own invariants; re-run in case they were
    # built by object.__new__ or similar.
    Dims(dims.L, dims.M, dims.H)
    if obs.shape != (dims.L, dims.M):
        raise ShapeMismatch("V", f"shape {obs.shape} != (L, M) = {(dims.L, dims.M)}")
    if not obs.mask.any():
        raise EmptyMask("mask", "no observed entries")
    if not hp.sigma2 > 0:
        raise NonPositiveParam("sigma2", f"must be > 0, got {hp.sigma2!r}")
    if not hp.k > 0:
        raise NonPositiveParam("k", f"must be > 0, got {hp.k!r}")
    if hp.c_a.shape != (dims.H,):
        raise ShapeMismatch("c_a", f"length {hp.c_a.size} != H={dims.H}")
    if np.any(~(hp.c_a > 0)):
        raise NonPositiveParam("c_a", "all entries must be > 0")


# -- file formats -----------------------------------------------------------

def write_matrix(path, x) -> None:
    """Write a matrix as plain CSV, one row per line, 17 significant digits."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    with open(path, "w") as fh:
        for row in x:
            fh.write(",".join(format_float(v) for v in row))
            fh.write("\n")


def read_matrix(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    if not rows:
        raise ValidationError(str(path), "empty matrix file")
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise ShapeMismatch(str(path), "ragged rows")
    return np.array(rows, dtype=float)


def format_float(v: float) -> str:
    return "%.17g" % v


@dataclass(frozen=True, eq=False)
class Bundle:
    dims: Dims
    obs: Observation
    sigma2: float


def save_bundle(directory, dims: Dims, obs: Observation, sigma2: float) -> Path:
    """Write ``V.csv``, ``mask.csv`` and ``meta.txt`` into ``directory``."""
    d = Path(directory)
    os.makedirs(d, exist_ok=True)
    write_matrix(d / "V.csv", obs.V)
    write_matrix(d / "mask.csv", obs.mask)
    with open(d / "meta.txt", "w") as fh:
        fh.write(f"L={dims.L}\nM={dims.M}\nH={dims.H}\nsigma2={format_float(sigma2)}\n")
    return d


def load_bundle(directory) -> Bundle:
    d = Path(directory)
    meta = {}
    with open(d / "meta.txt") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValidationError("meta.txt", f"malformed line {line!r}")
            meta[key.strip()] = value.strip()
    try:
        dims = Dims(int(meta["L"]), int(meta["M"]), int(meta["H"]))
        sigma2 = float(meta["sigma2"])
    except KeyError as exc:
        raise ValidationError("meta.txt", f"missing key {exc.args[0]}") from None
    obs = Observation(read_matrix(d / "V.csv"), read_matrix(d / "mask.csv"))
    if obs.shape != (dims.L, dims.M):
        raise ShapeMismatch("V", f"shape {obs.shape} != meta (L, M) = {(dims.L, dims.M)}")
    return Bundle(dims, obs, sigma2)
