from __future__ import annotations

import enum
import functools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg

from .spectral_models import EigenSample

logger = logging.getLogger(__name__)

DEFAULT_TOP_SPIKES = (10.0, 7.5, 7.5)
DEFAULT_BOTTOM_SPIKES = (0.2, 0.2, 0.1)
DEFAULT_RHO = 0.5
S2_MIN_EIGENVALUE = 1e-12


class SamplingError(Exception):
    """Base class for population construction and data generation failures."""


class BadDimension(SamplingError):
    """Raised when p cannot host the requested population layout."""


class SingularS2(SamplingError):
    """Raised when the second sample covariance matrix is numerically singular."""


class EntryDistribution(str, enum.Enum):
    """Standardized entry laws: mean 0, variance 1."""

    STANDARD_NORMAL = "normal"
    STANDARDIZED_CHI_SQUARE_2 = "chisq"
    UNIFORM_SQRT3 = "uniform"


@dataclass(frozen=True)
class SeededRng:
    """Master seed plus stream id; each stream is an independent, order-free generator."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,)))


@dataclass(frozen=True)
class PopulationSpec:
    """Sigma1 = U0 diag(lambda) U0^T with U0 the Toeplitz(rho) eigenvectors; Sigma2 = I."""

    p: int
    rho: float
    lambda_diagonal: tuple[float, ...]

    def __post_init__(self) -> None:
        diag = tuple(float(v) for v in self.lambda_diagonal)
        object.__setattr__(self, "lambda_diagonal", diag)
        if len(diag) != self.p:
            raise ValueError(f"lambda_diagonal has {len(diag)} entries, expected p={self.p}")
        if not (0 <= self.rho < 1):
            raise ValueError(f"rho must lie in [0, 1), got {self.rho!r}")
        if any(v <= 0 or not math.isfinite(v) for v in diag):
            raise ValueError("lambda_diagonal entries must be positive and finite")
        if any(b > a for a, b in zip(diag, diag[1:])):
            raise ValueError("lambda_diagonal must be descending")


def build_lambda(
    p: int,
    spikes: Sequence[float] = DEFAULT_TOP_SPIKES,
    tail: Sequence[float] = DEFAULT_BOTTOM_SPIKES,
) -> list[float]:
    """
    Population diagonal: spikes, then (p - k)/2 twos and (p - k)/2 ones, then
    the tail, where k counts spikes and tail values.
    """

    k = len(spikes) + len(tail)
    bulk = p - k
    if bulk < 2 or bulk % 2:
        raise BadDimension(f"p={p} leaves {bulk} bulk entries; need an even count of at least 2")
    half = bulk // 2
    values = [*map(float, spikes), *([2.0] * half), *([1.0] * half), *map(float, tail)]
    if any(b > a for a, b in zip(values, values[1:])):
        raise BadDimension(f"spikes {list(spikes)} and tail {list(tail)} do not bracket the bulk {{2, 1}}")
    return values


def toeplitz_eigvecs(p: int, rho: float) -> np.ndarray:
    """
    Orthonormal eigenvectors of the Toeplitz matrix with first row (1, rho, ..., rho^(p-1)).

    Columns follow descending eigenvalues; each column's largest-magnitude entry is positive.
    """

    if not (0 <= rho < 1):
        raise ValueError(f"rho must lie in [0, 1), got {rho!r}")
    return _toeplitz_eigvecs(int(p), float(rho)).copy()


@functools.lru_cache(maxsize=8)
def _toeplitz_eigvecs(p: int, rho: float) -> np.ndarray:
    if rho == 0:
        # Identity Toeplitz; eigh gives no canonical basis for a repeated eigenvalue.
        vecs = np.eye(p)
    else:
        vals, vecs = np.linalg.eigh(linalg.toeplitz(rho ** np.arange(p)))
        vecs = vecs[:, np.argsort(-vals, kind="stable")]
        dominant = vecs[np.argmax(np.abs(vecs), axis=0), np.arange(p)]
        vecs = vecs * np.where(dominant < 0, -1.0, 1.0)
    vecs.setflags(write=False)
    return vecs


@functools.lru_cache(maxsize=8)
def sigma_half(spec: PopulationSpec, rotate: bool = True) -> np.ndarray:
    """Symmetric square root of Sigma1; `rotate=False` uses U0 = I."""
    sqrt_lam = np.sqrt(np.asarray(spec.lambda_diagonal))
    if not rotate:
        out = np.diag(sqrt_lam)
    else:
        u0 = _toeplitz_eigvecs(spec.p, spec.rho)
        out = (u0 * sqrt_lam) @ u0.T
    out.setflags(write=False)
    return out


def draw_matrix(
    dist: EntryDistribution,
    rows: int,
    cols: int,
    rng: SeededRng | np.random.Generator,
) -> np.ndarray:
    """rows x cols matrix of i.i.d. standardized entries."""
    if rows < 1 or cols < 1:
        raise ValueError(f"matrix shape must be positive, got ({rows}, {cols})")
    gen = rng.generator() if isinstance(rng, SeededRng) else rng
    dist = EntryDistribution(dist)
    if dist is EntryDistribution.STANDARD_NORMAL:
        return gen.standard_normal((rows, cols))
    if dist is EntryDistribution.STANDARDIZED_CHI_SQUARE_2:
        return gen.chisquare(2, (rows, cols)) / 2.0 - 1.0
    root3 = math.sqrt(3.0)
    return gen.uniform(-root3, root3, (rows, cols))


def fisher_eigenvalues(
    spec: PopulationSpec,
    dist: EntryDistribution,
    n1: int,
    n2: int,
    rng: SeededRng | np.random.Generator,
    *,
    sigma2_half: np.ndarray | None = None,
    rotate: bool = True,
    symmetric: bool = True,
) -> EigenSample:
    """
    Eigenvalues of S1 S2^{-1}, S1 = n1^-1 Sigma1^{1/2} X X^T Sigma1^{1/2},
    S2 = n2^-1 Sigma2^{1/2} Y Y^T Sigma2^{1/2}.

    The default symmetric path diagonalizes S2^{-1/2} S1 S2^{-1/2}; `symmetric=False`
    solves the nonsymmetric product directly.
    """

    p = spec.p
    if n2 <= p:
        raise BadDimension(f"n2={n2} must exceed p={p}")
    if n1 < 1:
        raise BadDimension(f"n1 must be positive, got {n1}")

    gen = rng.generator() if isinstance(rng, SeededRng) else rng
    x = draw_matrix(dist, p, n1, gen)
    y = draw_matrix(dist, p, n2, gen)

    a = sigma_half(spec, rotate) @ x
    s1 = a @ a.T / n1
    b = y if sigma2_half is None else sigma2_half @ y
    s2 = b @ b.T / n2

    w, v = np.linalg.eigh(s2)
    if w.min() < S2_MIN_EIGENVALUE:
        raise SingularS2(f"smallest eigenvalue of S2 is {w.min():.3e}")

    if symmetric:
        s2_inv_half = (v / np.sqrt(w)) @ v.T
        f = s2_inv_half @ s1 @ s2_inv_half
        values = np.linalg.eigvalsh((f + f.T) / 2.0)
    else:
        values = np.linalg.eigvals(s1 @ np.linalg.inv(s2)).real

    values = np.sort(np.maximum(values, 0.0))[::-1]
    return EigenSample(values=tuple(values.tolist()), p=p, n1=n1, n2=n2)


def dump_eigenvalues(sample: EigenSample, path: str | Path) -> Path:
    """Write one eigenvalue per line, descending, at full precision."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(out, sample.array, fmt="%.17g", encoding="utf-8")
    logger.debug("wrote %d eigenvalues to %s", sample.p, out)
    return out
