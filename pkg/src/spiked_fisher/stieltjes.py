from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize

from .spectral_models import (
    AspectRatios,
    CompanionRoot,
    EigenSample,
    SpectralMeasure,
    SpikeEstimate,
    StieltjesPair,
)
from .spectrum import AdmissibleInterval, admissible_intervals, lsd_support, psi, psi_extended

logger = logging.getLogger(__name__)

EXCLUSION_RATIO = 0.2
ROOT_XTOL = 1e-15
ROOT_RTOL = 1e-13
ZERO_DENOM_TOL = 1e-14


class StieltjesError(Exception):
    """Base class for companion-transform and estimator failures."""


class NotOutsideSupport(StieltjesError):
    """Raised when a population transform is requested inside the LSD support."""


class NoRoot(StieltjesError):
    """Raised when no admissible interval maps onto the requested point."""


class AllExcluded(StieltjesError):
    """Raised when the exclusion set covers every sample eigenvalue."""


class ZeroEigenvalue(StieltjesError):
    """Raised when the evaluation eigenvalue is zero."""


class ZeroDenominator(StieltjesError):
    """Raised when the estimated companion transform vanishes."""


def solve_m0(x: float, H: SpectralMeasure, c: AspectRatios) -> CompanionRoot:
    """
    Invert psi outside the support: find u on an admissible interval with
    psi(u) = x and return m0 = -u.

    psi is strictly increasing on each admissible interval, so the root is unique there.
    """

    x = float(x)
    intervals = admissible_intervals(H, c)
    for interval in intervals:
        if interval.maps_to(x):
            u = _invert_on(interval, x, H, c)
            logger.debug("solve_m0: x=%g -> u=%.15g", x, u)
            return CompanionRoot(m0=-u, x=x)

    if lsd_support(H, c).contains(x):
        raise NotOutsideSupport(f"x={x!r} lies inside the support of the Fisher LSD")
    raise NoRoot(f"no admissible interval of psi maps onto x={x!r}")


def _invert_on(interval: AdmissibleInterval, x: float, H: SpectralMeasure, c: AspectRatios) -> float:
    def residual(u: float) -> float:
        return psi_extended(u, H, c) - x

    lo, hi = interval.u_lo, interval.u_hi
    if math.isinf(hi):
        hi = max(abs(lo), 1.0) * 2.0
        while residual(hi) < 0:
            hi *= 2.0
    if math.isinf(lo):
        lo = -max(abs(hi), 1.0) * 2.0
        while residual(lo) > 0:
            lo *= 2.0
    return float(optimize.bisect(residual, lo, hi, xtol=ROOT_XTOL, rtol=ROOT_RTOL, maxiter=2000))


def population_m_pair(x: float, H: SpectralMeasure, c: AspectRatios) -> StieltjesPair:
    """
    Population m and companion m_underline at a real point outside the support.

    m_underline = 1/m0 - c2 int dH/(t + m0); m follows from
    m_underline = -(1 - c1)/x + c1 m. At c1 = 0 the relation is singular and m
    takes its continuous limit -m0 int dH/(t + m0) / x.
    """

    root = solve_m0(x, H, c)
    m0 = root.m0
    m_underline = 1.0 / m0 - c.c2 * float(np.sum(H.w / (H.t + m0)))
    if c.c1 > 0:
        m = (m_underline + (1.0 - c.c1) / x) / c.c1
    else:
        m = -m0 * float(np.sum(H.w / (H.t + m0))) / x
    return StieltjesPair(m=m, m_underline=m_underline, x=x)


def population_stieltjes_at_spike(alpha: float, H: SpectralMeasure, c: AspectRatios) -> StieltjesPair:
    """
    Closed forms at x = psi(alpha): m_underline = -h^2 / (c1 alpha + c2 x) and
    m = alpha int dH/(t - alpha) / x. Used to cross-check population_m_pair.
    """

    x = psi(alpha, H, c)
    m_underline = -c.h2 / (c.c1 * alpha + c.c2 * x)
    m = alpha * H.stieltjes(alpha) / x
    return StieltjesPair(m=m, m_underline=m_underline, x=x)


@dataclass(frozen=True)
class EmpiricalTransform:
    """Plug-in transforms at one sample eigenvalue and the exclusion set used."""

    rank: int
    eigenvalue: float
    m_hat: float
    m_underline_hat: float
    excluded: frozenset[int]
    c1_tilde: float
    c2_tilde: float


def _empirical(sample: EigenSample, rank: int, exclusion_ratio: float) -> EmpiricalTransform:
    lam = sample.eigenvalue(rank)
    if lam == 0:
        raise ZeroEigenvalue(f"eigenvalue at rank {rank} is zero")

    values = sample.array
    excluded = np.abs(values - lam) / abs(lam) <= exclusion_ratio
    excluded[rank - 1] = True
    kept = values[~excluded]
    if kept.size == 0:
        raise AllExcluded(
            f"every eigenvalue lies within {exclusion_ratio:g} relative distance of rank {rank} ({lam:g})"
        )

    m_hat = float(np.mean(1.0 / (kept - lam)))
    c1_tilde = kept.size / sample.n1
    c2_tilde = kept.size / sample.n2
    m_underline_hat = -(1.0 - c1_tilde) / lam + c1_tilde * m_hat
    return EmpiricalTransform(
        rank=rank,
        eigenvalue=lam,
        m_hat=m_hat,
        m_underline_hat=m_underline_hat,
        excluded=frozenset((np.flatnonzero(excluded) + 1).tolist()),
        c1_tilde=c1_tilde,
        c2_tilde=c2_tilde,
    )


def empirical_m_hat(
    sample: EigenSample,
    rank: int,
    exclusion_ratio: float = EXCLUSION_RATIO,
) -> tuple[float, frozenset[int]]:
    """
    Plug-in estimate of m at the sample eigenvalue of 1-based `rank`.

    Eigenvalues within `exclusion_ratio` relative distance (the set J0, which
    always holds `rank` itself) are left out of the average of 1/(lambda_i - lambda).
    """

    est = _empirical(sample, rank, exclusion_ratio)
    return est.m_hat, est.excluded


def empirical_m_underline_hat(
    sample: EigenSample,
    rank: int,
    exclusion_ratio: float = EXCLUSION_RATIO,
) -> float:
    """-(1 - c1~)/lambda + c1~ m_hat, evaluated at the same eigenvalue as m_hat."""
    return _empirical(sample, rank, exclusion_ratio).m_underline_hat


def estimate_spike_at(
    sample: EigenSample,
    rank: int,
    exclusion_ratio: float = EXCLUSION_RATIO,
) -> float:
    """Population spike estimate -(1 + c2~ lambda m_hat) / m_underline_hat at one rank."""
    est = _empirical(sample, rank, exclusion_ratio)
    if abs(est.m_underline_hat) < ZERO_DENOM_TOL:
        raise ZeroDenominator(f"estimated companion transform vanishes at rank {rank}")
    return -(1.0 + est.c2_tilde * est.eigenvalue * est.m_hat) / est.m_underline_hat


def estimate_spike_group(
    sample: EigenSample,
    ranks: Sequence[int],
    label: str = "",
    exclusion_ratio: float = EXCLUSION_RATIO,
) -> SpikeEstimate:
    """
    Estimate at each rank and pool by the unweighted mean.

    Failing ranks are recorded in `errors`, kept as NaN in `per_rank` and left
    out of the mean; the pooled value is NaN when every rank fails.
    """

    if not ranks:
        raise ValueError(f"spike group {label!r} has no ranks")

    per_rank: list[float] = []
    errors: dict[int, str] = {}
    for rank in ranks:
        try:
            value = estimate_spike_at(sample, rank, exclusion_ratio)
        except (StieltjesError, IndexError) as exc:
            logger.warning("spike %s: rank %d excluded: %s", label or "?", rank, exc)
            errors[rank] = str(exc)
            value = math.nan
        per_rank.append(value)

    good = [v for v in per_rank if math.isfinite(v)]
    pooled = float(np.mean(good)) if good else math.nan
    return SpikeEstimate(label=label, ranks=tuple(ranks), per_rank=tuple(per_rank), pooled=pooled, errors=errors)


def estimate_spikes(
    sample: EigenSample,
    groups: Mapping[str, Sequence[int]],
    exclusion_ratio: float = EXCLUSION_RATIO,
) -> dict[str, SpikeEstimate]:
    """estimate_spike_group for each labeled rank group, in mapping order."""
    return {
        label: estimate_spike_group(sample, ranks, label=label, exclusion_ratio=exclusion_ratio)
        for label, ranks in groups.items()
    }
