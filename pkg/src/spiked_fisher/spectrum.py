from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize

from .spectral_models import (
    AspectRatios,
    SpectralMeasure,
    Spike,
    SpikeClassification,
    SpikedPopulation,
    SpikeKind,
    SupportSet,
)

logger = logging.getLogger(__name__)

ATOM_TOL = 1e-12  # relative distance below which alpha is treated as an atom
DENOM_TOL = 1e-12
SCAN_POINTS = 512
EDGE_POINTS = 48  # extra scan points clustered geometrically toward each finite gap end
ATOM_GUARD = 1e-8  # evaluation points stay this far (relative) from atoms
BISECT_RTOL = 1e-10
TAIL_DECADES = 6  # unbounded gaps are scanned out to atom * 10**TAIL_DECADES


class SpectrumError(Exception):
    """Base class for failures of the population spectral maps."""


class AtomCollision(SpectrumError):
    """Raised when alpha coincides with (or sits within delta of) an atom of H."""


class DegenerateDenominator(SpectrumError):
    """Raised when 1 + c2 * int alpha/(t - alpha) dH vanishes."""


class NoCriticalPoint(SpectrumError):
    """Raised when a sign change of psi' is seen but cannot be bracketed for bisection."""


@dataclass(frozen=True)
class AdmissibleInterval:
    """
    Sub-interval (u_lo, u_hi) of a gap of H on which conditions (i)-(iii) hold,
    with its psi-image (x_lo, x_hi). Ends may be infinite.
    """

    u_lo: float
    u_hi: float
    x_lo: float
    x_hi: float

    def maps_to(self, x: float) -> bool:
        return self.x_lo < x < self.x_hi


@dataclass(frozen=True)
class _Terms:
    """Atom sums entering psi and its derivative, evaluated on an array of points."""

    u: np.ndarray
    A: np.ndarray
    dA: np.ndarray
    B: np.ndarray
    dB: np.ndarray
    cond: np.ndarray


def _terms(u: np.ndarray, H: SpectralMeasure, c: AspectRatios) -> _Terms:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    inv = 1.0 / (H.t[None, :] - u[:, None])
    t_inv = H.t[None, :] * inv
    I0 = inv @ H.w
    J1 = t_inv @ H.w
    Jt2 = (t_inv * inv) @ H.w
    J2 = (inv * inv) @ H.w
    return _Terms(
        u=u,
        A=1.0 - c.c1 * J1,
        dA=-c.c1 * Jt2,
        B=1.0 + c.c2 * u * I0,
        dB=c.c2 * Jt2,
        cond=1.0 - c.c2 * u * u * J2,
    )


def _psi_values(terms: _Terms) -> np.ndarray:
    return terms.u * terms.A / terms.B


def _psi_prime_values(terms: _Terms) -> np.ndarray:
    num = (terms.A + terms.u * terms.dA) * terms.B - terms.u * terms.A * terms.dB
    return num / (terms.B * terms.B)


def _check_alpha(alpha: float, H: SpectralMeasure) -> float:
    alpha = float(alpha)
    if not math.isfinite(alpha) or alpha <= 0:
        raise ValueError(f"alpha must be a positive finite number, got {alpha!r}")
    nearest = int(np.argmin(np.abs(H.t - alpha)))
    atom = H.locations[nearest]
    if abs(alpha - atom) <= ATOM_TOL * max(1.0, atom):
        raise AtomCollision(f"alpha={alpha!r} coincides with atom {atom!r} of H")
    return alpha


def _checked_terms(alpha: float, H: SpectralMeasure, c: AspectRatios) -> _Terms:
    terms = _terms(np.array([_check_alpha(alpha, H)]), H, c)
    if abs(terms.B[0]) < DENOM_TOL:
        raise DegenerateDenominator(f"psi denominator vanishes at alpha={alpha!r} (B={terms.B[0]:.3e})")
    return terms


def psi(alpha: float, H: SpectralMeasure, c: AspectRatios) -> float:
    """
    Phase-transition map alpha -> alpha (1 - c1 int t/(t-alpha) dH) / (1 + c2 int alpha/(t-alpha) dH).

    For a distant spike this is the almost-sure limit of its sample eigenvalues.
    """

    return float(_psi_values(_checked_terms(alpha, H, c))[0])


def psi_extended(u: float, H: SpectralMeasure, c: AspectRatios) -> float:
    """psi on the whole real line minus the atoms; negative u is reached when inverting with c1 > 1."""
    return float(_psi_values(_terms(np.array([float(u)]), H, c))[0])


def psi_prime(alpha: float, H: SpectralMeasure, c: AspectRatios) -> float:
    """Analytic derivative of psi."""
    return float(_psi_prime_values(_checked_terms(alpha, H, c))[0])


def condition_ii(alpha: float, H: SpectralMeasure, c: AspectRatios) -> float:
    """1 - c2 int alpha^2/(t-alpha)^2 dH; the support criterion needs it positive."""
    alpha = _check_alpha(alpha, H)
    return float(_terms(np.array([alpha]), H, c).cond[0])


def is_distant_spike(alpha: float, H: SpectralMeasure, c: AspectRatios, delta: float | None = None) -> bool:
    """True when alpha is delta-separated from H and satisfies conditions (ii) and (iii)."""
    delta = H.default_delta() if delta is None else delta
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta!r}")
    if not math.isfinite(alpha) or alpha <= 0 or H.distance(alpha) <= delta:
        return False
    try:
        return condition_ii(alpha, H, c) > 0 and psi_prime(alpha, H, c) > 0
    except SpectrumError:
        return False


def phase_transition_limit(
    spike: Spike | float,
    H: SpectralMeasure,
    c: AspectRatios,
    delta: float | None = None,
) -> SpikeClassification:
    """
    Classify a spike and return the limit of its sample eigenvalues.

    Distant spikes map through psi. Close spikes map to psi at the nearest zero
    of psi' reached from alpha through a region where psi' < 0 without leaving
    the gap of H. When no such zero exists the kind is Undefined and the limit NaN.
    """

    alpha = spike.alpha if isinstance(spike, Spike) else float(spike)
    delta = H.default_delta() if delta is None else delta
    _check_alpha(alpha, H)
    if H.distance(alpha) <= delta:
        raise AtomCollision(f"alpha={alpha!r} lies within delta={delta:g} of the support of H")

    cond = condition_ii(alpha, H, c)
    slope = psi_prime(alpha, H, c)

    if slope > 0:
        if cond > 0:
            return SpikeClassification(alpha, SpikeKind.DISTANT, psi(alpha, H, c), None, slope, cond)
        return SpikeClassification(alpha, SpikeKind.UNDEFINED, math.nan, None, slope, cond)

    if slope == 0:
        return SpikeClassification(alpha, SpikeKind.CLOSE_BELOW, psi(alpha, H, c), alpha, slope, cond)

    lo, hi = _gap_containing(alpha, H)
    above = _first_critical_point(alpha, hi, H, c)
    below = _first_critical_point(alpha, max(lo, 0.0), H, c)
    candidates = [cp for cp in (above, below) if cp is not None]
    if not candidates:
        logger.debug("no zero of psi' around alpha=%g in gap (%g, %g)", alpha, lo, hi)
        return SpikeClassification(alpha, SpikeKind.UNDEFINED, math.nan, None, slope, cond)

    critical = min(candidates, key=lambda cp: abs(cp - alpha))
    kind = SpikeKind.CLOSE_BELOW if critical > alpha else SpikeKind.CLOSE_ABOVE
    limit = float(_psi_values(_terms(np.array([critical]), H, c))[0])
    return SpikeClassification(alpha, kind, limit, critical, slope, cond)


def population_limits(
    population: SpikedPopulation,
    c: AspectRatios,
) -> list[SpikeClassification]:
    """phase_transition_limit for every spike of a population, in spike order."""
    return [phase_transition_limit(spike, population.bulk, c, population.delta) for spike in population.spikes]


def admissible_intervals(H: SpectralMeasure, c: AspectRatios) -> list[AdmissibleInterval]:
    """
    All maximal sub-intervals of the gaps of H on which conditions (i)-(iii)
    hold, together with their psi-images, sorted by image.
    """

    found: list[AdmissibleInterval] = []
    for lo, hi in _gaps(H):
        found.extend(_scan_gap(lo, hi, H, c))
    return sorted(found, key=lambda iv: iv.x_lo)


def lsd_support(H: SpectralMeasure, c: AspectRatios) -> SupportSet:
    """
    Support of the Fisher LSD F^{c,H}.

    The complement of the support is the psi-image of the admissible points,
    so the support is what the images leave uncovered in (0, inf).
    """

    images = [(iv.x_lo, iv.x_hi) for iv in admissible_intervals(H, c)]
    intervals: list[tuple[float, float]] = []
    cursor = 0.0
    for x_lo, x_hi in sorted(images):
        if x_hi <= 0:
            continue
        x_lo = max(x_lo, 0.0)
        if x_lo > cursor:
            intervals.append((cursor, x_lo))
        cursor = max(cursor, x_hi)

    if math.isfinite(cursor):
        raise SpectrumError(f"no admissible tail above {cursor:g}; the support would be unbounded")

    zero_mass = max(0.0, 1.0 - 1.0 / c.c1) if c.c1 > 1 else 0.0
    if not intervals:
        # Single degenerate band around the bulk when nothing separates it.
        intervals = [(H.min_atom * (1 - ATOM_GUARD), H.max_atom * (1 + ATOM_GUARD))]
    return SupportSet(tuple(intervals), zero_mass=zero_mass)


def _gaps(H: SpectralMeasure) -> list[tuple[float, float]]:
    edges = [0.0, *H.locations]
    gaps = [(-math.inf, 0.0)]
    gaps.extend(zip(edges, edges[1:]))
    gaps.append((H.max_atom, math.inf))
    return gaps


def _gap_containing(alpha: float, H: SpectralMeasure) -> tuple[float, float]:
    for lo, hi in _gaps(H):
        if lo < alpha < hi:
            return lo, hi
    raise AtomCollision(f"alpha={alpha!r} is not inside a gap of H")


def _guard(end: float, other: float) -> float:
    """Closest admissible offset from a gap end; zero is not an atom but is excluded too."""
    scale = abs(end) if end != 0 else abs(other)
    return ATOM_GUARD * scale


def _scan_points(lo: float, hi: float) -> np.ndarray:
    """Scan grid strictly inside (lo, hi), dense near finite ends."""
    if math.isinf(lo) and math.isinf(hi):  # pragma: no cover - gaps always have a finite end
        raise ValueError("cannot scan the whole real line")
    if math.isinf(hi):
        base = max(abs(lo), 1.0)
        offsets = base * np.logspace(-8, TAIL_DECADES, SCAN_POINTS)
        return lo + offsets
    if math.isinf(lo):
        base = max(abs(hi), 1.0)
        offsets = base * np.logspace(-8, TAIL_DECADES, SCAN_POINTS)
        return np.sort(hi - offsets)

    width = hi - lo
    g_lo, g_hi = _guard(lo, hi), _guard(hi, lo)
    edge = width * np.logspace(-9, -2, EDGE_POINTS)
    points = np.concatenate([np.linspace(lo, hi, SCAN_POINTS + 2)[1:-1], lo + edge, hi - edge, [lo + g_lo, hi - g_hi]])
    points = points[(points >= lo + g_lo) & (points <= hi - g_hi)]
    return np.unique(points)


def _bisect(func: Callable[[float], float], a: float, b: float) -> float:
    xtol = BISECT_RTOL * max(1.0, abs(a), abs(b))
    try:
        return float(optimize.bisect(func, a, b, xtol=xtol, maxiter=400))
    except (ValueError, RuntimeError) as exc:
        raise NoCriticalPoint(f"bisection on ({a!r}, {b!r}) failed: {exc}") from exc


def _scalar(fn: Callable[[_Terms], np.ndarray], H: SpectralMeasure, c: AspectRatios) -> Callable[[float], float]:
    def evaluate(u: float) -> float:
        return float(fn(_terms(np.array([u]), H, c))[0])

    return evaluate


def _cond_values(terms: _Terms) -> np.ndarray:
    return terms.cond


def _scan_gap(lo: float, hi: float, H: SpectralMeasure, c: AspectRatios) -> list[AdmissibleInterval]:
    u = _scan_points(lo, hi)
    terms = _terms(u, H, c)
    cond = terms.cond
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(cond > 0, _psi_prime_values(terms), np.nan)
    ok = (cond > 0) & (slope > 0)

    cond_fn = _scalar(_cond_values, H, c)
    slope_fn = _scalar(_psi_prime_values, H, c)
    psi_fn = _scalar(_psi_values, H, c)

    def boundary(i: int) -> float:
        # Crossing between u[i] and u[i + 1]: whichever condition flipped.
        if (cond[i] > 0) != (cond[i + 1] > 0):
            return _bisect(cond_fn, u[i], u[i + 1])
        return _bisect(slope_fn, u[i], u[i + 1])

    found: list[AdmissibleInterval] = []
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return found
    runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    for run in runs:
        first, last = int(run[0]), int(run[-1])
        if first == 0:
            u_lo = lo if lo == 0 or math.isinf(lo) else float(u[0])
        else:
            u_lo = boundary(first - 1)
        if last == len(u) - 1:
            u_hi = hi if hi == 0 or math.isinf(hi) else float(u[-1])
        else:
            u_hi = boundary(last)

        x_lo = _edge_image(u_lo, psi_fn)
        x_hi = _edge_image(u_hi, psi_fn)
        logger.debug("admissible (%g, %g) -> (%g, %g)", u_lo, u_hi, x_lo, x_hi)
        found.append(AdmissibleInterval(u_lo, u_hi, x_lo, x_hi))
    return found


def _edge_image(u: float, psi_fn: Callable[[float], float]) -> float:
    if math.isinf(u):
        return u
    if u == 0:
        return 0.0
    return psi_fn(u)


def _first_critical_point(alpha: float, bound: float, H: SpectralMeasure, c: AspectRatios) -> float | None:
    """First zero of psi' met when walking from alpha toward `bound` (a gap end)."""
    upward = bound > alpha
    if math.isinf(bound):
        path = alpha + alpha * np.logspace(-8, TAIL_DECADES, SCAN_POINTS)
    else:
        g = _guard(bound, alpha)
        end = bound - g if upward else bound + g
        if (end - alpha) * (bound - alpha) <= 0:
            return None
        span = end - alpha
        path = alpha + span * np.concatenate([np.linspace(0, 1, SCAN_POINTS + 1)[1:], 1 - np.logspace(-9, -2, EDGE_POINTS)])
        path = np.unique(path)
        if not upward:
            path = path[::-1]

    terms = _terms(path, H, c)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = _psi_prime_values(terms)
    slope[np.abs(terms.B) < DENOM_TOL] = np.nan

    slope_fn = _scalar(_psi_prime_values, H, c)
    prev = alpha
    for point, value in zip(path, slope):
        if not math.isfinite(value):
            continue
        if value >= 0:
            a, b = sorted((prev, float(point)))
            return _bisect(slope_fn, a, b)
        prev = float(point)
    return None

