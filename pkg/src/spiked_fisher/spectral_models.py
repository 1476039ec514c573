from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


WEIGHT_SUM_TOL = 1e-12
"""Allowed deviation of the total mass of a SpectralMeasure from 1."""


@dataclass(frozen=True)
class SpectralMeasure:
    """
    Discrete probability measure H on (0, inf) given by atoms and weights.

    Continuous population laws are represented by quadrature atoms; every
    integral against H is then an exact weighted sum.
    """

    locations: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        locations = tuple(float(t) for t in self.locations)
        weights = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "locations", locations)
        object.__setattr__(self, "weights", weights)

        if not locations:
            raise ValueError("SpectralMeasure needs at least one atom")
        if len(locations) != len(weights):
            raise ValueError(f"locations ({len(locations)}) and weights ({len(weights)}) differ in length")
        if any(not math.isfinite(t) or t <= 0 for t in locations):
            raise ValueError(f"atom locations must be finite and positive, got {list(locations)}")
        if any(b <= a for a, b in zip(locations, locations[1:])):
            raise ValueError(f"atom locations must be strictly increasing, got {list(locations)}")
        if any(not (0 < w <= 1) for w in weights):
            raise ValueError(f"atom weights must lie in (0, 1], got {list(weights)}")
        if abs(math.fsum(weights) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"atom weights must sum to 1, got {math.fsum(weights)!r}")

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, float]]) -> "SpectralMeasure":
        """Build a measure from unordered (location, weight) pairs."""
        pairs = sorted((float(t), float(w)) for t, w in atoms)
        return cls(tuple(t for t, _ in pairs), tuple(w for _, w in pairs))

    @classmethod
    def point_mass(cls, location: float = 1.0) -> "SpectralMeasure":
        return cls((location,), (1.0,))

    @classmethod
    def from_spectrum(cls, values: Sequence[float], decimals: int = 12) -> "SpectralMeasure":
        """Empirical measure of a finite spectrum; values equal after rounding are merged."""
        if len(values) == 0:
            raise ValueError("cannot build a measure from an empty spectrum")
        rounded = np.round(np.asarray(values, dtype=float), decimals)
        uniq, counts = np.unique(rounded, return_counts=True)
        weights = counts / counts.sum()
        return cls(tuple(uniq.tolist()), tuple(weights.tolist()))

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.locations, self.weights))

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.locations, dtype=float)

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def min_atom(self) -> float:
        return self.locations[0]

    @property
    def max_atom(self) -> float:
        return self.locations[-1]

    def distance(self, x: float) -> float:
        """Distance from x to the nearest atom."""
        return float(np.min(np.abs(self.t - x)))

    def in_support(self, x: float, delta: float) -> bool:
        return self.distance(x) <= delta

    def default_delta(self) -> float:
        """1e-3 of the atom range; 1e-3 of the atom itself for a point mass."""
        spread = self.max_atom - self.min_atom
        return 1e-3 * (spread if spread > 0 else self.max_atom)

    def stieltjes(self, z: float) -> float:
        """Real-axis Stieltjes transform: sum of w_i / (t_i - z)."""
        return float(np.sum(self.w / (self.t - z)))


@dataclass(frozen=True)
class AspectRatios:
    """Dimension ratios c1 = p/n1 and c2 = p/n2."""

    c1: float
    c2: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "c1", float(self.c1))
        object.__setattr__(self, "c2", float(self.c2))
        if not math.isfinite(self.c1) or self.c1 < 0:
            raise ValueError(f"c1 must be a finite nonnegative number, got {self.c1!r}")
        if not (0 <= self.c2 < 1):
            raise ValueError(f"c2 must lie in [0, 1), got {self.c2!r}")

    @classmethod
    def from_dimensions(cls, p: int, n1: int, n2: int) -> "AspectRatios":
        if min(p, n1, n2) <= 0:
            raise ValueError(f"dimensions must be positive, got p={p}, n1={n1}, n2={n2}")
        return cls(p / n1, p / n2)

    @property
    def h2(self) -> float:
        """h^2 = c1 + c2 - c1 c2."""
        return self.c1 + self.c2 - self.c1 * self.c2


@dataclass(frozen=True)
class Spike:
    """Population spike alpha with multiplicity and its 1-based descending ranks."""

    alpha: float
    multiplicity: int = 1
    ranks: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", float(self.alpha))
        ranks = tuple(int(r) for r in self.ranks)
        object.__setattr__(self, "ranks", ranks)
        if not math.isfinite(self.alpha) or self.alpha <= 0:
            raise ValueError(f"spike alpha must be positive, got {self.alpha!r}")
        if self.multiplicity < 1:
            raise ValueError(f"multiplicity must be positive, got {self.multiplicity}")
        if ranks:
            if len(ranks) != self.multiplicity:
                raise ValueError(f"spike {self.alpha}: {len(ranks)} ranks for multiplicity {self.multiplicity}")
            if list(ranks) != list(range(ranks[0], ranks[0] + len(ranks))):
                raise ValueError(f"spike {self.alpha}: ranks {list(ranks)} are not contiguous")
            if ranks[0] < 1:
                raise ValueError(f"spike {self.alpha}: ranks are 1-based")


@dataclass(frozen=True)
class SpikedPopulation:
    """Bulk measure plus spikes; the full population spectrum of size p."""

    bulk: SpectralMeasure
    spikes: tuple[Spike, ...]
    p: int
    delta: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "spikes", tuple(self.spikes))
        if self.p <= 0:
            raise ValueError(f"p must be positive, got {self.p}")
        delta = self.bulk.default_delta() if self.delta is None else self.delta
        total = sum(s.multiplicity for s in self.spikes)
        if total >= self.p:
            raise ValueError(f"spike multiplicities ({total}) must be far below p={self.p}")
        seen: set[int] = set()
        for spike in self.spikes:
            if self.bulk.distance(spike.alpha) <= delta:
                raise ValueError(f"spike {spike.alpha} lies within {delta:g} of the bulk support")
            overlap = seen.intersection(spike.ranks)
            if overlap:
                raise ValueError(f"spike {spike.alpha}: ranks {sorted(overlap)} already assigned")
            if any(r > self.p for r in spike.ranks):
                raise ValueError(f"spike {spike.alpha}: ranks exceed p={self.p}")
            seen.update(spike.ranks)

    @property
    def M(self) -> int:
        return sum(s.multiplicity for s in self.spikes)

    @classmethod
    def from_spectrum(cls, values: Sequence[float], spike_values: Iterable[float]) -> "SpikedPopulation":
        """
        Split a population spectrum into bulk and spikes.

        Values are sorted descending; every occurrence of a spike value becomes
        part of that spike, and its positions give the ranks.
        """

        ordered = sorted((float(v) for v in values), reverse=True)
        wanted = sorted({float(v) for v in spike_values}, reverse=True)
        spikes: list[Spike] = []
        for value in wanted:
            ranks = tuple(i + 1 for i, v in enumerate(ordered) if v == value)
            if not ranks:
                raise ValueError(f"spike value {value} does not occur in the spectrum")
            spikes.append(Spike(alpha=value, multiplicity=len(ranks), ranks=ranks))
        spike_set = set(wanted)
        bulk = [v for v in ordered if v not in spike_set]
        return cls(bulk=SpectralMeasure.from_spectrum(bulk), spikes=tuple(spikes), p=len(ordered))

    def population_spectrum(self) -> list[float]:
        """Expand back to p descending values; bulk atoms are filled in proportion to their weights."""
        bulk_size = self.p - self.M
        counts = np.floor(self.bulk.w * bulk_size + 0.5).astype(int)
        counts[-1] += bulk_size - counts.sum()
        values = [s.alpha for s in self.spikes for _ in range(s.multiplicity)]
        for t, n in zip(self.bulk.locations, counts.tolist()):
            values.extend([t] * n)
        return sorted(values, reverse=True)


class SpikeKind(str, enum.Enum):
    DISTANT = "Distant"
    CLOSE_BELOW = "CloseBelow"
    CLOSE_ABOVE = "CloseAbove"
    UNDEFINED = "Undefined"


@dataclass(frozen=True)
class SpikeClassification:
    """
    Phase-transition verdict for one spike.

    CloseBelow means the spike sits below the critical point whose psi-value is
    the limit; CloseAbove the reverse. A spike with psi' exactly zero is its own
    critical point.
    """

    alpha: float
    kind: SpikeKind
    limit: float
    critical_point: float | None = None
    psi_prime: float = math.nan
    condition_ii: float = math.nan

    def __post_init__(self) -> None:
        if self.kind is SpikeKind.DISTANT and self.critical_point is not None:
            raise ValueError("distant spikes have no critical point")
        if self.kind is SpikeKind.CLOSE_BELOW and not (self.critical_point is not None and self.critical_point >= self.alpha):
            raise ValueError("CloseBelow requires a critical point above alpha")
        if self.kind is SpikeKind.CLOSE_ABOVE and not (self.critical_point is not None and self.critical_point <= self.alpha):
            raise ValueError("CloseAbove requires a critical point below alpha")

    @property
    def is_distant(self) -> bool:
        return self.kind is SpikeKind.DISTANT


@dataclass(frozen=True)
class SupportSet:
    """
    Support of the Fisher LSD as sorted disjoint closed intervals.

    `zero_mass` carries the atom at 0 that appears when c1 > 1.
    """

    intervals: tuple[tuple[float, float], ...]
    zero_mass: float = 0.0

    def __post_init__(self) -> None:
        intervals = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        object.__setattr__(self, "intervals", intervals)
        for lo, hi in intervals:
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo < 0 or lo >= hi:
                raise ValueError(f"bad support interval ({lo}, {hi})")
        if any(a[1] >= b[0] for a, b in zip(intervals, intervals[1:])):
            raise ValueError(f"support intervals must be sorted and disjoint, got {list(intervals)}")

    @property
    def lower(self) -> float:
        return self.intervals[0][0]

    @property
    def upper(self) -> float:
        return self.intervals[-1][1]

    def contains(self, x: float, dilation: float = 0.0) -> bool:
        return any(lo - dilation <= x <= hi + dilation for lo, hi in self.intervals)

    def gaps(self) -> list[tuple[float, float]]:
        """Interior gaps between consecutive support intervals."""
        return [(a[1], b[0]) for a, b in zip(self.intervals, self.intervals[1:])]

    def in_gap(self, x: float, shrink: float = 0.0) -> bool:
        """True when x lies in an interior gap shrunk by `shrink` on both sides."""
        return any(lo + shrink < x < hi - shrink for lo, hi in self.gaps())


@dataclass(frozen=True)
class EigenSample:
    """Descending sample eigenvalues of a Fisher matrix with its dimensions."""

    values: tuple[float, ...]
    p: int
    n1: int
    n2: int

    def __post_init__(self) -> None:
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if len(values) != self.p:
            raise ValueError(f"expected p={self.p} eigenvalues, got {len(values)}")
        if self.n1 <= 0:
            raise ValueError(f"n1 must be positive, got {self.n1}")
        if self.n2 <= self.p:
            raise ValueError(f"n2={self.n2} must exceed p={self.p} so that S2 is invertible")
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise ValueError("eigenvalues must be finite and nonnegative")
        for idx, (a, b) in enumerate(zip(values, values[1:])):
            if b > a:
                raise ValueError(
                    f"eigenvalues must be sorted in descending order (rank {idx + 2} = {b} exceeds rank {idx + 1} = {a})"
                )

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def eigenvalue(self, rank: int) -> float:
        """Eigenvalue at a 1-based descending rank."""
        if not 1 <= rank <= self.p:
            raise IndexError(f"rank {rank} outside [1, {self.p}]")
        return self.values[rank - 1]


@dataclass(frozen=True)
class StieltjesPair:
    """m and its companion m_underline evaluated together at the real point x."""

    m: float
    m_underline: float
    x: float


@dataclass(frozen=True)
class CompanionRoot:
    """m0(x) with psi(-m0) = x."""

    m0: float
    x: float


@dataclass(frozen=True)
class SpikeEstimate:
    """
    Per-rank and pooled estimates of one population spike.

    Ranks whose estimation failed are kept in `errors` and left out of the mean.
    """

    label: str
    ranks: tuple[int, ...]
    per_rank: tuple[float, ...]
    pooled: float
    errors: dict[int, str] = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return bool(self.errors)

    @property
    def ok(self) -> bool:
        return math.isfinite(self.pooled)
