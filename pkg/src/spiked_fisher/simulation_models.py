from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .sampling import DEFAULT_BOTTOM_SPIKES, DEFAULT_RHO, DEFAULT_TOP_SPIKES, EntryDistribution
from .stieltjes import EXCLUSION_RATIO

DEFAULT_REPS = 500
DEFAULT_BINS = 40
EXTREME_COUNT = 4


@dataclass(frozen=True)
class SpikeTarget:
    """A labeled group of 1-based sample ranks and, optionally, the spike it should recover."""

    label: str
    ranks: tuple[int, ...]
    value: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))
        if not self.label:
            raise ValueError("spike target needs a label")
        if not self.ranks:
            raise ValueError(f"spike target {self.label!r} needs at least one rank")


def group_targets(
    p: int,
    top: Sequence[float] = DEFAULT_TOP_SPIKES,
    bottom: Sequence[float] = DEFAULT_BOTTOM_SPIKES,
) -> tuple[SpikeTarget, ...]:
    """
    One target per run of equal spike values: leading spikes take ranks from 1,
    trailing ones end at p. Labels are a1, a2, ... in rank order.
    """

    runs: list[tuple[float, list[int]]] = []

    def collect(values: Sequence[float], first_rank: int) -> None:
        for offset, value in enumerate(values):
            rank = first_rank + offset
            if runs and runs[-1][0] == value and runs[-1][1][-1] == rank - 1:
                runs[-1][1].append(rank)
            else:
                runs.append((float(value), [rank]))

    collect(top, 1)
    collect(bottom, p - len(bottom) + 1)
    return tuple(SpikeTarget(f"a{i}", tuple(ranks), value) for i, (value, ranks) in enumerate(runs, start=1))


@dataclass(frozen=True)
class SimulationConfig:
    """Full description of one Monte Carlo experiment."""

    p: int
    n1: int
    n2: int
    dist: EntryDistribution = EntryDistribution.STANDARD_NORMAL
    reps: int = DEFAULT_REPS
    master_seed: int = 0
    spikes: tuple[SpikeTarget, ...] = ()
    exclusion_ratio: float = EXCLUSION_RATIO
    out_dir: Path | None = None
    rho: float = DEFAULT_RHO
    top_spikes: tuple[float, ...] = DEFAULT_TOP_SPIKES
    bottom_spikes: tuple[float, ...] = DEFAULT_BOTTOM_SPIKES
    spike_growth: float = 0.0
    workers: int = 1
    bins: int = DEFAULT_BINS

    def __post_init__(self) -> None:
        object.__setattr__(self, "dist", EntryDistribution(self.dist))
        object.__setattr__(self, "top_spikes", tuple(float(v) for v in self.top_spikes))
        object.__setattr__(self, "bottom_spikes", tuple(float(v) for v in self.bottom_spikes))
        if self.out_dir is not None:
            object.__setattr__(self, "out_dir", Path(self.out_dir))
        if not self.spikes:
            object.__setattr__(self, "spikes", self._default_targets())

        if self.p < 1:
            raise ValueError(f"p must be positive, got {self.p}")
        if self.n1 < 1:
            raise ValueError(f"n1 must be positive, got {self.n1}")
        if self.n2 <= self.p:
            raise ValueError(f"n2={self.n2} must exceed p={self.p}")
        if self.reps < 1:
            raise ValueError(f"reps must be at least 1, got {self.reps}")
        if self.workers < 1:
            raise ValueError(f"workers must be at least 1, got {self.workers}")
        if self.bins < 1:
            raise ValueError(f"bins must be at least 1, got {self.bins}")
        if not (0 <= self.exclusion_ratio < 1):
            raise ValueError(f"exclusion_ratio must lie in [0, 1), got {self.exclusion_ratio!r}")
        labels = [t.label for t in self.spikes]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate spike labels in {labels}")
        for target in self.spikes:
            if any(not 1 <= r <= self.p for r in target.ranks):
                raise ValueError(f"spike {target.label!r}: ranks {list(target.ranks)} outside [1, {self.p}]")

    @classmethod
    def reference_design(cls, p: int, dist: EntryDistribution | str = EntryDistribution.STANDARD_NORMAL, **kwargs) -> "SimulationConfig":
        """n1 = 2p, n2 = 4p with the default spikes and targets."""
        return cls(p=p, n1=2 * p, n2=4 * p, dist=EntryDistribution(dist), **kwargs)

    @property
    def growth_factor(self) -> float:
        return (self.p / 100.0) ** self.spike_growth

    @property
    def scaled_top_spikes(self) -> tuple[float, ...]:
        return tuple(v * self.growth_factor for v in self.top_spikes)

    def _default_targets(self) -> tuple[SpikeTarget, ...]:
        return group_targets(self.p, self.scaled_top_spikes, self.bottom_spikes)

    def echo(self) -> dict:
        """Plain mapping of the config using the config-file key names."""
        return {
            "p": self.p,
            "n1": self.n1,
            "n2": self.n2,
            "dist": self.dist.value,
            "reps": self.reps,
            "seed": self.master_seed,
            "exclusion_ratio": self.exclusion_ratio,
            "rho": self.rho,
            "top_spikes": list(self.top_spikes),
            "bottom_spikes": list(self.bottom_spikes),
            "spike_growth": self.spike_growth,
            "workers": self.workers,
            "bins": self.bins,
            "out_dir": None if self.out_dir is None else str(self.out_dir),
            "spikes": [
                {"label": t.label, "ranks": list(t.ranks), **({} if t.value is None else {"value": t.value})}
                for t in self.spikes
            ],
        }


@dataclass(frozen=True)
class ReplicationRecord:
    """Outputs of one replication; NaN estimates carry their reason in `errors`."""

    rep: int
    stream: int
    estimates: dict[str, float]
    largest: tuple[float, ...] = ()
    smallest: tuple[float, ...] = ()
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return not any(math.isfinite(v) for v in self.estimates.values())


@dataclass(frozen=True)
class SpikeSummary:
    """Mean, standard deviation and histogram of one spike's pooled estimates."""

    label: str
    true_value: float | None
    mean: float
    sd: float
    n_ok: int
    n_failed: int
    bin_edges: tuple[float, ...] = ()
    counts: tuple[int, ...] = ()

    @property
    def relative_error(self) -> float:
        if self.true_value is None or not math.isfinite(self.mean) or self.true_value == 0:
            return math.nan
        return (self.mean - self.true_value) / self.true_value

    @property
    def flagged(self) -> bool:
        return self.n_ok == 0


@dataclass(frozen=True)
class AggregateReport:
    """Per-spike summaries plus the rep-sorted records they were folded from."""

    summaries: tuple[SpikeSummary, ...]
    records: tuple[ReplicationRecord, ...]
    config: SimulationConfig

    @property
    def reps(self) -> int:
        return len(self.records)

    @property
    def failed_reps(self) -> int:
        return sum(1 for r in self.records if r.failed)

    def summary(self, label: str) -> SpikeSummary:
        for item in self.summaries:
            if item.label == label:
                return item
        raise KeyError(label)
