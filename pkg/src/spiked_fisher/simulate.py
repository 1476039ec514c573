from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from itertools import repeat
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd
import yaml

from .report_rows import (
    HISTOGRAM_COLUMNS,
    SUMMARY_COLUMNS,
    replication_columns,
    to_histogram_rows,
    to_replication_rows,
    to_summary_rows,
)
from .sampling import PopulationSpec, SamplingError, SeededRng, build_lambda, fisher_eigenvalues
from .simulation_models import (
    EXTREME_COUNT,
    AggregateReport,
    ReplicationRecord,
    SimulationConfig,
    SpikeSummary,
)
from .stieltjes import estimate_spike_group

logger = logging.getLogger(__name__)

HISTOGRAM_HALF_WIDTH_SD = 4.0
GROWTH_LIMIT = 1.0 / 6.0


class SimulationError(Exception):
    """Raised when a Monte Carlo run produces no usable replication."""


def population_spec(config: SimulationConfig) -> PopulationSpec:
    """Sigma1 layout for a config: scaled leading spikes, the {2, 1} bulk and the trailing spikes."""
    if config.spike_growth >= GROWTH_LIMIT:
        logger.warning(
            "spike_growth=%g is outside the o(n^{1/6}) regime the limits are proven for", config.spike_growth
        )
    lam = build_lambda(config.p, config.scaled_top_spikes, config.bottom_spikes)
    return PopulationSpec(p=config.p, rho=config.rho, lambda_diagonal=tuple(lam))


def run_replication(config: SimulationConfig, rep: int) -> ReplicationRecord:
    """
    Draw one Fisher sample on stream `rep` and estimate every configured spike.

    Estimation failures are kept in the record; a failed draw yields NaN estimates.
    """

    rng = SeededRng(config.master_seed, rep)
    labels = [t.label for t in config.spikes]
    try:
        sample = fisher_eigenvalues(population_spec(config), config.dist, config.n1, config.n2, rng)
    except SamplingError as exc:
        logger.warning("replication %d: sampling failed: %s", rep, exc)
        return ReplicationRecord(
            rep=rep,
            stream=rng.stream,
            estimates={label: math.nan for label in labels},
            errors={"sample": str(exc)},
        )

    estimates: dict[str, float] = {}
    errors: dict[str, str] = {}
    for target in config.spikes:
        est = estimate_spike_group(sample, target.ranks, label=target.label, exclusion_ratio=config.exclusion_ratio)
        estimates[target.label] = est.pooled
        if est.flagged:
            errors[target.label] = "; ".join(f"rank {r}: {msg}" for r, msg in sorted(est.errors.items()))

    k = min(EXTREME_COUNT, sample.p)
    logger.debug("replication %d done: %s", rep, estimates)
    return ReplicationRecord(
        rep=rep,
        stream=rng.stream,
        estimates=estimates,
        largest=sample.values[:k],
        smallest=sample.values[-k:],
        errors=errors,
    )


def run_replications(config: SimulationConfig) -> list[ReplicationRecord]:
    """All replications, inline for one worker, else across a process pool; rep-sorted."""
    reps = range(config.reps)
    if config.workers == 1 or config.reps == 1:
        records = [run_replication(config, rep) for rep in reps]
    else:
        chunk = max(1, config.reps // (config.workers * 4))
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(run_replication, repeat(config), reps, chunksize=chunk))
    return sorted(records, key=lambda r: r.rep)


def aggregate(records: Iterable[ReplicationRecord], config: SimulationConfig) -> AggregateReport:
    """
    Deterministic fold of records into per-spike statistics.

    Records are re-sorted by rep first, so any execution order gives the same report.
    """

    ordered = tuple(sorted(records, key=lambda r: r.rep))
    summaries = tuple(_summarize(t.label, t.value, ordered, config.bins) for t in config.spikes)
    return AggregateReport(summaries=summaries, records=ordered, config=config)


def _summarize(label: str, true_value: float | None, records: tuple[ReplicationRecord, ...], bins: int) -> SpikeSummary:
    values = np.array([r.estimates.get(label, math.nan) for r in records], dtype=float)
    ok = values[np.isfinite(values)]
    n_failed = int(values.size - ok.size)
    if ok.size == 0:
        return SpikeSummary(label, true_value, math.nan, math.nan, 0, n_failed)

    mean = float(np.mean(ok))
    sd = float(np.std(ok, ddof=1)) if ok.size > 1 else 0.0
    half = HISTOGRAM_HALF_WIDTH_SD * sd if sd > 0 else 0.5
    lo, hi = mean - half, mean + half
    # Outliers beyond mean +- 4 sd land in the end bins.
    counts, edges = np.histogram(np.clip(ok, lo, hi), bins=bins, range=(lo, hi))
    return SpikeSummary(
        label=label,
        true_value=true_value,
        mean=mean,
        sd=sd,
        n_ok=int(ok.size),
        n_failed=n_failed,
        bin_edges=tuple(edges.tolist()),
        counts=tuple(int(c) for c in counts),
    )


def run_monte_carlo(config: SimulationConfig) -> AggregateReport:
    """
    Run every replication, fold the statistics and, when `config.out_dir` is
    set, write the CSV artifacts there.
    """

    logger.info(
        "monte carlo: p=%d n1=%d n2=%d dist=%s reps=%d seed=%d workers=%d",
        config.p,
        config.n1,
        config.n2,
        config.dist.value,
        config.reps,
        config.master_seed,
        config.workers,
    )
    report = aggregate(run_replications(config), config)
    if report.failed_reps == report.reps:
        raise SimulationError(f"all {report.reps} replications failed")
    if report.failed_reps:
        logger.warning("%d of %d replications failed and were excluded", report.failed_reps, report.reps)

    if config.out_dir is not None:
        write_report(report, config.out_dir)
    logger.info("monte carlo finished: %d replications", report.reps)
    return report


def write_report(report: AggregateReport, path: str | Path) -> list[Path]:
    """
    Write summary.csv, histogram_<spike>.csv, replications.csv and config.yml
    into directory `path`; return the written files in that order.
    """

    out_dir = Path(path)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        written: list[Path] = []

        summary = out_dir / "summary.csv"
        _write_csv(to_summary_rows(report), SUMMARY_COLUMNS, summary)
        written.append(summary)

        for item in report.summaries:
            hist = out_dir / f"histogram_{item.label}.csv"
            _write_csv(to_histogram_rows(item), HISTOGRAM_COLUMNS, hist)
            written.append(hist)

        labels = [t.label for t in report.config.spikes]
        replications = out_dir / "replications.csv"
        _write_csv(
            to_replication_rows(list(report.records), labels, EXTREME_COUNT),
            replication_columns(labels, EXTREME_COUNT),
            replications,
        )
        written.append(replications)

        config_file = out_dir / "config.yml"
        with open(config_file, "w", encoding="utf-8", newline="\n") as fh:
            yaml.safe_dump(report.config.echo(), fh, sort_keys=False)
        written.append(config_file)
    except OSError as exc:
        raise OSError(f"failed to write report to {out_dir}: {exc}") from exc

    logger.info("wrote %d files to %s", len(written), out_dir)
    return written


def _write_csv(rows: list[dict], columns: list[str], path: Path) -> None:
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
