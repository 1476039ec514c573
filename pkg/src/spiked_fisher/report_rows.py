from __future__ import annotations

from typing import Any, List

from .simulation_models import AggregateReport, ReplicationRecord, SpikeSummary

SUMMARY_COLUMNS = ["spike", "true_value", "mean", "sd", "reps", "failed", "relative_error", "flag"]
HISTOGRAM_COLUMNS = ["bin_left", "bin_right", "count"]


def to_summary_rows(report: AggregateReport) -> list[dict[str, Any]]:
    """
    One row per spike in config order.

    Spikes without a single successful replication keep NaN statistics and
    carry the flag `no_successful_replications`.
    """

    rows: List[dict[str, Any]] = []
    for item in report.summaries:
        rows.append(
            {
                "spike": item.label,
                "true_value": item.true_value,
                "mean": item.mean,
                "sd": item.sd,
                "reps": item.n_ok,
                "failed": item.n_failed,
                "relative_error": item.relative_error,
                "flag": "no_successful_replications" if item.flagged else "",
            }
        )
    return rows


def to_histogram_rows(summary: SpikeSummary) -> list[dict[str, Any]]:
    """Bins in ascending order; empty when the spike never produced an estimate."""
    edges = summary.bin_edges
    return [
        {"bin_left": edges[i], "bin_right": edges[i + 1], "count": count}
        for i, count in enumerate(summary.counts)
    ]


def replication_columns(labels: list[str], extremes: int) -> list[str]:
    columns = ["rep", "stream"]
    columns += [f"est_{label}" for label in labels]
    columns += [f"largest_{i}" for i in range(1, extremes + 1)]
    columns += [f"smallest_{i}" for i in range(1, extremes + 1)]
    columns += ["errors"]
    return columns


def to_replication_rows(records: list[ReplicationRecord], labels: list[str], extremes: int) -> list[dict[str, Any]]:
    """Flatten records in rep order; missing extremes are left blank."""
    rows: List[dict[str, Any]] = []
    for record in sorted(records, key=lambda r: r.rep):
        row: dict[str, Any] = {"rep": record.rep, "stream": record.stream}
        for label in labels:
            row[f"est_{label}"] = record.estimates.get(label)
        for i in range(extremes):
            row[f"largest_{i + 1}"] = record.largest[i] if i < len(record.largest) else None
            row[f"smallest_{i + 1}"] = record.smallest[i] if i < len(record.smallest) else None
        row["errors"] = "; ".join(f"{key}: {msg}" for key, msg in sorted(record.errors.items()))
        rows.append(row)
    return rows
