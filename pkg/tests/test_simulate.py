import logging
import math
import random

import numpy as np
import pandas as pd
import pytest

from spiked_fisher import simulate
from spiked_fisher.sampling import EntryDistribution, SingularS2
from spiked_fisher.simulate import (
    SimulationError,
    aggregate,
    population_spec,
    run_monte_carlo,
    run_replication,
    write_report,
)
from spiked_fisher.simulation_models import SimulationConfig, SpikeTarget, group_targets
from spiked_fisher.spectral_models import AspectRatios, SpectralMeasure
from spiked_fisher.spectrum import lsd_support, psi


def _small_config(**kwargs):
    base = dict(p=20, n1=40, n2=80, reps=6, master_seed=3)
    base.update(kwargs)
    return SimulationConfig(**base)


def _read_bytes(directory):
    return {path.name: path.read_bytes() for path in sorted(directory.iterdir())}


def test_default_targets_follow_the_design_ranks():
    targets = group_targets(100)

    assert [(t.label, t.ranks, t.value) for t in targets] == [
        ("a1", (1,), 10.0),
        ("a2", (2, 3), 7.5),
        ("a3", (98, 99), 0.2),
        ("a4", (100,), 0.1),
    ]


def test_reference_design_dimensions():
    config = SimulationConfig.reference_design(100, "chisq")

    assert (config.n1, config.n2) == (200, 400)
    assert config.dist is EntryDistribution.STANDARDIZED_CHI_SQUARE_2
    assert [t.label for t in config.spikes] == ["a1", "a2", "a3", "a4"]


def test_config_rejects_ranks_beyond_p():
    with pytest.raises(ValueError):
        _small_config(spikes=(SpikeTarget("x", (21,)),))


def test_spike_growth_scales_leading_spikes_and_warns(caplog):
    config = _small_config(p=400, n1=800, n2=1600, spike_growth=0.25)

    with caplog.at_level(logging.WARNING, logger="spiked_fisher.simulate"):
        spec = population_spec(config)

    assert spec.lambda_diagonal[0] == pytest.approx(10.0 * 4**0.25)
    assert config.spikes[0].value == pytest.approx(10.0 * 4**0.25)
    assert "spike_growth" in caplog.text


def test_replication_is_a_pure_function_of_seed_and_rep():
    config = _small_config()

    first = run_replication(config, 2)
    again = run_replication(config, 2)
    other = run_replication(config, 3)

    assert first == again
    assert first.stream == 2
    assert first.estimates != other.estimates
    assert len(first.largest) == len(first.smallest) == 4
    assert list(first.largest) == sorted(first.largest, reverse=True)
    assert set(first.estimates) == {"a1", "a2", "a3", "a4"}


def test_aggregate_ignores_record_order():
    config = _small_config()
    records = [run_replication(config, rep) for rep in range(config.reps)]
    shuffled = list(records)
    random.Random(0).shuffle(shuffled)

    assert aggregate(shuffled, config) == aggregate(records, config)


def test_summary_statistics_and_histogram():
    config = _small_config(bins=8)
    report = aggregate([run_replication(config, rep) for rep in range(config.reps)], config)
    summary = report.summary("a1")
    values = np.array([r.estimates["a1"] for r in report.records])
    ok = values[np.isfinite(values)]

    assert summary.mean == pytest.approx(ok.mean())
    assert summary.sd == pytest.approx(ok.std(ddof=1))
    assert sum(summary.counts) == summary.n_ok == ok.size
    assert len(summary.bin_edges) == 9
    assert summary.relative_error == pytest.approx((summary.mean - 10.0) / 10.0)


def test_sampling_failures_become_failed_records(monkeypatch):
    def singular(*args, **kwargs):
        raise SingularS2("forced")

    monkeypatch.setattr(simulate, "fisher_eigenvalues", singular)
    config = _small_config(reps=3)

    record = run_replication(config, 0)
    assert record.failed
    assert "forced" in record.errors["sample"]

    with pytest.raises(SimulationError):
        run_monte_carlo(config)


def test_report_files_and_columns(tmp_path):
    config = _small_config(out_dir=tmp_path / "run")

    report = run_monte_carlo(config)

    names = sorted(p.name for p in (tmp_path / "run").iterdir())
    assert names == sorted(
        ["summary.csv", "replications.csv", "config.yml"] + [f"histogram_a{i}.csv" for i in range(1, 5)]
    )
    summary = pd.read_csv(tmp_path / "run" / "summary.csv")
    assert list(summary["spike"]) == ["a1", "a2", "a3", "a4"]
    assert list(summary["reps"] + summary["failed"]) == [report.reps] * 4
    replications = pd.read_csv(tmp_path / "run" / "replications.csv")
    assert list(replications["rep"]) == list(range(config.reps))
    assert "largest_1" in replications.columns and "smallest_4" in replications.columns


def test_runs_are_byte_identical(tmp_path):
    run_monte_carlo(_small_config(out_dir=tmp_path / "one"))
    run_monte_carlo(_small_config(out_dir=tmp_path / "two"))

    one = _read_bytes(tmp_path / "one")
    two = _read_bytes(tmp_path / "two")
    one.pop("config.yml")
    two.pop("config.yml")
    assert one == two


def test_worker_count_does_not_change_results(tmp_path):
    report_serial = run_monte_carlo(_small_config(reps=8))
    report_pool = run_monte_carlo(_small_config(reps=8, workers=2))

    assert report_serial.summaries == report_pool.summaries
    assert report_serial.records == report_pool.records

    write_report(report_serial, tmp_path / "serial")
    write_report(report_pool, tmp_path / "pool")
    serial = _read_bytes(tmp_path / "serial")
    pool = _read_bytes(tmp_path / "pool")
    serial.pop("config.yml")
    pool.pop("config.yml")
    assert serial == pool


@pytest.mark.slow
def test_largest_eigenvalue_tracks_the_phase_transition_limit():
    config = SimulationConfig.reference_design(400, reps=100, master_seed=1)
    H = SpectralMeasure.from_atoms([(2.0, 0.5), (1.0, 0.5)])
    limit = psi(10.0, H, AspectRatios(0.5, 0.25))

    report = run_monte_carlo(config)
    largest = np.mean([r.largest[0] for r in report.records])

    assert abs(largest / limit - 1) <= 0.03


@pytest.mark.slow
@pytest.mark.parametrize("dist", list(EntryDistribution))
def test_estimator_accuracy_at_desk_scale(dist):
    report = run_monte_carlo(SimulationConfig.reference_design(400, dist, reps=500, master_seed=2024))
    tolerances = {"a1": 0.05, "a2": 0.10, "a3": 0.10, "a4": 0.10}

    for label, tol in tolerances.items():
        summary = report.summary(label)
        assert abs(summary.relative_error) <= tol, (label, summary.mean)


@pytest.mark.slow
@pytest.mark.parametrize("dist", list(EntryDistribution))
def test_largest_spike_estimates_concentrate_as_p_grows(dist):
    sds = [
        run_monte_carlo(SimulationConfig.reference_design(p, dist, reps=200, master_seed=5)).summary("a1").sd
        for p in (100, 200, 400)
    ]

    assert sds[0] > sds[1] > sds[2]


@pytest.mark.slow
def test_bulk_eigenvalues_stay_inside_the_support():
    p = 400
    H = SpectralMeasure.from_atoms([(2.0, 0.5), (1.0, 0.5)])
    support = lsd_support(H, AspectRatios(0.5, 0.25))
    config = SimulationConfig(
        p=p, n1=2 * p, n2=4 * p, reps=50, master_seed=8, top_spikes=(), bottom_spikes=(), spikes=(SpikeTarget("bulk", (1,)),)
    )
    spec = population_spec(config)

    inside = in_gap = total = 0
    for rep in range(config.reps):
        sample = simulate.fisher_eigenvalues(spec, config.dist, config.n1, config.n2, simulate.SeededRng(config.master_seed, rep))
        for value in sample.values:
            total += 1
            inside += support.contains(value, dilation=0.15)
            in_gap += support.in_gap(value, shrink=0.15)

    assert inside / total >= 0.99
    assert in_gap == 0


def test_spike_failing_in_every_replication_is_flagged(tmp_path):
    # Every other eigenvalue sits within the exclusion band of the largest one.
    config = _small_config(reps=3, exclusion_ratio=0.999999, out_dir=tmp_path / "run")

    report = run_monte_carlo(config)

    top = report.summary("a1")
    assert (top.n_ok, top.n_failed) == (0, 3)
    assert (tmp_path / "run" / "histogram_a1.csv").read_text(encoding="utf-8") == "bin_left,bin_right,count\n"
    summary = pd.read_csv(tmp_path / "run" / "summary.csv", keep_default_na=False)
    row = summary[summary["spike"] == "a1"].iloc[0]
    assert row["flag"] == "no_successful_replications"
    assert row["mean"] == ""


def test_single_replication_has_zero_spread():
    report = run_monte_carlo(_small_config(reps=1))

    (record,) = report.records
    for label, estimate in record.estimates.items():
        summary = report.summary(label)
        if math.isfinite(estimate):
            assert summary.mean == estimate
            assert summary.sd == 0.0


def test_smallest_design_dimension_runs():
    record = run_replication(_small_config(p=8, n1=16, n2=32), 0)

    assert set(record.estimates) == {"a1", "a2", "a3", "a4"}
    assert len(record.largest) == len(record.smallest) == 4
    assert record.errors.get("sample") is None


def test_report_csvs_read_back_losslessly(tmp_path):
    report = run_monte_carlo(_small_config(out_dir=tmp_path))

    summary = pd.read_csv(tmp_path / "summary.csv", float_precision="round_trip")
    for row in summary.itertuples():
        assert row.mean == report.summary(row.spike).mean
        assert row.sd == report.summary(row.spike).sd

    replications = pd.read_csv(tmp_path / "replications.csv", float_precision="round_trip")
    for label in ("a1", "a2", "a3", "a4"):
        np.testing.assert_array_equal(
            replications[f"est_{label}"].to_numpy(), [r.estimates[label] for r in report.records]
        )
    np.testing.assert_array_equal(replications["largest_1"].to_numpy(), [r.largest[0] for r in report.records])
