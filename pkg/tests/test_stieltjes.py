import math
from fractions import Fraction

import numpy as np
import pytest

from spiked_fisher.spectral_models import AspectRatios, EigenSample, SpectralMeasure
from spiked_fisher.spectrum import is_distant_spike, lsd_support, psi
from spiked_fisher.stieltjes import (
    AllExcluded,
    NotOutsideSupport,
    ZeroEigenvalue,
    empirical_m_hat,
    empirical_m_underline_hat,
    estimate_spike_at,
    estimate_spike_group,
    estimate_spikes,
    population_m_pair,
    population_stieltjes_at_spike,
    solve_m0,
)


def _two_atoms():
    return SpectralMeasure.from_atoms([(2.0, 0.5), (1.0, 0.5)])


def _design_ratios():
    return AspectRatios(0.5, 0.25)


def _sample(values, n1, n2):
    return EigenSample(values=tuple(values), p=len(values), n1=n1, n2=n2)


def _exact_chain(values, rank, n1, n2, ratio=Fraction(1, 5)):
    """Independent exact-arithmetic evaluation of m_hat, m_underline_hat and alpha_hat."""
    vals = [Fraction(v) for v in values]
    lam = vals[rank - 1]
    kept = [v for v in vals if abs(v - lam) / abs(lam) > ratio]
    m_hat = sum(1 / (v - lam) for v in kept) / len(kept)
    c1 = Fraction(len(kept), n1)
    c2 = Fraction(len(kept), n2)
    m_under = -(1 - c1) / lam + c1 * m_hat
    alpha = -(1 + c2 * lam * m_hat) / m_under
    return m_hat, m_under, alpha


def test_m_hat_hand_arithmetic():
    m_hat, excluded = empirical_m_hat(_sample([5, 1, 0.5], n1=4, n2=8), rank=1)

    assert excluded == frozenset({1})
    assert m_hat == pytest.approx(0.5 * (1 / (1 - 5) + 1 / (0.5 - 5)), rel=1e-15)
    assert m_hat == pytest.approx(-0.236111, abs=1e-6)


def test_m_hat_excludes_close_eigenvalues():
    m_hat, excluded = empirical_m_hat(_sample([5, 4.5, 1], n1=4, n2=8), rank=1)

    assert excluded == frozenset({1, 2})
    assert m_hat == -0.25


def test_everything_excluded_raises():
    with pytest.raises(AllExcluded):
        empirical_m_hat(_sample([1.0, 0.95, 0.9], n1=4, n2=8), rank=1)


def test_zero_eigenvalue_raises():
    with pytest.raises(ZeroEigenvalue):
        estimate_spike_at(_sample([2.0, 1.0, 0.0], n1=4, n2=8), rank=3)


def test_m_underline_hat_hand_arithmetic():
    value = empirical_m_underline_hat(_sample([5, 1, 0.5], n1=4, n2=8), rank=1)

    assert value == pytest.approx(-0.218056, abs=1e-6)


def test_m_underline_hat_reduces_to_m_hat_when_c1_tilde_is_one():
    sample = _sample([5, 1, 0.5], n1=2, n2=8)

    m_hat, _ = empirical_m_hat(sample, rank=1)
    assert empirical_m_underline_hat(sample, rank=1) == m_hat


@pytest.mark.parametrize(
    "values,rank,n1,n2",
    [
        ([5, 1, 0.5], 1, 4, 8),
        ([5, 1, 0.9, 0.5], 1, 8, 16),
        ([5, 1, 0.9, 0.5], 4, 8, 16),
        ([12.5, 7.0, 6.5, 2.25, 1.75, 1.0, 0.3, 0.125], 3, 16, 32),
    ],
)
def test_estimator_chain_matches_exact_arithmetic(values, rank, n1, n2):
    sample = _sample(values, n1, n2)
    m_hat_exact, m_under_exact, alpha_exact = _exact_chain(values, rank, n1, n2)

    m_hat, _ = empirical_m_hat(sample, rank)
    assert m_hat == pytest.approx(float(m_hat_exact), rel=1e-12)
    assert empirical_m_underline_hat(sample, rank) == pytest.approx(float(m_under_exact), rel=1e-12)
    assert estimate_spike_at(sample, rank) == pytest.approx(float(alpha_exact), rel=1e-12)


def test_estimate_zeroes_the_empirical_eigen_equation():
    sample = _sample([5, 1, 0.9, 0.5], n1=8, n2=16)
    lam = sample.eigenvalue(1)
    m_hat, excluded = empirical_m_hat(sample, 1)
    c2_tilde = (sample.p - len(excluded)) / sample.n2

    alpha_hat = estimate_spike_at(sample, 1)
    residual = lam + c2_tilde * lam * lam * m_hat + lam * empirical_m_underline_hat(sample, 1) * alpha_hat

    assert abs(residual) <= 1e-12


def test_group_pools_and_records_failures():
    sample = _sample([5, 1, 0.9, 0.0], n1=8, n2=16)

    single = estimate_spike_group(sample, [1], label="a1")
    assert single.pooled == single.per_rank[0] == estimate_spike_at(sample, 1)
    assert single.ok and not single.flagged

    mixed = estimate_spike_group(sample, [1, 4], label="mix")
    assert mixed.pooled == single.pooled
    assert math.isnan(mixed.per_rank[1])
    assert set(mixed.errors) == {4}


def test_estimate_spikes_keeps_group_order():
    sample = _sample([5, 1, 0.9, 0.5], n1=8, n2=16)

    results = estimate_spikes(sample, {"top": [1], "bottom": [4]})

    assert list(results) == ["top", "bottom"]
    assert results["top"].pooled == estimate_spike_at(sample, 1)


@pytest.mark.parametrize("alpha", [10.0, 0.1])
def test_solve_m0_inverts_psi(alpha):
    H, c = _two_atoms(), _design_ratios()

    root = solve_m0(psi(alpha, H, c), H, c)

    assert root.m0 == pytest.approx(-alpha, abs=1e-8)


def test_solve_m0_identity_ratios():
    root = solve_m0(7.0, _two_atoms(), AspectRatios(0.0, 0.0))

    assert root.m0 == pytest.approx(-7.0, abs=1e-10)


def test_solve_m0_rejects_points_in_the_support():
    H, c = _two_atoms(), _design_ratios()
    lo, hi = lsd_support(H, c).intervals[0]

    with pytest.raises(NotOutsideSupport):
        solve_m0(0.5 * (lo + hi), H, c)


def test_population_pair_closed_forms_at_design_spikes():
    H, c = _two_atoms(), _design_ratios()

    x = psi(10.0, H, c)
    pair = population_m_pair(x, H, c)
    assert pair.m_underline == pytest.approx(-c.h2 / (c.c1 * 10.0 + c.c2 * x), abs=1e-8)
    assert pair.m_underline == pytest.approx(-(1 - c.c1) / x + c.c1 * pair.m, abs=1e-12)

    x = psi(0.1, H, c)
    pair = population_m_pair(x, H, c)
    assert abs(1 + c.c2 * x * pair.m + pair.m_underline * 0.1) <= 1e-8


def test_population_pair_matches_spike_closed_forms_over_random_spikes():
    H = SpectralMeasure.from_atoms([(0.5, 0.25), (1.0, 0.5), (3.0, 0.25)])
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 100:
        c = AspectRatios(float(rng.uniform(0.05, 0.9)), float(rng.uniform(0.05, 0.5)))
        alpha = float(rng.choice([rng.uniform(0.02, 0.2), rng.uniform(6.0, 40.0)]))
        if not is_distant_spike(alpha, H, c):
            continue
        closed = population_stieltjes_at_spike(alpha, H, c)
        pair = population_m_pair(closed.x, H, c)

        assert solve_m0(closed.x, H, c).m0 == pytest.approx(-alpha, abs=1e-8)
        assert pair.m_underline == pytest.approx(closed.m_underline, abs=1e-8)
        assert pair.m == pytest.approx(closed.m, abs=1e-8)
        assert abs(1 + c.c2 * closed.x * pair.m + pair.m_underline * alpha) <= 1e-8
        checked += 1


def test_population_pair_without_first_sample_ratio():
    H = _two_atoms()
    c = AspectRatios(0.0, 0.25)
    x = psi(10.0, H, c)

    pair = population_m_pair(x, H, c)

    assert pair.m == pytest.approx(population_stieltjes_at_spike(10.0, H, c).m, abs=1e-8)
