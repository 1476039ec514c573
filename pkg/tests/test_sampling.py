import math

import numpy as np
import pytest

from spiked_fisher.parse_config import load_eigenvalues
from spiked_fisher.sampling import (
    BadDimension,
    EntryDistribution,
    PopulationSpec,
    SeededRng,
    build_lambda,
    draw_matrix,
    dump_eigenvalues,
    fisher_eigenvalues,
    sigma_half,
    toeplitz_eigvecs,
)
from spiked_fisher.spectral_models import AspectRatios, SpectralMeasure
from spiked_fisher.spectrum import lsd_support


def _spec(p, rho=0.5):
    return PopulationSpec(p=p, rho=rho, lambda_diagonal=tuple(build_lambda(p)))


def test_build_lambda_smallest_design():
    assert build_lambda(8) == [10, 7.5, 7.5, 2, 1, 0.2, 0.2, 0.1]


def test_build_lambda_counts_bulk_values():
    values = build_lambda(100)

    assert len(values) == 100
    assert values.count(2.0) == 47
    assert values.count(1.0) == 47


@pytest.mark.parametrize("p", [7, 6])
def test_build_lambda_rejects_bad_dimensions(p):
    with pytest.raises(BadDimension):
        build_lambda(p)


def test_build_lambda_without_spikes_is_pure_bulk():
    assert build_lambda(4, spikes=(), tail=()) == [2, 2, 1, 1]


def test_toeplitz_eigvecs_identity_for_zero_rho():
    np.testing.assert_array_equal(toeplitz_eigvecs(5, 0.0), np.eye(5))


def test_toeplitz_eigvecs_two_by_two():
    u0 = toeplitz_eigvecs(2, 0.5)
    s = 1 / math.sqrt(2)

    np.testing.assert_allclose(np.abs(u0), np.full((2, 2), s), atol=1e-12)
    np.testing.assert_allclose(u0[:, 0], [s, s], atol=1e-12)
    assert np.max(u0[:, 1]) == pytest.approx(s)


def test_toeplitz_eigvecs_orthonormal_and_sign_fixed():
    u0 = toeplitz_eigvecs(60, 0.5)

    assert np.linalg.norm(u0.T @ u0 - np.eye(60)) <= 1e-10
    dominant = u0[np.argmax(np.abs(u0), axis=0), np.arange(60)]
    assert np.all(dominant > 0)


def test_toeplitz_eigvecs_returns_a_private_copy():
    u0 = toeplitz_eigvecs(4, 0.5)
    u0[0, 0] = 99.0

    assert toeplitz_eigvecs(4, 0.5)[0, 0] != 99.0


def test_sigma_half_squares_to_sigma1():
    spec = _spec(20)
    u0 = toeplitz_eigvecs(20, 0.5)
    sigma1 = u0 @ np.diag(spec.lambda_diagonal) @ u0.T

    half = sigma_half(spec)

    np.testing.assert_allclose(half @ half, sigma1, atol=1e-10)
    np.testing.assert_allclose(half, half.T, atol=1e-12)


@pytest.mark.parametrize("dist", list(EntryDistribution))
def test_draw_matrix_is_standardized(dist):
    x = draw_matrix(dist, 1000, 1000, SeededRng(5, 1))

    assert abs(x.mean()) <= 4e-3
    assert x.var() == pytest.approx(1.0, rel=0.02)


def test_chi_square_entries_are_bounded_below():
    x = draw_matrix(EntryDistribution.STANDARDIZED_CHI_SQUARE_2, 200, 200, SeededRng(1))

    assert x.min() >= -1.0


def test_seeded_streams_are_reproducible_and_independent():
    a = SeededRng(42, 3).generator().standard_normal(5)
    b = SeededRng(42, 3).generator().standard_normal(5)
    other = SeededRng(42, 4).generator().standard_normal(5)

    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, other)


def test_fisher_eigenvalues_are_descending_and_reproducible():
    spec = _spec(20)

    first = fisher_eigenvalues(spec, EntryDistribution.STANDARD_NORMAL, 40, 80, SeededRng(9, 0))
    second = fisher_eigenvalues(spec, EntryDistribution.STANDARD_NORMAL, 40, 80, SeededRng(9, 0))

    assert first == second
    assert first.p == 20 and first.n1 == 40 and first.n2 == 80
    assert list(first.values) == sorted(first.values, reverse=True)
    assert first.values[-1] >= 0


def test_symmetric_and_direct_eigensolves_agree():
    spec = _spec(30)

    sym = fisher_eigenvalues(spec, EntryDistribution.UNIFORM_SQRT3, 60, 120, SeededRng(3, 2))
    direct = fisher_eigenvalues(spec, EntryDistribution.UNIFORM_SQRT3, 60, 120, SeededRng(3, 2), symmetric=False)

    np.testing.assert_allclose(sym.array, direct.array, rtol=1e-8, atol=1e-10)


def test_identity_second_covariance_is_the_default():
    spec = _spec(12)

    plain = fisher_eigenvalues(spec, EntryDistribution.STANDARD_NORMAL, 24, 48, SeededRng(1))
    explicit = fisher_eigenvalues(spec, EntryDistribution.STANDARD_NORMAL, 24, 48, SeededRng(1), sigma2_half=np.eye(12))

    np.testing.assert_allclose(plain.array, explicit.array, rtol=1e-12)


def test_scaling_second_covariance_scales_eigenvalues():
    spec = _spec(12)

    plain = fisher_eigenvalues(spec, EntryDistribution.STANDARD_NORMAL, 24, 48, SeededRng(1))
    scaled = fisher_eigenvalues(
        spec, EntryDistribution.STANDARD_NORMAL, 24, 48, SeededRng(1), sigma2_half=2.0 * np.eye(12)
    )

    np.testing.assert_allclose(scaled.array, plain.array / 4.0, rtol=1e-10)


def test_second_sample_must_exceed_dimension():
    with pytest.raises(BadDimension):
        fisher_eigenvalues(_spec(8), EntryDistribution.STANDARD_NORMAL, 16, 8, SeededRng(0))


def test_population_spec_validates_diagonal():
    with pytest.raises(ValueError):
        PopulationSpec(p=3, rho=0.5, lambda_diagonal=(1.0, 2.0, 0.5))
    with pytest.raises(ValueError):
        PopulationSpec(p=2, rho=1.0, lambda_diagonal=(2.0, 1.0))


def test_dumped_eigenvalues_load_back_exactly(tmp_path):
    sample = fisher_eigenvalues(_spec(14), EntryDistribution.STANDARD_NORMAL, 28, 56, SeededRng(4))

    path = dump_eigenvalues(sample, tmp_path / "eig" / "values.txt")

    assert load_eigenvalues(path) == list(sample.values)


@pytest.mark.slow
def test_rotation_does_not_move_the_largest_eigenvalue():
    spec = _spec(200)

    def mean_largest(rotate):
        return np.mean(
            [
                fisher_eigenvalues(spec, EntryDistribution.STANDARD_NORMAL, 400, 800, SeededRng(21, rep), rotate=rotate).values[0]
                for rep in range(100)
            ]
        )

    assert mean_largest(True) == pytest.approx(mean_largest(False), rel=0.02)


def test_null_fisher_eigenvalues_fill_the_point_mass_support():
    p = 100
    spec = PopulationSpec(p=p, rho=0.0, lambda_diagonal=(1.0,) * p)
    support = lsd_support(SpectralMeasure.point_mass(1.0), AspectRatios(0.5, 0.25))

    sample = fisher_eigenvalues(spec, EntryDistribution.STANDARD_NORMAL, 2 * p, 4 * p, SeededRng(13))

    assert all(support.contains(value, dilation=0.15) for value in sample.values)
