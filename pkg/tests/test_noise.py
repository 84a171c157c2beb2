"""Noise-matrix construction, measurement, flipping, and serialization."""

import numpy as np
import pytest

from fedln.noise import (
    ClientNoiseProfile,
    NoiseMatrix,
    NoiseSpec,
    apply_noise,
    build_noise_matrix,
    empirical_matrix,
    load_matrix_csv,
    load_spec_json,
    measure_noise_level,
    measure_noise_sparsity,
    normalized_noise_sparsity,
    per_class_noise_levels,
    save_matrix_csv,
    save_spec_json,
    target_count,
)

LEVEL_GRID = [round(0.1 * i, 1) for i in range(10)]
SPARSITY_GRID = [0.0, 0.25, 0.5, 0.75, 1.0]
CLASS_GRID = [2, 4, 10, 26]


def test_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(num_classes=1, noise_level=0.1)
    with pytest.raises(ValueError):
        NoiseSpec(num_classes=4, noise_level=1.2)
    with pytest.raises(ValueError):
        NoiseSpec(num_classes=4, noise_level=0.1, noise_sparsity=-0.5)
    with pytest.raises(ValueError):
        NoiseSpec(num_classes=4, noise_level=0.1, structure="diagonal")


def test_matrix_validation():
    with pytest.raises(ValueError):
        NoiseMatrix(np.array([[0.5, 0.5], [0.4, 0.5]]))  # column 0 sums to 0.9
    with pytest.raises(ValueError):
        NoiseMatrix(np.array([[1.2, 0.0], [-0.2, 1.0]]))  # negative entry
    with pytest.raises(ValueError):
        NoiseMatrix(np.ones((2, 3)))


def test_zero_noise_gives_identity():
    for structure in ("uniform", "sparse_random", "class_flip"):
        q = build_noise_matrix(
            NoiseSpec(num_classes=10, noise_level=0.0, noise_sparsity=0.7,
                      structure=structure, seed=5)
        )
        assert np.array_equal(q.entries, np.eye(10))


def test_uniform_matrix_entries():
    q = build_noise_matrix(NoiseSpec(num_classes=4, noise_level=0.6, structure="uniform"))
    assert np.allclose(np.diag(q.entries), 0.4)
    off = q.entries[~np.eye(4, dtype=bool)]
    assert np.allclose(off, 0.2)


def test_class_flip_single_symmetric_pair_per_column():
    q = build_noise_matrix(
        NoiseSpec(num_classes=10, noise_level=0.4, structure="class_flip", seed=7)
    )
    off = q.entries.copy()
    np.fill_diagonal(off, 0.0)
    assert np.all((off > 0).sum(axis=0) == 1)
    assert np.allclose(off[off > 0], 0.4)
    # symmetric permutation pairing: positive pattern equals its transpose
    assert np.array_equal(off > 0, (off > 0).T)
    pattern = (off > 0).astype(int)
    assert np.array_equal(pattern @ pattern, np.eye(10, dtype=int))


def test_class_flip_odd_count_leaves_one_clean_column():
    q = build_noise_matrix(
        NoiseSpec(num_classes=5, noise_level=0.3, structure="class_flip", seed=2)
    )
    diag = np.diag(q.entries)
    assert np.isclose(diag, 1.0).sum() == 1
    assert np.isclose(diag, 0.7).sum() == 4
    off = q.entries.copy()
    np.fill_diagonal(off, 0.0)
    assert np.array_equal(off > 0, (off > 0).T)


def test_sparse_random_column_pattern():
    # C=10, n_s=0.5: round(0.5*9)=5 positive off-diagonals of 0.3/5
    q = build_noise_matrix(
        NoiseSpec(num_classes=10, noise_level=0.3, noise_sparsity=0.5,
                  structure="sparse_random", seed=11)
    )
    off = q.entries.copy()
    np.fill_diagonal(off, 0.0)
    assert np.all((off > 0).sum(axis=0) == 5)
    assert np.allclose(off[off > 0], 0.06)
    assert measure_noise_sparsity(q) == pytest.approx(4 / 9)


def test_target_count_rounds_half_up():
    assert target_count(10, 0.5) == 5  # 4.5 rounds up, not banker's
    assert target_count(10, 1.0) == 1
    assert target_count(10, 0.0) == 9
    assert target_count(4, 0.75) == 1


def test_measure_noise_level_examples():
    assert measure_noise_level(NoiseMatrix.identity(6)) == 0.0
    all_off = np.full((2, 2), 0.0)
    all_off[0, 1] = 1.0
    all_off[1, 0] = 1.0
    assert measure_noise_level(NoiseMatrix(all_off)) == 1.0
    q = NoiseMatrix(np.array([[0.7, 0.1], [0.3, 0.9]]))
    assert measure_noise_level(q) == pytest.approx(0.2)
    assert per_class_noise_levels(q) == pytest.approx([0.3, 0.1])


def test_sparsity_examples():
    uniform = build_noise_matrix(NoiseSpec(num_classes=10, noise_level=0.5))
    assert measure_noise_sparsity(uniform) == 0.0
    assert normalized_noise_sparsity(uniform) == 0.0

    flip = build_noise_matrix(
        NoiseSpec(num_classes=10, noise_level=0.5, structure="class_flip", seed=1)
    )
    assert measure_noise_sparsity(flip) == pytest.approx(8 / 9)
    assert normalized_noise_sparsity(flip) == 1.0

    identity = NoiseMatrix.identity(4)  # no noisy columns -> 0 by convention
    assert measure_noise_sparsity(identity) == 0.0
    assert normalized_noise_sparsity(identity) == 0.0


@pytest.mark.parametrize("num_classes", CLASS_GRID)
@pytest.mark.parametrize("level", LEVEL_GRID)
def test_level_round_trip(num_classes, level):
    for i, sparsity in enumerate(SPARSITY_GRID):
        q = build_noise_matrix(
            NoiseSpec(num_classes=num_classes, noise_level=level,
                      noise_sparsity=sparsity, structure="sparse_random", seed=40 + i)
        )
        assert abs(measure_noise_level(q) - level) <= 1e-9
        assert np.all(q.entries >= 0)
        assert np.allclose(q.entries.sum(axis=0), 1.0, atol=1e-9)


@pytest.mark.parametrize("num_classes", [4, 10, 26])
@pytest.mark.parametrize("sparsity", SPARSITY_GRID)
def test_sparsity_round_trip(num_classes, sparsity):
    q = build_noise_matrix(
        NoiseSpec(num_classes=num_classes, noise_level=0.3, noise_sparsity=sparsity,
                  structure="sparse_random", seed=9)
    )
    assert abs(normalized_noise_sparsity(q) - sparsity) <= 1.0 / (num_classes - 1)


def test_apply_noise_identity_and_full_flip():
    labels = np.array([0, 1, 2, 1, 0])
    assert np.array_equal(apply_noise(labels, NoiseMatrix.identity(3), 99), labels)
    flip = NoiseMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.array_equal(apply_noise(np.array([0, 1]), flip, 5), [1, 0])


def test_apply_noise_rejects_out_of_range_labels():
    with pytest.raises(ValueError, match="out of range"):
        apply_noise(np.array([0, 3]), NoiseMatrix.identity(3), 0)


def test_apply_noise_deterministic():
    q = build_noise_matrix(NoiseSpec(num_classes=5, noise_level=0.4, seed=3))
    labels = np.random.default_rng(0).integers(0, 5, size=1000)
    a = apply_noise(labels, q, 123)
    b = apply_noise(labels, q, 123)
    assert np.array_equal(a, b)
    c = apply_noise(labels, q, 124)
    assert not np.array_equal(a, c)


def test_apply_noise_monte_carlo_frequency():
    # 100k class-0 labels through C=4 uniform noise at level 0.6:
    # class 0 frequency should be 0.4 within 0.01 (binomial 3 sigma ~ 0.0046)
    q = build_noise_matrix(NoiseSpec(num_classes=4, noise_level=0.6, structure="uniform"))
    out = apply_noise(np.zeros(100_000, dtype=np.int64), q, 1)
    assert abs((out == 0).mean() - 0.4) <= 0.01


def test_empirical_matrix_examples():
    q = empirical_matrix([0, 0, 1, 1], [0, 0, 1, 1], 2)
    assert np.array_equal(q.entries, np.eye(2))
    with pytest.raises(ValueError, match="class 1"):
        empirical_matrix([0, 0, 0, 0], [0, 0, 1, 1], 2)
    with pytest.raises(ValueError, match="length"):
        empirical_matrix([0, 1], [0], 2)


def test_empirical_matrix_round_trip():
    rng = np.random.default_rng(7)
    q = build_noise_matrix(
        NoiseSpec(num_classes=6, noise_level=0.35, noise_sparsity=0.5,
                  structure="sparse_random", seed=21)
    )
    truth = rng.integers(0, 6, size=100_000)
    observed = apply_noise(truth, q, 2)
    estimated = empirical_matrix(truth, observed, 6)
    assert np.max(np.abs(estimated.entries - q.entries)) <= 0.01


def test_matrix_csv_round_trip(tmp_path):
    q = build_noise_matrix(
        NoiseSpec(num_classes=7, noise_level=0.45, noise_sparsity=0.3,
                  structure="sparse_random", seed=13)
    )
    path = tmp_path / "matrix.csv"
    save_matrix_csv(q, path)
    loaded = load_matrix_csv(path)
    assert np.array_equal(loaded.entries, q.entries)
    # 17 significant digits per entry
    first = path.read_text().splitlines()[0].split(",")
    assert len(first) == 7


def test_spec_json_round_trip(tmp_path):
    spec = NoiseSpec(num_classes=12, noise_level=0.25, noise_sparsity=0.75,
                     structure="sparse_random", seed=99)
    path = tmp_path / "spec.json"
    save_spec_json(spec, path)
    assert load_spec_json(path) == spec
    keys = set(spec.to_json())
    assert keys == {"num_classes", "noise_level", "noise_sparsity", "structure", "seed"}


def test_profiles_may_differ_across_clients():
    a = ClientNoiseProfile(0, NoiseMatrix.identity(3))
    b = ClientNoiseProfile(
        1, build_noise_matrix(NoiseSpec(num_classes=3, noise_level=0.5, seed=0))
    )
    assert not np.array_equal(a.matrix.entries, b.matrix.entries)
