import numpy as np
import pytest
from pydantic import ValidationError

from confnorm.core.errors import DegenerateInputError, EmptyClusterError, ParameterError, ShapeMismatchError
from confnorm.core.geometry import (
    DEGENERATE_WIDTH,
    build_grid,
    build_scaled_histogram,
    cell_masses,
    fit_pca,
    gcm,
    gcm_variants,
    histogram_volume,
    latent_grid,
    project,
    scott_bin_widths,
    variant_weights,
)
from confnorm.core.matrix import confusion_from_pairs
from confnorm.models.schemas import Cluster, EmbeddedDataset, GcmVariant, Grid, IpfConfig, Projection, WeightVectors


def dataset(points, labels, predictions=None, classes=None):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    labels = list(labels)
    predictions = labels if predictions is None else list(predictions)
    if classes is None:
        classes = [str(k) for k in range(max(labels + predictions) + 1)]
    return EmbeddedDataset(embeddings=points, labels=labels, predictions=predictions, classes=classes)


def unit_weights(C):
    return WeightVectors(l=np.ones(C), p=np.ones(C))


def unit_grid(m):
    return Grid(origin=np.zeros(m), widths=np.ones(m), shape=(1,) * m)


# schemas

def test_dataset_validation():
    with pytest.raises(ValidationError):
        dataset([[0.0], [1.0]], [0, 2], classes=["a", "b"])
    with pytest.raises(ValidationError):
        EmbeddedDataset(embeddings=[[0.0]], labels=[0], predictions=[0], classes=["only"])


def test_projection_requires_orthonormal_basis():
    with pytest.raises(ValidationError):
        Projection(mean=[0.0, 0.0], basis=[[1.0, 1.0]])


# fit_pca / project

def test_full_rank_pca_preserves_variance(rng):
    ds = dataset(rng.normal(size=(50, 3)) * [3.0, 1.0, 0.5], rng.integers(0, 2, 50))
    proj = fit_pca(ds, 3)
    projected = project(proj, ds)
    total = ds.embeddings.var(axis=0, ddof=1).sum()
    assert projected.embeddings.var(axis=0, ddof=1).sum() == pytest.approx(total, abs=1e-10)
    np.testing.assert_allclose(proj.basis @ proj.basis.T, np.eye(3), atol=1e-12)


def test_pca_on_a_line():
    ds = dataset([[0, 0], [1, 1], [2, 2]], [0, 1, 1])
    proj = fit_pca(ds, 1)
    np.testing.assert_allclose(proj.mean, [1, 1])
    np.testing.assert_allclose(proj.basis, [[np.sqrt(0.5), np.sqrt(0.5)]], atol=1e-12)
    np.testing.assert_allclose(project(proj, ds).embeddings[:, 0], [-np.sqrt(2), 0, np.sqrt(2)], atol=1e-12)


def test_pca_sign_convention(rng):
    ds = dataset(rng.normal(size=(40, 4)), rng.integers(0, 2, 40))
    basis = fit_pca(ds, 3).basis
    for row in basis:
        assert row[np.argmax(np.abs(row))] > 0


def test_pca_ignores_uniform_duplication(rng):
    points = rng.normal(size=(30, 4))
    labels = rng.integers(0, 3, 30)
    single = fit_pca(dataset(points, labels, classes=["a", "b", "c"]), 2)
    doubled = fit_pca(dataset(np.vstack([points, points]), np.concatenate([labels, labels]), classes=["a", "b", "c"]), 2)
    np.testing.assert_allclose(single.mean, doubled.mean, atol=1e-12)
    np.testing.assert_allclose(single.basis, doubled.basis, atol=1e-10)


def test_pca_errors(rng):
    ds = dataset(rng.normal(size=(10, 3)), [0, 1] * 5)
    with pytest.raises(ParameterError):
        fit_pca(ds, 4)
    with pytest.raises(ParameterError):
        fit_pca(ds, 0)
    with pytest.raises(DegenerateInputError):
        fit_pca(dataset([[1.0, 2.0]], [0], classes=["a", "b"]), 1)


def test_project_passthrough_and_centering(rng):
    ds = dataset(rng.normal(size=(20, 3)), rng.integers(0, 3, 20), classes=["a", "b", "c"])
    proj = fit_pca(ds, 2)
    projected = project(proj, ds)
    np.testing.assert_array_equal(projected.labels, ds.labels)
    np.testing.assert_array_equal(projected.predictions, ds.predictions)
    assert projected.classes == ds.classes

    centre = dataset([proj.mean], [0], classes=ds.classes)
    np.testing.assert_allclose(project(proj, centre).embeddings, [[0.0, 0.0]], atol=1e-12)

    with pytest.raises(ShapeMismatchError):
        project(proj, dataset(rng.normal(size=(5, 2)), [0, 1, 0, 1, 0]))


def test_axis_aligned_full_projection_reproduces_centered_inputs():
    points = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 1.0], [4.0, 1.0], [2.0, 0.5]])
    ds = dataset(points, [0, 1, 0, 1, 0])
    projected = project(fit_pca(ds, 2), ds)
    np.testing.assert_allclose(projected.embeddings, points - points.mean(axis=0), atol=1e-12)


# scott_bin_widths / build_grid

def test_scott_width_for_unit_spread(rng):
    X = rng.normal(size=(100, 5))
    X = (X - X.mean(axis=0)) / X.std(axis=0, ddof=1)
    widths = scott_bin_widths(X, 5)
    np.testing.assert_allclose(widths, 3.5 * 100 ** (-1 / 7), rtol=1e-12)
    assert widths[0] == pytest.approx(1.8130, abs=5e-4)


def test_scott_width_degenerate_and_scaling(rng):
    X = np.column_stack([rng.normal(size=30), np.full(30, 7.0)])
    widths = scott_bin_widths(X)
    assert widths[1] == DEGENERATE_WIDTH
    assert build_grid(X, widths).shape[1] == 1

    Y = rng.normal(size=(30, 3))
    np.testing.assert_allclose(scott_bin_widths(2 * Y), 2 * scott_bin_widths(Y), rtol=1e-12)


def test_scott_errors():
    with pytest.raises(DegenerateInputError):
        scott_bin_widths(np.zeros((1, 2)))
    with pytest.raises(ParameterError):
        scott_bin_widths(np.zeros((5, 2)), m=3)


def test_grid_anchoring():
    single = build_grid(np.array([[3.0, -1.0]]), [0.5, 2.0])
    np.testing.assert_array_equal(single.cell_indices([[3.0, -1.0]]), [[0, 0]])
    assert single.cell_volume == pytest.approx(1.0, abs=1e-12)

    X = np.array([[0.0, 0.0], [0.7, 2.5], [2.0, 3.0]])
    grid = build_grid(X, [1.0, 1.5])
    np.testing.assert_array_equal(grid.origin, [0.0, 0.0])
    assert grid.shape == (2, 2)
    # the maximum lies exactly on the upper edge of the last cell
    np.testing.assert_array_equal(grid.cell_indices(X), [[0, 0], [0, 1], [1, 1]])
    assert grid.cell_volume == pytest.approx(1.5, abs=1e-12)


def test_grid_errors():
    with pytest.raises(DegenerateInputError):
        build_grid(np.zeros((0, 2)), [1.0, 1.0])
    with pytest.raises(ParameterError):
        build_grid(np.zeros((3, 2)), [1.0, 0.0])
    with pytest.raises(ShapeMismatchError):
        build_grid(np.zeros((3, 2)), [1.0])


# scaled histograms

def test_unit_weight_histogram():
    ds = dataset([[0.1, 0.1], [0.2, 0.5], [0.9, 0.9]], [0, 0, 0], classes=["a", "b"])
    h = build_scaled_histogram(ds, Cluster.by_label(0), unit_weights(2), unit_grid(2))
    assert h.heights == {(0, 0): 3.0}
    assert histogram_volume(h) == 3.0


def test_unnormalized_weights_count_points(rng):
    points = rng.uniform(0, 2, size=(40, 2))
    ds = dataset(points, rng.integers(0, 2, 40), classes=["a", "b"])
    grid = build_grid(points, [0.5, 0.5])
    r = grid.cell_volume
    w = WeightVectors(l=np.full(2, 1 / np.sqrt(r)), p=np.full(2, 1 / np.sqrt(r)))
    h = build_scaled_histogram(ds, Cluster.by_label(1), w, grid)
    cells = grid.cell_indices(points[ds.labels == 1])
    for cell, height in h.heights.items():
        assert height == pytest.approx(np.sum(np.all(cells == cell, axis=1)), abs=1e-9)
    assert histogram_volume(h) == pytest.approx(r * np.sum(ds.labels == 1), abs=1e-9)


def test_row_like_label_histogram_has_unit_volume(rng):
    points = rng.normal(size=(60, 2))
    ds = dataset(points, rng.integers(0, 3, 60), rng.integers(0, 3, 60), classes=["a", "b", "c"])
    grid = build_grid(points, scott_bin_widths(points))
    w = WeightVectors(l=ds.label_counts().astype(float), p=np.ones(3))
    for i in range(3):
        assert histogram_volume(build_scaled_histogram(ds, Cluster.by_label(i), w, grid)) == pytest.approx(1.0, abs=1e-12)


def test_empty_cluster_histogram():
    ds = dataset([[0.0], [1.0]], [0, 1], classes=["a", "b", "c"])
    h = build_scaled_histogram(ds, Cluster.by_prediction(2), unit_weights(3), unit_grid(1))
    assert h.heights == {}
    assert histogram_volume(h) == 0.0


def test_histogram_volume_matches_point_sum(rng, random_dataset):
    """Histogram volume equals sum of 1 / (l_y p_yhat) over the cluster, for random weights."""
    for _ in range(20):
        ds = random_dataset(rng)
        projected, grid = latent_grid(ds, 3)
        w = WeightVectors(l=rng.uniform(0.5, 2, 4), p=rng.uniform(0.5, 2, 4))
        for k in range(4):
            by_label = build_scaled_histogram(projected, Cluster.by_label(k), w, grid)
            mask = ds.labels == k
            direct = np.sum(1.0 / (w.l[ds.labels[mask]] * w.p[ds.predictions[mask]]))
            assert histogram_volume(by_label) == pytest.approx(direct, abs=1e-9)
            by_prediction = build_scaled_histogram(projected, Cluster.by_prediction(k), w, grid)
            mask = ds.predictions == k
            direct = np.sum(1.0 / (w.l[ds.labels[mask]] * w.p[ds.predictions[mask]]))
            assert histogram_volume(by_prediction) == pytest.approx(direct, abs=1e-9)


def test_normalized_variants_have_unit_volume(rng, random_dataset):
    cfg = IpfConfig(tolerance=1e-12, max_steps=20_000)
    for _ in range(20):
        ds = random_dataset(rng)
        M = confusion_from_pairs(ds.labels, ds.predictions, ds.classes)
        projected, grid = latent_grid(ds, 3)
        r = grid.cell_volume
        row_like = variant_weights(GcmVariant.ROW_LIKE, M, r)
        col_like = variant_weights(GcmVariant.COL_LIKE, M, r)
        bis_like = variant_weights(GcmVariant.BIS_LIKE, M, r, eps=1e-9, cfg=cfg)
        for k in range(4):
            volumes = [
                histogram_volume(build_scaled_histogram(projected, Cluster.by_label(k), row_like, grid)),
                histogram_volume(build_scaled_histogram(projected, Cluster.by_prediction(k), col_like, grid)),
                histogram_volume(build_scaled_histogram(projected, Cluster.by_label(k), bis_like, grid)),
                histogram_volume(build_scaled_histogram(projected, Cluster.by_prediction(k), bis_like, grid)),
            ]
            np.testing.assert_allclose(volumes, 1.0, atol=1e-6)


# gcm

def test_gcm_hand_example():
    ds = dataset(np.zeros((4, 1)), [0, 0, 0, 1], [0, 0, 1, 1], classes=["A", "B"])
    G = gcm(ds, unit_grid(1), unit_weights(2))
    np.testing.assert_allclose(G.entries, [[2, 2], [1, 1]])
    assert G.labels == ["A", "B"]


def test_gcm_of_separated_clusters_is_diagonal():
    points = [[0.1], [0.2], [5.5], [5.6], [9.9]]
    ds = dataset(points, [0, 0, 1, 1, 2])
    grid = build_grid(np.asarray(points), [1.0])
    G = gcm(ds, grid, unit_weights(3))
    np.testing.assert_allclose(G.entries, np.diag([2, 2, 1]))


def test_gcm_bounded_by_histogram_volumes(rng, random_dataset):
    ds = random_dataset(rng)
    projected, grid = latent_grid(ds, 2)
    w = WeightVectors(l=rng.uniform(0.5, 2, 4), p=rng.uniform(0.5, 2, 4))
    G = gcm(projected, grid, w).entries
    for i in range(4):
        label_volume = histogram_volume(build_scaled_histogram(projected, Cluster.by_label(i), w, grid))
        for j in range(4):
            prediction_volume = histogram_volume(build_scaled_histogram(projected, Cluster.by_prediction(j), w, grid))
            assert G[i, j] <= min(label_volume, prediction_volume) + 1e-9


def test_gcm_monotone_under_point_removal(rng, random_dataset):
    ds = random_dataset(rng, n_points=120)
    projected, grid = latent_grid(ds, 2)
    w = unit_weights(4)
    full = gcm(projected, grid, w).entries
    for drop in rng.choice(len(ds), size=10, replace=False):
        keep = np.ones(len(ds), dtype=bool)
        keep[drop] = False
        assert np.all(gcm(projected.select(keep), grid, w).entries <= full + 1e-12)


def test_fine_grid_counts_match_confusion_matrix(rng):
    n_points = 50
    # spacing 2 keeps every point in its own cell, including the folded last one
    points = 2.0 * np.column_stack([np.arange(n_points), rng.permutation(n_points)])
    labels = rng.integers(0, 3, n_points)
    predictions = rng.integers(0, 3, n_points)
    ds = dataset(points, labels, predictions, classes=["a", "b", "c"])
    grid = build_grid(points, [1.0, 1.0])
    cells, _, _ = cell_masses(ds, grid, unit_weights(3))
    assert len(cells) == n_points
    G = gcm(ds, grid, unit_weights(3))
    np.testing.assert_allclose(G.entries, confusion_from_pairs(labels, predictions, ds.classes).entries)


# gcm_variants

def separated_dataset(rng, per_class=100):
    centroids = np.array([[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]])
    labels = np.repeat(np.arange(3), per_class)
    points = centroids[labels] + 0.1 * rng.normal(size=(labels.size, 2))
    return dataset(points, labels, labels, classes=["a", "b", "c"])


def test_variants_of_separated_clusters_are_diagonal(rng):
    ds = separated_dataset(rng)
    M = confusion_from_pairs(ds.labels, ds.predictions, ds.classes)
    variants = gcm_variants(ds, M, m=2)
    assert set(variants) == set(GcmVariant)
    for G in variants.values():
        off = G.entries[~np.eye(3, dtype=bool)]
        assert off.sum() <= 1e-12 * G.total


def test_variants_are_deterministic(rng, random_dataset):
    ds = random_dataset(rng)
    M = confusion_from_pairs(ds.labels, ds.predictions, ds.classes)
    first = gcm_variants(ds, M, m=3)
    second = gcm_variants(ds, M, m=3)
    for variant in GcmVariant:
        np.testing.assert_array_equal(first[variant].entries, second[variant].entries)


def test_variants_require_counted_matrix(rng, random_dataset):
    ds = random_dataset(rng)
    M = confusion_from_pairs(ds.labels, ds.predictions, ds.classes)
    np.testing.assert_array_equal(M.row_sums, ds.label_counts())
    np.testing.assert_array_equal(M.col_sums, ds.prediction_counts())
    with pytest.raises(ParameterError):
        gcm_variants(ds, M.with_entries(M.entries + 1.0), m=3)


def test_single_cell_all_like_is_min_of_cluster_sizes(rng):
    labels = rng.integers(0, 3, 30)
    predictions = rng.integers(0, 3, 30)
    ds = dataset(np.ones((30, 4)), labels, predictions, classes=["a", "b", "c"])
    M = confusion_from_pairs(labels, predictions, ds.classes)
    G = gcm_variants(ds, M, m=2, variants=[GcmVariant.ALL_LIKE])[GcmVariant.ALL_LIKE]
    expected = np.minimum(M.row_sums[:, None], M.col_sums[None, :])
    np.testing.assert_allclose(G.entries, expected, atol=1e-12)


def test_empty_prediction_cluster(rng):
    labels = rng.integers(0, 3, 30)
    predictions = rng.integers(0, 2, 30)
    ds = dataset(rng.normal(size=(30, 3)), labels, predictions, classes=["a", "b", "c"])
    M = confusion_from_pairs(labels, predictions, ds.classes)
    with pytest.raises(EmptyClusterError):
        gcm_variants(ds, M, m=2, variants=[GcmVariant.COL_LIKE])
    with pytest.raises(EmptyClusterError):
        gcm_variants(ds, M, m=2)
    assert GcmVariant.ALL_LIKE in gcm_variants(ds, M, m=2, variants=[GcmVariant.ALL_LIKE])
