"""Latent-space view of a classifier: class clusters as scaled histograms.

Points are projected with PCA, binned on a regular grid whose cell sides follow
Scott's rule, and every point carries the weight 1 / (r * l_y * p_yhat). The
Geometric Confusion Matrix compares label cluster i with prediction cluster j
through the overlap (sum of cellwise minima) of their scaled histograms.
"""
import logging
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np

from confnorm.core.config import config
from confnorm.core.errors import (
    DegenerateInputError,
    EmptyClusterError,
    ParameterError,
    ShapeMismatchError,
)
from confnorm.core.matrix import confusion_from_pairs
from confnorm.core.scaling import scaling_weights
from confnorm.models.schemas import (
    Cluster,
    ClusterKind,
    ConfusionMatrix,
    EmbeddedDataset,
    GcmVariant,
    Grid,
    IpfConfig,
    Projection,
    ScaledHistogram,
    WeightVectors,
)

logger = logging.getLogger(__name__)

SCOTT_FACTOR = 3.5
# bin width used along dimensions without spread (one bin covers everything)
DEGENERATE_WIDTH = 1.0

Points = Union[EmbeddedDataset, np.ndarray]


def _points(points: Points) -> np.ndarray:
    if isinstance(points, EmbeddedDataset):
        return points.embeddings
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    return points


def fit_pca(ds: EmbeddedDataset, m: int) -> Projection:
    """Top-m principal directions of the embeddings, each signed so its largest coordinate is positive."""
    if m < 1 or m > ds.dim:
        raise ParameterError(f"projection dimension m={m} must lie in [1, {ds.dim}]")
    if len(ds) < 2:
        raise DegenerateInputError("PCA needs at least 2 points")

    X = ds.embeddings
    mean = X.mean(axis=0)
    centered = X - mean
    covariance = centered.T @ centered / (len(ds) - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues, kind="stable")[::-1][:m]
    basis = eigenvectors[:, order].T.copy()
    for row in basis:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    logger.debug(f"PCA kept {m}/{ds.dim} directions, explained variance {eigenvalues[order].sum():.4g}")
    return Projection(mean=mean, basis=basis)


def project(proj: Projection, ds: EmbeddedDataset) -> EmbeddedDataset:
    if ds.dim != proj.mean.size:
        raise ShapeMismatchError(f"dataset has dimension {ds.dim}, projection expects {proj.mean.size}")
    return EmbeddedDataset(
        embeddings=(ds.embeddings - proj.mean) @ proj.basis.T,
        labels=ds.labels,
        predictions=ds.predictions,
        classes=ds.classes,
    )


def scott_bin_widths(points: Points, m: Optional[int] = None) -> np.ndarray:
    """Per-dimension bin widths 3.5 * sigma_k * n^(-1 / (2 + m))."""
    X = _points(points)
    n_points, dim = X.shape
    if m is None:
        m = dim
    elif m != dim:
        raise ParameterError(f"points have dimension {dim}, got m={m}")
    if n_points < 2:
        raise DegenerateInputError("Scott's rule needs at least 2 points")
    sigma = X.std(axis=0, ddof=1)
    widths = SCOTT_FACTOR * sigma * n_points ** (-1.0 / (2 + m))
    return np.where(sigma > 0, widths, DEGENERATE_WIDTH)


def build_grid(points: Points, widths) -> Grid:
    X = _points(points)
    if X.shape[0] == 0:
        raise DegenerateInputError("cannot anchor a grid on an empty point set")
    widths = np.asarray(widths, dtype=np.float64)
    if widths.shape != (X.shape[1],):
        raise ShapeMismatchError(f"expected {X.shape[1]} widths, got {widths.shape}")
    if np.any(widths <= 0):
        raise ParameterError("bin widths must be positive")
    origin = X.min(axis=0)
    extent = (X.max(axis=0) - origin) / widths
    shape = tuple(max(1, int(np.ceil(e))) for e in extent)
    return Grid(origin=origin, widths=widths, shape=shape)


def _point_weights(ds: EmbeddedDataset, w: WeightVectors) -> np.ndarray:
    """1 / (l_y p_yhat): a point's contribution to a histogram volume."""
    if w.l.size != ds.n_classes:
        raise ShapeMismatchError(f"weights have length {w.l.size}, dataset has {ds.n_classes} classes")
    return 1.0 / (w.l[ds.labels] * w.p[ds.predictions])


def cell_masses(ds: EmbeddedDataset, grid: Grid, w: WeightVectors) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Occupied cells with per-class label and prediction masses.

    Returns (cells, label_mass, prediction_mass): cells is K x m, the masses are
    K x C and hold sum of 1 / (l_y p_yhat) per cell, i.e. r times the bin height.
    """
    if ds.dim != grid.m:
        raise ShapeMismatchError(f"dataset has dimension {ds.dim}, grid has {grid.m}")
    indices = grid.cell_indices(ds.embeddings)
    cells, inverse = np.unique(indices, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    weights = _point_weights(ds, w)
    label_mass = np.zeros((cells.shape[0], ds.n_classes))
    prediction_mass = np.zeros((cells.shape[0], ds.n_classes))
    np.add.at(label_mass, (inverse, ds.labels), weights)
    np.add.at(prediction_mass, (inverse, ds.predictions), weights)
    return cells, label_mass, prediction_mass


def build_scaled_histogram(ds: EmbeddedDataset, cluster: Cluster, w: WeightVectors, grid: Grid) -> ScaledHistogram:
    if cluster.index >= ds.n_classes:
        raise ParameterError(f"cluster index {cluster.index} out of range for {ds.n_classes} classes")
    cells, label_mass, prediction_mass = cell_masses(ds, grid, w)
    masses = label_mass if cluster.kind is ClusterKind.LABEL else prediction_mass
    column = masses[:, cluster.index]
    r = grid.cell_volume
    heights = {tuple(int(k) for k in cell): float(mass / r) for cell, mass in zip(cells, column) if mass > 0}
    return ScaledHistogram(grid=grid, heights=heights)


def histogram_volume(h: ScaledHistogram) -> float:
    """Lebesgue measure of the histogram: cell volume times the sum of heights."""
    return h.grid.cell_volume * float(sum(h.heights.values()))


def gcm(ds: EmbeddedDataset, grid: Grid, w: WeightVectors) -> ConfusionMatrix:
    """Geometric Confusion Matrix: entry (i, j) is the overlap of label cluster i and prediction cluster j."""
    _, label_mass, prediction_mass = cell_masses(ds, grid, w)
    entries = np.empty((ds.n_classes, ds.n_classes))
    for i in range(ds.n_classes):
        entries[i] = np.minimum(label_mass[:, i, None], prediction_mass).sum(axis=0)
    return ConfusionMatrix(entries=entries, labels=ds.classes)


def latent_grid(ds: EmbeddedDataset, m: Optional[int] = None) -> Tuple[EmbeddedDataset, Grid]:
    """Project ds onto its top-m principal directions and lay a Scott-rule grid over the result."""
    m = config.DEFAULT_PROJECTION_DIM if m is None else m
    projected = project(fit_pca(ds, m), ds)
    widths = scott_bin_widths(projected.embeddings, m)
    return projected, build_grid(projected.embeddings, widths)


def _check_clusters(ds: EmbeddedDataset, name: str, sizes: np.ndarray) -> None:
    empty = [ds.classes[k] for k in np.flatnonzero(sizes == 0)]
    if empty:
        raise EmptyClusterError(f"empty {name} cluster(s) {empty}")


def variant_weights(
    variant: GcmVariant,
    M: ConfusionMatrix,
    r: float,
    eps: Optional[float] = None,
    cfg: Optional[IpfConfig] = None,
) -> WeightVectors:
    """Weight vectors (l, p) of a GCM variant for counted confusion matrix M and cell volume r."""
    ones = np.ones(M.n_classes)
    if variant is GcmVariant.ALL_LIKE:
        return WeightVectors(l=ones / np.sqrt(r), p=ones / np.sqrt(r))
    if variant is GcmVariant.ROW_LIKE:
        return WeightVectors(l=M.row_sums, p=ones)
    if variant is GcmVariant.COL_LIKE:
        return WeightVectors(l=ones, p=M.col_sums)
    weights = scaling_weights(M, eps, cfg)
    return WeightVectors(l=weights.a, p=weights.b)


def gcm_variants(
    ds: EmbeddedDataset,
    M: ConfusionMatrix,
    m: Optional[int] = None,
    cfg: Optional[IpfConfig] = None,
    eps: Optional[float] = None,
    variants: Optional[Iterable[GcmVariant]] = None,
) -> Dict[GcmVariant, ConfusionMatrix]:
    """GCM weightings mirroring all, row, col and bis normalization of M (all four unless `variants` narrows it)."""
    variants = list(GcmVariant) if variants is None else [GcmVariant(v) for v in variants]
    counted = confusion_from_pairs(ds.labels, ds.predictions, ds.classes)
    if M.entries.shape != counted.entries.shape or not np.array_equal(M.entries, counted.entries):
        raise ParameterError("confusion matrix does not match the dataset's (label, prediction) counts")
    if {GcmVariant.ROW_LIKE, GcmVariant.BIS_LIKE} & set(variants):
        _check_clusters(ds, "label", counted.row_sums)
    if {GcmVariant.COL_LIKE, GcmVariant.BIS_LIKE} & set(variants):
        _check_clusters(ds, "prediction", counted.col_sums)

    projected, grid = latent_grid(ds, m)
    r = grid.cell_volume
    logger.debug(f"GCM grid {grid.shape} with cell volume {r:.4g} over {len(ds)} points")
    return {variant: gcm(projected, grid, variant_weights(variant, counted, r, eps, cfg)) for variant in variants}
