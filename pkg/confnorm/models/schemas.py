from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator

from confnorm.core.config import config

# named Dirichlet concentrations, least to most heterogeneous
HETEROGENEITY_LEVELS: Dict[str, float] = {
    "very_low": 10.0,
    "low": 3.0,
    "medium": 1.0,
    "high": 0.3,
    "extreme": 0.1,
}


def _frozen_array(value, dtype=np.float64) -> np.ndarray:
    """Copy `value` into a read-only array of the given dtype."""
    try:
        raw = np.array(value)
        arr = raw.astype(dtype)
    except (TypeError, ValueError) as e:
        raise ValueError(f"not a numeric array: {e}")
    if np.issubdtype(dtype, np.integer) and raw.size and not np.all(raw == arr):
        raise ValueError("expected integer values")
    if np.issubdtype(dtype, np.floating) and not np.all(np.isfinite(arr)):
        raise ValueError("array contains non-finite values")
    arr.flags.writeable = False
    return arr


class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class NormalizationKind(str, Enum):
    ROW = "row"
    COL = "col"
    ALL = "all"
    BIS = "bis"


class GcmVariant(str, Enum):
    """GCM weightings; each value names the normalization it mirrors."""

    ALL_LIKE = "all"
    ROW_LIKE = "row"
    COL_LIKE = "col"
    BIS_LIKE = "bis"

    @property
    def normalization(self) -> NormalizationKind:
        return NormalizationKind(self.value)


class ConfusionMatrix(_ArrayModel):
    entries: np.ndarray
    labels: List[str] = Field(default_factory=list, validate_default=True)

    @field_validator("entries", mode="before")
    @classmethod
    def _coerce_entries(cls, value):
        return _frozen_array(value)

    @field_validator("entries")
    @classmethod
    def _check_entries(cls, entries: np.ndarray):
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError(f"confusion matrix must be square, got shape {entries.shape}")
        if entries.shape[0] < 2:
            raise ValueError("confusion matrix needs at least 2 classes")
        if np.any(entries < 0):
            raise ValueError("confusion matrix entries must be nonnegative")
        if entries.sum() <= 0:
            raise ValueError("confusion matrix total must be positive")
        return entries

    @field_validator("labels")
    @classmethod
    def _check_labels(cls, labels: List[str], info: ValidationInfo):
        entries = info.data.get("entries")
        if entries is None:
            return labels
        n_classes = entries.shape[0]
        if not labels:
            return [str(i) for i in range(n_classes)]
        if len(labels) != n_classes:
            raise ValueError(f"expected {n_classes} labels, got {len(labels)}")
        if len(set(labels)) != len(labels):
            raise ValueError("labels must be unique")
        return labels

    @property
    def n_classes(self) -> int:
        return self.entries.shape[0]

    @property
    def total(self) -> float:
        return float(self.entries.sum())

    @property
    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.entries.sum(axis=0)

    def with_entries(self, entries) -> "ConfusionMatrix":
        return ConfusionMatrix(entries=entries, labels=self.labels)


class IpfConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    tolerance: float = Field(default_factory=lambda: config.DEFAULT_TOLERANCE, gt=0)
    max_steps: int = Field(default_factory=lambda: config.DEFAULT_MAX_STEPS, ge=2)

    @field_validator("max_steps")
    @classmethod
    def _even_steps(cls, max_steps: int):
        # one sweep (row + column update) counts as two steps
        if max_steps % 2:
            raise ValueError("max_steps must be even")
        return max_steps


class IpfResult(_ArrayModel):
    matrix: np.ndarray
    row_scales: np.ndarray
    col_scales: np.ndarray
    steps: int
    residual: float
    converged: bool
    residuals: List[float] = Field(default_factory=list)

    @field_validator("matrix", "row_scales", "col_scales", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _frozen_array(value)


class ScalingWeights(_ArrayModel):
    a: np.ndarray
    b: np.ndarray

    @field_validator("a", "b", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _frozen_array(value)

    @field_validator("a", "b")
    @classmethod
    def _positive(cls, value: np.ndarray):
        if value.ndim != 1 or np.any(value <= 0):
            raise ValueError("scaling weights must be a positive vector")
        return value


class EmbeddedDataset(_ArrayModel):
    """Point cloud of (embedding, true label, predicted label) records."""

    embeddings: np.ndarray
    labels: np.ndarray
    predictions: np.ndarray
    classes: List[str]

    @field_validator("embeddings", mode="before")
    @classmethod
    def _coerce_embeddings(cls, value):
        return _frozen_array(value)

    @field_validator("labels", "predictions", mode="before")
    @classmethod
    def _coerce_indices(cls, value):
        return _frozen_array(value, dtype=np.int64)

    @field_validator("embeddings")
    @classmethod
    def _check_embeddings(cls, embeddings: np.ndarray):
        if embeddings.ndim != 2 or embeddings.shape[0] < 1 or embeddings.shape[1] < 1:
            raise ValueError(f"embeddings must be a non-empty N x n array, got shape {embeddings.shape}")
        return embeddings

    @model_validator(mode="after")
    def _check_records(self):
        n_points = self.embeddings.shape[0]
        n_classes = len(self.classes)
        if n_classes < 2:
            raise ValueError("dataset needs at least 2 classes")
        if len(set(self.classes)) != n_classes:
            raise ValueError("class names must be unique")
        for name, arr in (("labels", self.labels), ("predictions", self.predictions)):
            if arr.shape != (n_points,):
                raise ValueError(f"{name} must hold one entry per point")
            if np.any(arr < 0) or np.any(arr >= n_classes):
                raise ValueError(f"{name} must lie in [0, {n_classes})")
        return self

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def label_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def prediction_counts(self) -> np.ndarray:
        return np.bincount(self.predictions, minlength=self.n_classes)

    def select(self, mask) -> "EmbeddedDataset":
        mask = np.asarray(mask)
        return EmbeddedDataset(
            embeddings=self.embeddings[mask],
            labels=self.labels[mask],
            predictions=self.predictions[mask],
            classes=self.classes,
        )


class Projection(_ArrayModel):
    mean: np.ndarray
    basis: np.ndarray

    @field_validator("mean", "basis", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check_basis(self):
        if self.basis.ndim != 2 or self.mean.shape != (self.basis.shape[1],):
            raise ValueError("basis must be m x n with a length-n mean")
        if self.basis.shape[0] > self.basis.shape[1]:
            raise ValueError("projection dimension m cannot exceed n")
        gram = self.basis @ self.basis.T
        if not np.allclose(gram, np.eye(self.m), atol=1e-10, rtol=0):
            raise ValueError("basis rows must be orthonormal")
        return self

    @property
    def m(self) -> int:
        return self.basis.shape[0]


class Grid(_ArrayModel):
    """Regular grid of hyperrectangles anchored at `origin`."""

    origin: np.ndarray
    widths: np.ndarray
    shape: Tuple[int, ...]

    @field_validator("origin", "widths", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check(self):
        if self.widths.ndim != 1 or self.origin.shape != self.widths.shape:
            raise ValueError("origin and widths must be vectors of the same length")
        if np.any(self.widths <= 0):
            raise ValueError("bin widths must be positive")
        if len(self.shape) != self.widths.size or any(s < 1 for s in self.shape):
            raise ValueError("grid shape must give at least one cell per dimension")
        return self

    @property
    def m(self) -> int:
        return self.widths.size

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    def cell_indices(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        idx = np.floor((points - self.origin) / self.widths).astype(np.int64)
        # upper edge of the last cell folds inward
        upper = np.asarray(self.shape, dtype=np.int64)
        return np.where(idx == upper, upper - 1, idx)


class ScaledHistogram(BaseModel):
    model_config = ConfigDict(frozen=True)

    grid: Grid
    heights: Dict[Tuple[int, ...], float] = Field(default_factory=dict)

    @field_validator("heights")
    @classmethod
    def _positive_heights(cls, heights):
        if any(h <= 0 for h in heights.values()):
            raise ValueError("stored heights must be positive")
        return heights


class WeightVectors(_ArrayModel):
    l: np.ndarray
    p: np.ndarray

    @field_validator("l", "p", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check(self):
        if self.l.ndim != 1 or self.l.shape != self.p.shape:
            raise ValueError("weight vectors must have the same length")
        if np.any(self.l <= 0) or np.any(self.p <= 0):
            raise ValueError("weight vectors must be strictly positive")
        return self


class ClusterKind(str, Enum):
    LABEL = "label"
    PREDICTION = "prediction"


class Cluster(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ClusterKind
    index: int = Field(ge=0)

    @classmethod
    def by_label(cls, i: int) -> "Cluster":
        return cls(kind=ClusterKind.LABEL, index=i)

    @classmethod
    def by_prediction(cls, j: int) -> "Cluster":
        return cls(kind=ClusterKind.PREDICTION, index=j)


class HeterogeneityConfig(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    alpha: float = Field(gt=0)
    n_classes: int = Field(alias="C", ge=2)
    base_per_class: int = Field(ge=1)
    floor_fraction: float = Field(0.15, ge=0, lt=1)
    seed: int = 0


class SimilarityKernel(_ArrayModel):
    matrix: np.ndarray

    @field_validator("matrix", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _frozen_array(value)

    @field_validator("matrix")
    @classmethod
    def _row_stochastic(cls, matrix: np.ndarray):
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("kernel must be square")
        if np.any(matrix < 0):
            raise ValueError("kernel entries must be nonnegative")
        if not np.allclose(matrix.sum(axis=1), 1.0, atol=1e-12, rtol=0):
            raise ValueError("kernel rows must sum to 1")
        return matrix

    @property
    def n_classes(self) -> int:
        return self.matrix.shape[0]


class EmbeddingSpec(_ArrayModel):
    centroids: np.ndarray
    spread: float = Field(gt=0)
    counts: np.ndarray
    seed: int = 0
    prediction_bias: Optional[np.ndarray] = None

    @field_validator("centroids", mode="before")
    @classmethod
    def _coerce_centroids(cls, value):
        return _frozen_array(value)

    @field_validator("counts", mode="before")
    @classmethod
    def _coerce_counts(cls, value):
        return _frozen_array(value, dtype=np.int64)

    @field_validator("prediction_bias", mode="before")
    @classmethod
    def _coerce_bias(cls, value):
        return None if value is None else _frozen_array(value)

    @model_validator(mode="after")
    def _check(self):
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 2:
            raise ValueError("centroids must be a C x n array with C >= 2")
        n_classes = self.centroids.shape[0]
        if self.counts.shape != (n_classes,) or np.any(self.counts < 1):
            raise ValueError("counts must hold a positive count per centroid")
        if self.prediction_bias is not None:
            if self.prediction_bias.shape != (n_classes,) or np.any(self.prediction_bias <= 0):
                raise ValueError("prediction_bias must be a positive vector per centroid")
        return self


class ScenarioConfig(BaseModel):
    """Experiment scenario, as read from the scenario JSON file."""

    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    alpha: float = Field(0.1, gt=0)
    # heterogeneity levels swept by the CLI; an explicit alpha alone narrows it to that level
    alphas: List[float] = Field(default_factory=lambda: list(HETEROGENEITY_LEVELS.values()), min_length=1)
    n_classes: int = Field(10, alias="C", ge=2)
    base_per_class: int = Field(100, ge=1)
    floor_fraction: float = Field(0.15, ge=0, lt=1)
    similarity_strength: float = Field(0.4, ge=0, lt=1)
    confusable_pairs: List[Tuple[int, int]] = Field(default_factory=lambda: [(0, 1), (2, 3), (4, 5)])
    noise_level: float = Field(0.02, ge=0, le=0.5)
    prediction_bias: float = Field(1.4, ge=0)
    spread: float = Field(1.0, gt=0)
    separation: float = Field(0.6, gt=0)
    embedding_dim: int = Field(10, ge=1)
    projection_dim: int = Field(default_factory=lambda: config.DEFAULT_PROJECTION_DIM, ge=1)
    smoothing: float = Field(1e-3, gt=0)
    tolerance: float = Field(1e-9, gt=0)
    max_steps: int = Field(200_000, ge=2)
    n_seeds: int = Field(100, ge=1)
    seed: int = 0

    @model_validator(mode="before")
    @classmethod
    def _single_level(cls, data):
        if isinstance(data, dict) and "alpha" in data and "alphas" not in data:
            return {**data, "alphas": [data["alpha"]]}
        return data

    @field_validator("alphas")
    @classmethod
    def _check_alphas(cls, alphas: List[float]):
        if any(not a > 0 for a in alphas):
            raise ValueError("every alpha must be positive")
        if len(set(alphas)) != len(alphas):
            raise ValueError("alphas must be distinct")
        return alphas

    @model_validator(mode="after")
    def _check(self):
        seen = set()
        for i, j in self.confusable_pairs:
            if i == j or not (0 <= i < self.n_classes and 0 <= j < self.n_classes):
                raise ValueError(f"invalid confusable pair ({i}, {j})")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate confusable pair ({i}, {j})")
            seen.add(key)
        if self.projection_dim > self.embedding_dim:
            raise ValueError("projection_dim cannot exceed embedding_dim")
        if self.max_steps % 2:
            raise ValueError("max_steps must be even")
        return self

    @property
    def seeds(self) -> List[int]:
        return list(range(self.seed, self.seed + self.n_seeds))

    def ipf_config(self) -> IpfConfig:
        return IpfConfig(tolerance=self.tolerance, max_steps=self.max_steps)

    def levels(self) -> List["ScenarioConfig"]:
        """One copy of the scenario per entry of `alphas`, in sweep order."""
        return [self.model_copy(update={"alpha": alpha}) for alpha in self.alphas]


class SummaryRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: str
    min: float
    q1: float
    median: float
    q3: float
    max: float
    win_rate: float


class ExperimentReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    metric: str = "overlap"
    scenario: ScenarioConfig
    seeds: List[int]
    scores: Dict[str, List[float]]
    summary: List[SummaryRow] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self):
        for kind, values in self.scores.items():
            if len(values) != len(self.seeds):
                raise ValueError(f"score list for {kind} does not match the seed count")
            if any(not 0.0 <= v <= 1.0 for v in values):
                raise ValueError(f"scores for {kind} must lie in [0, 1]")
        return self


class TrialRecord(BaseModel):
    """Scores and representative matrices of one experiment seed."""

    model_config = ConfigDict(frozen=True)

    seed: int
    scores: Dict[str, Dict[str, float]]
    matrices: Dict[str, ConfusionMatrix]
    dataset: Optional[EmbeddedDataset] = None
