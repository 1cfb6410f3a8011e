"""Synthetic stand-ins for a trained classifier.

Every sampler draws from its own PCG64 stream keyed by (seed, stream id), so
results do not depend on call order and reproduce across machines.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from confnorm.core.errors import ParameterError, ShapeMismatchError
from confnorm.models.schemas import (
    ConfusionMatrix,
    EmbeddedDataset,
    EmbeddingSpec,
    HETEROGENEITY_LEVELS,
    HeterogeneityConfig,
    SimilarityKernel,
)

logger = logging.getLogger(__name__)

STREAMS: Dict[str, int] = {
    "counts": 1,
    "kernel": 2,
    "confusion": 3,
    "embeddings": 4,
    "bias": 5,
    "centroids": 6,
}


def stream(seed: int, name: str) -> np.random.Generator:
    if seed < 0:
        raise ParameterError(f"seed must be nonnegative, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, STREAMS[name]])))


def resolve_alpha(value) -> float:
    """Accept a Dirichlet concentration or one of the named heterogeneity levels."""
    if isinstance(value, str):
        if value in HETEROGENEITY_LEVELS:
            return HETEROGENEITY_LEVELS[value]
        try:
            value = float(value)
        except ValueError:
            raise ParameterError(f"unknown heterogeneity level {value!r}; use one of {list(HETEROGENEITY_LEVELS)}")
    if not value > 0:
        raise ParameterError(f"alpha must be positive, got {value}")
    return float(value)


def sample_class_counts(cfg: HeterogeneityConfig) -> np.ndarray:
    """Per-class sample counts: a floor for every class, the rest split by a Dirichlet(alpha) draw.

    Totals C * base_per_class exactly.
    """
    rng = stream(cfg.seed, "counts")
    floor = int(np.floor(cfg.floor_fraction * cfg.base_per_class))
    remainder = cfg.n_classes * (cfg.base_per_class - floor)
    probs = rng.dirichlet(np.full(cfg.n_classes, cfg.alpha))
    probs = probs / probs.sum()
    counts = floor + rng.multinomial(remainder, probs)
    return counts.astype(np.int64)


def _validated_pairs(n_classes: int, pairs: Sequence[Tuple[int, int]]) -> List[Tuple[int, int]]:
    seen = set()
    for i, j in pairs:
        if i == j or not (0 <= i < n_classes and 0 <= j < n_classes):
            raise ParameterError(f"invalid confusable pair ({i}, {j}) for {n_classes} classes")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ParameterError(f"duplicate confusable pair ({i}, {j})")
        seen.add(key)
    return sorted(seen)


def sample_similarity_kernel(
    n_classes: int,
    similarity_strength: float,
    confusable_pairs: Sequence[Tuple[int, int]],
    seed: int,
    noise_level: float = 0.02,
) -> SimilarityKernel:
    """Symmetric, doubly stochastic kernel with elevated mass on the confusable pairs.

    A class with k partners sends strength / 2 of its mass to them in total, a
    symmetric background noise of at most noise_level * (1 - strength) is spread
    over the other classes, and the diagonal takes what is left.
    """
    if not 0 <= similarity_strength < 1:
        raise ParameterError(f"similarity_strength must lie in [0, 1), got {similarity_strength}")
    if not 0 <= noise_level <= 0.5:
        raise ParameterError(f"noise_level must lie in [0, 0.5], got {noise_level}")
    if n_classes < 2:
        raise ParameterError("a kernel needs at least 2 classes")
    pairs = _validated_pairs(n_classes, confusable_pairs)

    degree = np.zeros(n_classes)
    for i, j in pairs:
        degree[i] += 1
        degree[j] += 1
    S = np.zeros((n_classes, n_classes))
    for i, j in pairs:
        S[i, j] = S[j, i] = 0.5 * similarity_strength / max(degree[i], degree[j])

    rng = stream(seed, "kernel")
    U = rng.random((n_classes, n_classes))
    noise = noise_level * (1 - similarity_strength) / (n_classes - 1) * (U + U.T) / 2
    np.fill_diagonal(noise, 0.0)
    S += noise
    np.fill_diagonal(S, 1.0 - S.sum(axis=1))
    return SimilarityKernel(matrix=S)


def sample_prediction_bias(n_classes: int, strength: float, seed: int) -> np.ndarray:
    """Log-uniform over/under-prediction factors exp(U(-strength, strength))."""
    if strength < 0:
        raise ParameterError(f"bias strength must be nonnegative, got {strength}")
    rng = stream(seed, "bias")
    return np.exp(rng.uniform(-strength, strength, size=n_classes))


def simulate_confusion(
    S: SimilarityKernel,
    label_counts,
    prediction_bias,
    seed: int,
    labels: Optional[List[str]] = None,
) -> ConfusionMatrix:
    """Row i is a multinomial draw of label_counts[i] predictions with p_ij proportional to S_ij * bias_j."""
    counts = np.asarray(label_counts)
    bias = np.asarray(prediction_bias, dtype=np.float64)
    if counts.shape != (S.n_classes,) or bias.shape != (S.n_classes,):
        raise ShapeMismatchError(f"label counts and bias must have length {S.n_classes}")
    if np.any(counts < 0) or not np.all(counts == np.round(counts)):
        raise ParameterError("label counts must be nonnegative integers")
    if np.any(bias <= 0):
        raise ParameterError("prediction bias must be strictly positive")

    probs = S.matrix * bias[None, :]
    probs /= probs.sum(axis=1, keepdims=True)
    rng = stream(seed, "confusion")
    entries = np.vstack([rng.multinomial(int(n), p) for n, p in zip(counts, probs)]).astype(np.float64)
    return ConfusionMatrix(entries=entries, labels=labels or [])


def sample_centroids(n_classes: int, dim: int, separation: float, seed: int) -> np.ndarray:
    if separation <= 0:
        raise ParameterError(f"separation must be positive, got {separation}")
    rng = stream(seed, "centroids")
    return rng.normal(0.0, separation, size=(n_classes, dim))


def generate_embeddings(spec: EmbeddingSpec) -> EmbeddedDataset:
    """Isotropic Gaussian clusters around the centroids, predicted by (biased) nearest centroid.

    The prediction minimizes ||x - mu_j||^2 / (2 spread^2) - ln bias_j; exact ties
    are broken uniformly at random.
    """
    rng = stream(spec.seed, "embeddings")
    n_classes, dim = spec.centroids.shape
    labels = np.repeat(np.arange(n_classes), spec.counts)
    points = spec.centroids[labels] + spec.spread * rng.standard_normal((labels.size, dim))

    scores = np.empty((labels.size, n_classes))
    for k in range(n_classes):
        scores[:, k] = ((points - spec.centroids[k]) ** 2).sum(axis=1) / (2 * spec.spread ** 2)
    if spec.prediction_bias is not None:
        scores -= np.log(spec.prediction_bias)[None, :]
    ties = scores == scores.min(axis=1, keepdims=True)
    tie_break = rng.random(scores.shape)
    predictions = np.argmax(np.where(ties, tie_break, -1.0), axis=1)

    logger.debug(f"generated {labels.size} points in {dim} dimensions for {n_classes} classes")
    return EmbeddedDataset(
        embeddings=points,
        labels=labels,
        predictions=predictions,
        classes=[str(k) for k in range(n_classes)],
    )
