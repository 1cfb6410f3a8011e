import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from confnorm.core.config import config
from confnorm.core.errors import DegenerateInputError, DomainError, ParameterError, ShapeMismatchError
from confnorm.models.schemas import ConfusionMatrix, NormalizationKind

logger = logging.getLogger(__name__)


def default_eps(M: ConfusionMatrix) -> float:
    """Smoothing constant that scales with the matrix mass."""
    return max(config.EPS_FACTOR * M.total / M.n_classes ** 2, config.EPS_FLOOR)


def smooth(M: ConfusionMatrix, eps: Optional[float] = None) -> ConfusionMatrix:
    """Return M + eps (every entry shifted), making the matrix strictly positive."""
    if eps is None:
        eps = default_eps(M)
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    return M.with_entries(M.entries + eps)


def row_normalize(M: ConfusionMatrix) -> ConfusionMatrix:
    rows = M.row_sums
    if np.any(rows <= 0):
        zero = [M.labels[i] for i in np.flatnonzero(rows <= 0)]
        raise DegenerateInputError(f"zero row(s) {zero}: smooth the matrix before row normalization")
    return M.with_entries(M.entries / rows[:, None])


def col_normalize(M: ConfusionMatrix) -> ConfusionMatrix:
    cols = M.col_sums
    if np.any(cols <= 0):
        zero = [M.labels[j] for j in np.flatnonzero(cols <= 0)]
        raise DegenerateInputError(f"zero column(s) {zero}: smooth the matrix before column normalization")
    return M.with_entries(M.entries / cols[None, :])


def all_normalize(M: ConfusionMatrix) -> ConfusionMatrix:
    return M.with_entries(M.entries / M.total)


def _as_array(M) -> np.ndarray:
    return M.entries if isinstance(M, ConfusionMatrix) else np.asarray(M, dtype=np.float64)


def _same_shape(P: np.ndarray, Q: np.ndarray) -> None:
    if P.shape != Q.shape:
        raise ShapeMismatchError(f"shape mismatch: {P.shape} vs {Q.shape}")


def kl_divergence(P, M) -> float:
    """Generalized I-divergence sum(P ln(P/M) - P + M), with 0 ln 0 = 0.

    Accepts ConfusionMatrix values or raw arrays (the latter so that
    candidate matrices which are not valid confusion matrices can be scored).
    """
    P, M = _as_array(P), _as_array(M)
    _same_shape(P, M)
    if np.any(M <= 0):
        raise DomainError("I-divergence reference must be strictly positive")
    if np.any(P < 0):
        raise DomainError("I-divergence argument must be nonnegative")
    positive = P > 0
    log_term = np.zeros_like(P)
    log_term[positive] = P[positive] * np.log(P[positive] / M[positive])
    return float(np.sum(log_term - P + M))


def _all_normalized_pair(P, Q) -> Tuple[np.ndarray, np.ndarray]:
    P, Q = _as_array(P), _as_array(Q)
    _same_shape(P, Q)
    p_total, q_total = P.sum(), Q.sum()
    if p_total <= 0 or q_total <= 0:
        raise DegenerateInputError("overlap needs matrices with positive total")
    return P / p_total, Q / q_total


def overlap(P, Q) -> float:
    """Sum of entrywise minima of all(P) and all(Q); 1 iff all(P) = all(Q)."""
    p, q = _all_normalized_pair(P, Q)
    return float(min(max(np.minimum(p, q).sum(), 0.0), 1.0))


def offdiagonal(M) -> np.ndarray:
    """Copy of the entries with the diagonal zeroed."""
    entries = np.array(_as_array(M), dtype=np.float64)
    np.fill_diagonal(entries, 0.0)
    return entries


def offdiag_overlap(P, Q) -> Optional[float]:
    """Overlap of the off-diagonal parts; None when either part is all zero."""
    p, q = offdiagonal(P), offdiagonal(Q)
    _same_shape(p, q)
    if p.sum() <= 0 or q.sum() <= 0:
        logger.debug("off-diagonal overlap undefined: empty off-diagonal part")
        return None
    return overlap(p, q)


def l1_distance(P, Q) -> float:
    p, q = _all_normalized_pair(P, Q)
    return float(np.abs(p - q).sum())


def confusion_from_pairs(labels: Sequence[int], predictions: Sequence[int], classes: Sequence[str]) -> ConfusionMatrix:
    """Tally (true, predicted) index pairs into a confusion matrix."""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape:
        raise ShapeMismatchError("labels and predictions must have the same length")
    n_classes = len(classes)
    entries = np.zeros((n_classes, n_classes))
    np.add.at(entries, (labels, predictions), 1.0)
    return ConfusionMatrix(entries=entries, labels=list(classes))


def marginal_targets(M: ConfusionMatrix, kind: NormalizationKind) -> Tuple[np.ndarray, np.ndarray]:
    """Row and column targets under which `kind` is the I-divergence projection of M.

    row(M), col(M) and all(M) are diagonal rescalings of M, so each one is the
    unique minimizer of the I-divergence to M among matrices sharing its own
    marginals; bis(M) is defined by unit marginals.
    """
    n_classes = M.n_classes
    if kind is NormalizationKind.ROW:
        return np.ones(n_classes), row_normalize(M).col_sums
    if kind is NormalizationKind.COL:
        return col_normalize(M).row_sums, np.ones(n_classes)
    if kind is NormalizationKind.ALL:
        return M.row_sums / M.total, M.col_sums / M.total
    return np.ones(n_classes), np.ones(n_classes)
