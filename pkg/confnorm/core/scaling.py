import logging
from typing import Dict, List, Optional, Tuple

import numpy as np

from confnorm.core.errors import (
    DomainError,
    InfeasibleMarginalsError,
    NonConvergenceError,
    ParameterError,
    ShapeMismatchError,
)
from confnorm.core.matrix import all_normalize, col_normalize, row_normalize, smooth
from confnorm.models.schemas import ConfusionMatrix, IpfConfig, IpfResult, NormalizationKind, ScalingWeights

logger = logging.getLogger(__name__)

# relative tolerance on u_+ = v_+
FEASIBILITY_RTOL = 1e-9


def _validated_problem(M, u, v) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    entries = M.entries if isinstance(M, ConfusionMatrix) else np.asarray(M, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n_classes = entries.shape[0]
    if entries.ndim != 2 or entries.shape[1] != n_classes:
        raise ShapeMismatchError(f"matrix must be square, got shape {entries.shape}")
    if u.shape != (n_classes,) or v.shape != (n_classes,):
        raise ShapeMismatchError(f"marginals must have length {n_classes}, got {u.shape} and {v.shape}")
    if np.any(entries <= 0):
        raise DomainError("matrix scaling needs a strictly positive matrix; smooth it first")
    if np.any(u <= 0) or np.any(v <= 0):
        raise DomainError("target marginals must be strictly positive")
    if abs(u.sum() - v.sum()) > FEASIBILITY_RTOL * u.sum():
        raise InfeasibleMarginalsError(f"row targets sum to {u.sum()} but column targets sum to {v.sum()}")
    # close the accepted rounding gap so the fixed point can meet both marginals exactly
    v = v * (u.sum() / v.sum())
    return entries, u, v


def _residual(Q: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
    return float(np.abs(Q.sum(axis=1) - u).sum() + np.abs(Q.sum(axis=0) - v).sum())


def ipf(M, u, v, cfg: Optional[IpfConfig] = None) -> IpfResult:
    """Iterative Proportional Fitting of a positive matrix to row sums u and column sums v.

    Each sweep rescales rows to u, then columns to v, and counts two steps.
    Iteration stops once the L1 marginal residual is within cfg.tolerance or
    cfg.max_steps is reached; the returned result says which.
    """
    cfg = cfg or IpfConfig()
    entries, u, v = _validated_problem(M, u, v)
    Q = entries.copy()
    row_scales = np.ones_like(u)
    col_scales = np.ones_like(v)
    steps = 0
    residual = _residual(Q, u, v)
    history = [residual]
    while residual > cfg.tolerance and steps < cfg.max_steps:
        row_factor = u / Q.sum(axis=1)
        Q *= row_factor[:, None]
        row_scales *= row_factor
        col_factor = v / Q.sum(axis=0)
        Q *= col_factor[None, :]
        col_scales *= col_factor
        steps += 2
        residual = _residual(Q, u, v)
        history.append(residual)

    converged = residual <= cfg.tolerance
    if converged:
        logger.debug(f"IPF converged in {steps} steps, residual {residual:.3e}")
    else:
        logger.warning(f"IPF stopped after {steps} steps with residual {residual:.3e} > {cfg.tolerance:.1e}")
    return IpfResult(
        matrix=Q,
        row_scales=row_scales,
        col_scales=col_scales,
        steps=steps,
        residual=residual,
        converged=converged,
        residuals=history,
    )


def ras(M, r, c, cfg: Optional[IpfConfig] = None) -> IpfResult:
    """RAS method: same fixed point as ipf(), tracked through the diagonal factors D1, D2.

    D2 starts at the identity, which fixes the D1 -> lambda D1, D2 -> D2 / lambda gauge.
    `residuals` holds the residual after every sweep.
    """
    cfg = cfg or IpfConfig()
    entries, r, c = _validated_problem(M, r, c)
    d2 = np.ones_like(c)
    steps = 0
    history = []
    while True:
        d1 = r / (entries @ d2)
        d2 = c / (entries.T @ d1)
        steps += 2
        Q = d1[:, None] * entries * d2[None, :]
        residual = _residual(Q, r, c)
        history.append(residual)
        if residual <= cfg.tolerance or steps >= cfg.max_steps:
            break

    converged = residual <= cfg.tolerance
    if not converged:
        logger.warning(f"RAS stopped after {steps} steps with residual {residual:.3e} > {cfg.tolerance:.1e}")
    return IpfResult(
        matrix=Q,
        row_scales=d1,
        col_scales=d2,
        steps=steps,
        residual=residual,
        converged=converged,
        residuals=history,
    )


def bistochastic_fit(M: ConfusionMatrix, eps: Optional[float] = None, cfg: Optional[IpfConfig] = None) -> IpfResult:
    """IPF of smooth(M, eps) to unit marginals; raises NonConvergenceError carrying the best iterate."""
    smoothed = smooth(M, eps)
    n_classes = M.n_classes
    result = ipf(smoothed, np.ones(n_classes), np.ones(n_classes), cfg)
    if not result.converged:
        raise NonConvergenceError(
            f"bistochastic normalization did not converge in {result.steps} steps (residual {result.residual:.3e})",
            result,
        )
    return result


def bistochastic_normalize(
    M: ConfusionMatrix, eps: Optional[float] = None, cfg: Optional[IpfConfig] = None
) -> ConfusionMatrix:
    return M.with_entries(bistochastic_fit(M, eps, cfg).matrix)


def weights_from_result(result: IpfResult) -> ScalingWeights:
    return ScalingWeights(a=1.0 / result.row_scales, b=1.0 / result.col_scales)


def scaling_fit(M: ConfusionMatrix, eps: Optional[float] = None, cfg: Optional[IpfConfig] = None) -> IpfResult:
    """RAS run of smooth(M, eps) to unit marginals; raises on non-convergence."""
    smoothed = smooth(M, eps)
    n_classes = M.n_classes
    result = ras(smoothed, np.ones(n_classes), np.ones(n_classes), cfg)
    if not result.converged:
        raise NonConvergenceError(
            f"RAS did not converge in {result.steps} steps (residual {result.residual:.3e})", result
        )
    return result


def scaling_weights(M: ConfusionMatrix, eps: Optional[float] = None, cfg: Optional[IpfConfig] = None) -> ScalingWeights:
    """a = 1/diag(D1), b = 1/diag(D2), so diag(1/a) smooth(M) diag(1/b) is bistochastic."""
    return weights_from_result(scaling_fit(M, eps, cfg))


def normalize(
    M: ConfusionMatrix,
    kind: NormalizationKind,
    eps: Optional[float] = None,
    cfg: Optional[IpfConfig] = None,
) -> ConfusionMatrix:
    kind = NormalizationKind(kind)
    if kind is NormalizationKind.ROW:
        return row_normalize(M)
    if kind is NormalizationKind.COL:
        return col_normalize(M)
    if kind is NormalizationKind.ALL:
        return all_normalize(M)
    return bistochastic_normalize(M, eps, cfg)


def normalize_all(
    M: ConfusionMatrix, eps: Optional[float] = None, cfg: Optional[IpfConfig] = None
) -> Dict[NormalizationKind, ConfusionMatrix]:
    """The four normalizations of the same smoothed matrix, in row, col, all, bis order."""
    smoothed = smooth(M, eps)
    return {
        NormalizationKind.ROW: row_normalize(smoothed),
        NormalizationKind.COL: col_normalize(smoothed),
        NormalizationKind.ALL: all_normalize(smoothed),
        NormalizationKind.BIS: bistochastic_normalize(M, eps, cfg),
    }


def diagnostics(result: IpfResult) -> dict:
    return {
        "steps": result.steps,
        "residual": result.residual,
        "converged": result.converged,
        "row_scales": result.row_scales.tolist(),
        "col_scales": result.col_scales.tolist(),
    }


def _fit_batch(Q: np.ndarray, r: np.ndarray, c: np.ndarray, tolerance: float, max_steps: int) -> np.ndarray:
    """Vectorized IPF over a stack of positive matrices (samples x C x C)."""
    steps = 0
    residual = np.full(Q.shape[0], np.inf)
    row_scales = np.ones(Q.shape[:2])
    col_scales = np.ones(Q.shape[:2])
    while steps < max_steps:
        row_factor = r / Q.sum(axis=2)
        Q *= row_factor[:, :, None]
        row_scales *= row_factor
        col_factor = c / Q.sum(axis=1)
        Q *= col_factor[:, None, :]
        col_scales *= col_factor
        steps += 2
        # columns are exact after the column update
        residual = np.abs(Q.sum(axis=2) - r).sum(axis=1)
        if np.all(residual <= tolerance):
            return Q
    worst = int(np.argmax(residual))
    result = IpfResult(
        matrix=Q[worst],
        row_scales=row_scales[worst],
        col_scales=col_scales[worst],
        steps=steps,
        residual=float(residual[worst]),
        converged=False,
    )
    raise NonConvergenceError(
        f"oracle scaling did not converge in {max_steps} steps (worst residual {result.residual:.3e})", result
    )


def kl_oracle(
    M, r, c, samples: int, rng_seed: int, tolerance: float = 1e-11, max_steps: int = 20_000
) -> List[np.ndarray]:
    """Random matrices with row sums r and column sums c, for brute-force optimality checks.

    Each start is a Dirichlet-weighted mixture of random permutation matrices plus
    a positive jitter, scaled onto the (r, c) marginals by a short IPF run.
    """
    if samples < 0:
        raise ParameterError(f"samples must be nonnegative, got {samples}")
    n_classes = M.n_classes if isinstance(M, ConfusionMatrix) else np.asarray(M).shape[0]
    _, r, c = _validated_problem(np.ones((n_classes, n_classes)), r, c)
    if samples == 0:
        return []

    rng = np.random.default_rng(rng_seed)
    n_perms = n_classes
    perms = np.argsort(rng.random((samples, n_perms, n_classes)), axis=2)
    weights = rng.dirichlet(np.full(n_perms, 0.5), size=samples)
    starts = np.zeros((samples, n_classes, n_classes))
    sample_idx = np.arange(samples)[:, None]
    rows = np.arange(n_classes)[None, :]
    for k in range(n_perms):
        starts[sample_idx, rows, perms[:, k, :]] += weights[:, k, None]
    starts += 0.05 * rng.random((samples, n_classes, n_classes)) + 1e-3
    fitted = _fit_batch(starts, r, c, tolerance, max_steps)
    return list(fitted)
