"""Seeded harness for the two normalization experiments.

Experiment 1 asks which normalization of an imbalanced, biased confusion
matrix best recovers the confusion structure of a balanced, unbiased run of
the same classifier. Experiment 2 asks which normalization each weighting of
the Geometric Confusion Matrix resembles most.
"""
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from functools import partial
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np

from confnorm.core.config import config
from confnorm.core.errors import DegenerateInputError, EmptyClusterError, ParameterError, UndefinedMetricError
from confnorm.core.geometry import gcm_variants
from confnorm.core.matrix import all_normalize, confusion_from_pairs, offdiag_overlap, overlap
from confnorm.core.scaling import normalize_all
from confnorm.core.synthgen import (
    generate_embeddings,
    sample_centroids,
    sample_class_counts,
    sample_prediction_bias,
    sample_similarity_kernel,
    simulate_confusion,
)
from confnorm.models.schemas import (
    ConfusionMatrix,
    EmbeddingSpec,
    ExperimentReport,
    GcmVariant,
    HeterogeneityConfig,
    NormalizationKind,
    ScenarioConfig,
    SummaryRow,
    TrialRecord,
)

logger = logging.getLogger(__name__)

METRICS = ("overlap", "offdiag")
# embedding redraws allowed per seed when a class ends up never predicted
MAX_REDRAWS = 20
KINDS = [kind.value for kind in NormalizationKind]
REFERENCE = "reference"


def _role_seed(seed: int, role: int) -> int:
    """Distinct seeds for the balanced (0) and imbalanced (1) draws of a trial."""
    return 2 * seed + role


def _redraw_seed(seed: int, attempt: int) -> int:
    if attempt == 0:
        return seed
    return int(np.random.SeedSequence([seed, attempt]).generate_state(1)[0])


def _score(metric: str, P: ConfusionMatrix, Q: ConfusionMatrix) -> float:
    if metric == "overlap":
        return overlap(P, Q)
    value = offdiag_overlap(P, Q)
    if value is None:
        raise UndefinedMetricError("off-diagonal overlap undefined")
    return value


def smoothing_eps(scenario: ScenarioConfig, M: ConfusionMatrix) -> float:
    return scenario.smoothing * M.total / M.n_classes ** 2


def trial1(scenario: ScenarioConfig, seed: int, metric: str = "overlap") -> TrialRecord:
    C = scenario.n_classes
    kernel = sample_similarity_kernel(
        C, scenario.similarity_strength, scenario.confusable_pairs, seed, scenario.noise_level
    )
    balanced = simulate_confusion(
        kernel, np.full(C, scenario.base_per_class), np.ones(C), _role_seed(seed, 0)
    )
    counts = sample_class_counts(
        HeterogeneityConfig(
            alpha=scenario.alpha,
            n_classes=C,
            base_per_class=scenario.base_per_class,
            floor_fraction=scenario.floor_fraction,
            seed=seed,
        )
    )
    bias = sample_prediction_bias(C, scenario.prediction_bias, seed)
    imbalanced = simulate_confusion(kernel, counts, bias, _role_seed(seed, 1))

    normalized = normalize_all(imbalanced, smoothing_eps(scenario, imbalanced), scenario.ipf_config())
    reference = all_normalize(balanced)
    scores = {kind.value: _score(metric, M, reference) for kind, M in normalized.items()}

    matrices = {"balanced": balanced, "imbalanced": imbalanced}
    matrices.update({kind.value: M for kind, M in normalized.items()})
    return TrialRecord(seed=seed, scores={REFERENCE: scores}, matrices=matrices)


def trial2(scenario: ScenarioConfig, seed: int) -> TrialRecord:
    C = scenario.n_classes
    counts = sample_class_counts(
        HeterogeneityConfig(
            alpha=scenario.alpha,
            n_classes=C,
            base_per_class=scenario.base_per_class,
            floor_fraction=scenario.floor_fraction,
            seed=seed,
        )
    )
    centroids = sample_centroids(C, scenario.embedding_dim, scenario.separation, seed)
    bias = sample_prediction_bias(C, scenario.prediction_bias, seed)
    for attempt in range(MAX_REDRAWS):
        spec = EmbeddingSpec(
            centroids=centroids,
            spread=scenario.spread,
            counts=counts,
            seed=_redraw_seed(seed, attempt),
            prediction_bias=bias,
        )
        ds = generate_embeddings(spec)
        if np.all(ds.prediction_counts() > 0):
            break
        logger.debug(f"seed {seed}: empty prediction cluster, redrawing embeddings ({attempt + 1}/{MAX_REDRAWS})")
    else:
        raise EmptyClusterError(f"seed {seed}: some class is never predicted after {MAX_REDRAWS} draws")
    M = confusion_from_pairs(ds.labels, ds.predictions, ds.classes)

    eps = smoothing_eps(scenario, M)
    cfg = scenario.ipf_config()
    variants = gcm_variants(ds, M, scenario.projection_dim, cfg, eps)
    normalized = normalize_all(M, eps, cfg)
    scores = {
        variant.value: {kind.value: overlap(G, N) for kind, N in normalized.items()}
        for variant, G in variants.items()
    }

    matrices = {"confusion": M}
    matrices.update({kind.value: N for kind, N in normalized.items()})
    matrices.update({f"gcm_{variant.value}": G for variant, G in variants.items()})
    return TrialRecord(seed=seed, scores=scores, matrices=matrices, dataset=ds)


def _run_trials(trial: Callable[[int], TrialRecord], seeds: List[int], workers: int) -> Dict[int, TrialRecord]:
    """Run one trial per distinct seed; results are keyed by seed, so scheduling order never leaks out."""
    distinct = list(dict.fromkeys(seeds))
    if workers <= 1:
        return {seed: trial(seed) for seed in distinct}
    records = {}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(trial, seed): seed for seed in distinct}
        for future in as_completed(futures):
            records[futures[future]] = future.result()
    return records


def _prepare(scenario: ScenarioConfig, seeds: Optional[Iterable[int]], workers: Optional[int]):
    seeds = list(scenario.seeds if seeds is None else seeds)
    if not seeds:
        raise ParameterError("at least one seed is required")
    workers = config.THREADS if workers is None else workers
    return seeds, workers


def _report(name: str, metric: str, scenario: ScenarioConfig, seeds: List[int], scores) -> ExperimentReport:
    report = ExperimentReport(name=name, metric=metric, scenario=scenario, seeds=seeds, scores=scores)
    return report.model_copy(update={"summary": summarize(report)})


def run_experiment1(
    scenario: ScenarioConfig,
    seeds: Optional[Iterable[int]] = None,
    metric: str = "overlap",
    workers: Optional[int] = None,
) -> ExperimentReport:
    if metric not in METRICS:
        raise ParameterError(f"metric must be one of {METRICS}, got {metric!r}")
    seeds, workers = _prepare(scenario, seeds, workers)
    logger.info(f"Experiment 1: alpha={scenario.alpha}, C={scenario.n_classes}, {len(seeds)} seeds, metric={metric}")
    records = _run_trials(partial(trial1, scenario, metric=metric), seeds, workers)
    scores = {kind: [records[seed].scores[REFERENCE][kind] for seed in seeds] for kind in KINDS}
    report = _report("exp1", metric, scenario, seeds, scores)
    for row in report.summary:
        logger.info(f"  {row.kind}: median={row.median:.4f} win_rate={row.win_rate:.2f}")
    return report


def run_experiment2(
    scenario: ScenarioConfig,
    seeds: Optional[Iterable[int]] = None,
    workers: Optional[int] = None,
) -> Dict[GcmVariant, ExperimentReport]:
    seeds, workers = _prepare(scenario, seeds, workers)
    logger.info(f"Experiment 2: alpha={scenario.alpha}, C={scenario.n_classes}, m={scenario.projection_dim}, {len(seeds)} seeds")
    records = _run_trials(partial(trial2, scenario), seeds, workers)
    reports = {}
    for variant in GcmVariant:
        scores = {kind: [records[seed].scores[variant.value][kind] for seed in seeds] for kind in KINDS}
        reports[variant] = _report(f"exp2_{variant.value}", "overlap", scenario, seeds, scores)
        best = max(reports[variant].summary, key=lambda row: row.win_rate)
        logger.info(f"  GCM {variant.value}: best match {best.kind} (win_rate={best.win_rate:.2f})")
    return reports


def sweep_experiment1(
    scenario: ScenarioConfig,
    seeds: Optional[Iterable[int]] = None,
    metric: str = "overlap",
    workers: Optional[int] = None,
) -> Dict[float, ExperimentReport]:
    """Experiment 1 at every heterogeneity level of `scenario.alphas`, keyed by alpha."""
    seeds = None if seeds is None else list(seeds)
    return {level.alpha: run_experiment1(level, seeds, metric, workers) for level in scenario.levels()}


def sweep_experiment2(
    scenario: ScenarioConfig,
    seeds: Optional[Iterable[int]] = None,
    workers: Optional[int] = None,
) -> Dict[float, Dict[GcmVariant, ExperimentReport]]:
    seeds = None if seeds is None else list(seeds)
    return {level.alpha: run_experiment2(level, seeds, workers) for level in scenario.levels()}


def summarize(report: ExperimentReport) -> List[SummaryRow]:
    """Boxplot quantiles (linear interpolation) and strict-maximum win rate per kind."""
    if not report.scores or not report.seeds:
        raise DegenerateInputError(f"report {report.name!r} holds no scores")
    kinds = list(report.scores)
    table = np.array([report.scores[kind] for kind in kinds], dtype=np.float64)
    best = table.max(axis=0)
    winners = table == best[None, :]
    # ties award no one
    strict = winners & (winners.sum(axis=0) == 1)[None, :]
    rows = []
    for k, kind in enumerate(kinds):
        q = np.percentile(table[k], [0, 25, 50, 75, 100])
        rows.append(
            SummaryRow(
                kind=kind,
                min=float(q[0]),
                q1=float(q[1]),
                median=float(q[2]),
                q3=float(q[3]),
                max=float(q[4]),
                win_rate=float(strict[k].mean()),
            )
        )
    return rows
