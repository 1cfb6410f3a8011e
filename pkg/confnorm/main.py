import argparse
import logging
import os
import sys
from typing import List, Optional

from pydantic import ValidationError

from confnorm.core.config import config
from confnorm.core.errors import ConfnormError, NonConvergenceError, UndefinedMetricError
from confnorm.core.experiments import METRICS, sweep_experiment1, sweep_experiment2, trial1, trial2
from confnorm.core.geometry import gcm_variants
from confnorm.core.matrix import confusion_from_pairs, offdiag_overlap, overlap, smooth
from confnorm.core.scaling import bistochastic_fit, diagnostics, normalize, scaling_fit, weights_from_result
from confnorm.core.synthgen import resolve_alpha
from confnorm.models.schemas import GcmVariant, IpfConfig, NormalizationKind, TrialRecord
from confnorm.utils.heatmap import write_heatmap
from confnorm.utils.helpers import (
    load_scenario,
    read_confusion,
    read_embeddings,
    read_labels,
    write_confusion,
    write_embeddings,
    write_json,
    write_scores,
    write_summary,
)

logger = logging.getLogger(__name__)


EPS_HELP = (
    "smoothing constant added to every entry before scaling; the default is tiny, so for sparse "
    "matrices pass something near 1e-3 * total / C^2 or bis converges slowly and keeps near-zero cells"
)


def _ipf_config(args) -> IpfConfig:
    overrides = {"tolerance": args.tolerance, "max_steps": args.max_steps}
    return IpfConfig(**{k: v for k, v in overrides.items() if v is not None})


def cmd_normalize(args) -> int:
    """
    Normalize a confusion matrix.

    Writes the result in the input's format. For `--kind bis` a sidecar
    `<output>.diagnostics.json` holds {steps, residual, converged, row_scales, col_scales}.

    Returns:
        0 on success, 3 when IPF ran out of steps (the best iterate is still written).
    """
    M = read_confusion(args.input)
    kind = NormalizationKind(args.kind)
    if kind is not NormalizationKind.BIS:
        source = smooth(M, args.eps) if args.eps is not None else M
        write_confusion(args.output, normalize(source, kind))
        logger.info(f"{kind.value}-normalized matrix written to {args.output}")
        return 0

    try:
        result = bistochastic_fit(M, args.eps, _ipf_config(args))
        status = 0
    except NonConvergenceError as e:
        logger.error(e.detail)
        result = e.result
        status = NonConvergenceError.exit_code
    write_confusion(args.output, M.with_entries(result.matrix))
    write_json(f"{args.output}.diagnostics.json", diagnostics(result))
    logger.info(f"bistochastic matrix written to {args.output} (converged={result.converged})")
    return status


def cmd_overlap(args) -> int:
    P = read_confusion(args.first)
    Q = read_confusion(args.second)
    if args.offdiag:
        value = offdiag_overlap(P, Q)
        if value is None:
            raise UndefinedMetricError("off-diagonal overlap undefined")
    else:
        value = overlap(P, Q)
    print(f"overlap={value:.6f} l1={2 - 2 * value:.6f}")
    return 0


def cmd_gcm(args) -> int:
    """
    Geometric Confusion Matrix of an embeddings file.

    Raises:
        EmptyClusterError: a label or prediction cluster the variant divides by is empty.
        ParameterError: --m exceeds the embedding dimension.
    """
    labels = read_labels(args.labels) if args.labels else None
    ds, _ = read_embeddings(args.embeddings, labels)
    M = confusion_from_pairs(ds.labels, ds.predictions, ds.classes)
    variant = GcmVariant(args.variant)
    G = gcm_variants(ds, M, args.m, _ipf_config(args), args.eps, variants=[variant])[variant]
    write_confusion(args.output, G)
    logger.info(f"GCM ({variant.value}-like, m={args.m}) written to {args.output}")
    return 0


def cmd_weights(args) -> int:
    M = read_confusion(args.input)
    result = scaling_fit(M, args.eps, _ipf_config(args))
    weights = weights_from_result(result)
    payload = {
        "labels": M.labels,
        "a": weights.a.tolist(),
        "b": weights.b.tolist(),
        "steps": result.steps,
        "residual": result.residual,
        "converged": result.converged,
    }
    if args.output:
        write_json(args.output, payload)
        logger.info(f"scaling weights written to {args.output}")
    else:
        for name in ("a", "b"):
            print(f"{name}=" + ",".join(f"{x:.12g}" for x in payload[name]))
    return 0


def _write_trial(output_dir: str, prefix: str, record: TrialRecord) -> None:
    for name, M in record.matrices.items():
        stem = os.path.join(output_dir, f"{prefix}_seed{record.seed}_{name}")
        write_confusion(f"{stem}.csv", M)
        write_heatmap(f"{stem}.svg", M, title=f"{prefix} seed {record.seed}: {name}")
    if record.dataset is not None:
        write_embeddings(os.path.join(output_dir, f"{prefix}_seed{record.seed}_embeddings.csv"), record.dataset)


def _scenario(args):
    overrides = {"n_seeds": args.seeds}
    if args.alpha is not None:
        alphas = [resolve_alpha(value.strip()) for value in args.alpha.split(",")]
        overrides.update(alpha=alphas[0], alphas=alphas)
    return load_scenario(args.scenario, **overrides)


def cmd_exp1(args) -> int:
    """Experiment 1 at every level of the scenario's alpha grid (or the --alpha levels).

    Each level gets its own `exp1_alpha<alpha>_scores.csv`, `exp1_alpha<alpha>_summary.csv`
    and first-seed matrices.
    """
    scenario = _scenario(args)
    os.makedirs(args.output_dir, exist_ok=True)
    reports = sweep_experiment1(scenario, metric=args.metric, workers=args.workers)
    for alpha, report in reports.items():
        prefix = f"exp1_alpha{alpha:g}"
        write_scores(os.path.join(args.output_dir, f"{prefix}_scores.csv"), report)
        write_summary(os.path.join(args.output_dir, f"{prefix}_summary.csv"), report)
        _write_trial(args.output_dir, prefix, trial1(report.scenario, report.seeds[0], args.metric))
    logger.info(f"Experiment 1 results for {len(reports)} levels written to {args.output_dir}")
    return 0


def cmd_exp2(args) -> int:
    scenario = _scenario(args)
    os.makedirs(args.output_dir, exist_ok=True)
    sweep = sweep_experiment2(scenario, workers=args.workers)
    for alpha, reports in sweep.items():
        prefix = f"exp2_alpha{alpha:g}"
        for variant, report in reports.items():
            write_scores(os.path.join(args.output_dir, f"{prefix}_{variant.value}_scores.csv"), report)
            write_summary(os.path.join(args.output_dir, f"{prefix}_{variant.value}_summary.csv"), report)
        report = reports[GcmVariant.BIS_LIKE]
        _write_trial(args.output_dir, prefix, trial2(report.scenario, report.seeds[0]))
    logger.info(f"Experiment 2 results for {len(sweep)} levels written to {args.output_dir}")
    return 0


def _add_ipf_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--eps", type=float, default=None, help=EPS_HELP)
    parser.add_argument("--tolerance", type=float, default=None, help="L1 marginal residual to stop at")
    parser.add_argument("--max-steps", type=int, default=None, help="step budget (two per sweep)")


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("output_dir")
    parser.add_argument("--scenario", default=None, help="scenario JSON file")
    parser.add_argument(
        "--alpha",
        default=None,
        help="comma-separated Dirichlet concentrations or level names (very_low ... extreme); default sweeps the scenario alphas",
    )
    parser.add_argument("--seeds", type=int, default=None, help="number of seeds")
    parser.add_argument("--workers", type=int, default=config.THREADS, help="threads used over seeds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="confnorm", description="Confusion matrix normalization toolkit")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("normalize", help="row/col/all/bis normalization of a confusion matrix")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--kind", choices=[k.value for k in NormalizationKind], default=NormalizationKind.BIS.value)
    _add_ipf_flags(p)
    p.set_defaults(handler=cmd_normalize)

    p = commands.add_parser("overlap", help="Overlap and L1 distance of two confusion matrices")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("--offdiag", action="store_true", help="compare off-diagonal parts only")
    p.set_defaults(handler=cmd_overlap)

    p = commands.add_parser("gcm", help="Geometric Confusion Matrix of an embeddings CSV")
    p.add_argument("embeddings")
    p.add_argument("output")
    p.add_argument("--m", type=int, default=config.DEFAULT_PROJECTION_DIM, help="projection dimension")
    p.add_argument("--variant", choices=[v.value for v in GcmVariant], default=GcmVariant.ALL_LIKE.value)
    p.add_argument("--labels", default=None, help="labels file, one class per line")
    _add_ipf_flags(p)
    p.set_defaults(handler=cmd_gcm)

    p = commands.add_parser("weights", help="bistochastic scaling weights a, b")
    p.add_argument("input")
    p.add_argument("--output", default=None, help="JSON file (printed when omitted)")
    _add_ipf_flags(p)
    p.set_defaults(handler=cmd_weights)

    p = commands.add_parser("exp1", help="normalizations against a balanced reference")
    _add_experiment_flags(p)
    p.add_argument("--metric", choices=METRICS, default="overlap")
    p.set_defaults(handler=cmd_exp1)

    p = commands.add_parser("exp2", help="GCM variants against normalizations")
    _add_experiment_flags(p)
    p.set_defaults(handler=cmd_exp2)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=config.LOG_LEVEL)
    try:
        return args.handler(args)
    except ConfnormError as e:
        logger.error(e.detail)
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        detail = e.errors()[0]["msg"]
        logger.error(detail)
        print(f"error: {detail}", file=sys.stderr)
        return 2
    except OSError as e:
        detail = f"{e.filename2 or e.filename or 'output'}: {e.strerror or e}"
        logger.error(detail)
        print(f"error: {detail}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
