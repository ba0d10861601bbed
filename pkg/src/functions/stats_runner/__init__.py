import argparse
import logging
from datetime import datetime
from typing import Any, List

import numpy as np

from src.models.report_models import GowersMode, Histogram
from src.services.affine_group import AffineMap, preset, preset_names, random_element
from src.services.processes import sample
from src.services.rng import STREAM_AFFINE, STREAM_TRIALS, derive_seed, stream_rng
from src.services.statistics import (
    DEFAULT_ALPHA,
    DEFAULT_MAX_STEP,
    ap_count_distribution,
    ap_discrimination_power,
    gowers_of_sample,
    invariance_test,
    k_point_marginal,
    mean_intensity,
    two_sample_chisq,
)
from src.utils.cli import (
    Blueprint,
    add_spec_args,
    add_table_arg,
    emit_report,
    emit_table,
    exit_code,
    format_points,
    parse_json_arg,
    parse_points,
    resolve_inputs,
    resolve_seed,
    resolve_threads,
    spec_from_text,
)
from src.utils.helpers import ConfigurationError, log_function_execution

logger = logging.getLogger(__name__)

# Create command blueprint
stats_bp = Blueprint(group="stats", help="estimators and statistical tests")

SE_TOLERANCE = 4.0


def _configure_intensity(parser: argparse.ArgumentParser) -> None:
    add_spec_args(parser, box_default="128x128")
    add_table_arg(parser)
    parser.add_argument("--seeds", type=int, default=100)
    parser.add_argument("--expect", type=float, default=None,
                        help="reject unless the mean is within 4 standard errors of this value")


@stats_bp.command("intensity", help="mean box density over seeds", configure=_configure_intensity)
def cmd_intensity(args: argparse.Namespace) -> int:
    start_time = datetime.now()
    spec, box, config = resolve_inputs(args)
    seed = resolve_seed(args, config)
    estimate = mean_intensity(spec, box, args.seeds, seed, resolve_threads(args, config))
    passed = None
    if args.expect is not None:
        tolerance = SE_TOLERANCE * max(estimate.stderr, 1e-12)
        passed = abs(estimate.value - args.expect) <= tolerance
    config_data = {"spec": spec.model_dump(mode="json"), "box": box.model_dump(mode="json"),
                   "seeds": args.seeds, "expect": args.expect}
    emit_report(args, seed, config_data, estimate.model_dump(), passed)
    emit_table(args, [{"value": estimate.value, "stderr": estimate.stderr, "seeds": estimate.n}])
    log_function_execution("stats intensity", start_time, datetime.now(), True,
                           {"value": round(estimate.value, 6)})
    return exit_code(passed)


def _configure_marginal(parser: argparse.ArgumentParser) -> None:
    add_spec_args(parser)
    add_table_arg(parser)
    parser.add_argument("--points", required=True, help='query set such as "0,0;1,0"')
    parser.add_argument("--trials", type=int, default=100_000)
    parser.add_argument("--expect", type=float, default=None,
                        help="reject unless the Wilson interval contains this value")


@stats_bp.command("marginal", help="k-point marginal with a Wilson interval", configure=_configure_marginal)
def cmd_marginal(args: argparse.Namespace) -> int:
    start_time = datetime.now()
    spec, box, config = resolve_inputs(args)
    seed = resolve_seed(args, config)
    points = parse_points(args.points)
    estimate = k_point_marginal(spec, points, args.trials, seed, threads=resolve_threads(args, config))
    passed = None
    if args.expect is not None:
        passed = estimate.lower <= args.expect <= estimate.upper
    config_data = {"spec": spec.model_dump(mode="json"), "points": points, "trials": args.trials,
                   "expect": args.expect}
    emit_report(args, seed, config_data, estimate.model_dump(), passed)
    emit_table(args, [{"value": estimate.value, "lower": estimate.lower, "upper": estimate.upper,
                       "successes": estimate.successes, "trials": estimate.trials}])
    log_function_execution("stats marginal", start_time, datetime.now(), True,
                           {"value": round(estimate.value, 6)})
    return exit_code(passed)


def _configure_gowers(parser: argparse.ArgumentParser) -> None:
    add_spec_args(parser, box_default="32x32")
    add_table_arg(parser)
    parser.add_argument("--order", type=int, default=2)
    parser.add_argument("--shift-radius", type=int, default=None,
                        help="shifts range over [-r, r]^d (default: box side - 1)")
    parser.add_argument("--mode", choices=[m.value for m in GowersMode], default=GowersMode.EXACT.value)
    parser.add_argument("--samples", type=int, default=10_000)
    parser.add_argument("--seeds", type=int, default=100)
    parser.add_argument("--include-degenerate", action="store_true")
    parser.add_argument("--against", default=None,
                        help="second process; reject unless the quartile ranges separate by more than --margin")
    parser.add_argument("--margin", type=float, default=0.0,
                        help="required gap between the quartile ranges (default 0)")


def _gowers_values(spec: Any, args: argparse.Namespace, box: Any, seed: int, threads: int) -> List[float]:
    radius = args.shift_radius if args.shift_radius is not None else max(box.shape) - 1
    values = []
    for i in range(args.seeds):
        realization = sample(spec, box, derive_seed(seed, STREAM_TRIALS, i), threads)
        rng = stream_rng(seed, STREAM_TRIALS, i)
        values.append(gowers_of_sample(realization, args.order, radius, GowersMode(args.mode),
                                       args.samples, not args.include_degenerate, rng).value)
    return values


def _summary(values: List[float]) -> dict:
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    return {"values": values, "q1": float(q1), "median": float(median), "q3": float(q3),
            "mean": float(np.mean(values))}


def quartile_gap(a: dict, b: dict) -> float:
    """Distance between the interquartile ranges; negative when they overlap"""
    return max(a["q1"] - b["q3"], b["q1"] - a["q3"])


@stats_bp.command("gowers", help="finite-window U^k norms over seeds", configure=_configure_gowers)
def cmd_gowers(args: argparse.Namespace) -> int:
    start_time = datetime.now()
    spec, box, config = resolve_inputs(args)
    seed = resolve_seed(args, config)
    threads = resolve_threads(args, config)
    result = {"spec": _summary(_gowers_values(spec, args, box, seed, threads))}
    config_data = {"spec": spec.model_dump(mode="json"), "box": box.model_dump(mode="json"),
                   "order": args.order, "mode": args.mode, "seeds": args.seeds,
                   "shift_radius": args.shift_radius, "against": args.against, "margin": args.margin}
    rows = [{"process": "spec", "seed": i, "value": v} for i, v in enumerate(result["spec"]["values"])]
    passed = None
    if args.against:
        other = spec_from_text(args.against, spec.d)
        result["against"] = _summary(_gowers_values(other, args, box, derive_seed(seed, 1), threads))
        rows += [{"process": "against", "seed": i, "value": v} for i, v in enumerate(result["against"]["values"])]
        gap = quartile_gap(result["spec"], result["against"])
        passed = gap > args.margin
        result.update({"gap": gap, "margin": args.margin, "separated": passed})
    emit_report(args, seed, config_data, result, passed)
    emit_table(args, rows)
    log_function_execution("stats gowers", start_time, datetime.now(), True,
                           {"median": round(result["spec"]["median"], 6), "separated": passed})
    return exit_code(passed)


def _configure_ap(parser: argparse.ArgumentParser) -> None:
    add_spec_args(parser, box_default="64x64")
    add_table_arg(parser)
    parser.add_argument("--L", dest="length", type=int, default=8)
    parser.add_argument("--trials", type=int, default=20_000)
    parser.add_argument("--against", default="bernoulli:0.5")
    parser.add_argument("--max-step", type=int, default=DEFAULT_MAX_STEP)
    parser.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    parser.add_argument("--repetitions", type=int, default=1,
                        help="more than one measures the rejection rate instead of testing once")


def _histogram_rows(ha: Histogram, hb: Histogram) -> List[dict]:
    return [{"count": c, "spec": a, "against": b} for c, (a, b) in enumerate(zip(ha.bins, hb.bins))]


@stats_bp.command("ap",help="AP count distribution against a second process", configure=_configure_ap)
def cmd_ap(args: argparse.Namespace) -> int:
    start_time = datetime.now()
    spec, box, config = resolve_inputs(args)
    seed = resolve_seed(args, config)
    threads = resolve_threads(args, config)
    other = spec_from_text(args.against, spec.d)
    config_data = {"spec": spec.model_dump(mode="json"), "against": other.model_dump(mode="json"),
                   "box": box.model_dump(mode="json"), "L": args.length, "trials": args.trials,
                   "max_step": args.max_step, "alpha": args.alpha, "repetitions": args.repetitions}
    if args.repetitions > 1:
        experiment = ap_discrimination_power(spec, other, args.length, args.trials, args.repetitions,
                                             seed, box, args.alpha, args.max_step, threads)
        emit_report(args, seed, config_data,
                    {**experiment.model_dump(), "rejection_rate": experiment.rejection_rate})
        emit_table(args, _histogram_rows(experiment.histogram, experiment.against_histogram))
        return exit_code(None)
    ha = ap_count_distribution(spec, args.length, args.trials, derive_seed(seed, 0, 0), box, args.max_step, threads)
    hb = ap_count_distribution(other, args.length, args.trials, derive_seed(seed, 0, 1), box, args.max_step, threads)
    test = two_sample_chisq(ha, hb)
    passed = test.p_value >= args.alpha
    emit_report(args, seed, config_data,
                {"histogram": ha.bins, "against_histogram": hb.bins, "chisq": test.model_dump()}, passed)
    emit_table(args, _histogram_rows(ha, hb))
    log_function_execution("stats ap", start_time, datetime.now(), True,
                           {"p_value": test.p_value, "rejected": not passed})
    return exit_code(passed)


def _configure_invariance(parser: argparse.ArgumentParser) -> None:
    add_spec_args(parser)
    add_table_arg(parser)
    parser.add_argument("--g", action="append", default=[],
                        help='preset name, {"A": ..., "v": ...} JSON, or random:<word_len> (repeatable)')
    parser.add_argument("--query", action="append", default=[], help='query set such as "0,0;1,0" (repeatable)')
    parser.add_argument("--trials", type=int, default=100_000)
    parser.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)


def resolve_group_elements(texts: List[str], d: int, seed: int) -> List[tuple[str, AffineMap]]:
    """Named elements; every generator preset when none are given"""
    if not texts:
        return [(name, preset(name, d)) for name in preset_names(d)]
    elements = []
    for n, text in enumerate(texts):
        if text.startswith("random:"):
            try:
                word_len = int(text.split(":", 1)[1])
            except ValueError as e:
                raise ConfigurationError(f"Invalid random word {text!r}") from e
            elements.append((text, random_element(d, word_len, stream_rng(seed, STREAM_AFFINE, n))))
        elif text.lstrip().startswith("{"):
            elements.append((text, AffineMap.from_json(parse_json_arg(text, "--g"))))
        else:
            elements.append((text, preset(text, d)))
    return elements


def default_queries(d: int) -> List[List[List[int]]]:
    origin = [0] * d
    unit = [[int(i == j) for j in range(d)] for i in range(d)]
    return [[origin], [origin, unit[0]], [origin] + unit[: min(d, 2)]]


@stats_bp.command("invariance", help="marginals at F against g(F) with Holm correction",
                  configure=_configure_invariance)
def cmd_invariance(args: argparse.Namespace) -> int:
    start_time = datetime.now()
    spec, box, config = resolve_inputs(args)
    seed = resolve_seed(args, config)
    threads = resolve_threads(args, config)
    # only an explicit window restricts the queries and their images
    window = box if args.box or config is not None else None
    queries = [parse_points(q) for q in args.query] or default_queries(spec.d)
    elements = resolve_group_elements(args.g, spec.d, seed)
    reports, rows = {}, []
    for n, (name, g) in enumerate(elements):
        report = invariance_test(spec, g, queries, args.trials, derive_seed(seed, STREAM_AFFINE, n),
                                 args.alpha, box=window, threads=threads)
        reports[name] = {**report.model_dump(), "passed": report.passed}
        rows += [{"g": name, "points": format_points(q.points),
                  "image_points": format_points(q.image_points), "estimate": q.estimate,
                  "image_estimate": q.image_estimate, "p_value": q.p_value, "rejected": q.rejected}
                 for q in report.queries]
    passed = all(r["passed"] for r in reports.values())
    config_data = {"spec": spec.model_dump(mode="json"), "g": [name for name, _ in elements],
                   "queries": queries, "trials": args.trials, "alpha": args.alpha,
                   "box": window.model_dump(mode="json") if window else None}
    emit_report(args, seed, config_data, reports, passed)
    emit_table(args, rows)
    log_function_execution("stats invariance", start_time, datetime.now(), True,
                           {"elements": len(elements), "passed": passed})
    return exit_code(passed)
