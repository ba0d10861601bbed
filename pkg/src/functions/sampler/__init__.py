import argparse
import logging
from datetime import datetime

from src.services.export_service import ExportService
from src.services.processes import sample
from src.services.rng import STREAM_PANEL, derive_seed, stream_rng
from src.services.statistics import intensity
from src.utils.cli import (
    EXIT_ERROR,
    EXIT_OK,
    Blueprint,
    add_run_args,
    add_spec_args,
    emit_report,
    make_box,
    resolve_inputs,
    resolve_seed,
    resolve_threads,
    spec_from_text,
)
from src.utils.helpers import generate_config_hash, log_function_execution

logger = logging.getLogger(__name__)

# Create command blueprint
sampler_bp = Blueprint()


def _configure_sample(parser: argparse.ArgumentParser) -> None:
    add_spec_args(parser)
    parser.add_argument("--pbm", help="PBM (P4) raster of a 2-D slice")
    parser.add_argument("--csv", help="CSV list of member points")
    parser.add_argument("--raw", help="raw bit grid")
    parser.add_argument("--slice", default="", help="fixed coordinates of axes 3..d, comma separated")


@sampler_bp.command("sample", help="sample a process on a box and export it", configure=_configure_sample)
def cmd_sample(args: argparse.Namespace) -> int:
    """
    Sample one realization and write the requested artifacts

    Outputs come from the flags or, when absent, from the config's
    ``outputs`` table. The intensity summary is printed as a JSON report.
    """
    start_time = datetime.now()
    spec, box, config = resolve_inputs(args)
    seed = resolve_seed(args, config)
    threads = resolve_threads(args, config)
    outputs = config.outputs if config is not None else None
    pbm = args.pbm or (outputs.pbm if outputs else None)
    csv = args.csv or (outputs.csv if outputs else None)
    raw = args.raw or (outputs.raw if outputs else None)
    if not args.json_path and outputs and outputs.json_path:
        args.json_path = outputs.json_path
    fixed = [int(x) for x in args.slice.split(",") if x.strip()] or (outputs.slice if outputs else [])

    config_data = {"spec": spec.model_dump(mode="json"), "box": box.model_dump(mode="json")}
    exporter = ExportService(seed, generate_config_hash(config_data))
    points = sample(spec, box, seed, threads)
    files = {}
    if pbm:
        files["pbm"] = exporter.write(pbm, exporter.to_pbm(exporter.slice_2d(points, fixed)))
    if csv:
        files["csv"] = exporter.write(csv, exporter.to_csv(points))
    if raw:
        files["raw"] = exporter.write(raw, exporter.to_raw(points))

    estimate = intensity(points)
    emit_report(args, seed, config_data, {
        "count": points.count,
        "volume": points.volume,
        "intensity": estimate.model_dump(),
        "files": files,
    })
    log_function_execution("sample", start_time, datetime.now(), True,
                           {"kind": spec.kind, "volume": box.volume, "count": points.count})
    return EXIT_OK


def _configure_panel(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--panel", action="append", default=[],
                        help="preset or spec file for one panel (repeatable)")
    parser.add_argument("--dim", type=int, default=2)
    parser.add_argument("--box", default="80x80")
    parser.add_argument("--out", required=True, help="composite PBM path; order goes to <out>.json")
    parser.add_argument("--no-shuffle", action="store_true", help="keep the given panel order")
    add_run_args(parser)


@sampler_bp.command("figure-panel", help="side-by-side panel of several processes", configure=_configure_panel)
def cmd_figure_panel(args: argparse.Namespace) -> int:
    """
    Compose equal-shape samples into one raster

    Panel order is shuffled with the panel stream of the seed and recorded
    in a sidecar JSON next to the raster.
    """
    start_time = datetime.now()
    if not args.panel:
        logger.error("figure-panel needs at least one --panel")
        return EXIT_ERROR
    seed = resolve_seed(args)
    threads = resolve_threads(args)
    specs = [spec_from_text(text, args.dim) for text in args.panel]
    boxes = [make_box(args.box, spec.d) for spec in specs]
    samples = [sample(spec, box, derive_seed(seed, STREAM_PANEL, i), threads)
               for i, (spec, box) in enumerate(zip(specs, boxes))]

    order = list(range(len(specs)))
    if not args.no_shuffle:
        order = [int(i) for i in stream_rng(seed, STREAM_PANEL).permutation(len(specs))]

    config_data = {"panels": [s.model_dump(mode="json") for s in specs], "box": args.box}
    exporter = ExportService(seed, generate_config_hash(config_data))
    planes = [exporter.slice_2d(samples[i]) for i in order]
    digest = exporter.write(args.out, exporter.to_pbm(exporter.compose_panel(planes)))
    sidecar = {
        "order": [args.panel[i] for i in order],
        "seeds": [derive_seed(seed, STREAM_PANEL, i) for i in order],
        "counts": [samples[i].count for i in order],
        **exporter.metadata(),
    }
    sidecar_digest = exporter.write(args.out + ".json", ExportService.json_text(sidecar))
    emit_report(args, seed, config_data, {"panel": digest, "sidecar": sidecar_digest, **sidecar})
    log_function_execution("figure-panel", start_time, datetime.now(), True, {"panels": len(specs)})
    return EXIT_OK
