import argparse
import logging
from datetime import datetime

from src.models.process_models import PolynomialSpec
from src.services.coupling import CouplingMode, coupling_report, exact_expectation
from src.services.rng import STREAM_TRIALS, derive_seed
from src.utils.cli import (
    Blueprint,
    add_spec_args,
    add_table_arg,
    emit_report,
    emit_table,
    exit_code,
    parse_json_arg,
    resolve_inputs,
    resolve_seed,
)
from src.utils.helpers import ValidationError, log_function_execution

logger = logging.getLogger(__name__)

# Create command blueprint
couple_bp = Blueprint(group="couple", help="coupled thinnings of one polynomial draw")

SE_TOLERANCE = 4.0


def _configure_run(parser: argparse.ArgumentParser) -> None:
    add_spec_args(parser, box_default="256x256")
    add_table_arg(parser)
    parser.add_argument("--f1", required=True, help='first window as JSON, e.g. {"box": [[0, 0.5]]}')
    parser.add_argument("--f2", required=True, help="second window as JSON")
    parser.add_argument("--seeds", type=int, default=50)
    parser.add_argument("--mode", choices=[m.value for m in CouplingMode], default=CouplingMode.SHARED.value)
    parser.add_argument("--exact", action="store_true",
                        help="also check the per-point symmetric-difference probability on a uniform grid")


@couple_bp.command("run", help="symmetric-difference density against the window gaps", configure=_configure_run)
def cmd_couple(args: argparse.Namespace) -> int:
    """
    Couple the f1- and f2-thinnings of one core and compare densities

    Passes when the mean density is within 4 standard errors of the L1 gap
    and does not exceed the L2 bound (and, with ``--exact``, when the grid
    frequencies reproduce the per-point gaps exactly).
    """
    start_time = datetime.now()
    core, box, config = resolve_inputs(args)
    if not isinstance(core, PolynomialSpec):
        raise ValidationError("couple run needs a polynomial process as its core")
    seed = resolve_seed(args, config)
    f1, f2 = parse_json_arg(args.f1, "--f1"), parse_json_arg(args.f2, "--f2")
    mode = CouplingMode(args.mode)
    report = coupling_report(core, f1, f2, box, args.seeds, seed, mode)
    result = report.model_dump()
    tolerance = SE_TOLERANCE * max(report.stderr, 1e-12)
    passed = abs(report.density - report.l1_gap) <= tolerance and report.density <= report.l2_bound
    if args.exact:
        check = exact_expectation(core, f1, f2, box, derive_seed(seed, STREAM_TRIALS, 0), mode)
        result["exact_max_error"] = check.max_error
        passed = passed and check.max_error == 0.0
    config_data = {"spec": core.model_dump(mode="json"), "box": box.model_dump(mode="json"),
                   "f1": f1, "f2": f2, "seeds": args.seeds, "mode": mode.value}
    emit_report(args, seed, config_data, result, passed)
    emit_table(args, [{"seed": i, "density": v} for i, v in enumerate(report.per_seed)])
    log_function_execution("couple run", start_time, datetime.now(), True,
                           {"density": round(report.density, 6), "passed": passed})
    return exit_code(passed)
