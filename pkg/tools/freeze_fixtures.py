#!/usr/bin/env python3
"""Freeze bit-exact regression values into tests/fixtures/regression.json.

Run from the repo root after a deliberate change to sampling or hashing:

    python tools/freeze_fixtures.py

tests/test_regression.py recomputes every value and compares.
"""

import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Dict

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.models.process_models import Box  # noqa: E402
from src.services.affine_group import random_element  # noqa: E402
from src.services.export_service import ExportService  # noqa: E402
from src.services.polymap import haar_sample  # noqa: E402
from src.services.presets import preset_spec  # noqa: E402
from src.services.processes import sample  # noqa: E402
from src.services.rng import (  # noqa: E402
    STREAM_AFFINE,
    STREAM_PANEL,
    STREAM_STRUCTURE,
    derive_seed,
    stream_rng,
)

FIXTURE_PATH = ROOT / "tests" / "fixtures" / "regression.json"


def _plane_digest(plane: np.ndarray) -> str:
    packed = np.packbits(np.ascontiguousarray(plane, dtype=bool), axis=1)
    return hashlib.sha256(f"{plane.shape[1]} {plane.shape[0]}\n".encode() + packed.tobytes()).hexdigest()


def compute_fixtures() -> Dict[str, Any]:
    box = Box.from_shape((80, 80))
    s1 = sample(preset_spec("s1"), box, seed=7)
    bernoulli = sample(preset_spec("bernoulli:0.5"), box, seed=7)
    panel_seeds = [derive_seed(7, STREAM_PANEL, i) for i in range(3)]
    coins = [sample(preset_spec("bernoulli:0.5"), box, s) for s in panel_seeds]
    panel = [sample(preset_spec(name), box, derive_seed(7, STREAM_PANEL, i))
             for i, name in enumerate(["s3", "s3", "bernoulli:0.5"])]
    return {
        "random_element": random_element(3, 6, stream_rng(42, STREAM_AFFINE)).to_json(),
        "haar_sample": haar_sample(2, 1, 2, stream_rng(42, STREAM_STRUCTURE)).to_json(),
        "s1_80x80_seed7": {"count": s1.count, "digest": _plane_digest(ExportService.slice_2d(s1))},
        "panel_s3_s3_bernoulli": _plane_digest(
            ExportService.compose_panel([ExportService.slice_2d(s) for s in panel])),
        "bernoulli_80x80_seed7": {"count": bernoulli.count,
                                  "digest": _plane_digest(ExportService.slice_2d(bernoulli))},
        "panel_bernoulli_x3": {
            "seeds": panel_seeds,
            "counts": [s.count for s in coins],
            "digest": _plane_digest(ExportService.compose_panel([ExportService.slice_2d(s) for s in coins])),
        },
    }


def main() -> None:
    FIXTURE_PATH.parent.mkdir(parents=True, exist_ok=True)
    FIXTURE_PATH.write_text(json.dumps(compute_fixtures(), indent=2, sort_keys=True) + "\n")
    print(f"Wrote {FIXTURE_PATH.relative_to(ROOT)}")


if __name__ == "__main__":
    main()
