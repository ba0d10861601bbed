from __future__ import annotations

import hashlib
import io
import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.models.process_models import Box
from src.models.report_models import ReportEnvelope
from src.services.processes import PointSet
from src.utils.constants import TOOL_NAME, TOOL_VERSION
from src.utils.helpers import CoverageError, DimensionError, ValidationError

logger = logging.getLogger(__name__)

RAW_MAGIC = b"LBG\x01"
PANEL_GAP = 4


class ExportService:
    """Serialize point sets and reports; every artifact embeds seed, config hash and version"""

    def __init__(self, seed: int, config_hash: str):
        self.seed = seed
        self.config_hash = config_hash

    def metadata(self, **extra: Any) -> Dict[str, Any]:
        meta = {"tool": TOOL_NAME, "version": TOOL_VERSION, "seed": self.seed,
                "config_hash": self.config_hash}
        meta.update(extra)
        return meta

    @staticmethod
    def slice_2d(s: PointSet, fixed: Optional[Sequence[int]] = None) -> np.ndarray:
        """
        Extract the plane spanned by the first two axes

        Args:
            s: Point set of dimension >= 1
            fixed: Absolute coordinates of axes 3..d (defaults to each lower bound)

        Returns:
            2-D boolean array (rows along axis 1, columns along axis 2)
        """
        bits = s.bits
        if s.box.d == 1:
            return bits[None, :]
        extra = s.box.d - 2
        fixed = list(fixed) if fixed else list(s.box.lower[2:])
        if len(fixed) != extra:
            raise DimensionError(f"Slice needs {extra} fixed coordinates, got {len(fixed)}")
        index: List[Any] = [slice(None), slice(None)]
        for axis, value in enumerate(fixed, start=2):
            lo, hi = s.box.lower[axis], s.box.upper[axis]
            if not lo <= value < hi:
                raise CoverageError(f"Slice coordinate {value} outside [{lo}, {hi}) on axis {axis + 1}")
            index.append(value - lo)
        return bits[tuple(index)]

    def to_pbm(self, plane: np.ndarray, **extra: Any) -> bytes:
        """Binary PBM (P4); set points are black pixels"""
        plane = np.asarray(plane, dtype=bool)
        if plane.ndim != 2:
            raise DimensionError("PBM export needs a 2-D plane")
        rows, cols = plane.shape
        header = f"P4\n# {json.dumps(self.metadata(**extra), sort_keys=True)}\n{cols} {rows}\n"
        return header.encode("ascii") + np.packbits(plane, axis=1).tobytes()

    def to_csv(self, s: PointSet) -> str:
        """Member points, one per row, under a ``#`` metadata line"""
        cols = [f"t{i + 1}" for i in range(s.box.d)]
        df = pd.DataFrame(s.points(), columns=cols)
        buffer = io.StringIO()
        buffer.write(f"# {json.dumps(self.metadata(count=s.count), sort_keys=True)}\n")
        df.to_csv(buffer, index=False, lineterminator="\n")
        return buffer.getvalue()

    @staticmethod
    def table_csv(rows: List[Dict[str, Any]]) -> str:
        return pd.DataFrame(rows).to_csv(index=False, lineterminator="\n")

    def to_raw(self, s: PointSet) -> bytes:
        """
        Raw bit grid

        Layout (little endian): 16-byte header of magic, uint32 d and uint64
        volume; 2d int64 bounds (lower then upper); C-order packed bits;
        uint32 length of a JSON metadata trailer and the trailer itself.
        """
        d = s.box.d
        meta = json.dumps(self.metadata(), sort_keys=True).encode("utf-8")
        parts = [
            RAW_MAGIC,
            np.array([d], dtype="<u4").tobytes(),
            np.array([s.box.volume], dtype="<u8").tobytes(),
            np.array(list(s.box.lower) + list(s.box.upper), dtype="<i8").tobytes(),
            np.packbits(s.bits.reshape(-1)).tobytes(),
            np.array([len(meta)], dtype="<u4").tobytes(),
            meta,
        ]
        return b"".join(parts)

    @staticmethod
    def from_raw(data: bytes) -> Tuple[PointSet, Dict[str, Any]]:
        if data[:4] != RAW_MAGIC or len(data) < 16:
            raise ValidationError("Not a raw bit-grid file")
        d = int(np.frombuffer(data, dtype="<u4", count=1, offset=4)[0])
        volume = int(np.frombuffer(data, dtype="<u8", count=1, offset=8)[0])
        bounds = np.frombuffer(data, dtype="<i8", count=2 * d, offset=16)
        box = Box(lower=tuple(int(x) for x in bounds[:d]), upper=tuple(int(x) for x in bounds[d:]))
        if box.volume != volume:
            raise ValidationError("Raw header volume does not match its bounds")
        start = 16 + 16 * d
        nbytes = (volume + 7) // 8
        packed = np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=start)
        bits = np.unpackbits(packed, count=volume).astype(bool)
        trailer = start + nbytes
        length = int(np.frombuffer(data, dtype="<u4", count=1, offset=trailer)[0])
        meta = json.loads(data[trailer + 4:trailer + 4 + length].decode("utf-8"))
        return PointSet(box, bits), meta

    @staticmethod
    def compose_panel(planes: Sequence[np.ndarray], gap: int = PANEL_GAP) -> np.ndarray:
        """Place equal-shape planes side by side with blank columns between them"""
        if not planes:
            raise ValidationError("A panel needs at least one plane")
        shape = planes[0].shape
        if any(p.shape != shape for p in planes):
            raise DimensionError("Panel planes must share one shape")
        spacer = np.zeros((shape[0], gap), dtype=bool)
        pieces: List[np.ndarray] = []
        for n, plane in enumerate(planes):
            if n:
                pieces.append(spacer)
            pieces.append(np.asarray(plane, dtype=bool))
        return np.concatenate(pieces, axis=1)

    @staticmethod
    def json_text(data: Any) -> str:
        return json.dumps(data, sort_keys=True, indent=2) + "\n"

    @staticmethod
    def report_json(envelope: ReportEnvelope) -> str:
        return ExportService.json_text(envelope.model_dump(mode="json"))

    @staticmethod
    def get_file_hash(data: bytes) -> str:
        return hashlib.sha256(data).hexdigest()

    @staticmethod
    def write(path: str, content: bytes | str) -> str:
        """Write an artifact, creating parent directories; returns its SHA-256"""
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        data = content.encode("utf-8") if isinstance(content, str) else content
        with open(path, "wb") as fh:
            fh.write(data)
        digest = ExportService.get_file_hash(data)
        logger.info(f"Wrote {path} ({len(data)} bytes, sha256 {digest[:12]})")
        return digest
