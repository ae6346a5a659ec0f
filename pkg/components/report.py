from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import pandas as pd

from . import __version__
from .cycle import CycleReport
from .utils import dataframe_to_records, now_ts, sha256_bytes, to_csv_bytes, to_json_bytes

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass
class OutputDir:
    """Writes result files into one directory and remembers their checksums."""

    root: Path
    fmt: str = "csv"
    files: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.root = Path(self.root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _write(self, name: str, data: bytes) -> Path:
        path = self.root / name
        path.write_bytes(data)
        self.files[name] = sha256_bytes(data)
        logger.info("wrote %s", path)
        return path

    def write_table(self, stem: str, df: pd.DataFrame, header: Optional[Mapping[str, Any]] = None) -> Path:
        if self.fmt == "json":
            payload = {"parameters": dict(header or {}), "columns": list(df.columns), "rows": dataframe_to_records(df)}
            return self._write(f"{stem}.json", to_json_bytes(payload))
        return self._write(f"{stem}.csv", to_csv_bytes(df, header))

    def write_json(self, stem: str, payload: Any) -> Path:
        return self._write(f"{stem}.json", to_json_bytes(payload))

    def write_manifest(self, subcommand: str, config: Mapping[str, Any], wall_time: float) -> Path:
        manifest = {
            "subcommand": subcommand,
            "version": __version__,
            "created": now_ts(),
            "wall_time_s": wall_time,
            "config": dict(config),
            "files": [{"name": n, "sha256": h} for n, h in sorted(self.files.items())],
        }
        path = self.root / MANIFEST_NAME
        path.write_bytes(to_json_bytes(manifest))
        logger.info("wrote %s (%d files)", path, len(self.files))
        return path


def cycle_report_payload(report: CycleReport) -> Dict[str, Any]:
    """JSON-ready form of a cycle report; profiles go to their own table."""
    m = len(report.efficiencies)
    return {
        "storage": report.storage,
        "parameters": dict(report.parameters),
        "singular_values": report.singular_values,
        "eigen_efficiencies": report.singular_values**2,
        "efficiencies": report.efficiencies,
        "direct_efficiencies": report.direct_efficiencies,
        "beamsplitter": report.beamsplitter[:m],
        "overlap": {
            "label": report.overlap.label,
            "delta_L": report.overlap.delta_L,
            "truncation": report.overlap.truncation,
            "asymmetry": report.overlap.asymmetry,
            "full_asymmetry": report.overlap.block_asymmetry(),
            "Q": report.overlap.Q,
        },
        "input_projections": {str(k): v for k, v in report.projections.items()},
        "provenance": [a.as_dict() for a in report.provenance],
    }
