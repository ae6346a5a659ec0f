from __future__ import annotations

import hashlib
import io
import json
import math
from datetime import datetime, timezone
from typing import Any, Mapping, Optional

import numpy as np
import pandas as pd

FLOAT_FORMAT = "%.12g"


def to_csv_bytes(df: pd.DataFrame, header: Optional[Mapping[str, Any]] = None) -> bytes:
    """CSV with ``# key = value`` comment lines ahead of the column header."""
    buf = io.StringIO()
    for key, value in (header or {}).items():
        buf.write(f"# {key} = {_format_scalar(value)}\n")
    df.to_csv(buf, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return buf.getvalue().encode("utf-8")


def to_json_bytes(payload: Any) -> bytes:
    text = json.dumps(round_sig(payload), indent=2, sort_keys=True, ensure_ascii=False)
    return (text + "\n").encode("utf-8")


def dataframe_to_records(df: pd.DataFrame) -> list:
    return json.loads(df.to_json(orient="records", double_precision=15))


def round_sig(value: Any, digits: int = 12) -> Any:
    """Round floats (also inside lists and dicts) to ``digits`` significant digits."""
    if isinstance(value, Mapping):
        return {str(k): round_sig(v, digits) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [round_sig(v, digits) for v in value]
    if isinstance(value, np.ndarray):
        return [round_sig(v, digits) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        x = float(value)
        if x == 0.0 or not math.isfinite(x):
            return x
        return float(f"{x:.{digits}g}")
    return value


def _format_scalar(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % float(value)
    return str(value)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def column_names(prefix: str, count: int) -> list:
    return [f"{prefix}_{i}" for i in range(1, count + 1)]


def now_ts() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S UTC")
