"""
Output encoding shared by the CLI stages.

Floats are written at 9 significant digits, keys keep model field order,
and files are replaced atomically so a failed run never leaves a partial
output behind.
"""

import json
import math
import os
import tempfile
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, List, Sequence

import pandas as pd
from pydantic import BaseModel

SIGNIFICANT_DIGITS = 9
FLOAT_FORMAT = f"%.{SIGNIFICANT_DIGITS}g"


def round_sig(value: float) -> float:
    """
    Round ``value`` to 9 significant digits.

    Example:
        >>> round_sig(1.0 / 3.0)
        0.333333333
    """
    if value == 0 or not math.isfinite(value):
        return value
    return float(f"{value:.{SIGNIFICANT_DIGITS}g}")


def to_plain(obj: Any) -> Any:
    """Convert models, enums, paths and numpy scalars to JSON-ready values with rounded floats."""
    if isinstance(obj, BaseModel):
        return to_plain(obj.model_dump(mode="python"))
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, int):
        return obj
    if hasattr(obj, "item"):
        return to_plain(obj.item())
    if isinstance(obj, float):
        return round_sig(obj)
    return str(obj)


def dumps(obj: Any) -> str:
    """Serialize ``obj`` deterministically."""
    return json.dumps(to_plain(obj), indent=2, allow_nan=False) + "\n"


def atomic_write_text(path: Path, text: str):
    """
    Write ``text`` to ``path`` through a temporary file and a rename.

    Args:
        path: Destination
        text: Content
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj: Any):
    atomic_write_text(path, dumps(obj))


def read_json(path: Path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def models_to_frame(rows: Sequence[BaseModel], columns: Iterable[str] = None) -> pd.DataFrame:
    """
    Build a DataFrame from models, keeping field order.

    Args:
        rows: Models of the same type
        columns: Optional column subset and order

    Returns:
        pd.DataFrame: One row per model
    """
    records: List[dict] = [to_plain(r) for r in rows]
    frame = pd.DataFrame.from_records(records)
    if columns is not None:
        frame = frame.reindex(columns=list(columns))
    return frame


def frame_to_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_csv(path: Path, frame: pd.DataFrame):
    atomic_write_text(path, frame_to_csv(frame))
