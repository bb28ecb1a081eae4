from pathlib import Path
from typing import Any, Dict, List, Optional, Union
import json
import logging
import math
import os

import fasteners
import numpy as np
import platformdirs
import psutil

_logger = logging.getLogger("adaptwave")

# one dense-log entry is a float64 and two int64; arrays grow by doubling
_LOG_BYTES_PER_EVENT = 2 * 3 * 8


def default_output_dir() -> Path:
    return platformdirs.user_data_path("adaptwave") / "runs"


def output_lock(out_dir: Path) -> fasteners.InterProcessLock:
    """Lock held while files in `out_dir` are written, so concurrent runs never interleave."""
    out_dir.mkdir(parents=True, exist_ok=True)
    return fasteners.InterProcessLock(out_dir / ".lockfile")


def default_workers() -> int:
    """Physical cores, falling back to logical cores where psutil cannot tell."""
    cores = psutil.cpu_count(logical=False) or os.cpu_count() or 1
    return max(1, int(cores))


def dense_log_affordable(expected_events: float, replicates_in_flight: int = 1) -> bool:
    """Whether dense event logs for this many events fit in a quarter of free memory."""
    need = expected_events * _LOG_BYTES_PER_EVENT * max(1, replicates_in_flight)
    available = psutil.virtual_memory().available
    ok = need < available / 4
    if not ok:
        _logger.warning(
            f"dense event log needs ~{need / 2**20:.0f} MiB, only {available / 2**20:.0f} MiB available"
        )
    return ok


def to_jsonable(value: Any) -> Any:
    """Converts numpy scalars, tuples and non-string keys into plain JSON values."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        # NaN and infinities have no JSON literal
        return None
    return value


def dumps(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True)


class RunIndex:
    """Names of the reports written to an output directory, stored in a JSON file there."""

    def __init__(self, out_dir: Path):
        self.path = Path(out_dir) / "index.json"

    def get_and_add(self, name: str) -> List[str]:
        old_values = self.get()
        values = old_values.copy()
        if name not in values:
            values.append(name)
            self.put(values)
        return old_values

    def get(self) -> List[str]:
        if not self.path.exists():
            return []
        return json.loads(self.path.read_text())

    def put(self, values: List[str]) -> None:
        self.path.write_text(json.dumps(values))


def write_json(obj: Any, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(dumps(obj) + "\n")
    _logger.info(f"wrote {path}")
    return path


def read_json(path: Union[str, Path]) -> Optional[Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        return None
    return json.loads(path.read_text())
