# utils.py
import csv
import hashlib
import io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats


def sha256_to_uint64(input_string: str) -> int:
    """Derive a 64-bit integer from the SHA-256 digest of a string."""
    digest = hashlib.sha256(input_string.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def compute_hash(data: Union[np.ndarray, bytes, str]) -> str:
    """Compute SHA-256 hex digest of an array, raw bytes or text."""
    if isinstance(data, np.ndarray):
        data_bytes = np.ascontiguousarray(data).tobytes()
    elif isinstance(data, str):
        data_bytes = data.encode("utf-8")
    else:
        data_bytes = data
    return hashlib.sha256(data_bytes).hexdigest()


def file_sha256(path: Union[str, Path]) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def mean_and_stderr(samples: np.ndarray, axis: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sample mean and standard error along an axis of independent replicas.

    A single replica has no spread estimate; its standard error is reported as 0.
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[axis]
    if n == 0:
        raise ValueError("Cannot average an empty replica set.")
    mean = samples.mean(axis=axis)
    if n == 1:
        return mean, np.zeros_like(mean)
    stderr = samples.std(axis=axis, ddof=1) / np.sqrt(n)
    return mean, stderr


@dataclass
class LineFit:
    """Least-squares line with a two-sided confidence interval on the slope."""
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float
    points: int

    def to_dict(self) -> dict:
        return {
            "value": self.slope,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "points": self.points,
        }


def fit_line(x: Sequence[float], y: Sequence[float], confidence: float = 0.95) -> Optional[LineFit]:
    """
    Fit y = slope * x + intercept.

    Returns None with fewer than two distinct abscissae. With exactly two points
    the interval collapses onto the slope.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.unique(x).size < 2:
        return None
    result = stats.linregress(x, y)
    dof = x.size - 2
    if dof <= 0:
        half_width = 0.0
    else:
        half_width = float(stats.t.ppf(0.5 + confidence / 2.0, dof) * result.stderr)
    slope = float(result.slope)
    return LineFit(
        slope=slope,
        intercept=float(result.intercept),
        stderr=float(result.stderr),
        ci_low=slope - half_width,
        ci_high=slope + half_width,
        points=int(x.size),
    )


@dataclass
class TwoSampleResult:
    statistic: float
    pvalue: float
    level: float
    passed: bool
    max_quantile_gap: float


def two_sample_test(sample_a: np.ndarray, sample_b: np.ndarray, level: float = 0.01) -> TwoSampleResult:
    """
    Two-sample distributional comparison.

    Kolmogorov-Smirnov statistic and p-value decide the verdict; the largest gap
    between matching central quantiles (1%..99%) is reported alongside.
    """
    sample_a = np.asarray(sample_a, dtype=float)
    sample_b = np.asarray(sample_b, dtype=float)
    if sample_a.size == 0 or sample_b.size == 0:
        raise ValueError("Both samples must be nonempty.")
    result = stats.ks_2samp(sample_a, sample_b)
    probs = np.linspace(0.01, 0.99, 99)
    gap = float(np.max(np.abs(np.quantile(sample_a, probs) - np.quantile(sample_b, probs))))
    return TwoSampleResult(
        statistic=float(result.statistic),
        pvalue=float(result.pvalue),
        level=level,
        passed=bool(result.pvalue > level),
        max_quantile_gap=gap,
    )


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """Write text to a temporary file next to path, then rename over it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    return path


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Atomically write a CSV file with a header row (RFC-4180 quoting)."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_format_cell(value) for value in row])
    return atomic_write_text(path, buffer.getvalue())


def write_json(path: Union[str, Path], payload: Any) -> Path:
    """Atomically write pretty-printed JSON."""
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _format_cell(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    if value is None:
        return ""
    return value


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
