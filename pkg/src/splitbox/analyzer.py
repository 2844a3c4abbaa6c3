"""Statistics over benchmark runs and share samples."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

# two-sided normal quantiles
Z_SCORES = {0.90: 1.6449, 0.95: 1.9600, 0.99: 2.5758, 0.999: 3.2905}


@dataclass
class DelaySummary:
    """Entry-to-exit delay statistics of one run, in nanoseconds.

    Attributes:
        count: Number of delays summarised.
        mean: Arithmetic mean.
        p50: Median.
        p99: 99th percentile.
        maximum: Largest delay.
    """

    count: int
    mean: float
    p50: float
    p99: float
    maximum: float


def summarize_delays(delays_ns: Sequence[int] | np.ndarray) -> DelaySummary:
    """Summarise a sample of delays; all zeros when the sample is empty."""
    delays = np.asarray(delays_ns, dtype=np.float64)
    if delays.size == 0:
        return DelaySummary(0, 0.0, 0.0, 0.0, 0.0)
    p50, p99 = np.percentile(delays, [50, 99])
    return DelaySummary(
        count=int(delays.size),
        mean=float(delays.mean()),
        p50=float(p50),
        p99=float(p99),
        maximum=float(delays.max()),
    )


def relative_spread(values: Sequence[float]) -> float:
    """``(max - min) / max``; 0 for empty or all-zero input."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0 or arr.max() <= 0:
        return 0.0
    return float((arr.max() - arr.min()) / arr.max())


def is_non_increasing(values: Sequence[float], tolerance: float = 0.0) -> bool:
    """True if no value exceeds its predecessor by more than ``tolerance``.

    The tolerance is relative to the predecessor, so ``0.1`` allows
    run-to-run noise of up to 10%.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        return True
    return bool(np.all(arr[1:] <= arr[:-1] * (1.0 + tolerance)))


def binomial_interval(
    successes: int, trials: int, confidence: float = 0.99
) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion.

    Raises:
        ValueError: If ``trials`` is not positive or the confidence level is
            not tabulated.
    """
    if trials <= 0:
        raise ValueError("need at least one trial")
    if confidence not in Z_SCORES:
        raise ValueError(f"confidence must be one of {sorted(Z_SCORES)}")
    z = Z_SCORES[confidence]
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def bit_matrix(values: Sequence[int], width: int) -> np.ndarray:
    """Rows of ``values`` unpacked into ``width`` columns, MSB first."""
    shifts = np.arange(width - 1, -1, -1)
    rows = [[(v >> int(s)) & 1 for s in shifts] for v in values]
    return np.asarray(rows, dtype=np.uint8).reshape(len(values), width)


def bit_frequencies(values: Sequence[int], width: int) -> np.ndarray:
    """Fraction of ones at each bit position."""
    if not values:
        return np.zeros(width)
    return bit_matrix(values, width).mean(axis=0)


def max_pairwise_correlation(columns: np.ndarray) -> float:
    """Largest absolute Pearson correlation between distinct columns.

    Constant columns are ignored.
    """
    columns = np.asarray(columns, dtype=np.float64)
    if columns.ndim != 2 or columns.shape[1] < 2:
        return 0.0
    varying = columns[:, columns.std(axis=0) > 0]
    if varying.shape[1] < 2:
        return 0.0
    corr = np.corrcoef(varying, rowvar=False)
    np.fill_diagonal(corr, 0.0)
    return float(np.abs(corr).max())
