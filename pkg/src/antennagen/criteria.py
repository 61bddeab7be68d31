"""Binary validity labeling and threshold bookkeeping.

Performance metrics (dB, lower is better) are turned into valid/invalid
labels either per metric (every metric must pass its own threshold) or
through a weighted sum compared against a single threshold.  Thresholds
typically come from nearest-rank percentiles of the observed scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CriterionSpec:
    """Validity rule; direction is always <= (more negative passes)."""

    mode: str                      # "per_metric" | "weighted_sum"
    thresholds: tuple = ()         # per-metric c_i, mode "per_metric"
    weights: tuple = ()            # w_i, mode "weighted_sum"
    threshold: float = 0.0         # c, mode "weighted_sum"

    def __post_init__(self):
        if self.mode not in ("per_metric", "weighted_sum"):
            raise ValueError("unknown criterion mode %r" % self.mode)
        values = self.thresholds + self.weights + (self.threshold,)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("criterion parameters must be finite")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "thresholds": list(self.thresholds),
            "weights": list(self.weights),
            "threshold": self.threshold,
        }


def label(metrics, spec: CriterionSpec) -> bool:
    """True (valid) when the metrics satisfy the criterion, ties included."""
    p = np.asarray(metrics, dtype=float)
    if spec.mode == "per_metric":
        if p.shape[-1] != len(spec.thresholds):
            raise ValueError(
                "metric count %d != threshold count %d" % (p.shape[-1], len(spec.thresholds))
            )
        return bool(np.all(p <= np.asarray(spec.thresholds)))
    if p.shape[-1] != len(spec.weights):
        raise ValueError(
            "metric count %d != weight count %d" % (p.shape[-1], len(spec.weights))
        )
    return bool(float(p @ np.asarray(spec.weights)) <= spec.threshold)


def weighted_score(metrics, weights) -> float:
    return float(np.asarray(metrics, dtype=float) @ np.asarray(weights, dtype=float))


def band_target(curve, band, level=-10.0) -> float:
    """Mean positive excess of the sweep above ``level`` inside ``band``.

    Zero iff every in-band sample is at or below the level.  The band is
    sampled on the evaluator's own sweep grid.
    """
    f_lo, f_hi = band
    freqs = np.asarray(curve.freqs)
    s11 = np.asarray(curve.s11)
    mask = (freqs >= f_lo) & (freqs <= f_hi)
    if not np.any(mask):
        raise ValueError("band [%g, %g] GHz holds no sweep samples" % (f_lo, f_hi))
    return float(np.mean(np.maximum(s11[mask] - level, 0.0)))


def percentile_threshold(values, q) -> float:
    """Nearest-rank percentile on ascending scores; q=50 is the median.

    The returned threshold is always a member of ``values``.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty value list")
    if not 0.0 < q < 100.0:
        raise ValueError("percentile must lie in (0, 100)")
    ordered = np.sort(values)
    rank = int(math.ceil(q / 100.0 * values.size))  # 1-based nearest rank
    return float(ordered[max(rank, 1) - 1])
