"""Fixed-width queue-time bins, 1-indexed, last bin unbounded above."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BinSpec:
    bin_size_minutes: float
    n_bins: int

    def __post_init__(self):
        if not (self.bin_size_minutes > 0 and math.isfinite(self.bin_size_minutes)):
            raise ValueError("bin size must be a positive finite number of minutes")
        if int(self.n_bins) != self.n_bins or self.n_bins < 2:
            raise ValueError("need at least 2 bins")

    def bounds(self, b: int) -> tuple[float, float]:
        """Half-open minute range ``[lo, hi)`` of bin ``b`` (hi is inf for the last bin)."""
        if not 1 <= b <= self.n_bins:
            raise ValueError(f"bin {b} outside 1..{self.n_bins}")
        lo = (b - 1) * self.bin_size_minutes
        hi = math.inf if b == self.n_bins else b * self.bin_size_minutes
        return lo, hi

    def to_dict(self):
        return {"size": self.bin_size_minutes, "count": self.n_bins}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["size"]), int(d["count"]))


def assign_bins(labels, spec: BinSpec) -> np.ndarray:
    q = np.asarray(labels, dtype=np.float64)
    if np.any(~np.isfinite(q)) or np.any(q < 0):
        raise ValueError("queue-time labels must be finite and non-negative")
    b = np.floor(q / spec.bin_size_minutes) + 1
    return np.minimum(b, spec.n_bins).astype(np.int64)
