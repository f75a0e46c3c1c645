from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class ScanPath:
    """Ordered fixations in normalized ``[0, 1]^2`` image coordinates.

    ``channels`` optionally records which output map produced each fixation.
    """

    fixations: np.ndarray
    channels: tuple[int, ...] | None = None

    def __post_init__(self):
        fix = np.asarray(self.fixations, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "fixations", fix)
        if self.channels is not None and len(self.channels) != len(fix):
            raise ValueError(f"{len(self.channels)} channel indices for {len(fix)} fixations")

    def __len__(self) -> int:
        return len(self.fixations)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScanPath):
            return NotImplemented
        return np.array_equal(self.fixations, other.fixations) and self.channels == other.channels

    @property
    def xs(self) -> np.ndarray:
        return self.fixations[:, 0]

    @property
    def ys(self) -> np.ndarray:
        return self.fixations[:, 1]

    def validate(self) -> "ScanPath":
        if len(self) == 0:
            raise ValueError("empty scanpath")
        bad = np.flatnonzero(~np.all((self.fixations >= 0) & (self.fixations <= 1), axis=1))
        if bad.size:
            i = int(bad[0])
            raise ValueError(f"fixation {i} at {tuple(self.fixations[i])} lies outside [0, 1]^2")
        return self


def as_fixations(sp) -> np.ndarray:
    """(n, 2) float64 view of a ScanPath or any array-like of points."""
    if isinstance(sp, ScanPath):
        return sp.fixations
    return np.asarray(sp, dtype=np.float64).reshape(-1, 2)
