"""Tri-state per-pixel training targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEGATIVE = 0
IGNORE = 128
POSITIVE = 255


@dataclass
class PixelSupervision:
    """Per-pixel target: positive, negative or ignore.

    States are stored as ``uint8`` codes equal to their PGM gray levels.
    """

    states: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.uint8)
        if s.ndim != 2:
            raise ValueError("supervision must be 2-D")
        bad = ~np.isin(s, (NEGATIVE, IGNORE, POSITIVE))
        if bad.any():
            raise ValueError(f"invalid supervision codes: {np.unique(s[bad])[:5]}")
        self.states = s

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "PixelSupervision":
        """Fully labeled target: mask pixels positive, the rest negative."""
        return cls(np.where(np.asarray(mask, dtype=bool), POSITIVE, NEGATIVE).astype(np.uint8))

    @classmethod
    def ignore_all(cls, width: int, height: int) -> "PixelSupervision":
        return cls(np.full((height, width), IGNORE, dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.states.shape[1]

    @property
    def height(self) -> int:
        return self.states.shape[0]

    @property
    def positive(self) -> np.ndarray:
        return self.states == POSITIVE

    @property
    def negative(self) -> np.ndarray:
        return self.states == NEGATIVE

    @property
    def valid(self) -> np.ndarray:
        return self.states != IGNORE
