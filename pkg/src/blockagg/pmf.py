"""Integer-supported probability mass functions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class BitPmf:
    """A finite pmf over non-negative integers (bits, blocks, counts...).

    ``values`` is strictly increasing; ``probs`` sum to one within 1e-9.
    Build instances through :meth:`from_arrays` which merges duplicate
    support points.
    """

    values: np.ndarray
    probs: np.ndarray
    unit: str = "bits"
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int64)
        probs = np.asarray(self.probs, dtype=float)
        if values.shape != probs.shape or values.ndim != 1 or values.size == 0:
            raise ValueError("values and probs must be equal-length non-empty 1-d arrays")
        if np.any(values < 0):
            raise ValueError("pmf support must be non-negative")
        if np.any(np.diff(values) <= 0):
            raise ValueError("pmf support must be strictly increasing")
        if np.any(probs < -1e-15):
            raise ValueError("negative probability mass")
        if abs(probs.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_cdf", np.cumsum(probs))

    @classmethod
    def from_arrays(cls, values, weights, unit="bits", normalize=False) -> "BitPmf":
        values = np.asarray(values, dtype=np.int64).ravel()
        weights = np.asarray(weights, dtype=float).ravel()
        keep = weights > 0
        if not keep.any():
            raise ValueError("pmf has no positive mass")
        support, inverse = np.unique(values[keep], return_inverse=True)
        probs = np.bincount(inverse, weights=weights[keep], minlength=support.size)
        if normalize:
            probs = probs / probs.sum()
        return cls(support, probs, unit)

    @classmethod
    def from_dict(cls, mapping: dict, unit="bits") -> "BitPmf":
        keys = list(mapping)
        return cls.from_arrays(keys, [mapping[k] for k in keys], unit)

    @classmethod
    def point(cls, value: int, unit="bits") -> "BitPmf":
        return cls(np.array([value]), np.array([1.0]), unit)

    def as_dict(self) -> dict:
        return {int(v): float(p) for v, p in zip(self.values, self.probs)}

    def __len__(self):
        return self.values.size

    def __getitem__(self, value) -> float:
        i = np.searchsorted(self.values, value)
        if i < self.values.size and self.values[i] == value:
            return float(self.probs[i])
        return 0.0

    @property
    def min(self) -> int:
        return int(self.values[0])

    @property
    def max(self) -> int:
        return int(self.values[-1])

    def mean(self) -> float:
        return float(np.dot(self.values.astype(float), self.probs))

    def var(self) -> float:
        v = self.values.astype(float)
        m = np.dot(v, self.probs)
        return float(np.dot((v - m) ** 2, self.probs))

    def cdf(self, x):
        """P(X <= x), vectorised over ``x``."""
        idx = np.searchsorted(self.values, x, side="right")
        out = np.where(idx > 0, self._cdf[np.maximum(idx - 1, 0)], 0.0)
        return np.minimum(out, 1.0)

    def sf(self, x):
        """P(X > x)."""
        return np.maximum(1.0 - self.cdf(x), 0.0)

    def scaled(self, factor: int, unit=None) -> "BitPmf":
        return BitPmf(self.values * int(factor), self.probs, unit or self.unit)

    def shifted(self, offset: int) -> "BitPmf":
        return BitPmf(self.values + int(offset), self.probs, self.unit)
