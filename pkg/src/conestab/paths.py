from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class PathGrid:
    """Vector values on a strictly increasing time grid.

    ``values`` has shape ``(len(times), k)``; 1-D input is promoted to a
    single column.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != t.shape[0]:
            raise ValueError(f"{t.shape[0]} times but values of shape {v.shape}")
        if t.size == 0:
            raise ValueError("empty path")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValueError("path has non-finite entries")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, values, h: float, t0: float = 0.0) -> "PathGrid":
        v = np.asarray(values, dtype=float)
        return cls(t0 + h * np.arange(v.shape[0]), v)

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.times.shape[0]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=1)

    def __eq__(self, other):
        if not isinstance(other, PathGrid):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(
            self.values, other.values
        )


def uniform_grid(horizon: float, h: float) -> np.ndarray:
    """Times ``0, h, ..., M h`` with ``M = round(horizon / h)``."""
    m = int(round(horizon / h))
    if m < 1 or abs(m * h - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a positive multiple of h = {h}")
    return h * np.arange(m + 1)
