"""Counter-based Gaussian increments.

Path ``p`` of a run with base seed ``s`` draws from a Philox-4x64 generator
keyed by ``(s, p)``. Step ``m`` consumes raw 64-bit outputs
``[m*r, (m+1)*r)`` with ``r = 2*ceil(k/2)``; consecutive pairs become
normals by the Box-Muller transform. The normal vector of any step is
therefore a fixed function of ``(base_seed, path_index, step_index)`` and
does not depend on how paths are scheduled.
"""

from __future__ import annotations

import numpy as np

_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0
_MASK64 = (1 << 64) - 1


def path_key(base_seed: int, path_index: int) -> np.ndarray:
    return np.array([int(base_seed) & _MASK64, int(path_index) & _MASK64], dtype=np.uint64)


class NormalStream:
    """Standard normal ``k``-vectors, one per step, in step order."""

    def __init__(self, base_seed: int, path_index: int, k: int):
        self.k = k
        self.raw_per_step = 2 * ((k + 1) // 2)
        self._bitgen = np.random.Philox(key=path_key(base_seed, path_index))
        self.step = 0

    def next(self, n_steps: int) -> np.ndarray:
        raw = self._bitgen.random_raw(n_steps * self.raw_per_step)
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53
        u = u.reshape(n_steps, -1, 2)
        r = np.sqrt(-2.0 * np.log(u[..., 0]))
        theta = _TWO_PI * u[..., 1]
        z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)
        self.step += n_steps
        return z.reshape(n_steps, -1)[:, : self.k]
