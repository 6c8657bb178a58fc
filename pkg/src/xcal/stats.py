"""Order-independent per-channel moments.

Each sample contributes its own (count, mean, M2) triple per channel. The
triples are reduced with ``math.fsum``, which is exactly rounded, so the
result does not depend on sample order, batch boundaries or worker count.
"""

from __future__ import annotations

import math

import numpy as np


class ChannelMoments:
    def __init__(self):
        self._counts: list[np.ndarray] = []
        self._means: list[np.ndarray] = []
        self._m2s: list[np.ndarray] = []

    def add(self, x: np.ndarray) -> "ChannelMoments":
        """Add a batch laid out N x C x ... (channel axis 1)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim < 2:
            raise ValueError(f"expected N x C x ... activations, got {x.shape}")
        flat = x.reshape(x.shape[0], x.shape[1], -1)
        mean = flat.mean(axis=2)
        m2 = ((flat - mean[:, :, None]) ** 2).sum(axis=2)
        self._counts.append(np.full(mean.shape, flat.shape[2], dtype=np.float64))
        self._means.append(mean)
        self._m2s.append(m2)
        return self

    def merge(self, other: "ChannelMoments") -> "ChannelMoments":
        self._counts += other._counts
        self._means += other._means
        self._m2s += other._m2s
        return self

    @property
    def empty(self) -> bool:
        return not self._counts

    def finalize(self) -> tuple[int, np.ndarray, np.ndarray]:
        """Return (values per channel, mean, population variance) in float64."""
        if self.empty:
            raise ValueError("no samples were accumulated")
        n = np.concatenate(self._counts)
        mu = np.concatenate(self._means)
        m2 = np.concatenate(self._m2s)
        total = math.fsum(n[:, 0])
        channels = mu.shape[1]
        mean = np.array([math.fsum(n[:, c] * mu[:, c]) / total for c in range(channels)])
        var = np.array(
            [
                (math.fsum(m2[:, c]) + math.fsum(n[:, c] * (mu[:, c] - mean[c]) ** 2)) / total
                for c in range(channels)
            ]
        )
        return int(total), mean, var
