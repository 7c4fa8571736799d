"""Buffered deterministic random draws for the event loop.

A DrawStream wraps a PCG64 generator and hands out scalar uniforms and
normals from pre-drawn chunks.  Draw order is part of the simulation's
determinism contract: the same seed always yields the same draw sequence.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 8192


class DrawStream:
    __slots__ = ("rng", "_u", "_ui", "_z", "_zi")

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self._u: list = []
        self._ui = 0
        self._z: list = []
        self._zi = 0

    def u(self) -> float:
        """Uniform draw in [0, 1)."""
        i = self._ui
        if i == len(self._u):
            self._u = self.rng.random(_CHUNK).tolist()
            i = 0
        self._ui = i + 1
        return self._u[i]

    def normal(self) -> float:
        """Standard normal draw."""
        i = self._zi
        if i == len(self._z):
            self._z = self.rng.standard_normal(_CHUNK).tolist()
            i = 0
        self._zi = i + 1
        return self._z[i]

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        v = int(self.u() * n)
        return v if v < n else n - 1
