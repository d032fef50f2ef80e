"""Counter-based random streams.

Every independent circuit run owns a SplitMix64 stream. The key of run ``r``
under a base seed ``s`` is the ``r``-th SplitMix64 output of ``s``; draw ``t``
of a run is the ``t``-th SplitMix64 output of its key. Because a draw depends
only on ``(s, r, t)``, a batch can be split across any number of workers (or
vectorised across runs) without changing a single bit of the result.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0


def mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finaliser, applied element-wise to a uint64 array."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _offsets(seed: int, positions: np.ndarray) -> np.ndarray:
    # seed + (pos + 1) * GOLDEN mod 2**64, without scalar overflow warnings
    positions = np.asarray(positions, dtype=np.uint64)
    return np.uint64(seed & MASK64) + (positions + np.uint64(1)) * np.uint64(GOLDEN)


def splitmix(seed: int, positions) -> np.ndarray:
    """Outputs ``positions`` (0-based) of the SplitMix64 sequence seeded by ``seed``."""
    return mix64(_offsets(seed, np.atleast_1d(positions)))


def derive_seed(seed: int, index: int) -> int:
    """Child seed number ``index`` of ``seed`` (a plain Python int)."""
    return int(splitmix(seed, [index])[0])


def run_keys(base_seed: int, start: int, stop: int) -> np.ndarray:
    """Stream keys for runs ``start .. stop-1`` of a batch."""
    return splitmix(base_seed, np.arange(start, stop, dtype=np.uint64))


class RunStreams:
    """A bundle of per-run streams advanced in lock step.

    ``uniform()`` returns one draw in [0, 1) per run, and ``draws`` counts how
    many times each stream has been advanced.
    """

    def __init__(self, keys: np.ndarray, run_indices: np.ndarray | None = None):
        self.keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
        if run_indices is None:
            run_indices = np.arange(self.keys.size)
        self.run_indices = np.asarray(run_indices, dtype=np.int64)
        self.draws = 0

    @classmethod
    def for_runs(cls, base_seed: int, start: int, stop: int) -> "RunStreams":
        return cls(run_keys(base_seed, start, stop), np.arange(start, stop))

    @classmethod
    def single(cls, base_seed: int, run_index: int = 0) -> "RunStreams":
        return cls.for_runs(base_seed, run_index, run_index + 1)

    def __len__(self) -> int:
        return self.keys.size

    def uniform(self) -> np.ndarray:
        t = self.draws
        self.draws += 1
        z = mix64(self.keys + np.uint64((t + 1) * GOLDEN & MASK64))
        return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53
