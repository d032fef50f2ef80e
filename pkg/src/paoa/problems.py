"""Ising problem instances, their energy, and exact oracles."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numba
import numpy as np

SK_NORMALIZED = "sk_normalized"
RAW = "raw"
MAX_EXACT_N = 30


class TooLargeError(ValueError):
    pass


@dataclass
class IsingInstance:
    """Symmetric couplings ``j`` (zero diagonal) and biases ``h``.

    With ``scale_convention="sk_normalized"`` the energy carries the SK factor
    ``1/sqrt(n)``; the p-circuit applies the same factor to local fields so that
    tanh dynamics at inverse temperature beta sample ``exp(-beta * E)``.
    """

    j: np.ndarray
    h: np.ndarray | None = None
    seed: int | None = None
    scale_convention: str = SK_NORMALIZED
    n: int = field(init=False)

    def __post_init__(self):
        self.j = np.array(self.j, dtype=float)
        n = self.j.shape[0]
        if self.j.shape != (n, n):
            raise ValueError(f"coupling matrix must be square, got {self.j.shape}")
        if not np.array_equal(self.j, self.j.T):
            raise ValueError("coupling matrix must be symmetric")
        if np.any(np.diag(self.j) != 0):
            raise ValueError("coupling matrix must have zero diagonal")
        self.h = np.zeros(n) if self.h is None else np.array(self.h, dtype=float)
        if self.h.shape != (n,):
            raise ValueError(f"bias vector must have length {n}")
        if self.scale_convention not in (SK_NORMALIZED, RAW):
            raise ValueError(f"unknown scale convention {self.scale_convention!r}")
        self.n = n

    @property
    def field_scale(self) -> float:
        return 1.0 / math.sqrt(self.n) if self.scale_convention == SK_NORMALIZED else 1.0

    @property
    def j_upper(self) -> np.ndarray:
        return self.j[np.triu_indices(self.n, 1)]

    @classmethod
    def from_upper(cls, n: int, j_upper, h=None, **kw) -> "IsingInstance":
        j = np.zeros((n, n))
        j[np.triu_indices(n, 1)] = j_upper
        return cls(j + j.T, h, **kw)


@dataclass
class GroundStateResult:
    e_sol: float
    argmin_state: np.ndarray


def gen_sk_instance(n: int, seed: int) -> IsingInstance:
    """SK instance: upper-triangle couplings i.i.d. N(0, 1), mirrored; no biases."""
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(seed)
    return IsingInstance.from_upper(n, rng.standard_normal(n * (n - 1) // 2), seed=seed)


@numba.njit(cache=True)
def _pair_sum(j, h, states):
    # sequential sum over i < j, then the bias terms; the arithmetic of each row
    # does not depend on the batch it sits in
    rows, n = states.shape
    out = np.empty(rows)
    for r in range(rows):
        total = 0.0
        for i in range(n):
            for k in range(i + 1, n):
                total += j[i, k] * states[r, i] * states[r, k]
        for i in range(n):
            total += h[i] * states[r, i]
        out[r] = total
    return out


def energy(instance: IsingInstance, state):
    """Ising energy ``-(scale) * (sum_{i<j} J_ij s_i s_j + sum_i h_i s_i)``.

    ``state`` may be a single configuration or a 2-D batch (one per row);
    a batch returns one energy per row.
    """
    s = np.asarray(state, dtype=float)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    if s.shape[1] != instance.n:
        raise ValueError(f"state has {s.shape[1]} spins, instance has {instance.n}")
    e = -instance.field_scale * _pair_sum(instance.j, instance.h, s)
    return float(e[0]) if single else e


@numba.njit(cache=True)
def _gray_walk(j, h, free, state, tol):
    n = state.size
    fields = j @ state + h
    e = -0.5 * (state @ (j @ state)) - h @ state
    best_e = e
    best = state.copy()
    m = free.size
    for step in range(1, 1 << m):
        bit = 0
        while not (step >> bit) & 1:
            bit += 1
        i = free[bit]
        s_old = state[i]
        e += 2.0 * s_old * fields[i]
        state[i] = -s_old
        for k in range(n):
            fields[k] -= 2.0 * s_old * j[k, i]
        if e < best_e - tol:
            best_e = e
            best[:] = state
        elif e <= best_e + tol:
            # near-tie: keep the lexicographically smaller state (-1 < +1)
            for k in range(n):
                if state[k] != best[k]:
                    if state[k] < best[k]:
                        best[:] = state
                        if e < best_e:
                            best_e = e
                    break
    return best


def exact_ground_state(instance: IsingInstance) -> GroundStateResult:
    """Minimum energy over all 2^n states by an incremental Gray-code walk.

    With zero biases the energy is invariant under a global flip, so spin 0 is
    pinned to +1 and only 2^(n-1) states are visited. Among (numerically) tied
    minima the lexicographically smallest state is returned.
    """
    n = instance.n
    if n > MAX_EXACT_N:
        raise TooLargeError(f"n={n} exceeds the enumeration limit {MAX_EXACT_N}")
    symmetric = not np.any(instance.h)
    free = np.arange(1 if symmetric else 0, n, dtype=np.int64)
    start = np.ones(n) if symmetric else -np.ones(n)
    # start from the lexicographically smallest state of the walk
    start[free] = -1.0
    scale_ref = 1.0 + np.abs(instance.j).sum() + np.abs(instance.h).sum()
    best = _gray_walk(instance.j, instance.h, free, start, 1e-12 * scale_ref)
    best = best.astype(np.int8)
    return GroundStateResult(e_sol=energy(instance, best), argmin_state=best)


def all_states(n: int) -> np.ndarray:
    """Every configuration of ``n`` spins, first spin most significant, -1 before +1."""
    return np.array(list(itertools.product((-1, 1), repeat=n)), dtype=np.int8)


def state_index(states) -> np.ndarray:
    """Integer label of each state: bits m = (s + 1)/2, first spin most significant."""
    s = np.atleast_2d(np.asarray(states))
    m = (s > 0).astype(np.int64)
    weights = 1 << np.arange(s.shape[1] - 1, -1, -1, dtype=np.int64)
    return m @ weights


def majority_bit(m1: int, m2: int, m3: int) -> int:
    return (m1 | m2) if m3 else (m1 & m2)


def majority_truth_set() -> frozenset[int]:
    """The eight valid [m1 m2 m3 m4] rows (m1 most significant)."""
    return frozenset(
        8 * m1 + 4 * m2 + 2 * m3 + majority_bit(m1, m2, m3)
        for m1, m2, m3 in itertools.product((0, 1), repeat=3)
    )


def majority_target_distribution() -> np.ndarray:
    """Probability over the 16 four-bit states: 1/8 on each truth-table row."""
    target = np.zeros(16)
    target[sorted(majority_truth_set())] = 1.0 / 8.0
    return target
