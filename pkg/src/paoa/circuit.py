"""Layered p-circuit sampling: the PAOA forward pass and an equilibrium Glauber chain.

Every p-bit update reads its local field ``I_i = sum_j J_ij s_j + h_i``, scales
it by the instance's field factor and the layer inverse temperature, and sets
``s_i = sgn(f(x) - u)`` with ``u`` uniform on [-1, 1] (sgn(0) = +1). The
emulator backend instead drives a calibrated pixel at ``vg = v_bias + k * x``
and reads ``m = 1`` with probability given by the pixel's Gompertz curve.

All runs in a batch advance together as rows of one array; each row consumes
its own counter-based stream (see :mod:`paoa.rng`), so results do not depend
on how a batch is chunked or spread over workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .device import ActivationKind, SymmetricTanh, gompertz_prob
from .emulator import Emulator
from .problems import IsingInstance, energy
from .rng import RunStreams

DEFAULT_CHUNK = 1 << 16


class DimensionMismatchError(ValueError):
    pass


@dataclass
class TwoSchedule:
    """Per-layer inverse temperatures for the two halves of the spins."""

    beta1: np.ndarray
    beta2: np.ndarray

    def __post_init__(self):
        self.beta1 = np.array(self.beta1, dtype=float).ravel()
        self.beta2 = np.array(self.beta2, dtype=float).ravel()
        if self.beta1.size != self.beta2.size or self.beta1.size < 1:
            raise ValueError("beta1 and beta2 must have the same non-zero length")
        both = np.concatenate([self.beta1, self.beta2])
        if not np.all(np.isfinite(both)) or np.any(both < 0):
            raise ValueError("inverse temperatures must be finite and non-negative")

    @property
    def p(self) -> int:
        return self.beta1.size

    @classmethod
    def constant(cls, p: int, beta: float = 1.0) -> "TwoSchedule":
        return cls(np.full(p, beta), np.full(p, beta))

    @classmethod
    def from_vector(cls, x) -> "TwoSchedule":
        x = np.asarray(x, dtype=float)
        half = x.size // 2
        return cls(x[:half], x[half:])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.beta1, self.beta2])


def first_half_size(n: int) -> int:
    """Number of spins on schedule 1 (ceil(n/2); the split is arbitrary for SK)."""
    return (n + 1) // 2


def beta_for_spin(schedule: TwoSchedule, layer: int, spin: int, n: int) -> float:
    """Inverse temperature of ``spin`` (1-based) in ``layer`` (1-based)."""
    if not 1 <= layer <= schedule.p:
        raise ValueError(f"layer {layer} outside 1..{schedule.p}")
    if spin <= first_half_size(n):
        return float(schedule.beta1[layer - 1])
    return float(schedule.beta2[layer - 1])


def schedule_betas(schedule: TwoSchedule, n: int) -> np.ndarray:
    """(p, n) table of per-layer, per-spin inverse temperatures."""
    first = np.arange(n) < first_half_size(n)
    return np.where(first[None, :], schedule.beta1[:, None], schedule.beta2[:, None])


@dataclass
class PCircuitConfig:
    """Circuit shape and sampler. ``update_order`` is a 0-based permutation."""

    n: int
    p: int
    update_order: np.ndarray | None = None
    activation: ActivationKind = field(default_factory=SymmetricTanh)
    backend: Emulator | None = None

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.update_order is None:
            self.update_order = np.arange(self.n)
        self.update_order = np.asarray(self.update_order, dtype=np.int64)
        if not np.array_equal(np.sort(self.update_order), np.arange(self.n)):
            raise ValueError("update_order must be a permutation of 0..n-1")


@dataclass
class RunBatch:
    states: np.ndarray
    energies: np.ndarray
    seed: int

    def __len__(self) -> int:
        return self.energies.size


def local_field(state, instance: IsingInstance, i: int) -> float:
    """``sum_j J_ij s_j + h_i`` (unscaled)."""
    return float(instance.j[i] @ np.asarray(state, dtype=float) + instance.h[i])


def _draw(rng) -> float:
    return float(np.asarray(rng.uniform()).ravel()[0])


def update_pbit(state, instance: IsingInstance, i: int, beta: float, activation: ActivationKind,
                rng) -> np.ndarray:
    """One p-bit update of spin ``i``; returns a new state, other spins untouched."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    x = beta * instance.field_scale * local_field(state, instance, i)
    u = 2.0 * _draw(rng) - 1.0
    out = np.array(state, dtype=np.int8)
    out[i] = 1 if activation(x) - u >= 0 else -1
    return out


def _simulate(couplings: np.ndarray, h: np.ndarray, betas: np.ndarray, order: np.ndarray,
              activation: ActivationKind, backend: Emulator | None,
              streams: RunStreams) -> np.ndarray:
    """Advance every stream through all layers; returns (runs, n) spins as float."""
    p, n = betas.shape
    layered = couplings.ndim == 3
    s = np.empty((len(streams), n))
    for i in range(n):
        s[:, i] = np.where(streams.uniform() < 0.5, 1.0, -1.0)
    if backend is not None:
        tables = backend.cohort_tables(n)
        cohort = streams.run_indices % tables["alpha"].shape[0]
        tables = {k: v[cohort] for k, v in tables.items()}
    for k in range(p):
        jk = couplings[k] if layered else couplings
        for i in order:
            # couplings are symmetric: row i is column i, and contiguous
            x = betas[k, i] * (s @ jk[i] + h[i])
            u = streams.uniform()
            if backend is None:
                s[:, i] = np.where(activation(x) - (2.0 * u - 1.0) >= 0, 1.0, -1.0)
            else:
                vg = tables["v_bias"][:, i] + tables["gain"][:, i] * x
                prob = gompertz_prob(tables["alpha"][:, i], tables["kappa"][:, i], vg)
                s[:, i] = np.where(u < prob, 1.0, -1.0)
    return s


def _sample_chunk(couplings, h, betas, order, activation, backend, base_seed, start, stop):
    streams = RunStreams.for_runs(base_seed, start, stop)
    return _simulate(couplings, h, betas, order, activation, backend, streams).astype(np.int8)


def sample_states(couplings: np.ndarray, h: np.ndarray, betas: np.ndarray,
                  config: PCircuitConfig, n_runs: int, base_seed: int, workers: int = 1,
                  chunk_size: int = DEFAULT_CHUNK) -> np.ndarray:
    """Final states of ``n_runs`` independent circuits.

    ``couplings`` is either one (n, n) matrix shared by all layers or a
    (p, n, n) stack, and must already include any field scale. ``betas`` is the
    (p, n) table of per-layer, per-spin multipliers.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    bounds = [(a, min(a + chunk_size, n_runs)) for a in range(0, n_runs, chunk_size)]
    args = (couplings, h, betas, config.update_order, config.activation, config.backend, base_seed)
    if workers > 1 and len(bounds) > 1:
        from joblib import Parallel, delayed

        parts = Parallel(n_jobs=workers)(delayed(_sample_chunk)(*args, a, b) for a, b in bounds)
    else:
        parts = [_sample_chunk(*args, a, b) for a, b in bounds]
    return np.concatenate(parts)


def _check_dims(instance: IsingInstance, schedule: TwoSchedule, config: PCircuitConfig):
    if instance.n != config.n:
        raise DimensionMismatchError(f"instance has {instance.n} spins, config expects {config.n}")
    if schedule.p != config.p:
        raise DimensionMismatchError(f"schedule depth {schedule.p} != config depth {config.p}")


def run_paoa_circuit(instance: IsingInstance, schedule: TwoSchedule, config: PCircuitConfig,
                     rng: RunStreams) -> np.ndarray:
    """One PAOA forward pass: random start, then p sequential sweeps.

    ``rng`` must hold exactly one stream; it is advanced n * (p + 1) times.
    """
    _check_dims(instance, schedule, config)
    if len(rng) != 1:
        raise ValueError("run_paoa_circuit takes a single stream")
    s = _simulate(instance.j * instance.field_scale, instance.h * instance.field_scale,
                  schedule_betas(schedule, instance.n), config.update_order,
                  config.activation, config.backend, rng)
    return s[0].astype(np.int8)


def sample_batch(instance: IsingInstance, schedule: TwoSchedule, config: PCircuitConfig,
                 n_runs: int, base_seed: int, workers: int = 1) -> RunBatch:
    """``n_runs`` forward passes; run ``r`` uses stream key ``splitmix(base_seed)[r]``."""
    _check_dims(instance, schedule, config)
    states = sample_states(instance.j * instance.field_scale, instance.h * instance.field_scale,
                           schedule_betas(schedule, instance.n), config, n_runs, base_seed,
                           workers)
    return RunBatch(states, energy(instance, states), base_seed)


@numba.njit(cache=True)
def _glauber_sweeps(j, h, s, beta, u, n_sweeps, record, out):
    n = s.size
    t = 0
    for sweep in range(n_sweeps):
        for i in range(n):
            x = beta * (j[i] @ s + h[i])
            s[i] = 1.0 if math.tanh(x) - (2.0 * u[t] - 1.0) >= 0 else -1.0
            t += 1
        if record:
            out[sweep] = s


def run_equilibrium(instance: IsingInstance, beta: float, n_sweeps: int, burn_in: int,
                    rng: np.random.Generator, chunk_sweeps: int = 100_000) -> np.ndarray:
    """Sequential tanh Glauber dynamics at fixed ``beta``.

    Returns one (n,) state per recorded sweep, ``n_sweeps`` rows in total,
    after ``burn_in`` unrecorded sweeps.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    n = instance.n
    j = instance.j * instance.field_scale
    h = instance.h * instance.field_scale
    s = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    scratch = np.empty((0, n))
    for done in range(0, burn_in, chunk_sweeps):
        m = min(chunk_sweeps, burn_in - done)
        _glauber_sweeps(j, h, s, float(beta), rng.random(m * n), m, False, scratch)
    out = np.empty((n_sweeps, n))
    for done in range(0, n_sweeps, chunk_sweeps):
        m = min(chunk_sweeps, n_sweeps - done)
        _glauber_sweeps(j, h, s, float(beta), rng.random(m * n), m, True, out[done:done + m])
    return out.astype(np.int8)
