"""The PAOA outer loop: sampled costs, COBYLA training, and schedule averaging.

Cost evaluations reuse one sampling seed for the whole optimiser run (common
random numbers), so the sampled cost is a deterministic function of the
parameters and a training trajectory is reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import nlopt
import numpy as np

from .circuit import PCircuitConfig, RunBatch, TwoSchedule, sample_batch, sample_states
from .device import ActivationKind
from .problems import IsingInstance, majority_target_distribution, state_index

BETA_BOUNDS = (0.0, 50.0)
COUPLING_BOUNDS = (-50.0, 50.0)
LAPLACE_EPSILON = 0.5
MAJORITY_N = 4

__all__ = [
    "TwoSchedule", "CouplingAnsatz", "OptimizerConfig", "TrainingResult", "avg_energy_cost",
    "cross_entropy_cost", "kl_divergence", "entropy", "minimize", "train_instance",
    "average_schedules", "train_majority", "majority_distribution",
]


@dataclass
class CouplingAnsatz:
    """One symmetric 4x4 coupling matrix per layer (zero diagonal)."""

    j_layers: np.ndarray

    def __post_init__(self):
        self.j_layers = np.array(self.j_layers, dtype=float)
        if self.j_layers.ndim != 3 or self.j_layers.shape[1] != self.j_layers.shape[2]:
            raise ValueError("j_layers must have shape (p, n, n)")
        if not np.array_equal(self.j_layers, self.j_layers.transpose(0, 2, 1)):
            raise ValueError("layer couplings must be symmetric")
        if np.any(np.diagonal(self.j_layers, axis1=1, axis2=2)):
            raise ValueError("layer couplings must have zero diagonal")

    @property
    def p(self) -> int:
        return self.j_layers.shape[0]

    @property
    def n(self) -> int:
        return self.j_layers.shape[1]

    @classmethod
    def from_vector(cls, x, p: int, n: int = MAJORITY_N) -> "CouplingAnsatz":
        iu = np.triu_indices(n, 1)
        x = np.asarray(x, dtype=float).reshape(p, -1)
        j = np.zeros((p, n, n))
        for k in range(p):
            j[k][iu] = x[k]
            j[k] += j[k].T
        return cls(j)

    def to_vector(self) -> np.ndarray:
        iu = np.triu_indices(self.n, 1)
        return np.concatenate([layer[iu] for layer in self.j_layers])


@dataclass
class OptimizerConfig:
    """COBYLA settings and the sampling budget per cost evaluation.

    ``max_iterations`` caps cost evaluations; ``initial_step`` and ``eps_step``
    are the starting and final trust-region radii.
    """

    max_iterations: int = 300
    eps_step: float = 1e-4
    initial_step: float = 0.5
    cost_seed: int = 0
    runs_per_eval: int = 10_000
    workers: int = 1

    def __post_init__(self):
        if not 0 < self.eps_step < self.initial_step:
            raise ValueError("need 0 < eps_step < initial_step")
        if self.max_iterations < 0 or self.runs_per_eval < 1:
            raise ValueError("max_iterations must be >= 0 and runs_per_eval >= 1")


@dataclass
class TrainingResult:
    parameters: object
    cost_trace: list[tuple[int, float]]
    evaluations_used: int
    termination_reason: str
    x: np.ndarray = field(repr=False, default=None)

    @property
    def initial_cost(self) -> float:
        return self.cost_trace[0][1]

    @property
    def best_cost(self) -> float:
        return min(c for _, c in self.cost_trace)

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate([c for _, c in self.cost_trace])


def avg_energy_cost(batch: RunBatch) -> float:
    if len(batch) == 0:
        raise ValueError("empty batch")
    return float(np.mean(batch.energies))


def smoothed_counts(counts, epsilon: float = LAPLACE_EPSILON) -> np.ndarray:
    """Laplace-smoothed probabilities ``(count + eps) / (total + eps * K)``."""
    counts = np.asarray(counts, dtype=float)
    return (counts + epsilon) / (counts.sum() + epsilon * counts.size)


def entropy(p) -> float:
    p = np.asarray(p, dtype=float)
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


def cross_entropy_cost(counts, target, epsilon: float = LAPLACE_EPSILON) -> float:
    """``-sum target * ln q`` with q the Laplace-smoothed empirical distribution."""
    counts = np.asarray(counts, dtype=float)
    target = np.asarray(target, dtype=float)
    if np.any(counts < 0) or not epsilon > 0:
        raise ValueError("counts must be non-negative and epsilon positive")
    if not math.isclose(target.sum(), 1.0, rel_tol=1e-9):
        raise ValueError("target must sum to 1")
    q = smoothed_counts(counts, epsilon)
    nz = target > 0
    return float(-(target[nz] * np.log(q[nz])).sum())


def _smooth(p, epsilon):
    p = np.asarray(p, dtype=float)
    return (p + epsilon) / (p.sum() + epsilon * p.size)


def kl_divergence(p, q, epsilon: float = 1e-12) -> float:
    """``sum p ln(p/q)`` after smoothing both distributions to full support."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    p, q = _smooth(p, epsilon), _smooth(q, epsilon)
    return float(max((p * np.log(p / q)).sum(), 0.0))


def minimize(cost_fn: Callable[[np.ndarray], float], x0, config: OptimizerConfig,
             bounds: tuple[float, float] | None = None) -> TrainingResult:
    """Derivative-free minimisation by COBYLA, returning the best point seen.

    COBYLA keeps a linear model interpolating m + 1 points and a trust radius
    that starts at ``initial_step`` and stops shrinking at ``eps_step``; it
    also stops after ``max_iterations`` cost evaluations. When ``bounds`` is
    given, every coordinate is confined to that box.
    """
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    trace: list[tuple[int, float]] = []
    best = {"x": None, "cost": math.inf}

    def wrapped(x, grad=None):
        x = np.array(x, dtype=float)
        if bounds is not None:
            x = np.clip(x, *bounds)
        cost = float(cost_fn(x))
        trace.append((len(trace), cost))
        if cost < best["cost"] or best["x"] is None:
            best.update(x=x.copy(), cost=cost)
        return cost

    if bounds is not None:
        x0 = np.clip(x0, *bounds)
    if config.max_iterations == 0:
        wrapped(x0)
        reason = "max_iterations"
    else:
        opt = nlopt.opt(nlopt.LN_COBYLA, x0.size)
        opt.set_min_objective(wrapped)
        opt.set_initial_step(config.initial_step)
        opt.set_xtol_abs(config.eps_step)
        opt.set_maxeval(config.max_iterations)
        if bounds is not None:
            opt.set_lower_bounds(np.full(x0.size, bounds[0]))
            opt.set_upper_bounds(np.full(x0.size, bounds[1]))
        try:
            opt.optimize(x0)
            status = opt.last_optimize_result()
        except nlopt.RoundoffLimited:
            status = nlopt.XTOL_REACHED
        reason = "max_iterations" if status == nlopt.MAXEVAL_REACHED else "step_tolerance"
    return TrainingResult(best["x"], trace, len(trace), reason, x=best["x"])


def train_instance(instance: IsingInstance, p: int, activation: ActivationKind,
                   config: OptimizerConfig, initial_beta: float = 1.0,
                   backend=None) -> TrainingResult:
    """Train a two-schedule ansatz on one instance by minimising mean sampled energy.

    Parameters are the flattened vector ``[beta1(1..p), beta2(1..p)]``.
    """
    circuit = PCircuitConfig(instance.n, p, activation=activation, backend=backend)

    def cost(x):
        batch = sample_batch(instance, TwoSchedule.from_vector(x), circuit,
                             config.runs_per_eval, config.cost_seed, config.workers)
        return avg_energy_cost(batch)

    x0 = np.full(2 * p, float(initial_beta))
    result = minimize(cost, x0, config, bounds=BETA_BOUNDS)
    result.parameters = TwoSchedule.from_vector(result.x)
    return result


def average_schedules(schedules: list[TwoSchedule]) -> TwoSchedule:
    if not schedules:
        raise ValueError("no schedules to average")
    if len({s.p for s in schedules}) != 1:
        raise ValueError("schedules have different depths")
    return TwoSchedule(np.mean([s.beta1 for s in schedules], axis=0),
                       np.mean([s.beta2 for s in schedules], axis=0))


def majority_counts(ansatz: CouplingAnsatz, activation: ActivationKind, n_runs: int,
                    seed: int, workers: int = 1, backend=None) -> np.ndarray:
    """Histogram over the 16 states of the final layer, couplings used at beta = 1."""
    config = PCircuitConfig(ansatz.n, ansatz.p, activation=activation, backend=backend)
    betas = np.ones((ansatz.p, ansatz.n))
    states = sample_states(ansatz.j_layers, np.zeros(ansatz.n), betas, config, n_runs, seed,
                           workers)
    return np.bincount(state_index(states), minlength=1 << ansatz.n)


def majority_distribution(ansatz: CouplingAnsatz, activation: ActivationKind, n_runs: int,
                          seed: int, workers: int = 1, backend=None) -> np.ndarray:
    counts = majority_counts(ansatz, activation, n_runs, seed, workers, backend)
    return counts / counts.sum()


def train_majority(p: int, activation: ActivationKind, config: OptimizerConfig,
                   initial_coupling: float = 0.1,
                   epsilon: float = LAPLACE_EPSILON) -> TrainingResult:
    """Fit per-layer 4-spin couplings so the final distribution matches the majority table."""
    if p < 1:
        raise ValueError("p must be >= 1")
    target = majority_target_distribution()

    def cost(x):
        counts = majority_counts(CouplingAnsatz.from_vector(x, p), activation,
                                 config.runs_per_eval, config.cost_seed, config.workers)
        return cross_entropy_cost(counts, target, epsilon)

    x0 = np.full(6 * p, float(initial_coupling))
    result = minimize(cost, x0, config, bounds=COUPLING_BOUNDS)
    result.parameters = CouplingAnsatz.from_vector(result.x, p)
    return result
