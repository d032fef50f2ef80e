"""Benchmark metrics, bootstrap intervals, and geometric schedule extrapolation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .circuit import PCircuitConfig, TwoSchedule, sample_batch
from .device import ActivationKind
from .problems import IsingInstance
from .rng import derive_seed

DEFAULT_RESAMPLES = 10_000
CI_MODES = ("runs", "instances")


class DegenerateScheduleError(ValueError):
    pass


def residual_energy(mean_e: float, e_sol: float, n: int) -> float:
    """Per-spin gap between the sampled mean energy and the ground-state energy."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return (mean_e - e_sol) / n


def approx_ratio(mean_e: float, e_sol: float) -> float:
    if not e_sol < 0:
        raise ValueError(f"approximation ratio needs a negative ground-state energy, got {e_sol}")
    return mean_e / e_sol


@numba.njit(cache=True)
def _resample_means(values, n_resamples, key):
    # resample b, draw t takes index floor(u * n), u from SplitMix64 at key + b*n + t
    n, m = values.shape
    out = np.zeros((n_resamples, m))
    z = np.uint64(key)
    for b in range(n_resamples):
        for _ in range(n):
            z += np.uint64(0x9E3779B97F4A7C15)
            x = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            x = x ^ (x >> np.uint64(31))
            i = int((x >> np.uint64(11)) * (1.0 / 9007199254740992.0) * n)
            for c in range(m):
                out[b, c] += values[i, c]
    return out / n


def bootstrap_cis(columns, n_resamples: int = DEFAULT_RESAMPLES, level: float = 0.95,
                  seed: int = 0) -> list[tuple[float, float]]:
    """Percentile bootstrap intervals for the means of several aligned columns.

    All columns share the same resampled indices.
    """
    values = np.column_stack([np.asarray(c, dtype=float).ravel() for c in columns])
    if values.shape[0] == 0:
        raise ValueError("bootstrap of an empty sample")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    means = _resample_means(values, n_resamples, np.uint64(derive_seed(seed, 0)))
    tail = (1 - level) / 2
    out = []
    for c in range(values.shape[1]):
        if np.ptp(values[:, c]) == 0:
            out.append((float(values[0, c]), float(values[0, c])))
        else:
            lo, hi = np.quantile(means[:, c], [tail, 1 - tail])
            out.append((float(lo), float(hi)))
    return out


def bootstrap_ci(values, n_resamples: int = DEFAULT_RESAMPLES, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of ``values``; deterministic given ``seed``."""
    return bootstrap_cis([values], n_resamples, level, seed)[0]


@dataclass(frozen=True)
class ScheduleModel:
    """Log-geometric ramp from ``beta0`` to ``beta_f`` with curvature ``c``.

    ``log beta(g) = log beta0 + g * log(beta_f / beta0) + c * g * (1 - g)``
    for a layer position ``g`` running from 0 to 1.
    """

    beta0: float
    beta_f: float
    c: float
    rss: float = math.nan

    @property
    def log_beta0(self) -> float:
        return math.log(self.beta0)

    @property
    def log_betaf(self) -> float:
        return math.log(self.beta_f)


def layer_positions(p: int) -> np.ndarray:
    """``k / (p - 1)`` for k = 0..p-1; a single layer sits at 0."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if p == 1:
        return np.zeros(1)
    return np.arange(p) / (p - 1)


def model_log_schedule(model: ScheduleModel, gamma: np.ndarray) -> np.ndarray:
    return (model.log_beta0 + gamma * (model.log_betaf - model.log_beta0)
            + model.c * gamma * (1 - gamma))


def fit_schedule_model(schedule) -> ScheduleModel:
    """Closed-form least-squares curvature for a fixed-endpoint geometric ramp."""
    beta = np.asarray(schedule, dtype=float).ravel()
    if beta.size < 3:
        raise DegenerateScheduleError("need at least 3 layers to fit a curvature")
    if np.any(beta <= 0):
        raise DegenerateScheduleError("schedule entries must be positive")
    gamma = layer_positions(beta.size)
    log_beta = np.log(beta)
    g = gamma * (1 - gamma)
    r = log_beta - log_beta[0] - gamma * (log_beta[-1] - log_beta[0])
    c = float(g @ r / (g @ g))
    rss = float(((r - c * g) ** 2).sum())
    return ScheduleModel(float(beta[0]), float(beta[-1]), c, rss)


def extrapolate_schedule(model: ScheduleModel, p_target: int) -> np.ndarray:
    """Model schedule at depth ``p_target``; endpoints are exactly beta0 and beta_f."""
    gamma = layer_positions(p_target)
    out = np.exp(model_log_schedule(model, gamma))
    out[0] = model.beta0
    if p_target >= 2:
        out[-1] = model.beta_f
    return out


def fit_two_schedule(schedule: TwoSchedule) -> tuple[ScheduleModel, ScheduleModel]:
    return fit_schedule_model(schedule.beta1), fit_schedule_model(schedule.beta2)


def extrapolate_two_schedule(models: tuple[ScheduleModel, ScheduleModel], p_target: int) -> TwoSchedule:
    return TwoSchedule(extrapolate_schedule(models[0], p_target),
                       extrapolate_schedule(models[1], p_target))


@dataclass(frozen=True)
class MetricPoint:
    depth: int
    mean: float
    ci_low: float
    ci_high: float
    n_samples: int


@dataclass(frozen=True)
class DepthMetrics:
    depth: int
    mean_energy: float
    mean_e_sol: float
    residual: MetricPoint
    ratio: MetricPoint
    n_runs: int
    n_instances: int


def _intervals(columns: list[list[np.ndarray]], mode: str, n_resamples: int, level: float,
               seed: int) -> list[tuple[float, float, float, int]]:
    if mode == "runs":
        pooled = [np.concatenate(c) for c in columns]
    elif mode == "instances":
        pooled = [np.array([v.mean() for v in c]) for c in columns]
    else:
        raise ValueError(f"unknown CI mode {mode!r}; expected one of {CI_MODES}")
    cis = bootstrap_cis(pooled, n_resamples, level, seed)
    out = []
    for v, (lo, hi) in zip(pooled, cis):
        mean = float(v.mean())
        # percentile intervals can in principle exclude the sample mean; keep it inside
        out.append((mean, min(lo, mean), max(hi, mean), v.size))
    return out


def depth_metrics(depth: int, energies: list[np.ndarray], e_sols, n: int, ci_mode: str = "runs",
                  n_resamples: int = DEFAULT_RESAMPLES, level: float = 0.95,
                  seed: int = 0) -> DepthMetrics:
    """Residual energy and approximation ratio at one depth.

    ``energies[k]`` holds the per-run energies on instance ``k``. In ``runs``
    mode the interval resamples the pooled per-run values; in ``instances``
    mode it resamples the per-instance means.
    """
    residuals = [(e - es) / n for e, es in zip(energies, e_sols)]
    ratios = [e / es for e, es in zip(energies, e_sols)]
    res, rat = _intervals([residuals, ratios], ci_mode, n_resamples, level, seed)
    return DepthMetrics(
        depth=depth,
        mean_energy=float(np.mean([e.mean() for e in energies])),
        mean_e_sol=float(np.mean(e_sols)),
        residual=MetricPoint(depth, *res),
        ratio=MetricPoint(depth, *rat),
        n_runs=int(sum(e.size for e in energies)),
        n_instances=len(energies),
    )


def sample_energies(instances: list[IsingInstance], schedule: TwoSchedule,
                    activation: ActivationKind, runs: int, seed: int, backend=None,
                    workers: int = 1) -> list[np.ndarray]:
    """Per-run energies on each instance; instance ``k`` uses base seed ``derive_seed(seed, k)``."""
    out = []
    for k, inst in enumerate(instances):
        config = PCircuitConfig(inst.n, schedule.p, activation=activation, backend=backend)
        out.append(sample_batch(inst, schedule, config, runs, derive_seed(seed, k), workers).energies)
    return out


def metric_curve(instances: list[IsingInstance], e_sols, schedules_by_depth: dict[int, TwoSchedule],
                 activation: ActivationKind, runs: int, seed: int, backend=None,
                 ci_mode: str = "runs", n_resamples: int = DEFAULT_RESAMPLES,
                 level: float = 0.95, workers: int = 1) -> list[DepthMetrics]:
    """Run inference at every depth and summarise it across instances.

    The same per-instance seeds are reused at every depth.
    """
    out = []
    for depth in sorted(schedules_by_depth):
        energies = sample_energies(instances, schedules_by_depth[depth], activation, runs, seed,
                                   backend, workers)
        out.append(depth_metrics(depth, energies, e_sols, instances[0].n, ci_mode,
                                 n_resamples, level, seed))
    return out
