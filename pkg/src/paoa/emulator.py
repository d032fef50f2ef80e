"""A virtual pgSPAD array: per-pixel variability, calibration, and sampling.

Pixel parameters live in flat arrays indexed row-major (``index = row * cols + col``).
``kappa_at_ref`` is the Poisson exposure at the array's reference temperature
``theta`` and window ``t_int``; at another temperature it rescales by
``exp(zeta * (theta_op - theta))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import device
from .device import GompertzParams, gompertz_prob

DEFAULT_VG_GRID = np.linspace(-2.0, 2.0, 41)


class InvalidSpecError(ValueError):
    pass


class UncalibratedPixelError(RuntimeError):
    pass


@dataclass(frozen=True)
class PixelModel:
    alpha: float
    kappa_at_ref: float
    zeta: float

    def params(self, theta_ref: float, theta: float | None = None) -> GompertzParams:
        kappa = self.kappa_at_ref
        if theta is not None:
            kappa *= math.exp(self.zeta * (theta - theta_ref))
        return GompertzParams(alpha=self.alpha, kappa=kappa, zeta=self.zeta,
                              theta=theta_ref if theta is None else theta)


@dataclass(frozen=True)
class VariabilitySpec:
    """Lognormal spread of pixel parameters, given as mean and relative sigma.

    The defaults centre on (alpha, kappa) = (1.4, ln 2). They are placeholders:
    the spread of a real array is not characterised here.
    """

    alpha_mean: float = 1.4
    alpha_rel_sigma: float = 0.10
    kappa_mean: float = math.log(2.0)
    kappa_rel_sigma: float = 0.20
    zeta_mean: float = 0.05
    zeta_rel_sigma: float = 0.0

    def __post_init__(self):
        if not (self.alpha_mean > 0 and self.kappa_mean > 0):
            raise InvalidSpecError("alpha and kappa means must be positive")
        if min(self.alpha_rel_sigma, self.kappa_rel_sigma, self.zeta_rel_sigma) < 0:
            raise InvalidSpecError("relative sigmas must be non-negative")
        if self.zeta_rel_sigma > 0 and not self.zeta_mean > 0:
            raise InvalidSpecError("a spread in zeta needs a positive zeta mean")

    @classmethod
    def uniform(cls, alpha: float = 1.4, kappa: float = math.log(2.0), zeta: float = 0.05):
        """Zero-variance spec: every pixel identical."""
        return cls(alpha, 0.0, kappa, 0.0, zeta, 0.0)


def _lognormal(rng: np.random.Generator, mean: float, rel_sigma: float, size: int) -> np.ndarray:
    if rel_sigma == 0:
        return np.full(size, float(mean))
    s2 = math.log1p(rel_sigma**2)
    return rng.lognormal(math.log(mean) - s2 / 2, math.sqrt(s2), size)


@dataclass
class ArrayModel:
    rows: int
    cols: int
    alpha: np.ndarray
    kappa_at_ref: np.ndarray
    zeta: np.ndarray
    theta: float = 25.0
    t_int: float = 1e-6
    rng_seed: int | None = None
    spec: VariabilitySpec | None = None

    def __post_init__(self):
        size = self.rows * self.cols
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(size)
        self.kappa_at_ref = np.asarray(self.kappa_at_ref, dtype=float).reshape(size)
        self.zeta = np.asarray(self.zeta, dtype=float).reshape(size)
        if np.any(self.alpha <= 0) or np.any(self.kappa_at_ref <= 0):
            raise InvalidSpecError("every pixel needs alpha > 0 and kappa > 0")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def pixel(self, index: int) -> PixelModel:
        return PixelModel(float(self.alpha[index]), float(self.kappa_at_ref[index]),
                          float(self.zeta[index]))

    def kappa(self, theta: float | None = None) -> np.ndarray:
        """Per-pixel kappa at operating temperature ``theta`` (reference if None)."""
        if theta is None or theta == self.theta:
            return self.kappa_at_ref
        return self.kappa_at_ref * np.exp(self.zeta * (theta - self.theta))


def synthesize_array(spec: VariabilitySpec | None = None, rows: int = 64, cols: int = 64,
                     seed: int = 0, theta: float = 25.0, t_int: float = 1e-6) -> ArrayModel:
    """Draw independent pixel parameters from ``spec``; deterministic given ``seed``."""
    spec = spec or VariabilitySpec()
    rng = np.random.default_rng(seed)
    size = rows * cols
    alpha = _lognormal(rng, spec.alpha_mean, spec.alpha_rel_sigma, size)
    kappa = _lognormal(rng, spec.kappa_mean, spec.kappa_rel_sigma, size)
    zeta = _lognormal(rng, spec.zeta_mean, spec.zeta_rel_sigma, size)
    return ArrayModel(rows, cols, alpha, kappa, zeta, theta, t_int, seed, spec)


@dataclass
class SweepCurve:
    vg: np.ndarray
    p_hat: np.ndarray
    n_windows: np.ndarray


def sweep_activation(array: ArrayModel, pixel_index: int, vg_grid, n_windows: int,
                     rng: np.random.Generator, theta: float | None = None) -> SweepCurve:
    """Empirical Pr{m=1} of one pixel at each gate voltage, from ``n_windows`` windows each."""
    if not 0 <= pixel_index < array.size:
        raise IndexError(f"pixel {pixel_index} outside a {array.rows}x{array.cols} array")
    if n_windows < 1:
        raise ValueError("n_windows must be >= 1")
    vg = np.asarray(vg_grid, dtype=float)
    p = gompertz_prob(array.alpha[pixel_index], array.kappa(theta)[pixel_index], vg)
    ones = rng.binomial(n_windows, p)
    return SweepCurve(vg, ones / n_windows, np.full(vg.shape, n_windows))


@dataclass(frozen=True)
class PixelCalibration:
    v_bias: float
    gain_k: float
    fitted_alpha: float
    fitted_kappa: float


def calibrate_pixel(curve: SweepCurve) -> PixelCalibration:
    """Fit the sweep, centre the pixel at its mid-point, and slope-match the gain."""
    fit = device.fit_gompertz(curve.vg, curve.p_hat, curve.n_windows)
    return PixelCalibration(
        v_bias=device.descriptors(fit).v_mid,
        gain_k=device.slope_gain(fit.alpha),
        fitted_alpha=fit.alpha,
        fitted_kappa=fit.kappa,
    )


def compensate_drift(cal: PixelCalibration, pixel: PixelModel, d_theta: float) -> PixelCalibration:
    """Move the bias by the predicted mid-point shift for a temperature change."""
    return replace(cal, v_bias=cal.v_bias + pixel.zeta * d_theta / cal.fitted_alpha)


@dataclass
class CalibrationMap:
    """Per-pixel calibration tables (NaN marks an uncalibrated pixel)."""

    v_bias: np.ndarray
    gain_k: np.ndarray
    fitted_alpha: np.ndarray
    fitted_kappa: np.ndarray
    theta: float

    @classmethod
    def empty(cls, size: int, theta: float) -> "CalibrationMap":
        nan = lambda: np.full(size, np.nan)  # noqa: E731
        return cls(nan(), nan(), nan(), nan(), theta)

    def __getitem__(self, index: int) -> PixelCalibration:
        if np.isnan(self.v_bias[index]):
            raise UncalibratedPixelError(f"pixel {index} has no calibration")
        return PixelCalibration(float(self.v_bias[index]), float(self.gain_k[index]),
                                float(self.fitted_alpha[index]), float(self.fitted_kappa[index]))

    def __setitem__(self, index: int, cal: PixelCalibration):
        self.v_bias[index] = cal.v_bias
        self.gain_k[index] = cal.gain_k
        self.fitted_alpha[index] = cal.fitted_alpha
        self.fitted_kappa[index] = cal.fitted_kappa

    def compensated(self, array: ArrayModel, d_theta: float) -> "CalibrationMap":
        """Drift-compensated copy for every pixel at once."""
        out = CalibrationMap(self.v_bias + array.zeta * d_theta / self.fitted_alpha,
                             self.gain_k.copy(), self.fitted_alpha.copy(),
                             self.fitted_kappa.copy(), self.theta + d_theta)
        return out


def calibrate_array(array: ArrayModel, vg_grid=DEFAULT_VG_GRID, n_windows: int = 10_000,
                    seed: int = 0, theta: float | None = None,
                    pixels=None) -> CalibrationMap:
    """Sweep and calibrate every pixel (or the given subset).

    Pixel ``i`` draws from ``default_rng([seed, i])``, so the result does not
    depend on the order in which pixels are processed.
    """
    theta = array.theta if theta is None else theta
    cal = CalibrationMap.empty(array.size, theta)
    for index in range(array.size) if pixels is None else pixels:
        rng = np.random.default_rng([seed, int(index)])
        curve = sweep_activation(array, int(index), vg_grid, n_windows, rng, theta)
        cal[int(index)] = calibrate_pixel(curve)
    return cal


def gate_voltage(cal_map: CalibrationMap, pixel_index, input_i):
    """Map a dimensionless p-bit input to the pixel's gate voltage."""
    v_bias = cal_map.v_bias[pixel_index]
    if np.any(np.isnan(v_bias)):
        raise UncalibratedPixelError(f"pixel {pixel_index} has no calibration")
    return v_bias + cal_map.gain_k[pixel_index] * input_i


def sample_bit(array: ArrayModel, cal_map: CalibrationMap, pixel_index: int, input_i: float,
               rng, theta: float | None = None) -> int:
    """One integration window of one pixel driven at ``input_i``; returns s = 2m - 1.

    ``rng`` is a numpy Generator or anything with a ``uniform()`` method
    returning a draw in [0, 1).
    """
    vg = gate_voltage(cal_map, pixel_index, input_i)
    p = gompertz_prob(array.alpha[pixel_index], array.kappa(theta)[pixel_index], vg)
    u = rng.uniform()
    return 1 if float(np.asarray(u).ravel()[0]) < p else -1


@dataclass
class Emulator:
    """Sampling backend that routes p-bit updates through calibrated array pixels.

    The array is split into cohorts of ``n`` consecutive pixels (row-major,
    starting at ``pixel_offset``); run ``r`` of a batch uses cohort
    ``r mod n_cohorts``. The layer inverse temperature scales the input before
    voltage mapping: ``vg = v_bias + k * (beta * I)``.
    """

    array: ArrayModel
    calibration: CalibrationMap
    theta: float | None = None
    pixel_offset: int = 0
    kind: str = field(default="emulator", init=False)

    def cohorts(self, n: int) -> np.ndarray:
        count = (self.array.size - self.pixel_offset) // n
        if count < 1:
            raise ValueError(f"array of {self.array.size} pixels cannot host {n} p-bits")
        return self.pixel_offset + np.arange(count * n).reshape(count, n)

    def cohort_tables(self, n: int) -> dict[str, np.ndarray]:
        """(n_cohorts, n) tables of alpha, kappa, v_bias and gain for an n-spin circuit."""
        idx = self.cohorts(n)
        if np.any(np.isnan(self.calibration.v_bias[idx])):
            raise UncalibratedPixelError("cohort uses uncalibrated pixels")
        return {
            "alpha": self.array.alpha[idx],
            "kappa": self.array.kappa(self.theta)[idx],
            "v_bias": self.calibration.v_bias[idx],
            "gain": self.calibration.gain_k[idx],
        }
