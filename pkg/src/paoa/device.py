"""pgSPAD dark-count statistics and the Gompertz activation they produce.

A pixel reports ``m = 1`` when no dark count fires inside an integration
window. With a Poisson dark-count rate ``lambda0 * exp(zeta*theta - alpha*Vg)``
the probability of ``m = 1`` is the Gompertz sigmoid
``exp(-kappa * exp(-alpha * Vg))`` with ``kappa = lambda0 * exp(zeta*theta) * T_int``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

# exp() overflows past ~709; exponent arguments are clipped to this magnitude.
EXP_CLAMP = 700.0

# Transition-range constant for the Gompertz curve, used as given.
TRANSIT_CONSTANT = 1.925


class InvalidParamsError(ValueError):
    pass


class DegenerateCurveError(ValueError):
    pass


class JitterRatioError(ValueError):
    pass


@dataclass(frozen=True)
class GompertzParams:
    """Device activation parameters plus the operating point.

    Either pass ``kappa`` directly, or pass ``lambda0`` together with
    ``theta`` and ``t_int`` and let ``kappa`` be derived. ``zeta`` defaults to
    zero (no temperature dependence).
    """

    alpha: float
    kappa: float | None = None
    lambda0: float | None = None
    zeta: float = 0.0
    theta: float = 0.0
    t_int: float | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidParamsError(f"alpha must be > 0, got {self.alpha}")
        if self.t_int is not None and not self.t_int > 0:
            raise InvalidParamsError(f"t_int must be > 0, got {self.t_int}")
        if self.lambda0 is not None and not self.lambda0 > 0:
            raise InvalidParamsError(f"lambda0 must be > 0, got {self.lambda0}")
        derived = None
        if self.lambda0 is not None and self.t_int is not None:
            derived = self.lambda0 * math.exp(self.zeta * self.theta) * self.t_int
        if self.kappa is None:
            if derived is None:
                raise InvalidParamsError("need kappa, or lambda0 with t_int")
            object.__setattr__(self, "kappa", derived)
        elif derived is not None and not math.isclose(self.kappa, derived, rel_tol=1e-12):
            raise InvalidParamsError(
                f"kappa={self.kappa} inconsistent with lambda0*exp(zeta*theta)*t_int={derived}"
            )
        if not self.kappa > 0:
            raise InvalidParamsError(f"kappa must be > 0, got {self.kappa}")

    def at_temperature(self, theta: float) -> "GompertzParams":
        """Same device at another temperature; kappa rescales by exp(zeta * dtheta)."""
        kappa = self.kappa * math.exp(self.zeta * (theta - self.theta))
        if self.lambda0 is not None and self.t_int is not None:
            kappa = None
        return replace(self, theta=theta, kappa=kappa)


@dataclass(frozen=True)
class ActivationDescriptors:
    v_mid: float
    v_inflc: float
    dv_transit: float


def _exp_clamped(arg):
    return np.exp(np.clip(arg, -EXP_CLAMP, EXP_CLAMP))


def dark_count_rate(p: GompertzParams, theta: float, vg):
    """Dark-count rate in events per second at temperature ``theta`` and gate ``vg``."""
    if p.lambda0 is None:
        raise InvalidParamsError("dark_count_rate needs lambda0")
    out = p.lambda0 * _exp_clamped(p.zeta * theta - p.alpha * np.asarray(vg, dtype=float))
    return out if np.ndim(out) else float(out)


def event_probability(rate, t_int: float):
    """Probability of one or more Poisson events in a window of length ``t_int``."""
    rate = np.asarray(rate, dtype=float)
    if np.any(rate < 0) or not t_int > 0:
        raise ValueError("need rate >= 0 and t_int > 0")
    out = -np.expm1(-rate * t_int)
    return out if np.ndim(out) else float(out)


def gompertz_prob(alpha, kappa, vg):
    """``exp(-kappa * exp(-alpha * vg))``, broadcasting over all arguments."""
    return np.exp(-kappa * _exp_clamped(-np.multiply(alpha, vg)))


def prob_one(p: GompertzParams, vg):
    """Probability that the pixel reports m = 1 (no avalanche) at gate voltage ``vg``."""
    out = gompertz_prob(p.alpha, p.kappa, np.asarray(vg, dtype=float))
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class SymmetricTanh:
    """Glauber activation ``tanh(x)``."""

    kind = "tanh"

    def __call__(self, x):
        return np.tanh(x)

    def prob_plus(self, x):
        # (1 + tanh x) / 2 without cancellation
        return expit(2.0 * np.asarray(x, dtype=float))

    def to_dict(self) -> dict:
        return {"kind": "tanh"}


@dataclass(frozen=True)
class Gompertz:
    """Bipolar Gompertz activation ``2 exp(-kappa exp(-alpha x)) - 1``."""

    alpha: float = 1.4
    kappa: float = math.log(2.0)
    kind = "gompertz"

    def __post_init__(self):
        if not (self.alpha > 0 and self.kappa > 0):
            raise InvalidParamsError("Gompertz activation needs alpha > 0 and kappa > 0")

    @classmethod
    def from_params(cls, p: GompertzParams) -> "Gompertz":
        return cls(alpha=p.alpha, kappa=p.kappa)

    def __call__(self, x):
        return 2.0 * gompertz_prob(self.alpha, self.kappa, np.asarray(x, dtype=float)) - 1.0

    def prob_plus(self, x):
        return gompertz_prob(self.alpha, self.kappa, np.asarray(x, dtype=float))

    def to_dict(self) -> dict:
        return {"kind": "gompertz", "alpha": self.alpha, "kappa": self.kappa}


ActivationKind = SymmetricTanh | Gompertz


def activation_from_dict(d: dict) -> ActivationKind:
    kind = d.get("kind")
    if kind == "tanh":
        return SymmetricTanh()
    if kind == "gompertz":
        return Gompertz(alpha=float(d["alpha"]), kappa=float(d["kappa"]))
    raise ValueError(f"unknown activation kind {kind!r}")


def bipolar_activation(kind: ActivationKind, x):
    out = kind(x)
    return out if np.ndim(out) else float(out)


def descriptors(p: GompertzParams) -> ActivationDescriptors:
    return ActivationDescriptors(
        v_mid=math.log(p.kappa / math.log(2.0)) / p.alpha,
        v_inflc=math.log(p.kappa) / p.alpha,
        dv_transit=TRANSIT_CONSTANT / p.alpha,
    )


def slope_gain(alpha: float) -> float:
    """Volts per unit input that give the Gompertz curve a slope of 1/2 at its inflection."""
    if not alpha > 0:
        raise InvalidParamsError("alpha must be > 0")
    return math.e / (2.0 * alpha)


def temperature_shift(p: GompertzParams, d_theta: float) -> float:
    """Shift of the inflection (and mid-point) voltage for a temperature change ``d_theta``."""
    return p.zeta * d_theta / p.alpha


def jitter_shift(p: GompertzParams, d_t: float) -> float:
    """First-order inflection shift for an integration-window error ``d_t``."""
    if p.t_int is None:
        raise InvalidParamsError("jitter_shift needs t_int")
    r = d_t / p.t_int
    if abs(r) >= 0.1:
        raise JitterRatioError(f"|d_t / t_int| = {abs(r):.3g} is not small (limit 0.1)")
    return r / p.alpha


def fit_gompertz(vg, p_hat, n_windows) -> GompertzParams:
    """Fit (alpha, kappa) to an empirical activation curve.

    Uses the double-log linearisation ``ln(-ln p) = ln kappa - alpha * vg`` and a
    least-squares line weighted by the window count of each point. Points with
    ``p_hat`` of exactly 0 or 1 carry no information in that space and are
    dropped.
    """
    vg = np.asarray(vg, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    w = np.broadcast_to(np.asarray(n_windows, dtype=float), vg.shape)
    keep = (p_hat > 0) & (p_hat < 1)
    if keep.sum() < 3:
        raise DegenerateCurveError(f"only {int(keep.sum())} usable points (need 3)")
    x, y, w = vg[keep], np.log(-np.log(p_hat[keep])), w[keep]
    if np.ptp(y) == 0 or np.ptp(x) == 0:
        raise DegenerateCurveError("curve is flat")
    sw = np.sqrt(w)
    A = np.column_stack([np.ones_like(x), x]) * sw[:, None]
    (intercept, slope), *_ = np.linalg.lstsq(A, y * sw, rcond=None)
    if not -slope > 0:
        raise DegenerateCurveError(f"fitted slope {-slope} is not positive")
    return GompertzParams(alpha=float(-slope), kappa=float(math.exp(intercept)))
