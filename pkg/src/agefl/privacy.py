"""Age-dependent differential privacy and the adaptive Laplace mechanism."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


# above this, exp(eps) is rewritten to avoid overflow
_LARGE = 50.0


class PrivacyError(ValueError):
    pass


@dataclass(frozen=True)
class PrivacyRequirement:
    """Global age-dependent DP target ``eps_bar`` (nats)."""

    eps_bar: float

    def __post_init__(self):
        if not (math.isfinite(self.eps_bar) and self.eps_bar > 0):
            raise PrivacyError(f"eps_bar must be positive and finite, got {self.eps_bar}")


def age_epsilon(eps_c: float, delta: float) -> float:
    """Age-dependent budget ``ln(1 + delta (e^eps_c - 1))`` of an eps_c-DP
    mechanism whose input has aged to distinguishability ``delta``."""
    if eps_c < 0 or delta < 0:
        raise PrivacyError("eps_c and delta must be non-negative")
    if delta > 1:
        raise PrivacyError(f"delta must lie in [0, 1], got {delta}")
    if delta == 0:
        return 0.0
    if math.isinf(eps_c):
        return math.inf
    if eps_c > _LARGE:
        return min(eps_c, eps_c + math.log(delta * -math.expm1(-eps_c) + math.exp(-eps_c)))
    # never above eps_c; same rounding caveat as in required_classic_eps
    return min(eps_c, math.log1p(delta * math.expm1(eps_c)))


def required_classic_eps(eps_bar: float, delta: float) -> float:
    """Classic budget a mechanism must meet so that aging by ``delta``
    yields exactly ``eps_bar``.

    Returns ``math.inf`` when ``delta == 0``: aging alone already gives
    ``eps = 0`` and no noise is needed.
    """
    if eps_bar <= 0:
        raise PrivacyError("eps_bar must be positive")
    if delta < 0 or delta > 1:
        raise PrivacyError(f"delta must lie in [0, 1], got {delta}")
    if delta == 0:
        return math.inf
    if eps_bar > _LARGE:
        return eps_bar + math.log(-math.expm1(-eps_bar) / delta + math.exp(-eps_bar))
    # never below eps_bar; log1p(expm1(x)) can round one ulp under x
    return max(eps_bar, math.log1p(math.expm1(eps_bar) / delta))


def l1_sensitivity_mean(value_range: Sequence[float], n: int) -> float:
    """l1-sensitivity of the sample mean over ``n`` values in ``[lo, hi]``."""
    lo, hi = value_range
    if n < 1:
        raise PrivacyError("dataset size must be >= 1")
    if not hi > lo:
        raise PrivacyError("value range must satisfy hi > lo")
    return (hi - lo) / n


def laplace_scale(sensitivity: float, eps_c: float) -> float:
    """Laplace scale ``sensitivity / eps_c``.

    ``eps_c = 0`` would need infinite noise, which is refused. An infinite
    budget maps to scale 0 (no noise).
    """
    if sensitivity <= 0:
        raise PrivacyError("sensitivity must be positive")
    if eps_c <= 0:
        raise PrivacyError("eps_c = 0 requires an infinite Laplace scale")
    if math.isinf(eps_c):
        return 0.0
    return sensitivity / eps_c


def laplace_inverse_cdf(u, eta):
    """Laplace(0, eta) quantile at ``u``; vectorizes over numpy input."""
    c = np.asarray(u, dtype=float) - 0.5
    return -eta * np.sign(c) * np.log1p(-2.0 * np.abs(c))


def sample_laplace(eta: float, rng: np.random.Generator, size=None):
    """Draw Laplace(0, eta) noise by inverse CDF from ``rng.random``."""
    if eta < 0:
        raise PrivacyError("eta must be non-negative")
    u = rng.random(size)
    # u == 0 would map to -inf
    u = np.maximum(u, np.finfo(float).tiny)
    x = laplace_inverse_cdf(u, eta)
    return float(x) if size is None else x


def laplace_log_density_ratio(delta_shift: float, eta: float) -> float:
    """``sup_x ln p(x)/p(x + delta_shift)`` for the Laplace density, i.e.
    ``|delta_shift| / eta``."""
    return abs(delta_shift) / eta


@dataclass(frozen=True)
class NoisePlan:
    """Per-client classic budgets and Laplace scales.

    ``eps_c[i]`` is the classic budget client ``i`` actually provides
    (``inf`` when it adds no noise), ``eta[i]`` its Laplace scale and
    ``sigma_sq[i] = 2 eta[i]**2`` the noise variance.
    """

    mode: str
    eps_bar: float
    eps_c: tuple
    eta: tuple
    deltas: tuple
    zero_noise: tuple
    dimension: int = 1
    sigma_sq: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "sigma_sq", tuple(2.0 * e * e for e in self.eta))

    @property
    def m(self) -> int:
        return len(self.eta)

    @property
    def mean_noise_power(self) -> float:
        """``(1/m) sum_i sigma_sq[i]``."""
        return float(np.mean(self.sigma_sq))

    def achieved_eps(self) -> list[float]:
        return [age_epsilon(e, d) for e, d in zip(self.eps_c, self.deltas)]

    @property
    def achieved_eps_bar(self) -> float:
        return max(self.achieved_eps())


def plan_noise(
    sensitivities: Sequence[float],
    deltas: Sequence[float],
    eps_bar: float,
    mode: str = "adaptive",
) -> NoisePlan:
    """Size Laplace noise so every client meets ``eps_bar`` after aging.

    Parameters
    ----------
    sensitivities : sequence of float
        Per-client l1 sensitivity.
    deltas : sequence of float
        Per-client aging distance at the scheduled gap.
    eps_bar : float
        Age-dependent privacy target.
    mode : {"adaptive", "constant"}
        ``adaptive`` sizes each client on its own; ``constant`` applies the
        largest of the adaptive scales to every client.
    """
    if len(sensitivities) != len(deltas):
        raise PrivacyError("sensitivities and deltas differ in length")
    PrivacyRequirement(eps_bar)
    needed = [required_classic_eps(eps_bar, d) for d in deltas]
    adaptive_eta = [laplace_scale(s, e) for s, e in zip(sensitivities, needed)]
    if mode == "adaptive":
        eta = adaptive_eta
        eps_c = needed
    elif mode == "constant":
        top = max(adaptive_eta)
        eta = [top] * len(deltas)
        eps_c = [s / top if top > 0 else math.inf for s in sensitivities]
    else:
        raise PrivacyError(f"unknown noise mode {mode!r}")
    return NoisePlan(
        mode=mode,
        eps_bar=eps_bar,
        eps_c=tuple(eps_c),
        eta=tuple(eta),
        deltas=tuple(deltas),
        zero_noise=tuple(e == 0.0 for e in eta),
    )


def fixed_noise_plan(sensitivities: Sequence[float], deltas: Sequence[float], eta: float) -> NoisePlan:
    """Plan with one given Laplace scale for every client; ``eps_bar`` is the
    age-dependent budget this achieves."""
    if eta <= 0:
        raise PrivacyError("eta must be positive")
    eps_c = [s / eta for s in sensitivities]
    achieved = max(age_epsilon(e, d) for e, d in zip(eps_c, deltas))
    return NoisePlan(
        mode="fixed",
        eps_bar=achieved,
        eps_c=tuple(eps_c),
        eta=tuple([eta] * len(deltas)),
        deltas=tuple(deltas),
        zero_noise=tuple(False for _ in deltas),
    )

