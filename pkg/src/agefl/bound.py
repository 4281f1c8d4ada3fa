"""Loss-difference upper bound used to score schedules.

The bound has three parts::

    gen_term      = sum_i p_i f_se(I_i; nu_i, alpha_i)
    baseline_term = E[Lbar(W)] - E[Lhat(w*, D)]        (cancelled form)
    noise_term    = (1/m) sum_i sigma_sq_i

where ``I_i`` is the mutual information between a sample at collection and
at aggregation, and ``nu_i = alpha_i = 2 eta_i**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import ClientSpec, Schedule, client_mi
from .privacy import NoisePlan

FSE_MODES = ("paper", "canonical")
BOUND_MODES = ("cancelled", "paper_literal")

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SubExpParams:
    nu: float
    alpha: float

    def __post_init__(self):
        for name in ("nu", "alpha"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")

    @property
    def threshold(self) -> float:
        return self.nu ** 2 / (2.0 * self.alpha ** 2)


@dataclass(frozen=True)
class BaselineStats:
    """Noise-free expectations feeding the bound.

    ``E_pop_risk_wstar`` is only used by the ``paper_literal`` form.
    """

    E_pop_risk_W: float
    E_emp_loss_wstar: float
    E_pop_risk_wstar: float = 0.0
    trials: int = 0


@dataclass(frozen=True)
class BoundBreakdown:
    gen_term: float
    baseline_term: float
    noise_term: float
    total: float
    per_client_mi: tuple = ()
    per_client_fse: tuple = ()


def f_se(mi: float, params: SubExpParams, mode: str = "paper") -> float:
    """Sub-exponential generalization term.

    ``paper``:     sqrt(4 nu I)             if I <= nu^2/(2 alpha^2)
                   nu^2/(2 alpha^2) + alpha I   otherwise
    ``canonical``: sqrt(2 nu^2 I)           if I <= nu^2/(2 alpha^2)
                   nu^2/(2 alpha) + alpha I     otherwise
    """
    if mi < 0:
        raise ValueError("mutual information must be non-negative")
    nu, alpha = params.nu, params.alpha
    thr = params.threshold
    if mode == "paper":
        return math.sqrt(4.0 * nu * mi) if mi <= thr else thr + alpha * mi
    if mode == "canonical":
        return math.sqrt(2.0 * nu * nu * mi) if mi <= thr else nu * nu / (2.0 * alpha) + alpha * mi
    raise ValueError(f"unknown f_se mode {mode!r}")


def _golden(f, lo, hi, iters=200, xtol=1e-15):
    c = hi - _INV_PHI * (hi - lo)
    d = lo + _INV_PHI * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if hi - lo <= xtol * max(1.0, abs(hi)):
            break
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _INV_PHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INV_PHI * (hi - lo)
            fd = f(d)
    x = 0.5 * (lo + hi)
    return x, f(x)


def psi_inverse_generic(
    mi: float,
    psi: Callable[[float], float],
    b_plus: float = math.inf,
    grid: int = 400,
) -> float:
    """``inf_{0 < lam <= b_plus} (mi + psi(lam)) / lam`` evaluated numerically.

    A geometric grid of ``grid`` points locates the basin, then golden-section
    search refines between the neighbouring grid points. With an unbounded
    ``b_plus`` the upper end is doubled until the objective turns upward.
    """
    if mi < 0:
        raise ValueError("mutual information must be non-negative")

    def obj(lam):
        return (mi + psi(lam)) / lam

    hi = b_plus
    if math.isinf(hi):
        hi = 1.0
        while obj(2.0 * hi) < obj(hi) and hi < 1e300:
            hi *= 2.0
        hi *= 2.0
    lo = hi * 1e-12
    lams = np.geomspace(lo, hi, grid)
    vals = np.array([obj(x) for x in lams])
    if not np.all(np.isfinite(vals)):
        raise ValueError("psi produced non-finite values on the lambda grid")
    k = int(np.argmin(vals))
    a = lams[max(k - 1, 0)]
    b = lams[min(k + 1, grid - 1)]
    _, best = _golden(obj, a, b)
    return float(min(best, vals[k]))


def mi_upper_bound_for_client(client: ClientSpec, schedule: Schedule, index: int) -> float:
    """I(Z at collection; Z at aggregation) for client ``index``; by data
    processing this bounds the information the aggregate carries about a
    fresh sample of that client."""
    t = schedule.t_c[index]
    if not 1 <= t <= schedule.t_agg:
        raise ValueError(f"collection time {t} outside [1, {schedule.t_agg}]")
    return client_mi(client, schedule.t_agg - t)


def evaluate_bound(
    clients: Sequence[ClientSpec],
    schedule: Schedule,
    plan: NoisePlan,
    baseline: BaselineStats | None,
    fse_mode: str = "paper",
    bound_mode: str = "cancelled",
    fallback_nu: Sequence[float] | float | None = None,
) -> BoundBreakdown:
    """Evaluate the schedule-dependent bound.

    Clients that add no noise would have ``nu = 0``; they use
    ``fallback_nu`` instead (default ``2 (s_i / eps_bar)**2``, the scale they
    would need without any aging).
    """
    m = len(clients)
    if baseline is None:
        raise ValueError("baseline statistics are required")
    if len(schedule.t_c) != m or plan.m != m:
        raise ValueError("clients, schedule and plan lengths differ")

    mis, fses = [], []
    gen = 0.0
    for i, c in enumerate(clients):
        mi = mi_upper_bound_for_client(c, schedule, i)
        nu = plan.sigma_sq[i]
        if nu == 0.0:
            if fallback_nu is None:
                nu = 2.0 * (c.sensitivity / plan.eps_bar) ** 2
            elif isinstance(fallback_nu, (int, float)):
                nu = float(fallback_nu)
            else:
                nu = float(fallback_nu[i])
        val = f_se(mi, SubExpParams(nu, nu), fse_mode)
        mis.append(mi)
        fses.append(val)
        gen += c.weight * val

    baseline_term = baseline.E_pop_risk_W - baseline.E_emp_loss_wstar
    if bound_mode == "paper_literal":
        baseline_term += baseline.E_pop_risk_wstar
    elif bound_mode != "cancelled":
        raise ValueError(f"unknown bound mode {bound_mode!r}")
    noise = float(sum(plan.sigma_sq)) / m
    return BoundBreakdown(
        gen_term=gen,
        baseline_term=baseline_term,
        noise_term=noise,
        total=gen + baseline_term + noise,
        per_client_mi=tuple(mis),
        per_client_fse=tuple(fses),
    )


def excess_risk_sup(clients: Sequence[ClientSpec], schedule: Schedule, w_star: float) -> float:
    """Diagnostic ``sup_w Lbar(w) - Lbar(w*)`` over the hull of state values.

    The population risk is convex in ``w``, so the sup sits at an endpoint.
    """
    from .simulate import population_risk

    lo = min(c.chain.state_values[0] for c in clients)
    hi = max(c.chain.state_values[-1] for c in clients)
    top = max(population_risk(clients, schedule, lo), population_risk(clients, schedule, hi))
    return top - population_risk(clients, schedule, w_star)
