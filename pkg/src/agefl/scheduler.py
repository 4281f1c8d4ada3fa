"""Schedule search and the six scheduling/noise schemes."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .bound import BoundBreakdown, evaluate_bound
from .model import ClientSpec, Schedule, build_noise_plan, client_delta
from .privacy import NoisePlan, PrivacyRequirement, fixed_noise_plan
from .simulate import (
    baseline_from_bank,
    evaluate_trials,
    exact_baseline,
    get_bank,
    summarize,
    thread_count,
)

SCHEMES = (
    "random_constant",
    "random_adaptive",
    "proposed_constant",
    "proposed_adaptive",
    "optimal_constant",
    "optimal_adaptive",
)

DEFAULT_SCHEDULE_CAP = 10 ** 6

_RANDOM_KEY = 101
_EVAL_KEY = 202


class ScheduleBudgetError(RuntimeError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"{count} candidate schedules exceed the enumeration cap of {cap}")
        self.count = count
        self.cap = cap


@dataclass(frozen=True)
class Flags:
    """Model switches shared by the choosers and the harness."""

    delta_mode: str = "spectral"
    fse_mode: str = "paper"
    bound_mode: str = "cancelled"
    fresh_mode: str = "shared"
    baseline_mode: str = "exact"
    schedule_cap: int = DEFAULT_SCHEDULE_CAP


@dataclass(frozen=True)
class ScheduleChoice:
    schedule: Schedule
    plan: NoisePlan
    score: float
    achieved_eps_bar: float
    breakdown: BoundBreakdown | None = None


@dataclass(frozen=True)
class SchemeResult:
    scheme: str
    choice: ScheduleChoice
    sim_mean: float
    sim_std_err: float
    mean_noise_power: float
    noise_power_std_err: float
    bound_total: float


def enumerate_schedules(m: int, t_agg: int, cap: int = DEFAULT_SCHEDULE_CAP) -> Iterator[tuple]:
    """All collection-time tuples in ``[1, t_agg]^m``, lexicographically."""
    count = t_agg ** m
    if count > cap:
        raise ScheduleBudgetError(count, cap)
    return itertools.product(range(1, t_agg + 1), repeat=m)


def evaluation_seed(seed: int) -> int:
    """Seed for the common post-selection evaluation run."""
    return int(np.random.SeedSequence(seed, spawn_key=(_EVAL_KEY,)).generate_state(1)[0])


def random_schedule(m: int, t_agg: int, seed: int) -> Schedule:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_RANDOM_KEY,)))
    return Schedule(tuple(int(t) for t in rng.integers(1, t_agg + 1, size=m)), t_agg)


def make_plan(clients, schedule, req, noise_mode, flags: Flags, fixed_eta: float | None = None) -> NoisePlan:
    if fixed_eta is not None:
        deltas = [client_delta(c, g, flags.delta_mode) for c, g in zip(clients, schedule.gaps)]
        return fixed_noise_plan([c.sensitivity for c in clients], deltas, fixed_eta)
    return build_noise_plan(clients, schedule, req, noise_mode, flags.delta_mode)


def score_bound(clients, schedule, plan, bank, flags: Flags) -> BoundBreakdown:
    if flags.baseline_mode == "exact":
        baseline = exact_baseline(clients, schedule, flags.fresh_mode)
    else:
        baseline = baseline_from_bank(bank, clients, schedule)
    return evaluate_bound(
        clients,
        schedule,
        plan,
        baseline,
        fse_mode=flags.fse_mode,
        bound_mode=flags.bound_mode,
    )


def _baseline_bank(clients, t_agg, trials, seed, flags: Flags):
    if flags.baseline_mode == "exact":
        return None
    return get_bank(clients, t_agg, trials, seed, flags.fresh_mode)


def _argmin(candidates: list, score_fn) -> tuple[int, list]:
    threads = thread_count()
    if threads <= 1 or len(candidates) < 64:
        scores = [score_fn(c) for c in candidates]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(score_fn, candidates, chunksize=32))
    # np.argmin keeps the first minimum, i.e. the lexicographically smallest schedule
    return int(np.argmin(np.asarray(scores))), scores


def choose_schedule_bound(
    clients: Sequence[ClientSpec],
    req: PrivacyRequirement,
    t_agg: int,
    noise_mode: str,
    trials: int,
    seed: int,
    flags: Flags = Flags(),
    fixed_eta: float | None = None,
) -> ScheduleChoice:
    """Schedule minimizing the loss-difference bound.

    With the Monte-Carlo baseline, every candidate shares one trial bank
    seeded with ``seed``; the exact baseline ignores ``trials`` and ``seed``.
    """
    m = len(clients)
    candidates = [Schedule(t, t_agg) for t in enumerate_schedules(m, t_agg, flags.schedule_cap)]
    bank = _baseline_bank(clients, t_agg, trials, seed, flags)

    def score(s):
        plan = make_plan(clients, s, req, noise_mode, flags, fixed_eta)
        return score_bound(clients, s, plan, bank, flags).total

    k, _ = _argmin(candidates, score)
    best = candidates[k]
    plan = make_plan(clients, best, req, noise_mode, flags, fixed_eta)
    bd = score_bound(clients, best, plan, bank, flags)
    return ScheduleChoice(best, plan, bd.total, plan.achieved_eps_bar, bd)


def choose_schedule_sim(
    clients: Sequence[ClientSpec],
    req: PrivacyRequirement,
    t_agg: int,
    noise_mode: str,
    trials: int,
    seed: int,
    flags: Flags = Flags(),
    fixed_eta: float | None = None,
) -> ScheduleChoice:
    """Schedule minimizing the simulated mean loss difference (shared seed)."""
    m = len(clients)
    candidates = [Schedule(t, t_agg) for t in enumerate_schedules(m, t_agg, flags.schedule_cap)]
    bank = get_bank(clients, t_agg, trials, seed, flags.fresh_mode)

    def score(s):
        plan = make_plan(clients, s, req, noise_mode, flags, fixed_eta)
        return float(np.mean(evaluate_trials(bank, clients, s, plan)["loss_diff"]))

    k, scores = _argmin(candidates, score)
    best = candidates[k]
    plan = make_plan(clients, best, req, noise_mode, flags, fixed_eta)
    return ScheduleChoice(best, plan, scores[k], plan.achieved_eps_bar)


def run_scheme(
    scheme: str,
    clients: Sequence[ClientSpec],
    req: PrivacyRequirement,
    t_agg: int,
    trials: int,
    seed: int,
    flags: Flags = Flags(),
) -> SchemeResult:
    """Pick a schedule with ``scheme`` and evaluate it on a common seed."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    how, noise_mode = scheme.split("_")
    bank = _baseline_bank(clients, t_agg, trials, seed, flags)
    if how == "random":
        sched = random_schedule(len(clients), t_agg, seed)
        plan = make_plan(clients, sched, req, noise_mode, flags)
        bd = score_bound(clients, sched, plan, bank, flags)
        choice = ScheduleChoice(sched, plan, bd.total, plan.achieved_eps_bar, bd)
    elif how == "proposed":
        choice = choose_schedule_bound(clients, req, t_agg, noise_mode, trials, seed, flags)
    else:
        choice = choose_schedule_sim(clients, req, t_agg, noise_mode, trials, seed, flags)

    bound_total = (
        choice.breakdown.total
        if choice.breakdown is not None
        else score_bound(clients, choice.schedule, choice.plan, bank, flags).total
    )
    eval_bank = get_bank(clients, t_agg, trials, evaluation_seed(seed), flags.fresh_mode)
    res = summarize(evaluate_trials(eval_bank, clients, choice.schedule, choice.plan))
    return SchemeResult(
        scheme=scheme,
        choice=choice,
        sim_mean=res.mean,
        sim_std_err=res.std_err,
        mean_noise_power=res.mean_noise_power,
        noise_power_std_err=res.noise_power_std_err,
        bound_total=bound_total,
    )


@dataclass(frozen=True)
class SweepPoint:
    eta: float
    schedule: Schedule
    achieved_eps_bar: float
    bound_total: float
    sim_mean: float
    sim_std_err: float


def constant_noise_sweep(
    clients: Sequence[ClientSpec],
    eta_grid: Sequence[float],
    t_agg: int,
    trials: int,
    seed: int,
    flags: Flags = Flags(),
) -> list[SweepPoint]:
    """Fix one Laplace scale for everyone, schedule by the bound, and report
    the age-dependent budget that schedule achieves."""
    out = []
    eval_bank = get_bank(clients, t_agg, trials, evaluation_seed(seed), flags.fresh_mode)
    for eta in eta_grid:
        # req is unused with a fixed scale; any valid target will do
        choice = choose_schedule_bound(
            clients, PrivacyRequirement(1.0), t_agg, "constant", trials, seed, flags, fixed_eta=eta
        )
        res = summarize(evaluate_trials(eval_bank, clients, choice.schedule, choice.plan))
        out.append(SweepPoint(eta, choice.schedule, choice.achieved_eps_bar, choice.score, res.mean, res.std_err))
    return out
