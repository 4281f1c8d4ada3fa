"""Experiment orchestration and CSV output."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .bound import BoundBreakdown
from .config import ExperimentConfig
from .model import Schedule, build_noise_plan, client_delta
from .privacy import PrivacyRequirement
from .scheduler import ScheduleBudgetError, SchemeResult, run_scheme, score_bound
from .simulate import get_bank, monte_carlo_loss_diff

log = logging.getLogger(__name__)

CSV_HEADER = (
    "scheme",
    "eps_bar",
    "schedule",
    "mean_loss_diff",
    "std_err",
    "mean_noise_power",
    "bound_total",
    "achieved_eps_bar",
)


def fmt(x: float) -> str:
    return f"{x:.12g}"


@dataclass(frozen=True)
class ResultRow:
    scheme: str
    eps_bar: float
    schedule: str
    mean_loss_diff: float | None
    std_err: float | None
    mean_noise_power: float | None
    bound_total: float | None
    achieved_eps_bar: float | None
    error: str | None = None

    def cells(self) -> list[str]:
        if self.error is not None:
            return [self.scheme, fmt(self.eps_bar), f"ERROR {self.error}", "", "", "", "", ""]
        return [
            self.scheme,
            fmt(self.eps_bar),
            self.schedule,
            fmt(self.mean_loss_diff),
            fmt(self.std_err),
            fmt(self.mean_noise_power),
            fmt(self.bound_total),
            fmt(self.achieved_eps_bar),
        ]

    @classmethod
    def from_result(cls, eps_bar: float, res: SchemeResult) -> "ResultRow":
        return cls(
            scheme=res.scheme,
            eps_bar=eps_bar,
            schedule=res.choice.schedule.label,
            mean_loss_diff=res.sim_mean,
            std_err=res.sim_std_err,
            mean_noise_power=res.mean_noise_power,
            bound_total=res.bound_total,
            achieved_eps_bar=res.choice.achieved_eps_bar,
        )


def with_trials(config: ExperimentConfig, trials: int | None) -> ExperimentConfig:
    return config if trials is None else replace(config, trials=trials)


def run_sweep(config: ExperimentConfig, out: str | Path | None = None) -> list[ResultRow]:
    """Run every configured scheme at every eps_bar; optionally write CSV."""
    clients = config.client_specs()
    rows = []
    for scheme in config.schemes:
        for eps in config.eps_bar_grid:
            try:
                res = run_scheme(
                    scheme, clients, PrivacyRequirement(eps), config.t_agg, config.trials, config.seed, config.flags
                )
                rows.append(ResultRow.from_result(eps, res))
            except ScheduleBudgetError as exc:
                log.warning("%s at eps_bar=%g refused: %s", scheme, eps, exc)
                rows.append(ResultRow(scheme, eps, "", None, None, None, None, None, error=str(exc)))
            log.info("%s eps_bar=%g done", scheme, eps)
    if out is not None:
        write_csv(rows, out)
    return rows


def rows_to_csv(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.cells())
    return buf.getvalue()


def write_csv(rows: Sequence[ResultRow], path) -> None:
    Path(path).write_text(rows_to_csv(rows), encoding="utf-8")


@dataclass(frozen=True)
class CurvePoint:
    t_c: int
    gap: int
    mean_loss_diff: float
    std_err: float


def per_client_loss_curve(
    config: ExperimentConfig,
    client_index: int,
    eps_bar: float | None = None,
    trials: int | None = None,
) -> list[CurvePoint]:
    """Loss difference as one client's collection time sweeps ``[1, t_agg]``.

    The other clients collect at ``t_agg``; noise is adaptive. ``client_index``
    is zero-based.
    """
    clients = config.client_specs()
    m = len(clients)
    if not 0 <= client_index < m:
        raise IndexError(f"client index {client_index} out of range for {m} clients")
    eps = config.curve_eps_bar if eps_bar is None else eps_bar
    trials = config.trials if trials is None else trials
    req = PrivacyRequirement(eps)
    out = []
    for t in range(1, config.t_agg + 1):
        t_c = [config.t_agg] * m
        t_c[client_index] = t
        sched = Schedule(tuple(t_c), config.t_agg)
        plan = build_noise_plan(clients, sched, req, "adaptive", config.flags.delta_mode)
        res = monte_carlo_loss_diff(clients, sched, plan, trials, config.seed, config.flags.fresh_mode)
        out.append(CurvePoint(t, config.t_agg - t, res.mean, res.std_err))
    return out


def curve_to_csv(points: Sequence[CurvePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("t_c", "gap", "mean_loss_diff", "std_err"))
    for p in points:
        w.writerow((p.t_c, p.gap, fmt(p.mean_loss_diff), fmt(p.std_err)))
    return buf.getvalue()


@dataclass(frozen=True)
class BoundReport:
    schedule: Schedule
    eps_bar: float
    noise_mode: str
    breakdown: BoundBreakdown
    deltas: tuple
    eps_c: tuple
    eta: tuple

    def format(self) -> str:
        bd = self.breakdown
        lines = [
            f"schedule   {self.schedule.label}  (t_agg={self.schedule.t_agg}, eps_bar={fmt(self.eps_bar)}, "
            f"noise={self.noise_mode})",
            f"gen        {fmt(bd.gen_term)}",
            f"baseline   {fmt(bd.baseline_term)}",
            f"noise      {fmt(bd.noise_term)}",
            f"total      {fmt(bd.total)}",
            "client  gap  MI             delta          eps_c          eta",
        ]
        for i, g in enumerate(self.schedule.gaps):
            lines.append(
                f"{i + 1:<7d} {g:<4d} {fmt(bd.per_client_mi[i]):<14} {fmt(self.deltas[i]):<14} "
                f"{fmt(self.eps_c[i]):<14} {fmt(self.eta[i])}"
            )
        return "\n".join(lines)


def bound_report(
    config: ExperimentConfig,
    schedule: Schedule,
    eps_bar: float | None = None,
    noise_mode: str = "adaptive",
) -> BoundReport:
    """Bound terms and per-client privacy quantities for one schedule."""
    clients = config.client_specs()
    eps = config.eps_bar_grid[0] if eps_bar is None else eps_bar
    plan = build_noise_plan(clients, schedule, PrivacyRequirement(eps), noise_mode, config.flags.delta_mode)
    bank = None
    if config.flags.baseline_mode != "exact":
        bank = get_bank(clients, config.t_agg, config.trials, config.seed, config.flags.fresh_mode)
    bd = score_bound(clients, schedule, plan, bank, config.flags)
    deltas = tuple(client_delta(c, g, config.flags.delta_mode) for c, g in zip(clients, schedule.gaps))
    return BoundReport(schedule, eps, noise_mode, bd, deltas, plan.eps_c, plan.eta)
