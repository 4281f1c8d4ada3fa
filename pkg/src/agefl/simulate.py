"""Monte-Carlo simulator of the one-shot federated protocol.

Every sample is an independent chain trajectory born at its client's
collection time. The local model is the mean of the snapshot at collection,
the server averages the local models with weights ``p`` and adds the mean of
the client noises, and the result is compared against the empirical
minimizer of the snapshot at aggregation time.

Seeding contract: trial ``k`` of a run with seed ``s`` draws from
``SeedSequence(s, spawn_key=(k, client, stream))``, so any trial can be
recomputed on its own and results do not depend on thread count or order.
Trajectories are drawn one step at a time, which makes the path for a short
gap a prefix of the path for a long one; a :class:`TrialBank` exploits this
to evaluate many schedules on common random numbers.
"""

from __future__ import annotations

import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .bound import BaselineStats
from .model import ClientSpec, Schedule, _chain_key
from .privacy import NoisePlan, laplace_inverse_cdf

FRESH_MODES = ("shared", "independent")
BASELINE_MODES = ("exact", "monte_carlo")

DATA_STREAM, NOISE_STREAM, IDEAL_STREAM = 0, 1, 2


def thread_count() -> int:
    raw = os.environ.get("AGEFL_THREADS")
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


def trial_streams(seed: int, trial: int, m: int) -> list[tuple[np.random.Generator, ...]]:
    """Per-client ``(data, noise, ideal)`` generators for one trial."""
    out = []
    for i in range(m):
        gens = tuple(
            np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial, i, k)))
            for k in (DATA_STREAM, NOISE_STREAM, IDEAL_STREAM)
        )
        out.append(gens)
    return out


def _categorical(u: np.ndarray, cum: np.ndarray) -> np.ndarray:
    return np.minimum((u[:, None] >= cum).sum(axis=1), cum.shape[-1] - 1)


def generate_trajectories(client: ClientSpec, t_c: int, t_agg: int, rng: np.random.Generator) -> np.ndarray:
    """State-index paths of shape ``(n_samples, t_agg - t_c + 1)``.

    Column 0 is drawn from the collection distribution, each later column
    from the transition row of the previous state.
    """
    if not 1 <= t_c <= t_agg:
        raise ValueError(f"collection time {t_c} outside [1, {t_agg}]")
    chain = client.chain
    n = client.n_samples
    steps = t_agg - t_c
    cum0 = np.cumsum(chain.collection_dist)
    cum0 /= cum0[-1]
    cumP = np.cumsum(chain.transition, axis=1)
    cumP /= cumP[:, -1:]
    paths = np.empty((n, steps + 1), dtype=np.intp)
    paths[:, 0] = _categorical(rng.random(n), cum0)
    for k in range(1, steps + 1):
        u = rng.random(n)
        paths[:, k] = np.minimum((u[:, None] >= cumP[paths[:, k - 1]]).sum(axis=1), chain.n_states - 1)
    return paths


def local_erm(samples) -> float:
    """Squared-error empirical minimizer, i.e. the sample mean."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("cannot train on an empty dataset")
    return float(np.mean(x))


def aggregate(weights, p) -> float:
    """``sum_i p_i w_i``."""
    w = np.asarray(weights, dtype=float)
    p = np.asarray(p, dtype=float)
    if w.shape != p.shape:
        raise ValueError(f"length mismatch: {w.shape} vs {p.shape}")
    return float((w * p).sum())


def _mse(w: float, z: np.ndarray) -> float:
    return float(np.mean((w - z) ** 2))


@dataclass(frozen=True)
class TrialOutcome:
    loss_diff: float
    noise_power: float
    w_tilde: float
    w_star: float


def run_trial(
    clients: Sequence[ClientSpec],
    schedule: Schedule,
    plan: NoisePlan,
    streams,
    fresh_mode: str = "shared",
) -> TrialOutcome:
    """Run one trial of the protocol, step by step.

    ``streams`` comes from :func:`trial_streams`.
    """
    m = len(clients)
    if len(schedule.t_c) != m or plan.m != m or len(streams) != m:
        raise ValueError("clients, schedule, plan and streams lengths differ")
    p = np.array([c.weight for c in clients])
    local, fresh, ideal, noise = [], [], [], []
    for i, c in enumerate(clients):
        data_rng, noise_rng, ideal_rng = streams[i]
        paths = generate_trajectories(c, schedule.t_c[i], schedule.t_agg, data_rng)
        values = c.chain.state_values[paths]
        local.append(local_erm(values[:, 0]))
        fresh.append(values[:, -1])
        if fresh_mode == "independent":
            other = generate_trajectories(c, schedule.t_c[i], schedule.t_agg, ideal_rng)
            ideal.append(c.chain.state_values[other[:, -1]])
        else:
            ideal.append(values[:, -1])
        u = max(noise_rng.random(), np.finfo(float).tiny)
        noise.append(float(laplace_inverse_cdf(u, plan.eta[i])))

    w_tilde = aggregate(local, p) + sum(noise) / m
    w_star = aggregate([local_erm(z) for z in ideal], p)
    loss = sum(p[i] * (_mse(w_tilde, fresh[i]) - _mse(w_star, fresh[i])) for i in range(m))
    return TrialOutcome(
        loss_diff=float(loss),
        noise_power=float(sum(x * x for x in noise) / m),
        w_tilde=w_tilde,
        w_star=w_star,
    )


@dataclass(frozen=True)
class TrialBank:
    """Per-trial sufficient statistics for every possible gap.

    ``means[k, i, g]`` / ``variances[k, i, g]`` describe client ``i``'s
    snapshot ``g`` steps after collection in trial ``k``; ``ideal_means`` is
    the dataset the ideal model trains on (the same snapshot unless the
    independent fresh mode is used); ``u`` holds the noise uniforms.
    """

    means: np.ndarray
    variances: np.ndarray
    ideal_means: np.ndarray
    u: np.ndarray
    seed: int
    fresh_mode: str

    @property
    def trials(self) -> int:
        return self.u.shape[0]

    @property
    def max_gap(self) -> int:
        return self.means.shape[2] - 1

    def head(self, trials: int) -> "TrialBank":
        return TrialBank(
            self.means[:trials], self.variances[:trials], self.ideal_means[:trials], self.u[:trials],
            self.seed, self.fresh_mode,
        )


def _trial_stats(clients, t_agg, seed, trial, fresh_mode):
    m = len(clients)
    G = t_agg
    means = np.empty((m, G))
    variances = np.empty((m, G))
    ideal = np.empty((m, G))
    u = np.empty(m)
    for i, (c, (data_rng, noise_rng, ideal_rng)) in enumerate(zip(clients, trial_streams(seed, trial, m))):
        vals = c.chain.state_values[generate_trajectories(c, 1, t_agg, data_rng)]
        mu = vals.mean(axis=0)
        means[i] = mu
        variances[i] = ((vals - mu) ** 2).mean(axis=0)
        if fresh_mode == "independent":
            ideal[i] = c.chain.state_values[generate_trajectories(c, 1, t_agg, ideal_rng)].mean(axis=0)
        else:
            ideal[i] = mu
        u[i] = max(noise_rng.random(), np.finfo(float).tiny)
    return means, variances, ideal, u


def build_bank(
    clients: Sequence[ClientSpec],
    t_agg: int,
    trials: int,
    seed: int,
    fresh_mode: str = "shared",
    threads: int | None = None,
) -> TrialBank:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if fresh_mode not in FRESH_MODES:
        raise ValueError(f"unknown fresh mode {fresh_mode!r}")
    m = len(clients)
    means = np.empty((trials, m, t_agg))
    variances = np.empty_like(means)
    ideal = np.empty_like(means)
    u = np.empty((trials, m))

    def fill(chunk):
        for k in chunk:
            means[k], variances[k], ideal[k], u[k] = _trial_stats(clients, t_agg, seed, k, fresh_mode)

    threads = threads or thread_count()
    if threads <= 1 or trials < 64:
        fill(range(trials))
    else:
        chunks = [range(s, min(s + 256, trials)) for s in range(0, trials, 256)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, chunks))
    return TrialBank(means, variances, ideal, u, seed, fresh_mode)


_BANKS: "OrderedDict[tuple, TrialBank]" = OrderedDict()
_BANK_CACHE_SIZE = 16


def get_bank(clients, t_agg, trials, seed, fresh_mode="shared") -> TrialBank:
    """Cached :func:`build_bank`; a cached larger bank is reused by prefix."""
    key = (
        tuple((_chain_key(c.chain), c.chain.state_values.tobytes(), c.n_samples) for c in clients),
        int(t_agg),
        int(seed),
        fresh_mode,
    )
    bank = _BANKS.get(key)
    if bank is not None and bank.trials >= trials:
        _BANKS.move_to_end(key)
        return bank if bank.trials == trials else bank.head(trials)
    bank = build_bank(clients, t_agg, trials, seed, fresh_mode)
    _BANKS[key] = bank
    while len(_BANKS) > _BANK_CACHE_SIZE:
        _BANKS.popitem(last=False)
    return bank


def _gather(arr: np.ndarray, gaps) -> np.ndarray:
    m = arr.shape[1]
    return arr[:, np.arange(m), np.asarray(gaps)]


def evaluate_trials(bank: TrialBank, clients, schedule: Schedule, plan: NoisePlan) -> dict:
    """Per-trial loss differences and noise powers for one schedule."""
    m = len(clients)
    if bank.max_gap < schedule.t_agg - 1 or len(schedule.t_c) != m or plan.m != m:
        raise ValueError("bank, schedule and plan do not match")
    p = np.array([c.weight for c in clients])
    gaps = schedule.gaps
    local = bank.means[:, :, 0]
    fresh = _gather(bank.means, gaps)
    ideal = _gather(bank.ideal_means, gaps)
    noise = laplace_inverse_cdf(bank.u, np.asarray(plan.eta))
    w = (local * p).sum(axis=1)
    w_tilde = w + noise.sum(axis=1) / m
    w_star = (ideal * p).sum(axis=1)
    f_bar = (fresh * p).sum(axis=1)
    # sum_i p_i [(w~ - z)^2 - (w* - z)^2] averaged over z, in closed form
    loss = (w_tilde - w_star) * ((w_tilde - f_bar) + (w_star - f_bar))
    return {
        "loss_diff": loss,
        "noise_power": (noise * noise).sum(axis=1) / m,
        "w_tilde": w_tilde,
        "w_star": w_star,
        "w": w,
    }


@dataclass(frozen=True)
class MonteCarloResult:
    mean: float
    std_err: float
    mean_noise_power: float
    noise_power_std_err: float
    loss_diffs: np.ndarray
    trials: int


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(x))
    se = float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return mean, se


def summarize(out: dict) -> MonteCarloResult:
    mean, se = _mean_se(out["loss_diff"])
    npow, npse = _mean_se(out["noise_power"])
    return MonteCarloResult(mean, se, npow, npse, out["loss_diff"], out["loss_diff"].size)


def monte_carlo_loss_diff(
    clients: Sequence[ClientSpec],
    schedule: Schedule,
    plan: NoisePlan,
    trials: int,
    seed: int,
    fresh_mode: str = "shared",
) -> MonteCarloResult:
    """Mean and standard error of the loss difference over ``trials``."""
    bank = get_bank(clients, schedule.t_agg, trials, seed, fresh_mode)
    return summarize(evaluate_trials(bank, clients, schedule, plan))


@lru_cache(maxsize=8192)
def _moments(key, values: bytes, gap: int) -> tuple[float, float]:
    P_bytes, pi_bytes, n = key
    mu = np.frombuffer(pi_bytes) @ np.linalg.matrix_power(np.frombuffer(P_bytes).reshape(n, n), gap)
    v = np.frombuffer(values)
    m1 = float(mu @ v)
    return m1, float(mu @ (v - m1) ** 2)


def target_moments(clients: Sequence[ClientSpec], schedule: Schedule) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of each client's target law (marginal at aggregation)."""
    mom = [_moments(_chain_key(c.chain), c.chain.state_values.tobytes(), g) for c, g in zip(clients, schedule.gaps)]
    return np.array([a for a, _ in mom]), np.array([b for _, b in mom])


def population_risk(clients: Sequence[ClientSpec], schedule: Schedule, w):
    """``Lbar(w) = sum_i p_i E_{Z ~ mu_i} (w - Z)^2``; vectorizes over ``w``."""
    mean, var = target_moments(clients, schedule)
    p = np.array([c.weight for c in clients])
    w = np.asarray(w, dtype=float)
    return ((var + (w[..., None] - mean) ** 2) * p).sum(axis=-1)


def baseline_from_bank(bank: TrialBank, clients, schedule: Schedule) -> BaselineStats:
    p = np.array([c.weight for c in clients])
    gaps = schedule.gaps
    local = bank.means[:, :, 0]
    w = (local * p).sum(axis=1)
    fresh = _gather(bank.means, gaps)
    var = _gather(bank.variances, gaps)
    w_star = (_gather(bank.ideal_means, gaps) * p).sum(axis=1)
    emp = ((var + (fresh - w_star[:, None]) ** 2) * p).sum(axis=1)
    return BaselineStats(
        E_pop_risk_W=float(np.mean(population_risk(clients, schedule, w))),
        E_emp_loss_wstar=float(np.mean(emp)),
        E_pop_risk_wstar=float(np.mean(population_risk(clients, schedule, w_star))),
        trials=bank.trials,
    )


def exact_baseline(clients: Sequence[ClientSpec], schedule: Schedule, fresh_mode: str = "shared") -> BaselineStats:
    """Closed-form E[Lbar(W)], E[Lhat(w*, D)] and E[Lbar(w*)].

    Samples within a client are i.i.d. and clients are independent, so every
    term reduces to first and second moments of the collection and target
    laws.
    """
    p = np.array([c.weight for c in clients])
    n = np.array([c.n_samples for c in clients], dtype=float)
    m_t, s_t = target_moments(clients, schedule)
    m_0, s_0 = target_moments(clients, Schedule.fresh(len(clients), schedule.t_agg))

    ew = float(p @ m_0)
    var_w = float((p * p * s_0 / n).sum())
    pop_w = float((p * (s_t + (ew - m_t) ** 2)).sum()) + var_w

    m_bar = float(p @ m_t)
    var_wstar = float((p * p * s_t / n).sum())
    if fresh_mode == "shared":
        # Var(F_i - w*) with F_i itself inside w*
        var_gap = (1.0 - p) ** 2 * s_t / n + (var_wstar - p * p * s_t / n)
    elif fresh_mode == "independent":
        var_gap = s_t / n + var_wstar
    else:
        raise ValueError(f"unknown fresh mode {fresh_mode!r}")
    emp_wstar = float((p * (s_t * (n - 1.0) / n + (m_t - m_bar) ** 2 + var_gap)).sum())
    pop_wstar = float((p * (s_t + (m_bar - m_t) ** 2)).sum()) + var_wstar
    return BaselineStats(pop_w, emp_wstar, pop_wstar, trials=0)


def baseline_stats(
    clients: Sequence[ClientSpec],
    schedule: Schedule,
    trials: int,
    seed: int,
    fresh_mode: str = "shared",
    method: str = "exact",
) -> BaselineStats:
    """Noise-free E[Lbar(W)] and E[Lhat(w*, D)] for ``schedule``.

    ``method="monte_carlo"`` averages over ``trials`` seeded trials (the
    population risk of each trial's W is still exact); ``"exact"`` uses the
    closed form and ignores ``trials`` and ``seed``.
    """
    if method not in BASELINE_MODES:
        raise ValueError(f"unknown baseline method {method!r}")
    if method == "exact":
        return exact_baseline(clients, schedule, fresh_mode)
    bank = get_bank(clients, schedule.t_agg, trials, seed, fresh_mode)
    return baseline_from_bank(bank, clients, schedule)


def empirical_age_dp_ratio(chain, gap: int, eps_c: float, trials: int, seed: int, bins: int = 40, min_count: int = 500):
    """Diagnostic check of age-dependent DP on a single-sample mechanism.

    The mechanism releases ``Z_collect + Laplace(s / eps_c)`` with
    ``s = max - min`` state value. Outputs are histogrammed separately for
    each value of the state ``gap`` steps later; returns the largest
    log-ratio between two conditionings over bins holding at least
    ``min_count`` samples in both.
    """
    rng = np.random.default_rng(seed)
    v = chain.state_values
    s = v[-1] - v[0]
    eta = s / eps_c
    n = chain.n_states
    start = _categorical(rng.random(trials), np.cumsum(chain.collection_dist))
    Pt = np.linalg.matrix_power(chain.transition, gap)
    later = np.minimum((rng.random(trials)[:, None] >= np.cumsum(Pt, axis=1)[start]).sum(axis=1), n - 1)
    out = v[start] + laplace_inverse_cdf(np.maximum(rng.random(trials), 1e-300), eta)
    edges = np.linspace(v[0] - 3 * eta, v[-1] + 3 * eta, bins + 1)
    hists = []
    for x in range(n):
        sel = out[later == x]
        if sel.size == 0:
            continue
        h, _ = np.histogram(sel, bins=edges)
        hists.append((h, sel.size))
    worst = 0.0
    for a in range(len(hists)):
        for b in range(len(hists)):
            if a == b:
                continue
            ha, na = hists[a]
            hb, nb = hists[b]
            ok = (ha >= min_count) & (hb >= min_count)
            if ok.any():
                r = np.log((ha[ok] / na) / (hb[ok] / nb))
                worst = max(worst, float(r.max()))
    return worst
