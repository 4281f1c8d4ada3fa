"""Clients, schedules and the per-gap privacy quantities derived from them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .markov import MarkovChain, delta_exact, delta_spectral_bound, mutual_information_age
from .privacy import NoisePlan, PrivacyRequirement, l1_sensitivity_mean, plan_noise

DELTA_MODES = ("spectral", "exact")


@dataclass(frozen=True, eq=False)
class ClientSpec:
    """One client: its data chain, dataset size, sensitivity and weight ``p``."""

    chain: MarkovChain
    n_samples: int
    sensitivity: float
    weight: float

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"weight must lie in [0, 1], got {self.weight}")
        if self.sensitivity <= 0:
            raise ValueError("sensitivity must be positive")


def make_clients(chains: Sequence[MarkovChain], n_samples: Sequence[int], value_ranges=None) -> list[ClientSpec]:
    """Build clients with ``p_i = n_i / sum(n)`` and mean-estimator sensitivity.

    ``value_ranges`` defaults to each chain's smallest/largest state value.
    """
    if len(chains) != len(n_samples):
        raise ValueError("chains and n_samples differ in length")
    total = float(sum(n_samples))
    out = []
    for i, (chain, n) in enumerate(zip(chains, n_samples)):
        rng_i = (
            (chain.state_values[0], chain.state_values[-1]) if value_ranges is None else value_ranges[i]
        )
        out.append(ClientSpec(chain, int(n), l1_sensitivity_mean(rng_i, int(n)), n / total))
    return out


@dataclass(frozen=True)
class Schedule:
    """Collection time of each client and the common aggregation time."""

    t_c: tuple
    t_agg: int

    def __post_init__(self):
        object.__setattr__(self, "t_c", tuple(int(t) for t in self.t_c))
        if self.t_agg < 1:
            raise ValueError("t_agg must be >= 1")
        for i, t in enumerate(self.t_c):
            if not 1 <= t <= self.t_agg:
                raise ValueError(f"client {i}: collection time {t} outside [1, {self.t_agg}]")

    @property
    def gaps(self) -> tuple:
        return tuple(self.t_agg - t for t in self.t_c)

    @property
    def label(self) -> str:
        return "-".join(str(t) for t in self.t_c)

    @classmethod
    def fresh(cls, m: int, t_agg: int) -> "Schedule":
        return cls((t_agg,) * m, t_agg)

    @classmethod
    def parse(cls, text: str, t_agg: int) -> "Schedule":
        parts = [p for p in text.replace("-", ",").split(",") if p.strip()]
        return cls(tuple(int(p) for p in parts), t_agg)


def check_clients(clients: Sequence[ClientSpec]) -> None:
    total = sum(c.weight for c in clients)
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"client weights sum to {total:.15g}, not 1")


def _chain_key(chain: MarkovChain):
    return (chain.transition.tobytes(), chain.collection_dist.tobytes(), chain.transition.shape[0])


@lru_cache(maxsize=4096)
def _delta_cached(key, gap: int, mode: str) -> float:
    P_bytes, pi_bytes, n = key
    P = np.frombuffer(P_bytes).reshape(n, n)
    pi = np.frombuffer(pi_bytes)
    chain = MarkovChain(np.arange(n, dtype=float), P, pi)
    if mode == "spectral":
        return delta_spectral_bound(chain, gap)
    if mode == "exact":
        # gap 0: the adversary sees the collected data itself
        return 1.0 if gap == 0 else delta_exact(chain, gap, restrict_support=True)
    raise ValueError(f"unknown delta mode {mode!r}")


@lru_cache(maxsize=4096)
def _mi_cached(key, gap: int) -> float:
    P_bytes, pi_bytes, n = key
    chain = MarkovChain(np.arange(n, dtype=float), np.frombuffer(P_bytes).reshape(n, n), np.frombuffer(pi_bytes))
    return mutual_information_age(chain, gap)


def client_delta(client: ClientSpec, gap: int, delta_mode: str = "spectral") -> float:
    """Aging distance of a client whose data is ``gap`` steps old."""
    return _delta_cached(_chain_key(client.chain), int(gap), delta_mode)


def client_mi(client: ClientSpec, gap: int) -> float:
    return _mi_cached(_chain_key(client.chain), int(gap))


def build_noise_plan(
    clients: Sequence[ClientSpec],
    schedule: Schedule,
    req: PrivacyRequirement,
    mode: str = "adaptive",
    delta_mode: str = "spectral",
) -> NoisePlan:
    """Noise plan for ``schedule`` meeting ``req`` under ``mode``."""
    if len(clients) != len(schedule.t_c):
        raise ValueError("schedule length does not match the number of clients")
    deltas = [client_delta(c, g, delta_mode) for c, g in zip(clients, schedule.gaps)]
    return plan_noise([c.sensitivity for c in clients], deltas, req.eps_bar, mode)


def achieved_eps_bar(plan: NoisePlan) -> float:
    vals = plan.achieved_eps()
    return max(vals) if vals else math.nan
