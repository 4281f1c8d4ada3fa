"""Finite-state Markov chain machinery.

Matrix powers, marginals, reverse (time-reversed) kernels, total-variation
quantities, the second-largest eigenvalue modulus and exact mutual
information between the state at collection time and the state some number
of steps later.

All functions are pure; chains are immutable once built.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

STOCHASTIC_TOL = 1e-12
EIG_TOL = 1e-10


class MarkovError(ValueError):
    """Raised for malformed chains or degenerate conditioning."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """Finite-state chain with real state labels.

    Parameters
    ----------
    state_values : sequence of float
        Strictly increasing labels of the states (e.g. Wh levels).
    transition : (n, n) array_like
        Row-stochastic one-step transition matrix.
    collection_dist : (n,) array_like
        Distribution of a sample at the moment it is collected.
    """

    state_values: np.ndarray
    transition: np.ndarray
    collection_dist: np.ndarray

    def __post_init__(self):
        values = _frozen(self.state_values)
        P = _frozen(self.transition)
        pi = _frozen(self.collection_dist)
        object.__setattr__(self, "state_values", values)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "collection_dist", pi)

        n = values.shape[0]
        if values.ndim != 1 or n < 2:
            raise MarkovError("a chain needs at least 2 states")
        if np.any(np.diff(values) <= 0):
            raise MarkovError("state_values must be strictly increasing")
        if P.shape != (n, n):
            raise MarkovError(f"transition must be {n}x{n}, got {P.shape}")
        if np.any(P < 0) or np.any(P > 1):
            raise MarkovError("transition entries must lie in [0, 1]")
        row_err = np.abs(P.sum(axis=1) - 1.0)
        bad = np.flatnonzero(row_err > STOCHASTIC_TOL)
        if bad.size:
            r = int(bad[0])
            raise MarkovError(f"transition row {r} sums to {P[r].sum():.15g}, not 1")
        if pi.shape != (n,):
            raise MarkovError(f"collection_dist must have length {n}")
        if np.any(pi < 0) or np.any(pi > 1):
            raise MarkovError("collection_dist entries must lie in [0, 1]")
        if abs(pi.sum() - 1.0) > STOCHASTIC_TOL:
            raise MarkovError(f"collection_dist sums to {pi.sum():.15g}, not 1")

    @property
    def n_states(self) -> int:
        return self.state_values.shape[0]

    def with_collection_dist(self, dist) -> "MarkovChain":
        return MarkovChain(self.state_values, self.transition, dist)


def cyclic_chain(n: int, q: float, state_values: Sequence[float], collection_dist=None) -> MarkovChain:
    """Chain that stays put with prob. ``1 - q`` and moves one state up with
    prob. ``q``, wrapping from the last state back to the first.

    ``collection_dist`` defaults to uniform.
    """
    if n < 2:
        raise MarkovError("n must be >= 2")
    if not 0.0 <= q <= 1.0:
        raise MarkovError(f"q must lie in [0, 1], got {q}")
    if len(state_values) != n:
        raise MarkovError(f"expected {n} state values, got {len(state_values)}")
    P = np.eye(n) * (1.0 - q)
    for i in range(n):
        P[i, (i + 1) % n] += q
    if collection_dist is None:
        collection_dist = np.full(n, 1.0 / n)
    return MarkovChain(state_values, P, collection_dist)


def t_step_transition(chain: MarkovChain, t: int) -> np.ndarray:
    """``transition ** t`` (binary powering); ``t = 0`` gives the identity."""
    if t < 0:
        raise MarkovError("t must be >= 0")
    return np.linalg.matrix_power(chain.transition, int(t))


def marginal_at(chain: MarkovChain, t: int) -> np.ndarray:
    """Distribution of the state ``t`` steps after collection."""
    return chain.collection_dist @ t_step_transition(chain, t)


def reverse_kernel(chain: MarkovChain, t: int, base_dist=None) -> np.ndarray:
    """Time-reversed ``t``-step kernel.

    Row ``x`` is the conditional law of the earlier state given the later
    state equals ``x``::

        R[x, y] = base(y) * P_t(y, x) / (base @ P_t)(x)

    ``base_dist`` is the law at the earlier time (default: the chain's
    collection distribution). For a stationary base this is the usual
    reversal ``pi(y) P_t(y, x) / pi(x)``.

    Raises
    ------
    MarkovError
        If some later state has probability zero and so cannot be
        conditioned on.
    """
    base = chain.collection_dist if base_dist is None else np.asarray(base_dist, dtype=float)
    Pt = t_step_transition(chain, t)
    later = base @ Pt
    zero = np.flatnonzero(later <= 0.0)
    if zero.size:
        raise MarkovError(
            f"state {int(zero[0])} (value {chain.state_values[zero[0]]:g}) is unreachable "
            f"after {t} steps; cannot condition on it"
        )
    return (base[None, :] * Pt.T) / later[:, None]


def tv_distance(p, q) -> float:
    """Total-variation distance, computed as half the l1 norm."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def delta_exact(chain: MarkovChain, t: int, restrict_support: bool = False) -> float:
    """Largest TV distance between two rows of the reverse kernel.

    With ``restrict_support`` the max runs only over later states of positive
    probability instead of raising for unreachable ones.
    """
    if t < 1:
        raise MarkovError("delta_exact needs t >= 1")
    if restrict_support:
        base = chain.collection_dist
        Pt = t_step_transition(chain, t)
        later = base @ Pt
        keep = np.flatnonzero(later > 0.0)
        R = (base[None, :] * Pt.T[keep]) / later[keep, None]
    else:
        R = reverse_kernel(chain, t)
    best = 0.0
    for a, b in itertools.combinations(range(R.shape[0]), 2):
        best = max(best, tv_distance(R[a], R[b]))
    return min(best, 1.0)


def slem(chain: MarkovChain) -> float:
    """Second-largest eigenvalue modulus of the transition matrix.

    One copy of the eigenvalue 1 is removed before taking the max modulus.
    """
    try:
        eig = np.linalg.eigvals(chain.transition)
    except np.linalg.LinAlgError as exc:
        raise MarkovError(f"eigensolver failed: {exc}") from exc
    k = int(np.argmin(np.abs(eig - 1.0)))
    if abs(eig[k] - 1.0) > EIG_TOL:
        raise MarkovError(
            f"no eigenvalue within {EIG_TOL:g} of 1 (closest {eig[k]!r}); eigensolver did not converge"
        )
    rest = np.delete(eig, k)
    return float(np.clip(np.max(np.abs(rest)), 0.0, 1.0))


def delta_spectral_bound(chain: MarkovChain, t: int) -> float:
    """Spectral upper bound on the aging distance::

        min(1, max_Z sqrt((1 - pi_t(Z)) / pi_t(Z)) * slem ** t)

    with ``pi_t = marginal_at(chain, t)``. Zero-probability states are left
    out of the max; if none remain the bound is 1.
    """
    if t < 0:
        raise MarkovError("t must be >= 0")
    pt = marginal_at(chain, t)
    pos = pt[pt > 0.0]
    if pos.size == 0:
        return 1.0
    # only the smallest positive mass matters
    m = float(pos.min())
    coef = np.sqrt((1.0 - m) / m)
    gamma = slem(chain)
    val = coef * gamma ** t if t > 0 else coef
    return float(min(1.0, val))


def entropy(p) -> float:
    """Shannon entropy in nats with ``0 ln 0 = 0``."""
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def mutual_information_age(chain: MarkovChain, gap: int) -> float:
    """Exact I(Z_collect; Z_{collect+gap}) in nats.

    The joint law is ``collection_dist(x) * P_gap(x, y)``.
    """
    if gap < 0:
        raise MarkovError("gap must be >= 0")
    joint = chain.collection_dist[:, None] * t_step_transition(chain, gap)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    x, y = np.nonzero(joint > 0)
    j = joint[x, y]
    # log differences; px * py can underflow for tiny masses
    mi = float((j * (np.log(j) - np.log(px[x]) - np.log(py[y]))).sum())
    return max(mi, 0.0)
