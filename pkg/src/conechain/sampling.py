"""Exact sequential sampling of chain configurations and a CLT harness."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .chain import ChainModel, fd_derivatives, log_partition_function, site_probabilities, vector_messages
from .errors import DomainError


def backward_messages(chain: ChainModel):
    """Normalized messages F_k = T_{k-1}...T_0 v, one per site (F_0 = v)."""
    msgs, _ = vector_messages(chain)
    return msgs


@dataclass
class SampleBatch:
    seed: int
    n_samples: int
    states: np.ndarray      # (n_samples, n_sites) grid indices
    positions: np.ndarray   # (n_samples, n_sites) grid nodes


def _draw(rng, weights):
    """One inverse-CDF draw per row of a nonnegative weight matrix."""
    cdf = np.cumsum(weights, axis=1)
    u = rng.random(len(weights)) * cdf[:, -1]
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, weights.shape[1] - 1)


def sample_positions(chain: ChainModel, messages=None, seed: int = 0, n_samples: int = 10_000) -> SampleBatch:
    """Draw configurations from the chain measure, leftmost site (the u end) first.

    Given the state a at site k+1, the state at site k has probability
    proportional to T_k[a, b] F_k[b].
    """
    if messages is None:
        messages = backward_messages(chain)
    n = chain.n_operators
    rng = np.random.default_rng(seed)
    states = np.empty((n_samples, n + 1), dtype=np.int64)
    first = chain.u * messages[n]
    if not np.any(first > 0):
        raise DomainError(f"degenerate conditional at site {n}")
    states[:, n] = _draw(rng, np.broadcast_to(first, (n_samples, len(first))))
    for k in range(n - 1, -1, -1):
        T = chain.operators[k]
        W = T[states[:, k + 1]] * messages[k][None, :]
        if np.any(W.sum(axis=1) <= 0):
            raise DomainError(f"degenerate conditional at site {k}")
        states[:, k] = _draw(rng, W)
    return SampleBatch(seed, n_samples, states, chain.site_nodes()[states])


@dataclass
class ObservableSpec:
    """Per-site observable values on the grid, shape (n_sites, n_states)."""

    values: np.ndarray

    @classmethod
    def from_function(cls, chain: ChainModel, func: Callable[[int, np.ndarray], np.ndarray]):
        x = chain.site_nodes()
        return cls(np.array([np.broadcast_to(func(k, x), x.shape) for k in range(chain.n_sites)], dtype=float))

    @classmethod
    def position(cls, chain: ChainModel):
        return cls.from_function(chain, lambda k, x: x)


def tilted_chain(chain: ChainModel, obs: ObservableSpec, alpha: float) -> ChainModel:
    """Multiply the weight of each site by exp(alpha h_k)."""
    e = np.exp(alpha * obs.values)
    ops = tuple(e[k + 1][:, None] * T for k, T in enumerate(chain.operators))
    return chain.with_operators(ops, v=chain.v * e[0])


@dataclass
class CLTReport:
    gamma: float
    sigma2: float
    ks: float
    n_samples: int
    N: int
    degenerate: bool
    empirical_variance: float
    empirical_mean: float


@dataclass
class CLTMoments:
    gamma: float
    sigma2: float
    site_means: np.ndarray


def clt_moments(chain: ChainModel, obs: ObservableSpec, step: float = 1e-3) -> CLTMoments:
    """First and second alpha-derivatives of (1/N) log Z(alpha), plus E h_k per site."""
    N = chain.n_sites
    base = log_partition_function(chain)
    d, _ = fd_derivatives(lambda a: (log_partition_function(tilted_chain(chain, obs, a)) - base) / N, 0.0, 2, h=step)
    means = np.array([site_probabilities(chain, k) @ obs.values[k] for k in range(N)])
    return CLTMoments(float(d[0]), float(d[1]), means)


def clt_report(chain: ChainModel, batch: SampleBatch, obs: ObservableSpec, step: float = 1e-3,
               moments: CLTMoments | None = None) -> CLTReport:
    """Compare S = N^{-1/2} sum (h_k - E h_k) with Normal(0, sigma^2).

    sigma^2 and gamma come from the tilted partition function, not the samples.
    """
    N = chain.n_sites
    if moments is None:
        moments = clt_moments(chain, obs, step)
    gamma, sigma2 = moments.gamma, moments.sigma2
    hv = obs.values[np.arange(N)[None, :], batch.states]
    S = (hv - moments.site_means[None, :]).sum(axis=1) / math.sqrt(N)
    emp_mean = float(hv.sum(axis=1).mean() / N)
    if sigma2 < 1e-12:
        ks = float(max(np.mean(S < -1e-9), np.mean(S > 1e-9)))
        return CLTReport(gamma, max(sigma2, 0.0), ks, batch.n_samples, N, True, float(S.var()), emp_mean)
    ks = float(stats.kstest(S, "norm", args=(0.0, math.sqrt(sigma2))).statistic)
    return CLTReport(gamma, sigma2, ks, batch.n_samples, N, False, float(S.var()), emp_mean)
