"""Chains of positive operators: partition functions, marginals, decay checks,
free-energy derivatives.

Convention: ``Z = (u, T_{n-1} ... T_0 v)``.  Site ``k`` (0 <= k <= n) is the
variable reached after applying the first ``k`` operators to ``v``; an
insertion at site ``K`` multiplies that variable by a nonnegative function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .cones import contraction_bound
from .errors import DomainError, UnderflowError


@dataclass(frozen=True)
class ChainModel:
    u: np.ndarray
    v: np.ndarray
    operators: tuple
    R: float | None = None
    kappa: float | None = None
    weights: np.ndarray | None = None   # cell weights for densities (default 1)
    nodes: np.ndarray | None = None     # coordinates of the states (default index)
    log_offset: float = 0.0             # added to log Z (e.g. an energy term)

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        object.__setattr__(self, "operators", tuple(np.asarray(T, dtype=float) for T in self.operators))

    @property
    def n_operators(self) -> int:
        return len(self.operators)

    @property
    def n_sites(self) -> int:
        return len(self.operators) + 1

    def site_weights(self):
        return np.ones(len(self.v)) if self.weights is None else np.asarray(self.weights, dtype=float)

    def site_nodes(self):
        return np.arange(len(self.v), dtype=float) if self.nodes is None else np.asarray(self.nodes, dtype=float)

    def with_operators(self, operators, v=None, **kw):
        """Copy with replaced operators (and optionally v)."""
        fields = dict(u=self.u, v=self.v if v is None else v, operators=operators, R=self.R,
                      kappa=self.kappa, weights=self.weights, nodes=self.nodes, log_offset=self.log_offset)
        fields.update(kw)
        return ChainModel(**fields)


@dataclass
class ObservableInsertion:
    position: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values < 0):
            raise DomainError("insertion must be nonnegative")


def apply_rescaled(T, f, log_scale: float = 0.0, stage=None):
    """Apply T and renormalize to unit max-entry; the factor goes to log_scale."""
    g = np.asarray(T) @ f
    m = np.max(np.abs(g))
    if not np.isfinite(m) or m <= 0.0:
        where = "" if stage is None else f" at stage {stage}"
        raise UnderflowError(f"product vanished or overflowed{where}")
    return g / m, log_scale + math.log(m)


def vector_messages(chain: ChainModel):
    """F_k = T_{k-1}...T_0 v normalized, with log scales, for k = 0..n."""
    v = chain.v
    m = np.max(np.abs(v))
    if m <= 0:
        raise UnderflowError("boundary vector v is zero")
    f, ls = v / m, math.log(m)
    msgs, logs = [f], [ls]
    for k, T in enumerate(chain.operators):
        f, ls = apply_rescaled(T, f, ls, stage=k)
        msgs.append(f)
        logs.append(ls)
    return msgs, np.array(logs)


def functional_messages(chain: ChainModel):
    """B_k = u T_{n-1}...T_k (as vectors) normalized, with log scales, k = 0..n."""
    u = chain.u
    m = np.max(np.abs(u))
    if m <= 0:
        raise UnderflowError("boundary functional u is zero")
    b, ls = u / m, math.log(m)
    n = chain.n_operators
    msgs, logs = [None] * (n + 1), np.zeros(n + 1)
    msgs[n], logs[n] = b, ls
    for k in range(n - 1, -1, -1):
        b, ls = apply_rescaled(chain.operators[k].T, b, ls, stage=k)
        msgs[k], logs[k] = b, ls
    return msgs, logs


def log_partition_function(chain: ChainModel) -> float:
    """log (u, T_{n-1}...T_0 v) + log_offset, via rescaled products."""
    f = chain.v
    m = np.max(np.abs(f))
    if m <= 0:
        raise UnderflowError("boundary vector v is zero")
    f, ls = f / m, math.log(m)
    for k, T in enumerate(chain.operators):
        f, ls = apply_rescaled(T, f, ls, stage=k)
    z = float(chain.u @ f)
    if not z > 0:
        raise DomainError(f"pairing (u, product v) is not positive: {z}")
    return math.log(z) + ls + chain.log_offset


def _check_positions(chain, positions):
    pos = list(positions)
    if any(b <= a for a, b in zip(pos, pos[1:])):
        raise DomainError("insertion positions must be strictly increasing")
    if pos and (pos[0] < 0 or pos[-1] > chain.n_operators):
        raise DomainError("insertion position outside the chain")


def k_point_correlation(chain: ChainModel, insertions: Sequence[ObservableInsertion]) -> float:
    """(u, ... X_k ... X_1 ... v) / Z for diagonal insertions."""
    ins = sorted(insertions, key=lambda o: o.position)
    _check_positions(chain, [o.position for o in ins])
    if not ins:
        return 1.0
    table = {o.position: o.values for o in ins}
    f = chain.v.copy()
    ls = 0.0
    for k in range(chain.n_operators + 1):
        if k in table:
            f = table[k] * f
            m = np.max(np.abs(f))
            if m <= 0:
                return 0.0
            f, ls = f / m, ls + math.log(m)
        if k < chain.n_operators:
            f, ls = apply_rescaled(chain.operators[k], f, ls, stage=k)
    num = float(chain.u @ f)
    return math.exp(math.log(num) + ls - (log_partition_function(chain) - chain.log_offset)) if num > 0 else 0.0


@dataclass
class DecayReport:
    ratio: float
    lower: float
    upper: float
    inside: bool
    indeterminate: bool = False


def decay_band(R: float, kappa: float, n: int, K1: int, K2: int):
    """Band exp(+-8R sum kappa^(m-1)) over the three segment operator counts."""
    segs = [K1, K2 - K1, n - K2]
    s = sum(kappa ** (m - 1) if m >= 1 else np.inf for m in segs)
    e = 8.0 * R * s
    if not np.isfinite(e) or e > 700:
        return 0.0, np.inf
    return math.exp(-e), math.exp(e)


def decay_band_check(chain: ChainModel, X, Y, K1: int, K2: int) -> DecayReport:
    """Two-point ratio rho_{K2,K1}(Y,X) / (rho_K1(X) rho_K2(Y)) against its band."""
    if not (0 <= K1 < K2 <= chain.n_operators):
        raise DomainError("need 0 <= K1 < K2 <= n")
    if chain.R is None or chain.kappa is None:
        raise DomainError("chain carries no R / kappa certificate")
    X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
    r1 = k_point_correlation(chain, [ObservableInsertion(K1, X)])
    r2 = k_point_correlation(chain, [ObservableInsertion(K2, Y)])
    lo, hi = decay_band(chain.R, chain.kappa, chain.n_operators, K1, K2)
    if r1 <= 0 or r2 <= 0:
        return DecayReport(np.nan, lo, hi, False, True)
    r12 = k_point_correlation(chain, [ObservableInsertion(K1, X), ObservableInsertion(K2, Y)])
    ratio = r12 / (r1 * r2)
    return DecayReport(ratio, lo, hi, bool(lo * (1 - 1e-12) <= ratio <= hi * (1 + 1e-12)))


# ---------------------------------------------------------------------------
# marginals

@dataclass
class MarginalTable:
    indices: tuple
    values: np.ndarray        # density, one axis per index in increasing order
    normalization: float      # log of the unnormalized pairing relative to Z


@dataclass
class TruncatedMarginalTable:
    indices: tuple
    values: np.ndarray


def _weights_outer(w, k):
    out = np.ones(())
    for _ in range(k):
        out = np.multiply.outer(out, w)
    return out


def marginal_density(chain: ChainModel, sites) -> MarginalTable:
    """k-point marginal density at the given sites (top-hat cells of the grid)."""
    sites = tuple(sorted(int(s) for s in sites))
    if not sites:
        raise DomainError("empty site set")
    _check_positions(chain, sites)
    if len(sites) > 4:
        raise DomainError("at most 4 sites")
    F, Flog = vector_messages(chain)
    B, Blog = functional_messages(chain)
    G = F[sites[0]]
    ls = Flog[sites[0]]
    for a, b in zip(sites, sites[1:]):
        # embed the current last axis diagonally, then propagate to site b
        G = G[..., :, None] * np.eye(G.shape[-1])
        for k in range(a, b):
            G = G @ chain.operators[k].T
            m = np.max(np.abs(G))
            if m <= 0:
                raise UnderflowError(f"marginal propagation vanished at stage {k}")
            G, ls = G / m, ls + math.log(m)
    G = G * B[sites[-1]]
    total = G.sum()
    if not total > 0:
        raise DomainError("marginal is not normalizable")
    logZ = log_partition_function(chain) - chain.log_offset
    norm = math.log(total) + ls + Blog[sites[-1]] - logZ
    mass = G / total
    dens = mass / _weights_outer(chain.site_weights(), len(sites))
    return MarginalTable(sites, dens, norm)


def site_probabilities(chain: ChainModel, site: int):
    """Probability mass of each state at one site."""
    F, _ = vector_messages(chain)
    B, _ = functional_messages(chain)
    p = F[site] * B[site]
    return p / p.sum()


def _set_partitions(items):
    if len(items) == 1:
        yield [items]
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def _block_product(blocks, trunc, order):
    letters = "abcdefgh"
    pos = {s: letters[i] for i, s in enumerate(order)}
    subs = ",".join("".join(pos[s] for s in sorted(b)) for b in blocks)
    arrays = [trunc[tuple(sorted(b))] for b in blocks]
    return np.einsum(subs + "->" + "".join(pos[s] for s in order), *arrays)


def truncated_marginals(tables) -> dict:
    """Truncated marginals for every subset of the largest index set supplied.

    ``tables`` maps sorted index tuples to MarginalTable (or arrays).  Returns a
    dict of TruncatedMarginalTable keyed the same way.  Memoized over subsets.
    """
    vals = {tuple(sorted(k)): (t.values if isinstance(t, MarginalTable) else np.asarray(t))
            for k, t in tables.items()}
    full = max(vals, key=len)
    trunc = {}
    for size in range(1, len(full) + 1):
        for sub in combinations(full, size):
            if sub not in vals:
                raise DomainError(f"missing sub-marginal for indices {sub}")
            acc = vals[sub].copy()
            if size > 1:
                for part in _set_partitions(list(sub)):
                    if len(part) < 2:
                        continue
                    acc = acc - _block_product(part, trunc, sub)
            trunc[sub] = acc
    return {k: TruncatedMarginalTable(k, v) for k, v in trunc.items()}


# ---------------------------------------------------------------------------
# free energy and derivatives

def free_energy(builder: Callable[[float], ChainModel], beta: float, convention: str = "abstract") -> float:
    """Free energy per site.

    ``abstract``: (1/n) log Z with n operators.
    ``jellium``: -(1/(N beta)) log Z with N = n + 1 particles.
    """
    chain = builder(beta)
    lz = log_partition_function(chain)
    if convention == "abstract":
        return lz / chain.n_operators
    if convention == "jellium":
        return -lz / (chain.n_sites * beta)
    raise DomainError(f"unknown convention {convention!r}")


def central_stencil(k: int):
    """Offsets and weights of the central difference for the k-th derivative."""
    half = (2 * math.ceil(k / 2) + 1) // 2
    offs = np.arange(-half, half + 1)
    V = np.vander(offs.astype(float), increasing=True).T
    rhs = np.zeros(len(offs))
    rhs[k] = math.factorial(k)
    return offs, np.linalg.solve(V, rhs)


@dataclass
class DerivativeReport:
    orders: list
    sizes: list
    estimates: np.ndarray          # shape (len(sizes), len(orders))
    noisy: np.ndarray              # cancellation flags, same shape
    bounds: np.ndarray | None = None

    def relative_spread(self):
        """Per order: (max - min) / |estimate at the largest size|."""
        e = self.estimates
        return (e.max(axis=0) - e.min(axis=0)) / np.abs(e[-1])


def fd_derivatives(func: Callable[[float], float], x0: float, k_max: int, h=None):
    """Richardson-extrapolated central differences of func at x0 for k = 1..k_max.

    Returns (estimates, noisy flags).
    """
    if h is None:
        h = 1e-3 * max(1.0, abs(x0))
    cache = {}

    def f(x):
        key = round(x / h * 2)
        if key not in cache:
            cache[key] = func(x)
        return cache[key]

    est, noisy = [], []
    for k in range(1, k_max + 1):
        offs, w = central_stencil(k)
        vals = []
        for step in (h, h / 2):
            fv = np.array([f(x0 + o * step) for o in offs])
            vals.append((w @ fv / step**k, fv))
        (d1, fv1), (d2, _) = vals
        d = (4.0 * d2 - d1) / 3.0
        noise = 1e-14 * np.max(np.abs(fv1)) * np.abs(w).sum() / (h / 2) ** k
        est.append(d)
        noisy.append(bool(noise > abs(d)))
    return np.array(est), np.array(noisy)


def derivative_estimates(builder: Callable[[float, int], ChainModel], beta0: float, k_max: int,
                         sizes: Sequence[int], h=None, convention: str = "abstract", bounds=None) -> DerivativeReport:
    """d^k f_N / d beta^k at beta0 for k <= k_max across chain sizes."""
    rows, flags = [], []
    for N in sizes:
        e, fl = fd_derivatives(lambda b: free_energy(lambda bb: builder(bb, N), b, convention), beta0, k_max, h)
        rows.append(e)
        flags.append(fl)
    return DerivativeReport(list(range(1, k_max + 1)), list(sizes), np.array(rows), np.array(flags),
                            None if bounds is None else np.asarray(bounds, dtype=float))


def analyticity_majorant(r: float, kappa: float, n_max: int):
    """Taylor coefficients of (1 - r x) / ((1 - kappa) - r x) up to order n_max."""
    if not 0 <= kappa < 1:
        raise DomainError("kappa must lie in [0, 1)")
    if r < 0:
        raise DomainError("r must be nonnegative")
    a = 1.0 - kappa
    d = [1.0 / a]
    for n in range(1, n_max + 1):
        d.append(kappa * r**n / a ** (n + 1))
    return d


def factorial_growth_constant(derivs):
    """Smallest c with |D_k| / k! <= c^k for the given derivatives D_1, D_2, ..."""
    return max((abs(d) / math.factorial(k)) ** (1.0 / k) for k, d in enumerate(derivs, start=1))


# ---------------------------------------------------------------------------
# fits and simple chains

def geometric_fit(x, y):
    """Fit y ~ A rate^x by least squares on log y; returns (rate, A, r_squared)."""
    x = np.asarray(x, dtype=float)
    ly = np.log(np.asarray(y, dtype=float))
    slope, icpt = np.polyfit(x, ly, 1)
    pred = slope * x + icpt
    ss_res = np.sum((ly - pred) ** 2)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return math.exp(slope), math.exp(icpt), r2


def two_state_matrix(beta: float, eps: float):
    return np.array([[beta, eps], [eps, 1.0]])


def two_state_eigenvalue(beta: float, eps: float) -> float:
    return ((beta + 1.0) + math.sqrt((beta - 1.0) ** 2 + 4.0 * eps**2)) / 2.0


def homogeneous_chain(T, n: int, u=None, v=None, certify: bool = True) -> ChainModel:
    """n copies of T with l2-normalized boundary vectors (default all-ones)."""
    T = np.asarray(T, dtype=float)
    d = T.shape[0]
    u = np.ones(d) / math.sqrt(d) if u is None else np.asarray(u, dtype=float)
    v = np.ones(d) / math.sqrt(d) if v is None else np.asarray(v, dtype=float)
    R = kappa = None
    if certify:
        from .cones import projective_diameter
        R = projective_diameter(T).value
        kappa = contraction_bound(R)
    return ChainModel(u, v, (T,) * n, R=R, kappa=kappa)


@dataclass
class CorrelationProfile:
    anchor: int
    gaps: np.ndarray
    sup_difference: np.ndarray   # sup |rho_{a,a+d} - rho_a rho_{a+d}|
    ratio_deviation: np.ndarray  # max |rho_{a,a+d} / (rho_a rho_{a+d}) - 1|


def correlation_profile(chain: ChainModel, anchor: int, gaps, mass_floor: float = 1e-10) -> CorrelationProfile:
    """Two-point correlation against the product of one-point marginals, per gap.

    The ratio is taken over cells whose product mass exceeds mass_floor times
    its maximum, so that vanishing tails do not dominate.
    """
    gaps = np.asarray(list(gaps), dtype=int)
    w = chain.site_weights()
    ra = marginal_density(chain, [anchor]).values
    sup, dev = [], []
    for d in gaps:
        rb = marginal_density(chain, [anchor + d]).values
        pair = marginal_density(chain, [anchor, anchor + d]).values
        prod = np.outer(ra, rb)
        sup.append(float(np.max(np.abs(pair - prod))))
        pm = prod * np.outer(w, w)
        keep = pm > mass_floor * pm.max()
        dev.append(float(np.max(np.abs(pair[keep] / prod[keep] - 1.0))))
    return CorrelationProfile(anchor, gaps, np.array(sup), np.array(dev))
