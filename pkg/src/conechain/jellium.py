"""Classical one-dimensional Jellium: equilibrium layout, potentials, transfer
kernels on a quadrature grid, and an invariant cone with calibrated parameters.

Particles carry charges q_i > 0 and sit in a neutralizing background density
rho on [-L, L].  Displacements s = x_i - x~_i from the equilibrium positions
are the chain variables.  The operator that integrates out particle p given
its left neighbour at displacement x is

    (T f)(x) = int_{s >= x - d} exp(-beta U_p(s)) f(s) ds,   d = x~_p - x~_{p-1}.

The chain starts from the rightmost particle: site k is particle N - k.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, linprog

from .chain import ChainModel
from .cones import PolyhedralCone, contraction_bound, cross_ratio_diameter, membership, one_minus_contraction
from .errors import CalibrationError, DomainError, WindowError


# ---------------------------------------------------------------------------
# backgrounds

class Background:
    """Density on [-L, L], extended by its boundary values outside.

    Subclasses implement ``rho(t)``, ``mass(a, b)`` and ``second(x0, t)`` for
    arguments inside the domain, where second(x0, t) = int_{x0}^{t} (t - y) rho(y) dy.
    """

    L: float

    def rho_ext(self, t):
        return self.rho(np.clip(t, -self.L, self.L))

    def second_ext(self, x0: float, t):
        """int_{x0}^{t} (t - y) rho(y) dy for x0 in the domain and any t."""
        t = np.asarray(t, dtype=float)
        L = self.L
        out = np.empty_like(t)
        mid = np.abs(t) <= L
        out[mid] = self.second(x0, t[mid])
        r = t > L
        if r.any():
            e = t[r] - L
            out[r] = self.second(x0, np.array([L]))[0] + e * self.mass(x0, L) + self.rho(L) * e**2 / 2
        lft = t < -L
        if lft.any():
            e = t[lft] + L
            out[lft] = self.second(x0, np.array([-L]))[0] + e * self.mass(x0, -L) + self.rho(-L) * e**2 / 2
        return out

    def total(self) -> float:
        return float(self.mass(-self.L, self.L))


@dataclass
class ConstantBackground(Background):
    L: float
    rho0: float

    def rho(self, t):
        return np.full(np.shape(t), self.rho0, dtype=float) if np.ndim(t) else float(self.rho0)

    def mass(self, a, b):
        return self.rho0 * (np.asarray(b) - np.asarray(a))

    def second(self, x0, t):
        return self.rho0 * (np.asarray(t, dtype=float) - x0) ** 2 / 2

    def scaled(self, factor):
        return ConstantBackground(self.L, self.rho0 * factor)


@dataclass
class SinusoidalBackground(Background):
    """rho(t) = rho0 (1 + amplitude sin(frequency t + phase))."""

    L: float
    rho0: float
    amplitude: float
    frequency: float = 1.0
    phase: float = 0.0

    def rho(self, t):
        return self.rho0 * (1.0 + self.amplitude * np.sin(self.frequency * np.asarray(t, dtype=float) + self.phase))

    def mass(self, a, b):
        w, p = self.frequency, self.phase
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        return self.rho0 * ((b - a) - self.amplitude / w * (np.cos(w * b + p) - np.cos(w * a + p)))

    def second(self, x0, t):
        w = self.frequency
        s = np.asarray(t, dtype=float) - x0
        th = w * x0 + self.phase
        g = s * np.cos(th) / w - (np.sin(th + w * s) - np.sin(th)) / w**2
        return self.rho0 * (s**2 / 2 + self.amplitude * g)

    def scaled(self, factor):
        return SinusoidalBackground(self.L, self.rho0 * factor, self.amplitude, self.frequency, self.phase)


class TabulatedBackground(Background):
    """Piecewise-linear density through (t, rho) samples covering [-L, L]."""

    def __init__(self, L, t, rho):
        t = np.asarray(t, dtype=float)
        rho = np.asarray(rho, dtype=float)
        order = np.argsort(t)
        t, rho = t[order], rho[order]
        if t[0] > -L + 1e-12 or t[-1] < L - 1e-12:
            raise DomainError("tabulated background must cover [-L, L]")
        self.L = float(L)
        self.t = t
        self.r = rho
        slope = np.diff(rho) / np.diff(t)
        dt = np.diff(t)
        seg_c = rho[:-1] * dt + slope * dt**2 / 2
        seg_m = t[:-1] * rho[:-1] * dt + (t[:-1] * slope + rho[:-1]) * dt**2 / 2 + slope * dt**3 / 3
        self._slope = slope
        self._C = np.concatenate([[0.0], np.cumsum(seg_c)])
        self._M = np.concatenate([[0.0], np.cumsum(seg_m)])

    def rho(self, t):
        return np.interp(t, self.t, self.r)

    def _cum(self, p):
        p = np.asarray(p, dtype=float)
        i = np.clip(np.searchsorted(self.t, p, side="right") - 1, 0, len(self.t) - 2)
        d = p - self.t[i]
        ti, ri, sl = self.t[i], self.r[i], self._slope[i]
        c = self._C[i] + ri * d + sl * d**2 / 2
        m = self._M[i] + ti * ri * d + (ti * sl + ri) * d**2 / 2 + sl * d**3 / 3
        return c, m

    def mass(self, a, b):
        return self._cum(b)[0] - self._cum(a)[0]

    def second(self, x0, t):
        t = np.asarray(t, dtype=float)
        c0, m0 = self._cum(x0)
        c, m = self._cum(t)
        return t * (c - c0) - (m - m0)

    def scaled(self, factor):
        return TabulatedBackground(self.L, self.t, self.r * factor)


def read_tabulated_background(path, L) -> TabulatedBackground:
    """Two-column CSV (t, rho); a non-numeric first row is treated as a header."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].lstrip().startswith("#"):
                continue
            try:
                rows.append((float(rec[0]), float(rec[1])))
            except ValueError:
                if rows:
                    raise
    if len(rows) < 2:
        raise DomainError(f"tabulated background {path} needs at least two rows")
    arr = np.array(rows)
    return TabulatedBackground(L, arr[:, 0], arr[:, 1])


# ---------------------------------------------------------------------------
# system and layout

@dataclass
class JelliumSystem:
    L: float
    beta: float
    charges: np.ndarray
    background: Background
    m: float | None = None   # declared lower density bound
    M: float | None = None   # declared upper density bound

    def __post_init__(self):
        self.charges = np.atleast_1d(np.asarray(self.charges, dtype=float))

    @property
    def N(self) -> int:
        return len(self.charges)

    @property
    def q_low(self) -> float:
        return float(self.charges.min())

    @property
    def q_high(self) -> float:
        return float(self.charges.max())

    def density_bounds(self):
        if self.m is not None and self.M is not None:
            return self.m, self.M
        r = self.background.rho(np.linspace(-self.L, self.L, 10001))
        return (float(r.min()) if self.m is None else self.m, float(r.max()) if self.M is None else self.M)

    def with_beta(self, beta):
        return JelliumSystem(self.L, beta, self.charges, self.background, self.m, self.M)

    def check_neutral(self, tol=1e-10):
        Q = float(self.charges.sum())
        tot = self.background.total()
        if abs(tot - Q) > tol * max(1.0, Q):
            raise DomainError(f"neutrality violated: background charge {tot} vs particle charge {Q}")


def neutral_system(L, beta, charges, background, **kw) -> JelliumSystem:
    """Rescale the background so its total charge matches the particles."""
    charges = np.atleast_1d(np.asarray(charges, dtype=float))
    bg = background.scaled(charges.sum() / background.total())
    return JelliumSystem(L, beta, charges, bg, **kw)


def potential_U(system: JelliumSystem, positions, i: int, s):
    """U_i(s) = 2 q_i int_{x~_i}^{x~_i + s} (x~_i + s - y) rho(y) dy  (i is 1-based)."""
    x0 = float(positions[i - 1])
    s = np.asarray(s, dtype=float)
    return 2.0 * system.charges[i - 1] * system.background.second_ext(x0, x0 + np.atleast_1d(s)).reshape(s.shape)


@dataclass
class EquilibriumLayout:
    positions: np.ndarray
    delta: float
    A: float

    def spacing(self, p: int) -> float:
        """x~_p - x~_{p-1} (1-based p >= 2)."""
        return float(self.positions[p - 1] - self.positions[p - 2])


def _tail_ok(system, positions, i, A, delta):
    beta = system.beta
    UA = float(potential_U(system, positions, i, A))
    UmA = float(potential_U(system, positions, i, -A))
    f = lambda s, ref: math.exp(-beta * (float(potential_U(system, positions, i, s)) - ref))
    right = quad(f, A, np.inf, args=(UA,), limit=200)[0]
    left = quad(f, -np.inf, -A, args=(UmA,), limit=200)[0]
    return right <= delta / 2 and left <= delta / 2


def equilibrium_positions(system: JelliumSystem) -> EquilibriumLayout:
    """Positions where the background charge to the left balances the particles."""
    system.check_neutral()
    q = system.charges
    targets = np.cumsum(q) - q / 2
    bg = system.background
    L = system.L
    pos = np.array([brentq(lambda x: float(bg.mass(-L, x)) - c, -L, L, xtol=1e-15, rtol=4 * np.finfo(float).eps)
                    for c in targets])
    delta = 0.5 * float(np.diff(pos).min()) if len(pos) > 1 else float(L)
    m, _ = system.density_bounds()
    step = delta / 2
    A = math.ceil(2.0 / (delta * system.beta * system.q_low * m) / step) * step
    while A - step > 0 and all(_tail_ok(system, pos, i, A - step, delta) for i in range(1, system.N + 1)):
        A -= step
    return EquilibriumLayout(pos, delta, A)


def equilibrium_energy(system: JelliumSystem, layout: EquilibriumLayout) -> float:
    """Total energy of the equilibrium configuration (direct quadrature)."""
    bg, L, q, x = system.background, system.L, system.charges, layout.positions
    bb = 2.0 * quad(lambda y: float(bg.rho(y)) * float(bg.second(-L, np.array([y]))[0]), -L, L, limit=400)[0]
    pp = np.sum(np.outer(q, q) * np.abs(x[:, None] - x[None, :]))
    pb = 0.0
    for qi, xi in zip(q, x):
        pb += qi * (float(bg.second(-L, np.array([xi]))[0]) - float(bg.second(xi, np.array([L]))[0])
                    + (L - xi) * float(bg.mass(xi, L)))
    return -0.5 * bb - 0.5 * pp + pb


# ---------------------------------------------------------------------------
# grid and kernels

@dataclass
class QuadratureGrid:
    nodes: np.ndarray
    h: float
    S: float
    half_width: float            # delta / 2, the interval length
    points_per_interval: int
    tail_tolerance: float
    cell_weights: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.cell_weights is None:
            w = np.full(len(self.nodes), self.h)
            w[0] = w[-1] = self.h / 2
            self.cell_weights = w

    @property
    def n(self) -> int:
        return len(self.nodes)

    def index(self, t: float) -> int:
        return int(round((t + self.S) / self.h))

    def interval_weights(self, k: int):
        """Trapezoid weights of the interval [k delta/2, (k+1) delta/2]."""
        lo = self.index(k * self.half_width)
        hi = lo + self.points_per_interval
        if lo < 0 or hi >= self.n:
            raise DomainError(f"interval {k} outside the grid window")
        w = np.zeros(self.n)
        w[lo:hi + 1] = self.h
        w[lo] = w[hi] = self.h / 2
        return w


def make_grid(system: JelliumSystem, layout: EquilibriumLayout, points_per_interval: int = 4,
              tail_tolerance: float = 1e-14, beta=None) -> QuadratureGrid:
    """Uniform grid of spacing (delta/2)/points_per_interval on [-S, S].

    S is a multiple of delta/2, at least A + delta, and far enough out that
    exp(-beta U_i(+-S)) <= tail_tolerance for every particle.  ``beta``
    overrides the system temperature when sizing the window.
    """
    beta = system.beta if beta is None else beta
    hw = layout.delta / 2
    K = int(round((layout.A + layout.delta) / hw))
    while True:
        S = K * hw
        U = np.array([potential_U(system, layout.positions, i, np.array([-S, S]))
                      for i in range(1, system.N + 1)])
        if np.all(np.exp(-beta * U) <= tail_tolerance):
            break
        K += 1
    p = int(points_per_interval)
    h = hw / p
    nodes = h * np.arange(-K * p, K * p + 1)
    return QuadratureGrid(nodes, h, S, hw, p, tail_tolerance)


_GREGORY = np.array([3 / 8, 7 / 6, 23 / 24])


def _run_weights(n, j0):
    """Weights (units of h) for the integral from node j0 to the last node."""
    w = np.zeros(n)
    m = n - j0
    if m <= 1:
        return w
    w[j0:] = 1.0
    if m < 7:
        w[j0] = w[-1] = 0.5
        return w
    w[j0:j0 + 3] = _GREGORY
    w[n - 3:] = _GREGORY[::-1]
    return w


def cut_weights(grid: QuadratureGrid, c: float):
    """Nonnegative weights for int_c^{S} phi(s) ds on the grid.

    Gregory end corrections from the first node past the cut plus a quadratic
    rule on the partial cell; the one negative partial weight is absorbed by
    the 7/6 weight of the same node.
    """
    n, h = grid.n, grid.h
    t = (c - grid.nodes[0]) / h
    if t <= 0:
        return _run_weights(n, 0) * h
    j = int(math.floor(t))
    if j >= n - 1:
        return np.zeros(n)
    th = (j + 1) - t
    w = _run_weights(n, j + 1)
    if j + 2 < n:
        w[j] += th**3 / 6 + th**2 / 4
        w[j + 1] += th - th**3 / 3
        w[j + 2] += th**3 / 6 - th**2 / 4
    else:
        w[j] += th**2 / 2
        w[j + 1] += th - th**2 / 2
    return w * h


def upper_cut_weights(grid: QuadratureGrid, c: float):
    """Weights for int_{-S}^{c} phi(s) ds (mirror of cut_weights)."""
    mirrored = QuadratureGrid(-grid.nodes[::-1], grid.h, grid.S, grid.half_width,
                              grid.points_per_interval, grid.tail_tolerance)
    return cut_weights(mirrored, -c)[::-1]


@dataclass
class TransferKernel:
    matrix: np.ndarray
    particle: int
    spacing: float
    empty_rows: np.ndarray


def boltzmann_factor(system, layout, grid, p, beta=None):
    beta = system.beta if beta is None else beta
    return np.exp(-beta * potential_U(system, layout.positions, p, grid.nodes))


def _check_window(system, layout, grid, p, beta=None):
    g = boltzmann_factor(system, layout, grid, p, beta)
    tail = max(g[0], g[-1]) / g.max()
    if tail > grid.tail_tolerance:
        raise WindowError(f"window too narrow for particle {p}: tail ratio {tail:.3e} > {grid.tail_tolerance:.1e}")
    return g


def build_transfer_kernel(system: JelliumSystem, layout: EquilibriumLayout, grid: QuadratureGrid, p: int) -> TransferKernel:
    """Kernel integrating out particle p (2 <= p <= N) given particle p-1."""
    if not 2 <= p <= system.N:
        raise DomainError("particle index must lie in 2..N")
    g = _check_window(system, layout, grid, p)
    d = layout.spacing(p)
    W = np.array([cut_weights(grid, xa - d) for xa in grid.nodes])
    empty = np.nonzero(~W.any(axis=1))[0]
    return TransferKernel(W * g[None, :], p, d, empty)


def boundary_vectors(system, layout, grid):
    """(u, v): u carries particle 1 with x_1 > -L, v flags x_N < L."""
    g1 = _check_window(system, layout, grid, 1)
    u = cut_weights(grid, -system.L - layout.positions[0]) * g1
    v = upper_cut_weights(grid, system.L - layout.positions[-1]) / grid.h
    return u, v


def build_jellium_chain(system, layout, grid, R=None, kappa=None, include_energy=False, kernels=None) -> ChainModel:
    """ChainModel whose pairing is the Gibbs integral over ordered configurations."""
    if kernels is None:
        kernels = [build_transfer_kernel(system, layout, grid, p) for p in range(system.N, 1, -1)]
    u, v = boundary_vectors(system, layout, grid)
    offset = -system.beta * equilibrium_energy(system, layout) if include_energy else 0.0
    return ChainModel(u, v, tuple(k.matrix for k in kernels), R=R, kappa=kappa,
                      weights=grid.cell_weights, nodes=grid.nodes, log_offset=offset)


def site_of_particle(N: int, p: int) -> int:
    return N - p


# ---------------------------------------------------------------------------
# invariant cone

@dataclass
class JelliumConeParams:
    A: float
    delta: float
    k_min: int
    k_max: int
    tail_slack: float               # eps in f(t) + eps I_kmax(f) >= 0, t >= A
    monotone_slack: float           # eta in (1 + eta) f(t) - f(t') >= 0
    interval_ratios: list           # eps_k for k = k_min+1 .. k_max
    left_ratio: float               # eps' in f(t) <= I_kmin(f) / eps', t <= -A

    def to_dict(self):
        d = asdict(self)
        d["interval_ratios"] = [float(x) for x in self.interval_ratios]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["A"]), float(d["delta"]), int(d["k_min"]), int(d["k_max"]), float(d["tail_slack"]),
                   float(d["monotone_slack"]), [float(x) for x in d["interval_ratios"]], float(d["left_ratio"]))


def _cone_rows(grid, A, kmin, kmax, eps, eta, left_ratio=None, ratios=None):
    n, x = grid.n, grid.nodes
    iA, imA = grid.index(A), grid.index(-A)
    I = {k: grid.interval_weights(k) for k in (kmin, kmax)}
    rows, labels = [], []
    eye = np.eye(n)
    for b in range(iA, n):
        rows.append(eye[b] + eps * I[kmax])
        labels.append(f"tail positivity at t={x[b]:.6g}")
    for b in range(0, iA + 1):
        rows.append(eye[b])
        labels.append(f"positivity at t={x[b]:.6g}")
    # eta is the allowed growth per half-interval, spread evenly over its nodes
    step = (1 + eta) ** (1.0 / grid.points_per_interval)
    for b in range(imA, iA):
        rows.append(step * eye[b] - eye[b + 1])
        labels.append(f"decreasing on [-A,A] at t={x[b]:.6g}")
    for b in range(0, imA):
        rows.append((1 + eta) * eye[b] - eye[imA])
        labels.append(f"left floor at t={x[b]:.6g}")
    if left_ratio is not None:
        for b in range(0, imA + 1):
            rows.append(I[kmin] / left_ratio - eye[b])
            labels.append(f"left cap at t={x[b]:.6g}")
    if ratios:
        for k, e in ratios.items():
            rows.append(grid.interval_weights(k) / e - grid.interval_weights(k - 1))
            labels.append(f"interval ratio k={k}")
    return np.array(rows), labels


def jellium_cone(params: JelliumConeParams, grid: QuadratureGrid) -> PolyhedralCone:
    ratios = {k: e for k, e in zip(range(params.k_min + 1, params.k_max + 1), params.interval_ratios)}
    H, labels = _cone_rows(grid, params.A, params.k_min, params.k_max, params.tail_slack,
                           params.monotone_slack, params.left_ratio, ratios)
    return PolyhedralCone(H, labels, normalizer=grid.cell_weights, kind="jellium")


def jellium_cone_membership(params: JelliumConeParams, grid: QuadratureGrid, f):
    """(is_member, witness) for a grid function f."""
    return membership(jellium_cone(params, grid), f)


def _lp_max(obj, H, eq):
    # kernel tails span many decades and HiGHS drops coefficients below 1e-9,
    # so rescale each variable by its objective/normalization weight and each row by its max
    w = np.maximum(np.abs(obj), np.abs(eq))
    scale = np.ones_like(w)
    pos = w > 0
    scale[pos] = np.clip(w.max() / w[pos], 1.0, 1e12)
    Hs = H * scale
    Hs /= np.abs(Hs).max(axis=1, keepdims=True)
    res = linprog(-obj * scale, A_ub=-Hs, b_ub=np.zeros(len(H)), A_eq=(eq * scale)[None, :], b_eq=[1.0],
                  bounds=(None, None), method="highs")
    if res.status == 3:
        return np.inf
    if res.status == 2:
        return 0.0   # no member with eq = 1: the ratio constraint is vacuous
    if res.status != 0:
        raise CalibrationError(f"linear program failed: {res.message}")
    return -res.fun


def _unique(mats):
    seen, out = {}, []
    for i, M in enumerate(mats):
        key = hash(M.tobytes())
        if key not in seen:
            seen[key] = i
            out.append((i, M))
    return out


def invariance_check(params, grid, mats, rays=200, seed=0):
    """Images of sampled extreme rays under every operator must stay in the cone.

    Returns (ok, witness) with witness = (operator index, violated condition).
    """
    cone = jellium_cone(params, grid)
    E = cone.extreme_rays(rays, seed=seed)
    for i, T in _unique(mats):
        img = T @ E
        for j in range(img.shape[1]):
            ok, wit = membership(cone, img[:, j])
            if not ok:
                return False, (i, wit)
    return True, None


def invariance_margin(params, grid, T):
    """Exact check: min over rows r of min_{f in C, mass(f)=1} (H T f)_r."""
    cone = jellium_cone(params, grid)
    HT = cone.H @ T
    worst = np.inf
    for r in range(HT.shape[0]):
        res = linprog(HT[r], A_ub=-cone.H, b_ub=np.zeros(len(cone.H)), A_eq=grid.cell_weights[None, :],
                      b_eq=[1.0], bounds=(None, None), method="highs")
        worst = min(worst, res.fun)
    return worst


def _calibrate_once(grid, A, delta, mats, eps, eta, shrink):
    kmin = -int(round(2 * A / delta)) - 1
    kmax = -kmin
    Ikmin = grid.interval_weights(kmin)
    imA = grid.index(-A)
    probe_rows = sorted({0, 1, 2, imA})
    ops = _unique(mats)
    # largest left ratio that keeps constants in the cone; the iteration only lowers it
    lp = float(Ikmin.sum())
    for _ in range(200):
        H, _ = _cone_rows(grid, A, kmin, kmax, eps, eta, lp)
        worst = 0.0
        for i, T in ops:
            eq = Ikmin @ T
            for b in probe_rows:
                val = _lp_max(T[b], H, eq)
                if not np.isfinite(val):
                    raise CalibrationError(f"no admissible left ratio (operator {i}, row {b})")
                worst = max(worst, val)
        new = shrink / worst
        if new >= lp * (1 - 1e-7):
            break
        lp = new
    else:
        raise CalibrationError("left ratio iteration did not converge")
    ratios = {}
    for k in range(kmin + 1, kmax + 1):
        H, _ = _cone_rows(grid, A, kmin, kmax, eps, eta, lp, ratios)
        Ik, Ikm1 = grid.interval_weights(k), grid.interval_weights(k - 1)
        worst = 0.0
        for i, T in ops:
            val = _lp_max(Ikm1 @ T, H, Ik @ T)
            if not np.isfinite(val):
                raise CalibrationError(f"no admissible ratio at k={k} (operator {i})")
            worst = max(worst, val)
        if worst <= 0:
            raise CalibrationError(f"degenerate ratio at k={k}")
        ratios[k] = shrink / worst
    return JelliumConeParams(A, delta, kmin, kmax, eps, eta, [ratios[k] for k in range(kmin + 1, kmax + 1)], lp)


def calibrate_cone_parameters(system, layout, grid, kernels=None, shrink=0.9, monotone_slack=0.2,
                              rays=200, seed=0, max_rounds=4) -> JelliumConeParams:
    """Cone parameters computed by linear programming, then verified on sampled rays.

    Each ratio parameter is shrink / sup of the corresponding image ratio over
    the partial cone.  If verification fails the monotone slack is raised.
    """
    if kernels is None:
        kernels = [build_transfer_kernel(system, layout, grid, p) for p in range(system.N, 1, -1)]
    mats = [k.matrix if isinstance(k, TransferKernel) else np.asarray(k) for k in kernels]
    A, delta = layout.A, layout.delta
    eps = 0.5 / (grid.S - A)
    eta = monotone_slack
    witness = None
    for _ in range(max_rounds):
        params = _calibrate_once(grid, A, delta, mats, eps, eta, shrink)
        ok, witness = invariance_check(params, grid, mats, rays, seed + 1)
        if ok:
            return params
        eta *= 1.5
    raise CalibrationError(f"invariance not verified; last witness {witness}")


@dataclass
class CertificationReport:
    delta: float
    kappa: float
    one_minus_kappa: float
    per_operator: list          # (operator index, diameter, worst ray pair)
    certified: bool
    witness: tuple | None = None
    rays: int = 0


def certify_contraction(system, layout, grid, params, kernels=None, rays=300, seed=0) -> CertificationReport:
    """Sampled projective diameter of every T_i(C) and the Birkhoff ratio."""
    if kernels is None:
        kernels = [build_transfer_kernel(system, layout, grid, p) for p in range(system.N, 1, -1)]
    mats = [k.matrix if isinstance(k, TransferKernel) else np.asarray(k) for k in kernels]
    cone = jellium_cone(params, grid)
    E = cone.extreme_rays(rays, seed=seed)
    per = []
    worst, wit = 0.0, None
    for i, T in _unique(mats):
        val, pair = cross_ratio_diameter(cone.coords(T @ E))
        per.append((i, val, pair))
        if val > worst or wit is None:
            worst, wit = val, (i, pair)
    ok = bool(np.isfinite(worst))
    return CertificationReport(worst, contraction_bound(worst), one_minus_contraction(worst), per, ok,
                               None if ok else wit, E.shape[1])


# ---------------------------------------------------------------------------
# assumptions

@dataclass
class AssumptionReport:
    h1: bool
    h2: bool
    potential_bound: bool
    margins: dict
    witness: str | None = None

    @property
    def passed(self) -> bool:
        return self.h1 and self.h2 and self.potential_bound


def assumption_check(system: JelliumSystem, layout: EquilibriumLayout | None = None, samples: int = 10_000) -> AssumptionReport:
    """Check charge bounds, density bounds and U_i(s) >= q_low m s^2 on samples."""
    q = system.charges
    t = np.linspace(-system.L, system.L, samples)
    r = system.background.rho(t)
    m, M = system.density_bounds()
    h1 = bool(q.min() > 0)
    witness = None if h1 else f"charge {int(np.argmin(q)) + 1} is {q.min()}"
    lo = r - m
    hi = M - r
    h2 = bool(m > 0 and lo.min() >= -1e-12 and hi.min() >= -1e-12)
    if not h2 and witness is None:
        bad = int(np.argmin(np.minimum(lo, hi))) if m > 0 else int(np.argmin(r))
        witness = f"density {r[bad]:.6g} at t={t[bad]:.6g} outside [{m}, {M}]"
    margins = {"h1": float(q.min()), "h2_low": float(lo.min()), "h2_high": float(hi.min())}
    ub = True
    if layout is not None and h2:
        s = np.linspace(-3.0, 3.0, 121)
        gap = np.inf
        for i in range(1, system.N + 1):
            U = potential_U(system, layout.positions, i, s)
            gap = min(gap, float(np.min(U - system.q_low * m * s**2)))
        ub = bool(gap >= -1e-12)
        margins["potential"] = gap
        if not ub and witness is None:
            witness = f"U_i(s) below q m s^2 by {-gap:.3e}"
    return AssumptionReport(h1, h2, ub, margins, witness)


def chain_builder(system: JelliumSystem, layout: EquilibriumLayout, grid: QuadratureGrid, include_energy=False):
    """beta -> ChainModel on a fixed layout and grid (for derivatives in beta)."""
    def build(beta, *_):
        return build_jellium_chain(system.with_beta(beta), layout, grid, include_energy=include_energy)
    return build
