"""Cones, the Hilbert projective metric and Birkhoff contraction certificates.

Every cone here is handled through a linear coordinate map ``coords(x) = H x``
with ``x in C  <=>  H x >= 0``.  For the orthant ``H`` is the identity.  With
that representation

    alpha_max(x, y) = min_r (Hy)_r / (Hx)_r      over rows with (Hx)_r > 0
    beta_min(x, y)  = max_r (Hy)_r / (Hx)_r      (infinite if some row has
                                                 (Hx)_r = 0 < (Hy)_r)

which is exact for polyhedral cones.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog, minimize
from scipy.spatial import ConvexHull

from .errors import CertificationError, DomainError

# entries at or below this magnitude count as exact zeros
ZERO = 1e-300
# relative tolerance for membership tests
MEMBER_RTOL = 1e-12


# ---------------------------------------------------------------------------
# cone representations

class OrthantCone:
    """The nonnegative orthant of R^dim."""

    kind = "orthant"

    def __init__(self, dim: int):
        self.dim = int(dim)

    def coords(self, x):
        return np.asarray(x, dtype=float)

    def row_label(self, r: int) -> str:
        return f"x[{r}] >= 0"

    def sample(self, rng, count: int):
        """Random interior points (columns), log-normal entries."""
        return np.exp(rng.normal(0.0, 1.5, size=(self.dim, count)))

    def __repr__(self):
        return f"OrthantCone(dim={self.dim})"


class PolyhedralCone:
    """Cone {x : H x >= 0} given by its constraint rows.

    ``normalizer`` is a vector p with p.x > 0 on C minus the origin; it is
    needed to sample extreme rays by linear programming.  ``generators``
    (columns), when known, make diameters exact instead of sampled.
    """

    kind = "polyhedral"

    def __init__(self, H, labels=None, normalizer=None, generators=None, kind=None):
        self.H = np.asarray(H, dtype=float)
        self.dim = self.H.shape[1]
        self.labels = list(labels) if labels is not None else None
        self.normalizer = None if normalizer is None else np.asarray(normalizer, dtype=float)
        self.generators = None if generators is None else np.asarray(generators, dtype=float)
        if kind is not None:
            self.kind = kind

    def coords(self, x):
        return self.H @ np.asarray(x, dtype=float)

    def row_label(self, r: int) -> str:
        if self.labels is None:
            return f"row {r}"
        return self.labels[r]

    def extreme_rays(self, count: int, seed=0):
        """Extreme rays found as LP vertices for random objectives (columns)."""
        if self.generators is not None:
            return self.generators
        if self.normalizer is None:
            raise DomainError("extreme-ray sampling needs a normalizing functional")
        rng = np.random.default_rng(seed)
        m = self.H.shape[0]
        rays = []
        for _ in range(count):
            c = rng.standard_normal(self.dim) * rng.exponential(1.0, self.dim)
            res = linprog(c, A_ub=-self.H, b_ub=np.zeros(m), A_eq=self.normalizer[None, :],
                          b_eq=[1.0], bounds=(None, None), method="highs-ds")
            if res.status == 0:
                rays.append(res.x)
        if not rays:
            raise DomainError("no extreme ray found; cone may be empty")
        return np.array(rays).T

    def sample(self, rng, count: int, rays=None):
        """Random points of the cone as sparse positive combinations of rays."""
        if rays is None:
            rays = self.extreme_rays(max(2 * self.dim, 20), seed=int(rng.integers(2**31)))
        nr = rays.shape[1]
        out = np.zeros((self.dim, count))
        for j in range(count):
            k = int(rng.integers(1, min(4, nr) + 1))
            idx = rng.choice(nr, size=k, replace=False)
            out[:, j] = rays[:, idx] @ rng.exponential(1.0, size=k)
        return out

    def __repr__(self):
        return f"PolyhedralCone(kind={self.kind!r}, rows={self.H.shape[0]}, dim={self.dim})"


def membership(cone, x):
    """Return (is_member, witness); witness names the first violated row."""
    h = cone.coords(x)
    scale = np.max(np.abs(h)) if h.size else 0.0
    if scale <= ZERO:
        return True, None
    bad = np.nonzero(h < -MEMBER_RTOL * scale)[0]
    if bad.size:
        return False, cone.row_label(int(bad[0]))
    return True, None


def _require_member(cone, x, name):
    ok, witness = membership(cone, x)
    if not ok:
        raise DomainError(f"{name} is not in the cone: violates {witness}")
    if np.max(np.abs(cone.coords(x))) <= ZERO:
        raise DomainError(f"{name} is the zero vector")


def _ratios(cone, x, y):
    hx = np.maximum(cone.coords(x), 0.0)
    hy = np.maximum(cone.coords(y), 0.0)
    px = hx > ZERO
    py = hy > ZERO
    return hx, hy, px, py


def alpha_max(cone, x, y) -> float:
    """Largest alpha with y - alpha x in the cone (0 if there is none)."""
    hx, hy, px, _ = _ratios(cone, x, y)
    if not px.any():
        return 0.0
    return float(np.min(hy[px] / hx[px]))


def beta_min(cone, x, y) -> float:
    """Smallest beta with beta x - y in the cone (inf if there is none)."""
    hx, hy, px, py = _ratios(cone, x, y)
    if np.any(py & ~px):
        return np.inf
    if not px.any():
        return np.inf
    return float(np.max(hy[px] / hx[px]))


def hilbert_distance(cone, x, y) -> float:
    """Hilbert projective distance log(beta_min / alpha_max)."""
    _require_member(cone, x, "x")
    _require_member(cone, y, "y")
    a = alpha_max(cone, x, y)
    b = beta_min(cone, x, y)
    if a <= ZERO or not np.isfinite(b):
        return np.inf
    return max(float(np.log(b / a)), 0.0)


def column_distances(cone, X, Y):
    """Vectorized Hilbert distances between matching columns of X and Y."""
    hx = np.maximum(cone.coords(X), 0.0)
    hy = np.maximum(cone.coords(Y), 0.0)
    px = hx > ZERO
    py = hy > ZERO
    both = px & py
    with np.errstate(divide="ignore", invalid="ignore"):
        lr = np.log(np.where(both, hy, 1.0)) - np.log(np.where(both, hx, 1.0))
    hi = np.max(np.where(both, lr, -np.inf), axis=0)
    lo = np.min(np.where(both, lr, np.inf), axis=0)
    d = np.maximum(hi - lo, 0.0)
    d[np.any(px != py, axis=0)] = np.inf
    return d


def cross_ratio_diameter(G):
    """Max Hilbert distance between columns of a nonnegative coordinate matrix.

    Returns (value, (j, k)) for the worst pair.
    """
    G = np.maximum(np.asarray(G, dtype=float), 0.0)
    pos = G > ZERO
    with np.errstate(divide="ignore"):
        L = np.log(np.where(pos, G, 1.0))
    best, arg = 0.0, None
    m = G.shape[1]
    for j in range(m - 1):
        rest = slice(j + 1, m)
        both = pos[:, rest] & pos[:, [j]]
        diff = L[:, rest] - L[:, [j]]
        hi = np.max(np.where(both, diff, -np.inf), axis=0)
        lo = np.min(np.where(both, diff, np.inf), axis=0)
        d = hi - lo
        d[np.any(pos[:, rest] != pos[:, [j]], axis=0)] = np.inf
        k = int(np.argmax(d))
        if d[k] > best or arg is None:
            best, arg = float(d[k]), (j, j + 1 + k)
            if not np.isfinite(best):
                return np.inf, arg
    return max(best, 0.0), arg


# ---------------------------------------------------------------------------
# diameters and contraction

@dataclass
class DiameterEstimate:
    value: float
    exact: bool
    witness: tuple | None = None
    note: str = ""


def projective_diameter(T, cone=None, budget: int = 200, seed=0) -> DiameterEstimate:
    """Projective diameter of T(C).

    Exact for the orthant (cross ratio over kernel columns) and for cones with
    known generators; otherwise a lower estimate over ``budget`` sampled
    extreme rays.
    """
    T = np.asarray(T, dtype=float)
    if cone is None:
        cone = OrthantCone(T.shape[1])
    if isinstance(cone, OrthantCone):
        zero_cols = np.nonzero(np.all(T <= ZERO, axis=0))[0]
        if zero_cols.size:
            return DiameterEstimate(np.inf, True, ("zero column", int(zero_cols[0])),
                                    "image of a basis vector is zero")
        val, arg = cross_ratio_diameter(T)
        return DiameterEstimate(val, True, arg)
    exact = getattr(cone, "generators", None) is not None
    rays = cone.extreme_rays(budget, seed=seed)
    G = cone.coords(T @ rays)
    val, arg = cross_ratio_diameter(G)
    note = "" if exact else f"lower estimate over {rays.shape[1]} sampled extreme rays"
    return DiameterEstimate(val, exact, arg, note)


def contraction_bound(diameter: float) -> float:
    """Birkhoff-Hopf contraction ratio tanh(diameter / 4); 1 if infinite."""
    if diameter < 0:
        raise DomainError("diameter must be nonnegative")
    if not np.isfinite(diameter):
        return 1.0
    return float(np.tanh(diameter / 4.0))


def one_minus_contraction(diameter: float) -> float:
    """1 - tanh(diameter/4) without cancellation."""
    if not np.isfinite(diameter):
        return 0.0
    return float(2.0 / (np.exp(diameter / 2.0) + 1.0))


@dataclass
class ContractionMeasurement:
    value: float
    pairs_used: int
    indeterminate: bool = False


def measured_contraction(T, cone=None, pairs: int = 1000, seed=0, points=None) -> ContractionMeasurement:
    """Empirical sup of d(Tx,Ty)/d(x,y) over sampled comparable pairs."""
    T = np.asarray(T, dtype=float)
    if cone is None:
        cone = OrthantCone(T.shape[1])
    rng = np.random.default_rng(seed)
    if points is None:
        X = cone.sample(rng, pairs)
        Y = cone.sample(rng, pairs)
    else:
        X, Y = points
    d0 = column_distances(cone, X, Y)
    d1 = column_distances(cone, T @ X, T @ Y)
    ok = np.isfinite(d0) & (d0 > 1e-12)
    if not ok.any():
        return ContractionMeasurement(np.nan, 0, True)
    return ContractionMeasurement(float(np.max(d1[ok] / d0[ok])), int(ok.sum()))


def _pair_ratio(T, x, y):
    c = OrthantCone(len(x))
    d0 = column_distances(c, x[:, None], y[:, None])[0]
    if not np.isfinite(d0) or d0 <= 1e-14:
        return 0.0
    return float(column_distances(c, (T @ x)[:, None], (T @ y)[:, None])[0] / d0)


def optimized_contraction(T, eta: float = 1e-4, refine: bool = True) -> float:
    """Near-sup of d(Tx,Ty)/d(x,y) on the orthant by local pair optimization.

    Seeds from the exact optimum of the worst 2x2 sub-problem, then runs a
    Nelder-Mead polish in log coordinates if the seed is not already tight.
    """
    T = np.asarray(T, dtype=float)
    n = T.shape[1]
    est = projective_diameter(T)
    if not np.isfinite(est.value) or est.value == 0.0:
        return 0.0 if est.value == 0.0 else 1.0
    j, k = est.witness
    lr = np.log(T[:, j]) - np.log(T[:, k])
    i, l = int(np.argmax(lr)), int(np.argmin(lr))
    a, b, c, d = T[i, j], T[i, k], T[l, j], T[l, k]
    p = np.sqrt(a * c / (b * d))
    x = np.full(n, 1e-9)
    y = np.full(n, 1e-9)
    x[j] = y[j] = 1.0
    x[k] = p * np.exp(-eta)
    y[k] = p * np.exp(eta)
    best = _pair_ratio(T, x, y)
    bound = contraction_bound(est.value)
    if refine and best < 0.999 * bound:
        z0 = np.concatenate([np.log(x), np.log(y)])
        res = minimize(lambda z: -_pair_ratio(T, np.exp(z[:n]), np.exp(z[n:])), z0,
                       method="Nelder-Mead", options={"maxiter": 400 * n, "xatol": 1e-10, "fatol": 1e-12})
        best = max(best, -float(res.fun))
    return best


# ---------------------------------------------------------------------------
# operator cone and rank-one compression

def operator_distance_orthant(A, B) -> float:
    """Hilbert distance between nonnegative matrices in the operator cone of the orthant."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    pa, pb = A > ZERO, B > ZERO
    if np.any(pa != pb):
        return np.inf
    if not pa.any():
        return 0.0
    r = np.log(B[pa]) - np.log(A[pa])
    return max(float(r.max() - r.min()), 0.0)


@dataclass
class RankOneOperator:
    z: np.ndarray
    l: np.ndarray
    row: int
    certificate: float
    distance: float
    source: np.ndarray = field(repr=False, default=None)

    def matrix(self):
        return np.outer(self.z, self.l)

    def envelopes(self, x):
        """(a(x), l(x), b(x)) with a, b the min/max ratio envelopes of Tx against z."""
        tx = self.source @ np.asarray(x, dtype=float)
        r = tx / self.z
        return float(r.min()), float(self.l @ x), float(r.max())


def _rank_one_of(P, y0):
    z = P @ y0
    i0 = int(np.argmax(z))
    l = P[i0, :] / z[i0]
    return z, l, i0


def _positive_start(y0, n):
    if y0 is None:
        return np.ones(n)
    y0 = np.asarray(y0, dtype=float)
    if np.any(y0 <= 0):
        raise DomainError("y0 must lie in the interior of the orthant")
    return y0


def rank_one_approx(T, y0=None, cone=None) -> RankOneOperator:
    """Rank-one operator z l^T with d_P(T, z l^T) <= 2 Delta(T)."""
    T = np.asarray(T, dtype=float)
    if cone is not None and not isinstance(cone, OrthantCone):
        raise DomainError("rank-one construction is implemented for the orthant only")
    y0 = _positive_start(y0, T.shape[1])
    delta = projective_diameter(T).value
    if not np.isfinite(delta):
        raise CertificationError("infinite projective diameter: rank-one construction refused")
    z, l, i0 = _rank_one_of(T, y0)
    dist = operator_distance_orthant(T, np.outer(z, l))
    cert = 2.0 * delta
    if dist > cert + 1e-9:
        raise CertificationError(f"certificate violated: d_P = {dist} > {cert}")
    return RankOneOperator(z, l, i0, cert, dist, T)


@dataclass
class ChainRankOne:
    operator: RankOneOperator
    stage_distances: list
    stage_bounds: list
    R: float
    kappa: float


def rank_one_chain(T_list, cone=None, R=None, kappa=None, y0=None) -> ChainRankOne:
    """Rank-one compression of T_{n-1} ... T_0 with certificate 2 kappa^(n-1) R.

    Every prefix product is checked against its own certificate.
    """
    if cone is not None and not isinstance(cone, OrthantCone):
        raise DomainError("rank-one construction is implemented for the orthant only")
    mats = [np.asarray(T, dtype=float) for T in T_list]
    if not mats:
        raise DomainError("empty operator list")
    diams = [projective_diameter(T).value for T in mats]
    if R is None:
        R = diams[0]
    if kappa is None:
        kappa = max((contraction_bound(d) for d in diams[1:]), default=0.0)
    if not np.isfinite(R) or diams[0] > R * (1 + 1e-12) + 1e-15:
        raise CertificationError(f"stage 0: diameter {diams[0]} exceeds R = {R}")
    for i, d in enumerate(diams[1:], start=1):
        if contraction_bound(d) > kappa + 1e-12:
            raise CertificationError(f"stage {i}: contraction {contraction_bound(d)} exceeds kappa = {kappa}")
    y0 = _positive_start(y0, mats[0].shape[1])
    P = mats[0] / mats[0].max()
    dists, bounds = [], []
    for i in range(len(mats)):
        if i > 0:
            P = mats[i] @ P
            P = P / P.max()
        z, l, _ = _rank_one_of(P, y0)
        d = operator_distance_orthant(P, np.outer(z, l))
        bound = 2.0 * kappa**i * R
        if d > bound + 1e-9:
            raise CertificationError(f"stage {i}: d_P = {d} exceeds certificate {bound}")
        dists.append(d)
        bounds.append(bound)
    z, l, i0 = _rank_one_of(P, y0)
    op = RankOneOperator(z, l, i0, bounds[-1], dists[-1], P)
    return ChainRankOne(op, dists, bounds, float(R), float(kappa))


@dataclass
class SubadditivityReport:
    lhs: float
    rhs: float
    slack: float
    holds: bool


def product_subadditivity_check(A, B, C, D, tol: float = 1e-9) -> SubadditivityReport:
    """Check d_P(AB, CD) <= d_P(A, C) + d_P(B, D)."""
    A, B, C, D = (np.asarray(M, dtype=float) for M in (A, B, C, D))
    lhs = operator_distance_orthant(A @ B, C @ D)
    rhs = operator_distance_orthant(A, C) + operator_distance_orthant(B, D)
    return SubadditivityReport(lhs, rhs, rhs - lhs, bool(lhs <= rhs + tol))


def local_norm(x0, s) -> float:
    """Orthant local norm max(s/x0) + max(-s/x0) at an interior point x0."""
    x0 = np.asarray(x0, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(x0 <= 0):
        raise DomainError("x0 must be strictly positive")
    r = s / x0
    return float(r.max() + (-r).max())


# ---------------------------------------------------------------------------
# cone around a dominant eigenvector

class SpectralGapCone(PolyhedralCone):
    kind = "spectral_gap"

    def __init__(self, H, generators, u0, w, eps, radii, n1, c, power_norm, scale):
        super().__init__(H, normalizer=w, generators=generators)
        self.u0 = u0
        self.w = w
        self.eps = eps
        self.radii = radii
        self.n1 = n1
        self.c = c
        self.power_norm = power_norm
        self.scale = scale

    def sample(self, rng, count, rays=None):
        return super().sample(rng, count, rays=self.generators)


def _dominant_pair(T):
    vals, vecs = np.linalg.eig(T)
    order = np.argsort(-np.abs(vals))
    lam = vals[order[0]]
    if abs(lam.imag) > 1e-10 * max(abs(lam), 1.0):
        raise DomainError("dominant eigenvalue is complex")
    if len(vals) > 1 and abs(vals[order[1]]) >= abs(lam) * (1 - 1e-9):
        raise DomainError("degenerate dominant eigenvalue (no spectral gap)")
    if abs(lam) <= ZERO:
        raise DomainError("dominant eigenvalue is zero")
    u0 = np.real(vecs[:, order[0]])
    if u0.sum() < 0:
        u0 = -u0
    u0 = u0 / np.abs(u0).sum()
    lvals, lvecs = np.linalg.eig(T.T)
    w = np.real(lvecs[:, int(np.argmin(np.abs(lvals - lam)))])
    w = w / (w @ u0)
    return float(np.real(lam)), u0, w


def _slice_facets(gens, u0, w):
    """Facet rows of the cone spanned by ``gens`` (columns) via the slice w.x = 1."""
    d = gens.shape[0]
    pts = gens / (w @ gens)
    Q = null_space(w[None, :])
    Z = (Q.T @ (pts - u0[:, None])).T
    if d == 2:
        z = Z[:, 0]
        eqs = np.array([[-1.0, z.min()], [1.0, -z.max()]])
    else:
        eqs = ConvexHull(Z).equations
    a, b = eqs[:, :-1], eqs[:, -1]
    rows = -(a @ Q.T) + np.outer(a @ (Q.T @ u0) - b, w)
    return np.vstack([rows, w[None, :]])


def spectral_gap_cone(T, eps=None, max_power: int = 500) -> SpectralGapCone:
    """Cone generated by T^n(B(u0, eps(1 - eps_n))), n <= N1, on which T contracts.

    Balls are l1 balls so each is the hull of u0 +- r e_j.  The matrix is
    rescaled so the dominant eigenvalue is 1.
    """
    T = np.asarray(T, dtype=float)
    d = T.shape[0]
    lam, u0, w = _dominant_pair(T)
    Tn = T / lam
    P = np.outer(u0, w)
    c = max(np.linalg.norm(P, 1), np.linalg.norm(np.eye(d) - P, 1))
    wmax = np.abs(w).max()
    if eps is None:
        eps = 0.5 * min(1.0 / wmax, 1.0 / (2.0 * c))
    if eps * wmax >= 1.0 or eps * c > 0.5:
        raise DomainError(f"eps = {eps} too large: need eps*|w|_inf < 1 and eps*c <= 1/2")
    eps_seq = lambda n: 1.0 / (n + 2)
    target = (1.0 - eps_seq(0)) / (2.0 * c)
    D = Tn - P
    Dp = D.copy()
    n1 = None
    norm = np.inf
    for n in range(max_power + 1):
        norm = np.linalg.norm(Dp, 1)
        if norm <= target:
            n1 = n
            break
        Dp = Dp @ D
    if n1 is None:
        raise CertificationError(f"insufficient gap: ||(T-P)^(n+1)||_1 = {norm:.3e} > {target:.3e} at n = {max_power}")
    radii = np.array([eps * (1.0 - eps_seq(n)) for n in range(n1 + 1)])
    basis = np.hstack([np.eye(d), -np.eye(d)])
    gens = []
    Tk = np.eye(d)
    for n in range(n1 + 1):
        gens.append(Tk @ (u0[:, None] + radii[n] * basis))
        Tk = Tn @ Tk
    G = np.hstack(gens)
    G = G / (w @ G)
    H = _slice_facets(G, u0, w)
    cone = SpectralGapCone(H, G, u0, w, eps, radii, n1, c, norm, lam)
    images = cone.coords(Tn @ G)
    scale = np.abs(images).max()
    if images.min() < -1e-9 * scale:
        raise CertificationError("T does not map the constructed cone into itself")
    return cone
